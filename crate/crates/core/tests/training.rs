mod common;

use common::rng;
use convattn::attention::AttentionConfig;
use convattn::model::{EncoderConfig, TokenBatch};
use convattn::tasks::{generate, SyntheticTaskSpec, TaskKind};
use convattn::train::vocab::{CLS, MASK, PAD, SEP};
use convattn::train::{
    apply_mlm_mask, lr_schedule, train_lines, RunConfig, CHECKPOINT_FILE, METRICS_FILE,
};
use proptest::prelude::*;

fn small_model(attention: AttentionConfig) -> EncoderConfig {
    EncoderConfig {
        layers: 1,
        hidden: 16,
        intermediate: 32,
        heads: 2,
        head_size: 8,
        embedding_size: 16,
        max_len: 20,
        kernel_half_width: 4,
        attention,
        ..EncoderConfig::desk()
    }
}

fn corpus() -> Vec<String> {
    generate(&SyntheticTaskSpec::new(TaskKind::CopyPrev, 200, 3)).unwrap()
}

fn run_config(steps: u64) -> RunConfig {
    RunConfig {
        batch_size: 8,
        warmup_steps: 2,
        log_every: 5,
        seed: 11,
        ..RunConfig::new(steps, small_model(AttentionConfig::preset("composite").unwrap()))
    }
}

#[test]
fn identical_runs_write_identical_files() {
    let lines = corpus();
    let config = RunConfig {
        checkpoint_every: 5,
        ..run_config(10)
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train_lines(&lines, &config, Some(a.path())).unwrap();
    train_lines(&lines, &config, Some(b.path())).unwrap();
    for file in [METRICS_FILE, CHECKPOINT_FILE, "checkpoint-000005.bin"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs");
    }
    let metrics = std::fs::read_to_string(a.path().join(METRICS_FILE)).unwrap();
    let steps: Vec<&str> = metrics.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(steps, ["5", "10"]);
}

#[test]
fn different_seeds_diverge() {
    let lines = corpus();
    let a = train_lines(&lines, &run_config(3), None).unwrap();
    let b = train_lines(&lines, &RunConfig { seed: 12, ..run_config(3) }, None).unwrap();
    assert_ne!(a.checkpoint.params.tensors, b.checkpoint.params.tensors);
}

#[test]
fn nothing_selected_means_nothing_changes() {
    let lines = corpus();
    let init = train_lines(&lines, &RunConfig { warmup_steps: 0, ..run_config(0) }, None).unwrap();
    let report = train_lines(&lines, &RunConfig { mask_prob: 0.0, ..run_config(4) }, None).unwrap();
    assert!(report.steps.iter().all(|r| r.loss.is_none()));
    assert_eq!(report.checkpoint.params.tensors, init.checkpoint.params.tensors);
}

#[test]
fn loss_falls_on_a_short_run() {
    let lines = corpus();
    let config = RunConfig {
        peak_lr: 3e-3,
        batch_size: 16,
        warmup_steps: 10,
        ..run_config(400)
    };
    let report = train_lines(&lines, &config, None).unwrap();
    let losses: Vec<f64> = report.losses().collect();
    let head = losses[..20].iter().sum::<f64>() / 20.0;
    let tail = losses[losses.len() - 20..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.8 * head, "{head} -> {tail}");
}

#[test]
fn learning_rate_follows_the_schedule() {
    let report = train_lines(&corpus(), &run_config(6), None).unwrap();
    let lrs: Vec<f64> = report.steps.iter().map(|r| r.lr).collect();
    let want: Vec<f64> = (1..=6).map(|s| lr_schedule(s, 2, 6, 1e-3).unwrap()).collect();
    assert_eq!(lrs, want);
    assert_eq!(lrs[1], 1e-3);
}

#[test]
fn missing_corpus_file_is_an_io_error() {
    let mut config = run_config(1);
    config.corpus = Some("/definitely/not/here.txt".into());
    let Err(err) = convattn::train::train(&config, None) else { panic!("trained without a corpus") };
    assert!(err.to_string().contains("/definitely/not/here.txt"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masking_never_touches_pad_cls_or_sep(seed: u64, rows in 1usize..5, len in 3usize..12, prob in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let mut ids = Vec::new();
        let mut mask = Vec::new();
        for row in 0..rows {
            let real = 2 + (row + seed as usize) % (len - 1);
            let mut seq = vec![CLS];
            seq.extend((1..real - 1).map(|i| 5 + (i * 3 + row) % 20));
            seq.push(SEP);
            mask.push((0..len).map(|i| i < seq.len()).collect::<Vec<bool>>());
            seq.resize(len, PAD);
            ids.push(seq);
        }
        let batch = TokenBatch { ids, mask };
        let out = apply_mlm_mask(&batch, convattn::train::MaskPolicy::standard(prob), 25, &mut r);
        for (row, sel) in out.loss_mask.iter().enumerate() {
            for (i, &s) in sel.iter().enumerate() {
                let orig = batch.ids[row][i];
                if matches!(orig, PAD | CLS | SEP) {
                    prop_assert!(!s);
                    prop_assert_eq!(out.inputs.ids[row][i], orig);
                }
                if !s {
                    prop_assert_eq!(out.inputs.ids[row][i], orig);
                } else {
                    let id = out.inputs.ids[row][i];
                    prop_assert!(id == MASK || id >= 5);
                }
                prop_assert_eq!(out.targets[row][i], orig);
            }
        }
    }

    #[test]
    fn schedule_is_continuous_and_peaks_at_warmup(warmup in 0u64..50, extra in 1u64..200, peak in 1e-5f64..1e-2) {
        let total = warmup + extra;
        let mut prev = 0.0;
        let mut best = (0, 0.0);
        for s in 0..=total {
            let lr = lr_schedule(s, warmup, total, peak).unwrap();
            prop_assert!(lr >= 0.0 && lr <= peak * (1.0 + 1e-12));
            if s > 0 {
                let step_size = peak / warmup.max(1).min(extra) as f64;
                prop_assert!((lr - prev).abs() <= step_size * (1.0 + 1e-9));
            }
            if lr > best.1 {
                best = (s, lr);
            }
            prev = lr;
        }
        prop_assert_eq!(lr_schedule(total, warmup, total, peak).unwrap(), 0.0);
        if warmup > 0 {
            prop_assert_eq!(best.0, warmup);
        }
    }
}
