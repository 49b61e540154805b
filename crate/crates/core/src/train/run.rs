use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{apply_mlm_mask, encode_batch, MaskPolicy};
use super::optim::{adam_step, AdamConfig, Schedule, TrainState};
use super::vocab::{build_vocab, Vocab};
use crate::attention::Dropout;
use crate::error::{Error, Result};
use crate::model::{init_params, mlm_loss, Checkpoint, EncoderConfig, EncoderParams};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const METRICS_FILE: &str = "metrics.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Everything a training run needs, read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus path; relative paths resolve against the config file's directory.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub steps: u64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub warmup_steps: u64,
    #[serde(default = "defaults::peak_lr")]
    pub peak_lr: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::beta1")]
    pub adam_beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub adam_beta2: f64,
    #[serde(default = "defaults::eps")]
    pub adam_eps: f64,
    #[serde(default = "defaults::mask_prob")]
    pub mask_prob: f64,
    #[serde(default = "defaults::log_every")]
    pub log_every: u64,
    /// Intermediate checkpoint interval; 0 writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "defaults::vocab_max_size")]
    pub vocab_max_size: usize,
    #[serde(default)]
    pub model: EncoderConfig,
}

mod defaults {
    pub fn batch_size() -> usize {
        32
    }
    pub fn peak_lr() -> f64 {
        1e-3
    }
    pub fn weight_decay() -> f64 {
        0.01
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-6
    }
    pub fn mask_prob() -> f64 {
        0.15
    }
    pub fn log_every() -> u64 {
        10
    }
    pub fn vocab_max_size() -> usize {
        1000
    }
}

impl RunConfig {
    pub fn new(steps: u64, model: EncoderConfig) -> Self {
        Self {
            corpus: None,
            seed: 0,
            steps,
            batch_size: defaults::batch_size(),
            warmup_steps: 0,
            peak_lr: defaults::peak_lr(),
            weight_decay: defaults::weight_decay(),
            adam_beta1: defaults::beta1(),
            adam_beta2: defaults::beta2(),
            adam_eps: defaults::eps(),
            mask_prob: defaults::mask_prob(),
            log_every: defaults::log_every(),
            checkpoint_every: 0,
            vocab_max_size: defaults::vocab_max_size(),
            model,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file, resolving a relative corpus path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(corpus), Some(dir)) = (&cfg.corpus, path.parent()) {
            if corpus.is_relative() {
                cfg.corpus = Some(dir.join(corpus));
            }
        }
        Ok(cfg)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            warmup_steps: self.warmup_steps,
            total_steps: self.steps,
            peak_lr: self.peak_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!("mask_prob {} must be in [0, 1]", self.mask_prob)));
        }
        if self.warmup_steps > self.steps {
            return Err(Error::Config(format!(
                "warmup_steps {} exceed steps {}",
                self.warmup_steps, self.steps
            )));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) {
            return Err(Error::Config(format!("peak_lr {} must be finite and non-negative", self.peak_lr)));
        }
        Ok(())
    }
}

/// One optimizer step's record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based step number.
    pub step: u64,
    pub lr: f64,
    /// Loss before the update; `None` when no position was selected.
    pub loss: Option<f64>,
}

pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    /// Lines written to the metrics log.
    pub log: Vec<String>,
    pub checkpoint: Checkpoint,
}

impl TrainReport {
    pub fn losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().filter_map(|s| s.loss)
    }
}

/// Trains on the configured corpus, writing metrics and checkpoints into `out_dir`.
pub fn train(config: &RunConfig, out_dir: Option<&Path>) -> Result<TrainReport> {
    let path = config
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Config("run config does not name a corpus".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    train_lines(&lines, config, out_dir)
}

/// Trains on in-memory corpus lines.
pub fn train_lines<S: AsRef<str>>(lines: &[S], config: &RunConfig, out_dir: Option<&Path>) -> Result<TrainReport> {
    train_lines_until(lines, config, out_dir, |_| false)
}

/// Like [`train_lines`], stopping after the first step for which `stop` returns true.
pub fn train_lines_until<S: AsRef<str>>(
    lines: &[S],
    config: &RunConfig,
    out_dir: Option<&Path>,
    stop: impl FnMut(&StepRecord) -> bool,
) -> Result<TrainReport> {
    config.validate()?;
    let vocab = build_vocab(lines, config.vocab_max_size)?;
    let mut model = config.model.clone();
    model.vocab_size = vocab.len();
    model.seed = config.seed;
    let params = init_params(&model, config.seed)?;
    let encoded: Vec<Vec<usize>> = lines
        .iter()
        .map(|l| encode_batch(&[l.as_ref()], &vocab, model.max_len).ids.remove(0))
        .collect();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Trainer::new(config, params, vocab, encoded).run(out_dir, stop)
}

struct Trainer<'a> {
    config: &'a RunConfig,
    params: EncoderParams,
    vocab: Vocab,
    encoded: Vec<Vec<usize>>,
    state: TrainState,
    decay: Vec<bool>,
}

impl<'a> Trainer<'a> {
    fn new(config: &'a RunConfig, params: EncoderParams, vocab: Vocab, encoded: Vec<Vec<usize>>) -> Self {
        let state = TrainState::new(&params.tensors, config.seed, config.schedule(), config.adam());
        let decay = params.specs.iter().map(|s| s.decay).collect();
        Self {
            config,
            params,
            vocab,
            encoded,
            state,
            decay,
        }
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            vocab: self.vocab.clone(),
            train: Some(self.state.clone()),
        }
    }

    /// Draws the step's sequences; rows are padded to the longest one.
    fn sample(&self, rng: &mut impl Rng) -> crate::model::TokenBatch {
        let picks: Vec<&Vec<usize>> = (0..self.config.batch_size)
            .map(|_| &self.encoded[rng.random_range(0..self.encoded.len())])
            .collect();
        let width = picks.iter().map(|r| r.len()).max().unwrap_or(0);
        let ids = picks
            .iter()
            .map(|r| {
                let mut row = (*r).clone();
                row.resize(width, super::vocab::PAD);
                row
            })
            .collect();
        let mask = picks.iter().map(|r| (0..width).map(|i| i < r.len()).collect()).collect();
        crate::model::TokenBatch { ids, mask }
    }

    fn step(&mut self, step: u64) -> Result<StepRecord> {
        let cfg = self.config;
        // Stream 0 of the seed is used by parameter initialization.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(step + 1);
        let batch = self.sample(&mut rng);
        let masked = apply_mlm_mask(&batch, MaskPolicy::standard(cfg.mask_prob), self.vocab.len(), &mut rng);
        let lr = self.state.schedule.lr(step + 1)?;
        let positions = masked.positions();
        if positions.is_empty() {
            return Ok(StepRecord {
                step: step + 1,
                lr,
                loss: None,
            });
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, true);
        let model = &self.params.config;
        let mut dropout = Dropout {
            rng: &mut rng,
            attention: model.attention_dropout,
            hidden: model.hidden_dropout,
        };
        let (loss, _) = mlm_loss(&mut tape, model, &bound.weights, &masked.inputs, &positions, Some(&mut dropout))?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", step + 1)));
        }
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = bound.vars.iter().map(|&v| grads.wrt(v)).collect();
        drop(tape);
        adam_step(&mut self.params.tensors, &grads, &self.decay, &mut self.state, lr)?;
        Ok(StepRecord {
            step: step + 1,
            lr,
            loss: Some(value),
        })
    }

    fn run(mut self, out_dir: Option<&Path>, mut stop: impl FnMut(&StepRecord) -> bool) -> Result<TrainReport> {
        let mut metrics = match out_dir {
            Some(dir) => {
                let path = dir.join(METRICS_FILE);
                Some((BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?), path))
            }
            None => None,
        };
        let cfg = self.config;
        let mut records = Vec::with_capacity(cfg.steps as usize);
        let mut log = Vec::new();
        let mut window: Vec<f64> = Vec::new();
        for step in 0..cfg.steps {
            let rec = self.step(step)?;
            window.extend(rec.loss);
            records.push(rec);
            let s = rec.step;
            let halt = stop(&rec);
            let due = cfg.log_every > 0 && s % cfg.log_every == 0;
            if (due || s == cfg.steps || halt) && !window.is_empty() {
                let mean = window.iter().sum::<f64>() / window.len() as f64;
                let line = format!("{s}\t{}\t{mean}", rec.lr);
                if let Some((w, path)) = metrics.as_mut() {
                    writeln!(w, "{line}").map_err(|e| Error::io(&*path, e))?;
                }
                log.push(line);
                window.clear();
            }
            if let Some(dir) = out_dir {
                if cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0 && s != cfg.steps {
                    self.checkpoint().save(&dir.join(format!("checkpoint-{s:06}.bin")))?;
                }
            }
            if halt {
                break;
            }
        }
        if let Some((mut w, path)) = metrics {
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        let checkpoint = self.checkpoint();
        if let Some(dir) = out_dir {
            checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
        }
        Ok(TrainReport {
            steps: records,
            log,
            checkpoint,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("steps = 1\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        let err = RunConfig::from_toml("steps = 1\n[model]\nlayers = 1\nbogus = 2\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::from_toml("steps = 5\n").unwrap();
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.mask_prob, 0.15);
        assert_eq!(cfg.model, EncoderConfig::desk());
        assert_eq!(cfg.adam(), AdamConfig::default());
    }

    #[test]
    fn warmup_beyond_total_fails_before_training() {
        let mut cfg = RunConfig::new(3, EncoderConfig::desk());
        cfg.warmup_steps = 4;
        assert!(matches!(train_lines(&["a b c"], &cfg, None), Err(Error::Config(_))));
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let cfg = RunConfig::new(0, EncoderConfig::desk());
        let report = train_lines(&["a b c d"], &cfg, None).unwrap();
        let mut model = EncoderConfig::desk();
        model.vocab_size = report.checkpoint.vocab.len();
        let init = init_params(&model, 0).unwrap();
        assert_eq!(report.checkpoint.params.tensors, init.tensors);
        assert!(report.log.is_empty());
    }
}
