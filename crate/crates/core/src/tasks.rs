//! Synthetic corpora whose masked tokens are recoverable only from a neighbour.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Mixed into the successor-map seed so the map depends only on the vocabulary size.
const SUCCESSOR_SEED: u64 = 0x5eed_c0de_0f_5ca1e;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// `token[t] = next(token[t-1])`
    CopyPrev,
    /// `token[t] = next(token[t+1])`
    CopyNext,
    /// Each sequence picks one of the two directions at random.
    DirectionMixed,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::CopyPrev, TaskKind::CopyNext, TaskKind::DirectionMixed];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::CopyPrev => "copy-prev",
            TaskKind::CopyNext => "copy-next",
            TaskKind::DirectionMixed => "direction-mixed",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}` (expected copy-prev, copy-next or direction-mixed)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticTaskSpec {
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub count: usize,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn new(kind: TaskKind, count: usize, seed: u64) -> Self {
        Self {
            kind,
            vocab_size: 50,
            seq_len: 16,
            count,
            seed,
        }
    }
}

pub fn token_name(i: usize) -> String {
    format!("t{i:02}")
}

/// Successor table forming one cycle through all `vocab_size` symbols, so a chain
/// of up to `vocab_size` tokens never repeats.
pub fn successor_map(vocab_size: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..vocab_size).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SUCCESSOR_SEED ^ vocab_size as u64);
    order.shuffle(&mut rng);
    let mut next = vec![0; vocab_size];
    for (i, &s) in order.iter().enumerate() {
        next[s] = order[(i + 1) % vocab_size];
    }
    next
}

fn chain(start: usize, len: usize, next: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    let mut cur = start;
    for _ in 0..len {
        out.push(cur);
        cur = next[cur];
    }
    out
}

/// Symbol sequences, one per example.
pub fn generate_ids(spec: &SyntheticTaskSpec) -> Result<Vec<Vec<usize>>> {
    if spec.vocab_size < 2 || spec.seq_len == 0 {
        return Err(Error::Config(format!(
            "synthetic task needs vocab ≥ 2 and length ≥ 1 (got {} and {})",
            spec.vocab_size, spec.seq_len
        )));
    }
    let next = successor_map(spec.vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.count)
        .map(|_| {
            let start = rng.random_range(0..spec.vocab_size);
            let backwards = match spec.kind {
                TaskKind::CopyPrev => false,
                TaskKind::CopyNext => true,
                TaskKind::DirectionMixed => rng.random_bool(0.5),
            };
            let mut seq = chain(start, spec.seq_len, &next);
            if backwards {
                seq.reverse();
            }
            seq
        })
        .collect())
}

/// Corpus lines of space-separated token names.
pub fn generate(spec: &SyntheticTaskSpec) -> Result<Vec<String>> {
    Ok(generate_ids(spec)?
        .into_iter()
        .map(|seq| seq.into_iter().map(token_name).collect::<Vec<_>>().join(" "))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn successor_is_a_single_cycle() {
        let next = successor_map(50);
        let mut seen = vec![false; 50];
        let mut cur = 0;
        for _ in 0..50 {
            assert!(!seen[cur]);
            seen[cur] = true;
            cur = next[cur];
        }
        assert_eq!(cur, 0);
    }

    #[test]
    fn copy_prev_follows_left_neighbour() {
        let spec = SyntheticTaskSpec::new(TaskKind::CopyPrev, 200, 3);
        let next = successor_map(spec.vocab_size);
        for seq in generate_ids(&spec).unwrap() {
            assert_eq!(seq.len(), 16);
            for t in 1..seq.len() {
                assert_eq!(seq[t], next[seq[t - 1]]);
            }
        }
    }

    #[test]
    fn copy_next_follows_right_neighbour() {
        let spec = SyntheticTaskSpec::new(TaskKind::CopyNext, 200, 3);
        let next = successor_map(spec.vocab_size);
        for seq in generate_ids(&spec).unwrap() {
            for t in 0..seq.len() - 1 {
                assert_eq!(seq[t], next[seq[t + 1]]);
            }
        }
    }

    #[test]
    fn mixed_uses_both_directions() {
        let spec = SyntheticTaskSpec::new(TaskKind::DirectionMixed, 200, 3);
        let next = successor_map(spec.vocab_size);
        let forward = generate_ids(&spec)
            .unwrap()
            .iter()
            .filter(|s| next[s[0]] == s[1])
            .count();
        assert!((60..140).contains(&forward), "{forward}");
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticTaskSpec::new(TaskKind::CopyPrev, 1000, 7);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SyntheticTaskSpec { seed: 8, ..spec };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in TaskKind::ALL {
            assert_eq!(k.name().parse::<TaskKind>().unwrap(), k);
        }
        assert!("sideways".parse::<TaskKind>().is_err());
    }
}
