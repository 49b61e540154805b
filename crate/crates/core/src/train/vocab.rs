use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const NUM_SPECIALS: usize = 5;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Lowercased whitespace tokenization.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}

/// Token/id mapping with the special tokens at ids `0..NUM_SPECIALS`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Builds from an explicit id→token list, which must start with the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIALS || tokens[..NUM_SPECIALS] != SPECIAL_TOKENS {
            return Err(Error::VocabMismatch(
                "token list does not start with the special tokens".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::VocabMismatch(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

/// Frequency-ranked vocabulary (ties broken lexicographically), at most `max_size` entries
/// including the specials.
pub fn build_vocab<S: AsRef<str>>(lines: &[S], max_size: usize) -> Result<Vocab> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in lines {
        for tok in tokenize(line.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    for s in SPECIAL_TOKENS {
        counts.remove(s);
    }
    if counts.is_empty() {
        return Err(Error::Input("corpus contains no tokens".into()));
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let room = max_size.saturating_sub(NUM_SPECIALS);
    let tokens = SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().take(room).map(|(t, _)| t))
        .collect();
    Vocab::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_then_lexicographic() {
        let v = build_vocab(&["a b a"], 100).unwrap();
        assert_eq!(v.id("a"), Some(NUM_SPECIALS));
        assert_eq!(v.id("b"), Some(NUM_SPECIALS + 1));
        let v = build_vocab(&["b a"], 100).unwrap();
        assert_eq!(v.token(NUM_SPECIALS), Some("a"));
        assert_eq!(v.token(NUM_SPECIALS + 1), Some("b"));
    }

    #[test]
    fn lowercases_and_caps() {
        let v = build_vocab(&["B b c C c d"], NUM_SPECIALS + 2).unwrap();
        assert_eq!(v.len(), NUM_SPECIALS + 2);
        assert_eq!(v.id("c"), Some(NUM_SPECIALS));
        assert_eq!(v.id("b"), Some(NUM_SPECIALS + 1));
        assert_eq!(v.id("d"), None);
        assert_eq!(v.id_or_unk("d"), UNK);
    }

    #[test]
    fn deterministic_rebuild() {
        let lines = ["the cat sat", "on the mat", "a cat"];
        assert_eq!(build_vocab(&lines, 50).unwrap(), build_vocab(&lines, 50).unwrap());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(build_vocab(&["", "   "], 10), Err(Error::Input(_))));
    }

    #[test]
    fn rejects_lists_without_specials() {
        assert!(Vocab::from_tokens(vec!["a".into()]).is_err());
    }
}
