//! Byte-level n-gram model with add-k smoothing, used as the deterministic
//! reference backend.
//!
//! The model has Markov order `order`: the history `h` of a byte is the
//! `order` bytes before it (fewer at the start of the text), and the
//! next-byte probability is
//! `(count(h, b) + k) / (count(h) + k * 256)`.

use std::collections::HashMap;

use super::wire::TokenScores;
use super::{ScoreError, ScoringBackend};

/// Bundled training text for the toy backend.
pub const SEED_CORPUS: &str = include_str!("../../data/seed_corpus.txt");

pub const BYTE_ALPHABET: usize = 256;

/// Printable ASCII bytes map to themselves, everything else to `<0xNN>`.
pub fn byte_token(b: u8) -> String {
    if (0x20..0x7f).contains(&b) {
        (b as char).to_string()
    } else {
        format!("<0x{b:02X}>")
    }
}

#[derive(Clone)]
struct HistoryCounts {
    total: u64,
    next: Box<[u64; BYTE_ALPHABET]>,
}

impl Default for HistoryCounts {
    fn default() -> Self {
        Self {
            total: 0,
            next: Box::new([0; BYTE_ALPHABET]),
        }
    }
}

#[derive(Clone)]
pub struct NgramModel {
    order: usize,
    smoothing: f64,
    counts: HashMap<Vec<u8>, HistoryCounts>,
}

impl std::fmt::Debug for NgramModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NgramModel")
            .field("order", &self.order)
            .field("smoothing", &self.smoothing)
            .field("histories", &self.counts.len())
            .finish()
    }
}

impl NgramModel {
    /// Counts every (history, next byte) pair of `corpus` for all history
    /// lengths `0..=order`.
    pub fn train(corpus: &[u8], order: usize, smoothing: f64) -> Self {
        let mut counts: HashMap<Vec<u8>, HistoryCounts> = HashMap::new();
        for (i, &b) in corpus.iter().enumerate() {
            for len in 0..=order.min(i) {
                let entry = counts.entry(corpus[i - len..i].to_vec()).or_default();
                entry.total += 1;
                entry.next[b as usize] += 1;
            }
        }
        Self {
            order,
            smoothing,
            counts,
        }
    }

    pub fn seed() -> Self {
        Self::train(SEED_CORPUS.as_bytes(), 2, 1.0)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    fn history<'a>(&self, text: &'a [u8]) -> &'a [u8] {
        let len = self.order.min(text.len());
        &text[text.len() - len..]
    }

    /// Smoothed `P(next | history)` where `history` is the full preceding text.
    pub fn prob(&self, preceding: &[u8], next: u8) -> f64 {
        let h = self.history(preceding);
        let (count, total) = self
            .counts
            .get(h)
            .map(|c| (c.next[next as usize], c.total))
            .unwrap_or((0, 0));
        (count as f64 + self.smoothing) / (total as f64 + self.smoothing * BYTE_ALPHABET as f64)
    }

    pub fn logprob(&self, preceding: &[u8], next: u8) -> f64 {
        self.prob(preceding, next).ln()
    }

    /// Full next-byte distribution after `preceding`.
    pub fn distribution(&self, preceding: &[u8]) -> Vec<f64> {
        (0..=255u8).map(|b| self.prob(preceding, b)).collect()
    }
}

impl ScoringBackend for NgramModel {
    fn score(&self, context: &str, continuation: &str) -> Result<TokenScores, ScoreError> {
        if continuation.is_empty() {
            return Err(ScoreError::EmptyContinuation);
        }
        let mut text = context.as_bytes().to_vec();
        let mut tokens = Vec::with_capacity(continuation.len());
        let mut logprobs = Vec::with_capacity(continuation.len());
        for &b in continuation.as_bytes() {
            logprobs.push(self.logprob(&text, b));
            tokens.push(byte_token(b));
            text.push(b);
        }
        Ok(TokenScores { tokens, logprobs })
    }

    fn describe(&self) -> String {
        format!("ngram_toy(order={}, k={})", self.order, self.smoothing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Counts by scanning the corpus for every occurrence of `history`.
    fn brute_force_prob(corpus: &[u8], history: &[u8], next: u8, k: f64) -> f64 {
        let mut total = 0u64;
        let mut hit = 0u64;
        for i in history.len()..corpus.len() {
            if &corpus[i - history.len()..i] == history {
                total += 1;
                if corpus[i] == next {
                    hit += 1;
                }
            }
        }
        (hit as f64 + k) / (total as f64 + k * 256.0)
    }

    #[test]
    fn matches_brute_force_on_seed_corpus() {
        let model = NgramModel::seed();
        let s = model.score("ab", "c").unwrap();
        let expected = brute_force_prob(SEED_CORPUS.as_bytes(), b"ab", b'c', 1.0).ln();
        assert_eq!(s.tokens, ["c"]);
        assert_eq!(s.logprobs[0], expected);
    }

    #[test]
    fn tiny_corpus_hand_values() {
        // "abcab": history "ab" is followed by "c" once out of one occurrence
        // (the final "ab" has no successor). P(c|ab) = (1+1)/(1+256).
        let model = NgramModel::train(b"abcab", 2, 1.0);
        assert_eq!(model.prob(b"ab", b'c'), 2.0 / 257.0);
        assert_eq!(model.prob(b"ab", b'a'), 1.0 / 257.0);
        // at the start of a text only one byte of history exists: "a" is seen
        // twice, always followed by "b"
        assert_eq!(model.prob(b"a", b'b'), 3.0 / 258.0);
        // empty history falls back to unigram counts over 5 bytes
        assert_eq!(model.prob(b"", b'a'), 3.0 / 261.0);
    }

    #[test]
    fn empty_corpus_is_uniform() {
        let model = NgramModel::train(b"", 2, 1.0);
        let s = model.score("anything", "z").unwrap();
        assert_eq!(s.logprobs, [-(256f64).ln()]);
    }

    #[test]
    fn multi_byte_tokens_condition_on_prefix() {
        let model = NgramModel::seed();
        let s = model.score("x ", "no").unwrap();
        assert_eq!(s.tokens, ["n", "o"]);
        assert_eq!(s.logprobs[0], model.logprob(b"x ", b'n'));
        assert_eq!(s.logprobs[1], model.logprob(b"x n", b'o'));
        let u = model.score("", "\u{e9}").unwrap();
        assert_eq!(u.tokens, ["<0xC3>", "<0xA9>"]);
    }

    #[test]
    fn empty_continuation() {
        assert_eq!(
            NgramModel::seed().score("a", "").unwrap_err(),
            ScoreError::EmptyContinuation
        );
    }

    proptest! {
        #[test]
        fn distribution_sums_to_one(ctx in proptest::collection::vec(any::<u8>(), 0..6), order in 0usize..4, k in 0.01f64..3.0) {
            let model = NgramModel::train(SEED_CORPUS.as_bytes(), order, k);
            let total: f64 = model.distribution(&ctx).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn deterministic(ctx in "[a-z ]{0,20}", cont in "[a-z]{1,8}") {
            let a = NgramModel::seed().score(&ctx, &cont).unwrap();
            let b = NgramModel::seed().score(&ctx, &cont).unwrap();
            prop_assert_eq!(
                a.logprobs.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.logprobs.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
