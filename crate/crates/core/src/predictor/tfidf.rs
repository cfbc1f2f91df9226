//! TF-IDF featurization over a trailing token window.

use std::collections::{HashMap, HashSet};

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::workload::tokenize;

/// Sparse vector with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVec<T> {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<T>,
}

impl<T: Real> SparseVec<T> {
    pub fn zeros(dim: usize) -> Self {
        SparseVec { dim, indices: Vec::new(), values: Vec::new() }
    }

    pub fn from_dense(dense: &[T]) -> Self {
        let mut v = SparseVec::zeros(dense.len());
        for (i, &x) in dense.iter().enumerate() {
            if x != T::zero() {
                v.indices.push(i as u32);
                v.values.push(x);
            }
        }
        v
    }

    /// Every coordinate stored, zeros included.
    pub fn full(dense: &[T]) -> Self {
        SparseVec {
            dim: dense.len(),
            indices: (0..dense.len() as u32).collect(),
            values: dense.to_vec(),
        }
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        for (&i, &x) in self.indices.iter().zip(&self.values) {
            out[i as usize] = x;
        }
        out
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.indices.iter().zip(&self.values).map(|(&i, &x)| (i as usize, x))
    }
}

#[derive(Serialize, Deserialize)]
struct VocabRepr<T> {
    tokens: Vec<String>,
    idf: Vec<T>,
    cap: usize,
    window: usize,
}

/// Fitted vocabulary: token index, idf weight per token, and the trailing
/// window length used at featurization time.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(
    from = "VocabRepr<T>",
    into = "VocabRepr<T>",
    bound(serialize = "T: Real", deserialize = "T: Real")
)]
pub struct TfidfVocab<T> {
    tokens: Vec<String>,
    idf: Vec<T>,
    index: FxHashMap<String, u32>,
    cap: usize,
    window: usize,
}

impl<T: Real> From<VocabRepr<T>> for TfidfVocab<T> {
    fn from(r: VocabRepr<T>) -> Self {
        let index = r.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        TfidfVocab { tokens: r.tokens, idf: r.idf, index, cap: r.cap, window: r.window }
    }
}

impl<T: Real> From<TfidfVocab<T>> for VocabRepr<T> {
    fn from(v: TfidfVocab<T>) -> Self {
        VocabRepr { tokens: v.tokens, idf: v.idf, cap: v.cap, window: v.window }
    }
}

impl<T: Real> PartialEq for TfidfVocab<T> {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
            && self.cap == other.cap
            && self.window == other.window
            && self.idf.len() == other.idf.len()
            && self.idf.iter().zip(&other.idf).all(|(a, b)| a.to_bits_eq(*b))
    }
}

/// Bitwise float comparison, used where round-trips must be exact.
pub(crate) trait BitsEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<T: Real> BitsEq for T {
    fn to_bits_eq(self, other: Self) -> bool {
        // `as_f64` is exact for both f32 and f64.
        self.as_f64().to_bits() == other.as_f64().to_bits()
    }
}

/// Fits a vocabulary: the `cap` tokens with highest document frequency
/// (ties lexicographic), each weighted `ln((1 + N) / (1 + df)) + 1`.
pub fn fit_tfidf<T: Real, S: AsRef<str>>(
    corpus: &[S],
    cap: usize,
    window: usize,
) -> Result<TfidfVocab<T>> {
    if corpus.is_empty() {
        return Err(Error::Validation("cannot fit TF-IDF on an empty corpus".into()));
    }
    if cap == 0 || window == 0 {
        return Err(Error::Validation("vocabulary cap and window must be positive".into()));
    }
    let mut df: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        let unique: HashSet<&str> = tokenize(doc.as_ref()).collect();
        for tok in unique {
            *df.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(cap);

    let n = corpus.len() as f64;
    let tokens: Vec<String> = ranked.iter().map(|(t, _)| (*t).to_owned()).collect();
    let idf = ranked
        .iter()
        .map(|&(_, d)| T::lit(((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
        .collect();
    Ok(VocabRepr { tokens, idf, cap, window }.into())
}

thread_local! {
    /// Per-token hit counts, all zero between calls.
    static COUNTS: std::cell::RefCell<Vec<u32>> = const { std::cell::RefCell::new(Vec::new()) };
}

impl<T: Real> TfidfVocab<T> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).map(|&i| i as usize)
    }

    pub fn idf(&self, token: &str) -> Option<T> {
        self.index_of(token).map(|i| self.idf[i])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Sparse features of a token sequence, counting only its last
    /// `window` tokens. L2-normalized unless nothing matched.
    pub fn featurize_tokens<'a, I>(&self, tokens: I) -> SparseVec<T>
    where
        I: IntoIterator<Item = &'a str>,
        I::IntoIter: ExactSizeIterator,
    {
        let iter = tokens.into_iter();
        let skip = iter.len().saturating_sub(self.window);
        self.featurize_counted(iter.skip(skip))
    }

    fn featurize_counted<'a>(&self, tokens: impl Iterator<Item = &'a str>) -> SparseVec<T> {
        let mut v = SparseVec::zeros(self.len());
        COUNTS.with_borrow_mut(|counts| {
            counts.resize(counts.len().max(self.len()), 0);
            for tok in tokens {
                if let Some(&i) = self.index.get(tok) {
                    if counts[i as usize] == 0 {
                        v.indices.push(i);
                    }
                    counts[i as usize] += 1;
                }
            }
            v.indices.sort_unstable();
            v.values.extend(v.indices.iter().map(|&i| {
                let c = std::mem::take(&mut counts[i as usize]);
                T::lit(c as f64) * self.idf[i as usize]
            }));
        });
        let norm = v.norm();
        if norm > T::zero() {
            for x in &mut v.values {
                *x /= norm;
            }
        }
        v
    }

    /// Features of a prompt followed by `generated` tokens the vocabulary
    /// cannot contain (generated text is not tokenized here), so only the
    /// prompt tail still inside the window contributes.
    pub fn featurize_with_generated(&self, prompt: &str, generated: usize) -> SparseVec<T> {
        let tokens: Vec<&str> = tokenize(prompt).collect();
        let keep = self.window.saturating_sub(generated).min(tokens.len());
        self.featurize_counted(tokens[tokens.len() - keep..].iter().copied())
    }

    /// Dense feature vector `h_r` for a text window.
    pub fn featurize(&self, text: &str) -> Vec<T> {
        let tokens: Vec<&str> = tokenize(text).collect();
        self.featurize_tokens(tokens.iter().copied()).to_dense()
    }
}
