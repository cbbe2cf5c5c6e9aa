//! Utility functions `u(y, y')` and the pairwise utility-matrix kernel.
//!
//! Throughout, `y` is the pseudo-reference and `y'` the candidate being
//! scored. Every utility is bounded in `[0, u_max]`.
//!
//! N-gram statistics are computed once per distinct sequence ([`Prepared`])
//! and pairs are then scored by a merge-join of sorted n-gram tables, so the
//! quadratic part of MBR touches no hash maps.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqcore::{HypothesisCollection, TokenSequence, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityKind {
    SentenceBleu,
    Chrf,
    TokenF1,
    ExactMatch,
}

impl UtilityKind {
    pub fn name(self) -> &'static str {
        match self {
            UtilityKind::SentenceBleu => "sentence-bleu",
            UtilityKind::Chrf => "chrf",
            UtilityKind::TokenF1 => "token-f1",
            UtilityKind::ExactMatch => "exact-match",
        }
    }
}

impl fmt::Display for UtilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    /// Zero-match precisions of order > 1 become `(0 + 1) / (total + 1)`.
    AddOne,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub kind: UtilityKind,
    pub max_order: usize,
    pub beta: f64,
    pub smoothing: Smoothing,
}

impl UtilitySpec {
    pub fn sentence_bleu() -> Self {
        Self {
            kind: UtilityKind::SentenceBleu,
            max_order: 4,
            beta: 0.0,
            smoothing: Smoothing::AddOne,
        }
    }

    pub fn chrf() -> Self {
        Self {
            kind: UtilityKind::Chrf,
            max_order: 6,
            beta: 2.0,
            smoothing: Smoothing::None,
        }
    }

    pub fn token_f1() -> Self {
        Self {
            kind: UtilityKind::TokenF1,
            max_order: 1,
            beta: 1.0,
            smoothing: Smoothing::None,
        }
    }

    pub fn exact_match() -> Self {
        Self {
            kind: UtilityKind::ExactMatch,
            max_order: 0,
            beta: 0.0,
            smoothing: Smoothing::None,
        }
    }

    pub fn of_kind(kind: UtilityKind) -> Self {
        match kind {
            UtilityKind::SentenceBleu => Self::sentence_bleu(),
            UtilityKind::Chrf => Self::chrf(),
            UtilityKind::TokenF1 => Self::token_f1(),
            UtilityKind::ExactMatch => Self::exact_match(),
        }
    }

    pub fn u_max(&self) -> f64 {
        match self.kind {
            UtilityKind::SentenceBleu | UtilityKind::Chrf => 100.0,
            UtilityKind::TokenF1 | UtilityKind::ExactMatch => 1.0,
        }
    }

    fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        match self.kind {
            UtilityKind::SentenceBleu => {
                let bits = id_bits(vocab.len());
                if self.max_order == 0 || self.max_order * bits > 128 {
                    return Err(Error::Config(format!(
                        "BLEU order {} unsupported for a vocabulary of {} tokens",
                        self.max_order,
                        vocab.len()
                    )));
                }
            }
            UtilityKind::Chrf => {
                if self.max_order == 0 || self.max_order * CHAR_BITS > 128 {
                    return Err(Error::Config(format!("chrF order {} unsupported (1..=6)", self.max_order)));
                }
                if !(self.beta > 0.0) || !self.beta.is_finite() {
                    return Err(Error::Config(format!("chrF beta must be positive, got {}", self.beta)));
                }
            }
            UtilityKind::TokenF1 | UtilityKind::ExactMatch => {}
        }
        Ok(())
    }
}

impl FromStr for UtilitySpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bleu" | "sentence-bleu" => Ok(Self::sentence_bleu()),
            "chrf" => Ok(Self::chrf()),
            "token-f1" => Ok(Self::token_f1()),
            "exact-match" => Ok(Self::exact_match()),
            other => Err(Error::Config(format!("unknown utility {other:?}"))),
        }
    }
}

const CHAR_BITS: usize = 21;

fn id_bits(vocab_len: usize) -> usize {
    (usize::BITS - vocab_len.saturating_sub(1).leading_zeros()).max(1) as usize
}

/// Sorted `(packed n-gram, count)` tables for orders `1..=max_order`.
#[derive(Clone, Debug)]
struct NgramProfile {
    orders: Vec<Vec<(u128, u32)>>,
    totals: Vec<u32>,
    len: usize,
}

impl NgramProfile {
    fn build(symbols: &[u32], max_order: usize, bits: usize) -> Self {
        let mut orders = Vec::with_capacity(max_order);
        let mut totals = Vec::with_capacity(max_order);
        for n in 1..=max_order {
            let mut keys: Vec<u128> = symbols
                .windows(n)
                .map(|w| w.iter().fold(0u128, |acc, &s| (acc << bits) | s as u128))
                .collect();
            totals.push(keys.len() as u32);
            keys.sort_unstable();
            let mut table: Vec<(u128, u32)> = Vec::new();
            for k in keys {
                match table.last_mut() {
                    Some((last, c)) if *last == k => *c += 1,
                    _ => table.push((k, 1)),
                }
            }
            orders.push(table);
        }
        Self {
            orders,
            totals,
            len: symbols.len(),
        }
    }

    /// Σ min(count_a, count_b) over shared n-grams of order `n` (1-based).
    fn clipped_matches(&self, other: &Self, n: usize) -> u32 {
        let (a, b) = (&self.orders[n - 1], &other.orders[n - 1]);
        let (mut i, mut j, mut m) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    m += a[i].1.min(b[j].1);
                    i += 1;
                    j += 1;
                }
            }
        }
        m
    }
}

/// Per-sequence statistics reused across all pairs.
#[derive(Clone, Debug)]
pub struct Prepared {
    ids: Vec<u32>,
    profile: Option<NgramProfile>,
}

/// A validated utility bound to a vocabulary.
#[derive(Clone, Debug)]
pub struct Utility {
    spec: UtilitySpec,
    vocab: Arc<Vocabulary>,
}

impl Utility {
    pub fn new(spec: UtilitySpec, vocab: Arc<Vocabulary>) -> Result<Self> {
        spec.validate(&vocab)?;
        Ok(Self { spec, vocab })
    }

    pub fn spec(&self) -> &UtilitySpec {
        &self.spec
    }

    pub fn u_max(&self) -> f64 {
        self.spec.u_max()
    }

    pub fn prepare(&self, seq: &TokenSequence) -> Prepared {
        let ids = seq.ids().to_vec();
        let profile = match self.spec.kind {
            UtilityKind::SentenceBleu => Some(NgramProfile::build(&ids, self.spec.max_order, id_bits(self.vocab.len()))),
            UtilityKind::Chrf => {
                let chars: Vec<u32> = self.vocab.surface_chars(seq).chars().map(|c| c as u32).collect();
                Some(NgramProfile::build(&chars, self.spec.max_order, CHAR_BITS))
            }
            UtilityKind::TokenF1 => Some(NgramProfile::build(&ids, 1, id_bits(self.vocab.len()))),
            UtilityKind::ExactMatch => None,
        };
        Prepared { ids, profile }
    }

    /// `u(reference, candidate)`.
    pub fn score(&self, candidate: &Prepared, reference: &Prepared) -> f64 {
        match self.spec.kind {
            UtilityKind::ExactMatch => {
                if candidate.ids == reference.ids {
                    1.0
                } else {
                    0.0
                }
            }
            UtilityKind::SentenceBleu => bleu_from_profiles(
                candidate.profile.as_ref().unwrap(),
                reference.profile.as_ref().unwrap(),
                self.spec.max_order,
                self.spec.smoothing,
            ),
            UtilityKind::Chrf => chrf_from_profiles(
                candidate.profile.as_ref().unwrap(),
                reference.profile.as_ref().unwrap(),
                self.spec.max_order,
                self.spec.beta,
            ),
            UtilityKind::TokenF1 => f1_from_profiles(candidate.profile.as_ref().unwrap(), reference.profile.as_ref().unwrap()),
        }
    }

    pub fn eval(&self, candidate: &TokenSequence, reference: &TokenSequence) -> f64 {
        self.score(&self.prepare(candidate), &self.prepare(reference))
    }

    /// Dense row-major `candidates × references` block of `u(ref, cand)`,
    /// computed in parallel over rows.
    pub fn block(&self, candidates: &[&TokenSequence], references: &[&TokenSequence]) -> Vec<f64> {
        let cand: Vec<Prepared> = candidates.par_iter().map(|s| self.prepare(s)).collect();
        let refs: Vec<Prepared> = references.par_iter().map(|s| self.prepare(s)).collect();
        self.block_prepared(&cand, &refs)
    }

    fn block_prepared(&self, cand: &[Prepared], refs: &[Prepared]) -> Vec<f64> {
        let cols = refs.len();
        let mut values = vec![0.0; cand.len() * cols];
        if cols == 0 {
            return values;
        }
        values.par_chunks_mut(cols).zip(cand.par_iter()).for_each(|(row, c)| {
            for (v, r) in row.iter_mut().zip(refs) {
                *v = self.score(c, r);
            }
        });
        values
    }
}

fn bleu_from_profiles(cand: &NgramProfile, reference: &NgramProfile, max_order: usize, smoothing: Smoothing) -> f64 {
    if cand.len == 0 {
        return if reference.len == 0 { 100.0 } else { 0.0 };
    }
    let mut log_sum = 0.0;
    for n in 1..=max_order {
        let total = cand.totals[n - 1];
        let matches = cand.clipped_matches(reference, n);
        let p = if matches > 0 {
            matches as f64 / total as f64
        } else if n > 1 && smoothing == Smoothing::AddOne {
            1.0 / (total as f64 + 1.0)
        } else {
            return 0.0;
        };
        log_sum += p.ln();
    }
    let bp = (1.0 - reference.len as f64 / cand.len as f64).min(0.0).exp();
    (100.0 * bp * (log_sum / max_order as f64).exp()).clamp(0.0, 100.0)
}

fn chrf_from_profiles(cand: &NgramProfile, reference: &NgramProfile, max_order: usize, beta: f64) -> f64 {
    match (cand.len, reference.len) {
        (0, 0) => return 100.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let (mut prec, mut rec, mut effective) = (0.0, 0.0, 0usize);
    for n in 1..=max_order {
        let (hc, rc) = (cand.totals[n - 1], reference.totals[n - 1]);
        if hc == 0 || rc == 0 {
            continue;
        }
        let m = cand.clipped_matches(reference, n) as f64;
        prec += m / hc as f64;
        rec += m / rc as f64;
        effective += 1;
    }
    if effective == 0 {
        return 0.0;
    }
    prec /= effective as f64;
    rec /= effective as f64;
    f_beta(prec, rec, beta) * 100.0
}

fn f_beta(prec: f64, rec: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * prec + rec;
    if denom <= 0.0 {
        0.0
    } else {
        ((1.0 + b2) * prec * rec / denom).clamp(0.0, 1.0)
    }
}

fn f1_from_profiles(cand: &NgramProfile, reference: &NgramProfile) -> f64 {
    match (cand.len, reference.len) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let m = cand.clipped_matches(reference, 1) as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / cand.len as f64;
    let r = m / reference.len as f64;
    (2.0 * p * r / (p + r)).min(1.0)
}

/// Smoothed sentence-level BLEU in `[0, 100]`.
pub fn sentence_bleu(vocab: &Arc<Vocabulary>, candidate: &TokenSequence, reference: &TokenSequence, spec: &UtilitySpec) -> Result<f64> {
    expect_kind(spec, UtilityKind::SentenceBleu)?;
    Ok(Utility::new(*spec, vocab.clone())?.eval(candidate, reference))
}

/// Character n-gram F-score over the whitespace-free surface strings.
pub fn chrf(vocab: &Arc<Vocabulary>, candidate: &TokenSequence, reference: &TokenSequence, spec: &UtilitySpec) -> Result<f64> {
    expect_kind(spec, UtilityKind::Chrf)?;
    Ok(Utility::new(*spec, vocab.clone())?.eval(candidate, reference))
}

/// chrF directly on strings; whitespace is ignored.
pub fn chrf_str(candidate: &str, reference: &str, spec: &UtilitySpec) -> f64 {
    let chars = |s: &str| s.chars().filter(|c| !c.is_whitespace()).map(|c| c as u32).collect::<Vec<_>>();
    let c = NgramProfile::build(&chars(candidate), spec.max_order, CHAR_BITS);
    let r = NgramProfile::build(&chars(reference), spec.max_order, CHAR_BITS);
    chrf_from_profiles(&c, &r, spec.max_order, spec.beta)
}

/// Bag-of-tokens F1 with clipped counts; symmetric.
pub fn token_f1(candidate: &TokenSequence, reference: &TokenSequence) -> f64 {
    let c = NgramProfile::build(candidate.ids(), 1, 32);
    let r = NgramProfile::build(reference.ids(), 1, 32);
    f1_from_profiles(&c, &r)
}

pub fn exact_match(candidate: &TokenSequence, reference: &TokenSequence) -> f64 {
    if candidate == reference {
        1.0
    } else {
        0.0
    }
}

fn expect_kind(spec: &UtilitySpec, kind: UtilityKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::Config(format!("expected a {kind} spec, got {}", spec.kind)));
    }
    Ok(())
}

/// Pairwise utilities between two hypothesis collections.
///
/// Row `i` is candidate item `i`, column `j` reference item `j`. Entries with
/// equal strings are computed once and replicated; `evaluations` still
/// reports the logical number of comparisons (product of total counts).
#[derive(Clone, Debug)]
pub struct UtilityMatrix {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    row_weights: Vec<u32>,
    col_weights: Vec<u32>,
    /// Logical comparison count, multiplicities included.
    pub evaluations: u64,
    /// Distinct pairs actually scored.
    pub computed: u64,
    pub utility: UtilityKind,
}

impl UtilityMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_weights(&self) -> &[u32] {
        &self.row_weights
    }

    pub fn col_weights(&self) -> &[u32] {
        &self.col_weights
    }
}

fn distinct(c: &HypothesisCollection) -> (Vec<&TokenSequence>, Vec<usize>) {
    let mut pos: HashMap<&TokenSequence, usize> = HashMap::new();
    let mut uniq = Vec::new();
    let map = c
        .items()
        .iter()
        .map(|h| {
            *pos.entry(&h.seq).or_insert_with(|| {
                uniq.push(&h.seq);
                uniq.len() - 1
            })
        })
        .collect();
    (uniq, map)
}

pub fn utility_matrix(candidates: &HypothesisCollection, references: &HypothesisCollection, spec: &UtilitySpec) -> Result<UtilityMatrix> {
    crate::seqcore::check_shared_vocab(&[candidates.clone(), references.clone()][..])?;
    let utility = Utility::new(*spec, candidates.vocab().clone())?;
    Ok(utility_matrix_with(&utility, candidates, references))
}

pub(crate) fn utility_matrix_with(utility: &Utility, candidates: &HypothesisCollection, references: &HypothesisCollection) -> UtilityMatrix {
    let (cu, cmap) = distinct(candidates);
    let (ru, rmap) = distinct(references);
    let block = utility.block(&cu, &ru);
    let (rows, cols) = (cmap.len(), rmap.len());
    let mut values = vec![0.0; rows * cols];
    if cols > 0 {
        values.par_chunks_mut(cols).zip(cmap.par_iter()).for_each(|(row, &ci)| {
            let src = &block[ci * ru.len()..(ci + 1) * ru.len()];
            for (v, &rj) in row.iter_mut().zip(&rmap) {
                *v = src[rj];
            }
        });
    }
    UtilityMatrix {
        values,
        rows,
        cols,
        row_weights: candidates.items().iter().map(|h| h.weight).collect(),
        col_weights: references.items().iter().map(|h| h.weight).collect(),
        evaluations: candidates.total_count() * references.total_count(),
        computed: (cu.len() * ru.len()) as u64,
        utility: utility.spec().kind,
    }
}

/// Pooled sufficient statistics for corpus-level BLEU.
fn corpus_bleu_profiles(pairs: &[(NgramProfile, NgramProfile)], max_order: usize) -> f64 {
    let (mut c_len, mut r_len) = (0u64, 0u64);
    let mut matches = vec![0u64; max_order];
    let mut totals = vec![0u64; max_order];
    for (c, r) in pairs {
        c_len += c.len as u64;
        r_len += r.len as u64;
        for n in 1..=max_order {
            matches[n - 1] += c.clipped_matches(r, n) as u64;
            totals[n - 1] += c.totals[n - 1] as u64;
        }
    }
    if c_len == 0 {
        return if r_len == 0 { 100.0 } else { 0.0 };
    }
    let mut log_sum = 0.0;
    let mut effective = 0;
    for n in 0..max_order {
        if totals[n] == 0 {
            continue;
        }
        if matches[n] == 0 {
            return 0.0;
        }
        log_sum += (matches[n] as f64 / totals[n] as f64).ln();
        effective += 1;
    }
    let bp = (1.0 - r_len as f64 / c_len as f64).min(0.0).exp();
    (100.0 * bp * (log_sum / effective as f64).exp()).clamp(0.0, 100.0)
}

/// Corpus BLEU: clipped n-gram counts and lengths pooled over all pairs
/// before the geometric mean; no smoothing. Orders for which the candidate
/// side has no n-grams at all are left out of the mean.
pub fn corpus_bleu(vocab: &Vocabulary, pairs: &[(&TokenSequence, &TokenSequence)], max_order: usize) -> f64 {
    let bits = id_bits(vocab.len());
    let profiles: Vec<_> = pairs
        .iter()
        .map(|(c, r)| (NgramProfile::build(c.ids(), max_order, bits), NgramProfile::build(r.ids(), max_order, bits)))
        .collect();
    corpus_bleu_profiles(&profiles, max_order)
}

/// Corpus chrF: character n-gram statistics pooled over all pairs.
pub fn corpus_chrf(vocab: &Vocabulary, pairs: &[(&TokenSequence, &TokenSequence)], spec: &UtilitySpec) -> f64 {
    let max_order = spec.max_order;
    let build = |s: &TokenSequence| {
        let chars: Vec<u32> = vocab.surface_chars(s).chars().map(|c| c as u32).collect();
        NgramProfile::build(&chars, max_order, CHAR_BITS)
    };
    let mut matches = vec![0u64; max_order];
    let mut hyp = vec![0u64; max_order];
    let mut refs = vec![0u64; max_order];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in pairs {
        let (c, r) = (build(c), build(r));
        c_len += c.len;
        r_len += r.len;
        for n in 1..=max_order {
            matches[n - 1] += c.clipped_matches(&r, n) as u64;
            hyp[n - 1] += c.totals[n - 1] as u64;
            refs[n - 1] += r.totals[n - 1] as u64;
        }
    }
    match (c_len, r_len) {
        (0, 0) => return 100.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let (mut prec, mut rec, mut effective) = (0.0, 0.0, 0usize);
    for n in 0..max_order {
        if hyp[n] == 0 || refs[n] == 0 {
            continue;
        }
        prec += matches[n] as f64 / hyp[n] as f64;
        rec += matches[n] as f64 / refs[n] as f64;
        effective += 1;
    }
    prec /= effective as f64;
    rec /= effective as f64;
    f_beta(prec, rec, spec.beta) * 100.0
}
