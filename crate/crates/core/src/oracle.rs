//! Exact, exponential-cost reference computations over a truncated sequence
//! space. Single-threaded on purpose; every sum is exact-rounded.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::seqcore::{TokenId, TokenSequence, Vocabulary};
use crate::sum::ExactSum;
use crate::toylm::{ModelSet, NextTokenSource};
use crate::utility::{Utility, UtilitySpec};

/// Largest space the oracle will enumerate.
pub const MAX_SPACE: u64 = 100_000;

/// All content sequences of length `0..=max_len`, shortest first, then by id.
#[derive(Clone, Debug)]
pub struct EnumeratedSpace {
    vocab: Arc<Vocabulary>,
    max_len: usize,
    sequences: Vec<TokenSequence>,
    index: HashMap<TokenSequence, usize>,
}

impl EnumeratedSpace {
    pub fn new(vocab: Arc<Vocabulary>, max_len: usize) -> Result<Self> {
        let size = space_size(vocab.content_len() as u64, max_len);
        if size.is_none_or(|n| n > MAX_SPACE) {
            return Err(Error::Refused(format!(
                "sequence space over {} tokens up to length {max_len} exceeds {MAX_SPACE} entries",
                vocab.content_len()
            )));
        }
        let content: Vec<TokenId> = vocab.content_ids().collect();
        let mut sequences = vec![TokenSequence::empty()];
        let mut layer = vec![TokenSequence::empty()];
        for _ in 0..max_len {
            let next: Vec<TokenSequence> = layer
                .iter()
                .flat_map(|p| {
                    content.iter().map(move |&t| {
                        let mut s = p.clone();
                        s.push(t);
                        s
                    })
                })
                .collect();
            sequences.extend(next.iter().cloned());
            layer = next;
        }
        let index = sequences.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self {
            vocab,
            max_len,
            sequences,
            index,
        })
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn sequences(&self) -> &[TokenSequence] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn index_of(&self, seq: &TokenSequence) -> Option<usize> {
        self.index.get(seq).copied()
    }
}

fn space_size(content: u64, max_len: usize) -> Option<u64> {
    let mut total = 0u64;
    let mut layer = 1u64;
    for l in 0..=max_len {
        if l > 0 {
            layer = layer.checked_mul(content)?;
        }
        total = total.checked_add(layer)?;
    }
    Some(total)
}

/// A distribution over an [`EnumeratedSpace`], renormalized after truncation.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleDist {
    pub probs: Vec<f64>,
    /// Mass on sequences longer than the space allows, before renormalizing.
    pub truncated_mass: f64,
}

impl OracleDist {
    pub fn prob_of(&self, space: &EnumeratedSpace, seq: &TokenSequence) -> Option<f64> {
        space.index_of(seq).map(|i| self.probs[i])
    }
}

fn normalize(raw: Vec<f64>, truncated_mass: f64) -> Result<OracleDist> {
    let z = raw.iter().copied().collect::<ExactSum>().value();
    if !(z > 0.0) {
        return Err(Error::Domain("no probability mass within the enumerated space".into()));
    }
    Ok(OracleDist {
        probs: raw.into_iter().map(|p| p / z).collect(),
        truncated_mass,
    })
}

/// Exact sequence distribution of a next-token source (empty prompt),
/// truncated to the space and renormalized.
pub fn exact_model_dist<S: NextTokenSource + ?Sized>(source: &S, space: &EnumeratedSpace) -> Result<OracleDist> {
    if **source.vocab() != *space.vocab {
        return Err(Error::Config("model and space vocabularies differ".into()));
    }
    let eos = space.vocab.eos() as usize;
    let mut prefix = vec![0.0; space.len()];
    let mut raw = vec![0.0; space.len()];
    let mut truncated = ExactSum::new();
    prefix[0] = 1.0;
    for (i, seq) in space.sequences.iter().enumerate() {
        if prefix[i] == 0.0 {
            continue;
        }
        let dist = source.next_dist(seq.ids());
        raw[i] = prefix[i] * dist[eos];
        for t in space.vocab.content_ids() {
            let p = prefix[i] * dist[t as usize];
            if seq.len() == space.max_len {
                truncated.add(p);
            } else {
                let mut child = seq.clone();
                child.push(t);
                prefix[space.index[&child]] = p;
            }
        }
    }
    normalize(raw, truncated.value())
}

/// Sequence-level posterior: the weighted mean of member distributions.
pub fn exact_seq_posterior(models: &ModelSet, weights: &[f64], space: &EnumeratedSpace) -> Result<OracleDist> {
    if weights.len() != models.len() {
        return Err(Error::Config(format!("{} weights for {} models", weights.len(), models.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Domain("mixture weights must be finite and nonnegative".into()));
    }
    let z = exact_sum_of(weights);
    if z <= 0.0 {
        return Err(Error::Domain("mixture weights sum to zero".into()));
    }
    let members = models
        .models()
        .iter()
        .map(|m| exact_model_dist(m, space))
        .collect::<Result<Vec<_>>>()?;
    let probs = (0..space.len())
        .map(|i| {
            let mut acc = ExactSum::new();
            for (d, &w) in members.iter().zip(weights) {
                acc.add_product(w, d.probs[i]);
            }
            acc.value() / z
        })
        .collect();
    let mut trunc = ExactSum::new();
    for (d, &w) in members.iter().zip(weights) {
        trunc.add_product(w, d.truncated_mass);
    }
    Ok(OracleDist {
        probs,
        truncated_mass: trunc.value() / z,
    })
}

/// Equal-weight sequence-level posterior.
pub fn exact_seq_posterior_uniform(models: &ModelSet, space: &EnumeratedSpace) -> Result<OracleDist> {
    exact_seq_posterior(models, &vec![1.0; models.len()], space)
}

/// Token-level posterior: the product over steps of the members' mean
/// next-token probabilities.
pub fn exact_tok_posterior(models: &ModelSet, space: &EnumeratedSpace) -> Result<OracleDist> {
    exact_model_dist(models, space)
}

fn exact_sum_of(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<ExactSum>().value()
}

/// Candidates for an exact MBR decision.
#[derive(Clone, Debug)]
pub enum CandidatePool {
    FullSpace,
    Given(Vec<TokenSequence>),
}

#[derive(Clone, Debug)]
pub struct ExactMbr {
    pub chosen: TokenSequence,
    pub chosen_index: usize,
    pub candidates: Vec<TokenSequence>,
    /// `Σ_y p(y)·u(y, y')` per candidate.
    pub expected: Vec<f64>,
}

/// Expected utility of each candidate under `dist`.
pub fn expected_utilities(
    dist: &[f64],
    space: &EnumeratedSpace,
    candidates: &[TokenSequence],
    spec: &UtilitySpec,
) -> Result<Vec<f64>> {
    if dist.len() != space.len() {
        return Err(Error::Config(format!(
            "distribution has {} entries for a space of {}",
            dist.len(),
            space.len()
        )));
    }
    let utility = Utility::new(*spec, space.vocab.clone())?;
    let refs: Vec<_> = space.sequences.iter().map(|s| utility.prepare(s)).collect();
    Ok(candidates
        .iter()
        .map(|c| {
            let c = utility.prepare(c);
            let mut acc = ExactSum::new();
            for (r, &p) in refs.iter().zip(dist) {
                if p != 0.0 {
                    acc.add_product(p, utility.score(&c, r));
                }
            }
            acc.value()
        })
        .collect())
}

/// `argmax_{y'} Σ_y p(y)·u(y, y')`; ties go to the first candidate.
pub fn exact_mbr(dist: &[f64], space: &EnumeratedSpace, spec: &UtilitySpec, pool: &CandidatePool) -> Result<ExactMbr> {
    let candidates = match pool {
        CandidatePool::FullSpace => space.sequences.clone(),
        CandidatePool::Given(c) if c.is_empty() => {
            return Err(Error::Domain("empty candidate pool".into()));
        }
        CandidatePool::Given(c) => c.clone(),
    };
    let expected = expected_utilities(dist, space, &candidates, spec)?;
    let mut best = 0;
    for (i, &e) in expected.iter().enumerate() {
        if e > expected[best] {
            best = i;
        }
    }
    Ok(ExactMbr {
        chosen: candidates[best].clone(),
        chosen_index: best,
        candidates,
        expected,
    })
}

#[derive(Clone, Debug)]
pub struct FubiniReport {
    /// Expected utility under the mixed distribution, per space element.
    pub lhs: Vec<f64>,
    /// Mean over members of each member's expected utility.
    pub rhs: Vec<f64>,
    pub max_abs_diff: f64,
}

/// Compares `Σ_y E_θ[p_θ(y)]·u(y, y')` with `E_θ[Σ_y p_θ(y)·u(y, y')]` for
/// every candidate in the space (equal member weights).
pub fn fubini_check(models: &ModelSet, space: &EnumeratedSpace, spec: &UtilitySpec) -> Result<FubiniReport> {
    let mixed = exact_seq_posterior_uniform(models, space)?;
    let lhs = expected_utilities(&mixed.probs, space, &space.sequences, spec)?;
    let per_member = models
        .models()
        .iter()
        .map(|m| expected_utilities(&exact_model_dist(m, space)?.probs, space, &space.sequences, spec))
        .collect::<Result<Vec<_>>>()?;
    let m = models.len() as f64;
    let rhs: Vec<f64> = (0..space.len())
        .map(|i| per_member.iter().map(|e| e[i]).collect::<ExactSum>().value() / m)
        .collect();
    let max_abs_diff = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(FubiniReport {
        lhs,
        rhs,
        max_abs_diff,
    })
}
