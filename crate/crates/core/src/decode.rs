//! Hypothesis-set construction: ancestral sampling, greedy decoding and beam
//! search over any [`NextTokenSource`], including the token-level ensemble.
//!
//! Ties are always broken towards the lowest token id, or lexicographically
//! smallest id sequence.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::seqcore::{Hypothesis, HypothesisCollection, TokenId, TokenSequence};
use crate::sum::exact_sum;
use crate::toylm::{ModelSet, NextTokenSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Ancestral,
    Beam,
    Greedy,
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ancestral" | "sample" => Ok(Strategy::Ancestral),
            "beam" => Ok(Strategy::Beam),
            "greedy" => Ok(Strategy::Greedy),
            other => Err(Error::Config(format!("unknown decoding strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    /// Maximum number of content tokens; longer outputs are cut and flagged.
    pub max_len: usize,
    pub beam_size: usize,
    /// Exponent of the `((5 + |y|) / 6)^alpha` length normalizer (beam only).
    pub length_penalty: f64,
    pub sampling_temperature: f64,
    pub num_samples: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Ancestral,
            max_len: 32,
            beam_size: 4,
            length_penalty: 0.6,
            sampling_temperature: 1.0,
            num_samples: 10,
        }
    }
}

impl DecodeConfig {
    pub fn ancestral(num_samples: usize) -> Self {
        Self {
            strategy: Strategy::Ancestral,
            num_samples,
            ..Self::default()
        }
    }

    pub fn beam(beam_size: usize) -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_size,
            ..Self::default()
        }
    }

    pub fn greedy() -> Self {
        Self {
            strategy: Strategy::Greedy,
            ..Self::default()
        }
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    pub fn with_length_penalty(mut self, alpha: f64) -> Self {
        self.length_penalty = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 || self.beam_size == 0 || self.num_samples == 0 {
            return Err(Error::Config("max_len, beam_size and num_samples must be positive".into()));
        }
        if !(self.sampling_temperature > 0.0) {
            return Err(Error::Config("sampling temperature must be positive".into()));
        }
        if !self.length_penalty.is_finite() {
            return Err(Error::Config("length penalty must be finite".into()));
        }
        Ok(())
    }

    /// Number of hypotheses one decoder run contributes to the budget.
    pub fn per_model_h(&self) -> usize {
        match self.strategy {
            Strategy::Ancestral => self.num_samples,
            Strategy::Beam => self.beam_size,
            Strategy::Greedy => 1,
        }
    }
}

/// Identifies the random substreams of one `(input, model)` decoding job.
/// Sample `i` draws from `substream(seed, Decoding, [input, model, i])`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub input: u64,
    pub model: u64,
}

impl StreamKey {
    pub fn new(seed: u64, input: u64, model: u64) -> Self {
        Self { seed, input, model }
    }
}

fn argmax_lowest(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

fn draw(p: &[f64], temperature: f64, u: f64) -> usize {
    let weights: Vec<f64> = if temperature == 1.0 {
        p.to_vec()
    } else {
        let max = p.iter().filter(|&&x| x > 0.0).map(|x| x.ln() / temperature).fold(f64::NEG_INFINITY, f64::max);
        p.iter()
            .map(|&x| if x > 0.0 { (x.ln() / temperature - max).exp() } else { 0.0 })
            .collect()
    };
    let total = exact_sum(&weights);
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

struct Trace {
    ids: Vec<TokenId>,
    token_lps: Vec<f64>,
    finished: bool,
}

impl Trace {
    fn into_hypothesis(self) -> Hypothesis {
        let mut h = Hypothesis::new(TokenSequence::from_ids(self.ids));
        h.logprob = Some(exact_sum(&self.token_lps));
        h.token_logprobs = Some(self.token_lps);
        h.truncated = !self.finished;
        h
    }
}

fn run_single<S, F>(source: &S, prompt: &TokenSequence, max_len: usize, mut pick: F) -> Trace
where
    S: NextTokenSource + ?Sized,
    F: FnMut(&[f64]) -> usize,
{
    let eos = source.vocab().eos() as usize;
    let mut history = prompt.ids().to_vec();
    let mut trace = Trace {
        ids: Vec::new(),
        token_lps: Vec::new(),
        finished: false,
    };
    while trace.ids.len() < max_len {
        let p = source.next_dist(&history);
        let t = pick(&p);
        trace.token_lps.push(p[t].ln());
        if t == eos {
            trace.finished = true;
            break;
        }
        trace.ids.push(t as TokenId);
        history.push(t as TokenId);
    }
    trace
}

/// Draws `cfg.num_samples` i.i.d. sequences. Identical draws are merged into
/// one entry whose weight counts them, in first-draw order. Recorded
/// log-probabilities are under the untempered source.
pub fn ancestral_sample<S: NextTokenSource + ?Sized>(
    source: &S,
    prompt: &TokenSequence,
    cfg: &DecodeConfig,
    key: StreamKey,
    tag: &str,
) -> Result<HypothesisCollection> {
    cfg.validate()?;
    let mut items: Vec<Hypothesis> = Vec::new();
    let mut pos: HashMap<TokenSequence, usize> = HashMap::new();
    for i in 0..cfg.num_samples {
        let mut rng = substream(key.seed, Stream::Decoding, &[key.input, key.model, i as u64]);
        let trace = run_single(source, prompt, cfg.max_len, |p| draw(p, cfg.sampling_temperature, rng.random::<f64>()));
        let h = trace.into_hypothesis();
        match pos.get(&h.seq) {
            Some(&j) => items[j].weight += 1,
            None => {
                pos.insert(h.seq.clone(), items.len());
                items.push(h);
            }
        }
    }
    HypothesisCollection::single(source.vocab().clone(), tag, items)
}

/// Argmax decoding, ties to the lowest token id.
pub fn greedy<S: NextTokenSource + ?Sized>(source: &S, prompt: &TokenSequence, cfg: &DecodeConfig) -> Hypothesis {
    run_single(source, prompt, cfg.max_len, argmax_lowest).into_hypothesis()
}

fn length_norm(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

#[derive(Clone)]
struct Beam {
    ids: Vec<TokenId>,
    token_lps: Vec<f64>,
    logprob: f64,
}

struct Finished {
    beam: Beam,
    score: f64,
    truncated: bool,
}

fn rank(a_lp: f64, a_key: &[TokenId], b_lp: f64, b_key: &[TokenId]) -> std::cmp::Ordering {
    b_lp.total_cmp(&a_lp).then_with(|| a_key.cmp(b_key))
}

/// Beam search with a separate pool of finished hypotheses.
///
/// At each step all extensions of the live beams are ranked by raw
/// log-probability; eos extensions ranked within the top `beam_size` enter
/// the finished pool, and the best non-eos extensions become the next live
/// beams. Finished hypotheses are scored by `logprob / ((5+|y|)/6)^alpha`.
/// Search stops once no live beam can still beat the worst of the best
/// `beam_size` finished scores, or when every beam reached `max_len`
/// (those are kept and flagged as truncated).
pub fn beam_search<S: NextTokenSource + ?Sized>(
    source: &S,
    prompt: &TokenSequence,
    cfg: &DecodeConfig,
    tag: &str,
) -> Result<HypothesisCollection> {
    cfg.validate()?;
    let k = cfg.beam_size;
    let alpha = cfg.length_penalty;
    let eos = source.vocab().eos();
    let mut alive = vec![Beam {
        ids: Vec::new(),
        token_lps: Vec::new(),
        logprob: 0.0,
    }];
    let mut finished: Vec<Finished> = Vec::new();

    while !alive.is_empty() {
        let (at_limit, expandable): (Vec<Beam>, Vec<Beam>) = alive.into_iter().partition(|b| b.ids.len() >= cfg.max_len);
        for b in at_limit {
            let score = b.logprob / length_norm(b.ids.len(), alpha);
            finished.push(Finished {
                beam: b,
                score,
                truncated: true,
            });
        }
        if expandable.is_empty() {
            break;
        }

        let mut candidates: Vec<(Beam, Vec<TokenId>, bool)> = Vec::new();
        for b in &expandable {
            let mut history = prompt.ids().to_vec();
            history.extend_from_slice(&b.ids);
            let p = source.next_dist(&history);
            for (t, &pt) in p.iter().enumerate() {
                if pt <= 0.0 {
                    continue;
                }
                let mut token_lps = b.token_lps.clone();
                token_lps.push(pt.ln());
                let logprob = exact_sum(&token_lps);
                let mut key = b.ids.clone();
                key.push(t as TokenId);
                let is_eos = t as TokenId == eos;
                let ids = if is_eos { b.ids.clone() } else { key.clone() };
                candidates.push((Beam { ids, token_lps, logprob }, key, is_eos));
            }
        }
        candidates.sort_by(|a, b| rank(a.0.logprob, &a.1, b.0.logprob, &b.1));

        alive = Vec::with_capacity(k);
        for (r, (beam, _, is_eos)) in candidates.into_iter().enumerate() {
            if is_eos {
                if r < k {
                    let score = beam.logprob / length_norm(beam.ids.len(), alpha);
                    finished.push(Finished {
                        beam,
                        score,
                        truncated: false,
                    });
                }
            } else if alive.len() < k {
                alive.push(beam);
            }
            if alive.len() == k && r >= k {
                break;
            }
        }

        if finished.len() >= k && !alive.is_empty() {
            let mut scores: Vec<f64> = finished.iter().map(|f| f.score).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let worst_kept = scores[k - 1];
            let cur = alive[0].ids.len();
            let norm = length_norm(cur, alpha).max(length_norm(cfg.max_len, alpha));
            let best_possible = alive.iter().map(|b| b.logprob / norm).fold(f64::NEG_INFINITY, f64::max);
            if best_possible < worst_kept {
                break;
            }
        }
    }

    finished.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.beam.ids.cmp(&b.beam.ids))
            .then_with(|| a.truncated.cmp(&b.truncated))
    });
    finished.truncate(k);
    let items = finished
        .into_iter()
        .map(|f| {
            let mut h = Hypothesis::new(TokenSequence::from_ids(f.beam.ids));
            h.logprob = Some(f.beam.logprob);
            h.token_logprobs = Some(f.beam.token_lps);
            h.truncated = f.truncated;
            h
        })
        .collect();
    HypothesisCollection::single(source.vocab().clone(), tag, items)
}

/// Penalized beam score of a hypothesis produced by [`beam_search`].
pub fn beam_score(h: &Hypothesis, alpha: f64) -> f64 {
    h.logprob.unwrap_or(f64::NEG_INFINITY) / length_norm(h.seq.len(), alpha)
}

/// Runs the configured strategy for one source.
pub fn decode<S: NextTokenSource + ?Sized>(
    source: &S,
    prompt: &TokenSequence,
    cfg: &DecodeConfig,
    key: StreamKey,
    tag: &str,
) -> Result<HypothesisCollection> {
    match cfg.strategy {
        Strategy::Ancestral => ancestral_sample(source, prompt, cfg, key, tag),
        Strategy::Beam => beam_search(source, prompt, cfg, tag),
        Strategy::Greedy => {
            cfg.validate()?;
            HypothesisCollection::single(source.vocab().clone(), tag, vec![greedy(source, prompt, cfg)])
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleMode {
    /// One hypothesis set per member.
    PerModel,
    /// One set decoded from the averaged next-token distribution.
    TokenEnsemble,
}

impl fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnsembleMode::PerModel => "per-model",
            EnsembleMode::TokenEnsemble => "token-ensemble",
        })
    }
}

impl FromStr for EnsembleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-model" => Ok(EnsembleMode::PerModel),
            "token-ensemble" => Ok(EnsembleMode::TokenEnsemble),
            other => Err(Error::Config(format!("unknown ensemble mode {other:?}"))),
        }
    }
}

pub const TOKEN_ENSEMBLE_TAG: &str = "token-ensemble";

pub fn member_tag(i: usize) -> String {
    format!("m{i}")
}

#[derive(Clone, Debug)]
pub enum EnsembleHypotheses {
    PerModel(Vec<HypothesisCollection>),
    TokenEnsemble(HypothesisCollection),
}

impl EnsembleHypotheses {
    pub fn collections(&self) -> &[HypothesisCollection] {
        match self {
            EnsembleHypotheses::PerModel(v) => v,
            EnsembleHypotheses::TokenEnsemble(c) => std::slice::from_ref(c),
        }
    }

    pub fn into_collections(self) -> Vec<HypothesisCollection> {
        match self {
            EnsembleHypotheses::PerModel(v) => v,
            EnsembleHypotheses::TokenEnsemble(c) => vec![c],
        }
    }
}

/// Per-model sets (member `i` decodes with stream slot `i`, tag `m{i}`) or a
/// single token-level-ensemble set (stream slot 0), for one input.
pub fn build_ensemble_hypotheses(
    models: &ModelSet,
    prompt: &TokenSequence,
    cfg: &DecodeConfig,
    seed: u64,
    input: u64,
    mode: EnsembleMode,
) -> Result<EnsembleHypotheses> {
    match mode {
        EnsembleMode::PerModel => {
            let sets = models
                .models()
                .par_iter()
                .enumerate()
                .map(|(i, m)| decode(m, prompt, cfg, StreamKey::new(seed, input, i as u64), &member_tag(i)))
                .collect::<Result<Vec<_>>>()?;
            Ok(EnsembleHypotheses::PerModel(sets))
        }
        EnsembleMode::TokenEnsemble => Ok(EnsembleHypotheses::TokenEnsemble(decode(
            models,
            prompt,
            cfg,
            StreamKey::new(seed, input, 0),
            TOKEN_ENSEMBLE_TAG,
        )?)),
    }
}
