//! Categorical n-gram language models with a Gaussian posterior over logits.
//!
//! A [`ToyModel`] stores one logit row per context window of `order` tokens.
//! The bos column is masked: bos is never emitted. A [`PosteriorSpec`] puts a
//! diagonal Gaussian (or a mixture of them) over the logit table, with
//! per-entry precision `lambda * base_precision`.

use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Rng, Stream};
use crate::seqcore::{TokenId, TokenSequence, Vocabulary};
use crate::sum::ExactSum;

/// Logit used for probability-zero entries; `exp` of it relative to any
/// ordinary logit underflows to exactly 0.
pub const MIN_LOGIT: f64 = -1.0e4;

/// Anything that yields a next-token distribution given the history
/// (prompt followed by the tokens generated so far).
pub trait NextTokenSource: Sync {
    fn vocab(&self) -> &Arc<Vocabulary>;
    fn next_dist(&self, history: &[TokenId]) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    vocab: Arc<Vocabulary>,
    order: usize,
    logits: Vec<f64>,
}

fn table_rows(vocab_len: usize, order: usize) -> Result<usize> {
    vocab_len
        .checked_pow(order as u32)
        .filter(|&r| r.checked_mul(vocab_len).is_some_and(|n| n <= 1 << 26))
        .ok_or_else(|| Error::Config(format!("context table too large: {vocab_len}^{order}")))
}

impl ToyModel {
    pub fn new(vocab: Arc<Vocabulary>, order: usize, logits: Vec<f64>) -> Result<Self> {
        let rows = table_rows(vocab.len(), order)?;
        if logits.len() != rows * vocab.len() {
            return Err(Error::Config(format!(
                "logit table has {} entries, expected {}",
                logits.len(),
                rows * vocab.len()
            )));
        }
        if let Some(x) = logits.iter().find(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite logit {x}")));
        }
        Ok(Self { vocab, order, logits })
    }

    pub fn uniform(vocab: Arc<Vocabulary>, order: usize) -> Result<Self> {
        let n = table_rows(vocab.len(), order)? * vocab.len();
        Self::new(vocab, order, vec![0.0; n])
    }

    /// Builds a model from explicit next-token probabilities. `probs` receives
    /// the context window (exactly `order` ids, bos-padded) and returns one
    /// probability per vocabulary entry; zeros become [`MIN_LOGIT`].
    pub fn from_probs<F>(vocab: Arc<Vocabulary>, order: usize, mut probs: F) -> Result<Self>
    where
        F: FnMut(&[TokenId]) -> Vec<f64>,
    {
        let v = vocab.len();
        let rows = table_rows(v, order)?;
        let mut logits = Vec::with_capacity(rows * v);
        for row in 0..rows {
            let ctx = decode_context(row, v, order);
            let p = probs(&ctx);
            if p.len() != v {
                return Err(Error::Config(format!("probability row has {} entries, expected {v}", p.len())));
            }
            logits.extend(p.iter().map(|&x| if x > 0.0 { x.ln() } else { MIN_LOGIT }));
        }
        Self::new(vocab, order, logits)
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn rows(&self) -> usize {
        self.logits.len() / self.vocab.len()
    }

    /// Row of the logit table used after `history`.
    pub fn context_row(&self, history: &[TokenId]) -> usize {
        context_row(&self.vocab, self.order, history)
    }

    pub fn row_logits(&self, row: usize) -> &[f64] {
        let v = self.vocab.len();
        &self.logits[row * v..(row + 1) * v]
    }

    pub fn row_dist(&self, row: usize) -> Vec<f64> {
        softmax_masked(self.row_logits(row), self.vocab.bos() as usize)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: FORMAT_VERSION,
            vocab: (*self.vocab).clone(),
            order: self.order,
            logits: self.logits.clone(),
        };
        write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = read_json(path)?;
        check_header(&file.format, file.version, MODEL_FORMAT, path)?;
        Self::new(Arc::new(file.vocab), file.order, file.logits)
    }
}

impl NextTokenSource for ToyModel {
    fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    fn next_dist(&self, history: &[TokenId]) -> Vec<f64> {
        self.row_dist(self.context_row(history))
    }
}

pub(crate) fn context_row(vocab: &Vocabulary, order: usize, history: &[TokenId]) -> usize {
    let v = vocab.len();
    let take = history.len().min(order);
    let pad = order - take;
    let mut row = 0usize;
    for _ in 0..pad {
        row = row * v + vocab.bos() as usize;
    }
    for &id in &history[history.len() - take..] {
        row = row * v + id as usize;
    }
    row
}

fn decode_context(mut row: usize, v: usize, order: usize) -> Vec<TokenId> {
    let mut ctx = vec![0; order];
    for slot in ctx.iter_mut().rev() {
        *slot = (row % v) as TokenId;
        row /= v;
    }
    ctx
}

fn softmax_masked(logits: &[f64], masked: usize) -> Vec<f64> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != masked)
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &x)| if i == masked { 0.0 } else { (x - max).exp() })
        .collect();
    let z: f64 = out.iter().copied().collect::<ExactSum>().value();
    for p in &mut out {
        *p /= z;
    }
    out
}

/// Next-token distribution of `model` after `context`.
pub fn next_dist(model: &ToyModel, context: &TokenSequence) -> Vec<f64> {
    model.next_dist(context.ids())
}

/// `ln p(seq | prompt)`, including the final eos step.
pub fn seq_logprob<S: NextTokenSource + ?Sized>(source: &S, prompt: &TokenSequence, seq: &TokenSequence) -> f64 {
    let mut history = prompt.ids().to_vec();
    let mut acc = ExactSum::new();
    for &id in seq.ids() {
        acc.add(source.next_dist(&history)[id as usize].ln());
        history.push(id);
    }
    acc.add(source.next_dist(&history)[source.vocab().eos() as usize].ln());
    acc.value()
}

/// Members sampled from a posterior (or supplied), sharing vocabulary and order.
#[derive(Clone, Debug)]
pub struct ModelSet {
    models: Vec<ToyModel>,
}

impl ModelSet {
    pub fn new(models: Vec<ToyModel>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::Domain("a model set needs at least one model".into()))?;
        for m in &models[1..] {
            if m.order != first.order || *m.vocab != *first.vocab {
                return Err(Error::Config("ensemble members must share vocabulary and order".into()));
            }
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[ToyModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

impl NextTokenSource for ModelSet {
    fn vocab(&self) -> &Arc<Vocabulary> {
        &self.models[0].vocab
    }

    fn next_dist(&self, history: &[TokenId]) -> Vec<f64> {
        let dists: Vec<Vec<f64>> = self.models.iter().map(|m| m.next_dist(history)).collect();
        let m = self.models.len() as f64;
        (0..dists[0].len())
            .map(|i| dists.iter().map(|d| d[i]).collect::<ExactSum>().value() / m)
            .collect()
    }
}

/// Token-level ensemble distribution: the arithmetic mean of the members'
/// next-token probabilities.
pub fn ensemble_next_dist(models: &ModelSet, context: &TokenSequence) -> Vec<f64> {
    models.next_dist(context.ids())
}

/// One Gaussian component over the logit table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Vec<f64>,
    /// Precision before temperature scaling (the `h + δ` surrogate).
    pub base_precision: Vec<f64>,
    pub weight: f64,
}

/// Diagonal Gaussian, or a mixture of them, over a model's logits.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSpec {
    vocab: Arc<Vocabulary>,
    order: usize,
    lambda: f64,
    components: Vec<Component>,
}

impl PosteriorSpec {
    pub fn new(vocab: Arc<Vocabulary>, order: usize, lambda: f64, components: Vec<Component>) -> Result<Self> {
        let n = table_rows(vocab.len(), order)? * vocab.len();
        if components.is_empty() {
            return Err(Error::Domain("posterior needs at least one component".into()));
        }
        if !(lambda > 0.0) {
            return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
        }
        for c in &components {
            if c.mean.len() != n || c.base_precision.len() != n {
                return Err(Error::Config(format!("posterior tables must have {n} entries")));
            }
            if c.mean.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain("posterior mean must be finite".into()));
            }
            if c.base_precision.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
                return Err(Error::Domain("base precision must be positive and finite".into()));
            }
            if !(c.weight > 0.0) {
                return Err(Error::Domain("mixture weights must be positive".into()));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).collect::<ExactSum>().value();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self {
            vocab,
            order,
            lambda,
            components,
        })
    }

    /// Single Gaussian centred on `mean` with per-entry base precision.
    pub fn unimodal(mean: &ToyModel, base_precision: Vec<f64>, lambda: f64) -> Result<Self> {
        Self::new(
            mean.vocab.clone(),
            mean.order,
            lambda,
            vec![Component {
                mean: mean.logits.clone(),
                base_precision,
                weight: 1.0,
            }],
        )
    }

    /// Equal-weight mixture with one component per mean model, as for a deep
    /// ensemble.
    pub fn mixture(means: &[ToyModel], base_precision: Vec<f64>, lambda: f64) -> Result<Self> {
        let first = means.first().ok_or_else(|| Error::Domain("mixture of zero components".into()))?;
        let w = 1.0 / means.len() as f64;
        let components = means
            .iter()
            .map(|m| Component {
                mean: m.logits.clone(),
                base_precision: base_precision.clone(),
                weight: w,
            })
            .collect();
        Self::new(first.vocab.clone(), first.order, lambda, components)
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn is_unimodal(&self) -> bool {
        self.components.len() == 1
    }

    /// Effective precision `lambda * base` of entry `i` in component `c`.
    pub fn precision(&self, c: usize, i: usize) -> f64 {
        self.lambda * self.components[c].base_precision[i]
    }

    pub fn variance(&self, c: usize, i: usize) -> f64 {
        1.0 / self.precision(c, i)
    }

    /// Model at the mean of component `c`.
    pub fn mean_model(&self, c: usize) -> ToyModel {
        ToyModel {
            vocab: self.vocab.clone(),
            order: self.order,
            logits: self.components[c].mean.clone(),
        }
    }

    /// Same means, variance scaled by `lambda_old / lambda_new`.
    /// `f64::INFINITY` collapses the posterior onto its means.
    pub fn set_temperature(&self, lambda_new: f64) -> Result<Self> {
        if !(lambda_new > 0.0) {
            return Err(Error::Domain(format!("lambda must be positive, got {lambda_new}")));
        }
        Ok(Self {
            lambda: lambda_new,
            ..self.clone()
        })
    }

    /// Draws one model: a component by weight, then `mean + z / sqrt(precision)`.
    pub fn sample_model(&self, rng: &mut Rng) -> ToyModel {
        let c = if self.components.len() == 1 {
            0
        } else {
            let u: f64 = rng.random::<f64>();
            let mut acc = 0.0;
            let mut pick = self.components.len() - 1;
            for (i, comp) in self.components.iter().enumerate() {
                acc += comp.weight;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        };
        let comp = &self.components[c];
        let logits = comp
            .mean
            .iter()
            .zip(&comp.base_precision)
            .map(|(&m, &b)| {
                let z: f64 = rng.sample(StandardNormal);
                m + z / (self.lambda * b).sqrt()
            })
            .collect();
        ToyModel {
            vocab: self.vocab.clone(),
            order: self.order,
            logits,
        }
    }

    /// `m` models drawn i.i.d., member `i` from its own substream.
    pub fn sample_models(&self, m: usize, seed: u64) -> Result<ModelSet> {
        ModelSet::new(
            (0..m)
                .map(|i| self.sample_model(&mut substream(seed, Stream::ModelSampling, &[i as u64])))
                .collect(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::Domain("cannot serialize an infinite lambda".into()));
        }
        let file = PosteriorFile {
            format: POSTERIOR_FORMAT.into(),
            version: FORMAT_VERSION,
            vocab: (*self.vocab).clone(),
            order: self.order,
            lambda: self.lambda,
            components: self.components.clone(),
        };
        write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: PosteriorFile = read_json(path)?;
        check_header(&file.format, file.version, POSTERIOR_FORMAT, path)?;
        Self::new(Arc::new(file.vocab), file.order, file.lambda, file.components)
    }
}

/// Fits a posterior from token counts.
///
/// The mean is the log of additively smoothed next-token frequencies; each
/// entry's base precision is `count + smoothing`, so frequently observed
/// transitions are more certain. The bos column is masked and carries a
/// placeholder.
pub fn fit_from_corpus(
    vocab: Arc<Vocabulary>,
    corpus: &[TokenSequence],
    order: usize,
    smoothing: f64,
    lambda: f64,
) -> Result<PosteriorSpec> {
    if corpus.is_empty() {
        return Err(Error::Domain("cannot fit a model to an empty corpus".into()));
    }
    if !(smoothing > 0.0) || !smoothing.is_finite() {
        return Err(Error::Domain(format!("smoothing must be positive and finite, got {smoothing}")));
    }
    let v = vocab.len();
    let rows = table_rows(v, order)?;
    let mut counts = vec![0u64; rows * v];
    for s in corpus {
        let mut history: Vec<TokenId> = Vec::with_capacity(s.len());
        for &id in s.ids() {
            if !vocab.contains_id(id) || id == vocab.bos() || id == vocab.eos() {
                return Err(Error::data(format!("corpus token id {id} is not a content token")));
            }
            counts[context_row(&vocab, order, &history) * v + id as usize] += 1;
            history.push(id);
        }
        counts[context_row(&vocab, order, &history) * v + vocab.eos() as usize] += 1;
    }
    let bos = vocab.bos() as usize;
    let emittable = (v - 1) as f64;
    let mut mean = vec![0.0; rows * v];
    let mut base = vec![smoothing; rows * v];
    for r in 0..rows {
        let row = &counts[r * v..(r + 1) * v];
        let total: u64 = row.iter().sum();
        let denom = total as f64 + smoothing * emittable;
        for (i, &c) in row.iter().enumerate() {
            if i == bos {
                continue;
            }
            mean[r * v + i] = ((c as f64 + smoothing) / denom).ln();
            base[r * v + i] = c as f64 + smoothing;
        }
    }
    PosteriorSpec::new(
        vocab,
        order,
        lambda,
        vec![Component {
            mean,
            base_precision: base,
            weight: 1.0,
        }],
    )
}

const MODEL_FORMAT: &str = "umbr-model";
const POSTERIOR_FORMAT: &str = "umbr-posterior";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    vocab: Vocabulary,
    order: usize,
    logits: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PosteriorFile {
    format: String,
    version: u32,
    vocab: Vocabulary,
    order: usize,
    lambda: f64,
    components: Vec<Component>,
}

fn check_header(format: &str, version: u32, want: &str, path: &Path) -> Result<()> {
    if format != want || version != FORMAT_VERSION {
        return Err(Error::Data {
            path: Some(path.to_path_buf()),
            line: None,
            message: format!("expected {want} v{FORMAT_VERSION}, found {format} v{version}"),
        });
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::data(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data {
        path: Some(path.to_path_buf()),
        line: Some(e.line()),
        message: e.to_string(),
    })
}

/// Order-2 model over a vocabulary containing `a` and `b`: emits `a` with
/// probability `pa` (else `b`) at each of the first two steps, then eos with
/// certainty.
pub fn two_step(vocab: &Arc<Vocabulary>, pa: f64) -> Result<ToyModel> {
    if !(0.0..=1.0).contains(&pa) {
        return Err(Error::Domain(format!("probability {pa} outside [0, 1]")));
    }
    let (a, b) = match (vocab.id("a"), vocab.id("b")) {
        (Some(a), Some(b)) => (a as usize, b as usize),
        _ => return Err(Error::Config("two_step needs tokens `a` and `b`".into())),
    };
    let bos = vocab.bos();
    let eos = vocab.eos() as usize;
    ToyModel::from_probs(vocab.clone(), 2, |ctx| {
        let mut p = vec![0.0; vocab.len()];
        if ctx.contains(&bos) {
            p[a] = pa;
            p[b] = 1.0 - pa;
        } else {
            p[eos] = 1.0;
        }
        p
    })
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    pub fn two_step(vocab: &Arc<Vocabulary>, pa: f64) -> ToyModel {
        super::two_step(vocab, pa).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testing::two_step;
    use super::*;
    use crate::rng::substream;

    fn ab() -> Arc<Vocabulary> {
        Arc::new(Vocabulary::new(["a", "b"]).unwrap())
    }

    fn assert_normalized(p: &[f64]) {
        let s: f64 = p.iter().sum();
        assert!((s - 1.0).abs() < 1e-12, "sum {s}");
        assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn uniform_logits_give_uniform_distribution() {
        let v = ab();
        let m = ToyModel::uniform(v.clone(), 1).unwrap();
        let p = next_dist(&m, &TokenSequence::empty());
        assert_eq!(p[v.bos() as usize], 0.0);
        for id in [v.eos(), 2, 3] {
            assert!((p[id as usize] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_logit_takes_all_mass() {
        let v = ab();
        let mut logits = vec![0.0; 4];
        logits[2] = 800.0;
        let p = next_dist(&ToyModel::new(v, 0, logits).unwrap(), &TokenSequence::empty());
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn two_token_softmax() {
        let v = Arc::new(Vocabulary::new(["a"]).unwrap());
        let m = ToyModel::new(v.clone(), 0, vec![0.0, 1f64.ln(), 9f64.ln()]).unwrap();
        let p = next_dist(&m, &TokenSequence::empty());
        assert!((p[2] - 0.9).abs() < 1e-15 && (p[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_tables() {
        let v = ab();
        assert!(ToyModel::new(v.clone(), 1, vec![0.0; 3]).is_err());
        assert!(ToyModel::new(v, 0, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn every_context_is_normalized() {
        let v = Arc::new(Vocabulary::new(["a", "b"]).unwrap());
        for order in 0..=2 {
            let spec = fit_from_corpus(v.clone(), &[v.parse("a b a").unwrap()], order, 0.5, 1.0).unwrap();
            let m = spec.sample_model(&mut substream(1, Stream::ModelSampling, &[order as u64]));
            for r in 0..m.rows() {
                assert_normalized(&m.row_dist(r));
            }
        }
    }

    #[test]
    fn logprob_of_two_step_model() {
        let v = ab();
        let m = two_step(&v, 0.9);
        let lp = seq_logprob(&m, &TokenSequence::empty(), &v.parse("a a").unwrap());
        assert!((lp - 0.81f64.ln()).abs() < 1e-12);
        assert!(seq_logprob(&m, &TokenSequence::empty(), &v.parse("b a").unwrap()) <= 0.0);
        let stop = ToyModel::from_probs(v.clone(), 0, |_| vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(seq_logprob(&stop, &TokenSequence::empty(), &TokenSequence::empty()), 0.0);
    }

    #[test]
    fn prompt_seeds_the_context() {
        let v = ab();
        let m = two_step(&v, 0.9);
        // Prompt "a b" fills the whole window, so eos is certain immediately.
        let lp = seq_logprob(&m, &v.parse("a b").unwrap(), &TokenSequence::empty());
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn ensemble_averages_probabilities() {
        let v = ab();
        let set = ModelSet::new(vec![two_step(&v, 0.9), two_step(&v, 0.1)]).unwrap();
        let p = ensemble_next_dist(&set, &TokenSequence::empty());
        assert!((p[2] - 0.5).abs() < 1e-15);
        assert_normalized(&p);
        let a = two_step(&v, 0.7);
        let same = ModelSet::new(vec![a.clone(), a.clone(), a.clone()]).unwrap();
        let one = ModelSet::new(vec![a.clone()]).unwrap();
        for ctx in ["", "a", "a b"] {
            let c = v.parse(ctx).unwrap();
            let base = next_dist(&a, &c);
            assert_eq!(ensemble_next_dist(&one, &c), base);
            for (x, y) in ensemble_next_dist(&same, &c).iter().zip(&base) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ensemble_rejects_mismatched_members() {
        let v = ab();
        let other = ToyModel::uniform(v.clone(), 1).unwrap();
        assert!(ModelSet::new(vec![two_step(&v, 0.5), other]).is_err());
        assert!(ModelSet::new(vec![]).is_err());
    }

    fn spec() -> PosteriorSpec {
        let v = ab();
        let mean = two_step(&v, 0.6);
        let n = mean.logits().len();
        PosteriorSpec::unimodal(&mean, (0..n).map(|i| 1.0 + i as f64 % 3.0).collect(), 2.0).unwrap()
    }

    #[test]
    fn infinite_lambda_samples_the_mean() {
        let s = spec().set_temperature(f64::INFINITY).unwrap();
        let m = s.sample_model(&mut substream(3, Stream::ModelSampling, &[]));
        assert_eq!(m.logits(), s.mean_model(0).logits());
    }

    #[test]
    fn samples_differ_across_seeds_and_repeat_within() {
        let s = spec();
        let a = s.sample_model(&mut substream(1, Stream::ModelSampling, &[]));
        let b = s.sample_model(&mut substream(2, Stream::ModelSampling, &[]));
        let a2 = s.sample_model(&mut substream(1, Stream::ModelSampling, &[]));
        assert_ne!(a.logits(), b.logits());
        assert_eq!(a.logits(), a2.logits());
    }

    #[test]
    fn empirical_variance_matches_precision() {
        let s = spec();
        let n = 10_000;
        let mut rng = substream(11, Stream::ModelSampling, &[]);
        let entries = s.mean_model(0).logits().len();
        let mut sum = vec![0.0; entries];
        let mut sq = vec![0.0; entries];
        for _ in 0..n {
            let m = s.sample_model(&mut rng);
            for (i, &x) in m.logits().iter().enumerate() {
                let d = x - s.components()[0].mean[i];
                sum[i] += d;
                sq[i] += d * d;
            }
        }
        for i in 0..entries {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            let want = s.variance(0, i);
            assert!((var / want - 1.0).abs() < 0.05, "entry {i}: {var} vs {want}");
        }
    }

    #[test]
    fn temperature_scales_variance() {
        let s = spec();
        assert_eq!(s.set_temperature(2.0).unwrap(), s);
        let hot = s.set_temperature(0.5).unwrap();
        for i in 0..s.components()[0].mean.len() {
            assert_eq!(hot.variance(0, i), 4.0 * s.variance(0, i));
        }
        assert_eq!(hot.components()[0].mean, s.components()[0].mean);
        assert!(s.set_temperature(0.0).is_err());
        assert!(s.set_temperature(-1.0).is_err());
    }

    #[test]
    fn mixture_picks_components() {
        let v = ab();
        let a = two_step(&v, 0.9);
        let b = two_step(&v, 0.1);
        let n = a.logits().len();
        let mix = PosteriorSpec::mixture(&[a.clone(), b.clone()], vec![1.0; n], 1.0)
            .unwrap()
            .set_temperature(f64::INFINITY)
            .unwrap();
        let set = mix.sample_models(200, 5).unwrap();
        let from_a = set.models().iter().filter(|m| m.logits() == a.logits()).count();
        let from_b = set.models().iter().filter(|m| m.logits() == b.logits()).count();
        assert_eq!(from_a + from_b, 200);
        assert!(from_a > 60 && from_b > 60);
    }

    #[test]
    fn fit_prefers_observed_transitions() {
        let v = ab();
        let corpus = vec![v.parse("a a").unwrap()];
        let spec = fit_from_corpus(v.clone(), &corpus, 1, 0.1, 1.0).unwrap();
        let mean = spec.mean_model(0);
        let p = next_dist(&mean, &v.parse("a").unwrap());
        let argmax = (0..p.len()).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap();
        assert_eq!(argmax, v.id("a").unwrap() as usize);
        assert!(fit_from_corpus(v.clone(), &[], 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn fit_precision_is_linear_in_pseudo_counts() {
        let v = ab();
        let corpus = vec![v.parse("a b").unwrap(), v.parse("b").unwrap()];
        let doubled: Vec<_> = corpus.iter().chain(&corpus).cloned().collect();
        let one = fit_from_corpus(v.clone(), &corpus, 1, 0.5, 3.0).unwrap();
        let two = fit_from_corpus(v.clone(), &doubled, 1, 1.0, 3.0).unwrap();
        for i in 0..one.components()[0].mean.len() {
            if i % v.len() == v.bos() as usize {
                continue;
            }
            assert_eq!(two.precision(0, i), 2.0 * one.precision(0, i));
            assert!((two.components()[0].mean[i] - one.components()[0].mean[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn heavy_smoothing_flattens_the_mean() {
        let v = ab();
        let spec = fit_from_corpus(v.clone(), &[v.parse("a a a b").unwrap()], 1, 1e12, 1.0).unwrap();
        let mean = spec.mean_model(0);
        for r in 0..mean.rows() {
            let p = mean.row_dist(r);
            for id in [1, 2, 3] {
                assert!((p[id] - 1.0 / 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec();
        let p = dir.path().join("post.json");
        s.save(&p).unwrap();
        assert_eq!(PosteriorSpec::load(&p).unwrap(), s);
        let m = s.sample_model(&mut substream(9, Stream::ModelSampling, &[]));
        let q = dir.path().join("model.json");
        m.save(&q).unwrap();
        assert_eq!(ToyModel::load(&q).unwrap(), m);
        assert!(ToyModel::load(&p).is_err());
        assert!(s.set_temperature(f64::INFINITY).unwrap().save(&p).is_err());
    }
}
