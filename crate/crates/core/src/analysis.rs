//! Bayes-risk scores for selective prediction, risk-coverage curves and
//! self-BLEU ensemble diversity.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{greedy, DecodeConfig};
use crate::error::{Error, Result};
use crate::seqcore::{check_shared_vocab, union_preserving_counts, HypothesisCollection, TokenSequence};
use crate::sum::ExactSum;
use crate::toylm::ModelSet;
use crate::utility::{corpus_bleu, utility_matrix_with, Utility, UtilityMatrix, UtilitySpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// One pooled set: `H_Θ`, or `H_M` when several sets are given.
    Tok,
    /// Per-model blocks summed over models.
    Seq,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    RawSum,
    #[default]
    CountNormalized,
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tok" => Ok(Variant::Tok),
            "seq" => Ok(Variant::Seq),
            _ => Err(Error::Config(format!("unknown risk variant {s:?}"))),
        }
    }
}

impl FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw-sum" | "raw" => Ok(Normalization::RawSum),
            "count-normalized" | "normalized" => Ok(Normalization::CountNormalized),
            _ => Err(Error::Config(format!("unknown normalization {s:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Tok => "tok",
            Variant::Seq => "seq",
        })
    }
}

/// Hypothesis sets for one input.
#[derive(Clone, Debug)]
pub struct RiskInput {
    pub input_id: String,
    pub collections: Vec<HypothesisCollection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskRecord {
    pub input_id: String,
    /// Total utility of the best candidate.
    pub s_star: f64,
    /// Total utility over all candidate/reference pairs.
    pub s_bar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskScores {
    pub records: Vec<RiskRecord>,
    pub variant: Variant,
    pub normalization: Normalization,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreKind {
    Star,
    Bar,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Star => "s_star",
            ScoreKind::Bar => "s_bar",
        }
    }
}

impl FromStr for ScoreKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s_star" | "star" | "max" => Ok(ScoreKind::Star),
            "s_bar" | "bar" | "total" => Ok(ScoreKind::Bar),
            _ => Err(Error::Config(format!("unknown risk score {s:?}"))),
        }
    }
}

impl RiskRecord {
    pub fn get(&self, kind: ScoreKind) -> f64 {
        match kind {
            ScoreKind::Star => self.s_star,
            ScoreKind::Bar => self.s_bar,
        }
    }
}

fn row_totals(m: &UtilityMatrix) -> Vec<ExactSum> {
    (0..m.rows())
        .map(|i| {
            let mut acc = ExactSum::new();
            for (&u, &w) in m.row(i).iter().zip(m.col_weights()) {
                acc.add_product(u, w as f64);
            }
            acc
        })
        .collect()
}

fn weighted_total(m: &UtilityMatrix, rows: &[ExactSum], into: &mut ExactSum) {
    for (r, &w) in rows.iter().zip(m.row_weights()) {
        for _ in 0..w {
            into.merge(r);
        }
    }
}

fn max_row(rows: &[ExactSum], denom: f64, norm: Normalization) -> f64 {
    rows.iter()
        .map(|r| match norm {
            Normalization::RawSum => r.value(),
            Normalization::CountNormalized => r.quotient(denom),
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn score_input(input: &RiskInput, spec: &UtilitySpec, variant: Variant, norm: Normalization) -> Result<RiskRecord> {
    let cs = &input.collections;
    if cs.iter().all(|c| c.total_count() == 0) {
        return Err(Error::Domain(format!("input {:?} has no hypotheses", input.input_id)));
    }
    check_shared_vocab(cs)?;
    let pool = union_preserving_counts(cs)?;
    let utility = Utility::new(*spec, pool.vocab().clone())?;
    let w = pool.total_count() as f64;
    let m = utility_matrix_with(&utility, &pool, &pool);
    let rows = row_totals(&m);
    let s_star = max_row(&rows, w, norm);
    let (bar, pairs) = match variant {
        Variant::Tok => {
            let mut total = ExactSum::new();
            weighted_total(&m, &rows, &mut total);
            (total, w * w)
        }
        Variant::Seq => {
            let mut total = ExactSum::new();
            let mut pairs = 0.0;
            for h in cs.iter().filter(|h| h.total_count() > 0) {
                let block = utility_matrix_with(&utility, h, h);
                weighted_total(&block, &row_totals(&block), &mut total);
                pairs += (h.total_count() * h.total_count()) as f64;
            }
            (total, pairs)
        }
    };
    let s_bar = match norm {
        Normalization::RawSum => bar.value(),
        Normalization::CountNormalized => bar.quotient(pairs),
    };
    Ok(RiskRecord {
        input_id: input.input_id.clone(),
        s_star,
        s_bar,
    })
}

/// Risk scores for each input. `s_star` is the largest per-candidate total
/// over the pooled set (for `Seq` this is the per-model regrouped sum, which
/// equals the pooled one); `s_bar` sums every pair, pooled for `Tok` and
/// within each model's block for `Seq`. Count normalization divides by the
/// reference count and by the number of pairs respectively.
pub fn risk_scores(inputs: &[RiskInput], spec: &UtilitySpec, variant: Variant, normalization: Normalization) -> Result<RiskScores> {
    if inputs.is_empty() {
        return Err(Error::Domain("no inputs to score".into()));
    }
    let records = inputs
        .par_iter()
        .map(|i| score_input(i, spec, variant, normalization))
        .collect::<Result<Vec<_>>>()?;
    Ok(RiskScores {
        records,
        variant,
        normalization,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub alpha: f64,
    pub retained: usize,
    pub mean_quality: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub points: Vec<CoveragePoint>,
    pub score_name: String,
    pub quality_name: String,
}

impl CoverageCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,retained,mean_quality\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.alpha, p.retained, p.mean_quality));
        }
        out
    }
}

/// `⌈α·n⌉`, guarding against `α·n` landing a hair above an integer.
pub fn retained_count(alpha: f64, n: usize) -> usize {
    let x = alpha * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Mean quality over the `⌈α·N⌉` highest-scoring inputs for each α, with
/// ties in score broken by input id. Alphas are reported in decreasing order.
pub fn coverage_curve(
    scores: &[(String, f64)],
    qualities: &[(String, f64)],
    alphas: &[f64],
    score_name: &str,
    quality_name: &str,
) -> Result<CoverageCurve> {
    if scores.is_empty() {
        return Err(Error::Domain("coverage curve needs at least one input".into()));
    }
    let quality: BTreeMap<&str, f64> = qualities.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let ids: BTreeMap<&str, f64> = scores.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    if ids.len() != scores.len() || quality.len() != qualities.len() {
        return Err(Error::Config("duplicate input ids in scores or qualities".into()));
    }
    if ids.keys().ne(quality.keys()) {
        return Err(Error::Config("scores and qualities are not aligned by input id".into()));
    }
    if scores.iter().chain(qualities).any(|(_, x)| x.is_nan()) {
        return Err(Error::Domain("NaN score or quality".into()));
    }
    let mut alphas: Vec<f64> = alphas.to_vec();
    if alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(Error::Config("coverage levels must lie in (0, 1]".into()));
    }
    alphas.sort_by(|a, b| b.total_cmp(a));
    alphas.dedup();

    let mut order: Vec<(&str, f64)> = ids.into_iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    let n = order.len();
    let points = alphas
        .into_iter()
        .map(|alpha| {
            let k = retained_count(alpha, n).clamp(1, n);
            let sum: ExactSum = order[..k].iter().map(|(id, _)| quality[id]).collect();
            CoveragePoint {
                alpha,
                retained: k,
                mean_quality: sum.quotient(k as f64),
            }
        })
        .collect();
    Ok(CoverageCurve {
        points,
        score_name: score_name.to_string(),
        quality_name: quality_name.to_string(),
    })
}

/// Picks one score column out of [`RiskScores`] for [`coverage_curve`].
pub fn score_column(scores: &RiskScores, kind: ScoreKind) -> Vec<(String, f64)> {
    scores.records.iter().map(|r| (r.input_id.clone(), r.get(kind))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// `bleu[i][j]`: corpus BLEU of member `i`'s outputs against member `j`'s.
    pub bleu: Vec<Vec<f64>>,
    pub mean_self_bleu: f64,
    pub diversity: f64,
}

impl DiversityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,bleu\n");
        for (i, row) in self.bleu.iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                out.push_str(&format!("{i},{j},{b}\n"));
            }
        }
        out
    }
}

/// `100 −` mean corpus BLEU over ordered member pairs, computed on each
/// member's greedy outputs for the prompts.
pub fn diversity(models: &ModelSet, prompts: &[TokenSequence], cfg: &DecodeConfig) -> Result<DiversityReport> {
    if models.len() < 2 {
        return Err(Error::Domain("diversity needs at least two models".into()));
    }
    if prompts.is_empty() {
        return Err(Error::Domain("diversity needs at least one prompt".into()));
    }
    cfg.validate()?;
    let outputs: Vec<Vec<TokenSequence>> = models
        .models()
        .par_iter()
        .map(|m| prompts.iter().map(|p| greedy(m, p, cfg).seq).collect())
        .collect();
    diversity_of_outputs(models.models()[0].vocab(), &outputs)
}

/// Diversity of precomputed per-member outputs (aligned by prompt).
pub fn diversity_of_outputs(vocab: &crate::seqcore::Vocabulary, outputs: &[Vec<TokenSequence>]) -> Result<DiversityReport> {
    let m = outputs.len();
    if m < 2 {
        return Err(Error::Domain("diversity needs at least two members".into()));
    }
    if outputs.iter().any(|o| o.len() != outputs[0].len()) {
        return Err(Error::Config("member outputs are not aligned".into()));
    }
    let mut bleu = vec![vec![100.0; m]; m];
    let mut total = ExactSum::new();
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let pairs: Vec<_> = outputs[i].iter().zip(&outputs[j]).collect();
            bleu[i][j] = corpus_bleu(vocab, &pairs, 4);
            total.add(bleu[i][j]);
        }
    }
    let mean_self_bleu = total.quotient((m * (m - 1)) as f64);
    Ok(DiversityReport {
        bleu,
        mean_self_bleu,
        diversity: (100.0 - mean_self_bleu).clamp(0.0, 100.0),
    })
}
