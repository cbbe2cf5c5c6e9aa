//! End-to-end runs: generation, MBR selection, selective prediction,
//! diversity, oracle reports, corpus evaluation and budget tables.
//!
//! Every task writes into `paths.out_dir`. Outputs are ordered by input id
//! and depend only on the configuration and seed, not on the worker count.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    coverage_curve, diversity, risk_scores, score_column, Normalization, RiskInput, ScoreKind, Variant,
};
use crate::decode::{build_ensemble_hypotheses, DecodeConfig, EnsembleMode, Strategy};
use crate::error::{Error, Result};
use crate::io::{csv, emit, ingest, read_texts, write_file, write_jsonl, InputSets};
use crate::mbr::{budget_plan, numeric_mbr, parse_number, predicted_comparisons, run_estimator, Estimator};
use crate::oracle::{
    exact_mbr, exact_seq_posterior_uniform, exact_tok_posterior, fubini_check, CandidatePool, EnumeratedSpace,
};
use crate::seqcore::{split_tokens, HypothesisCollection, TokenSequence, Vocabulary, BOS_TOKEN, EOS_TOKEN};
use crate::toylm::{fit_from_corpus, ModelSet, PosteriorSpec, ToyModel};
use crate::utility::{corpus_bleu, corpus_chrf, Utility, UtilitySpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Generate,
    Mbr,
    Selective,
    Diversity,
    Oracle,
    Evaluate,
    Budget,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Generate => "generate",
            Task::Mbr => "mbr",
            Task::Selective => "selective",
            Task::Diversity => "diversity",
            Task::Oracle => "oracle",
            Task::Evaluate => "evaluate",
            Task::Budget => "budget",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Hypothesis JSONL (black-box input). Without it hypotheses are generated.
    pub hypotheses: Option<PathBuf>,
    /// Vocabulary JSON pinning the token inventory of `hypotheses`.
    pub vocab: Option<PathBuf>,
    /// `{input_id, text}` references.
    pub references: Option<PathBuf>,
    /// `{input_id, text}` prompts for generation.
    pub prompts: Option<PathBuf>,
    /// Posterior JSON to sample ensemble members from.
    pub posterior: Option<PathBuf>,
    /// Fixed member models (a deep ensemble); overrides `posterior`.
    pub models: Vec<PathBuf>,
    /// `{input_id, text}` system outputs for `evaluate`.
    pub outputs: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: Task,
    pub estimator: Estimator,
    pub utility: UtilitySpec,
    pub decode: DecodeConfig,
    pub seed: u64,
    /// Number of ensemble members to sample.
    pub models: usize,
    /// Hypotheses per member (samples or beams).
    pub per_model_h: usize,
    /// Overrides the posterior's effective sample size.
    pub lambda: Option<f64>,
    pub merge_duplicates: bool,
    /// Inputs to generate for when no prompt file is given (empty prompts).
    pub num_inputs: usize,
    pub risk_variant: Variant,
    pub normalization: Normalization,
    pub score: ScoreKindName,
    pub alphas: Vec<f64>,
    /// Longest sequence enumerated by the oracle.
    pub oracle_max_len: usize,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub paths: Paths,
}

/// Serializable name of a [`ScoreKind`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKindName {
    SStar,
    SBar,
}

impl From<ScoreKindName> for ScoreKind {
    fn from(s: ScoreKindName) -> Self {
        match s {
            ScoreKindName::SStar => ScoreKind::Star,
            ScoreKindName::SBar => ScoreKind::Bar,
        }
    }
}

impl FromStr for ScoreKindName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.parse::<ScoreKind>()? {
            ScoreKind::Star => ScoreKindName::SStar,
            ScoreKind::Bar => ScoreKindName::SBar,
        })
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Mbr,
            estimator: Estimator::Concat,
            utility: UtilitySpec::sentence_bleu(),
            decode: DecodeConfig::default().with_max_len(12),
            seed: 0,
            models: 4,
            per_model_h: 10,
            lambda: None,
            merge_duplicates: true,
            num_inputs: 8,
            risk_variant: Variant::Tok,
            normalization: Normalization::CountNormalized,
            score: ScoreKindName::SBar,
            alphas: vec![1.0, 0.8, 0.6, 0.4, 0.2],
            oracle_max_len: 3,
            threads: None,
            paths: Paths {
                out_dir: PathBuf::from("."),
                ..Paths::default()
            },
        }
    }
}

impl RunConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            ..Self::default()
        }
    }

    /// Decoder settings with `per_model_h` applied to the active strategy.
    pub fn effective_decode(&self) -> DecodeConfig {
        let mut d = self.decode.clone();
        match d.strategy {
            Strategy::Ancestral => d.num_samples = self.per_model_h,
            Strategy::Beam => d.beam_size = self.per_model_h,
            Strategy::Greedy => {}
        }
        d
    }

    fn ingested(&self) -> bool {
        self.paths.hypotheses.is_some()
    }

    /// Checks task/estimator/input compatibility before any work is done.
    pub fn validate(&self) -> Result<()> {
        if self.threads == Some(0) {
            return Err(Error::Config("thread count must be positive".into()));
        }
        if self.models == 0 || self.per_model_h == 0 {
            return Err(Error::Config("models and per_model_h must be positive".into()));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) {
                return Err(Error::Config(format!("lambda must be positive, got {l}")));
            }
        }
        self.effective_decode().validate()?;
        match self.task {
            Task::Mbr | Task::Selective => {
                if self.estimator == Estimator::TokenEnsemble && self.ingested() {
                    return Err(Error::Refused(
                        "the token-level ensemble needs next-token distributions and cannot be \
                         built from black-box hypothesis files"
                            .into(),
                    ));
                }
                if self.estimator == Estimator::Single && !self.ingested() && self.member_count() > 1 {
                    return Err(Error::Config("the single estimator decodes one model; set models = 1".into()));
                }
            }
            _ => {}
        }
        match self.task {
            Task::Selective if self.estimator == Estimator::Numeric => {
                Err(Error::Config("selective prediction needs a string-valued estimator".into()))
            }
            Task::Selective if self.paths.references.is_none() => {
                Err(Error::Config("selective prediction needs references".into()))
            }
            Task::Evaluate if self.paths.outputs.is_none() || self.paths.references.is_none() => {
                Err(Error::Config("evaluate needs outputs and references".into()))
            }
            Task::Diversity if self.member_count() < 2 => {
                Err(Error::Config("diversity needs at least two models".into()))
            }
            Task::Selective => {
                if self.alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
                    return Err(Error::Config("coverage levels must lie in (0, 1]".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn member_count(&self) -> usize {
        if self.paths.models.is_empty() {
            self.models
        } else {
            self.paths.models.len()
        }
    }
}

/// Files written and a few human-readable summary lines.
#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

const DEMO_CORPUS: &[&str] = &[
    "the cat sat on the mat",
    "the cat sat",
    "a cat sat on a mat",
    "the dog sat on the mat",
    "the dog ran home",
    "a dog ran to the cat",
    "the cat ran home",
    "a cat saw the dog",
    "the dog saw a cat",
    "the cat saw the mat",
];

/// Built-in order-2 posterior fitted to a ten-sentence toy corpus.
pub fn demo_posterior(lambda: f64) -> Result<PosteriorSpec> {
    let words: std::collections::BTreeSet<&str> = DEMO_CORPUS.iter().flat_map(|s| s.split(' ')).collect();
    let vocab = Arc::new(Vocabulary::new(words)?);
    let corpus = DEMO_CORPUS.iter().map(|s| vocab.parse(s)).collect::<Result<Vec<_>>>()?;
    fit_from_corpus(vocab, &corpus, 2, 0.1, lambda)
}

const DEMO_LAMBDA: f64 = 20.0;

/// The ensemble a run decodes with: fixed model files, or members sampled
/// from a posterior (the built-in one when none is given).
pub fn load_models(cfg: &RunConfig) -> Result<ModelSet> {
    if !cfg.paths.models.is_empty() {
        let models = cfg.paths.models.iter().map(|p| ToyModel::load(p)).collect::<Result<Vec<_>>>()?;
        return ModelSet::new(models);
    }
    let posterior = match &cfg.paths.posterior {
        Some(p) => PosteriorSpec::load(p)?,
        None => demo_posterior(DEMO_LAMBDA)?,
    };
    let posterior = match cfg.lambda {
        Some(l) => posterior.set_temperature(l)?,
        None => posterior,
    };
    posterior.sample_models(cfg.models, cfg.seed)
}

/// Prompts keyed by input id: from the prompt file, or `num_inputs` empty
/// prompts with zero-padded ids.
pub fn load_prompts(cfg: &RunConfig, vocab: &Vocabulary) -> Result<BTreeMap<String, TokenSequence>> {
    match &cfg.paths.prompts {
        Some(p) => read_texts(p)?
            .into_iter()
            .map(|(id, text)| {
                let seq = vocab.parse(&text).map_err(|e| Error::Data {
                    path: Some(p.clone()),
                    line: None,
                    message: format!("prompt {id:?}: {e}"),
                })?;
                Ok((id, seq))
            })
            .collect(),
        None => Ok((0..cfg.num_inputs).map(|i| (format!("{i:06}"), TokenSequence::empty())).collect()),
    }
}

/// Hypothesis sets per input, ingested or generated.
pub fn hypotheses(cfg: &RunConfig) -> Result<(Arc<Vocabulary>, InputSets)> {
    if let Some(path) = &cfg.paths.hypotheses {
        let vocab = match &cfg.paths.vocab {
            Some(v) => Some(Arc::new(read_vocab(v)?)),
            None => None,
        };
        let ing = ingest(path, vocab)?;
        return Ok((ing.vocab, ing.inputs));
    }
    let models = load_models(cfg)?;
    let vocab = models.models()[0].vocab().clone();
    let prompts: Vec<(String, TokenSequence)> = load_prompts(cfg, &vocab)?.into_iter().collect();
    let mode = if cfg.estimator == Estimator::TokenEnsemble {
        EnsembleMode::TokenEnsemble
    } else {
        EnsembleMode::PerModel
    };
    let dcfg = cfg.effective_decode();
    let sets = prompts
        .par_iter()
        .enumerate()
        .map(|(i, (id, prompt))| {
            let hs = build_ensemble_hypotheses(&models, prompt, &dcfg, cfg.seed, i as u64, mode)?;
            Ok((id.clone(), hs.into_collections()))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok((vocab, sets))
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data {
        path: Some(path.to_path_buf()),
        line: None,
        message: e.to_string(),
    })
}

/// Tokenizes texts into one shared vocabulary induced from them.
pub fn joint_sequences(texts: &[&str]) -> Result<(Arc<Vocabulary>, Vec<TokenSequence>)> {
    let tokenized: Vec<Vec<String>> = texts.iter().map(|t| split_tokens(t)).collect();
    if let Some(t) = tokenized.iter().flatten().find(|t| *t == BOS_TOKEN || *t == EOS_TOKEN) {
        return Err(Error::data(format!("reserved token {t:?} in text")));
    }
    let words: std::collections::BTreeSet<&str> = tokenized.iter().flatten().map(String::as_str).collect();
    let vocab = Arc::new(Vocabulary::new(words)?);
    let seqs = tokenized.iter().map(|t| vocab.encode(t)).collect::<Result<Vec<_>>>()?;
    Ok((vocab, seqs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Bleu,
    Chrf,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Bleu => "bleu",
            Metric::Chrf => "chrf",
        }
    }
}

/// Corpus-level score of outputs against references, aligned by input id.
pub fn corpus_eval(
    outputs: &BTreeMap<String, String>,
    references: &BTreeMap<String, String>,
    metric: Metric,
) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::Domain("no outputs to evaluate".into()));
    }
    let missing: Vec<&str> = outputs.keys().filter(|k| !references.contains_key(*k)).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Error::data(format!("missing references for inputs: {}", missing.join(", "))));
    }
    let texts: Vec<&str> = outputs
        .iter()
        .flat_map(|(k, v)| [v.as_str(), references[k].as_str()])
        .collect();
    let (vocab, seqs) = joint_sequences(&texts)?;
    let pairs: Vec<(&TokenSequence, &TokenSequence)> = seqs.chunks(2).map(|p| (&p[0], &p[1])).collect();
    Ok(match metric {
        Metric::Bleu => corpus_bleu(&vocab, &pairs, 4),
        Metric::Chrf => corpus_chrf(&vocab, &pairs, &UtilitySpec::chrf()),
    })
}

/// Sentence-level utility of each output against its reference.
pub fn sentence_quality(
    outputs: &BTreeMap<String, String>,
    references: &BTreeMap<String, String>,
    spec: &UtilitySpec,
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(outputs.len());
    for (id, text) in outputs {
        let r = references
            .get(id)
            .ok_or_else(|| Error::data(format!("missing reference for input {id:?}")))?;
        let (vocab, seqs) = joint_sequences(&[text, r])?;
        out.push((id.clone(), Utility::new(*spec, vocab)?.eval(&seqs[0], &seqs[1])));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChosenRecord {
    pub input_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_tag: Option<String>,
    pub score: f64,
    pub estimator: Estimator,
}

struct InputOutcome {
    chosen: ChosenRecord,
    score_rows: Vec<Vec<String>>,
    budget_row: Vec<String>,
}

fn decide(cfg: &RunConfig, id: &str, cs: &[HypothesisCollection]) -> Result<InputOutcome> {
    let sizes: Vec<u64> = cs.iter().map(HypothesisCollection::total_count).collect();
    let per_model_h = sizes.iter().copied().max().unwrap_or(0);
    if cfg.estimator == Estimator::Numeric {
        let pool = crate::seqcore::union_preserving_counts(cs)?;
        let r = numeric_mbr(&pool, parse_number)?;
        return Ok(InputOutcome {
            chosen: ChosenRecord {
                input_id: id.to_string(),
                text: r.value.to_string(),
                model_tag: None,
                score: r.value,
                estimator: cfg.estimator,
            },
            score_rows: Vec::new(),
            budget_row: vec![
                id.to_string(),
                cfg.estimator.to_string(),
                cs.len().to_string(),
                per_model_h.to_string(),
                "0".into(),
                "0".into(),
            ],
        });
    }
    let r = run_estimator(cfg.estimator, cs, &cfg.utility, cfg.merge_duplicates)?;
    let vocab = cs[0].vocab();
    let score_rows = r
        .candidates
        .iter()
        .zip(&r.scores)
        .map(|(&(c, i), s)| {
            let h = &cs[c].items()[i];
            vec![
                id.to_string(),
                c.to_string(),
                i.to_string(),
                h.model_tag.clone().unwrap_or_default(),
                h.weight.to_string(),
                s.to_string(),
                vocab.render(&h.seq),
            ]
        })
        .collect();
    Ok(InputOutcome {
        chosen: ChosenRecord {
            input_id: id.to_string(),
            text: vocab.render(&r.chosen.seq),
            model_tag: r.chosen.model_tag.clone(),
            score: r.chosen_score(),
            estimator: cfg.estimator,
        },
        score_rows,
        budget_row: vec![
            id.to_string(),
            cfg.estimator.to_string(),
            cs.len().to_string(),
            per_model_h.to_string(),
            predicted_comparisons(cfg.estimator, &sizes).to_string(),
            r.evaluations.to_string(),
        ],
    })
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.out_dir.join(name)
}

fn run_generate(cfg: &RunConfig, report: &mut RunReport) -> Result<()> {
    let (_, sets) = hypotheses(cfg)?;
    let path = out_path(cfg, "hypotheses.jsonl");
    emit(&path, &sets)?;
    let n: u64 = sets.values().flatten().map(HypothesisCollection::total_count).sum();
    report.summary.push(format!("generated {n} hypotheses for {} inputs", sets.len()));
    report.files.push(path);
    Ok(())
}

fn run_mbr(cfg: &RunConfig, report: &mut RunReport) -> Result<()> {
    let (_, sets) = hypotheses(cfg)?;
    if !cfg.ingested() {
        let path = out_path(cfg, "hypotheses.jsonl");
        emit(&path, &sets)?;
        report.files.push(path);
    }
    let inputs: Vec<_> = sets.iter().collect();
    let outcomes = inputs
        .par_iter()
        .map(|(id, cs)| decide(cfg, id, cs))
        .collect::<Result<Vec<_>>>()?;

    let chosen: Vec<ChosenRecord> = outcomes.iter().map(|o| o.chosen.clone()).collect();
    let path = out_path(cfg, "chosen.jsonl");
    write_jsonl(&path, &chosen)?;
    report.files.push(path);

    if cfg.estimator != Estimator::Numeric {
        let rows = outcomes.iter().flat_map(|o| o.score_rows.iter().cloned());
        report.files.push(write_file(
            &out_path(cfg, "scores.csv"),
            &csv("input_id,collection,item,model_tag,weight,score,text", rows),
        )?);
    }
    let budget = csv(
        "input_id,estimator,models,per_model_h,predicted,evaluations",
        outcomes.iter().map(|o| o.budget_row.clone()),
    );
    report.files.push(write_file(&out_path(cfg, "budget.csv"), &budget)?);
    let evaluations: u64 = outcomes.iter().map(|o| o.budget_row[5].parse::<u64>().unwrap()).sum();
    report.summary.push(format!(
        "{} inputs, estimator {}, {evaluations} utility comparisons",
        chosen.len(),
        cfg.estimator
    ));

    if let Some(refs) = &cfg.paths.references {
        let refs = read_texts(refs)?;
        let outputs: BTreeMap<String, String> = chosen.into_iter().map(|c| (c.input_id, c.text)).collect();
        write_metrics(cfg, &outputs, &refs, report)?;
    }
    Ok(())
}

fn write_metrics(
    cfg: &RunConfig,
    outputs: &BTreeMap<String, String>,
    refs: &BTreeMap<String, String>,
    report: &mut RunReport,
) -> Result<()> {
    let mut rows = Vec::new();
    for m in [Metric::Bleu, Metric::Chrf] {
        let v = corpus_eval(outputs, refs, m)?;
        report.summary.push(format!("corpus {} = {v:.4}", m.name()));
        rows.push(vec![m.name().to_string(), v.to_string()]);
    }
    report.files.push(write_file(&out_path(cfg, "metrics.csv"), &csv("metric,value", rows))?);
    Ok(())
}

fn run_selective(cfg: &RunConfig, report: &mut RunReport) -> Result<()> {
    let (_, sets) = hypotheses(cfg)?;
    let refs = read_texts(cfg.paths.references.as_ref().unwrap())?;
    let inputs: Vec<RiskInput> = sets
        .iter()
        .map(|(id, cs)| RiskInput {
            input_id: id.clone(),
            collections: cs.clone(),
        })
        .collect();
    let risk = risk_scores(&inputs, &cfg.utility, cfg.risk_variant, cfg.normalization)?;
    let outcomes = inputs
        .par_iter()
        .map(|i| decide(cfg, &i.input_id, &i.collections))
        .collect::<Result<Vec<_>>>()?;
    let outputs: BTreeMap<String, String> = outcomes
        .into_iter()
        .map(|o| (o.chosen.input_id, o.chosen.text))
        .collect();
    let quality = sentence_quality(&outputs, &refs, &cfg.utility)?;
    let kind: ScoreKind = cfg.score.into();
    let curve = coverage_curve(
        &score_column(&risk, kind),
        &quality,
        &cfg.alphas,
        kind.name(),
        cfg.utility.kind.name(),
    )?;
    let rows = risk.records.iter().zip(&quality).map(|(r, (_, q))| {
        vec![r.input_id.clone(), r.s_star.to_string(), r.s_bar.to_string(), q.to_string()]
    });
    report.files.push(write_file(&out_path(cfg, "risk.csv"), &csv("input_id,s_star,s_bar,quality", rows))?);
    report.files.push(write_file(&out_path(cfg, "curve.csv"), &curve.to_csv())?);
    for p in &curve.points {
        report.summary.push(format!(
            "alpha {:.2}: {} retained, mean {} {:.4}",
            p.alpha, p.retained, curve.quality_name, p.mean_quality
        ));
    }
    Ok(())
}

fn run_diversity(cfg: &RunConfig, report: &mut RunReport) -> Result<()> {
    let models = load_models(cfg)?;
    let prompts: Vec<TokenSequence> = load_prompts(cfg, models.models()[0].vocab())?.into_values().collect();
    let mut dcfg = cfg.decode.clone();
    dcfg.strategy = Strategy::Greedy;
    let r = diversity(&models, &prompts, &dcfg)?;
    report.files.push(write_file(&out_path(cfg, "diversity.csv"), &r.to_csv())?);
    let lambda = cfg.lambda.map_or_else(|| "default".to_string(), |l| l.to_string());
    report.files.push(write_file(
        &out_path(cfg, "diversity_summary.csv"),
        &csv(
            "lambda,models,mean_self_bleu,diversity",
            [vec![lambda, models.len().to_string(), r.mean_self_bleu.to_string(), r.diversity.to_string()]],
        ),
    )?);
    report.summary.push(format!(
        "mean self-BLEU {:.4}, diversity {:.4}",
        r.mean_self_bleu, r.diversity
    ));
    Ok(())
}

fn run_oracle(cfg: &RunConfig, report: &mut RunReport) -> Result<()> {
    let models = load_models(cfg)?;
    let vocab = models.models()[0].vocab().clone();
    let space = EnumeratedSpace::new(vocab.clone(), cfg.oracle_max_len)?;
    let seq = exact_seq_posterior_uniform(&models, &space)?;
    let tok = exact_tok_posterior(&models, &space)?;
    let mbr_seq = exact_mbr(&seq.probs, &space, &cfg.utility, &CandidatePool::FullSpace)?;
    let mbr_tok = exact_mbr(&tok.probs, &space, &cfg.utility, &CandidatePool::FullSpace)?;
    let fubini = fubini_check(&models, &space, &cfg.utility)?;
    let rows = space.sequences().iter().enumerate().map(|(i, s)| {
        vec![
            vocab.render(s),
            seq.probs[i].to_string(),
            tok.probs[i].to_string(),
            mbr_seq.expected[i].to_string(),
            mbr_tok.expected[i].to_string(),
        ]
    });
    report.files.push(write_file(&out_path(cfg, "oracle.csv"), &csv("sequence,p_seq,p_tok,eu_seq,eu_tok", rows))?);
    let tv: f64 = 0.5 * seq.probs.iter().zip(&tok.probs).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let summary = [
        ("max_len", cfg.oracle_max_len.to_string()),
        ("space_size", space.len().to_string()),
        ("models", models.len().to_string()),
        ("truncated_mass_seq", seq.truncated_mass.to_string()),
        ("truncated_mass_tok", tok.truncated_mass.to_string()),
        ("total_variation", tv.to_string()),
        ("chosen_seq", vocab.render(&mbr_seq.chosen)),
        ("chosen_tok", vocab.render(&mbr_tok.chosen)),
        ("fubini_max_abs_diff", format!("{:e}", fubini.max_abs_diff)),
    ];
    report.summary.extend(summary.iter().map(|(k, v)| format!("{k} = {v}")));
    report.files.push(write_file(
        &out_path(cfg, "oracle_summary.csv"),
        &csv("key,value", summary.iter().map(|(k, v)| vec![k.to_string(), v.clone()])),
    )?);
    Ok(())
}

fn run_evaluate(cfg: &RunConfig, report: &mut RunReport) -> Result<()> {
    let outputs = read_texts(cfg.paths.outputs.as_ref().unwrap())?;
    let refs = read_texts(cfg.paths.references.as_ref().unwrap())?;
    write_metrics(cfg, &outputs, &refs, report)
}

fn run_budget(cfg: &RunConfig, report: &mut RunReport) -> Result<()> {
    let m = cfg.models as u64;
    let h = cfg.per_model_h as u64;
    let plans = [
        budget_plan(1, h, Estimator::Single)?,
        budget_plan(m, h, Estimator::Concat)?,
        budget_plan(m, h, Estimator::PerModelFull)?,
        budget_plan(m, h, Estimator::PerModelBlocked)?,
        budget_plan(m, h, Estimator::TokenEnsemble)?,
    ];
    let rows = plans.iter().map(|p| {
        vec![
            p.estimator.to_string(),
            p.models.to_string(),
            p.per_model_h.to_string(),
            p.comparisons.to_string(),
            p.effective_beam.to_string(),
        ]
    });
    report.files.push(write_file(
        &out_path(cfg, "budget.csv"),
        &csv("estimator,models,per_model_h,comparisons,effective_beam", rows),
    )?);
    for p in &plans {
        report.summary.push(format!(
            "{:<18} M={:<3} h={:<4} comparisons={:<8} effective beam={}",
            p.estimator.to_string(),
            p.models,
            p.per_model_h,
            p.comparisons,
            p.effective_beam
        ));
    }
    Ok(())
}

/// Runs one task. With `threads` set, all parallel work happens on a
/// dedicated pool of that size.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.paths.out_dir).map_err(|e| Error::io(&cfg.paths.out_dir, e))?;
    let run = || {
        let mut report = RunReport::default();
        match cfg.task {
            Task::Generate => run_generate(cfg, &mut report),
            Task::Mbr => run_mbr(cfg, &mut report),
            Task::Selective => run_selective(cfg, &mut report),
            Task::Diversity => run_diversity(cfg, &mut report),
            Task::Oracle => run_oracle(cfg, &mut report),
            Task::Evaluate => run_evaluate(cfg, &mut report),
            Task::Budget => run_budget(cfg, &mut report),
        }?;
        log::info!("{} finished: {} files", cfg.task, report.files.len());
        Ok(report)
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?
            .install(run),
        None => run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{write_texts, HypothesisRecord};

    fn cfg(task: Task, dir: &Path) -> RunConfig {
        let mut c = RunConfig::new(task);
        c.paths.out_dir = dir.to_path_buf();
        c
    }

    fn texts(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn corpus_eval_examples() {
        let out = texts(&[("1", "the cat sat on the mat"), ("2", "a dog ran")]);
        assert_eq!(corpus_eval(&out, &out, Metric::Bleu).unwrap(), 100.0);
        assert_eq!(corpus_eval(&out, &out, Metric::Chrf).unwrap(), 100.0);
        assert!(corpus_eval(&out, &texts(&[("1", "x")]), Metric::Bleu).is_err());

        // one sentence with all precisions positive: the unsmoothed sentence score
        let o = texts(&[("1", "a b c d e")]);
        let r = texts(&[("1", "a b c d f")]);
        let expected = 100.0 * (4.0f64 / 5.0 * 3.0 / 4.0 * 2.0 / 3.0 * 1.0 / 2.0).powf(0.25);
        assert!((corpus_eval(&o, &r, Metric::Bleu).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn budget_task_matches_the_table() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(Task::Budget, dir.path());
        c.models = 4;
        c.per_model_h = 10;
        run_pipeline(&c).unwrap();
        let text = std::fs::read_to_string(dir.path().join("budget.csv")).unwrap();
        assert!(text.contains("concat,4,10,1600,40"));
        assert!(text.contains("single,1,10,100,10"));
    }

    fn write_hyps(path: &Path, recs: &[(&str, &str, &str, u64)]) {
        let recs: Vec<_> = recs
            .iter()
            .map(|&(i, m, t, s)| HypothesisRecord {
                input_id: i.into(),
                model_tag: m.into(),
                text: t.into(),
                logprob: None,
                sample_index: s,
            })
            .collect();
        write_jsonl(path, &recs).unwrap();
    }

    #[test]
    fn ingested_concat_reports_comparisons() {
        let dir = tempfile::tempdir().unwrap();
        let hyps = dir.path().join("h.jsonl");
        let mut recs = Vec::new();
        let words = ["a b", "a c", "b c", "a b c"];
        for m in ["m0", "m1", "m2", "m3"] {
            for s in 0..10u64 {
                recs.push(("x", m, words[(s as usize * 7 + m.len()) % 4], s));
            }
        }
        write_hyps(&hyps, &recs);
        let mut c = cfg(Task::Mbr, dir.path());
        c.paths.hypotheses = Some(hyps.clone());
        run_pipeline(&c).unwrap();
        let budget = std::fs::read_to_string(dir.path().join("budget.csv")).unwrap();
        assert_eq!(budget.lines().nth(1), Some("x,concat,4,10,1600,1600"));

        c.estimator = Estimator::TokenEnsemble;
        assert!(matches!(run_pipeline(&c), Err(Error::Refused(_))));
    }

    #[test]
    fn single_equals_concat_with_one_model() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(Task::Mbr, dir.path());
        c.models = 1;
        c.num_inputs = 3;
        c.estimator = Estimator::Single;
        run_pipeline(&c).unwrap();
        let single = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
        c.estimator = Estimator::Concat;
        run_pipeline(&c).unwrap();
        let concat = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
        assert_eq!(single, concat);
        c.models = 2;
        c.estimator = Estimator::Single;
        assert!(matches!(run_pipeline(&c), Err(Error::Config(_))));
    }

    #[test]
    fn numeric_estimator_emits_the_mean() {
        let dir = tempfile::tempdir().unwrap();
        let hyps = dir.path().join("h.jsonl");
        write_hyps(&hyps, &[("q", "m0", "0.2", 0), ("q", "m0", "0.4", 1), ("q", "m1", "0.9", 0), ("q", "m1", "oops", 1)]);
        let mut c = cfg(Task::Mbr, dir.path());
        c.paths.hypotheses = Some(hyps);
        c.estimator = Estimator::Numeric;
        run_pipeline(&c).unwrap();
        let line = std::fs::read_to_string(dir.path().join("chosen.jsonl")).unwrap();
        let rec: ChosenRecord = serde_json::from_str(line.trim()).unwrap();
        assert!((rec.score - 0.5).abs() < 1e-15);
    }

    #[test]
    fn evaluate_and_missing_references() {
        let dir = tempfile::tempdir().unwrap();
        let outs = dir.path().join("o.jsonl");
        let refs = dir.path().join("r.jsonl");
        write_texts(&outs, &texts(&[("1", "a b c"), ("2", "d e")])).unwrap();
        write_texts(&refs, &texts(&[("1", "a b c"), ("2", "d e")])).unwrap();
        let mut c = cfg(Task::Evaluate, dir.path());
        c.paths.outputs = Some(outs.clone());
        c.paths.references = Some(refs.clone());
        run_pipeline(&c).unwrap();
        let m = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(m, "metric,value\nbleu,100\nchrf,100\n");
        write_texts(&refs, &texts(&[("1", "a b c")])).unwrap();
        assert_eq!(run_pipeline(&c).unwrap_err().exit_code(), 3);
        c.paths.references = None;
        assert_eq!(run_pipeline(&c).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn oracle_guard_refuses_large_spaces() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(Task::Oracle, dir.path());
        c.models = 2;
        c.oracle_max_len = 2;
        run_pipeline(&c).unwrap();
        c.oracle_max_len = 8;
        assert_eq!(run_pipeline(&c).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = RunConfig::new(Task::Selective);
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
        let partial: RunConfig = serde_json::from_str(r#"{"task":"diversity","models":3}"#).unwrap();
        assert_eq!((partial.task, partial.models, partial.seed), (Task::Diversity, 3, 0));
    }
}
