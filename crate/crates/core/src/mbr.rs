//! MBR decision rules over hypothesis collections.
//!
//! Every estimator scores a candidate `y'` by a (possibly blocked) sum of
//! `u(y, y')` over pseudo-references `y`, counting multiplicities, with the
//! candidate's own self-comparison included. The normalizer is dropped since
//! it does not move the argmax. Ties go to the earlier collection, then the
//! earlier item.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqcore::{check_shared_vocab, union_preserving_counts, Hypothesis, HypothesisCollection, TokenSequence};
use crate::sum::ExactSum;
use crate::utility::{utility_matrix_with, Utility, UtilityMatrix, UtilitySpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Plain Monte-Carlo MBR on one model's hypothesis set.
    Single,
    /// Pool all per-model sets (counts preserved) and run MBR on the pool.
    Concat,
    /// Sum over models of per-model reference sums, candidates from the pool.
    PerModelFull,
    /// Each candidate scored only against its own model's set.
    PerModelBlocked,
    /// MBR on a set decoded from the token-level ensemble distribution.
    TokenEnsemble,
    /// Mean of numeric outputs.
    Numeric,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Single,
        Estimator::Concat,
        Estimator::PerModelFull,
        Estimator::PerModelBlocked,
        Estimator::TokenEnsemble,
        Estimator::Numeric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Single => "single",
            Estimator::Concat => "concat",
            Estimator::PerModelFull => "per-model-full",
            Estimator::PerModelBlocked => "per-model-blocked",
            Estimator::TokenEnsemble => "token-ensemble",
            Estimator::Numeric => "numeric",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

/// Outcome of an MBR decision.
#[derive(Clone, Debug)]
pub struct MbrResult {
    pub chosen: Hypothesis,
    /// `(collection, item)` position of the chosen hypothesis.
    pub chosen_index: (usize, usize),
    /// `(collection, item)` of every candidate, aligned with `scores`.
    pub candidates: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
    /// Logical number of utility comparisons.
    pub evaluations: u64,
    pub estimator: Estimator,
}

impl MbrResult {
    pub fn chosen_score(&self) -> f64 {
        let i = self.candidates.iter().position(|&c| c == self.chosen_index).unwrap();
        self.scores[i]
    }
}

fn weighted_row_sums(m: &UtilityMatrix) -> Vec<ExactSum> {
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

/// First index of the maximum.
fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn positions(collections: &[HypothesisCollection]) -> Vec<(usize, usize)> {
    collections
        .iter()
        .enumerate()
        .flat_map(|(c, coll)| (0..coll.len()).map(move |i| (c, i)))
        .collect()
}

fn finish(
    collections: &[HypothesisCollection],
    scores: Vec<f64>,
    evaluations: u64,
    estimator: Estimator,
) -> MbrResult {
    let candidates = positions(collections);
    let best = argmax_first(&scores);
    let (c, i) = candidates[best];
    MbrResult {
        chosen: collections[c].items()[i].clone(),
        chosen_index: (c, i),
        candidates,
        scores,
        evaluations,
        estimator,
    }
}

fn require_nonempty(collections: &[HypothesisCollection]) -> Result<()> {
    if collections.iter().all(|c| c.total_count() == 0) {
        return Err(Error::Domain("MBR needs at least one hypothesis".into()));
    }
    check_shared_vocab(collections)
}

/// `argmax_{y' ∈ H} Σ_{y ∈ H} u(y, y')`.
pub fn mbr_decode(h: &HypothesisCollection, spec: &UtilitySpec) -> Result<MbrResult> {
    decode_tagged(h, spec, Estimator::Single)
}

fn decode_tagged(h: &HypothesisCollection, spec: &UtilitySpec, estimator: Estimator) -> Result<MbrResult> {
    require_nonempty(std::slice::from_ref(h))?;
    let utility = Utility::new(*spec, h.vocab().clone())?;
    let m = utility_matrix_with(&utility, h, h);
    let scores = weighted_row_sums(&m).iter().map(ExactSum::value).collect();
    Ok(finish(std::slice::from_ref(h), scores, m.evaluations, estimator))
}

/// MBR with an arbitrary utility `u(candidate, reference)`.
pub fn mbr_decode_by<F>(h: &HypothesisCollection, utility: F) -> Result<MbrResult>
where
    F: Fn(&TokenSequence, &TokenSequence) -> f64,
{
    require_nonempty(std::slice::from_ref(h))?;
    let scores = h
        .items()
        .iter()
        .map(|c| {
            let mut acc = ExactSum::new();
            for r in h.items() {
                acc.add_product(utility(&c.seq, &r.seq), r.weight as f64);
            }
            acc.value()
        })
        .collect();
    let n = h.total_count();
    Ok(finish(std::slice::from_ref(h), scores, n * n, Estimator::Single))
}

/// MBR on the count-preserving union of all sets: `(Σ|H_θ|)²` comparisons.
pub fn mbr_concat(collections: &[HypothesisCollection], spec: &UtilitySpec) -> Result<MbrResult> {
    require_nonempty(collections)?;
    let pool = union_preserving_counts(collections)?;
    let utility = Utility::new(*spec, pool.vocab().clone())?;
    let m = utility_matrix_with(&utility, &pool, &pool);
    let scores = weighted_row_sums(&m).iter().map(ExactSum::value).collect();
    Ok(finish(collections, scores, m.evaluations, Estimator::Concat))
}

/// `argmax_{y' ∈ H_M} Σ_θ Σ_{y ∈ H_θ} u(y, y')`, computed block by block.
///
/// Because the pool is the disjoint union of the per-model sets this is a
/// regrouping of the concatenated sum; with exact accumulation the scores
/// equal [`mbr_concat`]'s bit for bit.
pub fn mbr_per_model_full(collections: &[HypothesisCollection], spec: &UtilitySpec) -> Result<MbrResult> {
    require_nonempty(collections)?;
    let pool = union_preserving_counts(collections)?;
    let utility = Utility::new(*spec, pool.vocab().clone())?;
    let mut acc = vec![ExactSum::new(); pool.len()];
    let mut evaluations = 0;
    for h in collections {
        let m = utility_matrix_with(&utility, &pool, h);
        evaluations += m.evaluations;
        for (a, block) in acc.iter_mut().zip(weighted_row_sums(&m)) {
            a.merge(&block);
        }
    }
    let scores = acc.iter().map(ExactSum::value).collect();
    Ok(finish(collections, scores, evaluations, Estimator::PerModelFull))
}

/// Each candidate from `H_θ` is scored against `H_θ` only: `Σ_θ |H_θ|²`
/// comparisons. With `merge_duplicates`, a string produced by several models
/// gets the sum of its per-model scores before the global argmax.
pub fn mbr_per_model_blocked(
    collections: &[HypothesisCollection],
    spec: &UtilitySpec,
    merge_duplicates: bool,
) -> Result<MbrResult> {
    require_nonempty(collections)?;
    let utility = Utility::new(*spec, collections[0].vocab().clone())?;
    let mut per_model: Vec<Vec<ExactSum>> = Vec::with_capacity(collections.len());
    let mut evaluations = 0;
    for h in collections {
        let m = utility_matrix_with(&utility, h, h);
        evaluations += m.evaluations;
        per_model.push(weighted_row_sums(&m));
    }
    let scores = if merge_duplicates {
        let mut merged: HashMap<&TokenSequence, ExactSum> = HashMap::new();
        for (h, sums) in collections.iter().zip(&per_model) {
            let mut seen: HashMap<&TokenSequence, ()> = HashMap::new();
            for (item, s) in h.items().iter().zip(sums) {
                if seen.insert(&item.seq, ()).is_none() {
                    merged.entry(&item.seq).or_default().merge(s);
                }
            }
        }
        collections
            .iter()
            .flat_map(|h| h.items().iter().map(|it| merged[&it.seq].value()))
            .collect()
    } else {
        per_model.iter().flatten().map(ExactSum::value).collect()
    };
    Ok(finish(collections, scores, evaluations, Estimator::PerModelBlocked))
}

/// MBR on a hypothesis set sampled from the token-level ensemble. Same rule
/// as [`mbr_decode`]; `|H|²` comparisons.
pub fn mbr_token_ensemble(h: &HypothesisCollection, spec: &UtilitySpec) -> Result<MbrResult> {
    decode_tagged(h, spec, Estimator::TokenEnsemble)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NumericMbr {
    pub value: f64,
    /// Draws that parsed (multiplicity included).
    pub used: u64,
    /// Draws that did not parse to a finite number.
    pub skipped: u64,
}

/// For scalar outputs under squared-error-style utilities MBR reduces to the
/// multiplicity-weighted mean of the parsed predictions.
pub fn numeric_mbr<F>(h: &HypothesisCollection, parser: F) -> Result<NumericMbr>
where
    F: Fn(&str) -> Option<f64>,
{
    let mut acc = ExactSum::new();
    let (mut used, mut skipped) = (0u64, 0u64);
    for item in h.items() {
        let text = h.vocab().render(&item.seq);
        match parser(&text).filter(|x| x.is_finite()) {
            Some(x) => {
                acc.add_product(x, item.weight as f64);
                used += item.weight as u64;
            }
            None => skipped += item.weight as u64,
        }
    }
    if skipped > 0 {
        log::warn!("numeric MBR skipped {skipped} unparseable hypotheses");
    }
    if used == 0 {
        return Err(Error::Domain("no hypothesis parses to a finite number".into()));
    }
    Ok(NumericMbr {
        value: acc.value() / used as f64,
        used,
        skipped,
    })
}

/// Default numeric parser: the rendered text must be a single float literal.
pub fn parse_number(text: &str) -> Option<f64> {
    text.trim().parse().ok()
}

/// Predicted comparison count and effective beam size for an estimator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub models: u64,
    pub per_model_h: u64,
    pub estimator: Estimator,
    pub comparisons: u64,
    /// Hypotheses per model times number of models.
    pub effective_beam: u64,
}

pub fn budget_plan(models: u64, per_model_h: u64, estimator: Estimator) -> Result<BudgetPlan> {
    if models == 0 || per_model_h == 0 {
        return Err(Error::Domain("budget needs positive model count and set size".into()));
    }
    let h = per_model_h;
    let comparisons = match estimator {
        Estimator::Concat | Estimator::PerModelFull => (models * h) * (models * h),
        Estimator::PerModelBlocked => models * h * h,
        Estimator::Single | Estimator::TokenEnsemble => h * h,
        Estimator::Numeric => 0,
    };
    Ok(BudgetPlan {
        models,
        per_model_h,
        estimator,
        comparisons,
        effective_beam: models * h,
    })
}

/// Comparisons an estimator performs on sets with the given total counts.
/// Agrees with [`budget_plan`] when all sets have the same size.
pub fn predicted_comparisons(estimator: Estimator, set_sizes: &[u64]) -> u64 {
    let total: u64 = set_sizes.iter().sum();
    match estimator {
        Estimator::Concat | Estimator::PerModelFull | Estimator::Single | Estimator::TokenEnsemble => total * total,
        Estimator::PerModelBlocked => set_sizes.iter().map(|w| w * w).sum(),
        Estimator::Numeric => 0,
    }
}

/// Dispatches a string-valued estimator over one input's collections.
/// `Single` and `TokenEnsemble` take exactly one collection.
pub fn run_estimator(
    estimator: Estimator,
    collections: &[HypothesisCollection],
    spec: &UtilitySpec,
    merge_duplicates: bool,
) -> Result<MbrResult> {
    let one = || -> Result<&HypothesisCollection> {
        match collections {
            [c] => Ok(c),
            _ => Err(Error::Config(format!(
                "estimator {estimator} takes one hypothesis set, got {}",
                collections.len()
            ))),
        }
    };
    match estimator {
        Estimator::Single => mbr_decode(one()?, spec),
        Estimator::TokenEnsemble => mbr_token_ensemble(one()?, spec),
        Estimator::Concat => mbr_concat(collections, spec),
        Estimator::PerModelFull => mbr_per_model_full(collections, spec),
        Estimator::PerModelBlocked => mbr_per_model_blocked(collections, spec, merge_duplicates),
        Estimator::Numeric => Err(Error::Config("numeric estimator has no string output; use numeric_mbr".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqcore::Vocabulary;
    use crate::utility::token_f1;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn ab() -> Arc<Vocabulary> {
        Arc::new(Vocabulary::new(["a", "b", "c"]).unwrap())
    }

    fn seq(v: &Vocabulary, s: &str) -> TokenSequence {
        v.encode(&s.chars().map(|c| c.to_string()).collect::<Vec<_>>()).unwrap()
    }

    fn coll(v: &Arc<Vocabulary>, tag: &str, strs: &[(&str, u32)]) -> HypothesisCollection {
        let items = strs.iter().map(|&(s, w)| Hypothesis::new(seq(v, s)).with_weight(w)).collect();
        HypothesisCollection::single(v.clone(), tag, items).unwrap()
    }

    fn em() -> UtilitySpec {
        UtilitySpec::exact_match()
    }

    #[test]
    fn indicator_utility_picks_the_mode() {
        let v = ab();
        let h = coll(&v, "A", &[("ab", 1), ("aa", 2)]);
        // brute force over the expanded 3x3 indicator matrix
        let expanded = ["ab", "aa", "aa"];
        let brute: Vec<f64> = ["ab", "aa"]
            .iter()
            .map(|c| expanded.iter().filter(|r| *r == c).count() as f64)
            .collect();
        let r = mbr_decode(&h, &em()).unwrap();
        assert_eq!(r.scores, brute);
        assert_eq!(r.chosen.seq, seq(&v, "aa"));
        assert_eq!(r.chosen_score(), 2.0);
        assert_eq!(r.evaluations, 9);
    }

    #[test]
    fn singleton_and_constant_sets() {
        let v = ab();
        let r = mbr_decode(&coll(&v, "A", &[("abc", 1)]), &UtilitySpec::sentence_bleu()).unwrap();
        assert_eq!(r.scores, vec![100.0]);
        let r = mbr_decode(&coll(&v, "A", &[("ab", 1), ("ab", 1), ("ab", 1)]), &UtilitySpec::token_f1()).unwrap();
        assert_eq!(r.chosen_index, (0, 0));
        assert_eq!(r.evaluations, 9);
        assert!(mbr_decode(&coll(&v, "A", &[]), &em()).is_err());
        assert!(mbr_concat(&[coll(&v, "A", &[]), coll(&v, "B", &[])], &em()).is_err());
    }

    #[test]
    fn ties_go_to_the_first_candidate() {
        let v = ab();
        let r = mbr_decode(&coll(&v, "A", &[("b", 1), ("a", 1)]), &em()).unwrap();
        assert_eq!(r.chosen_index, (0, 0));
        let r = mbr_concat(&[coll(&v, "A", &[("b", 1)]), coll(&v, "B", &[("a", 1)])], &em()).unwrap();
        assert_eq!(r.chosen_index, (0, 0));
    }

    #[test]
    fn concat_counts_and_identity() {
        let v = ab();
        let sets: Vec<_> = (0..4).map(|i| coll(&v, &format!("m{i}"), &[("a", 3), ("ab", 7)])).collect();
        assert_eq!(mbr_concat(&sets, &em()).unwrap().evaluations, 1600);
        let one = coll(&v, "A", &[("a", 1), ("ab", 2), ("c", 1)]);
        let a = mbr_concat(std::slice::from_ref(&one), &UtilitySpec::chrf()).unwrap();
        let b = mbr_decode(&one, &UtilitySpec::chrf()).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.chosen_index, b.chosen_index);
    }

    #[test]
    fn concat_majority_wins() {
        let v = ab();
        let sets = [coll(&v, "A", &[("c", 4)]), coll(&v, "B", &[("a", 1), ("b", 2), ("ab", 1)])];
        let r = mbr_concat(&sets, &em()).unwrap();
        assert_eq!(r.chosen.seq, seq(&v, "c"));
        assert_eq!(r.chosen_score(), 4.0);
    }

    #[test]
    fn full_regrouping_examples() {
        let v = ab();
        let split = [coll(&v, "A", &[("aa", 1), ("ab", 1)]), coll(&v, "B", &[("aa", 1)])];
        let full = mbr_per_model_full(&split, &em()).unwrap();
        let concat = mbr_concat(&split, &em()).unwrap();
        assert_eq!(full.scores, concat.scores);
        assert_eq!(full.chosen.seq, seq(&v, "aa"));
        assert_eq!(full.evaluations, 9);
        let one = coll(&v, "A", &[("a", 2), ("ab", 1)]);
        let f = mbr_per_model_full(std::slice::from_ref(&one), &UtilitySpec::token_f1()).unwrap();
        assert_eq!(f.scores, mbr_decode(&one, &UtilitySpec::token_f1()).unwrap().scores);
    }

    #[test]
    fn blocked_examples() {
        let v = ab();
        let sets: Vec<_> = (0..4).map(|i| coll(&v, &format!("m{i}"), &[("a", 5), ("b", 15)])).collect();
        let r = mbr_per_model_blocked(&sets, &em(), true).unwrap();
        assert_eq!(r.evaluations, 1600);
        let plan = budget_plan(4, 20, Estimator::PerModelBlocked).unwrap();
        assert_eq!((plan.comparisons, plan.effective_beam), (1600, 80));

        let one = coll(&v, "A", &[("a", 2), ("ab", 1), ("c", 1)]);
        for merge in [true, false] {
            let b = mbr_per_model_blocked(std::slice::from_ref(&one), &UtilitySpec::sentence_bleu(), merge).unwrap();
            let d = mbr_decode(&one, &UtilitySpec::sentence_bleu()).unwrap();
            assert_eq!(b.scores, d.scores);
            assert_eq!(b.chosen_index, d.chosen_index);
        }

        // "s" = "ab": 2 copies in A, 3 in B; merged score 2 + 3.
        let sets = [coll(&v, "A", &[("ab", 2), ("c", 2)]), coll(&v, "B", &[("ab", 3), ("a", 4)])];
        let merged = mbr_per_model_blocked(&sets, &em(), true).unwrap();
        assert_eq!(merged.scores, vec![5.0, 2.0, 5.0, 4.0]);
        assert_eq!(merged.chosen.seq, seq(&v, "ab"));
        let plain = mbr_per_model_blocked(&sets, &em(), false).unwrap();
        assert_eq!(plain.scores, vec![2.0, 2.0, 3.0, 4.0]);
        assert_eq!(plain.chosen.seq, seq(&v, "a"));
        assert_eq!(plain.evaluations, 16 + 49);
    }

    #[test]
    fn token_ensemble_rule() {
        let v = ab();
        let h = coll(&v, "tok", &[("a", 12), ("ab", 8)]);
        let r = mbr_token_ensemble(&h, &UtilitySpec::token_f1()).unwrap();
        assert_eq!(r.evaluations, 400);
        assert_eq!(r.estimator, Estimator::TokenEnsemble);
        assert_eq!(r.scores, mbr_decode(&h, &UtilitySpec::token_f1()).unwrap().scores);
    }

    #[test]
    fn numeric_examples() {
        let v = Arc::new(Vocabulary::new(["0.2", "0.4", "0.5", "0.8", "n/a"]).unwrap());
        let h = |xs: &[(&str, u32)]| {
            let items = xs.iter().map(|&(s, w)| Hypothesis::new(v.parse(s).unwrap()).with_weight(w)).collect();
            HypothesisCollection::single(v.clone(), "m", items).unwrap()
        };
        assert!((numeric_mbr(&h(&[("0.2", 1), ("0.4", 1)]), parse_number).unwrap().value - 0.3).abs() < 1e-15);
        assert!((numeric_mbr(&h(&[("0.2", 3), ("0.8", 1)]), parse_number).unwrap().value - 0.35).abs() < 1e-15);
        assert_eq!(numeric_mbr(&h(&[("0.5", 1)]), parse_number).unwrap().value, 0.5);
        let r = numeric_mbr(&h(&[("0.5", 1), ("n/a", 2)]), parse_number).unwrap();
        assert_eq!((r.value, r.used, r.skipped), (0.5, 1, 2));
        assert!(numeric_mbr(&h(&[("n/a", 1)]), parse_number).is_err());
    }

    #[test]
    fn budget_examples() {
        let p = budget_plan(4, 10, Estimator::Concat).unwrap();
        assert_eq!((p.comparisons, p.effective_beam), (1600, 40));
        let p = budget_plan(1, 20, Estimator::Single).unwrap();
        assert_eq!((p.comparisons, p.effective_beam), (400, 20));
        let p = budget_plan(4, 20, Estimator::TokenEnsemble).unwrap();
        assert_eq!((p.comparisons, p.effective_beam), (400, 80));
        assert!(budget_plan(0, 3, Estimator::Concat).is_err());
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
    }

    #[test]
    fn run_estimator_checks_arity() {
        let v = ab();
        let sets = [coll(&v, "A", &[("a", 1)]), coll(&v, "B", &[("b", 1)])];
        assert!(run_estimator(Estimator::Single, &sets, &em(), true).is_err());
        assert!(run_estimator(Estimator::Numeric, &sets, &em(), true).is_err());
        assert_eq!(run_estimator(Estimator::Concat, &sets, &em(), true).unwrap().evaluations, 4);
    }

    fn arb_sets() -> impl Strategy<Value = Vec<HypothesisCollection>> {
        let v = Arc::new(Vocabulary::new(["a", "b", "c", "d", "e"]).unwrap());
        proptest::collection::vec(
            proptest::collection::vec((proptest::collection::vec(2u32..7, 0..5), 1u32..3), 1..6),
            1..5,
        )
        .prop_map(move |sets| {
            sets.into_iter()
                .enumerate()
                .map(|(i, items)| {
                    let items = items
                        .into_iter()
                        .map(|(ids, w)| Hypothesis::new(TokenSequence::from_ids(ids)).with_weight(w))
                        .collect();
                    HypothesisCollection::single(v.clone(), format!("m{i}"), items).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn regrouping_identity(sets in arb_sets()) {
            for spec in [UtilitySpec::sentence_bleu(), UtilitySpec::token_f1(), UtilitySpec::chrf()] {
                let a = mbr_concat(&sets, &spec).unwrap();
                let b = mbr_per_model_full(&sets, &spec).unwrap();
                prop_assert_eq!(a.scores.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.scores.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
                prop_assert_eq!(a.chosen_index, b.chosen_index);
                prop_assert_eq!(a.evaluations, b.evaluations);
            }
        }

        #[test]
        fn budget_law(m in 1u64..6, h in 1u64..8) {
            let v = ab();
            let sets: Vec<_> = (0..m).map(|i| {
                let items = (0..h).map(|j| Hypothesis::new(seq(&v, ["a", "b", "ab"][(j % 3) as usize]))).collect();
                HypothesisCollection::single(v.clone(), format!("m{i}"), items).unwrap()
            }).collect();
            let spec = UtilitySpec::token_f1();
            for (e, got) in [
                (Estimator::Concat, mbr_concat(&sets, &spec).unwrap().evaluations),
                (Estimator::PerModelFull, mbr_per_model_full(&sets, &spec).unwrap().evaluations),
                (Estimator::PerModelBlocked, mbr_per_model_blocked(&sets, &spec, true).unwrap().evaluations),
                (Estimator::Single, mbr_decode(&sets[0], &spec).unwrap().evaluations),
                (Estimator::TokenEnsemble, mbr_token_ensemble(&sets[0], &spec).unwrap().evaluations),
            ] {
                let plan = budget_plan(if matches!(e, Estimator::Single) { 1 } else { m }, h, e).unwrap();
                prop_assert_eq!(got, plan.comparisons, "{}", e);
                let sizes = if matches!(e, Estimator::Single | Estimator::TokenEnsemble) { vec![h] } else { vec![h; m as usize] };
                prop_assert_eq!(got, predicted_comparisons(e, &sizes));
            }
        }

        #[test]
        fn affine_utility_transform_keeps_argmax(sets in arb_sets(), k in -2i32..3, b in 0u32..4) {
            let h = union_preserving_counts(&sets).unwrap();
            let c = 2f64.powi(k);
            let base = mbr_decode_by(&h, token_f1).unwrap();
            let scaled = mbr_decode_by(&h, |x, y| c * token_f1(x, y)).unwrap();
            prop_assert_eq!(base.chosen_index, scaled.chosen_index);
            let em_base = mbr_decode_by(&h, |x, y| if x == y { 1.0 } else { 0.0 }).unwrap();
            let em_affine = mbr_decode_by(&h, |x, y| c * if x == y { 1.0 } else { 0.0 } + b as f64).unwrap();
            prop_assert_eq!(em_base.chosen_index, em_affine.chosen_index);
            prop_assert_eq!(base.scores, mbr_decode(&h, &UtilitySpec::token_f1()).unwrap().scores);
        }
    }
}
