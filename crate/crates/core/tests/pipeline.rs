use std::collections::BTreeMap;
use std::path::Path;

use umbr::io::{emit, ingest, read_texts, to_records};
use umbr::mbr::{mbr_concat, Estimator};
use umbr::pipeline::{corpus_eval, hypotheses, run_pipeline, ChosenRecord, Metric, RunConfig, Task};
use umbr::utility::UtilitySpec;

fn fixtures() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

#[test]
fn generated_hypotheses_round_trip_through_jsonl() {
    let mut cfg = RunConfig::new(Task::Generate);
    cfg.num_inputs = 3;
    cfg.models = 2;
    cfg.per_model_h = 5;
    let (vocab, sets) = hypotheses(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.jsonl");
    emit(&path, &sets).unwrap();
    let back = ingest(&path, Some(vocab.clone())).unwrap();
    assert_eq!(to_records(&back.inputs), to_records(&sets));
    assert!(to_records(&sets).iter().all(|r| r.logprob.is_some()));

    // The same estimator on the re-ingested file picks the same outputs.
    for (id, cs) in &sets {
        let a = mbr_concat(cs, &UtilitySpec::sentence_bleu()).unwrap();
        let b = mbr_concat(&back.inputs[id], &UtilitySpec::sentence_bleu()).unwrap();
        assert_eq!(vocab.render(&a.chosen.seq), back.vocab.render(&b.chosen.seq));
        assert_eq!(a.scores.len(), cs.iter().map(|c| c.total_count()).sum::<u64>() as usize - dup_count(cs));
    }
}

fn dup_count(cs: &[umbr::seqcore::HypothesisCollection]) -> usize {
    cs.iter().map(|c| c.items().iter().map(|h| h.weight as usize - 1).sum::<usize>()).sum()
}

#[test]
fn every_estimator_reports_its_predicted_budget() {
    let dir = tempfile::tempdir().unwrap();
    for estimator in [Estimator::Concat, Estimator::PerModelFull, Estimator::PerModelBlocked, Estimator::TokenEnsemble] {
        let mut cfg = RunConfig::new(Task::Mbr);
        cfg.estimator = estimator;
        cfg.models = 3;
        cfg.per_model_h = 7;
        cfg.num_inputs = 4;
        cfg.paths.out_dir = dir.path().join(estimator.name());
        run_pipeline(&cfg).unwrap();
        let budget = std::fs::read_to_string(cfg.paths.out_dir.join("budget.csv")).unwrap();
        for line in budget.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f[4], f[5], "{estimator}: {line}");
        }
    }
}

#[test]
fn blackbox_ensemble_outputs_come_from_the_pool() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(Task::Mbr);
    cfg.paths.hypotheses = Some(fixtures().join("blackbox_hypotheses.jsonl"));
    cfg.paths.references = Some(fixtures().join("blackbox_references.jsonl"));
    cfg.paths.out_dir = dir.path().to_path_buf();
    run_pipeline(&cfg).unwrap();
    let data = ingest(&fixtures().join("blackbox_hypotheses.jsonl"), None).unwrap();
    let chosen: Vec<ChosenRecord> = std::fs::read_to_string(dir.path().join("chosen.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(chosen.len(), 10);
    for c in &chosen {
        let pool: Vec<String> = data.inputs[&c.input_id]
            .iter()
            .flat_map(|s| s.items().iter().map(|h| data.vocab.render(&h.seq)))
            .collect();
        assert!(pool.contains(&c.text));
    }
    let refs = read_texts(&fixtures().join("blackbox_references.jsonl")).unwrap();
    let outputs: BTreeMap<String, String> = chosen.into_iter().map(|c| (c.input_id, c.text)).collect();
    let bleu = corpus_eval(&outputs, &refs, Metric::Bleu).unwrap();
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.contains(&format!("bleu,{bleu}")));
}

#[test]
fn corpus_bleu_matches_hand_pooled_counts() {
    // Sentence 1: "a b c d" vs "a b c e": matches 3/4, 2/3, 1/2, 0/1.
    // Sentence 2: "a b" vs "a b": matches 2/2, 1/1; no 3- or 4-grams.
    // Pooled: 5/6, 3/4, 1/2, 0/1 -> zero 4-gram precision, BLEU 0 without smoothing.
    let o: BTreeMap<String, String> = [("1", "a b c d"), ("2", "a b")].map(|(k, v)| (k.into(), v.into())).into();
    let r: BTreeMap<String, String> = [("1", "a b c e"), ("2", "a b")].map(|(k, v)| (k.into(), v.into())).into();
    assert_eq!(corpus_eval(&o, &r, Metric::Bleu).unwrap(), 0.0);

    // Sentence 1: "a b c d" vs "a b c d x": 4/4, 3/3, 2/2, 1/1.
    // Sentence 2: "b a c" vs "b a d": 2/3, 1/2, 0/1.
    // Pooled: 6/7, 4/5, 2/3, 1/1; lengths c = 7, r = 8.
    let o: BTreeMap<String, String> = [("1", "a b c d"), ("2", "b a c")].map(|(k, v)| (k.into(), v.into())).into();
    let r: BTreeMap<String, String> = [("1", "a b c d x"), ("2", "b a d")].map(|(k, v)| (k.into(), v.into())).into();
    let geo = ((6.0f64 / 7.0).ln() + (4.0f64 / 5.0).ln() + (2.0f64 / 3.0).ln()) / 4.0;
    let expected = 100.0 * (1.0 - 8.0f64 / 7.0).exp() * geo.exp();
    assert!((corpus_eval(&o, &r, Metric::Bleu).unwrap() - expected).abs() < 1e-9);
}
