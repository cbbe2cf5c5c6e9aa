//! Ensembling outputs of black-box systems: only sampled texts are needed.
//! Reads the bundled three-system fixture, selects with the pooled estimator
//! and scores the selections against references.

use std::collections::BTreeMap;
use std::path::Path;

use umbr::io::{ingest, read_texts};
use umbr::mbr::mbr_concat;
use umbr::pipeline::{corpus_eval, Metric};
use umbr::utility::UtilitySpec;

fn main() -> umbr::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let data = ingest(&fixtures.join("blackbox_hypotheses.jsonl"), None)?;
    let refs = read_texts(&fixtures.join("blackbox_references.jsonl"))?;

    let mut single: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut ensemble = BTreeMap::new();
    for (id, sets) in &data.inputs {
        let r = mbr_concat(sets, &UtilitySpec::chrf())?;
        ensemble.insert(id.clone(), data.vocab.render(&r.chosen.seq));
        for s in sets {
            let own = mbr_concat(std::slice::from_ref(s), &UtilitySpec::chrf())?;
            single
                .entry(s.tag().unwrap().to_string())
                .or_default()
                .insert(id.clone(), data.vocab.render(&own.chosen.seq));
        }
    }
    for (tag, outs) in &single {
        println!("{tag:<10} BLEU {:>6.2}", corpus_eval(outs, &refs, Metric::Bleu)?);
    }
    println!("{:<10} BLEU {:>6.2}", "ensemble", corpus_eval(&ensemble, &refs, Metric::Bleu)?);
    Ok(())
}
