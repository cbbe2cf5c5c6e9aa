//! Expected-utility scores as an abstention signal: score every input, keep
//! the most confident fraction, and watch quality rise.

use umbr::analysis::{coverage_curve, risk_scores, score_column, Normalization, RiskInput, ScoreKind, Variant};
use umbr::decode::{build_ensemble_hypotheses, DecodeConfig, EnsembleMode};
use umbr::mbr::mbr_concat;
use umbr::pipeline::demo_posterior;
use umbr::utility::{Utility, UtilitySpec};

fn main() -> umbr::Result<()> {
    let posterior = demo_posterior(6.0)?;
    let vocab = posterior.vocab().clone();
    let members = posterior.sample_models(3, 5)?;
    let cfg = DecodeConfig::ancestral(8).with_max_len(8);
    let spec = UtilitySpec::sentence_bleu();
    let bleu = Utility::new(spec, vocab.clone())?;

    // Prompts are prefixes of corpus sentences; the reference is the sentence.
    let data = [
        ("the cat sat", "the cat sat on the mat"),
        ("a dog", "a dog ran to the cat"),
        ("the dog", "the dog ran home"),
        ("a cat saw", "a cat saw the dog"),
        ("the cat", "the cat ran home"),
        ("the dog saw", "the dog saw a cat"),
    ];
    let mut inputs = Vec::new();
    let mut quality = Vec::new();
    for (i, (prompt, reference)) in data.iter().enumerate() {
        let prompt = vocab.parse(prompt)?;
        let sets = build_ensemble_hypotheses(&members, &prompt, &cfg, 5, i as u64, EnsembleMode::PerModel)?
            .into_collections();
        let chosen = mbr_concat(&sets, &spec)?.chosen.seq;
        let mut full = prompt.ids().to_vec();
        full.extend_from_slice(chosen.ids());
        let full = umbr::seqcore::TokenSequence::from_ids(full);
        let id = format!("{i:02}");
        quality.push((id.clone(), bleu.eval(&full, &vocab.parse(reference)?)));
        inputs.push(RiskInput { input_id: id, collections: sets });
    }

    let scores = risk_scores(&inputs, &spec, Variant::Seq, Normalization::CountNormalized)?;
    for r in &scores.records {
        println!("input {}: s_star {:>7.3}  s_bar {:>7.3}", r.input_id, r.s_star, r.s_bar);
    }
    let curve = coverage_curve(&score_column(&scores, ScoreKind::Bar), &quality, &[1.0, 0.5, 0.2], "s_bar", "bleu")?;
    print!("{}", curve.to_csv());
    Ok(())
}
