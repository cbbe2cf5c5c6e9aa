//! Token-level ensembling: decode from the members' averaged next-token
//! distribution and select with plain MBR.

use umbr::decode::{ancestral_sample, build_ensemble_hypotheses, DecodeConfig, EnsembleMode, StreamKey};
use umbr::mbr::{mbr_decode, mbr_token_ensemble};
use umbr::pipeline::demo_posterior;
use umbr::seqcore::TokenSequence;
use umbr::toylm::ModelSet;
use umbr::utility::UtilitySpec;

fn main() -> umbr::Result<()> {
    let posterior = demo_posterior(8.0)?;
    let vocab = posterior.vocab().clone();
    let members = posterior.sample_models(4, 3)?;
    let prompt = vocab.parse("the")?;
    let cfg = DecodeConfig::ancestral(20).with_max_len(10);

    let hyps = build_ensemble_hypotheses(&members, &prompt, &cfg, 3, 0, EnsembleMode::TokenEnsemble)?;
    let set = &hyps.collections()[0];
    let r = mbr_token_ensemble(set, &UtilitySpec::chrf())?;
    println!("token-level ensemble of {} members: {:?}", members.len(), vocab.render(&r.chosen.seq));
    println!("{} comparisons for 20 samples", r.evaluations);

    // An ensemble of one is just the member itself.
    let single = ModelSet::new(vec![members.models()[0].clone()])?;
    let a = ancestral_sample(&single, &TokenSequence::empty(), &cfg, StreamKey::new(3, 0, 0), "x")?;
    let b = ancestral_sample(&members.models()[0], &TokenSequence::empty(), &cfg, StreamKey::new(3, 0, 0), "x")?;
    let (ra, rb) = (mbr_decode(&a, &UtilitySpec::chrf())?, mbr_decode(&b, &UtilitySpec::chrf())?);
    println!("ensemble of one agrees with the member: {}", ra.chosen.seq == rb.chosen.seq);
    Ok(())
}
