//! Exact enumeration shows that sequence- and token-level posteriors differ:
//! two models that say `a` with probability 0.9 and 0.1 at each of two steps.

use std::sync::Arc;

use umbr::oracle::{
    exact_mbr, exact_seq_posterior_uniform, exact_tok_posterior, fubini_check, CandidatePool, EnumeratedSpace,
};
use umbr::seqcore::Vocabulary;
use umbr::toylm::{two_step, ModelSet};
use umbr::utility::UtilitySpec;

fn main() -> umbr::Result<()> {
    let vocab = Arc::new(Vocabulary::new(["a", "b"])?);
    let models = ModelSet::new(vec![two_step(&vocab, 0.9)?, two_step(&vocab, 0.1)?])?;
    let space = EnumeratedSpace::new(vocab.clone(), 2)?;
    let seq = exact_seq_posterior_uniform(&models, &space)?;
    let tok = exact_tok_posterior(&models, &space)?;

    println!("{:<6} {:>8} {:>8}", "y", "p_seq", "p_tok");
    for (i, y) in space.sequences().iter().enumerate() {
        println!("{:<6} {:>8.4} {:>8.4}", format!("{:?}", vocab.render(y)), seq.probs[i], tok.probs[i]);
    }

    let spec = UtilitySpec::token_f1();
    let a = exact_mbr(&seq.probs, &space, &spec, &CandidatePool::FullSpace)?;
    let b = exact_mbr(&tok.probs, &space, &spec, &CandidatePool::FullSpace)?;
    println!("exact MBR (token-F1): sequence-level {:?}, token-level {:?}", vocab.render(&a.chosen), vocab.render(&b.chosen));
    println!("swapping the expectations: max diff {:e}", fubini_check(&models, &space, &spec)?.max_abs_diff);
    Ok(())
}
