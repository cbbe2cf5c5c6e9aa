//! MBR selection on a hand-built hypothesis set under each utility.

use std::sync::Arc;

use umbr::mbr::mbr_decode;
use umbr::seqcore::{Hypothesis, HypothesisCollection, Vocabulary};
use umbr::utility::UtilitySpec;

fn main() -> umbr::Result<()> {
    let vocab = Arc::new(Vocabulary::new(["the", "cat", "sat", "on", "mat", "a", "dog"])?);
    let draws = [
        ("the cat sat on the mat", 2),
        ("a cat sat on the mat", 1),
        ("the dog sat on a mat", 1),
        ("the cat sat", 3),
    ];
    let items = draws
        .iter()
        .map(|&(text, count)| Ok(Hypothesis::new(vocab.parse(text)?).with_weight(count)))
        .collect::<umbr::Result<Vec<_>>>()?;
    let h = HypothesisCollection::single(vocab.clone(), "model", items)?;

    for spec in [
        UtilitySpec::sentence_bleu(),
        UtilitySpec::chrf(),
        UtilitySpec::token_f1(),
        UtilitySpec::exact_match(),
    ] {
        let r = mbr_decode(&h, &spec)?;
        println!("{:<14} -> {:?}", spec.kind.name(), vocab.render(&r.chosen.seq));
        for (&(c, i), s) in r.candidates.iter().zip(&r.scores) {
            println!("    {:>10.4}  {}", s, vocab.render(&h.items()[i].seq));
            debug_assert_eq!(c, 0);
        }
        println!("    {} comparisons", r.evaluations);
    }
    Ok(())
}
