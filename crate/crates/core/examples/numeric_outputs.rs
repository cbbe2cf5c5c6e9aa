//! Scalar outputs: MBR under squared error is the mean of the parsed draws.

use std::sync::Arc;

use umbr::mbr::{numeric_mbr, parse_number};
use umbr::seqcore::{Hypothesis, HypothesisCollection, Vocabulary};

fn main() -> umbr::Result<()> {
    let draws = ["3.5", "4", "4", "n/a", "5.25"];
    let vocab = Arc::new(Vocabulary::new(["3.5", "4", "5.25", "n/a"])?);
    let items = draws
        .iter()
        .map(|d| Ok(Hypothesis::new(vocab.parse(d)?)))
        .collect::<umbr::Result<Vec<_>>>()?;
    let h = HypothesisCollection::single(vocab, "regressor", items)?;
    let r = numeric_mbr(&h, parse_number)?;
    println!("mean of {} parsed draws = {} ({} skipped)", r.used, r.value, r.skipped);
    Ok(())
}
