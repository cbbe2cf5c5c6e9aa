//! Fit a Gaussian logit posterior to a small corpus, temper it, save it, and
//! sample members from the reloaded file.

use std::sync::Arc;

use umbr::decode::{greedy, DecodeConfig};
use umbr::seqcore::{TokenSequence, Vocabulary};
use umbr::toylm::{fit_from_corpus, PosteriorSpec};

fn main() -> umbr::Result<()> {
    let corpus = ["red apples are sweet", "green apples are sour", "red cherries are sweet", "green limes are sour"];
    let vocab = Arc::new(Vocabulary::new(["red", "green", "apples", "cherries", "limes", "are", "sweet", "sour"])?);
    let seqs = corpus.iter().map(|s| vocab.parse(s)).collect::<umbr::Result<Vec<_>>>()?;
    let posterior = fit_from_corpus(vocab.clone(), &seqs, 2, 0.1, 10.0)?;
    println!("fitted {} logits, lambda {}", posterior.components()[0].mean.len(), posterior.lambda());

    let path = std::env::temp_dir().join("umbr-fit-posterior.json");
    posterior.set_temperature(200.0)?.save(&path)?;
    let loaded = PosteriorSpec::load(&path)?;
    let members = loaded.sample_models(5, 1)?;
    let cfg = DecodeConfig::greedy().with_max_len(6);
    for (i, m) in members.models().iter().enumerate() {
        let out = greedy(m, &TokenSequence::empty(), &cfg);
        println!("member {i}: {:?}", vocab.render(&out.seq));
    }
    Ok(())
}
