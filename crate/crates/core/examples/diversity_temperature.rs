//! Lowering the posterior's effective sample size spreads the members apart;
//! self-BLEU diversity of their greedy outputs tracks it.

use umbr::analysis::diversity;
use umbr::decode::DecodeConfig;
use umbr::pipeline::demo_posterior;

fn main() -> umbr::Result<()> {
    let posterior = demo_posterior(1.0)?;
    let vocab = posterior.vocab().clone();
    let prompts = ["the", "a", "the cat", "a dog", "the dog saw"]
        .iter()
        .map(|p| vocab.parse(p))
        .collect::<umbr::Result<Vec<_>>>()?;
    let cfg = DecodeConfig::greedy().with_max_len(8);

    println!("{:>10} {:>10}", "lambda", "diversity");
    for lambda in [f64::INFINITY, 1000.0, 100.0, 10.0, 1.0] {
        let tempered = posterior.set_temperature(lambda)?;
        let mut total = 0.0;
        let seeds = 10;
        for seed in 0..seeds {
            total += diversity(&tempered.sample_models(4, seed)?, &prompts, &cfg)?.diversity;
        }
        println!("{lambda:>10} {:>10.3}", total / seeds as f64);
    }
    Ok(())
}
