//! Beam search, greedy decoding and ancestral sampling on one member.

use umbr::decode::{beam_score, beam_search, greedy, ancestral_sample, DecodeConfig, StreamKey};
use umbr::pipeline::demo_posterior;

fn main() -> umbr::Result<()> {
    let posterior = demo_posterior(8.0)?;
    let vocab = posterior.vocab().clone();
    let model = posterior.sample_models(1, 2)?.models()[0].clone();
    let prompt = vocab.parse("the")?;

    let g = greedy(&model, &prompt, &DecodeConfig::greedy().with_max_len(10));
    println!("greedy: {:?} (log p = {:.3})", vocab.render(&g.seq), g.logprob.unwrap());

    for alpha in [0.0, 0.6, 1.0] {
        let cfg = DecodeConfig::beam(4).with_max_len(10).with_length_penalty(alpha);
        println!("beam 4, length penalty {alpha}:");
        for h in beam_search(&model, &prompt, &cfg, "m0")?.items() {
            println!("    {:>8.3}  {:?}", beam_score(h, alpha), vocab.render(&h.seq));
        }
    }

    let samples = ancestral_sample(&model, &prompt, &DecodeConfig::ancestral(12).with_max_len(10), StreamKey::new(2, 0, 0), "m0")?;
    println!("12 samples, {} distinct:", samples.len());
    for h in samples.items() {
        println!("    x{}  {:?}", h.weight, vocab.render(&h.seq));
    }
    Ok(())
}
