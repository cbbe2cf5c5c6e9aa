//! Driving the full pipeline from code: generate, select and evaluate with a
//! fixed seed, then check that a rerun on a different worker count writes the
//! same bytes.

use umbr::pipeline::{run_pipeline, RunConfig, Task};

fn main() -> umbr::Result<()> {
    let base = std::env::temp_dir().join("umbr-pipeline-example");
    let mut outputs = Vec::new();
    for threads in [1, 4] {
        let mut cfg = RunConfig::new(Task::Mbr);
        cfg.seed = 2024;
        cfg.models = 3;
        cfg.per_model_h = 6;
        cfg.num_inputs = 5;
        cfg.threads = Some(threads);
        cfg.paths.out_dir = base.join(format!("t{threads}"));
        let report = run_pipeline(&cfg)?;
        for line in &report.summary {
            println!("[{threads} threads] {line}");
        }
        let chosen = cfg.paths.out_dir.join("chosen.jsonl");
        outputs.push(std::fs::read(&chosen).map_err(|e| umbr::Error::io(&chosen, e))?);
    }
    println!("identical across worker counts: {}", outputs[0] == outputs[1]);
    Ok(())
}
