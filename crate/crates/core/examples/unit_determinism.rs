//! Measures how much perturbations change discrete units, before and after
//! CTC finetuning of the feature encoder.
//!
//! ```text
//! cargo run --release --example unit_determinism -- [epochs]
//! ```

use transpeech::harness::uer::{run_uer_experiment, UerExperimentConfig};

fn main() -> transpeech::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = UerExperimentConfig::default();
    if let Some(e) = std::env::args().nth(1) {
        cfg.finetune.epochs = e.parse().expect("epochs must be an integer");
    }
    let t0 = std::time::Instant::now();
    let report = run_uer_experiment(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    for fam in ["rhythm", "pitch", "energy"] {
        println!(
            "{fam:>7}: baseline {:5.1}%  tuned {:5.1}%  reduction {:4.1}%",
            report.baseline[fam],
            report.tuned[fam],
            100.0 * report.relative_reduction(fam)
        );
    }
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
