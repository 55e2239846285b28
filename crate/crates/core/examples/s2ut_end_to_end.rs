//! Trains autoregressive and non-autoregressive speech-to-unit models on
//! the synthetic pair task and scores both with BLEU over units.
//!
//! cargo run --release --example s2ut_end_to_end [-- pairs]
//!
//! The default 1800 training pairs take several minutes on one core; pass
//! a smaller count for a quick look.

use transpeech::harness::experiments::{run_end_to_end, ToyConfig};

fn main() -> transpeech::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = ToyConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.task.num_pairs = n.parse().expect("pairs must be an integer");
    }
    let e = run_end_to_end(&cfg)?;
    let r = &e.report;
    println!("held-out sources: {}", r.test_examples);
    println!(
        "AR  beam {}        BLEU {:6.2}  accuracy {:6.2}%  ({} updates, {:.0}s)",
        cfg.ar_beam, r.ar.bleu, r.ar.accuracy, r.ar_train.updates, r.ar_train.seconds
    );
    println!(
        "NAR T={} K={} NPD={} BLEU {:6.2}  accuracy {:6.2}%  ({} updates, {:.0}s)",
        cfg.decode.iterations,
        cfg.decode.length_beam,
        cfg.decode.npd,
        r.nar.bleu,
        r.nar.accuracy,
        r.nar_train.updates,
        r.nar_train.seconds
    );
    Ok(())
}
