//! Decoding latency of AR beam search against mask-predict as the target
//! grows, with untrained models of the trained architecture.
//!
//! cargo run --release --example latency_bench [-- out_dir]

use transpeech::harness::bench::{bench_latency, BenchSetup};
use transpeech::harness::report::{latency_markdown, latency_svg, write_report};

fn main() -> transpeech::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut setup = BenchSetup::default();
    // Fewer utterances than the full bench; runs in seconds.
    setup.bench.utterances_per_bucket = 10;
    setup.bench.repeats = 3;
    let (ar, nar) = setup.fresh_models()?;
    let r = bench_latency(&ar, &nar, &setup.task, &setup.bench)?;
    let md = latency_markdown(&r);
    print!("{md}");
    if let Some(dir) = std::env::args().nth(1) {
        write_report(&dir, "latency", &r, Some(&md))?;
        std::fs::write(std::path::Path::new(&dir).join("latency.svg"), latency_svg(&r))?;
    }
    Ok(())
}
