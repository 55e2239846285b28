//! Sequence-level distillation on the two-table pair task, then the
//! refinement sweep on the distilled NAR.
//!
//! cargo run --release --example distillation [-- out_dir]

use transpeech::harness::experiments::{held_out_examples, run_distillation, run_refinement, ToyConfig};

fn main() -> transpeech::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = ToyConfig::multimodal();
    let d = run_distillation(&cfg)?;
    let r = &d.report;
    println!("raw targets:       {:?}", r.raw_multiplicity);
    println!("distilled targets: {:?}", r.distilled_multiplicity);
    println!("teacher:           {:?}", r.teacher);
    println!("NAR raw:           {:?}", r.nar_raw);
    println!("NAR distilled:     {:?}", r.nar_distilled);
    println!("total {:.0}s (distill {:.0}s)", r.seconds, r.distill_seconds);
    let test = held_out_examples(&d.corpus, cfg.eval_limit);
    let rr = run_refinement(&d.nar_distilled, &d.teacher, &test, &[1, 2, 3, 4, 5, 7, 10], 5)?;
    for p in &rr.by_iterations {
        println!("T={:<2} K=1 BLEU {:.2}", p.iterations, p.scores.bleu);
    }
    println!("T=5 K=1 {:.2}  K=5 {:.2}  K=5+NPD {:.2}", rr.k1.scores.bleu, rr.k5.scores.bleu, rr.k5_npd.scores.bleu);
    let rr = run_refinement(&d.nar_raw, &d.teacher, &test, &[1, 2, 5], 5)?;
    for p in &rr.by_iterations {
        println!("raw T={:<2} K=1 BLEU {:.2}", p.iterations, p.scores.bleu);
    }
    println!("raw T=5 K=1 {:.2}  K=5 {:.2}  K=5+NPD {:.2}", rr.k1.scores.bleu, rr.k5.scores.bleu, rr.k5_npd.scores.bleu);
    Ok(())
}
