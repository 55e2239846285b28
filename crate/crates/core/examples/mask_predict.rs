//! Trains a small NAR model and its AR teacher, then shows mask-predict
//! refinement on one held-out source: the length candidates, what each
//! iteration remasked and re-predicted, and how teacher rescoring picks
//! the output.
//!
//! cargo run --release --example mask_predict

use transpeech::harness::experiments::{held_out_examples, ToyConfig};
use transpeech::harness::pairs::gen_pair_corpus;
use transpeech::harness::synth_speech::Split;
use transpeech::maskpredict::{decode_source, DecodeConfig};
use transpeech::seqmodel::{train_model, ModelKind, S2utModel, TrainConfig};

fn main() -> transpeech::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = ToyConfig::default();
    cfg.task.num_pairs = 600;
    let corpus = gen_pair_corpus(&cfg.task, cfg.corpus_seed)?;
    let pairs = corpus.pairs(Split::Train);
    let short = |t: &TrainConfig| TrainConfig {
        epochs: t.epochs / 2,
        ..t.clone()
    };
    let mut ar = S2utModel::new(cfg.model.clone(), ModelKind::Ar, 0)?;
    train_model(&mut ar, &pairs, &short(&cfg.ar_train))?;
    let mut nar = S2utModel::new(cfg.model.clone(), ModelKind::Nar, 1)?;
    train_model(&mut nar, &pairs, &short(&cfg.nar_train))?;

    let e = held_out_examples(&corpus, Some(1))[0];
    println!("reference: {:?}", e.references[0]);
    let dc = DecodeConfig {
        iterations: 5,
        length_beam: 3,
        npd: true,
        ..DecodeConfig::default()
    };
    let (out, trace) = decode_source(&nar, Some(&ar), &e.pair.source, &dc)?;
    for (i, c) in trace.candidates.iter().enumerate() {
        let pick = if i == trace.selected { "*" } else { " " };
        println!(
            "{pick} length {:2}  avg log score {:7.3}  teacher {:?}",
            c.length, c.avg_log_score, c.teacher_score
        );
        for it in &c.iterations {
            println!("    iter {}: remasked {:2} positions {:?}", it.iteration, it.masked.len(), it.masked);
        }
        println!("    output {:?}", c.output);
    }
    println!("output:    {out:?}");
    println!("{} NAR passes, {} teacher passes", trace.forward_passes, trace.teacher_passes);
    Ok(())
}
