//! Trains the two unit extractors on a small synthetic corpus: k-means on
//! mel frames, and k-means on a feature encoder finetuned with CTC on
//! perturbed audio. Prints the finetuning loss curve and one utterance's
//! units from each extractor under an energy perturbation.
//!
//! cargo run --release --example ctc_finetune [-- epochs]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use transpeech::harness::synth_speech::{gen_speech_corpus, SpeechSpec, Split};
use transpeech::ctc::FinetuneConfig;
use transpeech::harness::uer::train_unitizers;
use transpeech::perturb::{enhance_chain, PerturbMode, PerturbParams};
use transpeech::unitizer::{collapse_units, unit_error_rate};

fn main() -> transpeech::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args().nth(1).map_or(6, |e| e.parse().expect("epochs must be an integer"));
    let corpus = gen_speech_corpus(
        &SpeechSpec {
            num_utterances: 60,
            ..SpeechSpec::default()
        },
        11,
    )?;
    let train: Vec<(&str, _)> = corpus.split(Split::Train).map(|u| (u.utt_id.as_str(), &u.audio)).collect();
    let ft = FinetuneConfig {
        epochs,
        ..FinetuneConfig::default()
    };
    let t = train_unitizers(&train, 32, 20, &ft, 0)?;
    println!(
        "CTC loss on fixed perturbations: {:.3} -> {:.3} after {} updates",
        t.finetune.initial_loss, t.finetune.final_loss, t.finetune.updates
    );
    for (i, l) in t.finetune.epoch_losses.iter().enumerate() {
        println!("  epoch {:2}: {l:.3}", i + 1);
    }

    let u = corpus.split(Split::Test).next().expect("corpus has a test split");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let louder = enhance_chain(&u.audio, &PerturbParams::default(), PerturbMode::Energy, &mut rng)?;
    for (name, x) in [("baseline", t.baseline_unitizer()), ("tuned", t.tuned_unitizer())] {
        let clean = collapse_units(&x.units(&u.audio)?);
        let pert = collapse_units(&x.units(&louder)?);
        println!("{name:>8}: {:?}", &clean[..clean.len().min(16)]);
        println!("{:>8}  UER under energy perturbation {:.1}%", "", unit_error_rate(&clean, &pert)?);
    }
    Ok(())
}
