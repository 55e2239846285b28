//! Applies each perturbation family to a synthetic utterance and prints
//! what it changed: duration, loudness and mean pitch. Then normalizes the
//! perturbed copies back to corpus-average style.
//!
//! cargo run --release --example perturbation [-- out_dir]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use transpeech::dsp::{extract_pitch, rms_energy, save_wav, Waveform};
use transpeech::harness::synth_speech::{gen_speech_corpus, SpeechSpec};
use transpeech::perturb::{compute_style_stats, enhance_chain, style_normalize, PerturbMode, PerturbParams};

fn describe(name: &str, w: &Waveform) {
    let f0 = extract_pitch(w).mean_voiced_f0().unwrap_or(0.0);
    println!("{name:>12}: {:.3}s  rms {:.4}  mean f0 {:6.1} Hz", w.duration_secs(), rms_energy(w), f0);
}

fn main() -> transpeech::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let corpus = gen_speech_corpus(
        &SpeechSpec {
            num_utterances: 40,
            ..SpeechSpec::default()
        },
        7,
    )?;
    let audio: Vec<Waveform> = corpus.utterances.iter().map(|u| u.audio.clone()).collect();
    let stats = compute_style_stats(&audio)?;
    println!("corpus: mean f0 {:.1} Hz, mean rms {:.4}", stats.mean_f0, stats.mean_rms);

    let x = &audio[0];
    describe("original", x);
    let params = PerturbParams::default();
    for mode in [PerturbMode::Rhythm, PerturbMode::Pitch, PerturbMode::Energy, PerturbMode::Full] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = enhance_chain(x, &params, mode, &mut rng)?;
        describe(mode.name(), &y);
        let z = style_normalize(&y, &stats);
        describe(&format!("{} norm", mode.name()), &z);
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            save_wav(&y, dir.join(format!("{mode}.wav")))?;
            save_wav(&z, dir.join(format!("{mode}_normalized.wav")))?;
        }
    }
    if let Some(dir) = &out {
        save_wav(x, dir.join("original.wav"))?;
        println!("wrote WAVs to {}", dir.display());
    }
    Ok(())
}
