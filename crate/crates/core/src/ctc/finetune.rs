use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ctc_loss, required_frames};
use crate::dsp::{mel_spectrogram, MelConfig, Waveform};
use crate::error::{Error, Result};
use crate::nn::optim::{Adam, AdamConfig, Schedule};
use crate::nn::{segs_from_lens, Mat, Tape};
use crate::perturb::{enhance_chain, style_normalize, utterance_seed, PerturbMode, PerturbParams, StyleStats};
use crate::unitizer::{collapse_units, quantize, Codebook, EncoderConfig, FeatureEncoder, DEFAULT_NUM_UNITS};

/// An utterance and its pseudo text. The audio is perturbed afresh every
/// epoch before it reaches the encoder.
#[derive(Clone, Debug)]
pub struct CtcExample {
    pub utt_id: String,
    pub audio: Waveform,
    pub target: Vec<usize>,
}

/// Collapsed baseline units of the style-normalized utterance.
pub fn pseudo_text(w: &Waveform, stats: &StyleStats, baseline: &Codebook) -> Result<Vec<usize>> {
    let norm = style_normalize(w, stats);
    let mel = mel_spectrogram(&norm, &MelConfig::default())?;
    Ok(collapse_units(&quantize(&mel.frames, baseline)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub encoder: EncoderConfig,
    pub num_units: usize,
    pub epochs: usize,
    /// Hard cap on optimizer updates across all epochs.
    pub max_updates: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub mode: PerturbMode,
    pub perturb: PerturbParams,
    /// Examples held at fixed perturbations to measure the loss before and
    /// after training.
    pub eval_examples: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            num_units: DEFAULT_NUM_UNITS,
            epochs: 20,
            max_updates: 5000,
            batch_size: 8,
            peak_lr: 2e-3,
            warmup_steps: 100,
            clip_norm: 5.0,
            seed: 0,
            mode: PerturbMode::Full,
            perturb: PerturbParams::default(),
            eval_examples: 32,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FinetuneReport {
    /// Mean per-label loss on the fixed evaluation perturbations.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub updates: usize,
    /// Perturbed examples too short for their target.
    pub skipped: usize,
}

struct Prepared {
    mel: Mat,
    target: Vec<usize>,
}

fn prepare(ex: &CtcExample, cfg: &FinetuneConfig, seed: u64) -> Result<Option<Prepared>> {
    let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(seed, &ex.utt_id));
    let audio = enhance_chain(&ex.audio, &cfg.perturb, cfg.mode, &mut rng)?;
    let mel = mel_spectrogram(&audio, &MelConfig::default())?.frames;
    if mel.rows() < required_frames(&ex.target) {
        return Ok(None);
    }
    Ok(Some(Prepared {
        mel,
        target: ex.target.clone(),
    }))
}

fn stack(batch: &[&Prepared]) -> (Mat, Vec<usize>) {
    let lens: Vec<usize> = batch.iter().map(|p| p.mel.rows()).collect();
    let cols = batch[0].mel.cols();
    let mut data = Vec::with_capacity(lens.iter().sum::<usize>() * cols);
    for p in batch {
        data.extend_from_slice(p.mel.data());
    }
    (Mat::from_vec(data.len() / cols, cols, data), lens)
}

/// Builds the loss graph for a batch; returns (tape, loss var).
fn batch_loss<'a>(enc: &'a FeatureEncoder, batch: &[&Prepared], tape: &mut Tape<'a>) -> Result<crate::nn::Var> {
    let (x, lens) = stack(batch);
    let segs = segs_from_lens(&lens);
    let xv = tape.constant(x);
    let f = enc.forward(tape, xv, &segs);
    let logits = enc
        .head_logits(tape, enc.params(), f)
        .ok_or_else(|| Error::Config("finetuning needs a CTC head".into()))?;
    let lp = tape.log_softmax(logits);
    let targets: Vec<&[usize]> = batch.iter().map(|p| p.target.as_slice()).collect();
    let norm = batch.iter().map(|p| p.target.len().max(1)).sum::<usize>() as f64;
    ctc_loss(tape, lp, &segs, &targets, norm)
}

fn mean_loss(enc: &FeatureEncoder, set: &[Prepared]) -> Result<f64> {
    let mut tape = Tape::inference();
    let refs: Vec<&Prepared> = set.iter().collect();
    let l = batch_loss(enc, &refs, &mut tape)?;
    Ok(tape.value(l).item())
}

/// Trains encoder and CTC head on perturbed audio against pseudo text.
pub fn finetune_encoder(examples: &[CtcExample], cfg: &FinetuneConfig) -> Result<(FeatureEncoder, FinetuneReport)> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("no finetuning examples".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("batch_size and epochs must be positive".into()));
    }
    let mut enc_cfg = cfg.encoder.clone();
    enc_cfg.ctc_labels = Some(cfg.num_units + 1);
    let mut enc = FeatureEncoder::new(enc_cfg, cfg.seed)?;
    let mut adam = Adam::new(
        enc.params(),
        AdamConfig {
            clip_norm: cfg.clip_norm,
            ..AdamConfig::default()
        },
        Schedule {
            peak_lr: cfg.peak_lr,
            warmup_steps: cfg.warmup_steps,
        },
    );
    let eval_seed = cfg.seed ^ 0x5eed_e7a1;
    let mut eval_set = Vec::new();
    for ex in examples.iter().take(cfg.eval_examples.max(1)) {
        if let Some(p) = prepare(ex, cfg, eval_seed)? {
            eval_set.push(p);
        }
    }
    if eval_set.is_empty() {
        return Err(Error::Training("every evaluation example is infeasible".into()));
    }
    let mut report = FinetuneReport {
        initial_loss: mean_loss(&enc, &eval_set)?,
        ..FinetuneReport::default()
    };
    log::info!("ctc finetune: initial loss {:.4}", report.initial_loss);

    let mut order: Vec<usize> = (0..examples.len()).collect();
    'epochs: for epoch in 0..cfg.epochs {
        let epoch_seed = cfg.seed.wrapping_add(1 + epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if report.updates >= cfg.max_updates {
                report.epoch_losses.push(sum / count.max(1) as f64);
                break 'epochs;
            }
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                match prepare(&examples[i], cfg, epoch_seed)? {
                    Some(p) => batch.push(p),
                    None => report.skipped += 1,
                }
            }
            if batch.is_empty() {
                continue;
            }
            let refs: Vec<&Prepared> = batch.iter().collect();
            let grads = {
                let mut tape = Tape::new();
                let l = batch_loss(&enc, &refs, &mut tape)?;
                let loss = tape.value(l).item();
                if !loss.is_finite() {
                    return Err(Error::Training(format!(
                        "ctc loss became {loss} at update {} (lr {:.2e})",
                        report.updates,
                        adam.current_lr()
                    )));
                }
                sum += loss;
                count += 1;
                tape.backward(l).into_param_grads(enc.params().len())
            };
            let norm = adam.step(enc.params_mut(), &grads);
            if !norm.is_finite() {
                return Err(Error::Training(format!(
                    "gradient norm became {norm} at update {}",
                    report.updates
                )));
            }
            report.updates += 1;
        }
        let mean = sum / count.max(1) as f64;
        log::info!("ctc finetune: epoch {epoch} loss {mean:.4} updates {}", report.updates);
        report.epoch_losses.push(mean);
    }
    report.final_loss = mean_loss(&enc, &eval_set)?;
    log::info!("ctc finetune: final loss {:.4}", report.final_loss);
    Ok((enc, report))
}
