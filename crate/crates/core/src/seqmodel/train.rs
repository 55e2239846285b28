use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Fwd;
use super::{ModelConfig, ModelKind, S2utModel};
use crate::error::{Error, Result};
use crate::maskpredict::sample_training_mask;
use crate::nn::gradcheck::{check_params, GradCheckReport};
use crate::nn::optim::{Adam, AdamConfig, Schedule};
use crate::nn::{segs_from_lens, Mat, Tape, Var};

/// One source utterance (mel frames) with its target unit ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub id: String,
    pub source: Mat,
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub max_updates: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup: usize,
    pub clip: f64,
    /// Weight of the length cross-entropy in the NAR objective.
    pub length_loss_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            max_updates: 100_000,
            batch_size: 16,
            peak_lr: 1e-3,
            warmup: 200,
            clip: 1.0,
            length_loss_weight: 0.1,
            seed: 0,
        }
    }
}

/// Config file of one training run: architecture, optimization and the
/// initialization seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct S2utRunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub model_seed: u64,
}

impl Default for S2utRunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                max_len: 64,
                length_bins: 64,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                peak_lr: 2e-3,
                ..TrainConfig::default()
            },
            model_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLosses {
    /// Label-smoothed token cross-entropy per scored position.
    pub token: f64,
    /// Length cross-entropy per utterance (NAR only).
    pub length: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<TrainLosses>,
    pub updates: usize,
    pub seconds: f64,
}

/// Builds the training objective for `batch`. For NAR models `masks[i]`
/// lists the masked positions of example `i`; AR models ignore it.
pub(crate) fn batch_loss<'a>(
    model: &S2utModel,
    f: &mut Fwd<'a, '_>,
    batch: &[&Pair],
    masks: &[Vec<usize>],
    length_weight: f64,
) -> Result<(Var, TrainLosses)> {
    let cfg = model.config();
    let sp = model.specials();
    for p in batch {
        model.check_source(&p.source)?;
        if p.target.is_empty() {
            return Err(Error::EmptyInput(format!("pair {} has an empty target", p.id)));
        }
        if p.target.len() > cfg.max_len {
            return Err(Error::Length {
                len: p.target.len(),
                max: cfg.max_len,
            });
        }
        model.check_tokens(&p.target, |id| id < cfg.unit_vocab)?;
    }
    let src_lens: Vec<usize> = batch.iter().map(|p| p.source.rows()).collect();
    let mut data = Vec::with_capacity(src_lens.iter().sum::<usize>() * cfg.input_dim);
    for p in batch {
        data.extend_from_slice(p.source.data());
    }
    let x = f.tape.constant(Mat::from_vec(data.len() / cfg.input_dim, cfg.input_dim, data));
    let (enc, esegs) = model.encode_graph(f, x, &segs_from_lens(&src_lens));
    let mem = model.cross_memory(f, enc);
    let eps = cfg.label_smoothing;
    match model.kind() {
        ModelKind::Nar => {
            let mut tokens = Vec::new();
            let mut targets = Vec::new();
            let mut lens = Vec::new();
            for (p, m) in batch.iter().zip(masks) {
                let base = tokens.len();
                tokens.extend_from_slice(&p.target);
                for &pos in m {
                    tokens[base + pos] = sp.mask;
                    targets.push((base + pos, p.target[pos]));
                }
                lens.push(p.target.len());
            }
            let segs = segs_from_lens(&lens);
            let lp = model.decoder_graph(f, &tokens, &segs, &mem, &esegs);
            let tok = f.tape.smoothed_nll(lp, &targets, eps, targets.len().max(1) as f64);
            let llp = model.length_graph(f, enc, &esegs);
            let bins = cfg.length_bins;
            let len_targets = lens
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    if n > bins {
                        Err(Error::Length { len: n, max: bins })
                    } else {
                        Ok((i, n - 1))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let len = f.tape.smoothed_nll(llp, &len_targets, 0.0, batch.len() as f64);
            let total = f.tape.weighted_sum(&[(tok, 1.0), (len, length_weight)]);
            let losses = TrainLosses {
                token: f.tape.value(tok).item(),
                length: f.tape.value(len).item(),
                total: f.tape.value(total).item(),
            };
            Ok((total, losses))
        }
        ModelKind::Ar => {
            let mut tokens = Vec::new();
            let mut targets = Vec::new();
            let mut lens = Vec::new();
            for p in batch {
                let base = tokens.len();
                tokens.push(sp.bos);
                tokens.extend_from_slice(&p.target);
                targets.extend(p.target.iter().chain([&sp.eos]).enumerate().map(|(i, &y)| (base + i, y)));
                lens.push(p.target.len() + 1);
            }
            let segs = segs_from_lens(&lens);
            let lp = model.decoder_graph(f, &tokens, &segs, &mem, &esegs);
            let tok = f.tape.smoothed_nll(lp, &targets, eps, targets.len() as f64);
            let v = f.tape.value(tok).item();
            Ok((
                tok,
                TrainLosses {
                    token: v,
                    length: 0.0,
                    total: v,
                },
            ))
        }
    }
}

/// Optimizer state plus the random stream for masks and dropout.
pub struct Trainer {
    cfg: TrainConfig,
    opt: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: &S2utModel, cfg: TrainConfig) -> Self {
        let opt = Adam::new(
            model.params(),
            AdamConfig {
                clip_norm: cfg.clip,
                ..AdamConfig::default()
            },
            Schedule {
                peak_lr: cfg.peak_lr,
                warmup_steps: cfg.warmup,
            },
        );
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            opt,
        }
    }

    pub fn updates(&self) -> usize {
        self.opt.steps_taken()
    }

    /// One optimizer update on `batch`.
    pub fn step(&mut self, model: &mut S2utModel, batch: &[&Pair]) -> Result<TrainLosses> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty training batch".into()));
        }
        let masks: Vec<Vec<usize>> = match model.kind() {
            ModelKind::Nar => batch
                .iter()
                .map(|p| sample_training_mask(p.target.len(), &mut self.rng))
                .collect::<Result<_>>()?,
            ModelKind::Ar => Vec::new(),
        };
        let (losses, grads) = {
            let mut f = Fwd {
                tape: Tape::new(),
                store: model.params(),
                dropout: model.config().dropout,
                rng: Some(&mut self.rng),
            };
            let (loss, losses) = batch_loss(model, &mut f, batch, &masks, self.cfg.length_loss_weight)?;
            if !losses.total.is_finite() {
                return Err(Error::Training(format!("non-finite loss {}", losses.total)));
            }
            let grads = f.tape.backward(loss).into_param_grads(model.params().len());
            (losses, grads)
        };
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Training("non-finite gradient".into()));
        }
        self.opt.step(model.params_mut(), &grads);
        Ok(losses)
    }
}

/// One optimizer update; see [`Trainer::step`].
pub fn train_step(model: &mut S2utModel, trainer: &mut Trainer, batch: &[&Pair]) -> Result<TrainLosses> {
    trainer.step(model, batch)
}

/// Compares the analytic gradient of the training loss on `batch` (dropout
/// off, fixed NAR `masks`) with central finite differences, visiting at most
/// `max_per_param` entries of every parameter.
pub fn gradient_check(
    model: &S2utModel,
    batch: &[&Pair],
    masks: &[Vec<usize>],
    length_weight: f64,
    max_per_param: usize,
    h: f64,
) -> Result<GradCheckReport> {
    if model.kind() == ModelKind::Nar {
        if masks.len() != batch.len() {
            return Err(Error::Input(format!("{} masks for {} pairs", masks.len(), batch.len())));
        }
        for (p, m) in batch.iter().zip(masks) {
            if let Some(&pos) = m.iter().find(|&&pos| pos >= p.target.len()) {
                return Err(Error::Input(format!("mask position {pos} outside target of pair {}", p.id)));
            }
        }
    }
    // Surface input errors before the closure, which cannot return them.
    batch_loss(model, &mut Fwd::inference(model.params()), batch, masks, length_weight)?;
    Ok(check_params(model.params(), max_per_param, h, |tape, store| {
        let mut f = Fwd {
            tape: std::mem::take(tape),
            store,
            dropout: 0.0,
            rng: None,
        };
        let (loss, _) = batch_loss(model, &mut f, batch, masks, length_weight).expect("batch validated above");
        *tape = f.tape;
        loss
    }))
}

/// Trains for `cfg.epochs` shuffled passes (or until `cfg.max_updates`).
pub fn train_model(model: &mut S2utModel, pairs: &[Pair], cfg: &TrainConfig) -> Result<TrainReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no training pairs".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let start = Instant::now();
    let mut trainer = Trainer::new(model, cfg.clone());
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut report = TrainReport::default();
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut sum = TrainLosses::default();
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if trainer.updates() >= cfg.max_updates {
                break 'epochs;
            }
            let batch: Vec<&Pair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let l = trainer.step(model, &batch)?;
            sum.token += l.token;
            sum.length += l.length;
            sum.total += l.total;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let mean = TrainLosses {
            token: sum.token / n,
            length: sum.length / n,
            total: sum.total / n,
        };
        log::info!(
            "{:?} epoch {epoch}: token {:.4} length {:.4} ({} updates, {:.0}s)",
            model.kind(),
            mean.token,
            mean.length,
            trainer.updates(),
            start.elapsed().as_secs_f64()
        );
        report.epoch_losses.push(mean);
    }
    report.updates = trainer.updates();
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
