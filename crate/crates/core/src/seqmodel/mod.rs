//! Speech-to-unit sequence models: a conformer encoder over mel frames with
//! either a non-autoregressive (bidirectional, length-predicting) or an
//! autoregressive (causal) unit decoder.

mod incremental;
mod layers;
mod train;

#[cfg(test)]
mod tests;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::DEFAULT_NUM_MELS;
use crate::error::{Error, Result};
use crate::nn::{checkpoint, segs_from_lens, sinusoid_table, Mat, ParamId, ParamStore, Seg, Var};
use layers::{offset_table, position_table, ConformerBlock, CrossKv, DecoderBlock, Fwd, Lin, Norm};

pub use incremental::{ArHypothesis, ArOutput};
pub use train::{gradient_check, train_model, train_step, Pair, S2utRunConfig, TrainConfig, TrainLosses, TrainReport, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    /// Depthwise kernel of the conformer convolution module.
    pub conv_kernel: usize,
    /// Kernel of the two stride-2 subsampling convolutions.
    pub subsample_kernel: usize,
    pub unit_vocab: usize,
    pub max_len: usize,
    pub max_source_frames: usize,
    pub label_smoothing: f64,
    /// Length classes `1..=length_bins`.
    pub length_bins: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: DEFAULT_NUM_MELS,
            encoder_blocks: 2,
            decoder_blocks: 2,
            hidden: 64,
            heads: 4,
            ffn_dim: 256,
            dropout: 0.1,
            conv_kernel: 15,
            subsample_kernel: 5,
            unit_vocab: 64,
            max_len: 128,
            max_source_frames: 4096,
            label_smoothing: 0.1,
            length_bins: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.encoder_blocks,
            self.decoder_blocks,
            self.hidden,
            self.heads,
            self.ffn_dim,
            self.unit_vocab,
            self.max_len,
            self.max_source_frames,
            self.length_bins,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.hidden % 2 != 0 {
            return Err(Error::Config("hidden size must be even for sinusoidal encodings".into()));
        }
        if self.conv_kernel % 2 == 0 || self.subsample_kernel % 2 == 0 {
            return Err(Error::Config("convolution kernels must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("dropout and label smoothing must lie in [0, 1)".into()));
        }
        if self.length_bins > self.max_len {
            return Err(Error::Config(format!(
                "length_bins {} exceeds max_len {}",
                self.length_bins, self.max_len
            )));
        }
        Ok(())
    }

    pub fn special_tokens(&self) -> SpecialTokens {
        SpecialTokens::for_vocab(self.unit_vocab)
    }

    /// Rows of the decoder input embedding: units plus the four specials.
    pub fn input_vocab(&self) -> usize {
        self.unit_vocab + 4
    }
}

/// Reserved ids directly above the unit vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub eos: usize,
    pub bos: usize,
    pub mask: usize,
    pub pad: usize,
}

impl SpecialTokens {
    pub fn for_vocab(v: usize) -> Self {
        Self {
            eos: v,
            bos: v + 1,
            mask: v + 2,
            pad: v + 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nar,
    Ar,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nar" => Ok(Self::Nar),
            "ar" => Ok(Self::Ar),
            other => Err(Error::Parameter(format!("unknown model kind {other:?} (nar|ar)"))),
        }
    }
}

/// Conformer output for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub states: Mat,
    pub src_len: usize,
}

/// Per-position log-probabilities over the unit vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDistribution(pub Mat);

/// Log-probabilities over target lengths; index `i` is length `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthDistribution {
    pub logp: Vec<f64>,
}

impl LengthDistribution {
    pub fn argmax(&self) -> usize {
        crate::nn::argmax(&self.logp) + 1
    }

    /// The `k` most probable lengths, best first (ties to the shorter length).
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.logp.len()).collect();
        idx.sort_by(|&a, &b| self.logp[b].total_cmp(&self.logp[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx.into_iter().map(|i| i + 1).collect()
    }
}

struct EncoderLayout {
    in_norm: Norm,
    sub1: Lin,
    sub2: Lin,
    blocks: Vec<ConformerBlock>,
}

struct DecoderLayout {
    embed: ParamId,
    blocks: Vec<DecoderBlock>,
    out_norm: Norm,
    out: Lin,
}

struct LengthHead {
    l1: Lin,
    l2: Lin,
}

/// An encoder-decoder model over mel frames and unit ids. NAR and AR
/// models share the architecture but never parameters.
pub struct S2utModel {
    cfg: ModelConfig,
    kind: ModelKind,
    store: ParamStore,
    enc: EncoderLayout,
    dec: DecoderLayout,
    len_head: Option<LengthHead>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: ModelConfig,
}

impl S2utModel {
    pub fn new(cfg: ModelConfig, kind: ModelKind, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = cfg.hidden;
        let k = cfg.subsample_kernel;
        let enc = EncoderLayout {
            in_norm: Norm::new(&mut store, "enc.in_norm", cfg.input_dim),
            sub1: Lin::new(&mut store, "enc.sub1", k * cfg.input_dim, h, true, &mut rng),
            sub2: Lin::new(&mut store, "enc.sub2", k * h, h, true, &mut rng),
            blocks: (0..cfg.encoder_blocks)
                .map(|i| {
                    ConformerBlock::new(&mut store, &format!("enc.block{i}"), h, cfg.ffn_dim, cfg.heads, cfg.conv_kernel, &mut rng)
                })
                .collect(),
        };
        let out_vocab = match kind {
            ModelKind::Nar => cfg.unit_vocab,
            ModelKind::Ar => cfg.unit_vocab + 1,
        };
        let dec = DecoderLayout {
            embed: store.add_normal("dec.embed", cfg.input_vocab(), h, 1.0 / (h as f64).sqrt(), &mut rng),
            blocks: (0..cfg.decoder_blocks)
                .map(|i| DecoderBlock::new(&mut store, &format!("dec.block{i}"), h, cfg.ffn_dim, cfg.heads, &mut rng))
                .collect(),
            out_norm: Norm::new(&mut store, "dec.out_norm", h),
            out: Lin::new(&mut store, "dec.out", h, out_vocab, true, &mut rng),
        };
        let len_head = (kind == ModelKind::Nar).then(|| LengthHead {
            l1: Lin::new(&mut store, "len.l1", 2 * h, h, true, &mut rng),
            l2: Lin::new(&mut store, "len.l2", h, cfg.length_bins, true, &mut rng),
        });
        Ok(Self {
            cfg,
            kind,
            store,
            enc,
            dec,
            len_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn specials(&self) -> SpecialTokens {
        self.cfg.special_tokens()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_source(&self, mel: &Mat) -> Result<()> {
        if mel.rows() == 0 {
            return Err(Error::EmptyInput("source has no frames".into()));
        }
        if mel.cols() != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} input dims, got {}",
                self.cfg.input_dim,
                mel.cols()
            )));
        }
        if mel.rows() > self.cfg.max_source_frames {
            return Err(Error::Length {
                len: mel.rows(),
                max: self.cfg.max_source_frames,
            });
        }
        if !mel.is_finite() {
            return Err(Error::Input("source contains non-finite values".into()));
        }
        Ok(())
    }

    fn check_tokens(&self, ids: &[usize], allowed: impl Fn(usize) -> bool) -> Result<()> {
        if ids.len() > self.cfg.max_len + 1 {
            return Err(Error::Length {
                len: ids.len(),
                max: self.cfg.max_len,
            });
        }
        match ids.iter().find(|&&id| !allowed(id)) {
            Some(&id) => Err(Error::Vocab {
                id,
                size: self.cfg.input_vocab(),
            }),
            None => Ok(()),
        }
    }

    /// Subsampling front-end plus conformer blocks over stacked utterances.
    pub(crate) fn encode_graph<'a>(&self, f: &mut Fwd<'a, '_>, x: Var, segs: &[Seg]) -> (Var, Vec<Seg>) {
        let k = self.cfg.subsample_kernel;
        let pad = k / 2;
        let x = self.enc.in_norm.apply(f, x);
        let (u, s1) = f.tape.unfold(x, segs, k, 2, pad);
        let h = self.enc.sub1.apply(f, u);
        let h = f.tape.relu(h);
        let (u, s2) = f.tape.unfold(h, &s1, k, 2, pad);
        let h = self.enc.sub2.apply(f, u);
        let h = f.tape.relu(h);
        let mut h = f.drop(h);
        let maxlen = s2.iter().map(|s| s.len).max().unwrap_or(1);
        let offsets = f.tape.constant(offset_table(maxlen, self.cfg.hidden));
        for b in &self.enc.blocks {
            h = b.apply(f, h, &s2, offsets);
        }
        (h, s2)
    }

    pub(crate) fn cross_memory(&self, f: &mut Fwd, memory: Var) -> Vec<CrossKv> {
        self.dec.blocks.iter().map(|b| b.cross_kv(f, memory)).collect()
    }

    /// Decoder log-probabilities for stacked token rows.
    pub(crate) fn decoder_graph(&self, f: &mut Fwd, tokens: &[usize], segs: &[Seg], mem: &[CrossKv], mem_segs: &[Seg]) -> Var {
        let table = f.p(self.dec.embed);
        let e = f.tape.embedding(table, tokens);
        let e = f.tape.scale(e, (self.cfg.hidden as f64).sqrt());
        let pos = f.tape.constant(position_table(segs, self.cfg.hidden));
        let x = f.tape.add(e, pos);
        let mut x = f.drop(x);
        let causal = self.kind == ModelKind::Ar;
        for (b, m) in self.dec.blocks.iter().zip(mem) {
            x = b.apply(f, x, segs, causal, m, mem_segs);
        }
        let x = self.dec.out_norm.apply(f, x);
        let logits = self.dec.out.apply(f, x);
        f.tape.log_softmax(logits)
    }

    /// Length log-probabilities, one row per encoder segment.
    pub(crate) fn length_graph(&self, f: &mut Fwd, enc: Var, segs: &[Seg]) -> Var {
        let head = self.len_head.as_ref().expect("length head exists on NAR models");
        let pooled = f.tape.mean_pool(enc, segs);
        let lens = sinusoid_table(segs.iter().map(|s| s.len as f64), self.cfg.hidden);
        let lens = f.tape.constant(lens);
        let x = f.tape.concat_cols(pooled, lens);
        let h = head.l1.apply(f, x);
        let h = f.tape.relu(h);
        let h = f.drop(h);
        let logits = head.l2.apply(f, h);
        f.tape.log_softmax(logits)
    }

    pub fn encode(&self, mel: &Mat) -> Result<EncoderState> {
        self.check_source(mel)?;
        let mut f = Fwd::inference(&self.store);
        let x = f.tape.constant_ref(mel);
        let (h, segs) = self.encode_graph(&mut f, x, &segs_from_lens(&[mel.rows()]));
        Ok(EncoderState {
            states: f.tape.value(h).clone(),
            src_len: segs[0].len,
        })
    }

    fn require(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Parameter(format!("operation needs a {kind:?} model, this is {:?}", self.kind)));
        }
        Ok(())
    }

    /// One bidirectional pass over `partial` (unit ids and mask tokens).
    pub fn nar_forward(&self, enc: &EncoderState, partial: &[usize]) -> Result<TokenDistribution> {
        let mut session = self.nar_session(enc)?;
        Ok(TokenDistribution(session.predict(&[partial.to_vec()])?.remove(0)))
    }

    /// Precomputes cross-attention memory so repeated passes over the same
    /// source only run the decoder.
    pub fn nar_session<'m>(&'m self, enc: &EncoderState) -> Result<NarSession<'m>> {
        self.require(ModelKind::Nar)?;
        Ok(NarSession {
            model: self,
            memory: self.memory_mats(enc),
            src_len: enc.src_len,
            forward_passes: 0,
        })
    }

    fn memory_mats(&self, enc: &EncoderState) -> Vec<(Mat, Mat)> {
        let mut f = Fwd::inference(&self.store);
        let m = f.tape.constant_ref(&enc.states);
        self.cross_memory(&mut f, m)
            .into_iter()
            .map(|kv| (f.tape.value(kv.k).clone(), f.tape.value(kv.v).clone()))
            .collect()
    }

    pub fn length_predict(&self, enc: &EncoderState) -> Result<LengthDistribution> {
        self.require(ModelKind::Nar)?;
        let mut f = Fwd::inference(&self.store);
        let x = f.tape.constant_ref(&enc.states);
        let lp = self.length_graph(&mut f, x, &segs_from_lens(&[enc.src_len]));
        Ok(LengthDistribution {
            logp: f.tape.value(lp).row(0).to_vec(),
        })
    }

    /// Teacher-forced log-probability of `units` followed by eos.
    pub fn ar_score(&self, enc: &EncoderState, units: &[usize]) -> Result<f64> {
        Ok(self.ar_score_batch(enc, &[units.to_vec()])?[0])
    }

    /// Scores several candidates for the same source in one pass.
    pub fn ar_score_batch(&self, enc: &EncoderState, candidates: &[Vec<usize>]) -> Result<Vec<f64>> {
        self.require(ModelKind::Ar)?;
        let sp = self.specials();
        let v = self.cfg.unit_vocab;
        let mut tokens = Vec::new();
        let mut targets = Vec::new();
        let mut lens = Vec::new();
        for c in candidates {
            self.check_tokens(c, |id| id < v)?;
            tokens.push(sp.bos);
            tokens.extend_from_slice(c);
            targets.extend_from_slice(c);
            targets.push(sp.eos);
            lens.push(c.len() + 1);
        }
        let segs = segs_from_lens(&lens);
        let memory = self.memory_mats(enc);
        let mut f = Fwd::inference(&self.store);
        let mem: Vec<CrossKv> = memory
            .iter()
            .map(|(k, vv)| CrossKv {
                k: f.tape.constant_ref(k),
                v: f.tape.constant_ref(vv),
            })
            .collect();
        let mem_segs = vec![Seg { start: 0, len: enc.src_len }; segs.len()];
        let lp = self.decoder_graph(&mut f, &tokens, &segs, &mem, &mem_segs);
        let lp = f.tape.value(lp);
        Ok(segs
            .iter()
            .map(|s| (s.start..s.end()).map(|r| lp.get(r, targets[r])).sum())
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = serde_json::to_string(&Header {
            kind: self.kind,
            config: self.cfg.clone(),
        })?;
        checkpoint::save_file(path, &header, &self.store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, tensors) = checkpoint::load_file(path)?;
        let h: Header = serde_json::from_str(&header)
            .map_err(|e| Error::Checkpoint(format!("not a sequence model checkpoint: {e}")))?;
        let mut model = Self::new(h.config, h.kind, 0)?;
        checkpoint::load_into(&mut model.store, tensors)?;
        Ok(model)
    }
}

/// Repeated NAR decoder passes against one encoded source.
pub struct NarSession<'m> {
    model: &'m S2utModel,
    memory: Vec<(Mat, Mat)>,
    src_len: usize,
    forward_passes: usize,
}

impl NarSession<'_> {
    /// One decoder pass over all `candidates` together; returns one
    /// `[len x unit_vocab]` log-probability matrix per candidate.
    pub fn predict(&mut self, candidates: &[Vec<usize>]) -> Result<Vec<Mat>> {
        let model = self.model;
        let sp = model.specials();
        let v = model.cfg.unit_vocab;
        for c in candidates {
            if c.is_empty() {
                return Err(Error::EmptyInput("empty decoder input".into()));
            }
            model.check_tokens(c, |id| id < v || id == sp.mask)?;
            if c.len() > model.cfg.max_len {
                return Err(Error::Length {
                    len: c.len(),
                    max: model.cfg.max_len,
                });
            }
        }
        self.forward_passes += 1;
        let lens: Vec<usize> = candidates.iter().map(Vec::len).collect();
        let segs = segs_from_lens(&lens);
        let tokens: Vec<usize> = candidates.concat();
        let mut f = Fwd::inference(&model.store);
        let mem: Vec<CrossKv> = self
            .memory
            .iter()
            .map(|(k, vv)| CrossKv {
                k: f.tape.constant_ref(k),
                v: f.tape.constant_ref(vv),
            })
            .collect();
        let mem_segs = vec![Seg { start: 0, len: self.src_len }; segs.len()];
        let lp = model.decoder_graph(&mut f, &tokens, &segs, &mem, &mem_segs);
        let lp = f.tape.value(lp);
        Ok(segs.iter().map(|s| lp.slice_rows(s.start, s.len)).collect())
    }

    pub fn forward_passes(&self) -> usize {
        self.forward_passes
    }
}
