use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::DEFAULT_NUM_MELS;
use crate::error::{Error, Result};
use crate::nn::{checkpoint, segs_from_lens, Mat, ParamId, ParamStore, Seg, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub kernel: usize,
    pub conv_layers: usize,
    /// Output classes of the CTC head (units plus blank), if one is attached.
    pub ctc_labels: Option<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: DEFAULT_NUM_MELS,
            hidden: 96,
            feature_dim: 80,
            kernel: 5,
            conv_layers: 2,
            ctc_labels: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.feature_dim == 0 || self.conv_layers == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.ctc_labels.is_some_and(|n| n < 2) {
            return Err(Error::Config("a CTC head needs at least two labels".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("encoder kernel must be odd, got {}", self.kernel)));
        }
        Ok(())
    }
}

struct ConvLayer {
    w: ParamId,
    b: ParamId,
}

/// Per-frame layer norm followed by stride-1 same-padded convolutions with
/// ReLU and a linear projection, so the output has one row per input frame.
pub struct FeatureEncoder {
    cfg: EncoderConfig,
    store: ParamStore,
    norm_g: ParamId,
    norm_b: ParamId,
    convs: Vec<ConvLayer>,
    proj_w: ParamId,
    proj_b: ParamId,
    head: Option<(ParamId, ParamId)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: EncoderConfig,
}

const KIND: &str = "feature_encoder";

impl FeatureEncoder {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let norm_g = store.add_ones("enc.norm.g", 1, cfg.input_dim);
        let norm_b = store.add_zeros("enc.norm.b", 1, cfg.input_dim);
        let mut convs = Vec::new();
        let mut width = cfg.input_dim;
        for l in 0..cfg.conv_layers {
            let w = store.add_glorot(format!("enc.conv{l}.w"), cfg.kernel * width, cfg.hidden, &mut rng);
            let b = store.add_zeros(format!("enc.conv{l}.b"), 1, cfg.hidden);
            convs.push(ConvLayer { w, b });
            width = cfg.hidden;
        }
        let proj_w = store.add_glorot("enc.proj.w", width, cfg.feature_dim, &mut rng);
        let proj_b = store.add_zeros("enc.proj.b", 1, cfg.feature_dim);
        let head = cfg.ctc_labels.map(|n| {
            (
                store.add_glorot("ctc.head.w", cfg.feature_dim, n, &mut rng),
                store.add_zeros("ctc.head.b", 1, n),
            )
        });
        Ok(Self {
            cfg,
            store,
            norm_g,
            norm_b,
            convs,
            proj_w,
            proj_b,
            head,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Builds the forward graph for stacked utterances `x` described by `segs`.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var, segs: &[Seg]) -> Var {
        self.forward_with(tape, &self.store, x, segs)
    }

    /// As [`forward`](Self::forward) but reading parameters from `store`
    /// (a store with this encoder's layout).
    pub fn forward_with<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var, segs: &[Seg]) -> Var {
        let g = tape.param(store, self.norm_g);
        let b = tape.param(store, self.norm_b);
        let mut h = tape.layer_norm(x, g, b);
        let pad = self.cfg.kernel / 2;
        for c in &self.convs {
            let (u, _) = tape.unfold(h, segs, self.cfg.kernel, 1, pad);
            let w = tape.param(store, c.w);
            let bb = tape.param(store, c.b);
            let y = tape.linear(u, w, Some(bb));
            h = tape.relu(y);
        }
        let w = tape.param(store, self.proj_w);
        let bb = tape.param(store, self.proj_b);
        tape.linear(h, w, Some(bb))
    }

    /// CTC head logits on top of encoder features, if a head is attached.
    pub fn head_logits<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, features: Var) -> Option<Var> {
        let (w, b) = self.head?;
        let w = tape.param(store, w);
        let b = tape.param(store, b);
        Some(tape.linear(features, w, Some(b)))
    }

    pub fn has_head(&self) -> bool {
        self.head.is_some()
    }

    /// Per-frame CTC log-probabilities for one utterance.
    pub fn ctc_lattice(&self, frames: &Mat) -> Result<Mat> {
        if !self.has_head() {
            return Err(Error::Config("encoder has no CTC head".into()));
        }
        let mut tape = Tape::inference();
        let x = tape.constant(frames.clone());
        let f = self.forward(&mut tape, x, &segs_from_lens(&[frames.rows()]));
        let logits = self.head_logits(&mut tape, &self.store, f).expect("head checked above");
        let lp = tape.log_softmax(logits);
        Ok(tape.value(lp).clone())
    }

    /// Features for one utterance, `[frames x feature_dim]`.
    pub fn encode(&self, frames: &Mat) -> Result<Mat> {
        if frames.cols() != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "encoder expects {} input dims, got {}",
                self.cfg.input_dim,
                frames.cols()
            )));
        }
        if frames.rows() == 0 {
            return Err(Error::EmptyInput("no frames to encode".into()));
        }
        let mut tape = Tape::inference();
        let x = tape.constant(frames.clone());
        let y = self.forward(&mut tape, x, &segs_from_lens(&[frames.rows()]));
        Ok(tape.value(y).clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = serde_json::to_string(&Header {
            kind: KIND.into(),
            config: self.cfg.clone(),
        })?;
        checkpoint::save_file(path, &header, &self.store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, tensors) = checkpoint::load_file(path)?;
        let h: Header = serde_json::from_str(&header)?;
        if h.kind != KIND {
            return Err(Error::Checkpoint(format!("expected a {KIND} checkpoint, found {}", h.kind)));
        }
        let mut enc = Self::new(h.config, 0)?;
        checkpoint::load_into(&mut enc.store, tensors)?;
        Ok(enc)
    }
}
