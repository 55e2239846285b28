//! Parameter layouts and graph builders for the conformer encoder, the
//! unit decoders and the length head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{sinusoid_table, AttnArgs, Mat, ParamId, ParamStore, RelPos, Seg, Tape, Var};

/// Forward context: the tape, the parameters it reads and the dropout source.
pub(crate) struct Fwd<'a, 'r> {
    pub tape: Tape<'a>,
    pub store: &'a ParamStore,
    pub dropout: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl<'a, 'r> Fwd<'a, 'r> {
    pub fn inference(store: &'a ParamStore) -> Self {
        Self {
            tape: Tape::inference(),
            store,
            dropout: 0.0,
            rng: None,
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    pub fn drop(&mut self, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.dropout > 0.0 => self.tape.dropout(x, self.dropout, rng),
            _ => x,
        }
    }
}

#[derive(Clone, Copy)]
pub(crate) struct Lin {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Lin {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let w = store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let b = bias.then(|| store.add_zeros(format!("{name}.b"), 1, fan_out));
        Self { w, b }
    }

    pub fn apply(&self, f: &mut Fwd, x: Var) -> Var {
        let w = f.p(self.w);
        let b = self.b.map(|b| f.p(b));
        f.tape.linear(x, w, b)
    }

    /// Plain-matrix evaluation for incremental decoding.
    pub fn eval(&self, store: &ParamStore, x: &Mat) -> Mat {
        let mut y = x.matmul(store.get(self.w));
        if let Some(b) = self.b {
            y.add_row_assign(store.get(b).data());
        }
        y
    }
}

#[derive(Clone, Copy)]
pub(crate) struct Norm {
    pub g: ParamId,
    pub b: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            g: store.add_ones(format!("{name}.g"), 1, dim),
            b: store.add_zeros(format!("{name}.b"), 1, dim),
        }
    }

    pub fn apply(&self, f: &mut Fwd, x: Var) -> Var {
        let g = f.p(self.g);
        let b = f.p(self.b);
        f.tape.layer_norm(x, g, b)
    }

    pub fn eval(&self, store: &ParamStore, x: &Mat) -> Mat {
        crate::nn::layer_norm_rows(x, store.get(self.g).data(), store.get(self.b).data()).0
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Act {
    Relu,
    Silu,
}

pub(crate) struct Ffn {
    pub norm: Norm,
    pub l1: Lin,
    pub l2: Lin,
    pub act: Act,
}

impl Ffn {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, inner: usize, act: Act, rng: &mut impl Rng) -> Self {
        Self {
            norm: Norm::new(store, &format!("{name}.norm"), dim),
            l1: Lin::new(store, &format!("{name}.l1"), dim, inner, true, rng),
            l2: Lin::new(store, &format!("{name}.l2"), inner, dim, true, rng),
            act,
        }
    }

    /// The residual branch only (caller adds it back).
    pub fn apply(&self, f: &mut Fwd, x: Var) -> Var {
        let h = self.norm.apply(f, x);
        let h = self.l1.apply(f, h);
        let h = match self.act {
            Act::Relu => f.tape.relu(h),
            Act::Silu => f.tape.silu(h),
        };
        let h = f.drop(h);
        let h = self.l2.apply(f, h);
        f.drop(h)
    }

    pub fn eval(&self, store: &ParamStore, x: &Mat) -> Mat {
        let h = self.norm.eval(store, x);
        let h = self.l1.eval(store, &h);
        let h = match self.act {
            Act::Relu => h.map(|v| v.max(0.0)),
            Act::Silu => h.map(crate::nn::silu),
        };
        self.l2.eval(store, &h)
    }
}

pub(crate) struct Mha {
    pub q: Lin,
    pub k: Lin,
    pub v: Lin,
    pub o: Lin,
}

impl Mha {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            q: Lin::new(store, &format!("{name}.q"), dim, dim, true, rng),
            k: Lin::new(store, &format!("{name}.k"), dim, dim, true, rng),
            v: Lin::new(store, &format!("{name}.v"), dim, dim, true, rng),
            o: Lin::new(store, &format!("{name}.o"), dim, dim, true, rng),
        }
    }
}

/// Sinusoids for offsets `-(maxlen-1) ..= maxlen-1`, row `maxlen-1+o` for offset `o`.
pub(crate) fn offset_table(maxlen: usize, dim: usize) -> Mat {
    let m = maxlen as isize;
    sinusoid_table((1 - m..m).map(|o| o as f64), dim)
}

/// Absolute sinusoidal positions restarting at zero in every segment.
pub(crate) fn position_table(segs: &[Seg], dim: usize) -> Mat {
    sinusoid_table(segs.iter().flat_map(|s| (0..s.len).map(|p| p as f64)), dim)
}

pub(crate) struct ConformerBlock {
    pub ff1: Ffn,
    pub att_norm: Norm,
    pub att: Mha,
    pub pos: ParamId,
    pub bias_u: ParamId,
    pub bias_v: ParamId,
    pub conv_norm: Norm,
    pub pw1: Lin,
    pub dw_w: ParamId,
    pub dw_b: ParamId,
    pub dw_norm: Norm,
    pub pw2: Lin,
    pub ff2: Ffn,
    pub out_norm: Norm,
    pub heads: usize,
}

impl ConformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, ffn: usize, heads: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        Self {
            ff1: Ffn::new(store, &format!("{name}.ff1"), dim, ffn, Act::Silu, rng),
            att_norm: Norm::new(store, &format!("{name}.att.norm"), dim),
            att: Mha::new(store, &format!("{name}.att"), dim, rng),
            pos: store.add_glorot(format!("{name}.att.pos.w"), dim, dim, rng),
            bias_u: store.add_zeros(format!("{name}.att.bias_u"), 1, dim),
            bias_v: store.add_zeros(format!("{name}.att.bias_v"), 1, dim),
            conv_norm: Norm::new(store, &format!("{name}.conv.norm"), dim),
            pw1: Lin::new(store, &format!("{name}.conv.pw1"), dim, 2 * dim, true, rng),
            dw_w: store.add_glorot(format!("{name}.conv.dw.w"), kernel, dim, rng),
            dw_b: store.add_zeros(format!("{name}.conv.dw.b"), 1, dim),
            dw_norm: Norm::new(store, &format!("{name}.conv.dw_norm"), dim),
            pw2: Lin::new(store, &format!("{name}.conv.pw2"), dim, dim, true, rng),
            ff2: Ffn::new(store, &format!("{name}.ff2"), dim, ffn, Act::Silu, rng),
            out_norm: Norm::new(store, &format!("{name}.out_norm"), dim),
            heads,
        }
    }

    /// `offsets` is the shared [`offset_table`] constant for this batch.
    pub fn apply(&self, f: &mut Fwd, x: Var, segs: &[Seg], offsets: Var) -> Var {
        let maxlen = segs.iter().map(|s| s.len).max().unwrap_or(1);
        let h = self.ff1.apply(f, x);
        let x = f.tape.weighted_sum(&[(x, 1.0), (h, 0.5)]);

        let h = self.att_norm.apply(f, x);
        let q = self.att.q.apply(f, h);
        let k = self.att.k.apply(f, h);
        let v = self.att.v.apply(f, h);
        let pw = f.p(self.pos);
        let pos = f.tape.matmul(offsets, pw);
        let bias_u = f.p(self.bias_u);
        let bias_v = f.p(self.bias_v);
        let a = f.tape.attention(AttnArgs {
            q,
            k,
            v,
            heads: self.heads,
            causal: false,
            q_segs: segs,
            k_segs: segs,
            rel: Some(RelPos {
                pos,
                center: maxlen - 1,
                bias_u,
                bias_v,
            }),
        });
        let a = self.att.o.apply(f, a);
        let a = f.drop(a);
        let x = f.tape.add(x, a);

        let h = self.conv_norm.apply(f, x);
        let h = self.pw1.apply(f, h);
        let h = f.tape.glu(h);
        let w = f.p(self.dw_w);
        let b = f.p(self.dw_b);
        let h = f.tape.depthwise_conv(h, w, b, segs);
        let h = self.dw_norm.apply(f, h);
        let h = f.tape.silu(h);
        let h = self.pw2.apply(f, h);
        let h = f.drop(h);
        let x = f.tape.add(x, h);

        let h = self.ff2.apply(f, x);
        let x = f.tape.weighted_sum(&[(x, 1.0), (h, 0.5)]);
        self.out_norm.apply(f, x)
    }
}

pub(crate) struct DecoderBlock {
    pub self_norm: Norm,
    pub self_att: Mha,
    pub cross_norm: Norm,
    pub cross_att: Mha,
    pub ffn: Ffn,
    pub heads: usize,
}

/// Encoder memory projected into one block's cross-attention keys and values.
pub(crate) struct CrossKv {
    pub k: Var,
    pub v: Var,
}

impl DecoderBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, ffn: usize, heads: usize, rng: &mut impl Rng) -> Self {
        Self {
            self_norm: Norm::new(store, &format!("{name}.self.norm"), dim),
            self_att: Mha::new(store, &format!("{name}.self"), dim, rng),
            cross_norm: Norm::new(store, &format!("{name}.cross.norm"), dim),
            cross_att: Mha::new(store, &format!("{name}.cross"), dim, rng),
            ffn: Ffn::new(store, &format!("{name}.ffn"), dim, ffn, Act::Relu, rng),
            heads,
        }
    }

    pub fn cross_kv(&self, f: &mut Fwd, memory: Var) -> CrossKv {
        CrossKv {
            k: self.cross_att.k.apply(f, memory),
            v: self.cross_att.v.apply(f, memory),
        }
    }

    /// `segs` describe the target rows; `mem_segs[i]` the encoder rows that
    /// target segment `i` attends to.
    pub fn apply(&self, f: &mut Fwd, x: Var, segs: &[Seg], causal: bool, mem: &CrossKv, mem_segs: &[Seg]) -> Var {
        let h = self.self_norm.apply(f, x);
        let q = self.self_att.q.apply(f, h);
        let k = self.self_att.k.apply(f, h);
        let v = self.self_att.v.apply(f, h);
        let a = f.tape.attention(AttnArgs {
            q,
            k,
            v,
            heads: self.heads,
            causal,
            q_segs: segs,
            k_segs: segs,
            rel: None,
        });
        let a = self.self_att.o.apply(f, a);
        let a = f.drop(a);
        let x = f.tape.add(x, a);

        let h = self.cross_norm.apply(f, x);
        let q = self.cross_att.q.apply(f, h);
        let a = f.tape.attention(AttnArgs {
            q,
            k: mem.k,
            v: mem.v,
            heads: self.heads,
            causal: false,
            q_segs: segs,
            k_segs: mem_segs,
            rel: None,
        });
        let a = self.cross_att.o.apply(f, a);
        let a = f.drop(a);
        let x = f.tape.add(x, a);

        let h = self.ffn.apply(f, x);
        f.tape.add(x, h)
    }
}
