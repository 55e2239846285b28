//! Autoregressive decoding with cached self-attention keys and values.
//!
//! Each decoded position stores its per-layer key/value rows in a node
//! linked to its prefix, so beam hypotheses share history without copying.

use std::rc::Rc;

use super::layers::{CrossKv, Fwd};
use super::{EncoderState, ModelKind, S2utModel};
use crate::error::Result;
use crate::nn::{argmax, log_softmax_in_place, segs_from_lens, sinusoid_table, softmax_in_place, Mat, Seg};

#[derive(Clone, Debug, PartialEq)]
pub struct ArHypothesis {
    pub units: Vec<usize>,
    /// Sum of token log-probabilities including eos.
    pub score: f64,
}

impl ArHypothesis {
    /// Score per emitted token (eos included).
    pub fn normalized(&self) -> f64 {
        self.score / (self.units.len() + 1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct ArOutput {
    pub best: ArHypothesis,
    /// Finished hypotheses in the order they completed.
    pub finalists: Vec<ArHypothesis>,
    pub forward_passes: usize,
}

struct Node {
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    parent: Option<Rc<Node>>,
}

/// Encoder memory split per decoder block and head.
struct Memory {
    heads: Vec<Vec<(Mat, Mat)>>,
}

fn split_heads(m: &Mat, heads: usize) -> Vec<Mat> {
    let dh = m.cols() / heads;
    (0..heads).map(|h| m.block(0, m.rows(), h * dh, dh)).collect()
}

impl S2utModel {
    fn ar_memory(&self, enc: &EncoderState) -> Memory {
        let heads = self.cfg.heads;
        Memory {
            heads: self
                .memory_mats(enc)
                .iter()
                .map(|(k, v)| split_heads(k, heads).into_iter().zip(split_heads(v, heads)).collect())
                .collect(),
        }
    }

    /// One decoder step for a batch of hypotheses at position `pos`.
    /// Returns `[batch x (unit_vocab + 1)]` log-probabilities and the new
    /// cache nodes.
    fn ar_step(&self, mem: &Memory, prev: &[Option<Rc<Node>>], tokens: &[usize], pos: usize) -> (Mat, Vec<Rc<Node>>) {
        let store = &self.store;
        let h = self.cfg.hidden;
        let heads = self.cfg.heads;
        let dh = h / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let b = tokens.len();
        let table = store.get(self.dec.embed);
        let pe = sinusoid_table(std::iter::once(pos as f64), h);
        let mut x = Mat::zeros(b, h);
        let emb_scale = (h as f64).sqrt();
        for (i, &t) in tokens.iter().enumerate() {
            for (j, o) in x.row_mut(i).iter_mut().enumerate() {
                *o = table.get(t, j) * emb_scale + pe.get(0, j);
            }
        }
        let mut new_k = vec![Vec::new(); b];
        let mut new_v = vec![Vec::new(); b];
        let mut scores = Vec::new();
        for (l, blk) in self.dec.blocks.iter().enumerate() {
            let hn = blk.self_norm.eval(store, &x);
            let q = blk.self_att.q.eval(store, &hn);
            let k = blk.self_att.k.eval(store, &hn);
            let v = blk.self_att.v.eval(store, &hn);
            let mut ctx = Mat::zeros(b, h);
            for i in 0..b {
                let mut keys: Vec<(&[f64], &[f64])> = vec![(k.row(i), v.row(i))];
                let mut node = prev[i].as_deref();
                while let Some(n) = node {
                    keys.push((&n.k[l], &n.v[l]));
                    node = n.parent.as_deref();
                }
                for hd in 0..heads {
                    let c = hd * dh..(hd + 1) * dh;
                    let qh = &q.row(i)[c.clone()];
                    scores.clear();
                    scores.extend(
                        keys.iter()
                            .map(|(kr, _)| qh.iter().zip(&kr[c.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale),
                    );
                    softmax_in_place(&mut scores);
                    let out = &mut ctx.row_mut(i)[c.clone()];
                    for (p, (_, vr)) in scores.iter().zip(&keys) {
                        for (o, vv) in out.iter_mut().zip(&vr[c.clone()]) {
                            *o += p * vv;
                        }
                    }
                }
                new_k[i].push(k.row(i).to_vec());
                new_v[i].push(v.row(i).to_vec());
            }
            x.add_assign(&blk.self_att.o.eval(store, &ctx));

            let hn = blk.cross_norm.eval(store, &x);
            let q = blk.cross_att.q.eval(store, &hn);
            let mut ctx = Mat::zeros(b, h);
            for (hd, (kh, vh)) in mem.heads[l].iter().enumerate() {
                let qh = q.block(0, b, hd * dh, dh);
                let mut s = qh.matmul_t(kh);
                for i in 0..b {
                    let row = s.row_mut(i);
                    row.iter_mut().for_each(|v| *v *= scale);
                    softmax_in_place(row);
                }
                ctx.add_block(0, hd * dh, &s.matmul(vh));
            }
            x.add_assign(&blk.cross_att.o.eval(store, &ctx));
            x.add_assign(&blk.ffn.eval(store, &x));
        }
        let xn = self.dec.out_norm.eval(store, &x);
        let mut logits = self.dec.out.eval(store, &xn);
        for i in 0..b {
            log_softmax_in_place(logits.row_mut(i));
        }
        let nodes = new_k
            .into_iter()
            .zip(new_v)
            .zip(prev)
            .map(|((k, v), p)| {
                Rc::new(Node {
                    k,
                    v,
                    parent: p.clone(),
                })
            })
            .collect();
        (logits, nodes)
    }

    /// Length-normalized beam search. Each step scores the alive
    /// hypotheses in one batched decoder call; eos candidates ranked within
    /// the top `beam` are finalized, and the search ends once `beam`
    /// hypotheses have finished. Generation is capped at `max_len` units.
    pub fn ar_beam_decode(&self, enc: &EncoderState, beam: usize) -> Result<ArOutput> {
        self.beam_search(enc, beam, None)
    }

    /// Beam search whose hypotheses all end after exactly `len` units: eos
    /// is blocked before step `len` and forced at it. Used to time decoding
    /// at a fixed output length.
    pub fn ar_beam_decode_fixed(&self, enc: &EncoderState, beam: usize, len: usize) -> Result<ArOutput> {
        if len == 0 {
            return Err(crate::Error::Parameter("fixed length must be positive".into()));
        }
        if len > self.cfg.max_len {
            return Err(crate::Error::Length { len, max: self.cfg.max_len });
        }
        self.beam_search(enc, beam, Some(len))
    }

    fn beam_search(&self, enc: &EncoderState, beam: usize, fixed: Option<usize>) -> Result<ArOutput> {
        self.require(ModelKind::Ar)?;
        if beam == 0 {
            return Err(crate::Error::Parameter("beam must be at least 1".into()));
        }
        let last = fixed.unwrap_or(self.cfg.max_len);
        let sp = self.specials();
        let mem = self.ar_memory(enc);
        let mut alive: Vec<(Vec<usize>, f64, Option<Rc<Node>>)> = vec![(Vec::new(), 0.0, None)];
        let mut finished: Vec<ArHypothesis> = Vec::new();
        let mut passes = 0;
        for step in 0..=last {
            let tokens: Vec<usize> = alive.iter().map(|(t, _, _)| t.last().copied().unwrap_or(sp.bos)).collect();
            let prev: Vec<Option<Rc<Node>>> = alive.iter().map(|(_, _, n)| n.clone()).collect();
            let (lp, nodes) = self.ar_step(&mem, &prev, &tokens, step);
            passes += 1;
            let mut cands: Vec<(f64, usize, usize)> = Vec::new();
            for (i, (_, score, _)) in alive.iter().enumerate() {
                if step == last {
                    cands.push((score + lp.get(i, sp.eos), i, sp.eos));
                } else if fixed.is_some() {
                    cands.extend(lp.row(i)[..sp.eos].iter().enumerate().map(|(w, l)| (score + l, i, w)));
                } else {
                    cands.extend(lp.row(i).iter().enumerate().map(|(w, l)| (score + l, i, w)));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::new();
            for (rank, &(score, i, w)) in cands.iter().take(2 * beam).enumerate() {
                if w == sp.eos {
                    if rank < beam && finished.len() < beam {
                        finished.push(ArHypothesis {
                            units: alive[i].0.clone(),
                            score,
                        });
                    }
                } else if next.len() < beam {
                    let mut units = alive[i].0.clone();
                    units.push(w);
                    next.push((units, score, Some(nodes[i].clone())));
                }
            }
            if finished.len() >= beam || next.is_empty() {
                break;
            }
            alive = next;
        }
        let best = finished
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.normalized().total_cmp(&b.normalized()).then(ib.cmp(ia)))
            .map(|(_, h)| h.clone())
            .expect("the final step forces eos");
        Ok(ArOutput {
            best,
            finalists: finished,
            forward_passes: passes,
        })
    }

    fn next_logprobs_with(&self, memory: &[(Mat, Mat)], src_len: usize, prefix: &[usize]) -> Vec<f64> {
        let mut f = Fwd::inference(&self.store);
        let mem: Vec<CrossKv> = memory
            .iter()
            .map(|(k, v)| CrossKv {
                k: f.tape.constant_ref(k),
                v: f.tape.constant_ref(v),
            })
            .collect();
        let segs = segs_from_lens(&[prefix.len()]);
        let mem_segs = [Seg { start: 0, len: src_len }];
        let lp = self.decoder_graph(&mut f, prefix, &segs, &mem, &mem_segs);
        f.tape.value(lp).row(prefix.len() - 1).to_vec()
    }

    /// Next-token log-probabilities (units then eos) after `bos` + `units`,
    /// from a full non-incremental pass.
    pub fn ar_next_logprobs(&self, enc: &EncoderState, units: &[usize]) -> Result<Vec<f64>> {
        self.require(ModelKind::Ar)?;
        let v = self.cfg.unit_vocab;
        self.check_tokens(units, |id| id < v)?;
        let mut prefix = vec![self.specials().bos];
        prefix.extend_from_slice(units);
        Ok(self.next_logprobs_with(&self.memory_mats(enc), enc.src_len, &prefix))
    }

    /// Greedy decoding that recomputes the full prefix on every step.
    /// Returns the hypothesis and the per-token log-probabilities
    /// (eos last).
    pub fn ar_greedy(&self, enc: &EncoderState) -> Result<(ArHypothesis, Vec<f64>)> {
        self.require(ModelKind::Ar)?;
        let sp = self.specials();
        let memory = self.memory_mats(enc);
        let mut prefix = vec![sp.bos];
        let mut steps = Vec::new();
        loop {
            let row = self.next_logprobs_with(&memory, enc.src_len, &prefix);
            let w = if prefix.len() > self.cfg.max_len {
                sp.eos
            } else {
                argmax(&row)
            };
            steps.push(row[w]);
            if w == sp.eos {
                break;
            }
            prefix.push(w);
        }
        Ok((
            ArHypothesis {
                units: prefix[1..].to_vec(),
                score: steps.iter().sum(),
            },
            steps,
        ))
    }
}
