//! Minimal reverse-mode autodiff engine used by the feature encoder, the
//! conformer encoder and the unit decoders.

pub mod checkpoint;
pub mod gradcheck;
mod mat;
pub mod optim;
mod param;
mod tape;

pub use mat::{
    argmax, gemm_acc, layer_norm_rows, log_softmax_in_place, log_softmax_rows, log_sum_exp, sigmoid, silu,
    sinusoid_table, softmax_in_place, Mat, LAYER_NORM_EPS,
};
pub use param::{ParamId, ParamStore};
pub use tape::{conv_out_len, segs_from_lens, total_rows, AttnArgs, Grads, RelPos, Seg, Tape, Var};

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::gradcheck::check_input;
    use super::*;

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Projects a matrix to a scalar with fixed random weights so every
    /// output entry contributes to the checked gradient.
    fn project<'a>(tape: &mut Tape<'a>, y: Var, seed: u64) -> Var {
        let (r, c) = tape.value(y).shape();
        let w = tape.constant(rand_mat(r, c, seed));
        let p = tape.mul(y, w);
        let ones = tape.constant(Mat::filled(c, 1, 1.0));
        let s = tape.matmul(p, ones);
        let ones_r = tape.constant(Mat::filled(1, r, 1.0));
        tape.matmul(ones_r, s)
    }

    const TOL: f64 = 1e-6;

    #[test]
    fn elementwise_ops_gradients() {
        let x = rand_mat(3, 4, 1);
        for op in 0..5 {
            let rep = check_input(&x, 1e-6, |t, v| {
                let y = match op {
                    0 => t.relu(v),
                    1 => t.silu(v),
                    2 => t.glu(v),
                    3 => t.log_softmax(v),
                    _ => t.scale(v, -1.7),
                };
                project(t, y, 9)
            });
            assert!(rep.max_rel_err < TOL, "op {op}: {rep:?}");
        }
    }

    #[test]
    fn layer_norm_gradients() {
        let x = rand_mat(4, 6, 2);
        let g = rand_mat(1, 6, 3);
        let b = rand_mat(1, 6, 4);
        let rep = check_input(&x, 1e-6, |t, v| {
            let gv = t.constant(g.clone());
            let bv = t.constant(b.clone());
            let y = t.layer_norm(v, gv, bv);
            project(t, y, 5)
        });
        assert!(rep.max_rel_err < TOL, "{rep:?}");
        let rep = check_input(&g, 1e-6, |t, gv| {
            let xv = t.constant(x.clone());
            let bv = t.constant(b.clone());
            let y = t.layer_norm(xv, gv, bv);
            project(t, y, 5)
        });
        assert!(rep.max_rel_err < TOL, "{rep:?}");
    }

    #[test]
    fn unfold_and_depthwise_gradients() {
        let segs = segs_from_lens(&[5, 3]);
        let x = rand_mat(8, 3, 6);
        let rep = check_input(&x, 1e-6, |t, v| {
            let (u, _) = t.unfold(v, &segs, 5, 2, 2);
            project(t, u, 7)
        });
        assert!(rep.max_rel_err < TOL, "{rep:?}");
        let w = rand_mat(3, 3, 8);
        let rep = check_input(&x, 1e-6, |t, v| {
            let wv = t.constant(w.clone());
            let bv = t.constant(Mat::zeros(1, 3));
            let y = t.depthwise_conv(v, wv, bv, &segs);
            project(t, y, 10)
        });
        assert!(rep.max_rel_err < TOL, "{rep:?}");
        let rep = check_input(&w, 1e-6, |t, wv| {
            let xv = t.constant(x.clone());
            let bv = t.constant(Mat::zeros(1, 3));
            let y = t.depthwise_conv(xv, wv, bv, &segs);
            project(t, y, 10)
        });
        assert!(rep.max_rel_err < TOL, "{rep:?}");
    }

    #[test]
    fn unfold_shapes_follow_stride() {
        let segs = segs_from_lens(&[100]);
        let mut t = Tape::inference();
        let x = t.constant(Mat::zeros(100, 2));
        let (u, s1) = t.unfold(x, &segs, 5, 2, 2);
        assert_eq!(s1[0].len, 50);
        assert_eq!(t.value(u).cols(), 10);
    }

    #[test]
    fn pooling_gather_concat_embedding_gradients() {
        let segs = segs_from_lens(&[2, 4]);
        let x = rand_mat(6, 3, 11);
        let rep = check_input(&x, 1e-6, |t, v| {
            let p = t.mean_pool(v, &segs);
            let g = t.gather_rows(v, &[5, 0, 5]);
            let c = t.concat_cols(g, g);
            let a = project(t, p, 12);
            let b = project(t, c, 13);
            t.weighted_sum(&[(a, 1.0), (b, 0.5)])
        });
        assert!(rep.max_rel_err < TOL, "{rep:?}");
        let rep = check_input(&x, 1e-6, |t, table| {
            let e = t.embedding(table, &[1, 1, 4]);
            project(t, e, 14)
        });
        assert!(rep.max_rel_err < TOL, "{rep:?}");
    }

    #[test]
    fn smoothed_nll_gradient_and_zero_at_certainty() {
        let x = rand_mat(3, 5, 15);
        let rep = check_input(&x, 1e-6, |t, v| {
            let lp = t.log_softmax(v);
            t.smoothed_nll(lp, &[(0, 1), (2, 4)], 0.1, 2.0)
        });
        assert!(rep.max_rel_err < TOL, "{rep:?}");

        let mut sharp = Mat::filled(1, 4, -200.0);
        sharp.set(0, 2, 200.0);
        let mut t = Tape::inference();
        let v = t.constant(sharp);
        let lp = t.log_softmax(v);
        let l = t.smoothed_nll(lp, &[(0, 2)], 0.0, 1.0);
        assert!(t.value(l).item().abs() < 1e-12);
    }

    fn attention_loss<'a>(t: &mut Tape<'a>, q: Var, k: Var, v: Var, causal: bool, rel: bool, segs: &[Seg]) -> Var {
        let rel = if rel {
            let maxlen = segs.iter().map(|s| s.len).max().unwrap();
            let pos = t.constant(rand_mat(2 * maxlen - 1, 4, 21));
            let u = t.constant(rand_mat(1, 4, 22));
            let b = t.constant(rand_mat(1, 4, 23));
            Some(RelPos {
                pos,
                center: maxlen - 1,
                bias_u: u,
                bias_v: b,
            })
        } else {
            None
        };
        let y = t.attention(AttnArgs {
            q,
            k,
            v,
            heads: 2,
            causal,
            q_segs: segs,
            k_segs: segs,
            rel,
        });
        project(t, y, 24)
    }

    #[test]
    fn attention_gradients_all_inputs() {
        let segs = segs_from_lens(&[3, 4]);
        let q = rand_mat(7, 4, 30);
        let k = rand_mat(7, 4, 31);
        let v = rand_mat(7, 4, 32);
        for (causal, rel) in [(false, false), (true, false), (false, true), (true, true)] {
            for which in 0..3 {
                let rep = check_input([&q, &k, &v][which], 1e-6, |t, x| {
                    let mut ins = [None, None, None];
                    ins[which] = Some(x);
                    let mats = [&q, &k, &v];
                    let vars: Vec<Var> = (0..3)
                        .map(|i| ins[i].unwrap_or_else(|| t.constant(mats[i].clone())))
                        .collect();
                    attention_loss(t, vars[0], vars[1], vars[2], causal, rel, &segs)
                });
                assert!(rep.max_rel_err < TOL, "causal {causal} rel {rel} input {which}: {rep:?}");
            }
        }
    }
}
