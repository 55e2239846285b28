use serde::{Deserialize, Serialize};

use super::mat::Mat;
use super::param::ParamStore;

/// Linear warmup followed by inverse-square-root decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup_steps: usize,
}

impl Schedule {
    pub fn lr(&self, step: usize) -> f64 {
        let step = step.max(1) as f64;
        let warm = self.warmup_steps.max(1) as f64;
        if step < warm {
            self.peak_lr * step / warm
        } else {
            self.peak_lr * (warm / step).sqrt()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 1.0,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    schedule: Schedule,
    step: usize,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig, schedule: Schedule) -> Self {
        let zeros: Vec<Mat> = store.iter().map(|(_, p)| Mat::zeros(p.rows(), p.cols())).collect();
        Self {
            cfg,
            schedule,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step.max(1))
    }

    /// Applies one update. Returns the pre-clip global gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Mat>]) -> f64 {
        self.step += 1;
        let norm = grads
            .iter()
            .flatten()
            .map(Mat::sq_norm)
            .sum::<f64>()
            .sqrt();
        let clip = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        let lr = self.schedule.lr(self.step);
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let p = store.get_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gr = gv * clip;
                *mv = self.cfg.beta1 * *mv + (1.0 - self.cfg.beta1) * gr;
                *vv = self.cfg.beta2 * *vv + (1.0 - self.cfg.beta2) * gr * gr;
                let update = (*mv / bc1) / ((*vv / bc2).sqrt() + self.cfg.eps);
                *pv -= lr * (update + self.cfg.weight_decay * *pv);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = Schedule {
            peak_lr: 1e-3,
            warmup_steps: 100,
        };
        assert!(s.lr(10) < s.lr(50));
        assert!((s.lr(100) - 1e-3).abs() < 1e-15);
        assert!((s.lr(400) - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Mat::row_vector(vec![3.0, -2.0]));
        let mut opt = Adam::new(
            &store,
            AdamConfig::default(),
            Schedule {
                peak_lr: 0.1,
                warmup_steps: 1,
            },
        );
        for _ in 0..2000 {
            let g = store.get(id).map(|v| 2.0 * v);
            opt.step(&mut store, &[Some(g)]);
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }
}
