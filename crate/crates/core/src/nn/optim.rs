use serde::{Deserialize, Serialize};

use super::graph::Mat;
use super::params::{Grads, ParamSet};

/// Linear warmup followed by inverse-square-root decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    /// Lower bound on the decayed rate.
    pub min_lr: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            peak_lr: 2e-3,
            warmup_steps: 100,
            min_lr: 1e-4,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        let s = (step + 1) as f64;
        let w = self.warmup_steps.max(1) as f64;
        if s < w {
            self.peak_lr * s / w
        } else {
            (self.peak_lr * (w / s).sqrt()).max(self.min_lr)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Mat> = params.iter().map(|(_, _, v)| Mat::zeros(v.dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.get(id);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.value_mut(id);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LrSchedule {
            peak_lr: 1.0,
            warmup_steps: 10,
            min_lr: 0.01,
        };
        assert!(s.lr(0) < s.lr(5));
        assert!((s.lr(9) - 1.0).abs() < 1e-12);
        assert!(s.lr(100) < s.lr(20));
        assert!(s.lr(1_000_000) >= 0.01);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut ps = ParamSet::new();
        let id = ps.add("w.x", Mat::from_elem((1, 2), 3.0));
        let mut opt = Adam::new(&ps);
        for _ in 0..500 {
            let mut g = Grads::zeros_like(&ps);
            let grad = ps.value(id) * 2.0;
            g.accumulate(id, &grad);
            opt.step(&mut ps, &g, 0.05);
        }
        assert!(ps.value(id).iter().all(|x| x.abs() < 1e-2));
    }
}
