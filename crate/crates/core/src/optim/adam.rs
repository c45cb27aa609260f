use serde::{Deserialize, Serialize};

use crate::gradcore::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for every entry of a parameter store.
///
/// Bias correction counts steps per segment, starting at the first step that
/// gives the segment a nonzero gradient. Segments that only join later (the
/// sky and shading terms after warm-up) then start with ordinary step sizes
/// instead of an undercorrected second moment.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: Vec<u64>,
    steps: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n: usize) -> Adam {
        Adam { cfg, m: vec![0.0; n], v: vec![0.0; n], t: Vec::new(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update from the store's gradient buffer. Entries whose gradient
    /// and moments are all zero are left untouched.
    pub fn step(&mut self, store: &mut ParameterStore) {
        assert_eq!(self.m.len(), store.len(), "optimizer built for a different store");
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let ranges: Vec<_> = store.segments().iter().map(|s| s.range()).collect();
        self.t.resize(ranges.len(), 0);
        let (values, grads) = store.values_with_grads();
        for (k, r) in ranges.into_iter().enumerate() {
            if self.t[k] == 0 && grads[r.clone()].iter().all(|&g| g == 0.0) {
                continue;
            }
            self.t[k] += 1;
            let t = self.t[k].min(i32::MAX as u64) as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for i in r {
                let g = grads[i];
                if g == 0.0 && self.m[i] == 0.0 && self.v[i] == 0.0 {
                    continue;
                }
                self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                let mh = self.m[i] / c1;
                let vh = self.v[i] / c2;
                values[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add_segment("p", &[1], |_| v);
        s
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut s = store(0.3);
        let mut a = Adam::new(AdamConfig::default(), 1);
        a.step(&mut s);
        assert_eq!(s.values()[0], 0.3);
    }

    #[test]
    fn late_segment_starts_its_own_bias_correction() {
        let mut s = store(0.0);
        s.add_segment("late", &[1], |_| 0.0);
        let mut a = Adam::new(AdamConfig::default(), 2);
        for _ in 0..100 {
            s.grads_mut()[0] = 1.0;
            a.step(&mut s);
        }
        s.grads_mut()[0] = 1.0;
        s.grads_mut()[1] = 1.0;
        a.step(&mut s);
        // a fresh segment's first step has magnitude lr, as for step one
        assert!((s.values()[1] + 1e-2 / (1.0 + 1e-8)).abs() < 1e-15, "{}", s.values()[1]);
        assert_eq!(a.steps(), 101);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(0.0);
        s.grads_mut()[0] = 1.0;
        let mut a = Adam::new(AdamConfig::default(), 1);
        a.step(&mut s);
        assert!((s.values()[0] + 1e-2 / (1.0 + 1e-8)).abs() < 1e-15);
        let mut s = store(0.0);
        s.grads_mut()[0] = -5.0;
        let mut a = Adam::new(AdamConfig::default(), 1);
        a.step(&mut s);
        assert!(s.values()[0] > 0.0);
    }
}
