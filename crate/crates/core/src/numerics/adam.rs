use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for every tensor of one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = |(_, t): (&str, &Tensor)| Tensor::zeros(t.shape());
        AdamState {
            config,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. `grads` holds one optional gradient per
    /// parameter; a missing gradient is treated as zero.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::invalid(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if let Some(g) = g {
                if g.shape() != params.get(id).shape() {
                    return Err(Error::shape("adam_step", params.get(id).shape(), g.shape()));
                }
            }
            if self.first[id.index()].shape() != params.get(id).shape() {
                return Err(Error::shape(
                    "adam_step",
                    params.get(id).shape(),
                    self.first[id.index()].shape(),
                ));
            }
        }

        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (id, g) in params.ids().zip(grads) {
            let i = id.index();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.as_ref().map_or(0.0, |g| g.data()[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                p[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("p", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_params(1.5);
        let mut s = AdamState::new(&p);
        s.step(&mut p, &[Some(Tensor::scalar(0.0))], 0.1).unwrap();
        assert_eq!(p.get(p.ids().next().unwrap()).item(), 1.5);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m = 0.1, v = 0.001; bias-corrected both become 1, so the step is lr / (1 + eps).
        let mut p = scalar_params(1.0);
        let mut s = AdamState::new(&p);
        s.step(&mut p, &[Some(Tensor::scalar(1.0))], 0.1).unwrap();
        let got = p.get(p.ids().next().unwrap()).item();
        assert!((got - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((got - 0.9).abs() < 1e-8);
    }

    #[test]
    fn identical_calls_are_bit_identical() {
        let mut p1 = scalar_params(0.3);
        let mut p2 = p1.clone();
        let mut s1 = AdamState::new(&p1);
        let mut s2 = s1.clone();
        for g in [0.7, -0.2, 1.3] {
            s1.step(&mut p1, &[Some(Tensor::scalar(g))], 0.01).unwrap();
            s2.step(&mut p2, &[Some(Tensor::scalar(g))], 0.01).unwrap();
        }
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = scalar_params(1.0);
        let mut s = AdamState::new(&p);
        assert!(s.step(&mut p, &[Some(Tensor::zeros(&[2]))], 0.1).is_err());
        assert!(s.step(&mut p, &[], 0.1).is_err());
    }
}
