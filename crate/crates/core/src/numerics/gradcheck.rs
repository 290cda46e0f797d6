//! Central finite-difference oracle for tape gradients.
//!
//! Only forward values are used to build the numeric estimate, so the check
//! stays independent of the backward pass it audits.

use super::{ParamSet, Tape, Tensor, Var};

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor used by every gradient check in this crate. Entries below
/// it are compared on an absolute scale of `floor * tolerance`. Central
/// differences carry roundoff of about `ε·|loss|/step` (~1e-9 at step 1e-5),
/// so an exactly-zero gradient never reads as exactly zero numerically.
pub const DEFAULT_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// (input or parameter index, flat entry) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
}

impl GradReport {
    fn observe(&mut self, tensor: usize, entry: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric, DEFAULT_FLOOR);
        self.entries_checked += 1;
        if e > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = Some((tensor, entry));
        }
    }
}

/// Central differences of a scalar function of a flat vector.
pub fn finite_difference(x: &[f64], f: impl Fn(&[f64]) -> f64, step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let hi = f(&probe);
            probe[i] = orig - step;
            let lo = f(&probe);
            probe[i] = orig;
            (hi - lo) / (2.0 * step)
        })
        .collect()
}

/// Checks gradients of `build` with respect to each input tensor.
pub fn check_vars(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var, step: f64) -> GradReport {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");

    let eval = |probe: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = probe.iter().map(|x| t.leaf(x.clone())).collect();
        let l = build(&mut t, &vs);
        t.value(l).item()
    };

    let mut report = GradReport::default();
    let mut probe = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let zero = Tensor::zeros(input.shape());
        let analytic = grads.wrt(vars[ti]).unwrap_or(&zero);
        for e in 0..input.len() {
            let orig = input.data()[e];
            probe[ti].data_mut()[e] = orig + step;
            let hi = eval(&probe);
            probe[ti].data_mut()[e] = orig - step;
            let lo = eval(&probe);
            probe[ti].data_mut()[e] = orig;
            report.observe(ti, e, analytic.data()[e], (hi - lo) / (2.0 * step));
        }
    }
    report
}

/// Checks gradients of `build` with respect to every parameter in `params`.
pub fn check_params(params: &ParamSet, build: &dyn Fn(&mut Tape, &ParamSet) -> Var, step: f64) -> GradReport {
    let mut tape = Tape::new();
    let loss = build(&mut tape, params);
    let grads = tape.backward(loss).expect("scalar loss");

    let mut report = GradReport::default();
    let mut probe = params.clone();
    for id in params.ids() {
        let zero = Tensor::zeros(params.get(id).shape());
        let analytic = grads.param(id).unwrap_or(&zero).clone();
        for e in 0..params.get(id).len() {
            let orig = params.get(id).data()[e];
            probe.get_mut(id).data_mut()[e] = orig + step;
            let hi = {
                let mut t = Tape::new();
                let l = build(&mut t, &probe);
                t.value(l).item()
            };
            probe.get_mut(id).data_mut()[e] = orig - step;
            let lo = {
                let mut t = Tape::new();
                let l = build(&mut t, &probe);
                t.value(l).item()
            };
            probe.get_mut(id).data_mut()[e] = orig;
            report.observe(id.index(), e, analytic.data()[e], (hi - lo) / (2.0 * step));
        }
    }
    report
}
