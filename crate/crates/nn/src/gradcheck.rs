//! Finite-difference verification of reverse-mode gradients.

use crate::graph::{Graph, Var};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the probe straddles a kink (e.g. relu at 0).
    pub skipped: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

struct Probe {
    max_rel_error: f64,
    checked: usize,
    skipped: usize,
}

impl Probe {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        }
    }

    fn coordinate(&mut self, analytic: f64, f_plus: f64, f_mid: f64, f_minus: f64) {
        let forward = (f_plus - f_mid) / FD_STEP;
        let backward = (f_mid - f_minus) / FD_STEP;
        let jump = (forward - backward).abs();
        if jump > 1e-7 && jump > 1e-2 * forward.abs().max(backward.abs()) {
            self.skipped += 1;
            return;
        }
        let central = (f_plus - f_minus) / (2.0 * FD_STEP);
        self.checked += 1;
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, central));
    }

    fn report(self) -> GradCheckReport {
        GradCheckReport {
            max_rel_error: self.max_rel_error,
            checked: self.checked,
            skipped: self.skipped,
        }
    }
}

fn eval_inputs<F>(f: &F, point: &[Tensor]) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars);
    g.value(out).data().iter().sum()
}

/// Compares reverse-mode gradients of `f` with respect to every coordinate
/// of `point` against central differences with step [`FD_STEP`].
pub fn grad_check<F>(f: F, point: &[Tensor]) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(point)
        .map(|(&v, t)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let f_mid = eval_inputs(&f, point);

    let mut probe = Probe::new();
    let mut work = point.to_vec();
    for (ti, t) in point.iter().enumerate() {
        for j in 0..t.len() {
            let x0 = t.data()[j];
            work[ti].data_mut()[j] = x0 + FD_STEP;
            let plus = eval_inputs(&f, &work);
            work[ti].data_mut()[j] = x0 - FD_STEP;
            let minus = eval_inputs(&f, &work);
            work[ti].data_mut()[j] = x0;
            probe.coordinate(analytic[ti].data()[j], plus, f_mid, minus);
        }
    }
    probe.report()
}

fn eval_params<F>(f: &F, params: &ParamSet) -> f64
where
    F: Fn(&mut Graph, &ParamSet) -> Var,
{
    let mut g = Graph::new();
    let out = f(&mut g, params);
    g.value(out).data().iter().sum()
}

/// Like [`grad_check`], but perturbs every scalar of a [`ParamSet`].
/// `max_coords` caps the number of probed scalars (spread evenly) for large models.
pub fn grad_check_params_sampled<F>(f: F, params: &ParamSet, max_coords: usize) -> GradCheckReport
where
    F: Fn(&mut Graph, &ParamSet) -> Var,
{
    let mut g = Graph::new();
    let out = f(&mut g, params);
    let grads = g.backward(out);
    let analytic = g.param_grads(&grads, params);
    let f_mid = eval_params(&f, params);

    let total = params.num_scalars();
    let stride = total.div_ceil(max_coords.max(1)).max(1);
    let mut probe = Probe::new();
    let mut work = params.clone();
    let mut flat = 0usize;
    for id in params.ids() {
        for j in 0..params.get(id).len() {
            if flat.is_multiple_of(stride) {
                let x0 = params.get(id).data()[j];
                work.get_mut(id).data_mut()[j] = x0 + FD_STEP;
                let plus = eval_params(&f, &work);
                work.get_mut(id).data_mut()[j] = x0 - FD_STEP;
                let minus = eval_params(&f, &work);
                work.get_mut(id).data_mut()[j] = x0;
                probe.coordinate(analytic[id.index()].data()[j], plus, f_mid, minus);
            }
            flat += 1;
        }
    }
    probe.report()
}

pub fn grad_check_params<F>(f: F, params: &ParamSet) -> GradCheckReport
where
    F: Fn(&mut Graph, &ParamSet) -> Var,
{
    grad_check_params_sampled(f, params, usize::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let pts = vec![Tensor::vector(vec![0.3, -1.2, 2.5])];
        let r = grad_check(
            |g, v| {
                let y = g.scale(v[0], 3.0);
                g.sum(y)
            },
            &pts,
        );
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn relu_kink_is_skipped() {
        let pts = vec![Tensor::vector(vec![0.0, 1.0])];
        let r = grad_check(
            |g, v| {
                let y = g.relu(v[0]);
                g.sum(y)
            },
            &pts,
        );
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 1);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // exp(x) but pretend via a detached copy that breaks the chain rule.
        let pts = vec![Tensor::vector(vec![0.5])];
        let r = grad_check(
            |g, v| {
                let e = g.exp(v[0]);
                let d = g.detach(e);
                g.mul(d, v[0])
            },
            &pts,
        );
        assert!(r.max_rel_error > 0.1);
    }
}
