//! Central finite-difference gradient checks.
//!
//! The numerical side only ever calls the forward function, so it stays
//! independent of the backward rules it is checking.

use serde::Serialize;

use super::graph::{Graph, Var};
use super::network::Network;
use super::params::Bindings;
use super::tensor::Tensor;
use crate::error::{invalid, Result};

/// Outcome of comparing analytic and numerical derivatives.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub label: String,
    pub probes: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_error < rel_tol
    }
}

/// Relative error with a floor on the denominator, so that two tiny values
/// that agree to round-off do not register as a large relative miss.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-7);
    (analytic - numeric).abs() / denom
}

/// Check `∂f/∂inputs[i][j]` for every `(i, j)` in `probes`.
///
/// `f` builds a scalar on a fresh graph from the leaf handles it is given.
pub fn check_inputs<F>(label: &str, inputs: &[Tensor<f64>], probes: &[(usize, usize)], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheckReport { label: label.to_string(), probes: probes.len(), max_rel_error: 0.0, max_abs_error: 0.0 };
    for &(i, j) in probes {
        if i >= inputs.len() || j >= inputs[i].data().len() {
            return invalid(format!("probe ({i}, {j}) out of range"));
        }
        let analytic = grads.get(vars[i]).map_or(0.0, |g| g[j]);
        let mut plus = inputs.to_vec();
        plus[i].data_mut()[j] += h;
        let mut minus = inputs.to_vec();
        minus[i].data_mut()[j] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        report.max_rel_error = report.max_rel_error.max(rel_error(analytic, numeric));
        report.max_abs_error = report.max_abs_error.max((analytic - numeric).abs());
    }
    Ok(report)
}
/// Check `∂f/∂param[i][j]` for every `(i, j)` in `probes`. `f` runs the
/// network on a fresh graph and returns the scalar with its parameter
/// bindings.
pub fn check_params<F>(label: &str, net: &Network<f64>, probes: &[(usize, usize)], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Network<f64>) -> Result<(Var, Bindings)>,
{
    let eval = |n: &Network<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let (out, _) = f(&mut g, n)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let (out, bindings) = f(&mut g, net)?;
    let grads = g.backward(out)?;
    let mut report = GradCheckReport { label: label.to_string(), probes: probes.len(), max_rel_error: 0.0, max_abs_error: 0.0 };
    for &(i, j) in probes {
        if i >= net.params().len() || j >= net.params().get(i).len() {
            return invalid(format!("parameter probe ({i}, {j}) out of range"));
        }
        let analytic = grads.get(bindings.0[i]).map_or(0.0, |g| g[j]);
        let mut plus = net.clone();
        plus.params_mut().get_mut(i).value[j] += h;
        let mut minus = net.clone();
        minus.params_mut().get_mut(i).value[j] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        report.max_rel_error = report.max_rel_error.max(rel_error(analytic, numeric));
        report.max_abs_error = report.max_abs_error.max((analytic - numeric).abs());
    }
    Ok(report)
}
