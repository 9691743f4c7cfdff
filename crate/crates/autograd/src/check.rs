//! Central finite-difference gradient checking.

use crate::{Graph, Result, Tensor, Var};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for the relative error so that gradients which are
/// exactly zero compare on an absolute scale instead of blowing up.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Number of scalar partial derivatives compared.
    pub checked: usize,
}

/// Relative error between an analytic and a numeric partial derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Central differences of a scalar function with respect to every element of
/// every input tensor.
pub fn numeric_gradients<F>(f: &F, inputs: &[Tensor], step: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[t].shape());
        for e in 0..inputs[t].len() {
            let orig = work[t].data()[e];
            work[t].data_mut()[e] = orig + step;
            let plus = f(&work)?;
            work[t].data_mut()[e] = orig - step;
            let minus = f(&work)?;
            work[t].data_mut()[e] = orig;
            g.data_mut()[e] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Build the graph with `build` (inputs bound as params), backpropagate, and
/// compare against central differences of the same function.
pub fn check_gradients<B>(build: B, inputs: &[Tensor], step: f64) -> Result<GradCheck>
where
    B: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.scalar(out))
    };
    let numeric = numeric_gradients(&eval, inputs, step)?;
    Ok(compare(&analytic, &numeric))
}

/// Elementwise comparison of two gradient lists.
pub fn compare(analytic: &[Tensor], numeric: &[Tensor]) -> GradCheck {
    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    for (a, n) in analytic.iter().zip(numeric) {
        for (&x, &y) in a.data().iter().zip(n.data()) {
            report.max_rel_err = report.max_rel_err.max(relative_error(x, y));
            report.max_abs_err = report.max_abs_err.max((x - y).abs());
            report.checked += 1;
        }
    }
    report
}
