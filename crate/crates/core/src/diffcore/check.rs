use ndarray::Array2;

use super::{Graph, NodeId};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so entries whose true gradient is
/// zero are judged on absolute error instead of dividing by round-off.
const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_error: f64,
    /// Row/column of the entry with the largest error.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn evaluate<F>(f: &F, params: &[Array2<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &ids)?;
    let shape = g.shape(loss);
    if shape != (1, 1) {
        return Err(Error::NonScalarLoss { shape });
    }
    Ok(g.scalar_value(loss))
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with half-width `step`, entry by entry. `f` receives one leaf
/// per array in `params` and must be deterministic.
pub fn gradient_check<F>(f: F, params: &[Array2<f64>], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Array2<f64>> = ids.iter().map(|&id| g.grad_or_zeros(id)).collect();
    drop(g);

    let mut work: Vec<Array2<f64>> = params.to_vec();
    let mut reports = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("analytic gradient of parameter {pi}"),
            });
        }
        let mut rep = ParamCheck {
            index: pi,
            max_rel_error: 0.0,
            worst: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
        };
        let (rows, cols) = grad.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = work[pi][[r, c]];
                work[pi][[r, c]] = orig + step;
                let plus = evaluate(&f, &work)?;
                work[pi][[r, c]] = orig - step;
                let minus = evaluate(&f, &work)?;
                work[pi][[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                if !numeric.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("finite difference of parameter {pi} at ({r}, {c})"),
                    });
                }
                let a = grad[[r, c]];
                let err = relative_error(a, numeric);
                if err > rep.max_rel_error || (r, c) == (0, 0) {
                    rep.max_rel_error = err;
                    rep.worst = (r, c);
                    rep.analytic = a;
                    rep.numeric = numeric;
                }
            }
        }
        reports.push(rep);
    }
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: reports,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    })
}
