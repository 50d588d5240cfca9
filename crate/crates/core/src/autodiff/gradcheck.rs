use alloc::format;
use alloc::vec::Vec;


use super::tape::{Tape, Var};
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Gradient magnitudes below this are compared on an absolute scale; it
    /// keeps finite-difference round-off on near-zero entries from reading
    /// as relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat entry)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub entries_checked: usize,
    pub passed: bool,
}

/// Relative error between an analytic and a numeric derivative.
///
/// Two zero derivatives have error 0.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of `loss` against central differences
/// for every entry of every tensor in `params`.
///
/// `loss` receives a fresh tape with `params` bound as tracked leaves (in
/// order) and must return a scalar node.
pub fn grad_check<F>(params: &[Tensor], mut loss: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(opts.h > 0.0) {
        return Err(contract("grad_check: h must be positive"));
    }
    let mut eval = |params: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = loss(&mut tape, &vars)?;
        Ok((tape, vars, root))
    };

    let (tape, vars, root) = eval(params)?;
    if !tape.value(root).item().is_finite() {
        return Err(Error::Numeric("grad_check: non-finite loss at the base point".into()));
    }
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.or_zeros(v, p))
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        entries_checked: 0,
        passed: true,
    };
    for p in 0..params.len() {
        for e in 0..params[p].numel() {
            let base = params[p].data()[e];
            work[p].data_mut()[e] = base + opts.h;
            let (t, _, r) = eval(&work)?;
            let plus = t.value(r).item();
            work[p].data_mut()[e] = base - opts.h;
            let (t, _, r) = eval(&work)?;
            let minus = t.value(r).item();
            work[p].data_mut()[e] = base;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "grad_check: non-finite loss perturbing parameter {p} entry {e}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = analytic[p].data()[e];
            let err = relative_error(a, numeric, opts.floor);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((p, e));
                    report.analytic_at_worst = a;
                    report.numeric_at_worst = numeric;
                }
            }
        }
    }
    report.passed = report.max_rel_error < opts.tol;
    Ok(report)
}
