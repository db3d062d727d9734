//! Central finite-difference checking of tape gradients.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

pub const STEP: f64 = 1e-5;
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Number of entries compared (those above the magnitude floor).
    pub compared: usize,
    pub max_rel_err: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Entries whose central stencil crossed a kink on one side and were
    /// compared against a one-sided difference instead.
    pub one_sided: usize,
    /// Entries with kinks on both sides, not compared.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }

    fn record(&mut self, name: &str, i: usize, numeric: f64, exact: f64) {
        let mag = numeric.abs().max(exact.abs());
        if mag <= MAGNITUDE_FLOOR {
            return;
        }
        self.compared += 1;
        let rel = (numeric - exact).abs() / mag;
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = Some((name.to_string(), i));
        }
    }
}

/// Compares `analytic` (by parameter name) against central differences of `f`.
///
/// `stride` > 1 checks every `stride`-th entry of each tensor, always starting
/// from the first.
pub fn check<F>(
    params: &ParamStore,
    analytic: &BTreeMap<String, Tensor>,
    stride: usize,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name).map_or(0, Tensor::len);
        for i in (0..n).step_by(stride.max(1)) {
            let orig = params.get(&name).unwrap().data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + STEP;
            let up = f(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig - STEP;
            let down = f(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            let exact = analytic.get(&name).map_or(0.0, |g| g.data()[i]);
            report.record(&name, i, (up - down) / (2.0 * STEP), exact);
        }
    }
    Ok(report)
}

/// Like [`check`] for functions with kinks. `f` returns the value and the
/// branch signature of the evaluation (see `Tape::branch_signature`).
///
/// Where the central stencil stays on the base point's piece the usual
/// central difference is used. Where one side leaves it, the second-order
/// one-sided difference `(3 f(x) - 4 f(x -+ h/2) + f(x -+ h)) / h` on the
/// other side is used. Entries with kinks on both sides are skipped.
pub fn check_piecewise<F>(
    params: &ParamStore,
    analytic: &BTreeMap<String, Tensor>,
    stride: usize,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Vec<usize>)>,
{
    let mut report = GradCheckReport::default();
    let (base, base_sig) = f(params)?;
    let mut work = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name).map_or(0, Tensor::len);
        for i in (0..n).step_by(stride.max(1)) {
            let orig = params.get(&name).unwrap().data()[i];
            let mut at = |x: f64, work: &mut ParamStore| -> Result<(f64, bool)> {
                work.get_mut(&name).unwrap().data_mut()[i] = x;
                let (v, sig) = f(work)?;
                Ok((v, sig == base_sig))
            };
            let (up, up_ok) = at(orig + STEP, &mut work)?;
            let (down, down_ok) = at(orig - STEP, &mut work)?;
            let numeric = if up_ok && down_ok {
                Some((up - down) / (2.0 * STEP))
            } else {
                let sign = if down_ok { -1.0 } else { 1.0 };
                let (half, half_ok) = at(orig + sign * STEP / 2.0, &mut work)?;
                let far = if down_ok { down } else { up };
                ((up_ok || down_ok) && half_ok).then(|| sign * (4.0 * half - 3.0 * base - far) / STEP)
            };
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            let exact = analytic.get(&name).map_or(0.0, |g| g.data()[i]);
            match numeric {
                Some(v) => {
                    if !(up_ok && down_ok) {
                        report.one_sided += 1;
                    }
                    report.record(&name, i, v, exact);
                }
                None => report.skipped += 1,
            }
        }
    }
    Ok(report)
}
