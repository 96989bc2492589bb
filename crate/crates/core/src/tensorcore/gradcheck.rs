//! Central finite-difference checks against the tape's analytic gradients.

use super::tape::{Tape, Var};
use super::tensor::{ParamId, ParamSet};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over entries of `|analytic − numeric| / max(1, |numeric|)`
    pub max_rel_error: f64,
    /// parameter name and flat index of the worst entry
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Checks every parameter in `params`.
pub fn grad_check<F>(params: &mut ParamSet, h: f64, f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet, &mut Tape) -> Result<Var>,
{
    let ids: Vec<ParamId> = params.ids().collect();
    grad_check_params(params, &ids, h, f)
}

/// Checks only the listed parameters. `f` builds a scalar loss on a fresh tape.
pub fn grad_check_params<F>(
    params: &mut ParamSet,
    ids: &[ParamId],
    h: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet, &mut Tape) -> Result<Var>,
{
    params.zero_grad();
    let mut tape = Tape::new();
    let root = f(params, &mut tape)?;
    tape.backward(root, params)?;

    let mut eval = |params: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let root = f(params, &mut tape)?;
        Ok(tape.value(root).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for &id in ids {
        let analytic = params.get(id).grad.clone();
        for k in 0..analytic.len() {
            let orig = params.get(id).value.data()[k];
            params.get_mut(id).value.data_mut()[k] = orig + h;
            let plus = eval(params)?;
            params.get_mut(id).value.data_mut()[k] = orig - h;
            let minus = eval(params)?;
            params.get_mut(id).value.data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic.data()[k] - numeric).abs() / numeric.abs().max(1.0);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((params.get(id).name.clone(), k));
            }
        }
    }
    params.zero_grad();
    Ok(report)
}
