//! Central finite-difference oracle for [`Tape`](super::Tape) gradients.

use alloc::vec::Vec;

use super::autodiff::{Gradients, ParamId, ParamSet, Tape, Var};
use crate::error::Result;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Worst per-entry mismatch between analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: Option<(ParamId, usize)>,
    pub entries_checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps entries that are zero
/// up to roundoff from dominating the ratio.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = libm::fabs(analytic).max(libm::fabs(numeric)).max(floor);
    libm::fabs(analytic - numeric) / denom
}

/// Compares `backward` of the scalar produced by `build` against central
/// differences over every parameter entry (or every `stride`-th entry).
pub fn check<F>(params: &ParamSet, step: f64, stride: usize, build: F) -> Result<GradCheck>
where
    F: Fn(&ParamSet, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = build(params, &mut tape)?;
    let analytic: Gradients = tape.backward(loss, params)?;
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut t = Tape::new();
        let l = build(p, &mut t)?;
        Ok(t.value(l).data()[0])
    };
    let mut probe = params.clone();
    let mut result = GradCheck { max_rel_error: 0.0, worst: None, entries_checked: 0 };
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        for j in (0..n).step_by(stride.max(1)) {
            let orig = params.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + step;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig - step;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic.get(id).data()[j], numeric, 1e-6);
            result.entries_checked += 1;
            if err > result.max_rel_error {
                result.max_rel_error = err;
                result.worst = Some((id, j));
            }
        }
    }
    Ok(result)
}
