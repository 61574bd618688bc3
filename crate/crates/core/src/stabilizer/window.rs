use crate::error::{Error, Result};
use crate::timescale::{TimeScale, MEMBER_TOL};

use super::WindowSpec;

/// Which case of the window definition produced `C(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowBranch {
    /// `t` is right-dense: `t + delta1`.
    Dense,
    /// All `k` jumps are strict: `sigma^k(t)`.
    Scattered,
    /// The jump chain reaches a right-dense point: `sigma^k(t) + delta2`.
    Mixed,
}

/// Controllability window end `C(t)`, snapped forward into the scale.
pub fn window_c(ts: &TimeScale, t: f64, spec: &WindowSpec) -> Result<f64> {
    classify_window(ts, t, spec).map(|(c, _)| c)
}

/// `C(t)` together with the branch that produced it.
pub fn classify_window(ts: &TimeScale, t: f64, spec: &WindowSpec) -> Result<(f64, WindowBranch)> {
    spec.validate()?;
    let (nominal, branch) = if ts.is_right_dense(t)? {
        (t + spec.delta1, WindowBranch::Dense)
    } else {
        let mut cur = t;
        let mut mixed = false;
        for i in 0..spec.k {
            if ts.is_right_dense(cur)? {
                mixed = true;
                break;
            }
            let next = ts.sigma(cur)?;
            if next == cur {
                return Err(Error::OutOfRange(format!(
                    "window at t = {t} needs {} jump(s) but the scale ends after {i}",
                    spec.k
                )));
            }
            cur = next;
        }
        if mixed {
            (cur + spec.delta2, WindowBranch::Mixed)
        } else {
            (cur, WindowBranch::Scattered)
        }
    };
    let snapped = ts.snap_forward(nominal).ok_or_else(|| {
        Error::OutOfRange(format!(
            "window end {nominal} at t = {t} lies past the truncated scale"
        ))
    })?;
    if snapped - t > spec.m_max + MEMBER_TOL {
        return Err(Error::OutOfRange(format!(
            "window at t = {t} ends at {snapped}, beyond the bound t + {}",
            spec.m_max
        )));
    }
    if snapped <= t {
        return Err(Error::Domain(format!(
            "window end {snapped} does not exceed t = {t}"
        )));
    }
    Ok((snapped, branch))
}
