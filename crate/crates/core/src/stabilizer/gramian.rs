use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{sym_eig_bounds, symmetrize};
use crate::timescale::{NodeKind, TimeScale};
use crate::transition::Stepper;

use super::{ControlSystem, GramianOptions};

/// Mesh sum `sum mu_eff(s) w(s) Phi(t0, sigma(s)) B B^T Phi(t0, sigma(s))^T`
/// with `w(s) = e_alpha(s, t0)^-4` (or 1 without a rate).
///
/// On dense subnodes `sigma(s) = s`, so the sum there is a left Riemann sum.
pub(crate) fn accumulate(
    sys: &ControlSystem,
    ts: &TimeScale,
    t0: f64,
    tf: f64,
    alpha: Option<f64>,
    opts: &GramianOptions,
) -> Result<DMatrix<f64>> {
    opts.validate()?;
    if !(t0 < tf) {
        return Err(Error::Validation(format!(
            "Gramian needs t0 < tf, got [{t0}, {tf}]"
        )));
    }
    let n = sys.n();
    let mesh = ts.mesh(t0, tf, opts.h)?;
    let mut stepper = Stepper::new(&sys.a, opts.h)?;
    // Phi(t0, s) at the current node and e_alpha(s, t0)
    let mut phi = DMatrix::<f64>::identity(n, n);
    let mut growth = 1.0f64;
    let mut sum = DMatrix::<f64>::zeros(n, n);
    for node in &mesh.nodes {
        let mu = node.mu();
        let b = sys.b.eval(node.t, mu)?;
        let back = stepper.backward(node)?;
        let weight = alpha.map_or(1.0, |_| growth.powi(-4)) * node.step();
        match node.kind {
            NodeKind::Scattered => {
                phi *= back;
                let pb = &phi * &b;
                sum += &pb * pb.transpose() * weight;
            }
            NodeKind::Dense => {
                let pb = &phi * &b;
                sum += &pb * pb.transpose() * weight;
                phi *= back;
            }
        }
        if let Some(alpha) = alpha {
            growth *= match node.kind {
                NodeKind::Scattered => 1.0 + mu * alpha,
                NodeKind::Dense => (alpha * node.step()).exp(),
            };
        }
    }
    Ok(symmetrize(&sum))
}

/// Controllability Gramian over `[t0, tf)`.
pub fn gramian(
    sys: &ControlSystem,
    ts: &TimeScale,
    t0: f64,
    tf: f64,
    opts: &GramianOptions,
) -> Result<DMatrix<f64>> {
    accumulate(sys, ts, t0, tf, None, opts)
}

/// Gramian with the weight `e_alpha(t0, s)^4`, `alpha > 0`.
pub fn weighted_gramian(
    sys: &ControlSystem,
    ts: &TimeScale,
    t0: f64,
    tf: f64,
    alpha: f64,
    opts: &GramianOptions,
) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Validation(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    accumulate(sys, ts, t0, tf, Some(alpha), opts)
}

/// Extreme eigenvalues of the Gramian and the invertibility verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllabilityReport {
    pub controllable: bool,
    pub eps1: f64,
    pub eps2: f64,
}

pub fn is_controllable(
    sys: &ControlSystem,
    ts: &TimeScale,
    t0: f64,
    tf: f64,
    opts: &GramianOptions,
) -> Result<ControllabilityReport> {
    let g = gramian(sys, ts, t0, tf, opts)?;
    let (eps1, eps2) = sym_eig_bounds(&g);
    let eps1 = eps1.max(0.0);
    Ok(ControllabilityReport {
        controllable: eps2 > 0.0 && eps1 > opts.invert_tolerance * eps2,
        eps1,
        eps2,
    })
}
