//! Controllability Gramians, the controllability window, the stabilizing
//! gain schedule and its Lyapunov certificate.

mod certificate;
mod gain;
mod gramian;
mod window;

pub use certificate::{certify, StabilityCertificate};
pub use gain::{
    closed_loop, gain, gain_schedule, gramian_identity_residual, gramian_identity_residuals,
    GainEntry, GainSchedule, IdentityResiduals,
};
pub use gramian::{gramian, is_controllable, weighted_gramian, ControllabilityReport};
pub use window::{classify_window, window_c, WindowBranch};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timescale::TimeScale;
use crate::transition::MatrixSignal;

/// `x^Delta = A(t) x + B(t) u`, `y = C(t) x` (no feedthrough term).
#[derive(Debug, Clone)]
pub struct ControlSystem {
    pub a: MatrixSignal,
    pub b: MatrixSignal,
    pub c: Option<MatrixSignal>,
}

impl ControlSystem {
    pub fn new(a: MatrixSignal, b: MatrixSignal, c: Option<MatrixSignal>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n || n == 0 {
            return Err(Error::Validation(format!(
                "A must be square and nonempty, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if b.rows() != n || b.cols() == 0 || b.cols() > n {
            return Err(Error::Validation(format!(
                "B must be {n}xm with 1 <= m <= {n}, got {}x{}",
                b.rows(),
                b.cols()
            )));
        }
        if let Some(c) = &c {
            if c.cols() != n || c.rows() == 0 || c.rows() > n {
                return Err(Error::Validation(format!(
                    "C must be px{n} with 1 <= p <= {n}, got {}x{}",
                    c.rows(),
                    c.cols()
                )));
            }
        }
        Ok(Self { a, b, c })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }
}

/// Parameters of the controllability window `C(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Number of forward jumps on scattered stretches.
    pub k: usize,
    /// Window width at right-dense points.
    pub delta1: f64,
    /// Extra width when the jump chain runs into a dense part.
    pub delta2: f64,
    /// Upper bound on `C(t) - t`.
    pub m_max: f64,
}

impl WindowSpec {
    pub fn new(k: usize, delta1: f64, delta2: f64, m_max: f64) -> Result<Self> {
        let spec = Self {
            k,
            delta1,
            delta2,
            m_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A window of `k` jumps with the widths unused on purely discrete scales
    /// and `m_max` taken as the span of `ts`.
    pub fn jumps(k: usize, ts: &TimeScale) -> Self {
        Self {
            k,
            delta1: 0.5,
            delta2: 0.05,
            m_max: (ts.max() - ts.min()).max(f64::MIN_POSITIVE),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || !(self.delta1 > 0.0) || !(self.delta2 > 0.0) || !(self.m_max > 0.0) {
            return Err(Error::Validation(format!(
                "window needs k >= 1 and positive delta1, delta2, m_max (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Numerical settings for Gramian evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramianOptions {
    /// Quadrature step on dense parts.
    pub h: f64,
    /// Minimum `lambda_min / lambda_max` accepted when inverting a Gramian.
    pub invert_tolerance: f64,
}

impl Default for GramianOptions {
    fn default() -> Self {
        Self {
            h: 1e-3,
            invert_tolerance: 1e-10,
        }
    }
}

impl GramianOptions {
    pub fn for_scale(ts: &TimeScale) -> Self {
        Self {
            h: ts.default_step(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !(self.invert_tolerance > 0.0 && self.invert_tolerance < 1.0) {
            return Err(Error::Validation(format!(
                "need h > 0 and invert_tolerance in (0, 1), got {self:?}"
            )));
        }
        Ok(())
    }
}
