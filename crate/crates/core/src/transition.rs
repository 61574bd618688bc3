//! Transition matrices `Phi_A(t, t0)` of `X^Delta = A(t) X`, `X(t0) = I`.
//!
//! Scattered nodes use the exact one-step update `I + mu A`. Dense subnodes
//! use an exact matrix exponential when `A` does not vary along the dense
//! parts, and classical RK4 otherwise.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{expm, invert, regressive_factor, DET_MARGIN};
use crate::timescale::{MeshNode, NodeKind, TimeScale};

type MatrixFn = dyn Fn(f64, f64) -> Result<DMatrix<f64>> + Send + Sync;
type GrainFn = dyn Fn(f64) -> DMatrix<f64> + Send + Sync;

#[derive(Clone)]
enum SignalKind {
    Constant(DMatrix<f64>),
    /// Depends on the local graininess only (sample-and-hold models).
    Graininess(Arc<GrainFn>),
    General(Arc<MatrixFn>),
}

/// A matrix-valued function on a time scale, evaluated at `(t, mu(t))`.
#[derive(Clone)]
pub struct MatrixSignal {
    rows: usize,
    cols: usize,
    kind: SignalKind,
}

impl fmt::Debug for MatrixSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            SignalKind::Constant(m) => format!("Constant({m:?})"),
            SignalKind::Graininess(_) => "Graininess(..)".to_string(),
            SignalKind::General(_) => "General(..)".to_string(),
        };
        write!(f, "MatrixSignal {{ {}x{}, {kind} }}", self.rows, self.cols)
    }
}

impl MatrixSignal {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            kind: SignalKind::Constant(m),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    /// A signal whose value depends only on the graininess at the node.
    pub fn from_graininess(
        rows: usize,
        cols: usize,
        f: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            rows,
            cols,
            kind: SignalKind::Graininess(Arc::new(f)),
        }
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        f: impl Fn(f64, f64) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            rows,
            cols,
            kind: SignalKind::General(Arc::new(f)),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Whether the value is the same at every dense point.
    pub fn frozen_on_dense(&self) -> bool {
        !matches!(self.kind, SignalKind::General(_))
    }

    pub fn eval(&self, t: f64, mu: f64) -> Result<DMatrix<f64>> {
        let m = match &self.kind {
            SignalKind::Constant(m) => m.clone(),
            SignalKind::Graininess(f) => f(mu),
            SignalKind::General(f) => f(t, mu)?,
        };
        if m.nrows() != self.rows || m.ncols() != self.cols {
            return Err(Error::Validation(format!(
                "signal at t = {t} is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                self.rows,
                self.cols
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "signal has non-finite entries at t = {t}"
            )));
        }
        Ok(m)
    }
}

/// `Phi_A(t, t0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub value: DMatrix<f64>,
    pub t: f64,
    pub t0: f64,
}

/// Per-node one-step transition factors, with the dense exponentials cached
/// by step length for frozen signals.
pub(crate) struct Stepper<'a> {
    a: &'a MatrixSignal,
    h: f64,
    n: usize,
    cache: HashMap<u64, (DMatrix<f64>, DMatrix<f64>)>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(a: &'a MatrixSignal, h: f64) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::Validation(format!(
                "A must be square, got {}x{}",
                a.rows, a.cols
            )));
        }
        if !(h > 0.0) {
            return Err(Error::Validation(format!("step must be positive, got {h}")));
        }
        Ok(Self {
            a,
            h,
            n: a.rows,
            cache: HashMap::new(),
        })
    }

    fn dense_pair(&mut self, node: &MeshNode) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let step = node.step();
        if self.a.frozen_on_dense() {
            if let Some(p) = self.cache.get(&step.to_bits()) {
                return Ok(p.clone());
            }
            let a = self.a.eval(node.t, 0.0)?;
            let pair = (expm(&(&a * step)), expm(&(&a * -step)));
            self.cache.insert(step.to_bits(), pair.clone());
            Ok(pair)
        } else {
            let fwd = rk4(self.a, node.t, node.next, self.h, self.n)?;
            let bwd = rk4(self.a, node.next, node.t, self.h, self.n)?;
            Ok((fwd, bwd))
        }
    }

    /// `Phi(next, t)` for the node.
    pub(crate) fn forward(&mut self, node: &MeshNode) -> Result<DMatrix<f64>> {
        match node.kind {
            NodeKind::Scattered => {
                let mu = node.mu();
                Ok(DMatrix::identity(self.n, self.n) + self.a.eval(node.t, mu)? * mu)
            }
            NodeKind::Dense => Ok(self.dense_pair(node)?.0),
        }
    }

    /// `Phi(t, next)` for the node; fails on a non-regressive scattered step.
    pub(crate) fn backward(&mut self, node: &MeshNode) -> Result<DMatrix<f64>> {
        match node.kind {
            NodeKind::Scattered => {
                let m = regressive_factor(&self.a.eval(node.t, node.mu())?, node.mu(), node.t)?;
                invert(&m, node.t)
            }
            NodeKind::Dense => Ok(self.dense_pair(node)?.1),
        }
    }
}

/// RK4 for `X' = A(tau) X` from `from` to `to` (either direction), with
/// steps no longer than `h`.
fn rk4(a: &MatrixSignal, from: f64, to: f64, h: f64, n: usize) -> Result<DMatrix<f64>> {
    let span = to - from;
    let steps = (span.abs() / h - 1e-9).ceil().max(1.0) as usize;
    let dt = span / steps as f64;
    let mut x = DMatrix::<f64>::identity(n, n);
    for i in 0..steps {
        let tau = from + dt * i as f64;
        let a0 = a.eval(tau, 0.0)?;
        let am = a.eval(tau + 0.5 * dt, 0.0)?;
        let a1 = a.eval(tau + dt, 0.0)?;
        let k1 = &a0 * &x;
        let k2 = &am * (&x + &k1 * (0.5 * dt));
        let k3 = &am * (&x + &k2 * (0.5 * dt));
        let k4 = &a1 * (&x + &k3 * dt);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    Ok(x)
}

/// Transition matrix `Phi_A(t, t0)`.
///
/// Forward (`t >= t0`) products accumulate left-multiplicatively in
/// increasing time; backward propagation multiplies inverse factors and
/// fails at the first non-regressive node.
pub fn phi(a: &MatrixSignal, ts: &TimeScale, t: f64, t0: f64, h: f64) -> Result<TransitionMatrix> {
    let mut stepper = Stepper::new(a, h)?;
    let n = a.rows;
    let (lo, hi) = if t >= t0 { (t0, t) } else { (t, t0) };
    let mesh = ts.mesh(lo, hi, h)?;
    let mut value = DMatrix::<f64>::identity(n, n);
    if t >= t0 {
        for node in &mesh.nodes {
            value = stepper.forward(node)? * value;
        }
    } else {
        for node in &mesh.nodes {
            value *= stepper.backward(node)?;
        }
    }
    Ok(TransitionMatrix { value, t, t0 })
}

/// Nodes of `[t0, tf)` where `I + mu A` is (numerically) singular.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegressivityReport {
    pub flagged: Vec<(f64, f64)>,
    pub checked: usize,
}

impl RegressivityReport {
    pub fn is_regressive(&self) -> bool {
        self.flagged.is_empty()
    }
}

pub fn check_regressive(
    a: &MatrixSignal,
    ts: &TimeScale,
    t0: f64,
    tf: f64,
) -> Result<RegressivityReport> {
    if a.rows != a.cols {
        return Err(Error::Validation(format!(
            "A must be square, got {}x{}",
            a.rows, a.cols
        )));
    }
    // Dense nodes have mu = 0, so only the scattered ones matter; the
    // quadrature step does not influence which scattered nodes exist.
    let mesh = ts.mesh(t0, tf, 1.0)?;
    let mut report = RegressivityReport::default();
    for node in mesh.nodes.iter().filter(|n| n.kind == NodeKind::Scattered) {
        report.checked += 1;
        let m = DMatrix::identity(a.rows, a.rows) + a.eval(node.t, node.mu())? * node.mu();
        let det = m.determinant();
        let scale = m.norm().powi(a.rows as i32).max(f64::MIN_POSITIVE);
        if !(det.abs() > DET_MARGIN * scale) {
            report.flagged.push((node.t, det));
        }
    }
    Ok(report)
}
