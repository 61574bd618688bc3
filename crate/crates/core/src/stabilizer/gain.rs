use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{invert, regressive_factor, rel_residual, spd_inverse};
use crate::timescale::{NodeKind, TimeScale, MEMBER_TOL};
use crate::transition::MatrixSignal;

use super::gramian::weighted_gramian;
use super::window::window_c;
use super::{ControlSystem, GramianOptions, WindowSpec};

/// Gain at one node of the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct GainEntry {
    pub t: f64,
    /// Effective graininess of the node (quadrature step on dense parts).
    pub step: f64,
    pub kind: NodeKind,
    pub k: DMatrix<f64>,
    /// `C(t)`.
    pub window_end: f64,
    /// Smallest singular value of the weighted Gramian on the window.
    pub min_sv: f64,
}

impl GainEntry {
    /// True graininess at the node.
    pub fn mu(&self) -> f64 {
        match self.kind {
            NodeKind::Scattered => self.step,
            NodeKind::Dense => 0.0,
        }
    }
}

/// Feedback gains over a prefix of a time scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub entries: Vec<GainEntry>,
    pub alpha: f64,
    pub spec: WindowSpec,
    /// Nodes of the requested range whose window leaves the stored scale.
    pub omitted: Vec<f64>,
    pub warnings: Vec<String>,
}

impl GainSchedule {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry in force at `t`: an exact node match, or the dense subnode
    /// whose step contains `t`.
    pub fn entry_at(&self, t: f64) -> Result<&GainEntry> {
        let p = self.entries.partition_point(|e| e.t <= t + MEMBER_TOL);
        if p == 0 {
            return Err(Error::Coverage { t });
        }
        let e = &self.entries[p - 1];
        let covered = (t - e.t).abs() <= MEMBER_TOL
            || (e.kind == NodeKind::Dense && t < e.t + e.step - MEMBER_TOL);
        if covered {
            Ok(e)
        } else {
            Err(Error::Coverage { t })
        }
    }

    pub fn k_at(&self, t: f64) -> Result<&DMatrix<f64>> {
        self.entry_at(t).map(|e| &e.k)
    }

    /// Time just after the last covered node.
    pub fn coverage_end(&self) -> Option<f64> {
        self.entries.last().map(|e| e.t + e.step)
    }

    pub fn max_gain_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| crate::linalg::spectral_norm(&e.k))
            .fold(0.0, f64::max)
    }
}

struct NodeGain {
    k: DMatrix<f64>,
    window_end: f64,
    min_sv: f64,
}

fn node_gain(
    sys: &ControlSystem,
    ts: &TimeScale,
    t: f64,
    mu: f64,
    alpha: f64,
    spec: &WindowSpec,
    opts: &GramianOptions,
) -> Result<NodeGain> {
    let end = window_c(ts, t, spec)?;
    let gw = weighted_gramian(sys, ts, t, end, alpha, opts)?;
    let (q, eps1, _) = spd_inverse(&gw, opts.invert_tolerance, t)?;
    let a = sys.a.eval(t, mu)?;
    let b = sys.b.eval(t, mu)?;
    let factor = regressive_factor(&a.transpose(), mu, t)?;
    let k = -(b.transpose() * invert(&factor, t)? * q);
    Ok(NodeGain {
        k,
        window_end: end,
        min_sv: eps1,
    })
}

/// `K(t) = -B^T (I + mu A^T)^-1 G_alpha(t, C(t))^-1`.
pub fn gain(
    sys: &ControlSystem,
    ts: &TimeScale,
    t: f64,
    alpha: f64,
    spec: &WindowSpec,
    opts: &GramianOptions,
) -> Result<DMatrix<f64>> {
    let mu = ts.mu(t)?;
    node_gain(sys, ts, t, mu, alpha, spec, opts).map(|g| g.k)
}

/// Gains at every mesh node of `[t0, tf)` whose window fits in the stored
/// scale. Nodes are evaluated in parallel; the result is ordered by time.
pub fn gain_schedule(
    sys: &ControlSystem,
    ts: &TimeScale,
    t0: f64,
    tf: f64,
    alpha: f64,
    spec: &WindowSpec,
    opts: &GramianOptions,
) -> Result<GainSchedule> {
    spec.validate()?;
    opts.validate()?;
    if !(alpha > 0.0) {
        return Err(Error::Validation(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let mesh = ts.mesh(t0, tf, opts.h)?;
    let results: Vec<_> = mesh
        .nodes
        .par_iter()
        .map(|node| {
            (
                node,
                node_gain(sys, ts, node.t, node.mu(), alpha, spec, opts),
            )
        })
        .collect();

    let mut entries = Vec::new();
    let mut omitted = Vec::new();
    let mut failures = Vec::new();
    for (node, res) in results {
        match res {
            Ok(g) => entries.push(GainEntry {
                t: node.t,
                step: node.step(),
                kind: node.kind,
                k: g.k,
                window_end: g.window_end,
                min_sv: g.min_sv,
            }),
            Err(Error::OutOfRange(_)) => omitted.push(node.t),
            Err(e) => failures.push((node.t, e.to_string())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Schedule { failures });
    }

    let mut warnings = Vec::new();
    if entries.is_empty() {
        warnings.push(format!(
            "no node of [{t0}, {tf}) admits a window of {} jump(s) inside the stored scale",
            spec.k
        ));
    }
    if let Some(w) = entries
        .windows(2)
        .find(|w| w[1].window_end < w[0].window_end)
    {
        warnings.push(format!(
            "controllability window is not monotone: C({}) = {} > C({}) = {}",
            w[0].t, w[0].window_end, w[1].t, w[1].window_end
        ));
    }
    Ok(GainSchedule {
        entries,
        alpha,
        spec: *spec,
        omitted,
        warnings,
    })
}

/// Closed loop `A + B K` with the reference entering through `B` (`N = I`).
/// Evaluating the closed-loop matrix outside the schedule is a coverage
/// error.
pub fn closed_loop(sys: &ControlSystem, schedule: &GainSchedule) -> Result<ControlSystem> {
    let (n, m) = (sys.n(), sys.m());
    if let Some(e) = schedule
        .entries
        .iter()
        .find(|e| e.k.nrows() != m || e.k.ncols() != n)
    {
        return Err(Error::Validation(format!(
            "gain at t = {} is {}x{}, expected {m}x{n}",
            e.t,
            e.k.nrows(),
            e.k.ncols()
        )));
    }
    let schedule = Arc::new(schedule.clone());
    let (a, b) = (sys.a.clone(), sys.b.clone());
    let a_hat = MatrixSignal::from_fn(n, n, move |t, mu| {
        let k = schedule.k_at(t)?;
        Ok(a.eval(t, mu)? + b.eval(t, mu)? * k)
    });
    ControlSystem::new(a_hat, sys.b.clone(), sys.c.clone())
}

/// Relative Frobenius residuals of the one-step Gramian identity
/// `(I + mu A) G(t, C) (I + mu A^T) = mu B B^T + G(sigma(t), C) / (1 + mu alpha)^4`
/// and of the two rearranged forms used to expand the closed-loop Lyapunov
/// decrement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResiduals {
    pub one_step: f64,
    pub left_factor: f64,
    pub right_factor: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        self.one_step.max(self.left_factor).max(self.right_factor)
    }
}

pub fn gramian_identity_residuals(
    sys: &ControlSystem,
    ts: &TimeScale,
    t: f64,
    alpha: f64,
    spec: &WindowSpec,
    opts: &GramianOptions,
) -> Result<IdentityResiduals> {
    let mu = ts.mu(t)?;
    if mu == 0.0 {
        return Ok(IdentityResiduals {
            one_step: 0.0,
            left_factor: 0.0,
            right_factor: 0.0,
        });
    }
    let n = sys.n();
    let end = window_c(ts, t, spec)?;
    let next = ts.sigma(t)?;
    let g_t = weighted_gramian(sys, ts, t, end, alpha, opts)?;
    let g_next = if next < end {
        weighted_gramian(sys, ts, next, end, alpha, opts)?
    } else {
        DMatrix::zeros(n, n)
    };
    let a = sys.a.eval(t, mu)?;
    let b = sys.b.eval(t, mu)?;
    let f = regressive_factor(&a, mu, t)?;
    let bbt = &b * b.transpose() * mu;
    let shrink = (1.0 + mu * alpha).powi(-4);

    let lhs = &f * &g_t * f.transpose();
    let rhs = &bbt + &g_next * shrink;
    let one_step = rel_residual(&lhs, &rhs);

    let f_inv = invert(&f, t)?;
    let f_inv_t = f_inv.transpose();
    let (q, _, _) = spd_inverse(&g_t, opts.invert_tolerance, t)?;
    let eye = DMatrix::<f64>::identity(n, n);
    let lhs2 = &eye - &f_inv * &bbt * &f_inv_t * &q;
    let rhs2 = &f_inv * &g_next * &f_inv_t * &q * shrink;
    let lhs3 = &eye - &q * &f_inv * &bbt * &f_inv_t;
    let rhs3 = &q * &f_inv * &g_next * &f_inv_t * shrink;
    Ok(IdentityResiduals {
        one_step,
        left_factor: rel_residual(&lhs2, &rhs2),
        right_factor: rel_residual(&lhs3, &rhs3),
    })
}

/// Residual of the one-step Gramian identity at `t` (0 at right-dense
/// points, where it degenerates).
pub fn gramian_identity_residual(
    sys: &ControlSystem,
    ts: &TimeScale,
    t: f64,
    alpha: f64,
    spec: &WindowSpec,
    opts: &GramianOptions,
) -> Result<f64> {
    gramian_identity_residuals(sys, ts, t, alpha, spec, opts).map(|r| r.one_step)
}
