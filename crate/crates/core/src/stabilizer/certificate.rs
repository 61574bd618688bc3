//! Lyapunov certificate for the closed loop, using the inverse weighted
//! Gramian as the Lyapunov matrix and checking the decrement of the
//! rate-shifted system `z^Delta = [A_hat (1 + mu alpha) + alpha I] z`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, sym_eig_bounds, sym_max_eig};
use crate::timescale::{NodeKind, TimeScale, MEMBER_TOL};

use super::gain::{GainEntry, GainSchedule};
use super::gramian::{gramian, weighted_gramian};
use super::{ControlSystem, GramianOptions};

/// Outcome of the Lyapunov check over the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    /// `min lambda_min(Q)`.
    pub eta: f64,
    /// `max lambda_max(Q)`.
    pub rho: f64,
    /// Achieved decrement rate `-max lambda_max(decrement)`.
    pub nu: f64,
    pub pass: bool,
    pub worst_node: f64,
    pub worst_margin: f64,
    /// Largest rate `nu' <= nu` for which `-nu'/rho` is positively
    /// regressive (equal to `nu` unless `mu nu >= rho` somewhere).
    pub nu_admissible: f64,
    /// Decrement floor `alpha / (eps2 (1 + mu_max alpha)^2)`.
    pub nu_floor: f64,
    /// `eps2 (1 + mu_max alpha)^2 / alpha`, the reciprocal of the floor.
    pub nu_floor_reciprocal: f64,
    /// Bounds `eps1 I <= G(t, C(t)) <= eps2 I` over the checked nodes.
    pub eps1: f64,
    pub eps2: f64,
    pub mu_max: f64,
    pub alpha: f64,
    pub nodes_checked: usize,
    /// Checked right-dense nodes (continuous-limit form of the decrement).
    pub dense_nodes_checked: usize,
    pub diagnostic: Option<String>,
}

impl StabilityCertificate {
    fn failed(alpha: f64, node: f64, msg: String) -> Self {
        Self {
            eta: 0.0,
            rho: 0.0,
            nu: f64::NEG_INFINITY,
            nu_admissible: 0.0,
            pass: false,
            worst_node: node,
            worst_margin: f64::NEG_INFINITY,
            nu_floor: 0.0,
            nu_floor_reciprocal: f64::INFINITY,
            eps1: 0.0,
            eps2: 0.0,
            mu_max: 0.0,
            alpha,
            nodes_checked: 0,
            dense_nodes_checked: 0,
            diagnostic: Some(msg),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

struct NodeData {
    q: DMatrix<f64>,
    q_bounds: (f64, f64),
    g_bounds: (f64, f64),
}

fn node_data(
    sys: &ControlSystem,
    ts: &TimeScale,
    e: &GainEntry,
    alpha: f64,
    opts: &GramianOptions,
) -> Result<NodeData> {
    let gw = weighted_gramian(sys, ts, e.t, e.window_end, alpha, opts)?;
    let (q, _, _) = spd_inverse(&gw, opts.invert_tolerance, e.t)?;
    let g = gramian(sys, ts, e.t, e.window_end, opts)?;
    Ok(NodeData {
        q_bounds: sym_eig_bounds(&q),
        q,
        g_bounds: sym_eig_bounds(&g),
    })
}

/// Checks the Lyapunov conditions for the closed loop `A + B K` with
/// `Q(t) = G_alpha(t, C(t))^-1`.
///
/// A scattered node needs `Q` at its successor, so the last entry of a
/// discrete run is not checked. Right-dense nodes use the continuous limit
/// `A_z^T Q + Q A_z + Q^Delta`, with `Q^Delta` from finite differences.
pub fn certify(
    sys: &ControlSystem,
    schedule: &GainSchedule,
    ts: &TimeScale,
    opts: &GramianOptions,
) -> Result<StabilityCertificate> {
    let alpha = schedule.alpha;
    let entries = &schedule.entries;
    if entries.is_empty() {
        return Err(Error::Validation(
            "cannot certify an empty gain schedule".into(),
        ));
    }
    let data: Vec<_> = entries
        .par_iter()
        .map(|e| node_data(sys, ts, e, alpha, opts))
        .collect();
    let mut nodes = Vec::with_capacity(data.len());
    for (e, d) in entries.iter().zip(data) {
        match d {
            Ok(d) => nodes.push(d),
            Err(err @ (Error::Controllability { .. } | Error::Singularity { .. })) => {
                return Ok(StabilityCertificate::failed(
                    alpha,
                    e.t,
                    format!("Q(t) unavailable at t = {}: {err}", e.t),
                ));
            }
            Err(err) => return Err(err),
        }
    }

    let eta = nodes
        .iter()
        .map(|d| d.q_bounds.0)
        .fold(f64::INFINITY, f64::min);
    let rho = nodes
        .iter()
        .map(|d| d.q_bounds.1)
        .fold(f64::NEG_INFINITY, f64::max);

    let n = sys.n();
    let eye = DMatrix::<f64>::identity(n, n);
    let adjacent =
        |i: usize, j: usize| (entries[i].t + entries[i].step - entries[j].t).abs() <= MEMBER_TOL;

    let mut worst = (f64::INFINITY, entries[0].t);
    let mut checked = Vec::new();
    let mut dense_checked = 0;
    for (i, e) in entries.iter().enumerate() {
        let mu = e.mu();
        let a = sys.a.eval(e.t, mu)?;
        let b = sys.b.eval(e.t, mu)?;
        let a_hat = a + b * &e.k;
        let a_z = &a_hat * (1.0 + mu * alpha) + &eye * alpha;
        let q = &nodes[i].q;
        let decrement = match e.kind {
            NodeKind::Scattered => {
                if i + 1 >= entries.len() || !adjacent(i, i + 1) {
                    continue;
                }
                let m = &eye + &a_z * mu;
                (m.transpose() * &nodes[i + 1].q * &m - q) / mu
            }
            NodeKind::Dense => {
                let prev = (i > 0 && adjacent(i - 1, i)).then(|| i - 1);
                let next = (i + 1 < entries.len() && adjacent(i, i + 1)).then_some(i + 1);
                let q_delta = match (prev, next) {
                    (Some(p), Some(s)) => {
                        (&nodes[s].q - &nodes[p].q) / (entries[s].t - entries[p].t)
                    }
                    (None, Some(s)) => (&nodes[s].q - q) / (entries[s].t - e.t),
                    (Some(p), None) => (q - &nodes[p].q) / (e.t - entries[p].t),
                    (None, None) => continue,
                };
                dense_checked += 1;
                a_z.transpose() * q + q * &a_z + q_delta
            }
        };
        let margin = -sym_max_eig(&decrement);
        if margin < worst.0 {
            worst = (margin, e.t);
        }
        checked.push((i, mu));
    }
    if checked.is_empty() {
        return Ok(StabilityCertificate::failed(
            alpha,
            entries[0].t,
            "no node has a successor inside the schedule".into(),
        ));
    }

    let nu = worst.0;
    let eps1 = checked
        .iter()
        .map(|&(i, _)| nodes[i].g_bounds.0)
        .fold(f64::INFINITY, f64::min);
    let eps2 = checked
        .iter()
        .map(|&(i, _)| nodes[i].g_bounds.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let mu_max = checked.iter().map(|&(_, mu)| mu).fold(0.0, f64::max);
    let nu_floor = alpha / (eps2 * (1.0 + mu_max * alpha).powi(2));
    // Any 0 < nu' <= nu also satisfies the decrement bound, so the
    // regressivity requirement on -nu'/rho only caps the rate.
    let nu_admissible = if 1.0 - mu_max * nu / rho > 0.0 {
        nu
    } else {
        0.5 * rho / mu_max
    };
    let pass = eta > 0.0
        && nu > 0.0
        && checked
            .iter()
            .all(|&(_, mu)| 1.0 - mu * nu_admissible / rho > 0.0);
    let diagnostic = if pass {
        None
    } else if !(eta > 0.0) {
        Some("Q(t) is not positive definite".into())
    } else {
        Some(format!(
            "Lyapunov decrement is not negative definite at t = {}",
            worst.1
        ))
    };

    Ok(StabilityCertificate {
        eta,
        rho,
        nu,
        nu_admissible,
        pass,
        worst_node: worst.1,
        worst_margin: worst.0,
        nu_floor,
        nu_floor_reciprocal: 1.0 / nu_floor,
        eps1,
        eps2,
        mu_max,
        alpha,
        nodes_checked: checked.len(),
        dense_nodes_checked: dense_checked,
        diagnostic,
    })
}
