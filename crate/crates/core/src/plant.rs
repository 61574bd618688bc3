//! Sample-and-hold discretization of a continuous LTI plant onto a time
//! scale, closed-loop simulation, step-response metrics and the
//! `(k, alpha)` settling-time sweep.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::phi1;
use crate::stabilizer::{gain_schedule, ControlSystem, GainSchedule, GramianOptions, WindowSpec};
use crate::timescale::{NodeKind, TimeScale};
use crate::transition::MatrixSignal;

/// Trajectories whose state norm exceeds this are reported as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// `x' = A_hat x + B_hat u` on the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLti {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "A_hat")]
    a_hat: Vec<Vec<f64>>,
    #[serde(rename = "B_hat")]
    b_hat: Vec<Vec<f64>>,
}

fn from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Parse(format!(
            "{name} must be a nonempty rectangular array"
        )));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl ContinuousLti {
    pub fn new(a_hat: DMatrix<f64>, b_hat: DMatrix<f64>) -> Result<Self> {
        let n = a_hat.nrows();
        if n == 0 || a_hat.ncols() != n || b_hat.nrows() != n || b_hat.ncols() == 0 {
            return Err(Error::Validation(format!(
                "need square A_hat (n >= 1) and n x m B_hat, got {}x{} and {}x{}",
                a_hat.nrows(),
                a_hat.ncols(),
                b_hat.nrows(),
                b_hat.ncols()
            )));
        }
        if a_hat.iter().chain(b_hat.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("plant matrices must be finite".into()));
        }
        Ok(Self { a_hat, b_hat })
    }

    /// DC motor with inertial load: position (rev) and velocity (rev/s)
    /// driven by voltage.
    pub fn motor() -> Self {
        Self {
            a_hat: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -0.15]),
            b_hat: DMatrix::from_row_slice(2, 1, &[0.0, 13.8]),
        }
    }

    pub fn n(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn m(&self) -> usize {
        self.b_hat.ncols()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(text)?;
        Self::new(from_rows(&f.a_hat, "A_hat")?, from_rows(&f.b_hat, "B_hat")?)
    }

    pub fn to_json(&self) -> String {
        let f = ModelFile {
            a_hat: to_rows(&self.a_hat),
            b_hat: to_rows(&self.b_hat),
        };
        serde_json::to_string_pretty(&f).expect("model serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Zero-order-hold matrices for graininess `mu`:
/// `A = (exp(A_hat mu) - I) / mu` and `B = phi_1(A_hat mu) B_hat`; the
/// plant itself when `mu = 0`.
pub fn discretize(plant: &ContinuousLti, mu: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::Validation(format!(
            "graininess must be >= 0, got {mu}"
        )));
    }
    if mu == 0.0 {
        return Ok((plant.a_hat.clone(), plant.b_hat.clone()));
    }
    // exp(X) - I = X phi_1(X), so A = A_hat phi_1(A_hat mu) without cancellation.
    let p = phi1(&(&plant.a_hat * mu));
    Ok((&plant.a_hat * &p, &p * &plant.b_hat))
}

/// The plant on `ts`: each node gets the hold matrices for its own
/// graininess, dense parts keep the continuous matrices.
pub fn discretize_on_scale(plant: &ContinuousLti, ts: &TimeScale) -> Result<ControlSystem> {
    let mut table = HashMap::new();
    for w in ts.elements().windows(2) {
        let mu = w[1].start() - w[0].end();
        table.entry(mu.to_bits()).or_insert(discretize(plant, mu)?);
    }
    table.insert(0f64.to_bits(), discretize(plant, 0.0)?);
    let table = Arc::new(table);
    let plant = Arc::new(plant.clone());
    let lookup = {
        let (table, plant) = (table.clone(), plant.clone());
        move |mu: f64| -> (DMatrix<f64>, DMatrix<f64>) {
            match table.get(&mu.to_bits()) {
                Some(ab) => ab.clone(),
                None => {
                    discretize(&plant, mu.max(0.0)).expect("graininess is finite and nonnegative")
                }
            }
        }
    };
    let lookup_b = lookup.clone();
    let (n, m) = (plant.n(), plant.m());
    ControlSystem::new(
        MatrixSignal::from_graininess(n, n, move |mu| lookup(mu).0),
        MatrixSignal::from_graininess(n, m, move |mu| lookup_b(mu).1),
        None,
    )
}

/// Reference signal `r(t)`, applied to every input channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Zero,
    /// `amplitude * h(t - at)` with `h` the unit step.
    Step {
        amplitude: f64,
        at: f64,
    },
}

impl Reference {
    pub fn step(amplitude: f64) -> Self {
        Reference::Step { amplitude, at: 0.0 }
    }

    pub fn value(&self, t: f64, m: usize) -> DVector<f64> {
        match *self {
            Reference::Zero => DVector::zeros(m),
            Reference::Step { amplitude, at } => {
                DVector::from_element(m, if t >= at { amplitude } else { 0.0 })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
}

/// Closed-loop trajectory recorded at every mesh node of the range, plus
/// the terminal state (whose input is the one held from the last node).
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub samples: Vec<Sample>,
    pub t0: f64,
    pub x0: DVector<f64>,
}

impl SimResult {
    pub fn last(&self) -> &Sample {
        self.samples
            .last()
            .expect("simulation records at least the initial sample")
    }

    pub fn channel(&self, i: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.x[i]).collect()
    }
}

/// Simulates `x^Delta = A x + B u`, `u = K(t) x + r(t)` over `[t0, tf]`.
///
/// Scattered nodes take the exact step `x + mu (A x + B u)`; dense parts use
/// RK4 with the input held over each subnode.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    sys: &ControlSystem,
    ts: &TimeScale,
    t0: f64,
    tf: f64,
    x0: &DVector<f64>,
    schedule: &GainSchedule,
    reference: &Reference,
    h: f64,
) -> Result<SimResult> {
    let (n, m) = (sys.n(), sys.m());
    if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("x0 must be a finite {n}-vector")));
    }
    let mesh = ts.mesh(t0, tf, h)?;
    let mut x = x0.clone();
    let mut samples = Vec::with_capacity(mesh.len() + 1);
    let mut u = DVector::zeros(m);
    for node in &mesh.nodes {
        let k = schedule.k_at(node.t)?;
        let r = reference.value(node.t, m);
        u = k * &x + &r;
        samples.push(Sample {
            t: node.t,
            x: x.clone(),
            u: u.clone(),
        });
        match node.kind {
            NodeKind::Scattered => {
                let mu = node.mu();
                let a = sys.a.eval(node.t, mu)?;
                let b = sys.b.eval(node.t, mu)?;
                x = &x + (&a * &x + &b * &u) * mu;
            }
            NodeKind::Dense => {
                x = rk4_held(sys, node.t, node.next, &x, &u, h)?;
            }
        }
        let norm = x.norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence { t: node.next, norm });
        }
    }
    samples.push(Sample {
        t: mesh.nodes.last().map_or(t0, |n| n.next),
        x,
        u,
    });
    Ok(SimResult {
        samples,
        t0,
        x0: x0.clone(),
    })
}

fn rk4_held(
    sys: &ControlSystem,
    from: f64,
    to: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let steps = ((to - from) / h - 1e-9).ceil().max(1.0) as usize;
    let dt = (to - from) / steps as f64;
    let f = |tau: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(sys.a.eval(tau, 0.0)? * x + sys.b.eval(tau, 0.0)? * u)
    };
    let mut x = x.clone();
    for i in 0..steps {
        let tau = from + dt * i as f64;
        let k1 = f(tau, &x)?;
        let k2 = f(tau + 0.5 * dt, &(&x + &k1 * (0.5 * dt)))?;
        let k3 = f(tau + 0.5 * dt, &(&x + &k2 * (0.5 * dt)))?;
        let k4 = f(tau + dt, &(&x + &k3 * dt))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    Ok(x)
}

/// Final value estimate: mean of the last 5% of the samples (at least 3).
pub fn final_value(signal: &[f64]) -> f64 {
    let tail = ((signal.len() as f64 * 0.05).ceil() as usize)
        .max(3)
        .min(signal.len());
    signal[signal.len() - tail..].iter().sum::<f64>() / tail as f64
}

/// Earliest sample time after which `channel` stays within `band` (a
/// fraction) of its final value. `None` if it never settles.
///
/// When the final value is zero the band is taken relative to the peak
/// magnitude of the signal instead.
pub fn settling_time(result: &SimResult, channel: usize, band: f64) -> Result<Option<f64>> {
    if result.samples.is_empty() {
        return Err(Error::Validation("empty simulation result".into()));
    }
    if channel >= result.samples[0].x.len() {
        return Err(Error::Validation(format!("channel {channel} out of range")));
    }
    if !(band > 0.0) {
        return Err(Error::Validation(format!(
            "band must be positive, got {band}"
        )));
    }
    let signal = result.channel(channel);
    let fin = final_value(&signal);
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = if fin.abs() > 1e-12 * peak {
        band * fin.abs()
    } else {
        band * peak
    };
    let outside = signal.iter().rposition(|v| !((v - fin).abs() <= tol));
    Ok(match outside {
        None => Some(result.samples[0].t),
        Some(i) if i + 1 < signal.len() => Some(result.samples[i + 1].t),
        Some(_) => None,
    })
}

/// Smallest `gamma` with `|x(t)| <= gamma e_{-alpha}(t, t0) |x0|` over the
/// recorded samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub gamma: f64,
    pub alpha: f64,
    pub max_ratio_node: f64,
    /// `(t, |x(t)| / (e_{-alpha}(t, t0) |x0|))` per sample.
    #[serde(skip)]
    pub ratios: Vec<(f64, f64)>,
}

pub fn decay_fit(result: &SimResult, alpha: f64, ts: &TimeScale) -> Result<DecayFit> {
    let x0 = result.x0.norm();
    if !(x0 > 0.0) {
        return Err(Error::Validation(
            "decay fit needs a nonzero initial state".into(),
        ));
    }
    let mut envelope = 1.0;
    let mut ratios = Vec::with_capacity(result.samples.len());
    for (i, s) in result.samples.iter().enumerate() {
        if i > 0 {
            let prev = result.samples[i - 1].t;
            let dt = s.t - prev;
            if ts.is_right_dense(prev)? {
                envelope *= (-alpha * dt).exp();
            } else {
                let margin = 1.0 - dt * alpha;
                if !(margin > 0.0) {
                    return Err(Error::RateInadmissible {
                        t: prev,
                        alpha,
                        margin,
                    });
                }
                envelope *= margin;
            }
        }
        ratios.push((s.t, s.x.norm() / (envelope * x0)));
    }
    let (max_ratio_node, gamma) =
        ratios.iter().copied().fold(
            (result.t0, 0.0),
            |best, r| if r.1 > best.1 { r } else { best },
        );
    Ok(DecayFit {
        gamma,
        alpha,
        max_ratio_node,
        ratios,
    })
}

/// Checks `1 - mu alpha > 0` at every scattered point of `ts`.
pub fn check_rate(ts: &TimeScale, alpha: f64) -> Result<()> {
    for w in ts.elements().windows(2) {
        let mu = w[1].start() - w[0].end();
        let margin = 1.0 - mu * alpha;
        if !(margin > 0.0) {
            return Err(Error::RateInadmissible {
                t: w[0].end(),
                alpha,
                margin,
            });
        }
    }
    Ok(())
}

/// Per-cell outcome of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    NoSettle,
    OutOfRange,
    Singular,
    RateInadmissible,
    Diverged,
    Error,
}

impl CellStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::NoSettle => "no_settle",
            CellStatus::OutOfRange => "out_of_range",
            CellStatus::Singular => "singular",
            CellStatus::RateInadmissible => "rate_inadmissible",
            CellStatus::Diverged => "diverged",
            CellStatus::Error => "error",
        }
    }

    /// The cell produced a schedule and a trajectory.
    pub fn succeeded(&self) -> bool {
        matches!(self, CellStatus::Ok | CellStatus::NoSettle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub alpha: f64,
    pub settling_time: Option<f64>,
    pub max_gain_norm: Option<f64>,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn get(&self, k: usize, alpha: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.k == k && r.alpha == alpha)
    }

    pub fn any_succeeded(&self) -> bool {
        self.rows.iter().any(|r| r.status.succeeded())
    }
}

/// Settings shared by every sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub band: f64,
    pub channel: usize,
    pub x0: DVector<f64>,
    pub reference: Reference,
    pub delta1: f64,
    pub delta2: f64,
    pub gramian: GramianOptions,
}

impl SweepConfig {
    /// Step response of the position channel from rest, 10% band.
    pub fn step_response(n: usize, ts: &TimeScale) -> Self {
        Self {
            band: 0.1,
            channel: 0,
            x0: DVector::zeros(n),
            reference: Reference::step(2.0),
            delta1: 0.5,
            delta2: 0.05,
            gramian: GramianOptions::for_scale(ts),
        }
    }
}

fn sweep_cell(
    sys: &ControlSystem,
    ts: &TimeScale,
    k: usize,
    alpha: f64,
    cfg: &SweepConfig,
) -> SweepRow {
    let mut row = SweepRow {
        k,
        alpha,
        settling_time: None,
        max_gain_norm: None,
        status: CellStatus::Ok,
    };
    if check_rate(ts, alpha).is_err() || !(alpha > 0.0) {
        row.status = CellStatus::RateInadmissible;
        return row;
    }
    let spec = WindowSpec {
        k,
        delta1: cfg.delta1,
        delta2: cfg.delta2,
        m_max: (ts.max() - ts.min()).max(f64::MIN_POSITIVE),
    };
    let schedule = match gain_schedule(sys, ts, ts.min(), ts.max(), alpha, &spec, &cfg.gramian) {
        Ok(s) if s.is_empty() => {
            row.status = CellStatus::OutOfRange;
            return row;
        }
        Ok(s) => s,
        Err(Error::Schedule { .. }) => {
            row.status = CellStatus::Singular;
            return row;
        }
        Err(_) => {
            row.status = CellStatus::Error;
            return row;
        }
    };
    row.max_gain_norm = Some(schedule.max_gain_norm());
    let end = schedule.coverage_end().expect("nonempty schedule");
    let sim = simulate(
        sys,
        ts,
        ts.min(),
        end,
        &cfg.x0,
        &schedule,
        &cfg.reference,
        cfg.gramian.h,
    );
    match sim {
        Ok(sim) => match settling_time(&sim, cfg.channel, cfg.band) {
            Ok(Some(t)) => row.settling_time = Some(t - sim.t0),
            Ok(None) => row.status = CellStatus::NoSettle,
            Err(_) => row.status = CellStatus::Error,
        },
        Err(Error::Divergence { .. }) => row.status = CellStatus::Diverged,
        Err(_) => row.status = CellStatus::Error,
    }
    row
}

/// Settling time and peak gain over the grid `k_values x alphas`. Cells run
/// in parallel; rows come out in grid order (k outer, alpha inner).
pub fn sweep(
    plant: &ContinuousLti,
    ts: &TimeScale,
    k_values: &[usize],
    alphas: &[f64],
    cfg: &SweepConfig,
) -> Result<SweepTable> {
    if k_values.is_empty() || alphas.is_empty() {
        return Err(Error::Validation("sweep ranges must be nonempty".into()));
    }
    if k_values.contains(&0) {
        return Err(Error::Validation("window sizes must be >= 1".into()));
    }
    let sys = discretize_on_scale(plant, ts)?;
    let cells: Vec<(usize, f64)> = k_values
        .iter()
        .flat_map(|&k| alphas.iter().map(move |&a| (k, a)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(k, alpha)| sweep_cell(&sys, ts, k, alpha, cfg))
        .collect();
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stabilizer::GainEntry;
    use crate::timescale::{make_scale, Element, ScaleKind};

    fn z(n: i64) -> TimeScale {
        make_scale(&ScaleKind::Uniform {
            h: 1.0,
            k_min: 0,
            k_max: n,
        })
        .unwrap()
    }

    fn constant_schedule(ts: &TimeScale, k: DMatrix<f64>) -> GainSchedule {
        let mesh = ts.build_mesh(ts.default_step()).unwrap();
        GainSchedule {
            entries: mesh
                .nodes
                .iter()
                .map(|n| GainEntry {
                    t: n.t,
                    step: n.step(),
                    kind: n.kind,
                    k: k.clone(),
                    window_end: n.next,
                    min_sv: 1.0,
                })
                .collect(),
            alpha: 0.1,
            spec: WindowSpec::jumps(1, ts),
            omitted: vec![],
            warnings: vec![],
        }
    }

    fn synthetic(ts: &[f64], xs: &[f64]) -> SimResult {
        SimResult {
            samples: ts
                .iter()
                .zip(xs)
                .map(|(&t, &x)| Sample {
                    t,
                    x: DVector::from_element(1, x),
                    u: DVector::zeros(1),
                })
                .collect(),
            t0: ts[0],
            x0: DVector::from_element(1, xs[0]),
        }
    }

    #[test]
    fn zero_plant_discretizes_to_zero() {
        let p = ContinuousLti::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
        )
        .unwrap();
        for mu in [0.0, 0.1, 3.0] {
            let (a, b) = discretize(&p, mu).unwrap();
            assert_eq!(a, DMatrix::zeros(2, 2));
            assert_eq!(b, p.b_hat);
        }
        assert!(discretize(&p, -1.0).is_err());
    }

    #[test]
    fn scalar_discretization_matches_scalar_exponential() {
        let p = ContinuousLti::new(
            DMatrix::from_element(1, 1, -0.15),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let (a, b) = discretize(&p, 0.1).unwrap();
        assert!((a[(0, 0)] - (-0.015f64).exp_m1() / 0.1).abs() < 1e-15);
        assert!((b[(0, 0)] - (-0.015f64).exp_m1() / -0.015).abs() < 1e-15);
    }

    #[test]
    fn small_graininess_recovers_plant() {
        let p = ContinuousLti::motor();
        let (a, b) = discretize(&p, 1e-6).unwrap();
        assert!((&a - &p.a_hat).norm() <= 1e-4 * p.a_hat.norm());
        assert!((&b - &p.b_hat).norm() <= 1e-4 * p.b_hat.norm());
    }

    #[test]
    fn motor_model_json() {
        let p = ContinuousLti::motor();
        let text = p.to_json();
        assert!(text.contains("A_hat"));
        assert_eq!(ContinuousLti::from_json(&text).unwrap(), p);
        assert!(
            ContinuousLti::from_json(r#"{"A_hat": [[0, 1], [0]], "B_hat": [[0], [1]]}"#).is_err()
        );
        assert!(
            ContinuousLti::from_json(r#"{"A_hat": [[0, 1], [0, 1]], "B_hat": [[0]]}"#).is_err()
        );
    }

    #[test]
    fn discretized_scale_is_pointwise() {
        let ts = make_scale(&ScaleKind::Random {
            mu_lo: 0.08,
            mu_hi: 0.15,
            n_points: 10,
            seed: 2,
        })
        .unwrap();
        let p = ContinuousLti::motor();
        let sys = discretize_on_scale(&p, &ts).unwrap();
        for t in ts.scattered_points() {
            let mu = ts.mu(t).unwrap();
            let (a, b) = discretize(&p, mu).unwrap();
            assert_eq!(sys.a.eval(t, mu).unwrap(), a);
            assert_eq!(sys.b.eval(t, mu).unwrap(), b);
        }
        let pulse = make_scale(&ScaleKind::Pulse {
            a: 1.0,
            b: 2.0,
            periods: 2,
        })
        .unwrap();
        let sys = discretize_on_scale(&p, &pulse).unwrap();
        assert_eq!(sys.a.eval(0.5, 0.0).unwrap(), p.a_hat);
        assert_eq!(
            sys.a.eval(1.0, 2.0).unwrap(),
            discretize(&p, 2.0).unwrap().0
        );
        // uniform scale: one pair of matrices everywhere
        let hz = make_scale(&ScaleKind::Uniform {
            h: 0.1,
            k_min: 0,
            k_max: 5,
        })
        .unwrap();
        let sys = discretize_on_scale(&p, &hz).unwrap();
        let first = sys.a.eval(0.0, hz.mu(0.0).unwrap()).unwrap();
        for t in hz.scattered_points().iter().take(5) {
            assert!((sys.a.eval(*t, hz.mu(*t).unwrap()).unwrap() - &first).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_input_zero_state_stays_zero() {
        let ts = z(10);
        let p = ContinuousLti::motor();
        let sys = discretize_on_scale(&p, &ts).unwrap();
        let sched = constant_schedule(&ts, DMatrix::from_row_slice(1, 2, &[-0.01, -0.02]));
        let sim = simulate(
            &sys,
            &ts,
            0.0,
            10.0,
            &DVector::zeros(2),
            &sched,
            &Reference::Zero,
            0.01,
        )
        .unwrap();
        assert_eq!(sim.samples.len(), 11);
        assert!(sim
            .samples
            .iter()
            .all(|s| s.x.norm() == 0.0 && s.u.norm() == 0.0));
    }

    #[test]
    fn deadbeat_step() {
        let ts = z(4);
        let sys = ControlSystem::new(
            MatrixSignal::zeros(1, 1),
            MatrixSignal::constant(DMatrix::from_element(1, 1, 1.0)),
            None,
        )
        .unwrap();
        let sched = constant_schedule(&ts, DMatrix::from_element(1, 1, -1.0));
        let sim = simulate(
            &sys,
            &ts,
            0.0,
            4.0,
            &DVector::from_element(1, 1.0),
            &sched,
            &Reference::Zero,
            0.1,
        )
        .unwrap();
        assert_eq!(sim.samples[1].x[0], 0.0);
        let fit = decay_fit(&sim, 0.5, &ts).unwrap();
        assert_eq!(fit.gamma, 1.0);
        assert_eq!(fit.max_ratio_node, 0.0);
    }

    #[test]
    fn simulation_errors() {
        let ts = z(6);
        let sys = ControlSystem::new(
            MatrixSignal::constant(DMatrix::from_element(1, 1, 1e7)),
            MatrixSignal::constant(DMatrix::from_element(1, 1, 1.0)),
            None,
        )
        .unwrap();
        let sched = constant_schedule(&ts, DMatrix::zeros(1, 1));
        let err = simulate(
            &sys,
            &ts,
            0.0,
            6.0,
            &DVector::from_element(1, 1.0),
            &sched,
            &Reference::Zero,
            0.1,
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::Divergence { t, .. } if t == 2.0),
            "{err:?}"
        );

        let mut short = sched.clone();
        short.entries.truncate(3);
        let err = simulate(
            &sys,
            &ts,
            0.0,
            6.0,
            &DVector::from_element(1, 0.0),
            &short,
            &Reference::Zero,
            0.1,
        )
        .unwrap_err();
        assert_eq!(err, Error::Coverage { t: 3.0 });
    }

    #[test]
    fn dense_simulation_matches_closed_form() {
        // x' = -x on [0, 2] with K = 0
        let ts = TimeScale::new(vec![Element::Interval(0.0, 2.0)]).unwrap();
        let sys = ControlSystem::new(
            MatrixSignal::constant(DMatrix::from_element(1, 1, -1.0)),
            MatrixSignal::constant(DMatrix::from_element(1, 1, 1.0)),
            None,
        )
        .unwrap();
        let sched = constant_schedule(&ts, DMatrix::zeros(1, 1));
        let sim = simulate(
            &sys,
            &ts,
            0.0,
            2.0,
            &DVector::from_element(1, 1.0),
            &sched,
            &Reference::Zero,
            1e-2,
        )
        .unwrap();
        assert!((sim.last().x[0] - (-2.0f64).exp()).abs() < 1e-9);
        assert_eq!(sim.last().t, 2.0);
    }

    #[test]
    fn settling_examples() {
        let t: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(
            settling_time(&synthetic(&t, &[3.0; 20]), 0, 0.1).unwrap(),
            Some(0.0)
        );

        let mut stair = vec![0.0; 20];
        for (i, v) in stair.iter_mut().enumerate() {
            *v = if i < 7 { i as f64 * 0.1 } else { 2.0 };
        }
        assert_eq!(
            settling_time(&synthetic(&t, &stair), 0, 0.1).unwrap(),
            Some(7.0)
        );

        let grow: Vec<f64> = (0..20).map(|i| 2f64.powi(i)).collect();
        assert_eq!(settling_time(&synthetic(&t, &grow), 0, 0.1).unwrap(), None);

        // decays to zero: band relative to the peak
        let decay: Vec<f64> = (0..20).map(|i| if i < 5 { 1.0 } else { 0.0 }).collect();
        assert_eq!(
            settling_time(&synthetic(&t, &decay), 0, 0.1).unwrap(),
            Some(5.0)
        );

        assert!(settling_time(&synthetic(&t, &decay), 3, 0.1).is_err());
    }

    #[test]
    fn decay_fit_examples() {
        let ts = TimeScale::from_points([0.0, 0.1, 0.25, 0.4]).unwrap();
        let alpha = 2.0;
        let env = [1.0, 0.8, 0.8 * 0.7, 0.8 * 0.7 * 0.7];
        let fit = decay_fit(&synthetic(&[0.0, 0.1, 0.25, 0.4], &env), alpha, &ts).unwrap();
        assert!((fit.gamma - 1.0).abs() < 1e-15);

        let ts = TimeScale::from_points([0.0, 0.15, 0.3]).unwrap();
        let err =
            decay_fit(&synthetic(&[0.0, 0.15, 0.3], &[1.0, 0.5, 0.2]), 10.0, &ts).unwrap_err();
        assert!(matches!(err, Error::RateInadmissible { t, .. } if t == 0.0));
        assert!(check_rate(&ts, 10.0).is_err());
        assert!(check_rate(&ts, 6.0).is_ok());

        assert!(decay_fit(&synthetic(&[0.0, 0.15], &[0.0, 0.0]), 1.0, &ts).is_err());
    }

    #[test]
    fn single_cell_sweep_matches_direct_run() {
        let ts = make_scale(&ScaleKind::Random {
            mu_lo: 0.08,
            mu_hi: 0.15,
            n_points: 30,
            seed: 11,
        })
        .unwrap();
        let p = ContinuousLti::motor();
        let cfg = SweepConfig::step_response(2, &ts);
        let table = sweep(&p, &ts, &[4], &[0.2], &cfg).unwrap();
        assert_eq!(table.rows.len(), 1);

        let sys = discretize_on_scale(&p, &ts).unwrap();
        let spec = WindowSpec::new(4, 0.5, 0.05, ts.max() - ts.min()).unwrap();
        let sched = gain_schedule(&sys, &ts, ts.min(), ts.max(), 0.2, &spec, &cfg.gramian).unwrap();
        let sim = simulate(
            &sys,
            &ts,
            0.0,
            sched.coverage_end().unwrap(),
            &cfg.x0,
            &sched,
            &cfg.reference,
            cfg.gramian.h,
        )
        .unwrap();
        let st = settling_time(&sim, 0, 0.1).unwrap();
        assert_eq!(table.rows[0].settling_time, st);
        assert_eq!(table.rows[0].max_gain_norm, Some(sched.max_gain_norm()));

        let oor = sweep(&p, &ts, &[30], &[0.2], &cfg).unwrap();
        assert_eq!(oor.rows[0].status, CellStatus::OutOfRange);
        assert!(!oor.any_succeeded());
        let bad = sweep(&p, &ts, &[4], &[20.0], &cfg).unwrap();
        assert_eq!(bad.rows[0].status, CellStatus::RateInadmissible);
    }
}
