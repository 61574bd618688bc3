//! Self-check suites: each property is evaluated on seeded random inputs and
//! reported with its measured residual and tolerance.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilger::{circle_plus, cylinder, exp_ts, in_hilger_circle, inv_cylinder, ScalarSignal};
use crate::linalg::{expm, rel_residual, spectral_radius, sym_eig_bounds};
use crate::plant::{
    decay_fit, discretize, discretize_on_scale, simulate, ContinuousLti, Reference,
};
use crate::stabilizer::{
    certify, gain_schedule, gramian, gramian_identity_residuals, weighted_gramian, window_c,
    ControlSystem, GramianOptions, WindowSpec,
};
use crate::timescale::{make_scale, Element, ScaleKind, TimeScale};
use crate::transition::{phi, MatrixSignal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Calculus,
    Gramian,
    Stability,
    All,
}

impl Suite {
    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Calculus => "calculus",
            Suite::Gramian => "gramian",
            Suite::Stability => "stability",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calculus" => Ok(Suite::Calculus),
            "gramian" => Ok(Suite::Gramian),
            "stability" => Ok(Suite::Stability),
            "all" => Ok(Suite::All),
            other => Err(Error::Validation(format!(
                "unknown suite '{other}' (expected calculus, gramian, stability or all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Test hook: every generalized exponential evaluated by the calculus
    /// suite is scaled by `1 + exp_perturbation`.
    pub exp_perturbation: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            exp_perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub passed: bool,
    pub results: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn record(suite: Suite, name: &str, tolerance: f64, outcome: Result<f64>) -> PropertyResult {
    match outcome {
        Ok(residual) => PropertyResult {
            suite,
            name: name.into(),
            passed: residual <= tolerance,
            residual,
            tolerance,
            detail: None,
        },
        Err(e) => PropertyResult {
            suite,
            name: name.into(),
            passed: false,
            residual: f64::NAN,
            tolerance,
            detail: Some(e.to_string()),
        },
    }
}

pub fn run(suite: Suite, opts: &VerifyOptions) -> VerifyReport {
    let mut results = Vec::new();
    if matches!(suite, Suite::Calculus | Suite::All) {
        results.extend(calculus(opts));
    }
    if matches!(suite, Suite::Gramian | Suite::All) {
        results.extend(gramian_suite(opts));
    }
    if matches!(suite, Suite::Stability | Suite::All) {
        results.extend(stability(opts));
    }
    VerifyReport {
        suite,
        seed: opts.seed,
        passed: results.iter().all(|r| r.passed),
        results,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Largest relative residual of the four exponential group laws over
/// `scales` random discrete scales.
pub fn exponential_law_residual(
    rng: &mut ChaCha8Rng,
    scales: usize,
    perturbation: f64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..scales {
        let n = rng.gen_range(20..=100);
        let ts = make_scale(&ScaleKind::Random {
            mu_lo: 0.01,
            mu_hi: 0.2,
            n_points: n,
            seed: rng.gen(),
        })?;
        let h = ts.default_step();
        let e = |p: &ScalarSignal, t: f64, s: f64| {
            exp_ts(p, &ts, t, s, h).map(|v| v * (1.0 + perturbation))
        };
        let pts = ts.scattered_points();
        let pick = |rng: &mut ChaCha8Rng| pts[rng.gen_range(0..pts.len())];
        let p = ScalarSignal::constant(rng.gen_range(-4.0..4.0));
        let q = ScalarSignal::constant(rng.gen_range(-4.0..4.0));
        let (t, r, s) = (pick(rng), pick(rng), pick(rng));
        let ets = e(&p, t, s)?;
        worst = worst.max(rel(e(&p, t, r)? * e(&p, r, s)?, ets));
        worst = worst.max(rel(1.0 / e(&p, s, t)?, ets));
        worst = worst.max(rel(e(&p.circle_neg(), s, t)?, ets));
        worst = worst.max(rel(ets * e(&q, t, s)?, e(&p.circle_plus(&q), t, s)?));
        worst = worst.max(rel(ets / e(&q, t, s)?, e(&p.circle_minus(&q), t, s)?));
    }
    Ok(worst)
}

fn closed_form_residual(perturbation: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    let line = TimeScale::new(vec![Element::Interval(0.0, 3.0)])?;
    for p in [-0.7, 0.4, 1.3] {
        let v = exp_ts(&ScalarSignal::constant(p), &line, 2.5, 0.5, 1e-3)? * (1.0 + perturbation);
        worst = worst.max(rel(v, (p * 2.0f64).exp()));
    }
    let h = 0.1;
    let hz = make_scale(&ScaleKind::Uniform {
        h,
        k_min: 0,
        k_max: 40,
    })?;
    for p in [-3.0, -0.5, 2.0] {
        let v = exp_ts(&ScalarSignal::constant(p), &hz, 3.0, 1.0, 1e-3)? * (1.0 + perturbation);
        worst = worst.max(rel(v, (1.0 + h * p).powi(20)));
    }
    Ok(worst)
}

/// Fraction of sampled in-circle pairs whose circle-plus leaves the circle.
pub fn hilger_closure_failures(rng: &mut ChaCha8Rng, pairs: usize, mu: f64) -> f64 {
    let sample = |rng: &mut ChaCha8Rng| loop {
        let r = rng.gen_range(0.0..1.0f64).sqrt() / mu;
        let th = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let z = Complex64::new(-1.0 / mu + r * th.cos(), r * th.sin());
        if in_hilger_circle(z, mu) {
            return z;
        }
    };
    let mut failures = 0usize;
    for _ in 0..pairs {
        let (a, b) = (sample(rng), sample(rng));
        if !in_hilger_circle(circle_plus(a, b, mu), mu) {
            failures += 1;
        }
    }
    failures as f64 / pairs as f64
}

fn cylinder_residual(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let mu = rng.gen_range(0.01..1.0);
        let z = Complex64::new(rng.gen_range(-0.9..3.0) / mu, rng.gen_range(-3.0..3.0) / mu);
        let back = inv_cylinder(cylinder(z, mu)?, mu)?;
        worst = worst.max((back - z).norm() / z.norm().max(1.0));
    }
    Ok(worst)
}

fn random_stable_2x2(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    loop {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.5..0.5));
        let rad = spectral_radius(&(DMatrix::identity(2, 2) + &a));
        if rad < 0.95 && (DMatrix::identity(2, 2) + &a).determinant().abs() > 1e-3 {
            return a;
        }
    }
}

fn transition_residuals(rng: &mut ChaCha8Rng) -> Result<(f64, f64, f64)> {
    let z = make_scale(&ScaleKind::Uniform {
        h: 1.0,
        k_min: 0,
        k_max: 30,
    })?;
    let mut product = 0.0f64;
    for _ in 0..20 {
        let a = random_stable_2x2(rng);
        let t0 = rng.gen_range(0..10) as f64;
        let t = t0 + rng.gen_range(0..20) as f64;
        let p = phi(&MatrixSignal::constant(a.clone()), &z, t, t0, 1e-3)?;
        let mut oracle = DMatrix::identity(2, 2);
        for _ in 0..(t - t0) as usize {
            oracle = (DMatrix::identity(2, 2) + &a) * oracle;
        }
        product = product.max((p.value - oracle).abs().max());
    }

    let line = TimeScale::new(vec![Element::Interval(0.0, 1.0)])?;
    let mut dense = 0.0f64;
    for _ in 0..5 {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-2.0..2.0));
        let p = phi(&MatrixSignal::constant(a.clone()), &line, 1.0, 0.0, 1e-3)?;
        dense = dense.max(rel_residual(&p.value, &expm(&a)));
    }

    let mixed = TimeScale::new(vec![
        Element::Interval(0.0, 1.0),
        Element::Point(1.3),
        Element::Point(1.5),
        Element::Interval(2.0, 2.5),
        Element::Point(3.0),
    ])?;
    let a = MatrixSignal::constant(DMatrix::from_row_slice(2, 2, &[-0.3, 1.0, -0.5, -0.2]));
    let times = [0.0, 0.4, 1.0, 1.3, 1.5, 2.2, 2.5, 3.0];
    let mut semigroup = 0.0f64;
    for &t in &times {
        for &r in &times {
            for &s in &times {
                let lhs = phi(&a, &mixed, t, r, 1e-3)?.value * phi(&a, &mixed, r, s, 1e-3)?.value;
                semigroup = semigroup.max(rel_residual(&lhs, &phi(&a, &mixed, t, s, 1e-3)?.value));
            }
        }
    }
    Ok((product, dense, semigroup))
}

fn calculus(opts: &VerifyOptions) -> Vec<PropertyResult> {
    let s = Suite::Calculus;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = vec![
        record(
            s,
            "exponential_group_laws",
            1e-9,
            exponential_law_residual(&mut rng, 50, opts.exp_perturbation),
        ),
        record(
            s,
            "exponential_closed_forms",
            1e-10,
            closed_form_residual(opts.exp_perturbation),
        ),
    ];
    for mu in [0.01, 0.1, 1.0] {
        out.push(record(
            s,
            &format!("hilger_circle_closure_mu_{mu}"),
            0.0,
            Ok(hilger_closure_failures(&mut rng, 10_000, mu)),
        ));
    }
    out.push(record(
        s,
        "cylinder_round_trip",
        1e-12,
        cylinder_residual(&mut rng),
    ));
    match transition_residuals(&mut rng) {
        Ok((p, d, g)) => {
            out.push(record(s, "transition_product_oracle", 1e-12, Ok(p)));
            out.push(record(s, "transition_dense_expm", 1e-8, Ok(d)));
            out.push(record(s, "transition_semigroup", 1e-8, Ok(g)));
        }
        Err(e) => out.push(record(s, "transition", 0.0, Err(e))),
    }
    out
}

fn motor_on(ts: &TimeScale) -> Result<ControlSystem> {
    discretize_on_scale(&ContinuousLti::motor(), ts)
}

/// Worst one-step identity residual over the scattered nodes of `ts`.
pub fn identity_residual(sys: &ControlSystem, ts: &TimeScale, alpha: f64, k: usize) -> Result<f64> {
    let opts = GramianOptions::for_scale(ts);
    let spec = WindowSpec::jumps(k, ts);
    let mut worst = 0.0f64;
    for t in ts.scattered_points() {
        match gramian_identity_residuals(sys, ts, t, alpha, &spec, &opts) {
            Ok(r) => worst = worst.max(r.one_step),
            Err(Error::OutOfRange(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(worst)
}

/// Worst violation of `e^{-4MN} G <= G_alpha <= G` (eigenvalues of the
/// differences, relative to the largest eigenvalue of `G`).
pub fn sandwich_violation(
    sys: &ControlSystem,
    ts: &TimeScale,
    alpha: f64,
    spec: &WindowSpec,
) -> Result<f64> {
    let opts = GramianOptions::for_scale(ts);
    let n_rate = ts
        .elements()
        .windows(2)
        .map(|w| {
            let mu = w[1].start() - w[0].end();
            (1.0 + mu * alpha).ln() / mu
        })
        .fold(if ts.has_dense_parts() { alpha } else { 0.0 }, f64::max);
    let mesh = ts.build_mesh(opts.h)?;
    let mut worst = 0.0f64;
    for node in mesh.nodes.iter().step_by((mesh.len() / 40).max(1)) {
        let end = match window_c(ts, node.t, spec) {
            Ok(c) => c,
            Err(Error::OutOfRange(_)) => continue,
            Err(e) => return Err(e),
        };
        let g = gramian(sys, ts, node.t, end, &opts)?;
        let gw = weighted_gramian(sys, ts, node.t, end, alpha, &opts)?;
        let scale = sym_eig_bounds(&g).1.max(f64::MIN_POSITIVE);
        let shrink = (-4.0 * (end - node.t) * n_rate).exp();
        let upper = sym_eig_bounds(&(&g - &gw)).0;
        let lower = sym_eig_bounds(&(&gw - &g * shrink)).0;
        worst = worst.max(-upper.min(lower) / scale);
    }
    Ok(worst)
}

fn gramian_suite(opts: &VerifyOptions) -> Vec<PropertyResult> {
    let s = Suite::Gramian;
    let mut out = Vec::new();
    let discrete = make_scale(&ScaleKind::Random {
        mu_lo: 0.08,
        mu_hi: 0.15,
        n_points: 60,
        seed: opts.seed,
    });
    let pulse = make_scale(&ScaleKind::Pulse {
        a: 0.3,
        b: 0.2,
        periods: 6,
    });
    let scales = [("discrete", discrete, 1e-12), ("mixed", pulse, 1e-6)];
    for (label, ts, tol) in scales {
        let r = ts.and_then(|ts| {
            let sys = motor_on(&ts)?;
            let id = identity_residual(&sys, &ts, 0.1, 5)?;
            let spec = WindowSpec::jumps(5, &ts);
            let sw = sandwich_violation(&sys, &ts, 0.1, &spec)?;
            Ok((id, sw))
        });
        match r {
            Ok((id, sw)) => {
                out.push(record(s, &format!("identity_motor_{label}"), tol, Ok(id)));
                out.push(record(s, &format!("sandwich_motor_{label}"), 1e-9, Ok(sw)));
            }
            Err(e) => out.push(record(s, &format!("motor_{label}"), tol, Err(e))),
        }
    }
    out
}

/// End-to-end run of the motor on a random discrete scale.
#[derive(Debug, Clone)]
pub struct MotorRun {
    pub cert_pass: bool,
    pub nu: f64,
    pub nu_floor: f64,
    pub gamma: f64,
    pub envelope_violation: f64,
    pub final_ratio: f64,
    pub max_closed_loop_radius: f64,
    pub schedule_len: usize,
}

pub fn motor_run(seed: u64, alpha: f64, k: usize) -> Result<MotorRun> {
    let ts = make_scale(&ScaleKind::Random {
        mu_lo: 0.08,
        mu_hi: 0.15,
        n_points: 60,
        seed,
    })?;
    let sys = motor_on(&ts)?;
    let opts = GramianOptions::for_scale(&ts);
    let spec = WindowSpec::jumps(k, &ts);
    let schedule = gain_schedule(&sys, &ts, ts.min(), ts.max(), alpha, &spec, &opts)?;
    let cert = certify(&sys, &schedule, &ts, &opts)?;
    let end = schedule
        .coverage_end()
        .ok_or_else(|| Error::OutOfRange("empty schedule".into()))?;
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let sim = simulate(
        &sys,
        &ts,
        ts.min(),
        end,
        &x0,
        &schedule,
        &Reference::Zero,
        opts.h,
    )?;
    let fit = decay_fit(&sim, alpha, &ts)?;
    let envelope_violation = fit
        .ratios
        .iter()
        .map(|&(_, r)| r - fit.gamma)
        .fold(0.0, f64::max);
    let mut radius = 0.0f64;
    for e in &schedule.entries {
        let mu = e.mu();
        let a_cl = sys.a.eval(e.t, mu)? + sys.b.eval(e.t, mu)? * &e.k;
        radius = radius.max(spectral_radius(&(DMatrix::identity(2, 2) + a_cl * mu)));
    }
    Ok(MotorRun {
        cert_pass: cert.pass,
        nu: cert.nu,
        nu_floor: cert.nu_floor,
        gamma: fit.gamma,
        envelope_violation,
        final_ratio: sim.last().x.norm() / x0.norm(),
        max_closed_loop_radius: radius,
        schedule_len: schedule.len(),
    })
}

/// Largest relative gap between one scattered update with the discretized
/// matrices and the zero-order-hold solution of the plant.
pub fn discretization_residual(rng: &mut ChaCha8Rng) -> Result<f64> {
    let p = ContinuousLti::motor();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let mu = rng.gen_range(0.001..0.5);
        let x = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
        let u = DVector::from_element(1, rng.gen_range(-2.0..2.0));
        let (a, b) = discretize(&p, mu)?;
        let step = &x + (&a * &x + &b * &u) * mu;
        // closed-form hold solution of the motor
        let decay = (-0.15 * mu).exp();
        let drift = (1.0 - decay) / 0.15;
        let gain = 13.8 * u[0];
        let oracle = DVector::from_vec(vec![
            x[0] + drift * x[1] + gain * (mu - drift) / 0.15,
            decay * x[1] + gain * drift,
        ]);
        worst = worst.max((step - &oracle).norm() / oracle.norm());
    }
    Ok(worst)
}

fn stability(opts: &VerifyOptions) -> Vec<PropertyResult> {
    let s = Suite::Stability;
    let mut out = Vec::new();
    match motor_run(opts.seed, 0.1, 5) {
        Ok(run) => {
            let pass = if run.cert_pass && run.nu >= run.nu_floor {
                0.0
            } else {
                1.0
            };
            out.push(PropertyResult {
                detail: Some(format!("nu = {:.6e}, floor = {:.6e}", run.nu, run.nu_floor)),
                ..record(s, "motor_certificate", 0.0, Ok(pass))
            });
            out.push(record(s, "motor_envelope", 0.0, Ok(run.envelope_violation)));
            out.push(record(s, "motor_final_ratio", 1e-3, Ok(run.final_ratio)));
            out.push(record(
                s,
                "motor_closed_loop_radius",
                1.0,
                Ok(run.max_closed_loop_radius),
            ));
        }
        Err(e) => out.push(record(s, "motor_end_to_end", 0.0, Err(e))),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    out.push(record(
        s,
        "discretization_exactness",
        1e-10,
        discretization_residual(&mut rng),
    ));
    out
}
