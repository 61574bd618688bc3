//! Hilger complex plane arithmetic, cylinder transforms, delta-integrals of
//! scalar functions and the generalized exponential `e_p(t, s)`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::timescale::{NodeKind, TimeScale};

/// Regressivity margin: `|1 + mu p|` must exceed this.
pub const REGRESSIVE_MARGIN: f64 = 1e-12;

/// Below this graininess the cylinder transform is replaced by its `mu = 0`
/// limit.
pub const DENSE_MU: f64 = 1e-10;

/// A point of the Hilger plane `C_mu` together with its graininess.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HilgerPoint {
    z: Complex64,
    mu: f64,
}

impl HilgerPoint {
    pub fn new(z: Complex64, mu: f64) -> Result<Self> {
        if !(mu >= 0.0) {
            return Err(Error::Validation(format!(
                "graininess must be >= 0, got {mu}"
            )));
        }
        if mu > 0.0 && (Complex64::new(1.0, 0.0) + z * mu).norm() == 0.0 {
            return Err(Error::Domain(format!("z = {z} equals -1/mu for mu = {mu}")));
        }
        Ok(Self { z, mu })
    }

    pub fn z(&self) -> Complex64 {
        self.z
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn re(&self) -> f64 {
        hilger_re(self.z, self.mu).expect("validated at construction")
    }

    pub fn im(&self) -> f64 {
        hilger_im(self.z, self.mu).expect("validated at construction")
    }

    /// `self (+) other`; both points must share the graininess.
    pub fn circle_plus(&self, other: &HilgerPoint) -> Result<HilgerPoint> {
        if self.mu != other.mu {
            return Err(Error::Validation(
                "circle-plus needs a shared graininess".into(),
            ));
        }
        HilgerPoint::new(circle_plus(self.z, other.z, self.mu), self.mu)
    }
}

/// `a (+) b = a + b + mu a b`. Works for real and complex values.
pub fn circle_plus<T>(a: T, b: T, mu: f64) -> T
where
    T: Copy + Add<Output = T> + Mul<Output = T> + Mul<f64, Output = T>,
{
    a + b + a * b * mu
}

/// Group inverse `(-)p = -p / (1 + mu p)`.
pub fn circle_neg(p: f64, mu: f64) -> Result<f64> {
    let d = 1.0 + mu * p;
    if d.abs() <= REGRESSIVE_MARGIN {
        return Err(Error::Domain(format!(
            "p = {p} is not regressive for mu = {mu}"
        )));
    }
    Ok(-p / d)
}

/// `p (-) q = p (+) ((-)q)`.
pub fn circle_minus(p: f64, q: f64, mu: f64) -> Result<f64> {
    Ok(circle_plus(p, circle_neg(q, mu)?, mu))
}

fn one_plus(z: Complex64, mu: f64) -> Complex64 {
    Complex64::new(1.0 + z.re * mu, z.im * mu)
}

/// Principal argument in `(-pi, pi]`, the negative real axis mapping to `+pi`.
fn principal_arg(w: Complex64) -> f64 {
    let a = w.im.atan2(w.re);
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// Hilger real part `(|1 + z mu| - 1) / mu`; `Re z` when `mu = 0`.
///
/// Defined on all of `C` including the circle centre `-1/mu`.
pub fn hilger_re(z: Complex64, mu: f64) -> Result<f64> {
    if mu == 0.0 {
        return Ok(z.re);
    }
    if !(mu > 0.0) {
        return Err(Error::Validation(format!(
            "graininess must be >= 0, got {mu}"
        )));
    }
    // (|w| - 1)/mu with |w|^2 - 1 = 2 mu Re z + mu^2 |z|^2, avoiding cancellation.
    let w = one_plus(z, mu);
    let num = z.re * 2.0 + mu * z.norm_sqr();
    Ok(num / (w.norm() + 1.0))
}

/// Hilger imaginary part `Arg(1 + z mu) / mu`; `Im z` when `mu = 0`.
pub fn hilger_im(z: Complex64, mu: f64) -> Result<f64> {
    if mu == 0.0 {
        return Ok(z.im);
    }
    let w = one_plus(z, mu);
    if w.norm() == 0.0 {
        return Err(Error::Domain(format!("z = {z} equals -1/mu for mu = {mu}")));
    }
    Ok(principal_arg(w) / mu)
}

/// Strict membership in the Hilger circle `|1 + mu z| < 1`; the open left
/// half-plane when `mu = 0`.
pub fn in_hilger_circle(z: Complex64, mu: f64) -> bool {
    if mu == 0.0 {
        z.re < 0.0
    } else {
        one_plus(z, mu).norm() < 1.0
    }
}

/// `log(1 + w)` with the principal branch, accurate for small `|w|`.
fn ln_1p(w: Complex64) -> Complex64 {
    let u = Complex64::new(1.0 + w.re, w.im);
    let re = 0.5 * (2.0 * w.re + w.norm_sqr()).ln_1p();
    Complex64::new(re, principal_arg(u))
}

/// `exp(w) - 1`, accurate for small `|w|`.
fn exp_m1(w: Complex64) -> Complex64 {
    let (s, c) = w.im.sin_cos();
    let half = (0.5 * w.im).sin();
    let em1 = w.re.exp_m1();
    Complex64::new(em1 * c - 2.0 * half * half, w.re.exp() * s)
}

/// Cylinder transform `(1/mu) Log(1 + z mu)`; identity when `mu = 0`.
pub fn cylinder(z: Complex64, mu: f64) -> Result<Complex64> {
    if mu == 0.0 {
        return Ok(z);
    }
    if one_plus(z, mu).norm() == 0.0 {
        return Err(Error::Domain(format!("z = {z} equals -1/mu for mu = {mu}")));
    }
    Ok(ln_1p(z * mu) / mu)
}

/// Inverse cylinder transform `(exp(z mu) - 1) / mu`; identity when `mu = 0`.
pub fn inv_cylinder(z: Complex64, mu: f64) -> Result<Complex64> {
    if mu == 0.0 {
        return Ok(z);
    }
    if !(mu > 0.0) {
        return Err(Error::Validation(format!(
            "graininess must be >= 0, got {mu}"
        )));
    }
    Ok(exp_m1(z * mu) / mu)
}

type ScalarFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A real rate `p(t)` on a time scale. The closure receives `(t, mu(t))`
/// so that circle-sums of constants (which depend on the graininess) stay
/// representable.
#[derive(Clone)]
pub enum ScalarSignal {
    Constant(f64),
    Function(Arc<ScalarFn>),
}

impl fmt::Debug for ScalarSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarSignal::Constant(c) => write!(f, "Constant({c})"),
            ScalarSignal::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl ScalarSignal {
    pub fn constant(p: f64) -> Self {
        ScalarSignal::Constant(p)
    }

    pub fn from_fn(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarSignal::Function(Arc::new(f))
    }

    pub fn eval(&self, t: f64, mu: f64) -> f64 {
        match self {
            ScalarSignal::Constant(c) => *c,
            ScalarSignal::Function(f) => f(t, mu),
        }
    }

    /// Pointwise `p (+) q`.
    pub fn circle_plus(&self, other: &ScalarSignal) -> ScalarSignal {
        let (p, q) = (self.clone(), other.clone());
        ScalarSignal::from_fn(move |t, mu| circle_plus(p.eval(t, mu), q.eval(t, mu), mu))
    }

    /// Pointwise `(-)p`. Evaluates to NaN where `p` is not regressive.
    pub fn circle_neg(&self) -> ScalarSignal {
        let p = self.clone();
        ScalarSignal::from_fn(move |t, mu| circle_neg(p.eval(t, mu), mu).unwrap_or(f64::NAN))
    }

    /// Pointwise `p (-) q`.
    pub fn circle_minus(&self, other: &ScalarSignal) -> ScalarSignal {
        self.circle_plus(&other.circle_neg())
    }
}

/// Delta-integral of `f` over `[a, b)` as a mesh sum `sum f(t) mu_eff(t)`.
/// Exact on purely discrete scales. Reversed limits flip the sign.
pub fn delta_integral(f: &ScalarSignal, ts: &TimeScale, a: f64, b: f64, h: f64) -> Result<f64> {
    if a > b {
        return delta_integral(f, ts, b, a, h).map(|v| -v);
    }
    let mesh = ts.mesh(a, b, h)?;
    let mut sum = 0.0;
    for node in &mesh.nodes {
        let v = f.eval(node.t, node.mu());
        if !v.is_finite() {
            return Err(Error::Domain(format!(
                "integrand is not finite at t = {}",
                node.t
            )));
        }
        sum += v * node.step();
    }
    Ok(sum)
}

/// Generalized exponential `e_p(t, s)`.
///
/// Scattered nodes contribute the exact factor `1 + mu p` (which may be
/// negative); dense subnodes contribute `exp(p * step)`, the `mu -> 0` limit
/// of the cylinder transform.
pub fn exp_ts(p: &ScalarSignal, ts: &TimeScale, t: f64, s: f64, h: f64) -> Result<f64> {
    if !ts.contains(t) {
        return Err(Error::NotMember { t });
    }
    if !ts.contains(s) {
        return Err(Error::NotMember { t: s });
    }
    if t < s {
        return Ok(1.0 / exp_ts(p, ts, s, t, h)?);
    }
    let mesh = ts.mesh(s, t, h)?;
    let mut product = 1.0;
    let mut exponent = 0.0;
    for node in &mesh.nodes {
        let mu = node.mu();
        let v = p.eval(node.t, mu);
        match node.kind {
            NodeKind::Scattered if mu >= DENSE_MU => {
                let f = 1.0 + mu * v;
                if !(f.abs() > REGRESSIVE_MARGIN) {
                    return Err(Error::Domain(format!(
                        "p is not regressive at t = {} (1 + mu p = {f:e})",
                        node.t
                    )));
                }
                product *= f;
            }
            _ => {
                if !v.is_finite() {
                    return Err(Error::Domain(format!("p is not finite at t = {}", node.t)));
                }
                exponent += v * node.step();
            }
        }
    }
    Ok(product * exponent.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timescale::{make_scale, Element, ScaleKind};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn circle_plus_examples() {
        assert_eq!(circle_plus(0.7, 0.0, 0.3), 0.7);
        assert_eq!(circle_plus(0.7, 1.1, 0.0), 0.7 + 1.1);
        assert_eq!(circle_plus(-0.5, -0.5, 1.0), -0.75);
        assert!(in_hilger_circle(c(-0.75, 0.0), 1.0));
        let z = circle_plus(c(1.0, 2.0), c(-0.5, 0.25), 0.5);
        assert_eq!(
            z,
            c(1.0, 2.0) + c(-0.5, 0.25) + c(1.0, 2.0) * c(-0.5, 0.25) * 0.5
        );
    }

    #[test]
    fn circle_neg_examples() {
        assert_eq!(circle_neg(0.0, 0.4).unwrap(), 0.0);
        assert_eq!(circle_neg(2.5, 0.0).unwrap(), -2.5);
        let q = circle_neg(1.0, 1.0).unwrap();
        assert_eq!(q, -0.5);
        assert_eq!(circle_plus(1.0, q, 1.0), 0.0);
        assert!(circle_neg(-1.0, 1.0).is_err());
        assert!(matches!(
            circle_minus(2.0, -2.0, 0.5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn hilger_parts() {
        assert!((hilger_re(c(0.3, 0.0), 0.5).unwrap() - 0.3).abs() < 1e-15);
        assert!((hilger_re(c(-1.0, 0.0), 1.0).unwrap() + 1.0).abs() < 1e-15);
        let r = hilger_re(c(0.0, 2.0), 0.5).unwrap();
        assert!((r - (2f64.sqrt() - 1.0) / 0.5).abs() < 1e-14, "{r}");
        assert!((r - 0.828_427_124_746_19).abs() < 1e-12);
        assert_eq!(hilger_re(c(1.5, -2.0), 0.0).unwrap(), 1.5);
        assert_eq!(hilger_im(c(1.5, -2.0), 0.0).unwrap(), -2.0);
        assert!((hilger_im(c(0.0, 2.0), 0.5).unwrap() - (1f64).atan2(1.0) / 0.5).abs() < 1e-15);
        assert!(hilger_im(c(-2.0, 0.0), 0.5).is_err());
        // negative real axis sits on the closed upper edge of the strip
        assert_eq!(hilger_im(c(-3.0, -0.0), 1.0).unwrap(), PI);
    }

    #[test]
    fn hilger_circle_examples() {
        assert!(in_hilger_circle(c(-1.0, 0.0), 1.0));
        assert!(!in_hilger_circle(c(0.0, 0.0), 1.0));
        for mu in [0.01, 1.0, 10.0, 19.9] {
            assert!(in_hilger_circle(c(-0.1, 0.0), mu));
        }
        assert!(!in_hilger_circle(c(-0.1, 0.0), 20.0));
        assert!(in_hilger_circle(c(-1e-9, 5.0), 0.0));
    }

    #[test]
    fn cylinder_examples() {
        assert_eq!(cylinder(c(0.0, 0.0), 0.7).unwrap(), c(0.0, 0.0));
        assert_eq!(cylinder(c(2.0, -1.0), 0.0).unwrap(), c(2.0, -1.0));
        assert_eq!(inv_cylinder(c(2.0, -1.0), 0.0).unwrap(), c(2.0, -1.0));
        let e = std::f64::consts::E;
        let x = cylinder(c(e - 1.0, 0.0), 1.0).unwrap();
        assert!((x - c(1.0, 0.0)).norm() < 1e-15);
        let y = inv_cylinder(c(1.0, 0.0), 1.0).unwrap();
        assert!((y - c(e - 1.0, 0.0)).norm() < 1e-15);
        assert!(cylinder(c(-2.0, 0.0), 0.5).is_err());
    }

    #[test]
    fn hilger_point_validation() {
        assert!(HilgerPoint::new(c(-2.0, 0.0), 0.5).is_err());
        let a = HilgerPoint::new(c(-0.5, 0.1), 1.0).unwrap();
        let b = HilgerPoint::new(c(-0.2, -0.3), 1.0).unwrap();
        let s = a.circle_plus(&b).unwrap();
        assert!(s.re() < 0.0);
        assert!(a
            .circle_plus(&HilgerPoint::new(c(0.0, 0.0), 0.5).unwrap())
            .is_err());
    }

    #[test]
    fn delta_integral_examples() {
        let z = make_scale(&ScaleKind::Uniform {
            h: 1.0,
            k_min: 0,
            k_max: 10,
        })
        .unwrap();
        let one = ScalarSignal::constant(1.0);
        assert_eq!(delta_integral(&one, &z, 2.0, 7.0, 0.1).unwrap(), 5.0);
        let id = ScalarSignal::from_fn(|t, _| t);
        assert_eq!(delta_integral(&id, &z, 0.0, 4.0, 0.1).unwrap(), 6.0);
        assert_eq!(delta_integral(&id, &z, 4.0, 0.0, 0.1).unwrap(), -6.0);

        let line = TimeScale::new(vec![Element::Interval(0.0, 1.0)]).unwrap();
        for h in [0.1, 0.01, 1e-3] {
            let v = delta_integral(&id, &line, 0.0, 1.0, h).unwrap();
            assert!((v - 0.5).abs() <= 2.0 * h, "h = {h}: {v}");
        }
        assert!(delta_integral(&one, &z, 0.5, 3.0, 0.1).is_err());
    }

    #[test]
    fn exponential_closed_forms() {
        let z = make_scale(&ScaleKind::Uniform {
            h: 1.0,
            k_min: 0,
            k_max: 10,
        })
        .unwrap();
        let p = ScalarSignal::constant(1.0);
        assert_eq!(exp_ts(&p, &z, 5.0, 0.0, 0.1).unwrap(), 32.0);
        assert_eq!(exp_ts(&p, &z, 3.0, 3.0, 0.1).unwrap(), 1.0);
        assert_eq!(exp_ts(&p, &z, 0.0, 5.0, 0.1).unwrap(), 1.0 / 32.0);

        let line = TimeScale::new(vec![Element::Interval(0.0, 2.0)]).unwrap();
        let p = ScalarSignal::constant(-0.7);
        let v = exp_ts(&p, &line, 1.5, 0.25, 1e-3).unwrap();
        assert!((v - (-0.7f64 * 1.25).exp()).abs() < 1e-14);

        let hz = make_scale(&ScaleKind::Uniform {
            h: 0.25,
            k_min: 0,
            k_max: 12,
        })
        .unwrap();
        let p = ScalarSignal::constant(-2.5);
        let v = exp_ts(&p, &hz, 2.5, 0.5, 1e-3).unwrap();
        assert!((v - (1.0f64 - 0.625).powi(8)).abs() < 1e-15);
    }

    #[test]
    fn exponential_rejects_non_regressive() {
        let z = make_scale(&ScaleKind::Uniform {
            h: 1.0,
            k_min: 0,
            k_max: 4,
        })
        .unwrap();
        assert!(matches!(
            exp_ts(&ScalarSignal::constant(-1.0), &z, 3.0, 0.0, 0.1),
            Err(Error::Domain(_))
        ));
        assert!(exp_ts(&ScalarSignal::constant(1.0), &z, 3.5, 0.0, 0.1).is_err());
    }

    #[test]
    fn exponential_on_mixed_scale() {
        // [0,1] then jump of 2 to 3, then [3,4]
        let ts = make_scale(&ScaleKind::Pulse {
            a: 1.0,
            b: 2.0,
            periods: 2,
        })
        .unwrap();
        let p = ScalarSignal::constant(0.3);
        let v = exp_ts(&p, &ts, 3.5, 0.0, 1e-2).unwrap();
        let expected = (0.3f64 * 1.5).exp() * (1.0 + 2.0 * 0.3);
        assert!((v - expected).abs() < 1e-13 * expected);
    }

    proptest! {
        #[test]
        fn hilger_circle_closure_via_unit_disk(
            r1 in 0.0f64..1.0, th1 in -PI..PI, r2 in 0.0f64..1.0, th2 in -PI..PI,
            mu in prop::sample::select(vec![0.01, 0.1, 1.0, 3.0]),
        ) {
            let alpha = Complex64::from_polar(r1, th1);
            let beta = Complex64::from_polar(r2, th2);
            let a = (alpha - 1.0) / mu;
            let b = (beta - 1.0) / mu;
            prop_assume!(in_hilger_circle(a, mu) && in_hilger_circle(b, mu));
            prop_assert!(in_hilger_circle(circle_plus(a, b, mu), mu));
        }

        #[test]
        fn cylinder_round_trip(re in -50.0f64..50.0, im in -50.0f64..50.0, mu in 1e-3f64..2.0) {
            let z = c(re, im);
            let w = one_plus(z, mu);
            prop_assume!(w.norm() > 1e-6 && !(w.re < 0.0 && w.im.abs() < 1e-9));
            let back = inv_cylinder(cylinder(z, mu)?, mu)?;
            prop_assert!((back - z).norm() <= 1e-12 * z.norm().max(1.0), "{} vs {}", back, z);
        }

        #[test]
        fn circle_predicate_matches_hilger_real_part(re in -30.0f64..10.0, im in -30.0f64..30.0, mu in 1e-3f64..2.0) {
            let z = c(re, im);
            let w = one_plus(z, mu).norm();
            prop_assume!((w - 1.0).abs() > 1e-12);
            prop_assert_eq!(in_hilger_circle(z, mu), hilger_re(z, mu)? < 0.0);
        }

        #[test]
        fn decaying_exponential_is_in_unit_interval(lambda in 0.01f64..5.0, seed in 0u64..1000) {
            let ts = make_scale(&ScaleKind::Random { mu_lo: 0.01, mu_hi: 0.19, n_points: 30, seed }).unwrap();
            let p = ScalarSignal::constant(-lambda);
            let pts = ts.scattered_points();
            let mut prev = 1.0;
            for &t in &pts {
                let v = exp_ts(&p, &ts, t, pts[0], 1e-3)?;
                prop_assert!(v > 0.0 && v <= 1.0);
                prop_assert!(v <= prev);
                prev = v;
            }
        }
    }
}
