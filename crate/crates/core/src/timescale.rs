//! Finite time scales: ordered unions of isolated points and closed
//! intervals, their jump operators and the quadrature mesh used for
//! delta-integrals.
//!
//! A stored scale is a finite prefix of a (possibly unbounded) time scale.
//! Its maximum is treated as its own forward jump, so `sigma(max) == max`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance (seconds) for membership and endpoint comparisons.
pub const MEMBER_TOL: f64 = 1e-12;

/// One connected component of a time scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Element {
    Point(f64),
    Interval(f64, f64),
}

impl Element {
    pub fn start(&self) -> f64 {
        match *self {
            Element::Point(p) => p,
            Element::Interval(a, _) => a,
        }
    }

    pub fn end(&self) -> f64 {
        match *self {
            Element::Point(p) => p,
            Element::Interval(_, b) => b,
        }
    }

    fn contains(&self, t: f64) -> bool {
        t >= self.start() - MEMBER_TOL && t <= self.end() + MEMBER_TOL
    }
}

/// A nonempty, finite, closed subset of the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeScale {
    elements: Vec<Element>,
}

/// On-disk representation of a scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleFile {
    pub elements: Vec<Element>,
    #[serde(default = "default_unit")]
    pub unit: String,
}

fn default_unit() -> String {
    "s".to_string()
}

/// Generators for the canonical scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleKind {
    /// `h * k` for `k_min <= k <= k_max`.
    Uniform {
        h: f64,
        k_min: i64,
        k_max: i64,
    },
    /// `q^k` for `k_min <= k <= k_max`.
    Quantum {
        q: f64,
        k_min: i32,
        k_max: i32,
    },
    /// `[k(a+b), k(a+b)+a]` for `k = 0..periods`.
    Pulse {
        a: f64,
        b: f64,
        periods: usize,
    },
    /// Isolated points starting at 0 with gaps drawn uniformly from
    /// `[mu_lo, mu_hi]`.
    Random {
        mu_lo: f64,
        mu_hi: f64,
        n_points: usize,
        seed: u64,
    },
    /// Isolated points whose gaps are integer multiples of `tick`: the first
    /// `slow_points` gaps are drawn from `slow`, the remaining ones from
    /// `fast` (a controller that misses deadlines early on).
    Ticks {
        tick: f64,
        slow_points: usize,
        slow: (u32, u32),
        fast: (u32, u32),
        n_points: usize,
        seed: u64,
    },
    /// Like `Random`, with one long gap of `gap` seconds after point
    /// index `gap_after`.
    RandomWithGap {
        mu_lo: f64,
        mu_hi: f64,
        n_points: usize,
        gap_after: usize,
        gap: f64,
        seed: u64,
    },
    Explicit {
        elements: Vec<Element>,
    },
}

/// Builds a scale from one of the canonical generators.
pub fn make_scale(kind: &ScaleKind) -> Result<TimeScale> {
    match kind {
        &ScaleKind::Uniform { h, k_min, k_max } => {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Validation(format!(
                    "hZ step must be positive, got {h}"
                )));
            }
            if k_max < k_min {
                return Err(Error::Validation(format!(
                    "empty index range {k_min}..={k_max}"
                )));
            }
            TimeScale::from_points((k_min..=k_max).map(|k| k as f64 * h))
        }
        &ScaleKind::Quantum { q, k_min, k_max } => {
            if !(q > 1.0 && q.is_finite()) {
                return Err(Error::Validation(format!("q must exceed 1, got {q}")));
            }
            if k_max < k_min {
                return Err(Error::Validation(format!(
                    "empty index range {k_min}..={k_max}"
                )));
            }
            TimeScale::from_points((k_min..=k_max).map(|k| q.powi(k)))
        }
        &ScaleKind::Pulse { a, b, periods } => {
            if !(a > 0.0 && b > 0.0) || periods == 0 {
                return Err(Error::Validation(format!(
                    "pulse scale needs a, b > 0 and at least one period (a={a}, b={b}, periods={periods})"
                )));
            }
            TimeScale::new(
                (0..periods)
                    .map(|k| {
                        let s = k as f64 * (a + b);
                        Element::Interval(s, s + a)
                    })
                    .collect(),
            )
        }
        &ScaleKind::Random {
            mu_lo,
            mu_hi,
            n_points,
            seed,
        } => {
            check_gap_range(mu_lo, mu_hi, n_points)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gaps = (1..n_points)
                .map(|_| draw(&mut rng, mu_lo, mu_hi))
                .collect::<Vec<_>>();
            TimeScale::from_gaps(&gaps)
        }
        &ScaleKind::Ticks {
            tick,
            slow_points,
            slow,
            fast,
            n_points,
            seed,
        } => {
            if !(tick > 0.0)
                || n_points < 2
                || slow.0 == 0
                || fast.0 == 0
                || slow.0 > slow.1
                || fast.0 > fast.1
            {
                return Err(Error::Validation(
                    "tick scale needs tick > 0, n >= 2 and nonempty positive multiple ranges"
                        .into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gaps = (1..n_points)
                .map(|i| {
                    let (lo, hi) = if i <= slow_points { slow } else { fast };
                    tick * rng.gen_range(lo..=hi) as f64
                })
                .collect::<Vec<_>>();
            TimeScale::from_gaps(&gaps)
        }
        &ScaleKind::RandomWithGap {
            mu_lo,
            mu_hi,
            n_points,
            gap_after,
            gap,
            seed,
        } => {
            check_gap_range(mu_lo, mu_hi, n_points)?;
            if !(gap > 0.0) || gap_after + 1 >= n_points {
                return Err(Error::Validation(format!(
                    "gap must be positive and placed before the last point (gap={gap}, after={gap_after})"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gaps = (1..n_points)
                .map(|i| {
                    let g = draw(&mut rng, mu_lo, mu_hi);
                    if i == gap_after + 1 {
                        gap
                    } else {
                        g
                    }
                })
                .collect::<Vec<_>>();
            TimeScale::from_gaps(&gaps)
        }
        ScaleKind::Explicit { elements } => TimeScale::new(elements.clone()),
    }
}

fn check_gap_range(mu_lo: f64, mu_hi: f64, n_points: usize) -> Result<()> {
    if !(mu_lo > 0.0 && mu_hi >= mu_lo && mu_hi.is_finite()) {
        return Err(Error::Validation(format!(
            "graininess range must satisfy 0 < mu_lo <= mu_hi (got {mu_lo}, {mu_hi})"
        )));
    }
    if n_points < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 points, got {n_points}"
        )));
    }
    Ok(())
}

fn draw(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

impl TimeScale {
    /// Builds a scale, sorting the elements and merging touching or
    /// overlapping components.
    pub fn new(mut elements: Vec<Element>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Validation("a time scale must be nonempty".into()));
        }
        for (i, e) in elements.iter().enumerate() {
            match *e {
                Element::Point(p) if !p.is_finite() => {
                    return Err(Error::Validation(format!("element {i}: non-finite point")));
                }
                Element::Interval(a, b) if !(a.is_finite() && b.is_finite()) => {
                    return Err(Error::Validation(format!(
                        "element {i}: non-finite interval"
                    )));
                }
                Element::Interval(a, b) if a >= b => {
                    return Err(Error::Validation(format!(
                        "element {i}: interval [{a}, {b}] must satisfy a < b"
                    )));
                }
                _ => {}
            }
        }
        elements.sort_by(|x, y| {
            x.start()
                .total_cmp(&y.start())
                .then(x.end().total_cmp(&y.end()))
        });

        let mut merged: Vec<Element> = Vec::with_capacity(elements.len());
        for e in elements {
            match merged.last_mut() {
                Some(last) if e.start() <= last.end() + MEMBER_TOL => {
                    let a = last.start();
                    let b = last.end().max(e.end());
                    *last = if b - a > MEMBER_TOL {
                        Element::Interval(a, b)
                    } else {
                        Element::Point(a)
                    };
                }
                _ => merged.push(e),
            }
        }
        Ok(Self { elements: merged })
    }

    pub fn from_points<I: IntoIterator<Item = f64>>(points: I) -> Result<Self> {
        Self::new(points.into_iter().map(Element::Point).collect())
    }

    /// Isolated points at the partial sums of `gaps`, starting from 0.
    fn from_gaps(gaps: &[f64]) -> Result<Self> {
        let mut t = 0.0;
        let mut pts = Vec::with_capacity(gaps.len() + 1);
        pts.push(t);
        for g in gaps {
            t += g;
            pts.push(t);
        }
        Self::from_points(pts)
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn min(&self) -> f64 {
        self.elements[0].start()
    }

    pub fn max(&self) -> f64 {
        self.elements[self.elements.len() - 1].end()
    }

    /// Index of the element containing `t`, if any.
    pub fn locate(&self, t: f64) -> Option<usize> {
        let p = self
            .elements
            .partition_point(|e| e.start() <= t + MEMBER_TOL);
        if p == 0 {
            return None;
        }
        let i = p - 1;
        self.elements[i].contains(t).then_some(i)
    }

    pub fn contains(&self, t: f64) -> bool {
        self.locate(t).is_some()
    }

    fn require(&self, t: f64) -> Result<usize> {
        self.locate(t).ok_or(Error::NotMember { t })
    }

    /// `sigma(t) == t` because `t` lies in the interior or at the left end of
    /// an interval.
    pub fn is_right_dense(&self, t: f64) -> Result<bool> {
        let i = self.require(t)?;
        Ok(matches!(self.elements[i], Element::Interval(_, b) if t < b - MEMBER_TOL))
    }

    /// Forward jump operator.
    pub fn sigma(&self, t: f64) -> Result<f64> {
        let i = self.require(t)?;
        if let Element::Interval(_, b) = self.elements[i] {
            if t < b - MEMBER_TOL {
                return Ok(t);
            }
        }
        Ok(self.elements.get(i + 1).map_or(t, Element::start))
    }

    /// Backward jump operator.
    pub fn rho(&self, t: f64) -> Result<f64> {
        let i = self.require(t)?;
        if let Element::Interval(a, _) = self.elements[i] {
            if t > a + MEMBER_TOL {
                return Ok(t);
            }
        }
        Ok(if i == 0 {
            t
        } else {
            self.elements[i - 1].end()
        })
    }

    /// Graininess `sigma(t) - t`.
    pub fn mu(&self, t: f64) -> Result<f64> {
        Ok(self.sigma(t)? - t)
    }

    /// `k`-fold forward jump. Right-dense points are fixed; asking for a jump
    /// past the stored maximum is an out-of-range error.
    pub fn sigma_k(&self, t: f64, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::Validation("sigma_k needs k >= 1".into()));
        }
        let mut cur = t;
        for done in 0..k {
            if self.is_right_dense(cur)? {
                return Ok(cur);
            }
            if self.is_max(cur) {
                return Err(Error::OutOfRange(format!(
                    "sigma^{k}({t}) leaves the truncated scale after {done} jump(s)"
                )));
            }
            cur = self.sigma(cur)?;
        }
        Ok(cur)
    }

    fn is_max(&self, t: f64) -> bool {
        (t - self.max()).abs() <= MEMBER_TOL
    }

    /// Smallest member `>= t`, if any.
    pub fn snap_forward(&self, t: f64) -> Option<f64> {
        if self.contains(t) {
            return Some(t);
        }
        let p = self.elements.partition_point(|e| e.end() < t);
        self.elements.get(p).map(|e| e.start().max(t))
    }

    pub fn has_dense_parts(&self) -> bool {
        self.elements
            .iter()
            .any(|e| matches!(e, Element::Interval(..)))
    }

    /// Positive graininess values at the right-scattered points (the maximum
    /// excluded).
    fn positive_graininess(&self) -> impl Iterator<Item = f64> + '_ {
        self.elements.windows(2).map(|w| w[1].start() - w[0].end())
    }

    pub fn mu_max(&self) -> f64 {
        self.positive_graininess().fold(0.0, f64::max)
    }

    pub fn mu_min(&self) -> Option<f64> {
        self.positive_graininess().reduce(f64::min)
    }

    /// Default quadrature step: `min(mu_min / 4, 1 ms)`.
    pub fn default_step(&self) -> f64 {
        self.mu_min().map_or(1e-3, |m| (m / 4.0).min(1e-3))
    }

    /// All members that are isolated points or interval endpoints, in order.
    pub fn scattered_points(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for e in &self.elements {
            match *e {
                Element::Point(p) => out.push(p),
                Element::Interval(a, b) => {
                    out.push(a);
                    out.push(b);
                }
            }
        }
        out
    }

    /// Quadrature mesh of the half-open range `[a, b)`.
    pub fn mesh(&self, a: f64, b: f64, h: f64) -> Result<Mesh> {
        if !(h > 0.0) {
            return Err(Error::Validation(format!(
                "mesh step must be positive, got {h}"
            )));
        }
        let ia = self.require(a)?;
        self.require(b)?;
        if a > b + MEMBER_TOL {
            return Err(Error::Validation(format!(
                "mesh range [{a}, {b}) is reversed"
            )));
        }
        let mut nodes = Vec::new();
        for (i, e) in self.elements.iter().enumerate().skip(ia) {
            if i > ia && e.start() >= b - MEMBER_TOL {
                break;
            }
            match *e {
                Element::Point(p) => {
                    if p >= b - MEMBER_TOL {
                        break;
                    }
                    let next = self.elements[i + 1].start();
                    nodes.push(MeshNode::new(p, next, NodeKind::Scattered));
                }
                Element::Interval(lo_e, hi_e) => {
                    let lo = if i == ia { a.max(lo_e) } else { lo_e };
                    let hi = if b <= hi_e + MEMBER_TOL { b } else { hi_e };
                    if lo >= b - MEMBER_TOL {
                        break;
                    }
                    let len = hi - lo;
                    if len > MEMBER_TOL {
                        let n = ((len / h) - 1e-9).ceil().max(1.0) as usize;
                        let mut prev = lo;
                        for j in 1..=n {
                            let next = if j == n {
                                hi
                            } else {
                                lo + len * (j as f64) / (n as f64)
                            };
                            nodes.push(MeshNode::new(prev, next, NodeKind::Dense));
                            prev = next;
                        }
                    }
                    if hi_e < b - MEMBER_TOL {
                        let next = self.elements[i + 1].start();
                        nodes.push(MeshNode::new(hi_e, next, NodeKind::Scattered));
                    }
                }
            }
        }
        Ok(Mesh {
            nodes,
            start: a,
            end: b,
            h,
        })
    }

    /// Mesh of the whole stored scale, `[min, max)`.
    pub fn build_mesh(&self, h: f64) -> Result<Mesh> {
        self.mesh(self.min(), self.max(), h)
    }

    pub fn to_file(&self) -> ScaleFile {
        ScaleFile {
            elements: self.elements.clone(),
            unit: default_unit(),
        }
    }

    /// Parses the JSON scale format, rejecting unsorted, overlapping or
    /// malformed elements with the offending element index.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScaleFile = serde_json::from_str(text)?;
        if file.unit != "s" {
            return Err(Error::Parse(format!(
                "unsupported unit {:?}, expected \"s\"",
                file.unit
            )));
        }
        if file.elements.is_empty() {
            return Err(Error::Parse(
                "elements: a time scale must be nonempty".into(),
            ));
        }
        for (i, e) in file.elements.iter().enumerate() {
            let ok = match *e {
                Element::Point(p) => p.is_finite(),
                Element::Interval(a, b) => a.is_finite() && b.is_finite() && a < b,
            };
            if !ok {
                return Err(Error::Parse(format!("element {i}: malformed {e:?}")));
            }
            if i > 0 {
                let prev = file.elements[i - 1];
                if e.start() < prev.end() - MEMBER_TOL
                    || (e.start() <= prev.end() + MEMBER_TOL
                        && matches!((prev, e), (Element::Point(_), Element::Point(_))))
                {
                    return Err(Error::Parse(format!(
                        "element {i}: {e:?} is not strictly after element {}: {prev:?}",
                        i - 1
                    )));
                }
            }
        }
        Self::new(file.elements)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scale serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Whether a mesh node is an isolated jump or a quadrature subnode inside an
/// interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Scattered,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshNode {
    pub t: f64,
    /// Next node (or the end of the range); `next - t` is the effective
    /// graininess.
    pub next: f64,
    pub kind: NodeKind,
}

impl MeshNode {
    fn new(t: f64, next: f64, kind: NodeKind) -> Self {
        Self { t, next, kind }
    }

    /// Effective graininess (quadrature weight).
    pub fn step(&self) -> f64 {
        self.next - self.t
    }

    /// True graininess of the underlying time scale: 0 on dense subnodes.
    pub fn mu(&self) -> f64 {
        match self.kind {
            NodeKind::Scattered => self.step(),
            NodeKind::Dense => 0.0,
        }
    }

    pub fn is_dense(&self) -> bool {
        self.kind == NodeKind::Dense
    }
}

/// Quadrature carrier for delta-integrals over `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<MeshNode>,
    pub start: f64,
    pub end: f64,
    pub h: f64,
}

impl Mesh {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(MeshNode::step).sum()
    }
}
