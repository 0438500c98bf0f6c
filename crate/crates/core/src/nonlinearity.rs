//! Nonlinearities `F(x, t, s)` with their hypothesis constants, sampled
//! hypothesis checks, admissible exponent windows and the cut-off
//! modification that replaces `F` by a pure power tail far from the origin.

use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cutoff::{CutoffFamily, CutoffKind};
use crate::expr::{self, differentiate, Arity, Env, Expr, ExprError, Var};
use crate::nfunction::IndexPair;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonlinearityError {
    #[error("partial derivatives missing: call `with_symbolic_partials` first")]
    MissingPartials,
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Constants attached to the hypotheses, indexed by component. A scalar
/// problem uses slot 0 only.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisConstants {
    /// Lower-growth exponents `k`.
    pub k: [f64; 2],
    /// Lower-growth coefficients (`M₁, M₂`, or `D₁` for a scalar).
    pub lower: [f64; 2],
    /// Gradient-growth exponents `r`.
    pub r: [f64; 2],
    /// Gradient-growth coefficients (`M₃, M₄`, or `D₂` for a scalar).
    pub grad: [f64; 2],
    /// Hölder splitting parameters `Θ > 1`.
    pub window: [f64; 2],
    /// Superlinearity exponents `μ`.
    pub mu: [f64; 2],
    /// Radius of the region where the hypotheses are required.
    pub radius: f64,
    /// Explicit power-tail coefficients overriding the derived ones.
    pub tail: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearitySpec {
    pub f: Expr,
    pub f_t: Option<Expr>,
    pub f_s: Option<Expr>,
    /// 1 for a scalar problem in `t`, 2 for a system in `(t, s)`.
    pub components: usize,
    /// Number of spatial coordinates `F` may depend on.
    pub x_dim: usize,
    pub constants: HypothesisConstants,
}

impl NonlinearitySpec {
    pub fn parse(src: &str, components: usize, x_dim: usize, constants: HypothesisConstants) -> Result<Self, ExprError> {
        assert!(components == 1 || components == 2);
        let f = expr::parse_with(src, Arity::new(true, components == 2, x_dim))?;
        Ok(NonlinearitySpec { f, f_t: None, f_s: None, components, x_dim, constants })
    }

    pub fn with_symbolic_partials(mut self) -> Self {
        self.f_t = Some(differentiate(&self.f, Var::T));
        self.f_s = Some(if self.components == 2 { differentiate(&self.f, Var::S) } else { Expr::Const(0.0) });
        self
    }

    fn partials(&self) -> Result<(&Expr, &Expr), NonlinearityError> {
        match (&self.f_t, &self.f_s) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(NonlinearityError::MissingPartials),
        }
    }

    pub fn value(&self, x: &[f64], t: f64, s: f64) -> f64 {
        self.f.eval(&Env::ts(t, s, x)).unwrap_or(f64::NAN)
    }

    /// `(F, F_t, F_s)`; partials must be present.
    pub fn eval_with_partials(&self, x: &[f64], t: f64, s: f64) -> (f64, f64, f64) {
        let env = Env::ts(t, s, x);
        let get = |e: &Option<Expr>| e.as_ref().map_or(f64::NAN, |e| e.eval(&env).unwrap_or(f64::NAN));
        (self.f.eval(&env).unwrap_or(f64::NAN), get(&self.f_t), get(&self.f_s))
    }
}

/// The worked system example: `F = σ·b·G₁ + (1−σ)·b·G₂` with
/// `G₁ = |t|^{17/2}+|s|^{17/2}+|t|^7|s|^7`, `G₂ = |t|³+|s|³`, a sine blend
/// `σ` on `4 ≤ |(t,s)| ≤ 8`, and `b = 1 + Σ cos²(π xᵢ)` over six coordinates
/// (or `b ≡ 1` when `weighted` is false).
pub fn worked_example(weighted: bool) -> NonlinearitySpec {
    worked_example_in(if weighted { 6 } else { 0 })
}

/// The worked example with the weight `b` summed over the first `x_dim`
/// coordinates only (`b ≡ 1` for `x_dim = 0`). Used to restrict the
/// problem to a low-dimensional grid.
pub fn worked_example_in(x_dim: usize) -> NonlinearitySpec {
    let blend = "sin(pi*(clamp(t^2+s^2,16,64)-64)^2/4608)";
    let inner = "(|t|^(17/2)+|s|^(17/2)+|t|^7*|s|^7)";
    let outer = "(|t|^3+|s|^3)";
    let weight = if x_dim > 0 { format!("(1+sum_cos2(x,{x_dim}))") } else { "1".to_string() };
    let src = format!("{blend}*{weight}*{inner}+(1-{blend})*{weight}*{outer}");
    let constants = HypothesisConstants {
        k: [9.0, 9.0],
        lower: [1.0 / 16.0, 1.0 / 16.0],
        r: [7.0, 7.0],
        grad: [2f64.powi(41), 2f64.powi(41)],
        window: [6.0, 6.0],
        mu: [8.5, 8.5],
        radius: 4.0,
        tail: None,
    };
    NonlinearitySpec::parse(&src, 2, x_dim, constants)
        .expect("static expression")
        .with_symbolic_partials()
}

/// `M₅ = M₃ + 2^{|r₁−r₂|} M₄`, `M₆ = M₄ + 2^{|r₁−r₂|} M₃`.
pub fn derive_growth_constants(m3: f64, m4: f64, r1: f64, r2: f64) -> (f64, f64) {
    let w = 2f64.powf((r1 - r2).abs());
    (m3 + w * m4, m4 + w * m3)
}

/// Open interval `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn is_empty(&self) -> bool {
        !(self.lo < self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo < v && v < self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            write!(f, "empty ({}, {})", self.lo, self.hi)
        } else {
            write!(f, "({}, {})", self.lo, self.hi)
        }
    }
}

/// Admissible windows for the gradient exponents `r₁, r₂`.
pub fn admissible_r_intervals(ip1: &IndexPair, ip2: &IndexPair, window1: f64, window2: f64) -> (Interval, Interval) {
    let lower = |mi: f64, lj: f64, wj: f64| 1.0 + (1.0 + mi) * (lj - 1.0) * (wj - 1.0) / (lj * wj);
    let upper = |li: f64, li_star: f64, mi: f64, wi: f64| {
        1.0 + li_star * (li - 1.0) / li - (li - 1.0) * (1.0 + mi) / (wi * li)
    };
    let floor = ip1.m.max(ip2.m);
    let i1 = Interval {
        lo: floor.max(lower(ip1.m, ip2.l, window2)),
        hi: ip1.l_star.min(upper(ip1.l, ip1.l_star, ip1.m, window1)),
    };
    let i2 = Interval {
        lo: floor.max(lower(ip2.m, ip1.l, window1)),
        hi: ip2.l_star.min(upper(ip2.l, ip2.l_star, ip2.m, window2)),
    };
    (i1, i2)
}

/// Upper end of the lower-growth window for a scalar problem:
/// `K = min{l*, (m·l − l + l*)/m}`.
pub fn scalar_decay_threshold(ip: &IndexPair) -> f64 {
    ip.l_star.min((ip.m * ip.l - ip.l + ip.l_star) / ip.m)
}

// ---------------------------------------------------------------------------
// Modified nonlinearity

/// Restriction used for one-signed solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignSplit {
    Both,
    /// Zero for `t < 0`.
    Positive,
    /// Zero for `t > 0`.
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModifiedValue {
    pub value: f64,
    pub d_t: f64,
    pub d_s: f64,
}

#[derive(Debug, Clone)]
pub struct ModifiedNonlinearity {
    pub base: NonlinearitySpec,
    pub cutoff: CutoffFamily,
    /// Power-tail coefficients (`M₅, M₆`, or `D₃` in slot 0).
    pub tail: [f64; 2],
    /// `min{r₁, r₂, μ₁, μ₂}` (or `min{r, μ}`).
    pub theta: f64,
    /// Empirical gradient-growth pair fitted on samples, 5% inflated.
    pub grad_fit: [f64; 2],
    pub split: SignSplit,
}

impl ModifiedNonlinearity {
    pub fn components(&self) -> usize {
        self.base.components
    }

    pub fn with_split(mut self, split: SignSplit) -> Self {
        self.split = split;
        self
    }

    fn tail_terms(&self, t: f64, s: f64) -> (f64, f64, f64) {
        let [r1, r2] = self.base.constants.r;
        let (at, as_) = (t.abs(), s.abs());
        let mut v = self.tail[0] * at.powf(r1);
        let dt = if at > 0.0 { self.tail[0] * r1 * at.powf(r1 - 2.0) * t } else { 0.0 };
        let mut ds = 0.0;
        if self.base.components == 2 {
            v += self.tail[1] * as_.powf(r2);
            ds = if as_ > 0.0 { self.tail[1] * r2 * as_.powf(r2 - 2.0) * s } else { 0.0 };
        }
        (v, dt, ds)
    }

    /// `F̃ = ρF + (1−ρ)·tail` and its partials.
    pub fn eval(&self, x: &[f64], t: f64, s: f64) -> ModifiedValue {
        let zero = ModifiedValue { value: 0.0, d_t: 0.0, d_s: 0.0 };
        match self.split {
            SignSplit::Positive if t < 0.0 => return zero,
            SignSplit::Negative if t > 0.0 => return zero,
            _ => {}
        }
        let s = if self.base.components == 2 { s } else { 0.0 };
        let rho = self.cutoff.eval(t, s);
        let (tail, tail_t, tail_s) = self.tail_terms(t, s);
        if rho.value == 0.0 {
            return ModifiedValue { value: tail, d_t: tail_t, d_s: tail_s };
        }
        let (f, f_t, f_s) = self.base.eval_with_partials(x, t, s);
        let gap = f - tail;
        let keep = 1.0 - rho.value;
        ModifiedValue {
            value: rho.value * f + keep * tail,
            d_t: rho.grad_t * gap + rho.value * f_t + keep * tail_t,
            d_s: rho.grad_s * gap + rho.value * f_s + keep * tail_s,
        }
    }

    /// Upper bound of the nonnegativity sandwich `0 ≤ F̃ ≤ tail`.
    pub fn tail_bound(&self, t: f64, s: f64) -> f64 {
        self.tail_terms(t, if self.base.components == 2 { s } else { 0.0 }).0
    }
}

fn sample_points(seed: u64, count: usize, radius: f64, components: usize, x_dim: usize) -> Vec<(Vec<f64>, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = count / 50;
    let near = count / 10;
    let strat = count - axis - near;
    let mut out = Vec::with_capacity(count);
    let push = |rng: &mut ChaCha8Rng, r: f64| {
        let (t, s) = if components == 2 {
            let a = rng.gen::<f64>() * std::f64::consts::TAU;
            (r * a.cos(), r * a.sin())
        } else {
            (if rng.gen::<bool>() { r } else { -r }, 0.0)
        };
        let x: Vec<f64> = (0..x_dim).map(|_| rng.gen::<f64>()).collect();
        (x, t, s)
    };
    for j in 0..strat {
        let r = radius * (j as f64 + rng.gen::<f64>()) / strat as f64;
        let p = push(&mut rng, r);
        out.push(p);
    }
    for _ in 0..near {
        let r = radius * 10f64.powf(-8.0 * rng.gen::<f64>());
        let p = push(&mut rng, r);
        out.push(p);
    }
    for j in 0..axis {
        let r = radius * (j as f64 + 0.5) / axis as f64;
        let x: Vec<f64> = (0..x_dim).map(|_| rng.gen::<f64>()).collect();
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        if components == 2 && j % 4 >= 2 {
            out.push((x, 0.0, sign * r));
        } else {
            out.push((x, sign * r, 0.0));
        }
    }
    out
}

/// The modified nonlinearity for a system, with the cut-off at `δ = 4`
/// unless `cutoff` says otherwise.
pub fn build_modified(spec: &NonlinearitySpec, cutoff: CutoffFamily) -> Result<ModifiedNonlinearity, NonlinearityError> {
    spec.partials()?;
    let c = &spec.constants;
    let tail = c.tail.unwrap_or_else(|| {
        let (m5, m6) = derive_growth_constants(c.grad[0], c.grad[1], c.r[0], c.r[1]);
        [m5, m6]
    });
    let theta = c.r[0].min(c.r[1]).min(c.mu[0]).min(c.mu[1]);
    let mut m = ModifiedNonlinearity {
        base: spec.clone(),
        cutoff,
        tail,
        theta,
        grad_fit: [0.0, 0.0],
        split: SignSplit::Both,
    };
    m.grad_fit = fit_gradient_bound(&m);
    Ok(m)
}

/// The scalar modification `F̃ = ρF + (1−ρ)D₃|t|^r` with the scalar sine
/// cut-off of radius `delta`. `D₃` defaults to `D₂/r`, the bound obtained
/// by integrating the gradient-growth hypothesis.
pub fn build_scalar_modified(spec: &NonlinearitySpec, delta: f64) -> Result<ModifiedNonlinearity, NonlinearityError> {
    spec.partials()?;
    let c = &spec.constants;
    let d3 = c.tail.map_or(c.grad[0] / c.r[0], |t| t[0]);
    let mut m = ModifiedNonlinearity {
        base: spec.clone(),
        cutoff: CutoffFamily::new(CutoffKind::ScalarSine, delta),
        tail: [d3, 0.0],
        theta: c.r[0].min(c.mu[0]),
        grad_fit: [0.0, 0.0],
        split: SignSplit::Both,
    };
    m.grad_fit = fit_gradient_bound(&m);
    Ok(m)
}

/// Smallest common `M` with `|F̃_t|, |F̃_s| ≤ M(|t|^{r₁−1} + |s|^{r₂−1})`
/// on a seeded sample out to twice the cut-off radius, inflated by 5%.
fn fit_gradient_bound(m: &ModifiedNonlinearity) -> [f64; 2] {
    let [r1, r2] = m.base.constants.r;
    let pts = sample_points(0xF17, 4000, 2.0 * m.cutoff.delta, m.components(), m.base.x_dim);
    let worst = pts
        .par_iter()
        .map(|(x, t, s)| {
            let v = m.eval(x, *t, *s);
            let mut scale = t.abs().powf(r1 - 1.0);
            if m.components() == 2 {
                scale += s.abs().powf(r2 - 1.0);
            }
            if scale > 0.0 {
                v.d_t.abs().max(v.d_s.abs()) / scale
            } else {
                0.0
            }
        })
        .reduce(|| 0.0, f64::max);
    let fit = 1.05 * worst;
    if m.components() == 2 {
        [fit, fit]
    } else {
        [fit, 0.0]
    }
}

// ---------------------------------------------------------------------------
// Hypothesis checking

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub x: Vec<f64>,
    pub t: f64,
    pub s: f64,
    /// Left side of `lhs ≤ rhs`.
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: &'static str,
    pub passed: bool,
    /// Smallest `(rhs − lhs)/max(|lhs|, |rhs|)` over the samples.
    pub worst_margin: f64,
    pub detail: String,
    /// The worst sample; always present for sampled inequalities.
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub verdicts: Vec<Verdict>,
    pub r_intervals: [Interval; 2],
    pub growth_constants: [f64; 2],
    /// Point outside the hypothesis disk where superlinearity fails.
    pub superlinear_failure: Option<Witness>,
    /// `K` for a scalar problem.
    pub decay_threshold: Option<f64>,
    pub samples: usize,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples = {}", self.samples);
        for v in &self.verdicts {
            let _ = writeln!(
                out,
                "[{}] {} : {} (worst margin {:.3e})",
                if v.passed { "pass" } else { "FAIL" },
                v.name,
                v.detail,
                v.worst_margin
            );
        }
        let _ = writeln!(out, "r1 window = {}", self.r_intervals[0]);
        let _ = writeln!(out, "r2 window = {}", self.r_intervals[1]);
        let _ = writeln!(out, "tail coefficients = {:?}", self.growth_constants);
        if let Some(k) = self.decay_threshold {
            let _ = writeln!(out, "decay threshold K = {k}");
        }
        match &self.superlinear_failure {
            Some(w) => {
                let _ = writeln!(out, "outer superlinearity fails at (t,s)=({}, {}): F={} > {}", w.t, w.s, w.lhs, w.rhs);
            }
            None => {
                let _ = writeln!(out, "outer superlinearity: no failure found");
            }
        }
        out
    }

    /// CSV of witnesses: `check,passed,t,s,lhs,rhs,x...`.
    pub fn witness_csv(&self) -> String {
        let mut out = String::from("check,passed,t,s,lhs,rhs,x\n");
        for v in &self.verdicts {
            if let Some(w) = &v.witness {
                let xs: Vec<String> = w.x.iter().map(|c| c.to_string()).collect();
                let _ = writeln!(out, "{},{},{},{},{},{},{}", v.name, v.passed, w.t, w.s, w.lhs, w.rhs, xs.join(" "));
            }
        }
        out
    }
}

const REL_SLACK: f64 = 1e-12;

struct Accumulator {
    name: &'static str,
    worst: f64,
    witness: Option<Witness>,
}

impl Accumulator {
    fn new(name: &'static str) -> Self {
        Accumulator { name, worst: f64::INFINITY, witness: None }
    }

    /// Record `lhs ≤ rhs` at a point.
    fn record(&mut self, x: &[f64], t: f64, s: f64, lhs: f64, rhs: f64) {
        let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        let margin = if lhs.is_nan() || rhs.is_nan() { f64::NEG_INFINITY } else { (rhs - lhs) / scale };
        if margin < self.worst || self.witness.is_none() {
            self.worst = margin;
            self.witness = Some(Witness { x: x.to_vec(), t, s, lhs, rhs });
        }
    }

    fn finish(self, detail: String) -> Verdict {
        Verdict {
            name: self.name,
            passed: self.worst >= -REL_SLACK,
            worst_margin: self.worst,
            detail,
            witness: self.witness,
        }
    }
}

fn window_verdict(name: &'static str, passed: bool, detail: String) -> Verdict {
    Verdict { name, passed, worst_margin: if passed { 0.0 } else { -1.0 }, detail, witness: None }
}

struct PointEval {
    f: f64,
    f_t: f64,
    f_s: f64,
    f_origin: f64,
    f_shifted: Option<f64>,
}

/// Sampled check of the hypotheses of a system nonlinearity on the disk
/// of radius `constants.radius`.
#[allow(clippy::needless_range_loop)] // component index runs over several constant arrays
pub fn check_hypotheses(
    spec: &NonlinearitySpec,
    ip1: &IndexPair,
    ip2: &IndexPair,
    sample_budget: usize,
) -> Result<HypothesisReport, NonlinearityError> {
    spec.partials()?;
    assert!(sample_budget >= 1000, "at least 10^3 samples");
    let c = &spec.constants;
    let system = spec.components == 2;
    let ips = [*ip1, *ip2];
    let pts = sample_points(0xC4EC, sample_budget, c.radius, spec.components, spec.x_dim);
    let evals: Vec<PointEval> = pts
        .par_iter()
        .map(|(x, t, s)| {
            let (f, f_t, f_s) = spec.eval_with_partials(x, *t, *s);
            let f_shifted = (!x.is_empty()).then(|| {
                let shifted: Vec<f64> = x.iter().map(|c| c + 1.0).collect();
                spec.value(&shifted, *t, *s)
            });
            PointEval { f, f_t, f_s, f_origin: spec.value(x, 0.0, 0.0), f_shifted }
        })
        .collect();

    let (m5, m6) = match c.tail {
        Some([a, b]) => (a, b),
        None => derive_growth_constants(c.grad[0], c.grad[1], c.r[0], c.r[1]),
    };
    let mut origin = Accumulator::new("vanishes at origin");
    let mut periodic = Accumulator::new("periodic in x");
    let mut lower = Accumulator::new("lower growth");
    let mut grad_t = Accumulator::new("gradient growth (t)");
    let mut grad_s = Accumulator::new("gradient growth (s)");
    let mut positive = Accumulator::new("positivity");
    let mut superlinear = Accumulator::new("superlinearity");
    let mut growth = Accumulator::new("power growth bound");
    for ((x, t, s), e) in pts.iter().zip(&evals) {
        let (t, s) = (*t, *s);
        let (at, as_) = (t.abs(), s.abs());
        origin.record(x, 0.0, 0.0, e.f_origin.abs(), 0.0);
        if let Some(fs) = e.f_shifted {
            periodic.record(x, t, s, (fs - e.f).abs(), 1e-12 * e.f.abs());
        }
        let mut low = c.lower[0] * at.powf(c.k[0]);
        let mut gscale = c.grad[0] * at.powf(c.r[0] - 1.0);
        let mut sup = t * e.f_t / c.mu[0];
        let mut bound = m5 * at.powf(c.r[0]);
        if system {
            low += c.lower[1] * as_.powf(c.k[1]);
            gscale += c.grad[1] * as_.powf(c.r[1] - 1.0);
            sup += s * e.f_s / c.mu[1];
            bound += m6 * as_.powf(c.r[1]);
        }
        lower.record(x, t, s, low, e.f);
        grad_t.record(x, t, s, e.f_t.abs(), gscale);
        if system {
            grad_s.record(x, t, s, e.f_s.abs(), gscale);
        }
        if t != 0.0 || s != 0.0 {
            positive.record(x, t, s, 0.0, e.f);
            if e.f <= 0.0 {
                positive.worst = positive.worst.min(-1.0);
            }
            superlinear.record(x, t, s, e.f, sup);
        }
        if (t * t + s * s).sqrt() < 0.5 * c.radius {
            growth.record(x, t, s, e.f.abs(), bound);
        }
    }

    let mut verdicts = vec![origin.finish("F(x,0,0) = 0".into())];
    if spec.x_dim > 0 {
        verdicts.push(periodic.finish("F(x+1,t,s) = F(x,t,s)".into()));
    }
    verdicts.push(lower.finish(format!("F >= {:?}·|.|^{:?}", c.lower, c.k)));
    let n = spec.components;
    for i in 0..n {
        let ip = &ips[i];
        verdicts.push(window_verdict(
            if i == 0 { "k1 window" } else { "k2 window" },
            ip.m < c.k[i] && c.k[i] < ip.l_star,
            format!("k={} in ({}, {})", c.k[i], ip.m, ip.l_star),
        ));
    }
    verdicts.push(grad_t.finish(format!("|F_t| <= {:?}·|.|^(r-1), r={:?}", c.grad, c.r)));
    if system {
        verdicts.push(grad_s.finish(format!("|F_s| <= {:?}·|.|^(r-1), r={:?}", c.grad, c.r)));
    }
    let (i1, i2) = if system {
        admissible_r_intervals(ip1, ip2, c.window[0], c.window[1])
    } else {
        (Interval { lo: ip1.m, hi: ip1.l_star }, Interval { lo: f64::NAN, hi: f64::NAN })
    };
    let windows = [i1, i2];
    for i in 0..n {
        verdicts.push(window_verdict(
            if i == 0 { "r1 window" } else { "r2 window" },
            windows[i].contains(c.r[i]),
            format!("r={} in {}", c.r[i], windows[i]),
        ));
    }
    verdicts.push(positive.finish("F > 0 away from the origin".into()));
    verdicts.push(superlinear.finish(format!("F <= t F_t/mu1 + s F_s/mu2, mu={:?}", c.mu)));
    for i in 0..n {
        verdicts.push(window_verdict(
            if i == 0 { "mu1 window" } else { "mu2 window" },
            c.mu[i] > ips[i].m,
            format!("mu={} > m={}", c.mu[i], ips[i].m),
        ));
    }
    verdicts.push(growth.finish(format!("|F| <= {m5}|t|^r1 + {m6}|s|^r2 on half radius")));

    let superlinear_failure = if system { find_outer_superlinear_failure(spec) } else { None };
    Ok(HypothesisReport {
        verdicts,
        r_intervals: windows,
        growth_constants: [m5, m6],
        superlinear_failure,
        decay_threshold: (!system).then(|| scalar_decay_threshold(ip1)),
        samples: pts.len(),
    })
}

/// Search `|(t,s)| > radius` for a point where
/// `F > t F_t/μ₁ + s F_s/μ₂`, trying `(radius + 1, 0)` first.
pub fn find_outer_superlinear_failure(spec: &NonlinearitySpec) -> Option<Witness> {
    let c = &spec.constants;
    let x = vec![0.0; spec.x_dim];
    let probe = |t: f64, s: f64| {
        let (f, f_t, f_s) = spec.eval_with_partials(&x, t, s);
        let rhs = t * f_t / c.mu[0] + s * f_s / c.mu[1];
        (f > rhs && f > 0.0).then(|| Witness { x: x.clone(), t, s, lhs: f, rhs })
    };
    if let Some(w) = probe(c.radius + 1.0, 0.0) {
        return Some(w);
    }
    for i in 1..=400 {
        let r = c.radius * (1.0 + 4.0 * i as f64 / 400.0);
        for j in 0..16 {
            let a = std::f64::consts::TAU * j as f64 / 16.0;
            if let Some(w) = probe(r * a.cos(), r * a.sin()) {
                return Some(w);
            }
        }
    }
    None
}

/// Check of the modified superlinearity and nonnegativity sandwich on a
/// seeded sample. Returns `(superlinearity verdict, sandwich verdict)`.
pub fn check_modified(m: &ModifiedNonlinearity, samples: usize, radius: f64) -> (Verdict, Verdict) {
    let pts = sample_points(0x30D1, samples, radius, m.components(), m.base.x_dim);
    let mut sup = Accumulator::new("modified superlinearity");
    let mut sandwich = Accumulator::new("modified sandwich");
    for (x, t, s) in &pts {
        let v = m.eval(x, *t, *s);
        if *t != 0.0 || *s != 0.0 {
            sup.record(x, *t, *s, m.theta * v.value, t * v.d_t + s * v.d_s);
        }
        sandwich.record(x, *t, *s, -v.value, 0.0);
        sandwich.record(x, *t, *s, v.value, m.tail_bound(*t, *s));
    }
    (
        sup.finish(format!("theta F~ <= t F~_t + s F~_s, theta={}", m.theta)),
        sandwich.finish("0 <= F~ <= tail".into()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn example_indices() -> (IndexPair, IndexPair) {
        (IndexPair::new(4.0, 5.0, 6), IndexPair::new(4.0, 5.0, 6))
    }

    #[test]
    fn growth_constants() {
        let m = 2f64.powi(41);
        assert_eq!(derive_growth_constants(m, m, 7.0, 7.0), (2f64.powi(42), 2f64.powi(42)));
        assert_eq!(derive_growth_constants(1.0, 0.0, 3.0, 5.5), (1.0, 2f64.powf(2.5)));
        assert_eq!(derive_growth_constants(2.0, 3.0, 5.0, 7.0), (14.0, 11.0));
    }

    #[test]
    fn r_windows() {
        let (a, b) = example_indices();
        let (i1, i2) = admissible_r_intervals(&a, &b, 6.0, 6.0);
        assert_eq!(i1, Interval { lo: 5.0, hi: 37.0 / 4.0 });
        assert_eq!(i2, i1);
        let (i1, _) = admissible_r_intervals(&a, &b, 1.0 + 1e-12, 1.0 + 1e-12);
        assert_relative_eq!(i1.lo, 5.0);
        assert_relative_eq!(i1.hi, 5.5, max_relative = 1e-10);
        // l* = m collapses the window
        let c = IndexPair::new(1.5, 2.0, 2);
        let d = IndexPair { l_star: 2.0, ..c };
        let (i1, _) = admissible_r_intervals(&d, &d, 6.0, 6.0);
        assert!(i1.is_empty());
    }

    #[test]
    fn example_values_and_partials() {
        let f = worked_example(false);
        assert_eq!(f.value(&[], 1.0, 0.0), 1.0);
        let (_, ft, _) = f.eval_with_partials(&[], 1.0, 1.0);
        assert_relative_eq!(ft, 15.5, max_relative = 1e-14);
        // pure outer power beyond radius 8
        assert_relative_eq!(f.value(&[], 9.0, 0.0), 729.0, max_relative = 1e-14);
        let w = worked_example(true);
        assert_relative_eq!(w.value(&[0.0; 6], 1.0, 0.0), 7.0, max_relative = 1e-14);
    }

    #[test]
    fn example_partials_match_differences() {
        let f = worked_example(true);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let h = 1e-6;
        for &(t, s) in &[(0.7, -0.4), (3.0, 2.5), (5.0, 1.0), (-6.5, 2.0), (10.0, 3.0)] {
            let (_, ft, fs) = f.eval_with_partials(&x, t, s);
            let fd_t = (f.value(&x, t + h, s) - f.value(&x, t - h, s)) / (2.0 * h);
            let fd_s = (f.value(&x, t, s + h) - f.value(&x, t, s - h)) / (2.0 * h);
            assert_relative_eq!(ft, fd_t, max_relative = 1e-6);
            assert_relative_eq!(fs, fd_s, max_relative = 1e-6);
        }
    }

    #[test]
    fn example_passes_its_hypotheses() {
        let (a, b) = example_indices();
        let report = check_hypotheses(&worked_example(true), &a, &b, 10_000).unwrap();
        assert!(report.all_passed(), "{}", report.to_text());
        let w = report.superlinear_failure.expect("outer failure");
        assert_eq!((w.t, w.s), (5.0, 0.0));
        assert!(w.lhs > w.rhs);
    }

    #[test]
    fn outer_failure_for_any_exponent_above_five() {
        let mut spec = worked_example(false);
        for mu in [5.01, 6.0, 8.5, 40.0] {
            spec.constants.mu = [mu, mu];
            let w = find_outer_superlinear_failure(&spec).expect("failure exists");
            assert!(w.lhs > w.rhs, "mu={mu}");
        }
    }

    #[test]
    fn missing_partials_is_an_error() {
        let mut spec = worked_example(false);
        spec.f_t = None;
        let (a, b) = example_indices();
        assert_eq!(check_hypotheses(&spec, &a, &b, 1000).unwrap_err(), NonlinearityError::MissingPartials);
        assert!(build_modified(&spec, CutoffFamily::new(CutoffKind::Sine, 4.0)).is_err());
    }

    #[test]
    fn pure_power_lower_growth_is_equality() {
        let consts = HypothesisConstants {
            k: [7.0, 7.0],
            lower: [1.0, 0.0],
            r: [7.0, 7.0],
            grad: [7.0, 0.0],
            window: [6.0, 6.0],
            mu: [7.0, 7.0],
            radius: 4.0,
            tail: None,
        };
        let spec = NonlinearitySpec::parse("|t|^7", 2, 0, consts).unwrap().with_symbolic_partials();
        let (a, b) = example_indices();
        let r = check_hypotheses(&spec, &a, &b, 1000).unwrap();
        assert!(r.verdict("lower growth").unwrap().passed);
        // positivity fails on the s axis, and the failing verdict names a witness
        let pos = r.verdict("positivity").unwrap();
        assert!(!pos.passed);
        let w = pos.witness.as_ref().unwrap();
        assert_eq!(w.t, 0.0);
    }

    #[test]
    fn modified_example_regions() {
        let spec = worked_example(false);
        let m = build_modified(&spec, CutoffFamily::new(CutoffKind::Sine, 4.0)).unwrap();
        assert_eq!(m.theta, 7.0);
        assert_eq!(m.tail, [2f64.powi(42), 2f64.powi(42)]);
        let (t, s) = (0.6, 0.8);
        assert_eq!(m.eval(&[], t, s).value, spec.value(&[], t, s));
        let (t, s) = (3.0, 4.0);
        let want = 2f64.powi(42) * (3f64.powi(7) + 4f64.powi(7));
        assert_relative_eq!(m.eval(&[], t, s).value, want, max_relative = 1e-15);
        assert!(m.grad_fit[0] > 0.0 && m.grad_fit[0].is_finite());
    }

    #[test]
    fn modified_example_keeps_superlinearity_and_sandwich() {
        let m = build_modified(&worked_example(true), CutoffFamily::new(CutoffKind::Sine, 4.0)).unwrap();
        let (sup, sandwich) = check_modified(&m, 10_000, 6.0);
        assert!(sup.passed, "{sup:?}");
        assert!(sandwich.passed, "{sandwich:?}");
    }

    #[test]
    fn modified_partials_match_differences() {
        let m = build_modified(&worked_example(false), CutoffFamily::new(CutoffKind::SineSq, 4.0)).unwrap();
        let h = 1e-6;
        for &(t, s) in &[(1.0, 0.5), (2.5, 1.0), (-1.5, -2.9), (3.5, 0.3)] {
            let v = m.eval(&[], t, s);
            let fd_t = (m.eval(&[], t + h, s).value - m.eval(&[], t - h, s).value) / (2.0 * h);
            let fd_s = (m.eval(&[], t, s + h).value - m.eval(&[], t, s - h).value) / (2.0 * h);
            assert_relative_eq!(v.d_t, fd_t, max_relative = 1e-5);
            assert_relative_eq!(v.d_s, fd_s, max_relative = 1e-5);
        }
    }

    fn scalar_power(k: f64, delta: f64) -> NonlinearitySpec {
        let consts = HypothesisConstants {
            k: [k, 0.0],
            lower: [1.0, 0.0],
            r: [2.5, 0.0],
            grad: [k, 0.0],
            window: [2.0, 2.0],
            mu: [k, 0.0],
            radius: delta,
            tail: Some([1.0, 0.0]),
        };
        NonlinearitySpec::parse(&format!("|t|^{k}"), 1, 0, consts).unwrap().with_symbolic_partials()
    }

    #[test]
    fn scalar_modified_regions_and_split() {
        let delta = 1.0;
        let spec = scalar_power(2.2, delta);
        let m = build_scalar_modified(&spec, delta).unwrap();
        assert_eq!(m.eval(&[], 0.25, 0.0).value, 0.25f64.powf(2.2));
        assert_relative_eq!(m.eval(&[], 2.0, 0.0).value, 2f64.powf(2.5));
        let plus = m.clone().with_split(SignSplit::Positive);
        assert_eq!(plus.eval(&[], -1.0, 0.0).value, 0.0);
        assert_eq!(plus.eval(&[], 0.3, 0.0), m.eval(&[], 0.3, 0.0));
        let minus = m.with_split(SignSplit::Negative);
        assert_eq!(minus.eval(&[], 1.0, 0.0).value, 0.0);
        assert_eq!(minus.eval(&[], -0.3, 0.0).value, 0.3f64.powf(2.2));
    }

    #[test]
    fn scalar_threshold() {
        let ip = IndexPair::new(1.5, 1.5, 2);
        assert_eq!(ip.l_star, 6.0);
        // (1.5·1.5 − 1.5 + 6)/1.5 = 4.5
        assert_relative_eq!(scalar_decay_threshold(&ip), 4.5);
    }
}
