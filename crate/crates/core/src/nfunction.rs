//! N-functions built from growth kernels: evaluation, inverse, growth
//! indices, the Young complement and the Sobolev conjugate.
//!
//! A kernel `phi` defines `Phi(t) = ∫₀^|t| s·phi(s) ds`. Kernels that are
//! sums of powers get exact closed forms; anything else is integrated once
//! onto a logarithmic knot table so that later evaluations cost one
//! Gauss-Legendre panel.

use std::fmt;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::expr::{self, Arity, Env, Expr, ExprError, Var};
use crate::quad::{gl_adaptive, gl_panel, golden_max, log_grid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NFunctionError {
    #[error("t·phi(t) is not strictly increasing near t = {t:e}")]
    NonMonotone { t: f64 },
    #[error("kernel is not positive and finite at t = {t:e} (value {value})")]
    BadKernelValue { t: f64, value: f64 },
    #[error("lower index {l} does not exceed 1")]
    IndexNotAboveOne { l: f64 },
    #[error("Sobolev conjugate undefined: index {index} is not below dimension {dim}")]
    ConjugateUndefined { index: f64, dim: usize },
    #[error("Legendre maximiser escaped the search bracket at t = {t:e}")]
    BracketEscape { t: f64 },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// The function `phi` of `Phi(t) = ∫ s·phi(s) ds`.
#[derive(Clone)]
pub enum KernelFn {
    /// `Σ c·t^e` as `(c, e)` pairs.
    PowerSum(Vec<(f64, f64)>),
    Expr(Expr),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for KernelFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFn::PowerSum(terms) => f.debug_tuple("PowerSum").field(terms).finish(),
            KernelFn::Expr(e) => write!(f, "Expr({e})"),
            KernelFn::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GrowthKernel {
    pub phi: KernelFn,
    /// Coercivity constant in `t²·phi(t) ≥ q·t^l`.
    pub q: Option<f64>,
    pub l_claimed: Option<f64>,
}

impl GrowthKernel {
    pub fn new(phi: KernelFn) -> Self {
        GrowthKernel { phi, q: None, l_claimed: None }
    }

    /// Parse a kernel expression in `t`; pure power sums are recognised.
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let e = expr::parse_with(src, Arity::T)?;
        Ok(Self::new(match e.as_power_sum(Var::T) {
            Some(terms) => KernelFn::PowerSum(merge_terms(terms)),
            None => KernelFn::Expr(e),
        }))
    }

    /// `phi(t) = t^{p-2}`, giving `Phi(t) = |t|^p / p`.
    pub fn power(p: f64) -> Self {
        Self::new(KernelFn::PowerSum(vec![(1.0, p - 2.0)]))
    }

    /// `4t² + 5t³`, so `Phi = t⁴ + t⁵`.
    pub fn example_polynomial() -> Self {
        GrowthKernel { phi: KernelFn::PowerSum(vec![(4.0, 2.0), (5.0, 3.0)]), q: Some(4.0), l_claimed: Some(4.0) }
    }

    /// `4t²·log(2+t) + t³/(1+t)`.
    pub fn example_logarithmic() -> Self {
        let e = expr::parse("4*t^2*log(2+t)+t^3/(1+t)").expect("static kernel");
        GrowthKernel { phi: KernelFn::Expr(e), q: None, l_claimed: Some(4.0) }
    }

    /// `4t²·log(1+t) + t³/(1+t)`, whose index pair is exactly (4, 5).
    pub fn example_logarithmic_shifted() -> Self {
        let e = expr::parse("4*t^2*log(1+t)+t^3/(1+t)").expect("static kernel");
        Self::new(KernelFn::Expr(e))
    }

    pub fn with_q(mut self, q: f64) -> Self {
        self.q = Some(q);
        self
    }

    pub fn with_l_claimed(mut self, l: f64) -> Self {
        self.l_claimed = Some(l);
        self
    }

    pub fn phi(&self, t: f64) -> f64 {
        let t = t.abs();
        match &self.phi {
            KernelFn::PowerSum(terms) => terms.iter().map(|(c, e)| c * t.powf(*e)).sum(),
            KernelFn::Expr(e) => e.eval(&Env::t(t)).unwrap_or(f64::NAN),
            KernelFn::Custom(f) => f(t),
        }
    }

    fn closure(&self) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
        match &self.phi {
            KernelFn::Custom(f) => f.clone(),
            _ => {
                let k = self.clone();
                Arc::new(move |t| k.phi(t))
            }
        }
    }
}

fn merge_terms(terms: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (c, e) in terms {
        match out.iter_mut().find(|(_, e2)| *e2 == e) {
            Some(slot) => slot.0 += c,
            None => out.push((c, e)),
        }
    }
    out.retain(|(c, _)| *c != 0.0);
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}

/// Growth indices `l ≤ m` of an N-function together with the derived
/// conjugate exponents for dimension `dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexPair {
    pub l: f64,
    pub m: f64,
    pub l_star: f64,
    pub m_star: f64,
    pub l_tilde: f64,
    pub m_tilde: f64,
    pub dim: usize,
}

impl IndexPair {
    pub fn new(l: f64, m: f64, dim: usize) -> Self {
        let n = dim as f64;
        let star = |p: f64| if p < n { p * n / (n - p) } else { f64::INFINITY };
        let tilde = |p: f64| p / (p - 1.0);
        IndexPair { l, m, l_star: star(l), m_star: star(m), l_tilde: tilde(l), m_tilde: tilde(m), dim }
    }

    /// `1 < l ≤ m < min(N, l*)`.
    pub fn growth_window_holds(&self) -> bool {
        1.0 < self.l && self.l <= self.m && self.m < (self.dim as f64).min(self.l_star)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zeta {
    Z0,
    Z1,
    Z2,
    Z3,
    Z4,
    Z5,
}

/// Min/max power envelopes: `Z0/Z1` use `(l, m)`, `Z2/Z3` use
/// `(l̃, m̃)` and `Z4/Z5` use `(l*, m*)`.
pub fn zeta_envelope(ip: &IndexPair, t: f64, which: Zeta) -> f64 {
    let (a, b) = match which {
        Zeta::Z0 | Zeta::Z1 => (ip.l, ip.m),
        Zeta::Z2 | Zeta::Z3 => (ip.l_tilde, ip.m_tilde),
        Zeta::Z4 | Zeta::Z5 => (ip.l_star, ip.m_star),
    };
    let (x, y) = (t.powf(a), t.powf(b));
    match which {
        Zeta::Z0 | Zeta::Z2 | Zeta::Z4 => x.min(y),
        _ => x.max(y),
    }
}

// ---------------------------------------------------------------------------
// Representations

const TABLE_LO: f64 = 1e-12;
/// Upper end of the table; knots stop earlier once `Phi` overflows.
const TABLE_HI: f64 = 1e300;
const TABLE_PER_DECADE: usize = 32;

struct QuadTable {
    phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    ln_lo: f64,
    dx: f64,
    knots: Vec<f64>,
    cum: Vec<f64>,
    /// Local power exponent used below the first knot.
    low_exponent: f64,
}

impl QuadTable {
    fn build(phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>) -> Self {
        let decades = (TABLE_HI.log10() - TABLE_LO.log10()).round() as usize;
        let count = decades * TABLE_PER_DECADE + 1;
        let knots = log_grid(TABLE_LO, TABLE_HI, count);
        let integrand = |s: f64| s * phi(s);
        let head = gl_adaptive(&integrand, 0.0, knots[0], 1e-13);
        let mut cum = Vec::with_capacity(count);
        cum.push(head);
        let mut knots = knots;
        for w in knots.windows(2) {
            let next = *cum.last().unwrap() + gl_panel(&integrand, w[0], w[1]);
            if !next.is_finite() {
                break;
            }
            cum.push(next);
        }
        knots.truncate(cum.len());
        let low_exponent = knots[0] * knots[0] * phi(knots[0]) / head;
        QuadTable {
            ln_lo: TABLE_LO.ln(),
            dx: (TABLE_HI.ln() - TABLE_LO.ln()) / (count - 1) as f64,
            knots,
            cum,
            low_exponent,
            phi,
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let integrand = |s: f64| s * (self.phi)(s);
        if t <= self.knots[0] {
            return self.cum[0] * (t / self.knots[0]).powf(self.low_exponent);
        }
        let last = self.knots.len() - 1;
        if t >= self.knots[last] {
            // in ln s the integrand s²φ(s) is smooth over many decades
            let log_integrand = |x: f64| {
                let s = x.exp();
                s * s * (self.phi)(s)
            };
            return self.cum[last] + gl_adaptive(&log_integrand, self.knots[last].ln(), t.ln(), 1e-13);
        }
        let k = (((t.ln() - self.ln_lo) / self.dx).floor() as usize).min(last - 1);
        // guard against rounding in the index computation
        let k = if self.knots[k] > t { k - 1 } else if self.knots[k + 1] <= t { k + 1 } else { k };
        self.cum[k] + gl_panel(&integrand, self.knots[k], t)
    }
}

/// Tabulated `G = Phi*^{-1}` in the variable `x = ln y`.
struct SobolevTable {
    base: NFunction,
    dim: f64,
    x0: f64,
    dx: f64,
    /// `ln G` at the knots.
    ln_g: Vec<f64>,
    g: Vec<f64>,
    /// `d ln G / d ln y` at the knots.
    slope: Vec<f64>,
}

const SOBOLEV_LN_LO: f64 = -250.0 * std::f64::consts::LN_10;
const SOBOLEV_LN_HI: f64 = 250.0 * std::f64::consts::LN_10;
const SOBOLEV_PER_DECADE: f64 = 4.0;

impl SobolevTable {
    fn integrand(base: &NFunction, dim: f64, x: f64) -> f64 {
        // Phi^{-1}(y) y^{-(N+1)/N} dy with y = e^x
        (base.inverse(x.exp()).ln() - x / dim).exp()
    }

    fn build(base: NFunction, dim: usize) -> Self {
        let n = dim as f64;
        let count = ((SOBOLEV_LN_HI - SOBOLEV_LN_LO) / std::f64::consts::LN_10 * SOBOLEV_PER_DECADE).round() as usize + 1;
        let dx = (SOBOLEV_LN_HI - SOBOLEV_LN_LO) / (count - 1) as f64;
        let head = inverse_tail(&base, n, SOBOLEV_LN_LO.exp());
        let mut g = Vec::with_capacity(count);
        g.push(head);
        for k in 1..count {
            let a = SOBOLEV_LN_LO + (k - 1) as f64 * dx;
            let b = SOBOLEV_LN_LO + k as f64 * dx;
            let prev = g[k - 1];
            g.push(prev + gl_panel(&|x| Self::integrand(&base, n, x), a, b));
        }
        let ln_g: Vec<f64> = g.iter().map(|v| v.ln()).collect();
        let slope = (0..count)
            .map(|k| {
                let x = SOBOLEV_LN_LO + k as f64 * dx;
                Self::integrand(&base, n, x) / g[k]
            })
            .collect();
        SobolevTable { base, dim: n, x0: SOBOLEV_LN_LO, dx, ln_g, g, slope }
    }

    fn knot_x(&self, k: usize) -> f64 {
        self.x0 + k as f64 * self.dx
    }

    /// `G(e^x)`.
    fn g_at(&self, x: f64) -> f64 {
        let last = self.g.len() - 1;
        if x <= self.x0 {
            return self.g[0] * ((x - self.x0) * self.slope[0]).exp();
        }
        if x >= self.knot_x(last) {
            return self.g[last] * ((x - self.knot_x(last)) * self.slope[last]).exp();
        }
        let k = (((x - self.x0) / self.dx).floor() as usize).min(last - 1);
        self.g[k] + gl_panel(&|z| Self::integrand(&self.base, self.dim, z), self.knot_x(k), x)
    }

    /// Solve `G(e^x) = t` for `x`.
    fn solve_ln(&self, t: f64) -> f64 {
        let lt = t.ln();
        let last = self.g.len() - 1;
        if lt <= self.ln_g[0] {
            return self.x0 + (lt - self.ln_g[0]) / self.slope[0];
        }
        if lt >= self.ln_g[last] {
            return self.knot_x(last) + (lt - self.ln_g[last]) / self.slope[last];
        }
        let k = self.ln_g.partition_point(|v| *v <= lt).clamp(1, last) - 1;
        // cubic Hermite for x(ln G) with slopes 1/slope
        let (y0, y1) = (self.ln_g[k], self.ln_g[k + 1]);
        let h = y1 - y0;
        let u = (lt - y0) / h;
        let (m0, m1) = (h / self.slope[k], h / self.slope[k + 1]);
        let (x0, x1) = (self.knot_x(k), self.knot_x(k + 1));
        let h00 = 2.0 * u * u * u - 3.0 * u * u + 1.0;
        let h10 = u * u * u - 2.0 * u * u + u;
        let h01 = -2.0 * u * u * u + 3.0 * u * u;
        let h11 = u * u * u - u * u;
        let mut x = (h00 * x0 + h10 * m0 + h01 * x1 + h11 * m1).clamp(x0, x1);
        // Newton on ln G(e^x) - ln t, whose derivative is the local slope
        for _ in 0..6 {
            let gx = self.g_at(x);
            let f = gx.ln() - lt;
            let d = Self::integrand(&self.base, self.dim, x) / gx;
            let step = f / d;
            x -= step;
            if step.abs() <= 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
        x
    }
}

/// `∫₀^y Phi^{-1}(s) s^{-(N+1)/N} ds` for tiny `y`.
fn inverse_tail(base: &NFunction, n: f64, y: f64) -> f64 {
    // integrate down to where the power-law correction is below rounding
    let deep = (y * 1e-200).max(1e-300);
    let body = if deep < y {
        gl_adaptive(&|x| SobolevTable::integrand(base, n, x), deep.ln(), y.ln(), 1e-14)
    } else {
        0.0
    };
    body + power_tail(base, n, deep)
}

/// Tail treating `Phi^{-1}` as a pure power with its local exponent at `y`.
fn power_tail(base: &NFunction, n: f64, y: f64) -> f64 {
    let s = base.inverse(y);
    let b = 1.0 / base.local_index(s);
    s * y.powf(-1.0 / n) / (b - 1.0 / n)
}

/// `∫_ε^y Phi^{-1}(s) s^{-(N+1)/N} ds` by adaptive quadrature in `ln s`,
/// plus the power-law tail on `(0, ε)`.
pub fn conjugate_inverse_integral(nf: &NFunction, dim: usize, y: f64, eps: f64) -> f64 {
    let n = dim as f64;
    let body = gl_adaptive(&|x| SobolevTable::integrand(nf, n, x), eps.ln(), y.ln(), 1e-13);
    body + inverse_tail(nf, n, eps)
}

enum Repr {
    /// `Phi = Σ c·|t|^p`.
    PowerSum(Vec<(f64, f64)>),
    Table(QuadTable),
    Complement(NFunction),
    Sobolev(SobolevTable),
}

struct Node {
    repr: Repr,
    raw_indices: OnceLock<(f64, f64)>,
}

/// An even N-function. Cheap to clone; immutable and thread-safe.
#[derive(Clone)]
pub struct NFunction {
    node: Arc<Node>,
}

impl fmt::Debug for NFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NFunction({})", self.describe())
    }
}

impl NFunction {
    fn from_repr(repr: Repr) -> Self {
        NFunction { node: Arc::new(Node { repr, raw_indices: OnceLock::new() }) }
    }

    /// `Phi(t) = Σ c·|t|^p`; each `p > 1`, each `c > 0`.
    pub fn power_sum(terms: Vec<(f64, f64)>) -> Self {
        Self::from_repr(Repr::PowerSum(merge_terms(terms)))
    }

    /// `|t|^p / p`.
    pub fn power(p: f64) -> Self {
        Self::power_sum(vec![(1.0 / p, p)])
    }

    pub fn describe(&self) -> String {
        match &self.node.repr {
            Repr::PowerSum(terms) => terms
                .iter()
                .map(|(c, p)| format!("{c}*|t|^{p}"))
                .collect::<Vec<_>>()
                .join(" + "),
            Repr::Table(_) => "tabulated integral of s*phi(s)".into(),
            Repr::Complement(b) => format!("complement of [{}]", b.describe()),
            Repr::Sobolev(s) => format!("Sobolev conjugate (N={}) of [{}]", s.dim, s.base.describe()),
        }
    }

    /// Closed-form power terms, when the function is a power sum.
    pub fn power_terms(&self) -> Option<&[(f64, f64)]> {
        match &self.node.repr {
            Repr::PowerSum(t) => Some(t),
            _ => None,
        }
    }

    /// Dimension for which this is a Sobolev conjugate.
    pub fn dimension_cap(&self) -> Option<usize> {
        match &self.node.repr {
            Repr::Sobolev(s) => Some(s.dim as usize),
            _ => None,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let t = t.abs();
        if t == 0.0 {
            return 0.0;
        }
        match &self.node.repr {
            Repr::PowerSum(terms) => terms.iter().map(|(c, p)| c * t.powf(*p)).sum(),
            Repr::Table(tab) => tab.eval(t),
            Repr::Complement(base) => legendre(base, t).map(|(_, v)| v).unwrap_or(f64::NAN),
            Repr::Sobolev(tab) => tab.solve_ln(t).exp(),
        }
    }

    /// `Phi'(t)`, odd in `t`.
    pub fn deriv(&self, t: f64) -> f64 {
        let a = t.abs();
        if a == 0.0 {
            return 0.0;
        }
        let d = match &self.node.repr {
            Repr::PowerSum(terms) => terms.iter().map(|(c, p)| c * p * a.powf(p - 1.0)).sum(),
            Repr::Table(tab) => a * (tab.phi)(a),
            Repr::Complement(base) => legendre(base, a).map(|(s, _)| s).unwrap_or(f64::NAN),
            Repr::Sobolev(tab) => {
                let x = tab.solve_ln(a);
                // 1 / G'(y) with y = e^x, and dG/dx = y G'(y)
                (x - SobolevTable::integrand(&tab.base, tab.dim, x).ln()).exp()
            }
        };
        d.copysign(t)
    }

    /// `phi(t) = Phi'(t)/t` for `t > 0`; 0 at the origin.
    pub fn phi(&self, t: f64) -> f64 {
        let a = t.abs();
        if a < 1e-14 {
            return 0.0;
        }
        self.deriv(a) / a
    }

    /// `t·Phi'(t)/Phi(t)`.
    pub fn local_index(&self, t: f64) -> f64 {
        if let Repr::PowerSum(terms) = &self.node.repr {
            let (mut num, mut den) = (0.0, 0.0);
            for (c, p) in terms {
                let v = c * t.powf(*p);
                num += p * v;
                den += v;
            }
            return num / den;
        }
        t * self.deriv(t) / self.eval(t)
    }

    /// `Phi^{-1}(y)` for `y ≥ 0`.
    pub fn inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        match &self.node.repr {
            Repr::PowerSum(terms) if terms.len() == 1 => (y / terms[0].0).powf(1.0 / terms[0].1),
            Repr::Sobolev(tab) => tab.g_at(y.ln()),
            _ => invert_log_newton(self, y),
        }
    }

    /// Raw `(inf, sup)` of the local index over the probe grid, cached.
    fn raw_indices(&self) -> (f64, f64) {
        *self.node.raw_indices.get_or_init(|| probe_indices(self))
    }
}

/// Safeguarded Newton in `ln t` on `ln Phi(t) = ln y`, with a bisection
/// fallback inside a geometric bracket.
fn invert_log_newton(nf: &NFunction, y: f64) -> f64 {
    let target = y.ln();
    let f = |x: f64| nf.eval(x.exp()).ln() - target;
    let (mut a, mut b) = (0.0f64, 0.0f64);
    let mut step = 1.0;
    if f(0.0) < 0.0 {
        while f(b) < 0.0 {
            a = b;
            b += step;
            step *= 2.0;
            if b > 2000.0 {
                return f64::INFINITY;
            }
        }
    } else {
        while f(a) > 0.0 {
            b = a;
            a -= step;
            step *= 2.0;
            if a < -2000.0 {
                return 0.0;
            }
        }
    }
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            break;
        }
        if fx < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let d = nf.local_index(x.exp());
        let mut next = x - fx / d;
        if !(next > a && next < b) || !next.is_finite() {
            next = 0.5 * (a + b);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) || b - a <= 1e-15 * x.abs().max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    x.exp()
}

/// Maximiser and value of `t·s − Phi(s)` over `s ≥ 0`.
fn legendre(base: &NFunction, t: f64) -> Result<(f64, f64), NFunctionError> {
    // bracket where Phi' crosses t
    let mut hi = 1.0;
    let mut grow = 0;
    while base.deriv(hi) < t {
        hi *= 2.0;
        grow += 1;
        if grow > 2100 {
            return Err(NFunctionError::BracketEscape { t });
        }
    }
    while base.deriv(hi * 0.5) >= t && hi > 1e-300 {
        hi *= 0.5;
    }
    let lo = hi * 0.5;
    let (s, v) = golden_max(|s| t * s - base.eval(s), lo, hi, 1e-15);
    Ok((s, v.max(0.0)))
}

// ---------------------------------------------------------------------------
// Operations

pub fn build_from_kernel(kernel: &GrowthKernel) -> Result<NFunction, NFunctionError> {
    check_monotone(kernel)?;
    match &kernel.phi {
        KernelFn::PowerSum(terms) => {
            Ok(NFunction::power_sum(terms.iter().map(|(c, e)| (c / (e + 2.0), e + 2.0)).collect()))
        }
        _ => Ok(NFunction::from_repr(Repr::Table(QuadTable::build(kernel.closure())))),
    }
}

const MONOTONE_PROBES: usize = 2048;

fn check_monotone(kernel: &GrowthKernel) -> Result<(), NFunctionError> {
    let mut prev = 0.0;
    for t in log_grid(1e-8, 1e8, MONOTONE_PROBES) {
        let phi = kernel.phi(t);
        if !(phi.is_finite() && phi > 0.0) {
            return Err(NFunctionError::BadKernelValue { t, value: phi });
        }
        let v = t * phi;
        if v <= prev {
            return Err(NFunctionError::NonMonotone { t });
        }
        prev = v;
    }
    Ok(())
}

const INDEX_PROBES: usize = 4096;

fn probe_indices(nf: &NFunction) -> (f64, f64) {
    if let Some(terms) = nf.power_terms() {
        if terms.iter().all(|(c, _)| *c > 0.0) {
            let lo = terms.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
            let hi = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
            return (lo, hi);
        }
    }
    let xs: Vec<f64> = log_grid(1e-8, 1e8, INDEX_PROBES).iter().map(|t| t.ln()).collect();
    let ratio = |x: f64| nf.local_index(x.exp());
    let vals: Vec<f64> = xs.iter().map(|&x| ratio(x)).collect();
    let refine = |i: usize, sign: f64| -> f64 {
        let a = xs[i.saturating_sub(1)];
        let b = xs[(i + 1).min(xs.len() - 1)];
        let (_, v) = golden_max(|x| sign * ratio(x), a, b, 1e-10);
        sign * v
    };
    let (imin, _) = vals.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let (imax, _) = vals.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let l = vals[imin].min(refine(imin, -1.0));
    let m = vals[imax].max(refine(imax, 1.0));
    (l, m)
}

/// Infimum and supremum of `t·Phi'(t)/Phi(t)` over `[1e-8, 1e8]`.
///
/// `m ≥ N` is not an error here; it shows up in
/// [`IndexPair::growth_window_holds`].
pub fn estimate_indices(nf: &NFunction, dim: usize) -> Result<IndexPair, NFunctionError> {
    let (l, m) = nf.raw_indices();
    if l <= 1.0 {
        return Err(NFunctionError::IndexNotAboveOne { l });
    }
    Ok(IndexPair::new(l, m, dim))
}

/// The Young complement `sup_s (t·s − Phi(s))`.
pub fn complement(nf: &NFunction) -> NFunction {
    if let Some([(c, p)]) = nf.power_terms() {
        let q = p / (p - 1.0);
        let coef = (p - 1.0) * c * (c * p).powf(-p / (p - 1.0));
        return NFunction::power_sum(vec![(coef, q)]);
    }
    NFunction::from_repr(Repr::Complement(nf.clone()))
}

/// The Sobolev conjugate `Phi*` in dimension `dim`.
pub fn sobolev_conjugate(nf: &NFunction, dim: usize) -> Result<NFunction, NFunctionError> {
    let (l, m) = nf.raw_indices();
    let n = dim as f64;
    if m >= n {
        return Err(NFunctionError::ConjugateUndefined { index: m, dim });
    }
    if l <= 1.0 {
        return Err(NFunctionError::IndexNotAboveOne { l });
    }
    if let Some([(c, p)]) = nf.power_terms() {
        // G(y) = (y/c)^{1/p - 1/N} · c^{-1/N} / (1/p - 1/N), inverted
        let e = 1.0 / p - 1.0 / n;
        let ps = 1.0 / e;
        let coef = (c.powf(1.0 / p) * e).powf(ps);
        return Ok(NFunction::power_sum(vec![(coef, ps)]));
    }
    Ok(NFunction::from_repr(Repr::Sobolev(SobolevTable::build(nf.clone(), dim))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub passed: bool,
    pub detail: String,
    /// Sample point of the worst violation, if any.
    pub witness: Option<f64>,
}

impl HypothesisCheck {
    fn pass(detail: impl Into<String>) -> Self {
        HypothesisCheck { passed: true, detail: detail.into(), witness: None }
    }

    fn fail(detail: impl Into<String>, witness: Option<f64>) -> Self {
        HypothesisCheck { passed: false, detail: detail.into(), witness }
    }
}

#[derive(Debug, Clone)]
pub struct KernelReport {
    /// `t·phi(t)` strictly increasing.
    pub monotone: HypothesisCheck,
    /// `1 < l ≤ m < min(N, l*)`.
    pub index_window: HypothesisCheck,
    /// `t²·phi(t) ≥ q·t^l`.
    pub coercive: HypothesisCheck,
    pub indices: Option<IndexPair>,
    /// Largest `q` for which the coercivity bound holds on the probe grid.
    pub q_max: f64,
}

impl KernelReport {
    pub fn all_passed(&self) -> bool {
        self.monotone.passed && self.index_window.passed && self.coercive.passed
    }
}

pub fn verify_kernel_hypotheses(kernel: &GrowthKernel, dim: usize) -> KernelReport {
    let monotone = match check_monotone(kernel) {
        Ok(()) => HypothesisCheck::pass(format!("t*phi(t) increasing on {MONOTONE_PROBES} probes")),
        Err(NFunctionError::NonMonotone { t }) => HypothesisCheck::fail("t*phi(t) not increasing", Some(t)),
        Err(NFunctionError::BadKernelValue { t, value }) => {
            HypothesisCheck::fail(format!("phi({t:e}) = {value}"), Some(t))
        }
        Err(e) => HypothesisCheck::fail(e.to_string(), None),
    };
    let indices = if monotone.passed {
        build_from_kernel(kernel).ok().map(|nf| {
            let (l, m) = nf.raw_indices();
            IndexPair::new(l, m, dim)
        })
    } else {
        None
    };
    let index_window = match &indices {
        Some(ip) if ip.growth_window_holds() => {
            HypothesisCheck::pass(format!("1 < l={:.6} <= m={:.6} < min(N={dim}, l*={:.6})", ip.l, ip.m, ip.l_star))
        }
        Some(ip) => HypothesisCheck::fail(
            format!("window violated: l={:.6}, m={:.6}, N={dim}, l*={:.6}", ip.l, ip.m, ip.l_star),
            None,
        ),
        None => HypothesisCheck::fail("indices unavailable", None),
    };
    let l = kernel.l_claimed.or(indices.map(|ip| ip.l));
    let (coercive, q_max) = match l {
        None => (HypothesisCheck::fail("no lower index to test against", None), 0.0),
        Some(l) => {
            let (mut q_max, mut at) = (f64::INFINITY, 0.0);
            for t in log_grid(1e-8, 1e8, MONOTONE_PROBES) {
                let ratio = t * t * kernel.phi(t) / t.powf(l);
                if ratio < q_max {
                    q_max = ratio;
                    at = t;
                }
            }
            let q = kernel.q.unwrap_or(q_max);
            let check = if q_max > 0.0 && q <= q_max * (1.0 + 1e-12) && q > 0.0 {
                HypothesisCheck::pass(format!("q={q} feasible (largest {q_max:.9} at t={at:e})"))
            } else {
                HypothesisCheck::fail(format!("q={q} exceeds largest feasible {q_max:.9e}"), Some(at))
            };
            (check, q_max)
        }
    };
    KernelReport { monotone, index_window, coercive, indices, q_max }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn power_kernel_closed_form() {
        let nf = build_from_kernel(&GrowthKernel::power(1.5)).unwrap();
        assert_relative_eq!(nf.eval(2.0), 2f64.powf(1.5) / 1.5, epsilon = 1e-15);
        assert_relative_eq!(nf.eval(-2.0), nf.eval(2.0));
        assert_eq!(nf.eval(0.0), 0.0);
    }

    #[test]
    fn polynomial_kernel_antiderivative() {
        let nf = build_from_kernel(&GrowthKernel::example_polynomial()).unwrap();
        for t in [0.1, 1.0, 3.0] {
            assert_relative_eq!(nf.eval(t), t.powi(4) + t.powi(5), max_relative = 1e-14);
            assert_relative_eq!(nf.deriv(t), 4.0 * t.powi(3) + 5.0 * t.powi(4), max_relative = 1e-14);
        }
    }

    #[test]
    fn logarithmic_kernel_matches_adaptive_oracle() {
        let k = GrowthKernel::example_logarithmic();
        let nf = build_from_kernel(&k).unwrap();
        let phi = |s: f64| 4.0 * s * s * (2.0 + s).ln() + s.powi(3) / (1.0 + s);
        for t in [1.0, 0.37, 12.5] {
            let oracle = gl_adaptive(&|s: f64| s * phi(s), 0.0, t, 1e-14);
            assert_relative_eq!(nf.eval(t), oracle, max_relative = 1e-10);
        }
    }

    #[test]
    fn rejects_non_monotone_kernel() {
        let k = GrowthKernel::parse("t^(-1.5)").unwrap();
        assert!(matches!(build_from_kernel(&k), Err(NFunctionError::NonMonotone { .. })));
    }

    #[test]
    fn indices_of_powers_and_polynomial() {
        let ip = estimate_indices(&NFunction::power(2.7), 3).unwrap();
        assert_eq!((ip.l, ip.m), (2.7, 2.7));
        let nf = build_from_kernel(&GrowthKernel::example_polynomial()).unwrap();
        let ip = estimate_indices(&nf, 6).unwrap();
        assert_eq!((ip.l, ip.m, ip.l_star, ip.m_star), (4.0, 5.0, 12.0, 30.0));
        assert_relative_eq!(ip.l_tilde, 4.0 / 3.0);
        assert_relative_eq!(ip.m_tilde, 1.25);
    }

    #[test]
    fn shifted_log_kernel_indices() {
        let nf = build_from_kernel(&GrowthKernel::example_logarithmic_shifted()).unwrap();
        let ip = estimate_indices(&nf, 6).unwrap();
        // the infimum 4 is approached like 4 + 1/ln t, so the probe window stops short
        let at_edge = nf.local_index(1e8);
        assert!((ip.l - at_edge).abs() < 1e-9 && ip.l > 4.0 && ip.l < 4.06, "l = {}", ip.l);
        assert!((ip.m - 5.0).abs() < 1e-3, "m = {}", ip.m);
    }

    #[test]
    fn index_below_one_rejected() {
        let nf = build_from_kernel(&GrowthKernel::parse("t^(-0.5)").unwrap()).unwrap();
        assert!(estimate_indices(&nf, 2).is_ok());
        let nf = NFunction::power_sum(vec![(1.0, 0.8)]);
        assert!(matches!(estimate_indices(&nf, 2), Err(NFunctionError::IndexNotAboveOne { .. })));
    }

    #[test]
    fn zeta_values() {
        let ip = IndexPair::new(4.0, 5.0, 6);
        for z in [Zeta::Z0, Zeta::Z1, Zeta::Z2, Zeta::Z3, Zeta::Z4, Zeta::Z5] {
            assert_eq!(zeta_envelope(&ip, 1.0, z), 1.0);
        }
        assert_eq!(zeta_envelope(&ip, 2.0, Zeta::Z0), 16.0);
        assert_eq!(zeta_envelope(&ip, 2.0, Zeta::Z1), 32.0);
        assert_eq!(zeta_envelope(&ip, 0.5, Zeta::Z4), 0.5f64.powi(30));
        assert_eq!(zeta_envelope(&ip, 0.5, Zeta::Z5), 0.5f64.powi(12));
    }

    #[test]
    fn complement_of_powers() {
        let half_sq = NFunction::power(2.0);
        let c = complement(&half_sq);
        for t in [0.3, 1.0, 4.0] {
            assert_relative_eq!(c.eval(t), t * t / 2.0, max_relative = 1e-14);
        }
        let c = complement(&NFunction::power(3.0));
        let q = 1.5;
        assert_relative_eq!(c.eval(2.0), 2f64.powf(q) / q, max_relative = 1e-14);
    }

    #[test]
    fn complement_matches_grid_search() {
        let nf = build_from_kernel(&GrowthKernel::example_polynomial()).unwrap();
        let c = complement(&nf);
        // brute force over s in [0, 1] at 1e-6 resolution
        let best = (0..=1_000_000)
            .map(|i| {
                let s = i as f64 * 1e-6;
                s - nf.eval(s)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(c.eval(1.0), best, max_relative = 1e-9);
    }

    #[test]
    fn double_complement_recovers_function() {
        let nf = build_from_kernel(&GrowthKernel::example_polynomial()).unwrap();
        let cc = complement(&complement(&nf));
        for t in [0.05, 0.5, 1.0, 2.5] {
            assert_relative_eq!(cc.eval(t), nf.eval(t), max_relative = 1e-7);
        }
    }

    #[test]
    fn complement_index_duality() {
        let nf = build_from_kernel(&GrowthKernel::example_polynomial()).unwrap();
        let ip = estimate_indices(&nf, 6).unwrap();
        let cp = estimate_indices(&complement(&nf), 6).unwrap();
        assert!((cp.l - ip.m_tilde).abs() < 1e-2, "{cp:?}");
        assert!((cp.m - ip.l_tilde).abs() < 1e-2, "{cp:?}");
    }

    #[test]
    fn sobolev_conjugate_of_power() {
        let nf = NFunction::power(1.5);
        let sc = sobolev_conjugate(&nf, 2).unwrap();
        let ip = estimate_indices(&sc, 2).unwrap();
        assert!((ip.l - 6.0).abs() < 1e-2 && (ip.m - 6.0).abs() < 1e-2);
        // G(Phi*(t)) = t with G computed independently
        let t = 0.8;
        let g = conjugate_inverse_integral(&nf, 2, sc.eval(t), 1e-30);
        assert_relative_eq!(g, t, max_relative = 1e-9);
    }

    #[test]
    fn sobolev_conjugate_of_polynomial() {
        let nf = build_from_kernel(&GrowthKernel::example_polynomial()).unwrap();
        let sc = sobolev_conjugate(&nf, 6).unwrap();
        let ip = estimate_indices(&sc, 6).unwrap();
        assert!((ip.l - 12.0).abs() < 1e-2, "l* = {}", ip.l);
        assert!((ip.m - 30.0).abs() < 1e-2, "m* = {}", ip.m);
        for t in [1e-3, 0.2, 1.0, 7.0] {
            let g = conjugate_inverse_integral(&nf, 6, sc.eval(t), 1e-60);
            assert_relative_eq!(g, t, max_relative = 1e-9);
        }
    }

    #[test]
    fn sobolev_integral_tail_is_self_consistent() {
        let nf = build_from_kernel(&GrowthKernel::example_polynomial()).unwrap();
        for eps in [1e-20, 1e-12] {
            let a = conjugate_inverse_integral(&nf, 6, 1.0, eps);
            let b = conjugate_inverse_integral(&nf, 6, 1.0, eps / 2.0);
            assert_relative_eq!(a, b, max_relative = 1e-8);
        }
    }

    #[test]
    fn sobolev_conjugate_requires_small_indices() {
        let nf = build_from_kernel(&GrowthKernel::example_polynomial()).unwrap();
        assert!(matches!(sobolev_conjugate(&nf, 4), Err(NFunctionError::ConjugateUndefined { .. })));
    }

    #[test]
    fn kernel_reports() {
        let r = verify_kernel_hypotheses(&GrowthKernel::example_polynomial(), 6);
        assert!(r.all_passed(), "{r:?}");
        assert_relative_eq!(r.q_max, 4.0, max_relative = 1e-6);
        let r = verify_kernel_hypotheses(&GrowthKernel::power(1.5), 2);
        assert!(r.all_passed(), "{r:?}");
        assert_eq!(r.indices.unwrap().l, 1.5);
        let r = verify_kernel_hypotheses(&GrowthKernel::example_polynomial(), 4);
        assert!(r.monotone.passed && r.coercive.passed && !r.index_window.passed);
    }

    #[test]
    fn inverse_round_trip() {
        let nf = build_from_kernel(&GrowthKernel::example_logarithmic()).unwrap();
        for y in [1e-40, 1e-3, 1.0, 1e9, 1e60] {
            assert_relative_eq!(nf.eval(nf.inverse(y)), y, max_relative = 1e-12);
        }
    }

    #[test]
    fn conditional_power_bound() {
        let nf = build_from_kernel(&GrowthKernel::example_polynomial()).unwrap();
        for t in log_grid(1e-4, 0.7, 50) {
            let v = nf.eval(t);
            assert!(v < 1.0);
            for beta in [1.5, 2.0, 3.0] {
                assert!(v > v.powf(beta));
            }
        }
    }
}
