//! Radial C¹ cut-off functions: 1 on the disk of radius δ/2, 0 outside
//! radius δ, with a trigonometric transition on the annulus between.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CutoffKind {
    Sine,
    SineSq,
    Cosine,
    CosineSq,
    /// One-dimensional sine transition in `t` only.
    ScalarSine,
}

impl CutoffKind {
    pub const PLANAR: [CutoffKind; 4] = [CutoffKind::Sine, CutoffKind::SineSq, CutoffKind::Cosine, CutoffKind::CosineSq];

    pub fn name(self) -> &'static str {
        match self {
            CutoffKind::Sine => "sine",
            CutoffKind::SineSq => "sine_sq",
            CutoffKind::Cosine => "cosine",
            CutoffKind::CosineSq => "cosine_sq",
            CutoffKind::ScalarSine => "scalar_sine",
        }
    }
}

impl fmt::Display for CutoffKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown cut-off kind `{0}` (expected sine, sine_sq, cosine, cosine_sq or scalar_sine)")]
pub struct UnknownCutoff(pub String);

impl FromStr for CutoffKind {
    type Err = UnknownCutoff;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "sine" => CutoffKind::Sine,
            "sine_sq" => CutoffKind::SineSq,
            "cosine" => CutoffKind::Cosine,
            "cosine_sq" => CutoffKind::CosineSq,
            "scalar_sine" => CutoffKind::ScalarSine,
            other => return Err(UnknownCutoff(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffFamily {
    pub kind: CutoffKind,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffValue {
    pub value: f64,
    pub grad_t: f64,
    pub grad_s: f64,
}

impl CutoffFamily {
    pub fn new(kind: CutoffKind, delta: f64) -> Self {
        assert!(delta > 0.0, "cut-off radius must be positive");
        CutoffFamily { kind, delta }
    }

    /// Radius inside which the cut-off is identically 1.
    pub fn inner_radius(&self) -> f64 {
        0.5 * self.delta
    }

    /// Value and derivative with respect to `q = r²`.
    fn profile(&self, q: f64) -> (f64, f64) {
        let d2 = self.delta * self.delta;
        if q <= 0.25 * d2 {
            return (1.0, 0.0);
        }
        if q >= d2 {
            return (0.0, 0.0);
        }
        let a = 8.0 * PI / (9.0 * d2 * d2);
        let b = 2.0 * PI / (3.0 * d2);
        match self.kind {
            CutoffKind::Sine | CutoffKind::ScalarSine => {
                let w = q - d2;
                let u = a * w * w;
                (u.sin(), u.cos() * 2.0 * a * w)
            }
            CutoffKind::SineSq => {
                let u = b * (q - d2);
                (u.sin().powi(2), (2.0 * u).sin() * b)
            }
            CutoffKind::Cosine => {
                let w = q - 0.25 * d2;
                let u = a * w * w;
                (u.cos(), -u.sin() * 2.0 * a * w)
            }
            CutoffKind::CosineSq => {
                let u = b * (q - 0.25 * d2);
                (u.cos().powi(2), -(2.0 * u).sin() * b)
            }
        }
    }

    pub fn eval(&self, t: f64, s: f64) -> CutoffValue {
        let s = if self.kind == CutoffKind::ScalarSine { 0.0 } else { s };
        let (value, dq) = self.profile(t * t + s * s);
        CutoffValue { value, grad_t: 2.0 * t * dq, grad_s: 2.0 * s * dq }
    }

    pub fn value(&self, t: f64, s: f64) -> f64 {
        self.eval(t, s).value
    }

    fn is_planar(&self) -> bool {
        self.kind != CutoffKind::ScalarSine
    }
}

pub fn eval_cutoff(fam: &CutoffFamily, t: f64, s: f64) -> CutoffValue {
    fam.eval(t, s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffReport {
    pub kind: CutoffKind,
    pub delta: f64,
    pub samples: usize,
    /// Largest jump in the radial derivative across the inner circle.
    pub c1_mismatch_inner: f64,
    /// Largest jump in the radial derivative across the outer circle.
    pub c1_mismatch_outer: f64,
    /// Largest positive value of `t·ρ_t + s·ρ_s`.
    pub sign_violation: f64,
    /// Samples with `ρ` outside `[0, 1]`.
    pub range_violations: usize,
    /// Largest gap between the analytic gradient and central differences
    /// away from the transition circles.
    pub gradient_error: f64,
}

impl CutoffReport {
    pub fn is_c1(&self, tol: f64) -> bool {
        self.c1_mismatch_inner <= tol && self.c1_mismatch_outer <= tol
    }
}

pub const AUDIT_STEP: f64 = 1e-6;

/// Second-order one-sided radial derivatives on both sides of radius `r0`.
fn radial_jump(fam: &CutoffFamily, r0: f64, (c, s): (f64, f64)) -> f64 {
    let h = AUDIT_STEP;
    let rho = |r: f64| fam.value(r * c, r * s);
    let inside = (3.0 * rho(r0) - 4.0 * rho(r0 - h) + rho(r0 - 2.0 * h)) / (2.0 * h);
    let outside = (-3.0 * rho(r0) + 4.0 * rho(r0 + h) - rho(r0 + 2.0 * h)) / (2.0 * h);
    (outside - inside).abs()
}

/// Finite-difference audit of the cut-off on `samples` seeded points.
pub fn verify_cutoff(fam: &CutoffFamily, samples: usize) -> CutoffReport {
    assert!(samples >= 100, "audit needs at least 100 samples");
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0ff);
    let mut report = CutoffReport {
        kind: fam.kind,
        delta: fam.delta,
        samples,
        c1_mismatch_inner: 0.0,
        c1_mismatch_outer: 0.0,
        sign_violation: 0.0,
        range_violations: 0,
        gradient_error: 0.0,
    };
    let (inner, outer) = (fam.inner_radius(), fam.delta);
    for i in 0..samples {
        // stratified radii over [0, 1.25 δ]
        let r = 1.25 * fam.delta * (i as f64 + rng.gen::<f64>()) / samples as f64;
        let dir = if fam.is_planar() {
            let a = rng.gen::<f64>() * 2.0 * PI;
            (a.cos(), a.sin())
        } else if rng.gen::<bool>() {
            (1.0, 0.0)
        } else {
            (-1.0, 0.0)
        };
        let (t, s) = (r * dir.0, r * dir.1);
        let v = fam.eval(t, s);
        if !(0.0..=1.0).contains(&v.value) {
            report.range_violations += 1;
        }
        report.sign_violation = report.sign_violation.max(t * v.grad_t + s * v.grad_s);

        let h = AUDIT_STEP;
        let near_circle = (r - inner).abs() < 4.0 * h || (r - outer).abs() < 4.0 * h;
        if !near_circle {
            let fd_t = (fam.value(t + h, s) - fam.value(t - h, s)) / (2.0 * h);
            let fd_s = if fam.is_planar() { (fam.value(t, s + h) - fam.value(t, s - h)) / (2.0 * h) } else { 0.0 };
            report.gradient_error = report.gradient_error.max((fd_t - v.grad_t).abs()).max((fd_s - v.grad_s).abs());
        }
        if i % 10 == 0 {
            report.c1_mismatch_inner = report.c1_mismatch_inner.max(radial_jump(fam, inner, dir));
            report.c1_mismatch_outer = report.c1_mismatch_outer.max(radial_jump(fam, outer, dir));
        }
    }
    report
}

/// CSV rows `t,s,rho,rho_t,rho_s` on an `n × n` grid over `[-extent, extent]²`
/// (a single row of `t` values for the scalar family).
pub fn write_table<W: Write>(fam: &CutoffFamily, n: usize, extent: f64, mut out: W) -> io::Result<()> {
    writeln!(out, "t,s,rho,rho_t,rho_s")?;
    let coord = |i: usize| -extent + 2.0 * extent * i as f64 / (n - 1) as f64;
    let s_points = if fam.is_planar() { n } else { 1 };
    for j in 0..s_points {
        let s = if fam.is_planar() { coord(j) } else { 0.0 };
        for i in 0..n {
            let t = coord(i);
            let v = fam.eval(t, s);
            writeln!(out, "{t},{s},{},{},{}", v.value, v.grad_t, v.grad_s)?;
        }
    }
    Ok(())
}
