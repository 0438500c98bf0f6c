//! A-posteriori bounds for solved instances: λ-power envelopes for the
//! Orlicz–Sobolev norm, the Moser ladder of `Lᵖ` norms and the closed-form
//! scalar sup-norm bound.

use std::io::{self, Write};

use thiserror::Error;

use crate::field::{lp_norm, DiscreteField};
use crate::nfunction::IndexPair;
use crate::nonlinearity::Interval;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MoserError {
    #[error("exponent condition violated: {0}")]
    Exponent(String),
    #[error("r = {r} lies outside the ladder window ({lo}, {hi})")]
    RWindow { r: f64, lo: f64, hi: f64 },
    #[error("ladder depth must be at least 3, got {0}")]
    Depth(usize),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

fn positive(name: &'static str, value: f64) -> Result<(), MoserError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(MoserError::NonPositive { name, value })
    }
}

// ---------------------------------------------------------------------------
// λ-power norm bounds

/// Constants feeding the system norm bound. `potential_inf` holds the
/// infima of the two potentials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeConstants {
    pub c1: f64,
    pub c2: f64,
    pub theta: f64,
    pub potential_inf: [f64; 2],
}

impl EnvelopeConstants {
    pub fn new(c1: f64, c2: f64, theta: f64) -> Self {
        EnvelopeConstants { c1, c2, theta, potential_inf: [1.0, 1.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBounds {
    pub u_bound: f64,
    pub v_bound: f64,
    /// Upper bound on the mountain-pass level.
    pub c_bound: f64,
}

/// λ-exponents of the u-bound in display order:
/// `[−1/(k₁−l₁), −l₂/(l₁(k₂−l₂)), −l₁/(m₁(k₁−l₁)), −l₂/(m₁(k₂−l₂))]`.
/// The first pair is summed, the second pair is summed, and the bound is
/// the larger sum.
pub fn u_bound_exponents(ip1: &IndexPair, ip2: &IndexPair, k1: f64, k2: f64) -> [f64; 4] {
    let (d1, d2) = (k1 - ip1.l, k2 - ip2.l);
    [-1.0 / d1, -ip2.l / (ip1.l * d2), -ip1.l / (ip1.m * d1), -ip2.l / (ip1.m * d2)]
}

/// Same for the v-bound.
pub fn v_bound_exponents(ip1: &IndexPair, ip2: &IndexPair, k1: f64, k2: f64) -> [f64; 4] {
    let (d1, d2) = (k1 - ip1.l, k2 - ip2.l);
    [-ip1.l / (ip2.l * d1), -1.0 / d2, -ip1.l / (ip2.m * d1), -ip2.l / (ip2.m * d2)]
}

/// Exponent of the slowest-decaying term of the u-bound as λ → ∞.
pub fn dominant_u_exponent(ip1: &IndexPair, ip2: &IndexPair, k1: f64, k2: f64) -> f64 {
    u_bound_exponents(ip1, ip2, k1, k2).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Norm and level bounds for the system at parameter `lambda`.
///
/// With `a_i = θ/(θ−m_i)` the u-bound is
/// `(1/V₁ + 1)·max{(a₁C₁)^{1/l₁}λ^{e₀} + (a₁C₂)^{1/l₁}λ^{e₁}, (a₁C₁)^{1/m₁}λ^{e₂} + (a₁C₂)^{1/m₁}λ^{e₃}}`
/// and symmetrically for v. The level bound is `C₁λ^{−l₁/(k₁−l₁)} + C₂λ^{−l₂/(k₂−l₂)}`.
pub fn system_norm_bound(
    ip1: &IndexPair,
    ip2: &IndexPair,
    k1: f64,
    k2: f64,
    lambda: f64,
    constants: EnvelopeConstants,
) -> Result<NormBounds, MoserError> {
    if !(k1 > ip1.l) {
        return Err(MoserError::Exponent(format!("k1 = {k1} must exceed l1 = {}", ip1.l)));
    }
    if !(k2 > ip2.l) {
        return Err(MoserError::Exponent(format!("k2 = {k2} must exceed l2 = {}", ip2.l)));
    }
    if !(constants.theta > ip1.m.max(ip2.m)) {
        return Err(MoserError::Exponent(format!(
            "theta = {} must exceed max(m1, m2) = {}",
            constants.theta,
            ip1.m.max(ip2.m)
        )));
    }
    positive("lambda", lambda)?;
    positive("C1", constants.c1)?;
    positive("C2", constants.c2)?;
    positive("potential infimum", constants.potential_inf[0])?;
    positive("potential infimum", constants.potential_inf[1])?;

    let th = constants.theta;
    let side = |ip: &IndexPair, e: [f64; 4], v_inf: f64| {
        let a = th / (th - ip.m);
        let (p1, p2) = (a * constants.c1, a * constants.c2);
        let low = p1.powf(1.0 / ip.l) * lambda.powf(e[0]) + p2.powf(1.0 / ip.l) * lambda.powf(e[1]);
        let high = p1.powf(1.0 / ip.m) * lambda.powf(e[2]) + p2.powf(1.0 / ip.m) * lambda.powf(e[3]);
        (1.0 / v_inf + 1.0) * low.max(high)
    };
    let u_bound = side(ip1, u_bound_exponents(ip1, ip2, k1, k2), constants.potential_inf[0]);
    let v_bound = side(ip2, v_bound_exponents(ip1, ip2, k1, k2), constants.potential_inf[1]);
    let c_bound = constants.c1 * lambda.powf(-ip1.l / (k1 - ip1.l)) + constants.c2 * lambda.powf(-ip2.l / (k2 - ip2.l));
    Ok(NormBounds { u_bound, v_bound, c_bound })
}

/// Scalar envelope `max{λ^{−1/(k−l)}, λ^{−l/(m(k−l))}}` without its constant.
pub fn scalar_norm_envelope(ip: &IndexPair, k: f64, lambda: f64) -> Result<f64, MoserError> {
    if !(k > ip.l) {
        return Err(MoserError::Exponent(format!("k = {k} must exceed l = {}", ip.l)));
    }
    positive("lambda", lambda)?;
    let d = k - ip.l;
    Ok(lambda.powf(-1.0 / d).max(lambda.powf(-ip.l / (ip.m * d))))
}

/// Slope of the scalar envelope in log-log coordinates for λ ≥ 1.
pub fn scalar_envelope_slope(ip: &IndexPair, k: f64) -> f64 {
    let d = k - ip.l;
    (-1.0 / d).max(-ip.l / (ip.m * d))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValleyScaling {
    pub s_max: f64,
    pub g_max: f64,
    /// The unconstrained maximiser lies at or beyond 1 and was clamped there.
    pub clamped: bool,
}

/// Maximiser of `g(s) = A·s^l − λ·M·s^k` over `s ∈ (0, 1]`.
pub fn valley_scaling_maximizer(a: f64, m: f64, k: f64, l: f64, lambda: f64) -> ValleyScaling {
    let g = |s: f64| a * s.powf(l) - lambda * m * s.powf(k);
    let s = (l * a / (lambda * m * k)).powf(1.0 / (k - l));
    if s >= 1.0 {
        ValleyScaling { s_max: 1.0, g_max: g(1.0), clamped: true }
    } else {
        ValleyScaling { s_max: s, g_max: g(s), clamped: false }
    }
}

// ---------------------------------------------------------------------------
// Moser ladder

/// Largest ladder exponent evaluated on the grid.
pub const LADDER_EXPONENT_CAP: f64 = 1e3;
/// Inflation applied to the fitted chain constant.
pub const CONSTANT_INFLATION: f64 = 1.1;

/// `β₁ = 1 + (l* − r)/l`.
pub fn ladder_beta1(ip: &IndexPair, r: f64) -> f64 {
    1.0 + (ip.l_star - r) / ip.l
}

/// `α* = l·l*/(l* − r + l)`.
pub fn ladder_alpha_star(ip: &IndexPair, r: f64) -> f64 {
    ip.l * ip.l_star / (ip.l_star - r + ip.l)
}

/// Window of admissible first ladder exponents for the system:
/// `(1 + (r−l)/(l(l−1)) + (m+1)/(Θl), ∞)`.
pub fn beta_window(ip: &IndexPair, r: f64, theta: f64) -> Interval {
    let l = ip.l;
    Interval { lo: 1.0 + (r - l) / (l * (l - 1.0)) + (ip.m + 1.0) / (theta * l), hi: f64::INFINITY }
}

/// The three exponent sums that must vanish as the ladder deepens, at
/// depth `n`. `ratio = l*/α*`.
///
/// `[Σ 1/(β₁ l l^{n−i} ratio^i), Σ i·l^{−(n−i)}·ratio^{−i}, l^{−(n+1)}]`.
pub fn limit_sums(l: f64, beta1: f64, ratio: f64, n: usize) -> [f64; 3] {
    let mut first = 0.0;
    let mut second = 0.0;
    for i in 0..=n {
        let w = l.powi(-((n - i) as i32)) * ratio.powi(-(i as i32));
        first += w / (beta1 * l);
        second += i as f64 * w;
    }
    [first, second, l.powi(-((n + 1) as i32))]
}

/// Proof-internal Hölder exponent ranges `σ₁ ∈ (1, l₂*/m₂]`,
/// `σ₂ ∈ (1, l₁*/m₁]`. Kept as metadata only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaRanges {
    pub sigma1_max: f64,
    pub sigma2_max: f64,
}

pub fn sigma_ranges(ip1: &IndexPair, ip2: &IndexPair) -> SigmaRanges {
    SigmaRanges { sigma1_max: ip2.l_star / ip2.m, sigma2_max: ip1.l_star / ip1.m }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLedger {
    pub beta1: f64,
    pub alpha_star: f64,
    /// `l*/α*`, the growth factor of the ladder.
    pub ratio: f64,
    pub betas: Vec<f64>,
    /// `β⁽ⁿ⁾·l*`, the Lebesgue exponent of each rung.
    pub exponents: Vec<f64>,
    /// Grid `L^{β⁽ⁿ⁾l*}` norms.
    pub norms: Vec<f64>,
    /// Running product bound at each rung.
    pub bounds: Vec<f64>,
    pub bound_product: f64,
    pub sup_norm: f64,
    /// Grid `L^{l*}` norm, the ladder's entry rung.
    pub entry_norm: f64,
    /// `embed_C · ‖u‖_{1,Φ}`.
    pub entry_apriori: f64,
    /// Empirical chain constant, inflated.
    pub fitted_constant: f64,
    pub limit_sums: [f64; 3],
    pub sigma: Option<SigmaRanges>,
    pub passed: bool,
}

impl IterationLedger {
    /// CSV with columns `n,beta,exponent,norm,bound`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "n,beta,exponent,norm,bound")?;
        for (n, (((b, e), nm), bd)) in
            self.betas.iter().zip(&self.exponents).zip(&self.norms).zip(&self.bounds).enumerate()
        {
            writeln!(out, "{n},{b:.17e},{e:.17e},{nm:.17e},{bd:.17e}")?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "beta1 = {}\nalpha_star = {}\nratio = {}\nrungs = {}\nfitted constant (empirical) = {:e}\nbound = {:e}\nsup norm = {:e}\nverdict = {}\n",
            self.beta1,
            self.alpha_star,
            self.ratio,
            self.betas.len(),
            self.fitted_constant,
            self.bound_product,
            self.sup_norm,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Builds the Moser ladder for one component of a solved instance.
///
/// Each rung satisfies
/// `‖u‖_{β⁽ⁿ⁾l*} ≤ (λ·D·β⁽ⁿ⁾^l·N^{(r−l)/l})^{1/(lβ⁽ⁿ⁾)}·‖u‖_{β⁽ⁿ⁻¹⁾l*}^{1/l}`
/// with `N = sobolev_norm`. The chain constant `D` is fitted as the
/// smallest value making every rung hold on the grid, then inflated by
/// 10%. The entry rung uses the larger of the grid `L^{l*}` norm and the
/// embedding estimate `embed_C·N`. Rungs stop at `depth` or when the
/// exponent passes [`LADDER_EXPONENT_CAP`].
pub fn moser_ladder(
    u: &DiscreteField,
    ip: &IndexPair,
    r: f64,
    lambda: f64,
    sobolev_norm: f64,
    embed_c: f64,
    depth: usize,
) -> Result<IterationLedger, MoserError> {
    if depth < 3 {
        return Err(MoserError::Depth(depth));
    }
    if !ip.l_star.is_finite() {
        return Err(MoserError::Exponent(format!("lower index {} is not below the dimension {}", ip.l, ip.dim)));
    }
    if !(r > ip.m && r < ip.l_star) {
        return Err(MoserError::RWindow { r, lo: ip.m, hi: ip.l_star });
    }
    positive("lambda", lambda)?;
    positive("Orlicz-Sobolev norm", sobolev_norm)?;
    positive("embedding constant", embed_c)?;

    let l = ip.l;
    let beta1 = ladder_beta1(ip, r);
    let alpha_star = ladder_alpha_star(ip, r);
    let ratio = ip.l_star / alpha_star;
    let mut betas = vec![beta1];
    while betas.len() < depth {
        let next = betas.last().copied().unwrap_or(beta1) * ratio;
        if next * ip.l_star > LADDER_EXPONENT_CAP {
            break;
        }
        betas.push(next);
    }
    let exponents: Vec<f64> = betas.iter().map(|b| b * ip.l_star).collect();
    let norms: Vec<f64> = exponents.iter().map(|&p| lp_norm(u, p)).collect();
    let sup_norm = u.sup_norm();
    let entry_norm = lp_norm(u, ip.l_star);
    let entry_apriori = embed_c * sobolev_norm;
    let entry = entry_norm.max(entry_apriori);

    // log of λ·N^{(r−l)/l}, shared by every rung
    let ln_scale = lambda.ln() + (r - l) / l * sobolev_norm.ln();
    let mut ln_d = f64::NEG_INFINITY;
    let mut prev = entry;
    for (b, nm) in betas.iter().zip(&norms) {
        if *nm > 0.0 {
            let need = l * b * (nm.ln() - prev.ln() / l) - l * b.ln() - ln_scale;
            ln_d = ln_d.max(need);
        }
        prev = *nm;
    }
    if !ln_d.is_finite() {
        ln_d = 0.0;
    }
    ln_d += CONSTANT_INFLATION.ln();

    let mut bounds = Vec::with_capacity(betas.len());
    let mut ln_bound = entry.ln();
    for b in &betas {
        ln_bound = (ln_scale + ln_d) / (l * b) + b.ln() / b + ln_bound / l;
        bounds.push(ln_bound.exp());
    }
    let bound_product = *bounds.last().expect("at least one rung");
    Ok(IterationLedger {
        beta1,
        alpha_star,
        ratio,
        limit_sums: limit_sums(l, beta1, ratio, betas.len() - 1),
        betas,
        exponents,
        norms,
        bounds,
        bound_product,
        sup_norm,
        entry_norm,
        entry_apriori,
        fitted_constant: ln_d.exp(),
        sigma: None,
        passed: bound_product >= sup_norm,
    })
}

// ---------------------------------------------------------------------------
// Scalar closed form

/// `C·(λ·N^{r−l})^{1/(l*−r)}·N` with `N = ‖u‖_{1,Φ}`.
pub fn scalar_linf_bound(norm: f64, ip: &IndexPair, r: f64, lambda: f64, c: f64) -> Result<f64, MoserError> {
    if !(ip.l_star > r && r > ip.l) {
        return Err(MoserError::Exponent(format!("need l* = {} > r = {r} > l = {}", ip.l_star, ip.l)));
    }
    positive("lambda", lambda)?;
    if !(norm >= 0.0) {
        return Err(MoserError::NonPositive { name: "norm", value: norm });
    }
    Ok(c * (lambda * norm.powf(r - ip.l)).powf(1.0 / (ip.l_star - r)) * norm)
}

/// λ-exponent of the composite sup-norm bound obtained by inserting the
/// scalar norm envelope into [`scalar_linf_bound`]. Negative means decay.
pub fn composite_linf_exponent(ip: &IndexPair, r: f64, k: f64) -> f64 {
    let gap = ip.l_star - r;
    1.0 / gap + (ip.l_star - ip.l) / gap * scalar_envelope_slope(ip, k)
}
