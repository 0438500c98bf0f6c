//! Numerical mountain pass: deform a discrete path between a start point
//! and a valley point by pushing its highest node downhill, then polish the
//! saddle by minimising the ray maximum `ψ(w) = max_{s>0} J(s·w)` with
//! L-BFGS when the path starts at the origin.

use thiserror::Error;

use crate::energy::{EnergyError, SystemProblem};
use crate::field::DiscreteField;
use crate::quad::golden_max;

#[derive(Debug, Error)]
pub enum MpaError {
    #[error("no valley at lambda = {lambda}: the bump needs lambda > {needed:.6e}")]
    NoValley { lambda: f64, needed: f64 },
    #[error("path collapsed: the highest node is an endpoint (index {index})")]
    PathCollapse { index: usize },
    #[error("invalid solver config: {0}")]
    Config(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// A differentiable functional on flat states with a weighted inner
/// product `⟨a, b⟩ = Σ wᵢ aᵢ bᵢ`.
pub trait Functional: Sync {
    fn value(&self, x: &[f64]) -> f64;
    /// Gradient in the weighted inner product.
    fn residual(&self, x: &[f64]) -> Vec<f64>;
    fn weights(&self) -> Vec<f64>;
    /// Magnitude against which `sup|residual|` is judged.
    fn residual_scale(&self, _x: &[f64]) -> f64 {
        1.0
    }
    /// Approximate inverse of the Hessian's principal part; identity by default.
    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        r.to_vec()
    }
}

impl Functional for SystemProblem {
    fn value(&self, x: &[f64]) -> f64 {
        self.energy_of_state(x)
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.residual_of_state(x)
    }

    fn weights(&self) -> Vec<f64> {
        self.state_weights()
    }

    fn residual_scale(&self, x: &[f64]) -> f64 {
        SystemProblem::residual_scale(self, x)
    }

    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        self.sobolev_gradient(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub path_nodes: usize,
    pub descent_step: f64,
    pub max_iters: usize,
    pub residual_tol: f64,
    pub lambda: f64,
    /// Iteration cap of the ray-maximum polish; 0 disables it.
    pub polish_iters: usize,
}

/// Path iterations spent before handing over to the ray polish.
pub const POLISH_HANDOFF: usize = 20;

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            path_nodes: 16,
            descent_step: 0.1,
            max_iters: 200,
            residual_tol: 1e-5,
            lambda: 1.0,
            polish_iters: 5000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), MpaError> {
        let bad = |m: &str| Err(MpaError::Config(m.to_string()));
        if self.path_nodes < 16 {
            return bad("path_nodes must be at least 16");
        }
        if !(self.descent_step > 0.0) {
            return bad("descent_step must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.residual_tol > 0.0 && self.residual_tol < 1.0) {
            return bad("residual_tol must lie in (0, 1)");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PathState {
    pub nodes: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
}

/// Outcome of the generic engine.
#[derive(Debug, Clone)]
pub struct SaddleEstimate {
    pub point: Vec<f64>,
    pub level: f64,
    /// `sup|residual| / residual_scale` at `point`.
    pub residual_sup: f64,
    pub iterations: usize,
    pub converged: bool,
    pub path: PathState,
}

fn dot_w(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

fn scaled_residual<F: Functional + ?Sized>(f: &F, x: &[f64], r: &[f64]) -> f64 {
    sup(r) / f.residual_scale(x).max(1e-300)
}

/// Index of the highest interior-or-endpoint node; ties go to the lowest index.
fn max_node(energies: &[f64]) -> usize {
    let mut best = 0;
    for (i, e) in energies.iter().enumerate() {
        if *e > energies[best] {
            best = i;
        }
    }
    best
}

/// Equal arc-length spacing in the weighted norm, endpoints kept.
fn equalize(nodes: &[Vec<f64>], w: &[f64]) -> Vec<Vec<f64>> {
    let n = nodes.len();
    if n < 3 {
        return nodes.to_vec();
    }
    let mut cum = vec![0.0; n];
    for i in 1..n {
        let d: Vec<f64> = nodes[i].iter().zip(&nodes[i - 1]).map(|(a, b)| a - b).collect();
        cum[i] = cum[i - 1] + dot_w(w, &d, &d).sqrt();
    }
    let total = cum[n - 1];
    if !(total > 0.0) {
        return nodes.to_vec();
    }
    let mut out = Vec::with_capacity(n);
    out.push(nodes[0].clone());
    let mut seg = 1;
    for j in 1..n - 1 {
        let target = total * j as f64 / (n - 1) as f64;
        while cum[seg] < target && seg < n - 1 {
            seg += 1;
        }
        let span = cum[seg] - cum[seg - 1];
        let t = if span > 0.0 { (target - cum[seg - 1]) / span } else { 0.0 };
        out.push(lerp(&nodes[seg - 1], &nodes[seg], t));
    }
    out.push(nodes[n - 1].clone());
    out
}

/// Re-space the path by arc length on each side of the pinned node.
fn reparameterize(path: &mut PathState, w: &[f64], pin: usize) {
    let mut nodes = equalize(&path.nodes[..=pin], w);
    nodes.extend(equalize(&path.nodes[pin..], w).into_iter().skip(1));
    path.nodes = nodes;
}

/// Move node `k` to the maximiser of `f` on the line through it parallel
/// to the chord `x_{k+1} − x_{k−1}`, within half a chord either way.
fn refine_max<F: Functional + ?Sized>(f: &F, path: &mut PathState, k: usize) {
    let x = &path.nodes[k];
    let half: Vec<f64> = path.nodes[k + 1].iter().zip(&path.nodes[k - 1]).map(|(a, b)| 0.5 * (a - b)).collect();
    let at = |tau: f64| x.iter().zip(&half).map(|(a, b)| a + tau * b).collect::<Vec<f64>>();
    let (tau, val) = golden_max(|tau| f.value(&at(tau)), -1.0, 1.0, 1e-6);
    if val > path.energies[k] {
        path.nodes[k] = at(tau);
        path.energies[k] = val;
    }
}

/// Mountain-pass iteration between `start` and `end`.
pub fn mountain_pass<F: Functional + ?Sized>(
    f: &F,
    start: &[f64],
    end: &[f64],
    cfg: &SolverConfig,
) -> Result<SaddleEstimate, MpaError> {
    let n = cfg.path_nodes.max(16);
    let w = f.weights();
    let nodes: Vec<Vec<f64>> = (0..n).map(|i| lerp(start, end, i as f64 / (n - 1) as f64)).collect();
    let energies = nodes.iter().map(|x| f.value(x)).collect();
    let mut path = PathState { nodes, energies };
    let mut step = cfg.descent_step;
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    let mut iterations = 0;
    let mut converged = false;
    let polishing = start.iter().all(|v| *v == 0.0) && cfg.polish_iters > 0;
    // the path phase only has to deliver a warm start when a polish follows
    let path_iters = if polishing { cfg.max_iters.min(POLISH_HANDOFF) } else { cfg.max_iters };

    for it in 0..path_iters {
        iterations = it + 1;
        if it > 0 && it % 25 == 0 {
            let pin = max_node(&path.energies).clamp(1, n - 2);
            reparameterize(&mut path, &w, pin);
            path.energies = path.nodes.iter().map(|x| f.value(x)).collect();
        }
        let k = max_node(&path.energies);
        if k == 0 || k == n - 1 {
            return Err(MpaError::PathCollapse { index: k });
        }
        refine_max(f, &mut path, k);
        let x = path.nodes[k].clone();
        let e = path.energies[k];
        let r = f.residual(&x);
        let score = scaled_residual(f, &x, &r);
        if best.as_ref().is_none_or(|b| score < b.2) {
            best = Some((x.clone(), e, score));
        }
        if score <= cfg.residual_tol {
            converged = true;
            break;
        }
        // Armijo backtracking on the worst node only, along the residual
        // with its path-tangent part removed (the refine step owns that part)
        let tangent: Vec<f64> = path.nodes[k + 1].iter().zip(&path.nodes[k - 1]).map(|(a, b)| a - b).collect();
        let tt = dot_w(&w, &tangent, &tangent);
        let r: Vec<f64> = if tt > 0.0 {
            let c = dot_w(&w, &r, &tangent) / tt;
            r.iter().zip(&tangent).map(|(a, b)| a - c * b).collect()
        } else {
            r
        };
        let d = f.precondition(&r);
        let rr = dot_w(&w, &r, &d);
        let floor = path.energies[0].max(path.energies[n - 1]);
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - step * b).collect();
            let et = f.value(&trial);
            // the pushed node must stay above both ends or the path loses its pass
            if et <= e - 1e-4 * step * rr && et > floor {
                path.nodes[k] = trial;
                path.energies[k] = et;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if accepted {
            step = (step * 2.0).min(cfg.descent_step);
        } else {
            break;
        }
    }

    let (mut point, mut level, mut residual_sup) = best.expect("at least one iteration");
    if !converged && polishing {
        let polished = ray_polish(f, &point, cfg.residual_tol, cfg.polish_iters);
        iterations += polished.iterations;
        if polished.residual_sup < residual_sup {
            point = polished.point;
            level = polished.level;
            residual_sup = polished.residual_sup;
        }
        converged = residual_sup <= cfg.residual_tol;
    }
    Ok(SaddleEstimate { point, level, residual_sup, iterations, converged, path })
}

struct Polished {
    point: Vec<f64>,
    level: f64,
    residual_sup: f64,
    iterations: usize,
}

/// Maximiser of `s ↦ J(s·w)` near `guess`, from the sign change of
/// `⟨J'(s·w), w⟩`.
fn ray_argmax<F: Functional + ?Sized>(f: &F, weights: &[f64], dir: &[f64], guess: f64) -> Option<f64> {
    let slope = |s: f64| {
        let x: Vec<f64> = dir.iter().map(|v| s * v).collect();
        dot_w(weights, &f.residual(&x), dir)
    };
    let (mut lo, mut hi) = (guess, guess);
    let mut flo = slope(lo);
    let mut fhi;
    // the maximiser rarely moves far between calls, so the bracket starts tight
    let mut factor = 1.02_f64;
    if flo > 0.0 {
        hi = lo;
        loop {
            hi *= factor;
            factor *= factor;
            fhi = slope(hi);
            if fhi <= 0.0 {
                break;
            }
            lo = hi;
            flo = fhi;
            if hi > guess * 1e12 {
                return None;
            }
        }
    } else {
        fhi = flo;
        loop {
            lo /= factor;
            factor *= factor;
            flo = slope(lo);
            if flo > 0.0 {
                break;
            }
            hi = lo;
            fhi = flo;
            if lo < guess * 1e-12 {
                return None;
            }
        }
    }
    // Illinois regula falsi on the decreasing slope
    let mut side = 0;
    for _ in 0..100 {
        let s = (lo * fhi - hi * flo) / (fhi - flo);
        if !(s > lo && s < hi) || (hi - lo) <= 1e-13 * hi {
            return Some(0.5 * (lo + hi));
        }
        let fs = slope(s);
        if fs > 0.0 {
            lo = s;
            flo = fs;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = s;
            fhi = fs;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    Some(0.5 * (lo + hi))
}

/// L-BFGS on `ψ(w) = max_s J(s·w)`, whose gradient is `s*·J'(s*·w)`.
fn ray_polish<F: Functional + ?Sized>(f: &F, start: &[f64], tol: f64, max_iters: usize) -> Polished {
    let weights = f.weights();
    let eval = |dir: &[f64], guess: f64| -> Option<(f64, Vec<f64>, f64, Vec<f64>)> {
        let s = ray_argmax(f, &weights, dir, guess)?;
        let x: Vec<f64> = dir.iter().map(|v| s * v).collect();
        let r = f.residual(&x);
        let g: Vec<f64> = r.iter().map(|v| s * v).collect();
        Some((f.value(&x), g, s, x))
    };
    let mut dir = start.to_vec();
    let Some((mut psi, mut grad, mut s_star, mut x)) = eval(&dir, 1.0) else {
        return Polished { point: start.to_vec(), level: f.value(start), residual_sup: f64::INFINITY, iterations: 0 };
    };
    let score = |x: &[f64], g: &[f64], s: f64| sup(g) / s / f.residual_scale(x).max(1e-300);
    let mut best = Polished { point: x.clone(), level: psi, residual_sup: score(&x, &grad, s_star), iterations: 0 };
    let memory = 12;
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut failures = 0;
    for it in 0..max_iters {
        best.iterations = it + 1;
        if best.residual_sup <= tol {
            break;
        }
        // two-loop recursion in the weighted inner product
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot_w(&weights, s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = match hist.last() {
            Some((s, y, _)) => dot_w(&weights, s, y) / dot_w(&weights, y, &f.precondition(y)),
            None => {
                let pg = f.precondition(&grad);
                1e-2 * dot_w(&weights, &dir, &dir).sqrt() / dot_w(&weights, &pg, &pg).sqrt().max(1e-300)
            }
        };
        q = f.precondition(&q);
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot_w(&weights, y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut slope = -dot_w(&weights, &grad, &q);
        if !(slope < 0.0) {
            hist.clear();
            q = f.precondition(&grad).iter().map(|v| v * gamma.abs().max(1e-12)).collect();
            slope = -dot_w(&weights, &grad, &q);
        }
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let trial: Vec<f64> = dir.iter().zip(&q).map(|(d, p)| d - t * p).collect();
            if let Some(res) = eval(&trial, s_star) {
                // slack of a few ulps of ψ absorbs rounding near the optimum
                if res.0 <= psi + 1e-4 * t * slope + 1e-13 * psi.abs() {
                    next = Some((trial, res));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, (psi_n, grad_n, s_n, x_n))) = next else {
            failures += 1;
            hist.clear();
            if failures > 5 {
                break;
            }
            continue;
        };
        failures = 0;
        let s_vec: Vec<f64> = trial.iter().zip(&dir).map(|(a, b)| a - b).collect();
        let y_vec: Vec<f64> = grad_n.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot_w(&weights, &s_vec, &y_vec);
        if sy > 1e-300 {
            if hist.len() == memory {
                hist.remove(0);
            }
            hist.push((s_vec, y_vec, 1.0 / sy));
        }
        dir = trial;
        psi = psi_n;
        grad = grad_n;
        s_star = s_n;
        x = x_n;
        let sc = score(&x, &grad, s_star);
        if sc < best.residual_sup {
            best.point = x.clone();
            best.level = psi;
            best.residual_sup = sc;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Grid problems

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub u: DiscreteField,
    pub v: Option<DiscreteField>,
    /// Estimate of the mountain-pass level.
    pub level: f64,
    pub residual_sup: f64,
    pub iterations: usize,
    /// Largest `(u² + v²)^{1/2}` over the nodes.
    pub sup_norm: f64,
    pub converged: bool,
}

/// Smooth bump `exp(1 − 1/(1 − |x|²/R²))` of unit height, `R = L/2`.
pub fn valley_bump(p: &SystemProblem) -> Vec<f64> {
    let g = p.grid;
    let radius = 0.5 * g.half_width;
    let one: Vec<f64> = (0..g.len())
        .map(|i| {
            if g.is_boundary(i) {
                return 0.0;
            }
            let r2: f64 = g.point(i).iter().map(|c| c * c).sum::<f64>() / (radius * radius);
            if r2 < 1.0 {
                (1.0 - 1.0 / (1.0 - r2)).exp()
            } else {
                0.0
            }
        })
        .collect();
    one.repeat(p.components())
}

/// Scaling data of the valley point.
#[derive(Debug, Clone, PartialEq)]
pub struct ValleyPoint {
    pub state: Vec<f64>,
    /// Maximiser of `g(s) = J(s·bump)` on `(0, 1)`.
    pub s_max: f64,
    pub g_max: f64,
    /// First zero of `g` beyond `s_max`.
    pub s_cross: f64,
    /// Chosen scale; `g(s_valley) < 0`.
    pub s_valley: f64,
}

const SCALE_CAP: f64 = 0.999;

/// Scale a bump pair to negative energy with sup norm below 1.
pub fn initial_valley_point(p: &SystemProblem) -> Result<ValleyPoint, MpaError> {
    let bump = valley_bump(p);
    let g = |s: f64| p.energy_of_state(&bump.iter().map(|b| s * b).collect::<Vec<_>>());
    let scan: Vec<f64> = (1..=400).map(|i| SCALE_CAP * (i as f64 / 400.0).powi(3)).collect();
    let values: Vec<f64> = scan.iter().map(|&s| g(s)).collect();
    let Some(first_neg) = values.iter().position(|v| *v < 0.0) else {
        return Err(MpaError::NoValley { lambda: p.lambda, needed: valley_threshold(p, &bump) });
    };
    let imax = max_node(&values[..first_neg.max(1)]);
    let (lo, hi) = (if imax > 0 { scan[imax - 1] } else { 0.0 }, scan[(imax + 1).min(first_neg)]);
    let (s_max, g_max) = golden_max(g, lo, hi, 1e-12);
    // g > 0 on (s_max, s_cross), negative just after
    let (mut a, mut b) = (s_max.max(scan[first_neg.saturating_sub(1)]), scan[first_neg]);
    if g(a) < 0.0 {
        a = s_max;
    }
    while b - a > 1e-14 * b {
        let m = 0.5 * (a + b);
        if g(m) >= 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    let s_cross = b;
    let mut s_valley = (1.5 * s_cross).min(0.5 * (s_cross + SCALE_CAP));
    if !(g(s_valley) < 0.0) {
        s_valley = s_cross;
    }
    let state = bump.iter().map(|b| s_valley * b).collect();
    Ok(ValleyPoint { state, s_max, g_max, s_cross, s_valley })
}

/// Smallest `λ` for which some `s ≤ 0.999` gives `J(s·bump) < 0`.
fn valley_threshold(p: &SystemProblem, bump: &[f64]) -> f64 {
    let q0 = p.with_lambda(0.0);
    let q1 = p.with_lambda(1.0);
    (1..=400)
        .map(|i| SCALE_CAP * (i as f64 / 400.0).powi(3))
        .filter_map(|s| {
            let x: Vec<f64> = bump.iter().map(|b| s * b).collect();
            let a = q0.energy_of_state(&x);
            let gain = a - q1.energy_of_state(&x);
            (gain > 0.0).then(|| a / gain)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn run_mountain_pass(p: &SystemProblem, cfg: &SolverConfig) -> Result<SolverResult, MpaError> {
    cfg.validate()?;
    let p = if p.lambda == cfg.lambda { p.clone() } else { p.with_lambda(cfg.lambda) };
    let valley = initial_valley_point(&p)?;
    let start = vec![0.0; p.state_len()];
    let est = mountain_pass(&p, &start, &valley.state, cfg)?;
    let mut fields = p.fields_from_state(&est.point);
    let v = (fields.len() == 2).then(|| fields.pop().expect("two components"));
    let u = fields.pop().expect("one component");
    Ok(SolverResult {
        sup_norm: p.state_sup_norm(&est.point),
        u,
        v,
        level: est.level,
        residual_sup: est.residual_sup,
        iterations: est.iterations,
        converged: est.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Toy<V, G> {
        value: V,
        grad: G,
        dim: usize,
    }

    impl<V, G> Functional for Toy<V, G>
    where
        V: Fn(&[f64]) -> f64 + Sync,
        G: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        fn value(&self, x: &[f64]) -> f64 {
            (self.value)(x)
        }
        fn residual(&self, x: &[f64]) -> Vec<f64> {
            (self.grad)(x)
        }
        fn weights(&self) -> Vec<f64> {
            vec![1.0; self.dim]
        }
    }

    #[test]
    fn quartic_toy() {
        let lambda = 1.0;
        let toy = Toy {
            value: move |x: &[f64]| x[0] * x[0] / 2.0 - lambda * x[0].powi(4) / 4.0,
            grad: move |x: &[f64]| vec![x[0] - lambda * x[0].powi(3)],
            dim: 1,
        };
        let est = mountain_pass(&toy, &[0.0], &[2.0], &SolverConfig::default()).unwrap();
        assert!(est.converged);
        assert!((est.point[0] - 1.0).abs() < 1e-4);
        assert!((est.level - 0.25).abs() < 1e-4);
    }

    #[test]
    fn quartic_toy_from_a_bent_start_uses_polish() {
        // a 2-D version with an unstable direction off the straight path
        let toy = Toy {
            value: |x: &[f64]| {
                let r2 = x[0] * x[0] + 2.0 * x[1] * x[1];
                r2 / 2.0 - r2 * r2 / 4.0
            },
            grad: |x: &[f64]| {
                let r2 = x[0] * x[0] + 2.0 * x[1] * x[1];
                vec![x[0] * (1.0 - r2), 2.0 * x[1] * (1.0 - r2)]
            },
            dim: 2,
        };
        let cfg = SolverConfig { max_iters: 3, ..SolverConfig::default() };
        let est = mountain_pass(&toy, &[0.0, 0.0], &[1.0, 1.0], &cfg).unwrap();
        assert!(est.converged, "{est:?}");
        assert!((est.level - 0.25).abs() < 1e-8);
    }

    #[test]
    fn double_well_toy() {
        let toy = Toy {
            value: |x: &[f64]| ((x[0] * x[0] - 1.0).powi(2) + x[1] * x[1]) / 4.0,
            grad: |x: &[f64]| vec![x[0] * (x[0] * x[0] - 1.0), x[1] / 2.0],
            dim: 2,
        };
        let est = mountain_pass(&toy, &[-1.0, 0.3], &[1.0, -0.2], &SolverConfig::default()).unwrap();
        assert!(est.converged, "{:?} {} {} {}", est.point, est.level, est.residual_sup, est.iterations);
        assert!(est.point[0].abs() < 1e-4 && est.point[1].abs() < 1e-4, "{:?}", est.point);
        assert!((est.level - 0.25).abs() < 1e-4);
    }

    #[test]
    fn collapse_is_reported() {
        let toy = Toy { value: |x: &[f64]| -x[0], grad: |_: &[f64]| vec![-1.0], dim: 1 };
        assert!(matches!(
            mountain_pass(&toy, &[0.0], &[1.0], &SolverConfig::default()),
            Err(MpaError::PathCollapse { index: 0 })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { path_nodes: 8, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { residual_tol: 1.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { lambda: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn reparameterize_equalises_spacing() {
        let nodes: Vec<Vec<f64>> = [0.0, 0.01, 0.02, 0.5, 1.0].iter().map(|&v| vec![v]).collect();
        let mut path = PathState { energies: vec![0.0; 5], nodes };
        reparameterize(&mut path, &[1.0], 4);
        for (i, n) in path.nodes.iter().enumerate() {
            assert!((n[0] - i as f64 / 4.0).abs() < 1e-12);
        }
    }
}
