//! Nodal fields on a truncated uniform box `[−L, L]^dim`, with trapezoidal
//! quadrature, finite-difference gradients and Orlicz-type norms.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::nfunction::NFunction;

/// Upper bound on the number of nodes of a grid.
pub const MAX_NODES: usize = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("value array has length {got}, grid needs {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("Luxemburg bracket failed: modular stays at or below 1 for every scale")]
    LuxemburgBracket,
    #[error("at least one trial is required")]
    NoTrials,
    #[error("malformed field file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dim: usize,
    /// Half-width `L` of the box.
    pub half_width: f64,
    /// Points per axis.
    pub n: usize,
    pub h: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, half_width: f64) -> Result<Self, FieldError> {
        if !(1..=3).contains(&dim) {
            return Err(FieldError::InvalidGrid(format!("dim {dim} outside 1..=3")));
        }
        if n < 8 {
            return Err(FieldError::InvalidGrid(format!("n = {n} < 8")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(FieldError::InvalidGrid(format!("half width {half_width}")));
        }
        match n.checked_pow(dim as u32) {
            Some(total) if total <= MAX_NODES => {}
            _ => return Err(FieldError::InvalidGrid(format!("{n}^{dim} nodes exceed the memory budget"))),
        }
        Ok(Grid { dim, half_width, n, h: 2.0 * half_width / (n - 1) as f64 })
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Measure of the box.
    pub fn volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.dim as i32)
    }

    /// Row-major multi-index, axis 0 fastest.
    pub fn multi_index(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for slot in idx.iter_mut().take(self.dim) {
            *slot = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().take(self.dim).rev().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow(axis as u32)
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.h
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let idx = self.multi_index(flat);
        (0..self.dim).map(|d| self.coord(idx[d])).collect()
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        let idx = self.multi_index(flat);
        (0..self.dim).any(|d| idx[d] == 0 || idx[d] == self.n - 1)
    }

    /// Trapezoidal weight of a node.
    pub fn weight(&self, flat: usize) -> f64 {
        let idx = self.multi_index(flat);
        (0..self.dim).fold(1.0, |w, d| {
            let end = idx[d] == 0 || idx[d] == self.n - 1;
            w * if end { 0.5 * self.h } else { self.h }
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    ZeroDirichlet,
    Periodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub boundary: Boundary,
}

impl DiscreteField {
    /// Wrap nodal values. Zero-Dirichlet fields get their boundary layer
    /// cleared.
    pub fn new(grid: Grid, values: Vec<f64>, boundary: Boundary) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::LengthMismatch { got: values.len(), want: grid.len() });
        }
        let mut f = DiscreteField { grid, values, boundary };
        f.enforce_boundary();
        Ok(f)
    }

    pub fn zeros(grid: Grid, boundary: Boundary) -> Self {
        DiscreteField { grid, values: vec![0.0; grid.len()], boundary }
    }

    pub fn from_fn(grid: Grid, boundary: Boundary, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        let mut out = DiscreteField { grid, values, boundary };
        out.enforce_boundary();
        out
    }

    pub fn enforce_boundary(&mut self) {
        if self.boundary == Boundary::ZeroDirichlet {
            for i in 0..self.values.len() {
                if self.grid.is_boundary(i) {
                    self.values[i] = 0.0;
                }
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DiscreteField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect(), boundary: self.boundary }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Share of `∫u²` carried by nodes in the outer tenth of the box.
    pub fn boundary_mass(&self) -> f64 {
        let g = &self.grid;
        let shell = 0.9 * g.half_width;
        let (mut outer, mut total) = (0.0, 0.0);
        for (i, v) in self.values.iter().enumerate() {
            let w = g.weight(i) * v * v;
            total += w;
            if g.point(i).iter().any(|x| x.abs() > shell) {
                outer += w;
            }
        }
        if total > 0.0 {
            outer / total
        } else {
            0.0
        }
    }
}

/// Trapezoidal quadrature of nodal values over the box.
pub fn integrate(grid: &Grid, values: &[f64]) -> f64 {
    assert_eq!(values.len(), grid.len());
    // fixed-size chunks keep the summation order independent of threading
    values
        .par_chunks(4096)
        .enumerate()
        .map(|(c, chunk)| {
            chunk.iter().enumerate().map(|(j, v)| grid.weight(c * 4096 + j) * v).sum::<f64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

pub fn integrate_field(u: &DiscreteField) -> f64 {
    integrate(&u.grid, &u.values)
}

/// Partial derivatives at every node, one vector per axis. Central
/// differences inside; periodic fields wrap, others use second-order
/// one-sided stencils on the boundary layer.
pub fn gradient(u: &DiscreteField) -> Vec<Vec<f64>> {
    let g = &u.grid;
    let n = g.n;
    (0..g.dim)
        .map(|axis| {
            let stride = g.stride(axis);
            (0..g.len())
                .map(|i| {
                    let k = g.multi_index(i)[axis];
                    let at = |j: usize| u.values[i - k * stride + j * stride];
                    if k > 0 && k < n - 1 {
                        (at(k + 1) - at(k - 1)) / (2.0 * g.h)
                    } else if u.boundary == Boundary::Periodic {
                        // node n-1 duplicates node 0
                        (at(1) - at(n - 2)) / (2.0 * g.h)
                    } else if k == 0 {
                        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * g.h)
                    } else {
                        (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * g.h)
                    }
                })
                .collect()
        })
        .collect()
}

/// `|∇u|` as a scalar field.
pub fn gradient_magnitude(u: &DiscreteField) -> DiscreteField {
    let grad = gradient(u);
    let values = (0..u.grid.len()).map(|i| grad.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt()).collect();
    DiscreteField { grid: u.grid, values, boundary: Boundary::Periodic }
}

/// `∫Φ(|u|/α)`.
pub fn modular(u: &DiscreteField, nf: &NFunction, alpha: f64) -> f64 {
    let vals: Vec<f64> = u.values.iter().map(|v| nf.eval(v / alpha)).collect();
    integrate(&u.grid, &vals)
}

/// Luxemburg norm `inf{α > 0 : ∫Φ(|u|/α) ≤ 1}`; 0 for the zero field.
pub fn luxemburg_norm(u: &DiscreteField, nf: &NFunction) -> Result<f64, FieldError> {
    let sup = u.sup_norm();
    if sup == 0.0 {
        return Ok(0.0);
    }
    let m = |ln_a: f64| modular(u, nf, ln_a.exp());
    let (mut lo, mut hi) = (sup.ln(), sup.ln());
    let mut tries = 0;
    while m(lo) <= 1.0 {
        lo -= 2.0;
        tries += 1;
        if tries > 400 || !m(lo).is_finite() {
            return Err(FieldError::LuxemburgBracket);
        }
    }
    while m(hi) > 1.0 {
        hi += 2.0;
    }
    // the modular is strictly decreasing in α
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if m(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// `‖u‖_Φ + ‖∇u‖_Φ`.
pub fn orlicz_sobolev_norm(u: &DiscreteField, nf: &NFunction) -> Result<f64, FieldError> {
    Ok(luxemburg_norm(u, nf)? + luxemburg_norm(&gradient_magnitude(u), nf)?)
}

pub fn lp_norm(u: &DiscreteField, p: f64) -> f64 {
    assert!(p >= 1.0, "p must be at least 1");
    // scaled by the sup so that large exponents neither underflow nor overflow
    let top = u.sup_norm();
    if top == 0.0 {
        return 0.0;
    }
    let vals: Vec<f64> = u.values.iter().map(|v| (v.abs() / top).powf(p)).collect();
    top * integrate(&u.grid, &vals).powf(1.0 / p)
}

/// Luxemburg norms of many fields in parallel.
pub fn luxemburg_norms(fields: &[DiscreteField], nf: &NFunction) -> Vec<Result<f64, FieldError>> {
    fields.par_iter().map(|u| luxemburg_norm(u, nf)).collect()
}

/// Random smooth field vanishing near the boundary: a sum of Gaussians
/// with random centres, widths and signed amplitudes.
pub fn random_bump_field(grid: Grid, rng: &mut ChaCha8Rng) -> DiscreteField {
    let l = grid.half_width;
    let count = rng.gen_range(1..=4);
    let bumps: Vec<(Vec<f64>, f64, f64)> = (0..count)
        .map(|_| {
            let centre = (0..grid.dim).map(|_| rng.gen_range(-0.4 * l..0.4 * l)).collect();
            let width = rng.gen_range(0.08 * l..0.25 * l);
            let amp = rng.gen_range(0.2..2.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            (centre, width, amp)
        })
        .collect();
    DiscreteField::from_fn(grid, Boundary::ZeroDirichlet, |x| {
        bumps
            .iter()
            .map(|(c, w, a)| {
                let r2: f64 = x.iter().zip(c).map(|(xi, ci)| (xi - ci).powi(2)).sum();
                a * (-r2 / (w * w)).exp()
            })
            .sum()
    })
}

/// Empirical embedding constant: the largest `‖u‖_p / ‖u‖_{1,Φ}` over
/// `trials` seeded random bump fields, inflated by 10%.
pub fn estimate_embedding_constant(
    nf: &NFunction,
    p: f64,
    trials: usize,
    grid: Grid,
    seed: u64,
) -> Result<f64, FieldError> {
    if trials == 0 {
        return Err(FieldError::NoTrials);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fields: Vec<DiscreteField> = (0..trials).map(|_| random_bump_field(grid, &mut rng)).collect();
    let ratios: Vec<Result<f64, FieldError>> = fields
        .par_iter()
        .map(|u| Ok(lp_norm(u, p) / orlicz_sobolev_norm(u, nf)?))
        .collect();
    let mut best: f64 = 0.0;
    for r in ratios {
        best = best.max(r?);
    }
    Ok(1.1 * best)
}

// ---------------------------------------------------------------------------
// Serialization

/// CSV with header `index,x1[,x2[,x3]],value`.
pub fn write_csv<W: Write>(u: &DiscreteField, mut out: W) -> io::Result<()> {
    let g = &u.grid;
    let coords: Vec<String> = (1..=g.dim).map(|d| format!("x{d}")).collect();
    writeln!(out, "index,{},value", coords.join(","))?;
    for (i, v) in u.values.iter().enumerate() {
        let p: Vec<String> = g.point(i).iter().map(|c| c.to_string()).collect();
        writeln!(out, "{i},{},{v}", p.join(","))?;
    }
    Ok(())
}

/// Little-endian `dim: u64, n: u64, L: f64`, then the values as `f64`.
pub fn write_binary<W: Write>(u: &DiscreteField, mut out: W) -> io::Result<()> {
    out.write_all(&(u.grid.dim as u64).to_le_bytes())?;
    out.write_all(&(u.grid.n as u64).to_le_bytes())?;
    out.write_all(&u.grid.half_width.to_le_bytes())?;
    for v in &u.values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R, boundary: Boundary) -> Result<DiscreteField, FieldError> {
    let mut word = [0u8; 8];
    let mut next = |input: &mut R| -> Result<[u8; 8], FieldError> {
        input.read_exact(&mut word).map_err(|e| FieldError::Format(e.to_string()))?;
        Ok(word)
    };
    let dim = u64::from_le_bytes(next(&mut input)?) as usize;
    let n = u64::from_le_bytes(next(&mut input)?) as usize;
    let l = f64::from_le_bytes(next(&mut input)?);
    let grid = Grid::new(dim, n, l).map_err(|e| FieldError::Format(e.to_string()))?;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        values.push(f64::from_le_bytes(next(&mut input)?));
    }
    Ok(DiscreteField { grid, values, boundary })
}

/// Exact inverse of `-Δ_h + I` (five-point Laplacian) with zero Dirichlet
/// data, diagonalised by the type-I sine transform along every axis.
#[derive(Debug, Clone)]
pub struct DirichletHelmholtz {
    grid: Grid,
    /// Interior points per axis.
    m: usize,
    /// `sines[k*m + j] = sin(π(j+1)(k+1)/(m+1))`, symmetric in `j, k`.
    sines: Vec<f64>,
    /// One-axis eigenvalues of `-Δ_h`.
    eig: Vec<f64>,
}

impl DirichletHelmholtz {
    pub fn new(grid: Grid) -> Self {
        let m = grid.n.saturating_sub(2);
        let denom = (m + 1) as f64;
        let sines = (0..m * m)
            .map(|i| {
                let (k, j) = (i / m.max(1), i % m.max(1));
                (std::f64::consts::PI * ((j + 1) * (k + 1)) as f64 / denom).sin()
            })
            .collect();
        let eig = (0..m)
            .map(|k| {
                let s = (std::f64::consts::PI * (k + 1) as f64 / (2.0 * denom)).sin();
                4.0 * s * s / (grid.h * grid.h)
            })
            .collect();
        Self { grid, m, sines, eig }
    }

    fn transform_axis(&self, data: &mut [f64], axis: usize) {
        let m = self.m;
        let stride = m.pow(axis as u32);
        let mut line = vec![0.0; m];
        for start in 0..data.len() {
            if !(start / stride).is_multiple_of(m) {
                continue;
            }
            for (j, slot) in line.iter_mut().enumerate() {
                *slot = data[start + j * stride];
            }
            for k in 0..m {
                let row = &self.sines[k * m..(k + 1) * m];
                data[start + k * stride] = row.iter().zip(&line).map(|(a, b)| a * b).sum();
            }
        }
    }

    /// Solves on the interior; boundary entries of the result are zero and
    /// boundary entries of `rhs` are ignored.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (m, dim, n) = (self.m, self.grid.dim, self.grid.n);
        let mut out = vec![0.0; rhs.len()];
        if m == 0 {
            return out;
        }
        let interior = m.pow(dim as u32);
        let to_flat = |c: usize| {
            let mut rest = c;
            let mut flat = 0;
            let mut stride = 1;
            for _ in 0..dim {
                flat += (rest % m + 1) * stride;
                rest /= m;
                stride *= n;
            }
            flat
        };
        let mut data: Vec<f64> = (0..interior).map(|c| rhs[to_flat(c)]).collect();
        for axis in 0..dim {
            self.transform_axis(&mut data, axis);
        }
        let norm = (2.0 / (m + 1) as f64).powi(dim as i32);
        for (c, v) in data.iter_mut().enumerate() {
            let mut rest = c;
            let mut lam = 1.0;
            for _ in 0..dim {
                lam += self.eig[rest % m];
                rest /= m;
            }
            *v *= norm / lam;
        }
        for axis in 0..dim {
            self.transform_axis(&mut data, axis);
        }
        for (c, v) in data.into_iter().enumerate() {
            out[to_flat(c)] = v;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nfunction::{estimate_indices, zeta_envelope, Zeta};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn line(n: usize) -> Grid {
        Grid::new(1, n, 1.0).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(4, 16, 1.0).is_err());
        assert!(Grid::new(2, 7, 1.0).is_err());
        assert!(Grid::new(3, 1000, 1.0).is_err());
        let g = Grid::new(3, 9, 2.0).unwrap();
        assert_eq!(g.h, 0.5);
        for i in [0, 17, 300, g.len() - 1] {
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
        }
    }

    #[test]
    fn quadrature_examples() {
        let g = Grid::new(2, 33, 1.0).unwrap();
        let one = vec![1.0; g.len()];
        assert!((integrate(&g, &one) - 4.0).abs() < 1e-12);
        let g1 = line(257);
        let s2 = DiscreteField::from_fn(g1, Boundary::Periodic, |x| (PI * x[0]).sin().powi(2));
        assert!((integrate_field(&s2) - 1.0).abs() < 1e-6);
        let odd = DiscreteField::from_fn(g, Boundary::Periodic, |x| x[0].powi(3) * (1.0 + x[1] * x[1]));
        assert!(integrate_field(&odd).abs() < 1e-12);
    }

    #[test]
    fn gradient_examples() {
        let g = line(33);
        let lin = DiscreteField::from_fn(g, Boundary::Periodic, |x| x[0]);
        let d = &gradient(&lin)[0];
        for v in &d[1..32] {
            assert!((v - 1.0).abs() < 1e-13);
        }
        let c = DiscreteField::from_fn(Grid::new(2, 16, 1.0).unwrap(), Boundary::Periodic, |_| 3.0);
        assert!(gradient(&c).iter().flatten().all(|v| *v == 0.0));
        let err = |n: usize| {
            let g = line(n);
            let u = DiscreteField::from_fn(g, Boundary::ZeroDirichlet, |x| (PI * x[0]).sin());
            gradient(&u)[0]
                .iter()
                .enumerate()
                .map(|(i, d)| (d - PI * (PI * g.coord(i)).cos()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(129), err(257));
        assert!(e2 <= 1e-3);
        assert_relative_eq!(e1 / e2, 4.0, max_relative = 0.05);
    }

    #[test]
    fn quadrature_second_order() {
        let err = |n: usize| {
            let u = DiscreteField::from_fn(line(n), Boundary::Periodic, |x| (1.3 * x[0]).exp());
            (integrate_field(&u) - ((1.3f64).exp() - (-1.3f64).exp()) / 1.3).abs()
        };
        assert_relative_eq!(err(65) / err(129), 4.0, max_relative = 0.02);
    }

    #[test]
    fn norms_examples() {
        let g = line(257);
        let u = DiscreteField::from_fn(g, Boundary::ZeroDirichlet, |x| (PI * x[0]).sin());
        assert!((lp_norm(&u, 2.0) - 1.0).abs() < 1e-6);
        let quad = NFunction::power(2.0);
        // ∫(u/α)²/2 = 1 → α = (∫u²/2)^{1/2}
        let want = 0.5f64.sqrt() + (PI * PI / 2.0).sqrt();
        assert!((orlicz_sobolev_norm(&u, &quad).unwrap() - want).abs() < 1e-3);
        let z = DiscreteField::zeros(g, Boundary::ZeroDirichlet);
        assert_eq!(luxemburg_norm(&z, &quad).unwrap(), 0.0);
        assert_eq!(orlicz_sobolev_norm(&z, &quad).unwrap(), 0.0);
        // plateau of height 1 and measure 4
        let gp = Grid::new(2, 16, 1.0).unwrap();
        let one = DiscreteField::from_fn(gp, Boundary::Periodic, |_| 1.0);
        assert_relative_eq!(lp_norm(&one, 3.0), 4f64.powf(1.0 / 3.0), max_relative = 1e-14);
    }

    #[test]
    fn constant_on_unit_box() {
        let g = Grid::new(2, 16, 0.5).unwrap();
        let c = 0.7;
        let u = DiscreteField::from_fn(g, Boundary::Periodic, |_| c);
        let nf = NFunction::power_sum(vec![(1.0, 2.0), (0.5, 3.5)]);
        let want = c / nf.inverse(1.0);
        assert_relative_eq!(luxemburg_norm(&u, &nf).unwrap(), want, max_relative = 1e-10);
        assert_relative_eq!(orlicz_sobolev_norm(&u, &nf).unwrap(), want, max_relative = 1e-10);
    }

    #[test]
    fn lp_monotone_towards_sup() {
        let g = Grid::new(1, 65, 0.5).unwrap();
        let u = DiscreteField::from_fn(g, Boundary::ZeroDirichlet, |x| (PI * x[0]).cos());
        let ps = [1.0, 2.0, 4.0, 8.0, 16.0, 64.0];
        let norms: Vec<f64> = ps.iter().map(|&p| lp_norm(&u, p)).collect();
        assert!(norms.windows(2).all(|w| w[1] >= w[0]));
        assert!(norms[5] <= u.sup_norm());
    }

    #[test]
    fn luxemburg_matches_lp_for_powers_and_modular_is_one() {
        let g = Grid::new(2, 64, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in [1.5, 2.0, 3.7] {
            let nf = NFunction::power_sum(vec![(1.0, p)]);
            for _ in 0..5 {
                let u = random_bump_field(g, &mut rng);
                let a = luxemburg_norm(&u, &nf).unwrap();
                assert_relative_eq!(a, lp_norm(&u, p), max_relative = 1e-10);
                assert!((modular(&u, &nf, a) - 1.0).abs() < 1e-8);
                assert_relative_eq!(luxemburg_norm(&u.scaled(-2.5), &nf).unwrap(), 2.5 * a, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn sandwich_on_discrete_fields() {
        let g = Grid::new(2, 32, 2.0).unwrap();
        let nf = NFunction::power_sum(vec![(1.0, 4.0), (1.0, 5.0)]);
        let ip = estimate_indices(&nf, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let u = random_bump_field(g, &mut rng).scaled(rng.gen_range(0.1..3.0));
            let a = luxemburg_norm(&u, &nf).unwrap();
            let m = modular(&u, &nf, 1.0);
            assert!(zeta_envelope(&ip, a, Zeta::Z0) <= m * (1.0 + 1e-9) + 1e-9);
            assert!(m <= zeta_envelope(&ip, a, Zeta::Z1) * (1.0 + 1e-9) + 1e-9);
        }
    }

    #[test]
    fn embedding_estimates() {
        let g = Grid::new(2, 32, 2.0).unwrap();
        assert_eq!(
            estimate_embedding_constant(&NFunction::power(2.0), 2.0, 0, g, 1).unwrap_err(),
            FieldError::NoTrials
        );
        // ‖u‖₂ ≤ ‖u‖₂ + ‖∇u‖₂ for Φ = t², so the raw ratio is at most 1
        let c = estimate_embedding_constant(&NFunction::power_sum(vec![(1.0, 2.0)]), 2.0, 16, g, 1).unwrap();
        assert!(c <= 1.1 + 1e-12);
        let c = estimate_embedding_constant(&NFunction::power_sum(vec![(1.0, 4.0), (1.0, 5.0)]), 9.0, 8, g, 1).unwrap();
        assert!(c > 0.0 && c.is_finite());
    }

    #[test]
    fn binary_and_csv_roundtrip() {
        let g = Grid::new(2, 9, 1.5).unwrap();
        let u = DiscreteField::from_fn(g, Boundary::ZeroDirichlet, |x| x[0] - 2.0 * x[1]);
        let mut buf = Vec::new();
        write_binary(&u, &mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 8 * 81);
        assert_eq!(read_binary(&buf[..], Boundary::ZeroDirichlet).unwrap(), u);
        assert!(read_binary(&buf[..30], Boundary::ZeroDirichlet).is_err());
        let mut csv = Vec::new();
        write_csv(&u, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next(), Some("index,x1,x2,value"));
        assert_eq!(text.lines().count(), 82);
    }

    #[test]
    fn dirichlet_layer_vanishes() {
        let g = Grid::new(2, 40, 1.0).unwrap();
        let u = DiscreteField::from_fn(g, Boundary::ZeroDirichlet, |_| 1.0);
        for i in 0..g.len() {
            assert_eq!(u.values[i] == 0.0, g.is_boundary(i));
        }
        assert!(u.boundary_mass() > 0.0);
    }

    #[test]
    fn helmholtz_solve_inverts_stencil() {
        for dim in 1..=3 {
            let grid = Grid::new(dim, 9, 2.0).unwrap();
            let solver = DirichletHelmholtz::new(grid);
            let mut rng = ChaCha8Rng::seed_from_u64(dim as u64);
            let rhs: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = solver.solve(&rhs);
            for flat in 0..grid.len() {
                if grid.is_boundary(flat) {
                    assert_eq!(g[flat], 0.0);
                    continue;
                }
                let mut lap = 0.0;
                for axis in 0..dim {
                    let st = grid.stride(axis);
                    lap += (2.0 * g[flat] - g[flat - st] - g[flat + st]) / (grid.h * grid.h);
                }
                assert_relative_eq!(lap + g[flat], rhs[flat], epsilon = 1e-10);
            }
        }
    }
}
