//! The modified energy `J̃_λ` on nodal fields and its discrete
//! Euler–Lagrange residual.
//!
//! The gradient term is integrated exactly for the piecewise-linear
//! interpolant on the Kuhn triangulation of the grid (every cube split into
//! `dim!` simplices along a common diagonal). Lower-order terms use the
//! trapezoidal node weights. The residual at node `i` is `∂E/∂u_i / w_i`, so
//! its quadrature against any direction is the exact directional
//! derivative of the discrete energy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{Env, Expr, ExprError};
use crate::field::{Boundary, DirichletHelmholtz, DiscreteField, Grid};
use crate::nfunction::{build_from_kernel, GrowthKernel, NFunction, NFunctionError};
use crate::nonlinearity::ModifiedNonlinearity;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("fields do not live on the problem grid")]
    GridMismatch,
    #[error("expected {want} components, got {got}")]
    ComponentMismatch { want: usize, got: usize },
    #[error("potential {index} has infimum {inf} over the period cell; it must be positive")]
    NonPositivePotential { index: usize, inf: f64 },
    #[error("potential {index} is not 1-periodic near x = {at:?}")]
    NotPeriodic { index: usize, at: Vec<f64> },
    #[error("nonlinearity uses {want} spatial coordinates, grid has {have}")]
    SpatialDimension { want: usize, have: usize },
    #[error("lambda must be nonnegative, got {0}")]
    NegativeLambda(f64),
    #[error(transparent)]
    Kernel(#[from] NFunctionError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// `J̃_λ` for one (scalar) or two (system) components on a grid.
#[derive(Debug, Clone)]
pub struct SystemProblem {
    pub kernels: Vec<GrowthKernel>,
    pub nfuns: Vec<NFunction>,
    pub potentials: Vec<Expr>,
    /// Sampled `inf V_i` over the period cell.
    pub potential_inf: Vec<f64>,
    pub modified: ModifiedNonlinearity,
    pub lambda: f64,
    pub grid: Grid,
    potential_nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
    points: Option<Vec<Vec<f64>>>,
    simplices: Vec<[usize; 4]>,
    helmholtz: DirichletHelmholtz,
}

/// Permutations of `0..dim` in lexicographic order.
fn permutations(dim: usize) -> Vec<Vec<usize>> {
    match dim {
        1 => vec![vec![0]],
        _ => {
            let mut out = Vec::new();
            for p in permutations(dim - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, dim - 1);
                    out.push(q);
                }
            }
            out.sort();
            out
        }
    }
}

/// Vertex lists of the Kuhn simplices, `dim + 1` flat indices each.
fn kuhn_simplices(grid: &Grid) -> Vec<[usize; 4]> {
    let perms = permutations(grid.dim);
    let cells_per_axis = grid.n - 1;
    let cells = cells_per_axis.pow(grid.dim as u32);
    let mut out = Vec::with_capacity(cells * perms.len());
    for c in 0..cells {
        let mut corner = [0usize; 3];
        let mut rest = c;
        for slot in corner.iter_mut().take(grid.dim) {
            *slot = rest % cells_per_axis;
            rest /= cells_per_axis;
        }
        let base = grid.flat_index(&corner);
        for p in &perms {
            let mut verts = [0usize; 4];
            verts[0] = base;
            for k in 1..=grid.dim {
                verts[k] = verts[k - 1] + grid.stride(p[k - 1]);
            }
            out.push(verts);
        }
    }
    out
}

fn axis_of_step(grid: &Grid, from: usize, to: usize) -> usize {
    let d = to - from;
    (0..grid.dim).find(|&a| grid.stride(a) == d).expect("Kuhn edge is axis aligned")
}

impl SystemProblem {
    pub fn new(
        kernels: Vec<GrowthKernel>,
        potentials: Vec<Expr>,
        modified: ModifiedNonlinearity,
        lambda: f64,
        grid: Grid,
    ) -> Result<Self, EnergyError> {
        let comps = modified.components();
        if kernels.len() != comps || potentials.len() != comps {
            return Err(EnergyError::ComponentMismatch { want: comps, got: kernels.len().min(potentials.len()) });
        }
        if !(lambda >= 0.0) {
            return Err(EnergyError::NegativeLambda(lambda));
        }
        if modified.base.x_dim > grid.dim {
            return Err(EnergyError::SpatialDimension { want: modified.base.x_dim, have: grid.dim });
        }
        let nfuns = kernels.iter().map(build_from_kernel).collect::<Result<Vec<_>, _>>()?;
        let mut potential_inf = Vec::new();
        for (index, v) in potentials.iter().enumerate() {
            potential_inf.push(check_potential(index, v, grid.dim)?);
        }
        let potential_nodes = potentials
            .iter()
            .map(|v| {
                (0..grid.len())
                    .map(|i| v.eval(&Env { t: None, s: None, x: &grid.point(i) }))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let points = (modified.base.x_dim > 0).then(|| (0..grid.len()).map(|i| grid.point(i)).collect());
        Ok(SystemProblem {
            kernels,
            nfuns,
            potentials,
            potential_inf,
            modified,
            lambda,
            grid,
            potential_nodes,
            weights: grid.weights(),
            points,
            simplices: kuhn_simplices(&grid),
            helmholtz: DirichletHelmholtz::new(grid),
        })
    }

    /// Same problem at another `λ`.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        SystemProblem { lambda, ..self.clone() }
    }

    pub fn components(&self) -> usize {
        self.modified.components()
    }

    /// Length of the flat state `[u; v]`.
    pub fn state_len(&self) -> usize {
        self.components() * self.grid.len()
    }

    /// Applies `(-Δ_h + I)^{-1}` to each component of a flat state vector.
    pub fn sobolev_gradient(&self, residual: &[f64]) -> Vec<f64> {
        residual.chunks(self.grid.len()).flat_map(|c| self.helmholtz.solve(c)).collect()
    }

    /// Quadrature weight of each flat state entry.
    pub fn state_weights(&self) -> Vec<f64> {
        self.weights.repeat(self.components())
    }

    pub fn is_free(&self, flat: usize) -> bool {
        !self.grid.is_boundary(flat % self.grid.len())
    }

    pub fn state_from_fields(&self, fields: &[&DiscreteField]) -> Result<Vec<f64>, EnergyError> {
        if fields.len() != self.components() {
            return Err(EnergyError::ComponentMismatch { want: self.components(), got: fields.len() });
        }
        let mut out = Vec::with_capacity(self.state_len());
        for f in fields {
            if f.grid != self.grid {
                return Err(EnergyError::GridMismatch);
            }
            out.extend(f.values.iter().enumerate().map(|(i, v)| if self.grid.is_boundary(i) { 0.0 } else { *v }));
        }
        Ok(out)
    }

    pub fn fields_from_state(&self, state: &[f64]) -> Vec<DiscreteField> {
        state
            .chunks(self.grid.len())
            .map(|c| DiscreteField { grid: self.grid, values: c.to_vec(), boundary: Boundary::ZeroDirichlet })
            .collect()
    }

    fn point(&self, i: usize) -> &[f64] {
        self.points.as_ref().map_or(&[], |p| &p[i])
    }

    fn simplex_volume(&self) -> f64 {
        let fact: f64 = (1..=self.grid.dim).map(|k| k as f64).product();
        self.grid.h.powi(self.grid.dim as i32) / fact
    }

    fn simplex_gradient(&self, comp: &[f64], verts: &[usize; 4]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for k in 1..=self.grid.dim {
            let axis = axis_of_step(&self.grid, verts[k - 1], verts[k]);
            g[axis] = (comp[verts[k]] - comp[verts[k - 1]]) / self.grid.h;
        }
        g
    }

    fn chunks(&self) -> usize {
        4096
    }

    /// Discrete `J̃_λ` of a flat state.
    pub fn energy_of_state(&self, state: &[f64]) -> f64 {
        let len = self.grid.len();
        let vol = self.simplex_volume();
        let mut total = 0.0;
        for (c, nf) in self.nfuns.iter().enumerate() {
            let comp = &state[c * len..(c + 1) * len];
            let parts: Vec<f64> = self
                .simplices
                .par_chunks(self.chunks())
                .map(|chunk| {
                    chunk
                        .iter()
                        .map(|verts| {
                            let g = self.simplex_gradient(comp, verts);
                            nf.eval((g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt())
                        })
                        .sum::<f64>()
                })
                .collect();
            total += vol * parts.iter().sum::<f64>();
        }
        let idx: Vec<usize> = (0..len).collect();
        let parts: Vec<f64> = idx
            .par_chunks(self.chunks())
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&i| {
                        let w = self.weights[i];
                        let u = state[i];
                        let v = if self.components() == 2 { state[len + i] } else { 0.0 };
                        let mut e = self.potential_nodes[0][i] * self.nfuns[0].eval(u);
                        if self.components() == 2 {
                            e += self.potential_nodes[1][i] * self.nfuns[1].eval(v);
                        }
                        if self.lambda != 0.0 {
                            e -= self.lambda * self.modified.eval(self.point(i), u, v).value;
                        }
                        w * e
                    })
                    .sum::<f64>()
            })
            .collect();
        total + parts.iter().sum::<f64>()
    }

    /// `∂E/∂state_i`; zero on the Dirichlet layer.
    pub fn raw_gradient(&self, state: &[f64]) -> Vec<f64> {
        let len = self.grid.len();
        let dim = self.grid.dim;
        let scale = self.simplex_volume() / self.grid.h;
        let mut out = vec![0.0; state.len()];
        for (c, nf) in self.nfuns.iter().enumerate() {
            let comp = &state[c * len..(c + 1) * len];
            // per simplex: φ(|g|)g, then gathered per vertex
            let fluxes: Vec<[f64; 3]> = self
                .simplices
                .par_iter()
                .map(|verts| {
                    let g = self.simplex_gradient(comp, verts);
                    let a = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                    // Φ'(a)/a rather than a guarded φ: sub-quadratic fluxes stay visible at tiny slopes
                    let phi = if a > 0.0 { nf.deriv(a) / a } else { 0.0 };
                    [phi * g[0], phi * g[1], phi * g[2]]
                })
                .collect();
            let mut acc = vec![0.0; len];
            for (verts, q) in self.simplices.iter().zip(&fluxes) {
                for k in 0..=dim {
                    let mut d = 0.0;
                    if k >= 1 {
                        d += q[axis_of_step(&self.grid, verts[k - 1], verts[k])];
                    }
                    if k < dim {
                        d -= q[axis_of_step(&self.grid, verts[k], verts[k + 1])];
                    }
                    acc[verts[k]] += scale * d;
                }
            }
            out[c * len..(c + 1) * len].copy_from_slice(&acc);
        }
        let lower: Vec<(f64, f64)> = (0..len)
            .into_par_iter()
            .map(|i| {
                let u = state[i];
                let v = if self.components() == 2 { state[len + i] } else { 0.0 };
                let mut du = self.potential_nodes[0][i] * self.nfuns[0].deriv(u);
                let mut dv = if self.components() == 2 { self.potential_nodes[1][i] * self.nfuns[1].deriv(v) } else { 0.0 };
                if self.lambda != 0.0 {
                    let f = self.modified.eval(self.point(i), u, v);
                    du -= self.lambda * f.d_t;
                    dv -= self.lambda * f.d_s;
                }
                (self.weights[i] * du, self.weights[i] * dv)
            })
            .collect();
        for (i, (du, dv)) in lower.into_iter().enumerate() {
            if self.grid.is_boundary(i) {
                out[i] = 0.0;
                if self.components() == 2 {
                    out[len + i] = 0.0;
                }
                continue;
            }
            out[i] += du;
            if self.components() == 2 {
                out[len + i] += dv;
            }
        }
        out
    }

    /// Nodal residual `∂E/∂state_i / w_i`.
    pub fn residual_of_state(&self, state: &[f64]) -> Vec<f64> {
        let len = self.grid.len();
        let mut r = self.raw_gradient(state);
        for (j, v) in r.iter_mut().enumerate() {
            *v /= self.weights[j % len];
        }
        r
    }

    /// Reference magnitude for the residual: the larger of `sup|λF̃ partials|`
    /// and `sup|Vφ(|u|)u|` over the nodes.
    pub fn residual_scale(&self, state: &[f64]) -> f64 {
        let len = self.grid.len();
        let mut scale: f64 = 1e-300;
        for i in 0..len {
            let u = state[i];
            let v = if self.components() == 2 { state[len + i] } else { 0.0 };
            scale = scale.max((self.potential_nodes[0][i] * self.nfuns[0].deriv(u)).abs());
            if self.components() == 2 {
                scale = scale.max((self.potential_nodes[1][i] * self.nfuns[1].deriv(v)).abs());
            }
            if self.lambda != 0.0 && (u != 0.0 || v != 0.0) {
                let f = self.modified.eval(self.point(i), u, v);
                scale = scale.max((self.lambda * f.d_t).abs()).max((self.lambda * f.d_s).abs());
            }
        }
        scale
    }

    /// Largest `(u² + v²)^{1/2}` over the nodes.
    pub fn state_sup_norm(&self, state: &[f64]) -> f64 {
        let len = self.grid.len();
        (0..len)
            .map(|i| {
                let v = if self.components() == 2 { state[len + i] } else { 0.0 };
                (state[i] * state[i] + v * v).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Sampled infimum over the period cell, with a periodicity probe.
fn check_potential(index: usize, v: &Expr, dim: usize) -> Result<f64, EnergyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9071 + index as u64);
    let mut inf = f64::INFINITY;
    for _ in 0..4096 {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
        let val = v.eval(&Env { t: None, s: None, x: &x })?;
        inf = inf.min(val);
        let shifted: Vec<f64> = x.iter().map(|c| c + 1.0).collect();
        let val2 = v.eval(&Env { t: None, s: None, x: &shifted })?;
        if (val2 - val).abs() > 1e-9 * val.abs().max(1.0) {
            return Err(EnergyError::NotPeriodic { index, at: x });
        }
    }
    if !(inf > 0.0) {
        return Err(EnergyError::NonPositivePotential { index, inf });
    }
    Ok(inf)
}

fn check_fields(p: &SystemProblem, fields: &[&DiscreteField]) -> Result<Vec<f64>, EnergyError> {
    p.state_from_fields(fields)
}

/// `J̃_λ(u, v)`. For a scalar problem pass `v = None`.
pub fn evaluate_energy(p: &SystemProblem, u: &DiscreteField, v: Option<&DiscreteField>) -> Result<f64, EnergyError> {
    let fields: Vec<&DiscreteField> = std::iter::once(u).chain(v).collect();
    Ok(p.energy_of_state(&check_fields(p, &fields)?))
}

/// Nodal residual fields, one per component.
pub fn residual(p: &SystemProblem, u: &DiscreteField, v: Option<&DiscreteField>) -> Result<Vec<DiscreteField>, EnergyError> {
    let fields: Vec<&DiscreteField> = std::iter::once(u).chain(v).collect();
    let r = p.residual_of_state(&check_fields(p, &fields)?);
    Ok(p.fields_from_state(&r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutoff::{CutoffFamily, CutoffKind};
    use crate::expr::{parse_with, Arity};
    use crate::nonlinearity::{build_modified, build_scalar_modified, HypothesisConstants, NonlinearitySpec};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn consts(k: f64, r: f64, radius: f64) -> HypothesisConstants {
        HypothesisConstants {
            k: [k, k],
            lower: [1.0, 1.0],
            r: [r, r],
            grad: [1.0, 1.0],
            window: [2.0, 2.0],
            mu: [k, k],
            radius,
            tail: Some([1.0, 1.0]),
        }
    }

    fn scalar_problem(kernel: GrowthKernel, f: &str, k: f64, delta: f64, lambda: f64, grid: Grid) -> SystemProblem {
        let spec = NonlinearitySpec::parse(f, 1, 0, consts(k, k, delta)).unwrap().with_symbolic_partials();
        let m = build_scalar_modified(&spec, delta).unwrap();
        let one = parse_with("1", Arity::new(false, false, grid.dim)).unwrap();
        SystemProblem::new(vec![kernel], vec![one], m, lambda, grid).unwrap()
    }

    fn system_problem(kernel: GrowthKernel, lambda: f64, grid: Grid) -> SystemProblem {
        let spec = NonlinearitySpec::parse("|t|^3+|s|^3+0.5*t^2*s^2", 2, 0, consts(3.0, 3.5, 4.0))
            .unwrap()
            .with_symbolic_partials();
        let m = build_modified(&spec, CutoffFamily::new(CutoffKind::SineSq, 4.0)).unwrap();
        let v1 = parse_with("1+0.5*sum_cos2(x,2)", Arity::new(false, false, 2)).unwrap();
        let v2 = parse_with("2-sum_sin2(x,2)*0.25", Arity::new(false, false, 2)).unwrap();
        SystemProblem::new(vec![kernel.clone(), kernel], vec![v1, v2], m, lambda, grid).unwrap()
    }

    fn bump(grid: Grid, amp: f64) -> DiscreteField {
        DiscreteField::from_fn(grid, Boundary::ZeroDirichlet, |x| {
            let r2: f64 = x.iter().map(|c| c * c).sum::<f64>() / 4.0;
            if r2 < 1.0 {
                amp * (1.0 - 1.0 / (1.0 - r2)).exp()
            } else {
                0.0
            }
        })
    }

    #[test]
    fn kuhn_permutations() {
        assert_eq!(permutations(3).len(), 6);
        let g = Grid::new(3, 8, 1.0).unwrap();
        assert_eq!(kuhn_simplices(&g).len(), 7 * 7 * 7 * 6);
    }

    #[test]
    fn zero_state_is_critical() {
        let g = Grid::new(2, 16, 2.0).unwrap();
        let p = system_problem(GrowthKernel::power(1.5), 3.0, g);
        let z = DiscreteField::zeros(g, Boundary::ZeroDirichlet);
        assert_eq!(evaluate_energy(&p, &z, Some(&z)).unwrap(), 0.0);
        let r = residual(&p, &z, Some(&z)).unwrap();
        assert!(r.iter().all(|f| f.is_zero()));
    }

    #[test]
    fn quadratic_energy_matches_edge_sum_oracle() {
        let g = Grid::new(2, 24, 3.0).unwrap();
        // Φ = t²/2, V ≡ 1, F̃ = |t|⁴/4 (cut-off far outside the range)
        let p = scalar_problem(GrowthKernel::power(2.0), "|t|^4/4", 4.0, 100.0, 2.0, g);
        let u = bump(g, 1.3);
        let e = evaluate_energy(&p, &u, None).unwrap();
        // independent oracle: edge differences plus trapezoidal lower-order terms
        let n = g.n;
        let at = |i: usize, j: usize| u.values[i + n * j];
        let mut grad = 0.0;
        for j in 0..n {
            for i in 0..n - 1 {
                grad += 0.5 * (at(i + 1, j) - at(i, j)).powi(2);
                grad += 0.5 * (at(j, i + 1) - at(j, i)).powi(2);
            }
        }
        let mut lower = 0.0;
        for j in 0..n {
            for i in 0..n {
                let w = g.weight(i + n * j);
                let v = at(i, j);
                lower += w * (0.5 * v * v - 2.0 * v.powi(4) / 4.0);
            }
        }
        assert_relative_eq!(e, grad + lower, max_relative = 1e-8);
    }

    #[test]
    fn small_states_have_positive_energy() {
        let g = Grid::new(2, 32, 4.0).unwrap();
        let p = system_problem(GrowthKernel::power(1.5), 50.0, g);
        let u = bump(g, 1.0);
        let mut eps = 0.5;
        for _ in 0..12 {
            let uu = u.scaled(eps);
            let e = evaluate_energy(&p, &uu, Some(&uu)).unwrap();
            if eps < 1e-2 {
                assert!(e > 0.0, "eps={eps} e={e}");
            }
            eps *= 0.5;
        }
    }

    #[test]
    fn laplacian_in_linear_case() {
        let err = |n: usize| {
            let g = Grid::new(1, n, 1.0).unwrap();
            let p = scalar_problem(GrowthKernel::power(2.0), "|t|^4/4", 4.0, 100.0, 0.0, g);
            let u = DiscreteField::from_fn(g, Boundary::ZeroDirichlet, |x| (PI * x[0]).sin());
            let r = &residual(&p, &u, None).unwrap()[0];
            (1..n - 1)
                .map(|i| (r.values[i] - (PI * PI + 1.0) * (PI * g.coord(i)).sin()).abs())
                .fold(0.0, f64::max)
        };
        let (a, b) = (err(65), err(129));
        assert!(b < 2e-3);
        assert_relative_eq!(a / b, 4.0, max_relative = 0.05);
    }

    fn random_state(p: &SystemProblem, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let g = p.grid;
        let make = |rng: &mut ChaCha8Rng| {
            let f = crate::field::random_bump_field(g, rng);
            f.scaled(rng.gen_range(0.2..1.5))
        };
        let mut x = Vec::new();
        let mut d = Vec::new();
        for _ in 0..p.components() {
            x.extend(make(rng).values);
            d.extend(make(rng).values);
        }
        (x, d)
    }

    fn gateaux_gap(p: &SystemProblem, x: &[f64], d: &[f64]) -> f64 {
        let eps = 1e-5;
        let r = p.residual_of_state(x);
        let w = p.state_weights();
        let pairing: f64 = r.iter().zip(d).zip(&w).map(|((a, b), c)| a * b * c).sum();
        let plus: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + eps * b).collect();
        let minus: Vec<f64> = x.iter().zip(d).map(|(a, b)| a - eps * b).collect();
        let fd = (p.energy_of_state(&plus) - p.energy_of_state(&minus)) / (2.0 * eps);
        (pairing - fd).abs() / fd.abs().max(pairing.abs()).max(1e-300)
    }

    #[test]
    fn gateaux_consistency() {
        let g = Grid::new(2, 20, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let problems = [
            system_problem(GrowthKernel::power(2.0), 4.0, g),
            system_problem(GrowthKernel::example_polynomial(), 0.7, g),
            scalar_problem(GrowthKernel::example_logarithmic(), "|t|^3", 3.0, 1.0, 10.0, g),
        ];
        for p in &problems {
            for _ in 0..4 {
                let (x, d) = random_state(p, &mut rng);
                let gap = gateaux_gap(p, &x, &d);
                assert!(gap < 1e-5, "gap {gap}");
            }
        }
    }

    /// `|t|^{3/2}` has no bounded second derivative at 0, so the symmetric
    /// difference is only accurate to `O(√ε)` near vanishing nodes.
    #[test]
    fn gateaux_consistency_sub_quadratic() {
        let g = Grid::new(2, 20, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = scalar_problem(GrowthKernel::power(1.5), "|t|^2.2", 2.2, 1.0, 10.0, g);
        for _ in 0..4 {
            let (x, d) = random_state(&p, &mut rng);
            assert!(gateaux_gap(&p, &x, &d) < 5e-3);
        }
    }

    #[test]
    fn descent_along_negative_residual() {
        let g = Grid::new(2, 20, 3.0).unwrap();
        let p = system_problem(GrowthKernel::power(1.5), 4.0, g);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let (x, _) = random_state(&p, &mut rng);
            let r = p.residual_of_state(&x);
            let step: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a - 1e-4 * b).collect();
            assert!(p.energy_of_state(&step) < p.energy_of_state(&x));
        }
    }

    #[test]
    fn nonnegative_without_lambda() {
        let g = Grid::new(2, 16, 3.0).unwrap();
        let p = system_problem(GrowthKernel::power(1.5), 0.0, g);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let (x, _) = random_state(&p, &mut rng);
            assert!(p.energy_of_state(&x) > 0.0);
        }
        assert_eq!(p.energy_of_state(&vec![0.0; p.state_len()]), 0.0);
    }

    #[test]
    fn rejects_bad_potentials() {
        let g = Grid::new(2, 16, 3.0).unwrap();
        let spec = NonlinearitySpec::parse("|t|^2.2", 1, 0, consts(2.2, 2.5, 1.0)).unwrap().with_symbolic_partials();
        let m = build_scalar_modified(&spec, 1.0).unwrap();
        let neg = parse_with("sum_sin2(x,2)-0.5", Arity::new(false, false, 2)).unwrap();
        assert!(matches!(
            SystemProblem::new(vec![GrowthKernel::power(1.5)], vec![neg], m.clone(), 1.0, g),
            Err(EnergyError::NonPositivePotential { .. })
        ));
        let aperiodic = parse_with("1+x1*x1", Arity::new(false, false, 2)).unwrap();
        assert!(matches!(
            SystemProblem::new(vec![GrowthKernel::power(1.5)], vec![aperiodic], m, 1.0, g),
            Err(EnergyError::NotPeriodic { .. })
        ));
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let g = Grid::new(2, 16, 3.0).unwrap();
        let p = system_problem(GrowthKernel::power(1.5), 1.0, g);
        let other = DiscreteField::zeros(Grid::new(2, 17, 3.0).unwrap(), Boundary::ZeroDirichlet);
        assert!(matches!(evaluate_energy(&p, &other, Some(&other)), Err(EnergyError::GridMismatch)));
    }
}
