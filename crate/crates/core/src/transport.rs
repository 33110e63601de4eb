//! ε-scaled steady transport `ε w·∇u + u − ū = 0` in the annulus `R₋ < |x| < R₊`.
//!
//! For rotationally symmetric data the state reduces to `(r, φ)` with `φ` the angle between
//! the backward direction `−w` and the local tangent. Backward rays are straight:
//! `X(s) = (r + εs sinφ, εs cosφ)` in the frame of the start point, and `p = r cosφ` is
//! conserved. The solution is written in Duhamel form
//! `u = g(φ_b) e^{−t_b} + ∫_0^{t_b} e^{−s} ū(|X(s)|) ds`
//! with `ū` piecewise linear in `r`; ray weights are assembled once and the mean is solved
//! as a fixed point.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grids::{self, AngularGrid, Field2D, RadialGrid};
use crate::linalg;
use crate::milne::{AngleFn, Method};
use crate::quad;

/// Rays longer than this (in units of the mean free path) are cut; the dropped mass is `e^{−50}`.
const MAX_RAY: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Circle {
    Inner,
    Outer,
}

/// Where and when the backward ray leaves the annulus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exit {
    pub t_b: f64,
    pub circle: Circle,
    /// Relative angle of the ray at the wall.
    pub phi_b: f64,
}

#[derive(Clone)]
pub struct AnnulusProblem {
    epsilon: f64,
    g_minus: AngleFn,
    g_plus: AngleFn,
    radial: RadialGrid,
    angles: AngularGrid,
    tolerance: f64,
    max_iterations: usize,
    method: Method,
}

impl std::fmt::Debug for AnnulusProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnulusProblem")
            .field("epsilon", &self.epsilon)
            .field("radial", &self.radial.len())
            .field("angles", &self.angles.count())
            .finish()
    }
}

impl AnnulusProblem {
    /// `g_minus` is used on the inner wall where `sinφ < 0`, `g_plus` on the outer wall where `sinφ > 0`.
    pub fn new(epsilon: f64, g_minus: AngleFn, g_plus: AngleFn, radial: RadialGrid, angles: AngularGrid) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Domain(format!("epsilon must lie in (0, 1] (got {epsilon})")));
        }
        Ok(Self {
            epsilon,
            g_minus,
            g_plus,
            radial,
            angles,
            tolerance: 1e-10,
            max_iterations: 5000,
            method: Method::Krylov,
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64, max_iterations: usize) -> Self {
        self.tolerance = tolerance;
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn r_minus(&self) -> f64 {
        self.radial.r_minus()
    }

    pub fn r_plus(&self) -> f64 {
        self.radial.r_plus()
    }

    pub fn radial(&self) -> &RadialGrid {
        &self.radial
    }

    pub fn angles(&self) -> &AngularGrid {
        &self.angles
    }

    /// Boundary datum seen by a ray arriving at `circle` with angle `phi_b`.
    pub fn boundary_value(&self, circle: Circle, phi_b: f64) -> f64 {
        match circle {
            Circle::Inner => (self.g_minus)(phi_b),
            Circle::Outer => (self.g_plus)(phi_b),
        }
    }

    /// Largest `|g|` over the incoming directions, sampled finely.
    pub fn boundary_sup(&self) -> f64 {
        let mut m = 0.0f64;
        for k in 0..4096 {
            let t = (k as f64 + 0.5) / 4096.0 * PI;
            m = m.max((self.g_minus)(-t).abs()).max((self.g_plus)(t).abs());
        }
        m
    }

    /// Smallest and largest `g` over the incoming directions, sampled finely.
    pub fn boundary_range(&self) -> (f64, f64) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..4096 {
            let t = (k as f64 + 0.5) / 4096.0 * PI;
            for v in [(self.g_minus)(-t), (self.g_plus)(t)] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }
}

/// Backward exit time, wall and arrival angle from `(r, φ)`.
pub fn exit_time(problem: &AnnulusProblem, r: f64, phi: f64) -> Result<Exit> {
    let (rm, rp) = (problem.r_minus(), problem.r_plus());
    if !(r >= rm && r <= rp) {
        return Err(Error::Domain(format!("r={r} outside [{rm}, {rp}]")));
    }
    Ok(exit_geometry(rm, rp, problem.epsilon, r, phi))
}

fn exit_geometry(rm: f64, rp: f64, eps: f64, r: f64, phi: f64) -> Exit {
    let (s, c) = phi.sin_cos();
    let p = r * c;
    if s < 0.0 && p.abs() <= rm {
        let len = (-r * s - (rm * rm - p * p).sqrt()).max(0.0);
        Exit { t_b: len / eps, circle: Circle::Inner, phi_b: -(p / rm).clamp(-1.0, 1.0).acos() }
    } else {
        let len = (-r * s + (rp * rp - p * p).max(0.0).sqrt()).max(0.0);
        Exit { t_b: len / eps, circle: Circle::Outer, phi_b: (p / rp).clamp(-1.0, 1.0).acos() }
    }
}

/// Linear weights of one backward ray: `u = boundary·g(φ_b) + Σ_k w_k ū_k`.
#[derive(Debug, Clone)]
pub struct RayWeights {
    pub exit: Exit,
    pub boundary: f64,
    pub weights: Vec<(usize, f64)>,
}

/// Assembles the weights of the ray from `(r, φ)`.
pub fn ray_weights(problem: &AnnulusProblem, r: f64, phi: f64) -> Result<RayWeights> {
    let exit = exit_time(problem, r, phi)?;
    let nodes = problem.radial.nodes();
    let eps = problem.epsilon;
    let (sphi, _) = phi.sin_cos();
    let t_end = exit.t_b.min(MAX_RAY);
    let radius = |s: f64| {
        let x = r + eps * s * sphi;
        let y = eps * s * phi.cos();
        x.hypot(y).clamp(problem.r_minus(), problem.r_plus())
    };
    // break points: closest approach and every node crossing
    let mut cuts = vec![0.0, t_end];
    let s_min = -r * sphi / eps;
    if s_min > 0.0 && s_min < t_end {
        cuts.push(s_min);
    }
    for &rk in nodes {
        // ε² s² + 2 r ε sinφ s + r² − r_k² = 0
        let bq = r * sphi / eps;
        let cq = (r * r - rk * rk) / (eps * eps);
        let disc = bq * bq - cq;
        if disc < 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        for root in [-bq - sq, -bq + sq] {
            if root > 0.0 && root < t_end {
                cuts.push(root);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * (1.0 + b.abs()));
    let step = 0.1f64.min(exit.t_b / 50.0).max(1e-12);
    let mut acc = vec![0.0; nodes.len()];
    let gl = quad::gauss_legendre(4);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let pieces = ((b - a) / step).ceil().max(1.0) as usize;
        let hs = (b - a) / pieces as f64;
        let mid_r = radius(0.5 * (a + b));
        let (k, _) = grids::locate(nodes, mid_r).unwrap_or((0, 0.0));
        let (r0, r1) = (nodes[k], nodes[k + 1]);
        for m in 0..pieces {
            let (sa, sb) = (a + m as f64 * hs, a + (m + 1) as f64 * hs);
            let (mid, half) = (0.5 * (sa + sb), 0.5 * (sb - sa));
            let (mut w0, mut w1) = (0.0, 0.0);
            for (t, wt) in gl {
                let s = mid + half * t;
                let e = wt * half * (-s).exp();
                let frac = ((radius(s) - r0) / (r1 - r0)).clamp(0.0, 1.0);
                w0 += e * (1.0 - frac);
                w1 += e * frac;
            }
            // exact mass of e^{−s} on the piece keeps constants exact
            let exact = (-sa).exp() * -(-(sb - sa)).exp_m1();
            let scale = exact / (w0 + w1);
            acc[k] += w0 * scale;
            acc[k + 1] += w1 * scale;
        }
    }
    let weights = acc.into_iter().enumerate().filter(|(_, w)| *w != 0.0).collect();
    Ok(RayWeights { exit, boundary: (-exit.t_b).exp(), weights })
}

/// Duhamel value along the backward ray from `(r, φ)` for a given mean profile.
pub fn ray_integrate(problem: &AnnulusProblem, u_bar: &[f64], r: f64, phi: f64) -> Result<f64> {
    grids::check_len(problem.radial.len(), u_bar.len())?;
    let ray = ray_weights(problem, r, phi)?;
    let interior: f64 = ray.weights.iter().map(|(k, w)| w * u_bar[*k]).sum();
    Ok(ray.boundary * problem.boundary_value(ray.exit.circle, ray.exit.phi_b) + interior)
}

/// All ray weights on the grid, row-major over `(r_i, φ_j)`.
pub struct Assembly {
    pub rays: Vec<RayWeights>,
    /// `g(φ_b)·e^{−t_b}` per grid state.
    pub boundary_terms: Vec<f64>,
}

pub fn assemble(problem: &AnnulusProblem) -> Result<Assembly> {
    let rn = problem.radial.nodes();
    let phis = problem.angles.nodes();
    let n = phis.len();
    let rays: Vec<RayWeights> = (0..rn.len() * n)
        .into_par_iter()
        .map(|idx| ray_weights(problem, rn[idx / n], phis[idx % n]))
        .collect::<Result<_>>()?;
    let boundary_terms = rays
        .iter()
        .map(|ray| ray.boundary * problem.boundary_value(ray.exit.circle, ray.exit.phi_b))
        .collect();
    Ok(Assembly { rays, boundary_terms })
}

#[derive(Debug, Clone)]
pub struct TransportSolution {
    problem: AnnulusProblem,
    pub u: Field2D,
    pub u_bar: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Fixed point `ū = mean_φ(boundary term + ray integral of ū)`.
pub fn solve(problem: &AnnulusProblem) -> Result<TransportSolution> {
    let asm = assemble(problem)?;
    solve_assembled(problem, &asm)
}

pub fn solve_assembled(problem: &AnnulusProblem, asm: &Assembly) -> Result<TransportSolution> {
    let nr = problem.radial.len();
    let n = problem.angles.count();
    let inv_n = 1.0 / n as f64;
    let mut kmat = vec![0.0; nr * nr];
    let mut bbar = vec![0.0; nr];
    for i in 0..nr {
        for j in 0..n {
            let idx = i * n + j;
            bbar[i] += asm.boundary_terms[idx] * inv_n;
            for (k, w) in &asm.rays[idx].weights {
                kmat[i * nr + k] += w * inv_n;
            }
        }
    }
    let apply_k = |v: &[f64], out: &mut [f64]| {
        for i in 0..nr {
            out[i] = kmat[i * nr..(i + 1) * nr].iter().zip(v).map(|(a, b)| a * b).sum();
        }
    };
    let mut ubar = vec![0.0; nr];
    let mut kv = vec![0.0; nr];
    let mut history = Vec::new();
    let mut iterations = 0;
    let residual_of = |u: &[f64], kv: &mut [f64]| {
        apply_k(u, kv);
        u.iter().zip(kv.iter()).zip(&bbar).fold(0.0f64, |m, ((x, k), b)| m.max((k + b - x).abs()))
    };
    let mut residual = f64::INFINITY;
    match problem.method {
        Method::SourceIteration => {
            while iterations < problem.max_iterations {
                apply_k(&ubar, &mut kv);
                let next: Vec<f64> = kv.iter().zip(&bbar).map(|(k, b)| k + b).collect();
                residual = linalg::sup_diff(&next, &ubar);
                history.push(residual);
                ubar = next;
                iterations += 1;
                if residual < problem.tolerance {
                    break;
                }
            }
            residual = residual_of(&ubar, &mut kv);
        }
        Method::Krylov => {
            for _ in 0..6 {
                residual = residual_of(&ubar, &mut kv);
                if residual < problem.tolerance || iterations >= problem.max_iterations {
                    break;
                }
                let rhs: Vec<f64> = (0..nr).map(|i| kv[i] + bbar[i] - ubar[i]).collect();
                let mut tmp = vec![0.0; nr];
                let out = linalg::gmres(
                    |v, o| {
                        apply_k(v, &mut tmp);
                        for i in 0..nr {
                            o[i] = v[i] - tmp[i];
                        }
                    },
                    &rhs,
                    &vec![0.0; nr],
                    1e-14,
                    80,
                    problem.max_iterations - iterations,
                );
                iterations += out.iterations;
                history.extend(out.history.iter().copied());
                for i in 0..nr {
                    ubar[i] += out.x[i];
                }
            }
        }
    }
    if !(residual < problem.tolerance) {
        return Err(Error::Iteration { iterations, residual });
    }
    let mut values = vec![0.0; nr * n];
    for (idx, v) in values.iter_mut().enumerate() {
        *v = asm.boundary_terms[idx] + asm.rays[idx].weights.iter().map(|(k, w)| w * ubar[*k]).sum::<f64>();
    }
    let u = Field2D::from_values(problem.radial.nodes(), problem.angles.nodes(), values)?;
    Ok(TransportSolution { problem: problem.clone(), u, u_bar: ubar, iterations, residual, history })
}

impl TransportSolution {
    pub fn problem(&self) -> &AnnulusProblem {
        &self.problem
    }

    /// `u(r, φ)` anywhere, by one more ray integration against the converged mean.
    pub fn evaluate(&self, r: f64, phi: f64) -> Result<f64> {
        ray_integrate(&self.problem, &self.u_bar, r, phi)
    }

    /// Residual of `−ε sinφ ∂_r u − (ε/r) cosφ ∂_φ u + u − ū` by central differences.
    pub fn pde_residual(&self, r: f64, phi: f64, step: f64) -> Result<f64> {
        let eps = self.problem.epsilon;
        let ur = (self.evaluate(r + step, phi)? - self.evaluate(r - step, phi)?) / (2.0 * step);
        let up = (self.evaluate(r, phi + step)? - self.evaluate(r, phi - step)?) / (2.0 * step);
        let u = self.evaluate(r, phi)?;
        let ubar = grids::interp_linear(self.problem.radial.nodes(), &self.u_bar, r);
        Ok(-eps * phi.sin() * ur - eps / r * phi.cos() * up + u - ubar)
    }
}

/// Dense solve of `u_ij − Σ_k W_ijk mean_l u_kl = b_ij` over every grid state.
pub fn dense_oracle_transport(problem: &AnnulusProblem) -> Result<Field2D> {
    let nr = problem.radial.len();
    let n = problem.angles.count();
    let size = nr * n;
    if size > 20_000 {
        return Err(Error::Precondition(format!("oracle limited to 20000 unknowns (got {size})")));
    }
    let rn = problem.radial.nodes();
    let phis = problem.angles.nodes();
    let mut a = vec![0.0; size * size];
    let mut b = vec![0.0; size];
    for i in 0..nr {
        for j in 0..n {
            let row = i * n + j;
            let ray = ray_weights(problem, rn[i], phis[j])?;
            a[row * size + row] += 1.0;
            for (k, w) in &ray.weights {
                for l in 0..n {
                    a[row * size + k * n + l] -= w / n as f64;
                }
            }
            b[row] = ray.boundary * problem.boundary_value(ray.exit.circle, ray.exit.phi_b);
        }
    }
    let x = linalg::dense_solve(size, a, b)?;
    Field2D::from_values(rn, phis, x)
}
