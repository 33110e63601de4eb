//! Milne and ε-Milne problems on a truncated slab `[0, L]` with specular reflection at `L`.
//!
//! The transport operator `λf + sinφ ∂_η f + V'(η) cosφ ∂_φ f + f` is discretized by a
//! conservative upwind finite-volume scheme. Slab cells carry the downwind node value of each
//! ordinate; the angular flux `V' cosφ f` is upwinded at midpoint-grid interfaces, and the
//! companion term `V' sinφ f` uses `(cos φ_{j−½} − cos φ_{j+½})/Δ` so constants are exact.
//! The scheme is monotone whenever `h·|V'|·κ < 2` on every cell.
//!
//! Source iteration on the cell means `q` is accelerated by GMRES; plain iteration is kept
//! for testing contraction behaviour.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::characteristics::Characteristic;
use crate::error::{Error, Result};
use crate::force::{ForceProfile, Orientation};
use crate::grids::{self, interp_periodic, AngularGrid, Field2D, SlabGrid};
use crate::linalg;

/// Boundary datum as a function of the velocity angle.
pub type AngleFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// In-flow datum at `η = 0`, used on directions with `sinφ > 0`.
#[derive(Clone)]
pub enum Inflow {
    /// Values on the `sinφ > 0` nodes, in increasing angle.
    Samples(Vec<f64>),
    Function(AngleFn),
}

impl std::fmt::Debug for Inflow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Inflow::Samples(v) => f.debug_tuple("Samples").field(v).finish(),
            Inflow::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl Inflow {
    pub fn constant(c: f64) -> Self {
        Inflow::Function(Arc::new(move |_| c))
    }

    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Inflow::Function(Arc::new(f))
    }
}

/// Outer solver for the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// `q ← mean(sweep(q + S))`.
    SourceIteration,
    /// GMRES on `(I − K) q = b`, the same fixed point.
    Krylov,
}

#[derive(Debug, Clone)]
pub struct MilneProblem {
    profile: ForceProfile,
    slab: SlabGrid,
    angles: AngularGrid,
    inflow: Inflow,
    /// Length `n`; entries on `sinφ ≤ 0` are zero.
    inflow_nodes: Vec<f64>,
    source: Option<Field2D>,
    lambda: f64,
    bound: f64,
    decay_rate: f64,
    tolerance: f64,
    max_iterations: usize,
    method: Method,
}

impl MilneProblem {
    /// Source-free problem with `λ = 0`, tolerance `1e−10` and at most 5000 sweeps.
    pub fn new(profile: ForceProfile, slab: SlabGrid, angles: AngularGrid, inflow: Inflow) -> Result<Self> {
        let n = angles.count();
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::Precondition(format!("angular count must be even (got {n})")));
        }
        let half = n / 2;
        let mut inflow_nodes = vec![0.0; n];
        match &inflow {
            Inflow::Samples(v) => {
                grids::check_len(half, v.len())?;
                inflow_nodes[half..].copy_from_slice(v);
            }
            Inflow::Function(g) => {
                for j in half..n {
                    inflow_nodes[j] = g(angles.nodes()[j]);
                }
            }
        }
        if inflow_nodes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("in-flow datum is not finite".into()));
        }
        let bound = inflow_nodes.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self {
            profile,
            slab,
            angles,
            inflow,
            inflow_nodes,
            source: None,
            lambda: 0.0,
            bound,
            decay_rate: 0.0,
            tolerance: 1e-10,
            max_iterations: 5000,
            method: Method::Krylov,
        })
    }

    /// Volume source `S(η, φ)` on (slab nodes × angles) with `|S| ≤ M e^{−Kη}`.
    pub fn with_source(mut self, source: Field2D, decay_rate: f64) -> Result<Self> {
        if source.shape() != (self.slab.len(), self.angles.count()) {
            return Err(Error::Dimension {
                expected: self.slab.len() * self.angles.count(),
                got: source.values().len(),
            });
        }
        let nonzero = source.sup_norm() > 0.0;
        if nonzero && !(decay_rate > 0.0) {
            return Err(Error::Precondition("a nonzero source needs a decay rate K > 0".into()));
        }
        self.bound = self.bound.max(source.sup_norm());
        self.decay_rate = decay_rate;
        self.source = nonzero.then_some(source);
        Ok(self)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::Precondition(format!("penalty must be nonnegative (got {lambda})")));
        }
        self.lambda = lambda;
        Ok(self)
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

    pub fn profile(&self) -> &ForceProfile {
        &self.profile
    }

    pub fn slab(&self) -> &SlabGrid {
        &self.slab
    }

    pub fn angles(&self) -> &AngularGrid {
        &self.angles
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn source(&self) -> Option<&Field2D> {
        self.source.as_ref()
    }

    /// `M ≥ sup|h|, sup|S|`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// In-flow values on every ordinate (zero where `sinφ ≤ 0`).
    pub fn inflow_nodes(&self) -> &[f64] {
        &self.inflow_nodes
    }

    /// In-flow at an arbitrary angle with `sinφ > 0`.
    pub fn inflow_at(&self, phi: f64) -> f64 {
        match &self.inflow {
            Inflow::Function(g) => g(phi),
            Inflow::Samples(v) => {
                let half = self.angles.count() / 2;
                grids::interp_linear(&self.angles.nodes()[half..], v, phi)
            }
        }
    }

    /// `S` at an arbitrary point, linear in `η` and periodic-linear in `φ`.
    pub fn source_at(&self, eta: f64, phi: f64) -> f64 {
        let Some(s) = &self.source else { return 0.0 };
        let nodes = self.slab.nodes();
        let (i, t) = match grids::locate(nodes, eta.clamp(0.0, self.slab.length())) {
            Ok(v) => v,
            Err(_) => return 0.0,
        };
        let i1 = (i + 1).min(nodes.len() - 1);
        let a = interp_periodic(&self.angles, s.row(i), phi);
        if t == 0.0 {
            return a;
        }
        let b = interp_periodic(&self.angles, s.row(i1), phi);
        (1.0 - t) * a + t * b
    }
}

/// Upwind finite-volume discretization of one problem.
pub struct Scheme {
    n: usize,
    half: usize,
    cells: usize,
    lambda: f64,
    delta: f64,
    sin: Vec<f64>,
    /// `cos φ_{j+½}`.
    cos_face: Vec<f64>,
    shat: Vec<f64>,
    h: Vec<f64>,
    slope: Vec<f64>,
    /// Visit order of the `sinφ < 0` and `sinφ > 0` ordinates inside a cell.
    order_neg: Vec<usize>,
    order_pos: Vec<usize>,
    /// Negative ordinates are swept first (concave walls).
    neg_first: bool,
    closure: Option<LU<f64, Dyn, Dyn>>,
}

impl Scheme {
    pub fn new(problem: &MilneProblem) -> Result<Self> {
        let n = problem.angles.count();
        let half = n / 2;
        let delta = problem.angles.weight();
        let nodes = problem.slab.nodes();
        let cells = nodes.len() - 1;
        let phis = problem.angles.nodes();
        let sin: Vec<f64> = phis.iter().map(|p| p.sin()).collect();
        let snap = |c: f64| if c.abs() < 1e-15 { 0.0 } else { c };
        let cos_face: Vec<f64> = (0..n)
            .map(|j| if j == n - 1 { -1.0 } else { snap(problem.angles.interface(j).cos()) })
            .collect();
        let shat: Vec<f64> = (0..n)
            .map(|j| (cos_face[(j + n - 1) % n] - cos_face[j]) / delta)
            .collect();
        let h: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        let slope: Vec<f64> = nodes
            .windows(2)
            .map(|w| (problem.profile.potential(w[1]) - problem.profile.potential(w[0])) / (w[1] - w[0]))
            .collect();
        let kappa = 2.0 * (0.5 * delta).sin() / delta;
        for (c, (hc, ac)) in h.iter().zip(&slope).enumerate() {
            if hc * ac.abs() * kappa >= 2.0 {
                return Err(Error::Precondition(format!(
                    "cell {c} too coarse for a monotone scheme (h·|V'|·κ = {})",
                    hc * ac.abs() * kappa
                )));
            }
        }
        let neg_first = problem.profile.orientation() == Some(Orientation::Inner);
        let dist = |j: usize, target: f64| (phis[j] - target).abs();
        let mut order_neg: Vec<usize> = (0..half).collect();
        let mut order_pos: Vec<usize> = (half..n).collect();
        if neg_first {
            // φ-flow runs from −π/2 toward π/2
            order_neg.sort_by(|&x, &y| dist(x, -PI / 2.0).total_cmp(&dist(y, -PI / 2.0)));
            order_pos.sort_by(|&x, &y| dist(y, PI / 2.0).total_cmp(&dist(x, PI / 2.0)));
        } else {
            order_pos.sort_by(|&x, &y| dist(x, PI / 2.0).total_cmp(&dist(y, PI / 2.0)));
            order_neg.sort_by(|&x, &y| dist(y, -PI / 2.0).total_cmp(&dist(x, -PI / 2.0)));
        }
        let mut scheme = Self {
            n,
            half,
            cells,
            lambda: problem.lambda,
            delta,
            sin,
            cos_face,
            shat,
            h,
            slope,
            order_neg,
            order_pos,
            neg_first,
            closure: None,
        };
        if neg_first {
            scheme.build_closure()?;
        }
        Ok(scheme)
    }

    pub fn count_cells(&self) -> usize {
        self.cells
    }

    /// Response of the top outgoing values to unit top incoming values, then `I − P·A`.
    fn build_closure(&mut self) -> Result<()> {
        let (n, half) = (self.n, self.half);
        let src = vec![0.0; self.cells * n];
        let inflow = vec![0.0; n];
        let mut f = vec![0.0; (self.cells + 1) * n];
        let mut m = DMatrix::<f64>::identity(half, half);
        let top = self.cells * n;
        for k in 0..half {
            f.iter_mut().for_each(|v| *v = 0.0);
            f[top + k] = 1.0;
            self.pass(&src, &inflow, &mut f);
            for j in 0..half {
                // x_j = out_{n−1−j}
                m[(j, k)] -= f[top + n - 1 - j];
            }
        }
        let lu = m.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular("specular closure matrix".into()));
        }
        self.closure = Some(lu);
        Ok(())
    }

    /// Transport solve with cell sources `src` (`cells × n`), in-flow, and specular top.
    /// Writes every node value into `f` (`(cells+1) × n`).
    pub fn transport(&self, src: &[f64], inflow: &[f64], f: &mut [f64]) {
        let (n, half) = (self.n, self.half);
        let top = self.cells * n;
        if self.neg_first {
            for j in 0..half {
                f[top + j] = 0.0;
            }
            self.pass(src, inflow, f);
            let rhs = DVector::from_iterator(half, (0..half).map(|j| f[top + n - 1 - j]));
            let x = self.closure.as_ref().unwrap().solve(&rhs).unwrap();
            for j in 0..half {
                f[top + j] = x[j];
            }
            self.pass(src, inflow, f);
        } else {
            self.pass(src, inflow, f);
        }
    }

    /// One pass in dependency order. For concave walls the top incoming values must be set.
    fn pass(&self, src: &[f64], inflow: &[f64], f: &mut [f64]) {
        let (n, half) = (self.n, self.half);
        f[half..n].copy_from_slice(&inflow[half..n]);
        if self.neg_first {
            self.sweep_down(src, f);
            self.sweep_up(src, f);
        } else {
            self.sweep_up(src, f);
            let top = self.cells * n;
            for j in 0..half {
                f[top + j] = f[top + n - 1 - j];
            }
            self.sweep_down(src, f);
        }
    }

    /// Value of ordinate `k` in cell `c` (1-based): node `c` if `sinφ_k > 0`, else node `c − 1`.
    #[inline]
    fn cell_index(&self, c: usize, k: usize) -> usize {
        if k >= self.half {
            c * self.n + k
        } else {
            (c - 1) * self.n + k
        }
    }

    #[inline]
    fn solve_ordinate(&self, c: usize, j: usize, up: f64, source: f64, f: &[f64]) -> f64 {
        let n = self.n;
        let s = self.sin[j].abs();
        let h = self.h[c - 1];
        let a = self.slope[c - 1];
        let sh = a * self.shat[j] * 0.5;
        let mut diag = 1.0 + self.lambda + s / h + sh;
        let mut rhs = source + (s / h - sh) * up;
        if a != 0.0 {
            let cp = a * self.cos_face[j] / self.delta;
            let cm = a * self.cos_face[(j + n - 1) % n] / self.delta;
            if cp > 0.0 {
                diag += cp;
            } else if cp < 0.0 {
                rhs -= cp * f[self.cell_index(c, (j + 1) % n)];
            }
            if cm < 0.0 {
                diag -= cm;
            } else if cm > 0.0 {
                rhs += cm * f[self.cell_index(c, (j + n - 1) % n)];
            }
        }
        rhs / diag
    }

    fn sweep_down(&self, src: &[f64], f: &mut [f64]) {
        let n = self.n;
        for c in (1..=self.cells).rev() {
            for &j in &self.order_neg {
                let up = f[c * n + j];
                let v = self.solve_ordinate(c, j, up, src[(c - 1) * n + j], f);
                f[(c - 1) * n + j] = v;
            }
        }
    }

    fn sweep_up(&self, src: &[f64], f: &mut [f64]) {
        let n = self.n;
        for c in 1..=self.cells {
            for &j in &self.order_pos {
                let up = f[(c - 1) * n + j];
                let v = self.solve_ordinate(c, j, up, src[(c - 1) * n + j], f);
                f[c * n + j] = v;
            }
        }
    }

    /// Mean over ordinates of the cell values of `f`.
    pub fn cell_means(&self, f: &[f64], out: &mut [f64]) {
        let n = self.n;
        for c in 1..=self.cells {
            let lo = &f[(c - 1) * n..(c - 1) * n + self.half];
            let hi = &f[c * n + self.half..(c + 1) * n];
            out[c - 1] = (lo.iter().sum::<f64>() + hi.iter().sum::<f64>()) / n as f64;
        }
    }
}

/// Node field → cell sources (average of the two edge nodes).
fn cell_sources(field: &Field2D) -> Vec<f64> {
    let (rows, n) = field.shape();
    let mut out = vec![0.0; (rows - 1) * n];
    for c in 0..rows - 1 {
        for j in 0..n {
            out[c * n + j] = 0.5 * (field.get(c, j) + field.get(c + 1, j));
        }
    }
    out
}

/// Pure transport solve of `λf + sinφ ∂_η f − F cosφ ∂_φ f + f = total_source` with the
/// problem's in-flow and specular closure (no mean coupling).
pub fn sweep(problem: &MilneProblem, total_source: &Field2D) -> Result<Field2D> {
    if total_source.shape() != (problem.slab.len(), problem.angles.count()) {
        return Err(Error::Dimension {
            expected: problem.slab.len() * problem.angles.count(),
            got: total_source.values().len(),
        });
    }
    if total_source.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("total source is not finite".into()));
    }
    let scheme = Scheme::new(problem)?;
    let mut f = vec![0.0; problem.slab.len() * problem.angles.count()];
    scheme.transport(&cell_sources(total_source), &problem.inflow_nodes, &mut f);
    Field2D::from_values(problem.slab.nodes(), problem.angles.nodes(), f)
}

/// Converged solution with its decomposition `f = q + r`.
#[derive(Debug, Clone)]
pub struct MilneSolution {
    problem: MilneProblem,
    pub f: Field2D,
    /// Angular mean of `f` at every slab node.
    pub q: Vec<f64>,
    pub r: Field2D,
    pub f_inf: f64,
    /// Fitted decay rate and fit quality, when the residual is resolvable.
    pub decay: Option<DecayFit>,
    pub iterations: usize,
    pub residual: f64,
    /// Per-iteration residual (sup change for source iteration, relative GMRES residual otherwise).
    pub history: Vec<f64>,
}

/// Exponential fit of `sup_φ |f(η,·) − f_∞|` over `[L/4, 3L/4]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub k0: f64,
    pub r2: f64,
}

/// Fixed point `f = sweep(mean(f) + S)`.
pub fn solve(problem: &MilneProblem) -> Result<MilneSolution> {
    let scheme = Scheme::new(problem)?;
    let (n, cells) = (problem.angles.count(), scheme.cells);
    let s_cells = match &problem.source {
        Some(s) => cell_sources(s),
        None => vec![0.0; cells * n],
    };
    let mut f = vec![0.0; (cells + 1) * n];
    let mut src = vec![0.0; cells * n];
    let zero_inflow = vec![0.0; n];
    let mut means = vec![0.0; cells];
    let mut history = Vec::new();
    let mut iterations = 0;

    // T(q) = mean(sweep(q + S)) with data; K q = mean(sweep(q)) without
    let mut apply_t = |q: &[f64], with_data: bool, f: &mut [f64], out: &mut [f64]| {
        for c in 0..cells {
            for j in 0..n {
                src[c * n + j] = q[c] + if with_data { s_cells[c * n + j] } else { 0.0 };
            }
        }
        let inflow = if with_data { &problem.inflow_nodes } else { &zero_inflow };
        scheme.transport(&src, inflow, f);
        scheme.cell_means(f, out);
    };

    let mut q = vec![0.0; cells];
    let residual;
    match problem.method {
        Method::SourceIteration => {
            let mut res = f64::INFINITY;
            while iterations < problem.max_iterations {
                apply_t(&q, true, &mut f, &mut means);
                iterations += 1;
                res = linalg::sup_diff(&means, &q);
                history.push(res);
                q.copy_from_slice(&means);
                if res < problem.tolerance {
                    break;
                }
            }
            residual = res;
        }
        Method::Krylov => {
            let mut b = vec![0.0; cells];
            apply_t(&vec![0.0; cells], true, &mut f, &mut b);
            iterations += 1;
            let mut res = f64::INFINITY;
            let mut work = vec![0.0; (cells + 1) * n];
            for _ in 0..6 {
                // residual equation for the correction: (I − K) δ = T(q) − q
                apply_t(&q, true, &mut f, &mut means);
                iterations += 1;
                let rhs: Vec<f64> = means.iter().zip(&q).map(|(t, x)| t - x).collect();
                res = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if res < problem.tolerance || iterations >= problem.max_iterations {
                    break;
                }
                let budget = problem.max_iterations.saturating_sub(iterations).max(1);
                let mut kv = vec![0.0; cells];
                let out = linalg::gmres(
                    |v, o| {
                        apply_t(v, false, &mut work, &mut kv);
                        for c in 0..cells {
                            o[c] = v[c] - kv[c];
                        }
                    },
                    &rhs,
                    &vec![0.0; cells],
                    1e-3 * problem.tolerance / (1.0 + linalg::norm(&b)),
                    60,
                    budget,
                );
                iterations += out.iterations;
                history.extend(out.history.iter().copied());
                for c in 0..cells {
                    q[c] += out.x[c];
                }
            }
            residual = res;
        }
    }
    if !(residual < problem.tolerance) {
        return Err(Error::Iteration { iterations, residual });
    }
    if problem.method == Method::SourceIteration {
        // last sweep used the previous q; redo with the accepted one
        apply_t(&q, true, &mut f, &mut means);
    }
    let field = Field2D::from_values(problem.slab.nodes(), problem.angles.nodes(), f)?;
    let (qn, r) = decompose(&problem.angles, &field)?;
    let mut sol = MilneSolution {
        problem: problem.clone(),
        f: field,
        q: qn,
        r,
        f_inf: 0.0,
        decay: None,
        iterations,
        residual,
        history,
    };
    sol.f_inf = extract_limit(&sol);
    sol.decay = fit_decay(&sol, sol.f_inf).ok();
    Ok(sol)
}

/// `q(η) = mean_φ f(η,·)` and `r = f − q`.
pub fn decompose(angles: &AngularGrid, f: &Field2D) -> Result<(Vec<f64>, Field2D)> {
    let (rows, cols) = f.shape();
    grids::check_len(angles.count(), cols)?;
    let mut q = Vec::with_capacity(rows);
    let mut r = f.clone();
    for i in 0..rows {
        let m = grids::angular_mean(angles, f.row(i))?;
        q.push(m);
        r.row_mut(i).iter_mut().for_each(|v| *v -= m);
    }
    Ok((q, r))
}

/// Mean of `q` over the tail window `[0.8L, L]` (trapezoid on the slab nodes).
pub fn extract_limit(solution: &MilneSolution) -> f64 {
    tail_average(solution.problem.slab.nodes(), &solution.q)
}

pub(crate) fn tail_average(nodes: &[f64], q: &[f64]) -> f64 {
    let l = *nodes.last().unwrap();
    let start = 0.8 * l;
    let q0 = grids::interp_linear(nodes, q, start);
    let mut xs = vec![start];
    let mut ys = vec![q0];
    for (x, y) in nodes.iter().zip(q) {
        if *x > start {
            xs.push(*x);
            ys.push(*y);
        }
    }
    if xs.len() < 2 {
        return *q.last().unwrap();
    }
    let area: f64 = xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum();
    area / (l - start)
}

/// Least-squares slope of `ln sup_φ|f − f_∞|` on `[L/4, 3L/4]`.
pub fn fit_decay(solution: &MilneSolution, f_inf: f64) -> Result<DecayFit> {
    fit_decay_field(&solution.f, f_inf)
}

/// As [`fit_decay`] for any field over (slab nodes × angles).
pub fn fit_decay_field(f: &Field2D, f_inf: f64) -> Result<DecayFit> {
    let nodes = f.rows();
    let l = *nodes.last().unwrap();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &x) in nodes.iter().enumerate() {
        if x < 0.25 * l || x > 0.75 * l {
            continue;
        }
        let res = f.row(i).iter().fold(0.0f64, |m, v| m.max((v - f_inf).abs()));
        if res < 1e-14 {
            return Err(Error::Underflow { floor: 1e-14 });
        }
        xs.push(x);
        ys.push(res.ln());
    }
    if xs.len() < 3 {
        return Err(Error::Precondition("fit window holds fewer than three nodes".into()));
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(DecayFit { k0: -slope, r2 })
}

/// `f² = a(η) sinφ` with `a(η) = −2 e^{−V(η)} ∫_η^L e^{V(y)} S_Q(y) dy`.
#[derive(Debug, Clone)]
pub struct SecondCorrector {
    pub field: Field2D,
    pub a: Vec<f64>,
    /// Bound on the neglected `∫_L^∞` part of `|a(η)|` at `η = 0`.
    pub tail_bound: f64,
}

pub fn build_f2(
    profile: &ForceProfile,
    slab: &SlabGrid,
    angles: &AngularGrid,
    s_q: &[f64],
    decay_rate: f64,
) -> Result<SecondCorrector> {
    grids::check_len(slab.len(), s_q.len())?;
    let nonzero = s_q.iter().any(|v| *v != 0.0);
    if nonzero && !(decay_rate > 0.0) {
        return Err(Error::Precondition("S_Q must decay exponentially (K > 0)".into()));
    }
    let nodes = slab.nodes();
    let ev: Vec<f64> = nodes.iter().map(|&x| profile.potential(x).exp()).collect();
    let g: Vec<f64> = s_q.iter().zip(&ev).map(|(s, e)| s * e).collect();
    let tails = grids::tail_integrals(nodes, &g);
    let a: Vec<f64> = tails.iter().zip(&ev).map(|(t, e)| -2.0 * t / e).collect();
    let field = Field2D::from_fn(nodes, angles.nodes(), |_, _| 0.0);
    let mut field = field;
    for (i, ai) in a.iter().enumerate() {
        for (j, p) in angles.nodes().iter().enumerate() {
            field.set(i, j, ai * p.sin());
        }
    }
    let tail_bound = if nonzero {
        let last = s_q.last().unwrap().abs();
        2.0 * last * ev.last().unwrap() / ev[0] / decay_rate
    } else {
        0.0
    };
    Ok(SecondCorrector { field, a, tail_bound })
}

/// `max_η |⟨sinφ, r⟩|` and the deviation from `−2π ∫_η^L e^{V(y)−V(η)} S̄(y) dy`.
#[derive(Debug, Clone)]
pub struct OrthogonalityReport {
    pub max_moment: f64,
    pub max_deviation: f64,
    pub moments: Vec<f64>,
    pub reference: Vec<f64>,
}

pub fn check_orthogonality(problem: &MilneProblem, solution: &MilneSolution) -> Result<OrthogonalityReport> {
    let angles = &problem.angles;
    let nodes = problem.slab.nodes();
    let sines: Vec<f64> = angles.nodes().iter().map(|p| p.sin()).collect();
    let moments: Vec<f64> = (0..nodes.len())
        .map(|i| {
            solution.r.row(i).iter().zip(&sines).map(|(r, s)| r * s).sum::<f64>() * angles.weight()
        })
        .collect();
    let reference = match &problem.source {
        None => vec![0.0; nodes.len()],
        Some(s) => {
            let ev: Vec<f64> = nodes.iter().map(|&x| problem.profile.potential(x).exp()).collect();
            let g: Vec<f64> = (0..nodes.len())
                .map(|i| grids::angular_mean(angles, s.row(i)).unwrap() * ev[i])
                .collect();
            grids::tail_integrals(nodes, &g)
                .iter()
                .zip(&ev)
                .map(|(t, e)| -2.0 * PI * t / e)
                .collect()
        }
    };
    let max_moment = moments.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_deviation = linalg::sup_diff(&moments, &reference);
    Ok(OrthogonalityReport { max_moment, max_deviation, moments, reference })
}

#[derive(Debug, Clone, Copy)]
pub struct MaxPrincipleReport {
    pub min_h: f64,
    pub max_h: f64,
    pub min_f: f64,
    pub max_f: f64,
}

/// `min h − tol ≤ f ≤ max h + tol` with `tol = 10 ×` solver tolerance, for source-free problems.
pub fn check_max_principle(problem: &MilneProblem, solution: &MilneSolution) -> Result<MaxPrincipleReport> {
    if problem.source.is_some() {
        return Err(Error::Precondition("maximum principle check needs S = 0".into()));
    }
    let half = problem.angles.count() / 2;
    let h = &problem.inflow_nodes[half..];
    let min_h = h.iter().copied().fold(f64::INFINITY, f64::min);
    let max_h = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 10.0 * problem.tolerance;
    let (rows, cols) = solution.f.shape();
    let mut report = MaxPrincipleReport { min_h, max_h, min_f: f64::INFINITY, max_f: f64::NEG_INFINITY };
    for i in 0..rows {
        for j in 0..cols {
            let v = solution.f.get(i, j);
            report.min_f = report.min_f.min(v);
            report.max_f = report.max_f.max(v);
            if v < min_h - tol || v > max_h + tol {
                return Err(Error::Property(format!(
                    "maximum principle violated at eta={}, phi={}: f={v} outside [{min_h}, {max_h}]",
                    problem.slab.nodes()[i],
                    problem.angles.nodes()[j]
                )));
            }
        }
    }
    Ok(report)
}

/// Direct dense solve of the same discretization with the mean coupling, over all node values.
pub fn dense_oracle_milne(problem: &MilneProblem) -> Result<Field2D> {
    let n = problem.angles.count();
    let half = n / 2;
    let nodes = problem.slab.nodes();
    let rows = nodes.len();
    let size = rows * n;
    if size > 20_000 {
        return Err(Error::Precondition(format!("oracle limited to 20000 unknowns (got {size})")));
    }
    let delta = problem.angles.weight();
    let phis = problem.angles.nodes();
    let face = |j: usize| -> f64 {
        // interface j + ½
        let c = (-PI + (j as f64 + 1.0) * delta).cos();
        if j == n - 1 {
            -1.0
        } else if c.abs() < 1e-15 {
            0.0
        } else {
            c
        }
    };
    let idx = |i: usize, j: usize| i * n + j;
    let down = |c: usize, j: usize| if phis[j].sin() > 0.0 { c } else { c - 1 };
    let up = |c: usize, j: usize| if phis[j].sin() > 0.0 { c - 1 } else { c };
    let mut a = vec![0.0; size * size];
    let mut b = vec![0.0; size];
    let mut row = 0;
    for j in half..n {
        a[row * size + idx(0, j)] = 1.0;
        b[row] = problem.inflow_nodes[j];
        row += 1;
    }
    for j in 0..half {
        a[row * size + idx(rows - 1, j)] = 1.0;
        a[row * size + idx(rows - 1, n - 1 - j)] -= 1.0;
        row += 1;
    }
    for c in 1..rows {
        let h = nodes[c] - nodes[c - 1];
        let slope = (problem.profile.potential(nodes[c]) - problem.profile.potential(nodes[c - 1])) / h;
        for j in 0..n {
            let r = row * size;
            let s = phis[j].sin();
            let (d, u) = (idx(down(c, j), j), idx(up(c, j), j));
            a[r + d] += 1.0 + problem.lambda + s.abs() / h;
            a[r + u] -= s.abs() / h;
            let sh = slope * (face((j + n - 1) % n) - face(j)) / delta;
            a[r + d] += 0.5 * sh;
            a[r + u] += 0.5 * sh;
            // angular flux, upwinded by the sign of V'·cos at each interface
            let jp = (j + 1) % n;
            let jm = (j + n - 1) % n;
            let vp = slope * face(j) / delta;
            let vm = slope * face(jm) / delta;
            let from_p = if vp >= 0.0 { j } else { jp };
            let from_m = if vm >= 0.0 { jm } else { j };
            a[r + idx(down(c, from_p), from_p)] += vp;
            a[r + idx(down(c, from_m), from_m)] -= vm;
            for k in 0..n {
                a[r + idx(down(c, k), k)] -= 1.0 / n as f64;
            }
            b[row] = match &problem.source {
                Some(sf) => 0.5 * (sf.get(c - 1, j) + sf.get(c, j)),
                None => 0.0,
            };
            row += 1;
        }
    }
    debug_assert_eq!(row, size);
    let x = linalg::dense_solve(size, a, b)?;
    Field2D::from_values(nodes, phis, x)
}

/// Backward exit through `η = 0` or a closed trapped loop.
enum PathEnd {
    Inflow(f64),
    Loop,
}

impl MilneSolution {
    pub fn problem(&self) -> &MilneProblem {
        &self.problem
    }

    /// `f(η, φ)` at any phase point, integrating the transport equation exactly along the
    /// characteristic with the converged mean interpolated linearly in `η`.
    pub fn evaluate(&self, eta: f64, phi: f64) -> Result<f64> {
        let p = &self.problem;
        let l = p.slab.length();
        if !(eta >= 0.0 && eta <= l) {
            return Err(Error::Domain(format!("eta={eta} outside [0, {l}]")));
        }
        let s = phi.sin();
        if s == 0.0 {
            return Err(Error::Grazing { phi });
        }
        if eta == 0.0 && s > 0.0 {
            return Ok(p.inflow_at(phi));
        }
        let ch = Characteristic::through(&p.profile, eta, phi);
        let orientation = p.profile.orientation();
        let turn = ch.turning_eta();
        let mut acc = Accumulator::new(self, &ch);
        let end = match orientation {
            None | Some(Orientation::Inner) => {
                let turn = turn.filter(|t| *t > 0.0);
                if s > 0.0 {
                    match turn {
                        None => {
                            acc.segment(eta, 0.0, 1.0);
                            PathEnd::Inflow(ch.angle_at(0.0, 1.0))
                        }
                        Some(t) => {
                            acc.segment(eta, t, 1.0);
                            acc.segment(t, l, -1.0);
                            acc.segment(l, eta, 1.0);
                            PathEnd::Loop
                        }
                    }
                } else {
                    acc.segment(eta, l, -1.0);
                    match turn {
                        None => {
                            acc.segment(l, 0.0, 1.0);
                            PathEnd::Inflow(ch.angle_at(0.0, 1.0))
                        }
                        Some(t) => {
                            acc.segment(l, t, 1.0);
                            acc.segment(t, eta, -1.0);
                            PathEnd::Loop
                        }
                    }
                }
            }
            Some(Orientation::Outer) => {
                if s < 0.0 {
                    match turn.filter(|t| *t >= eta && *t < l) {
                        Some(t) => acc.segment(eta, t, -1.0),
                        None => acc.segment(eta, l, -1.0),
                    }
                    let top = turn.filter(|t| *t >= eta && *t < l).unwrap_or(l);
                    acc.segment(top, 0.0, 1.0);
                } else {
                    acc.segment(eta, 0.0, 1.0);
                }
                PathEnd::Inflow(ch.angle_at(0.0, 1.0))
            }
        };
        Ok(match end {
            PathEnd::Inflow(phi0) => acc.value + (-acc.tau).exp() * p.inflow_at(phi0),
            PathEnd::Loop => acc.value / (-(-acc.tau).exp_m1()),
        })
    }
}

struct Accumulator<'s, 'c> {
    sol: &'s MilneSolution,
    ch: &'c Characteristic<'c>,
    lam1: f64,
    tau: f64,
    value: f64,
}

impl<'s, 'c> Accumulator<'s, 'c> {
    fn new(sol: &'s MilneSolution, ch: &'c Characteristic<'c>) -> Self {
        Self { sol, ch, lam1: 1.0 + sol.problem.lambda, tau: 0.0, value: 0.0 }
    }

    fn total_source(&self, eta: f64, branch: f64) -> f64 {
        let p = &self.sol.problem;
        let mut v = grids::interp_linear(p.slab.nodes(), &self.sol.q, eta);
        if p.source.is_some() {
            v += p.source_at(eta, self.ch.angle_at(eta, branch));
        }
        v
    }

    /// Backward segment from `from` to `to` on branch `sign(sinφ) = branch`, split at slab nodes.
    fn segment(&mut self, from: f64, to: f64, branch: f64) {
        if from == to {
            return;
        }
        let nodes = self.sol.problem.slab.nodes();
        let (lo, hi) = (from.min(to), from.max(to));
        let mut pts: Vec<f64> = vec![from];
        let inner = nodes.iter().copied().filter(|x| *x > lo && *x < hi);
        if from < to {
            pts.extend(inner);
        } else {
            let mut v: Vec<f64> = inner.collect();
            v.reverse();
            pts.extend(v);
        }
        pts.push(to);
        let mut q0 = self.total_source(from, branch);
        for w in pts.windows(2) {
            let q1 = self.total_source(w[1], branch);
            let d = self.lam1 * self.ch.tau(w[0].min(w[1]), w[0].max(w[1]));
            self.value += (-self.tau).exp() * exp_linear_weight(d, q0, q1) / self.lam1;
            self.tau += d;
            q0 = q1;
        }
    }
}

/// `∫_0^D e^{−t} (q0 + (q1 − q0) t / D) dt`.
pub(crate) fn exp_linear_weight(d: f64, q0: f64, q1: f64) -> f64 {
    let (w0, w1) = exp_linear_split(d);
    w0 * q0 + w1 * q1
}

/// Weights `(w0, w1)` of the endpoint values in `∫_0^D e^{−t} (linear) dt`; `w0 + w1 = 1 − e^{−D}`.
pub(crate) fn exp_linear_split(d: f64) -> (f64, f64) {
    if d <= 0.0 {
        return (0.0, 0.0);
    }
    let total = -(-d).exp_m1();
    // ∫ e^{−t} t/D dt = (1 − e^{−D}(1 + D)) / D
    let w1 = if d < 1e-3 {
        d * (0.5 - d * (1.0 / 3.0 - d * (0.125 - d / 30.0)))
    } else {
        (total - d * (-d).exp()) / d
    };
    (total - w1, w1)
}
