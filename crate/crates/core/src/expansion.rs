//! Interior plus boundary-layer expansions for the annulus, and the experiments built on them.
//!
//! With rotationally symmetric data the interior term is `ū₀(r) = c₁ + c₂ ln r`. Each wall
//! carries a Milne layer in the stretched variable: `η₋ = (r − R₋)/ε` with the angle flipped
//! (`φ₋ = −φ`) at the inner circle, `η₊ = (R₊ − r)/ε` with the angle unchanged at the outer
//! one. The classical variant uses the flat Milne problem, the geometric variant the
//! ε-Milne problem with the curvature force of the wall.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::characteristics::{trace_curve, CharPoint};
use crate::error::{Error, Result};
use crate::force::ForceProfile;
use crate::grids::{cutoff_psi0, AngularGrid, RadialGrid, SlabGrid};
use crate::milne::{self, AngleFn, Inflow, MilneProblem, MilneSolution};
use crate::transport::{self, AnnulusProblem, Circle, TransportSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Flat Milne layers.
    Classical,
    /// ε-Milne layers with the curvature force.
    Geometric,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "classical" | "flat" => Ok(Variant::Classical),
            "geometric" | "epsilon" => Ok(Variant::Geometric),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Classical => "classical",
            Variant::Geometric => "geometric",
        })
    }
}

/// Inner-wall datum used by the experiments (`g₊ = 0` in both cases).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datum {
    /// `g₋ = cosφ`.
    Cos,
    /// `g₋ = cosφ + 2`, positive so the maximum principle pins the layer mean.
    ShiftedCos,
}

impl Datum {
    pub fn inner(self) -> AngleFn {
        match self {
            Datum::Cos => Arc::new(|p: f64| p.cos()),
            Datum::ShiftedCos => Arc::new(|p: f64| p.cos() + 2.0),
        }
    }
}

impl FromStr for Datum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cos" => Ok(Datum::Cos),
            "cos+2" | "shifted" => Ok(Datum::ShiftedCos),
            other => Err(Error::Config(format!("unknown datum '{other}'"))),
        }
    }
}

/// Grids shared by every solve at one `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub n_phi: usize,
    /// Slab length past the support of the force.
    pub slab_tail: f64,
    pub slab_h_min: f64,
    pub slab_h_max: f64,
    /// Finest radial spacing, in units of `ε`.
    pub radial_h_min: f64,
    pub radial_h_max: f64,
    pub growth: f64,
    pub tolerance: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        Self {
            n_phi: 32,
            slab_tail: 15.0,
            slab_h_min: 0.02,
            slab_h_max: 0.25,
            radial_h_min: 0.1,
            radial_h_max: 0.02,
            growth: 1.08,
            tolerance: 1e-10,
        }
    }
}

impl Resolution {
    /// Layer slab for an annulus of width `d`: the force support `3d/(4ε)` plus the tail.
    pub fn slab(&self, epsilon: f64, width: f64) -> Result<SlabGrid> {
        let length = 0.75 * width / epsilon + self.slab_tail;
        SlabGrid::graded(length, self.slab_h_min, self.growth, self.slab_h_max)
    }

    pub fn radial(&self, epsilon: f64, r_minus: f64, r_plus: f64) -> Result<RadialGrid> {
        let h_min = (self.radial_h_min * epsilon).min(self.radial_h_max);
        RadialGrid::graded(r_minus, r_plus, h_min, self.growth, self.radial_h_max)
    }

    pub fn angles(&self) -> Result<AngularGrid> {
        AngularGrid::new(self.n_phi)
    }
}

/// `(c₁, c₂)` with `c₁ + c₂ ln r` equal to `a_minus` at `r_minus` and `a_plus` at `r_plus`.
pub fn interior_order0(a_minus: f64, a_plus: f64, r_minus: f64, r_plus: f64) -> Result<(f64, f64)> {
    if !(r_minus > 0.0 && r_plus > r_minus) {
        return Err(Error::Domain(format!("degenerate annulus ({r_minus}, {r_plus})")));
    }
    let c2 = (a_plus - a_minus) / (r_plus / r_minus).ln();
    Ok((a_minus - c2 * r_minus.ln(), c2))
}

/// One wall layer with its far-field limit.
#[derive(Debug, Clone)]
pub struct Layer {
    pub circle: Circle,
    pub epsilon: f64,
    pub width: f64,
    pub solution: MilneSolution,
    pub f_inf: f64,
}

impl Layer {
    /// `f(η, φ_layer) − f_∞`.
    pub fn deviation(&self, eta: f64, phi: f64) -> Result<f64> {
        Ok(self.solution.evaluate(eta, phi)? - self.f_inf)
    }

    /// `ψ₀(εη)·(f − f_∞)` at the annulus angle `φ`; zero outside the cut-off.
    pub fn assembled(&self, eta: f64, phi: f64) -> Result<f64> {
        let cut = cutoff_psi0(self.epsilon * eta, self.width)?;
        if cut == 0.0 {
            return Ok(0.0);
        }
        let local = match self.circle {
            Circle::Inner => -phi,
            Circle::Outer => phi,
        };
        Ok(cut * self.deviation(eta, wrap(local))?)
    }
}

fn wrap(phi: f64) -> f64 {
    let t = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Force profile of the layer at `circle`.
pub fn layer_profile(variant: Variant, circle: Circle, epsilon: f64, r_minus: f64, r_plus: f64) -> Result<ForceProfile> {
    let width = r_plus - r_minus;
    match (variant, circle) {
        (Variant::Classical, _) => Ok(ForceProfile::flat()),
        (Variant::Geometric, Circle::Inner) => ForceProfile::generic(r_minus, epsilon, width),
        (Variant::Geometric, Circle::Outer) => ForceProfile::outer(r_plus, epsilon, width),
    }
}

/// Solves the layer problem at `circle` for the annulus datum `g` and no source.
pub fn boundary_layer_order0(
    variant: Variant,
    circle: Circle,
    g: AngleFn,
    epsilon: f64,
    radii: (f64, f64),
    res: &Resolution,
) -> Result<Layer> {
    let (r_minus, r_plus) = radii;
    let width = r_plus - r_minus;
    let profile = layer_profile(variant, circle, epsilon, r_minus, r_plus)?;
    let inflow = match circle {
        Circle::Inner => Inflow::function(move |p| g(-p)),
        Circle::Outer => Inflow::Function(g),
    };
    let problem = MilneProblem::new(profile, res.slab(epsilon, width)?, res.angles()?, inflow)?
        .with_tolerance(res.tolerance, 5000);
    let solution = milne::solve(&problem)?;
    let f_inf = solution.f_inf;
    Ok(Layer { circle, epsilon, width, solution, f_inf })
}

/// Order-1 pieces: the harmonic `ū₁` and the layers absorbing `sinφ·ū₀′` at the walls.
#[derive(Debug, Clone)]
pub struct Order1 {
    pub c1: f64,
    pub c2: f64,
    pub layer_minus: Layer,
    pub layer_plus: Layer,
}

#[derive(Debug, Clone)]
pub struct ExpansionBundle {
    pub variant: Variant,
    pub epsilon: f64,
    pub r_minus: f64,
    pub r_plus: f64,
    pub c1: f64,
    pub c2: f64,
    pub layer_minus: Layer,
    pub layer_plus: Layer,
    pub order1: Option<Order1>,
}

impl ExpansionBundle {
    /// Order-0 bundle for boundary data `g_minus`, `g_plus`.
    pub fn build(
        variant: Variant,
        epsilon: f64,
        g_minus: AngleFn,
        g_plus: AngleFn,
        radii: (f64, f64),
        res: &Resolution,
    ) -> Result<Self> {
        let (layer_minus, layer_plus) = rayon::join(
            || boundary_layer_order0(variant, Circle::Inner, g_minus, epsilon, radii, res),
            || boundary_layer_order0(variant, Circle::Outer, g_plus, epsilon, radii, res),
        );
        let (layer_minus, layer_plus) = (layer_minus?, layer_plus?);
        let (c1, c2) = interior_order0(layer_minus.f_inf, layer_plus.f_inf, radii.0, radii.1)?;
        Ok(Self {
            variant,
            epsilon,
            r_minus: radii.0,
            r_plus: radii.1,
            c1,
            c2,
            layer_minus,
            layer_plus,
            order1: None,
        })
    }

    pub fn interior(&self, r: f64) -> f64 {
        self.c1 + self.c2 * r.ln()
    }

    /// `ū₀′(r)`.
    pub fn interior_slope(&self, r: f64) -> f64 {
        self.c2 / r
    }

    /// Interior value minus layer limit at each wall; zero by construction.
    pub fn matching_defect(&self) -> (f64, f64) {
        (
            self.interior(self.r_minus) - self.layer_minus.f_inf,
            self.interior(self.r_plus) - self.layer_plus.f_inf,
        )
    }

    /// Adds the order-1 terms (see [`interior_order1`]).
    pub fn with_order1(mut self, res: &Resolution) -> Result<Self> {
        self.order1 = Some(interior_order1(&self, res)?);
        Ok(self)
    }
}

/// Order-1 terms for rotationally symmetric data: `u₁ = ū₁ + sinφ ū₀′(r)`, with layers whose
/// in-flow cancels the wall value of `sinφ ū₀′` and with `ū₁` harmonic matching their limits.
pub fn interior_order1(bundle: &ExpansionBundle, res: &Resolution) -> Result<Order1> {
    let radii = (bundle.r_minus, bundle.r_plus);
    let (dm, dp) = (bundle.interior_slope(bundle.r_minus), bundle.interior_slope(bundle.r_plus));
    // annulus angles: the wall value −sinφ·ū₀′ is handed to the layer solver in its own frame
    let g_minus: AngleFn = Arc::new(move |p: f64| -p.sin() * dm);
    let g_plus: AngleFn = Arc::new(move |p: f64| -p.sin() * dp);
    let (eps, variant) = (bundle.epsilon, bundle.variant);
    let (lm, lp) = rayon::join(
        || boundary_layer_order0(variant, Circle::Inner, g_minus, eps, radii, res),
        || boundary_layer_order0(variant, Circle::Outer, g_plus, eps, radii, res),
    );
    let (layer_minus, layer_plus) = (lm?, lp?);
    let (c1, c2) = interior_order0(layer_minus.f_inf, layer_plus.f_inf, radii.0, radii.1)?;
    Ok(Order1 { c1, c2, layer_minus, layer_plus })
}

/// `ū₀(r) + u_B,−(η₋, −φ) + u_B,+(η₊, φ)`, plus `ε·(u₁ + order-1 layers)` when present.
pub fn composite(bundle: &ExpansionBundle, r: f64, phi: f64) -> Result<f64> {
    let (rm, rp, eps) = (bundle.r_minus, bundle.r_plus, bundle.epsilon);
    if !(r >= rm && r <= rp) {
        return Err(Error::Domain(format!("r={r} outside [{rm}, {rp}]")));
    }
    let (em, ep) = ((r - rm) / eps, (rp - r) / eps);
    let mut v = bundle.interior(r) + bundle.layer_minus.assembled(em, phi)? + bundle.layer_plus.assembled(ep, phi)?;
    if let Some(o) = &bundle.order1 {
        let u1 = o.c1 + o.c2 * r.ln() + phi.sin() * bundle.interior_slope(r);
        v += eps * (u1 + o.layer_minus.assembled(em, phi)? + o.layer_plus.assembled(ep, phi)?);
    }
    Ok(v)
}

/// `sup |u^ε − composite|` over the transport grid.
pub fn composite_error(solution: &TransportSolution, bundle: &ExpansionBundle) -> Result<f64> {
    let u = &solution.u;
    let rows: Vec<(usize, f64)> = u.rows().iter().copied().enumerate().collect();
    let errs: Vec<f64> = rows
        .par_iter()
        .map(|&(i, r)| {
            let mut m = 0.0f64;
            for (j, &p) in u.cols().iter().enumerate() {
                m = m.max((u.get(i, j) - composite(bundle, r, p)?).abs());
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

/// Generic row: one reported quantity against its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub epsilon: f64,
    pub quantity: String,
    pub value: f64,
    pub reference: f64,
    pub discrepancy: f64,
}

impl ReportRow {
    pub fn new(epsilon: f64, quantity: &str, value: f64, reference: f64) -> Self {
        Self { epsilon, quantity: quantity.to_string(), value, reference, discrepancy: (value - reference).abs() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub sup_error: f64,
    /// Least-squares slope of `ln E` against `ln ε` over the whole study.
    pub fitted_order: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleRow {
    pub epsilon: f64,
    pub u_num: f64,
    pub big_u_num: f64,
    pub u_pred: f64,
    pub big_u_pred: f64,
    pub discrepancy: f64,
}

impl ConvergenceRow {
    pub fn report(&self) -> Vec<ReportRow> {
        vec![ReportRow::new(self.epsilon, "sup_error", self.sup_error, 0.0)]
    }
}

impl CounterexampleRow {
    pub fn report(&self) -> Vec<ReportRow> {
        vec![
            ReportRow::new(self.epsilon, "u", self.u_num, self.u_pred),
            ReportRow::new(self.epsilon, "U", self.big_u_num, self.big_u_pred),
            ReportRow::new(self.epsilon, "U-u", self.big_u_num, self.u_num),
        ]
    }
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn fitted_order(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension { expected: xs.len(), got: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::Precondition("an order fit needs at least two points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::Numerical("order fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Annulus solve at one `ε` for the configured data.
pub fn annulus_solution(config: &ExperimentConfig, epsilon: f64) -> Result<TransportSolution> {
    let res = config.resolution();
    let problem = AnnulusProblem::new(
        epsilon,
        config.datum.inner(),
        Arc::new(|_| 0.0),
        res.radial(epsilon, config.r_minus, config.r_plus)?,
        res.angles()?,
    )?
    .with_tolerance(config.tolerance, 5000);
    transport::solve(&problem)
}

/// Bundle at one `ε` for the configured data and variant.
pub fn expansion(config: &ExperimentConfig, epsilon: f64) -> Result<ExpansionBundle> {
    ExpansionBundle::build(
        config.variant,
        epsilon,
        config.datum.inner(),
        Arc::new(|_| 0.0),
        (config.r_minus, config.r_plus),
        &config.resolution(),
    )
}

/// Sup error of the composite against the annulus solution for every `ε`, with the fitted order.
pub fn convergence_study(config: &ExperimentConfig) -> Result<Vec<ConvergenceRow>> {
    config.validate()?;
    let errors: Vec<f64> = config
        .epsilons
        .par_iter()
        .map(|&eps| {
            let (sol, bundle) = rayon::join(|| annulus_solution(config, eps), || expansion(config, eps));
            composite_error(&sol?, &bundle?)
        })
        .collect::<Result<_>>()?;
    let order = if errors.len() >= 2 { fitted_order(&config.epsilons, &errors)? } else { f64::NAN };
    Ok(config
        .epsilons
        .iter()
        .zip(&errors)
        .map(|(&epsilon, &sup_error)| ConvergenceRow { epsilon, sup_error, fitted_order: order })
        .collect())
}

/// Fails with a property error unless the errors decrease and the fitted order reaches `min_order`.
pub fn assess_convergence(rows: &[ConvergenceRow], min_order: f64) -> Result<()> {
    for w in rows.windows(2) {
        if !(w[1].sup_error < w[0].sup_error) {
            return Err(Error::Property(format!(
                "error does not decrease from eps={} ({}) to eps={} ({})",
                w[0].epsilon, w[0].sup_error, w[1].epsilon, w[1].sup_error
            )));
        }
    }
    if let Some(r) = rows.first() {
        if !(r.fitted_order >= min_order) {
            return Err(Error::Property(format!("fitted order {} below {min_order}", r.fitted_order)));
        }
    }
    Ok(())
}

/// Closed-form values at `(η, φ) = (nε, ε)`:
/// `u ≈ (1 − e^{−n}) ū(0) + e^{−n} G(ε)` and
/// `U ≈ (1 − e^{√(1−2n)−1}) Ū(0) + e^{√(1−2n)−1} G(√(1−2n) ε)`.
pub fn grazing_predictions(n: f64, epsilon: f64, q_flat0: f64, q_geo0: f64, g: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let wf = (-n).exp();
    let k = (1.0 - 2.0 * n).sqrt();
    let wg = (k - 1.0).exp();
    ((1.0 - wf) * q_flat0 + wf * g(epsilon), (1.0 - wg) * q_geo0 + wg * g(k * epsilon))
}

/// Flat and ε-Milne layers at the inner wall with `G = cosφ + 2`, compared at `(nε, ε)`.
///
/// The geometric layer uses `R = r_minus` and width `r_plus − r_minus`.
pub fn counterexample_experiment(config: &ExperimentConfig) -> Result<Vec<CounterexampleRow>> {
    config.validate()?;
    let n = config.n_grazing;
    let res = config.resolution();
    let g = |p: f64| p.cos() + 2.0;
    config
        .epsilons
        .par_iter()
        .map(|&eps| {
            let radii = (config.r_minus, config.r_plus);
            let garc: AngleFn = Arc::new(g);
            let (flat, geo) = rayon::join(
                || boundary_layer_order0(Variant::Classical, Circle::Inner, garc.clone(), eps, radii, &res),
                || boundary_layer_order0(Variant::Geometric, Circle::Inner, garc.clone(), eps, radii, &res),
            );
            let (flat, geo) = (flat?, geo?);
            let (eta, phi) = (n * eps, eps);
            let u = flat.solution.evaluate(eta, phi)?;
            let big_u = geo.solution.evaluate(eta, phi)?;
            let (up, bup) = grazing_predictions(n, eps, flat.solution.q[0], geo.solution.q[0], &g);
            Ok(CounterexampleRow {
                epsilon: eps,
                u_num: u,
                big_u_num: big_u,
                u_pred: up,
                big_u_pred: bup,
                discrepancy: (big_u - u).abs(),
            })
        })
        .collect()
}

/// Fails unless `D ≥ d_min` everywhere, `D` does not decay by more than `ratio`, and the
/// predictions agree with the numerics to `0.02 + 5ε`.
pub fn assess_counterexample(rows: &[CounterexampleRow], d_min: f64, ratio: f64) -> Result<()> {
    for r in rows {
        if !(r.discrepancy >= d_min) {
            return Err(Error::Property(format!("D({}) = {} below {d_min}", r.epsilon, r.discrepancy)));
        }
        let tol = 0.02 + 5.0 * r.epsilon;
        let (du, dbu) = ((r.u_num - r.u_pred).abs(), (r.big_u_num - r.big_u_pred).abs());
        if !(du <= tol && dbu <= tol) {
            return Err(Error::Property(format!(
                "prediction mismatch at eps={}: |u − u_pred| = {du}, |U − U_pred| = {dbu}, allowed {tol}",
                r.epsilon
            )));
        }
    }
    for w in rows.windows(2) {
        if !(w[1].discrepancy >= ratio * w[0].discrepancy) {
            return Err(Error::Property(format!(
                "D drops from {} to {} between eps={} and eps={}",
                w[0].discrepancy, w[1].discrepancy, w[0].epsilon, w[1].epsilon
            )));
        }
    }
    Ok(())
}

/// One sampled point of an emitted characteristic.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSample {
    pub family: String,
    pub curve: usize,
    pub eta: f64,
    pub phi: f64,
    pub energy: f64,
}

/// Curve families over a fan of starting angles: flat, generic (inner wall), and the
/// reversed orientation (outer wall). Uses the first `ε`, `R = r_minus` for the generic family,
/// `R = r_plus` for the reversed one, and `η ∈ [0, slab_length]`.
pub fn emit_characteristics(config: &ExperimentConfig) -> Result<Vec<CurveSample>> {
    config.validate()?;
    let eps = config.epsilons[0];
    let width = config.r_plus - config.r_minus;
    let families = [
        ("flat", ForceProfile::flat()),
        ("generic", ForceProfile::generic(config.r_minus, eps, width)?),
        ("reversed", ForceProfile::outer(config.r_plus, eps, width)?),
    ];
    let eta_max = config.slab_length;
    let fan = config.n_phi.max(2);
    let samples = config.n_eta.max(3);
    let mut out = Vec::new();
    for (name, profile) in &families {
        for k in 0..fan {
            // angles in (0, π/2) and their mirrors, avoiding exact grazing
            let t = (k as f64 + 0.5) / fan as f64;
            let phi = if k % 2 == 0 { t * PI / 2.0 } else { -t * PI / 2.0 };
            let start = CharPoint::new(0.5 * eta_max, phi);
            for p in trace_curve(profile, start, eta_max, samples) {
                out.push(CurveSample {
                    family: name.to_string(),
                    curve: k,
                    eta: p.eta,
                    phi: p.phi,
                    energy: profile.energy(p.eta, p.phi),
                });
            }
        }
    }
    Ok(out)
}

/// Experiment description, read from `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub r_minus: f64,
    pub r_plus: f64,
    /// Positive and strictly decreasing.
    pub epsilons: Vec<f64>,
    /// Grazing parameter `n ∈ (0, 1/2]`.
    pub n_grazing: f64,
    /// Nodes of a reference slab of length `slab_length`; sets the coarsest layer spacing.
    pub n_eta: usize,
    pub n_phi: usize,
    /// Interior radial nodes; sets the coarsest radial spacing.
    pub n_r: usize,
    pub slab_length: f64,
    pub tolerance: f64,
    pub variant: Variant,
    pub datum: Datum,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            r_minus: 1.0,
            r_plus: 2.0,
            epsilons: vec![0.1, 0.05, 0.025],
            n_grazing: 0.5,
            n_eta: 61,
            n_phi: 32,
            n_r: 51,
            slab_length: 15.0,
            tolerance: 1e-10,
            variant: Variant::Geometric,
            datum: Datum::Cos,
            output: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            c.set(key.trim(), value.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key; used by the parser and by command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
        }
        match key {
            "r_minus" => self.r_minus = num(key, value)?,
            "r_plus" => self.r_plus = num(key, value)?,
            "epsilon_list" => {
                self.epsilons = value
                    .split(|ch: char| ch == ',' || ch.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_>>()?
            }
            "n_grazing" => self.n_grazing = num(key, value)?,
            "n_eta" => self.n_eta = num(key, value)?,
            "n_phi" => self.n_phi = num(key, value)?,
            "n_r" => self.n_r = num(key, value)?,
            "slab_length" => self.slab_length = num(key, value)?,
            "tolerance" => self.tolerance = num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "datum" => self.datum = value.parse()?,
            "output" => self.output = (!value.is_empty()).then(|| PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_minus > 0.0 && self.r_plus > self.r_minus) {
            return Err(Error::Config(format!("need 0 < r_minus < r_plus ({}, {})", self.r_minus, self.r_plus)));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(Error::Config("epsilon_list must hold values in (0, 1]".into()));
        }
        if self.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config("epsilon_list must be strictly decreasing".into()));
        }
        if !(self.n_grazing > 0.0 && self.n_grazing <= 0.5) {
            return Err(Error::Config(format!("n_grazing must lie in (0, 1/2] (got {})", self.n_grazing)));
        }
        if self.n_phi < 2 || !self.n_phi.is_multiple_of(2) {
            return Err(Error::Config(format!("n_phi must be even and at least 2 (got {})", self.n_phi)));
        }
        if self.n_eta < 3 || self.n_r < 3 {
            return Err(Error::Config("n_eta and n_r must be at least 3".into()));
        }
        if !(self.slab_length > 0.0) {
            return Err(Error::Config("slab_length must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Grids implied by the counts: the coarsest spacings are set by `n_eta` and `n_r`, and
    /// both grids are refined geometrically toward the walls.
    pub fn resolution(&self) -> Resolution {
        let slab_h_max = self.slab_length / (self.n_eta - 1) as f64;
        Resolution {
            n_phi: self.n_phi,
            slab_tail: self.slab_length,
            slab_h_min: slab_h_max / 10.0,
            slab_h_max,
            radial_h_min: 0.1,
            radial_h_max: (self.r_plus - self.r_minus) / (self.n_r - 1) as f64,
            growth: 1.08,
            tolerance: self.tolerance,
        }
    }
}

/// Fails unless every flat curve keeps its angle, every curve conserves energy to `1e−9`,
/// and some generic curve passes a turning point (`|sinφ| < 1e−3`).
pub fn assess_characteristics(rows: &[CurveSample]) -> Result<()> {
    let mut first: Option<(&str, usize, f64, f64)> = None;
    let mut turning = false;
    for r in rows {
        match first {
            Some((f, c, _, _)) if f == r.family && c == r.curve => {}
            _ => first = Some((&r.family, r.curve, r.phi, r.energy)),
        }
        let (_, _, phi0, e0) = first.unwrap();
        if r.family == "flat" && (r.phi - phi0).abs() > 1e-12 {
            return Err(Error::Property(format!("flat curve {} changes angle", r.curve)));
        }
        if (r.energy - e0).abs() > 1e-9 * e0.abs().max(1.0) {
            return Err(Error::Property(format!("{} curve {} drifts in energy", r.family, r.curve)));
        }
        if r.family == "generic" && r.eta > 0.0 && r.phi.sin().abs() < 1e-3 {
            turning = true;
        }
    }
    if !turning {
        return Err(Error::Property("no generic curve reaches a turning point".into()));
    }
    Ok(())
}

/// Single layer solve at the first `ε`: the inner wall with the configured variant and datum.
pub fn milne_run(config: &ExperimentConfig) -> Result<MilneSolution> {
    config.validate()?;
    let layer = boundary_layer_order0(
        config.variant,
        Circle::Inner,
        config.datum.inner(),
        config.epsilons[0],
        (config.r_minus, config.r_plus),
        &config.resolution(),
    )?;
    Ok(layer.solution)
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn write_convergence<W: Write>(w: W, rows: &[ConvergenceRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["epsilon", "sup_error", "fitted_order"])?;
    for r in rows {
        out.write_record([fmt(r.epsilon), fmt(r.sup_error), fmt(r.fitted_order)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_counterexample<W: Write>(w: W, rows: &[CounterexampleRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["epsilon", "u_num", "U_num", "u_pred", "U_pred", "discrepancy"])?;
    for r in rows {
        out.write_record([
            fmt(r.epsilon),
            fmt(r.u_num),
            fmt(r.big_u_num),
            fmt(r.u_pred),
            fmt(r.big_u_pred),
            fmt(r.discrepancy),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_characteristics<W: Write>(w: W, rows: &[CurveSample]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["family", "curve", "eta", "phi", "energy"])?;
    for r in rows {
        out.write_record([r.family.clone(), r.curve.to_string(), fmt(r.eta), fmt(r.phi), fmt(r.energy)])?;
    }
    out.flush()?;
    Ok(())
}

/// Columns `eta, phi, f, q, r` over every slab node and ordinate.
pub fn write_milne_dump<W: Write>(w: W, solution: &MilneSolution) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["eta", "phi", "f", "q", "r"])?;
    let f = &solution.f;
    for (i, &eta) in f.rows().iter().enumerate() {
        for (j, &phi) in f.cols().iter().enumerate() {
            out.write_record([fmt(eta), fmt(phi), fmt(f.get(i, j)), fmt(solution.q[i]), fmt(solution.r.get(i, j))])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Columns `r, phi, u, u_bar` over every radial node and ordinate.
pub fn write_transport_dump<W: Write>(w: W, solution: &TransportSolution) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["r", "phi", "u", "u_bar"])?;
    let u = &solution.u;
    for (i, &r) in u.rows().iter().enumerate() {
        for (j, &phi) in u.cols().iter().enumerate() {
            out.write_record([fmt(r), fmt(phi), fmt(u.get(i, j)), fmt(solution.u_bar[i])])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_report<W: Write>(w: W, rows: &[ReportRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["epsilon", "quantity", "value", "reference", "discrepancy"])?;
    for r in rows {
        out.write_record([fmt(r.epsilon), r.quantity.clone(), fmt(r.value), fmt(r.reference), fmt(r.discrepancy)])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_examples() {
        let (c1, c2) = interior_order0(1.0, 0.0, 1.0, 2.0).unwrap();
        assert!((c1 + c2 * 2f64.sqrt().ln() - 0.5).abs() < 1e-15);
        let (c1, c2) = interior_order0(3.0, 3.0, 1.0, 2.0).unwrap();
        assert_eq!((c1, c2), (3.0, 0.0));
        assert!(interior_order0(1.0, 0.0, 1.5, 1.5).is_err());
    }

    #[test]
    fn interior_is_discretely_harmonic() {
        // (r u')' / r by central differences shrinks like h²
        let (c1, c2) = interior_order0(1.0, 0.0, 1.0, 2.0).unwrap();
        let u = |r: f64| c1 + c2 * r.ln();
        let lap = |h: f64| {
            let r = 1.37;
            let (up, um) = ((r + h / 2.0) * (u(r + h) - u(r)) / h, (r - h / 2.0) * (u(r) - u(r - h)) / h);
            ((up - um) / h / r).abs()
        };
        assert!(lap(0.01) < 1e-3);
        assert!(lap(0.005) < 0.3 * lap(0.01) + 1e-9);
    }

    #[test]
    fn config_round_trip() {
        let c = ExperimentConfig::parse(
            "r_minus = 1\nr_plus=3 # outer\nepsilon_list = 0.2, 0.1\nvariant = classical\nn_phi=16\noutput=out.csv\n",
        )
        .unwrap();
        assert_eq!(c.r_plus, 3.0);
        assert_eq!(c.epsilons, vec![0.2, 0.1]);
        assert_eq!(c.variant, Variant::Classical);
        assert_eq!(c.output, Some(PathBuf::from("out.csv")));
        assert!(ExperimentConfig::parse("epsilon_list = 0.1, 0.2").is_err());
        assert!(ExperimentConfig::parse("n_grazing = 0.7").is_err());
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("r_minus 1").is_err());
    }

    #[test]
    fn predictions_use_distinct_weights() {
        let (u, uu) = grazing_predictions(0.5, 0.0, 0.0, 0.0, &|_| 1.0);
        assert!((u - 0.606531).abs() < 1e-6);
        assert!((uu - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn constant_bundle_is_constant() {
        let res = Resolution { n_phi: 8, slab_h_min: 0.1, slab_h_max: 0.5, ..Resolution::default() };
        for variant in [Variant::Classical, Variant::Geometric] {
            let c: AngleFn = Arc::new(|_| 1.5);
            let b = ExpansionBundle::build(variant, 0.2, c.clone(), c, (1.0, 2.0), &res).unwrap();
            let (a, z) = b.matching_defect();
            assert!(a.abs() <= 1e-12 && z.abs() <= 1e-12);
            for r in [1.0, 1.01, 1.3, 1.99, 2.0] {
                for p in [-2.5, -0.3, 0.2, 1.7] {
                    assert!((composite(&b, r, p).unwrap() - 1.5).abs() < 1e-12, "{variant} r={r} p={p}");
                }
            }
        }
    }

    #[test]
    fn composite_reproduces_inflow_at_the_wall() {
        let res = Resolution { n_phi: 16, slab_h_min: 0.05, slab_h_max: 0.5, ..Resolution::default() };
        let b = ExpansionBundle::build(
            Variant::Geometric,
            0.1,
            Arc::new(|p: f64| p.cos() + 2.0),
            Arc::new(|_| 0.0),
            (1.0, 2.0),
            &res,
        )
        .unwrap();
        for p in [-2.9, -1.6, -0.4] {
            let v = composite(&b, 1.0, p).unwrap();
            // outer layer has died out at the inner wall
            assert!((v - (p.cos() + 2.0)).abs() < 1e-9, "p={p} v={v}");
        }
    }

    #[test]
    fn emitted_families_pass_their_checks() {
        let c = ExperimentConfig { n_phi: 12, n_eta: 41, ..ExperimentConfig::default() };
        let rows = emit_characteristics(&c).unwrap();
        assess_characteristics(&rows).unwrap();
        for fam in ["flat", "generic", "reversed"] {
            assert!(rows.iter().any(|r| r.family == fam));
        }
    }

    #[test]
    fn wrap_stays_in_range() {
        for p in [-PI, -3.0, 0.0, 3.0, PI - 1e-12, 4.0, -7.0] {
            let w = wrap(p);
            assert!((-PI..PI).contains(&w));
            let k = (p - w) / (2.0 * PI);
            assert!((k - k.round()).abs() < 1e-12);
        }
    }
}
