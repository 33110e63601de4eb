//! Geometric-correction force `F(η)`, its potential `V` with `V' = −F`, and the energy `cosφ·e^V`.
//!
//! The inner-circle profile `F = −εψ(εη)/(R + εη)` is concave (`F ≤ 0`, `V` nondecreasing).
//! The outer-circle profile `F = +εψ(εη)/(R − εη)` is convex (`F ≥ 0`, `V` nonincreasing).
//! On the plateau of `ψ` both potentials are `ln(1 ± εη/R)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grids::{cutoff_psi, cutoff_psi_derivative};
use crate::quad;

/// Which wall the layer sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Inner circle, concave side: `F ≤ 0`.
    Inner,
    /// Outer circle, convex side: `F ≥ 0`.
    Outer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileKind {
    Flat,
    Generic {
        radius: f64,
        epsilon: f64,
        width: f64,
        orientation: Orientation,
    },
}

/// Number of table intervals over the ramp of `ψ`.
const TABLE_INTERVALS: usize = 1024;

/// Potential on the ramp `μ ∈ [d/2, 3d/4]` (physical distance), Hermite-interpolated.
#[derive(Debug)]
struct PotentialTable {
    mu0: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForceProfile {
    kind: ProfileKind,
    table: Option<Arc<PotentialTable>>,
}

impl ForceProfile {
    pub fn flat() -> Self {
        Self { kind: ProfileKind::Flat, table: None }
    }

    /// Inner-circle profile with radius `R`, Knudsen number `ε` and annulus width `d`.
    pub fn generic(radius: f64, epsilon: f64, width: f64) -> Result<Self> {
        Self::build(radius, epsilon, width, Orientation::Inner)
    }

    /// Outer-circle profile; requires `R > 3d/4` so the denominator stays positive.
    pub fn outer(radius: f64, epsilon: f64, width: f64) -> Result<Self> {
        Self::build(radius, epsilon, width, Orientation::Outer)
    }

    fn build(radius: f64, epsilon: f64, width: f64, orientation: Orientation) -> Result<Self> {
        if !(radius > 0.0 && epsilon > 0.0 && width > 0.0) {
            return Err(Error::Domain(format!(
                "profile needs R, eps, d > 0 (R={radius}, eps={epsilon}, d={width})"
            )));
        }
        if orientation == Orientation::Outer && !(radius > 0.75 * width) {
            return Err(Error::Domain(format!(
                "outer profile needs R > 3d/4 (R={radius}, d={width})"
            )));
        }
        let sigma = sign(orientation);
        let dv = |m: f64| sigma * cutoff_psi(m, width).unwrap() / (radius + sigma * m);
        let mu0 = 0.5 * width;
        let step = 0.25 * width / TABLE_INTERVALS as f64;
        let mut values = Vec::with_capacity(TABLE_INTERVALS + 1);
        let mut slopes = Vec::with_capacity(TABLE_INTERVALS + 1);
        let mut v = (1.0 + sigma * mu0 / radius).ln();
        for k in 0..=TABLE_INTERVALS {
            let m = mu0 + k as f64 * step;
            if k > 0 {
                v += quad::fixed(dv, m - step, m, 16);
            }
            values.push(v);
            slopes.push(dv(m));
        }
        Ok(Self {
            kind: ProfileKind::Generic { radius, epsilon, width, orientation },
            table: Some(Arc::new(PotentialTable { mu0, step, values, slopes })),
        })
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, ProfileKind::Flat)
    }

    pub fn orientation(&self) -> Option<Orientation> {
        match self.kind {
            ProfileKind::Flat => None,
            ProfileKind::Generic { orientation, .. } => Some(orientation),
        }
    }

    /// First `η` beyond which the force vanishes (`∞` for the flat profile).
    pub fn support_end(&self) -> f64 {
        match self.kind {
            ProfileKind::Flat => f64::INFINITY,
            ProfileKind::Generic { epsilon, width, .. } => 0.75 * width / epsilon,
        }
    }

    /// `V(∞)`, attained at the support end.
    pub fn potential_limit(&self) -> f64 {
        match &self.table {
            None => 0.0,
            Some(t) => *t.values.last().unwrap(),
        }
    }

    /// Whether `1 ≤ e^V ≤ 4` (inner) or `1/4 ≤ e^V ≤ 1` (outer) holds for these parameters.
    pub fn potential_bound_holds(&self) -> bool {
        let v = self.potential_limit();
        v.abs() <= 4f64.ln() + 1e-15
    }

    pub fn force_at(&self, eta: f64) -> Result<f64> {
        check_eta(eta)?;
        Ok(-self.dpotential(eta))
    }

    pub fn potential_at(&self, eta: f64) -> Result<f64> {
        check_eta(eta)?;
        Ok(self.potential(eta))
    }

    pub fn energy_of(&self, eta: f64, phi: f64) -> Result<f64> {
        check_eta(eta)?;
        Ok(self.energy(eta, phi))
    }

    /// `cosφ·e^{V(η)}` without the domain check.
    #[inline]
    pub fn energy(&self, eta: f64, phi: f64) -> f64 {
        phi.cos() * self.potential(eta).exp()
    }

    /// `V(η)` for `η ≥ 0` (unchecked).
    pub fn potential(&self, eta: f64) -> f64 {
        let (radius, epsilon, width, orientation) = match self.kind {
            ProfileKind::Flat => return 0.0,
            ProfileKind::Generic { radius, epsilon, width, orientation } => (radius, epsilon, width, orientation),
        };
        let mu = epsilon * eta;
        if mu <= 0.5 * width {
            return (1.0 + sign(orientation) * mu / radius).ln();
        }
        let t = self.table.as_ref().unwrap();
        if mu >= 0.75 * width {
            return *t.values.last().unwrap();
        }
        let u = (mu - t.mu0) / t.step;
        let k = (u.floor() as usize).min(TABLE_INTERVALS - 1);
        let s = u - k as f64;
        let (y0, y1) = (t.values[k], t.values[k + 1]);
        let (d0, d1) = (t.slopes[k] * t.step, t.slopes[k + 1] * t.step);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * d0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * d1
    }

    /// `V'(η) = −F(η)` (unchecked).
    #[inline]
    pub fn dpotential(&self, eta: f64) -> f64 {
        match self.kind {
            ProfileKind::Flat => 0.0,
            ProfileKind::Generic { radius, epsilon, width, orientation } => {
                let mu = epsilon * eta;
                if mu >= 0.75 * width {
                    return 0.0;
                }
                let sigma = sign(orientation);
                let psi = if mu <= 0.5 * width { 1.0 } else { cutoff_psi(mu, width).unwrap() };
                sigma * epsilon * psi / (radius + sigma * mu)
            }
        }
    }

    /// `V''(η)`.
    pub fn d2potential(&self, eta: f64) -> f64 {
        match self.kind {
            ProfileKind::Flat => 0.0,
            ProfileKind::Generic { radius, epsilon, width, orientation } => {
                let mu = epsilon * eta;
                if mu >= 0.75 * width {
                    return 0.0;
                }
                let sigma = sign(orientation);
                let psi = cutoff_psi(mu, width).unwrap();
                let dpsi = cutoff_psi_derivative(mu, width).unwrap();
                let den = radius + sigma * mu;
                sigma * epsilon * epsilon * (dpsi / den - sigma * psi / (den * den))
            }
        }
    }

    /// Smallest `η ≥ 0` with `V(η) = v`, for `v` between `0` and `V(∞)`.
    ///
    /// Values outside that range are clamped to the nearer end.
    pub fn potential_inverse(&self, v: f64) -> f64 {
        let (radius, epsilon, width, orientation) = match self.kind {
            ProfileKind::Flat => return 0.0,
            ProfileKind::Generic { radius, epsilon, width, orientation } => (radius, epsilon, width, orientation),
        };
        let sigma = sign(orientation);
        let vinf = self.potential_limit();
        if sigma * v <= 0.0 {
            return 0.0;
        }
        if sigma * v >= sigma * vinf {
            return self.support_end();
        }
        let mu_plateau = sigma * radius * (v.exp() - 1.0);
        if mu_plateau <= 0.5 * width {
            return mu_plateau / epsilon;
        }
        // ramp: bisection on the monotone interpolant, then Newton
        let (mut lo, mut hi) = (0.5 * width / epsilon, 0.75 * width / epsilon);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if sigma * (self.potential(mid) - v) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-9 * hi {
                break;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..3 {
            let d = self.dpotential(x);
            if d == 0.0 {
                break;
            }
            let nx = x - (self.potential(x) - v) / d;
            if !(nx >= lo && nx <= hi) {
                break;
            }
            x = nx;
        }
        x
    }
}

fn sign(orientation: Orientation) -> f64 {
    match orientation {
        Orientation::Inner => 1.0,
        Orientation::Outer => -1.0,
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0) {
        return Err(Error::Domain(format!("eta must be nonnegative (got {eta})")));
    }
    Ok(())
}

/// Free-function form of [`ForceProfile::force_at`].
pub fn force_at(profile: &ForceProfile, eta: f64) -> Result<f64> {
    profile.force_at(eta)
}

/// Free-function form of [`ForceProfile::potential_at`].
pub fn potential_at(profile: &ForceProfile, eta: f64) -> Result<f64> {
    profile.potential_at(eta)
}

/// Free-function form of [`ForceProfile::energy_of`].
pub fn energy_of(profile: &ForceProfile, eta: f64, phi: f64) -> Result<f64> {
    profile.energy_of(eta, phi)
}
