//! Constant-energy characteristics of `sinφ ∂_η − F cosφ ∂_φ`.
//!
//! Along a characteristic `cosφ·e^{V(η)}` is conserved. Writing it through an anchor point
//! `(η₀, φ₀)` gives `sin²φ(η) = sin²φ₀ − cos²φ₀·expm1(2(V(η₀) − V(η)))`, which stays accurate
//! near grazing where `1 − E²` would cancel.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::force::{ForceProfile, Orientation};
use crate::quad;

/// Phase point `(η, φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharPoint {
    pub eta: f64,
    pub phi: f64,
}

impl CharPoint {
    pub fn new(eta: f64, phi: f64) -> Self {
        Self { eta, phi }
    }
}

/// Case split of the slab solution formulas by the sign of `sinφ` and `|E|` against 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseTag {
    /// `sinφ > 0`, `|E| ≤ 1`: backward characteristic reaches `η = 0`.
    I,
    /// `sinφ > 0`, `|E| > 1`: backward characteristic turns and is trapped.
    II,
    /// `sinφ < 0`, `|E| > 1`: trapped after reflection at the slab end.
    III,
    /// `sinφ < 0`, `|E| ≤ 1`: reflected at the slab end, then reaches `η = 0`.
    IV,
}

/// Below this `|sinφ|` the attenuation integral switches to `sinφ` as the variable.
const SWITCH_SIN: f64 = 0.1;
const QUAD_TOL: f64 = 1e-13;

/// One constant-energy curve, anchored at a phase point.
#[derive(Debug, Clone)]
pub struct Characteristic<'a> {
    profile: &'a ForceProfile,
    v0: f64,
    s0: f64,
    c0: f64,
    cos_sign: f64,
    turn: Option<f64>,
}

impl<'a> Characteristic<'a> {
    pub fn through(profile: &'a ForceProfile, eta: f64, phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        let mut ch = Self {
            profile,
            v0: profile.potential(eta),
            s0: s * s,
            c0: c * c,
            cos_sign: if c < 0.0 { -1.0 } else { 1.0 },
            turn: None,
        };
        ch.turn = ch.find_turning();
        ch
    }

    pub fn profile(&self) -> &ForceProfile {
        self.profile
    }

    /// `|E| = |cosφ₀|·e^{V(η₀)}`.
    pub fn energy_abs(&self) -> f64 {
        self.c0.sqrt() * self.v0.exp()
    }

    /// Signed energy.
    pub fn energy(&self) -> f64 {
        self.cos_sign * self.energy_abs()
    }

    /// `sin²φ` on the curve at `η`; negative where the curve does not reach.
    #[inline]
    pub fn sin2_at(&self, eta: f64) -> f64 {
        if self.profile.is_flat() {
            return self.s0;
        }
        let dv = self.v0 - self.profile.potential(eta);
        self.s0 - self.c0 * (2.0 * dv).exp_m1()
    }

    /// `|sinφ|` at `η` (clamped at 0).
    #[inline]
    pub fn sin_abs(&self, eta: f64) -> f64 {
        self.sin2_at(eta).max(0.0).sqrt()
    }

    /// Angle on the curve at `η` on the branch with `sign(sinφ) = branch`.
    pub fn angle_at(&self, eta: f64, branch: f64) -> f64 {
        let s = self.sin_abs(eta);
        let c = if self.profile.is_flat() {
            self.c0.sqrt()
        } else {
            (self.c0.sqrt() * (self.v0 - self.profile.potential(eta)).exp()).min(1.0)
        };
        (branch * s).atan2(self.cos_sign * c)
    }

    pub fn reaches(&self, eta: f64) -> bool {
        self.sin2_at(eta) >= -1e-13
    }

    /// Where `sinφ = 0` on this curve, if anywhere in `η ≥ 0`.
    ///
    /// Concave walls turn below the anchor (`V(η⁺) = ln|E| ≥ 0`); convex walls turn above it.
    pub fn turning_eta(&self) -> Option<f64> {
        self.turn
    }

    fn find_turning(&self) -> Option<f64> {
        let orientation = self.profile.orientation()?;
        if self.c0 == 0.0 {
            return None;
        }
        let target = self.v0 - 0.5 * (self.s0 / self.c0).ln_1p();
        match orientation {
            Orientation::Inner => (target >= 0.0).then(|| self.profile.potential_inverse(target)),
            Orientation::Outer => {
                let vinf = self.profile.potential_limit();
                (target > vinf).then(|| self.profile.potential_inverse(target))
            }
        }
    }

    /// `η` on the curve where `|sinφ| = sigma`, searched in `[lo, hi]`.
    fn eta_at_sin(&self, sigma: f64, lo: f64, hi: f64) -> f64 {
        let target = self.v0 - 0.5 * ((self.s0 - sigma * sigma) / self.c0).ln_1p();
        self.profile.potential_inverse(target).clamp(lo, hi)
    }

    /// `∫_a^b dη / |sinφ(η)|` for `a ≤ b` inside the reachable part of the curve.
    pub fn tau(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        if self.profile.is_flat() {
            return (b - a) / self.s0.sqrt();
        }
        let end = self.profile.support_end();
        let plateau = 2.0 / 3.0 * end;
        let mut cuts = vec![a];
        for c in [plateau, end] {
            if c > a && c < b {
                cuts.push(c);
            }
        }
        cuts.push(b);
        cuts.windows(2).map(|w| self.tau_piece(w[0], w[1], end)).sum()
    }

    fn tau_piece(&self, a: f64, b: f64, end: f64) -> f64 {
        if a >= end {
            return (b - a) / self.sin_abs(a);
        }
        let at_turn = |x: f64| self.turn.is_some_and(|t| (x - t).abs() <= 1e-12 * (1.0 + t));
        let sa = if at_turn(a) { 0.0 } else { self.sin_abs(a) };
        let sb = if at_turn(b) { 0.0 } else { self.sin_abs(b) };
        let (da, db) = (self.profile.dpotential(a).abs(), self.profile.dpotential(b).abs());
        let smooth_v = da.min(db) > 1e-6 * da.max(db).max(1e-300);
        if sa.min(sb) >= SWITCH_SIN || !smooth_v || self.c0 == 0.0 {
            return quad::adaptive(|x| 1.0 / self.sin_abs(x), a, b, QUAD_TOL);
        }
        // dη/σ = dσ / ((1 − σ²)·|V'(η)|) with σ = |sinφ|
        let (lo, hi) = (sa.min(sb), sa.max(sb));
        quad::adaptive(
            |sigma| {
                let eta = self.eta_at_sin(sigma, a, b);
                1.0 / ((1.0 - sigma * sigma) * self.profile.dpotential(eta).abs())
            },
            lo,
            hi,
            QUAD_TOL,
        )
    }
}

/// `φ′ = arccos(cosφ·e^{V(η) − V(η′)}) ∈ [0, π]`, the principal angle reached at `η′`.
pub fn phi_prime(profile: &ForceProfile, phi: f64, eta: f64, eta_p: f64) -> Result<f64> {
    check_eta(eta)?;
    check_eta(eta_p)?;
    let ch = Characteristic::through(profile, eta, phi);
    if !ch.reaches(eta_p) {
        return Err(Error::Unreachable { eta, phi, target: eta_p });
    }
    Ok(ch.angle_at(eta_p, 1.0))
}

/// `η⁺` with `e^{V(η⁺)} = |E(η, φ)|`.
pub fn turning_point(profile: &ForceProfile, eta: f64, phi: f64) -> Result<f64> {
    check_eta(eta)?;
    let ch = Characteristic::through(profile, eta, phi);
    ch.turning_eta().ok_or(Error::NoTurning { energy: ch.energy_abs() })
}

/// `G = (1 + λ) ∫_{η_lo}^{η_hi} dη′ / sinφ′` along the curve through `(η_hi, φ)`.
pub fn attenuation(profile: &ForceProfile, eta_hi: f64, eta_lo: f64, phi: f64, lambda: f64) -> Result<f64> {
    check_eta(eta_lo)?;
    if eta_hi < eta_lo {
        return Err(Error::Domain(format!("eta_hi={eta_hi} below eta_lo={eta_lo}")));
    }
    let ch = Characteristic::through(profile, eta_hi, phi);
    for target in [eta_lo, eta_hi] {
        if !ch.reaches(target) {
            return Err(Error::Unreachable { eta: eta_hi, phi, target });
        }
    }
    if let Some(turn) = ch.turning_eta() {
        if turn > eta_lo + 1e-12 && turn < eta_hi - 1e-12 {
            return Err(Error::Unreachable { eta: eta_hi, phi, target: eta_lo });
        }
    }
    Ok((1.0 + lambda) * ch.tau(eta_lo, eta_hi))
}

/// Case tag of a phase point; `|E| = 1` goes to I / IV.
pub fn classify(profile: &ForceProfile, point: CharPoint) -> Result<CaseTag> {
    check_eta(point.eta)?;
    let s = point.phi.sin();
    if s == 0.0 {
        return Err(Error::Grazing { phi: point.phi });
    }
    let big = Characteristic::through(profile, point.eta, point.phi).energy_abs() > 1.0;
    Ok(match (s > 0.0, big) {
        (true, false) => CaseTag::I,
        (true, true) => CaseTag::II,
        (false, true) => CaseTag::III,
        (false, false) => CaseTag::IV,
    })
}

/// Samples of the curve through `start` over its reachable part of `[0, η_max]`.
///
/// When a turning point lies in range the samples run along one branch into the turning
/// point (which is sampled exactly) and back out along the mirror branch.
pub fn trace_curve(profile: &ForceProfile, start: CharPoint, eta_max: f64, samples: usize) -> Vec<CharPoint> {
    let samples = samples.max(2);
    let ch = Characteristic::through(profile, start.eta, start.phi);
    let branch = if start.phi.sin() < 0.0 { -1.0 } else { 1.0 };
    let turn = ch.turning_eta().filter(|t| *t >= 0.0 && *t <= eta_max);
    let orientation = profile.orientation();
    let mut out = Vec::with_capacity(samples);
    match (turn, orientation) {
        (Some(t), Some(Orientation::Inner)) => {
            // reachable part is [t, η_max]: descend on sinφ < 0, ascend on sinφ > 0
            let n1 = samples / 2;
            let n2 = samples - n1;
            for k in 0..n1 {
                let eta = eta_max - (eta_max - t) * k as f64 / n1 as f64;
                out.push(CharPoint::new(eta, ch.angle_at(eta, -1.0)));
            }
            for k in 0..n2 {
                let eta = t + (eta_max - t) * k as f64 / (n2 - 1).max(1) as f64;
                out.push(CharPoint::new(eta, ch.angle_at(eta, 1.0)));
            }
        }
        (Some(t), Some(Orientation::Outer)) => {
            // reachable part is [0, t]: ascend on sinφ > 0, descend on sinφ < 0
            let n1 = samples / 2;
            let n2 = samples - n1;
            for k in 0..n1 {
                let eta = t * k as f64 / n1 as f64;
                out.push(CharPoint::new(eta, ch.angle_at(eta, 1.0)));
            }
            for k in 0..n2 {
                let eta = t - t * k as f64 / (n2 - 1).max(1) as f64;
                out.push(CharPoint::new(eta, ch.angle_at(eta, -1.0)));
            }
        }
        _ => {
            let lo = match orientation {
                Some(Orientation::Inner) => 0.0,
                _ => 0.0,
            };
            let hi = match (orientation, ch.turning_eta()) {
                (Some(Orientation::Outer), Some(t)) => t.min(eta_max),
                _ => eta_max,
            };
            for k in 0..samples {
                let eta = lo + (hi - lo) * k as f64 / (samples - 1) as f64;
                out.push(CharPoint::new(eta, ch.angle_at(eta, branch)));
            }
        }
    }
    for p in &mut out {
        if p.phi >= PI {
            p.phi -= 2.0 * PI;
        }
    }
    out
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0) {
        return Err(Error::Domain(format!("eta must be nonnegative (got {eta})")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn generic() -> ForceProfile {
        ForceProfile::generic(1.0, 0.1, 1.0).unwrap()
    }

    #[test]
    fn phi_prime_examples() {
        let flat = ForceProfile::flat();
        assert!((phi_prime(&flat, -0.7, 3.0, 1.0).unwrap() - 0.7).abs() < 1e-15);
        assert!((phi_prime(&generic(), PI / 2.0, 2.0, 0.5).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!((phi_prime(&generic(), PI / 3.0, 2.0, 0.0).unwrap() - 0.6f64.acos()).abs() < 1e-12);
        assert!(matches!(
            phi_prime(&generic(), 0.05, 5.0, 0.0),
            Err(Error::Unreachable { .. })
        ));
    }

    #[test]
    fn turning_point_examples() {
        let wide = ForceProfile::generic(1.0, 0.1, 10.0).unwrap();
        // |E| = 1.1 with V = ln(1 + 0.1 η) on the plateau
        let eta = 3.0;
        let phi = (1.1 / 1.3f64).acos();
        assert!((turning_point(&wide, eta, phi).unwrap() - 1.0).abs() < 1e-8);
        assert!(matches!(turning_point(&ForceProfile::flat(), 1.0, 0.3), Err(Error::NoTurning { .. })));
        assert!(turning_point(&generic(), 0.0, 0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn attenuation_examples() {
        let flat = ForceProfile::flat();
        let g = attenuation(&flat, 2.0, 0.5, 0.4, 0.0).unwrap();
        assert!((g - 1.5 / 0.4f64.sin()).abs() < 1e-14);
        assert_eq!(attenuation(&generic(), 1.0, 1.0, 0.4, 0.0).unwrap(), 0.0);
        let g1 = attenuation(&generic(), 6.0, 0.0, 1.0, 1.0).unwrap();
        let g0 = attenuation(&generic(), 6.0, 0.0, 1.0, 0.0).unwrap();
        assert!((g1 - 2.0 * g0).abs() < 1e-13);
    }

    #[test]
    fn attenuation_near_turning_point() {
        let g = generic();
        // curve grazing at η⁺: integrate from η⁺ up to 4
        let eta = 4.0;
        let phi = 0.3;
        let turn = turning_point(&g, eta, phi).unwrap();
        let tau = attenuation(&g, eta, turn, phi, 0.0).unwrap();
        // reference: substitute η = η⁺ + t² to remove the square-root endpoint singularity
        let ch = Characteristic::through(&g, eta, phi);
        let r = quad::adaptive(
            |t| 2.0 * t / ch.sin_abs(turn + t * t).max(1e-300),
            0.0,
            (eta - turn).sqrt(),
            1e-13,
        );
        assert!((tau - r).abs() < 1e-8 * r, "tau={tau} ref={r}");
    }

    #[test]
    fn classify_examples() {
        let flat = ForceProfile::flat();
        assert_eq!(classify(&flat, CharPoint::new(1.0, PI / 4.0)).unwrap(), CaseTag::I);
        assert_eq!(classify(&flat, CharPoint::new(1.0, -PI / 4.0)).unwrap(), CaseTag::IV);
        let wide = ForceProfile::generic(1.0, 0.1, 10.0).unwrap();
        // e^V = 1.3 at η = 3
        assert_eq!(classify(&wide, CharPoint::new(3.0, PI / 6.0)).unwrap(), CaseTag::II);
        assert_eq!(classify(&wide, CharPoint::new(3.0, -PI / 6.0)).unwrap(), CaseTag::III);
        assert!(matches!(classify(&flat, CharPoint::new(1.0, 0.0)), Err(Error::Grazing { .. })));
    }

    #[test]
    fn traced_curves() {
        let flat = ForceProfile::flat();
        let c = trace_curve(&flat, CharPoint::new(2.0, 0.8), 10.0, 20);
        assert!(c.iter().all(|p| (p.phi - 0.8).abs() < 1e-15));
        let g = generic();
        let start = CharPoint::new(8.0, 0.5);
        let e0 = g.energy(start.eta, start.phi);
        let c = trace_curve(&g, start, 10.0, 41);
        assert!(c.iter().any(|p| p.phi.sin().abs() < 1e-5));
        for p in &c {
            assert!((g.energy(p.eta, p.phi) - e0).abs() <= 1e-10 * (1.0 + e0.abs()));
        }
    }
}
