//! Randomized invariants of the grids, the force, the characteristics and the solvers.

use std::f64::consts::PI;
use std::sync::Arc;

use kinetic_layer::characteristics::{attenuation, phi_prime, trace_curve, CharPoint, Characteristic};
use kinetic_layer::expansion::{self as ex, composite, Resolution, Variant};
use kinetic_layer::force::ForceProfile;
use kinetic_layer::grids::{self, cutoff_psi, cutoff_psi0, AngularGrid, RadialGrid, SlabGrid};
use kinetic_layer::milne::{self, Inflow, Method, MilneProblem};
use kinetic_layer::transport::{self, AnnulusProblem, Circle};
use proptest::prelude::*;

fn generic_profile() -> impl Strategy<Value = ForceProfile> {
    (0.5f64..3.0, 0.02f64..0.3, 0.3f64..1.5).prop_map(|(r, e, d)| ForceProfile::generic(r, e, d).unwrap())
}

fn any_profile() -> impl Strategy<Value = ForceProfile> {
    prop_oneof![
        Just(ForceProfile::flat()),
        generic_profile(),
        (0.8f64..3.0, 0.02f64..0.3, 0.3f64..1.0).prop_map(|(r, e, d)| ForceProfile::outer(r, e, d).unwrap()),
    ]
}

/// `a₀ + Σ_{k≤3} (a_k cos kφ + b_k sin kφ)`.
fn trig_inflow() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 7)
}

fn trig(c: &[f64], p: f64) -> f64 {
    c[0] + (1..=3).map(|k| c[2 * k - 1] * (k as f64 * p).cos() + c[2 * k] * (k as f64 * p).sin()).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn midpoint_rule_kills_trig_modes(half in 2usize..40, kfrac in 0.0f64..1.0) {
        let n = 2 * half;
        let k = 1 + ((half - 1) as f64 * kfrac) as usize;
        let g = AngularGrid::new(n).unwrap();
        let c: Vec<f64> = g.nodes().iter().map(|p| (k as f64 * p).cos()).collect();
        let s: Vec<f64> = g.nodes().iter().map(|p| (k as f64 * p).sin()).collect();
        prop_assert!(g.integrate(&c).unwrap().abs() < 1e-12);
        prop_assert!(g.integrate(&s).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cutoffs_nest_and_stay_in_range(t in 0.0f64..1.2, dt in 0.0f64..0.1, d in 0.1f64..5.0) {
        let mu = t * d;
        let (p, p0) = (cutoff_psi(mu, d).unwrap(), cutoff_psi0(mu, d).unwrap());
        prop_assert_eq!(p0 * p, p0);
        prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&p0));
        prop_assert!(cutoff_psi(mu + dt * d, d).unwrap() <= p);
        prop_assert!(cutoff_psi0(mu + dt * d, d).unwrap() <= p0);
    }

    #[test]
    fn potential_derivative_is_minus_force(profile in any_profile(), t in 0.0f64..1.2) {
        let eta = t * if profile.is_flat() { 10.0 } else { profile.support_end() };
        let h = 1e-4 * (1.0 + eta);
        let fd = (profile.potential(eta + h) - profile.potential((eta - h).max(0.0))) / (eta + h - (eta - h).max(0.0));
        prop_assert!((fd + profile.force_at(eta).unwrap()).abs() < 1e-6, "fd={fd}");
    }

    #[test]
    fn potential_freezes_past_support(profile in generic_profile(), extra in 0.0f64..50.0) {
        let end = profile.support_end();
        prop_assert_eq!(profile.potential(end + extra), profile.potential_limit());
        prop_assert!(profile.potential_limit().exp() <= 4.0 || !profile.potential_bound_holds());
    }

    #[test]
    fn energy_bounded_by_potential(profile in any_profile(), eta in 0.0f64..40.0, phi in -PI..PI) {
        let e = profile.energy(eta, phi).abs();
        let ev = profile.potential(eta).exp();
        prop_assert!(e <= ev * (1.0 + 1e-15));
        let at_grazing = profile.energy(eta, 0.0).abs();
        prop_assert!((at_grazing - ev).abs() <= 1e-15 * ev);
    }

    #[test]
    fn traced_curves_conserve_energy(profile in any_profile(), eta in 0.0f64..30.0, phi in -PI..PI) {
        prop_assume!(phi.sin().abs() > 1e-6);
        let pts = trace_curve(&profile, CharPoint::new(eta, phi), 40.0, 64);
        let e0 = profile.energy(pts[0].eta, pts[0].phi);
        for p in &pts {
            let e = profile.energy(p.eta, p.phi);
            prop_assert!((e - e0).abs() <= 1e-10 * e0.abs().max(1e-300), "drift {}", (e - e0).abs());
        }
    }

    #[test]
    fn flat_curves_are_straight(eta in 0.0f64..30.0, phi in -PI..PI) {
        let pts = trace_curve(&ForceProfile::flat(), CharPoint::new(eta, phi), 30.0, 16);
        prop_assert!(pts.iter().all(|p| p.phi == pts[0].phi));
    }

    #[test]
    fn phi_prime_reciprocity(profile in any_profile(), eta in 0.0f64..30.0, eta_p in 0.0f64..30.0, phi in -PI..PI) {
        let Ok(there) = phi_prime(&profile, phi, eta, eta_p) else { return Ok(()) };
        let back = phi_prime(&profile, there, eta_p, eta).unwrap();
        prop_assert!((back - phi.abs()).abs() < 1e-10, "back={back}");
    }

    #[test]
    fn attenuation_is_additive(profile in generic_profile(), a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, phi in 0.05f64..(PI - 0.05)) {
        let span = profile.support_end() * 1.3;
        let mut t = [a * span, b * span, c * span];
        t.sort_by(f64::total_cmp);
        let [e0, e1, e2] = t;
        let ch = Characteristic::through(&profile, e2, phi);
        prop_assume!(ch.sin_abs(e0) > 1e-3);
        prop_assume!(ch.turning_eta().is_none_or(|x| x < e0));
        let phi1 = phi_prime(&profile, phi, e2, e1).unwrap();
        let whole = attenuation(&profile, e2, e0, phi, 0.0).unwrap();
        let parts = attenuation(&profile, e2, e1, phi, 0.0).unwrap() + attenuation(&profile, e1, e0, phi1, 0.0).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-8 * whole.max(1.0), "{whole} vs {parts}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn milne_maximum_principle(c in trig_inflow(), geometric in any::<bool>()) {
        let profile = if geometric { ForceProfile::generic(1.0, 0.1, 1.0).unwrap() } else { ForceProfile::flat() };
        let slab = SlabGrid::uniform(if geometric { 12.0 } else { 8.0 }, 41).unwrap();
        let cc = c.clone();
        let problem = MilneProblem::new(profile, slab, AngularGrid::new(16).unwrap(), Inflow::function(move |p| trig(&cc, p))).unwrap();
        let sol = milne::solve(&problem).unwrap();
        let half = 8;
        let h = &problem.inflow_nodes()[half..];
        let (lo, hi) = h.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        for v in sol.f.values() {
            prop_assert!(*v >= lo - 1e-8 && *v <= hi + 1e-8);
        }
        // f = q + r up to one rounding, and r has zero mean
        for i in 0..sol.f.rows().len() {
            for j in 0..16 {
                let f = sol.f.get(i, j);
                prop_assert!((f - (sol.q[i] + sol.r.get(i, j))).abs() <= 2.0 * f64::EPSILON * f.abs().max(1.0));
            }
            prop_assert!(grids::angular_mean(problem.angles(), sol.r.row(i)).unwrap().abs() < 1e-13);
        }
    }

    #[test]
    fn source_iteration_settles_monotonically(c in trig_inflow(), geometric in any::<bool>()) {
        let profile = if geometric { ForceProfile::generic(1.0, 0.2, 1.0).unwrap() } else { ForceProfile::flat() };
        let cc = c.clone();
        let problem = MilneProblem::new(profile, SlabGrid::uniform(8.0, 33).unwrap(), AngularGrid::new(16).unwrap(), Inflow::function(move |p| trig(&cc, p)))
            .unwrap()
            .with_method(Method::SourceIteration)
            .with_tolerance(1e-10, 20000);
        let sol = milne::solve(&problem).unwrap();
        let tail = &sol.history[sol.history.len().saturating_sub(10)..];
        for w in tail.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn transport_maximum_principle_and_reduction(c in trig_inflow(), d in trig_inflow(), eps in 0.1f64..0.5) {
        let (cc, dd) = (c.clone(), d.clone());
        let problem = AnnulusProblem::new(
            eps,
            Arc::new(move |p| trig(&cc, p)),
            Arc::new(move |p| trig(&dd, p)),
            RadialGrid::uniform(1.0, 2.0, 17).unwrap(),
            AngularGrid::new(12).unwrap(),
        )
        .unwrap();
        let sol = transport::solve(&problem).unwrap();
        let (lo, hi) = problem.boundary_range();
        for v in sol.u.values() {
            prop_assert!(*v >= lo - 1e-8 && *v <= hi + 1e-8);
        }
        // re-embed at a random θ: u(x, ξ) = U(|x|, θ + ξ) must solve ε w·∇u + u − ū = 0
        let (r, theta, xi) = (1.5, 0.3 + eps, 0.7 - eps);
        let u3 = |x: f64, y: f64, xi: f64| {
            let phi = (y.atan2(x) + xi + PI).rem_euclid(2.0 * PI) - PI;
            sol.evaluate(x.hypot(y), phi).unwrap()
        };
        let (x, y, h) = (r * theta.cos(), r * theta.sin(), 1e-4);
        let ux = (u3(x + h, y, xi) - u3(x - h, y, xi)) / (2.0 * h);
        let uy = (u3(x, y + h, xi) - u3(x, y - h, xi)) / (2.0 * h);
        let ubar = grids::interp_linear(problem.radial().nodes(), &sol.u_bar, r);
        let res = eps * (-xi.sin() * ux - xi.cos() * uy) + u3(x, y, xi) - ubar;
        prop_assert!(res.abs() < 1e-5, "residual {res}");
    }
}

#[test]
fn straight_rays_conserve_impact_parameter() {
    let problem = AnnulusProblem::new(
        0.3,
        Arc::new(|_| 1.0),
        Arc::new(|_| 0.0),
        RadialGrid::uniform(1.0, 2.0, 9).unwrap(),
        AngularGrid::new(8).unwrap(),
    )
    .unwrap();
    let mut rng_state = 12345u64;
    let mut next = || {
        rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (rng_state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..500 {
        let r = 1.0 + 1e-3 + 0.998 * next();
        let phi = -PI + 2.0 * PI * next();
        let exit = transport::exit_time(&problem, r, phi).unwrap();
        let wall = match exit.circle {
            Circle::Inner => 1.0,
            Circle::Outer => 2.0,
        };
        assert!((r * phi.cos() - wall * exit.phi_b.cos()).abs() < 1e-12);
    }
}

#[test]
fn transport_source_iteration_settles_monotonically() {
    let problem = AnnulusProblem::new(
        0.2,
        Arc::new(|p: f64| p.cos() + 2.0),
        Arc::new(|_| 0.5),
        RadialGrid::uniform(1.0, 2.0, 17).unwrap(),
        AngularGrid::new(12).unwrap(),
    )
    .unwrap()
    .with_method(Method::SourceIteration)
    .with_tolerance(1e-10, 50000);
    let sol = transport::solve(&problem).unwrap();
    let tail = &sol.history[sol.history.len() - 10..];
    assert!(tail.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn flat_layer_is_the_same_solver_path() {
    let res = Resolution { n_phi: 8, slab_h_min: 0.1, slab_h_max: 0.5, ..Resolution::default() };
    let g: milne::AngleFn = Arc::new(|p: f64| p.cos() + 2.0);
    let layer = ex::boundary_layer_order0(Variant::Classical, Circle::Inner, g, 0.2, (1.0, 2.0), &res).unwrap();
    let direct = MilneProblem::new(
        ForceProfile::flat(),
        res.slab(0.2, 1.0).unwrap(),
        res.angles().unwrap(),
        Inflow::function(|p: f64| (-p).cos() + 2.0),
    )
    .unwrap();
    let direct = milne::solve(&direct).unwrap();
    assert_eq!(layer.solution.f, direct.f);
}

#[test]
fn bundles_match_their_layer_limits() {
    let res = Resolution { n_phi: 16, slab_h_min: 0.05, slab_h_max: 0.5, ..Resolution::default() };
    for variant in [Variant::Classical, Variant::Geometric] {
        let b = ex::ExpansionBundle::build(
            variant,
            0.1,
            Arc::new(|p: f64| 1.0 + 0.5 * p.sin().abs()),
            Arc::new(|p: f64| 0.3 * p.cos()),
            (1.0, 2.0),
            &res,
        )
        .unwrap();
        let (a, z) = b.matching_defect();
        assert!(a.abs() <= 1e-12 && z.abs() <= 1e-12);
        // away from both layers only the interior is left
        let mid = composite(&b, 1.5, 0.4).unwrap();
        assert!((mid - b.interior(1.5)).abs() < 1e-6);
        // incoming at each wall the composite returns the datum up to the layer tail
        for p in [-2.5, -1.0, -0.2] {
            let v = composite(&b, 1.0, p).unwrap();
            assert!((v - (1.0 + 0.5 * p.sin().abs())).abs() < 1e-8, "{variant} inner p={p}");
        }
        for p in [0.2, 1.0, 2.5] {
            let v = composite(&b, 2.0, p).unwrap();
            assert!((v - 0.3 * p.cos()).abs() < 1e-8, "{variant} outer p={p}");
        }
    }
}

#[test]
fn order_one_terms_vanish_for_constant_data() {
    let res = Resolution { n_phi: 8, slab_h_min: 0.1, slab_h_max: 0.5, ..Resolution::default() };
    let c: milne::AngleFn = Arc::new(|_| 0.7);
    let b = ex::ExpansionBundle::build(Variant::Geometric, 0.2, c.clone(), c, (1.0, 2.0), &res)
        .unwrap()
        .with_order1(&res)
        .unwrap();
    let o = b.order1.as_ref().unwrap();
    assert!(o.c1.abs() < 1e-14 && o.c2.abs() < 1e-14);
    assert!(o.layer_minus.solution.f.sup_norm() < 1e-14);
}

#[test]
fn order_one_inflow_is_the_radial_gradient() {
    let res = Resolution { n_phi: 16, slab_h_min: 0.05, slab_h_max: 0.5, ..Resolution::default() };
    let b = ex::ExpansionBundle::build(
        Variant::Geometric,
        0.1,
        Arc::new(|_| 1.0),
        Arc::new(|_| 0.0),
        (1.0, 2.0),
        &res,
    )
    .unwrap()
    .with_order1(&res)
    .unwrap();
    let o = b.order1.as_ref().unwrap();
    let slope = b.interior_slope(1.0);
    let p = o.layer_minus.solution.problem();
    // annulus angle φ = −φ₋, so the layer sees −sin(−φ₋)·ū₀′ = sinφ₋·ū₀′
    for (j, &phi) in p.angles().nodes().iter().enumerate().skip(8) {
        assert!((p.inflow_nodes()[j] - phi.sin() * slope).abs() < 1e-15);
    }
}

#[test]
fn mirror_symmetric_data_gives_mirror_symmetric_solution() {
    // φ ↦ π − φ keeps sinφ and flips cosφ, leaving the reduced equation and both walls unchanged
    let problem = AnnulusProblem::new(
        0.25,
        Arc::new(|p: f64| 1.0 + 0.5 * p.sin() + 0.3 * (2.0 * p).cos()),
        Arc::new(|p: f64| 0.2 * (p.sin() * p.sin())),
        RadialGrid::uniform(1.0, 2.0, 21).unwrap(),
        AngularGrid::new(16).unwrap(),
    )
    .unwrap();
    let sol = transport::solve(&problem).unwrap();
    let n = 16;
    let mut asym = 0.0f64;
    for i in 0..21 {
        for j in 0..n {
            let k = (n / 2 + n - 1 - j) % n;
            asym = asym.max((sol.u.get(i, j) - sol.u.get(i, k)).abs());
        }
    }
    assert!(asym < 1e-10, "asymmetry {asym}");
    // the plain reflection φ ↦ −φ is not a symmetry
    let flipped = (0..n).map(|j| (sol.u.get(10, j) - sol.u.get(10, n - 1 - j)).abs()).fold(0.0, f64::max);
    assert!(flipped > 1e-3);
}
