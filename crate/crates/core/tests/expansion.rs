//! Experiment-level checks of the composite expansion.

use std::sync::Arc;

use kinetic_layer::expansion::{self as ex, composite, Datum, ExperimentConfig, Resolution, Variant};
use kinetic_layer::milne::AngleFn;
use kinetic_layer::transport::Circle;

fn small() -> ExperimentConfig {
    ExperimentConfig { n_phi: 32, n_r: 51, n_eta: 61, ..ExperimentConfig::default() }
}

#[test]
fn geometric_limit_approaches_flat_limit() {
    let res = Resolution::default();
    let g: AngleFn = Arc::new(|p: f64| 1.0 + (0.5 * p).cos() + 0.3 * p.sin());
    let flat = ex::boundary_layer_order0(Variant::Classical, Circle::Inner, g.clone(), 0.1, (1.0, 2.0), &res).unwrap();
    let gaps: Vec<f64> = [0.2, 0.1, 0.05, 0.025]
        .iter()
        .map(|&e| {
            let geo = ex::boundary_layer_order0(Variant::Geometric, Circle::Inner, g.clone(), e, (1.0, 2.0), &res).unwrap();
            (geo.f_inf - flat.f_inf).abs()
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    let eps = [0.2, 0.1, 0.05, 0.025];
    let order = ex::fitted_order(&eps, &gaps).unwrap();
    assert!(order > 0.0, "order {order}");
}

#[test]
fn classical_limit_stays_in_the_data_window() {
    let res = Resolution::default();
    let layer = ex::boundary_layer_order0(Variant::Classical, Circle::Inner, Datum::ShiftedCos.inner(), 0.1, (1.0, 2.0), &res).unwrap();
    assert!((1.0..=3.0).contains(&layer.f_inf));
    assert!((1.5..=2.5).contains(&layer.solution.q[0]));
}

#[test]
fn constant_data_convergence_is_exact() {
    let c = small();
    let res = c.resolution();
    for &eps in &c.epsilons {
        let k: AngleFn = Arc::new(|_| 0.4);
        let b = ex::ExpansionBundle::build(Variant::Geometric, eps, k.clone(), k.clone(), (1.0, 2.0), &res).unwrap();
        let problem = kinetic_layer::transport::AnnulusProblem::new(
            eps,
            k.clone(),
            k,
            res.radial(eps, 1.0, 2.0).unwrap(),
            res.angles().unwrap(),
        )
        .unwrap();
        let sol = kinetic_layer::transport::solve(&problem).unwrap();
        assert!(ex::composite_error(&sol, &b).unwrap() <= 1e-9);
    }
}

#[test]
fn refinement_barely_moves_the_error() {
    let coarse = ex::convergence_study(&small()).unwrap();
    let fine = ex::convergence_study(&ExperimentConfig { n_phi: 64, n_r: 101, n_eta: 121, ..small() }).unwrap();
    for (a, b) in coarse.iter().zip(&fine) {
        assert!((a.sup_error - b.sup_error).abs() < 0.2 * b.sup_error, "{a:?} vs {b:?}");
    }
}

#[test]
fn classical_error_does_not_vanish_but_geometric_does() {
    let geo = ex::convergence_study(&small()).unwrap();
    ex::assess_convergence(&geo, 0.7).unwrap();
    let flat = ex::convergence_study(&ExperimentConfig { variant: Variant::Classical, ..small() }).unwrap();
    assert!(flat.iter().all(|r| r.sup_error > 0.05), "{flat:?}");
}

#[test]
fn order_one_terms_do_not_hurt() {
    let c = small();
    let eps = 0.05;
    let sol = ex::annulus_solution(&c, eps).unwrap();
    let b0 = ex::expansion(&c, eps).unwrap();
    let e0 = ex::composite_error(&sol, &b0).unwrap();
    let b1 = b0.with_order1(&c.resolution()).unwrap();
    let e1 = ex::composite_error(&sol, &b1).unwrap();
    assert!(e1 <= e0 * (1.0 + 1e-6) + 1e-12, "{e0} -> {e1}");
}

#[test]
fn order_one_improves_a_nontrivial_interior() {
    // g₋ = 1, g₊ = 0 drives a logarithmic interior profile whose gradient feeds the order-1 layers
    let c = small();
    let res = c.resolution();
    let eps = 0.05;
    let one: AngleFn = Arc::new(|_| 1.0);
    let zero: AngleFn = Arc::new(|_| 0.0);
    let problem = kinetic_layer::transport::AnnulusProblem::new(
        eps,
        one.clone(),
        zero.clone(),
        res.radial(eps, 1.0, 2.0).unwrap(),
        res.angles().unwrap(),
    )
    .unwrap();
    let sol = kinetic_layer::transport::solve(&problem).unwrap();
    let b0 = ex::ExpansionBundle::build(Variant::Geometric, eps, one, zero, (1.0, 2.0), &res).unwrap();
    let e0 = ex::composite_error(&sol, &b0).unwrap();
    let b1 = b0.with_order1(&res).unwrap();
    let e1 = ex::composite_error(&sol, &b1).unwrap();
    assert!(e1 < e0, "{e0} -> {e1}");
    // the middle of the annulus sees only the interior terms
    assert!((composite(&b1, 1.5, 0.3).unwrap() - sol.evaluate(1.5, 0.3).unwrap()).abs() < e1 + 1e-12);
}

#[test]
fn counterexample_gap_persists() {
    let rows = ex::counterexample_experiment(&small()).unwrap();
    ex::assess_counterexample(&rows, 0.05, 0.7).unwrap();
    // numerical u minus its closed form shrinks with ε
    let gaps: Vec<f64> = rows.iter().map(|r| (r.u_num - r.u_pred).abs()).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}
