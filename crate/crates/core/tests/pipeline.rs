use alch_core::boundary::{boundary_data, BoundaryOptions, Fault};
use alch_core::cr::{cr_report, CrTolerances};
use alch_core::models::{deficit_series, model_oracle, Model, ModelKind, ModelSpec};
use alch_core::Chart;

fn small_chart() -> Chart {
    Chart { grid: vec![5; 3], r_max: 8.0, ..Chart::default() }
}

#[test]
fn horo_boundary_is_strictly_pseudoconvex_cr() {
    let chart = small_chart();
    let model = Model::new(ModelSpec::exact(ModelKind::CphHoro), &chart).unwrap();
    let data = boundary_data(&model, &chart, &BoundaryOptions::default()).unwrap();
    let i = &data.invariants;
    for v in [i.phi_sq, i.phi_cube, i.eta0_phi, i.gamma_phi, i.phi_xi0, i.eta0_xi0, i.xi0_routes] {
        assert!(v <= 1e-5, "{i:?}");
    }
    let rep = cr_report(&data, &CrTolerances::default()).unwrap();
    assert!(rep.pass, "{:?}", rep.checks);
    assert!(rep.levi_eigen_min > 0.0);

    let mut flipped = data.clone();
    flipped.inject(Fault::FlipPhi);
    let bad = cr_report(&flipped, &CrTolerances::default()).unwrap();
    assert!(!bad.pass);
    assert!(bad.levi_eigen_min < 0.0);
}

#[test]
fn exact_models_have_zero_deficit() {
    let chart = small_chart();
    for kind in [ModelKind::CphHoro, ModelKind::CphPolar] {
        let rep = model_oracle(ModelSpec::exact(kind), &chart, 1e-8).unwrap();
        assert!(rep.pass, "{rep:?}");
    }
}

#[test]
fn perturbation_deficit_decays_at_the_injected_rate() {
    let chart = Chart { grid: vec![5; 3], r_max: 9.0, ..Chart::default() };
    let kind: ModelKind = "rotated_J".parse().unwrap();
    let model = Model::new(ModelSpec::perturbed(kind, 1.25, 0.1), &chart).unwrap();
    let d = deficit_series(&model, &chart, false).unwrap();
    let fit = alch_core::rates::fit_decay_window(&d.r, &d.alch, (5.0, 9.0), false).unwrap();
    assert!((fit.slope - 1.25).abs() < 0.05, "{}", fit.slope);
}
