use alch_core::chart::{g_norm, metric_inner, partial_fd, riemann_symmetry_defect, Axis, Slot, Symmetry};
use alch_core::cr::exterior_d;
use alch_core::curvature::{eval4, r0_tensor};
use alch_core::rates::fit_decay;
use alch_core::{Grid, Metric, TensorField};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn entries(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

/// Positive definite `AᵀA + I/2` from raw entries.
fn spd(d: usize, raw: &[f64]) -> DMatrix<f64> {
    let a = DMatrix::from_row_slice(d, d, raw);
    a.transpose() * &a + DMatrix::identity(d, d) * 0.5
}

fn one_point() -> Grid {
    Grid::new(vec![Axis { lo: 0.0, hi: 1.0, n: 1 }])
}

fn field(d: usize, slots: Vec<Slot>, data: &[f64]) -> TensorField {
    let mut t = TensorField::zeros(one_point(), d, slots);
    t.data.copy_from_slice(data);
    t
}

fn metric(d: usize, raw: &[f64]) -> Metric {
    let g = spd(d, raw);
    let f = TensorField::from_points(one_point(), d, vec![Slot::Co, Slot::Co], Symmetry::SymmetricPairs, &[g.transpose().as_slice().to_vec()])
        .unwrap();
    Metric::new(f, false).unwrap()
}

/// `g = CᵀC` and `J = C⁻¹J₀C` for the standard `J₀` on `ℝ⁴`.
fn hermitian_pair(raw: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let c = DMatrix::from_row_slice(4, 4, raw) + DMatrix::identity(4, 4) * 3.0;
    let mut j0 = DMatrix::zeros(4, 4);
    j0[(1, 0)] = 1.0;
    j0[(0, 1)] = -1.0;
    j0[(3, 2)] = 1.0;
    j0[(2, 3)] = -1.0;
    let g = c.transpose() * &c;
    let j = c.clone().try_inverse().unwrap() * j0 * c;
    let rows = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
    (rows(&g), rows(&j))
}

fn sectional(g: &[f64], r: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let gm = DMatrix::from_row_slice(4, 4, g);
    let ip = |a: &[f64], b: &[f64]| (0..4).map(|i| (0..4).map(|k| a[i] * gm[(i, k)] * b[k]).sum::<f64>()).sum::<f64>();
    eval4(4, r, u, v, u, v) / (ip(u, u) * ip(v, v) - ip(u, v).powi(2))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn metric_inner_is_symmetric_and_bilinear(g in entries(9), a in entries(9), b in entries(9), c in entries(9), s in -3.0f64..3.0) {
        let g = metric(3, &g);
        let slots = || vec![Slot::Co, Slot::Contra];
        let (fa, fb, fc) = (field(3, slots(), &a), field(3, slots(), &b), field(3, slots(), &c));
        let ab = metric_inner(&g, &fa, &fb).unwrap()[0];
        let ba = metric_inner(&g, &fb, &fa).unwrap()[0];
        prop_assert!((ab - ba).abs() <= 1e-10 * (1.0 + ab.abs()));
        let mix: Vec<f64> = a.iter().zip(&c).map(|(x, y)| s * x + y).collect();
        let lhs = metric_inner(&g, &field(3, slots(), &mix), &fb).unwrap()[0];
        let rhs = s * ab + metric_inner(&g, &fc, &fb).unwrap()[0];
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs() + rhs.abs()));
    }

    #[test]
    fn g_norm_obeys_the_triangle_inequality(g in entries(9), a in entries(27), b in entries(27)) {
        let g = metric(3, &g);
        let slots = || vec![Slot::Co, Slot::Co, Slot::Contra];
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let na = g_norm(&g, &field(3, slots(), &a)).unwrap()[0];
        let nb = g_norm(&g, &field(3, slots(), &b)).unwrap()[0];
        let ns = g_norm(&g, &field(3, slots(), &sum)).unwrap()[0];
        prop_assert!(ns <= na + nb + 1e-10);
    }

    #[test]
    fn model_tensor_is_algebraic_curvature_with_pinched_planes(raw in entries(16), u in entries(4), v in entries(4)) {
        let (g, j) = hermitian_pair(&raw);
        let r = r0_tensor(4, &g, &j).unwrap();
        let scale = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(riemann_symmetry_defect(4, &r) <= 1e-10 * scale);
        let jm = DMatrix::from_row_slice(4, 4, &j);
        let ju: Vec<f64> = (0..4).map(|i| (0..4).map(|k| jm[(i, k)] * u[k]).sum()).collect();
        let un: f64 = u.iter().map(|x| x * x).sum();
        prop_assume!(un > 1e-3);
        prop_assert!((sectional(&g, &r, &u, &ju) + 1.0).abs() <= 1e-8);
        let area: f64 = {
            let gm = DMatrix::from_row_slice(4, 4, &g);
            let ip = |a: &[f64], b: &[f64]| (0..4).map(|i| (0..4).map(|k| a[i] * gm[(i, k)] * b[k]).sum::<f64>()).sum::<f64>();
            ip(&u, &u) * ip(&v, &v) - ip(&u, &v).powi(2)
        };
        prop_assume!(area > 1e-4);
        let k = sectional(&g, &r, &u, &v);
        prop_assert!((-1.0 - 1e-8..=-0.25 + 1e-8).contains(&k), "{k}");
    }

    #[test]
    fn decay_fit_is_scale_and_rate_equivariant(b in 0.2f64..2.0, c in 0.1f64..1e3, s in 0.0f64..1.0, wiggle in entries(25)) {
        // Kept above the log clamp so no sample is floored.
        let r: Vec<f64> = (0..25).map(|k| 3.0 + 0.25 * k as f64).collect();
        let v: Vec<f64> = r.iter().zip(&wiggle).map(|(x, w)| (-b * x).exp() * (1.0 + 0.1 * w)).collect();
        let base = fit_decay(&r, &v, false).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        prop_assert!((fit_decay(&r, &scaled, false).unwrap().slope - base.slope).abs() <= 1e-9);
        let faster: Vec<f64> = v.iter().zip(&r).map(|(x, y)| x * (-s * y).exp()).collect();
        prop_assert!((fit_decay(&r, &faster, false).unwrap().slope - base.slope - s).abs() <= 1e-9);
    }

    #[test]
    fn stencils_differentiate_low_degree_polynomials_exactly(q in entries(5), lo in -1.0f64..1.0, n in 5usize..12) {
        let grid = Grid::new(vec![Axis { lo, hi: lo + 1.0, n }]);
        let pts: Vec<Vec<f64>> = (0..n).map(|i| {
            let x = grid.point(i)[0];
            vec![q.iter().rev().fold(0.0, |acc, c| acc * x + c)]
        }).collect();
        let mut t = TensorField::zeros(grid.clone(), 1, vec![]);
        t.data = pts.concat();
        let (d1, flags) = partial_fd(&t, 0, 1).unwrap();
        let (d2, _) = partial_fd(&t, 0, 2).unwrap();
        for i in 0..n {
            let x = grid.point(i)[0];
            let exact1 = q[1] + 2.0 * q[2] * x + 3.0 * q[3] * x * x + 4.0 * q[4] * x.powi(3);
            let exact2 = 2.0 * q[2] + 6.0 * q[3] * x + 12.0 * q[4] * x * x;
            if !flags[i] {
                prop_assert!((d1.data[i] - exact1).abs() <= 1e-9 * n as f64);
                prop_assert!((d2.data[i] - exact2).abs() <= 1e-7 * (n * n) as f64);
            }
        }
    }

    #[test]
    fn exterior_derivative_of_a_gradient_vanishes(c in entries(10)) {
        let axis = Axis { lo: -0.5, hi: 0.5, n: 7 };
        let grid = Grid::new(vec![axis; 3]);
        // f = cubic in (x, y, z); ω = df.
        let grad = |p: &[f64]| {
            let (x, y, z) = (p[0], p[1], p[2]);
            vec![
                c[0] + 2.0 * c[3] * x + c[6] * y + 3.0 * c[9] * x * x * z,
                c[1] + 2.0 * c[4] * y + c[6] * x + c[7] * z,
                c[2] + 2.0 * c[5] * z + c[7] * y + c[8] + c[9] * x.powi(3),
            ]
        };
        let pts: Vec<Vec<f64>> = (0..grid.len()).map(|p| grad(&grid.point(p))).collect();
        let omega = TensorField::from_points(grid.clone(), 3, vec![Slot::Co], Symmetry::None, &pts).unwrap();
        let (dw, flags) = exterior_d(&omega).unwrap();
        for p in 0..grid.len() {
            if !flags[p] {
                prop_assert!(dw.at(p).iter().all(|x| x.abs() <= 1e-10), "{:?}", dw.at(p));
            }
        }
    }
}
