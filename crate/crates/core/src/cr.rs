//! CR checks on recovered boundary data: `dη⁰`, the contact condition, the
//! Levi form against `γ`, the Reeb property of `ξ₀`, the Nijenhuis identity
//! and the expansion residual `g − ĝ`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryData;
use crate::chart::{partial_fd, Chart, Slot, Symmetry, TensorField};
use crate::linalg::{gram_schmidt, norm_bilinear, sym_eigen};
use crate::models::Model;
use crate::rates::{fit_decay_window, DecayFit, Regime};
use crate::Error;

/// `(dω)_{ij} = ∂_iω_j − ∂_jω_i` by grid stencils. The flags mark points
/// where any one-sided stencil was used.
pub fn exterior_d(omega: &TensorField) -> Result<(TensorField, Vec<bool>), Error> {
    if omega.slots != [Slot::Co] {
        return Err(Error::ValenceMismatch);
    }
    let m = omega.dim;
    if omega.grid.axes.len() != m {
        return Err(Error::ChartMismatch);
    }
    let mut parts = Vec::with_capacity(m);
    let mut flags = vec![false; omega.grid.len()];
    for a in 0..m {
        let (d, f) = partial_fd(omega, a, 1)?;
        for (x, y) in flags.iter_mut().zip(f) {
            *x |= y;
        }
        parts.push(d);
    }
    let pts: Vec<Vec<f64>> = (0..omega.grid.len())
        .map(|p| {
            let mut w = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..m {
                    w[i * m + j] = parts[i].at(p)[j] - parts[j].at(p)[i];
                }
            }
            w
        })
        .collect();
    let out = TensorField::from_points(omega.grid.clone(), m, vec![Slot::Co, Slot::Co], Symmetry::None, &pts)?;
    Ok((out, flags))
}

fn permutations(m: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..m).collect();
    fn rec(k: usize, p: &mut Vec<usize>, sign: f64, out: &mut Vec<(Vec<usize>, f64)>) {
        if k == p.len() {
            out.push((p.clone(), sign));
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            rec(k + 1, p, if i == k { sign } else { -sign }, out);
            p.swap(k, i);
        }
    }
    rec(0, &mut p, 1.0, &mut out);
    out
}

/// Coefficient of `η ∧ (dη)^n` on `∂₁ ∧ … ∧ ∂_m`, normalized so that for
/// `m = 3` it reads `η₁(dη)₂₃ + η₂(dη)₃₁ + η₃(dη)₁₂`.
pub fn contact_coefficient(eta: &[f64], deta: &[f64]) -> f64 {
    let m = eta.len();
    let n = (m - 1) / 2;
    let mut s = 0.0;
    for (p, sign) in permutations(m) {
        let mut t = sign * eta[p[0]];
        for k in 0..n {
            t *= deta[p[2 * k + 1] * m + p[2 * k + 2]];
        }
        s += t;
    }
    s / libm::pow(2.0, n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    /// `η⁰ ∧ (dη⁰)^n` coefficient per grid point.
    pub coefficient: Vec<f64>,
    /// Determinant of `dη⁰` on `H₀` in a `γ`-orthonormal basis, when `γ` is given.
    pub det_h0: Option<Vec<f64>>,
    pub min_abs: f64,
    pub scale: f64,
    pub pass: bool,
}

/// Contact condition over the points `pts`: the top-form coefficient must
/// stay above `tol · scale` in absolute value, with `scale = max|η|·max|dη|`.
pub fn contact_check(
    eta0: &TensorField,
    d_eta0: &TensorField,
    h0: Option<(&TensorField, &TensorField)>,
    pts: &[usize],
    tol: f64,
) -> Result<ContactReport, Error> {
    let m = eta0.dim;
    let coefficient: Vec<f64> = (0..eta0.grid.len()).map(|p| contact_coefficient(eta0.at(p), d_eta0.at(p))).collect();
    let max_abs = |f: &TensorField| pts.iter().flat_map(|&p| f.at(p).iter()).fold(0.0f64, |a, b| a.max(b.abs()));
    let scale = max_abs(eta0) * max_abs(d_eta0);
    let min_abs = pts.iter().map(|&p| coefficient[p].abs()).fold(f64::INFINITY, f64::min);
    let det_h0 = match h0 {
        Some((gamma, xi0)) => {
            let mut v = vec![0.0; eta0.grid.len()];
            for &p in pts {
                let u = h0_basis(eta0.at(p), xi0.at(p), gamma.at(p))?;
                let w = DMatrix::from_row_slice(m, m, d_eta0.at(p));
                let k = u.len();
                let red = DMatrix::from_fn(k, k, |a, b| (u[a].transpose() * &w * &u[b])[(0, 0)]);
                v[p] = red.determinant();
            }
            Some(v)
        }
        None => None,
    };
    let pass = scale > 0.0 && min_abs > tol * scale;
    Ok(ContactReport { coefficient, det_h0, min_abs, scale, pass })
}

/// `γ`-orthonormal basis of `H₀ = ker η⁰` from the coordinate axes projected
/// along `ξ₀`, in axis order.
pub fn h0_basis(eta0: &[f64], xi0: &[f64], gamma: &[f64]) -> Result<Vec<DVector<f64>>, Error> {
    let m = eta0.len();
    let eta = DVector::from_column_slice(eta0);
    let xi = DVector::from_column_slice(xi0);
    if eta.norm() < 1e-12 {
        return Err(Error::Degenerate("η⁰ vanishes".into()));
    }
    let g = DMatrix::from_row_slice(m, m, gamma);
    let seeds: Vec<DVector<f64>> = (0..m)
        .map(|k| {
            let mut v = DVector::zeros(m);
            v[k] = 1.0;
            let c = eta.dot(&v);
            v - &xi * c
        })
        .collect();
    let seeds: Vec<DVector<f64>> = seeds.into_iter().filter(|v| v.norm() > 1e-8).collect();
    let basis = gram_schmidt(&g, &[], &seeds, m - 1, 1e-6);
    if basis.len() != m - 1 {
        return Err(Error::Degenerate("no γ-orthonormal basis of ker η⁰".into()));
    }
    Ok(basis)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeviReeb {
    /// `max |dη⁰(u, φv) − γ(u, v)|` over `H₀` basis pairs.
    pub levi_gap: f64,
    /// `max |dη⁰(ξ₀, u)|` over the `H₀` basis.
    pub reeb_gap: f64,
    /// Smallest eigenvalue of the symmetrized `dη⁰(·, φ·)` on `H₀`.
    pub levi_eigen_min: f64,
}

pub fn levi_and_reeb(data: &BoundaryData, d_eta0: &TensorField, pts: &[usize]) -> Result<LeviReeb, Error> {
    let m = data.eta0.dim;
    let mut out = LeviReeb { levi_gap: 0.0, reeb_gap: 0.0, levi_eigen_min: f64::INFINITY };
    for &p in pts {
        let u = h0_basis(data.eta0.at(p), data.xi0.at(p), data.gamma.at(p))?;
        let w = DMatrix::from_row_slice(m, m, d_eta0.at(p));
        let g = DMatrix::from_row_slice(m, m, data.gamma.at(p));
        let phi = DMatrix::from_row_slice(m, m, data.phi.at(p));
        let xi = DVector::from_column_slice(data.xi0.at(p));
        let k = u.len();
        let levi = DMatrix::from_fn(k, k, |a, b| (u[a].transpose() * &w * &phi * &u[b])[(0, 0)]);
        let gam = DMatrix::from_fn(k, k, |a, b| (u[a].transpose() * &g * &u[b])[(0, 0)]);
        out.levi_gap = out.levi_gap.max((&levi - &gam).amax());
        for ua in &u {
            out.reeb_gap = out.reeb_gap.max((xi.transpose() * &w * ua)[(0, 0)].abs());
        }
        let sym = (&levi + levi.transpose()) * 0.5;
        out.levi_eigen_min = out.levi_eigen_min.min(sym_eigen(&sym).0[0]);
    }
    Ok(out)
}

/// Finite-difference regularity of `φ` on the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    /// Largest adjacent-point difference quotient of any `φ` component.
    pub max_first_difference: f64,
    /// Largest change of the centred difference quotient between steps `h`
    /// and `2h`, relative to `1 + max_first_difference`.
    pub refinement_change: f64,
    pub budget: f64,
    pub label: String,
}

pub fn smoothness(phi: &TensorField, budget: f64) -> Smoothness {
    let grid = &phi.grid;
    let nc = phi.components();
    let (mut first, mut change) = (0.0f64, 0.0f64);
    for p in 0..grid.len() {
        let idx = grid.multi_index(p);
        for (a, ax) in grid.axes.iter().enumerate() {
            let h = ax.spacing();
            let at = |o: isize| {
                let mut j = idx.clone();
                j[a] = (idx[a] as isize + o) as usize;
                grid.linear(&j)
            };
            if idx[a] + 1 < ax.n {
                let q = at(1);
                for c in 0..nc {
                    first = first.max((phi.at(q)[c] - phi.at(p)[c]).abs() / h);
                }
            }
            if idx[a] >= 2 && idx[a] + 2 < ax.n {
                let (l1, r1, l2, r2) = (at(-1), at(1), at(-2), at(2));
                for c in 0..nc {
                    let d1 = (phi.at(r1)[c] - phi.at(l1)[c]) / (2.0 * h);
                    let d2 = (phi.at(r2)[c] - phi.at(l2)[c]) / (4.0 * h);
                    change = change.max((d1 - d2).abs());
                }
            }
        }
    }
    let refinement_change = change / (1.0 + first);
    let ok = first <= budget && refinement_change <= 0.1;
    Smoothness {
        max_first_difference: first,
        refinement_change,
        budget,
        label: if ok { "C¹-consistent".into() } else { "not C¹-consistent".into() },
    }
}

/// `max ‖N_φ(u, v) − dη⁰(u, v) ξ₀‖` over `H₀` basis pairs, with `u`, `v`
/// frozen as constant coordinate fields so that
/// `N_φ(u,v) = −[φu, φv] + φ[φu, v] + φ[u, φv]`.
pub fn nijenhuis_check(data: &BoundaryData, d_eta0: &TensorField, pts: &[usize]) -> Result<f64, Error> {
    let m = data.phi.dim;
    let dphi: Vec<TensorField> = (0..m).map(|a| partial_fd(&data.phi, a, 1).map(|x| x.0)).collect::<Result<_, _>>()?;
    let mut gap = 0.0f64;
    for &p in pts {
        let u = h0_basis(data.eta0.at(p), data.xi0.at(p), data.gamma.at(p))?;
        let phi = DMatrix::from_row_slice(m, m, data.phi.at(p));
        let dp: Vec<DMatrix<f64>> = (0..m).map(|a| DMatrix::from_row_slice(m, m, dphi[a].at(p))).collect();
        // (D_w φ) for a direction w
        let dir = |w: &DVector<f64>| {
            let mut acc = DMatrix::zeros(m, m);
            for a in 0..m {
                acc += &dp[a] * w[a];
            }
            acc
        };
        let w = DMatrix::from_row_slice(m, m, d_eta0.at(p));
        let xi = DVector::from_column_slice(data.xi0.at(p));
        for a in 0..u.len() {
            for b in 0..u.len() {
                if a == b {
                    continue;
                }
                let (x, y) = (&u[a], &u[b]);
                let (px, py) = (&phi * x, &phi * y);
                let br_pp = dir(&px) * y - dir(&py) * x;
                let br_px_y = -(dir(y) * x);
                let br_x_py = dir(x) * y;
                let n = -br_pp + &phi * (br_px_y + br_x_py);
                let target = &xi * (x.transpose() * &w * y)[(0, 0)];
                gap = gap.max((n - target).amax());
            }
        }
    }
    Ok(gap)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrTolerances {
    pub contact: f64,
    pub levi: f64,
    pub reeb: f64,
    pub nijenhuis: f64,
    pub levi_eigen_floor: f64,
    pub smoothness_budget: f64,
}

impl Default for CrTolerances {
    fn default() -> Self {
        CrTolerances { contact: 1e-3, levi: 1e-3, reeb: 1e-3, nijenhuis: 1e-3, levi_eigen_floor: 0.0, smoothness_budget: 100.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrReport {
    pub d_eta0: TensorField,
    pub contact: ContactReport,
    pub levi_gap: f64,
    pub reeb_gap: f64,
    pub nijenhuis_gap: f64,
    pub levi_eigen_min: f64,
    pub smoothness: Smoothness,
    pub checks: Vec<Check>,
    pub pass: bool,
}

/// All CR checks on the interior points of the base grid.
pub fn cr_report(data: &BoundaryData, tol: &CrTolerances) -> Result<CrReport, Error> {
    let (d_eta0, _) = exterior_d(&data.eta0)?;
    let pts = data.grid.interior(2);
    if pts.is_empty() {
        return Err(Error::GridTooSmall(0));
    }
    let contact = contact_check(&data.eta0, &d_eta0, Some((&data.gamma, &data.xi0)), &pts, tol.contact)?;
    let lr = levi_and_reeb(data, &d_eta0, &pts)?;
    let nijenhuis_gap = nijenhuis_check(data, &d_eta0, &pts)?;
    let smooth = smoothness(&data.phi, tol.smoothness_budget);
    let check = |name: &str, value: f64, tolerance: f64, pass: bool| Check { name: name.into(), value, tolerance, pass };
    let checks = vec![
        check("contact", contact.min_abs, tol.contact * contact.scale, contact.pass),
        check("levi_gap", lr.levi_gap, tol.levi, lr.levi_gap <= tol.levi),
        check("reeb_gap", lr.reeb_gap, tol.reeb, lr.reeb_gap <= tol.reeb),
        check("nijenhuis_gap", nijenhuis_gap, tol.nijenhuis, nijenhuis_gap <= tol.nijenhuis),
        check("levi_eigen_min", lr.levi_eigen_min, tol.levi_eigen_floor, lr.levi_eigen_min > tol.levi_eigen_floor),
        check("smoothness", smooth.max_first_difference, tol.smoothness_budget, smooth.label == "C¹-consistent"),
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(CrReport {
        d_eta0,
        contact,
        levi_gap: lr.levi_gap,
        reeb_gap: lr.reeb_gap,
        nijenhuis_gap,
        levi_eigen_min: lr.levi_eigen_min,
        smoothness: smooth,
        checks,
        pass,
    })
}

/// Per-slice maxima of `‖g − ĝ‖_g` with `ĝ = dr² + e^{2r}η⁰⊗η⁰ + e^{r}γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResidual {
    pub r: Vec<f64>,
    pub values: Vec<f64>,
    pub fit: Option<DecayFit>,
}

pub fn expansion_residual(
    model: &Model,
    chart: &Chart,
    data: &BoundaryData,
    window: (f64, f64),
) -> Result<ExpansionResidual, Error> {
    let m = data.eta0.dim;
    let r = chart.r_samples();
    let mut values = vec![0.0f64; r.len()];
    for p in 0..data.grid.len() {
        let x = data.grid.point(p);
        let eta = DVector::from_column_slice(data.eta0.at(p));
        let gamma = DMatrix::from_row_slice(m, m, data.gamma.at(p));
        for (k, &rk) in r.iter().enumerate() {
            let g = model.radial(rk, &x).g;
            let gt = g.view((1, 1), (m, m)).into_owned();
            let ghat = &eta * eta.transpose() * libm::exp(2.0 * rk) + &gamma * libm::exp(rk);
            let ginv = gt.clone().try_inverse().ok_or_else(|| Error::NotPositiveDefinite(format!("r = {rk}")))?;
            values[k] = values[k].max(norm_bilinear(&ginv, &(&gt - ghat)));
        }
    }
    let fit = fit_decay_window(&r, &values, window, true).ok().map(|mut f| {
        f.regime = if model.spec.kind.is_exact() { None } else { Some(Regime::of(model.spec.a)) };
        f
    });
    Ok(ExpansionResidual { r, values, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{Axis, Grid};

    fn grid3() -> Grid {
        Grid::new(vec![Axis { lo: -0.3, hi: 0.3, n: 7 }; 3])
    }

    fn covector(f: impl Fn(&[f64]) -> [f64; 3]) -> TensorField {
        let g = grid3();
        let pts: Vec<Vec<f64>> = (0..g.len()).map(|p| f(&g.point(p)).to_vec()).collect();
        TensorField::from_points(g, 3, vec![Slot::Co], Symmetry::None, &pts).unwrap()
    }

    #[test]
    fn exact_form_is_closed() {
        // d(x¹x²)
        let w = covector(|x| [x[1], x[0], 0.0]);
        let (d, _) = exterior_d(&w).unwrap();
        assert!(d.data.iter().all(|v| v.abs() < 1e-9));
        let (z, _) = exterior_d(&covector(|_| [0.0; 3])).unwrap();
        assert!(z.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn heisenberg_contact_form() {
        let k = 0.5;
        let theta = covector(|x| [1.0, k * x[2], -k * x[1]]);
        let (d, _) = exterior_d(&theta).unwrap();
        let pts = theta.grid.interior(2);
        for &p in &pts {
            let w = d.at(p);
            assert!((w[1 * 3 + 2] + 2.0 * k).abs() < 1e-12);
            assert!((contact_coefficient(theta.at(p), w) + 2.0 * k).abs() < 1e-12);
        }
        assert!(contact_check(&theta, &d, None, &pts, 1e-3).unwrap().pass);
        let exact = covector(|_| [0.0, 1.0, 0.0]);
        let (d0, _) = exterior_d(&exact).unwrap();
        assert!(!contact_check(&exact, &d0, None, &pts, 1e-3).unwrap().pass);
    }

    #[test]
    fn permutation_signs() {
        let s: f64 = permutations(3).iter().map(|p| p.1).sum();
        assert_eq!(s, 0.0);
        assert_eq!(permutations(4).len(), 24);
    }
}
