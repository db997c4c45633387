//! Radial ODEs along coordinate lines `r ↦ (r, x)`: parallel transport,
//! shape operator, Riccati and Jacobi residuals.
//!
//! In Gauss form the connection coefficients along `∂r` reduce to
//! `Γ^i_{rj} = ½ (g⁻¹∂r g)^i_j`, whose tangential block is the shape operator.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{norm_endo, norm_vec, self_adjoint_eigen};
use crate::models::Model;
use crate::Error;

/// Per-base-point transported frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialState {
    pub base_point: Vec<f64>,
    pub r: f64,
    /// Columns are coordinate components of `∂r, E₀, …, E_{2n}`.
    pub frame: DMatrix<f64>,
    pub extras: BTreeMap<String, f64>,
}

impl RadialState {
    /// `∂r` followed by tangential vectors given by their `x`-components.
    pub fn new(base_point: Vec<f64>, r: f64, tangential: &DMatrix<f64>) -> Self {
        let m = tangential.nrows();
        let mut frame = DMatrix::zeros(m + 1, m + 1);
        frame[(0, 0)] = 1.0;
        frame.view_mut((1, 1), (m, tangential.ncols())).copy_from(tangential);
        RadialState { base_point, r, frame, extras: BTreeMap::new() }
    }

    pub fn tangential(&self) -> DMatrix<f64> {
        let m = self.frame.nrows() - 1;
        self.frame.view((1, 1), (m, m)).into_owned()
    }
}

/// Classical fourth-order stepping with optional Richardson combination
/// of the `h` and `h/2` solutions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stepper {
    pub h: f64,
    pub richardson: bool,
    /// Allowed orthonormality drift per unit `r`.
    pub drift_tol: f64,
}

impl Default for Stepper {
    fn default() -> Self {
        Stepper { h: 1e-2, richardson: true, drift_tol: 1e-8 }
    }
}

/// Tangential `½ g_r⁻¹ ∂r g_r` at `(r, x)`, together with `g_r`.
pub fn shape_operator(model: &Model, r: f64, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), Error> {
    let f = model.radial(r, x);
    let m = f.g.nrows() - 1;
    let g = f.g.view((1, 1), (m, m)).into_owned();
    let dg = f.dg.view((1, 1), (m, m)).into_owned();
    let ginv = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(alloc::format!("r = {r}")))?
        .inverse();
    Ok((ginv * dg * 0.5, g))
}

/// Ascending eigenvalues of the shape operator.
pub fn shape_eigenvalues(model: &Model, r: f64, x: &[f64]) -> Result<Vec<f64>, Error> {
    let (s, g) = shape_operator(model, r, x)?;
    Ok(self_adjoint_eigen(&g, &s)?.0)
}

/// Shape operator sampled on radial samples × base points.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeField {
    pub r: Vec<f64>,
    pub base: Vec<Vec<f64>>,
    /// `values[p][k]` at base point `p` and radius `r[k]`.
    pub values: Vec<Vec<DMatrix<f64>>>,
}

impl ShapeField {
    pub fn sample(model: &Model, r: &[f64], base: &[Vec<f64>]) -> Result<Self, Error> {
        let mut values = Vec::with_capacity(base.len());
        for x in base {
            let mut line = Vec::with_capacity(r.len());
            for &rk in r {
                line.push(shape_operator(model, rk, x)?.0);
            }
            values.push(line);
        }
        Ok(ShapeField { r: r.to_vec(), base: base.to_vec(), values })
    }
}

fn rk4<F>(y: &DMatrix<f64>, r0: f64, r1: f64, n: usize, rhs: &mut F) -> Result<DMatrix<f64>, Error>
where
    F: FnMut(f64, &DMatrix<f64>) -> Result<DMatrix<f64>, Error>,
{
    let hs = (r1 - r0) / n as f64;
    let mut y = y.clone();
    for k in 0..n {
        let r = r0 + k as f64 * hs;
        let k1 = rhs(r, &y)?;
        let k2 = rhs(r + 0.5 * hs, &(&y + &k1 * (0.5 * hs)))?;
        let k3 = rhs(r + 0.5 * hs, &(&y + &k2 * (0.5 * hs)))?;
        let k4 = rhs(r + hs, &(&y + &k3 * hs))?;
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (hs / 6.0);
    }
    Ok(y)
}

/// Integrates `dV/dr = −A(r) V` for the columns of `y`, where `A` is supplied
/// by `coef`, using the stepper's step and optional Richardson combination.
pub fn integrate_linear<F>(
    y0: &DMatrix<f64>,
    r0: f64,
    r1: f64,
    stepper: &Stepper,
    coef: &mut F,
) -> Result<DMatrix<f64>, Error>
where
    F: FnMut(f64) -> Result<DMatrix<f64>, Error>,
{
    let mut rhs = |r: f64, y: &DMatrix<f64>| -> Result<DMatrix<f64>, Error> { Ok(-(coef(r)? * y)) };
    let n = libm::ceil(((r1 - r0).abs() / stepper.h) - 1e-9).max(1.0) as usize;
    let coarse = rk4(y0, r0, r1, n, &mut rhs)?;
    if !stepper.richardson {
        return Ok(coarse);
    }
    let fine = rk4(y0, r0, r1, 2 * n, &mut rhs)?;
    Ok((fine * 16.0 - coarse) / 15.0)
}

/// Gram matrix of the frame columns in `g` at the state's point.
fn gram(model: &Model, r: f64, x: &[f64], frame: &DMatrix<f64>) -> DMatrix<f64> {
    let g = model.radial(r, x).g;
    frame.transpose() * g * frame
}

/// Connection matrix `Γ^i_{rj} = ½ (g⁻¹∂r g)^i_j` at `(r, x)`.
pub fn radial_coefficient(model: &Model, r: f64, x: &[f64]) -> Result<DMatrix<f64>, Error> {
    let f = model.radial(r, x);
    let ginv = f
        .g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(alloc::format!("r = {r}")))?
        .inverse();
    Ok(ginv * f.dg * 0.5)
}

/// Parallel transport of a radial state to `r_target`.
pub fn transport_parallel(
    model: &Model,
    state: &RadialState,
    r_target: f64,
    r_range: (f64, f64),
    stepper: &Stepper,
) -> Result<RadialState, Error> {
    let x = state.base_point.clone();
    let mut coef = |r: f64| radial_coefficient(model, r, &x);
    transport_parallel_with(model, state, r_target, r_range, stepper, &mut coef)
}

/// [`transport_parallel`] with a caller-supplied connection matrix, so
/// callers can cache evaluations shared by the `h` and `h/2` passes.
pub fn transport_parallel_with<F>(
    model: &Model,
    state: &RadialState,
    r_target: f64,
    r_range: (f64, f64),
    stepper: &Stepper,
    coef: &mut F,
) -> Result<RadialState, Error>
where
    F: FnMut(f64) -> Result<DMatrix<f64>, Error>,
{
    if r_target < r_range.0 - 1e-12 || r_target > r_range.1 + 1e-12 {
        return Err(Error::OutOfChart(r_target));
    }
    let x = &state.base_point;
    let frame = integrate_linear(&state.frame, state.r, r_target, stepper, coef)?;
    let before = gram(model, state.r, x, &state.frame);
    let after = gram(model, r_target, x, &frame);
    let drift = (after - before).amax();
    if drift > stepper.drift_tol * (r_target - state.r).abs().max(1.0) {
        return Err(Error::Drift { drift, r: r_target });
    }
    let mut extras = state.extras.clone();
    extras.insert("drift".into(), drift);
    Ok(RadialState { base_point: x.clone(), r: r_target, frame, extras })
}

/// `(R_∂r)^i_j` with `R_∂r(v) = R(∂r, v)∂r`, tangential block.
pub fn radial_curvature_operator(model: &Model, r: f64, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), Error> {
    let mut p = vec![r];
    p.extend_from_slice(x);
    let b = model.curvature(&p, false)?;
    let d = b.dim;
    let m = d - 1;
    let g = DMatrix::from_row_slice(d, d, &b.g);
    let gt = g.view((1, 1), (m, m)).into_owned();
    let gtinv = gt.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("radial block".into()))?.inverse();
    // q[j][t] = R(∂r, ∂j, ∂r, ∂t)
    let q = DMatrix::from_fn(m, m, |j, t| b.riemann[(j + 1) * d * d + t + 1]);
    Ok((gtinv * q.transpose(), gt))
}

/// Riccati residual `‖∂rS + S² + R(∂r,·)∂r‖_g` at `(r, x)`, with `∂rS` from a
/// five-point stencil of step `h`.
pub fn riccati_residual_at(model: &Model, r: f64, x: &[f64], h: f64) -> Result<f64, Error> {
    let mut ds = None::<DMatrix<f64>>;
    for (o, w) in [-2.0, -1.0, 1.0, 2.0].iter().zip([1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0]) {
        let s = shape_operator(model, r + o * h, x)?.0 * (w / h);
        ds = Some(match ds {
            Some(acc) => acc + s,
            None => s,
        });
    }
    let (s, _) = shape_operator(model, r, x)?;
    let (rop, g) = radial_curvature_operator(model, r, x)?;
    let res = ds.unwrap() + &s * &s + rop;
    let ginv = g.clone().cholesky().unwrap().inverse();
    Ok(norm_endo(&g, &ginv, &res))
}

/// Per-slice maxima of the Riccati residual over base points.
pub fn riccati_residual(model: &Model, r: &[f64], base: &[Vec<f64>], h: f64) -> Result<Vec<f64>, Error> {
    let mut out = vec![0.0f64; r.len()];
    for x in base {
        for (k, &rk) in r.iter().enumerate() {
            out[k] = out[k].max(riccati_residual_at(model, rk, x, h)?);
        }
    }
    Ok(out)
}

/// Jacobi field diagnostics along one line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobiSeries {
    pub r: Vec<f64>,
    /// `‖Y_v‖_g`.
    pub norm: Vec<f64>,
    /// `‖∇_∂r Y_v − S Y_v‖_g` with the covariant derivative from the full
    /// Christoffel symbols.
    pub first_order: Vec<f64>,
    /// `‖∇_∂r∇_∂r Y_v + R(∂r, Y_v)∂r‖_g`.
    pub second_order: Vec<f64>,
}

/// Residuals of `∇_∂r Y_v = S Y_v` and of the Jacobi equation for the
/// normal Jacobi field with constant coordinate components `v`.
pub fn jacobi_residual(model: &Model, x: &[f64], v: &[f64], r: &[f64], h: f64) -> Result<JacobiSeries, Error> {
    if v.iter().all(|c| *c == 0.0) {
        return Err(Error::Degenerate("Jacobi field needs v ≠ 0".into()));
    }
    let m = v.len();
    let d = m + 1;
    let vv = DVector::from_column_slice(v);
    let sy = |rr: f64| -> Result<DVector<f64>, Error> { Ok(shape_operator(model, rr, x)?.0 * &vv) };
    let mut out = JacobiSeries { r: r.to_vec(), norm: vec![], first_order: vec![], second_order: vec![] };
    for &rk in r {
        let mut p = vec![rk];
        p.extend_from_slice(x);
        let b = model.curvature(&p, false)?;
        let g = DMatrix::from_row_slice(d, d, &b.g);
        let gt = g.view((1, 1), (m, m)).into_owned();
        // ∇_∂r Y = Γ^i_{r j} v^j over all i
        let mut nab = DVector::zeros(d);
        for i in 0..d {
            nab[i] = (0..m).map(|j| b.christoffel[(i * d) * d + j + 1] * v[j]).sum();
        }
        let s_y = sy(rk)?;
        let mut diff = nab.clone();
        for i in 0..m {
            diff[i + 1] -= s_y[i];
        }
        // ∂r(SY) by stencil, then ∇_∂r of the tangential field SY
        let mut dsy = DVector::zeros(m);
        for (o, w) in [-2.0, -1.0, 1.0, 2.0].iter().zip([1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0]) {
            dsy += sy(rk + o * h)? * (w / h);
        }
        let mut acc = DVector::zeros(d);
        for i in 0..d {
            let mut val = if i > 0 { dsy[i - 1] } else { 0.0 };
            for j in 0..m {
                val += b.christoffel[(i * d) * d + j + 1] * s_y[j];
            }
            acc[i] = val;
        }
        // + R(∂r, Y)∂r, lowered index t: R(∂r, Y, ∂r, ∂t)
        let mut low = DVector::zeros(d);
        for t in 0..d {
            low[t] = (0..m).map(|j| b.riemann[((j + 1) * d) * d + t] * v[j]).sum();
        }
        let ginv = g.clone().cholesky().unwrap().inverse();
        let jac = acc + &ginv * low;
        out.norm.push(norm_vec(&gt, &vv));
        out.first_order.push(norm_vec(&g, &diff));
        out.second_order.push(norm_vec(&g, &jac));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::Chart;
    use crate::models::{ModelKind, ModelSpec};

    fn horo() -> Model {
        Model::new(ModelSpec::exact(ModelKind::CphHoro), &Chart::default()).unwrap()
    }

    #[test]
    fn horo_shape_operator_eigenvalues() {
        let m = horo();
        for r in [0.5, 3.0, 9.0] {
            let e = shape_eigenvalues(&m, r, &[0.1, -0.2, 0.25]).unwrap();
            assert!((e[0] - 0.5).abs() < 1e-12 && (e[1] - 0.5).abs() < 1e-12 && (e[2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn horo_transport_of_reeb_direction() {
        let m = horo();
        let x = [0.0, 0.1, -0.1];
        let r0 = 0.5;
        let t = DMatrix::from_column_slice(3, 1, &[libm::exp(-r0), 0.0, 0.0]);
        let mut tan = DMatrix::zeros(3, 3);
        tan.set_column(0, &t.column(0));
        tan[(1, 1)] = libm::exp(-r0 / 2.0);
        tan[(2, 2)] = libm::exp(-r0 / 2.0);
        let st = RadialState::new(x.to_vec(), r0, &tan);
        let out = transport_parallel(&m, &st, 6.0, (0.5, 12.0), &Stepper::default()).unwrap();
        let e = out.frame.column(1);
        assert!((e[1] - libm::exp(-6.0)).abs() < 1e-12);
        assert!(e[2].abs() < 1e-12 && e[3].abs() < 1e-12);
    }

    #[test]
    fn horo_jacobi_norms() {
        let m = horo();
        let r: Vec<f64> = (0..5).map(|k| 1.0 + k as f64).collect();
        let jx = jacobi_residual(&m, &[0.2, 0.0, 0.0], &[0.0, 1.0, 0.0], &r, 1e-2).unwrap();
        let jt = jacobi_residual(&m, &[0.2, 0.0, 0.0], &[1.0, 0.0, 0.0], &r, 1e-2).unwrap();
        for (k, &rk) in r.iter().enumerate() {
            assert!((jx.norm[k] / libm::exp(rk / 2.0) - 1.0).abs() < 1e-8);
            assert!((jt.norm[k] / libm::exp(rk) - 1.0).abs() < 1e-8);
            assert!(jx.first_order[k] < 1e-9 * jx.norm[k]);
            assert!(jt.second_order[k] < 1e-7 * jt.norm[k]);
        }
        assert!(jacobi_residual(&m, &[0.0; 3], &[0.0; 3], &r, 1e-2).is_err());
    }

    #[test]
    fn horo_riccati_residual_vanishes() {
        let m = horo();
        let res = riccati_residual(&m, &[1.0, 5.0], &[vec![0.1, 0.1, -0.1]], 1e-2).unwrap();
        assert!(res.iter().all(|v| *v < 1e-7));
    }

    #[test]
    fn stepper_is_fourth_order() {
        // y' = −(1 + r) y, exact y = exp(−r − r²/2)
        let exact = libm::exp(-2.0 - 2.0);
        let err = |h: f64| {
            let st = Stepper { h, richardson: false, drift_tol: 1.0 };
            let y0 = DMatrix::from_element(1, 1, 1.0);
            let y = integrate_linear(&y0, 0.0, 2.0, &st, &mut |r| Ok(DMatrix::from_element(1, 1, 1.0 + r))).unwrap();
            (y[(0, 0)] - exact).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 8.0 && ratio < 32.0, "ratio {ratio}");
    }
}
