//! The 1-form `β_r = g(J∂r, ·)` on transported frames, extraction of `e₀`
//! and construction of admissible and J-admissible frames.
//!
//! Frames are transported once per line: the columns of `frame0` are
//! carried to every radial sample, and every admissible frame is a constant
//! recombination of them, since parallel transport is linear.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::boundary::{extrapolate_limit, fit_window, Limit, LimitMode};
use crate::chart::Chart;
use crate::linalg::{gram_schmidt, norm_vec};
use crate::models::Model;
use crate::radial::{radial_coefficient, transport_parallel_with, RadialState, Stepper};
use crate::Error;

/// Permutation number `seed mod m!` of `0..m` in lexicographic order.
pub fn seed_permutation(m: usize, seed: u64) -> Vec<usize> {
    let mut fact = 1u64;
    for k in 2..=m as u64 {
        fact *= k;
    }
    let mut idx = seed % fact;
    let mut pool: Vec<usize> = (0..m).collect();
    let mut out = Vec::with_capacity(m);
    for k in (1..=m).rev() {
        fact /= k as u64;
        let q = (idx / fact) as usize;
        idx %= fact;
        out.push(pool.remove(q));
    }
    out
}

fn axes(m: usize, order: &[usize]) -> Vec<DVector<f64>> {
    order
        .iter()
        .map(|&k| {
            let mut v = DVector::zeros(m);
            v[k] = 1.0;
            v
        })
        .collect()
}

/// `g₀`-orthonormal frame of the tangential space from the coordinate axes
/// taken in `order`. Columns are coordinate components.
pub fn frame0(g0: &DMatrix<f64>, order: &[usize]) -> Result<DMatrix<f64>, Error> {
    let m = g0.nrows();
    let vs = gram_schmidt(g0, &[], &axes(m, order), m, 1e-10);
    if vs.len() < m {
        return Err(Error::GramSchmidt);
    }
    Ok(DMatrix::from_columns(&vs))
}

/// `frame0` at one base point and its parallel transport to every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LineTransport {
    pub x: Vec<f64>,
    pub r: Vec<f64>,
    /// Tangential `g` at `r_min`, the reference metric for norms.
    pub g0: DMatrix<f64>,
    pub frame0: DMatrix<f64>,
    /// Coordinate components of the transported `frame0` columns.
    pub frames: Vec<DMatrix<f64>>,
    pub max_drift: f64,
}

/// Transports `frame0` along the line through `x` with a cache of the
/// connection matrix shared by the `h` and `h/2` passes.
pub fn transport_line(
    model: &Model,
    chart: &Chart,
    x: &[f64],
    stepper: &Stepper,
    seed: u64,
) -> Result<LineTransport, Error> {
    let r = chart.r_samples();
    let m = chart.dim_boundary;
    let g = model.radial(r[0], x).g;
    let g0 = g.view((1, 1), (m, m)).into_owned();
    let f0 = frame0(&g0, &seed_permutation(m, seed))?;
    let mut state = RadialState::new(x.to_vec(), r[0], &f0);
    let mut frames = Vec::with_capacity(r.len());
    frames.push(f0.clone());
    let mut max_drift = 0.0f64;
    let mut cache: BTreeMap<i64, DMatrix<f64>> = BTreeMap::new();
    for &rk in &r[1..] {
        cache.clear();
        let mut coef = |s: f64| -> Result<DMatrix<f64>, Error> {
            let key = libm::round(s * 1e9) as i64;
            if let Some(a) = cache.get(&key) {
                return Ok(a.clone());
            }
            let a = radial_coefficient(model, s, x)?;
            cache.insert(key, a.clone());
            Ok(a)
        };
        state = transport_parallel_with(model, &state, rk, (chart.r_min, chart.r_max), stepper, &mut coef)?;
        max_drift = max_drift.max(state.extras["drift"]);
        frames.push(state.tangential());
    }
    Ok(LineTransport { x: x.to_vec(), r, g0, frame0: f0, frames, max_drift })
}

/// Tangential part of `J∂r` and the tangential metric at sample `k`.
fn jdr(model: &Model, tr: &LineTransport, k: usize) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let f = model.radial(tr.r[k], &tr.x);
    let m = tr.g0.nrows();
    let v = f.j.view((1, 0), (m, 1)).into_owned().column(0).into_owned();
    let gt = f.g.view((1, 1), (m, m)).into_owned();
    (v, gt, f.g, f.j)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaSeries {
    pub r: Vec<f64>,
    /// `values[k][j] = β_{r_k}(f_j)` for the `frame0` vectors `f_j`.
    pub values: Vec<Vec<f64>>,
    pub limits: Vec<Limit>,
    /// `max_k |Σ_j β_{r_k}(f_j)² − 1|`.
    pub sum_sq_defect: f64,
    /// `max_j |β_r(f_j) − β(f_j)|` per sample.
    pub deviation: Vec<f64>,
}

pub fn beta_series(model: &Model, tr: &LineTransport, window: (f64, f64)) -> Result<BetaSeries, Error> {
    let m = tr.g0.nrows();
    let mut values = Vec::with_capacity(tr.r.len());
    let mut sum_sq_defect = 0.0f64;
    for k in 0..tr.r.len() {
        let (v, gt, _, _) = jdr(model, tr, k);
        let row: Vec<f64> = (0..m).map(|j| (v.transpose() * &gt * tr.frames[k].column(j))[(0, 0)]).collect();
        let s: f64 = row.iter().map(|b| b * b).sum();
        sum_sq_defect = sum_sq_defect.max((s - 1.0).abs());
        values.push(row);
    }
    let limits = (0..m)
        .map(|j| {
            let y: Vec<f64> = values.iter().map(|row| row[j]).collect();
            extrapolate_limit(&tr.r, &y, window, LimitMode::ExpFit)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let deviation = values
        .iter()
        .map(|row| row.iter().zip(&limits).fold(0.0f64, |a, (b, l)| a.max((b - l.value).abs())))
        .collect();
    Ok(BetaSeries { r: tr.r.clone(), values, limits, sum_sq_defect, deviation })
}

/// A boundary vector given in the `frame0` basis.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryVector {
    pub coeffs: DVector<f64>,
    pub coords: DVector<f64>,
    pub beta_norm: f64,
    pub beta_e0: f64,
}

/// `e₀ = β♯/‖β‖`, the `g₀`-dual of the limit form, with `β(e₀) > 0`.
pub fn extract_e0(beta: &BetaSeries, tr: &LineTransport, tol: f64) -> Result<BoundaryVector, Error> {
    let b = DVector::from_iterator(beta.limits.len(), beta.limits.iter().map(|l| l.value));
    let nb = b.norm();
    if !(nb > 1e-12) {
        return Err(Error::Degenerate("β vanishes".into()));
    }
    if (nb - 1.0).abs() > tol {
        return Err(Error::Degenerate(alloc::format!("‖β‖ = {nb} deviates from 1")));
    }
    let coeffs = &b / nb;
    let coords = &tr.frame0 * &coeffs;
    let beta_e0 = b.dot(&coeffs);
    Ok(BoundaryVector { coeffs, coords, beta_norm: nb, beta_e0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibleFrame {
    pub x: Vec<f64>,
    /// Columns are `e₀, …, e_{2n}` in the `frame0` basis.
    pub coeffs: DMatrix<f64>,
    pub j_admissible: bool,
    /// `|β^k|` limit used for each J-pair.
    pub pairing: Vec<f64>,
}

impl AdmissibleFrame {
    pub fn initial(&self, tr: &LineTransport) -> DMatrix<f64> {
        &tr.frame0 * &self.coeffs
    }

    /// Coordinate components of `E₀, …, E_{2n}` at sample `k`.
    pub fn at(&self, tr: &LineTransport, k: usize) -> DMatrix<f64> {
        &tr.frames[k] * &self.coeffs
    }
}

/// Completes `e₀` to an orthonormal frame with `e_j ∈ ker β`, seeding the
/// Gram-Schmidt with the coordinate axes in the seed order and falling back
/// to later permutations on breakdown.
pub fn admissible_frame(tr: &LineTransport, e0: &BoundaryVector, seed: u64) -> Result<AdmissibleFrame, Error> {
    let m = tr.g0.nrows();
    let finv = tr.frame0.clone().try_inverse().ok_or(Error::GramSchmidt)?;
    let id = DMatrix::identity(m, m);
    let mut nperm = 1u64;
    for k in 2..=m as u64 {
        nperm *= k;
    }
    for t in 0..nperm {
        let order = seed_permutation(m, seed + t);
        let seeds: Vec<DVector<f64>> = axes(m, &order).iter().map(|a| &finv * a).collect();
        let rest = gram_schmidt(&id, &[e0.coeffs.clone()], &seeds, m - 1, 1e-3);
        if rest.len() == m - 1 {
            let mut cols = Vec::with_capacity(m);
            cols.push(e0.coeffs.clone());
            cols.extend(rest);
            return Ok(AdmissibleFrame { x: tr.x.clone(), coeffs: DMatrix::from_columns(&cols), j_admissible: false, pairing: Vec::new() });
        }
    }
    Err(Error::GramSchmidt)
}

/// Rebuilds the pairs `(e_{2p−1}, e_{2p})` so that `e_{2p}` is the
/// normalized dual of `β^p(v) = lim g(V, J E_{2p−1})` on the remaining
/// directions, with `β^p(e_{2p}) > 0`.
pub fn j_admissible_frame(
    model: &Model,
    tr: &LineTransport,
    frame: &AdmissibleFrame,
    window: (f64, f64),
) -> Result<AdmissibleFrame, Error> {
    let m = tr.g0.nrows();
    let d = m + 1;
    let n = (m - 1) / 2;
    let id = DMatrix::identity(m, m);
    let mut cols: Vec<DVector<f64>> = (0..m).map(|j| frame.coeffs.column(j).into_owned()).collect();
    let mut pairing = Vec::with_capacity(n);
    let fields: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..tr.r.len())
        .map(|k| {
            let f = model.radial(tr.r[k], &tr.x);
            (f.g, f.j)
        })
        .collect();
    for p in 1..=n {
        let lead = cols[2 * p - 1].clone();
        let rest: Vec<DVector<f64>> = cols[2 * p..].to_vec();
        let mut series = alloc::vec![Vec::with_capacity(tr.r.len()); rest.len()];
        for (k, (g, j)) in fields.iter().enumerate() {
            let mut e1 = DVector::zeros(d);
            e1.rows_mut(1, m).copy_from(&(&tr.frames[k] * &lead));
            let je1 = j * e1;
            for (s, c) in series.iter_mut().zip(&rest) {
                let mut v = DVector::zeros(d);
                v.rows_mut(1, m).copy_from(&(&tr.frames[k] * c));
                s.push((v.transpose() * g * &je1)[(0, 0)]);
            }
        }
        let lim: Vec<f64> = series
            .iter()
            .map(|y| extrapolate_limit(&tr.r, y, window, LimitMode::ExpFit).map(|l| l.value))
            .collect::<Result<_, _>>()?;
        let c = DVector::from_vec(lim);
        let nc = c.norm();
        if nc < 1e-8 {
            return Err(Error::Pairing(2 * p));
        }
        pairing.push(nc);
        let mut partner = DVector::zeros(m);
        for (w, v) in c.iter().zip(&rest) {
            partner += v * (*w / nc);
        }
        let mut fixed: Vec<DVector<f64>> = cols[..2 * p].to_vec();
        fixed.push(partner.clone());
        let tail = gram_schmidt(&id, &fixed, &rest, rest.len() - 1, 1e-6);
        if tail.len() != rest.len() - 1 {
            return Err(Error::Pairing(2 * p));
        }
        cols.truncate(2 * p);
        cols.push(partner);
        cols.extend(tail);
    }
    Ok(AdmissibleFrame { x: frame.x.clone(), coeffs: DMatrix::from_columns(&cols), j_admissible: true, pairing })
}

/// Decaying frame estimates along one line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub r: Vec<f64>,
    /// `‖E₀ − J∂r‖_g`.
    pub e0_jdr: Vec<f64>,
    /// `max_j |g(J∂r, E_j) − δ_{0j}|`.
    pub beta_offdiag: Vec<f64>,
    /// `max_p ‖J E_{2p−1} − E_{2p}‖_g`.
    pub j_pair: Vec<f64>,
    /// Largest deviation of the transported Gram matrix from the identity.
    pub orthonormality: f64,
}

pub fn frame_diagnostics(model: &Model, tr: &LineTransport, frame: &AdmissibleFrame) -> FrameDiagnostics {
    let m = tr.g0.nrows();
    let d = m + 1;
    let n = (m - 1) / 2;
    let mut out = FrameDiagnostics {
        r: tr.r.clone(),
        e0_jdr: Vec::with_capacity(tr.r.len()),
        beta_offdiag: Vec::with_capacity(tr.r.len()),
        j_pair: Vec::with_capacity(tr.r.len()),
        orthonormality: 0.0,
    };
    for k in 0..tr.r.len() {
        let f = model.radial(tr.r[k], &tr.x);
        let e = frame.at(tr, k);
        let mut full = DMatrix::zeros(d, m);
        full.view_mut((1, 0), (m, m)).copy_from(&e);
        let gram = full.transpose() * &f.g * &full;
        out.orthonormality = out.orthonormality.max((gram - DMatrix::identity(m, m)).amax());
        let jdr = f.j.column(0).into_owned();
        let e0 = full.column(0).into_owned();
        out.e0_jdr.push(norm_vec(&f.g, &(&e0 - &jdr)));
        let b = (0..m).fold(0.0f64, |a, j| {
            let v = (jdr.transpose() * &f.g * full.column(j))[(0, 0)];
            a.max((v - if j == 0 { 1.0 } else { 0.0 }).abs())
        });
        out.beta_offdiag.push(b);
        let jp = (1..=n).fold(0.0f64, |a, p| {
            let je = &f.j * full.column(2 * p - 1);
            a.max(norm_vec(&f.g, &(je - full.column(2 * p))))
        });
        out.j_pair.push(jp);
    }
    out
}

/// Full frame pipeline on one line: transport, `β`, `e₀`, admissible and
/// J-admissible completion.
#[derive(Clone, Debug, PartialEq)]
pub struct LineFrames {
    pub transport: LineTransport,
    pub beta: BetaSeries,
    pub e0: BoundaryVector,
    pub frame: AdmissibleFrame,
}

pub fn line_frames(model: &Model, chart: &Chart, x: &[f64], stepper: &Stepper, seed: u64) -> Result<LineFrames, Error> {
    let tr = transport_line(model, chart, x, stepper, seed)?;
    let window = fit_window(chart);
    let beta = beta_series(model, &tr, window)?;
    let e0 = extract_e0(&beta, &tr, 1e-6)?;
    let af = admissible_frame(&tr, &e0, seed)?;
    let frame = j_admissible_frame(model, &tr, &af, window)?;
    Ok(LineFrames { transport: tr, beta, e0, frame })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelKind, ModelSpec};

    fn short_chart() -> Chart {
        Chart { r_max: 6.0, ..Chart::default() }
    }

    #[test]
    fn permutations_are_distinct() {
        let mut all: Vec<Vec<usize>> = (0..6).map(|s| seed_permutation(3, s)).collect();
        assert_eq!(all[0], [0, 1, 2]);
        assert_eq!(seed_permutation(3, 6), [0, 1, 2]);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 6);
    }

    #[test]
    fn horo_frame_is_kahler() {
        let chart = short_chart();
        let model = Model::new(ModelSpec::exact(ModelKind::CphHoro), &chart).unwrap();
        let lf = line_frames(&model, &chart, &[0.1, -0.2, 0.2], &Stepper::default(), 0).unwrap();
        assert!(lf.beta.sum_sq_defect < 1e-8);
        assert!((lf.e0.beta_e0 - 1.0).abs() < 1e-6);
        let diag = frame_diagnostics(&model, &lf.transport, &lf.frame);
        let worst = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(*b));
        assert!(worst(&diag.e0_jdr) < 1e-7, "{}", worst(&diag.e0_jdr));
        assert!(worst(&diag.beta_offdiag) < 1e-7);
        assert!(worst(&diag.j_pair) < 1e-7);
        assert!(diag.orthonormality < 1e-8);
        assert!(lf.frame.j_admissible && lf.frame.pairing.len() == 1);
    }

    #[test]
    fn zero_beta_is_rejected() {
        let chart = short_chart();
        let model = Model::new(ModelSpec::exact(ModelKind::CphHoro), &chart).unwrap();
        let tr = transport_line(&model, &chart, &[0.0; 3], &Stepper::default(), 0).unwrap();
        let mut beta = beta_series(&model, &tr, fit_window(&chart)).unwrap();
        for l in beta.limits.iter_mut() {
            l.value = 0.0;
        }
        assert!(extract_e0(&beta, &tr, 1e-6).is_err());
    }
}
