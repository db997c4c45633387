//! Rescaled coframes `η^j_r`, the Carnot forms `γ_r`, the fields `ξ₀^r`,
//! `φ_r`, their extrapolation to `r = ∞` and the assembled boundary data.
//!
//! Everything is computed per radial line from the transported frames;
//! lines only meet again in [`assemble`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chart::{Chart, Grid, Slot, Symmetry, TensorField, D1};
use crate::curvature::eval4;
use crate::frames::{frame_diagnostics, line_frames, LineFrames, LineTransport};
use crate::linalg::{norm_bilinear, norm_cov, norm_endo, norm_vec, self_adjoint_eigen};
use crate::models::Model;
use crate::radial::{radial_coefficient, transport_parallel, RadialState, Stepper};
use crate::rates::{fit_decay_window, DecayFit, Regime};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitMode {
    Plain,
    ExpFit,
}

/// An extrapolated `r → ∞` limit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limit {
    pub value: f64,
    /// Tail rms of the fit, or the last increment for plain limits.
    pub residual: f64,
    /// Fitted rate `b`; `None` when the series is constant.
    pub slope: Option<f64>,
    pub mode: LimitMode,
    /// The exponential fit was abandoned for the plain limit.
    pub fallback: bool,
    /// Limit of the `(r+1)e^{−br}` form minus the exponential-fit limit.
    pub log_bias: Option<f64>,
}

/// Default window for limits: the last third of `[r_min, r_max]`.
pub fn fit_window(chart: &Chart) -> (f64, f64) {
    (chart.r_max - (chart.r_max - chart.r_min) / 3.0, chart.r_max)
}

/// Levenberg-Marquardt refinement of `y ≈ L + A·w(r)·e^{−b(r−r_end)}` with
/// `w = 1` or `w = (r+1)/(r_end+1)`. Returns `(L, A, b, rms)`.
fn refine(r: &[f64], y: &[f64], start: (f64, f64, f64), log: bool) -> (f64, f64, f64, f64) {
    let r_end = r[r.len() - 1];
    let basis = |rk: f64, b: f64| {
        let w = if log { (rk + 1.0) / (r_end + 1.0) } else { 1.0 };
        w * libm::exp(-b * (rk - r_end))
    };
    let sse = |p: (f64, f64, f64)| -> f64 {
        r.iter().zip(y).map(|(rk, yk)| { let e = yk - p.0 - p.1 * basis(*rk, p.2); e * e }).sum()
    };
    let mut p = start;
    let mut cur = sse(p);
    let mut mu = 1e-3;
    for _ in 0..60 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (rk, yk) in r.iter().zip(y) {
            let phi = basis(*rk, p.2);
            let row = Vector3::new(1.0, phi, -p.1 * (rk - r_end) * phi);
            jtj += row * row.transpose();
            jtr += row * (yk - p.0 - p.1 * phi);
        }
        let mut improved = false;
        for _ in 0..8 {
            let mut a = jtj;
            for k in 0..3 {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-300);
            }
            let Some(delta) = a.lu().solve(&jtr) else { break };
            let q = (p.0 + delta[0], p.1 + delta[1], p.2 + delta[2]);
            let s = sse(q);
            if s.is_finite() && s < cur {
                let rel = (cur - s) / cur.max(1e-300);
                p = q;
                cur = s;
                mu = (mu * 0.3).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (p.0, p.1, p.2, libm::sqrt(cur / r.len() as f64))
}

/// Limit of a sampled series. `ExpFit` solves `y = L + C e^{−br}` by
/// three-point elimination on the window and refines by least squares; a
/// non-monotone tail above the noise floor falls back to the plain limit.
pub fn extrapolate_limit(r: &[f64], y: &[f64], window: (f64, f64), mode: LimitMode) -> Result<Limit, Error> {
    if r.len() != y.len() {
        return Err(Error::Fit("length mismatch".into()));
    }
    let (rw, yw): (Vec<f64>, Vec<f64>) = r
        .iter()
        .zip(y)
        .filter(|(x, _)| **x >= window.0 - 1e-9 && **x <= window.1 + 1e-9)
        .map(|(a, b)| (*a, *b))
        .unzip();
    let n = rw.len();
    if n < 6 {
        return Err(Error::Fit(format!("{n} samples in the limit window, need at least 6")));
    }
    if yw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite values".into()));
    }
    let last = yw[n - 1];
    let plain = Limit {
        value: last,
        residual: (last - yw[n - 2]).abs(),
        slope: None,
        mode: LimitMode::Plain,
        fallback: false,
        log_bias: None,
    };
    if mode == LimitMode::Plain {
        return Ok(plain);
    }
    let scale = yw.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let noise = 1e-11 * scale;
    let inc: Vec<f64> = yw.windows(2).map(|w| w[1] - w[0]).collect();
    let significant: Vec<f64> = inc.iter().copied().filter(|d| d.abs() > noise).collect();
    if significant.is_empty() {
        return Ok(Limit { mode: LimitMode::ExpFit, ..plain });
    }
    let fallback = Limit { fallback: true, ..plain };
    let positive = significant[0] > 0.0;
    if significant.iter().any(|d| (*d > 0.0) != positive) {
        return Ok(fallback);
    }
    let s = (n - 1) / 2;
    let (i1, i2, i3) = (n - 1 - 2 * s, n - 1 - s, n - 1);
    let (y1, y2, y3) = (yw[i1], yw[i2], yw[i3]);
    let q = (y2 - y3) / (y1 - y2);
    if !(q > 0.0 && q < 1.0) || !q.is_finite() {
        return Ok(fallback);
    }
    let b0 = -libm::log(q) / (rw[i2] - rw[i1]);
    let l0 = y3 - (y2 - y3) * q / (1.0 - q);
    let (l, a, b, rms) = refine(&rw, &yw, (l0, y3 - l0, b0), false);
    if !l.is_finite() || !(b > 0.0) {
        return Ok(fallback);
    }
    let (ll, _, _, _) = refine(&rw, &yw, (l, a, b), true);
    Ok(Limit {
        value: l,
        residual: rms,
        slope: Some(b),
        mode: LimitMode::ExpFit,
        fallback: false,
        log_bias: if ll.is_finite() { Some(ll - l) } else { None },
    })
}

/// Frame-independent `φ_r`, `ψ_r` and `S_r` along a line, with the
/// residual of `∂rφ_r = φ_r S_r − S_r φ_r + ψ_r`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiSeries {
    pub r: Vec<f64>,
    pub phi: Vec<DMatrix<f64>>,
    pub psi: Vec<DMatrix<f64>>,
    pub shape: Vec<DMatrix<f64>>,
    /// Tangential `g_r`.
    pub g: Vec<DMatrix<f64>>,
    /// `g_r`-norm of the evolution residual, `∂rφ_r` by a five-point stencil.
    pub evolution: Vec<f64>,
    /// `‖Φ(J∂r)‖_g`, before restriction to the tangential block.
    pub phi_jdr: f64,
}

pub fn phi_series(model: &Model, x: &[f64], r: &[f64], h: f64) -> Result<PhiSeries, Error> {
    let mut out = PhiSeries {
        r: r.to_vec(),
        phi: Vec::with_capacity(r.len()),
        psi: Vec::with_capacity(r.len()),
        shape: Vec::with_capacity(r.len()),
        g: Vec::with_capacity(r.len()),
        evolution: Vec::with_capacity(r.len()),
        phi_jdr: 0.0,
    };
    for &rk in r {
        let f = model.radial(rk, x);
        let d = f.g.nrows();
        let m = d - 1;
        let gam = radial_coefficient(model, rk, x)?;
        let tb = |a: &DMatrix<f64>| a.view((1, 1), (m, m)).into_owned();
        // Φ = J + g(·, J∂r)⊗∂r − g(·, ∂r)⊗J∂r
        let jdr = f.j.column(0).into_owned();
        let mut big = f.j.clone();
        let row = jdr.transpose() * &f.g;
        for c in 0..d {
            big[(0, c)] += row[c];
        }
        let e0 = f.g.row(0).into_owned();
        for i in 0..d {
            for c in 0..d {
                big[(i, c)] -= e0[c] * jdr[i];
            }
        }
        out.phi_jdr = out.phi_jdr.max(norm_vec(&f.g, &(&big * &jdr)));
        let phi = tb(&big);
        let nabla = &f.dj + &gam * &f.j - &f.j * &gam;
        let psi = tb(&nabla);
        let s = tb(&gam);
        let mut dphi = DMatrix::zeros(m, m);
        for (o, w) in [-2.0, -1.0, 1.0, 2.0].iter().zip([D1[0], D1[1], D1[3], D1[4]]) {
            let jq = model.radial(rk + o * h, x).j;
            dphi += tb(&jq) * (w / h);
        }
        let g = tb(&f.g);
        let ginv = g.clone().try_inverse().ok_or(Error::NotPositiveDefinite(format!("r = {rk}")))?;
        let res = dphi - (&phi * &s - &s * &phi + &psi);
        out.evolution.push(norm_endo(&g, &ginv, &res));
        out.phi.push(phi);
        out.psi.push(psi);
        out.shape.push(s);
        out.g.push(g);
    }
    Ok(out)
}

/// Rescaled coframes along one line.
#[derive(Clone, Debug, PartialEq)]
pub struct CoframeSeries {
    pub r: Vec<f64>,
    /// Row `j` holds `η^j_r(∂xⁱ)`: `e^{−r} g(∂xⁱ, E₀)` for `j = 0`, else
    /// `e^{−r/2} g(∂xⁱ, E_j)`.
    pub eta: Vec<DMatrix<f64>>,
    /// `γ_r = e^{−r}(g_r − e^{2r} η⁰_r⊗η⁰_r)`, evaluated as `Σ_{j≥1} η^j_r⊗η^j_r`.
    pub gamma: Vec<DMatrix<f64>>,
    /// Column `j` holds `ξ_j^r`: `e^{r}E₀` for `j = 0`, else `e^{r/2}E_j`.
    pub xi: Vec<DMatrix<f64>>,
    /// Largest relative defect of `g_r = e^{2r}η⁰⊗η⁰ + e^{r}Σ η^j⊗η^j`.
    pub reconstruction: f64,
}

pub fn coframe_series(lf: &LineFrames, g: &[DMatrix<f64>]) -> CoframeSeries {
    let tr = &lf.transport;
    let m = tr.g0.nrows();
    let mut cs = CoframeSeries {
        r: tr.r.clone(),
        eta: Vec::with_capacity(tr.r.len()),
        gamma: Vec::with_capacity(tr.r.len()),
        xi: Vec::with_capacity(tr.r.len()),
        reconstruction: 0.0,
    };
    for (k, &rk) in tr.r.iter().enumerate() {
        let e = lf.frame.at(tr, k);
        let w: Vec<f64> = (0..m).map(|j| if j == 0 { libm::exp(-rk) } else { libm::exp(-0.5 * rk) }).collect();
        let mut eta = (e.transpose() * &g[k]).into_owned();
        let mut xi = e.clone();
        for j in 0..m {
            for i in 0..m {
                eta[(j, i)] *= w[j];
                xi[(i, j)] /= w[j];
            }
        }
        let eta0 = eta.row(0).transpose();
        // Σ_{j≥1} η^j⊗η^j equals e^{−r}(g_r − e^{2r}η⁰⊗η⁰) by the orthonormal
        // expansion, without the e^{r}-amplified cancellation.
        let mut gamma = DMatrix::zeros(m, m);
        for j in 1..m {
            let ej = eta.row(j).transpose();
            gamma += &ej * ej.transpose();
        }
        let rebuilt = &eta0 * eta0.transpose() * libm::exp(2.0 * rk) + &gamma * libm::exp(rk);
        let defect = (&rebuilt - &g[k]).amax() / g[k].amax();
        cs.reconstruction = cs.reconstruction.max(defect);
        cs.eta.push(eta);
        cs.gamma.push(gamma);
        cs.xi.push(xi);
    }
    cs
}

/// Residual of the second-order system satisfied by the `η^j_r` with
/// curvature coefficients `u^j_k`, at every `stride`-th sample. Frames at
/// `r ± h`, `r ± 2h` come from short transports. Returns
/// `(max residual, max |u|)`.
pub fn eta_ode_residual(
    model: &Model,
    lf: &LineFrames,
    g0inv: &DMatrix<f64>,
    stride: usize,
    stepper: &Stepper,
) -> Result<(f64, f64), Error> {
    let tr: &LineTransport = &lf.transport;
    let m = tr.g0.nrows();
    let d = m + 1;
    let h = stepper.h;
    let span = (f64::NEG_INFINITY, f64::INFINITY);
    let eta_at = |r: f64, e: &DMatrix<f64>| -> DMatrix<f64> {
        let g = model.radial(r, &tr.x).g;
        let gt = g.view((1, 1), (m, m)).into_owned();
        let mut eta = (e.transpose() * gt).into_owned();
        for j in 0..m {
            let w = if j == 0 { libm::exp(-r) } else { libm::exp(-0.5 * r) };
            eta.row_mut(j).scale_mut(w);
        }
        eta
    };
    let (mut res, mut umax) = (0.0f64, 0.0f64);
    let n = tr.r.len();
    for k in (1..n.saturating_sub(1)).step_by(stride.max(1)) {
        let rk = tr.r[k];
        let e = lf.frame.at(tr, k);
        let state = RadialState::new(tr.x.clone(), rk, &e);
        let mut etas = Vec::with_capacity(5);
        for o in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            if o == 0.0 {
                etas.push(eta_at(rk, &e));
            } else {
                let s = transport_parallel(model, &state, rk + o * h, span, stepper)?;
                etas.push(eta_at(rk + o * h, &s.tangential()));
            }
        }
        let d1 = (&etas[0] * D1[0] + &etas[1] * D1[1] + &etas[3] * D1[3] + &etas[4] * D1[4]) / h;
        let d2 = (&etas[0] * -1.0 + &etas[1] * 16.0 - &etas[2] * 30.0 + &etas[3] * 16.0 - &etas[4]) / (12.0 * h * h);
        let mut p = vec![rk];
        p.extend_from_slice(&tr.x);
        let b = model.curvature(&p, false)?;
        let mut dr = vec![0.0; d];
        dr[0] = 1.0;
        let full = |j: usize| {
            let mut v = vec![0.0; d];
            for i in 0..m {
                v[i + 1] = e[(i, j)];
            }
            v
        };
        let cols: Vec<Vec<f64>> = (0..m).map(full).collect();
        let rr = |j: usize, l: usize| eval4(d, &b.riemann, &dr, &cols[j], &dr, &cols[l]);
        let mut u = DMatrix::zeros(m, m);
        for j in 0..m {
            for l in 0..m {
                u[(j, l)] = match (j, l) {
                    (0, 0) => -(rr(0, 0) + 1.0),
                    (0, _) => -libm::exp(-0.5 * rk) * rr(0, l),
                    (_, 0) => -libm::exp(0.5 * rk) * rr(0, j),
                    _ if j == l => -(rr(j, j) + 0.25),
                    _ => -rr(j, l),
                };
            }
        }
        umax = umax.max(u.amax());
        let rhs = &u * &etas[2];
        for j in 0..m {
            let c = if j == 0 { 2.0 } else { 1.0 };
            let lhs = d2.row(j) + d1.row(j) * c;
            let diff = (lhs - rhs.row(j)).transpose();
            res = res.max(norm_cov(g0inv, &diff));
        }
    }
    Ok((res, umax))
}

/// Limits of the per-line series.
#[derive(Clone, Debug, PartialEq)]
pub struct LineLimits {
    pub eta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub max_residual: f64,
    pub max_log_bias: f64,
    /// Fallbacks to the plain limit on tails still moving above `1e-10`.
    pub fallbacks: usize,
}

fn limit_matrix(
    r: &[f64],
    series: &[DMatrix<f64>],
    window: (f64, f64),
    acc: &mut (f64, f64, usize),
) -> Result<DMatrix<f64>, Error> {
    let (a, b) = series[0].shape();
    let mut out = DMatrix::zeros(a, b);
    for i in 0..a {
        for j in 0..b {
            let y: Vec<f64> = series.iter().map(|s| s[(i, j)]).collect();
            let l = extrapolate_limit(r, &y, window, LimitMode::ExpFit)?;
            out[(i, j)] = l.value;
            acc.0 = acc.0.max(l.residual);
            acc.1 = acc.1.max(l.log_bias.unwrap_or(0.0).abs());
            acc.2 += (l.fallback && l.residual > 1e-10) as usize;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryOptions {
    /// Gram-Schmidt seed permutation index.
    pub seed: u64,
    pub drift_tol: f64,
    pub richardson: bool,
    pub rate_window: (f64, f64),
    /// Sample stride of the `η` system residual.
    pub ode_stride: usize,
    pub pinching_dirs: usize,
    pub pinching_seed: u64,
    pub fault: Fault,
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        BoundaryOptions {
            seed: 0,
            drift_tol: 1e-8,
            richardson: true,
            rate_window: (6.0, 12.0),
            ode_stride: 8,
            pinching_dirs: 100,
            pinching_seed: 7,
            fault: Fault::None,
        }
    }
}

/// Deliberate corruption of the assembled data, for detection tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    ScaleGamma(f64),
    FlipPhi,
}

/// Scalar diagnostics of one line.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LineDiagnostics {
    pub reconstruction: f64,
    pub ode_residual: f64,
    pub u_max: f64,
    pub evolution: f64,
    pub phi_jdr: f64,
    pub beta_sum_sq: f64,
    pub beta_e0: f64,
    pub drift: f64,
    pub orthonormality: f64,
    pub pinching: f64,
    pub extrapolation_residual: f64,
    pub log_bias: f64,
    pub fallbacks: usize,
}

/// Everything a line contributes to the boundary data.
#[derive(Clone, Debug, PartialEq)]
pub struct LineResult {
    pub x: Vec<f64>,
    pub g0: DMatrix<f64>,
    pub limits: LineLimits,
    /// Deviation series keyed by quantity, one value per radial sample.
    pub deviations: BTreeMap<String, Vec<f64>>,
    pub diag: LineDiagnostics,
}

pub const SERIES_KEYS: [&str; 10] =
    ["eta0", "gamma", "xi0", "phi", "shape", "beta", "e0_jdr", "j_pair", "evolution", "psi"];

fn stepper(chart: &Chart, opts: &BoundaryOptions) -> Stepper {
    Stepper { h: chart.h_r, richardson: opts.richardson, drift_tol: opts.drift_tol }
}

/// Runs the full per-line pipeline at base point `x`.
pub fn compute_line(model: &Model, chart: &Chart, x: &[f64], opts: &BoundaryOptions) -> Result<LineResult, Error> {
    let st = stepper(chart, opts);
    let lf = line_frames(model, chart, x, &st, opts.seed)?;
    let tr = &lf.transport;
    let window = fit_window(chart);
    let ps = phi_series(model, x, &tr.r, chart.h_r)?;
    let cs = coframe_series(&lf, &ps.g);
    let g0 = tr.g0.clone();
    let g0inv = g0.clone().try_inverse().ok_or(Error::NotPositiveDefinite("g₀".into()))?;
    let mut acc = (0.0, 0.0, 0usize);
    let eta = limit_matrix(&tr.r, &cs.eta, window, &mut acc)?;
    let gamma = limit_matrix(&tr.r, &cs.gamma, window, &mut acc)?;
    let gamma = (&gamma + gamma.transpose()) * 0.5;
    let xi = limit_matrix(&tr.r, &cs.xi, window, &mut acc)?;
    let phi = limit_matrix(&tr.r, &ps.phi, window, &mut acc)?;
    let limits = LineLimits { eta, gamma, xi, phi, max_residual: acc.0, max_log_bias: acc.1, fallbacks: acc.2 };

    let eta0 = limits.eta.row(0).transpose();
    let xi0 = limits.xi.column(0).into_owned();
    let m = g0.nrows();
    let model_s = (DMatrix::identity(m, m) + &xi0 * eta0.transpose()) * 0.5;
    let fd = frame_diagnostics(model, tr, &lf.frame);
    let mut dev: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut push = |k: &str, v: f64| dev.entry(k.into()).or_default().push(v);
    for k in 0..tr.r.len() {
        push("eta0", norm_cov(&g0inv, &(cs.eta[k].row(0).transpose() - &eta0)));
        push("gamma", norm_bilinear(&g0inv, &(&cs.gamma[k] - &limits.gamma)));
        push("xi0", norm_vec(&g0, &(cs.xi[k].column(0) - &xi0)));
        push("phi", norm_endo(&g0, &g0inv, &(&ps.phi[k] - &limits.phi)));
        push("shape", norm_endo(&g0, &g0inv, &(&ps.shape[k] - &model_s)));
        push("beta", lf.beta.deviation[k]);
        push("e0_jdr", fd.e0_jdr[k]);
        push("j_pair", fd.j_pair[k]);
        push("evolution", ps.evolution[k]);
        let gi = ps.g[k].clone().try_inverse().ok_or(Error::NotPositiveDefinite("g_r".into()))?;
        push("psi", norm_endo(&ps.g[k], &gi, &ps.psi[k]));
    }

    let (ode_residual, u_max) = eta_ode_residual(model, &lf, &g0inv, opts.ode_stride, &st)?;
    let pinching = pinching_lambda(&g0, &cs, opts.pinching_dirs, opts.pinching_seed);
    let diag = LineDiagnostics {
        reconstruction: cs.reconstruction,
        ode_residual,
        u_max,
        evolution: ps.evolution.iter().fold(0.0f64, |a, b| a.max(*b)),
        phi_jdr: ps.phi_jdr,
        beta_sum_sq: lf.beta.sum_sq_defect,
        beta_e0: (lf.e0.beta_e0 - 1.0).abs(),
        drift: tr.max_drift,
        orthonormality: fd.orthonormality,
        pinching,
        extrapolation_residual: limits.max_residual,
        log_bias: limits.max_log_bias,
        fallbacks: limits.fallbacks,
    };
    Ok(LineResult { x: x.to_vec(), g0, limits, deviations: dev, diag })
}

/// `λ` with `λ⁻¹e^{r}g₀ ≤ g_r ≤ λe^{2r}g₀` from `q_r = η⁰_r⊗η⁰_r + γ_r`
/// over seeded random `g₀`-unit directions, maximized over `r`.
pub fn pinching_lambda(g0: &DMatrix<f64>, cs: &CoframeSeries, dirs: usize, seed: u64) -> f64 {
    let m = g0.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
    let vs: Vec<DVector<f64>> = (0..dirs)
        .map(|_| {
            let v = DVector::from_fn(m, |_, _| unit());
            let n = norm_vec(g0, &v).max(1e-300);
            v / n
        })
        .collect();
    let mut lambda = 1.0f64;
    for k in 0..cs.r.len() {
        let eta0 = cs.eta[k].row(0).transpose();
        for v in &vs {
            let t = eta0.dot(v);
            let q = t * t + (v.transpose() * &cs.gamma[k] * v)[(0, 0)];
            lambda = lambda.max(q).max(1.0 / q.max(1e-300));
        }
    }
    lambda
}

/// Pointwise identities of the assembled data, as grid maxima.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Invariants {
    pub eta0_xi0: f64,
    pub gamma_xi0: f64,
    /// Smallest and second-smallest `g₀`-relative eigenvalues of `γ`.
    pub gamma_eig_min: f64,
    pub gamma_eig_second: f64,
    pub phi_xi0: f64,
    pub eta0_phi: f64,
    pub phi_sq: f64,
    pub phi_cube: f64,
    pub gamma_phi: f64,
    /// `‖lim ξ₀^r − ξ₀^γ‖_{g₀}` with `ξ₀^γ` the kernel of `γ` scaled to `η⁰ = 1`.
    pub xi0_routes: f64,
    pub coframe_sigma_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub grid: Grid,
    pub r: Vec<f64>,
    pub eta0: TensorField,
    pub gamma: TensorField,
    pub xi0: TensorField,
    pub phi: TensorField,
    /// Tangential metric at `r_min`, the reference for every norm.
    pub g0: TensorField,
    /// Per-slice maxima of the deviation series.
    pub series: BTreeMap<String, Vec<f64>>,
    pub fits: BTreeMap<String, DecayFit>,
    pub invariants: Invariants,
    /// Grid maxima of the line diagnostics (minimum count for none).
    pub diagnostics: LineDiagnostics,
    pub flags: Vec<String>,
    pub fault: Fault,
}

/// Tolerance for the pointwise identities and the `ξ₀` cross-check.
pub const IDENTITY_TOL: f64 = 1e-6;
pub const XI0_ROUTE_TOL: f64 = 1e-5;

/// Assembles line results (in base-grid order) into boundary data.
pub fn assemble(model: &Model, chart: &Chart, lines: Vec<LineResult>, opts: &BoundaryOptions) -> Result<BoundaryData, Error> {
    let grid = chart.base_grid();
    if lines.len() != grid.len() {
        return Err(Error::ChartMismatch);
    }
    let m = chart.dim_boundary;
    let r = chart.r_samples();
    let mut inv = Invariants { gamma_eig_min: f64::INFINITY, gamma_eig_second: f64::INFINITY, coframe_sigma_min: f64::INFINITY, ..Default::default() };
    let mut flags = Vec::new();
    let mut diag = LineDiagnostics::default();
    let (mut e, mut ga, mut xs, mut ph, mut gz) = (vec![], vec![], vec![], vec![], vec![]);
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (p, line) in lines.iter().enumerate() {
        let g0 = &line.g0;
        let g0inv = g0.clone().try_inverse().ok_or(Error::NotPositiveDefinite("g₀".into()))?;
        let l = &line.limits;
        let eta0 = l.eta.row(0).transpose();
        let xi0 = l.xi.column(0).into_owned();
        let id = DMatrix::<f64>::identity(m, m);
        inv.eta0_xi0 = inv.eta0_xi0.max((eta0.dot(&xi0) - 1.0).abs());
        inv.gamma_xi0 = inv.gamma_xi0.max((xi0.transpose() * &l.gamma * &xi0)[(0, 0)].abs());
        let (vals, vecs) = self_adjoint_eigen(g0, &(&g0inv * &l.gamma))?;
        inv.gamma_eig_min = inv.gamma_eig_min.min(vals[0]);
        inv.gamma_eig_second = inv.gamma_eig_second.min(vals[1]);
        if vals[0] < -IDENTITY_TOL {
            return Err(Error::Degenerate(format!("γ not positive semi-definite at {:?}: {}", line.x, vals[0])));
        }
        let k = vecs.column(0).into_owned();
        let kd = eta0.dot(&k);
        if kd.abs() > 1e-12 {
            inv.xi0_routes = inv.xi0_routes.max(norm_vec(g0, &(&k / kd - &xi0)));
        } else {
            inv.xi0_routes = f64::INFINITY;
        }
        inv.phi_xi0 = inv.phi_xi0.max(norm_vec(g0, &(&l.phi * &xi0)));
        inv.eta0_phi = inv.eta0_phi.max(norm_cov(&g0inv, &(l.phi.transpose() * &eta0)));
        let sq = &l.phi * &l.phi;
        inv.phi_sq = inv.phi_sq.max(norm_endo(g0, &g0inv, &(&sq + &id - &xi0 * eta0.transpose())));
        inv.phi_cube = inv.phi_cube.max(norm_endo(g0, &g0inv, &(&sq * &l.phi + &l.phi)));
        inv.gamma_phi = inv.gamma_phi.max(norm_bilinear(&g0inv, &(l.phi.transpose() * &l.gamma * &l.phi - &l.gamma)));
        let sv = l.eta.clone().singular_values();
        inv.coframe_sigma_min = inv.coframe_sigma_min.min(sv.min());

        let d = &line.diag;
        diag.reconstruction = diag.reconstruction.max(d.reconstruction);
        diag.ode_residual = diag.ode_residual.max(d.ode_residual);
        diag.u_max = diag.u_max.max(d.u_max);
        diag.evolution = diag.evolution.max(d.evolution);
        diag.phi_jdr = diag.phi_jdr.max(d.phi_jdr);
        diag.beta_sum_sq = diag.beta_sum_sq.max(d.beta_sum_sq);
        diag.beta_e0 = diag.beta_e0.max(d.beta_e0);
        diag.drift = diag.drift.max(d.drift);
        diag.orthonormality = diag.orthonormality.max(d.orthonormality);
        diag.pinching = diag.pinching.max(d.pinching);
        diag.extrapolation_residual = diag.extrapolation_residual.max(d.extrapolation_residual);
        diag.log_bias = diag.log_bias.max(d.log_bias);
        diag.fallbacks += d.fallbacks;

        for (key, vals) in &line.deviations {
            let s = series.entry(key.clone()).or_insert_with(|| vec![0.0; vals.len()]);
            for (a, b) in s.iter_mut().zip(vals) {
                *a = a.max(*b);
            }
        }
        if line.x.iter().zip(grid.point(p)).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::ChartMismatch);
        }
        e.push(eta0.iter().copied().collect::<Vec<f64>>());
        let gs = (&l.gamma + l.gamma.transpose()) * 0.5;
        ga.push(gs.transpose().iter().copied().collect::<Vec<f64>>());
        xs.push(xi0.iter().copied().collect::<Vec<f64>>());
        ph.push(l.phi.transpose().iter().copied().collect::<Vec<f64>>());
        gz.push(g0.transpose().iter().copied().collect::<Vec<f64>>());
    }
    if inv.gamma_eig_second <= IDENTITY_TOL {
        flags.push(format!("γ has more than one null direction (second eigenvalue {:.3e})", inv.gamma_eig_second));
    }
    if inv.xi0_routes > XI0_ROUTE_TOL {
        flags.push(format!("ξ₀ routes disagree by {:.3e}", inv.xi0_routes));
    }
    if diag.fallbacks > 0 {
        flags.push(format!("{} limits fell back to plain evaluation", diag.fallbacks));
    }
    let regime = if model.spec.kind.is_exact() { None } else { Some(Regime::of(model.spec.a)) };
    let mut fits = BTreeMap::new();
    for (key, vals) in &series {
        if let Ok(mut f) = fit_decay_window(&r, vals, opts.rate_window, true) {
            f.regime = regime;
            fits.insert(key.clone(), f);
        }
    }
    let field = |slots: Vec<Slot>, sym: Symmetry, pts: &[Vec<f64>]| TensorField::from_points(grid.clone(), m, slots, sym, pts);
    let gamma = match field(vec![Slot::Co, Slot::Co], Symmetry::SymmetricPairs, &ga) {
        Ok(f) => f,
        Err(_) => field(vec![Slot::Co, Slot::Co], Symmetry::None, &ga)?,
    };
    let mut data = BoundaryData {
        grid: grid.clone(),
        r,
        eta0: field(vec![Slot::Co], Symmetry::None, &e)?,
        gamma,
        xi0: field(vec![Slot::Contra], Symmetry::None, &xs)?,
        phi: field(vec![Slot::Contra, Slot::Co], Symmetry::None, &ph)?,
        g0: field(vec![Slot::Co, Slot::Co], Symmetry::None, &gz)?,
        series,
        fits,
        invariants: inv,
        diagnostics: diag,
        flags,
        fault: Fault::None,
    };
    data.inject(opts.fault);
    Ok(data)
}

impl BoundaryData {
    pub fn inject(&mut self, fault: Fault) {
        match fault {
            Fault::None => {}
            Fault::ScaleGamma(c) => self.gamma.data.iter_mut().for_each(|v| *v *= c),
            Fault::FlipPhi => self.phi.data.iter_mut().for_each(|v| *v = -*v),
        }
        if fault != Fault::None {
            self.fault = fault;
        }
    }

    pub fn at(&self, field: &TensorField, p: usize) -> DMatrix<f64> {
        let m = field.dim;
        match field.rank() {
            1 => DMatrix::from_column_slice(m, 1, field.at(p)),
            _ => DMatrix::from_row_slice(m, m, field.at(p)),
        }
    }
}

/// Sequential end-to-end boundary data.
pub fn boundary_data(model: &Model, chart: &Chart, opts: &BoundaryOptions) -> Result<BoundaryData, Error> {
    let grid = chart.base_grid();
    let lines = (0..grid.len())
        .map(|p| compute_line(model, chart, &grid.point(p), opts))
        .collect::<Result<Vec<_>, _>>()?;
    assemble(model, chart, lines, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelKind, ModelSpec};

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn exponential_limit_is_exact() {
        let r = grid(4.0, 10.0, 7);
        let y: Vec<f64> = r.iter().map(|x| 2.0 + 3.0 * libm::exp(-1.2 * x)).collect();
        let l = extrapolate_limit(&r, &y, (4.0, 10.0), LimitMode::ExpFit).unwrap();
        assert!((l.value - 2.0).abs() < 1e-9, "{}", l.value);
        assert!((l.slope.unwrap() - 1.2).abs() < 1e-6);
        assert!(!l.fallback);
    }

    #[test]
    fn constant_limit_has_no_slope() {
        let r = grid(4.0, 10.0, 7);
        let l = extrapolate_limit(&r, &[0.7; 7], (4.0, 10.0), LimitMode::ExpFit).unwrap();
        assert_eq!(l.value, 0.7);
        assert!(l.slope.is_none());
    }

    #[test]
    fn borderline_limit_reports_bias() {
        let r = grid(0.5, 12.0, 93);
        let y: Vec<f64> = r.iter().map(|x| 2.0 + (x + 1.0) * libm::exp(-1.5 * x)).collect();
        let l = extrapolate_limit(&r, &y, (8.0, 12.0), LimitMode::ExpFit).unwrap();
        assert!((l.value - 2.0).abs() < 1e-4);
        assert!(l.log_bias.is_some());
    }

    #[test]
    fn oscillating_tail_falls_back() {
        let r = grid(4.0, 10.0, 13);
        let y: Vec<f64> = r.iter().enumerate().map(|(k, _)| 1.0 + if k % 2 == 0 { 1e-6 } else { -1e-6 }).collect();
        let l = extrapolate_limit(&r, &y, (4.0, 10.0), LimitMode::ExpFit).unwrap();
        assert!(l.fallback && l.mode == LimitMode::Plain);
    }

    #[test]
    fn too_few_window_samples() {
        let r = grid(4.0, 10.0, 4);
        assert!(extrapolate_limit(&r, &[1.0; 4], (4.0, 10.0), LimitMode::ExpFit).is_err());
    }

    #[test]
    fn horo_line_closed_form() {
        let chart = Chart::default();
        let model = Model::new(ModelSpec::exact(ModelKind::CphHoro), &chart).unwrap();
        let x = [0.1, 0.2, -0.1];
        let st = Stepper::default();
        let lf = line_frames(&model, &chart, &x, &st, 0).unwrap();
        let ps = phi_series(&model, &x, &lf.transport.r, chart.h_r).unwrap();
        let cs = coframe_series(&lf, &ps.g);
        assert!(cs.reconstruction < 1e-8);
        for eta in &cs.eta {
            assert!((eta[(0, 0)] - 1.0).abs() < 1e-8);
        }
        assert!(ps.phi_jdr < 1e-12);
        assert!(ps.evolution.iter().all(|v| *v < 1e-6));
        let g0inv = lf.transport.g0.clone().try_inverse().unwrap();
        let (res, umax) = eta_ode_residual(&model, &lf, &g0inv, 16, &st).unwrap();
        assert!(umax < 1e-8, "{umax}");
        assert!(res < 1e-6, "{res}");
    }
}
