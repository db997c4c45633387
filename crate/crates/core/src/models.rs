//! Built-in metric and almost complex structure families.
//!
//! Every model is given by a radial orthonormal coframe `C = diag(1, A(r, x))`
//! together with a complex structure `J₀` in that frame, so that
//! `g = CᵀC` and `J = C⁻¹J₀C`. Compatibility and `J² = −Id` then hold by
//! construction, and the Gauss form `g = dr² + g_r` is exact.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chart::{Chart, Metric, Slot, Symmetry, TensorField};
use crate::curvature::{deficits, CurvatureBundle, DeficitSeries, PointNorms};
use crate::jet::{Dual, Jet, Real};
use crate::linalg::{invert, matmul, self_adjoint_eigen};
use crate::Error;

/// Twist of the horospherical contact form `θ = dt − κ(x dy − y dx)`.
pub const HORO_KAPPA: f64 = 0.5;
/// Orientation of `J` on the horizontal pair of the horospherical frame.
pub const HORO_SIGN: f64 = -1.0;
/// Orientation of `J` on `(σ₂, σ₃)` in the polar model.
pub const POLAR_SIGN: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    CphPolar,
    CphHoro,
    PerturbedMetric,
    #[serde(rename = "rotated_J")]
    RotatedJ,
}

impl ModelKind {
    pub fn is_exact(self) -> bool {
        matches!(self, ModelKind::CphPolar | ModelKind::CphHoro)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CphPolar => "cph_polar",
            ModelKind::CphHoro => "cph_horo",
            ModelKind::PerturbedMetric => "perturbed_metric",
            ModelKind::RotatedJ => "rotated_J",
        }
    }
}

/// Bump `w(x) = 1 + amplitude·sin(x^axis)` used by `perturbed_metric`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub axis: usize,
    pub amplitude: f64,
}

impl Default for Bump {
    fn default() -> Self {
        Bump { axis: 0, amplitude: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n: usize,
    pub a: f64,
    pub eps: f64,
    pub analytic_derivatives: bool,
    #[serde(default)]
    pub bump: Bump,
}

impl ModelSpec {
    pub fn exact(kind: ModelKind) -> Self {
        ModelSpec { kind, n: 1, a: 0.0, eps: 0.0, analytic_derivatives: true, bump: Bump::default() }
    }

    pub fn perturbed(kind: ModelKind, a: f64, eps: f64) -> Self {
        ModelSpec { kind, n: 1, a, eps, analytic_derivatives: true, bump: Bump::default() }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.n < 1 {
            return Err(Error::config("model.n", "must be ≥ 1"));
        }
        if self.n != 1 {
            return Err(Error::Unsupported(alloc::format!("{} with n = {}", self.kind.name(), self.n)));
        }
        if self.kind.is_exact() {
            if self.eps != 0.0 {
                return Err(Error::config("model.eps", "must be 0 for exact kinds"));
            }
        } else {
            if !(self.a > 0.0) {
                return Err(Error::config("model.a", "must be > 0"));
            }
            if !(self.eps.abs() < 0.5) {
                return Err(Error::config("model.eps", "must satisfy |eps| < 0.5"));
            }
            if self.bump.axis >= 2 * self.n + 1 {
                return Err(Error::config("model.bump.axis", "must index a boundary axis"));
            }
        }
        Ok(())
    }
}

/// Coordinate components and derivatives of `g` and `J` at one point.
/// `dg[k][i][j] = ∂_k g_{ij}`, `ddg[k][l][i][j] = ∂_k∂_l g_{ij}`,
/// `j[i][j] = J^i_j`, same layout for the derivatives of `J`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFields {
    pub d: usize,
    pub g: Vec<f64>,
    pub dg: Vec<f64>,
    pub ddg: Vec<f64>,
    pub j: Vec<f64>,
    pub dj: Vec<f64>,
    pub ddj: Vec<f64>,
}

impl LocalFields {
    pub fn zeros(d: usize) -> Self {
        LocalFields {
            d,
            g: vec![0.0; d * d],
            dg: vec![0.0; d * d * d],
            ddg: vec![0.0; d * d * d * d],
            j: vec![0.0; d * d],
            dj: vec![0.0; d * d * d],
            ddj: vec![0.0; d * d * d * d],
        }
    }
}

/// `g` and `J` along a radial line with their first `r`-derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialFields {
    pub g: DMatrix<f64>,
    pub dg: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub dj: DMatrix<f64>,
}

const D: usize = 4;

/// A validated model ready for evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub h_x: f64,
}

impl Model {
    pub fn new(spec: ModelSpec, chart: &Chart) -> Result<Self, Error> {
        spec.validate()?;
        chart.validate()?;
        if chart.dim_boundary != 2 * spec.n + 1 {
            return Err(Error::config("chart.dim_boundary", "must equal 2n+1"));
        }
        if spec.kind == ModelKind::CphPolar {
            let far = chart.base_box.iter().any(|b| b[0] < -0.5 || b[1] > 0.5);
            if far {
                return Err(Error::config("chart.base_box", "must stay within radius 0.5 for cph_polar"));
            }
        }
        Ok(Model { spec, h_x: chart.h_x })
    }

    pub fn dim(&self) -> usize {
        D
    }

    /// Orthonormal coframe `C` (rows) and complex structure `J₀` in that frame.
    pub fn coframe<T: Real>(&self, p: &[T]) -> (Vec<T>, Vec<T>) {
        let z = T::cst(0.0);
        let one = T::cst(1.0);
        let (r, x1, x2, x3) = (p[0], p[1], p[2], p[3]);
        let mut c = vec![z; D * D];
        c[0] = one;
        let mut sign = HORO_SIGN;
        match self.spec.kind {
            ModelKind::CphPolar => {
                sign = POLAR_SIGN;
                let q = one / (one + x1 * x1 + x2 * x2 + x3 * x3);
                // σ = (dx + x × dx)/(1 + |x|²)
                let a = [
                    [one, -x3, x2],
                    [x3, one, -x1],
                    [-x2, x1, one],
                ];
                let w = [r.sinh(), r.scale(0.5).sinh().scale(2.0), r.scale(0.5).sinh().scale(2.0)];
                for i in 0..3 {
                    for j in 0..3 {
                        c[(i + 1) * D + j + 1] = w[i] * a[i][j] * q;
                    }
                }
            }
            _ => {
                let er = r.exp();
                let eh = r.scale(0.5).exp();
                c[D + 1] = er;
                c[D + 2] = er * x3.scale(HORO_KAPPA);
                c[D + 3] = -(er * x2.scale(HORO_KAPPA));
                c[2 * D + 2] = eh;
                c[3 * D + 3] = eh;
                if self.spec.kind == ModelKind::PerturbedMetric && self.spec.eps != 0.0 {
                    let b = self.spec.bump;
                    let w = one + p[1 + b.axis].sin().scale(b.amplitude);
                    let f = (one + r.scale(-self.spec.a).exp().scale(self.spec.eps) * w).sqrt();
                    for e in c.iter_mut().skip(D) {
                        if !e.is_zero() {
                            *e = *e * f;
                        }
                    }
                }
            }
        }
        let mut j0 = vec![z; D * D];
        j0[D] = one;
        j0[1] = -one;
        j0[3 * D + 2] = T::cst(sign);
        j0[2 * D + 3] = T::cst(-sign);
        if self.spec.kind == ModelKind::RotatedJ && self.spec.eps != 0.0 {
            let alpha = r.scale(-self.spec.a).exp().scale(self.spec.eps);
            let (co, si) = (alpha.cos(), alpha.sin());
            let mut q = vec![z; D * D];
            q[0] = one;
            q[3 * D + 3] = one;
            q[D + 1] = co;
            q[2 * D + 1] = si;
            q[D + 2] = -si;
            q[2 * D + 2] = co;
            let mut qt = vec![z; D * D];
            for i in 0..D {
                for k in 0..D {
                    qt[i * D + k] = q[k * D + i];
                }
            }
            j0 = matmul(D, D, D, &matmul(D, D, D, &q, &j0), &qt);
        }
        (c, j0)
    }

    /// Coordinate components of `g` and `J` at `p = (r, x)`.
    pub fn structure<T: Real>(&self, p: &[T]) -> (Vec<T>, Vec<T>) {
        let (c, j0) = self.coframe(p);
        let mut ct = vec![T::cst(0.0); D * D];
        for i in 0..D {
            for k in 0..D {
                ct[i * D + k] = c[k * D + i];
            }
        }
        let g = matmul(D, D, D, &ct, &c);
        let cinv = invert(D, &c).expect("model coframe is invertible");
        let j = matmul(D, D, D, &cinv, &matmul(D, D, D, &j0, &c));
        (g, j)
    }

    fn eval_f64(&self, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.structure(p)
    }

    /// Local derivative data, analytic or finite-difference per the spec.
    pub fn local(&self, p: &[f64]) -> LocalFields {
        if self.spec.analytic_derivatives {
            self.local_analytic(p)
        } else {
            self.local_fd(p, self.h_x)
        }
    }

    pub fn local_analytic(&self, p: &[f64]) -> LocalFields {
        let x: Vec<Jet<D>> = (0..D).map(|k| Jet::<D>::var(p[k], k)).collect();
        let (g, j) = self.structure(&x);
        let mut lf = LocalFields::zeros(D);
        let dd = D * D;
        for a in 0..dd {
            lf.g[a] = g[a].v;
            lf.j[a] = j[a].v;
            for k in 0..D {
                lf.dg[k * dd + a] = g[a].g[k];
                lf.dj[k * dd + a] = j[a].g[k];
                for l in 0..D {
                    lf.ddg[(k * D + l) * dd + a] = g[a].h[k][l];
                    lf.ddj[(k * D + l) * dd + a] = j[a].h[k][l];
                }
            }
        }
        lf
    }

    /// Five-point stencils of step `h` in every coordinate direction.
    pub fn local_fd(&self, p: &[f64], h: f64) -> LocalFields {
        use crate::chart::{D1, D2};
        let dd = D * D;
        let eval = |q: &[f64]| -> Vec<f64> {
            let (g, j) = self.eval_f64(q);
            g.into_iter().chain(j).collect()
        };
        let shifted = |k: usize, a: f64, l: usize, b: f64| {
            let mut q = p.to_vec();
            q[k] += a;
            q[l] += b;
            eval(&q)
        };
        let centre = eval(p);
        let mut lf = LocalFields::zeros(D);
        lf.g.copy_from_slice(&centre[..dd]);
        lf.j.copy_from_slice(&centre[dd..]);
        let offs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let mut d1 = vec![vec![0.0; 2 * dd]; D];
        for k in 0..D {
            let samples: Vec<Vec<f64>> = offs.iter().map(|o| shifted(k, o * h, k, 0.0)).collect();
            for c in 0..2 * dd {
                let f: [f64; 5] = core::array::from_fn(|s| samples[s][c]);
                d1[k][c] = D1.iter().zip(f.iter()).map(|(w, v)| w * v).sum::<f64>() / h;
                let second = D2.iter().zip(f.iter()).map(|(w, v)| w * v).sum::<f64>() / (h * h);
                lf.ddg_or_ddj(k, k, c, second);
            }
        }
        for k in 0..D {
            for l in (k + 1)..D {
                // nested first-derivative stencils
                let mut acc = vec![0.0; 2 * dd];
                for (si, wi) in offs.iter().zip(D1.iter()) {
                    if *wi == 0.0 {
                        continue;
                    }
                    for (sj, wj) in offs.iter().zip(D1.iter()) {
                        if *wj == 0.0 {
                            continue;
                        }
                        let v = shifted(k, si * h, l, sj * h);
                        for c in 0..2 * dd {
                            acc[c] += wi * wj * v[c];
                        }
                    }
                }
                for (c, a) in acc.iter().enumerate() {
                    lf.ddg_or_ddj(k, l, c, a / (h * h));
                    lf.ddg_or_ddj(l, k, c, a / (h * h));
                }
            }
        }
        for k in 0..D {
            for c in 0..dd {
                lf.dg[k * dd + c] = d1[k][c];
                lf.dj[k * dd + c] = d1[k][dd + c];
            }
        }
        lf
    }

    /// `g`, `J` and their `r`-derivatives on the line through `x` at radius `r`.
    pub fn radial(&self, r: f64, x: &[f64]) -> RadialFields {
        let mut p = vec![Dual::<1>::var(r, 0)];
        p.extend(x.iter().map(|&v| Dual::<1>::cst(v)));
        let (g, j) = self.structure(&p);
        let m = |v: &[Dual<1>], der: bool| {
            DMatrix::from_fn(D, D, |i, k| if der { v[i * D + k].g[0] } else { v[i * D + k].v })
        };
        RadialFields { g: m(&g, false), dg: m(&g, true), j: m(&j, false), dj: m(&j, true) }
    }

    /// Curvature bundle at `p`; with `plus` also `∇R` by stencils of the
    /// analytic curvature.
    pub fn curvature(&self, p: &[f64], plus: bool) -> Result<CurvatureBundle, Error> {
        let mut b = CurvatureBundle::from_local(&self.local(p))?;
        if plus {
            let h = self.h_x;
            let d4 = D * D * D * D;
            let mut dr = vec![0.0; D * d4];
            for m in 0..D {
                let mut acc = vec![0.0; d4];
                for (o, w) in [-2.0, -1.0, 1.0, 2.0].iter().zip([1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0]) {
                    let mut q = p.to_vec();
                    q[m] += o * h;
                    let bq = CurvatureBundle::from_local(&self.local(&q))?;
                    for (a, v) in acc.iter_mut().zip(bq.riemann.iter()) {
                        *a += w * v / h;
                    }
                }
                dr[m * d4..(m + 1) * d4].copy_from_slice(&acc);
            }
            b.nabla_r = Some(crate::curvature::nabla_riemann(D, &b.christoffel, &b.riemann, &dr));
        }
        Ok(b)
    }
}

impl LocalFields {
    fn ddg_or_ddj(&mut self, k: usize, l: usize, c: usize, v: f64) {
        let dd = self.d * self.d;
        if c < dd {
            self.ddg[(k * self.d + l) * dd + c] = v;
        } else {
            self.ddj[(k * self.d + l) * dd + c - dd] = v;
        }
    }
}

/// Samples `g` and `J` on the chart grid (radial samples × base grid).
pub fn build_model(spec: ModelSpec, chart: &Chart) -> Result<(Metric, TensorField), Error> {
    let model = Model::new(spec, chart)?;
    let grid = full_grid(chart);
    let mut gs = Vec::with_capacity(grid.len());
    let mut js = Vec::with_capacity(grid.len());
    for p in 0..grid.len() {
        let (g, j) = model.eval_f64(&grid.point(p));
        gs.push(g);
        js.push(j);
    }
    let g = TensorField::from_points(grid.clone(), D, vec![Slot::Co, Slot::Co], Symmetry::SymmetricPairs, &gs)?;
    let j = TensorField::from_points(grid, D, vec![Slot::Contra, Slot::Co], Symmetry::None, &js)?;
    Ok((Metric::new(g, true)?, j))
}

/// Grid with the radial samples as first axis and the base grid after it.
pub fn full_grid(chart: &Chart) -> crate::chart::Grid {
    let rs = chart.r_samples();
    let mut axes = vec![crate::chart::Axis { lo: rs[0], hi: *rs.last().unwrap(), n: rs.len() }];
    axes.extend(chart.base_grid().axes);
    crate::chart::Grid::new(axes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub kind: ModelKind,
    pub analytic_derivatives: bool,
    pub max_alch: f64,
    pub max_ak: f64,
    pub tolerance: f64,
    pub points: usize,
    pub pass: bool,
}

/// Maxima of `‖R − R⁰‖_g` and `‖∇J‖_g` over every chart sample of an exact model.
pub fn model_oracle(spec: ModelSpec, chart: &Chart, tolerance: f64) -> Result<OracleReport, Error> {
    if !spec.kind.is_exact() {
        return Err(Error::OracleKind);
    }
    let model = Model::new(spec, chart)?;
    let base = chart.base_grid();
    let mut max_alch = 0.0f64;
    let mut max_ak = 0.0f64;
    let mut points = 0;
    for &r in &chart.r_samples() {
        for b in 0..base.len() {
            let mut p = vec![r];
            p.extend(base.point(b));
            let n = model.curvature(&p, false)?.norms()?;
            max_alch = max_alch.max(n.alch);
            max_ak = max_ak.max(n.ak);
            points += 1;
        }
    }
    let pass = max_alch < tolerance && max_ak < tolerance;
    Ok(OracleReport {
        kind: spec.kind,
        analytic_derivatives: spec.analytic_derivatives,
        max_alch,
        max_ak,
        tolerance,
        points,
        pass,
    })
}

/// Deficit norms and extreme radial sectional curvatures along the line
/// through `x`, one entry per radial sample. `plus` adds `‖∇R‖_g`.
pub fn deficit_line(model: &Model, chart: &Chart, x: &[f64], plus: bool) -> Result<(Vec<PointNorms>, Vec<(f64, f64)>), Error> {
    let r = chart.r_samples();
    let m = D - 1;
    let mut norms = Vec::with_capacity(r.len());
    let mut sec = Vec::with_capacity(r.len());
    for &rk in &r {
        let mut p = vec![rk];
        p.extend_from_slice(x);
        let bundle = model.curvature(&p, plus)?;
        norms.push(bundle.norms()?);
        let g = DMatrix::from_row_slice(D, D, &bundle.g);
        let gt = g.view((1, 1), (m, m)).into_owned();
        // q[j][t] = R(∂r, ∂j, ∂r, ∂t)
        let q = DMatrix::from_fn(m, m, |j, t| bundle.riemann[((j + 1) * D) * D + t + 1]);
        let q = (&q + q.transpose()) * 0.5;
        let ginv = gt.clone().try_inverse().ok_or_else(|| Error::NotPositiveDefinite("radial block".into()))?;
        let (vals, _) = self_adjoint_eigen(&gt, &(ginv * q))?;
        sec.push((vals[0], vals[m - 1]));
    }
    Ok((norms, sec))
}

/// Deficit series over the radial samples and the whole base grid.
pub fn deficit_series(model: &Model, chart: &Chart, plus: bool) -> Result<DeficitSeries, Error> {
    let base = chart.base_grid();
    let (norms, sec): (Vec<_>, Vec<_>) =
        (0..base.len()).map(|b| deficit_line(model, chart, &base.point(b), plus)).collect::<Result<Vec<_>, _>>()?.into_iter().unzip();
    Ok(deficits(&chart.r_samples(), &norms, &sec))
}

impl core::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "cph_polar" => Ok(ModelKind::CphPolar),
            "cph_horo" => Ok(ModelKind::CphHoro),
            "perturbed_metric" => Ok(ModelKind::PerturbedMetric),
            "rotated_J" => Ok(ModelKind::RotatedJ),
            other => Err(Error::Unsupported(other.to_string())),
        }
    }
}
