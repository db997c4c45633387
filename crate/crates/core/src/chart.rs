//! Fermi-coordinate charts, sample grids, tensor storage and the metric
//! algebra every other module computes on.
//!
//! Components are always stored in the coordinate frame. Orthonormal-frame
//! components are derived on demand from a Cholesky factor of the metric.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::Error;

/// A local Fermi chart `(r, x¹..x^{2n+1})` with its sampling parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub dim_boundary: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Spacing of the recorded radial samples.
    pub r_step: f64,
    pub base_box: Vec<[f64; 2]>,
    pub grid: Vec<usize>,
    pub h_x: f64,
    pub h_r: f64,
}

impl Default for Chart {
    fn default() -> Self {
        Chart {
            dim_boundary: 3,
            r_min: 0.5,
            r_max: 12.0,
            r_step: 0.125,
            base_box: vec![[-0.3, 0.3]; 3],
            grid: vec![7; 3],
            h_x: 1e-3,
            h_r: 1e-2,
        }
    }
}

impl Chart {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |field: &str, msg: &str| Err(Error::config(field, msg));
        if self.dim_boundary < 3 || self.dim_boundary % 2 == 0 {
            return bad("chart.dim_boundary", "must be odd and ≥ 3");
        }
        if !(self.r_min >= 0.0) {
            return bad("chart.r_min", "must be ≥ 0");
        }
        if !(self.r_max > self.r_min) {
            return bad("chart.r_max", "must exceed chart.r_min");
        }
        if !(self.r_step > 0.0) || self.r_step > self.r_max - self.r_min {
            return bad("chart.r_step", "must be positive and fit in [r_min, r_max]");
        }
        if self.base_box.len() != self.dim_boundary {
            return bad("chart.base_box", "needs one interval per boundary axis");
        }
        if self.base_box.iter().any(|b| !(b[1] > b[0])) {
            return bad("chart.base_box", "intervals must have hi > lo");
        }
        if self.grid.len() != self.dim_boundary {
            return bad("chart.grid", "needs one count per boundary axis");
        }
        if self.grid.iter().any(|&n| n < 5) {
            return bad("chart.grid", "must be ≥ 5");
        }
        if !(self.h_x > 0.0) {
            return bad("chart.h_x", "must be positive");
        }
        if !(self.h_r > 0.0) || self.h_r > self.r_step {
            return bad("chart.h_r", "must be positive and ≤ chart.r_step");
        }
        Ok(())
    }

    /// Total real dimension `2n + 2`.
    pub fn dim(&self) -> usize {
        self.dim_boundary + 1
    }

    pub fn base_grid(&self) -> Grid {
        Grid::new(
            self.base_box
                .iter()
                .zip(self.grid.iter())
                .map(|(b, &n)| Axis { lo: b[0], hi: b[1], n })
                .collect(),
        )
    }

    /// Recorded radial samples, `r_min + k·r_step` up to `r_max` inclusive.
    pub fn r_samples(&self) -> Vec<f64> {
        let m = libm::round((self.r_max - self.r_min) / self.r_step) as usize;
        (0..=m)
            .map(|k| self.r_min + k as f64 * self.r_step)
            .filter(|&r| r <= self.r_max + 1e-12)
            .collect()
    }
}

/// One uniformly sampled coordinate axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }
    pub fn at(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }
}

/// Tensor-product grid, last axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Self {
        Grid { axes }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn multi_index(&self, mut lin: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            idx[k] = lin % a.n;
            lin /= a.n;
        }
        idx
    }

    pub fn linear(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.axes.iter()).fold(0, |acc, (&i, a)| acc * a.n + i)
    }

    pub fn point(&self, lin: usize) -> Vec<f64> {
        self.multi_index(lin)
            .iter()
            .zip(self.axes.iter())
            .map(|(&i, a)| a.at(i))
            .collect()
    }

    /// True when every index is at least `margin` away from the grid edge.
    pub fn is_interior(&self, lin: usize, margin: usize) -> bool {
        self.multi_index(lin)
            .iter()
            .zip(self.axes.iter())
            .all(|(&i, a)| i >= margin && i + margin < a.n)
    }

    /// Linear indices of the evaluation sub-box (stencil margin removed).
    pub fn interior(&self, margin: usize) -> Vec<usize> {
        (0..self.len()).filter(|&l| self.is_interior(l, margin)).collect()
    }
}

/// Index position type of a tensor slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Co,
    Contra,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symmetry {
    None,
    SymmetricPairs,
    RiemannType,
}

/// Tensor components on a grid, coordinate frame, row-major index tuples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorField {
    pub grid: Grid,
    pub dim: usize,
    pub slots: Vec<Slot>,
    pub symmetry: Symmetry,
    pub data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: Grid, dim: usize, slots: Vec<Slot>) -> Self {
        let n = grid.len() * dim.pow(slots.len() as u32);
        TensorField { grid, dim, slots, symmetry: Symmetry::None, data: vec![0.0; n] }
    }

    /// Builds a field from per-point component vectors and checks the
    /// declared symmetry to `1e-12` of the component magnitude.
    pub fn from_points(
        grid: Grid,
        dim: usize,
        slots: Vec<Slot>,
        symmetry: Symmetry,
        points: &[Vec<f64>],
    ) -> Result<Self, Error> {
        let nc = dim.pow(slots.len() as u32);
        if points.len() != grid.len() || points.iter().any(|p| p.len() != nc) {
            return Err(Error::ChartMismatch);
        }
        let data: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let f = TensorField { grid, dim, slots, symmetry, data };
        f.check_symmetry()?;
        Ok(f)
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn components(&self) -> usize {
        self.dim.pow(self.slots.len() as u32)
    }

    pub fn at(&self, lin: usize) -> &[f64] {
        let nc = self.components();
        &self.data[lin * nc..(lin + 1) * nc]
    }

    fn check_symmetry(&self) -> Result<(), Error> {
        let d = self.dim;
        for p in 0..self.grid.len() {
            let t = self.at(p);
            let scale = t.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            let tol = 1e-12 * scale;
            let ok = match self.symmetry {
                Symmetry::None => true,
                Symmetry::SymmetricPairs => {
                    self.rank() == 2
                        && (0..d).all(|i| (0..d).all(|j| (t[i * d + j] - t[j * d + i]).abs() <= tol))
                }
                Symmetry::RiemannType => self.rank() == 4 && riemann_symmetry_defect(d, t) <= tol,
            };
            if !ok {
                return Err(Error::Degenerate(alloc::format!(
                    "declared symmetry violated at grid point {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Largest violation of antisymmetry, pair symmetry and first Bianchi.
pub fn riemann_symmetry_defect(d: usize, t: &[f64]) -> f64 {
    let ix = |a: usize, b: usize, c: usize, e: usize| ((a * d + b) * d + c) * d + e;
    let mut m = 0.0f64;
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for e in 0..d {
                    let v = t[ix(a, b, c, e)];
                    m = m.max((v + t[ix(b, a, c, e)]).abs());
                    m = m.max((v + t[ix(a, b, e, c)]).abs());
                    m = m.max((v - t[ix(c, e, a, b)]).abs());
                    m = m.max((v + t[ix(b, c, a, e)] + t[ix(c, a, b, e)]).abs());
                }
            }
        }
    }
    m
}

/// A Riemannian metric field with cached inverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub field: TensorField,
    pub inverse: Vec<f64>,
    pub gauss: bool,
}

impl Metric {
    pub fn new(field: TensorField, gauss: bool) -> Result<Self, Error> {
        if field.slots != [Slot::Co, Slot::Co] || field.symmetry != Symmetry::SymmetricPairs {
            return Err(Error::ValenceMismatch);
        }
        let d = field.dim;
        let mut inverse = Vec::with_capacity(field.data.len());
        for p in 0..field.grid.len() {
            let g = DMatrix::from_row_slice(d, d, field.at(p));
            let ch = g.clone().cholesky().ok_or_else(|| {
                Error::NotPositiveDefinite(alloc::format!("{:?}", field.grid.point(p)))
            })?;
            let inv = ch.inverse();
            inverse.extend(inv.transpose().iter().copied());
            if gauss {
                let exact = g[(0, 0)] == 1.0 && (1..d).all(|i| g[(0, i)] == 0.0 && g[(i, 0)] == 0.0);
                if !exact {
                    return Err(Error::Degenerate("metric is not in Gauss form".into()));
                }
            }
        }
        Ok(Metric { field, inverse, gauss })
    }

    pub fn at(&self, lin: usize) -> DMatrix<f64> {
        let d = self.field.dim;
        DMatrix::from_row_slice(d, d, self.field.at(lin))
    }
}

/// Maps taking covariant and contravariant slots to a `g`-orthonormal frame:
/// with `g = L Lᵀ`, covariant slots use `L⁻¹` and contravariant slots `Lᵀ`.
pub fn orthonormal_maps(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), Error> {
    let l = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("pointwise metric".into()))?
        .unpack();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("pointwise metric".into()))?;
    Ok((linv, l.transpose()))
}

/// Applies `m` to slot `k` of a rank-`rank` tensor: `out[..a..] = Σ_i m[a,i] t[..i..]`.
pub fn mode_product(t: &[f64], d: usize, rank: usize, k: usize, m: &DMatrix<f64>) -> Vec<f64> {
    let inner = d.pow((rank - k - 1) as u32);
    let outer = d.pow(k as u32);
    let mut out = vec![0.0; t.len()];
    for o in 0..outer {
        for a in 0..d {
            for i in 0..d {
                let c = m[(a, i)];
                if c == 0.0 {
                    continue;
                }
                let src = (o * d + i) * inner;
                let dst = (o * d + a) * inner;
                for q in 0..inner {
                    out[dst + q] += c * t[src + q];
                }
            }
        }
    }
    out
}

/// Components in a `g`-orthonormal frame.
pub fn to_orthonormal(
    t: &[f64],
    d: usize,
    slots: &[Slot],
    maps: &(DMatrix<f64>, DMatrix<f64>),
) -> Vec<f64> {
    let mut out = t.to_vec();
    for (k, s) in slots.iter().enumerate() {
        let m = match s {
            Slot::Co => &maps.0,
            Slot::Contra => &maps.1,
        };
        out = mode_product(&out, d, slots.len(), k, m);
    }
    out
}

/// Pointwise `g`-norm of a tensor given by coordinate components.
pub fn tensor_norm(g: &DMatrix<f64>, slots: &[Slot], t: &[f64]) -> Result<f64, Error> {
    let maps = orthonormal_maps(g)?;
    let o = to_orthonormal(t, g.nrows(), slots, &maps);
    Ok(libm::sqrt(o.iter().map(|v| v * v).sum::<f64>()))
}

fn check_pair(g: &Metric, a: &TensorField) -> Result<(), Error> {
    if a.grid != g.field.grid || a.dim != g.field.dim {
        return Err(Error::ChartMismatch);
    }
    Ok(())
}

/// Pointwise full contraction of two same-valence fields with `g` and `g⁻¹`.
pub fn metric_inner(g: &Metric, a: &TensorField, b: &TensorField) -> Result<Vec<f64>, Error> {
    if a.slots != b.slots {
        return Err(Error::ValenceMismatch);
    }
    check_pair(g, a)?;
    check_pair(g, b)?;
    let d = a.dim;
    let rank = a.rank();
    let mut out = Vec::with_capacity(a.grid.len());
    for p in 0..a.grid.len() {
        let gm = g.at(p);
        let gi = DMatrix::from_row_slice(d, d, &g.inverse[p * d * d..(p + 1) * d * d]);
        let mut t = b.at(p).to_vec();
        for (k, s) in a.slots.iter().enumerate() {
            let m = match s {
                Slot::Co => &gi,
                Slot::Contra => &gm,
            };
            t = mode_product(&t, d, rank, k, m);
        }
        out.push(a.at(p).iter().zip(t.iter()).map(|(x, y)| x * y).sum());
    }
    Ok(out)
}

pub fn g_norm(g: &Metric, t: &TensorField) -> Result<Vec<f64>, Error> {
    Ok(metric_inner(g, t, t)?.into_iter().map(|v| libm::sqrt(v.max(0.0))).collect())
}

pub const D1: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
pub const D2: [f64; 5] = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];

/// Five-point stencil derivative of sampled values `f(x₀ + (k−2)h)`.
pub fn stencil(f: &[f64; 5], h: f64, order: u8) -> f64 {
    let (w, s) = if order == 1 { (&D1, h) } else { (&D2, h * h) };
    w.iter().zip(f.iter()).map(|(a, b)| a * b).sum::<f64>() / s
}

/// Derivative of a field along one grid axis. Returns the derivative field
/// and a per-point flag marking points that fell back to one-sided
/// second-order stencils.
pub fn partial_fd(t: &TensorField, axis: usize, order: u8) -> Result<(TensorField, Vec<bool>), Error> {
    if order != 1 && order != 2 {
        return Err(Error::config("partial_fd.order", "must be 1 or 2"));
    }
    let ax = *t.grid.axes.get(axis).ok_or(Error::ChartMismatch)?;
    if ax.n < 5 {
        return Err(Error::GridTooSmall(axis));
    }
    let h = ax.spacing();
    let nc = t.components();
    let mut out = t.clone();
    out.symmetry = Symmetry::None;
    let mut flags = vec![false; t.grid.len()];
    for p in 0..t.grid.len() {
        let idx = t.grid.multi_index(p);
        let i = idx[axis];
        let sample = |k: usize| {
            let mut j = idx.clone();
            j[axis] = k;
            t.grid.linear(&j)
        };
        let (weights, offsets, scale): (&[f64], [isize; 5], f64) = if i >= 2 && i + 2 < ax.n {
            if order == 1 {
                (&D1, [-2, -1, 0, 1, 2], h)
            } else {
                (&D2, [-2, -1, 0, 1, 2], h * h)
            }
        } else {
            flags[p] = true;
            let fwd = i < 2;
            match (order, fwd) {
                (1, true) => (&[-1.5, 2.0, -0.5, 0.0, 0.0], [0, 1, 2, 3, 4], h),
                (1, false) => (&[0.0, 0.0, 0.5, -2.0, 1.5], [-4, -3, -2, -1, 0], h),
                (_, true) => (&[2.0, -5.0, 4.0, -1.0, 0.0], [0, 1, 2, 3, 4], h * h),
                (_, false) => (&[0.0, -1.0, 4.0, -5.0, 2.0], [-4, -3, -2, -1, 0], h * h),
            }
        };
        for c in 0..nc {
            let mut s = 0.0;
            for (w, o) in weights.iter().zip(offsets.iter()) {
                if *w != 0.0 {
                    let q = sample((i as isize + o) as usize);
                    s += w * t.data[q * nc + c];
                }
            }
            out.data[p * nc + c] = s / scale;
        }
    }
    Ok((out, flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn line(n: usize, lo: f64, hi: f64) -> Grid {
        Grid::new(vec![Axis { lo, hi, n }])
    }

    fn scalar(grid: Grid, f: impl Fn(f64) -> f64) -> TensorField {
        let pts: Vec<Vec<f64>> = (0..grid.len()).map(|p| vec![f(grid.point(p)[0])]).collect();
        TensorField::from_points(grid, 1, vec![], Symmetry::None, &pts).unwrap()
    }

    #[test]
    fn chart_validation_messages() {
        let mut c = Chart::default();
        assert!(c.validate().is_ok());
        c.grid[1] = 4;
        assert_eq!(c.validate().unwrap_err().to_string(), "chart.grid must be ≥ 5");
    }

    #[test]
    fn square_has_exact_first_derivative() {
        let g = line(7, 0.0, 6.0);
        let (d, flags) = partial_fd(&scalar(g, |x| x * x), 0, 1).unwrap();
        assert!((d.data[3] - 6.0).abs() < 1e-10);
        assert!(flags[0] && flags[6] && !flags[3]);
    }

    #[test]
    fn exponential_second_derivative() {
        let g = line(5, 1.0 - 2e-2, 1.0 + 2e-2);
        let (d, _) = partial_fd(&scalar(g, |r| libm::exp(2.0 * r)), 0, 2).unwrap();
        let exact = 4.0 * libm::exp(2.0);
        assert!(((d.data[2] - exact) / exact).abs() < 1e-6);
    }

    #[test]
    fn constant_field_has_zero_derivative() {
        let g = line(9, -1.0, 1.0);
        let (d, _) = partial_fd(&scalar(g, |_| 3.25), 0, 2).unwrap();
        assert!(d.data.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn inner_products_by_hand() {
        let grid = line(5, 0.0, 1.0);
        let gpts = vec![vec![1.0, 0.0, 0.0, 4.0]; 5];
        let g = Metric::new(
            TensorField::from_points(grid.clone(), 2, vec![Slot::Co, Slot::Co], Symmetry::SymmetricPairs, &gpts)
                .unwrap(),
            false,
        )
        .unwrap();
        let cov = TensorField::from_points(grid.clone(), 2, vec![Slot::Co], Symmetry::None, &vec![vec![0.0, 1.0]; 5])
            .unwrap();
        let ip = metric_inner(&g, &cov, &cov).unwrap();
        assert!(ip.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let zero = TensorField::zeros(grid.clone(), 2, vec![Slot::Co]);
        assert!(metric_inner(&g, &cov, &zero).unwrap().iter().all(|v| *v == 0.0));
        let vec_f = TensorField::zeros(grid, 2, vec![Slot::Contra]);
        assert_eq!(metric_inner(&g, &cov, &vec_f), Err(Error::ValenceMismatch));
    }

    #[test]
    fn euclidean_identity_tensor_norm() {
        let g = DMatrix::<f64>::identity(3, 3);
        let t = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let n = tensor_norm(&g, &[Slot::Co, Slot::Co], &t).unwrap();
        assert!((n - libm::sqrt(2.0)).abs() < 1e-15);
    }
}
