//! Levi-Civita connection, Riemann tensor, the model tensor `R⁰`, covariant
//! derivatives of `J` and the curvature deficit series.
//!
//! Curvature sign: `R(X,Y)Z = ∇_{[X,Y]}Z − ∇_X∇_Y Z + ∇_Y∇_X Z`, lowered as
//! `R(X,Y,Z,T) = g(R(X,Y)Z, T)`, so that `sec(u,v) = R(u,v,u,v)` and the
//! round sphere has `sec = +1`.
//!
//! Arrays are flat and row-major. Christoffel symbols are stored as
//! `gam[k][i][j] = Γ^k_{ij}`; derivatives carry the differentiation index
//! first, e.g. `dg[k][i][j] = ∂_k g_{ij}`.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::chart::{tensor_norm, Slot};
use crate::linalg::mat;
use crate::models::LocalFields;
use crate::Error;

#[inline]
fn i3(d: usize, a: usize, b: usize, c: usize) -> usize {
    (a * d + b) * d + c
}

#[inline]
fn i4(d: usize, a: usize, b: usize, c: usize, e: usize) -> usize {
    ((a * d + b) * d + c) * d + e
}

/// `Γ^k_{ij}` from `g⁻¹` and `∂g`.
pub fn christoffel(d: usize, ginv: &[f64], dg: &[f64]) -> Vec<f64> {
    let mut first = vec![0.0; d * d * d];
    for l in 0..d {
        for i in 0..d {
            for j in 0..d {
                first[i3(d, l, i, j)] =
                    0.5 * (dg[i3(d, i, l, j)] + dg[i3(d, j, l, i)] - dg[i3(d, l, i, j)]);
            }
        }
    }
    let mut gam = vec![0.0; d * d * d];
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                gam[i3(d, k, i, j)] = (0..d).map(|l| ginv[k * d + l] * first[i3(d, l, i, j)]).sum();
            }
        }
    }
    gam
}

/// `∂_m Γ^k_{ij}` stored as `[m][k][i][j]`.
pub fn christoffel_deriv(d: usize, ginv: &[f64], dg: &[f64], ddg: &[f64], gam: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d * d * d * d];
    let mut tmp = vec![0.0; d];
    for m in 0..d {
        for i in 0..d {
            for j in 0..d {
                for (l, t) in tmp.iter_mut().enumerate() {
                    let dfirst = 0.5
                        * (ddg[i4(d, m, i, l, j)] + ddg[i4(d, m, j, l, i)] - ddg[i4(d, m, l, i, j)]);
                    let corr: f64 = (0..d).map(|a| dg[i3(d, m, l, a)] * gam[i3(d, a, i, j)]).sum();
                    *t = dfirst - corr;
                }
                for k in 0..d {
                    out[i4(d, m, k, i, j)] = (0..d).map(|l| ginv[k * d + l] * tmp[l]).sum();
                }
            }
        }
    }
    out
}

/// Four-covariant curvature in the sign convention of the module docs.
pub fn riemann(d: usize, g: &[f64], gam: &[f64], dgam: &[f64]) -> Vec<f64> {
    // standard-sign R^l_{kij} = ∂_iΓ^l_{jk} − ∂_jΓ^l_{ik} + Γ^l_{im}Γ^m_{jk} − Γ^l_{jm}Γ^m_{ik}
    let mut rs = vec![0.0; d * d * d * d];
    for l in 0..d {
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut v = dgam[i4(d, i, l, j, k)] - dgam[i4(d, j, l, i, k)];
                    for m in 0..d {
                        v += gam[i3(d, l, i, m)] * gam[i3(d, m, j, k)]
                            - gam[i3(d, l, j, m)] * gam[i3(d, m, i, k)];
                    }
                    rs[i4(d, l, k, i, j)] = v;
                }
            }
        }
    }
    let mut r = vec![0.0; d * d * d * d];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for t in 0..d {
                    r[i4(d, i, j, k, t)] = -(0..d).map(|l| g[t * d + l] * rs[i4(d, l, k, i, j)]).sum::<f64>();
                }
            }
        }
    }
    r
}

/// Largest violation of `J² = −Id` and `g(J·,J·) = g`, relative to `|g|`.
pub fn compatibility_defect(d: usize, g: &[f64], j: &[f64]) -> f64 {
    let gm = mat(d, d, g);
    let jm = mat(d, d, j);
    let scale = gm.amax().max(1e-300);
    let sq = (&jm * &jm + nalgebra::DMatrix::identity(d, d)).amax();
    let iso = (jm.transpose() * &gm * &jm - &gm).amax() / scale;
    sq.max(iso)
}

/// The model tensor `R⁰` lowered with `g`.
pub fn r0_tensor(d: usize, g: &[f64], j: &[f64]) -> Result<Vec<f64>, Error> {
    let defect = compatibility_defect(d, g, j);
    if defect > 1e-9 {
        return Err(Error::IncompatibleJ(alloc::format!("defect {defect:e}")));
    }
    // w[a][b] = g(J∂a, ∂b)
    let mut w = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            w[a * d + b] = (0..d).map(|c| g[b * d + c] * j[c * d + a]).sum();
        }
    }
    let mut r = vec![0.0; d * d * d * d];
    for i in 0..d {
        for jj in 0..d {
            for k in 0..d {
                for t in 0..d {
                    r[i4(d, i, jj, k, t)] = 0.25
                        * (g[jj * d + k] * g[i * d + t] - g[i * d + k] * g[jj * d + t]
                            + w[jj * d + k] * w[i * d + t]
                            - w[i * d + k] * w[jj * d + t]
                            + 2.0 * w[jj * d + i] * w[k * d + t]);
                }
            }
        }
    }
    Ok(r)
}

/// `(∇_k J)^i_j` stored as `[k][i][j]`.
pub fn nabla_j(d: usize, gam: &[f64], j: &[f64], dj: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d * d * d];
    for k in 0..d {
        for i in 0..d {
            for jj in 0..d {
                let mut v = dj[i3(d, k, i, jj)];
                for l in 0..d {
                    v += gam[i3(d, i, k, l)] * j[l * d + jj] - gam[i3(d, l, k, jj)] * j[i * d + l];
                }
                out[i3(d, k, i, jj)] = v;
            }
        }
    }
    out
}

/// `(∇²_{m,k} J)^i_j` stored as `[m][k][i][j]`.
pub fn nabla2_j(
    d: usize,
    gam: &[f64],
    dgam: &[f64],
    j: &[f64],
    dj: &[f64],
    ddj: &[f64],
    nj: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; d * d * d * d];
    for m in 0..d {
        for k in 0..d {
            for i in 0..d {
                for jj in 0..d {
                    // ∂_m (∇_k J)^i_j
                    let mut v = ddj[i4(d, m, k, i, jj)];
                    for l in 0..d {
                        v += dgam[i4(d, m, i, k, l)] * j[l * d + jj]
                            + gam[i3(d, i, k, l)] * dj[i3(d, m, l, jj)]
                            - dgam[i4(d, m, l, k, jj)] * j[i * d + l]
                            - gam[i3(d, l, k, jj)] * dj[i3(d, m, i, l)];
                    }
                    for p in 0..d {
                        v += -gam[i3(d, p, m, k)] * nj[i3(d, p, i, jj)]
                            + gam[i3(d, i, m, p)] * nj[i3(d, k, p, jj)]
                            - gam[i3(d, p, m, jj)] * nj[i3(d, k, i, p)];
                    }
                    out[i4(d, m, k, i, jj)] = v;
                }
            }
        }
    }
    out
}

/// `(∇_m R)_{ijkt}` from `∂_m R` (stored `[m][i][j][k][t]`) and `Γ`.
pub fn nabla_riemann(d: usize, gam: &[f64], r: &[f64], dr: &[f64]) -> Vec<f64> {
    let d4 = d * d * d * d;
    let mut out = dr.to_vec();
    for m in 0..d {
        for i in 0..d {
            for jj in 0..d {
                for k in 0..d {
                    for t in 0..d {
                        let mut v = 0.0;
                        for p in 0..d {
                            v += gam[i3(d, p, m, i)] * r[i4(d, p, jj, k, t)]
                                + gam[i3(d, p, m, jj)] * r[i4(d, i, p, k, t)]
                                + gam[i3(d, p, m, k)] * r[i4(d, i, jj, p, t)]
                                + gam[i3(d, p, m, t)] * r[i4(d, i, jj, k, p)];
                        }
                        out[m * d4 + i4(d, i, jj, k, t)] -= v;
                    }
                }
            }
        }
    }
    out
}

/// `R(u,v,w,z)` for coordinate vectors.
pub fn eval4(d: usize, r: &[f64], u: &[f64], v: &[f64], w: &[f64], z: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        if u[i] == 0.0 {
            continue;
        }
        for jj in 0..d {
            if v[jj] == 0.0 {
                continue;
            }
            for k in 0..d {
                if w[k] == 0.0 {
                    continue;
                }
                for t in 0..d {
                    s += r[i4(d, i, jj, k, t)] * u[i] * v[jj] * w[k] * z[t];
                }
            }
        }
    }
    s
}

pub const SLOTS_R: [Slot; 4] = [Slot::Co; 4];
pub const SLOTS_NJ: [Slot; 3] = [Slot::Co, Slot::Contra, Slot::Co];
pub const SLOTS_N2J: [Slot; 4] = [Slot::Co, Slot::Co, Slot::Contra, Slot::Co];
pub const SLOTS_NR: [Slot; 5] = [Slot::Co; 5];

/// All curvature quantities at one point.
#[derive(Clone, Debug)]
pub struct CurvatureBundle {
    pub dim: usize,
    pub g: Vec<f64>,
    pub christoffel: Vec<f64>,
    pub riemann: Vec<f64>,
    pub r0: Vec<f64>,
    pub nabla_j: Vec<f64>,
    pub nabla2_j: Vec<f64>,
    pub nabla_r: Option<Vec<f64>>,
}

impl CurvatureBundle {
    pub fn from_local(lf: &LocalFields) -> Result<Self, Error> {
        let d = lf.d;
        let gm = mat(d, d, &lf.g);
        let ginv_m = gm
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("curvature point".into()))?
            .inverse();
        let ginv = crate::linalg::rows(&ginv_m);
        let gam = christoffel(d, &ginv, &lf.dg);
        let dgam = christoffel_deriv(d, &ginv, &lf.dg, &lf.ddg, &gam);
        let riemann = riemann(d, &lf.g, &gam, &dgam);
        let r0 = r0_tensor(d, &lf.g, &lf.j)?;
        let nj = nabla_j(d, &gam, &lf.j, &lf.dj);
        let n2j = nabla2_j(d, &gam, &dgam, &lf.j, &lf.dj, &lf.ddj, &nj);
        Ok(CurvatureBundle {
            dim: d,
            g: lf.g.clone(),
            christoffel: gam,
            riemann,
            r0,
            nabla_j: nj,
            nabla2_j: n2j,
            nabla_r: None,
        })
    }

    pub fn norms(&self) -> Result<PointNorms, Error> {
        let d = self.dim;
        let gm = mat(d, d, &self.g);
        let diff: Vec<f64> = self.riemann.iter().zip(self.r0.iter()).map(|(a, b)| a - b).collect();
        Ok(PointNorms {
            alch: tensor_norm(&gm, &SLOTS_R, &diff)?,
            ak: tensor_norm(&gm, &SLOTS_NJ, &self.nabla_j)?,
            ak_plus: tensor_norm(&gm, &SLOTS_N2J, &self.nabla2_j)?,
            alch_plus: match &self.nabla_r {
                Some(nr) => Some(tensor_norm(&gm, &SLOTS_NR, nr)?),
                None => None,
            },
        })
    }

    /// Sectional curvature of the plane spanned by `u`, `v`.
    pub fn sectional(&self, u: &[f64], v: &[f64]) -> f64 {
        let d = self.dim;
        let gm = mat(d, d, &self.g);
        let uu = nalgebra::DVector::from_column_slice(u);
        let vv = nalgebra::DVector::from_column_slice(v);
        let guu = (uu.transpose() * &gm * &uu)[(0, 0)];
        let gvv = (vv.transpose() * &gm * &vv)[(0, 0)];
        let guv = (uu.transpose() * &gm * &vv)[(0, 0)];
        eval4(d, &self.riemann, u, v, u, v) / (guu * gvv - guv * guv)
    }
}

/// Pointwise deficit norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointNorms {
    pub alch: f64,
    pub ak: f64,
    pub ak_plus: f64,
    pub alch_plus: Option<f64>,
}

/// Per-slice maxima of the deficit norms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeficitSeries {
    pub r: Vec<f64>,
    pub alch: Vec<f64>,
    pub ak: Vec<f64>,
    pub alch_plus: Option<Vec<f64>>,
    pub ak_plus: Vec<f64>,
    /// Extreme radial sectional curvatures `sec(∂r, ·)` per slice.
    pub sec_min: Vec<f64>,
    pub sec_max: Vec<f64>,
}

/// Deficit series from per-base-point samples `norms[p][k]` at radii `r[k]`.
pub fn deficits(r: &[f64], norms: &[Vec<PointNorms>], sec: &[Vec<(f64, f64)>]) -> DeficitSeries {
    let nk = r.len();
    let mut out = DeficitSeries {
        r: r.to_vec(),
        alch: vec![0.0; nk],
        ak: vec![0.0; nk],
        alch_plus: None,
        ak_plus: vec![0.0; nk],
        sec_min: vec![f64::INFINITY; nk],
        sec_max: vec![f64::NEG_INFINITY; nk],
    };
    let has_plus = norms.iter().all(|line| line.iter().all(|n| n.alch_plus.is_some())) && !norms.is_empty();
    let mut plus = vec![0.0; nk];
    for line in norms {
        for (k, n) in line.iter().enumerate() {
            out.alch[k] = out.alch[k].max(n.alch);
            out.ak[k] = out.ak[k].max(n.ak);
            out.ak_plus[k] = out.ak_plus[k].max(n.ak_plus);
            if let Some(v) = n.alch_plus {
                plus[k] = f64::max(plus[k], v);
            }
        }
    }
    for line in sec {
        for (k, (lo, hi)) in line.iter().enumerate() {
            out.sec_min[k] = out.sec_min[k].min(*lo);
            out.sec_max[k] = out.sec_max[k].max(*hi);
        }
    }
    if has_plus {
        out.alch_plus = Some(plus);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{Jet, Real};

    // metric of a 2-manifold as functions of the coordinates
    fn local_from<F>(p: [f64; 2], f: F) -> LocalFields
    where
        F: Fn([Jet<2>; 2]) -> [Jet<2>; 4],
    {
        let x = [Jet::<2>::var(p[0], 0), Jet::<2>::var(p[1], 1)];
        let g = f(x);
        let d = 2;
        let mut lf = LocalFields::zeros(d);
        for a in 0..4 {
            lf.g[a] = g[a].v;
            for k in 0..d {
                lf.dg[k * 4 + a] = g[a].g[k];
                for l in 0..d {
                    lf.ddg[(k * d + l) * 4 + a] = g[a].h[k][l];
                }
            }
        }
        // J = rotation in an orthonormal frame of a diagonal metric
        let (s0, s1) = (libm::sqrt(lf.g[0]), libm::sqrt(lf.g[3]));
        lf.j = vec![0.0, -s1 / s0, s0 / s1, 0.0];
        lf
    }

    #[test]
    fn round_sphere_has_positive_curvature() {
        let lf = local_from([0.9, 0.3], |x| {
            let s = x[0].sin();
            [Jet::cst(1.0), Jet::cst(0.0), Jet::cst(0.0), s * s]
        });
        let gam = christoffel(2, &[1.0, 0.0, 0.0, 1.0 / lf.g[3]], &lf.dg);
        let ginv = [1.0, 0.0, 0.0, 1.0 / lf.g[3]];
        let dgam = christoffel_deriv(2, &ginv, &lf.dg, &lf.ddg, &gam);
        let r = riemann(2, &lf.g, &gam, &dgam);
        let u = [1.0, 0.0];
        let v = [0.0, 1.0 / libm::sqrt(lf.g[3])];
        assert!((eval4(2, &r, &u, &v, &u, &v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn warped_toy_christoffel_symbols() {
        let r0 = 0.4;
        let lf = local_from([r0, 0.0], |x| {
            let e = x[0].scale(2.0).exp();
            [Jet::cst(1.0), Jet::cst(0.0), Jet::cst(0.0), e]
        });
        let ginv = [1.0, 0.0, 0.0, 1.0 / lf.g[3]];
        let gam = christoffel(2, &ginv, &lf.dg);
        // Γ^x_{xr} = 1, Γ^r_{xx} = −e^{2r}
        assert!((gam[i3(2, 1, 1, 0)] - 1.0).abs() < 1e-14);
        assert!((gam[i3(2, 0, 1, 1)] + libm::exp(2.0 * r0)).abs() < 1e-12);
    }

    #[test]
    fn flat_metric_is_flat_and_kahler() {
        let lf = local_from([0.2, 0.7], |_| [Jet::cst(1.0), Jet::cst(0.0), Jet::cst(0.0), Jet::cst(1.0)]);
        let b = CurvatureBundle::from_local(&lf).unwrap();
        assert!(b.riemann.iter().all(|v| *v == 0.0));
        assert!(b.nabla_j.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn r0_rejects_incompatible_structure() {
        let g = [1.0, 0.0, 0.0, 1.0];
        let j = [0.0, -2.0, 0.5, 0.0];
        assert!(matches!(r0_tensor(2, &g, &j), Err(Error::IncompatibleJ(_))));
    }
}
