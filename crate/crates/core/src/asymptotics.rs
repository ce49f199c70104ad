//! Plug-in estimates of the asymptotic covariance of `theta` and of the
//! pointwise variance of the fused CDF estimator.
//!
//! Every population integral `int phi dG` is replaced by `sum_i p_i phi(t_i)`
//! over the fused data, with the fitted tilts `w_k` in place of the true ones.

use nalgebra::{DMatrix, DVector};

use crate::error::{DrmError, Result};
use crate::linalg::{spd_inverse, symmetrize};
use crate::model::{FittedModel, FusedData, Theta};

/// Plug-in versions of the integrals that make up `S`, `Lambda` and `Sigma`.
///
/// Matrix shapes follow the parameter layout: `m` alpha entries, then the
/// concatenated beta segments of total length `r`.
#[derive(Debug, Clone)]
pub struct BuildingBlocks {
    /// `A_kk' = int w_k w_k' / D dG`, `m x m`.
    pub a: DMatrix<f64>,
    /// `B_kk' = int w_k w_k' h_k'^T / D dG`, `m x r`.
    pub b: DMatrix<f64>,
    /// `C_kk' = int w_k w_k' h_k h_k'^T / D dG`, `r x r`.
    pub c: DMatrix<f64>,
    /// Block-diagonal `r x m` with `E_k = int w_k h_k dG` in block `(k, k)`.
    pub e: DMatrix<f64>,
    /// Block-diagonal `r x r` with `int w_k h_k h_k^T dG`.
    pub ebar: DMatrix<f64>,
    /// Block-diagonal `r x r` with `V_k = Ebar_k - E_k E_k^T`.
    pub v: DMatrix<f64>,
    pub rho_diag: DMatrix<f64>,
    pub rhobar_diag: DMatrix<f64>,
    /// `m x m` all-ones matrix.
    pub jm: DMatrix<f64>,
    /// `sum_{k=0}^m rho_k`.
    pub rho_sum: f64,
}

impl BuildingBlocks {
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn r(&self) -> usize {
        self.c.nrows()
    }
}

/// Per-point log quantities shared by the block and variance computations.
struct PlugIn<'a> {
    data: &'a FusedData,
    /// `log p_i`
    log_p: Vec<f64>,
    /// row-major `n x m`, `alpha_k + beta_k' h_k(t_i)`
    log_w: Vec<f64>,
    /// `log sum_j rho_j w_j(t_i)`
    log_d: Vec<f64>,
}

impl<'a> PlugIn<'a> {
    fn new(data: &'a FusedData, theta: &Theta, weights: &[f64]) -> Result<Self> {
        let m = data.m();
        let n = data.n();
        if weights.len() != n {
            return Err(DrmError::DimensionMismatch {
                expected: n,
                got: weights.len(),
            });
        }
        let log_rho: Vec<f64> = data.rho().iter().map(|r| r.ln()).collect();
        let mut log_w = vec![0.0; n * m];
        let mut log_d = vec![0.0; n];
        for i in 0..n {
            let row = &mut log_w[i * m..(i + 1) * m];
            for (k, lw) in row.iter_mut().enumerate() {
                let beta = theta.beta_segment(k);
                *lw = theta.alpha()[k]
                    + data
                        .tilt_row(k, i)
                        .iter()
                        .zip(beta)
                        .map(|(h, b)| h * b)
                        .sum::<f64>();
            }
            let mx = row
                .iter()
                .zip(&log_rho[1..])
                .map(|(lw, lr)| lw + lr)
                .fold(0.0_f64, f64::max);
            let s = (-mx).exp()
                + row
                    .iter()
                    .zip(&log_rho[1..])
                    .map(|(lw, lr)| (lw + lr - mx).exp())
                    .sum::<f64>();
            log_d[i] = mx + s.ln();
        }
        let log_p: Vec<f64> = weights.iter().map(|p| p.ln()).collect();
        if log_d.iter().chain(&log_w).chain(&log_p).any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(DrmError::NonFinite("plug-in integrals"));
        }
        Ok(Self {
            data,
            log_p,
            log_w,
            log_d,
        })
    }

    #[inline]
    fn lw(&self, i: usize, k: usize) -> f64 {
        self.log_w[i * self.data.m() + k]
    }
}

/// Plug-in building blocks for a fitted model.
pub fn blocks(fit: &FittedModel) -> Result<BuildingBlocks> {
    blocks_from(fit.data(), fit.theta(), fit.weights())
}

pub(crate) fn blocks_from(data: &FusedData, theta: &Theta, weights: &[f64]) -> Result<BuildingBlocks> {
    let pl = PlugIn::new(data, theta, weights)?;
    let m = data.m();
    let r = data.r();
    let dims = data.tilt_dims();
    let offs: Vec<usize> = (0..m).map(|k| data.beta_offset(k)).collect();

    let mut a = DMatrix::zeros(m, m);
    let mut b = DMatrix::zeros(m, r);
    let mut c = DMatrix::zeros(r, r);
    let mut e = DMatrix::zeros(r, m);
    let mut ebar = DMatrix::zeros(r, r);

    for i in 0..data.n() {
        let lp = pl.log_p[i];
        let ld = pl.log_d[i];
        for k in 0..m {
            let hk = data.tilt_row(k, i);
            let pw = (lp + pl.lw(i, k)).exp();
            for (j, hj) in hk.iter().enumerate() {
                e[(offs[k] + j, k)] += pw * hj;
                for (l, hl) in hk.iter().enumerate() {
                    ebar[(offs[k] + j, offs[k] + l)] += pw * hj * hl;
                }
            }
            for kk in 0..m {
                let hkk = data.tilt_row(kk, i);
                let q = (lp + pl.lw(i, k) + pl.lw(i, kk) - ld).exp();
                a[(k, kk)] += q;
                for (l, hl) in hkk.iter().enumerate() {
                    b[(k, offs[kk] + l)] += q * hl;
                }
                for (j, hj) in hk.iter().enumerate() {
                    for (l, hl) in hkk.iter().enumerate() {
                        c[(offs[k] + j, offs[kk] + l)] += q * hj * hl;
                    }
                }
            }
        }
    }

    let mut v = ebar.clone();
    for k in 0..m {
        let ek = e.view((offs[k], k), (dims[k], 1)).clone_owned();
        let outer = &ek * ek.transpose();
        let mut blk = v.view_mut((offs[k], offs[k]), (dims[k], dims[k]));
        blk -= outer;
    }

    let rho = data.rho();
    let rho_diag = DMatrix::from_diagonal(&DVector::from_row_slice(&rho[1..]));
    let rhobar = DVector::from_iterator(
        r,
        (0..m).flat_map(|k| std::iter::repeat_n(rho[k + 1], dims[k])),
    );
    let bb = BuildingBlocks {
        a: symmetrize(&a),
        b,
        c: symmetrize(&c),
        e,
        ebar: symmetrize(&ebar),
        v: symmetrize(&v),
        rho_diag,
        rhobar_diag: DMatrix::from_diagonal(&rhobar),
        jm: DMatrix::from_element(m, m, 1.0),
        rho_sum: data.rho_sum(),
    };
    let all_finite = [&bb.a, &bb.b, &bb.c, &bb.e, &bb.ebar, &bb.v]
        .iter()
        .all(|mat| mat.iter().all(|x| x.is_finite()));
    if !all_finite {
        return Err(DrmError::NonFinite("building blocks"));
    }
    Ok(bb)
}

fn assemble(m: usize, r: usize, b11: &DMatrix<f64>, b12: &DMatrix<f64>, b22: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m + r, m + r);
    out.view_mut((0, 0), (m, m)).copy_from(b11);
    out.view_mut((0, m), (m, r)).copy_from(b12);
    out.view_mut((m, 0), (r, m)).copy_from(&b12.transpose());
    out.view_mut((m, m), (r, r)).copy_from(b22);
    out
}

/// Information matrix `S`, the limit of `-H / n`.
///
/// Fails with [`DrmError::Singular`] when `S` is not positive definite.
pub fn s_matrix(bb: &BuildingBlocks) -> Result<DMatrix<f64>> {
    let s = s_unchecked(bb);
    spd_inverse(&s)?;
    Ok(s)
}

fn s_unchecked(bb: &BuildingBlocks) -> DMatrix<f64> {
    let (rho, rhob) = (&bb.rho_diag, &bb.rhobar_diag);
    let s11 = rho - rho * &bb.a * rho;
    let s12 = rho * bb.e.transpose() - rho * &bb.b * rhob;
    let s22 = rhob * &bb.ebar - rhob * &bb.c * rhob;
    symmetrize(&(assemble(bb.m(), bb.r(), &s11, &s12, &s22) / bb.rho_sum))
}

/// Score covariance `Lambda`, assembled block by block from `A, B, C, E, Ebar`.
pub fn lambda_matrix(bb: &BuildingBlocks) -> DMatrix<f64> {
    let m = bb.m();
    let (rho, rhob, j) = (&bb.rho_diag, &bb.rhobar_diag, &bb.jm);
    let (a, b, c, e) = (&bb.a, &bb.b, &bb.c, &bb.e);
    let id = DMatrix::<f64>::identity(m, m);
    let et = e.transpose();

    let l11 = rho * (a - a * rho * a - (&id - a * rho) * j * (&id - rho * a)) * rho;
    let l12 = rho * (a * &et - a * rho * b - (&id - a * rho) * j * (&et - rho * b)) * rhob;
    let l22 = rhob
        * (-c - b.transpose() * rho * b
            - (e - b.transpose() * rho) * j * (&et - rho * b)
            + b.transpose() * &et
            + e * b)
        * rhob
        + rhob * (&bb.ebar - e * &et);
    symmetrize(&(assemble(m, bb.r(), &l11, &l12, &l22) / bb.rho_sum))
}

fn alpha_correction(bb: &BuildingBlocks) -> DMatrix<f64> {
    let m = bb.m();
    let rho_inv = DMatrix::from_diagonal(&bb.rho_diag.diagonal().map(|x| 1.0 / x));
    let mut k = DMatrix::zeros(m + bb.r(), m + bb.r());
    k.view_mut((0, 0), (m, m)).copy_from(&(&bb.jm + rho_inv));
    k * bb.rho_sum
}

/// `Sigma = S^-1 - (sum rho) [[J_m + rho^-1, 0], [0, 0]]`.
pub fn sigma_matrix(bb: &BuildingBlocks, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s_inv = spd_inverse(s)?;
    Ok(symmetrize(&(s_inv - alpha_correction(bb))))
}

/// `Sigma` via the sandwich `S^-1 Lambda S^-1`.
pub fn sigma_sandwich(bb: &BuildingBlocks, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s_inv = spd_inverse(s)?;
    Ok(symmetrize(&(&s_inv * lambda_matrix(bb) * &s_inv)))
}

/// `S` and `Sigma` for freshly fitted parameters.
pub(crate) fn covariance(
    data: &FusedData,
    theta: &Theta,
    weights: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let bb = blocks_from(data, theta, weights)?;
    let s = s_matrix(&bb)?;
    let sigma = sigma_matrix(&bb, &s)?;
    Ok((s, sigma))
}

/// Pointwise asymptotic variance of `sqrt(n) (G(t) estimate - G(t))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointVariance {
    /// Variance, clamped at zero.
    pub value: f64,
    /// Plug-in value before clamping.
    pub raw: f64,
    /// Set when `raw < 0` and was replaced by zero.
    pub clamped: bool,
}

/// Plug-in `sigma(t)`:
///
/// ```text
/// (sum rho)(G(t) - G(t)^2 - sum_k rho_k A_k(t)) + a(t)' S^-1 a(t)
/// ```
///
/// with `a(t) = (rho_k A_k(t), rho_k B_k(t))` and
/// `A_k(t) = int_{y <= t} w_k / D dG`, `B_k(t)` its `h_k`-weighted analog.
pub fn sigma_t(fit: &FittedModel, bb: &BuildingBlocks, t: f64) -> Result<PointVariance> {
    let s_inv = spd_inverse(&s_unchecked(bb))?;
    sigma_t_with(fit, bb, &s_inv, t)
}

/// [`sigma_t`] for many abscissae, sharing one factorization of `S`.
pub fn sigma_t_many(fit: &FittedModel, bb: &BuildingBlocks, ts: &[f64]) -> Result<Vec<PointVariance>> {
    let s_inv = spd_inverse(&s_unchecked(bb))?;
    ts.iter().map(|&t| sigma_t_with(fit, bb, &s_inv, t)).collect()
}

fn sigma_t_with(
    fit: &FittedModel,
    bb: &BuildingBlocks,
    s_inv: &DMatrix<f64>,
    t: f64,
) -> Result<PointVariance> {
    let data = fit.data();
    let pl = PlugIn::new(data, fit.theta(), fit.weights())?;
    let m = data.m();
    let rho = data.rho();

    let mut g = 0.0;
    let mut avec = DVector::zeros(m + data.r());
    for i in 0..data.n() {
        if data.t()[i] > t {
            continue;
        }
        g += fit.weights()[i];
        for k in 0..m {
            let q = (pl.log_p[i] + pl.lw(i, k) - pl.log_d[i]).exp() * rho[k + 1];
            avec[k] += q;
            let off = m + data.beta_offset(k);
            for (j, hj) in data.tilt_row(k, i).iter().enumerate() {
                avec[off + j] += q * hj;
            }
        }
    }
    let rho_a: f64 = avec.rows(0, m).sum();
    let quad = (avec.transpose() * s_inv * &avec)[(0, 0)];
    let raw = bb.rho_sum * (g - g * g - rho_a) + quad;
    if !raw.is_finite() {
        return Err(DrmError::NonFinite("sigma(t)"));
    }
    Ok(PointVariance {
        value: raw.max(0.0),
        raw,
        clamped: raw < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{fit, FitOptions};
    use crate::model::{validate, Basis, Sample, TiltSpec};

    fn equidistributed(values: &[f64], tilt: TiltSpec) -> FittedModel {
        let data = validate(
            vec![
                Sample::reference("r", values.to_vec()).unwrap(),
                Sample::neighbor("n", values.to_vec()).unwrap(),
            ],
            vec![tilt],
        )
        .unwrap();
        fit(&data, &FitOptions::default()).unwrap()
    }

    #[test]
    fn a_equals_inverse_rho_sum_when_equidistributed() {
        let v = [0.4, 1.2, 2.5, 0.9, 3.3, 0.2];
        let f = equidistributed(&v, TiltSpec::new(vec![Basis::Identity]).unwrap());
        let bb = blocks(&f).unwrap();
        assert!((bb.a[(0, 0)] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn e_vanishes_for_log_tilt_at_one() {
        let data = validate(
            vec![
                Sample::reference("r", vec![1.0; 4]).unwrap(),
                Sample::neighbor("n", vec![1.0; 3]).unwrap(),
            ],
            vec![TiltSpec::new(vec![Basis::Log]).unwrap()],
        )
        .unwrap();
        let theta = Theta::zeros(&[1]);
        let w = vec![1.0 / 7.0; 7];
        let bb = blocks_from(&data, &theta, &w).unwrap();
        assert_eq!(bb.e[(0, 0)], 0.0);
    }

    #[test]
    fn sigma_below_data_is_zero() {
        let v = [0.4, 1.2, 2.5, 0.9, 3.3, 0.2, 1.7];
        let f = equidistributed(&v, TiltSpec::new(vec![Basis::Identity]).unwrap());
        let bb = blocks(&f).unwrap();
        let s = sigma_t(&f, &bb, 0.1).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(!s.clamped);
    }

    #[test]
    fn no_neighbors_reduces_to_binomial_variance() {
        let data = validate(
            vec![Sample::reference("r", vec![0.5, 1.0, 1.5, 2.0]).unwrap()],
            vec![],
        )
        .unwrap();
        let f = fit(&data, &FitOptions::default()).unwrap();
        let bb = blocks(&f).unwrap();
        let s = sigma_t(&f, &bb, 1.2).unwrap();
        assert!((s.value - 0.25).abs() < 1e-14);
    }
}
