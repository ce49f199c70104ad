//! Profile empirical log-likelihood of the density ratio model and its
//! Newton maximizer.
//!
//! With `w_0 = 1`, `w_k(x) = exp(alpha_k + beta_k' h_k(x))` and
//! `D(x) = sum_k rho_k w_k(x)`, the Lagrange multipliers of the constrained
//! empirical likelihood can be eliminated in closed form, leaving
//!
//! ```text
//! l(theta) = -sum_i log(n_0 D(t_i)) + sum_k (n_k alpha_k + sum_j beta_k' h_k(X_kj))
//! ```
//!
//! which is concave in `theta`. The fitted point masses are
//! `p_i = 1 / (n_0 D(t_i))`. All `D` evaluations go through a max-shifted
//! log-sum-exp so that large tilts such as `exp(beta log^2 x)` never overflow.

use nalgebra::{DMatrix, DVector};

use crate::asymptotics;
use crate::error::{DrmError, Result};
use crate::model::{FittedModel, FusedData, Theta, TiltSpec};

/// Relative slack allowed when comparing log-likelihood values across
/// Newton steps, covering summation rounding near the optimum.
pub const ASCENT_RTOL: f64 = 1e-12;

/// Range below which a tilt basis function counts as constant over the data.
pub const DEGENERATE_RANGE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence when `||score||_inf <= grad_tol * n`.
    pub grad_tol: f64,
    pub step_halving_max: usize,
    pub initial_theta: Option<Theta>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            grad_tol: 1e-8,
            step_halving_max: 40,
            initial_theta: None,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if self.grad_tol.is_nan() || self.grad_tol <= 0.0 {
            return Err(DrmError::InvalidOption(format!(
                "grad_tol must be positive, got {}",
                self.grad_tol
            )));
        }
        if self.max_iterations == 0 {
            return Err(DrmError::InvalidOption(
                "max_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Evaluates the tilt basis at `x`.
pub fn tilt_value(spec: &TiltSpec, x: f64) -> Vec<f64> {
    spec.eval(x)
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Order {
    Value,
    Gradient,
    Hessian,
}

struct Evaluation {
    loglik: f64,
    score: DVector<f64>,
    hessian: DMatrix<f64>,
}

fn check_dims(theta: &Theta, data: &FusedData) -> Result<()> {
    if theta.dims() != data.tilt_dims().as_slice() {
        return Err(DrmError::DimensionMismatch {
            expected: data.n_params(),
            got: theta.len(),
        });
    }
    Ok(())
}

/// `log(rho_k) + alpha_k + beta_k' h_k(t_i)` for each neighbor, written into `etas`.
#[inline]
fn fill_etas(data: &FusedData, flat: &[f64], log_rho: &[f64], i: usize, etas: &mut [f64]) {
    let m = data.m();
    for (k, eta) in etas.iter_mut().enumerate() {
        let off = m + data.beta_offset(k);
        let h = data.tilt_row(k, i);
        let lin: f64 = h.iter().zip(&flat[off..off + h.len()]).map(|(a, b)| a * b).sum();
        *eta = log_rho[k + 1] + flat[k] + lin;
    }
}

/// Max-shifted `log(1 + sum_k exp(eta_k))`.
#[inline]
fn log_denominator(etas: &[f64]) -> f64 {
    let mx = etas.iter().copied().fold(0.0_f64, f64::max);
    let s = (-mx).exp() + etas.iter().map(|e| (e - mx).exp()).sum::<f64>();
    mx + s.ln()
}

fn evaluate(data: &FusedData, flat: &[f64], order: Order) -> Result<Evaluation> {
    let m = data.m();
    let p = data.n_params();
    let n0 = data.n0() as f64;
    let log_rho: Vec<f64> = data.rho().iter().map(|r| r.ln()).collect();

    let mut loglik = 0.0;
    let mut score = vec![0.0; p];
    let mut hess = vec![0.0; p * p];
    let mut etas = vec![0.0; m];
    let mut pis = vec![0.0; m];
    let mut v = vec![0.0; p];

    for i in 0..data.n() {
        fill_etas(data, flat, &log_rho, i, &mut etas);
        let log_d = log_denominator(&etas);
        if !log_d.is_finite() {
            return Err(DrmError::NonFinite("profile log-likelihood"));
        }
        loglik -= log_d;
        if order == Order::Value {
            continue;
        }

        // v = sum_k pi_k z_k, where z_k is 1 at alpha_k and h_k on beta_k
        v.iter_mut().for_each(|x| *x = 0.0);
        for k in 0..m {
            let pi = (etas[k] - log_d).exp();
            pis[k] = pi;
            v[k] = pi;
            let off = m + data.beta_offset(k);
            for (j, hj) in data.tilt_row(k, i).iter().enumerate() {
                v[off + j] = pi * hj;
            }
        }
        for (s, vj) in score.iter_mut().zip(&v) {
            *s -= vj;
        }
        if order < Order::Hessian {
            continue;
        }

        // H += v v' - sum_k pi_k z_k z_k'  (upper triangle only)
        for a in 0..p {
            for b in a..p {
                hess[a * p + b] += v[a] * v[b];
            }
        }
        for k in 0..m {
            let pi = pis[k];
            let off = m + data.beta_offset(k);
            let h = data.tilt_row(k, i);
            hess[k * p + k] -= pi;
            for (j, hj) in h.iter().enumerate() {
                hess[k * p + off + j] -= pi * hj;
                for (l, hl) in h.iter().enumerate().skip(j) {
                    hess[(off + j) * p + off + l] -= pi * hj * hl;
                }
            }
        }
    }

    loglik -= data.n() as f64 * n0.ln();
    let sizes = data.sizes();
    for k in 0..m {
        let nk = sizes[k + 1] as f64;
        let off = m + data.beta_offset(k);
        let sums = data.tilt_sum(k);
        loglik += nk * flat[k]
            + sums
                .iter()
                .zip(&flat[off..off + sums.len()])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        score[k] += nk;
        for (j, s) in sums.iter().enumerate() {
            score[off + j] += s;
        }
    }
    if !loglik.is_finite() {
        return Err(DrmError::NonFinite("profile log-likelihood"));
    }

    let mut hessian = DMatrix::zeros(p, p);
    if order == Order::Hessian {
        for a in 0..p {
            for b in a..p {
                hessian[(a, b)] = hess[a * p + b];
                hessian[(b, a)] = hess[a * p + b];
            }
        }
        if hessian.iter().any(|x| !x.is_finite()) {
            return Err(DrmError::NonFinite("Hessian"));
        }
    }
    let score = DVector::from_vec(score);
    if score.iter().any(|x| !x.is_finite()) {
        return Err(DrmError::NonFinite("score"));
    }
    Ok(Evaluation {
        loglik,
        score,
        hessian,
    })
}

/// Profile log-likelihood `l(theta)`.
pub fn profile_loglik(theta: &Theta, data: &FusedData) -> Result<f64> {
    check_dims(theta, data)?;
    Ok(evaluate(data, &theta.to_flat(), Order::Value)?.loglik)
}

/// Gradient of `l` in flat `(alpha, beta)` order.
pub fn score(theta: &Theta, data: &FusedData) -> Result<Vec<f64>> {
    check_dims(theta, data)?;
    Ok(evaluate(data, &theta.to_flat(), Order::Gradient)?
        .score
        .as_slice()
        .to_vec())
}

/// Exact second derivative of `l`; symmetric by construction.
pub fn hessian(theta: &Theta, data: &FusedData) -> Result<DMatrix<f64>> {
    check_dims(theta, data)?;
    Ok(evaluate(data, &theta.to_flat(), Order::Hessian)?.hessian)
}

/// Log-denominators `log D(t_i)` at `theta`.
pub(crate) fn log_denominators(data: &FusedData, flat: &[f64]) -> Result<Vec<f64>> {
    let log_rho: Vec<f64> = data.rho().iter().map(|r| r.ln()).collect();
    let mut etas = vec![0.0; data.m()];
    (0..data.n())
        .map(|i| {
            fill_etas(data, flat, &log_rho, i, &mut etas);
            let ld = log_denominator(&etas);
            if ld.is_finite() {
                Ok(ld)
            } else {
                Err(DrmError::NonFinite("weights"))
            }
        })
        .collect()
}

fn check_degenerate(data: &FusedData) -> Result<()> {
    for (k, (sample, spec)) in data.neighbors().iter().enumerate() {
        for (j, b) in spec.basis().iter().enumerate() {
            let (lo, hi) = (0..data.n())
                .map(|i| data.tilt_row(k, i)[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            if hi - lo < DEGENERATE_RANGE {
                return Err(DrmError::SingularHessian(format!(
                    "tilt component {b} of neighbor `{}` is constant over the fused data",
                    sample.label()
                )));
            }
        }
    }
    Ok(())
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn ascent_ok(new: f64, old: f64) -> bool {
    new >= old - ASCENT_RTOL * (1.0 + old.abs())
}

fn newton_direction(ev: &Evaluation) -> DVector<f64> {
    let neg_h = -&ev.hessian;
    match neg_h.clone().cholesky() {
        Some(ch) => ch.solve(&ev.score),
        None => {
            // steepest ascent, scaled by the largest curvature
            let scale = neg_h
                .diagonal()
                .iter()
                .fold(f64::EPSILON, |a, &b| a.max(b.abs()));
            &ev.score / scale
        }
    }
}

/// Maximizes the profile log-likelihood by damped Newton iteration.
pub fn fit(data: &FusedData, opts: &FitOptions) -> Result<FittedModel> {
    fit_with_trace(data, opts).map(|(fit, _)| fit)
}

/// Like [`fit`], also returning `l` at every accepted iterate (the start included).
pub fn fit_with_trace(data: &FusedData, opts: &FitOptions) -> Result<(FittedModel, Vec<f64>)> {
    opts.validate()?;
    let dims = data.tilt_dims();
    let mut x: DVector<f64> = match &opts.initial_theta {
        Some(th) => {
            check_dims(th, data)?;
            DVector::from_vec(th.to_flat())
        }
        None => DVector::zeros(data.n_params()),
    };
    check_degenerate(data)?;

    let tol = opts.grad_tol * data.n() as f64;
    let mut cur = evaluate(data, x.as_slice(), Order::Hessian)?;
    let mut trace = vec![cur.loglik];
    let mut iterations = 0;

    while inf_norm(&cur.score) > tol {
        if iterations >= opts.max_iterations {
            return Err(DrmError::NoConvergence {
                iterations,
                score_norm: inf_norm(&cur.score),
            });
        }
        iterations += 1;

        let dir = newton_direction(&cur);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.step_halving_max {
            let trial = &x + &dir * step;
            if let Ok(ev) = evaluate(data, trial.as_slice(), Order::Value) {
                if ascent_ok(ev.loglik, cur.loglik) {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            return Err(DrmError::NoConvergence {
                iterations,
                score_norm: inf_norm(&cur.score),
            });
        };
        x = next;
        cur = evaluate(data, x.as_slice(), Order::Hessian)?;
        trace.push(cur.loglik);
    }

    // A couple of full Newton steps past the tolerance tighten the
    // constraint residuals to rounding level.
    for _ in 0..3 {
        if cur.score.is_empty() || inf_norm(&cur.score) == 0.0 {
            break;
        }
        let trial = &x + newton_direction(&cur);
        match evaluate(data, trial.as_slice(), Order::Hessian) {
            Ok(ev)
                if inf_norm(&ev.score) < inf_norm(&cur.score)
                    && ascent_ok(ev.loglik, cur.loglik) =>
            {
                x = trial;
                cur = ev;
                trace.push(cur.loglik);
            }
            _ => break,
        }
    }

    let theta = Theta::from_flat(x.as_slice(), &dims)?;
    let n0 = data.n0() as f64;
    let weights: Vec<f64> = log_denominators(data, x.as_slice())?
        .into_iter()
        .map(|ld| (-(n0.ln() + ld)).exp())
        .collect();
    let (s, sigma) = asymptotics::covariance(data, &theta, &weights)?;

    let fit = FittedModel {
        theta,
        weights,
        loglik: cur.loglik,
        score_norm: inf_norm(&cur.score),
        iterations,
        converged: true,
        s,
        sigma,
        data: data.clone(),
    };
    Ok((fit, trace))
}
