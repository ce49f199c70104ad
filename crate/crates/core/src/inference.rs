//! CDF estimators, tilt significance tests, tilt refinement, threshold
//! probabilities with Wald intervals, and goodness-of-fit pairs.

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::asymptotics::{sigma_t, BuildingBlocks};
use crate::error::{DrmError, Result};
use crate::likelihood::{fit, FitOptions};
use crate::linalg::spd_inverse;
use crate::model::{Basis, FittedModel, FusedData, Sample, StepCDF, TiltSpec};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Two-sided 95% standard normal quantile.
pub const Z_975: f64 = 1.959964;

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentTest {
    pub basis: Basis,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub per_component: Option<Vec<ComponentTest>>,
}

/// Model-free empirical CDF of a single sample.
pub fn empirical_cdf(sample: &Sample) -> StepCDF {
    StepCDF::empirical(sample.values())
}

/// Fused estimate `G(t) = sum_i p_i I(t_i <= t)`.
pub fn drm_cdf(fit: &FittedModel) -> StepCDF {
    StepCDF::from_weighted(fit.data().t(), fit.weights())
}

fn pairwise_spec(fit: &FittedModel) -> Result<&TiltSpec> {
    match fit.data().neighbors() {
        [(_, spec)] => Ok(spec),
        other => Err(DrmError::InvalidOption(format!(
            "tilt tests need a pairwise fit with one neighbor, got {}",
            other.len()
        ))),
    }
}

fn chi_square(fit: &FittedModel) -> Result<(f64, usize, f64)> {
    let spec = pairwise_spec(fit)?;
    let r = spec.dim();
    if r == 0 {
        return Ok((0.0, 0, 1.0));
    }
    let beta = nalgebra::DVector::from_row_slice(fit.theta().beta());
    let sigma_beta = fit.sigma().view((1, 1), (r, r)).clone_owned();
    let inv = spd_inverse(&sigma_beta)?;
    let stat = fit.data().n() as f64 * (beta.transpose() * inv * &beta)[(0, 0)];
    let p = if stat <= 0.0 {
        1.0
    } else {
        ChiSquared::new(r as f64)
            .expect("positive degrees of freedom")
            .sf(stat)
    };
    Ok((stat.max(0.0), r, p.clamp(0.0, 1.0)))
}

fn components(fit: &FittedModel) -> Result<Vec<ComponentTest>> {
    let spec = pairwise_spec(fit)?;
    let n = fit.data().n() as f64;
    spec.basis()
        .iter()
        .enumerate()
        .map(|(j, &basis)| {
            let var = fit.sigma()[(1 + j, 1 + j)];
            if var.is_nan() || var <= 0.0 {
                return Err(DrmError::Singular {
                    min_eigenvalue: var,
                    condition: f64::INFINITY,
                });
            }
            let estimate = fit.theta().beta()[j];
            let se = (var / n).sqrt();
            let z = estimate / se;
            Ok(ComponentTest {
                basis,
                estimate,
                se,
                z,
                p_value: erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0),
            })
        })
        .collect()
}

/// Joint Wald test of `beta = 0` on a pairwise fit, `chi2 = n beta' Sigma_beta^-1 beta`.
///
/// Per-component Z-tests are attached only when the joint test rejects at `alpha_level`.
pub fn chi_square_beta_test(fit2: &FittedModel, alpha_level: f64) -> Result<TestReport> {
    let (statistic, df, p_value) = chi_square(fit2)?;
    let per_component = if p_value < alpha_level {
        Some(components(fit2)?)
    } else {
        None
    };
    Ok(TestReport {
        statistic,
        df,
        p_value,
        per_component,
    })
}

/// Joint test plus unconditional per-component Z-tests `beta_j / sqrt(sigma_jj / n)`.
pub fn z_tests(fit2: &FittedModel) -> Result<TestReport> {
    let (statistic, df, p_value) = chi_square(fit2)?;
    Ok(TestReport {
        statistic,
        df,
        p_value,
        per_component: Some(components(fit2)?),
    })
}

/// Outcome of refining one neighbor's tilt.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedTilt {
    pub label: String,
    pub report: TestReport,
    pub tilt: TiltSpec,
}

/// Pairwise global-tilt fits followed by single-pass component elimination.
pub fn refine_tilts(reference: &Sample, neighbors: &[Sample], alpha_level: f64) -> Result<Vec<TiltSpec>> {
    Ok(refine_tilts_detailed(reference, neighbors, alpha_level, &FitOptions::default())?
        .into_iter()
        .map(|r| r.tilt)
        .collect())
}

/// [`refine_tilts`] keeping the test reports.
pub fn refine_tilts_detailed(
    reference: &Sample,
    neighbors: &[Sample],
    alpha_level: f64,
    opts: &FitOptions,
) -> Result<Vec<RefinedTilt>> {
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(DrmError::InvalidOption(format!(
            "alpha level must lie in (0, 1), got {alpha_level}"
        )));
    }
    neighbors
        .par_iter()
        .map(|nb| {
            refine_one(reference, nb, alpha_level, opts).map_err(|e| DrmError::Neighbor {
                label: nb.label().to_string(),
                source: Box::new(e),
            })
        })
        .collect()
}

fn refine_one(reference: &Sample, nb: &Sample, alpha_level: f64, opts: &FitOptions) -> Result<RefinedTilt> {
    let data = FusedData::new(reference.clone(), vec![(nb.clone(), TiltSpec::global())])?;
    let fit2 = fit(&data, opts)?;
    let report = chi_square_beta_test(&fit2, alpha_level)?;
    let tilt = match &report.per_component {
        None => TiltSpec::empty(),
        Some(comps) => TiltSpec::new(
            comps
                .iter()
                .filter(|c| c.p_value < alpha_level)
                .map(|c| c.basis)
                .collect(),
        )?,
    };
    Ok(RefinedTilt {
        label: nb.label().to_string(),
        report,
        tilt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Drm,
    Empirical,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Drm => "drm",
            Method::Empirical => "empirical",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdEstimate {
    pub threshold: f64,
    /// Estimate of `1 - G(T)`.
    pub prob: f64,
    pub se: f64,
    /// Raw Wald interval `prob -/+ z se`, possibly outside `[0, 1]`.
    pub ci: (f64, f64),
    /// `ci` clipped to `[0, 1]`.
    pub ci_clamped: (f64, f64),
    pub method: Method,
    pub n_effective: usize,
    /// Set when the plug-in variance was negative and clamped to zero.
    pub variance_clamped: bool,
}

/// Where the standard error of a threshold probability comes from.
#[derive(Debug, Clone, Copy)]
pub enum ThresholdSource<'a> {
    Drm {
        fit: &'a FittedModel,
        blocks: &'a BuildingBlocks,
    },
    Empirical(&'a Sample),
}

/// Standard normal quantile for a two-sided interval at `level`.
pub fn z_for_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(DrmError::InvalidOption(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    if level == 0.95 {
        return Ok(Z_975);
    }
    Ok(Normal::standard().inverse_cdf(0.5 + level / 2.0))
}

/// Wald interval for a binomial proportion estimated from `n` observations.
pub fn wald_interval(threshold: f64, prob: f64, n: usize, level: f64) -> Result<ThresholdEstimate> {
    let z = z_for_level(level)?;
    let se = (prob * (1.0 - prob) / n as f64).max(0.0).sqrt();
    Ok(estimate(threshold, prob, se, z, Method::Empirical, n, false))
}

fn estimate(
    threshold: f64,
    prob: f64,
    se: f64,
    z: f64,
    method: Method,
    n_effective: usize,
    variance_clamped: bool,
) -> ThresholdEstimate {
    let ci = (prob - z * se, prob + z * se);
    ThresholdEstimate {
        threshold,
        prob,
        se,
        ci,
        ci_clamped: (ci.0.clamp(0.0, 1.0), ci.1.clamp(0.0, 1.0)),
        method,
        n_effective,
        variance_clamped,
    }
}

/// Threshold exceedance probability `1 - G(T)` with a Wald interval.
///
/// `cdf` must be the estimator belonging to `source`: [`drm_cdf`] of the fit,
/// or [`empirical_cdf`] of the sample.
pub fn threshold_probability(
    cdf: &StepCDF,
    source: ThresholdSource<'_>,
    threshold: f64,
    level: f64,
) -> Result<ThresholdEstimate> {
    let z = z_for_level(level)?;
    let prob = cdf.survival(threshold);
    match source {
        ThresholdSource::Empirical(sample) => wald_interval(threshold, prob, sample.len(), level),
        ThresholdSource::Drm { fit, blocks } => {
            let var = sigma_t(fit, blocks, threshold)?;
            let n = fit.data().n();
            let se = (var.value / n as f64).sqrt();
            Ok(estimate(threshold, prob, se, z, Method::Drm, n, var.clamped))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GofPoint {
    pub t: f64,
    pub ghat: f64,
    pub gtilde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GofReport {
    pub points: Vec<GofPoint>,
    pub max_deviation: f64,
}

/// `(G_hat(t), G_tilde(t))` at each distinct reference value, sorted by `t`.
pub fn gof_pairs(fit: &FittedModel) -> GofReport {
    let ghat = empirical_cdf(fit.data().reference());
    let gtilde = drm_cdf(fit);
    let points: Vec<GofPoint> = ghat
        .points()
        .iter()
        .zip(ghat.cum())
        .map(|(&t, &gh)| GofPoint {
            t,
            ghat: gh,
            gtilde: gtilde.eval(t),
        })
        .collect();
    let max_deviation = points
        .iter()
        .map(|p| (p.ghat - p.gtilde).abs())
        .fold(0.0, f64::max);
    GofReport {
        points,
        max_deviation,
    }
}
