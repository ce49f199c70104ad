//! Monte Carlo comparison of the fused CDF estimators against the
//! reference-only empirical CDF.
//!
//! The reference population is `Exp(rate 2)`, the neighbors are
//! `Gamma(shape 2, rate 2)` and `Lognormal(log-mean 1, log-sd 1)`. Under these
//! parameterizations the density ratios against the reference are exactly
//! `exp(log 2 + log x)` and `exp(-1/2 - log(2 sqrt(2 pi)) + 2x - log^2(x) / 2)`.
//!
//! # Random streams
//!
//! Replicate `i` of a run with seed `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` switched to stream `i`
//! (see [`replicate_rng`]). Within a replicate the reference sample is drawn
//! first, then the Gamma neighbor, then the Lognormal neighbor. Replicates
//! never share a stream, so results do not depend on scheduling and a run is
//! bit-reproducible whether or not it executes in parallel.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF};

use crate::error::{DrmError, Result};
use crate::inference::{drm_cdf, empirical_cdf};
use crate::likelihood::{fit, FitOptions};
use crate::model::{Basis, FusedData, Sample, StepCDF, TiltSpec};

/// Anything that evaluates a CDF.
pub trait CdfEvaluator {
    fn cdf(&self, x: f64) -> f64;
}

impl<F: Fn(f64) -> f64> CdfEvaluator for F {
    fn cdf(&self, x: f64) -> f64 {
        self(x)
    }
}

impl CdfEvaluator for StepCDF {
    fn cdf(&self, x: f64) -> f64 {
        self.eval(x)
    }
}

/// The three distribution families of the simulation design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

pub const REFERENCE: Family = Family::Exponential { rate: 2.0 };
pub const GAMMA_NEIGHBOR: Family = Family::Gamma {
    shape: 2.0,
    rate: 2.0,
};
pub const LOGNORMAL_NEIGHBOR: Family = Family::LogNormal { mu: 1.0, sigma: 1.0 };

impl Family {
    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Family::Exponential { rate } => statrs::distribution::Exp::new(rate).unwrap().pdf(x),
            Family::Gamma { shape, rate } => statrs::distribution::Gamma::new(shape, rate).unwrap().pdf(x),
            Family::LogNormal { mu, sigma } => statrs::distribution::LogNormal::new(mu, sigma).unwrap().pdf(x),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Family::Exponential { rate } => 1.0 / rate,
            Family::Gamma { shape, rate } => shape / rate,
            Family::LogNormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        match *self {
            Family::Exponential { rate } => {
                let d = rand_distr::Exp::new(rate).unwrap();
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Family::Gamma { shape, rate } => {
                let d = rand_distr::Gamma::new(shape, 1.0 / rate).unwrap();
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Family::LogNormal { mu, sigma } => {
                let d = rand_distr::LogNormal::new(mu, sigma).unwrap();
                (0..n).map(|_| d.sample(rng)).collect()
            }
        }
    }
}

impl CdfEvaluator for Family {
    fn cdf(&self, x: f64) -> f64 {
        match *self {
            Family::Exponential { rate } => statrs::distribution::Exp::new(rate).unwrap().cdf(x),
            Family::Gamma { shape, rate } => statrs::distribution::Gamma::new(shape, rate).unwrap().cdf(x),
            Family::LogNormal { mu, sigma } => statrs::distribution::LogNormal::new(mu, sigma).unwrap().cdf(x),
        }
    }
}

/// Generator for replicate `index` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws the reference, Gamma and Lognormal samples from `rng`.
pub fn generate_with<R: Rng + ?Sized>(rng: &mut R, sizes: [usize; 3]) -> Result<(Sample, Sample, Sample)> {
    let x0 = Sample::reference("reference", REFERENCE.sample(rng, sizes[0]))?;
    let x1 = Sample::neighbor("gamma", GAMMA_NEIGHBOR.sample(rng, sizes[1]))?;
    let x2 = Sample::neighbor("lognormal", LOGNORMAL_NEIGHBOR.sample(rng, sizes[2]))?;
    Ok((x0, x1, x2))
}

/// Draws the three samples for replicate 0 of `seed`.
pub fn generate(seed: u64, sizes: [usize; 3]) -> Result<(Sample, Sample, Sample)> {
    generate_with(&mut replicate_rng(seed, 0), sizes)
}

/// Left-open Riemann grid `M1 + j delta`, `j = 1..=J`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, steps: usize) -> Result<Self> {
        if hi.is_nan() || lo.is_nan() || hi <= lo || steps == 0 {
            return Err(DrmError::InvalidOption(format!(
                "grid needs hi > lo and at least one step, got ({lo}, {hi}, {steps})"
            )));
        }
        Ok(Self { lo, hi, steps })
    }

    pub fn delta(&self) -> f64 {
        (self.hi - self.lo) / self.steps as f64
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        let d = self.delta();
        (1..=self.steps).map(move |j| self.lo + j as f64 * d)
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 10.0,
            steps: 1000,
        }
    }
}

/// Single-replicate integrated absolute and squared errors on `grid`.
pub fn miae_mise(estimate: &impl CdfEvaluator, truth: &impl CdfEvaluator, grid: &Grid) -> (f64, f64) {
    let (abs, sq) = grid.points().fold((0.0, 0.0), |(a, s), x| {
        let d = estimate.cdf(x) - truth.cdf(x);
        (a + d.abs(), s + d * d)
    });
    (grid.delta() * abs, grid.delta() * sq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    /// Fused estimate with the global tilt for both neighbors.
    Uniform,
    /// Fused estimate with `log x` for the Gamma neighbor and `(x, log^2 x)` for the Lognormal one.
    Refined,
    /// Reference-only empirical CDF.
    Empirical,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Uniform, EstimatorKind::Refined, EstimatorKind::Empirical];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Uniform => "G_tilde_u",
            EstimatorKind::Refined => "G_tilde_r",
            EstimatorKind::Empirical => "G_hat",
        }
    }

    /// Neighbor tilts for the fused estimators.
    pub fn tilts(self) -> Option<[TiltSpec; 2]> {
        match self {
            EstimatorKind::Uniform => Some([TiltSpec::global(), TiltSpec::global()]),
            EstimatorKind::Refined => Some([
                TiltSpec::new(vec![Basis::Log]).unwrap(),
                TiltSpec::new(vec![Basis::Identity, Basis::LogSq]).unwrap(),
            ]),
            EstimatorKind::Empirical => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub replications: usize,
    pub sizes: [usize; 3],
    pub grid: Grid,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub parallel: bool,
    /// Abort when more than this fraction of replicates fail for any estimator.
    pub max_failure_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            replications: 300,
            sizes: [1000; 3],
            grid: Grid::default(),
            seed: 2024,
            estimators: EstimatorKind::ALL.to_vec(),
            parallel: true,
            max_failure_rate: 0.10,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(DrmError::InvalidOption("replications must be at least 1".into()));
        }
        if self.sizes.contains(&0) {
            return Err(DrmError::InvalidOption("sample sizes must be positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(DrmError::InvalidOption("no estimators selected".into()));
        }
        Grid::new(self.grid.lo, self.grid.hi, self.grid.steps)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub kind: EstimatorKind,
    pub miae: f64,
    pub miae_se: f64,
    pub mise: f64,
    pub mise_se: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<EstimatorSummary>,
    pub replications: usize,
    pub sizes: [usize; 3],
}

impl ComparisonTable {
    pub fn row(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    /// One line per (estimator, metric): `estimator,metric,value,mc_se,I,n`.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("estimator,metric,value,mc_se,I,n\n");
        for r in &self.rows {
            for (metric, v, se) in [("MIAE", r.miae, r.miae_se), ("MISE", r.mise, r.mise_se)] {
                out.push_str(&format!(
                    "{},{},{:e},{:e},{},{}\n",
                    r.kind.name(),
                    metric,
                    v,
                    se,
                    r.successes,
                    self.sizes[0]
                ));
            }
        }
        out
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "I = {}, n = ({}, {}, {})",
            self.replications, self.sizes[0], self.sizes[1], self.sizes[2]
        )?;
        write!(f, "{:<8}", "")?;
        for r in &self.rows {
            write!(f, "{:>24}", r.kind.name())?;
        }
        writeln!(f)?;
        for metric in ["MIAE", "MISE"] {
            write!(f, "{metric:<8}")?;
            for r in &self.rows {
                let (v, se) = if metric == "MIAE" {
                    (r.miae, r.miae_se)
                } else {
                    (r.mise, r.mise_se)
                };
                write!(f, "{:>24}", format!("{v:.3e} ({se:.1e})"))?;
            }
            writeln!(f)?;
        }
        if self.rows.iter().any(|r| r.failures > 0) {
            write!(f, "failures")?;
            for r in &self.rows {
                write!(f, "{:>24}", r.failures)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

type ReplicateResult = Vec<Result<(f64, f64)>>;

fn estimate_cdf(kind: EstimatorKind, x0: &Sample, x1: &Sample, x2: &Sample) -> Result<StepCDF> {
    match kind.tilts() {
        None => Ok(empirical_cdf(x0)),
        Some([h1, h2]) => {
            let data = FusedData::new(x0.clone(), vec![(x1.clone(), h1), (x2.clone(), h2)])?;
            Ok(drm_cdf(&fit(&data, &FitOptions::default())?))
        }
    }
}

fn run_replicate(cfg: &SimConfig, index: usize) -> Result<ReplicateResult> {
    let mut rng = replicate_rng(cfg.seed, index as u64);
    let (x0, x1, x2) = generate_with(&mut rng, cfg.sizes)?;
    Ok(cfg
        .estimators
        .iter()
        .map(|&kind| estimate_cdf(kind, &x0, &x1, &x2).map(|g| miae_mise(&g, &REFERENCE, &cfg.grid)))
        .collect())
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs the Monte Carlo comparison and averages MIAE and MISE per estimator.
///
/// Numerical fit failures are counted per estimator and excluded from its
/// averages; the run aborts when the failure rate exceeds
/// `cfg.max_failure_rate` for any estimator.
pub fn run_comparison(cfg: &SimConfig) -> Result<ComparisonTable> {
    cfg.validate()?;
    let per_rep: Vec<ReplicateResult> = if cfg.parallel {
        (0..cfg.replications)
            .into_par_iter()
            .map(|i| run_replicate(cfg, i))
            .collect::<Result<_>>()?
    } else {
        (0..cfg.replications)
            .map(|i| run_replicate(cfg, i))
            .collect::<Result<_>>()?
    };

    let mut rows = Vec::with_capacity(cfg.estimators.len());
    for (e, &kind) in cfg.estimators.iter().enumerate() {
        let mut miae = Vec::with_capacity(cfg.replications);
        let mut mise = Vec::with_capacity(cfg.replications);
        let mut failures = 0;
        for rep in &per_rep {
            match &rep[e] {
                Ok((a, s)) => {
                    miae.push(*a);
                    mise.push(*s);
                }
                Err(err) if err.is_numerical() => failures += 1,
                Err(err) => return Err(err.clone()),
            }
        }
        if failures as f64 > cfg.max_failure_rate * cfg.replications as f64 || miae.is_empty() {
            return Err(DrmError::TooManyFailures {
                failed: failures,
                total: cfg.replications,
                max_rate: cfg.max_failure_rate,
            });
        }
        let (miae_mean, miae_se) = mean_and_se(&miae);
        let (mise_mean, mise_se) = mean_and_se(&mise);
        rows.push(EstimatorSummary {
            kind,
            miae: miae_mean,
            miae_se,
            mise: mise_mean,
            mise_se,
            successes: miae.len(),
            failures,
        });
    }
    Ok(ComparisonTable {
        rows,
        replications: cfg.replications,
        sizes: cfg.sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gamma_ratio_identity() {
        for &x in &[0.01, 0.3, 1.0, 2.7, 8.0] {
            let ratio = GAMMA_NEIGHBOR.pdf(x) / REFERENCE.pdf(x);
            let closed = (2f64.ln() + x.ln()).exp();
            assert!((ratio / closed - 1.0).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn lognormal_ratio_identity() {
        for &x in &[0.05, 0.5, 1.0, 3.0, 6.0] {
            let ratio = LOGNORMAL_NEIGHBOR.pdf(x) / REFERENCE.pdf(x);
            let l = x.ln();
            let closed = (-0.5 - (2.0 * (2.0 * PI).sqrt()).ln() + 2.0 * x - 0.5 * l * l).exp();
            assert!((ratio / closed - 1.0).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn sample_means_match_families() {
        let (x0, x1, x2) = generate(7, [100_000; 3]).unwrap();
        let mean = |s: &Sample| s.values().iter().sum::<f64>() / s.len() as f64;
        assert!((mean(&x0) - 0.5).abs() < 0.01);
        assert!((mean(&x1) - 1.0).abs() < 0.015);
        assert!((mean(&x2) - 1.5f64.exp()).abs() / 1.5f64.exp() < 0.03);
        assert_eq!(REFERENCE.mean(), 0.5);
        assert_eq!(GAMMA_NEIGHBOR.mean(), 1.0);
    }

    #[test]
    fn miae_of_truth_is_zero() {
        let g = Grid::default();
        assert_eq!(miae_mise(&REFERENCE, &REFERENCE, &g), (0.0, 0.0));
    }

    #[test]
    fn miae_of_constant_offset() {
        let g = Grid::default();
        let shifted = |x: f64| REFERENCE.cdf(x) + 0.01;
        let (a, s) = miae_mise(&shifted, &REFERENCE, &g);
        assert!((a - 0.1).abs() < 1e-12);
        assert!((s - 0.001).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_bad_ranges() {
        assert!(Grid::new(1.0, 1.0, 10).is_err());
        assert!(Grid::new(0.0, 1.0, 0).is_err());
        let g = Grid::new(0.0, 1.0, 4).unwrap();
        assert_eq!(g.points().collect::<Vec<_>>(), vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn streams_differ_per_replicate() {
        let a: u64 = replicate_rng(1, 0).random();
        let b: u64 = replicate_rng(1, 1).random();
        let c: u64 = replicate_rng(1, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn smoke_single_replicate() {
        let cfg = SimConfig {
            replications: 1,
            sizes: [200; 3],
            ..SimConfig::default()
        };
        let table = run_comparison(&cfg).unwrap();
        assert_eq!(table.rows.len(), 3);
        assert!(table.rows.iter().all(|r| r.miae.is_finite() && r.miae > 0.0));
        let text = table.to_string();
        assert!(text.contains("G_tilde_r"));
        assert_eq!(table.to_delimited().lines().count(), 7);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SimConfig {
            replications: 0,
            ..SimConfig::default()
        };
        assert!(matches!(run_comparison(&cfg), Err(DrmError::InvalidOption(_))));
    }
}
