//! Domain types shared by the estimation, inference and simulation modules.
//!
//! Every type here is immutable once built. Constructors validate the
//! preconditions of the density ratio model: strictly positive measurements
//! (the tilt basis contains `log x`), non-empty samples, and tilt
//! specifications without repeated basis elements.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{DrmError, Result};

/// One element of the tilt family `{x, log x, log^2 x}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Basis {
    Identity,
    Log,
    LogSq,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::Identity, Basis::Log, Basis::LogSq];

    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Basis::Identity => x,
            Basis::Log => x.ln(),
            Basis::LogSq => {
                let l = x.ln();
                l * l
            }
        }
    }

    /// Token used by the tilt spec-string grammar.
    pub fn token(self) -> &'static str {
        match self {
            Basis::Identity => "x",
            Basis::Log => "logx",
            Basis::LogSq => "log2x",
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Identity => "x",
            Basis::Log => "log(x)",
            Basis::LogSq => "log^2(x)",
        })
    }
}

impl FromStr for Basis {
    type Err = DrmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "x" => Ok(Basis::Identity),
            "logx" | "log(x)" => Ok(Basis::Log),
            "log2x" | "log^2(x)" => Ok(Basis::LogSq),
            other => Err(DrmError::UnknownBasis(other.to_string())),
        }
    }
}

/// Ordered list of basis functions describing one neighbor's density ratio.
///
/// An empty spec means the neighbor is equidistributed with the reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TiltSpec {
    basis: Vec<Basis>,
}

impl TiltSpec {
    pub fn new(basis: Vec<Basis>) -> Result<Self> {
        for (i, b) in basis.iter().enumerate() {
            if basis[..i].contains(b) {
                return Err(DrmError::DuplicateBasis { basis: *b });
            }
        }
        Ok(Self { basis })
    }

    /// The global tilt `(x, log x, log^2 x)`.
    pub fn global() -> Self {
        Self {
            basis: Basis::ALL.to_vec(),
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn basis(&self) -> &[Basis] {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        self.basis.iter().map(|b| b.eval(x)).collect()
    }

    /// Spec-string form, e.g. `x,log2x`; `-` for the empty tilt.
    pub fn to_spec_string(&self) -> String {
        if self.basis.is_empty() {
            return "-".to_string();
        }
        self.basis
            .iter()
            .map(|b| b.token())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for TiltSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.basis.as_slice() {
            [] => f.write_str("-"),
            [b] => write!(f, "{b}"),
            bs => {
                let parts: Vec<String> = bs.iter().map(|b| b.to_string()).collect();
                write!(f, "({})", parts.join(", "))
            }
        }
    }
}

impl FromStr for TiltSpec {
    type Err = DrmError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "-" {
            return Ok(TiltSpec::empty());
        }
        let basis = s
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<Basis>>>()?;
        TiltSpec::new(basis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Reference,
    Neighbor,
}

/// A labeled vector of strictly positive measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    label: String,
    values: Vec<f64>,
    role: Role,
}

impl Sample {
    pub fn new(label: impl Into<String>, values: Vec<f64>, role: Role) -> Result<Self> {
        let label = label.into();
        if values.is_empty() {
            return Err(DrmError::EmptySample { sample: label });
        }
        // `!(v > 0)` also catches NaN
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
        {
            return Err(DrmError::NonPositiveValue {
                sample: label,
                index,
                value,
            });
        }
        Ok(Self {
            label,
            values,
            role,
        })
    }

    pub fn reference(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        Self::new(label, values, Role::Reference)
    }

    pub fn neighbor(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        Self::new(label, values, Role::Neighbor)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }
}

/// Reference and neighbor samples fused into one data vector, with the tilt
/// design precomputed over every fused point.
#[derive(Debug, Clone)]
pub struct FusedData {
    reference: Sample,
    neighbors: Vec<(Sample, TiltSpec)>,
    t: Vec<f64>,
    rho: Vec<f64>,
    /// Per neighbor: row-major `n x r_k` matrix of `h_k(t_i)`.
    design: Vec<Vec<f64>>,
    /// Per neighbor: `sum_j h_k(X_kj)` over the neighbor's own sample.
    tilt_sums: Vec<Vec<f64>>,
    beta_offsets: Vec<usize>,
}

impl FusedData {
    pub fn new(reference: Sample, neighbors: Vec<(Sample, TiltSpec)>) -> Result<Self> {
        let reference = reference.with_role(Role::Reference);
        let neighbors: Vec<(Sample, TiltSpec)> = neighbors
            .into_iter()
            .map(|(s, h)| (s.with_role(Role::Neighbor), h))
            .collect();

        let n0 = reference.len() as f64;
        let mut t = Vec::with_capacity(reference.len() + neighbors.iter().map(|(s, _)| s.len()).sum::<usize>());
        t.extend_from_slice(reference.values());
        let mut rho = vec![1.0];
        for (s, _) in &neighbors {
            t.extend_from_slice(s.values());
            rho.push(s.len() as f64 / n0);
        }

        let mut design = Vec::with_capacity(neighbors.len());
        let mut tilt_sums = Vec::with_capacity(neighbors.len());
        let mut beta_offsets = Vec::with_capacity(neighbors.len() + 1);
        let mut offset = 0;
        for (s, h) in &neighbors {
            let r = h.dim();
            let mut rows = Vec::with_capacity(t.len() * r);
            for &x in &t {
                rows.extend(h.basis().iter().map(|b| b.eval(x)));
            }
            let mut sums = vec![0.0; r];
            for &x in s.values() {
                for (acc, b) in sums.iter_mut().zip(h.basis()) {
                    *acc += b.eval(x);
                }
            }
            design.push(rows);
            tilt_sums.push(sums);
            beta_offsets.push(offset);
            offset += r;
        }
        beta_offsets.push(offset);

        Ok(Self {
            reference,
            neighbors,
            t,
            rho,
            design,
            tilt_sums,
            beta_offsets,
        })
    }

    pub fn reference(&self) -> &Sample {
        &self.reference
    }

    pub fn neighbors(&self) -> &[(Sample, TiltSpec)] {
        &self.neighbors
    }

    pub fn tilts(&self) -> Vec<TiltSpec> {
        self.neighbors.iter().map(|(_, h)| h.clone()).collect()
    }

    /// Fused values, reference block first.
    pub fn t(&self) -> &[f64] {
        &self.t
    }

    /// `rho_k = n_k / n_0` for `k = 0..=m`.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn rho_sum(&self) -> f64 {
        self.rho.iter().sum()
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn n0(&self) -> usize {
        self.reference.len()
    }

    /// Sample sizes `n_0..n_m`.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.reference.len())
            .chain(self.neighbors.iter().map(|(s, _)| s.len()))
            .collect()
    }

    /// Number of neighbors.
    pub fn m(&self) -> usize {
        self.neighbors.len()
    }

    /// Total tilt dimension `r = sum r_k`.
    pub fn r(&self) -> usize {
        *self.beta_offsets.last().unwrap_or(&0)
    }

    /// Length of the parameter vector `(alpha, beta)`.
    pub fn n_params(&self) -> usize {
        self.m() + self.r()
    }

    pub fn tilt_dims(&self) -> Vec<usize> {
        self.neighbors.iter().map(|(_, h)| h.dim()).collect()
    }

    /// Offset of neighbor `k`'s beta segment inside the beta vector (0-based `k`).
    pub fn beta_offset(&self, k: usize) -> usize {
        self.beta_offsets[k]
    }

    /// `h_k(t_i)` for neighbor `k` (0-based) at fused point `i`.
    #[inline]
    pub fn tilt_row(&self, k: usize, i: usize) -> &[f64] {
        let r = self.neighbors[k].1.dim();
        &self.design[k][i * r..(i + 1) * r]
    }

    pub(crate) fn tilt_sum(&self, k: usize) -> &[f64] {
        &self.tilt_sums[k]
    }
}

/// Checks the inputs and fuses them. `samples[0]` is the reference, the rest
/// are neighbors paired in order with `tilts`.
pub fn validate(samples: Vec<Sample>, tilts: Vec<TiltSpec>) -> Result<FusedData> {
    let mut it = samples.into_iter();
    let reference = it.next().ok_or_else(|| DrmError::EmptySample {
        sample: "<reference>".to_string(),
    })?;
    let neighbors: Vec<Sample> = it.collect();
    if neighbors.len() != tilts.len() {
        return Err(DrmError::ArityMismatch {
            neighbors: neighbors.len(),
            tilts: tilts.len(),
        });
    }
    for s in std::iter::once(&reference).chain(&neighbors) {
        if s.is_empty() {
            return Err(DrmError::EmptySample {
                sample: s.label().to_string(),
            });
        }
    }
    FusedData::new(reference, neighbors.into_iter().zip(tilts).collect())
}

/// Parameter vector `theta = (alpha, beta)`, beta split into per-neighbor segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    dims: Vec<usize>,
}

impl Theta {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            alpha: vec![0.0; dims.len()],
            beta: vec![0.0; dims.iter().sum()],
            dims: dims.to_vec(),
        }
    }

    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, dims: &[usize]) -> Result<Self> {
        let r: usize = dims.iter().sum();
        if alpha.len() != dims.len() {
            return Err(DrmError::DimensionMismatch {
                expected: dims.len(),
                got: alpha.len(),
            });
        }
        if beta.len() != r {
            return Err(DrmError::DimensionMismatch {
                expected: r,
                got: beta.len(),
            });
        }
        Ok(Self {
            alpha,
            beta,
            dims: dims.to_vec(),
        })
    }

    /// Splits a flat `(alpha, beta)` vector.
    pub fn from_flat(flat: &[f64], dims: &[usize]) -> Result<Self> {
        let m = dims.len();
        let expected = m + dims.iter().sum::<usize>();
        if flat.len() != expected {
            return Err(DrmError::DimensionMismatch {
                expected,
                got: flat.len(),
            });
        }
        Self::new(flat[..m].to_vec(), flat[m..].to_vec(), dims)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.alpha.iter().chain(&self.beta).copied().collect()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// `beta_k` for neighbor `k` (0-based).
    pub fn beta_segment(&self, k: usize) -> &[f64] {
        let start: usize = self.dims[..k].iter().sum();
        &self.beta[start..start + self.dims[k]]
    }

    pub fn len(&self) -> usize {
        self.alpha.len() + self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of maximizing the profile empirical likelihood.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub(crate) theta: Theta,
    pub(crate) weights: Vec<f64>,
    pub(crate) loglik: f64,
    pub(crate) score_norm: f64,
    pub(crate) iterations: usize,
    pub(crate) converged: bool,
    pub(crate) s: DMatrix<f64>,
    pub(crate) sigma: DMatrix<f64>,
    pub(crate) data: FusedData,
}

impl FittedModel {
    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    /// Fitted point masses `p_i`, aligned with [`FusedData::t`].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn score_norm(&self) -> f64 {
        self.score_norm
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Plug-in information matrix `S`.
    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// Plug-in asymptotic covariance of `sqrt(n) (theta - theta_0)`.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn data(&self) -> &FusedData {
        &self.data
    }

    /// Standard errors `sqrt(Sigma_jj / n)` in flat `(alpha, beta)` order.
    pub fn standard_errors(&self) -> Vec<f64> {
        let n = self.data.n() as f64;
        (0..self.sigma.nrows())
            .map(|j| (self.sigma[(j, j)].max(0.0) / n).sqrt())
            .collect()
    }

    /// Fitted tilt weight `w_k(x)` for neighbor `k` (1-based, `w_0 = 1`).
    pub fn tilt_weight(&self, k: usize, x: f64) -> f64 {
        if k == 0 {
            return 1.0;
        }
        let h = &self.data.neighbors()[k - 1].1;
        let beta = self.theta.beta_segment(k - 1);
        let eta = self.theta.alpha()[k - 1]
            + h.basis()
                .iter()
                .zip(beta)
                .map(|(b, c)| c * b.eval(x))
                .sum::<f64>();
        eta.exp()
    }

    /// Constraint residuals `sum_i p_i - 1` followed by `sum_i p_i (w_k(t_i) - 1)` for each k.
    pub fn constraint_residuals(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        let mut out = vec![total - 1.0];
        for k in 1..=self.data.m() {
            let r: f64 = self
                .data
                .t()
                .iter()
                .zip(&self.weights)
                .map(|(&t, &p)| p * (self.tilt_weight(k, t) - 1.0))
                .sum();
            out.push(r);
        }
        out
    }
}

/// Right-continuous weighted step function, used for both CDF estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCDF {
    points: Vec<f64>,
    cum: Vec<f64>,
    /// Mass strictly above each point, summed from the right so the upper tail
    /// carries no cancellation error.
    tail: Vec<f64>,
}

impl StepCDF {
    /// Builds `F(t) = sum_i weights_i I(values_i <= t)`. Tied values are merged.
    pub fn from_weighted(values: &[f64], weights: &[f64]) -> Self {
        assert_eq!(values.len(), weights.len(), "values/weights length mismatch");
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

        let mut points: Vec<f64> = Vec::with_capacity(values.len());
        let mut cum: Vec<f64> = Vec::with_capacity(values.len());
        let mut mass: Vec<f64> = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        for i in order {
            acc += weights[i];
            if points.last() == Some(&values[i]) {
                *cum.last_mut().unwrap() = acc;
                *mass.last_mut().unwrap() += weights[i];
            } else {
                points.push(values[i]);
                cum.push(acc);
                mass.push(weights[i]);
            }
        }
        let mut tail = vec![0.0; points.len()];
        for j in (0..points.len().saturating_sub(1)).rev() {
            tail[j] = tail[j + 1] + mass[j + 1];
        }
        Self { points, cum, tail }
    }

    /// Equal masses `1/n` on every value.
    pub fn empirical(values: &[f64]) -> Self {
        let w = 1.0 / values.len() as f64;
        Self::from_weighted(values, &vec![w; values.len()])
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn cum(&self) -> &[f64] {
        &self.cum
    }

    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.points.partition_point(|&p| p <= t);
        if idx == 0 {
            0.0
        } else {
            self.cum[idx - 1]
        }
    }

    /// `1 - F(t)`, exactly zero at or above the largest point.
    pub fn survival(&self, t: f64) -> f64 {
        let idx = self.points.partition_point(|&p| p <= t);
        if idx == 0 {
            1.0
        } else {
            self.tail[idx - 1]
        }
    }

    /// Smallest support point with `F(t) >= q`.
    pub fn quantile(&self, q: f64) -> Option<f64> {
        let idx = self.cum.partition_point(|&c| c < q);
        self.points.get(idx).copied()
    }

    pub fn min(&self) -> Option<f64> {
        self.points.first().copied()
    }

    pub fn max(&self) -> Option<f64> {
        self.points.last().copied()
    }
}
