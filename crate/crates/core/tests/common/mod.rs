//! Test-only oracles, kept independent of the library's evaluation paths.

#![allow(dead_code)]

use drm_core::{validate, FusedData, Sample, TiltSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Raw fixture: samples (reference first) and per-neighbor basis tokens.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub samples: Vec<Vec<f64>>,
    pub tilts: Vec<Vec<&'static str>>,
}

impl Fixture {
    pub fn fused(&self) -> FusedData {
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, v)| Sample::neighbor(format!("s{i}"), v.clone()).unwrap())
            .collect();
        let tilts = self
            .tilts
            .iter()
            .map(|t| t.join(",").parse::<TiltSpec>().unwrap())
            .collect();
        validate(samples, tilts).unwrap()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.tilts.iter().map(|t| t.len()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.tilts.len() + self.tilts.iter().map(|t| t.len()).sum::<usize>()
    }
}

fn basis(token: &str, x: f64) -> f64 {
    match token {
        "x" => x,
        "logx" => x.ln(),
        "log2x" => x.ln().powi(2),
        _ => panic!("unknown basis {token}"),
    }
}

/// Profile log-likelihood coded directly from its closed form, with plain
/// exponentials and no shared code with the library.
pub fn naive_loglik(fx: &Fixture, flat: &[f64]) -> f64 {
    let m = fx.tilts.len();
    let n0 = fx.samples[0].len() as f64;
    let rho: Vec<f64> = fx.samples.iter().map(|s| s.len() as f64 / n0).collect();
    let mut beta_start = vec![m];
    for t in &fx.tilts {
        beta_start.push(beta_start.last().unwrap() + t.len());
    }
    let w = |k: usize, x: f64| -> f64 {
        let mut e = flat[k];
        for (j, tok) in fx.tilts[k].iter().enumerate() {
            e += flat[beta_start[k] + j] * basis(tok, x);
        }
        e.exp()
    };
    let mut l = 0.0;
    for s in &fx.samples {
        for &x in s {
            let mut d = rho[0];
            for k in 0..m {
                d += rho[k + 1] * w(k, x);
            }
            l -= (n0 * d).ln();
        }
    }
    for k in 0..m {
        let nk = fx.samples[k + 1].len() as f64;
        l += nk * flat[k];
        for &x in &fx.samples[k + 1] {
            for (j, tok) in fx.tilts[k].iter().enumerate() {
                l += flat[beta_start[k] + j] * basis(tok, x);
            }
        }
    }
    l
}

/// Nelder-Mead minimization with restarts from the incumbent.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, start: &[f64], step: f64, restarts: usize) -> Vec<f64> {
    let d = start.len();
    let mut best = start.to_vec();
    let mut scale = step;
    for _ in 0..restarts {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..d {
            let mut p = best.clone();
            p[i] += scale;
            simplex.push(p);
        }
        let mut vals: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        for _ in 0..200_000 {
            let mut order: Vec<usize> = (0..=d).collect();
            order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            vals = order.iter().map(|&i| vals[i]).collect();

            let size = simplex[1..]
                .iter()
                .map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if size < 1e-12 {
                break;
            }

            let centroid: Vec<f64> = (0..d)
                .map(|j| simplex[..d].iter().map(|p| p[j]).sum::<f64>() / d as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[d])
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let xr = along(alpha);
            let fr = f(&xr);
            if fr < vals[0] {
                let xe = along(gamma);
                let fe = f(&xe);
                if fe < fr {
                    simplex[d] = xe;
                    vals[d] = fe;
                } else {
                    simplex[d] = xr;
                    vals[d] = fr;
                }
            } else if fr < vals[d - 1] {
                simplex[d] = xr;
                vals[d] = fr;
            } else {
                let xc = if fr < vals[d] { along(rho) } else { along(-rho) };
                let fc = f(&xc);
                if fc < vals[d].min(fr) {
                    simplex[d] = xc;
                    vals[d] = fc;
                } else {
                    for i in 1..=d {
                        simplex[i] = simplex[0]
                            .iter()
                            .zip(&simplex[i])
                            .map(|(b, p)| b + sigma * (p - b))
                            .collect();
                        vals[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let ib = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        best = simplex[ib].clone();
        scale *= 0.1;
    }
    best
}

/// Central difference gradient.
pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

/// Random small fixture: reference Exp-like values and up to two neighbors
/// drawn from overlapping scale families, tilts of dimension one or two.
pub fn random_fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=2);
    let choices: [&[&str]; 5] = [&["x"], &["logx"], &["x", "logx"], &["logx", "log2x"], &["x", "log2x"]];
    let mut samples = Vec::new();
    let n_ref = rng.random_range(14..=20);
    samples.push(draw(&mut rng, n_ref, 1.0));
    let mut tilts = Vec::new();
    for _ in 0..m {
        let nk = rng.random_range(12..=15);
        let scale = rng.random_range(0.6..1.6);
        samples.push(draw(&mut rng, nk, scale));
        tilts.push(choices[rng.random_range(0..choices.len())].to_vec());
    }
    Fixture { samples, tilts }
}

fn draw(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    // gamma(2)-like positives via sum of two exponentials
    (0..n)
        .map(|_| {
            let a: f64 = rng.random::<f64>().max(1e-12);
            let b: f64 = rng.random::<f64>().max(1e-12);
            -scale * (a.ln() + b.ln()) / 2.0
        })
        .collect()
}

/// Fixed three-sample fixture with mixed tilts.
pub fn three_sample_fixture() -> Fixture {
    Fixture {
        samples: vec![
            vec![0.31, 1.20, 0.77, 2.40, 0.15, 1.05, 0.56, 1.90, 0.42, 0.88],
            vec![0.65, 1.70, 2.10, 0.98, 3.30, 1.44, 0.52, 2.75, 1.12],
            vec![1.45, 0.36, 2.95, 0.71, 4.10, 1.62, 2.22, 0.95, 3.05, 1.31, 0.58],
        ],
        tilts: vec![vec!["x", "logx", "log2x"], vec!["logx", "log2x"]],
    }
}
