//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use dnls_core::functionals::energy_report;
use dnls_core::{SpectralState, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

/// Coefficients `c_{-n..=n}` stored densely with offset `n`.
pub struct Dense {
    pub n: i64,
    pub c: Vec<C64>,
}

impl Dense {
    pub fn of(s: &SpectralState) -> Self {
        Dense { n: s.bandwidth() as i64, c: s.coeffs().to_vec() }
    }

    pub fn conj(&self) -> Self {
        // Coefficient k of ū is conj(c_{−k}).
        Dense { n: self.n, c: self.c.iter().rev().map(|z| z.conj()).collect() }
    }

    pub fn get(&self, k: i64) -> C64 {
        if k.abs() > self.n { C64::new(0.0, 0.0) } else { self.c[(k + self.n) as usize] }
    }

    /// Exact Cauchy product `Σ_{a+b=k} x_a y_b`.
    pub fn times(&self, other: &Dense) -> Dense {
        let n = self.n + other.n;
        let mut c = vec![C64::new(0.0, 0.0); (2 * n + 1) as usize];
        for (i, x) in self.c.iter().enumerate() {
            for (j, y) in other.c.iter().enumerate() {
                c[i + j] += x * y;
            }
        }
        Dense { n, c }
    }
}

/// `P_N(|v|⁴ v)` by direct convolution.
pub fn quintic_by_convolution(s: &SpectralState) -> Vec<C64> {
    let v = Dense::of(s);
    let vb = v.conj();
    let p = v.times(&v).times(&v).times(&vb).times(&vb);
    let n = s.bandwidth() as i64;
    (-n..=n).map(|k| p.get(k)).collect()
}

/// A state with independent uniform coefficients in the square `[−a, a]²`.
pub fn random_state(n: usize, a: f64, seed: u64) -> SpectralState {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    SpectralState::from_fn(n, |_| C64::new(rng.random_range(-a..a), rng.random_range(-a..a)))
}

/// Moments of an accepted sample.
pub struct Moments {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub accepted: usize,
    pub envelope_violations: usize,
}

/// Rejection sampler for `μ_N ∝ χ_{‖v‖≤B} e^{−𝒩/2} dρ_N`, independent of the
/// library's sampler. Proposals are Gaussian with per-component variance
/// `1/(1+k²+τ)`; within the ball `dρ/dq ∝ e^{τ Σ|c|²/2} ≤ e^{τ B²/4π}`, and
/// `−𝒩/2` is bounded by a pilot maximum plus `margin`.
pub fn rejection_mu(
    n: usize,
    b: f64,
    tau: f64,
    count: usize,
    seed: u64,
    margin: f64,
    observables: &[&(dyn Fn(&SpectralState) -> f64 + Sync)],
) -> Moments {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha20Rng| {
        SpectralState::from_fn(n, |k| {
            let d = Normal::new(0.0, 1.0 / (1.0 + (k * k) as f64 + tau).sqrt()).unwrap();
            C64::new(d.sample(rng), d.sample(rng))
        })
    };
    let mass = |s: &SpectralState| s.coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>();
    let in_ball = |s: &SpectralState| 2.0 * PI * mass(s) <= b * b;
    let neg_half_n = |s: &SpectralState| -0.5 * energy_report(s).nonlinear_N;

    let mut pilot_max = f64::NEG_INFINITY;
    for _ in 0..20_000 {
        let s = draw(&mut rng);
        if in_ball(&s) {
            pilot_max = pilot_max.max(neg_half_n(&s));
        }
    }
    let bound = pilot_max + margin + 0.5 * tau * b * b / (2.0 * PI);

    let k = observables.len();
    let (mut sum, mut sq) = (vec![0.0; k], vec![0.0; k]);
    let (mut accepted, mut violations) = (0usize, 0usize);
    while accepted < count {
        let s = draw(&mut rng);
        if !in_ball(&s) {
            continue;
        }
        let log_target = neg_half_n(&s) + 0.5 * tau * mass(&s);
        if log_target > bound {
            violations += 1;
        }
        if rng.random::<f64>().ln() < log_target - bound {
            accepted += 1;
            for (j, f) in observables.iter().enumerate() {
                let x = f(&s);
                sum[j] += x;
                sq[j] += x * x;
            }
        }
    }
    let m = accepted as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let se = sq.iter().zip(&mean).map(|(q, mu)| ((q / m - mu * mu) / (m - 1.0)).max(0.0).sqrt()).collect();
    Moments { mean, se, accepted, envelope_violations: violations }
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
