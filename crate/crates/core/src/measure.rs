//! Gaussian ensembles for `ρ_N`, importance weights for `μ_N`, the gauge
//! pushforward `ν = μ∘G`, and the Monte Carlo studies built on them.
//!
//! Sample `i` of seed `s` is drawn from a ChaCha8 stream keyed by `(s, i)`,
//! visiting modes in the order `0, 1, −1, 2, −2, …`. The first `2N+1` modes of
//! a wide draw are therefore exactly the draw at bandwidth `N`, which couples
//! truncations: `P_N` of a sample at bandwidth `M` is the sample at `N`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{fit_line, ExperimentResult};
use crate::functionals::{nonlinear_parts, NonlinearParts};
use crate::gauge::gauge_inverse;
use crate::spectral::{fl_norm, l2_norm, project, SpectralState, C64};

pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;
const ENSEMBLE_MAGIC: &[u8; 8] = b"DNLSENS\0";

/// Estimates with an effective sample size below this are rejected.
pub const MIN_ESS: f64 = 10.0;

/// Cutoff used for `μ_N` runs. Near the `ρ_N` median of `‖v‖_{L²}` the weight
/// `e^{−𝒩/2}` spans hundreds of e-folds and the effective sample size collapses
/// to about one; at `B = 1.5` a tilted proposal keeps it near 15% of the draws.
pub const DEFAULT_MU_CUTOFF: f64 = 1.5;

/// The `ρ_N` draw at bandwidth `n` for sample `index` of `seed`.
pub fn draw_sample(n: usize, seed: u64, index: u64) -> SpectralState {
    draw_tilted(n, seed, index, 0.0)
}

/// Draw from the tilted Gaussian `q_τ ∝ e^{−τ Σ|c_n|²/2} ρ_N`, i.e. mode `k`
/// has per-component variance `1/(1+k²+τ)`. Uses the same normals as
/// [`draw_sample`], so `τ = 0` reproduces it exactly.
pub fn draw_tilted(n: usize, seed: u64, index: u64, tilt: f64) -> SpectralState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut s = SpectralState::zeros(n);
    let mut put = |k: i64, rng: &mut ChaCha8Rng| {
        let sd = 1.0 / (1.0 + (k * k) as f64 + tilt).sqrt();
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        s.set(k, C64::new(sd * a, sd * b));
    };
    put(0, &mut rng);
    for k in 1..=n as i64 {
        put(k, &mut rng);
        put(-k, &mut rng);
    }
    s
}

/// `log dρ_N/dq_τ` at `state`.
pub fn tilt_log_ratio(state: &SpectralState, tilt: f64) -> f64 {
    if tilt == 0.0 {
        return 0.0;
    }
    state
        .modes()
        .map(|(k, c)| {
            let a = 1.0 + (k * k) as f64;
            (a / (a + tilt)).ln() + 0.5 * tilt * c.norm_sqr()
        })
        .sum()
}

/// Target share of the cutoff mass `B²/2π` for the tilted proposal's mean mass.
pub const TILT_MASS_FRACTION: f64 = 0.95;

/// The tilt `τ ≥ 0` whose proposal has mean mass `TILT_MASS_FRACTION · B²/2π`;
/// zero when `ρ_N` already sits inside that.
pub fn tilt_for_cutoff(n: usize, b: f64) -> f64 {
    let n = n as i64;
    let mean_mass = |t: f64| (-n..=n).map(|k| 2.0 / (1.0 + (k * k) as f64 + t)).sum::<f64>();
    let target = TILT_MASS_FRACTION * b * b / (2.0 * PI);
    if !target.is_finite() || mean_mass(0.0) <= target {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while mean_mass(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_mass(mid) > target { lo = mid } else { hi = mid }
    }
    hi
}

/// `E|c_n|² = 2/(1+n²)` under `ρ`.
pub fn mode_second_moment(n: i64) -> f64 {
    2.0 / (1.0 + (n * n) as f64)
}

/// `E‖v‖²_{L²} = 4π Σ_{|n|≤N} 1/(1+n²)` under `ρ_N`.
pub fn expected_l2_squared(n: usize) -> f64 {
    let n = n as i64;
    2.0 * PI * (-n..=n).map(mode_second_moment).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub bandwidth: usize,
    pub samples: Vec<SpectralState>,
    /// Log of the unnormalized density against `ρ_N`.
    pub log_weights: Vec<f64>,
    /// `∞` for pure `ρ_N` ensembles.
    pub cutoff_b: f64,
    pub seed: u64,
    /// Proposal tilt `τ`; samples come from `q_τ` and `log_weights` include `log dρ_N/dq_τ`.
    pub tilt: f64,
}

pub fn sample_rho(n: usize, count: usize, seed: u64) -> Result<Ensemble> {
    sample_tilted(n, count, seed, 0.0)
}

/// Samples of `q_τ`, weighted to represent `ρ_N`.
pub fn sample_tilted(n: usize, count: usize, seed: u64, tilt: f64) -> Result<Ensemble> {
    if count == 0 {
        return Err(Error::invalid("ensemble count must be at least 1"));
    }
    if !(tilt >= 0.0 && tilt.is_finite()) {
        return Err(Error::invalid(format!("tilt must be finite and non-negative, got {tilt}")));
    }
    let samples: Vec<SpectralState> = (0..count as u64).into_par_iter().map(|i| draw_tilted(n, seed, i, tilt)).collect();
    let log_weights = samples.par_iter().map(|s| tilt_log_ratio(s, tilt)).collect();
    Ok(Ensemble {
        bandwidth: n,
        samples,
        log_weights,
        cutoff_b: f64::INFINITY,
        seed,
        tilt,
    })
}

/// A `μ_N` ensemble drawn from the proposal tilted towards the cutoff ball.
pub fn sample_mu(n: usize, count: usize, seed: u64, b: f64) -> Result<Ensemble> {
    Ok(reweight_to_mu(&sample_tilted(n, count, seed, tilt_for_cutoff(n, b))?, b))
}

/// `log(χ_{‖v‖≤B} e^{−𝒩(v)/2})`.
pub fn weight_r(state: &SpectralState, b: f64) -> f64 {
    if l2_norm(state) > b {
        return f64::NEG_INFINITY;
    }
    -0.5 * nonlinear_parts(state).total
}

pub fn reweight_to_mu(ensemble: &Ensemble, b: f64) -> Ensemble {
    let tilt = ensemble.tilt;
    let log_weights = ensemble.samples.par_iter().map(|s| weight_r(s, b) + tilt_log_ratio(s, tilt)).collect();
    Ensemble {
        log_weights,
        cutoff_b: b,
        ..ensemble.clone()
    }
}

/// `ν = μ∘G`: each sample `v` becomes `G⁻¹(v)` at `out_bandwidth`; weights are kept.
pub fn push_nu(ensemble: &Ensemble, out_bandwidth: usize) -> Ensemble {
    let samples = ensemble.samples.par_iter().map(|s| gauge_inverse(s, out_bandwidth)).collect();
    Ensemble {
        bandwidth: out_bandwidth,
        samples,
        ..ensemble.clone()
    }
}

/// One index drawn with probability proportional to the weights; `None` if all vanish.
pub fn resample_index(ensemble: &Ensemble, seed: u64) -> Option<usize> {
    let w = ensemble.normalized_weights();
    if w.iter().all(|&x| x == 0.0) {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let u: f64 = rand::Rng::random(&mut rng);
    let mut acc = 0.0;
    for (i, x) in w.iter().enumerate() {
        acc += x;
        if u < acc {
            return Some(i);
        }
    }
    w.iter().rposition(|&x| x > 0.0)
}

/// A single `μ_N` draw: importance resampling from `pool` tilted proposals.
pub fn draw_mu_sample(n: usize, b: f64, pool: usize, seed: u64) -> Result<(usize, SpectralState)> {
    let ens = sample_mu(n, pool, seed, b)?;
    let i = resample_index(&ens, seed)
        .ok_or_else(|| Error::invalid(format!("no proposal fell inside B = {b}")))?;
    Ok((i, ens.samples[i].clone()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub mean: f64,
    pub std_error: f64,
    pub effective_sample_size: f64,
    pub count: usize,
}

impl Ensemble {
    pub fn count(&self) -> usize {
        self.samples.len()
    }

    /// Normalized weights `w_i / Σ w`.
    pub fn normalized_weights(&self) -> Vec<f64> {
        normalized(&self.log_weights)
    }

    pub fn effective_sample_size(&self) -> f64 {
        ess(&self.normalized_weights())
    }

    /// Fraction of samples inside the cutoff ball.
    pub fn pass_fraction(&self) -> f64 {
        self.log_weights.iter().filter(|w| w.is_finite()).count() as f64 / self.count() as f64
    }

    pub fn values(&self, f: impl Fn(&SpectralState) -> f64 + Sync + Send) -> Vec<f64> {
        self.samples.par_iter().map(f).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(ENSEMBLE_MAGIC)?;
        w.write_all(&ENSEMBLE_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.bandwidth as u64).to_le_bytes())?;
        w.write_all(&(self.count() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.cutoff_b.to_le_bytes())?;
        w.write_all(&self.tilt.to_le_bytes())?;
        for (s, lw) in self.samples.iter().zip(&self.log_weights) {
            s.write_binary(&mut w)?;
            w.write_all(&lw.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != ENSEMBLE_MAGIC {
            return Err(Error::Format("not an ensemble file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != ENSEMBLE_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported ensemble format version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b8)?;
            Ok(b8)
        };
        let bandwidth = u64::from_le_bytes(next(&mut r)?) as usize;
        let count = u64::from_le_bytes(next(&mut r)?) as usize;
        let seed = u64::from_le_bytes(next(&mut r)?);
        let cutoff_b = f64::from_le_bytes(next(&mut r)?);
        let tilt = f64::from_le_bytes(next(&mut r)?);
        let mut samples = Vec::with_capacity(count);
        let mut log_weights = Vec::with_capacity(count);
        for _ in 0..count {
            let s = SpectralState::read_binary(&mut r)?;
            if s.bandwidth() != bandwidth {
                return Err(Error::Format(format!(
                    "sample bandwidth {} differs from header bandwidth {bandwidth}",
                    s.bandwidth()
                )));
            }
            samples.push(s);
            log_weights.push(f64::from_le_bytes(next(&mut r)?));
        }
        Ok(Self {
            bandwidth,
            samples,
            log_weights,
            cutoff_b,
            seed,
            tilt,
        })
    }

    /// Per-sample scalars: index, log-weight, L² norm, `FL^{2/3−0.01,3}`
    /// norm and the nonlinear energy with its three parts.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<[f64; 8]> = self
            .samples
            .par_iter()
            .zip(&self.log_weights)
            .enumerate()
            .map(|(i, (s, lw))| {
                let p = nonlinear_parts(s);
                let fl = fl_norm(s, 2.0 / 3.0 - 0.01, 3.0).expect("r = 3 is valid");
                [i as f64, *lw, l2_norm(s), fl, p.total, p.f, p.g, p.k]
            })
            .collect();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "log_weight", "l2", "fl_norm", "nonlinear_N", "F", "G", "K"])?;
        for r in rows {
            let mut rec = vec![format!("{}", r[0] as u64)];
            rec.extend(r[1..].iter().map(|x| format!("{x:.17e}")));
            out.write_record(rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn normalized(log_weights: &[f64]) -> Vec<f64> {
    let top = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return vec![0.0; log_weights.len()];
    }
    let w: Vec<f64> = log_weights.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn ess(normalized: &[f64]) -> f64 {
    let sq: f64 = normalized.iter().map(|w| w * w).sum();
    if sq == 0.0 { 0.0 } else { 1.0 / sq }
}

/// Self-normalized importance estimate of `E[f]` from precomputed values.
pub fn weighted_estimate(values: &[f64], log_weights: &[f64]) -> Result<EstimateResult> {
    assert_eq!(values.len(), log_weights.len());
    let w = normalized(log_weights);
    let effective = ess(&w);
    if effective < MIN_ESS {
        return Err(Error::UnusableEstimate { ess: effective, min: MIN_ESS });
    }
    // Shifting by a sample value keeps constant observables exact.
    let shift = values.iter().zip(&w).find(|(_, w)| **w > 0.0).map(|(f, _)| *f).unwrap_or(0.0);
    let mean = shift + w.iter().zip(values).map(|(w, f)| w * (f - shift)).sum::<f64>();
    let var: f64 = w.iter().zip(values).map(|(w, f)| w * w * (f - mean).powi(2)).sum();
    Ok(EstimateResult {
        mean,
        std_error: var.sqrt(),
        effective_sample_size: effective,
        count: values.len(),
    })
}

pub fn expectation(
    ensemble: &Ensemble,
    observable: impl Fn(&SpectralState) -> f64 + Sync + Send,
) -> Result<EstimateResult> {
    weighted_estimate(&ensemble.values(observable), &ensemble.log_weights)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffCalibration {
    pub b: f64,
    pub pass_fraction: f64,
    pub pilot_count: usize,
}

/// Chooses `B` as the empirical median of `‖v‖_{L²}` over a `ρ_N` pilot,
/// so about half the samples pass the cutoff.
pub fn calibrate_cutoff(n: usize, pilot_count: usize, seed: u64) -> Result<CutoffCalibration> {
    let pilot = sample_rho(n, pilot_count, seed)?;
    let mut norms = pilot.values(l2_norm);
    norms.sort_by(f64::total_cmp);
    let b = norms[norms.len() / 2];
    let pass = norms.iter().filter(|&&x| x <= b).count() as f64 / norms.len() as f64;
    Ok(CutoffCalibration {
        b,
        pass_fraction: pass,
        pilot_count,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub k: Vec<f64>,
    pub survival: Vec<f64>,
    /// Fit of `log P` against `K²` over the points with `P > 0`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub fitted_points: usize,
}

/// Weighted survival `P(‖v‖_{FL^{s,r}} > K)` over `k_grid`.
pub fn tail_curve(ensemble: &Ensemble, s: f64, r: f64, k_grid: &[f64]) -> Result<TailCurve> {
    fl_norm(&SpectralState::zeros(0), s, r)?;
    let norms = ensemble.values(|v| fl_norm(v, s, r).expect("exponent checked"));
    let w = ensemble.normalized_weights();
    let survival: Vec<f64> = k_grid
        .iter()
        .map(|&k| {
            if norms.iter().zip(&w).all(|(x, w)| *x > k || *w == 0.0) {
                return 1.0;
            }
            norms.iter().zip(&w).filter(|(x, _)| **x > k).map(|(_, w)| w).sum::<f64>().min(1.0)
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        k_grid.iter().zip(&survival).filter(|(_, p)| **p > 0.0).map(|(k, p)| (k * k, p.ln())).unzip();
    let fit = fit_line(&xs, &ys);
    Ok(TailCurve {
        k: k_grid.to_vec(),
        survival,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        fitted_points: xs.len(),
    })
}

/// `K` grid spanning the upper tail of the norm distribution: from the
/// median to the level left with about `min_tail` exceedances, uniform in `K²`.
pub fn tail_grid(ensemble: &Ensemble, s: f64, r: f64, points: usize, min_tail: usize) -> Result<Vec<f64>> {
    fl_norm(&SpectralState::zeros(0), s, r)?;
    let mut norms = ensemble.values(|v| fl_norm(v, s, r).expect("exponent checked"));
    norms.sort_by(f64::total_cmp);
    let n = norms.len();
    let lo = norms[n / 2];
    let hi = norms[n.saturating_sub(min_tail.max(1)).max(n / 2)];
    Ok((0..points)
        .map(|i| (lo * lo + (hi * hi - lo * lo) * i as f64 / (points.max(2) - 1) as f64).sqrt())
        .collect())
}

/// `X_N(v) = ∫ v^N v̄^N_x = −2πi Σ_{|n|≤N} n|c_n|²`; returns the imaginary part.
pub fn x_n(state: &SpectralState, n: usize) -> f64 {
    -2.0 * PI * state.modes().filter(|(k, _)| k.unsigned_abs() as usize <= n).map(|(k, c)| k as f64 * c.norm_sqr()).sum::<f64>()
}

/// `E|X_M − X_N|² = 4π² Σ_{N<|n|≤M} n² (2/(1+n²))²`.
pub fn xn_second_moment(n: usize, m: usize) -> f64 {
    let s: f64 = (n + 1..=m).map(|k| 2.0 * (k * k) as f64 * mode_second_moment(k as i64).powi(2)).sum();
    4.0 * PI * PI * s
}

/// Mean and standard error of a plain sample.
fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// For each `N`, with `M = 2N` and coupled samples: the `L⁴` norm of
/// `X_M − X_N`, and the sample second moment against [`xn_second_moment`].
pub fn xn_decay_study(n_list: &[usize], count: usize, seed: u64) -> Result<ExperimentResult> {
    let start = Instant::now();
    let top = 2 * n_list.iter().copied().max().ok_or_else(|| Error::invalid("empty N list"))?;
    let ens = sample_rho(top, count, seed)?;
    let mut res = ExperimentResult::new("xn-decay");
    res.param("n_list", n_list);
    res.param("count", count);
    res.param("seed", seed);
    res.set_columns(&["N", "M", "l4_norm", "l4_se", "second_moment", "second_moment_se", "second_moment_exact", "z_score"]);
    let mut logs = (Vec::new(), Vec::new());
    let mut all_z_ok = true;
    for &n in n_list {
        let d: Vec<f64> = ens.samples.iter().map(|s| x_n(s, 2 * n) - x_n(s, n)).collect();
        let sq: Vec<f64> = d.iter().map(|x| x * x).collect();
        let fourth: Vec<f64> = sq.iter().map(|x| x * x).collect();
        let (m2, se2) = mean_se(&sq);
        let (m4, se4) = mean_se(&fourth);
        let l4 = m4.powf(0.25);
        // Delta method for the fourth root.
        let l4_se = 0.25 * m4.powf(-0.75) * se4;
        let exact = xn_second_moment(n, 2 * n);
        let z = (m2 - exact) / se2;
        all_z_ok &= z.abs() <= 3.0;
        res.push_row(vec![n as f64, 2.0 * n as f64, l4, l4_se, m2, se2, exact, z]);
        logs.0.push((n as f64).ln());
        logs.1.push(l4.ln());
    }
    let fit = fit_line(&logs.0, &logs.1);
    res.fit("l4_slope", fit.slope);
    res.fit("l4_intercept", fit.intercept);
    res.fit("l4_r_squared", fit.r_squared);
    res.fit("second_moment_within_3se", if all_z_ok { 1.0 } else { 0.0 });
    res.passed = all_z_ok && (-0.8..=-0.3).contains(&fit.slope);
    res.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(res)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearPart {
    F,
    G,
    K,
}

impl NonlinearPart {
    pub const ALL: [NonlinearPart; 3] = [NonlinearPart::F, NonlinearPart::G, NonlinearPart::K];

    pub fn pick(self, p: &NonlinearParts) -> f64 {
        match self {
            NonlinearPart::F => p.f,
            NonlinearPart::G => p.g,
            NonlinearPart::K => p.k,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NonlinearPart::F => "F",
            NonlinearPart::G => "G",
            NonlinearPart::K => "K",
        }
    }
}

/// `ρ(|Q_{2N} − Q_N| > λ)` over coupled samples, for each `N`. With a cutoff
/// the probability is conditional on `‖v‖_{L²} ≤ B` at the widest bandwidth.
pub fn cauchy_in_measure_study(
    part: NonlinearPart,
    n_list: &[usize],
    count: usize,
    lambda: f64,
    seed: u64,
    cutoff_b: Option<f64>,
) -> Result<ExperimentResult> {
    let start = Instant::now();
    let top = 2 * n_list.iter().copied().max().ok_or_else(|| Error::invalid("empty N list"))?;
    let mut ens = sample_rho(top, count, seed)?;
    if let Some(b) = cutoff_b {
        let inside: Vec<SpectralState> = ens.samples.into_iter().filter(|s| l2_norm(s) <= b).collect();
        if inside.is_empty() {
            return Err(Error::invalid(format!("no sample inside B = {b}")));
        }
        ens.samples = inside;
    }
    let kept = ens.count();
    let mut res = ExperimentResult::new(&format!("cauchy-{}", part.name()));
    res.param("part", part.name());
    res.param("n_list", n_list);
    res.param("count", count);
    res.param("lambda", lambda);
    res.param("seed", seed);
    res.param("cutoff_b", cutoff_b);
    res.param("inside_ball", kept);
    res.set_columns(&["N", "M", "exceedance", "exceedance_se", "median_abs_diff"]);
    let mut probs = Vec::new();
    for &n in n_list {
        let mut diffs: Vec<f64> = ens
            .samples
            .par_iter()
            .map(|s| {
                let q_m = part.pick(&nonlinear_parts(&project(s, 2 * n)));
                let q_n = part.pick(&nonlinear_parts(&project(s, n)));
                (q_m - q_n).abs()
            })
            .collect();
        let p = diffs.iter().filter(|&&d| d > lambda).count() as f64 / kept as f64;
        diffs.sort_by(f64::total_cmp);
        res.push_row(vec![n as f64, 2.0 * n as f64, p, (p * (1.0 - p) / kept as f64).sqrt(), diffs[kept / 2]]);
        probs.push(p);
    }
    let decreasing = probs.windows(2).all(|w| w[1] < w[0]);
    res.fit("strictly_decreasing", if decreasing { 1.0 } else { 0.0 });
    res.passed = decreasing;
    res.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_reproducible_and_coupled() {
        let a = draw_sample(8, 7, 3);
        assert_eq!(a, draw_sample(8, 7, 3));
        assert_ne!(a, draw_sample(8, 7, 4));
        assert_ne!(a, draw_sample(8, 8, 3));
        let wide = draw_sample(32, 7, 3);
        assert_eq!(project(&wide, 8), a);
        let e1 = sample_rho(8, 1, 11).unwrap();
        assert_eq!(e1, sample_rho(8, 1, 11).unwrap());
        assert!(sample_rho(8, 0, 1).is_err());
    }

    #[test]
    fn worker_count_does_not_matter() {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| reweight_to_mu(&sample_rho(6, 200, 5).unwrap(), 5.0));
        let b = three.install(|| reweight_to_mu(&sample_rho(6, 200, 5).unwrap(), 5.0));
        assert_eq!(a, b);
    }

    #[test]
    fn weight_examples() {
        let big = SpectralState::single_mode(2, 0, C64::new(2.0, 0.0));
        assert_eq!(weight_r(&big, 1.0), f64::NEG_INFINITY);
        assert_eq!(weight_r(&SpectralState::zeros(3), 1.0), 0.0);
        let c = 0.3f64;
        let s = SpectralState::single_mode(2, 0, C64::new(c, 0.0));
        let expect = -(PI / 2.0) * c.powi(6);
        assert!((weight_r(&s, 10.0) - expect).abs() < 1e-15);
    }

    #[test]
    fn estimates() {
        let e = sample_rho(4, 500, 1).unwrap();
        let c = expectation(&e, |_| 2.5).unwrap();
        assert_eq!((c.mean, c.std_error), (2.5, 0.0));
        assert!((c.effective_sample_size - 500.0).abs() < 1e-9);

        let mu = sample_mu(4, 2000, 1, 1.5).unwrap();
        let mut doubled = mu.clone();
        doubled.log_weights.iter_mut().for_each(|w| *w += 2f64.ln());
        let f = |s: &SpectralState| s.coeff(1).norm_sqr();
        let a = expectation(&mu, f).unwrap();
        let b = expectation(&doubled, f).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-15 && (a.std_error - b.std_error).abs() < 1e-15);

        let mut none = mu.clone();
        none.log_weights.iter_mut().for_each(|w| *w = f64::NEG_INFINITY);
        assert!(matches!(expectation(&none, f), Err(Error::UnusableEstimate { .. })));

        let zeros = Ensemble {
            samples: vec![SpectralState::zeros(2); 20],
            log_weights: vec![0.0; 20],
            bandwidth: 2,
            cutoff_b: f64::INFINITY,
            seed: 0,
            tilt: 0.0,
        };
        assert!(reweight_to_mu(&zeros, f64::INFINITY).log_weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn rho_mass_moment() {
        let e = sample_rho(8, 20_000, 3).unwrap();
        let m = expectation(&e, crate::functionals::mass).unwrap();
        let exact: f64 = (-8..=8).map(mode_second_moment).sum();
        assert!((m.mean - exact).abs() < 3.0 * m.std_error, "{} vs {exact} ± {}", m.mean, m.std_error);
        assert!((expected_l2_squared(8) - 2.0 * PI * exact).abs() < 1e-12);
    }

    #[test]
    fn persistence_round_trips() {
        let e = reweight_to_mu(&sample_rho(5, 17, 9).unwrap(), 4.0);
        let mut buf = Vec::new();
        e.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], ENSEMBLE_MAGIC);
        assert_eq!(Ensemble::read_from(&buf[..]).unwrap(), e);
        buf[8] = 9;
        assert!(Ensemble::read_from(&buf[..]).is_err());

        let mut csv_out = Vec::new();
        e.write_csv(&mut csv_out).unwrap();
        let text = String::from_utf8(csv_out).unwrap();
        assert_eq!(text.lines().count(), 18);
        assert!(text.starts_with("index,log_weight,l2,"));
    }

    #[test]
    fn tail_curve_basics() {
        let e = sample_rho(16, 2000, 4).unwrap();
        let t = tail_curve(&e, 0.6, 3.0, &[0.0, 1.0, 2.0, 3.0, 50.0]).unwrap();
        assert_eq!(t.survival[0], 1.0);
        assert!(t.survival.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*t.survival.last().unwrap(), 0.0);
        assert!(tail_curve(&e, 0.6, 0.5, &[1.0]).is_err());
    }

    #[test]
    fn xn_moment_closed_form() {
        assert_eq!(xn_second_moment(8, 8), 0.0);
        let s = draw_sample(16, 1, 0);
        assert_eq!(x_n(&s, 8) - x_n(&project(&s, 8), 8), 0.0);
        let e1 = SpectralState::single_mode(2, 1, C64::new(1.0, 0.0));
        assert!((x_n(&e1, 2) + 2.0 * PI).abs() < 1e-15);
    }

    #[test]
    fn push_nu_keeps_mass_and_weights() {
        let mut e = reweight_to_mu(&sample_rho(4, 5, 2).unwrap(), 100.0);
        e.samples.iter_mut().for_each(|s| *s = s.scaled(C64::new(0.3, 0.0)));
        let nu = push_nu(&e, 16);
        assert_eq!(nu.log_weights, e.log_weights);
        for (a, b) in e.samples.iter().zip(&nu.samples) {
            assert!((crate::functionals::mass(a) - crate::functionals::mass(b)).abs() < 1e-8 * crate::functionals::mass(a));
        }
        let c = SpectralState::single_mode(3, 0, C64::new(0.4, 0.1));
        let ce = Ensemble { samples: vec![c.clone()], log_weights: vec![0.0], bandwidth: 3, cutoff_b: 1.0, seed: 0, tilt: 0.0 };
        assert!(push_nu(&ce, 3).samples[0].max_abs_diff(&c) < 1e-15);
    }

    #[test]
    fn calibration_lands_in_range() {
        let c = calibrate_cutoff(8, 1000, 1).unwrap();
        assert!((0.1..=0.9).contains(&c.pass_fraction));
    }
}
