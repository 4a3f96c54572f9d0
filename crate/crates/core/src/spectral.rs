//! Fourier representation of periodic fields on [0, 2π).
//!
//! A [`SpectralState`] of bandwidth `N` stores the coefficients `c_n`,
//! `|n| ≤ N`, of `v(x) = Σ c_n e^{inx}`. Integrals over the torus carry the
//! explicit `2π`: `∫ |v|² dx = 2π Σ |c_n|²`.
//!
//! Nonlinear products are formed on a zero-padded uniform grid. A product of
//! factors with total bandwidth `B`, truncated to bandwidth `K`, is exact
//! (free of aliasing) on any grid of size `M ≥ B + K + 1`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Grid padding used for products up to quintic order: `M ≥ 3(2N+1) = 6N+3`.
pub const DEALIAS_PAD: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateRecord", into = "StateRecord")]
pub struct SpectralState {
    bandwidth: usize,
    coeffs: Vec<C64>,
}

/// JSON wire form: `{ "n": N, "re": [...], "im": [...] }`, ordered `n = -N..=N`.
#[derive(Serialize, Deserialize)]
struct StateRecord {
    n: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl TryFrom<StateRecord> for SpectralState {
    type Error = Error;

    fn try_from(rec: StateRecord) -> Result<Self> {
        if rec.re.len() != rec.im.len() {
            return Err(Error::Format(format!(
                "re has {} entries but im has {}",
                rec.re.len(),
                rec.im.len()
            )));
        }
        let coeffs = rec
            .re
            .iter()
            .zip(&rec.im)
            .map(|(&re, &im)| C64::new(re, im))
            .collect();
        SpectralState::new(rec.n, coeffs)
    }
}

impl From<SpectralState> for StateRecord {
    fn from(s: SpectralState) -> Self {
        StateRecord {
            n: s.bandwidth,
            re: s.coeffs.iter().map(|c| c.re).collect(),
            im: s.coeffs.iter().map(|c| c.im).collect(),
        }
    }
}

impl SpectralState {
    pub fn new(bandwidth: usize, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() != 2 * bandwidth + 1 {
            return Err(Error::Format(format!(
                "bandwidth {bandwidth} needs {} coefficients, got {}",
                2 * bandwidth + 1,
                coeffs.len()
            )));
        }
        if !coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { bandwidth, coeffs })
    }

    pub fn zeros(bandwidth: usize) -> Self {
        Self {
            bandwidth,
            coeffs: vec![ZERO; 2 * bandwidth + 1],
        }
    }

    pub fn from_fn(bandwidth: usize, mut f: impl FnMut(i64) -> C64) -> Self {
        let n = bandwidth as i64;
        Self {
            bandwidth,
            coeffs: (-n..=n).map(&mut f).collect(),
        }
    }

    /// `amplitude · e^{i·mode·x}` at the given bandwidth.
    pub fn single_mode(bandwidth: usize, mode: i64, amplitude: C64) -> Self {
        let mut s = Self::zeros(bandwidth);
        s.set(mode, amplitude);
        s
    }

    pub(crate) fn from_vec_unchecked(bandwidth: usize, coeffs: Vec<C64>) -> Self {
        debug_assert_eq!(coeffs.len(), 2 * bandwidth + 1);
        Self { bandwidth, coeffs }
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<C64> {
        self.coeffs
    }

    /// Coefficient of mode `n`; zero outside the band.
    pub fn coeff(&self, n: i64) -> C64 {
        match self.index(n) {
            Some(i) => self.coeffs[i],
            None => ZERO,
        }
    }

    /// Sets mode `n`. Panics if `|n| > N`.
    pub fn set(&mut self, n: i64, value: C64) {
        let i = self
            .index(n)
            .unwrap_or_else(|| panic!("mode {n} outside bandwidth {}", self.bandwidth));
        self.coeffs[i] = value;
    }

    fn index(&self, n: i64) -> Option<usize> {
        let b = self.bandwidth as i64;
        (n.abs() <= b).then(|| (n + b) as usize)
    }

    /// `(n, c_n)` pairs in increasing `n`.
    pub fn modes(&self) -> impl Iterator<Item = (i64, C64)> + '_ {
        let b = self.bandwidth as i64;
        self.coeffs
            .iter()
            .enumerate()
            .map(move |(i, &c)| (i as i64 - b, c))
    }

    pub fn map_modes(&self, mut f: impl FnMut(i64, C64) -> C64) -> Self {
        let coeffs = self.modes().map(|(n, c)| f(n, c)).collect();
        Self::from_vec_unchecked(self.bandwidth, coeffs)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Mode with the largest modulus and that modulus.
    pub fn max_mode(&self) -> (i64, f64) {
        self.modes()
            .map(|(n, c)| (n, c.norm()))
            .fold((0, f64::NEG_INFINITY), |acc, x| {
                if x.1 > acc.1 || x.1.is_nan() {
                    x
                } else {
                    acc
                }
            })
    }

    pub fn scaled(&self, a: C64) -> Self {
        self.map_modes(|_, c| a * c)
    }

    /// `self + a·other` on the union of the two bands.
    pub fn axpy(&self, a: C64, other: &Self) -> Self {
        if self.bandwidth == other.bandwidth {
            let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| x + a * y).collect();
            return Self::from_vec_unchecked(self.bandwidth, coeffs);
        }
        Self::from_fn(self.bandwidth.max(other.bandwidth), |n| self.coeff(n) + a * other.coeff(n))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    /// Largest coefficient distance; states of different bandwidth are compared
    /// on the union of their bands.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let b = self.bandwidth.max(other.bandwidth) as i64;
        (-b..=b)
            .map(|n| (self.coeff(n) - other.coeff(n)).norm())
            .fold(0.0, f64::max)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.bandwidth as u64).to_le_bytes())?;
        for c in &self.coeffs {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the binary form: a little-endian `u64` bandwidth header followed by
    /// `2N+1` interleaved little-endian `f64` pairs (re, im).
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word);
        if n > (u32::MAX as u64) {
            return Err(Error::Format(format!("implausible bandwidth {n}")));
        }
        let n = n as usize;
        let mut coeffs = Vec::with_capacity(2 * n + 1);
        for _ in 0..2 * n + 1 {
            r.read_exact(&mut word)?;
            let re = f64::from_le_bytes(word);
            r.read_exact(&mut word)?;
            let im = f64::from_le_bytes(word);
            coeffs.push(C64::new(re, im));
        }
        Self::new(n, coeffs)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 16 * self.coeffs.len());
        self.write_binary(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_binary(bytes)
    }
}

/// Samples of a field on the uniform grid `x_j = 2πj/M`.
#[derive(Clone, Debug)]
pub struct PhysicalField {
    pub grid_size: usize,
    pub samples: Vec<C64>,
    pub source_bandwidth: usize,
}

impl PhysicalField {
    pub fn max_bandwidth(&self) -> usize {
        (self.grid_size - 1) / 2
    }

    /// `∫_𝕋 f dx` by the trapezoid rule, exact for trigonometric polynomials of
    /// degree below `M`.
    pub fn integral(&self) -> C64 {
        integrate(&self.samples)
    }
}

/// Smallest integer `≥ n` whose only prime factors are 2, 3 and 5.
pub fn fast_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

/// Grid size for a bandwidth-`n` field padded by `pad`: `fast_size(pad·(2n+1))`.
pub fn grid_size(n: usize, pad: usize) -> usize {
    fast_size(pad.max(1) * (2 * n + 1))
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(size: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(size), p.plan_fft_inverse(size))
    })
}

/// Reusable transform pair for one grid size.
#[derive(Clone)]
pub struct Grid {
    size: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<C64>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid").field("size", &self.size).finish()
    }
}

impl Grid {
    pub fn new(size: usize) -> Self {
        assert!(size > 0, "grid size must be positive");
        let (fwd, inv) = plans(size);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Self {
            size,
            fwd,
            inv,
            scratch: vec![ZERO; scratch_len],
        }
    }

    pub fn for_bandwidth(n: usize, pad: usize) -> Self {
        Self::new(grid_size(n, pad))
    }

    /// Grid on which a product of total bandwidth `product_bandwidth`,
    /// truncated to `out_bandwidth`, is computed without aliasing.
    pub fn exact_for(product_bandwidth: usize, out_bandwidth: usize) -> Self {
        Self::new(fast_size((product_bandwidth + out_bandwidth).max(2 * out_bandwidth) + 1))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn max_bandwidth(&self) -> usize {
        (self.size - 1) / 2
    }

    /// Evaluates `Σ c_n e^{inx_j}` into `out` (length `M`).
    pub fn synthesize(&mut self, coeffs: &[C64], out: &mut [C64]) {
        let n = (coeffs.len() - 1) / 2;
        assert!(n <= self.max_bandwidth(), "bandwidth {n} does not fit grid {}", self.size);
        assert_eq!(out.len(), self.size);
        out.fill(ZERO);
        let m = self.size as i64;
        for (i, &c) in coeffs.iter().enumerate() {
            let k = i as i64 - n as i64;
            out[k.rem_euclid(m) as usize] = c;
        }
        self.inv.process_with_scratch(out, &mut self.scratch);
    }

    /// Discrete Fourier coefficients `|k| ≤ out_bandwidth` of the samples.
    /// The sample buffer is overwritten.
    pub fn analyze(&mut self, samples: &mut [C64], out: &mut [C64]) {
        let n = (out.len() - 1) / 2;
        assert!(n <= self.max_bandwidth(), "bandwidth {n} does not fit grid {}", self.size);
        assert_eq!(samples.len(), self.size);
        self.fwd.process_with_scratch(samples, &mut self.scratch);
        let m = self.size as i64;
        let scale = 1.0 / self.size as f64;
        for (i, o) in out.iter_mut().enumerate() {
            let k = i as i64 - n as i64;
            *o = samples[k.rem_euclid(m) as usize] * scale;
        }
    }

    /// All `M` discrete Fourier coefficients, in FFT order. Overwrites `samples`.
    pub fn forward_in_place(&mut self, samples: &mut [C64]) {
        self.fwd.process_with_scratch(samples, &mut self.scratch);
        let scale = 1.0 / self.size as f64;
        samples.iter_mut().for_each(|s| *s *= scale);
    }

    /// Inverse of [`Grid::forward_in_place`].
    pub fn inverse_in_place(&mut self, coeffs: &mut [C64]) {
        self.inv.process_with_scratch(coeffs, &mut self.scratch);
    }

    /// Signed wavenumber of FFT slot `j`.
    pub fn wavenumber(&self, j: usize) -> i64 {
        let m = self.size as i64;
        let j = j as i64;
        if j <= m / 2 {
            j
        } else {
            j - m
        }
    }
}

/// Trapezoid-rule `∫_𝕋 f dx = 2π · mean(f)`.
pub fn integrate(samples: &[C64]) -> C64 {
    samples.iter().sum::<C64>() * (2.0 * PI / samples.len() as f64)
}

pub fn integrate_real(samples: impl ExactSizeIterator<Item = f64>) -> f64 {
    let len = samples.len();
    samples.sum::<f64>() * (2.0 * PI / len as f64)
}

/// `P_M`: keeps modes `|n| ≤ min(M, N)`, returned at bandwidth `M`.
pub fn project(state: &SpectralState, m: usize) -> SpectralState {
    SpectralState::from_fn(m, |n| state.coeff(n))
}

/// `I − P_M` at the original bandwidth.
pub fn project_complement(state: &SpectralState, m: usize) -> SpectralState {
    let m = m as i64;
    state.map_modes(|n, c| if n.abs() <= m { ZERO } else { c })
}

/// Spectral `∂_x`: `c_n ↦ i n c_n`.
pub fn derivative(state: &SpectralState) -> SpectralState {
    state.map_modes(|n, c| c * C64::new(0.0, n as f64))
}

/// `v(x) ↦ v(x − a)`: `c_n ↦ c_n e^{−ina}`.
pub fn translate(state: &SpectralState, a: f64) -> SpectralState {
    state.map_modes(|n, c| c * C64::from_polar(1.0, -(n as f64) * a))
}

pub fn japanese_bracket(n: i64) -> f64 {
    (1.0 + (n * n) as f64).sqrt()
}

/// Fourier–Lebesgue norm `‖⟨n⟩^s c_n‖_{ℓ^r}` with `⟨n⟩ = (1+n²)^{1/2}`.
/// `r = ∞` gives the weighted sup norm.
pub fn fl_norm(state: &SpectralState, s: f64, r: f64) -> Result<f64> {
    if r.is_nan() || r < 1.0 {
        return Err(Error::invalid(format!("Fourier-Lebesgue exponent r = {r} must be >= 1")));
    }
    let weighted = state.modes().map(|(n, c)| japanese_bracket(n).powf(s) * c.norm());
    if r.is_infinite() {
        return Ok(weighted.fold(0.0, f64::max));
    }
    Ok(weighted.map(|x| x.powf(r)).sum::<f64>().powf(1.0 / r))
}

/// `‖v‖_{L²(𝕋)} = (2π Σ |c_n|²)^{1/2}`.
pub fn l2_norm(state: &SpectralState) -> f64 {
    (2.0 * PI * state.coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
}

/// `‖v‖_{L^p(𝕋)}` by grid quadrature. The grid always has at least `⌈p⌉N + 1`
/// points, so the result is exact (to rounding) for even integer `p`.
pub fn lp_norm(state: &SpectralState, p: f64, pad: usize) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::invalid(format!("L^p exponent p = {p} must be >= 1")));
    }
    if p.is_infinite() {
        // Sup over a fine grid; not exact.
        let field = physical_on(state, grid_size(state.bandwidth, pad.max(4)));
        return Ok(field.samples.iter().map(|v| v.norm()).fold(0.0, f64::max));
    }
    let n = state.bandwidth;
    let m = grid_size(n, pad).max(fast_size(p.ceil() as usize * n + 1));
    let field = physical_on(state, m);
    let integral = integrate_real(field.samples.iter().map(|v| v.norm().powf(p)));
    Ok(integral.powf(1.0 / p))
}

/// Samples the state on the padded grid of size `fast_size(pad·(2N+1))`.
pub fn to_physical(state: &SpectralState, pad: usize) -> Result<PhysicalField> {
    if pad == 0 {
        return Err(Error::invalid("pad factor must be >= 1"));
    }
    Ok(physical_on(state, grid_size(state.bandwidth, pad)))
}

pub fn physical_on(state: &SpectralState, grid_size: usize) -> PhysicalField {
    let mut grid = Grid::new(grid_size);
    let mut samples = vec![ZERO; grid_size];
    grid.synthesize(state.coeffs(), &mut samples);
    PhysicalField {
        grid_size,
        samples,
        source_bandwidth: state.bandwidth,
    }
}

/// Discrete Galerkin truncation of sampled data to `target_bandwidth`.
pub fn from_physical(field: &PhysicalField, target_bandwidth: usize) -> Result<SpectralState> {
    let limit = field.max_bandwidth();
    if target_bandwidth > limit {
        return Err(Error::BandwidthTooLarge {
            target: target_bandwidth,
            limit,
            grid_size: field.grid_size,
        });
    }
    let mut grid = Grid::new(field.grid_size);
    let mut samples = field.samples.clone();
    let mut out = vec![ZERO; 2 * target_bandwidth + 1];
    grid.analyze(&mut samples, &mut out);
    Ok(SpectralState::from_vec_unchecked(target_bandwidth, out))
}

/// One factor of a pointwise product.
#[derive(Clone, Copy, Debug)]
pub enum Factor<'a> {
    Plain(&'a SpectralState),
    Conj(&'a SpectralState),
}

impl Factor<'_> {
    fn state(&self) -> &SpectralState {
        match self {
            Factor::Plain(s) | Factor::Conj(s) => s,
        }
    }
}

/// `P_K(f_1 f_2 ⋯ f_k)` on a grid large enough to exclude aliasing.
pub fn dealiased_product(factors: &[Factor<'_>], out_bandwidth: usize) -> SpectralState {
    if factors.is_empty() {
        return SpectralState::single_mode(out_bandwidth, 0, C64::new(1.0, 0.0));
    }
    let total: usize = factors.iter().map(|f| f.state().bandwidth).sum();
    let widest = factors.iter().map(|f| f.state().bandwidth).max().unwrap_or(0);
    let mut grid = Grid::exact_for(total, out_bandwidth.max(widest));
    let m = grid.size();
    let mut acc = vec![C64::new(1.0, 0.0); m];
    let mut buf = vec![ZERO; m];
    for f in factors {
        grid.synthesize(f.state().coeffs(), &mut buf);
        let conj = matches!(f, Factor::Conj(_));
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a *= if conj { b.conj() } else { *b };
        }
    }
    let mut out = vec![ZERO; 2 * out_bandwidth + 1];
    grid.analyze(&mut acc, &mut out);
    SpectralState::from_vec_unchecked(out_bandwidth, out)
}
