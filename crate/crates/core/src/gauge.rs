//! The periodic gauge `G(f) = e^{−iJ(f)} f`, its inverse, the state-dependent
//! translation `Γ(t)`, and the time-dependent gauge `𝒢(u)(t) = Γ(t) G(u(t))`.
//!
//! `J(f)` is the zero-mean antiderivative of `h = |f|² − m(f)`. The double
//! integral in its definition reduces to `A − (1/2π)∫A` for any antiderivative
//! `A` of `h`, which is what is computed here.

use std::f64::consts::PI;

use crate::functionals::mass;
use crate::spectral::{fl_norm, grid_size, translate, Grid, SpectralState, C64, ZERO};

/// Output bandwidth multiple used when callers do not choose one.
pub const DEFAULT_OUT_FACTOR: usize = 4;

/// Grid padding for gauge evaluation, relative to the output bandwidth.
const GAUGE_PAD: usize = 6;

/// Samples of `J(f)` on a uniform grid.
#[derive(Clone, Debug)]
pub struct GaugePhase {
    pub base_bandwidth: usize,
    pub grid_size: usize,
    pub phase_values: Vec<f64>,
    /// Grid mean of `|f|² − m(f)`; zero up to rounding.
    pub integrand_mean: f64,
    /// Largest imaginary part met while forming `J`; zero up to rounding.
    pub max_imag: f64,
}

/// A gauge image together with the size of what truncation discarded.
#[derive(Clone, Debug)]
pub struct GaugeOutput {
    pub state: SpectralState,
    /// `L²` norm of the discarded modes `out < |k| ≤ M/2`.
    pub tail_l2: f64,
    /// `FL^{2/3−0.01, 3}` norm of the discarded modes.
    pub tail_fl: f64,
}

fn gauge_grid_size(n: usize, out_bandwidth: usize) -> usize {
    grid_size(n.max(out_bandwidth), GAUGE_PAD)
}

pub fn gauge_phase(state: &SpectralState) -> GaugePhase {
    gauge_phase_on(state, grid_size(state.bandwidth(), GAUGE_PAD))
}

/// `J(f)` on a grid of the given size (at least `2N+1`).
pub fn gauge_phase_on(state: &SpectralState, size: usize) -> GaugePhase {
    let mut grid = Grid::new(size);
    let mut samples = vec![ZERO; size];
    grid.synthesize(state.coeffs(), &mut samples);
    phase_from_samples(&mut grid, &samples, mass(state), state.bandwidth())
}

fn phase_from_samples(grid: &mut Grid, samples: &[C64], m: f64, base_bandwidth: usize) -> GaugePhase {
    let size = grid.size();
    let mut h: Vec<C64> = samples.iter().map(|v| C64::new(v.norm_sqr() - m, 0.0)).collect();
    let integrand_mean = h.iter().map(|z| z.re).sum::<f64>() / size as f64;
    grid.forward_in_place(&mut h);
    for j in 0..size {
        let k = grid.wavenumber(j);
        // |f|² has bandwidth 2N < M/2, so the Nyquist slot (if any) is empty.
        h[j] = if k == 0 || (size % 2 == 0 && j == size / 2) {
            ZERO
        } else {
            h[j] / C64::new(0.0, k as f64)
        };
    }
    grid.inverse_in_place(&mut h);
    let max_imag = h.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    GaugePhase {
        base_bandwidth,
        grid_size: size,
        phase_values: h.into_iter().map(|z| z.re).collect(),
        integrand_mean,
        max_imag,
    }
}

/// `e^{sign·iJ(f)} f` on the grid, truncated to `out_bandwidth`.
fn apply_phase(state: &SpectralState, out_bandwidth: usize, sign: f64) -> GaugeOutput {
    let size = gauge_grid_size(state.bandwidth(), out_bandwidth);
    let mut grid = Grid::new(size);
    let mut samples = vec![ZERO; size];
    grid.synthesize(state.coeffs(), &mut samples);
    let phase = phase_from_samples(&mut grid, &samples, mass(state), state.bandwidth());
    for (v, j) in samples.iter_mut().zip(&phase.phase_values) {
        *v *= C64::from_polar(1.0, sign * j);
    }
    grid.forward_in_place(&mut samples);

    let out = SpectralState::from_fn(out_bandwidth, |k| samples[k.rem_euclid(size as i64) as usize]);
    let tail = (0..size)
        .filter(|&j| grid.wavenumber(j).unsigned_abs() as usize > out_bandwidth)
        .map(|j| (grid.wavenumber(j), samples[j]));
    let mut l2 = 0.0;
    let mut fl = 0.0;
    let s = 2.0 / 3.0 - 0.01;
    for (k, c) in tail {
        l2 += c.norm_sqr();
        fl += (crate::spectral::japanese_bracket(k).powf(s) * c.norm()).powi(3);
    }
    GaugeOutput {
        state: out,
        tail_l2: (2.0 * PI * l2).sqrt(),
        tail_fl: fl.cbrt(),
    }
}

/// `G(f) = e^{−iJ(f)} f`, truncated to `out_bandwidth`.
pub fn gauge_forward(state: &SpectralState, out_bandwidth: usize) -> SpectralState {
    apply_phase(state, out_bandwidth, -1.0).state
}

pub fn gauge_forward_with_residual(state: &SpectralState, out_bandwidth: usize) -> GaugeOutput {
    apply_phase(state, out_bandwidth, -1.0)
}

/// `G⁻¹(w) = e^{iJ(w)} w`; `J` depends only on `|w|²`, which `G` preserves.
pub fn gauge_inverse(state: &SpectralState, out_bandwidth: usize) -> SpectralState {
    apply_phase(state, out_bandwidth, 1.0).state
}

pub fn gauge_inverse_with_residual(state: &SpectralState, out_bandwidth: usize) -> GaugeOutput {
    apply_phase(state, out_bandwidth, 1.0)
}

/// `Γ(t) w = w(· − 2t m(w))`.
pub fn gamma_translate(state: &SpectralState, t: f64) -> SpectralState {
    translate(state, 2.0 * t * mass(state))
}

/// `𝒢` at time `t`: `Γ(t) G(u)`.
pub fn full_gauge(state: &SpectralState, t: f64, out_bandwidth: usize) -> SpectralState {
    gamma_translate(&gauge_forward(state, out_bandwidth), t)
}

/// Default `FL^{s,r}` used for gauge round-trip residuals.
pub fn round_trip_residual(state: &SpectralState, out_bandwidth: usize) -> f64 {
    let there = gauge_forward(state, out_bandwidth);
    let back = gauge_inverse(&there, state.bandwidth().max(out_bandwidth));
    let orig = crate::spectral::project(state, back.bandwidth());
    fl_norm(&back.sub(&orig), 2.0 / 3.0 - 0.01, 3.0).expect("r = 3 is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{energy_report, full_energy, gauged_h, hamiltonian_h, energy_e};
    use crate::spectral::{l2_norm, physical_on};

    fn one_plus_e1(amp: f64) -> SpectralState {
        let mut s = SpectralState::zeros(1);
        s.set(0, C64::new(amp, 0.0));
        s.set(1, C64::new(amp, 0.0));
        s
    }

    /// `(1/2π) ∫_0^{2π} ∫_θ^x h(y) dy dθ` by composite Simpson in both variables.
    fn double_integral(h: impl Fn(f64) -> f64, x: f64) -> f64 {
        let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize| {
            let dx = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for i in 1..n {
                s += f(a + i as f64 * dx) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * dx / 3.0
        };
        let inner = |theta: f64| simpson(&h, theta, x, 400);
        simpson(&inner, 0.0, 2.0 * PI, 400) / (2.0 * PI)
    }

    #[test]
    fn phase_vanishes_for_flat_modulus() {
        for s in [
            SpectralState::single_mode(3, 0, C64::new(0.4, 0.3)),
            SpectralState::single_mode(3, 1, C64::new(1.0, 0.0)),
        ] {
            let p = gauge_phase(&s);
            assert!(p.phase_values.iter().all(|j| j.abs() < 1e-14));
            assert!(gauge_forward(&s, 12).max_abs_diff(&s) < 1e-14);
            assert!(gauge_inverse(&s, 12).max_abs_diff(&s) < 1e-14);
        }
    }

    #[test]
    fn phase_matches_double_integral() {
        let s = one_plus_e1(1.0);
        let p = gauge_phase(&s);
        assert!(p.integrand_mean.abs() < 1e-12);
        assert!(p.max_imag < 1e-12);
        for (j, &val) in p.phase_values.iter().enumerate().step_by(7) {
            let x = 2.0 * PI * j as f64 / p.grid_size as f64;
            assert!((val - 2.0 * x.sin()).abs() < 1e-12);
            let oracle = double_integral(|y| 2.0 * y.cos(), x);
            assert!((val - oracle).abs() < 1e-8, "x={x}: {val} vs {oracle}");
        }
    }

    #[test]
    fn modulus_is_preserved_on_the_grid() {
        let mut s = SpectralState::zeros(3);
        s.set(0, C64::new(0.3, 0.1));
        s.set(1, C64::new(0.2, -0.4));
        s.set(-3, C64::new(0.1, 0.1));
        let w = gauge_forward_with_residual(&s, 48);
        assert!(w.tail_l2 < 1e-12);
        let a = physical_on(&s, 200);
        let b = physical_on(&w.state, 200);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x.norm() - y.norm()).abs() < 1e-12);
        }
        assert!((l2_norm(&w.state) - l2_norm(&s)).abs() < 1e-12);
    }

    #[test]
    fn small_smooth_data_round_trip_and_energies() {
        let u = one_plus_e1(0.1);
        let w = gauge_forward(&u, 8);
        assert!((l2_norm(&w) - l2_norm(&u)).abs() < 1e-10);
        assert!(round_trip_residual(&u, 4) < 1e-10);
        assert!((hamiltonian_h(&u) - gauged_h(&w)).abs() < 1e-12);
        assert!((energy_e(&u) - full_energy(&w)).abs() < 1e-12);
        let r = energy_report(&w);
        assert!((r.full_E - energy_e(&u)).abs() < 1e-12);
    }

    #[test]
    fn gamma_examples() {
        let mut s = SpectralState::zeros(4);
        s.set(2, C64::new(0.3, 0.2));
        s.set(-1, C64::new(-0.1, 0.5));
        assert_eq!(gamma_translate(&s, 0.0), s);
        let e1 = SpectralState::single_mode(2, 1, C64::new(1.0, 0.0));
        assert!(gamma_translate(&e1, PI).max_abs_diff(&e1) < 1e-14);
        let moved = gamma_translate(&s, 0.37);
        let fl = |x: &SpectralState| fl_norm(x, 0.6, 3.0).unwrap();
        assert!((fl(&moved) - fl(&s)).abs() < 1e-14);
        let g = full_gauge(&s, 0.37, 16);
        assert!(g.max_abs_diff(&gamma_translate(&gauge_forward(&s, 16), 0.37)) < 1e-15);
    }

    #[test]
    fn round_trip_improves_with_output_bandwidth() {
        let mut s = SpectralState::zeros(4);
        for (k, c) in [(0, 0.5), (1, 0.4), (-2, 0.3), (4, 0.2)] {
            s.set(k, C64::new(c, 0.1));
        }
        let r1 = round_trip_residual(&s, 4);
        let r2 = round_trip_residual(&s, 8);
        let r3 = round_trip_residual(&s, 16);
        assert!(r2 < r1 && r3 < r2, "{r1} {r2} {r3}");
    }
}
