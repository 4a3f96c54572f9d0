//! Scalar functionals of a state: mass, the gauge scalar ψ, the ungauged
//! Hamiltonian and energy, their gauged counterparts, the nonlinear energy
//! weight and its three parts, the momentum integral, and the exact
//! instantaneous energy drift of the truncated flow.
//!
//! Quartic and sextic integrals are grid quadratures on a grid with
//! `M ≥ 6N+3` points; every integrand is a trigonometric polynomial of degree
//! at most `6N`, so the quadrature is exact up to rounding.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::spectral::{integrate, Grid, SpectralState, C64, DEALIAS_PAD, ZERO};

/// Every functional of one state.
#[allow(non_snake_case)]
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub m: f64,
    pub psi: f64,
    pub H: f64,
    pub E: f64,
    pub gauged_H: f64,
    pub gauged_E: f64,
    pub full_E: f64,
    pub nonlinear_N: f64,
    pub F_part: f64,
    pub G_part: f64,
    pub K_part: f64,
    pub X_re: f64,
    pub X_im: f64,
}

impl EnergyReport {
    /// Column order of [`EnergyReport::csv_row`].
    pub const CSV_HEADER: [&'static str; 13] = [
        "m", "psi", "H", "E", "gauged_H", "gauged_E", "full_E", "nonlinear_N", "F_part", "G_part",
        "K_part", "X_re", "X_im",
    ];

    pub fn csv_row(&self) -> [f64; 13] {
        [
            self.m,
            self.psi,
            self.H,
            self.E,
            self.gauged_H,
            self.gauged_E,
            self.full_E,
            self.nonlinear_N,
            self.F_part,
            self.G_part,
            self.K_part,
            self.X_re,
            self.X_im,
        ]
    }

    pub fn momentum(&self) -> C64 {
        C64::new(self.X_re, self.X_im)
    }
}

/// Integrals shared by all functionals.
#[derive(Clone, Copy, Debug, Default)]
struct Integrals {
    mass: f64,
    /// `Im ∫ v v̄_x`.
    im_v_vbx: f64,
    /// `∫ |v_x|²`.
    grad_sq: f64,
    /// `∫ |v|⁴`.
    quartic: f64,
    /// `∫ |v|⁶`.
    sextic: f64,
    /// `Im ∫ v² v̄ v̄_x`.
    cubic_deriv: f64,
    /// `∫ v v̄_x` by quadrature.
    momentum: C64,
}

fn integrals(state: &SpectralState) -> Integrals {
    let n = state.bandwidth();
    let mut grid = Grid::for_bandwidth(n, DEALIAS_PAD);
    let m = grid.size();
    let mut v = vec![ZERO; m];
    let mut vx = vec![ZERO; m];
    grid.synthesize(state.coeffs(), &mut v);
    grid.synthesize(crate::spectral::derivative(state).coeffs(), &mut vx);

    let mut quartic = 0.0;
    let mut sextic = 0.0;
    let mut cubic = 0.0;
    let mut mom = ZERO;
    for (a, ax) in v.iter().zip(&vx) {
        let r2 = a.norm_sqr();
        quartic += r2 * r2;
        sextic += r2 * r2 * r2;
        cubic += (a * a * a.conj() * ax.conj()).im;
        mom += a * ax.conj();
    }
    let w = 2.0 * PI / m as f64;

    let mut mass = 0.0;
    let mut first = 0.0;
    let mut second = 0.0;
    for (k, c) in state.modes() {
        let p = c.norm_sqr();
        mass += p;
        first += k as f64 * p;
        second += (k * k) as f64 * p;
    }
    Integrals {
        mass,
        im_v_vbx: -2.0 * PI * first,
        grad_sq: 2.0 * PI * second,
        quartic: quartic * w,
        sextic: sextic * w,
        cubic_deriv: cubic * w,
        momentum: mom * w,
    }
}

/// `m(v) = (1/2π) ∫ |v|² = Σ |c_n|²`.
pub fn mass(state: &SpectralState) -> f64 {
    state.coeffs().iter().map(|c| c.norm_sqr()).sum()
}

/// `ψ(v) = −(1/π) Im ∫ v v̄_x + (1/4π) ∫ |v|⁴ − m²`.
pub fn psi(state: &SpectralState) -> f64 {
    let q = integrals(state);
    psi_from(&q)
}

fn psi_from(q: &Integrals) -> f64 {
    -q.im_v_vbx / PI + q.quartic / (4.0 * PI) - q.mass * q.mass
}

/// Ungauged Hamiltonian `H(u) = Im ∫ u ū_x + ½ ∫ |u|⁴`.
pub fn hamiltonian_h(state: &SpectralState) -> f64 {
    let q = integrals(state);
    q.im_v_vbx + 0.5 * q.quartic
}

/// Ungauged energy `E(u) = ∫|u_x|² + (3/2) Im ∫ u² ū ū_x + ½ ∫ |u|⁶`.
pub fn energy_e(state: &SpectralState) -> f64 {
    let q = integrals(state);
    q.grad_sq + 1.5 * q.cubic_deriv + 0.5 * q.sextic
}

/// `ℋ(w) = Im ∫ w w̄_x − ½ ∫ |w|⁴ + 2π m²`.
pub fn gauged_h(state: &SpectralState) -> f64 {
    gauged_h_from(&integrals(state))
}

fn gauged_h_from(q: &Integrals) -> f64 {
    q.im_v_vbx - 0.5 * q.quartic + 2.0 * PI * q.mass * q.mass
}

/// `ℰ(w) = ∫|w_x|² − ½ Im ∫ w² w̄ w̄_x + (1/4π)(∫|w|²)(∫|w|⁴)`.
pub fn gauged_e(state: &SpectralState) -> f64 {
    gauged_e_from(&integrals(state))
}

fn gauged_e_from(q: &Integrals) -> f64 {
    q.grad_sq - 0.5 * q.cubic_deriv + (2.0 * PI * q.mass) * q.quartic / (4.0 * PI)
}

/// `𝓔(w) = ℰ(w) + 2m ℋ(w) − 2π m³`, the gauged form of `E(u)`.
pub fn full_energy(state: &SpectralState) -> f64 {
    let q = integrals(state);
    gauged_e_from(&q) + 2.0 * q.mass * gauged_h_from(&q) - 2.0 * PI * q.mass.powi(3)
}

/// The nonlinear energy weight `𝒩 = F + G + K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearParts {
    pub total: f64,
    pub f: f64,
    pub g: f64,
    pub k: f64,
}

pub fn nonlinear_parts(state: &SpectralState) -> NonlinearParts {
    nonlinear_from(&integrals(state))
}

fn nonlinear_from(q: &Integrals) -> NonlinearParts {
    let l2sq = 2.0 * PI * q.mass;
    let f = -0.5 * q.cubic_deriv;
    let g = -l2sq * q.quartic / (4.0 * PI);
    let k = l2sq * q.im_v_vbx / PI + l2sq.powi(3) / (4.0 * PI * PI);
    NonlinearParts {
        total: f + g + k,
        f,
        g,
        k,
    }
}

/// `X(v) = ∫ v v̄_x` by quadrature; equals `−2πi Σ n |c_n|²`.
pub fn momentum_x(state: &SpectralState) -> C64 {
    integrals(state).momentum
}

pub fn energy_report(state: &SpectralState) -> EnergyReport {
    let q = integrals(state);
    let nl = nonlinear_from(&q);
    let gh = gauged_h_from(&q);
    let ge = gauged_e_from(&q);
    EnergyReport {
        m: q.mass,
        psi: psi_from(&q),
        H: q.im_v_vbx + 0.5 * q.quartic,
        E: q.grad_sq + 1.5 * q.cubic_deriv + 0.5 * q.sextic,
        gauged_H: gh,
        gauged_E: ge,
        full_E: ge + 2.0 * q.mass * gh - 2.0 * PI * q.mass.powi(3),
        nonlinear_N: nl.total,
        F_part: nl.f,
        G_part: nl.g,
        K_part: nl.k,
        X_re: q.momentum.re,
        X_im: q.momentum.im,
    }
}

/// The six integrals pairing `a = v v̄ v̄_x` and `b = v v̄²` against the
/// out-of-band parts `A = P_N^⊥(v² v̄_x)`, `B = P_N^⊥(|v|⁴ v)`,
/// `C = P_N^⊥(|v|² v)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct DriftIntegrals {
    pub m: f64,
    pub a_a: C64,
    pub a_b: C64,
    pub a_c: C64,
    pub b_a: C64,
    pub b_b: C64,
    pub b_c: C64,
}

/// Grid for [`drift_integrals`]: the quintic product must be represented
/// exactly before projection, so `M ≥ 10N + 1`.
const DRIFT_PAD: usize = 5;

pub fn drift_integrals(state: &SpectralState) -> DriftIntegrals {
    let n = state.bandwidth();
    let mut grid = Grid::for_bandwidth(n, DRIFT_PAD);
    let size = grid.size();
    let mut v = vec![ZERO; size];
    let mut vx = vec![ZERO; size];
    grid.synthesize(state.coeffs(), &mut v);
    grid.synthesize(crate::spectral::derivative(state).coeffs(), &mut vx);

    let mut big_a: Vec<C64> = v.iter().zip(&vx).map(|(a, ax)| a * a * ax.conj()).collect();
    let mut big_b: Vec<C64> = v.iter().map(|a| a.norm_sqr() * a.norm_sqr() * a).collect();
    let mut big_c: Vec<C64> = v.iter().map(|a| a.norm_sqr() * a).collect();
    for buf in [&mut big_a, &mut big_b, &mut big_c] {
        high_pass(&mut grid, buf, n);
    }
    let a: Vec<C64> = v.iter().zip(&vx).map(|(x, xx)| x * x.conj() * xx.conj()).collect();
    let b: Vec<C64> = v.iter().map(|x| x * x.conj() * x.conj()).collect();
    let pair = |p: &[C64], q: &[C64]| integrate(&p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>());
    DriftIntegrals {
        m: mass(state),
        a_a: pair(&a, &big_a),
        a_b: pair(&a, &big_b),
        a_c: pair(&a, &big_c),
        b_a: pair(&b, &big_a),
        b_b: pair(&b, &big_b),
        b_c: pair(&b, &big_c),
    }
}

/// Removes all modes `|k| ≤ n` from grid samples.
fn high_pass(grid: &mut Grid, samples: &mut [C64], n: usize) {
    grid.forward_in_place(samples);
    for j in 0..samples.len() {
        if grid.wavenumber(j).unsigned_abs() as usize <= n {
            samples[j] = ZERO;
        }
    }
    grid.inverse_in_place(samples);
}

impl DriftIntegrals {
    /// `dℰ/dt` along the truncated flow.
    pub fn gauged_e_rate(&self) -> f64 {
        let m = self.m;
        -2.0 * self.a_a.im + self.a_b.re - 2.0 * m * self.a_c.re + 2.0 * m * self.b_a.re
            + m * self.b_b.im
            - 2.0 * m * m * self.b_c.im
    }

    /// `dℋ/dt` along the truncated flow.
    pub fn gauged_h_rate(&self) -> f64 {
        -2.0 * self.b_a.re - self.b_b.im + 2.0 * self.m * self.b_c.im
    }

    /// `d𝓔/dt = dℰ/dt + 2m dℋ/dt` (mass is conserved by the truncated flow).
    pub fn full_e_rate(&self) -> f64 {
        let m = self.m;
        -2.0 * self.a_a.im + self.a_b.re - 2.0 * m * self.a_c.re - 2.0 * m * self.b_a.re
            - m * self.b_b.im
            + 2.0 * m * m * self.b_c.im
    }
}

/// Exact `d𝓔(v^N)/dt` for the truncated gauged flow at the state `v^N`.
pub fn energy_drift_rate(state: &SpectralState) -> f64 {
    drift_integrals(state).full_e_rate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{project_complement, SpectralState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(n: usize, amp: f64, seed: u64) -> SpectralState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpectralState::from_fn(n, |k| {
            let s = amp / (1.0 + (k * k) as f64).sqrt();
            C64::new(rng.random_range(-s..s), rng.random_range(-s..s))
        })
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn mass_examples() {
        assert_eq!(mass(&SpectralState::single_mode(2, 1, C64::new(1.0, 0.0))), 1.0);
        assert_eq!(mass(&SpectralState::zeros(3)), 0.0);
        let mut s = SpectralState::zeros(1);
        s.set(0, C64::new(1.0, 0.0));
        s.set(1, C64::new(1.0, 0.0));
        assert_eq!(mass(&s), 2.0);
    }

    #[test]
    fn single_mode_closed_forms() {
        for (n, c) in [(3i64, C64::new(0.4, -0.3)), (-2, C64::new(0.1, 0.7)), (0, C64::new(0.8, 0.2))] {
            let s = SpectralState::single_mode(4, n, c);
            let a2 = c.norm_sqr();
            let nf = n as f64;
            assert!(close(psi(&s), 2.0 * nf * a2 - a2 * a2 / 2.0, 1e-13));
            assert!(close(hamiltonian_h(&s), -2.0 * PI * nf * a2 + PI * a2 * a2, 1e-13));
            assert!(close(
                energy_e(&s),
                2.0 * PI * nf * nf * a2 - 3.0 * PI * nf * a2 * a2 + PI * a2.powi(3),
                1e-13
            ));
        }
        let z = SpectralState::zeros(3);
        assert_eq!(psi(&z), 0.0);
        assert_eq!(hamiltonian_h(&z), 0.0);
        assert_eq!(energy_e(&z), 0.0);
        assert_eq!(gauged_h(&z), 0.0);
        assert_eq!(gauged_e(&z), 0.0);
        assert_eq!(full_energy(&z), 0.0);
    }

    #[test]
    fn nonlinear_constant_field() {
        let c = C64::new(0.3, 0.2);
        let s = SpectralState::single_mode(2, 0, c);
        let a2 = c.norm_sqr();
        let p = nonlinear_parts(&s);
        assert!(p.f.abs() < 1e-15);
        assert!(close(p.k, 2.0 * PI * a2.powi(3), 1e-13));
        assert!(close(p.g, -PI * a2.powi(3), 1e-13));

        let e1 = nonlinear_parts(&SpectralState::single_mode(3, 1, C64::new(1.0, 0.0)));
        assert!(close(e1.f, PI, 1e-13));
        assert!(close(e1.total, -2.0 * PI, 1e-13));
        let z = nonlinear_parts(&SpectralState::zeros(2));
        assert_eq!((z.total, z.f, z.g, z.k), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn momentum_examples() {
        let x = momentum_x(&SpectralState::single_mode(2, 1, C64::new(1.0, 0.0)));
        assert!((x - C64::new(0.0, -2.0 * PI)).norm() < 1e-13);

        let r = random_state(6, 1.0, 1);
        let mut s = SpectralState::zeros(3);
        s.set(2, C64::new(0.3, 0.1));
        s.set(-2, C64::new(-0.1, 0.3));
        assert!(momentum_x(&s).norm() < 1e-14);

        let spectral: f64 = r.modes().map(|(k, c)| k as f64 * c.norm_sqr()).sum();
        let x = momentum_x(&r);
        assert!((x - C64::new(0.0, -2.0 * PI * spectral)).norm() < 1e-12);
    }

    #[test]
    fn energy_ladder_and_decomposition() {
        for seed in 0..50 {
            let n = 1 + (seed as usize % 32);
            let s = random_state(n, 0.8, seed);
            let r = energy_report(&s);
            assert!(close(r.nonlinear_N, r.F_part + r.G_part + r.K_part, 1e-10));
            assert!(close(r.full_E, r.gauged_E + 2.0 * r.m * r.gauged_H - 2.0 * PI * r.m.powi(3), 1e-10));
            let grad: f64 = s.modes().map(|(k, c)| 2.0 * PI * (k * k) as f64 * c.norm_sqr()).sum();
            assert!(close(r.full_E, grad + r.nonlinear_N, 1e-10));
            assert!(r.X_re.abs() < 1e-10 * (1.0 + r.X_im.abs()));
            assert_eq!(r.full_E, full_energy(&s));
        }
    }

    #[test]
    fn drift_vanishes_for_low_band_data() {
        // modes |n| ≤ N/5: every product is already inside the band
        let mut s = SpectralState::zeros(10);
        s.set(0, C64::new(0.3, 0.1));
        s.set(1, C64::new(-0.2, 0.25));
        s.set(-2, C64::new(0.1, -0.05));
        s.set(2, C64::new(0.05, 0.05));
        assert!(energy_drift_rate(&s).abs() < 1e-13);
        assert!(energy_drift_rate(&SpectralState::single_mode(4, 0, C64::new(0.9, 0.0))).abs() < 1e-13);
    }

    #[test]
    fn drift_rate_is_directional_derivative() {
        // d𝓔/dt = D𝓔(v)·R with R the out-of-band residual of the vector field.
        let s = random_state(8, 0.7, 5);
        let m = mass(&s);
        let pa = crate::spectral::dealiased_product(
            &[
                crate::spectral::Factor::Plain(&s),
                crate::spectral::Factor::Plain(&s),
                crate::spectral::Factor::Conj(&crate::spectral::derivative(&s)),
            ],
            40,
        );
        let pb = crate::spectral::dealiased_product(
            &[
                crate::spectral::Factor::Plain(&s),
                crate::spectral::Factor::Plain(&s),
                crate::spectral::Factor::Plain(&s),
                crate::spectral::Factor::Conj(&s),
                crate::spectral::Factor::Conj(&s),
            ],
            40,
        );
        let pc = crate::spectral::dealiased_product(
            &[
                crate::spectral::Factor::Plain(&s),
                crate::spectral::Factor::Plain(&s),
                crate::spectral::Factor::Conj(&s),
            ],
            40,
        );
        let resid = project_complement(&pa, 8)
            .axpy(C64::new(0.0, -0.5), &project_complement(&pb, 8))
            .axpy(C64::new(0.0, m), &project_complement(&pc, 8));
        let base = crate::spectral::project(&s, 40);
        let h = 1e-6;
        let fd = (full_energy(&base.axpy(C64::new(h, 0.0), &resid))
            - full_energy(&base.axpy(C64::new(-h, 0.0), &resid)))
            / (2.0 * h);
        let rate = energy_drift_rate(&s);
        assert!((fd - rate).abs() < 1e-6 * rate.abs(), "fd {fd} rate {rate}");
    }
}
