//! Right-hand sides of the truncated gauged flow (FGDNLS), the gauged flow
//! with translation term (GDNLS+), and the ungauged derivative NLS, plus an
//! integrating-factor RK4 integrator and the Liouville divergence checks.
//!
//! All three flows share the linear part `c_n' = −in²c_n`, which the
//! integrator propagates exactly. Products are formed on a grid with
//! `M ≥ pad·(2N+1)` points; `pad ≥ 3` makes the quintic term alias-free.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{energy_report, EnergyReport};
use crate::spectral::{fl_norm, grid_size, l2_norm, Grid, SpectralState, C64, DEALIAS_PAD, I, ZERO};

/// Any `|c_n|` above this is treated as a blow-up.
pub const BLOWUP_AMPLITUDE: f64 = 1e6;

/// One of the seven terms of the FGDNLS vector field, in Fourier form:
/// `−ik²c_k`, `−P_N(v²v̄_x)`, `(i/2)P_N(|v|⁴v)`, `−2i(Σ n|c_n|²)c_k`,
/// `i m² c_k`, `−(i/2)(Σ quartic)c_k` and `−i m P_N(|v|²v)`.
/// Terms 4 to 6 together make up `−iψ c_k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FgdnlsTerm {
    Linear,
    DerivativeCubic,
    Quintic,
    PsiMomentum,
    PsiMassSquared,
    PsiQuartic,
    MassCubic,
}

impl FgdnlsTerm {
    pub const ALL: [FgdnlsTerm; 7] = [
        FgdnlsTerm::Linear,
        FgdnlsTerm::DerivativeCubic,
        FgdnlsTerm::Quintic,
        FgdnlsTerm::PsiMomentum,
        FgdnlsTerm::PsiMassSquared,
        FgdnlsTerm::PsiQuartic,
        FgdnlsTerm::MassCubic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Which vector field to integrate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhsKind {
    Fgdnls,
    /// FGDNLS plus `2m(w)w_x`.
    GdnlsPlus,
    /// `i u_xx + P_N((|u|²u)_x)`.
    Dnls,
    /// `i v_xx` only.
    LinearOnly,
    /// FGDNLS without the `−iψv` term.
    FgdnlsWithoutPsi,
    /// FGDNLS with `−ψv` in place of `−iψv`; not divergence-free.
    FgdnlsRealPsi,
    /// A single term of FGDNLS.
    Term(FgdnlsTerm),
}

/// Grid buffers for repeated right-hand-side evaluation at one bandwidth.
pub struct RhsWorkspace {
    kind: RhsKind,
    n: usize,
    grid: Grid,
    v: Vec<C64>,
    vx: Vec<C64>,
    spec: Vec<C64>,
}

impl RhsWorkspace {
    pub fn new(kind: RhsKind, bandwidth: usize, pad: usize) -> Result<Self> {
        if pad < DEALIAS_PAD {
            return Err(Error::invalid(format!(
                "pad factor {pad} cannot represent the quintic product; need at least {DEALIAS_PAD}"
            )));
        }
        let size = grid_size(bandwidth, pad);
        Ok(Self {
            kind,
            n: bandwidth,
            grid: Grid::new(size),
            v: vec![ZERO; size],
            vx: vec![ZERO; size],
            spec: vec![ZERO; 2 * bandwidth + 1],
        })
    }

    pub fn kind(&self) -> RhsKind {
        self.kind
    }

    pub fn bandwidth(&self) -> usize {
        self.n
    }

    /// The vector field without its linear part `−ik²c_k`.
    pub fn nonlinear(&mut self, c: &[C64], out: &mut [C64]) {
        let n = self.n as i64;
        let wavenumber = |i: usize| i as i64 - n;
        match self.kind {
            RhsKind::LinearOnly | RhsKind::Term(FgdnlsTerm::Linear) => out.fill(ZERO),
            RhsKind::Dnls => {
                self.grid.synthesize(c, &mut self.v);
                for z in self.v.iter_mut() {
                    *z *= z.norm_sqr();
                }
                self.grid.analyze(&mut self.v, out);
                for (i, o) in out.iter_mut().enumerate() {
                    *o *= C64::new(0.0, wavenumber(i) as f64);
                }
            }
            RhsKind::Term(term) => self.single_term(term, c, out),
            RhsKind::Fgdnls | RhsKind::GdnlsPlus | RhsKind::FgdnlsWithoutPsi | RhsKind::FgdnlsRealPsi => {
                let (mass, first) = spectral_moments(c, self.n);
                for (i, (s, &ci)) in self.spec.iter_mut().zip(c).enumerate() {
                    *s = C64::new(0.0, wavenumber(i) as f64) * ci;
                }
                self.grid.synthesize(c, &mut self.v);
                self.grid.synthesize(&self.spec, &mut self.vx);
                let mut quartic = 0.0;
                let half_i = C64::new(0.0, 0.5);
                let im = C64::new(0.0, mass);
                for (v, vx) in self.v.iter_mut().zip(&self.vx) {
                    let r2 = v.norm_sqr();
                    quartic += r2 * r2;
                    *v = -(*v * *v) * vx.conj() + (half_i * r2 * r2 - im * r2) * *v;
                }
                self.grid.analyze(&mut self.v, out);
                let quartic = 2.0 * PI * quartic / self.grid.size() as f64;
                if self.kind != RhsKind::FgdnlsWithoutPsi {
                    let psi = 2.0 * first + quartic / (4.0 * PI) - mass * mass;
                    let mpsi = if self.kind == RhsKind::FgdnlsRealPsi {
                        C64::new(-psi, 0.0)
                    } else {
                        C64::new(0.0, -psi)
                    };
                    for (o, &ci) in out.iter_mut().zip(c) {
                        *o += mpsi * ci;
                    }
                }
                if self.kind == RhsKind::GdnlsPlus {
                    for (i, (o, &ci)) in out.iter_mut().zip(c).enumerate() {
                        *o += C64::new(0.0, 2.0 * mass * wavenumber(i) as f64) * ci;
                    }
                }
            }
        }
    }

    fn single_term(&mut self, term: FgdnlsTerm, c: &[C64], out: &mut [C64]) {
        let n = self.n as i64;
        let (mass, first) = spectral_moments(c, self.n);
        let scalar = |out: &mut [C64], a: C64| {
            for (o, &ci) in out.iter_mut().zip(c) {
                *o = a * ci;
            }
        };
        match term {
            FgdnlsTerm::Linear => out.fill(ZERO),
            FgdnlsTerm::PsiMomentum => scalar(out, C64::new(0.0, -2.0 * first)),
            FgdnlsTerm::PsiMassSquared => scalar(out, C64::new(0.0, mass * mass)),
            FgdnlsTerm::PsiQuartic => {
                self.grid.synthesize(c, &mut self.v);
                let q = self.v.iter().map(|z| z.norm_sqr().powi(2)).sum::<f64>() / self.grid.size() as f64;
                scalar(out, C64::new(0.0, -0.5 * q));
            }
            FgdnlsTerm::DerivativeCubic => {
                for (i, (s, &ci)) in self.spec.iter_mut().zip(c).enumerate() {
                    *s = C64::new(0.0, (i as i64 - n) as f64) * ci;
                }
                self.grid.synthesize(c, &mut self.v);
                self.grid.synthesize(&self.spec, &mut self.vx);
                for (v, vx) in self.v.iter_mut().zip(&self.vx) {
                    *v = -(*v * *v) * vx.conj();
                }
                self.grid.analyze(&mut self.v, out);
            }
            FgdnlsTerm::Quintic | FgdnlsTerm::MassCubic => {
                self.grid.synthesize(c, &mut self.v);
                for v in self.v.iter_mut() {
                    let r2 = v.norm_sqr();
                    *v *= if term == FgdnlsTerm::Quintic {
                        C64::new(0.0, 0.5 * r2 * r2)
                    } else {
                        C64::new(0.0, -mass * r2)
                    };
                }
                self.grid.analyze(&mut self.v, out);
            }
        }
    }

    /// The full vector field.
    pub fn full(&mut self, c: &[C64], out: &mut [C64]) {
        self.nonlinear(c, out);
        let linear = !matches!(self.kind, RhsKind::Term(t) if t != FgdnlsTerm::Linear);
        if linear {
            let n = self.n as i64;
            for (i, (o, &ci)) in out.iter_mut().zip(c).enumerate() {
                let k = (i as i64 - n) as f64;
                *o += C64::new(0.0, -k * k) * ci;
            }
        }
    }

    pub fn evaluate(&mut self, state: &SpectralState) -> SpectralState {
        assert_eq!(state.bandwidth(), self.n, "state bandwidth differs from the workspace");
        let mut out = vec![ZERO; 2 * self.n + 1];
        self.full(state.coeffs(), &mut out);
        SpectralState::from_vec_unchecked(self.n, out)
    }
}

/// `(Σ|c_n|², Σ n|c_n|²)`.
fn spectral_moments(c: &[C64], n: usize) -> (f64, f64) {
    c.iter().enumerate().fold((0.0, 0.0), |(m, f), (i, z)| {
        let p = z.norm_sqr();
        (m + p, f + (i as f64 - n as f64) * p)
    })
}

pub fn rhs(state: &SpectralState, kind: RhsKind) -> SpectralState {
    RhsWorkspace::new(kind, state.bandwidth(), DEALIAS_PAD)
        .expect("default pad is valid")
        .evaluate(state)
}

/// `i v_xx − P_N(v²v̄_x) + (i/2)P_N(|v|⁴v) − iψ(v)v − i m(v)P_N(|v|²v)`.
pub fn fgdnls_rhs(state: &SpectralState) -> SpectralState {
    rhs(state, RhsKind::Fgdnls)
}

/// [`fgdnls_rhs`] plus `2m(w)w_x`.
pub fn gdnls_plus_rhs(state: &SpectralState) -> SpectralState {
    rhs(state, RhsKind::GdnlsPlus)
}

/// `i u_xx + P_N((|u|²u)_x)`.
pub fn dnls_rhs(state: &SpectralState) -> SpectralState {
    rhs(state, RhsKind::Dnls)
}

/// Integrating-factor RK4 (Lawson form) with a fixed step.
pub struct Integrator {
    ws: RhsWorkspace,
    dt: f64,
    full: Vec<C64>,
    half: Vec<C64>,
    k: [Vec<C64>; 4],
    tmp: Vec<C64>,
}

impl Integrator {
    pub fn new(kind: RhsKind, bandwidth: usize, pad: usize, dt: f64) -> Result<Self> {
        if !dt.is_finite() || dt == 0.0 {
            return Err(Error::invalid(format!("time step {dt} must be finite and nonzero")));
        }
        let ws = RhsWorkspace::new(kind, bandwidth, pad)?;
        let len = 2 * bandwidth + 1;
        let linear = !matches!(kind, RhsKind::Term(t) if t != FgdnlsTerm::Linear);
        let prop = |tau: f64| -> Vec<C64> {
            (0..len)
                .map(|i| {
                    let k = i as f64 - bandwidth as f64;
                    if linear { C64::from_polar(1.0, -k * k * tau) } else { C64::new(1.0, 0.0) }
                })
                .collect()
        };
        Ok(Self {
            full: prop(dt),
            half: prop(0.5 * dt),
            ws,
            dt,
            k: std::array::from_fn(|_| vec![ZERO; len]),
            tmp: vec![ZERO; len],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `c` by one step in place.
    pub fn advance(&mut self, c: &mut [C64]) {
        let dt = self.dt;
        let h = 0.5 * dt;
        let [k1, k2, k3, k4] = &mut self.k;
        self.ws.nonlinear(c, k1);
        for i in 0..c.len() {
            self.tmp[i] = self.half[i] * (c[i] + h * k1[i]);
        }
        self.ws.nonlinear(&self.tmp, k2);
        for i in 0..c.len() {
            self.tmp[i] = self.half[i] * c[i] + h * k2[i];
        }
        self.ws.nonlinear(&self.tmp, k3);
        for i in 0..c.len() {
            self.tmp[i] = self.full[i] * c[i] + dt * self.half[i] * k3[i];
        }
        self.ws.nonlinear(&self.tmp, k4);
        for i in 0..c.len() {
            c[i] = self.full[i] * c[i]
                + dt / 6.0 * (self.full[i] * k1[i] + 2.0 * self.half[i] * (k2[i] + k3[i]) + k4[i]);
        }
    }

    /// One step with the blow-up guard; `time` is only used in the diagnosis.
    pub fn advance_checked(&mut self, c: &mut [C64], time: f64) -> Result<()> {
        self.advance(c);
        check_amplitudes(c, self.ws.n, time)
    }
}

fn check_amplitudes(c: &[C64], n: usize, time: f64) -> Result<()> {
    let mut worst = (0usize, 0.0f64);
    for (i, z) in c.iter().enumerate() {
        let a = z.norm();
        if !a.is_finite() {
            worst = (i, f64::INFINITY);
            break;
        }
        if a > worst.1 {
            worst = (i, a);
        }
    }
    if worst.1 > BLOWUP_AMPLITUDE {
        return Err(Error::BlowUp {
            time,
            max_mode: worst.0 as i64 - n as i64,
            max_amplitude: worst.1,
        });
    }
    Ok(())
}

/// One IFRK4 step of size `dt` (negative steps run backward).
pub fn step(state: &SpectralState, kind: RhsKind, dt: f64) -> Result<SpectralState> {
    let mut it = Integrator::new(kind, state.bandwidth(), DEALIAS_PAD, dt)?;
    let mut c = state.coeffs().to_vec();
    it.advance_checked(&mut c, dt)?;
    Ok(SpectralState::from_vec_unchecked(state.bandwidth(), c))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorKind {
    #[default]
    Ifrk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dt: f64,
    /// Final time; negative values run the flow backward.
    pub t_final: f64,
    pub bandwidth: usize,
    pub record_every: usize,
    #[serde(default)]
    pub integrator: IntegratorKind,
    /// Grid size is `fast_size(pad_factor·(2N+1))`; 3 gives `M ≥ 6N+3`.
    #[serde(default = "default_pad")]
    pub pad_factor: usize,
}

fn default_pad() -> usize {
    DEALIAS_PAD
}

impl FlowConfig {
    pub fn new(bandwidth: usize, dt: f64, t_final: f64) -> Result<Self> {
        let c = Self {
            dt,
            t_final,
            bandwidth,
            record_every: 1,
            integrator: IntegratorKind::Ifrk4,
            pad_factor: DEALIAS_PAD,
        };
        c.validate()?;
        Ok(c)
    }

    /// A config at the step size of [`default_dt`].
    pub fn for_state(state: &SpectralState, t_final: f64) -> Result<Self> {
        Self::new(state.bandwidth(), default_dt(state), t_final)
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    /// Every violated constraint, reported together.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            errs.push(format!("dt = {} must be positive and finite", self.dt));
        }
        if !self.t_final.is_finite() {
            errs.push(format!("t_final = {} must be finite", self.t_final));
        }
        if self.record_every == 0 {
            errs.push("record_every must be at least 1".to_string());
        }
        if self.pad_factor < DEALIAS_PAD {
            errs.push(format!("pad_factor = {} must be at least {DEALIAS_PAD}", self.pad_factor));
        }
        if errs.is_empty() { Ok(()) } else { Err(Error::Config(errs)) }
    }

    /// Number of steps and the signed step that lands exactly on `t_final`.
    pub fn schedule(&self) -> (usize, f64) {
        let steps = (self.t_final.abs() / self.dt - 1e-9).ceil().max(0.0) as usize;
        if steps == 0 {
            return (0, 0.0);
        }
        (steps, self.t_final / steps as f64)
    }

    /// Warning text when `dt` exceeds [`stable_dt`] for this state.
    pub fn stability_warning(&self, state: &SpectralState) -> Option<String> {
        let limit = stable_dt(state);
        (self.dt > limit).then(|| {
            format!("dt = {:e} exceeds the heuristic stability limit {:e} for this state", self.dt, limit)
        })
    }
}

/// `min(1e−3, 0.1/(1+‖v‖²_{FL^{1,∞}}), stable_dt(v))`.
pub fn default_dt(state: &SpectralState) -> f64 {
    let fl = fl_norm(state, 1.0, f64::INFINITY).expect("r = ∞ is valid");
    (1e-3f64).min(0.1 / (1.0 + fl * fl)).min(stable_dt(state))
}

/// Step limit from the size of the nonlinear terms: with `S = Σ|c_n| ≥ ‖v‖_∞`
/// the linearised nonlinearity has rate at most about `2N S² + S⁴ + m S²`.
pub fn stable_dt(state: &SpectralState) -> f64 {
    let s: f64 = state.coeffs().iter().map(|c| c.norm()).sum();
    let m: f64 = state.coeffs().iter().map(|c| c.norm_sqr()).sum();
    let rate = 2.0 * state.bandwidth() as f64 * s * s + s.powi(4) + m * s * s;
    1.0 / (1.0 + rate)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralState>,
    pub reports: Vec<EnergyReport>,
}

impl Trajectory {
    pub const CSV_HEADER: [&'static str; 10] =
        ["t", "m", "H", "E", "gauged_H", "gauged_E", "full_E", "nonlinear_N", "fl_norm", "l2"];

    pub fn last(&self) -> &SpectralState {
        self.states.last().expect("trajectory has at least the initial state")
    }

    fn push(&mut self, t: f64, state: SpectralState) {
        self.reports.push(energy_report(&state));
        self.times.push(t);
        self.states.push(state);
    }

    /// One row per record; `fl_norm` is `FL^{2/3−0.01, 3}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::CSV_HEADER)?;
        for ((t, s), r) in self.times.iter().zip(&self.states).zip(&self.reports) {
            let fl = fl_norm(s, 2.0 / 3.0 - 0.01, 3.0)?;
            let row = [*t, r.m, r.H, r.E, r.gauged_H, r.gauged_E, r.full_E, r.nonlinear_N, fl, l2_norm(s)];
            out.write_record(row.iter().map(|x| format!("{x:.17e}")))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_snapshots<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.states.len() as u64).to_le_bytes())?;
        for (t, s) in self.times.iter().zip(&self.states) {
            w.write_all(&t.to_le_bytes())?;
            s.write_binary(&mut w)?;
        }
        Ok(())
    }
}

/// Advances to `config.t_final`, recording every `record_every` steps and at the end.
pub fn flow(state: &SpectralState, kind: RhsKind, config: &FlowConfig) -> Result<Trajectory> {
    config.validate()?;
    if state.bandwidth() != config.bandwidth {
        return Err(Error::invalid(format!(
            "state bandwidth {} differs from the configured {}",
            state.bandwidth(),
            config.bandwidth
        )));
    }
    if !state.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut traj = Trajectory::default();
    traj.push(0.0, state.clone());
    let (steps, h) = config.schedule();
    if steps == 0 {
        return Ok(traj);
    }
    let mut it = Integrator::new(kind, state.bandwidth(), config.pad_factor, h)?;
    let mut c = state.coeffs().to_vec();
    for j in 1..=steps {
        let t = j as f64 * h;
        it.advance_checked(&mut c, t)?;
        if j % config.record_every == 0 || j == steps {
            traj.push(t, SpectralState::from_vec_unchecked(state.bandwidth(), c.clone()));
        }
    }
    Ok(traj)
}

/// The state at `t_final` without intermediate records.
pub fn evolve(state: &SpectralState, kind: RhsKind, dt: f64, t_final: f64) -> Result<SpectralState> {
    evolve_padded(state, kind, dt, t_final, DEALIAS_PAD)
}

pub fn evolve_padded(state: &SpectralState, kind: RhsKind, dt: f64, t_final: f64, pad: usize) -> Result<SpectralState> {
    let config = FlowConfig { pad_factor: pad, ..FlowConfig::new(state.bandwidth(), dt, t_final)? };
    let (steps, h) = config.schedule();
    if steps == 0 {
        return Ok(state.clone());
    }
    let mut it = Integrator::new(kind, state.bandwidth(), pad, h)?;
    let mut c = state.coeffs().to_vec();
    for j in 1..=steps {
        it.advance_checked(&mut c, j as f64 * h)?;
    }
    Ok(SpectralState::from_vec_unchecked(state.bandwidth(), c))
}

/// Flows forward to `t_final` and back; returns the `max |Δc_n|` error.
pub fn round_trip_error(state: &SpectralState, kind: RhsKind, dt: f64, t_final: f64) -> Result<f64> {
    let there = evolve(state, kind, dt, t_final)?;
    let back = evolve(&there, kind, dt, -t_final)?;
    Ok(back.max_abs_diff(state))
}

/// Central-difference divergence of a vector field.
#[derive(Clone, Debug)]
pub struct FdDivergence {
    pub trace: f64,
    /// Frobenius norm of the real `(4N+2)×(4N+2)` Jacobian.
    pub frobenius: f64,
    /// `∂Re F_k/∂a_k + ∂Im F_k/∂b_k`, indexed by `k + N`.
    pub per_mode: Vec<f64>,
}

pub fn divergence_fd(state: &SpectralState, kind: RhsKind, h: f64) -> Result<FdDivergence> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step h = {h} must be positive")));
    }
    let n = state.bandwidth();
    let len = 2 * n + 1;
    let mut ws = RhsWorkspace::new(kind, n, DEALIAS_PAD)?;
    let mut plus = vec![ZERO; len];
    let mut minus = vec![ZERO; len];
    let mut c = state.coeffs().to_vec();
    let mut frob = 0.0;
    let mut per_mode = vec![0.0; len];
    for j in 0..len {
        for dir in [C64::new(1.0, 0.0), I] {
            let orig = c[j];
            c[j] = orig + h * dir;
            ws.full(&c, &mut plus);
            c[j] = orig - h * dir;
            ws.full(&c, &mut minus);
            c[j] = orig;
            for i in 0..len {
                let d = (plus[i] - minus[i]) / (2.0 * h);
                frob += d.re * d.re + d.im * d.im;
                if i == j {
                    // ∂Re F_j/∂a_j for the real direction, ∂Im F_j/∂b_j for the imaginary one.
                    per_mode[j] += if dir == I { d.im } else { d.re };
                }
            }
        }
    }
    Ok(FdDivergence {
        trace: per_mode.iter().sum(),
        frobenius: frob.sqrt(),
        per_mode,
    })
}

/// `Σ_k ∂Re F_k/∂a_k + ∂Im F_k/∂b_k` of the FGDNLS field by central differences.
pub fn divergence_trace_fd(state: &SpectralState, h: f64) -> Result<f64> {
    Ok(divergence_fd(state, RhsKind::Fgdnls, h)?.trace)
}

/// Wirtinger-derivative divergence of FGDNLS, term by term.
#[derive(Clone, Debug)]
pub struct AnalyticDivergence {
    /// `∂F_k/∂c_k` for each term (outer index) and mode (inner index `k + N`).
    pub wirtinger: Vec<Vec<C64>>,
    /// `2 Re ∂F_k/∂c_k`, same layout.
    pub per_mode: Vec<Vec<f64>>,
    /// Sum over modes of each term's contribution.
    pub per_term: [f64; 7],
    pub total: f64,
    /// Largest single contribution, useful as a scale for `total`.
    pub scale: f64,
}

/// For a holomorphic-in-`(c, c̄)` field, `∂Re F/∂a + ∂Im F/∂b = 2 Re ∂F/∂c`.
pub fn divergence_trace_analytic(state: &SpectralState) -> AnalyticDivergence {
    let n = state.bandwidth();
    let c = state.coeffs();
    let (mass, first) = spectral_moments(c, n);
    let cubic = crate::spectral::dealiased_product(
        &[
            crate::spectral::Factor::Plain(state),
            crate::spectral::Factor::Plain(state),
            crate::spectral::Factor::Conj(state),
        ],
        n,
    );
    let quartic: f64 = c.iter().zip(cubic.coeffs()).map(|(a, b)| (a.conj() * b).re).sum();

    let mut wirtinger = vec![vec![ZERO; c.len()]; 7];
    for (i, (&ck, &cc)) in c.iter().zip(cubic.coeffs()).enumerate() {
        let k = i as f64 - n as f64;
        let p = ck.norm_sqr();
        wirtinger[0][i] = C64::new(0.0, -k * k);
        // n1 = k or n2 = k in Σ n3 c_{n1} c_{n2} c̄_{n3}.
        wirtinger[1][i] = C64::new(0.0, 2.0 * first);
        // three holomorphic slots in the quintic sum.
        wirtinger[2][i] = C64::new(0.0, 1.5 * quartic);
        wirtinger[3][i] = C64::new(0.0, -2.0 * (k * p + first));
        wirtinger[4][i] = C64::new(0.0, 2.0 * mass * p + mass * mass);
        wirtinger[5][i] = C64::new(0.0, -0.5 * quartic) - I * ck * cc.conj();
        wirtinger[6][i] = -I * cc * ck.conj() - C64::new(0.0, 2.0 * mass * mass);
    }
    let per_mode: Vec<Vec<f64>> = wirtinger.iter().map(|t| t.iter().map(|z| 2.0 * z.re).collect()).collect();
    let mut per_term = [0.0; 7];
    for (p, t) in per_term.iter_mut().zip(&per_mode) {
        *p = t.iter().sum();
    }
    let scale = per_mode.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
    AnalyticDivergence {
        total: per_term.iter().sum(),
        wirtinger,
        per_mode,
        per_term,
        scale,
    }
}

/// Determinant of a dense square matrix by partial-pivot elimination.
pub fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty range");
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    det
}

/// Real Jacobian of the time-`t` flow map by central differences of size `eps`.
pub fn flow_jacobian(state: &SpectralState, kind: RhsKind, dt: f64, t: f64, eps: f64) -> Result<Vec<Vec<f64>>> {
    let len = 2 * state.bandwidth() + 1;
    let mut jac = vec![vec![0.0; 2 * len]; 2 * len];
    for j in 0..2 * len {
        let dir = if j % 2 == 0 { C64::new(eps, 0.0) } else { C64::new(0.0, eps) };
        let mut p = state.clone();
        let mut m = state.clone();
        p.coeffs_mut()[j / 2] += dir;
        m.coeffs_mut()[j / 2] -= dir;
        let fp = evolve(&p, kind, dt, t)?;
        let fm = evolve(&m, kind, dt, t)?;
        for i in 0..len {
            let d = (fp.coeffs()[i] - fm.coeffs()[i]) / (2.0 * eps);
            jac[2 * i][j] = d.re;
            jac[2 * i + 1][j] = d.im;
        }
    }
    Ok(jac)
}
