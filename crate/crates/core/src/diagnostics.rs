//! Energy-type functionals, their pathwise balance residuals, the weak-form
//! residual against trigonometric test fields and increment scaling.
//!
//! `∇log ρ` is never formed: every occurrence goes through `2∇√ρ`.
//! Stochastic integrals use the pre-kick state of each step (left endpoint),
//! and the Itô correction uses the density of the kick, so the stochastic
//! part of the energy residual is `Σ ½∫ρ|f|² (ΔW² − dt)`.

use serde::Serialize;

use crate::dynamics::{
    pressure, velocity, viscous_dissipation, weighted_face_dissipation, FluidState, NoiseModel,
    SimParams,
};
use crate::error::{Error, Result};
use crate::fields::{gradient, grad_tensor, norm, Grid, NormSpec, ScalarField, VectorField};
use crate::integrator::{StepOutput, Trajectory};

/// Per-step diagnostics; serialises to one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub energy: f64,
    pub bd_enstrophy: f64,
    pub mv_energy: f64,
    pub visc_dissipation: f64,
    pub bd_dissipation: f64,
    pub asym_dissipation: f64,
    pub ito_correction: f64,
    pub stoch_integral_energy: f64,
    pub stoch_integral_bd: f64,
    pub clip_mass: f64,
}

/// Per-step quantities beyond [`DiagnosticsRecord`]. The `*_integral` fields
/// are trapezoid integrals over the step, closed with the pre-kick state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub t: f64,
    pub dt: f64,
    pub dw: f64,
    pub visc_integral: f64,
    /// Pressure plus antisymmetric dissipation of the BD balance.
    pub bd_integral: f64,
    /// `∫ρ|u|^δ|∇u|²` over the step.
    pub mv_dissipation_integral: f64,
    /// Pressure term of the M-V inequality over the step.
    pub mv_pressure_integral: f64,
    /// `(1+δ)/2 ∫ρ|f|²|u|^δ` at the pre-kick state.
    pub mv_ito: f64,
    /// `∫ρ f·u|u|^δ` at the pre-kick state.
    pub mv_stoch_integrand: f64,
    /// Energy-class functionals after the step.
    pub moments: Moments,
    /// Cumulative momentum ledger of the vacuum fix.
    pub clip_momentum: Vec<f64>,
}

/// `∫ ½ρ|u|² + ρ^γ/(γ−1)`, with `ρ|u|² = |m|²ρ/(ρ²+ε²)`.
pub fn energy(state: &FluidState, params: &SimParams) -> f64 {
    let eps2 = params.eps_vac() * params.eps_vac();
    let p = pressure(&state.rho, params.gamma());
    let inv = 1.0 / (params.gamma() - 1.0);
    let s: f64 = (0..state.grid().len())
        .map(|j| 0.5 * kinetic_density(state, j, eps2) + p.values()[j] * inv)
        .sum();
    s * state.grid().cell_volume()
}

#[inline]
fn kinetic_density(state: &FluidState, j: usize, eps2: f64) -> f64 {
    let r = state.rho.values()[j].max(0.0);
    state.m.norm_sq_at(j) * r / (r * r + eps2)
}

/// `∫ ½|√ρu + 2∇√ρ|² + ρ^γ/(γ−1)`; coincides bit-for-bit with [`energy`]
/// when `ρ` is constant.
pub fn bd_enstrophy(state: &FluidState, params: &SimParams) -> f64 {
    let eps2 = params.eps_vac() * params.eps_vac();
    let g = *state.grid();
    let theta = state.rho.map(|r| r.max(0.0).sqrt());
    let grad = gradient(&theta);
    let u = velocity(state, params.eps_vac());
    let p = pressure(&state.rho, params.gamma());
    let inv = 1.0 / (params.gamma() - 1.0);
    let mut s = 0.0;
    for j in 0..g.len() {
        let mut cross = 0.0;
        for a in 0..g.dim() {
            cross += theta.values()[j] * u.component(a)[j] * grad.component(a)[j];
        }
        let kin = kinetic_density(state, j, eps2) + 4.0 * cross + 4.0 * grad.norm_sq_at(j);
        s += 0.5 * kin + p.values()[j] * inv;
    }
    s * g.cell_volume()
}

/// `(2+δ)^{-1} ∫ρ|u|^{2+δ}`.
pub fn mv_energy(state: &FluidState, params: &SimParams) -> f64 {
    let u = velocity(state, params.eps_vac());
    let k = 2.0 + params.delta();
    let s: f64 = state
        .rho
        .values()
        .iter()
        .enumerate()
        .map(|(j, r)| r.max(0.0) * u.norm_sq_at(j).powf(0.5 * k))
        .sum();
    s * state.grid().cell_volume() / k
}

/// `(4/γ)∫|∇ρ^{γ/2}|²`, equal to `∫∇log ρ·∇ρ^γ` for smooth positive `ρ`.
pub fn bd_pressure_dissipation(rho: &ScalarField, gamma: f64) -> f64 {
    let grad = gradient(&rho.map(|r| r.max(0.0).powf(0.5 * gamma)));
    let g = *rho.grid();
    4.0 / gamma * (0..g.len()).map(|j| grad.norm_sq_at(j)).sum::<f64>() * g.cell_volume()
}

/// `2∫ρ|𝔸u|²` with `𝔸u = ½(∇u − ∇uᵀ)`; vanishes identically in one dimension.
pub fn asym_dissipation(rho: &ScalarField, u: &VectorField) -> f64 {
    let g = *rho.grid();
    let d = g.dim();
    if d == 1 {
        return 0.0;
    }
    let t = grad_tensor(u);
    let mut s = 0.0;
    for j in 0..g.len() {
        let mut a2 = 0.0;
        for i in 0..d {
            for k in 0..d {
                let a = 0.5 * (t.entry(i, k)[j] - t.entry(k, i)[j]);
                a2 += a * a;
            }
        }
        s += rho.values()[j].max(0.0) * a2;
    }
    2.0 * s * g.cell_volume()
}

/// Face-based `∫ρ|u|^δ|∇u|²`, sharing the viscous face stencil.
pub fn mv_dissipation(rho: &ScalarField, u: &VectorField, delta: f64) -> f64 {
    let w: Vec<f64> = (0..rho.grid().len()).map(|j| u.norm_sq_at(j).powf(0.5 * delta)).collect();
    weighted_face_dissipation(rho, u, |j, k| 0.5 * (w[j] + w[k]))
}

/// `(∫(ρ^{2γ−1−δ/2})^{2/(2−δ)})^{(2−δ)/2}`, the pressure integrand of the M-V inequality.
pub fn mv_pressure_term(rho: &ScalarField, gamma: f64, delta: f64) -> f64 {
    let base = 2.0 * gamma - 1.0 - 0.5 * delta;
    let q = 2.0 / (2.0 - delta);
    rho.map(|r| r.max(0.0).powf(base * q)).integral().powf(1.0 / q)
}

/// `½∫ρ|f|²`.
pub fn ito_correction(rho: &ScalarField, noise: &NoiseModel) -> f64 {
    if !noise.is_active() {
        return 0.0;
    }
    let f = noise.force();
    let s: f64 = rho.values().iter().enumerate().map(|(j, r)| r.max(0.0) * f.norm_sq_at(j)).sum();
    0.5 * s * rho.grid().cell_volume()
}

/// Functionals whose moments the ensemble driver estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    /// `∫ρ|u|²`.
    pub kinetic: f64,
    /// `∫ρ|∇log ρ|²` as `4∫|∇√ρ|²`.
    pub fisher: f64,
    /// `∫ρ^γ`.
    pub pressure_l1: f64,
    /// `∫(ρ^γ)^{5/3}`.
    pub pressure_pow53: f64,
    /// `‖ρ^γ‖_{L³}`.
    pub pressure_l3: f64,
}

pub fn moments(state: &FluidState, params: &SimParams) -> Moments {
    let g = *state.grid();
    let vol = g.cell_volume();
    let eps2 = params.eps_vac() * params.eps_vac();
    let gamma = params.gamma();
    let (mut k, mut p1, mut p53, mut p3) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..g.len() {
        k += kinetic_density(state, j, eps2);
        let pj = state.rho.values()[j].max(0.0).powf(gamma);
        p1 += pj;
        p53 += pj.powf(5.0 / 3.0);
        p3 += pj * pj * pj;
    }
    Moments {
        kinetic: k * vol,
        fisher: crate::dynamics::fisher_information(&state.rho),
        pressure_l1: p1 * vol,
        pressure_pow53: p53 * vol,
        pressure_l3: (p3 * vol).cbrt(),
    }
}

#[derive(Debug, Clone, Copy)]
struct Instant {
    visc: f64,
    bd_diss: f64,
    asym: f64,
    mv_diss: f64,
    mv_pressure: f64,
}

fn instant(rho: &ScalarField, u: &VectorField, params: &SimParams) -> Instant {
    Instant {
        visc: viscous_dissipation(rho, u),
        bd_diss: bd_pressure_dissipation(rho, params.gamma()),
        asym: asym_dissipation(rho, u),
        mv_diss: mv_dissipation(rho, u, params.delta()),
        mv_pressure: mv_pressure_term(rho, params.gamma(), params.delta()),
    }
}

/// Builds records step by step while the integrator runs.
pub(crate) struct Recorder {
    params: SimParams,
    noise: NoiseModel,
    prev: Instant,
    stoch_energy: f64,
    stoch_bd: f64,
    clip_mass: f64,
}

impl Recorder {
    pub(crate) fn new(state: &FluidState, params: &SimParams, noise: &NoiseModel) -> Self {
        let u = velocity(state, params.eps_vac());
        Self {
            params: *params,
            noise: noise.clone(),
            prev: instant(&state.rho, &u, params),
            stoch_energy: 0.0,
            stoch_bd: 0.0,
            clip_mass: 0.0,
        }
    }

    fn record(&self, t: f64, state: &FluidState, inst: &Instant) -> DiagnosticsRecord {
        DiagnosticsRecord {
            t,
            mass: state.mass(),
            momentum: state.momentum(),
            energy: energy(state, &self.params),
            bd_enstrophy: bd_enstrophy(state, &self.params),
            mv_energy: mv_energy(state, &self.params),
            visc_dissipation: inst.visc,
            bd_dissipation: inst.bd_diss,
            asym_dissipation: inst.asym,
            ito_correction: ito_correction(&state.rho, &self.noise),
            stoch_integral_energy: self.stoch_energy,
            stoch_integral_bd: self.stoch_bd,
            clip_mass: self.clip_mass,
        }
    }

    pub(crate) fn initial_record(&self, state: &FluidState) -> DiagnosticsRecord {
        self.record(0.0, state, &self.prev)
    }

    pub(crate) fn advance(
        &mut self,
        t: f64,
        dt: f64,
        dw: f64,
        out: &StepOutput,
        clip_momentum: Vec<f64>,
    ) -> (DiagnosticsRecord, StepLog) {
        let p = &self.params;
        let g = *out.state.grid();
        let vol = g.cell_volume();
        let rho = &out.state.rho;
        let pre = FluidState { rho: rho.clone(), m: out.pre_kick_momentum.clone() };
        let u_pre = velocity(&pre, p.eps_vac());
        let pre_inst = instant(rho, &u_pre, p);

        let (mut mv_ito, mut mv_stoch) = (0.0, 0.0);
        if self.noise.is_active() {
            let f = self.noise.force();
            let grad = gradient(&rho.map(|r| r.max(0.0).sqrt()));
            let (mut se, mut sb) = (0.0, 0.0);
            for j in 0..g.len() {
                let r = rho.values()[j].max(0.0);
                let sr = r.sqrt();
                let speed = u_pre.norm_sq_at(j).sqrt();
                let wd = speed.powf(p.delta());
                let mut uf = 0.0;
                let mut gf = 0.0;
                for a in 0..g.dim() {
                    uf += u_pre.component(a)[j] * f.component(a)[j];
                    gf += grad.component(a)[j] * f.component(a)[j];
                }
                se += r * uf;
                sb += r * uf + 2.0 * sr * gf;
                mv_stoch += r * uf * wd;
                mv_ito += r * f.norm_sq_at(j) * wd;
            }
            self.stoch_energy += se * vol * dw;
            self.stoch_bd += sb * vol * dw;
            mv_stoch *= vol;
            mv_ito *= 0.5 * (1.0 + p.delta()) * vol;
        }
        self.clip_mass += out.clip_mass;

        let u = velocity(&out.state, p.eps_vac());
        let post = instant(rho, &u, p);
        let prev = self.prev;
        let log = StepLog {
            t,
            dt,
            dw,
            visc_integral: 0.5 * (prev.visc + pre_inst.visc) * dt,
            bd_integral: 0.5 * (prev.bd_diss + prev.asym + pre_inst.bd_diss + pre_inst.asym) * dt,
            mv_dissipation_integral: 0.5 * (prev.mv_diss + pre_inst.mv_diss) * dt,
            mv_pressure_integral: 0.5 * (prev.mv_pressure + pre_inst.mv_pressure) * dt,
            mv_ito,
            mv_stoch_integrand: mv_stoch,
            moments: moments(&out.state, p),
            clip_momentum,
        };
        let record = self.record(t, &out.state, &post);
        self.prev = post;
        (record, log)
    }
}

/// A residual time series aligned with the trajectory's records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub max_abs: f64,
}

impl ResidualSeries {
    fn from_values(times: Vec<f64>, values: Vec<f64>) -> Self {
        let max_abs = values.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        Self { times, values, max_abs }
    }

    pub fn last(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

fn balance_residual(
    traj: &Trajectory,
    functional: impl Fn(&DiagnosticsRecord) -> f64,
    dissipation: impl Fn(&StepLog) -> f64,
    stoch: impl Fn(&DiagnosticsRecord) -> f64,
) -> ResidualSeries {
    let recs = &traj.records;
    let e0 = functional(&recs[0]);
    let (mut diss, mut ito) = (0.0, 0.0);
    let mut values = vec![0.0];
    for (k, log) in traj.logs.iter().enumerate() {
        let r = &recs[k + 1];
        diss += dissipation(log);
        ito += r.ito_correction * log.dt;
        values.push(functional(r) + diss - e0 - ito - stoch(r));
    }
    ResidualSeries::from_values(recs.iter().map(|r| r.t).collect(), values)
}

/// `E(t) + ∫∫ρ|∇u|² − E(0) − ∫½∫ρ|f|² − ∫(∫ρu·f)dW` along the trajectory.
pub fn energy_balance_residual(traj: &Trajectory) -> ResidualSeries {
    balance_residual(traj, |r| r.energy, |l| l.visc_integral, |r| r.stoch_integral_energy)
}

/// The BD balance with pressure dissipation `(4/γ)∫|∇ρ^{γ/2}|²` and `2∫ρ|𝔸u|²`.
pub fn bd_balance_residual(traj: &Trajectory) -> ResidualSeries {
    balance_residual(traj, |r| r.bd_enstrophy, |l| l.bd_integral, |r| r.stoch_integral_bd)
}

/// Both sides of the M-V inequality at each save time, split so that the
/// constants `C`, `C_δ` can be chosen afterwards.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MvReport {
    pub times: Vec<f64>,
    /// `mv_energy(t) + c_δ ∫∫ρ|u|^δ|∇u|²` with `c_δ = (1−δ)/2`.
    pub lhs: Vec<f64>,
    /// `mv_energy(0)` plus the Itô term and the stochastic integral.
    pub rhs_base: Vec<f64>,
    /// Time integral of the pressure term.
    pub pressure: Vec<f64>,
    pub c_delta_small: f64,
    /// Smallest `C_δ` with `C = 0`.
    pub min_c_delta: f64,
    /// Smallest `C` with `C_δ = 0`.
    pub min_c: f64,
    /// `(3+δ)/(2(1−δ)) · (sup_t ∫ρ|u|²)^{δ/2}`, the constant produced by Young's inequality.
    pub young_c_delta: f64,
    /// Whether the inequality holds with `C = 0` and `young_c_delta`.
    pub holds: bool,
}

impl MvReport {
    /// Largest violation `LHS − RHS` (non-positive when the inequality holds).
    pub fn worst_gap(&self, c: f64, c_delta: f64) -> f64 {
        (0..self.times.len())
            .map(|i| self.lhs[i] - self.rhs(i, c, c_delta))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn rhs(&self, i: usize, c: f64, c_delta: f64) -> f64 {
        self.rhs_base[i] + c * self.times[i] + c_delta * self.pressure[i]
    }

    pub fn holds_with(&self, c: f64, c_delta: f64) -> bool {
        let scale = self.lhs.iter().chain(&self.rhs_base).fold(1.0, |m: f64, v| m.max(v.abs()));
        self.worst_gap(c, c_delta) <= 1e-12 * scale
    }
}

pub fn mv_inequality_check(traj: &Trajectory) -> MvReport {
    let p = &traj.params;
    let c_small = 0.5 * (1.0 - p.delta());
    let mv0 = traj.records[0].mv_energy;
    let mut kin_sup = moments(&traj.states[0], p).kinetic;

    let mut cum = vec![(0.0, 0.0, 0.0)];
    let (mut diss, mut pres, mut extra) = (0.0, 0.0, 0.0);
    for log in &traj.logs {
        diss += log.mv_dissipation_integral;
        pres += log.mv_pressure_integral;
        extra += log.mv_ito * log.dt + log.mv_stoch_integrand * log.dw;
        kin_sup = kin_sup.max(log.moments.kinetic);
        cum.push((diss, pres, extra));
    }

    let mut report = MvReport {
        times: Vec::new(),
        lhs: Vec::new(),
        rhs_base: Vec::new(),
        pressure: Vec::new(),
        c_delta_small: c_small,
        min_c_delta: 0.0,
        min_c: 0.0,
        young_c_delta: (3.0 + p.delta()) / (2.0 * (1.0 - p.delta())) * kin_sup.powf(0.5 * p.delta()),
        holds: true,
    };
    for &k in &traj.save_steps {
        let (d, pr, ex) = cum[k];
        let t = traj.records[k].t;
        let lhs = traj.records[k].mv_energy + c_small * d;
        let base = mv0 + ex;
        report.times.push(t);
        report.lhs.push(lhs);
        report.rhs_base.push(base);
        report.pressure.push(pr);
        let excess = lhs - base;
        if excess > 0.0 {
            report.min_c_delta = report.min_c_delta.max(if pr > 0.0 { excess / pr } else { f64::INFINITY });
            report.min_c = report.min_c.max(if t > 0.0 { excess / t } else { f64::INFINITY });
        }
    }
    report.holds = report.holds_with(0.0, report.young_c_delta);
    report
}

/// One trigonometric test pair `(φ, ψ = φ e_a)` with exact derivatives at the nodes.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub label: String,
    pub phi: ScalarField,
    pub grad_phi: VectorField,
    pub psi: VectorField,
    pub div_psi: ScalarField,
    pub lap_psi: VectorField,
    direction: usize,
}

impl TestFunction {
    /// `φ = sin(κ·x + θ)` with `κ = 2π k / L`.
    pub fn trig(grid: Grid, k: &[i32], phase: f64, direction: usize) -> Result<Self> {
        let d = grid.dim();
        if k.len() != d || direction >= d {
            return Err(Error::InvalidParameter(format!(
                "test function needs {d} wavenumbers and a direction below {d}"
            )));
        }
        let scale = 2.0 * std::f64::consts::PI / grid.length();
        let kappa: Vec<f64> = k.iter().map(|&ki| f64::from(ki) * scale).collect();
        let k2: f64 = kappa.iter().map(|v| v * v).sum();
        let arg = |x: &[f64; 3]| (0..d).map(|a| kappa[a] * x[a]).sum::<f64>() + phase;
        let phi = ScalarField::from_fn(grid, |x| arg(x).sin());
        let grad_phi = VectorField::from_fn(grid, |x, a| kappa[a] * arg(x).cos());
        let psi = VectorField::from_fn(grid, |x, a| if a == direction { arg(x).sin() } else { 0.0 });
        let div_psi = ScalarField::from_fn(grid, |x| kappa[direction] * arg(x).cos());
        let lap_psi =
            VectorField::from_fn(grid, |x, a| if a == direction { -k2 * arg(x).sin() } else { 0.0 });
        let label = format!("k={k:?},phase={phase:.3},dir={direction}");
        Ok(Self { label, phi, grad_phi, psi, div_psi, lap_psi, direction })
    }

    /// `∂_k ψ_i` at node `j`.
    pub fn grad_psi(&self, i: usize, k: usize, j: usize) -> f64 {
        if i == self.direction {
            self.grad_phi.component(k)[j]
        } else {
            0.0
        }
    }

    pub fn is_constant(&self) -> bool {
        self.grad_phi.components().iter().flatten().all(|v| *v == 0.0)
    }
}

/// The fixed family of eight trigonometric test pairs.
#[derive(Debug, Clone)]
pub struct TestFunctionSet {
    pub members: Vec<TestFunction>,
}

impl TestFunctionSet {
    /// Member 0 is `φ ≡ 1`, `ψ ≡ e_1`; the rest are low modes mixing axes when `d > 1`.
    pub fn standard(grid: Grid) -> Self {
        use std::f64::consts::FRAC_PI_2;
        let d = grid.dim();
        let e = |a: usize, m: i32| {
            let mut k = vec![0; d];
            k[a] += m;
            k
        };
        let last = d - 1;
        let mut both = e(0, 1);
        both[last] += 1;
        let specs: Vec<(Vec<i32>, f64, usize)> = vec![
            (vec![0; d], FRAC_PI_2, 0),
            (e(0, 1), 0.0, 0),
            (e(0, 1), FRAC_PI_2, last),
            (e(0, 2), 0.0, 0),
            (e(last, 1), 0.3, last),
            (both, FRAC_PI_2, 0),
            (e(last, 2), 1.1, (1).min(last)),
            (e(0, 3), 0.7, 0),
        ];
        let members = specs
            .into_iter()
            .map(|(k, ph, dir)| TestFunction::trig(grid, &k, ph, dir).expect("valid by construction"))
            .collect();
        Self { members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Weak-form residual series, one per test pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakFormReport {
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    /// Mass equation residual `r₁(t; φ)`.
    pub r1: Vec<Vec<f64>>,
    /// Momentum equation residual `r₂(t; ψ)`.
    pub r2: Vec<Vec<f64>>,
    pub max_r1: Vec<f64>,
    pub max_r2: Vec<f64>,
}

impl WeakFormReport {
    pub fn max_mass(&self) -> f64 {
        self.max_r1.iter().fold(0.0, |m, v| m.max(*v))
    }

    pub fn max_momentum(&self) -> f64 {
        self.max_r2.iter().fold(0.0, |m, v| m.max(*v))
    }
}

/// Drift pairings `(∫ρu·∇φ, ∫[ρu⊗u:∇ψ + ρu·Δψ + u⊗∇ρ:∇ψ + ρ^γ div ψ])` for one state.
fn drift_pairings(state: &FluidState, params: &SimParams, tf: &TestFunction) -> (f64, f64) {
    let g = *state.grid();
    let d = g.dim();
    let u = velocity(state, params.eps_vac());
    let rho = state.rho.values();
    let grad_rho = gradient(&state.rho);
    let p = pressure(&state.rho, params.gamma());
    let (mut a1, mut a2) = (0.0, 0.0);
    for j in 0..g.len() {
        let r = rho[j].max(0.0);
        for i in 0..d {
            let ui = u.component(i)[j];
            a1 += r * ui * tf.grad_phi.component(i)[j];
            a2 += r * ui * tf.lap_psi.component(i)[j];
            for k in 0..d {
                let dpsi = tf.grad_psi(i, k, j);
                if dpsi != 0.0 {
                    a2 += (r * ui * u.component(k)[j] + ui * grad_rho.component(k)[j]) * dpsi;
                }
            }
        }
        a2 += p.values()[j] * tf.div_psi.values()[j];
    }
    let vol = g.cell_volume();
    (a1 * vol, a2 * vol)
}

/// Residuals of the weak mass and momentum equations along a trajectory that
/// saved every step. Drift integrals use the trapezoid rule; the noise term
/// uses the density of each kick.
pub fn weak_form_residual(
    traj: &Trajectory,
    tests: &TestFunctionSet,
    noise: &NoiseModel,
) -> Result<WeakFormReport> {
    if !traj.has_all_steps() {
        return Err(Error::InsufficientData(
            "weak-form residual needs a trajectory saved at every step".into(),
        ));
    }
    let p = &traj.params;
    let mut report = WeakFormReport {
        labels: tests.members.iter().map(|t| t.label.clone()).collect(),
        times: traj.records.iter().map(|r| r.t).collect(),
        r1: Vec::new(),
        r2: Vec::new(),
        max_r1: Vec::new(),
        max_r2: Vec::new(),
    };
    for tf in &tests.members {
        let mass0 = crate::fields::pair(&traj.states[0].rho, &tf.phi)?;
        let mom0 = crate::fields::pair(&traj.states[0].m, &tf.psi)?;
        let mut prev = drift_pairings(&traj.states[0], p, tf);
        let (mut i1, mut i2, mut noise_sum) = (0.0, 0.0, 0.0);
        let mut r1 = vec![0.0];
        let mut r2 = vec![0.0];
        for (k, log) in traj.logs.iter().enumerate() {
            let s = &traj.states[k + 1];
            let cur = drift_pairings(s, p, tf);
            i1 += 0.5 * (prev.0 + cur.0) * log.dt;
            i2 += 0.5 * (prev.1 + cur.1) * log.dt;
            if noise.is_active() {
                let kick = noise.force().scaled_by(&s.rho);
                noise_sum += crate::fields::pair(&kick, &tf.psi)? * log.dw;
            }
            prev = cur;
            r1.push(crate::fields::pair(&s.rho, &tf.phi)? - mass0 - i1);
            r2.push(crate::fields::pair(&s.m, &tf.psi)? - mom0 - i2 - noise_sum);
        }
        report.max_r1.push(r1.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
        report.max_r2.push(r2.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
        report.r1.push(r1);
        report.r2.push(r2);
    }
    Ok(report)
}

/// RMS increments of the deterministic and stochastic parts of the momentum
/// and their fitted log-log slopes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub norm: String,
    pub lags: Vec<f64>,
    pub det_rms: Vec<f64>,
    pub stoch_rms: Vec<f64>,
    pub det_slope: Option<f64>,
    pub stoch_slope: Option<f64>,
    /// True when some increment vanishes identically and no slope is defined.
    pub degenerate: bool,
}

/// Least-squares slope of `ln y` against `ln x`; `None` if any `y` is not positive.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() || y.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Splits `m(t) − m⁰` into the running stochastic integral `M(t) = Σ ρ f ΔW`
/// and the remainder `Y(t)`, and measures `‖Y(t+h) − Y(t)‖`, `‖M(t+h) − M(t)‖`
/// in `norm`, RMS over paths and admissible `t`. Trajectories must share a
/// uniform save spacing that divides every lag.
pub fn increment_scaling(
    trajectories: &[Trajectory],
    lags: &[f64],
    norm_spec: NormSpec,
) -> Result<ScalingReport> {
    if lags.len() < 2 {
        return Err(Error::InsufficientData("increment scaling needs at least two lags".into()));
    }
    let (lo, hi) = lags.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &h| (a.min(h), b.max(h)));
    if !(lo > 0.0) || hi < 10.0 * lo * (1.0 - 1e-9) {
        return Err(Error::InsufficientData(format!(
            "lags must be positive and span a decade, got [{lo}, {hi}]"
        )));
    }
    let first = trajectories
        .first()
        .ok_or_else(|| Error::InsufficientData("no trajectories".into()))?;
    if first.save_times.len() < 2 {
        return Err(Error::InsufficientData("trajectory has a single save time".into()));
    }
    let spacing = first.save_times[1] - first.save_times[0];
    let offsets: Vec<usize> = lags
        .iter()
        .map(|&h| {
            let k = (h / spacing).round();
            if k < 1.0 || ((k * spacing - h) / h).abs() > 1e-6 {
                Err(Error::InsufficientData(format!(
                    "lag {h} is not a multiple of the save spacing {spacing}"
                )))
            } else {
                Ok(k as usize)
            }
        })
        .collect::<Result<_>>()?;

    let mut det_rms = Vec::with_capacity(lags.len());
    let mut stoch_rms = Vec::with_capacity(lags.len());
    for &off in &offsets {
        let (mut sd, mut ss, mut count) = (0.0, 0.0, 0usize);
        for tr in trajectories {
            let times = &tr.save_times;
            for w in times.windows(2) {
                if ((w[1] - w[0]) / spacing - 1.0).abs() > 1e-6 {
                    return Err(Error::InsufficientData("save times are not uniform".into()));
                }
            }
            for i in 0..times.len().saturating_sub(off) {
                let dm = tr.states[i + off].m.lin_comb(1.0, &tr.states[i].m, -1.0);
                let ds = tr.stoch_momentum[i + off].lin_comb(1.0, &tr.stoch_momentum[i], -1.0);
                let dy = dm.lin_comb(1.0, &ds, -1.0);
                sd += norm(&dy, norm_spec).powi(2);
                ss += norm(&ds, norm_spec).powi(2);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InsufficientData(format!(
                "lag of {off} save intervals exceeds the trajectory length"
            )));
        }
        det_rms.push((sd / count as f64).sqrt());
        stoch_rms.push((ss / count as f64).sqrt());
    }
    let det_slope = loglog_slope(lags, &det_rms);
    let stoch_slope = loglog_slope(lags, &stoch_rms);
    Ok(ScalingReport {
        norm: norm_spec.label(),
        lags: lags.to_vec(),
        det_rms,
        stoch_rms,
        degenerate: det_slope.is_none() || stoch_slope.is_none(),
        det_slope,
        stoch_slope,
    })
}
