//! Wiener paths and time integration by operator splitting.
//!
//! One step is a two-stage explicit (Heun) update of `(ρ, m)`, a vacuum fix
//! that clips negative density and zeroes momentum on `{ρ ≤ ε_vac}` while
//! booking what it removed, and an Euler–Maruyama kick `m ← m + ρ f ΔW`
//! with the post-fix density.
//!
//! Paths live on a uniform base grid. When the stable step is smaller than
//! the base spacing, an increment is split by Brownian-bridge refinement,
//! using the same random numbers [`WienerPath::refined`] would, so a
//! substepped run and a run on the refined path see the same noise.

use std::f64::consts::PI;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{self, DiagnosticsRecord, StepLog};
use crate::dynamics::{
    max_effective_diffusivity, rhs, velocity, FluidState, NoiseModel, SimParams,
};
use crate::error::{Error, Result};
use crate::fields::{Grid, ScalarField, VectorField};

/// Smallest step the integrator accepts before declaring a blow-up.
pub const DT_MIN: f64 = 1e-12;

/// Refinement depth below the base path at which substepping gives up.
const MAX_SPLIT_DEPTH: u32 = 40;

/// Standard normal number addressed by `(seed, stream, index)`.
///
/// Each index owns four 32-bit words of the ChaCha8 keystream, consumed by a
/// Box–Muller transform, so draws are random-access and independent of the
/// order in which they are requested.
pub fn gaussian_at(seed: u64, stream: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 4);
    let a = rng.next_u64();
    let b = rng.next_u64();
    let u1 = 1.0 - (a >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Increments are multiples of this quantum. Sums and differences of such
/// numbers below `2^53·QUANTUM = 256` in magnitude are exact, which is what
/// makes bridge refinement reproduce the coarse increments bit-for-bit.
const QUANTUM: f64 = 1.0 / (1u64 << 45) as f64;

fn quantize(x: f64) -> f64 {
    (x / QUANTUM).round() * QUANTUM
}

/// Splits an increment `dw` over `[t, t+dt]` into two halves with the
/// Brownian-bridge law, such that `left + right == dw` holds bit-exactly.
fn bridge_split(seed: u64, parent_level: u32, index: u64, dt: f64, dw: f64) -> (f64, f64) {
    let z = gaussian_at(seed, u64::from(parent_level) + 1, index);
    let left = quantize(0.5 * dw + 0.5 * dt.sqrt() * z);
    (left, dw - left)
}

/// Seeded Brownian increments on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    seed: u64,
    dt: f64,
    level: u32,
    increments: Vec<f64>,
}

impl WienerPath {
    /// `⌈T/dt⌉` independent `N(0, dt')` increments with `dt' = T/⌈T/dt⌉`,
    /// so the grid ends exactly at `T`.
    pub fn generate(seed: u64, t_final: f64, dt: f64) -> Result<Self> {
        if !(t_final >= 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!("path horizon must be >= 0, got {t_final}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("path spacing must be > 0, got {dt}")));
        }
        let steps = (t_final / dt - 1e-9).ceil().max(0.0) as usize;
        let dt = if steps == 0 { dt } else { t_final / steps as f64 };
        let sd = dt.sqrt();
        let increments = (0..steps as u64).map(|k| quantize(sd * gaussian_at(seed, 0, k))).collect();
        Ok(Self { seed, dt, level: 0, increments })
    }

    /// Halves the spacing; fine increments `2k, 2k+1` sum exactly to coarse increment `k`.
    pub fn refined(&self) -> Self {
        let mut increments = Vec::with_capacity(2 * self.increments.len());
        for (k, &dw) in self.increments.iter().enumerate() {
            let (a, b) = bridge_split(self.seed, self.level, k as u64, self.dt, dw);
            increments.push(a);
            increments.push(b);
        }
        Self { seed: self.seed, dt: 0.5 * self.dt, level: self.level + 1, increments }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.increments.len() as f64
    }

    /// `W(t_k)` for `k = 0..=len`.
    pub fn values(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.len() + 1);
        let mut acc = 0.0;
        w.push(acc);
        for dw in &self.increments {
            acc += dw;
            w.push(acc);
        }
        w
    }
}

/// Largest step allowed by the convective CFL bound and the explicit viscous bound,
/// capped at `dt_max`.
///
/// The viscous bound uses the effective diffusivity `max ρ_face/ρ_j` of the
/// velocity update, which equals 1 for uniform density.
pub fn stable_dt(state: &FluidState, params: &SimParams) -> Result<f64> {
    let g = *state.grid();
    let dx = g.dx();
    let u = velocity(state, params.eps_vac());
    let rho = state.rho.values();
    let max_speed = (0..g.len())
        .map(|j| {
            u.norm_sq_at(j).sqrt()
                + (params.gamma() * rho[j].max(0.0).powf(params.gamma() - 1.0)).sqrt()
        })
        .fold(0.0, f64::max);
    let convective = if max_speed > 0.0 { params.cfl() * dx / max_speed } else { f64::INFINITY };
    let kappa = max_effective_diffusivity(&state.rho, params.eps_vac());
    let viscous = if kappa > 0.0 {
        params.visc_factor() * dx * dx / (2.0 * g.dim() as f64 * kappa)
    } else {
        f64::INFINITY
    };
    let dt = convective.min(viscous).min(params.dt_max());
    if !(dt >= DT_MIN) {
        return Err(Error::StepTooSmall { t: f64::NAN, dt, floor: DT_MIN });
    }
    Ok(dt)
}

/// Result of one integrator step, with the vacuum-fix ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state: FluidState,
    /// Momentum after the deterministic half and vacuum fix, before the noise kick.
    pub pre_kick_momentum: VectorField,
    /// Mass added by clipping negative density (`≥ 0`).
    pub clip_mass: f64,
    /// Momentum removed on vacuum nodes, per component (added to the total).
    pub clip_momentum: Vec<f64>,
}

fn axpy_state(rho: &[f64], m: &[Vec<f64>], dt: f64, drho: &ScalarField, dm: &VectorField) -> (Vec<f64>, Vec<Vec<f64>>) {
    let r = rho.iter().zip(drho.values()).map(|(a, b)| a + dt * b).collect();
    let mm = m
        .iter()
        .zip(dm.components())
        .map(|(c, d)| c.iter().zip(d).map(|(a, b)| a + dt * b).collect())
        .collect();
    (r, mm)
}

fn unchecked_state(g: Grid, rho: Vec<f64>, m: Vec<Vec<f64>>) -> FluidState {
    FluidState { rho: ScalarField::from_raw(g, rho), m: VectorField::from_raw(g, m) }
}

/// Advances `state` by `dt` with Brownian increment `dw`.
pub fn step(
    state: &FluidState,
    dt: f64,
    dw: f64,
    params: &SimParams,
    noise: &NoiseModel,
) -> Result<StepOutput> {
    let g = *state.grid();
    let (drho0, dm0) = rhs(state, params);
    let (r1, m1) = axpy_state(state.rho.values(), state.m.components(), dt, &drho0, &dm0);
    let stage = unchecked_state(g, r1, m1);
    let (drho1, dm1) = rhs(&stage, params);
    let (r2, m2) = axpy_state(stage.rho.values(), stage.m.components(), dt, &drho1, &dm1);

    let mut rho: Vec<f64> =
        state.rho.values().iter().zip(&r2).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
    let mut m: Vec<Vec<f64>> = state
        .m
        .components()
        .iter()
        .zip(&m2)
        .map(|(c, d)| c.iter().zip(d).map(|(a, b)| 0.5 * a + 0.5 * b).collect())
        .collect();

    let vol = g.cell_volume();
    let mut clip_mass = 0.0;
    let mut clip_momentum = vec![0.0; g.dim()];
    for j in 0..g.len() {
        if rho[j] < 0.0 {
            clip_mass -= rho[j];
            rho[j] = 0.0;
        }
        if rho[j] <= params.eps_vac() {
            for (a, c) in m.iter_mut().enumerate() {
                clip_momentum[a] -= c[j];
                c[j] = 0.0;
            }
        }
    }
    clip_mass *= vol;
    clip_momentum.iter_mut().for_each(|v| *v *= vol);

    let pre_kick = VectorField::from_raw(g, m.clone());
    if noise.is_active() && dw != 0.0 {
        let f = noise.force();
        for (a, c) in m.iter_mut().enumerate() {
            let fa = f.component(a);
            for j in 0..g.len() {
                c[j] += rho[j] * fa[j] * dw;
            }
        }
    }

    let out = unchecked_state(g, rho, m);
    if !out.rho.is_finite() || !out.m.is_finite() {
        let bad = out.rho.values().iter().position(|v| !v.is_finite());
        return Err(Error::IntegrationFailure {
            t: f64::NAN,
            reason: format!(
                "non-finite state after step (dt = {dt:e}, first bad density node {bad:?}, \
                 min ρ before = {:e}, max ρ before = {:e})",
                state.rho.min(),
                state.rho.max()
            ),
        });
    }
    Ok(StepOutput { state: out, pre_kick_momentum: pre_kick, clip_mass, clip_momentum })
}

/// Which states a trajectory keeps.
#[derive(Debug, Clone, PartialEq)]
pub enum SaveSchedule {
    /// Every integrator step, including bridge substeps.
    AllSteps,
    /// The end of every `k`-th base-path interval (and the final time).
    EveryBase(usize),
    /// The first step end at or after each requested time.
    Times(Vec<f64>),
}

/// States at save times plus per-step diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid,
    pub params: SimParams,
    pub seed: u64,
    pub save_times: Vec<f64>,
    pub states: Vec<FluidState>,
    /// Running stochastic momentum `Σ ρ f ΔW` at each save time.
    pub stoch_momentum: Vec<VectorField>,
    /// Index into `records` of each saved state.
    pub save_steps: Vec<usize>,
    /// One record per step, starting with the initial state.
    pub records: Vec<DiagnosticsRecord>,
    /// One log per step; `logs[k]` describes the step that produced `records[k+1]`.
    pub logs: Vec<StepLog>,
}

impl Trajectory {
    pub fn initial(&self) -> &FluidState {
        &self.states[0]
    }

    pub fn last(&self) -> &FluidState {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn final_time(&self) -> f64 {
        self.records.last().map(|r| r.t).unwrap_or(0.0)
    }

    /// True when every step was saved, which the weak-form residual needs.
    pub fn has_all_steps(&self) -> bool {
        self.states.len() == self.records.len()
    }
}

struct Pending {
    dt: f64,
    dw: f64,
    level: u32,
    index: u64,
    base_end: Option<usize>,
}

/// Integrates from `(rho0, m0)` over the horizon of `path`.
pub fn simulate(
    rho0: &ScalarField,
    m0: &VectorField,
    params: &SimParams,
    noise: &NoiseModel,
    path: &WienerPath,
    schedule: &SaveSchedule,
) -> Result<Trajectory> {
    let report = crate::dynamics::validate_initial(rho0, m0, params)?;
    if !report.passed {
        return Err(Error::InvalidParameter(format!(
            "initial data rejected (min ρ = {:e}, max vacuum |m| = {:e})",
            report.min_rho, report.max_vacuum_momentum
        )));
    }
    noise.force().grid().check_same(rho0.grid())?;
    let g = *rho0.grid();
    let mut state = FluidState::new(rho0.clone(), m0.clone())?;
    let mut recorder = diagnostics::Recorder::new(&state, params, noise);
    let mut traj = Trajectory {
        grid: g,
        params: *params,
        seed: path.seed(),
        save_times: vec![0.0],
        states: vec![state.clone()],
        stoch_momentum: vec![VectorField::zeros(g)],
        save_steps: vec![0],
        records: vec![recorder.initial_record(&state)],
        logs: Vec::new(),
    };
    let mut stoch_momentum = VectorField::zeros(g);
    let mut clip_momentum = vec![0.0; g.dim()];
    let mut time_targets: &[f64] = match schedule {
        SaveSchedule::Times(ts) => ts.as_slice(),
        _ => &[],
    };
    while time_targets.first().is_some_and(|&t| t <= 0.0) {
        time_targets = &time_targets[1..];
    }

    let n_base = path.len();
    let mut t = 0.0;
    let mut stack: Vec<Pending> = Vec::new();
    for (k, &dw) in path.increments().iter().enumerate() {
        stack.push(Pending { dt: path.dt(), dw, level: path.level(), index: k as u64, base_end: Some(k) });
        while let Some(p) = stack.pop() {
            let limit = stable_dt(&state, params).map_err(|e| match e {
                Error::StepTooSmall { dt, floor, .. } => Error::StepTooSmall { t, dt, floor },
                other => other,
            })?;
            if p.dt > limit * (1.0 + 1e-12) {
                if p.level - path.level() >= MAX_SPLIT_DEPTH {
                    return Err(Error::StepTooSmall { t, dt: limit, floor: p.dt });
                }
                let (a, b) = bridge_split(path.seed(), p.level, p.index, p.dt, p.dw);
                let half = 0.5 * p.dt;
                stack.push(Pending { dt: half, dw: b, level: p.level + 1, index: 2 * p.index + 1, base_end: p.base_end });
                stack.push(Pending { dt: half, dw: a, level: p.level + 1, index: 2 * p.index, base_end: None });
                continue;
            }

            let out = step(&state, p.dt, p.dw, params, noise).map_err(|e| match e {
                Error::IntegrationFailure { reason, .. } => Error::IntegrationFailure { t, reason },
                other => other,
            })?;
            t = match p.base_end {
                Some(k) => (k + 1) as f64 * path.dt(),
                None => t + p.dt,
            };
            let dw = if noise.is_active() { p.dw } else { 0.0 };
            if noise.is_active() {
                let f = noise.force();
                for a in 0..g.dim() {
                    let fa = f.component(a);
                    let rho = out.state.rho.values();
                    for (j, s) in stoch_momentum.component_mut(a).iter_mut().enumerate() {
                        *s += rho[j] * fa[j] * dw;
                    }
                }
            }
            for (c, d) in clip_momentum.iter_mut().zip(&out.clip_momentum) {
                *c += d;
            }
            let (record, log) =
                recorder.advance(t, p.dt, dw, &out, clip_momentum.clone());
            traj.records.push(record);
            traj.logs.push(log);
            state = out.state;

            let save = match schedule {
                SaveSchedule::AllSteps => true,
                SaveSchedule::EveryBase(every) => {
                    p.base_end.is_some_and(|k| (k + 1) % (*every).max(1) == 0 || k + 1 == n_base)
                }
                SaveSchedule::Times(_) => {
                    let tol = 1e-9 * p.dt;
                    let mut hit = false;
                    while time_targets.first().is_some_and(|&s| s <= t + tol) {
                        time_targets = &time_targets[1..];
                        hit = true;
                    }
                    hit || p.base_end == Some(n_base - 1)
                }
            };
            if save {
                traj.save_times.push(t);
                traj.states.push(state.clone());
                traj.stoch_momentum.push(stoch_momentum.clone());
                traj.save_steps.push(traj.records.len() - 1);
            }
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> SimParams {
        SimParams::new(2.0, 0.5).unwrap()
    }

    #[test]
    fn path_is_reproducible() {
        let a = WienerPath::generate(7, 1.0, 1e-2).unwrap();
        let b = WienerPath::generate(7, 1.0, 1e-2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert_ne!(a, WienerPath::generate(8, 1.0, 1e-2).unwrap());
    }

    #[test]
    fn increment_variance_matches_dt() {
        // Chi-square: relative sd of the sample variance is sqrt(2/N) ≈ 0.0045.
        let dt = 1e-3;
        let p = WienerPath::generate(2024, 100.0, dt).unwrap();
        assert_eq!(p.len(), 100_000);
        let n = p.len() as f64;
        let mean = p.increments().iter().sum::<f64>() / n;
        let var = p.increments().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(var >= 0.95 * dt && var <= 1.05 * dt, "variance {var}");
    }

    #[test]
    fn refinement_sums_exactly() {
        let p = WienerPath::generate(3, 2.0, 0.05).unwrap();
        let fine = p.refined();
        let finer = fine.refined();
        for (k, &dw) in p.increments().iter().enumerate() {
            assert_eq!(fine.increments()[2 * k] + fine.increments()[2 * k + 1], dw);
        }
        for (k, &dw) in fine.increments().iter().enumerate() {
            assert_eq!(finer.increments()[2 * k] + finer.increments()[2 * k + 1], dw);
        }
        assert_abs_diff_eq!(fine.dt(), 0.025);
    }

    #[test]
    fn bridge_halves_have_quarter_variance_around_the_mean() {
        // Given dw, each half is N(dw/2, dt/4).
        let dt = 0.04;
        let p = WienerPath::generate(11, 400.0, dt).unwrap();
        let f = p.refined();
        let n = p.len() as f64;
        let var = p
            .increments()
            .iter()
            .enumerate()
            .map(|(k, dw)| (f.increments()[2 * k] - 0.5 * dw).powi(2))
            .sum::<f64>()
            / n;
        assert!((var / (dt / 4.0) - 1.0).abs() < 0.06, "{var}");
    }

    #[test]
    fn stable_dt_examples() {
        let g = Grid::periodic(1, 128).unwrap();
        let p = params();
        let s = FluidState::at_rest(ScalarField::constant(g, 1.0)).unwrap();
        let dx = g.dx();
        let expected = (p.cfl() * dx / 2f64.sqrt()).min(p.visc_factor() * dx * dx / 2.0);
        assert_abs_diff_eq!(stable_dt(&s, &p).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, p.visc_factor() * dx * dx / 2.0);

        let vac = FluidState::at_rest(ScalarField::zeros(g)).unwrap();
        assert_eq!(stable_dt(&vac, &p).unwrap(), p.dt_max());

        let s2 = FluidState::at_rest(ScalarField::constant(g.refined(), 1.0)).unwrap();
        let ratio = stable_dt(&s, &p).unwrap() / stable_dt(&s2, &p).unwrap();
        assert_abs_diff_eq!(ratio, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn constant_state_is_a_fixed_point() {
        let g = Grid::periodic(2, 8).unwrap();
        let s = FluidState::new(ScalarField::constant(g, 1.3), VectorField::constant(g, &[0.2, -0.1]))
            .unwrap();
        let out = step(&s, 1e-3, 0.7, &params(), &NoiseModel::inactive(g)).unwrap();
        assert_eq!(out.state, s);
        assert_eq!(out.clip_mass, 0.0);
    }

    #[test]
    fn kick_from_rest() {
        let g = Grid::periodic(1, 16).unwrap();
        let rho_bar = 1.7;
        let s = FluidState::at_rest(ScalarField::constant(g, rho_bar)).unwrap();
        let noise = NoiseModel::new(VectorField::constant(g, &[0.3]));
        let dw = 0.05;
        let out = step(&s, 1e-3, dw, &params(), &noise).unwrap();
        for &m in out.state.m.component(0) {
            assert_abs_diff_eq!(m, rho_bar * 0.3 * dw, epsilon = 1e-15);
        }
        assert_eq!(out.state.rho, s.rho);
    }

    fn smooth_data(g: Grid) -> (ScalarField, VectorField) {
        let rho = ScalarField::from_fn(g, |x| 1.0 + 0.2 * x[0].sin());
        let m = VectorField::from_fn(g, |x, _| 0.1 * x[0].cos()).scaled_by(&rho);
        (rho, m)
    }

    #[test]
    fn zero_horizon_keeps_initial_state() {
        let g = Grid::periodic(1, 32).unwrap();
        let (rho, m) = smooth_data(g);
        let path = WienerPath::generate(1, 0.0, 1e-3).unwrap();
        let tr = simulate(&rho, &m, &params(), &NoiseModel::inactive(g), &path, &SaveSchedule::AllSteps)
            .unwrap();
        assert_eq!(tr.states.len(), 1);
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.states[0].rho, rho);
    }

    #[test]
    fn mass_is_conserved_without_clipping() {
        let g = Grid::periodic(1, 64).unwrap();
        let (rho, m) = smooth_data(g);
        let path = WienerPath::generate(5, 0.3, 1e-2).unwrap();
        let noise = NoiseModel::profile(g, "perturbed", 0.2).unwrap();
        let tr = simulate(&rho, &m, &params(), &noise, &path, &SaveSchedule::EveryBase(10)).unwrap();
        let m0 = tr.records[0].mass;
        for r in &tr.records {
            assert_eq!(r.clip_mass, 0.0);
            assert!(((r.mass - m0) / m0).abs() <= 1e-12);
        }
    }

    #[test]
    fn substepping_matches_refined_path() {
        // A coarse path forced to substep must see the refined path's increments.
        let g = Grid::periodic(1, 32).unwrap();
        let (rho, m) = smooth_data(g);
        let p = params();
        let dt_stable = stable_dt(&FluidState::new(rho.clone(), m.clone()).unwrap(), &p).unwrap();
        let coarse = WienerPath::generate(9, 40.0 * dt_stable, 3.0 * dt_stable).unwrap();
        let fine = coarse.refined().refined();
        let noise = NoiseModel::profile(g, "sine", 0.5).unwrap();
        let a = simulate(&rho, &m, &p, &noise, &coarse, &SaveSchedule::AllSteps).unwrap();
        let b = simulate(&rho, &m, &p, &noise, &fine, &SaveSchedule::AllSteps).unwrap();
        assert_eq!(a.logs.len(), b.logs.len());
        for (x, y) in a.logs.iter().zip(&b.logs) {
            assert_eq!(x.dw, y.dw);
        }
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let g = Grid::periodic(1, 32).unwrap();
        let (rho, m) = smooth_data(g);
        let path = WienerPath::generate(77, 0.2, 1e-2).unwrap();
        let noise = NoiseModel::profile(g, "sine", 0.5).unwrap();
        let run = || simulate(&rho, &m, &params(), &noise, &path, &SaveSchedule::AllSteps).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.records, b.records);
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn save_times_are_honoured() {
        let g = Grid::periodic(1, 16).unwrap();
        let (rho, m) = smooth_data(g);
        let path = WienerPath::generate(1, 0.1, 1e-2).unwrap();
        let tr = simulate(
            &rho,
            &m,
            &params(),
            &NoiseModel::inactive(g),
            &path,
            &SaveSchedule::Times(vec![0.05, 0.1]),
        )
        .unwrap();
        assert_eq!(tr.save_times.len(), 3);
        assert_abs_diff_eq!(tr.save_times[1], 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(tr.save_times[2], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn unstable_factors_fail_with_a_time() {
        let g = Grid::periodic(1, 64).unwrap();
        let (rho, m) = smooth_data(g);
        let p = params().with_unchecked_stability(4.0, 8.0);
        let path = WienerPath::generate(1, 1.0, 1.0).unwrap();
        let err = simulate(&rho, &m, &p, &NoiseModel::inactive(g), &path, &SaveSchedule::AllSteps)
            .unwrap_err();
        match err {
            Error::IntegrationFailure { t, .. } | Error::StepTooSmall { t, .. } => {
                assert!(t.is_finite())
            }
            other => panic!("unexpected error {other}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bridge_split_is_exact(seed in any::<u64>(), idx in 0u64..1_000_000, dw in -5.0f64..5.0, dt in 1e-8f64..1.0) {
                let dw = quantize(dw);
                let (a, b) = bridge_split(seed, 0, idx, dt, dw);
                prop_assert_eq!(a + b, dw);
            }
        }
    }
}
