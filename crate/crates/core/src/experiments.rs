//! Monte-Carlo ensembles, uniform-in-resolution bound reports and the
//! shared-path sequential stability experiment.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{moments, TestFunctionSet};
use crate::dynamics::{velocity, FluidState, NoiseModel, SimParams};
use crate::error::{Error, Result};
use crate::fields::{gradient, pair, Grid, ScalarField, VectorField};
use crate::integrator::{simulate, SaveSchedule, Trajectory, WienerPath};

/// Grid-independent description of the stochastic forcing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub active: bool,
    pub profile: String,
    pub amplitude: f64,
}

impl NoiseSpec {
    pub fn inactive() -> Self {
        Self { active: false, profile: "constant".into(), amplitude: 0.0 }
    }

    pub fn new(profile: &str, amplitude: f64) -> Self {
        Self { active: true, profile: profile.into(), amplitude }
    }

    pub fn build(&self, grid: Grid) -> Result<NoiseModel> {
        if self.active {
            NoiseModel::profile(grid, &self.profile, self.amplitude)
        } else {
            Ok(NoiseModel::inactive(grid))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub base_seed: u64,
    pub moment_orders: Vec<f64>,
    pub resolutions: Vec<usize>,
    /// Spacing of the base Wiener path.
    pub path_dt: f64,
    /// Save every this many base intervals.
    pub save_every: usize,
    /// Replaces `base_seed + i` when set.
    pub seeds: Option<Vec<u64>>,
    pub keep_trajectories: bool,
}

impl EnsembleConfig {
    pub fn new(n_paths: usize, base_seed: u64) -> Self {
        Self {
            n_paths,
            base_seed,
            moment_orders: vec![1.0, 2.0],
            resolutions: vec![64],
            path_dt: 1e-2,
            save_every: 10,
            seeds: None,
            keep_trajectories: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.seeds.as_ref().map_or(self.n_paths, Vec::len);
        if n < 2 {
            return Err(Error::InvalidParameter(format!("an ensemble needs at least 2 paths, got {n}")));
        }
        if self.moment_orders.iter().any(|p| !(p.is_finite() && *p >= 1.0)) {
            return Err(Error::InvalidParameter("moment orders must be finite and >= 1".into()));
        }
        if !(self.path_dt > 0.0) || self.save_every == 0 {
            return Err(Error::InvalidParameter("path_dt must be > 0 and save_every >= 1".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.n_paths as u64).map(|i| self.base_seed.wrapping_add(i)).collect(),
        }
    }
}

/// Pathwise functionals whose moments are pooled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    pub seed: u64,
    /// `sup_t ∫ρ|u|²`.
    pub sup_kinetic: f64,
    /// `sup_t ∫ρ|∇log ρ|²`.
    pub sup_fisher: f64,
    /// `sup_t ∫ρ^γ`.
    pub sup_pressure: f64,
    /// `∫∫ρ|∇u|²`.
    pub viscous_total: f64,
    /// `∫∫|∇ρ^{γ/2}|²`.
    pub pressure_grad_total: f64,
    /// `sup_t (2+δ)^{-1}∫ρ|u|^{2+δ}`.
    pub sup_mv: f64,
    pub interpolation: InterpolationReport,
    pub clip_mass: f64,
}

pub const QUANTITIES: [&str; 6] =
    ["sup_kinetic", "sup_fisher", "sup_pressure", "viscous_total", "pressure_grad_total", "sup_mv"];

impl PathSummary {
    pub fn from_trajectory(seed: u64, traj: &Trajectory) -> Self {
        let p = &traj.params;
        let m0 = moments(&traj.states[0], p);
        let (mut k, mut f, mut pr) = (m0.kinetic, m0.fisher, m0.pressure_l1);
        let mut mv = traj.records[0].mv_energy;
        let (mut visc, mut pg) = (0.0, 0.0);
        for (i, log) in traj.logs.iter().enumerate() {
            k = k.max(log.moments.kinetic);
            f = f.max(log.moments.fisher);
            pr = pr.max(log.moments.pressure_l1);
            mv = mv.max(traj.records[i + 1].mv_energy);
            visc += log.visc_integral;
            let (a, b) = (&traj.records[i], &traj.records[i + 1]);
            pg += 0.5 * (a.bd_dissipation + b.bd_dissipation) * log.dt * p.gamma() / 4.0;
        }
        Self {
            seed,
            sup_kinetic: k,
            sup_fisher: f,
            sup_pressure: pr,
            viscous_total: visc,
            pressure_grad_total: pg,
            sup_mv: mv,
            interpolation: interpolation_check(traj),
            clip_mass: traj.records.last().map_or(0.0, |r| r.clip_mass),
        }
    }

    pub fn quantity(&self, name: &str) -> f64 {
        match name {
            "sup_kinetic" => self.sup_kinetic,
            "sup_fisher" => self.sup_fisher,
            "sup_pressure" => self.sup_pressure,
            "viscous_total" => self.viscous_total,
            "pressure_grad_total" => self.pressure_grad_total,
            "sup_mv" => self.sup_mv,
            _ => f64::NAN,
        }
    }
}

/// Sample mean of `X^p` with a normal-approximation 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub quantity: String,
    pub p: f64,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub ci_half_width: f64,
}

impl MomentEstimate {
    pub fn from_samples(quantity: &str, p: f64, samples: &[f64]) -> Self {
        let n = samples.len();
        let xs: Vec<f64> = samples.iter().map(|x| x.abs().powf(p)).collect();
        let mean = if n > 0 { xs.iter().sum::<f64>() / n as f64 } else { f64::NAN };
        let variance = if n > 1 {
            let shift = xs[0];
            let d: Vec<f64> = xs.iter().map(|x| x - shift).collect();
            let dm = d.iter().sum::<f64>() / n as f64;
            d.iter().map(|x| (x - dm).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let ci_half_width = if n > 0 { 1.96 * (variance / n as f64).sqrt() } else { f64::INFINITY };
        Self { quantity: quantity.into(), p, n, mean, variance, ci_half_width }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci_half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_half_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedPath {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleStats {
    pub resolution: usize,
    pub paths: Vec<PathSummary>,
    pub failed: Vec<FailedPath>,
    pub moments: Vec<MomentEstimate>,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

impl EnsembleStats {
    pub fn moment(&self, quantity: &str, p: f64) -> Option<&MomentEstimate> {
        self.moments.iter().find(|m| m.quantity == quantity && m.p == p)
    }

    pub fn interpolation_holds(&self) -> bool {
        self.paths.iter().all(|p| p.interpolation.verdict)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for m in &self.moments {
            w.serialize(m)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs one path per seed (in parallel) and pools the per-path functionals in
/// ascending seed order. Failed paths are listed, not fatal.
pub fn run_ensemble(
    rho0: &ScalarField,
    m0: &VectorField,
    params: &SimParams,
    noise: &NoiseModel,
    cfg: &EnsembleConfig,
) -> Result<EnsembleStats> {
    cfg.validate()?;
    let report = crate::dynamics::validate_initial(rho0, m0, params)?;
    if !report.passed {
        return Err(Error::InvalidParameter("initial data rejected by validation".into()));
    }
    let mut seeds = cfg.seeds();
    seeds.sort_unstable();
    let outcomes: Vec<(u64, Result<Trajectory>)> = seeds
        .par_iter()
        .map(|&seed| {
            let run = WienerPath::generate(seed, params.t_final(), cfg.path_dt).and_then(|path| {
                simulate(rho0, m0, params, noise, &path, &SaveSchedule::EveryBase(cfg.save_every))
            });
            (seed, run)
        })
        .collect();

    let mut paths = Vec::new();
    let mut failed = Vec::new();
    let mut trajectories = Vec::new();
    for (seed, out) in outcomes {
        match out {
            Ok(tr) => {
                paths.push(PathSummary::from_trajectory(seed, &tr));
                if cfg.keep_trajectories {
                    trajectories.push(tr);
                }
            }
            Err(e) => failed.push(FailedPath { seed, error: e.to_string() }),
        }
    }
    let mut moments = Vec::new();
    for q in QUANTITIES {
        let samples: Vec<f64> = paths.iter().map(|p| p.quantity(q)).collect();
        for &p in &cfg.moment_orders {
            moments.push(MomentEstimate::from_samples(q, p, &samples));
        }
    }
    Ok(EnsembleStats { resolution: rho0.grid().n(), paths, failed, moments, trajectories })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub quantity: String,
    pub resolutions: Vec<usize>,
    pub means: Vec<f64>,
    pub ci_half_widths: Vec<f64>,
    pub bounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformBoundReport {
    pub p: f64,
    pub rows: Vec<BoundRow>,
    pub failed_paths: usize,
    pub interpolation_holds: bool,
    pub evidence: Vec<String>,
    pub verdict: bool,
}

/// A moment is flagged as growing when every refinement raises its estimate
/// beyond the overlap of the two confidence intervals and the increments do
/// not contract (each is at least half the previous one). Discretisation
/// convergence from below has contracting increments and is not flagged. Any
/// failed path or non-finite estimate fails the verdict.
pub fn uniform_bound_report(stats: &[EnsembleStats], p: f64) -> Result<UniformBoundReport> {
    if stats.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "uniform bound report needs at least 3 resolutions, got {}",
            stats.len()
        )));
    }
    let mut ordered: Vec<&EnsembleStats> = stats.iter().collect();
    ordered.sort_by_key(|s| s.resolution);
    let mut evidence = Vec::new();
    let failed_paths: usize = ordered.iter().map(|s| s.failed.len()).sum();
    for s in &ordered {
        for f in &s.failed {
            evidence.push(format!("n = {}: seed {} failed: {}", s.resolution, f.seed, f.error));
        }
        if s.paths.is_empty() {
            evidence.push(format!("n = {}: no path completed", s.resolution));
        }
    }
    let mut rows = Vec::new();
    for q in QUANTITIES {
        let est: Vec<Option<&MomentEstimate>> = ordered.iter().map(|s| s.moment(q, p)).collect();
        let means: Vec<f64> = est.iter().map(|e| e.map_or(f64::NAN, |e| e.mean)).collect();
        let cis: Vec<f64> = est.iter().map(|e| e.map_or(f64::NAN, |e| e.ci_half_width)).collect();
        let finite = means.iter().chain(&cis).all(|v| v.is_finite());
        let separated = est.windows(2).all(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => b.lower() > a.upper(),
            _ => true,
        });
        let steps: Vec<f64> = means.windows(2).map(|w| w[1] - w[0]).collect();
        let contracting = steps.windows(2).any(|s| s[1] < 0.5 * s[0]);
        let growing = separated && !contracting;
        let bounded = finite && !growing;
        if !bounded {
            evidence.push(format!("{q}: estimates {means:?} grow with resolution"));
        }
        rows.push(BoundRow {
            quantity: q.into(),
            resolutions: ordered.iter().map(|s| s.resolution).collect(),
            means,
            ci_half_widths: cis,
            bounded,
        });
    }
    let interpolation_holds = ordered.iter().all(|s| s.interpolation_holds());
    let verdict = failed_paths == 0
        && rows.iter().all(|r| r.bounded)
        && interpolation_holds
        && ordered.iter().all(|s| !s.paths.is_empty());
    Ok(UniformBoundReport { p, rows, failed_paths, interpolation_holds, evidence, verdict })
}

/// `A = ‖ρ^γ‖_{L^{5/3}L^{5/3}}`, `B = ‖ρ^γ‖_{L^∞L¹}`, `C' = ‖ρ^γ‖_{L¹L³}` by the
/// rectangle rule over steps, and the check `A ≤ B^{2/5} C'^{3/5}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterpolationReport {
    pub a: f64,
    pub b: f64,
    pub c_prime: f64,
    pub bound: f64,
    pub verdict: bool,
}

pub fn interpolation_check(traj: &Trajectory) -> InterpolationReport {
    let m0 = moments(&traj.states[0], &traj.params);
    let mut b = m0.pressure_l1;
    let (mut a53, mut c) = (0.0, 0.0);
    for log in &traj.logs {
        a53 += log.dt * log.moments.pressure_pow53;
        c += log.dt * log.moments.pressure_l3;
        b = b.max(log.moments.pressure_l1);
    }
    let a = a53.powf(0.6);
    let bound = b.powf(0.4) * c.powf(0.6);
    InterpolationReport { a, b, c_prime: c, bound, verdict: a <= bound * (1.0 + 1e-12) }
}

/// Periodic convolution with a Gaussian of width `h`, truncated at `4h` per
/// axis and normalised on the grid, so it preserves positivity and mass.
pub fn mollify(values: &[f64], grid: &Grid, h: f64) -> Vec<f64> {
    let n = grid.n();
    let radius = ((4.0 * h / grid.dx()).floor() as usize).min(n / 2 - 1 + n % 2);
    if h <= 0.0 || radius == 0 {
        return values.to_vec();
    }
    let weights: Vec<f64> = (0..=radius)
        .map(|r| (-0.5 * (r as f64 * grid.dx() / h).powi(2)).exp())
        .collect();
    let total: f64 = weights[0] + 2.0 * weights[1..].iter().sum::<f64>();
    let mut out = values.to_vec();
    for axis in 0..grid.dim() {
        let src = out.clone();
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = weights[0] * src[j];
            let (mut fw, mut bw) = (j, j);
            for w in &weights[1..] {
                fw = grid.forward(fw, axis);
                bw = grid.backward(bw, axis);
                acc += w * (src[fw] + src[bw]);
            }
            *o = acc / total;
        }
    }
    out
}

/// Level `k` is the mollification of the limit data at width `widths[k]`;
/// momentum is re-zeroed on `{ρ ≤ ε_vac}`.
pub fn mollified_sequence(
    rho_limit: &ScalarField,
    m_limit: &VectorField,
    widths: &[f64],
    eps_vac: f64,
) -> Result<Vec<(ScalarField, VectorField)>> {
    rho_limit.grid().check_same(m_limit.grid())?;
    if rho_limit.min() < 0.0 {
        return Err(Error::InvalidParameter("limit density must be nonnegative".into()));
    }
    let g = *rho_limit.grid();
    widths
        .iter()
        .map(|&h| {
            let rho = ScalarField::from_values(g, mollify(rho_limit.values(), &g, h))?;
            let mut comps: Vec<Vec<f64>> =
                m_limit.components().iter().map(|c| mollify(c, &g, h)).collect();
            for c in &mut comps {
                for (v, r) in c.iter_mut().zip(rho.values()) {
                    if *r <= eps_vac {
                        *v = 0.0;
                    }
                }
            }
            Ok((rho, VectorField::from_components(g, comps)?))
        })
        .collect()
}

/// Width sequence `h₀·2^{−k}`.
pub fn halving_widths(h0: f64, levels: usize) -> Vec<f64> {
    (0..levels).map(|k| h0 * 0.5f64.powi(k as i32)).collect()
}

/// Injection of a field onto a coarser nested grid.
pub fn restrict_values(values: &[f64], fine: &Grid, coarse: &Grid) -> Result<Vec<f64>> {
    if fine.dim() != coarse.dim()
        || fine.length() != coarse.length()
        || coarse.n() > fine.n()
        || fine.n() % coarse.n() != 0
    {
        return Err(Error::GridMismatch(format!(
            "cannot restrict n = {} onto n = {}",
            fine.n(),
            coarse.n()
        )));
    }
    let ratio = fine.n() / coarse.n();
    let out = (0..coarse.len())
        .map(|j| {
            let mut idx = 0;
            let mut rest = j;
            for axis in 0..coarse.dim() {
                let i = rest % coarse.n();
                rest /= coarse.n();
                idx += i * ratio * fine.n().pow(axis as u32);
            }
            values[idx]
        })
        .collect();
    Ok(out)
}

pub fn restrict_scalar(f: &ScalarField, coarse: &Grid) -> Result<ScalarField> {
    ScalarField::from_values(*coarse, restrict_values(f.values(), f.grid(), coarse)?)
}

pub fn restrict_vector(v: &VectorField, coarse: &Grid) -> Result<VectorField> {
    let comps = v
        .components()
        .iter()
        .map(|c| restrict_values(c, v.grid(), coarse))
        .collect::<Result<_>>()?;
    VectorField::from_components(*coarse, comps)
}

pub const GAP_NAMES: [&str; 5] =
    ["density_lq", "sqrt_density_h1_weak", "momentum_sqrt_l2", "convective_l1", "diffusion_form"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelFailure {
    pub n: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub seed: Option<u64>,
    pub levels: Vec<usize>,
    pub reference: usize,
    /// Per level, the five gaps in the order of [`GAP_NAMES`].
    pub gaps: Vec<[f64; 5]>,
    /// Fitted `−log₂` decay per level, per gap.
    pub rates: Vec<Option<f64>>,
    pub decreasing: Vec<bool>,
    pub failures: Vec<LevelFailure>,
}

impl ConvergenceReport {
    pub fn all_decreasing(&self) -> bool {
        self.failures.is_empty() && self.decreasing.iter().all(|d| *d)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["n".to_string()];
        header.extend(GAP_NAMES.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for (n, g) in self.levels.iter().zip(&self.gaps) {
            let mut row = vec![n.to_string()];
            row.extend(g.iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-save-time quantities a level contributes to the gaps.
struct LevelSeries {
    times: Vec<f64>,
    states: Vec<FluidState>,
    /// H¹ pairings of `√ρ` with each test `φ`.
    h1_pairs: Vec<Vec<f64>>,
    /// Running time integrals of the diffusion form against each test `ψ`.
    diffusion: Vec<Vec<f64>>,
}

fn diffusion_form(state: &FluidState, params: &SimParams, tests: &TestFunctionSet) -> Vec<f64> {
    let g = *state.grid();
    let theta = state.rho.map(|r| r.max(0.0).sqrt());
    let grad = gradient(&theta);
    let q = velocity(state, params.eps_vac()).scaled_by(&theta);
    tests
        .members
        .iter()
        .map(|tf| {
            let mut s = 0.0;
            for j in 0..g.len() {
                for i in 0..g.dim() {
                    let qi = q.component(i)[j];
                    s += theta.values()[j] * qi * tf.lap_psi.component(i)[j];
                    for k in 0..g.dim() {
                        s += 2.0 * grad.component(k)[j] * qi * tf.grad_psi(i, k, j);
                    }
                }
            }
            s * g.cell_volume()
        })
        .collect()
}

fn level_series(traj: &Trajectory) -> Result<LevelSeries> {
    let tests = TestFunctionSet::standard(traj.grid);
    let mut h1_pairs = Vec::new();
    let mut diffusion = Vec::new();
    let mut running = vec![0.0; tests.len()];
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for (t, s) in traj.save_times.iter().zip(&traj.states) {
        let theta = s.rho.map(|r| r.max(0.0).sqrt());
        let grad = gradient(&theta);
        let pairs = tests
            .members
            .iter()
            .map(|tf| Ok(pair(&theta, &tf.phi)? + pair(&grad, &tf.grad_phi)?))
            .collect::<Result<Vec<_>>>()?;
        h1_pairs.push(pairs);
        let d = diffusion_form(s, &traj.params, &tests);
        if let Some((t0, d0)) = &prev {
            for (r, (a, b)) in running.iter_mut().zip(d0.iter().zip(&d)) {
                *r += 0.5 * (a + b) * (t - t0);
            }
        }
        diffusion.push(running.clone());
        prev = Some((*t, d));
    }
    Ok(LevelSeries { times: traj.save_times.clone(), states: traj.states.clone(), h1_pairs, diffusion })
}

fn gaps_between(level: &LevelSeries, reference: &LevelSeries, params: &SimParams) -> Result<[f64; 5]> {
    if level.times.len() != reference.times.len()
        || level.times.iter().zip(&reference.times).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs()))
    {
        return Err(Error::GridMismatch("levels were saved at different times".into()));
    }
    let g = *level.states[0].grid();
    let vol = g.cell_volume();
    let d = g.dim();
    let mut gaps = [0.0f64; 5];
    let mut l2_sq = Vec::new();
    let mut l1 = Vec::new();
    for (i, (s, r)) in level.states.iter().zip(&reference.states).enumerate() {
        let rr = restrict_scalar(&r.rho, &g)?;
        let rm = restrict_vector(&r.m, &g)?;
        let rs = FluidState { rho: rr, m: rm };
        let diff: f64 =
            s.rho.values().iter().zip(rs.rho.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * vol;
        gaps[0] = gaps[0].max(diff.sqrt());

        for (a, b) in level.h1_pairs[i].iter().zip(&reference.h1_pairs[i]) {
            gaps[1] = gaps[1].max((a - b).abs());
        }
        for (a, b) in level.diffusion[i].iter().zip(&reference.diffusion[i]) {
            gaps[4] = gaps[4].max((a - b).abs());
        }

        let (us, ur) = (velocity(s, params.eps_vac()), velocity(&rs, params.eps_vac()));
        let (mut q2, mut c1) = (0.0, 0.0);
        for j in 0..g.len() {
            let (ps, pr) = (s.rho.values()[j].max(0.0), rs.rho.values()[j].max(0.0));
            for a in 0..d {
                let dq = ps.sqrt() * us.component(a)[j] - pr.sqrt() * ur.component(a)[j];
                q2 += dq * dq;
            }
            let mut fro = 0.0;
            for a in 0..d {
                for b in 0..d {
                    let t = ps * us.component(a)[j] * us.component(b)[j]
                        - pr * ur.component(a)[j] * ur.component(b)[j];
                    fro += t * t;
                }
            }
            c1 += fro.sqrt();
        }
        l2_sq.push(q2 * vol);
        l1.push(c1 * vol);
    }
    for (i, w) in level.times.windows(2).enumerate() {
        let dt = w[1] - w[0];
        gaps[2] += 0.5 * (l2_sq[i] + l2_sq[i + 1]) * dt;
        gaps[3] += 0.5 * (l1[i] + l1[i + 1]) * dt;
    }
    gaps[2] = gaps[2].sqrt();
    Ok(gaps)
}

/// Integrates every level and the reference under the same Wiener path and
/// measures the five gaps of each level to the reference. Levels may live on
/// coarser nested grids; pointwise gaps compare against the injected reference.
pub fn stability_run(
    levels: &[(ScalarField, VectorField)],
    reference: &(ScalarField, VectorField),
    params: &SimParams,
    noise: &NoiseSpec,
    path: &WienerPath,
    save_every: usize,
) -> Result<ConvergenceReport> {
    if levels.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "stability run needs at least 3 levels, got {}",
            levels.len()
        )));
    }
    let schedule = SaveSchedule::EveryBase(save_every);
    let run = |data: &(ScalarField, VectorField)| -> Result<LevelSeries> {
        let g = *data.0.grid();
        let tr = simulate(&data.0, &data.1, params, &noise.build(g)?, path, &schedule)?;
        level_series(&tr)
    };
    let ref_series = run(reference)?;
    let results: Vec<Result<LevelSeries>> = levels.par_iter().map(run).collect();

    let mut report = ConvergenceReport {
        seed: noise.active.then_some(path.seed()),
        levels: levels.iter().map(|l| l.0.grid().n()).collect(),
        reference: reference.0.grid().n(),
        gaps: Vec::new(),
        rates: Vec::new(),
        decreasing: Vec::new(),
        failures: Vec::new(),
    };
    for (lvl, res) in levels.iter().zip(results) {
        let gaps = res.and_then(|s| gaps_between(&s, &ref_series, params));
        match gaps {
            Ok(g) => report.gaps.push(g),
            Err(e) => {
                report.failures.push(LevelFailure { n: lvl.0.grid().n(), error: e.to_string() });
                report.gaps.push([f64::NAN; 5]);
            }
        }
    }
    for k in 0..5 {
        let series: Vec<f64> = report.gaps.iter().map(|g| g[k]).collect();
        report.decreasing.push(series.windows(2).all(|w| w[1] < w[0]));
        let x: Vec<f64> = (0..series.len()).map(|i| 2f64.powi(i as i32)).collect();
        report.rates.push(crate::diagnostics::loglog_slope(&x, &series).map(|s| -s));
    }
    Ok(report)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{norm, NormSpec};
    use approx::assert_abs_diff_eq;

    fn params() -> SimParams {
        SimParams::new(2.0, 0.5).unwrap().with_final_time(0.1).unwrap()
    }

    fn smooth(g: Grid) -> (ScalarField, VectorField) {
        let rho = ScalarField::from_fn(g, |x| 1.0 + 0.2 * x[0].sin());
        let m = VectorField::from_fn(g, |x, _| 0.1 * x[0].cos()).scaled_by(&rho);
        (rho, m)
    }

    #[test]
    fn noise_free_ensemble_has_zero_variance() {
        let g = Grid::periodic(1, 32).unwrap();
        let (rho, m) = smooth(g);
        let cfg = EnsembleConfig::new(3, 10);
        let st = run_ensemble(&rho, &m, &params(), &NoiseModel::inactive(g), &cfg).unwrap();
        assert!(st.failed.is_empty());
        for mo in &st.moments {
            assert_eq!(mo.variance, 0.0, "{}", mo.quantity);
        }
    }

    #[test]
    fn equal_seeds_give_zero_width() {
        let g = Grid::periodic(1, 32).unwrap();
        let (rho, m) = smooth(g);
        let mut cfg = EnsembleConfig::new(2, 0);
        cfg.seeds = Some(vec![5, 5]);
        let noise = NoiseModel::profile(g, "sine", 0.5).unwrap();
        let st = run_ensemble(&rho, &m, &params(), &noise, &cfg).unwrap();
        assert_eq!(st.paths[0], st.paths[1]);
        assert!(st.moments.iter().all(|m| m.ci_half_width == 0.0));
    }

    #[test]
    fn pooling_ignores_seed_order() {
        let g = Grid::periodic(1, 16).unwrap();
        let (rho, m) = smooth(g);
        let noise = NoiseModel::profile(g, "sine", 0.5).unwrap();
        let mut a = EnsembleConfig::new(3, 0);
        a.seeds = Some(vec![3, 1, 2]);
        let mut b = a.clone();
        b.seeds = Some(vec![2, 3, 1]);
        let sa = run_ensemble(&rho, &m, &params(), &noise, &a).unwrap();
        let sb = run_ensemble(&rho, &m, &params(), &noise, &b).unwrap();
        assert_eq!(sa.moments, sb.moments);
    }

    #[test]
    fn too_few_paths_rejected() {
        assert!(EnsembleConfig::new(1, 0).validate().is_err());
    }

    fn synthetic(resolution: usize, mean: f64, ci: f64) -> EnsembleStats {
        let moments = QUANTITIES
            .iter()
            .map(|q| MomentEstimate {
                quantity: q.to_string(),
                p: 1.0,
                n: 16,
                mean,
                variance: 0.0,
                ci_half_width: ci,
            })
            .collect();
        EnsembleStats { resolution, paths: Vec::new(), failed: Vec::new(), moments, trajectories: Vec::new() }
    }

    #[test]
    fn bound_verdict_separates_growth_from_convergence() {
        let verdict = |means: [f64; 3], ci: f64| {
            let stats: Vec<_> = [32, 64, 128].iter().zip(means).map(|(&n, m)| synthetic(n, m, ci)).collect();
            uniform_bound_report(&stats, 1.0).unwrap().rows.iter().all(|r| r.bounded)
        };
        // Linear growth in n, far outside the intervals.
        assert!(!verdict([1.0, 2.0, 4.0], 0.01));
        // Logarithmic growth: constant increments.
        assert!(!verdict([1.0, 1.5, 2.0], 0.01));
        // Second-order convergence from below.
        assert!(verdict([0.9, 0.975, 0.994], 0.0));
        // Overlapping intervals.
        assert!(verdict([1.0, 1.1, 1.2], 0.2));
    }

    #[test]
    fn bound_report_needs_three_resolutions() {
        assert!(uniform_bound_report(&[], 1.0).is_err());
    }

    #[test]
    fn interpolation_is_sharp_for_constants() {
        let g = Grid::periodic(1, 16).unwrap();
        let path = WienerPath::generate(0, 0.1, 1e-2).unwrap();
        let tr = simulate(
            &ScalarField::constant(g, 1.7),
            &VectorField::zeros(g),
            &params(),
            &NoiseModel::inactive(g),
            &path,
            &SaveSchedule::AllSteps,
        )
        .unwrap();
        let r = interpolation_check(&tr);
        assert!(r.verdict);
        assert_abs_diff_eq!(r.a / r.bound, 1.0, epsilon = 1e-12);

        let vac = simulate(
            &ScalarField::zeros(g),
            &VectorField::zeros(g),
            &params(),
            &NoiseModel::inactive(g),
            &path,
            &SaveSchedule::AllSteps,
        )
        .unwrap();
        let r = interpolation_check(&vac);
        assert!(r.verdict && r.a == 0.0 && r.bound == 0.0);
    }

    #[test]
    fn mollifier_preserves_mass_and_positivity() {
        let g = Grid::periodic(1, 128).unwrap();
        let rho = ScalarField::from_fn(g, |x| if (x[0] - 3.0).abs() < 1.0 { 0.0 } else { 1.0 });
        let m = VectorField::zeros(g);
        let seq = mollified_sequence(&rho, &m, &halving_widths(0.2, 3), 1e-8).unwrap();
        for (r, _) in &seq {
            assert!(r.min() >= 0.0);
            assert_abs_diff_eq!(r.integral(), rho.integral(), epsilon = 1e-12);
        }
        // Plateau interior at least 4h from the edges stays exactly vacuum.
        let j = (3.0 / g.dx()).round() as usize;
        assert_eq!(seq[0].0.values()[j], 0.0);
    }

    #[test]
    fn mollifier_matches_gaussian_damping() {
        // Oracle: convolution damps sin x by exactly exp(-h²/2).
        let g = Grid::periodic(1, 4096).unwrap();
        let rho = ScalarField::from_fn(g, |x| 1.0 + 0.3 * x[0].sin());
        let widths = halving_widths(0.2, 4);
        let seq = mollified_sequence(&rho, &VectorField::zeros(g), &widths, 1e-8).unwrap();
        let dist: Vec<f64> = seq
            .iter()
            .map(|(r, _)| {
                norm(&r.zip_map(&rho, |a, b| a - b), NormSpec::l2())
            })
            .collect();
        for (d, h) in dist.iter().zip(&widths) {
            let exact = 0.3 * (1.0 - (-0.5 * h * h).exp()) * std::f64::consts::PI.sqrt();
            // Truncating the kernel at 4h shifts the damping by about 0.1%.
            assert!((d / exact - 1.0).abs() < 5e-3, "h = {h}: {d} vs {exact}");
        }
        for w in dist.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.98);
        }
    }

    #[test]
    fn zero_width_is_identity() {
        let g = Grid::periodic(2, 16).unwrap();
        let (rho, m) = {
            let r = ScalarField::from_fn(g, |x| 1.0 + 0.3 * (x[0] + x[1]).sin());
            (r.clone(), VectorField::from_fn(g, |x, a| (a as f64 + x[1]).cos()).scaled_by(&r))
        };
        let seq = mollified_sequence(&rho, &m, &[0.0, 1e-6], 1e-8).unwrap();
        assert_eq!(seq[0].0, rho);
        assert_eq!(seq[1].1, m);
    }

    #[test]
    fn restriction_is_injection() {
        let fine = Grid::periodic(2, 8).unwrap();
        let coarse = Grid::periodic(2, 4).unwrap();
        let f = ScalarField::from_fn(fine, |x| x[0] + 10.0 * x[1]);
        let c = restrict_scalar(&f, &coarse).unwrap();
        for j in 0..coarse.len() {
            let x = coarse.coords(j);
            assert_abs_diff_eq!(c.values()[j], x[0] + 10.0 * x[1], epsilon = 1e-12);
        }
        assert!(restrict_scalar(&c, &fine).is_err());
    }

    #[test]
    fn identical_levels_give_zero_report() {
        let g = Grid::periodic(1, 32).unwrap();
        let data = smooth(g);
        let path = WienerPath::generate(3, 0.05, 1e-2).unwrap();
        let levels = vec![data.clone(), data.clone(), data.clone()];
        let rep = stability_run(&levels, &data, &params(), &NoiseSpec::new("sine", 0.5), &path, 1).unwrap();
        for g in &rep.gaps {
            assert_eq!(g, &[0.0; 5]);
        }
        assert!(rep.failures.is_empty());
    }
}
