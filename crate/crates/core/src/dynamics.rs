//! Model state, vacuum-safe derived quantities and the drift/noise
//! coefficients of the barotropic system
//!
//! ```text
//! dρ + div(ρu) dt = 0
//! d(ρu) + [div(ρu⊗u) − div(ρ∇u) + ∇ρ^γ] dt = ρ f dW
//! ```
//!
//! Both conservation laws use local Lax–Friedrichs face fluxes whose
//! dissipation acts on the jump between minmod-limited reconstructions, so it
//! is first order at extrema and second order on smooth monotone data. The viscous
//! term is assembled from face fluxes `ρ_face·(u_{j+1} − u_j)/dx`, so that
//! testing it against `u` gives exactly `−Σ_faces ρ_face |Δu/dx|² dx^d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{gradient, Grid, ScalarField, VectorField};

/// Physical and numerical constants of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    gamma: f64,
    delta: f64,
    eps_vac: f64,
    cfl: f64,
    visc_factor: f64,
    t_final: f64,
    dt_max: f64,
}

impl SimParams {
    pub const DEFAULT_EPS_VAC: f64 = 1e-8;
    pub const DEFAULT_CFL: f64 = 0.4;
    pub const DEFAULT_VISC_FACTOR: f64 = 0.5;
    pub const DEFAULT_T: f64 = 0.5;
    pub const DEFAULT_DT_MAX: f64 = 1e-2;

    /// Pressure exponent `gamma ∈ (1, 3)` and Mellet–Vasseur exponent `delta ∈ (0, 1)`;
    /// the remaining constants take their defaults.
    pub fn new(gamma: f64, delta: f64) -> Result<Self> {
        let p = Self {
            gamma,
            delta,
            eps_vac: Self::DEFAULT_EPS_VAC,
            cfl: Self::DEFAULT_CFL,
            visc_factor: Self::DEFAULT_VISC_FACTOR,
            t_final: Self::DEFAULT_T,
            dt_max: Self::DEFAULT_DT_MAX,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.gamma > 1.0 && self.gamma < 3.0) {
            return bad(format!("gamma must lie in (1,3), got {}", self.gamma));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0,1), got {}", self.delta));
        }
        if !(self.eps_vac > 0.0 && self.eps_vac.is_finite()) {
            return bad(format!("eps_vac must be positive, got {}", self.eps_vac));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl must lie in (0,1], got {}", self.cfl));
        }
        if !(self.visc_factor > 0.0 && self.visc_factor <= 1.0) {
            return bad(format!("visc_factor must lie in (0,1], got {}", self.visc_factor));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad(format!("final time must be non-negative, got {}", self.t_final));
        }
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            return bad(format!("dt_max must be positive, got {}", self.dt_max));
        }
        Ok(())
    }

    pub fn with_eps_vac(mut self, eps_vac: f64) -> Result<Self> {
        self.eps_vac = eps_vac;
        self.validate().map(|_| self)
    }

    pub fn with_stability(mut self, cfl: f64, visc_factor: f64) -> Result<Self> {
        self.cfl = cfl;
        self.visc_factor = visc_factor;
        self.validate().map(|_| self)
    }

    /// Bypasses the `(0, 1]` bounds on the step-size factors. Only meant for
    /// negative controls that must provoke an unstable run.
    pub fn with_unchecked_stability(mut self, cfl: f64, visc_factor: f64) -> Self {
        self.cfl = cfl;
        self.visc_factor = visc_factor;
        self
    }

    pub fn with_final_time(mut self, t_final: f64) -> Result<Self> {
        self.t_final = t_final;
        self.validate().map(|_| self)
    }

    pub fn with_dt_max(mut self, dt_max: f64) -> Result<Self> {
        self.dt_max = dt_max;
        self.validate().map(|_| self)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn eps_vac(&self) -> f64 {
        self.eps_vac
    }

    pub fn cfl(&self) -> f64 {
        self.cfl
    }

    pub fn visc_factor(&self) -> f64 {
        self.visc_factor
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn dt_max(&self) -> f64 {
        self.dt_max
    }

    /// Momentum bound on vacuum nodes, `√eps_vac`.
    pub fn vacuum_momentum_tol(&self) -> f64 {
        self.eps_vac.sqrt()
    }
}

/// Density and momentum at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub rho: ScalarField,
    pub m: VectorField,
}

impl FluidState {
    /// Checks grids agree and the density is non-negative.
    pub fn new(rho: ScalarField, m: VectorField) -> Result<Self> {
        rho.grid().check_same(m.grid())?;
        if let Some((node, &value)) = rho.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::NegativeDensity { node, value });
        }
        if !rho.is_finite() || !m.is_finite() {
            return Err(Error::NonFinite("fluid state".into()));
        }
        Ok(Self { rho, m })
    }

    pub fn at_rest(rho: ScalarField) -> Result<Self> {
        let m = VectorField::zeros(*rho.grid());
        Self::new(rho, m)
    }

    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    pub fn mass(&self) -> f64 {
        self.rho.integral()
    }

    pub fn momentum(&self) -> Vec<f64> {
        self.m.integral()
    }
}

/// Auxiliary variables `ϑ = √ρ`, `q = √ρ u`, `r = ρ^{1/(2+δ)} u` and `u` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedFields {
    pub u: VectorField,
    pub theta: ScalarField,
    pub q: VectorField,
    pub r: VectorField,
}

/// Stochastic forcing `ρ f dW` with a time-independent profile `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    f: VectorField,
    active: bool,
}

impl NoiseModel {
    pub fn new(f: VectorField) -> Self {
        Self { f, active: true }
    }

    pub fn inactive(grid: Grid) -> Self {
        Self { f: VectorField::zeros(grid), active: false }
    }

    /// Named profiles: `constant` (`amp·e₁`), `sine` (`amp·sin x₁ e₁`),
    /// `perturbed` (`amp·(1 + ½ sin x₁) e₁`), `tilted` (`amp·(1 + 0.1 sin x₁) e₁`).
    pub fn profile(grid: Grid, name: &str, amplitude: f64) -> Result<Self> {
        let shape: fn(f64) -> f64 = match name {
            "constant" => |_| 1.0,
            "sine" => f64::sin,
            "perturbed" => |x| 1.0 + 0.5 * x.sin(),
            "tilted" => |x| 1.0 + 0.1 * x.sin(),
            other => {
                return Err(Error::InvalidParameter(format!("unknown force profile `{other}`")))
            }
        };
        let scale = 2.0 * std::f64::consts::PI / grid.length();
        let f = VectorField::from_fn(grid, |x, a| {
            if a == 0 {
                amplitude * shape(x[0] * scale)
            } else {
                0.0
            }
        });
        Ok(Self::new(f))
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn force(&self) -> &VectorField {
        &self.f
    }
}

/// Desingularised velocity `u = m ρ / (ρ² + ε²)`; vanishes continuously on vacuum.
pub fn velocity(state: &FluidState, eps_vac: f64) -> VectorField {
    let rho = state.rho.values();
    let eps2 = eps_vac * eps_vac;
    let w: Vec<f64> = rho.iter().map(|&r| r / (r * r + eps2)).collect();
    let comps = state
        .m
        .components()
        .iter()
        .map(|c| c.iter().zip(&w).map(|(m, w)| m * w).collect())
        .collect();
    VectorField::from_raw(*state.grid(), comps)
}

pub fn derived(state: &FluidState, params: &SimParams) -> Result<DerivedFields> {
    if let Some((node, &value)) = state.rho.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeDensity { node, value });
    }
    let u = velocity(state, params.eps_vac);
    let theta = state.rho.map(f64::sqrt);
    let q = u.scaled_by(&theta);
    let r = u.scaled_by(&state.rho.map(|v| v.powf(1.0 / (2.0 + params.delta))));
    Ok(DerivedFields { u, theta, q, r })
}

/// `p = ρ^γ`; negative round-off densities are treated as vacuum.
pub fn pressure(rho: &ScalarField, gamma: f64) -> ScalarField {
    rho.map(|r| r.max(0.0).powf(gamma))
}

#[inline]
fn sound_speed(rho: f64, gamma: f64) -> f64 {
    (gamma * rho.max(0.0).powf(gamma - 1.0)).sqrt()
}

/// Harmonic mean, zero when either side is vacuum. Bounded by twice the
/// smaller density, which keeps the explicit viscous step bounded near vacuum.
#[inline]
pub(crate) fn face_density(a: f64, b: f64) -> f64 {
    let (a, b) = (a.max(0.0), b.max(0.0));
    let s = a + b;
    if s > 0.0 {
        2.0 * a * b / s
    } else {
        0.0
    }
}

/// Velocity, per-node LLF wave speed and mass flux `ρu`.
struct Kinematics {
    u: VectorField,
    speed: Vec<f64>,
    mass_flux: Vec<Vec<f64>>,
}

fn kinematics(state: &FluidState, params: &SimParams) -> Kinematics {
    let u = velocity(state, params.eps_vac);
    let rho = state.rho.values();
    let speed = (0..rho.len())
        .map(|j| u.norm_sq_at(j).sqrt() + sound_speed(rho[j], params.gamma))
        .collect();
    let mass_flux = u
        .components()
        .iter()
        .map(|c| c.iter().zip(rho).map(|(u, r)| u * r.max(0.0)).collect())
        .collect();
    Kinematics { u, speed, mass_flux }
}

#[inline]
fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Jump `U_R − U_L` across face `j+½` between minmod-limited linear
/// reconstructions from nodes `j−1, j, j+1, j+2`. It has the sign of
/// `U_{j+1} − U_j` and at most its size, and is `O(dx²)` on smooth data.
#[inline]
pub(crate) fn limited_jump(um: f64, u0: f64, u1: f64, u2: f64) -> f64 {
    let d = u1 - u0;
    d - 0.5 * (minmod(d, u0 - um) + minmod(u2 - u1, d))
}

/// Divergence of a face flux stored at the lower node of each face.
fn accumulate_face_divergence(g: &Grid, axis: usize, face: &[f64], sign: f64, out: &mut [f64]) {
    let inv = sign / g.dx();
    for (j, o) in out.iter_mut().enumerate() {
        *o += (face[j] - face[g.backward(j, axis)]) * inv;
    }
}

fn continuity_from(state: &FluidState, kin: &Kinematics) -> Vec<f64> {
    let g = *state.grid();
    let rho = state.rho.values();
    let mut out = vec![0.0; g.len()];
    let mut face = vec![0.0; g.len()];
    for a in 0..g.dim() {
        let flux = &kin.mass_flux[a];
        for (j, fj) in face.iter_mut().enumerate() {
            let k = g.forward(j, a);
            let speed = kin.speed[j].max(kin.speed[k]);
            let jump = limited_jump(rho[g.backward(j, a)], rho[j], rho[k], rho[g.forward(k, a)]);
            *fj = 0.5 * (flux[j] + flux[k]) - 0.5 * speed * jump;
        }
        accumulate_face_divergence(&g, a, &face, -1.0, &mut out);
    }
    out
}

/// `−div F` for the LLF mass flux `F`.
pub fn continuity_rhs(state: &FluidState, params: &SimParams) -> ScalarField {
    let kin = kinematics(state, params);
    ScalarField::from_raw(*state.grid(), continuity_from(state, &kin))
}

/// The three contributions to the deterministic momentum drift.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftParts {
    /// `−div(ρu⊗u)`, LLF flux form.
    pub convective: VectorField,
    /// `div(ρ∇u)`, face-flux form.
    pub viscous: VectorField,
    /// `−∇ρ^γ`, central.
    pub pressure: VectorField,
}

impl DriftParts {
    pub fn total(&self) -> VectorField {
        self.convective.lin_comb(1.0, &self.viscous, 1.0).lin_comb(1.0, &self.pressure, 1.0)
    }
}

fn drift_from(state: &FluidState, kin: &Kinematics, params: &SimParams) -> DriftParts {
    let g = *state.grid();
    let d = g.dim();
    let rho = state.rho.values();
    let inv_dx = 1.0 / g.dx();
    let mut convective = vec![vec![0.0; g.len()]; d];
    let mut viscous = vec![vec![0.0; g.len()]; d];
    let mut face = vec![0.0; g.len()];

    for a in 0..d {
        let ua = kin.u.component(a);
        for i in 0..d {
            let mi = state.m.component(i);
            for (j, fj) in face.iter_mut().enumerate() {
                let k = g.forward(j, a);
                let speed = kin.speed[j].max(kin.speed[k]);
                let jump = limited_jump(mi[g.backward(j, a)], mi[j], mi[k], mi[g.forward(k, a)]);
                *fj = 0.5 * (mi[j] * ua[j] + mi[k] * ua[k]) - 0.5 * speed * jump;
            }
            accumulate_face_divergence(&g, a, &face, -1.0, &mut convective[i]);

            let ui = kin.u.component(i);
            for (j, fj) in face.iter_mut().enumerate() {
                let k = g.forward(j, a);
                *fj = face_density(rho[j], rho[k]) * (ui[k] - ui[j]) * inv_dx;
            }
            accumulate_face_divergence(&g, a, &face, 1.0, &mut viscous[i]);
        }
    }

    let mut grad_p = gradient(&pressure(&state.rho, params.gamma));
    for c in 0..d {
        grad_p.component_mut(c).iter_mut().for_each(|v| *v = -*v);
    }
    DriftParts {
        convective: VectorField::from_raw(g, convective),
        viscous: VectorField::from_raw(g, viscous),
        pressure: grad_p,
    }
}

pub fn momentum_drift_parts(state: &FluidState, params: &SimParams) -> DriftParts {
    let kin = kinematics(state, params);
    drift_from(state, &kin, params)
}

pub fn momentum_drift(state: &FluidState, params: &SimParams) -> VectorField {
    momentum_drift_parts(state, params).total()
}

/// Both right-hand sides from a single velocity reconstruction.
pub fn rhs(state: &FluidState, params: &SimParams) -> (ScalarField, VectorField) {
    let kin = kinematics(state, params);
    let drho = continuity_from(state, &kin);
    let dm = drift_from(state, &kin, params).total();
    (ScalarField::from_raw(*state.grid(), drho), dm)
}

/// `ρ f`, the diffusion coefficient of the momentum equation.
pub fn noise_coefficient(state: &FluidState, noise: &NoiseModel) -> VectorField {
    if !noise.active {
        return VectorField::zeros(*state.grid());
    }
    noise.f.scaled_by(&state.rho)
}

/// Face-based `Σ_faces ρ_face |Δu/dx|² dx^d`, the dissipation produced by the
/// viscous assembly of [`momentum_drift_parts`].
pub fn viscous_dissipation(rho: &ScalarField, u: &VectorField) -> f64 {
    weighted_face_dissipation(rho, u, |_, _| 1.0)
}

/// `Σ_faces ρ_face w_face |Δu/dx|² dx^d` with a caller-supplied face weight.
pub(crate) fn weighted_face_dissipation(
    rho: &ScalarField,
    u: &VectorField,
    weight: impl Fn(usize, usize) -> f64,
) -> f64 {
    let g = *rho.grid();
    let r = rho.values();
    let inv_dx = 1.0 / g.dx();
    let mut total = 0.0;
    for a in 0..g.dim() {
        for j in 0..g.len() {
            let k = g.forward(j, a);
            let rf = face_density(r[j], r[k]);
            if rf == 0.0 {
                continue;
            }
            let du2: f64 = u
                .components()
                .iter()
                .map(|c| {
                    let d = (c[k] - c[j]) * inv_dx;
                    d * d
                })
                .sum();
            total += rf * weight(j, k) * du2;
        }
    }
    total * g.cell_volume()
}

/// `4∫|∇√ρ|²`, the vacuum-safe form of `∫ρ|∇log ρ|²`.
pub fn fisher_information(rho: &ScalarField) -> f64 {
    let grad = gradient(&rho.map(|r| r.max(0.0).sqrt()));
    let g = *rho.grid();
    4.0 * (0..g.len()).map(|j| grad.norm_sq_at(j)).sum::<f64>() * g.cell_volume()
}

/// Largest ratio `ρ_face / ρ_j` over non-vacuum nodes and their faces: the
/// effective diffusivity of `u` under the explicit viscous update.
pub(crate) fn max_effective_diffusivity(rho: &ScalarField, eps_vac: f64) -> f64 {
    let g = *rho.grid();
    let r = rho.values();
    let mut kappa: f64 = 0.0;
    for j in 0..g.len() {
        if r[j] <= eps_vac {
            continue;
        }
        for a in 0..g.dim() {
            for k in [g.forward(j, a), g.backward(j, a)] {
                kappa = kappa.max(face_density(r[j], r[k]) / r[j]);
            }
        }
    }
    kappa
}

/// Initial-data checks and the energy-class integrals of the data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub min_rho: f64,
    /// First node with negative density, if any.
    pub negative_at: Option<usize>,
    /// Largest `|m⁰|` over `{ρ⁰ ≤ eps_vac}` and where it occurs.
    pub max_vacuum_momentum: f64,
    pub vacuum_violation_at: Option<usize>,
    /// `∫ρ⁰|u⁰|²`.
    pub kinetic: f64,
    /// `∫ρ⁰|∇log ρ⁰|²`, evaluated as `4∫|∇√ρ⁰|²`.
    pub fisher: f64,
    /// `∫(ρ⁰)^γ`.
    pub pressure: f64,
    /// `(2+δ)^{-1}∫ρ⁰|u⁰|^{2+δ}`.
    pub mv_energy: f64,
    pub nonnegative: bool,
    pub vacuum_compatible: bool,
    pub finite: bool,
    pub passed: bool,
}

pub fn validate_initial(
    rho0: &ScalarField,
    m0: &VectorField,
    params: &SimParams,
) -> Result<ValidationReport> {
    rho0.grid().check_same(m0.grid())?;
    let g = *rho0.grid();
    let r = rho0.values();
    let min_rho = rho0.min();
    let negative_at = r.iter().position(|&v| v < 0.0);
    let finite = rho0.is_finite() && m0.is_finite();

    let mut max_vacuum_momentum: f64 = 0.0;
    let mut vacuum_violation_at = None;
    for j in 0..g.len() {
        if r[j] <= params.eps_vac {
            let mag = m0.norm_sq_at(j).sqrt();
            if mag > max_vacuum_momentum {
                max_vacuum_momentum = mag;
                if mag > params.vacuum_momentum_tol() && vacuum_violation_at.is_none() {
                    vacuum_violation_at = Some(j);
                }
            }
        }
    }

    let clipped = rho0.map(|v| v.max(0.0));
    let state = FluidState { rho: clipped.clone(), m: m0.clone() };
    let u = velocity(&state, params.eps_vac);
    let vol = g.cell_volume();
    let (mut kinetic, mut mv) = (0.0, 0.0);
    for j in 0..g.len() {
        let speed = u.norm_sq_at(j).sqrt();
        kinetic += clipped.values()[j] * speed * speed;
        mv += clipped.values()[j] * speed.powf(2.0 + params.delta);
    }
    let nonnegative = negative_at.is_none();
    let vacuum_compatible = vacuum_violation_at.is_none();
    Ok(ValidationReport {
        min_rho,
        negative_at,
        max_vacuum_momentum,
        vacuum_violation_at,
        kinetic: kinetic * vol,
        fisher: fisher_information(&clipped),
        pressure: pressure(&clipped, params.gamma).integral(),
        mv_energy: mv * vol / (2.0 + params.delta),
        nonnegative,
        vacuum_compatible,
        finite,
        passed: nonnegative && vacuum_compatible && finite,
    })
}
