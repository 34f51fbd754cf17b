//! Run configuration: a strict TOML document with `[grid]`, `[model]`,
//! `[noise]`, `[time]` and `[experiment]` sections, all optional.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dynamics::SimParams;
use crate::error::{ConfigIssue, Error, Result};
use crate::experiments::{EnsembleConfig, NoiseSpec};
use crate::fields::{Grid, ScalarField, VectorField};
use crate::verify::{plateau_corpus, smooth_corpus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { dim: 1, n: 128, length: 2.0 * std::f64::consts::PI }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub gamma: f64,
    pub delta: f64,
    pub eps_vac: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { gamma: 2.0, delta: 0.5, eps_vac: SimParams::DEFAULT_EPS_VAC }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub active: bool,
    pub profile: String,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { active: true, profile: "sine".into(), amplitude: 0.5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    #[serde(rename = "T", alias = "t_final")]
    pub t_final: f64,
    /// Spacing of the base Wiener path; also caps the step.
    pub path_dt: f64,
    pub cfl: f64,
    pub visc_factor: f64,
    pub save_every: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            t_final: SimParams::DEFAULT_T,
            path_dt: SimParams::DEFAULT_DT_MAX,
            cfl: SimParams::DEFAULT_CFL,
            visc_factor: SimParams::DEFAULT_VISC_FACTOR,
            save_every: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Simulate,
    Ensemble,
    Stability,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// `smooth`, `plateau`, `rest` or `snapshot`.
    pub initial: String,
    pub snapshot: Option<PathBuf>,
    pub paths: usize,
    pub moment_orders: Vec<f64>,
    pub resolutions: Vec<usize>,
    pub levels: Vec<usize>,
    pub reference: usize,
    pub mollifier_width: f64,
    /// `smoke` or `desk`.
    pub scale: String,
    pub norms: Vec<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Simulate,
            initial: "smooth".into(),
            snapshot: None,
            paths: 16,
            moment_orders: vec![1.0, 2.0],
            resolutions: vec![32, 64, 128],
            levels: vec![16, 32, 64, 128],
            reference: 256,
            mollifier_width: 0.4,
            scale: "smoke".into(),
            norms: vec!["l2".into(), "linf".into(), "w-3,2".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub model: ModelSection,
    pub noise: NoiseSection,
    pub time: TimeSection,
    pub experiment: ExperimentSection,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key = …` inside `[section]`, if present.
fn line_of_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
        } else if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(text, s.start));
        Error::Config(vec![ConfigIssue { line, message: e.message().trim().to_string() }])
    })?;
    let issues = cfg.issues(text);
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(issues))
    }
}

impl RunConfig {
    /// Constraint violations, located in `text` when the key appears there.
    pub fn issues(&self, text: &str) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut push = |section: &str, key: &str, message: String| {
            out.push(ConfigIssue { line: line_of_key(text, section, key), message });
        };
        let g = &self.grid;
        if !(1..=3).contains(&g.dim) {
            push("grid", "dim", format!("dim must be 1, 2 or 3, got {}", g.dim));
        }
        if g.n < 2 || !g.n.is_power_of_two() {
            push("grid", "n", format!("n must be a power of two >= 2, got {}", g.n));
        }
        if !(g.length > 0.0 && g.length.is_finite()) {
            push("grid", "length", format!("length must be positive, got {}", g.length));
        }
        let m = &self.model;
        if !(m.gamma > 1.0 && m.gamma < 3.0) {
            push("model", "gamma", format!("gamma must lie in (1,3), got {}", m.gamma));
        }
        if !(m.delta > 0.0 && m.delta < 1.0) {
            push("model", "delta", format!("delta must lie in (0,1), got {}", m.delta));
        }
        if !(m.eps_vac > 0.0 && m.eps_vac.is_finite()) {
            push("model", "eps_vac", format!("eps_vac must be positive, got {}", m.eps_vac));
        }
        if !["constant", "sine", "perturbed", "tilted"].contains(&self.noise.profile.as_str()) {
            push(
                "noise",
                "profile",
                format!("unknown profile `{}` (constant|sine|perturbed|tilted)", self.noise.profile),
            );
        }
        if !self.noise.amplitude.is_finite() {
            push("noise", "amplitude", "amplitude must be finite".into());
        }
        let t = &self.time;
        if !(t.t_final >= 0.0 && t.t_final.is_finite()) {
            push("time", "T", format!("T must be non-negative, got {}", t.t_final));
        }
        if !(t.path_dt > 0.0 && t.path_dt.is_finite()) {
            push("time", "path_dt", format!("path_dt must be positive, got {}", t.path_dt));
        }
        if !(t.cfl > 0.0 && t.cfl <= 1.0) {
            push("time", "cfl", format!("cfl must lie in (0,1], got {}", t.cfl));
        }
        if !(t.visc_factor > 0.0 && t.visc_factor <= 1.0) {
            push("time", "visc_factor", format!("visc_factor must lie in (0,1], got {}", t.visc_factor));
        }
        if t.save_every == 0 {
            push("time", "save_every", "save_every must be >= 1".into());
        }
        let e = &self.experiment;
        match e.initial.as_str() {
            "smooth" | "plateau" | "rest" => {}
            "snapshot" if e.snapshot.is_some() => {}
            "snapshot" => push("experiment", "initial", "initial = \"snapshot\" needs a snapshot path".into()),
            other => push(
                "experiment",
                "initial",
                format!("unknown initial data `{other}` (smooth|plateau|rest|snapshot)"),
            ),
        }
        if e.paths < 2 && e.kind == ExperimentKind::Ensemble {
            push("experiment", "paths", format!("an ensemble needs at least 2 paths, got {}", e.paths));
        }
        if e.moment_orders.iter().any(|p| !(p.is_finite() && *p >= 1.0)) {
            push("experiment", "moment_orders", "moment orders must be finite and >= 1".into());
        }
        for (key, list) in [("resolutions", &e.resolutions), ("levels", &e.levels)] {
            if list.iter().any(|n| *n < 2 || !n.is_power_of_two()) {
                push("experiment", key, format!("{key} must be powers of two >= 2"));
            }
        }
        if e.levels.iter().any(|n| *n > e.reference || e.reference % n != 0) {
            push("experiment", "reference", "reference must be a multiple of every level".into());
        }
        if !(e.mollifier_width >= 0.0 && e.mollifier_width.is_finite()) {
            push("experiment", "mollifier_width", "mollifier_width must be non-negative".into());
        }
        if !["smoke", "desk"].contains(&e.scale.as_str()) {
            push("experiment", "scale", format!("scale must be smoke or desk, got `{}`", e.scale));
        }
        for name in &e.norms {
            if let Err(err) = crate::fields::NormSpec::parse(name) {
                push("experiment", "norms", err.to_string());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues("");
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.dim, self.grid.n, self.grid.length)
    }

    pub fn params(&self) -> Result<SimParams> {
        SimParams::new(self.model.gamma, self.model.delta)?
            .with_eps_vac(self.model.eps_vac)?
            .with_stability(self.time.cfl, self.time.visc_factor)?
            .with_final_time(self.time.t_final)?
            .with_dt_max(self.time.path_dt)
    }

    pub fn noise(&self) -> NoiseSpec {
        if self.noise.active {
            NoiseSpec::new(&self.noise.profile, self.noise.amplitude)
        } else {
            NoiseSpec::inactive()
        }
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        let mut cfg = EnsembleConfig::new(self.experiment.paths, self.noise.seed);
        cfg.moment_orders = self.experiment.moment_orders.clone();
        cfg.resolutions = self.experiment.resolutions.clone();
        cfg.path_dt = self.time.path_dt;
        cfg.save_every = self.time.save_every;
        cfg
    }

    /// Named initial data on `grid`. Profiles are laid out for a `2π` box
    /// and rescaled to the configured length.
    pub fn initial_data(&self, grid: Grid) -> Result<(ScalarField, VectorField)> {
        let e = &self.experiment;
        let on_unit_box = |f: fn(Grid) -> (ScalarField, VectorField)| -> Result<_> {
            let reference = Grid::periodic(grid.dim(), grid.n())?;
            let (rho, m) = f(reference);
            Ok((
                ScalarField::from_values(grid, rho.into_values())?,
                VectorField::from_components(grid, m.into_components())?,
            ))
        };
        match e.initial.as_str() {
            "smooth" => on_unit_box(smooth_corpus),
            "plateau" => on_unit_box(plateau_corpus),
            "rest" => Ok((ScalarField::constant(grid, 1.0), VectorField::zeros(grid))),
            "snapshot" => {
                let path = e.snapshot.as_ref().ok_or_else(|| {
                    Error::Config(vec![ConfigIssue { line: None, message: "missing snapshot path".into() }])
                })?;
                let snap = crate::snapshot::read_snapshot_into(path, &grid)?;
                Ok((snap.state.rho, snap.state.m))
            }
            other => Err(Error::Config(vec![ConfigIssue {
                line: None,
                message: format!("unknown initial data `{other}`"),
            }])),
        }
    }

    /// Effective configuration with every default filled in.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config is serialisable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn issues(text: &str) -> Vec<ConfigIssue> {
        match parse_config(text) {
            Err(Error::Config(v)) => v,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_config_fills_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!(cfg.echo().contains("gamma = 2.0"));
        assert_eq!(parse_config(&cfg.echo()).unwrap(), cfg);
    }

    #[test]
    fn gamma_bounds_are_open() {
        for g in ["1.0", "3.0", "3.5"] {
            let v = issues(&format!("[model]\ngamma = {g}\n"));
            assert_eq!(v.len(), 1);
            assert_eq!(v[0].line, Some(2));
            assert!(v[0].message.contains("gamma must lie in (1,3)"), "{}", v[0].message);
        }
    }

    #[test]
    fn delta_bounds_are_open() {
        let v = issues("[grid]\nn = 64\n\n[model]\ndelta = 1.0\n");
        assert_eq!(v[0].line, Some(5));
        assert!(v[0].message.contains("delta must lie in (0,1)"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let v = issues("[grid]\nn = 64\nwidth = 3\n");
        assert_eq!(v[0].line, Some(3));
        assert!(v[0].message.contains("width"), "{}", v[0].message);
        assert!(!issues("[gird]\n").is_empty());
    }

    #[test]
    fn type_mismatch_is_located() {
        let v = issues("[model]\n\ngamma = \"two\"\n");
        assert_eq!(v[0].line, Some(3));
    }

    #[test]
    fn several_violations_are_collected() {
        let v = issues("[grid]\nn = 100\n[time]\ncfl = 2.0\nsave_every = 0\n");
        assert_eq!(v.len(), 3);
        assert_eq!(v.iter().map(|i| i.line.unwrap()).collect::<Vec<_>>(), vec![2, 4, 5]);
    }

    #[test]
    fn parsed_config_builds_a_run() {
        let cfg = parse_config(
            "[grid]\nn = 32\n[time]\nT = 0.1\n[noise]\nprofile = \"tilted\"\n[experiment]\ninitial = \"plateau\"\n",
        )
        .unwrap();
        let p = cfg.params().unwrap();
        assert_eq!(p.t_final(), 0.1);
        let (rho, m) = cfg.initial_data(cfg.grid().unwrap()).unwrap();
        assert_eq!(rho.grid().n(), 32);
        assert_eq!(m.component(0)[16], 0.0);
    }
}
