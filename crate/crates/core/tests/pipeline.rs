use sns_core::config::parse_config;
use sns_core::diagnostics::{energy_balance_residual, weak_form_residual, TestFunctionSet};
use sns_core::dynamics::NoiseModel;
use sns_core::experiments::{run_ensemble, stability_run, EnsembleConfig, NoiseSpec};
use sns_core::fields::{Grid, ScalarField, VectorField};
use sns_core::integrator::{simulate, SaveSchedule, WienerPath};
use sns_core::snapshot::{read_snapshot_into, write_snapshot, Snapshot};
use sns_core::verify::{plateau_corpus, stability_levels};

#[test]
fn config_to_snapshot_and_back() {
    let cfg = parse_config("[grid]\nn = 32\n[time]\nT = 0.1\nsave_every = 2\n").unwrap();
    let grid = cfg.grid().unwrap();
    let params = cfg.params().unwrap();
    let (rho, m) = cfg.initial_data(grid).unwrap();
    let path = WienerPath::generate(cfg.noise.seed, params.t_final(), cfg.time.path_dt).unwrap();
    let noise = cfg.noise().build(grid).unwrap();
    let tr = simulate(&rho, &m, &params, &noise, &path, &SaveSchedule::EveryBase(2)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("last.snsf");
    let snap = Snapshot { gamma: params.gamma(), t: tr.final_time(), state: tr.last().clone() };
    write_snapshot(&snap, &file).unwrap();
    let back = read_snapshot_into(&file, &grid).unwrap();
    assert_eq!(back, snap);

    // Restart from the snapshot through the config.
    let text = format!(
        "[grid]\nn = 32\n[experiment]\ninitial = \"snapshot\"\nsnapshot = {:?}\n",
        file.to_str().unwrap()
    );
    let cfg2 = parse_config(&text).unwrap();
    let (rho2, m2) = cfg2.initial_data(grid).unwrap();
    assert_eq!((rho2, m2), (snap.state.rho.clone(), snap.state.m.clone()));
    assert!(parse_config(&text.replace("n = 32", "n = 64")).unwrap().initial_data(Grid::periodic(1, 64).unwrap()).is_err());
}

#[test]
fn two_dimensional_run_balances() {
    let g = Grid::periodic(2, 16).unwrap();
    let p = sns_core::dynamics::SimParams::new(1.5, 0.3).unwrap().with_final_time(0.1).unwrap();
    let rho = ScalarField::from_fn(g, |x| 1.0 + 0.2 * (x[0].sin() * x[1].cos()));
    let m = VectorField::from_fn(g, |x, a| 0.05 * if a == 0 { x[1].sin() } else { x[0].cos() }).scaled_by(&rho);
    let noise = NoiseModel::inactive(g);
    let path = WienerPath::generate(0, 0.1, 1e-2).unwrap();
    let tr = simulate(&rho, &m, &p, &noise, &path, &SaveSchedule::AllSteps).unwrap();
    let res = energy_balance_residual(&tr);
    assert!(res.max_abs < 1e-2 * tr.records[0].energy, "{}", res.max_abs);
    let weak = weak_form_residual(&tr, &TestFunctionSet::standard(g), &noise).unwrap();
    assert!(weak.max_r1[0] < 1e-12 && weak.max_r2[0] < 1e-12);
    assert!((tr.records.last().unwrap().mass - tr.records[0].mass).abs() < 1e-12);
}

#[test]
fn vacuum_plateau_stays_vacuum_compatible() {
    let g = Grid::periodic(1, 64).unwrap();
    let (rho, m) = plateau_corpus(g);
    let p = sns_core::dynamics::SimParams::new(2.0, 0.5).unwrap().with_final_time(0.2).unwrap();
    let path = WienerPath::generate(4, 0.2, 1e-2).unwrap();
    let noise = NoiseModel::profile(g, "sine", 0.5).unwrap();
    let tr = simulate(&rho, &m, &p, &noise, &path, &SaveSchedule::EveryBase(5)).unwrap();
    for s in &tr.states {
        assert!(s.rho.min() >= 0.0);
        for (r, mv) in s.rho.values().iter().zip(s.m.component(0)) {
            if *r <= p.eps_vac() {
                assert!(mv.abs() <= p.eps_vac().sqrt(), "{mv}");
            }
        }
    }
}

#[test]
fn ensemble_is_deterministic_per_seed() {
    let g = Grid::periodic(1, 16).unwrap();
    let p = sns_core::dynamics::SimParams::new(2.0, 0.5).unwrap().with_final_time(0.1).unwrap();
    let rho = ScalarField::constant(g, 1.0);
    let m = VectorField::zeros(g);
    let noise = NoiseModel::profile(g, "sine", 0.5).unwrap();
    let cfg = EnsembleConfig::new(4, 9);
    let a = run_ensemble(&rho, &m, &p, &noise, &cfg).unwrap();
    let b = run_ensemble(&rho, &m, &p, &noise, &cfg).unwrap();
    assert_eq!(a.paths, b.paths);
    assert_eq!(a.paths.iter().map(|p| p.seed).collect::<Vec<_>>(), vec![9, 10, 11, 12]);
}

#[test]
fn stability_report_serialises() {
    let p = sns_core::dynamics::SimParams::new(2.0, 0.5).unwrap().with_final_time(0.1).unwrap();
    let (levels, reference) =
        stability_levels(|g| Ok(plateau_corpus(g)), Grid::periodic(1, 64).unwrap(), &[8, 16, 32], 0.4, p.eps_vac())
            .unwrap();
    let path = WienerPath::generate(2, 0.1, 1e-2).unwrap();
    let rep = stability_run(&levels, &reference, &p, &NoiseSpec::new("sine", 0.3), &path, 1).unwrap();
    assert_eq!(rep.levels, vec![8, 16, 32]);
    assert!(rep.gaps.iter().flatten().all(|g| *g >= 0.0));
    let dir = tempfile::tempdir().unwrap();
    sns_core::experiments::write_json(&rep, &dir.path().join("r.json")).unwrap();
    rep.write_csv(&dir.path().join("r.csv")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
