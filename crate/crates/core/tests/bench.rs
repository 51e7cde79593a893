use netsym::bench::{
    check_recovery, extrapolation_check, generate_data, parse_pair, run_benchmark, sweep_dt, sweep_noise, trajectory_mse, write_report,
    BenchmarkReport, Config, DataKey, GraphModel, Method, SimScore, TrialStore,
};
use netsym::dynamics::DynamicsKind;

fn small() -> Config {
    let mut c = Config::default();
    c.graph.nodes = 30;
    c.dynamics.systems = vec![DynamicsKind::Kur, DynamicsKind::Sis];
    c.bench.seeds = 2;
    c.bench.methods = vec![Method::Sindy, Method::TpSindy];
    c.bench.bootstrap = 200;
    c
}

fn key(kind: DynamicsKind, seed: usize) -> DataKey {
    let c = small();
    DataKey { dynamics: kind, graph_model: GraphModel::Ba, graph_id: c.graph.id(GraphModel::Ba), seed, snr_db: None, dt: None }
}

#[test]
fn zero_seeds_give_an_empty_report() {
    let mut c = small();
    c.bench.seeds = 0;
    let r = run_benchmark(&c, None).unwrap();
    assert!(r.trials.is_empty() && r.aggregates.is_empty());
    let v = r.to_json();
    for field in ["name", "config", "trials", "aggregates", "environment"] {
        assert!(v.get(field).is_some(), "missing {field}");
    }
}

#[test]
fn interrupted_sweeps_resume_only_missing_trials() {
    let dir = tempfile::tempdir().unwrap();
    let c = small();
    let store = TrialStore::open(dir.path()).unwrap();
    let first = run_benchmark(&c, Some(&store)).unwrap();
    assert_eq!(first.trials.len(), 2 * 2 * 2);

    let mut marked = first.trials[0].clone();
    marked.wall_time = -42.0;
    store.put(&marked).unwrap();
    let dropped = first.trials[3].key.clone();
    std::fs::remove_file(dir.path().join("trials").join(format!("{dropped}.json"))).unwrap();

    let second = run_benchmark(&c, Some(&store)).unwrap();
    assert_eq!(second.trials.len(), first.trials.len());
    let kept = second.trials.iter().find(|t| t.key == marked.key).unwrap();
    assert_eq!(kept.wall_time, -42.0);
    let redone = second.trials.iter().find(|t| t.key == dropped).unwrap();
    let orig = first.trials.iter().find(|t| t.key == dropped).unwrap();
    assert_eq!((redone.recovered, &redone.node_expr, &redone.edge_expr), (orig.recovered, &orig.node_expr, &orig.edge_expr));
}

#[test]
fn written_report_matches_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let c = small();
    let r = run_benchmark(&c, None).unwrap();
    write_report(&r, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let back: serde_json::Value = serde_json::from_str(&text).unwrap();
    let trials: Vec<netsym::bench::TrialResult> = serde_json::from_value(back["trials"].clone()).unwrap();
    let again = BenchmarkReport::new("again", &c, trials);
    assert_eq!(again.aggregates, r.aggregates);
    let csv = std::fs::read_to_string(dir.path().join("aggregates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + r.aggregates.len());
}

#[test]
fn clean_control_level_matches_the_benchmark() {
    let c = small();
    let bench = run_benchmark(&c, None).unwrap();
    let sweep = sweep_noise(&c, &[f64::INFINITY, 40.0], None).unwrap();
    for t in &bench.trials {
        let s = sweep.trials.iter().find(|s| s.key == t.key).expect("clean level present");
        assert_eq!((s.recovered, &s.node_expr, &s.edge_expr, s.traj_mse), (t.recovered, &t.node_expr, &t.edge_expr, t.traj_mse));
    }
    assert_eq!(sweep.trials.len(), 2 * bench.trials.len());
    assert!(sweep_noise(&c, &[], None).is_err());
}

#[test]
fn dt_sweep_uses_the_requested_grid() {
    let mut c = small();
    c.dynamics.systems = vec![DynamicsKind::Kur];
    c.bench.seeds = 1;
    let r = sweep_dt(&c, &[0.05, 0.1], None).unwrap();
    assert_eq!(r.aggregates.len(), 2 * 2);
    let d = generate_data(&c, &DataKey { dt: Some(0.1), ..key(DynamicsKind::Kur, 0) }).unwrap();
    assert_eq!(d.observed.n_times(), 21);
    assert!((d.observed.times()[20] - c.bench.dt_horizon).abs() < 1e-12);
}

#[test]
fn data_is_shared_across_methods_and_levels() {
    let c = small();
    let a = generate_data(&c, &key(DynamicsKind::Sis, 1)).unwrap();
    let b = generate_data(&c, &DataKey { snr_db: Some(30.0), ..key(DynamicsKind::Sis, 1) }).unwrap();
    assert_eq!(a.clean, b.clean);
    assert_ne!(a.observed, b.observed);
    let other = generate_data(&c, &key(DynamicsKind::Sis, 0)).unwrap();
    assert_ne!(a.clean, other.clean);
}

#[test]
fn recovery_check_on_reference_formulas() {
    let (tf, tg) = DynamicsKind::Sis.spec().exprs();
    let good = parse_pair("-0.48540 * x_i", "(1 - x_i) * x_j").unwrap();
    let bad = parse_pair(
        "-0.47256 * x_i^2 - 0.12596",
        "0.10860 * sigmoid(x_j - x_i) + 0.18835 * (x_j - x_i^2) + 0.19917 * (x_j - x_i) + 0.35416 * sin(x_j)",
    )
    .unwrap();
    assert!(check_recovery((&good.0, &good.1), (&tf, &tg)));
    assert!(!check_recovery((&bad.0, &bad.1), (&tf, &tg)));
    assert!(check_recovery((&tf, &tg), (&tf, &tg)));
}

#[test]
fn perturbed_constants_raise_the_trajectory_error() {
    let c = small();
    let d = generate_data(&c, &key(DynamicsKind::Sis, 0)).unwrap();
    let (tf, tg) = d.spec.exprs();
    let SimScore::Mse(truth) = trajectory_mse((&tf, &tg), &d.graph, &d.clean).unwrap() else { panic!("truth diverged") };
    assert!(truth < 1e-8, "{truth}");
    let (f, g) = parse_pair("-0.48540 * x_i", "(1 - x_i) * x_j").unwrap();
    let SimScore::Mse(near) = trajectory_mse((&f, &g), &d.graph, &d.clean).unwrap() else { panic!("diverged") };
    assert!(near > truth);
    let (f, g) = parse_pair("exp(exp(x_i)) * 30", "x_j").unwrap();
    assert_eq!(trajectory_mse((&f, &g), &d.graph, &d.clean).unwrap(), SimScore::Diverged);
}

#[test]
fn extrapolation_of_the_exact_system_is_clean() {
    let c = small();
    let d = generate_data(&c, &key(DynamicsKind::Lv, 0)).unwrap();
    let (f, g) = d.spec.exprs();
    let e = extrapolation_check((&f, &g), &d.spec, &d.graph, d.clean.state(0), 1.0, 50).unwrap();
    assert!(e.interpolation_mse < 1e-20 && e.extrapolation_mse < 1e-20);
}
