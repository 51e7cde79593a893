//! End-to-end acceptance suite. Runs at desk scale (50-node graphs, GP
//! population 100 for 30 generations) and takes roughly an hour on one core.
//! Prints one PASS/FAIL line per criterion and exits non-zero if any fails.
//!
//! `ACCEPTANCE_ONLY=1,5,7` restricts the run to the listed criteria.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use netsym::bench::{
    extrapolation_check, generate_data, parse_pair, run_grid, run_pind, BenchmarkReport, Config, DataKey, GraphModel, Method, TrialResult,
};
use netsym::dynamics::{eval_rhs, regular_times, sample_initial, simulate, DynamicsKind, SimOptions};
use netsym::expr::{canonicalize, parse, skeleton_equiv};
use netsym::gp::{coordinated_search, GpConfig, Role, SearchMode, TruthRefs};
use netsym::graph::{gen_ba, gen_er};
use netsym::pind::{extract_refs, loss_and_grad, Normalization, PindArch, PindModel};
use netsym::sindy::{build_design, five_point_derivative, stlsq, FunctionLibrary};

struct Outcome {
    pass: bool,
    detail: String,
}

fn keys(cfg: &Config, kind: DynamicsKind, seeds: usize, snr_db: Option<f64>) -> Vec<DataKey> {
    (0..seeds)
        .map(|seed| DataKey { dynamics: kind, graph_model: GraphModel::Ba, graph_id: cfg.graph.id(GraphModel::Ba), seed, snr_db, dt: None })
        .collect()
}

fn count(r: &BenchmarkReport, m: Method) -> usize {
    r.trials.iter().filter(|t| t.method == m && t.recovered).count()
}

fn trials(r: &BenchmarkReport, m: Method) -> Vec<&TrialResult> {
    r.trials.iter().filter(|t| t.method == m).collect()
}

fn show(r: &BenchmarkReport) {
    for t in &r.trials {
        println!(
            "    {:<40} rec={:<5} mse={:<12} {:>7.1}s  F = {}  G = {}{}",
            t.key,
            t.recovered,
            t.traj_mse.map_or("-".into(), |m| format!("{m:.3e}")),
            t.wall_time,
            t.node_expr.as_deref().unwrap_or("-"),
            t.edge_expr.as_deref().unwrap_or("-"),
            t.error.as_deref().map(|e| format!("  error: {e}")).unwrap_or_default(),
        );
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn kur_clean(cfg: &Config) -> Outcome {
    let r = run_grid(cfg, "kur", &keys(cfg, DynamicsKind::Kur, 5, None), &[Method::PiNdsr], None).unwrap();
    show(&r);
    let rec = count(&r, Method::PiNdsr);
    let slowest = r.trials.iter().map(|t| t.wall_time).fold(0.0, f64::max);
    Outcome { pass: rec >= 4 && slowest <= 1200.0, detail: format!("recovered {rec}/5, slowest run {slowest:.0}s (need >= 4/5, <= 1200s)") }
}

fn wc_separation(cfg: &Config) -> Outcome {
    let r = run_grid(cfg, "wc", &keys(cfg, DynamicsKind::Wc, 5, None), &[Method::PiNdsr, Method::Sindy, Method::TpSindy], None).unwrap();
    show(&r);
    let (p, s, t) = (count(&r, Method::PiNdsr), count(&r, Method::Sindy), count(&r, Method::TpSindy));
    Outcome { pass: s == 0 && t == 0 && p >= 3, detail: format!("sindy {s}/5, tp-sindy {t}/5, pi-ndsr {p}/5 (need 0, 0, >= 3)") }
}

fn kur_noisy(cfg: &Config) -> BenchmarkReport {
    let r = run_grid(cfg, "kur-30db", &keys(cfg, DynamicsKind::Kur, 5, Some(30.0)), &[Method::PiNdsr, Method::NoInterp, Method::TpSindy], None)
        .unwrap();
    show(&r);
    r
}

fn noise_robustness(r: &BenchmarkReport) -> Outcome {
    let (p, t) = (count(r, Method::PiNdsr), count(r, Method::TpSindy));
    Outcome { pass: t == 0 && p >= 3, detail: format!("30 dB: tp-sindy {t}/5, pi-ndsr {p}/5 (need 0 and >= 3)") }
}

fn ablations(cfg: &Config, noisy: &BenchmarkReport) -> Outcome {
    let r = run_grid(cfg, "sis", &keys(cfg, DynamicsKind::Sis, 10, None), &[Method::PiNdsr, Method::NoCoord], None).unwrap();
    show(&r);
    let (full, nc) = (count(&r, Method::PiNdsr), count(&r, Method::NoCoord));
    let coord_ok = nc < full;

    // MSE on recovered trials when both recovered something, otherwise the
    // re-simulation error of whatever each method returned
    let rec = |m| mean(&trials(noisy, m).iter().filter_map(|t| t.traj_mse).collect::<Vec<_>>());
    let all = |m| mean(&trials(noisy, m).iter().filter_map(|t| t.sim_mse).collect::<Vec<_>>());
    let (basis, full_mse, ni_mse) = match (rec(Method::PiNdsr), rec(Method::NoInterp)) {
        (Some(a), Some(b)) => ("recovered", Some(a), Some(b)),
        _ => ("all trials", all(Method::PiNdsr), all(Method::NoInterp)),
    };
    let diverged_ni = trials(noisy, Method::NoInterp).iter().filter(|t| t.diverged).count();
    let interp_ok = match (full_mse, ni_mse) {
        (Some(a), Some(b)) => b > a,
        (Some(_), None) => diverged_ni > 0,
        _ => false,
    };
    Outcome {
        pass: coord_ok && interp_ok,
        detail: format!(
            "SIS rec: no-coord {nc}/10 vs full {full}/10; noisy KUR mse ({basis}): no-interp {} vs full {}",
            ni_mse.map_or("-".into(), |m| format!("{m:.3e}")),
            full_mse.map_or("-".into(), |m| format!("{m:.3e}")),
        ),
    }
}

fn coordinated_efficiency() -> Outcome {
    let kind = DynamicsKind::Kur;
    let graph = gen_ba(50, 3, 21).unwrap();
    let x0 = sample_initial(kind, 50, 22);
    let target = simulate(&kind.spec(), &graph, &x0, &regular_times(0.0, 1.0, 100), &SimOptions::default()).unwrap();
    let (node, edge) = kind.spec().exprs();
    let refs = TruthRefs { node, edge };
    let base = GpConfig { population: 60, generations: 8, epsilon: -1.0, fitness_stride: 4, fitness_substeps: 1, seed: 5, ..GpConfig::default() };
    let coord = coordinated_search(&refs, &target, &graph, &base).unwrap();
    let joint = coordinated_search(&refs, &target, &graph, &GpConfig { mode: SearchMode::Joint, ..base.clone() }).unwrap();
    let per_gen = coord.fitness_evaluations as f64 / coord.generations as f64;
    let joint_per_gen = joint.fitness_evaluations as f64 / joint.generations as f64;
    let sims = (coord.simulations + coord.final_simulations) as f64;
    let joint_sims = (joint.simulations + joint.final_simulations) as f64;
    let ratio = sims / joint_sims;
    Outcome {
        pass: coord.generations == joint.generations && per_gen == base.population as f64 && joint_per_gen == 2.0 * base.population as f64 && ratio <= 0.6,
        detail: format!(
            "{} generations each; evaluations/generation {per_gen} (coordinated) vs {joint_per_gen} (joint); simulations {sims} vs {joint_sims} = {:.1}%",
            coord.generations,
            100.0 * ratio
        ),
    }
}

fn overfitting(cfg: &Config) -> Outcome {
    let key = &keys(cfg, DynamicsKind::Sis, 1, None)[0];
    let d = generate_data(cfg, key).unwrap();
    let overfit = parse_pair(
        "-0.47256 * x_i^2 - 0.12596",
        "0.10860 * sigmoid(x_j - x_i) + 0.18835 * (x_j - x_i^2) + 0.19917 * (x_j - x_i) + 0.35416 * sin(x_j)",
    )
    .unwrap();
    let skeleton = parse_pair("-0.48540 * x_i", "(1 - x_i) * x_j").unwrap();
    let t = cfg.dynamics.t_end;
    let n = cfg.dynamics.samples;
    let a = extrapolation_check((&overfit.0, &overfit.1), &d.spec, &d.graph, d.clean.state(0), t, n).unwrap();
    let b = extrapolation_check((&skeleton.0, &skeleton.1), &d.spec, &d.graph, d.clean.state(0), t, n).unwrap();
    Outcome {
        pass: a.ratio() >= 5.0 && b.ratio() <= 2.0,
        detail: format!(
            "overfitted {:.3e} -> {:.3e} (x{:.2}, need >= 5); truth skeleton {:.3e} -> {:.3e} (x{:.2}, need <= 2)",
            a.interpolation_mse,
            a.extrapolation_mse,
            a.ratio(),
            b.interpolation_mse,
            b.extrapolation_mse,
            b.ratio()
        ),
    }
}

fn numerical_suite() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    let mut check = |ok: bool, note: String| {
        pass &= ok;
        notes.push(format!("{}{note}", if ok { "" } else { "FAILED " }));
    };

    // reverse-mode gradient against central differences
    let graph = gen_er(12, 0.3, 1).unwrap();
    let x0 = sample_initial(DynamicsKind::Lv, 12, 2);
    let obs = simulate(&DynamicsKind::Lv.spec(), &graph, &x0, &regular_times(0.0, 1.0, 10), &SimOptions::default()).unwrap();
    let mut model = PindModel::new(PindArch::for_kind(DynamicsKind::Lv), 1, Normalization::from_observations(&obs), 3).unwrap();
    let (_, grad) = loss_and_grad(&model, &graph, &obs, &x0, 1).unwrap();
    let flat = model.flatten();
    let mut worst: f64 = 0.0;
    for k in (0..flat.len()).step_by(7) {
        let h = 1e-6;
        let mut p = flat.clone();
        p[k] += h;
        model.load_flat(&p).unwrap();
        let up = loss_and_grad(&model, &graph, &obs, &x0, 1).unwrap().0;
        p[k] -= 2.0 * h;
        model.load_flat(&p).unwrap();
        let down = loss_and_grad(&model, &graph, &obs, &x0, 1).unwrap().0;
        let fd = (up - down) / (2.0 * h);
        if fd.abs().max(grad[k].abs()) > 1e-6 {
            worst = worst.max((fd - grad[k]).abs() / fd.abs().max(grad[k].abs()));
        }
    }
    check(worst < 1e-4, format!("gradient rel err {worst:.1e}"));

    // RK4 order on a network system, in the asymptotic range of step sizes
    let g = gen_ba(30, 3, 4).unwrap();
    let x0 = sample_initial(DynamicsKind::Kur, 30, 5);
    let times = [0.0, 1.0];
    let run = |s: usize| simulate(&DynamicsKind::Kur.spec(), &g, &x0, &times, &SimOptions::rk4_substeps(s)).unwrap();
    let exact = run(8192);
    let e = |s: usize| run(s).mse(&exact).unwrap().sqrt();
    let factor = e(32) / e(64);
    check((12.0..=20.0).contains(&factor), format!("RK4 halving factor {factor:.2}"));

    // five-point stencil on cubic node trajectories
    let t = regular_times(0.0, 1.0, 21);
    let coefs = [(1.0, -2.0, 0.5, 3.0), (0.0, 1.0, -1.0, -2.0)];
    let states: Vec<f64> = t.iter().flat_map(|&x| coefs.iter().map(move |&(a, b, c, d)| a + b * x + c * x * x + d * x * x * x)).collect();
    let traj = netsym::dynamics::Trajectory::new(t.clone(), 2, 1, states).unwrap();
    let dx = five_point_derivative(&traj).unwrap();
    let mut err: f64 = 0.0;
    for (k, &x) in t.iter().enumerate() {
        for (v, &(_, b, c, d)) in coefs.iter().enumerate() {
            err = err.max((dx[k * 2 + v] - (b + 2.0 * c * x + 3.0 * d * x * x)).abs());
        }
    }
    check(err < 1e-10, format!("stencil err {err:.1e}"));

    // STLSQ on exact derivatives of a network system in the library span
    let kind = DynamicsKind::Lv;
    let g = gen_ba(40, 3, 8).unwrap();
    let x0 = sample_initial(kind, 40, 9);
    let traj = simulate(&kind.spec(), &g, &x0, &regular_times(0.0, 1.0, 50), &SimOptions::default()).unwrap();
    let lib = FunctionLibrary::basic();
    let design = build_design(&traj, &g, &lib).unwrap();
    let target: Vec<f64> = (0..traj.n_times()).flat_map(|k| eval_rhs(&kind.spec(), &g, traj.state(k)).unwrap()).collect();
    let fit = stlsq(&design, &target, 0.05, 10).unwrap();
    let want: Vec<usize> = [(Role::Node, "x_i"), (Role::Node, "x_i^2"), (Role::Edge, "x_i * x_j")]
        .iter()
        .filter_map(|(role, f)| {
            let e = canonicalize(&parse(f).unwrap());
            lib.columns.iter().position(|c| c.role == *role && canonicalize(&c.expr) == e)
        })
        .collect();
    let mut want = want;
    want.sort_unstable();
    let names: Vec<String> = fit.support().iter().map(|&j| lib.columns[j].name()).collect();
    check(want.len() == 3 && fit.support() == want, format!("stlsq support {names:?}"));

    // canonical forms and skeleton matching on reference formulas
    let rows: [(&str, &str, &str, &str, &str, bool); 10] = [
        ("sis", "-0.48540 * x_i", "(1 - x_i) * x_j", "-0.5 * x_i", "(1 - x_i) * x_j", true),
        ("sis", "-0.46640 * x_i", "(0.99119 - 1.09637 * x_i) * x_j", "-0.5 * x_i", "(1 - x_i) * x_j", true),
        (
            "sis",
            "-0.47256 * x_i^2 - 0.12596",
            "0.10860 * sigmoid(x_j - x_i) + 0.18835 * (x_j - x_i^2) + 0.19917 * (x_j - x_i) + 0.35416 * sin(x_j)",
            "-0.5 * x_i",
            "(1 - x_i) * x_j",
            false,
        ),
        ("lv", "x_i * (0.75034 - 0.48812 * x_i)", "-0.99428 * x_i * x_j", "x_i * (0.75 - 0.5 * x_i)", "-x_i * x_j", true),
        ("lv", "x_i * (0.69882 - 0.41853 * x_i)", "-0.91701 * x_i * x_j", "x_i * (0.75 - 0.5 * x_i)", "-x_i * x_j", true),
        ("lv", "0.03984 + 0.36330 * sin(x_i)", "-0.945810 * x_i * x_j - 0.11895 * x_i * x_j^2", "x_i * (0.75 - 0.5 * x_i)", "-x_i * x_j", false),
        ("kur", "0.75002", "sin(1.0001 * x_i - x_j)", "0.75", "sin(x_i - x_j)", true),
        ("kur", "0.75014", "0.99899 * sin(x_i - x_j)", "0.75", "sin(x_i - x_j)", true),
        ("wc", "-x_i", "sigmoid(-0.74503 * (x_j - 0.49128))", "-x_i", "sigmoid(-0.75 * (x_j - 0.5))", true),
        ("wc", "-0.82267 * x_i", "0.08513 * sigmoid(x_j - x_i) + 0.68484 * sigmoid(x_j)", "-x_i", "sigmoid(-0.75 * (x_j - 0.5))", false),
    ];
    let mut wrong = Vec::new();
    for (sys, f, g, tf, tg, expected) in rows {
        let (f, g, tf, tg) = (parse(f).unwrap(), parse(g).unwrap(), parse(tf).unwrap(), parse(tg).unwrap());
        for e in [&f, &g, &tf, &tg] {
            let c = canonicalize(e);
            if canonicalize(&c) != c {
                wrong.push(format!("{sys}: canonical form of {e} not a fixed point"));
            }
        }
        let got = skeleton_equiv(&f, &tf) && skeleton_equiv(&g, &tg);
        if got != expected {
            wrong.push(format!("{sys}: {f} | {g} gave {got}"));
        }
    }
    check(wrong.is_empty(), format!("reference rows {}", if wrong.is_empty() { "ok".into() } else { wrong.join("; ") }));
    Outcome { pass, detail: notes.join(", ") }
}

fn reference_quality(cfg: &Config) -> Outcome {
    let key = &keys(cfg, DynamicsKind::Lv, 1, None)[0];
    let d = generate_data(cfg, key).unwrap();
    let p = run_pind(cfg, &d).unwrap();
    let refs = extract_refs(&p.outcome.model).at_time(d.observed.times()[0]);
    let (xs, ys) = refs.node_grid(0.0, 1.0, 11).unwrap();
    let (f, _) = d.spec.exprs();
    let gap = xs.iter().zip(&ys).map(|(x, y)| (y - f.eval(*x, None, 0.0).unwrap()).abs()).sum::<f64>() / xs.len() as f64;
    Outcome { pass: gap < 0.05, detail: format!("mean |F_hat - F| = {gap:.4} on 11 grid points (need < 0.05), val mse {:.2e}", p.outcome.best_val) }
}

fn main() -> ExitCode {
    let only: Option<BTreeSet<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|o| o.contains(&k));
    let cfg = Config::default();
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |k: usize, name: &'static str, o: Outcome| {
        println!("criterion {k} {name}: {} ({}) [{:.0}s elapsed]", if o.pass { "PASS" } else { "FAIL" }, o.detail, start.elapsed().as_secs_f64());
        results.push((k, name, o));
    };

    if wanted(7) {
        record(7, "numerical suite", numerical_suite());
    }
    if wanted(5) {
        record(5, "coordinated efficiency", coordinated_efficiency());
    }
    if wanted(6) {
        record(6, "overfitting diagnostic", overfitting(&cfg));
    }
    if wanted(8) {
        record(8, "reference quality", reference_quality(&cfg));
    }
    if wanted(1) {
        record(1, "KUR recovery", kur_clean(&cfg));
    }
    if wanted(2) {
        record(2, "WC separation", wc_separation(&cfg));
    }
    let noisy = (wanted(3) || wanted(4)).then(|| kur_noisy(&cfg));
    if wanted(3) {
        record(3, "noise robustness", noise_robustness(noisy.as_ref().unwrap()));
    }
    if wanted(4) {
        record(4, "ablation direction", ablations(&cfg, noisy.as_ref().unwrap()));
    }

    results.sort_by_key(|r| r.0);
    println!("\nacceptance summary");
    for (k, name, o) in &results {
        println!("  criterion {k} {:<24} {}", name, if o.pass { "PASS" } else { "FAIL" });
    }
    if results.iter().all(|r| r.2.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
