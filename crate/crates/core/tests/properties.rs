use proptest::prelude::*;

use netsym::bench::{aggregate, bootstrap_ci, mean, Method, TrialResult};
use netsym::dynamics::{add_noise, integrate, regular_times, DynamicsKind, Rhs, RhsError, SimOptions, Trajectory};
use netsym::expr::{canonicalize, parse, skeleton_equiv, BinaryOp, Expr, Program, UnaryOp, Var};
use netsym::gp::{evolve_step, init_population, GpConfig, Role};
use netsym::graph::{gen_ba, gen_er};
use netsym::rng::rng;
use netsym::sindy::{five_point, stlsq};

fn leaf(edge: bool) -> impl Strategy<Value = Expr> {
    let vars = if edge { vec![Var::Xi, Var::Xj] } else { vec![Var::Xi] };
    prop_oneof![
        (-3.0f64..3.0).prop_map(|c| Expr::Const((c * 100.0).round() / 100.0)),
        proptest::sample::select(vars).prop_map(Expr::Var),
    ]
}

fn expr(edge: bool) -> impl Strategy<Value = Expr> {
    leaf(edge).prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (proptest::sample::select(vec![UnaryOp::Sin, UnaryOp::Cos, UnaryOp::Neg, UnaryOp::Sigmoid]), inner.clone())
                .prop_map(|(op, a)| Expr::unary(op, a)),
            (proptest::sample::select(vec![BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul]), inner.clone(), inner)
                .prop_map(|(op, a, b)| Expr::binary(op, a, b)),
        ]
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ba_graphs_have_expected_shape(n in 5usize..60, m in 1usize..4, seed in 0u64..1000) {
        prop_assume!(m < n);
        let g = gen_ba(n, m, seed).unwrap();
        prop_assert_eq!(g.n_edges(), (n - m) * m);
        for v in 0..n {
            for &(u, w) in g.neighbors(v) {
                prop_assert!(u != v);
                prop_assert!(g.neighbors(u).iter().any(|&(x, wx)| x == v && wx == w));
            }
        }
        for v in m..n {
            prop_assert!(g.degree(v) >= m);
        }
    }

    #[test]
    fn er_graphs_are_simple_and_symmetric(n in 2usize..40, p in 0.0f64..1.0, seed in 0u64..1000) {
        let g = gen_er(n, p, seed).unwrap();
        let total: usize = (0..n).map(|v| g.degree(v)).sum();
        prop_assert_eq!(total, 2 * g.n_edges());
        for v in 0..n {
            prop_assert!(g.neighbors(v).iter().all(|&(u, _)| u != v));
        }
    }

    #[test]
    fn canonicalization_is_idempotent_and_value_preserving(e in expr(true), xi in -2.0f64..2.0, xj in -2.0f64..2.0) {
        let c = canonicalize(&e);
        prop_assert_eq!(canonicalize(&c), c.clone());
        let (a, b) = (e.eval(xi, Some(xj), 0.0).unwrap(), c.eval(xi, Some(xj), 0.0).unwrap());
        prop_assert!(close(a, b), "{} = {} but {} = {}", e, a, c, b);
    }

    #[test]
    fn printing_round_trips_through_the_parser(e in expr(true), xi in -2.0f64..2.0, xj in -2.0f64..2.0) {
        let back = parse(&e.to_string()).unwrap();
        let (a, b) = (e.eval(xi, Some(xj), 0.0).unwrap(), back.eval(xi, Some(xj), 0.0).unwrap());
        prop_assert!(close(a, b), "{} reparsed as {}", e, back);
    }

    #[test]
    fn compiled_programs_agree_with_the_tree(e in expr(true), xi in -2.0f64..2.0, xj in -2.0f64..2.0) {
        let p = Program::compile(&e);
        let mut out = [0.0];
        let mut scratch = netsym::expr::EvalScratch::default();
        p.eval_batch(&netsym::expr::Inputs { x_i: &[xi], x_j: Some(&[xj]), t: 0.0, params: &[] }, &mut out, &mut scratch).unwrap();
        prop_assert!(close(out[0], e.eval(xi, Some(xj), 0.0).unwrap()));
    }

    #[test]
    fn skeleton_equivalence_is_reflexive(e in expr(true)) {
        prop_assert!(skeleton_equiv(&e, &e), "{}", e);
    }

    #[test]
    fn five_point_stencil_is_exact_on_cubics(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, d in -3.0f64..3.0, h in 0.01f64..0.5) {
        let t: Vec<f64> = (0..12).map(|k| k as f64 * h).collect();
        let f: Vec<f64> = t.iter().map(|x| a + b * x + c * x * x + d * x * x * x).collect();
        for (x, df) in t.iter().zip(five_point(&f, h)) {
            let exact = b + 2.0 * c * x + 3.0 * d * x * x;
            prop_assert!((df - exact).abs() < 1e-10 * (1.0 + exact.abs()) / h.min(1.0), "{} vs {}", df, exact);
        }
    }

    #[test]
    fn stlsq_recovers_sparse_support(seed in 0u64..500, mask in 1u32..255) {
        use rand::Rng as _;
        let mut r = rng(seed);
        let cols = 8;
        let rows = 60;
        let design = nalgebra::DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0));
        let truth: Vec<f64> = (0..cols)
            .map(|j| if mask & (1 << j) != 0 { r.random_range(0.5..2.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 } } else { 0.0 })
            .collect();
        let target: Vec<f64> = (0..rows).map(|i| (0..cols).map(|j| design[(i, j)] * truth[j]).sum()).collect();
        let fit = stlsq(&design, &target, 0.1, 10).unwrap();
        let want: Vec<usize> = (0..cols).filter(|&j| truth[j] != 0.0).collect();
        prop_assert_eq!(fit.support(), want);
        for j in 0..cols {
            prop_assert!((fit.coefficients[j] - truth[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_matches_requested_snr(snr in 10.0f64..60.0, seed in 0u64..100) {
        let times = regular_times(0.0, 1.0, 50);
        let states: Vec<f64> = (0..50 * 40).map(|k| (k as f64 * 0.37).sin() + 1.5).collect();
        let clean = Trajectory::new(times, 40, 1, states).unwrap();
        let noisy = add_noise(&clean, snr, seed).unwrap();
        let measured = 10.0 * (clean.rms().powi(2) / clean.mse(&noisy).unwrap()).log10();
        prop_assert!((measured - snr).abs() < 0.6, "{} vs {}", measured, snr);
    }

    #[test]
    fn trajectory_csv_round_trips(vals in proptest::collection::vec(-1e3f64..1e3, 12)) {
        let t = Trajectory::new(vec![0.0, 0.5, 1.25], 2, 2, vals).unwrap();
        prop_assert_eq!(Trajectory::from_csv(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn bootstrap_interval_brackets_the_sample_mean(v in proptest::collection::vec(0.0f64..10.0, 2..30), seed in 0u64..50) {
        let (lo, hi) = bootstrap_ci(&v, 400, seed);
        let m = mean(&v);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min - 1e-12 <= lo && lo <= m + 1e-12 && m - 1e-12 <= hi && hi <= max + 1e-12, "{} {} {} {} {}", min, lo, m, hi, max);
    }

    #[test]
    fn variation_respects_role_and_size(seed in 0u64..200) {
        let cfg = GpConfig { population: 30, max_size: 25, ..GpConfig::default() };
        let mut r = rng(seed);
        for role in [Role::Node, Role::Edge] {
            let pop = init_population(role, &cfg, &mut r);
            let fitness: Vec<f64> = (0..pop.len()).map(|k| -(k as f64)).collect();
            let next = evolve_step(&pop, &fitness, role, &cfg, &mut r).unwrap();
            prop_assert_eq!(next.len(), pop.len());
            prop_assert_eq!(&next[0], &pop[0]);
            for e in &next {
                prop_assert!(role.admits(e));
                prop_assert!(e.size() <= cfg.max_size.max(pop.iter().map(Expr::size).max().unwrap()));
            }
        }
    }

    #[test]
    fn aggregates_are_recomputable_from_trials(flags in proptest::collection::vec((any::<bool>(), 0.0f64..1.0, 0usize..3), 1..40)) {
        let trials: Vec<TrialResult> = flags
            .iter()
            .enumerate()
            .map(|(k, &(rec, mse, m))| TrialResult {
                key: format!("t{k}"),
                method: [Method::PiNdsr, Method::Sindy, Method::TpSindy][m],
                dynamics: DynamicsKind::Kur,
                graph: "ba".into(),
                seed: k,
                snr_db: None,
                dt: None,
                recovered: rec,
                node_expr: None,
                edge_expr: None,
                traj_mse: rec.then_some(mse),
                sim_mse: Some(mse),
                diverged: false,
                wall_time: 1.0,
                fitness_evaluations: None,
                simulations: None,
                generations: None,
                pind_val_mse: None,
                error: None,
            })
            .collect();
        let a = aggregate(&trials, 100, 7);
        let mut shuffled = trials.clone();
        shuffled.reverse();
        prop_assert_eq!(&a, &aggregate(&shuffled, 100, 7));
        prop_assert_eq!(a.iter().map(|x| x.trials).sum::<usize>(), trials.len());
        for g in &a {
            let mine: Vec<&TrialResult> = trials.iter().filter(|t| t.method == g.method).collect();
            let rec = mine.iter().filter(|t| t.recovered).count();
            prop_assert_eq!(g.recovered, rec);
            prop_assert!((g.rec_prob - rec as f64 / mine.len() as f64).abs() < 1e-12);
        }
    }
}

struct Linear(f64);

impl Rhs for Linear {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&mut self, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), RhsError> {
        dx[0] = self.0 * x[0];
        Ok(())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rk4_error_shrinks_sixteenfold_per_halving(lambda in -2.0f64..1.5) {
        prop_assume!(lambda.abs() > 0.2);
        let exact = lambda.exp();
        let err = |substeps: usize| {
            let x = integrate(&mut Linear(lambda), &[1.0], &[0.0, 1.0], &SimOptions::rk4_substeps(substeps)).unwrap();
            (x[1] - exact).abs()
        };
        let ratio = err(8) / err(16);
        prop_assert!((ratio - 16.0).abs() <= 4.0, "ratio {}", ratio);
    }
}
