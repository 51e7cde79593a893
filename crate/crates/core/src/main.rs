use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use netsym::autodiff::{Checkpoint, Tensor};
use netsym::bench::{
    ablate, generate_data, run_benchmark, sweep_dt, sweep_noise, write_report, BenchmarkReport, Config, DataKey, GraphModel, Method,
    TrialStore,
};
use netsym::dynamics::{DynamicsKind, Trajectory};
use netsym::gp::{coordinated_search, TruthRefs};
use netsym::graph::Graph;
use netsym::pind::{extract_refs, interpolate, train, Normalization, PindArch, PindModel};
use netsym::sindy::{sindy, tp_sindy};
use netsym::{Error, Result};

#[derive(Parser)]
#[command(name = "netsym", version, about = "Recover symbolic node and edge dynamics of networked systems")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// TOML file with [graph], [dynamics], [pind], [gp], [sindy] and [bench] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// 200-node graphs, 100 seeds, full training and search budgets.
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one system on a random graph and write graph and trajectories.
    Generate {
        #[arg(long, default_value = "kur")]
        dynamics: DynamicsKind,
        #[arg(long, default_value = "ba")]
        graph: GraphModel,
        /// Observation noise in dB (omit for clean data).
        #[arg(long)]
        snr: Option<f64>,
    },
    /// Fit neural dynamics and write a checkpoint and the interpolated trajectory.
    TrainPind {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        /// Picks the architecture.
        #[arg(long, default_value = "kur")]
        dynamics: DynamicsKind,
    },
    /// Coordinated symbolic search against a target trajectory.
    Search {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Neural dynamics checkpoint providing the references.
        #[arg(long, conflicts_with = "truth_refs")]
        checkpoint: Option<PathBuf>,
        /// Use the true terms of this system as references instead.
        #[arg(long)]
        truth_refs: Option<DynamicsKind>,
        /// Evolve both populations every generation.
        #[arg(long)]
        joint: bool,
        /// Add the sigmoid to the operator set.
        #[arg(long)]
        sigmoid: bool,
    },
    /// Sparse regression on observations.
    Baseline {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long, default_value = "tp-sindy")]
        method: Method,
    },
    /// Every configured system, graph, method and seed.
    Bench,
    /// The benchmark grid at each configured noise level.
    SweepNoise {
        /// Comma-separated dB levels; `inf` is clean.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// The benchmark grid at each configured sampling interval.
    SweepDt {
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// Full method next to an ablated variant.
    Ablate {
        #[arg(long)]
        variant: Method,
    },
    /// Rebuild the report from stored trials.
    Report,
}

fn load_config(g: &Global) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(p) => Config::read(p)?,
        None => Config::default(),
    };
    if g.paper_scale {
        cfg.apply_paper_scale();
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn finish(report: &BenchmarkReport, cfg: &Config, out: &Path) -> Result<()> {
    write(&out.join("config.toml"), &cfg.to_toml())?;
    write_report(report, out)?;
    print!("{}", report.aggregates_csv());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = g.parallelism {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))?;
    }
    let cfg = load_config(g)?;
    let out = &g.out_dir;
    match cli.cmd {
        Cmd::Generate { dynamics, graph: model, snr } => {
            let key = DataKey { dynamics, graph_model: model, graph_id: cfg.graph.id(model), seed: 0, snr_db: snr, dt: None };
            let data = generate_data(&cfg, &key)?;
            data.graph.write(&out.join("graph.txt"))?;
            data.clean.write(&out.join("clean.csv"))?;
            data.observed.write(&out.join("observed.csv"))?;
            println!("{} nodes, {} edges, {} timestamps -> {}", data.graph.n_nodes(), data.graph.n_edges(), data.clean.n_times(), out.display());
        }
        Cmd::TrainPind { graph, observations, dynamics } => {
            let graph = Graph::read(&graph)?;
            let obs = Trajectory::read(&observations)?;
            let mut arch = PindArch::for_kind(dynamics);
            if cfg.pind.nonlinear_decoder {
                arch = arch.with_nonlinear_decoder();
            }
            let model = PindModel::new(arch, obs.dim(), Normalization::from_observations(&obs), cfg.seed)?;
            let res = train(&model, &graph, &obs, &cfg.pind.train_config(cfg.seed))?;
            let mut ck = res.model.to_checkpoint();
            ck.push("x0", Tensor::from_vec(graph.n_nodes(), obs.dim(), res.x0.clone())?);
            ck.write(&out.join("pind.ckpt"))?;
            write(&out.join("curves.csv"), &res.curves_csv())?;
            let dense = interpolate(&res.model, &graph, &res.x0, obs.times(), cfg.pind.interp_factor, cfg.pind.substeps)?;
            dense.write(&out.join("interpolated.csv"))?;
            println!("lr {} best epoch {} val mse {:e} test mse {:e}", res.lr, res.best_epoch, res.best_val, res.test_mse);
        }
        Cmd::Search { graph, target, checkpoint, truth_refs, joint, sigmoid } => {
            let graph = Graph::read(&graph)?;
            let target = Trajectory::read(&target)?;
            let mut gp = cfg.gp.clone();
            gp.seed = cfg.seed;
            if joint {
                gp.mode = netsym::gp::SearchMode::Joint;
            }
            if sigmoid && !gp.functions.contains(&netsym::gp::Func::Sigmoid) {
                gp.functions.push(netsym::gp::Func::Sigmoid);
            }
            let res = match (checkpoint, truth_refs) {
                (Some(p), _) => {
                    let model = PindModel::from_checkpoint(&Checkpoint::read(&p)?)?;
                    coordinated_search(&extract_refs(&model).at_time(target.times()[0]), &target, &graph, &gp)?
                }
                (None, Some(kind)) => {
                    let (node, edge) = kind.spec().exprs();
                    coordinated_search(&TruthRefs { node, edge }, &target, &graph, &gp)?
                }
                (None, None) => return Err(Error::Config("search needs --checkpoint or --truth-refs".into())),
            };
            write(&out.join("search.json"), &serde_json::to_string_pretty(&res.to_json())?)?;
            write(&out.join("history.csv"), &res.history_csv())?;
            println!("F = {}\nG = {}\nerror {:e} after {} generations", res.node, res.edge, res.error, res.generations);
        }
        Cmd::Baseline { graph, observations, method } => {
            let graph = Graph::read(&graph)?;
            let obs = Trajectory::read(&observations)?;
            let lib = cfg.sindy.library()?;
            let m = match method {
                Method::Sindy => sindy(&obs, &graph, &lib, cfg.sindy.lambda1, cfg.sindy.max_iters)?,
                Method::TpSindy => tp_sindy(&obs, &graph, &lib, &cfg.sindy)?,
                other => return Err(Error::Config(format!("{other} is not a baseline"))),
            };
            write(&out.join(format!("{method}.json")), &serde_json::to_string_pretty(&m)?)?;
            println!("F = {}\nG = {}", m.node, m.edge);
        }
        Cmd::Bench => {
            let report = run_benchmark(&cfg, Some(&TrialStore::open(out)?))?;
            finish(&report, &cfg, out)?;
        }
        Cmd::SweepNoise { levels } => {
            let levels = levels.unwrap_or_else(|| cfg.bench.snr_levels.clone());
            let report = sweep_noise(&cfg, &levels, Some(&TrialStore::open(out)?))?;
            finish(&report, &cfg, out)?;
        }
        Cmd::SweepDt { levels } => {
            let levels = levels.unwrap_or_else(|| cfg.bench.dt_levels.clone());
            let report = sweep_dt(&cfg, &levels, Some(&TrialStore::open(out)?))?;
            finish(&report, &cfg, out)?;
        }
        Cmd::Ablate { variant } => {
            let report = ablate(&cfg, variant, Some(&TrialStore::open(out)?))?;
            finish(&report, &cfg, out)?;
        }
        Cmd::Report => {
            let snapshot = out.join("config.toml");
            let cfg = if snapshot.exists() && g.config.is_none() { Config::read(&snapshot)? } else { cfg };
            let trials = TrialStore::open(out)?.all()?;
            let report = BenchmarkReport::new("report", &cfg, trials);
            write_report(&report, out)?;
            print!("{}", report.aggregates_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
