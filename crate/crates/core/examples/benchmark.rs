//! Small benchmark grid with the sparse-regression baselines, written to a
//! resumable trial store. Rerunning skips finished trials.
//!
//!     cargo run --release --example benchmark -- /tmp/bench

use std::path::PathBuf;

use netsym::bench::{run_benchmark, write_report, Config, Method, TrialStore};
use netsym::dynamics::DynamicsKind;

fn main() -> netsym::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("netsym-bench"));
    let mut cfg = Config::default();
    cfg.dynamics.systems = DynamicsKind::ALL.to_vec();
    cfg.bench.seeds = 3;
    cfg.bench.methods = vec![Method::Sindy, Method::TpSindy];
    let store = TrialStore::open(&dir)?;
    let report = run_benchmark(&cfg, Some(&store))?;
    write_report(&report, &dir)?;
    println!("{:<4} {:<9} {:>8} {:>12}", "sys", "method", "rec", "mse x1e2");
    for a in &report.aggregates {
        let mse = a.mse_x100().map_or("-".to_string(), |m| format!("{m:.4}"));
        println!("{:<4} {:<9} {:>4}/{:<3} {:>12}", a.dynamics.name(), a.method.name(), a.recovered, a.trials, mse);
    }
    println!("report in {}", dir.display());
    Ok(())
}
