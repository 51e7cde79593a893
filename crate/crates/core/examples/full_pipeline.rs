//! Neural interpolation followed by reference-guided coordinated search on
//! one Kuramoto trial at desk scale. Takes a few minutes in release mode.
//!
//!     cargo run --release --example full_pipeline -- kur 0

use netsym::bench::{generate_data, run_method, run_pind, Config, DataKey, GraphModel, Method};
use netsym::dynamics::DynamicsKind;

fn main() -> netsym::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: DynamicsKind = args.next().as_deref().unwrap_or("kur").parse()?;
    let seed: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = Config::default();
    let key = DataKey { dynamics: kind, graph_model: GraphModel::Ba, graph_id: cfg.graph.id(GraphModel::Ba), seed, snr_db: None, dt: None };
    let data = generate_data(&cfg, &key)?;
    let pind = run_pind(&cfg, &data)?;
    println!("neural dynamics: val mse {:.3e} in {:.1}s", pind.outcome.best_val, pind.wall_seconds);
    let r = run_method(&cfg, &data, Some(&pind), Method::PiNdsr)?;
    println!("F = {}", r.node_expr.as_deref().unwrap_or("-"));
    println!("G = {}", r.edge_expr.as_deref().unwrap_or("-"));
    println!("recovered {}  trajectory mse {:?}  {:.1}s total", r.recovered, r.traj_mse, r.wall_time);
    Ok(())
}
