//! Train the neural dynamics model on Lotka-Volterra data and compare its
//! node-term estimate with the true node term.
//!
//!     cargo run --release --example train_neural_dynamics -- 300

use netsym::dynamics::{regular_times, sample_initial, simulate, DynamicsKind, SimOptions};
use netsym::graph::gen_ba;
use netsym::pind::{extract_refs, interpolate, train, Normalization, PindArch, PindModel, TrainConfig};

fn main() -> netsym::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let kind = DynamicsKind::Lv;
    let graph = gen_ba(50, 3, 0)?;
    let x0 = sample_initial(kind, 50, 1);
    let obs = simulate(&kind.spec(), &graph, &x0, &regular_times(0.0, 1.0, 100), &SimOptions::default())?;

    let model = PindModel::new(PindArch::for_kind(kind), 1, Normalization::from_observations(&obs), 0)?;
    let cfg = TrainConfig { epochs, lr_candidates: vec![1e-2], ..TrainConfig::default() };
    let out = train(&model, &graph, &obs, &cfg)?;
    println!("lr {} best epoch {} val mse {:.3e} test mse {:.3e}", out.lr, out.best_epoch, out.best_val, out.test_mse);

    let dense = interpolate(&out.model, &graph, &out.x0, obs.times(), 4, 1)?;
    println!("interpolated trajectory: {} timestamps", dense.n_times());

    let refs = extract_refs(&out.model);
    let (xs, ys) = refs.node_grid(0.0, 1.0, 11)?;
    let (f, _) = kind.spec().exprs();
    let mut gap = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let t = f.eval(*x, None, 0.0)?;
        gap += (y - t).abs() / xs.len() as f64;
        println!("x = {x:.1}  F_hat = {y:+.4}  F = {t:+.4}");
    }
    println!("mean |F_hat - F| = {gap:.4}");
    Ok(())
}
