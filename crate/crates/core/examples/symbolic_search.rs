//! Coordinated two-population search for the Kuramoto terms, guided by the
//! true terms as references. Small budget; pass `population generations seed`
//! to change it.

use netsym::dynamics::{regular_times, sample_initial, simulate, DynamicsKind, SimOptions};
use netsym::expr::skeleton_equiv;
use netsym::gp::{coordinated_search, GpConfig, TruthRefs};
use netsym::graph::gen_ba;

fn main() -> netsym::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let arg = |k: usize, d: u64| args.get(k).copied().unwrap_or(d);
    let kind = DynamicsKind::Kur;
    let graph = gen_ba(30, 3, 4)?;
    let x0 = sample_initial(kind, 30, 5);
    let target = simulate(&kind.spec(), &graph, &x0, &regular_times(0.0, 1.0, 100), &SimOptions::default())?;
    let (node, edge) = kind.spec().exprs();
    let cfg = GpConfig {
        population: arg(0, 60) as usize,
        generations: arg(1, 15) as usize,
        seed: arg(2, 1),
        fitness_stride: 4,
        fitness_substeps: 4,
        ..GpConfig::default()
    };
    let res = coordinated_search(&TruthRefs { node: node.clone(), edge: edge.clone() }, &target, &graph, &cfg)?;
    for g in &res.history {
        println!("gen {:>2} evolve {:<2} d_F {:.3e} d_G {:.3e} best {:.3e}  {} | {}", g.generation, g.evolved.name(), g.d_f, g.d_g, g.best_error, g.best_f, g.best_g);
    }
    println!("F = {}\nG = {}\nerror {:.3e}, {} simulations, {:.1}s", res.node, res.edge, res.error, res.simulations, res.wall_seconds);
    println!("skeleton recovered: {}", skeleton_equiv(&res.node, &node) && skeleton_equiv(&res.edge, &edge));
    Ok(())
}
