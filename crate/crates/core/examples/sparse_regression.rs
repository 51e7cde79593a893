//! One- and two-phase sparse regression on every built-in system, clean and
//! at 30 dB.

use netsym::dynamics::{add_noise, regular_times, sample_initial, simulate, DynamicsKind, SimOptions};
use netsym::expr::skeleton_equiv;
use netsym::graph::gen_ba;
use netsym::sindy::{sindy, tp_sindy, SindyConfig, SparseModel};

fn main() -> netsym::Result<()> {
    let cfg = SindyConfig::default();
    let lib = cfg.library()?;
    println!("library: {}", lib.names().join(", "));
    let graph = gen_ba(50, 3, 0)?;
    for kind in DynamicsKind::ALL {
        let x0 = sample_initial(kind, 50, 1);
        let clean = simulate(&kind.spec(), &graph, &x0, &regular_times(0.0, 1.0, 100), &SimOptions::default())?;
        let (f, g) = kind.spec().exprs();
        for (label, obs) in [("clean", clean.clone()), ("30 dB", add_noise(&clean, 30.0, 2)?)] {
            let show = |name: &str, m: netsym::Result<SparseModel>| match m {
                Ok(m) => {
                    let ok = skeleton_equiv(&m.node_expr().unwrap(), &f) && skeleton_equiv(&m.edge_expr().unwrap(), &g);
                    println!("{:>3} {label:<6} {name:<8} recovered={ok:<5} F = {}  G = {}", kind.name(), m.node, m.edge);
                }
                Err(e) => println!("{:>3} {label:<6} {name:<8} failed: {e}", kind.name()),
            };
            show("sindy", sindy(&obs, &graph, &lib, cfg.lambda1, cfg.max_iters));
            show("tp-sindy", tp_sindy(&obs, &graph, &lib, &cfg));
        }
    }
    Ok(())
}
