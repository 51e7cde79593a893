//! Interpolation versus extrapolation error of hand-written SIS models: a
//! correct skeleton with slightly wrong constants and an overfitted sparse
//! fit.

use netsym::bench::{extrapolation_check, parse_pair};
use netsym::dynamics::{sample_initial, DynamicsKind};
use netsym::graph::gen_ba;

fn main() -> netsym::Result<()> {
    let kind = DynamicsKind::Sis;
    let graph = gen_ba(50, 3, 0)?;
    let x0 = sample_initial(kind, 50, 1);
    let models = [
        ("truth skeleton", "-0.48540 * x_i", "(1 - x_i) * x_j"),
        ("sparse fit", "-0.46640 * x_i", "(0.99119 - 1.09637 * x_i) * x_j"),
        (
            "overfitted",
            "-0.47256 * x_i^2 - 0.12596",
            "0.10860 * sigmoid(x_j - x_i) + 0.18835 * (x_j - x_i^2) + 0.19917 * (x_j - x_i) + 0.35416 * sin(x_j)",
        ),
    ];
    println!("{:<16} {:>12} {:>12} {:>8}", "model", "[0,1] mse", "(1,2] mse", "ratio");
    for (name, f, g) in models {
        let (f, g) = parse_pair(f, g)?;
        let e = extrapolation_check((&f, &g), &kind.spec(), &graph, &x0, 1.0, 100)?;
        println!("{name:<16} {:>12.3e} {:>12.3e} {:>8.2}", e.interpolation_mse, e.extrapolation_mse, e.ratio());
    }
    Ok(())
}
