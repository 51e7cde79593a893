//! Parse formulas, canonicalize them and compare skeletons.

use netsym::expr::{canonicalize, parse, skeleton_equiv, Skeleton};

fn main() -> netsym::Result<()> {
    let rows = [
        ("(1 - x_i) * x_j", "(0.99119 - 1.09637 * x_i) * x_j"),
        ("sin(x_i - x_j)", "sin(1.0001 * x_i - x_j)"),
        ("sin(x_i - x_j)", "0.99899 * sin(x_i - x_j)"),
        ("x_i * (0.75 - 0.5 * x_i)", "x_i * (0.75034 - 0.48812 * x_i)"),
        ("-0.5 * x_i", "-0.47256 * x_i^2 - 0.12596"),
        ("sigmoid(-0.75 * (x_j - 0.5))", "0.68484 * sigmoid(x_j)"),
    ];
    for (truth, found) in rows {
        let t = parse(truth)?;
        let f = parse(found)?;
        println!("{found}");
        println!("  canonical  {}", canonicalize(&f));
        println!("  skeleton   {}", Skeleton::of(&f));
        println!("  matches {truth}: {}", skeleton_equiv(&f, &t));
    }
    Ok(())
}
