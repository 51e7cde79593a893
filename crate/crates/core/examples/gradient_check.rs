//! Compare the reverse-mode gradient of the neural dynamics loss with
//! central finite differences on a handful of parameters.

use netsym::dynamics::{regular_times, sample_initial, simulate, DynamicsKind, SimOptions};
use netsym::graph::gen_er;
use netsym::pind::{loss_and_grad, Normalization, PindArch, PindModel};

fn main() -> netsym::Result<()> {
    let graph = gen_er(12, 0.3, 1)?;
    let x0 = sample_initial(DynamicsKind::Lv, 12, 2);
    let obs = simulate(&DynamicsKind::Lv.spec(), &graph, &x0, &regular_times(0.0, 1.0, 10), &SimOptions::default())?;
    let mut model = PindModel::new(PindArch::for_kind(DynamicsKind::Lv), 1, Normalization::from_observations(&obs), 3)?;
    let (loss, grad) = loss_and_grad(&model, &graph, &obs, &x0, 1)?;
    println!("loss {loss:.6e}, {} parameters", grad.len());
    let flat = model.flatten();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in (0..flat.len()).step_by((flat.len() / 12).max(1)) {
        let mut p = flat.clone();
        p[k] += h;
        model.load_flat(&p)?;
        let up = loss_and_grad(&model, &graph, &obs, &x0, 1)?.0;
        p[k] -= 2.0 * h;
        model.load_flat(&p)?;
        let down = loss_and_grad(&model, &graph, &obs, &x0, 1)?.0;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
        worst = worst.max(rel);
        println!("param {k:>4}  tape {:+.8e}  fd {fd:+.8e}  rel {rel:.1e}", grad[k]);
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
