//! Central finite differences against the hand-written backward pass, for
//! plain and logit-adjusted cross-entropy.
//!
//!     cargo run --example gradient_check

use ltsoups::losses::{ClassPriors, LossSpec};
use ltsoups::nn::{loss_and_grads, BackboneConfig, ModelWeights};
use ltsoups::rng;
use rand::Rng;

fn main() -> ltsoups::Result<()> {
    let (dim, k, n) = (6, 4, 9);
    let layout = BackboneConfig::new(dim, vec![5, 7]).layout(k)?;
    let mut g = rng::stream(3, 0);
    let mut params: Vec<f64> = (0..layout.len()).map(|_| g.random_range(-0.5..0.5)).collect();
    params[layout.log_temperature_index()] = (0.5f64).ln();
    let model = ModelWeights::from_flat(layout, params)?;
    let x: Vec<f64> = (0..n * dim).map(|_| g.random_range(-1.0..1.0)).collect();
    let y: Vec<usize> = (0..n).map(|i| i % k).collect();

    let specs = [
        ("ce", LossSpec::ce()),
        ("la", LossSpec::la(ClassPriors::from_sizes(&[50, 20, 5, 1])?)),
    ];
    for (name, spec) in specs {
        let (_, grad) = loss_and_grads(&model, &x, &y, &spec)?;
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..model.flat().len() {
            let mut p = model.flat().to_vec();
            p[i] += h;
            let up = loss_and_grads(&model.with_flat(p.clone())?, &x, &y, &spec)?.0;
            p[i] -= 2.0 * h;
            let down = loss_and_grads(&model.with_flat(p)?, &x, &y, &spec)?.0;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        println!("{name}: {} parameters, worst relative error {worst:.2e}", grad.len());
    }
    Ok(())
}
