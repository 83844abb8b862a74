//! Temperature scaling on logits whose calibrated posterior is known: labels
//! are drawn from `softmax(z)` and the "model" reports `z * t_true`, so the
//! fitted temperature should land on `t_true`.
//!
//!     cargo run --release --example calibration

use ltsoups::eval::{brier, ece, fit_temperature, nll, probabilities, DEFAULT_ECE_BINS};
use ltsoups::losses::softmax;
use ltsoups::rng;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::StandardNormal;

fn main() -> ltsoups::Result<()> {
    let (k, n) = (10, 20_000);
    let mut g = rng::stream(5, 0);
    let z: Vec<f64> = (0..n * k)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut g);
            1.5 * v
        })
        .collect();
    let labels: Vec<usize> = softmax(&z, k)
        .chunks(k)
        .map(|p| WeightedIndex::new(p).unwrap().sample(&mut g))
        .collect();

    for t_true in [0.5, 1.0, 3.0] {
        let logits: Vec<f64> = z.iter().map(|v| v * t_true).collect();
        let fit = fit_temperature(&logits, &labels, k)?;
        let raw = probabilities(&logits, k, 1.0);
        let scaled = probabilities(&logits, k, fit.temperature);
        println!(
            "t_true={t_true:<4} fitted T={:.4}  ECE {:.4} -> {:.4}  Brier {:.4} -> {:.4}  NLL {:.4} -> {:.4}",
            fit.temperature,
            ece(&raw, &labels, k, DEFAULT_ECE_BINS),
            ece(&scaled, &labels, k, DEFAULT_ECE_BINS),
            brier(&raw, &labels, k),
            brier(&scaled, &labels, k),
            nll(&raw, &labels, k).value,
            nll(&scaled, &labels, k).value,
        );
    }
    Ok(())
}
