//! Recursive merging, its closed-form coefficients and EMA on toy weights.
//!
//!     cargo run --example merge_algebra

use ltsoups::merge::{effective_coefficients, recursive_merge, uniform_average, EmaState};
use ltsoups::nn::{BackboneConfig, ModelWeights};

fn constant(layout: &ltsoups::nn::Layout, v: f64) -> ModelWeights {
    ModelWeights::from_flat(layout.clone(), vec![v; layout.len()]).unwrap()
}

fn main() -> ltsoups::Result<()> {
    let layout = BackboneConfig::new(2, vec![2]).layout(2)?;
    let theta0 = constant(&layout, 0.0);
    // Level n is the constant model n, so the merge reads off its own weights.
    let levels: Vec<ModelWeights> = (1..=4).map(|n| constant(&layout, n as f64)).collect();

    for lambda in [0.0, 0.3, 0.7, 1.0] {
        let c = effective_coefficients(levels.len(), lambda);
        let merged = recursive_merge(&levels, &theta0, lambda)?;
        let closed: f64 = c.iter().enumerate().map(|(n, w)| n as f64 * w).sum();
        println!(
            "lambda={lambda:.1} coefficients={:.4?} sum={:.3} merged={:.6} closed form={:.6}",
            c,
            c.iter().sum::<f64>(),
            merged.flat()[0],
            closed
        );
    }

    let soup = uniform_average(&levels)?;
    println!("uniform soup of 1..=4: {}", soup.flat()[0]);

    let mut ema = EmaState::new(theta0.flat(), 0.9)?;
    for step in 1..=5 {
        ema.update(constant(&layout, 1.0).flat())?;
        println!("ema step {step}: {:.5}", ema.weights()[0]);
    }
    Ok(())
}
