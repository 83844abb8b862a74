//! Every method on the same benchmark, one line each.
//!
//!     cargo run --release --example baselines -- [seed]

use ltsoups::cli::Config;
use ltsoups::eval::evaluate;
use ltsoups::pipeline::{run_method, Method};

fn main() -> ltsoups::Result<()> {
    let mut cfg = Config::default();
    if let Some(seed) = std::env::args().nth(1) {
        cfg.set("run.seed", &seed).map_err(|e| ltsoups::Error::validation("seed", e))?;
    }
    let bench = cfg.data.benchmark(cfg.seed)?;
    let theta0 = cfg.model.pretrained(&bench, cfg.seed)?;
    let sizes = bench.train_counts.as_slice().to_vec();

    println!("{:<16} {:>7} {:>7} {:>7} {:>7} {:>7}", "method", "bal", "head", "tail", "ece", "drift");
    let zero_shot = evaluate(&theta0, &bench.test, Some(&bench.val), &sizes, &cfg.eval, Some(&theta0))?;
    println!(
        "{:<16} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.3}",
        "zero-shot",
        zero_shot.bal_acc,
        zero_shot.groups.head.unwrap_or(f64::NAN),
        zero_shot.groups.tail.unwrap_or(f64::NAN),
        zero_shot.ece,
        0.0
    );
    for &m in Method::ALL.iter() {
        let w = run_method(m, &theta0, &bench.train, Some(&bench.val), &cfg.methods)?;
        let r = evaluate(&w, &bench.test, Some(&bench.val), &sizes, &cfg.eval, Some(&theta0))?;
        println!(
            "{:<16} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.3}",
            m.name(),
            r.bal_acc,
            r.groups.head.unwrap_or(f64::NAN),
            r.groups.tail.unwrap_or(f64::NAN),
            r.ece,
            r.weight_change
        );
    }
    Ok(())
}
