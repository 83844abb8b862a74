//! The two-stage soup end to end on a freshly generated benchmark: subset
//! replicas, per-level averages, the recursive merge and classifier
//! retraining, with metrics after each stage.
//!
//!     cargo run --release --example lt_soups -- [workers]

use ltsoups::cli::Config;
use ltsoups::eval::evaluate;
use ltsoups::nn::weight_distance;
use ltsoups::pipeline::lt_soups;

fn main() -> ltsoups::Result<()> {
    let mut cfg = Config::default();
    cfg.methods.run.workers = std::env::args().nth(1).and_then(|w| w.parse().ok()).unwrap_or(1);
    let bench = cfg.data.benchmark(cfg.seed)?;
    let theta0 = cfg.model.pretrained(&bench, cfg.seed)?;
    let sizes = bench.train_counts.as_slice().to_vec();
    println!("train counts {:?}", sizes);

    let m = &cfg.methods;
    let schedule = m.schedule(bench.train.imbalance_ratio())?;
    println!("subset ratios {:?} x {} bootstraps", schedule.ratios(), schedule.bootstraps());
    let (model, art) = lt_soups(&theta0, &bench.train, Some(&bench.val), &schedule, &m.merge, &m.train, &m.run)?;

    for j in &art.jobs {
        println!(
            "{:<24} best epoch {:?} val bal acc {:.4}",
            j.job.name(),
            j.best_epoch,
            j.val_bal_acc.unwrap_or(f64::NAN)
        );
    }
    for l in &art.levels {
        println!("level rho={:<4} jobs {:?} drift {:.3}", l.rho, l.jobs, weight_distance(&theta0, &l.weights)?);
    }

    let report = |name: &str, w| -> ltsoups::Result<()> {
        let r = evaluate(w, &bench.test, Some(&bench.val), &sizes, &cfg.eval, Some(&theta0))?;
        println!(
            "{name:<10} bal acc {:.4} head {:.4} tail {:.4} ece {:.4} weight change {:.3}",
            r.bal_acc,
            r.groups.head.unwrap_or(f64::NAN),
            r.groups.tail.unwrap_or(f64::NAN),
            r.ece,
            r.weight_change
        );
        Ok(())
    };
    report("theta0", &theta0)?;
    if let Some((merged, recipe)) = &art.merged {
        println!("{recipe}");
        report("stage 1", merged)?;
    }
    report("stage 2", &model)?;
    Ok(())
}
