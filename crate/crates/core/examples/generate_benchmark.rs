//! Build long-tailed class counts along both axes, carve the progressive
//! subsets out of them and write a benchmark to disk.
//!
//!     cargo run --example generate_benchmark -- [out_dir]

use ltsoups::data::{
    dual_axis_counts, exp_decay_counts, ltds, make_schedule, split_eval, subsample_to_ratio, Benchmark, LongTailSpec,
    SyntheticSpec, DEFAULT_TAU,
};

fn main() -> ltsoups::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);

    // The classic single-axis profile.
    let counts = exp_decay_counts(100, 500, 100.0)?;
    println!(
        "exp decay: K=100 total={} rho={} eta={:.3}",
        counts.total(),
        counts.imbalance_ratio(),
        counts.head_tail_ratio(DEFAULT_TAU)?
    );

    // Same rho, different head-tail ratios.
    for eta in [4.0, 1.0, 0.25] {
        let spec = LongTailSpec::new(20, 500, 100.0).with_eta(eta);
        let c = dual_axis_counts(&spec, DEFAULT_TAU + 1, DEFAULT_TAU)?;
        println!(
            "eta={eta:<5} heads={:>2} total={:>5} measured eta={:.3} counts={:?}",
            c.num_head(DEFAULT_TAU),
            c.total(),
            c.head_tail_ratio(DEFAULT_TAU)?,
            c.as_slice()
        );
    }

    // Embeddings, then the nested subsets a soup trains on.
    let spec = SyntheticSpec { seed: 7, ..SyntheticSpec::default() };
    let plan = split_eval(&counts, 20, 10, 7);
    let bench = Benchmark::generate(&spec, &plan)?;
    let schedule = make_schedule(bench.train.imbalance_ratio(), 6, 2)?;
    for &r in schedule.ratios() {
        let sub = subsample_to_ratio(&bench.train, r, 11);
        println!(
            "subset rho_i={r:<4} rows={:>5} ({:.1}% of train) measured rho={:.2}",
            sub.len(),
            100.0 * sub.len() as f64 / bench.train.len() as f64,
            sub.imbalance_ratio()
        );
    }

    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        ltds::save(&bench.train, dir.join("train.ltds"))?;
        ltds::save(&bench.val, dir.join("val.ltds"))?;
        ltds::save(&bench.test, dir.join("test.ltds"))?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
