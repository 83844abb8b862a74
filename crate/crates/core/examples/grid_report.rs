//! A small (rho, eta) sweep appended to a CSV, then aggregated over seeds and
//! marginalised over eta. Rerunning skips rows that are already present.
//!
//!     cargo run --release --example grid_report -- [out_dir]

use ltsoups::cli::report::load_csv;
use ltsoups::cli::{emit_report, run_grid, Config, ReportFormat};
use ltsoups::pipeline::Method;

fn main() -> ltsoups::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ltsoups-grid"));
    std::fs::create_dir_all(&dir)?;

    let mut cfg = Config::default();
    cfg.grid.rho_values = vec![20.0, 50.0];
    cfg.grid.eta_values = vec![1.0, 0.25];
    cfg.grid.methods = vec![Method::FullFt, Method::LinearProbe];
    cfg.data.n_max = 200;
    cfg.methods.train.epochs = 3;

    let csv = dir.join("grid.csv");
    let outcome = run_grid(&cfg, &csv, 2)?;
    println!("{} written, {} already present, {} failed", outcome.written, outcome.skipped, outcome.failures.len());

    for path in emit_report(load_csv(&csv)?, ReportFormat::Csv, &dir)? {
        println!("--- {}", path.display());
        print!("{}", std::fs::read_to_string(path)?);
    }
    Ok(())
}
