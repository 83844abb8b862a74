//! (ρ, η) sweeps over the synthetic benchmark.

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Config;
use super::report::{append_csv, load_csv, ReportRow, RowKey};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::pipeline::{run_method, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rho_values: Vec<f64>,
    pub eta_values: Vec<f64>,
    pub methods: Vec<Method>,
    /// Seeds per cell: the root seed, root + 1, ...
    pub repeats: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rho_values: vec![50.0, 100.0, 250.0],
            eta_values: vec![4.0, 1.0, 0.5, 0.25, 0.1],
            methods: vec![Method::LtSoups, Method::FullFt, Method::ModelSoups, Method::LinearProbe],
            repeats: 1,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rho_values.is_empty() || self.rho_values.iter().any(|r| !(*r >= 1.0)) {
            return Err(Error::validation("grid.rho", "need at least one value, each >= 1"));
        }
        if self.eta_values.is_empty() || self.eta_values.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::validation("grid.eta", "need at least one value, each > 0"));
        }
        if self.methods.is_empty() {
            return Err(Error::validation("grid.methods", "need at least one method"));
        }
        if self.repeats == 0 {
            return Err(Error::validation("grid.repeats", "must be >= 1"));
        }
        Ok(())
    }

    /// Every (ρ, η, seed) cell in output order.
    pub fn cells(&self, root: u64) -> Vec<(f64, f64, u64)> {
        let mut out = Vec::new();
        for &rho in &self.rho_values {
            for &eta in &self.eta_values {
                for r in 0..self.repeats {
                    out.push((rho, eta, root.wrapping_add(r as u64)));
                }
            }
        }
        out
    }

    pub fn num_rows(&self) -> usize {
        self.rho_values.len() * self.eta_values.len() * self.repeats * self.methods.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridOutcome {
    pub written: usize,
    pub skipped: usize,
    /// `(method, rho, eta, seed, message)` of failed runs; they are not
    /// written, so a rerun retries them.
    pub failures: Vec<(String, f64, f64, u64, String)>,
}

/// Generates one cell's benchmark and runs the requested methods on it.
pub fn run_cell(cfg: &Config, rho: f64, eta: f64, seed: u64, methods: &[Method]) -> Vec<std::result::Result<ReportRow, (Method, String)>> {
    let cell = cfg.for_cell(rho, eta, seed);
    let setup = cell.data.benchmark(seed).and_then(|b| {
        let theta0 = cell.model.pretrained(&b, seed)?;
        Ok((b, theta0))
    });
    let (bench, theta0) = match setup {
        Ok(s) => s,
        Err(e) => return methods.iter().map(|&m| Err((m, e.to_string()))).collect(),
    };
    let mut mcfg = cell.methods.clone();
    mcfg.run.workers = 1;
    let sizes = bench.train_counts.as_slice().to_vec();
    methods
        .iter()
        .map(|&m| {
            let start = Instant::now();
            let model = run_method(m, &theta0, &bench.train, Some(&bench.val), &mcfg).map_err(|e| (m, e.to_string()))?;
            let wall = start.elapsed().as_secs_f64();
            let metrics = evaluate(&model, &bench.test, Some(&bench.val), &sizes, &cell.eval, Some(&theta0))
                .map_err(|e| (m, e.to_string()))?;
            Ok(ReportRow::new(m.name(), rho, Some(eta), seed, &metrics, wall))
        })
        .collect()
}

/// Runs every missing (method, ρ, η, seed) row and appends it to `out`.
/// Cells run `workers` at a time; rows are appended in grid order after each
/// batch, so the file is deterministic apart from wall-clock times.
pub fn run_grid(cfg: &Config, out: &Path, workers: usize) -> Result<GridOutcome> {
    cfg.grid.validate()?;
    let done: HashSet<RowKey> = if out.exists() {
        load_csv(out)?.iter().map(ReportRow::key).collect()
    } else {
        HashSet::new()
    };
    let mut outcome = GridOutcome::default();
    let mut pending = Vec::new();
    for (rho, eta, seed) in cfg.grid.cells(cfg.seed) {
        let methods: Vec<Method> = cfg
            .grid
            .methods
            .iter()
            .copied()
            .filter(|m| {
                let key = RowKey {
                    method: m.name().to_string(),
                    rho: rho.to_bits(),
                    eta: Some(eta.to_bits()),
                    seed,
                };
                !done.contains(&key)
            })
            .collect();
        outcome.skipped += cfg.grid.methods.len() - methods.len();
        if !methods.is_empty() {
            pending.push((rho, eta, seed, methods));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidSpec(format!("worker pool: {e}")))?;
    for chunk in pending.chunks(workers.max(1)) {
        let results: Vec<_> = pool.install(|| {
            chunk
                .par_iter()
                .map(|(rho, eta, seed, methods)| run_cell(cfg, *rho, *eta, *seed, methods))
                .collect()
        });
        let mut rows = Vec::new();
        for ((rho, eta, seed, _), cell) in chunk.iter().zip(results) {
            for r in cell {
                match r {
                    Ok(row) => rows.push(row),
                    Err((m, msg)) => {
                        eprintln!("grid cell rho={rho} eta={eta} seed={seed} method={m} failed: {msg}");
                        outcome.failures.push((m.name().to_string(), *rho, *eta, *seed, msg));
                    }
                }
            }
        }
        append_csv(&rows, out)?;
        outcome.written += rows.len();
    }
    if pending.is_empty() && !out.exists() {
        append_csv(&[], out)?;
    }
    Ok(outcome)
}
