//! Result rows, CSV/JSON output and seed/η aggregates.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MetricsReport;

pub const CSV_HEADER: &str = "method,rho,eta,seed,bal_acc,acc_many,acc_medium,acc_few,acc_head,acc_tail,ece,brier,nll,temperature,weight_change,wall_seconds";

/// One evaluated (method, cell, seed). Empty group accuracies are blank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub rho: f64,
    pub eta: Option<f64>,
    pub seed: u64,
    pub bal_acc: f64,
    pub acc_many: Option<f64>,
    pub acc_medium: Option<f64>,
    pub acc_few: Option<f64>,
    pub acc_head: Option<f64>,
    pub acc_tail: Option<f64>,
    pub ece: f64,
    pub brier: f64,
    pub nll: f64,
    pub temperature: f64,
    pub weight_change: f64,
    pub wall_seconds: f64,
}

impl ReportRow {
    pub fn new(method: &str, rho: f64, eta: Option<f64>, seed: u64, m: &MetricsReport, wall_seconds: f64) -> Self {
        Self {
            method: method.to_string(),
            rho,
            eta,
            seed,
            bal_acc: m.bal_acc,
            acc_many: m.groups.many,
            acc_medium: m.groups.medium,
            acc_few: m.groups.few,
            acc_head: m.groups.head,
            acc_tail: m.groups.tail,
            ece: m.ece,
            brier: m.brier,
            nll: m.nll,
            temperature: m.temperature,
            weight_change: m.weight_change,
            wall_seconds,
        }
    }

    /// Identity of a row for resuming: method, cell and seed.
    pub fn key(&self) -> RowKey {
        RowKey {
            method: self.method.clone(),
            rho: self.rho.to_bits(),
            eta: self.eta.map(f64::to_bits),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowKey {
    pub method: String,
    pub rho: u64,
    pub eta: Option<u64>,
    pub seed: u64,
}

pub fn write_csv<W: Write>(rows: &[ReportRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(CSV_HEADER.split(','))?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Format {
            kind: "report CSV",
            msg: format!("unexpected header `{}`", header.join(",")),
        });
    }
    let rows: std::result::Result<Vec<ReportRow>, csv::Error> = rdr.deserialize().collect();
    Ok(rows?)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    read_csv(File::open(path)?)
}

/// Appends rows, writing the header first if the file is new or empty.
pub fn append_csv(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut out = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    if fresh && rows.is_empty() {
        out.write_record(CSV_HEADER.split(','))?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Mean of the rows sharing a key. Group accuracies average over the rows
/// where the group exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub rho: f64,
    /// `None` when the aggregate runs over every η.
    pub eta: Option<f64>,
    pub runs: usize,
    pub bal_acc: f64,
    pub acc_many: Option<f64>,
    pub acc_medium: Option<f64>,
    pub acc_few: Option<f64>,
    pub acc_head: Option<f64>,
    pub acc_tail: Option<f64>,
    pub ece: f64,
    pub brier: f64,
    pub nll: f64,
    pub temperature: f64,
    pub weight_change: f64,
    pub wall_seconds: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

fn mean_opt<'a>(rows: &[&'a ReportRow], f: impl Fn(&'a ReportRow) -> Option<f64>) -> Option<f64> {
    let present: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    (!present.is_empty()).then(|| mean(present.into_iter()))
}

fn aggregate(method: &str, rho: f64, eta: Option<f64>, rows: &[&ReportRow]) -> AggregateRow {
    AggregateRow {
        method: method.to_string(),
        rho,
        eta,
        runs: rows.len(),
        bal_acc: mean(rows.iter().map(|r| r.bal_acc)),
        acc_many: mean_opt(rows, |r| r.acc_many),
        acc_medium: mean_opt(rows, |r| r.acc_medium),
        acc_few: mean_opt(rows, |r| r.acc_few),
        acc_head: mean_opt(rows, |r| r.acc_head),
        acc_tail: mean_opt(rows, |r| r.acc_tail),
        ece: mean(rows.iter().map(|r| r.ece)),
        brier: mean(rows.iter().map(|r| r.brier)),
        nll: mean(rows.iter().map(|r| r.nll)),
        temperature: mean(rows.iter().map(|r| r.temperature)),
        weight_change: mean(rows.iter().map(|r| r.weight_change)),
        wall_seconds: mean(rows.iter().map(|r| r.wall_seconds)),
    }
}

/// Mean over seeds for each (method, ρ, η) cell.
pub fn cell_means(rows: &[ReportRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, u64, Option<u64>), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.method.clone(), r.rho.to_bits(), r.eta.map(f64::to_bits)))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((m, rho, eta), g)| aggregate(&m, f64::from_bits(rho), eta.map(f64::from_bits), &g))
        .collect()
}

/// Mean over every η and seed at fixed (method, ρ).
pub fn marginalize_eta(rows: &[ReportRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, u64), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.method.clone(), r.rho.to_bits())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((m, rho), g)| aggregate(&m, f64::from_bits(rho), None, &g))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub cells: Vec<AggregateRow>,
    pub marginals: Vec<AggregateRow>,
}

impl Report {
    pub fn new(rows: Vec<ReportRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("report rows"));
        }
        Ok(Self {
            cells: cell_means(&rows),
            marginals: marginalize_eta(&rows),
            rows,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

fn write_aggregates(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `rows.csv`, `cells.csv` and `marginals.csv`, or `report.json`, into
/// `dir`. Returns the files written.
pub fn emit_report(rows: Vec<ReportRow>, format: ReportFormat, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let report = Report::new(rows)?;
    std::fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Csv => {
            let files = [dir.join("rows.csv"), dir.join("cells.csv"), dir.join("marginals.csv")];
            write_csv(&report.rows, File::create(&files[0])?)?;
            write_aggregates(&report.cells, &files[1])?;
            write_aggregates(&report.marginals, &files[2])?;
            Ok(files.to_vec())
        }
        ReportFormat::Json => {
            let path = dir.join("report.json");
            serde_json::to_writer_pretty(File::create(&path)?, &report)?;
            Ok(vec![path])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, eta: f64, seed: u64, bal: f64, tail: Option<f64>) -> ReportRow {
        ReportRow {
            method: method.into(),
            rho: 100.0,
            eta: Some(eta),
            seed,
            bal_acc: bal,
            acc_many: Some(0.9),
            acc_medium: None,
            acc_few: tail,
            acc_head: Some(0.9),
            acc_tail: tail,
            ece: 0.05,
            brier: 0.2,
            nll: 0.4,
            temperature: 1.3,
            weight_change: 2.5,
            wall_seconds: 1.0,
        }
    }

    #[test]
    fn csv_round_trip() {
        let r = vec![row("lt-soups", 0.25, 3, 0.812_345_678_9, Some(0.7))];
        let mut buf = Vec::new();
        write_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert!(text.lines().nth(1).unwrap().contains(",,"), "{text}");
        assert_eq!(read_csv(&buf[..]).unwrap(), r);
    }

    #[test]
    fn append_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grid.csv");
        append_csv(&[row("a", 1.0, 0, 0.5, None)], &p).unwrap();
        append_csv(&[row("b", 1.0, 0, 0.6, None)], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("method")).count(), 1);
        assert_eq!(load_csv(&p).unwrap().len(), 2);
    }

    #[test]
    fn marginal_of_single_eta_is_cell() {
        let rows = vec![row("x", 0.5, 0, 0.6, Some(0.2)), row("x", 0.5, 1, 0.8, Some(0.4))];
        let cells = cell_means(&rows);
        let marg = marginalize_eta(&rows);
        assert_eq!(cells.len(), 1);
        assert_eq!(marg.len(), 1);
        assert_eq!(cells[0].bal_acc, marg[0].bal_acc);
        assert_eq!(cells[0].acc_tail, marg[0].acc_tail);
        assert!((cells[0].bal_acc - 0.7).abs() < 1e-15);
    }

    #[test]
    fn hand_average() {
        let rows = vec![
            row("x", 4.0, 0, 0.9, None),
            row("x", 0.1, 0, 0.6, Some(0.3)),
            row("x", 1.0, 0, 0.75, Some(0.5)),
            row("y", 1.0, 0, 0.1, None),
        ];
        let marg = marginalize_eta(&rows);
        assert_eq!(marg[0].method, "x");
        assert_eq!(marg[0].runs, 3);
        assert!((marg[0].bal_acc - 0.75).abs() < 1e-15);
        // only rows where the group exists
        assert!((marg[0].acc_tail.unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(marg[1].acc_tail, None);
        assert!(Report::new(Vec::new()).is_err());
    }
}
