//! Command-line front end of the benchmark.

use std::time::Duration;

use clap::Parser;

use crate::bench::{describe, emit_csv, run_cell, BenchConfig};
use crate::error::HarnessError;
use crate::kinds::{DsKind, SchemeKind, Workload};

/// Throughput and memory benchmark for the reclamation schemes.
///
/// Every combination of the listed schemes, structures and thread counts
/// is one cell; each cell runs `--repeats` times.
#[derive(Debug, Parser)]
#[command(version)]
pub struct BenchArgs {
    /// Comma-separated schemes; all of them by default.
    #[arg(long, value_delimiter = ',')]
    pub scheme: Vec<String>,
    /// Comma-separated structures: stack, list, hashmap.
    #[arg(long, default_value = "hashmap", value_delimiter = ',')]
    pub ds: Vec<String>,
    /// Comma-separated thread counts; the number of CPUs by default.
    #[arg(long, value_delimiter = ',')]
    pub threads: Vec<usize>,
    /// Seconds per repeat.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 50_000)]
    pub prefill: u64,
    #[arg(long, default_value_t = 100_000)]
    pub key_range: u64,
    /// write (50% insert, 50% delete) or read (90% get, 10% insert).
    #[arg(long, default_value = "write")]
    pub workload: String,
    #[arg(long, default_value_t = 110)]
    pub epoch_freq: usize,
    #[arg(long, default_value_t = 120)]
    pub retire_freq: usize,
    #[arg(long, default_value_t = 3)]
    pub max_idx: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Write one CSV row per cell to this file.
    #[arg(long)]
    pub csv: Option<std::path::PathBuf>,
}

impl BenchArgs {
    /// One configuration per cell, validated.
    pub fn cells(&self) -> Result<Vec<BenchConfig>, HarnessError> {
        let schemes: Vec<SchemeKind> = if self.scheme.is_empty() {
            SchemeKind::ALL.to_vec()
        } else {
            self.scheme.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
        };
        let ds = self.ds.iter().map(|s| s.parse()).collect::<Result<Vec<DsKind>, _>>()?;
        let workload: Workload = self.workload.parse()?;
        let threads = if self.threads.is_empty() {
            vec![std::thread::available_parallelism().map_or(1, |n| n.get())]
        } else {
            self.threads.clone()
        };
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(HarnessError::Invalid("duration must be a positive number of seconds".into()));
        }
        let mut out = Vec::new();
        for &scheme in &schemes {
            for &d in &ds {
                for &t in &threads {
                    let c = BenchConfig {
                        scheme,
                        ds: d,
                        threads: t,
                        duration: Duration::from_secs_f64(self.duration),
                        prefill: self.prefill,
                        key_range: self.key_range,
                        workload,
                        epoch_freq: self.epoch_freq,
                        retire_freq: self.retire_freq,
                        max_idx: self.max_idx,
                        seed: self.seed,
                        repeats: self.repeats,
                        ..BenchConfig::default()
                    };
                    c.validate()?;
                    out.push(c);
                }
            }
        }
        Ok(out)
    }

    /// Runs every cell, printing a summary per cell and writing the CSV.
    pub fn run(&self) -> Result<(), HarnessError> {
        let cells = self.cells()?;
        let mut reports = Vec::with_capacity(cells.len());
        for c in &cells {
            let r = run_cell(c)?;
            describe(&r, std::io::stdout().lock())?;
            reports.push(r);
        }
        if let Some(path) = &self.csv {
            emit_csv(&reports, std::fs::File::create(path)?)?;
        }
        Ok(())
    }
}
