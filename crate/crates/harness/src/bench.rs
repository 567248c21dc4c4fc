//! Timed benchmark cells: prefill, run a randomized workload for a fixed
//! time on every thread, report throughput and retired-node metrics.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering::SeqCst};
use std::sync::Barrier;
use std::time::{Duration, Instant};

use crystalline::ds::DEFAULT_BUCKET_BITS;
use crystalline::Config;

use crate::error::HarnessError;
use crate::kinds::{DsKind, SchemeKind, Workload};
use crate::target::{with_target, AllocKind, Build, Target, Visit};
use crate::workload::{stream_id, Op, OpStream};

/// Parameters of one benchmark cell.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub scheme: SchemeKind,
    pub ds: DsKind,
    pub threads: usize,
    pub duration: Duration,
    pub prefill: u64,
    pub key_range: u64,
    pub workload: Workload,
    pub epoch_freq: usize,
    pub retire_freq: usize,
    pub max_idx: usize,
    pub max_tries: usize,
    pub seed: u64,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scheme: SchemeKind::CrystallineW,
            ds: DsKind::HashMap,
            threads: 1,
            duration: Duration::from_secs(10),
            prefill: 50_000,
            key_range: 100_000,
            workload: Workload::Write,
            epoch_freq: 110,
            retire_freq: 120,
            max_idx: 3,
            max_tries: 16,
            seed: 0,
            repeats: 5,
        }
    }
}

impl BenchConfig {
    /// Scheme configuration; every worker gets a slot.
    pub fn scheme_config(&self) -> Config {
        Config {
            max_threads: self.threads,
            max_idx: self.max_idx,
            epoch_freq: self.epoch_freq as u64,
            retire_freq: self.retire_freq,
            max_tries: self.max_tries,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Invalid(m.to_owned()));
        if self.scheme == SchemeKind::Broken {
            return bad("the broken scheme is not benchmarked");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        if self.duration.is_zero() {
            return bad("duration must be positive");
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if self.key_range == 0 {
            return bad("key range must be positive");
        }
        if self.prefill > self.key_range {
            return bad("prefill exceeds key range");
        }
        if self.ds == DsKind::Stack && self.workload == Workload::Read {
            return bad("the stack has no lookup; use the write workload");
        }
        self.scheme_config().validate()?;
        if self.max_idx < self.ds.indices() {
            return Err(crystalline::ConfigError::TooFewIndices {
                needed: self.ds.indices(),
                configured: self.max_idx,
            }
            .into());
        }
        Ok(())
    }
}

/// Measurements of one repeat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub ops: u64,
    /// Seconds between the start signal and the stop signal.
    pub elapsed: f64,
    pub throughput: f64,
    /// Retired but unfreed nodes, averaged over completed operations.
    pub avg_retired_per_op: f64,
    /// Largest retired-but-unfreed count seen by the sampler.
    pub peak_unreclaimed: u64,
}

/// Per-repeat samples of a cell and their means.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub samples: Vec<Sample>,
    pub throughput: f64,
    pub avg_retired_per_op: f64,
    pub peak_unreclaimed: f64,
}

impl BenchReport {
    fn from_samples(config: BenchConfig, samples: Vec<Sample>) -> BenchReport {
        let n = samples.len() as f64;
        let mean = |f: fn(&Sample) -> f64| samples.iter().map(f).sum::<f64>() / n;
        BenchReport {
            throughput: mean(|s| s.throughput),
            avg_retired_per_op: mean(|s| s.avg_retired_per_op),
            peak_unreclaimed: mean(|s| s.peak_unreclaimed as f64),
            config,
            samples,
        }
    }

    pub fn row(&self) -> CsvRow {
        CsvRow {
            scheme: self.config.scheme,
            ds: self.config.ds,
            threads: self.config.threads,
            workload: self.config.workload,
            throughput_ops_s: self.throughput,
            avg_retired_per_op: self.avg_retired_per_op,
            peak_unreclaimed: self.peak_unreclaimed,
            seed: self.config.seed,
        }
    }
}

/// Interval between samples of the global unreclaimed count.
const SAMPLE_EVERY: Duration = Duration::from_millis(1);

struct Cell<'a> {
    config: &'a BenchConfig,
    repeat: usize,
}

#[derive(Default)]
struct ThreadTotals {
    ops: u64,
    unreclaimed_sum: i128,
}

impl Visit for Cell<'_> {
    type Out = Sample;

    fn visit<T: Target>(self, t: &T) -> Sample {
        let c = self.config;
        prefill(t, c, self.repeat);
        let stop = AtomicBool::new(false);
        let start = Barrier::new(c.threads + 1);
        let (totals, elapsed, peak) = std::thread::scope(|s| {
            let workers: Vec<_> = (0..c.threads)
                .map(|tid| {
                    let (stop, start) = (&stop, &start);
                    s.spawn(move || {
                        let mut h = t.handle().expect("one slot per worker");
                        let mut ops = OpStream::new(c.seed, stream_id(self.repeat, tid), c.workload, c.key_range);
                        let mut acc = ThreadTotals::default();
                        start.wait();
                        while !stop.load(SeqCst) {
                            match ops.next().unwrap() {
                                Op::Insert(k) => t.insert(&mut h, k),
                                Op::Delete(k) => t.delete(&mut h, k),
                                Op::Get(k) => t.get(&mut h, k),
                            };
                            acc.ops += 1;
                            acc.unreclaimed_sum += t.local_unreclaimed(&h) as i128;
                        }
                        acc
                    })
                })
                .collect();
            start.wait();
            let t0 = Instant::now();
            let mut peak = 0;
            while t0.elapsed() < c.duration {
                peak = peak.max(t.snapshot().unreclaimed());
                std::thread::sleep(SAMPLE_EVERY.min(c.duration.saturating_sub(t0.elapsed())));
            }
            stop.store(true, SeqCst);
            let elapsed = t0.elapsed().as_secs_f64();
            let totals: Vec<ThreadTotals> = workers.into_iter().map(|w| w.join().expect("worker")).collect();
            (totals, elapsed, peak.max(t.snapshot().unreclaimed()))
        });
        let ops: u64 = totals.iter().map(|a| a.ops).sum();
        // Each thread's average of its own count; their sum is the average
        // of the global count when threads progress at similar rates.
        let avg = totals.iter().filter(|a| a.ops != 0).map(|a| a.unreclaimed_sum as f64 / a.ops as f64).sum::<f64>();
        Sample { ops, elapsed, throughput: ops as f64 / elapsed, avg_retired_per_op: avg, peak_unreclaimed: peak }
    }
}

/// Inserts `prefill` distinct keys drawn from the key range (or pushes
/// `prefill` values on the stack). Keys go in descending order so each list
/// insertion stops at the head.
fn prefill<T: Target>(t: &T, c: &BenchConfig, repeat: usize) {
    let mut h = t.handle().expect("registry has room for the prefill");
    if c.ds == DsKind::Stack {
        for v in 0..c.prefill {
            t.insert(&mut h, v);
        }
        return;
    }
    let mut stream = OpStream::new(c.seed, (repeat as u64) << 32, c.workload, c.key_range);
    let mut keys = BTreeSet::new();
    while (keys.len() as u64) < c.prefill {
        keys.insert(stream.key());
    }
    for k in keys.into_iter().rev() {
        assert!(t.insert(&mut h, k));
    }
}

/// Runs all repeats of a cell.
pub fn run_cell(config: &BenchConfig) -> Result<BenchReport, HarnessError> {
    config.validate()?;
    let b = Build {
        scheme: config.scheme,
        ds: config.ds,
        config: config.scheme_config(),
        bucket_bits: DEFAULT_BUCKET_BITS,
        alloc: AllocKind::System,
    };
    let mut samples = Vec::with_capacity(config.repeats);
    for repeat in 0..config.repeats {
        samples.push(with_target(b, Cell { config, repeat })?.0);
    }
    Ok(BenchReport::from_samples(config.clone(), samples))
}

pub const CSV_HEADER: [&str; 8] =
    ["scheme", "ds", "threads", "workload", "throughput_ops_s", "avg_retired_per_op", "peak_unreclaimed", "seed"];

/// One CSV line: the means of a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsvRow {
    pub scheme: SchemeKind,
    pub ds: DsKind,
    pub threads: usize,
    pub workload: Workload,
    pub throughput_ops_s: f64,
    pub avg_retired_per_op: f64,
    pub peak_unreclaimed: f64,
    pub seed: u64,
}

impl CsvRow {
    fn key(&self) -> (SchemeKind, DsKind, usize) {
        (self.scheme, self.ds, self.threads)
    }
}

/// Writes the header and one row per report, ordered by scheme, structure
/// and thread count. Floats use the shortest representation that parses
/// back to the same value.
pub fn emit_csv<W: std::io::Write>(reports: &[BenchReport], out: W) -> Result<(), HarnessError> {
    let rows: Vec<CsvRow> = reports.iter().map(BenchReport::row).collect();
    emit_rows(&rows, out)
}

/// As [`emit_csv`] for rows already reduced to means.
pub fn emit_rows<W: std::io::Write>(rows: &[CsvRow], out: W) -> Result<(), HarnessError> {
    let mut rows = rows.to_vec();
    rows.sort_by_key(CsvRow::key);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.scheme.to_string(),
            r.ds.to_string(),
            r.threads.to_string(),
            r.workload.to_string(),
            r.throughput_ops_s.to_string(),
            r.avg_retired_per_op.to_string(),
            r.peak_unreclaimed.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(reports: &[BenchReport]) -> Result<String, HarnessError> {
    let mut buf = Vec::new();
    emit_csv(reports, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Parses text written by [`emit_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    if r.headers()?.iter().ne(CSV_HEADER) {
        return Err(HarnessError::Invalid(format!("unexpected csv header: {:?}", r.headers()?)));
    }
    let num = |f: &str, what: &str| HarnessError::Invalid(format!("bad {what} `{f}`"));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        rows.push(CsvRow {
            scheme: f(0).parse()?,
            ds: f(1).parse()?,
            threads: f(2).parse().map_err(|_| num(f(2), "threads"))?,
            workload: f(3).parse()?,
            throughput_ops_s: f(4).parse().map_err(|_| num(f(4), "throughput"))?,
            avg_retired_per_op: f(5).parse().map_err(|_| num(f(5), "average"))?,
            peak_unreclaimed: f(6).parse().map_err(|_| num(f(6), "peak"))?,
            seed: f(7).parse().map_err(|_| num(f(7), "seed"))?,
        });
    }
    Ok(rows)
}

/// Human-readable summary of a report.
pub fn describe(r: &BenchReport, mut out: impl std::io::Write) -> std::io::Result<()> {
    let c = &r.config;
    writeln!(
        out,
        "{} {} {}t {}: {:.0} ops/s, {:.1} retired/op, peak {:.0}",
        c.scheme, c.ds, c.threads, c.workload, r.throughput, r.avg_retired_per_op, r.peak_unreclaimed
    )?;
    for (i, s) in r.samples.iter().enumerate() {
        writeln!(
            out,
            "  repeat {i}: {} ops in {:.3} s, {:.0} ops/s, {:.1} retired/op, peak {}",
            s.ops, s.elapsed, s.throughput, s.avg_retired_per_op, s.peak_unreclaimed
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(scheme: SchemeKind, ds: DsKind, threads: usize, x: f64) -> BenchReport {
        let config = BenchConfig { scheme, ds, threads, ..BenchConfig::default() };
        let s = Sample { ops: 3, elapsed: 0.1, throughput: x, avg_retired_per_op: x / 7.0, peak_unreclaimed: 11 };
        BenchReport::from_samples(config, vec![s])
    }

    #[test]
    fn defaults_match_protocol() {
        let c = BenchConfig::default();
        assert_eq!((c.prefill, c.key_range, c.duration, c.repeats), (50_000, 100_000, Duration::from_secs(10), 5));
        assert_eq!((c.epoch_freq, c.retire_freq, c.max_idx, c.max_tries), (110, 120, 3, 16));
    }

    #[test]
    fn validation() {
        let ok = BenchConfig::default();
        assert!(ok.validate().is_ok());
        let cases = [
            BenchConfig { prefill: 100_001, ..ok.clone() },
            BenchConfig { ds: DsKind::Stack, workload: Workload::Read, ..ok.clone() },
            BenchConfig { scheme: SchemeKind::Broken, ..ok.clone() },
            BenchConfig { threads: 0, ..ok.clone() },
            BenchConfig { max_idx: 2, ..ok.clone() },
            BenchConfig { epoch_freq: 0, ..ok.clone() },
            BenchConfig { repeats: 0, ..ok.clone() },
        ];
        for c in cases {
            let e = c.validate().unwrap_err();
            assert!(e.is_usage(), "{c:?}: {e}");
        }
        assert!(BenchConfig { ds: DsKind::Stack, max_idx: 1, ..ok }.validate().is_ok());
    }

    #[test]
    fn one_report_two_lines() {
        let s = csv_string(&[report(SchemeKind::Ebr, DsKind::List, 2, 1.5)]).unwrap();
        assert_eq!(s.lines().count(), 2);
        assert_eq!(s.lines().next().unwrap(), CSV_HEADER.join(","));
    }

    #[test]
    fn rows_sorted_by_scheme_ds_threads() {
        let reps = [
            report(SchemeKind::CrystallineW, DsKind::Stack, 1, 1.0),
            report(SchemeKind::Ebr, DsKind::HashMap, 4, 2.0),
            report(SchemeKind::Ebr, DsKind::HashMap, 2, 3.0),
        ];
        let rows = parse_csv(&csv_string(&reps).unwrap()).unwrap();
        let keys: Vec<_> = rows.iter().map(CsvRow::key).collect();
        assert_eq!(
            keys,
            [
                (SchemeKind::Ebr, DsKind::HashMap, 2),
                (SchemeKind::Ebr, DsKind::HashMap, 4),
                (SchemeKind::CrystallineW, DsKind::Stack, 1)
            ]
        );
    }

    #[test]
    fn bad_header_rejected() {
        assert!(parse_csv("a,b\n1,2\n").is_err());
    }
}
