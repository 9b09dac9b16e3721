//! Packet reception ratio by distance, channel load, and the CSV files the
//! command line tool writes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::apps::PacketType;
use crate::kernel::SimTime;
use crate::mobility::NodeId;

/// Receptions of learning-node frames in one distance bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrrCount {
    pub received: u64,
    pub expected: u64,
}

impl PrrCount {
    pub fn prr(&self) -> Option<f64> {
        (self.expected > 0).then(|| self.received as f64 / self.expected as f64)
    }

    pub fn add(&mut self, other: &PrrCount) {
        self.received += other.received;
        self.expected += other.expected;
    }
}

/// Fixed-width distance bins over `[0, max_distance)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrrHistogram {
    pub bin_width_m: f64,
    pub counts: Vec<PrrCount>,
}

impl PrrHistogram {
    pub fn new(bin_width_m: f64, bins: usize) -> Self {
        Self { bin_width_m, counts: vec![PrrCount::default(); bins] }
    }

    pub fn max_distance_m(&self) -> f64 {
        self.bin_width_m * self.counts.len() as f64
    }

    pub fn bin_of(&self, d: f64) -> Option<usize> {
        if !(d >= 0.0) {
            return None;
        }
        let k = (d / self.bin_width_m) as usize;
        (k < self.counts.len()).then_some(k)
    }

    /// Counts one potential receiver at distance `d`. Receivers beyond the
    /// last bin are ignored.
    pub fn record(&mut self, d: f64, received: bool) {
        if let Some(k) = self.bin_of(d) {
            let c = &mut self.counts[k];
            c.expected += 1;
            c.received += u64::from(received);
        }
    }

    pub fn bin_range(&self, k: usize) -> (f64, f64) {
        (k as f64 * self.bin_width_m, (k + 1) as f64 * self.bin_width_m)
    }

    /// Pooled count over the bins lying inside `[lo, hi)`.
    pub fn pooled(&self, lo: f64, hi: f64) -> PrrCount {
        let mut out = PrrCount::default();
        for (k, c) in self.counts.iter().enumerate() {
            let (a, b) = self.bin_range(k);
            if a >= lo - 1e-9 && b <= hi + 1e-9 {
                out.add(c);
            }
        }
        out
    }
}

/// Mean and normal-approximation 95 % half-width over runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    /// `None` with fewer than two samples.
    pub ci95: Option<f64>,
    pub n: usize,
}

pub fn mean_ci(samples: &[f64]) -> Option<MeanCi> {
    let n = samples.len();
    if n == 0 {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let ci95 = (n >= 2).then(|| {
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * var.sqrt() / (n as f64).sqrt()
    });
    Some(MeanCi { mean, ci95, n })
}

/// One output row: a distance bin averaged over runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PrrRow {
    pub bin_lo_m: f64,
    pub bin_hi_m: f64,
    pub stats: MeanCi,
}

/// Per-bin mean PRR over runs. A run contributes to a bin only if it had a
/// potential receiver there; bins empty in every run are left out.
pub fn aggregate(runs: &[&PrrHistogram]) -> Vec<PrrRow> {
    let Some(first) = runs.first() else { return Vec::new() };
    (0..first.counts.len())
        .filter_map(|k| {
            let samples: Vec<f64> = runs.iter().filter_map(|h| h.counts.get(k).and_then(PrrCount::prr)).collect();
            let stats = mean_ci(&samples)?;
            let (lo, hi) = first.bin_range(k);
            Some(PrrRow { bin_lo_m: lo, bin_hi_m: hi, stats })
        })
        .collect()
}

/// Per-run PRR pooled over `[lo, hi)`, averaged over runs.
pub fn pooled_mean(runs: &[&PrrHistogram], lo: f64, hi: f64) -> Option<MeanCi> {
    let samples: Vec<f64> = runs.iter().filter_map(|h| h.pooled(lo, hi).prr()).collect();
    mean_ci(&samples)
}

pub const PRR_HEADER: [&str; 7] = ["scenario", "mode", "bin_lo_m", "bin_hi_m", "prr", "ci95", "n_runs"];

pub fn write_prr_csv<W: Write>(w: W, scenario: &str, mode: &str, rows: &[PrrRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(PRR_HEADER)?;
    for r in rows {
        out.write_record([
            scenario.to_string(),
            mode.to_string(),
            format!("{}", r.bin_lo_m),
            format!("{}", r.bin_hi_m),
            format!("{:.6}", r.stats.mean),
            r.stats.ci95.map(|c| format!("{c:.6}")).unwrap_or_default(),
            r.stats.n.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// A row read back from a PRR CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PrrCsvRow {
    pub scenario: String,
    pub mode: String,
    pub bin_lo_m: f64,
    pub bin_hi_m: f64,
    pub prr: f64,
    pub ci95: Option<f64>,
    pub n_runs: usize,
}

pub fn read_prr_csv<R: std::io::Read>(r: R) -> csv::Result<Vec<PrrCsvRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// Mean of per-window CBR samples.
pub fn mean_channel_load<'a, I: IntoIterator<Item = &'a [f64]>>(series: I) -> f64 {
    let (sum, n) = series.into_iter().flatten().fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbrSample {
    pub t_ms: u64,
    pub node: NodeId,
    pub cbr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilitySample {
    pub t_us: SimTime,
    pub node: NodeId,
    pub lane: u8,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub heading: f64,
}

/// One packet of the learning node as handled by its scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulingRecord {
    pub t_us: SimTime,
    pub ptype: PacketType,
    pub deferred_by_us: SimTime,
    pub predicted_overlap_us: SimTime,
    pub no_gap_flag: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionError {
    pub neighbor: NodeId,
    pub ptype: PacketType,
    pub abs_error_ms: f64,
}

/// Writes serde records with a header row (also for an empty slice).
pub fn write_records<W: Write, T: Serialize>(w: W, header: &[&str], records: &[T]) -> csv::Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header)?;
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub const CBR_HEADER: [&str; 3] = ["t_ms", "node", "cbr"];
pub const MOBILITY_HEADER: [&str; 7] = ["t_us", "node", "lane", "x", "y", "speed", "heading"];
pub const SCHEDULING_HEADER: [&str; 5] = ["t_us", "ptype", "deferred_by_us", "predicted_overlap_us", "no_gap_flag"];
pub const PREDICTION_ERROR_HEADER: [&str; 3] = ["neighbor", "ptype", "abs_error_ms"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_receptions() {
        let mut h = PrrHistogram::new(25.0, 12);
        h.record(80.0, true);
        assert_eq!(h.counts[3], PrrCount { received: 1, expected: 1 });
        h.record(310.0, true);
        h.record(300.0, true);
        assert_eq!(h.counts.iter().map(|c| c.expected).sum::<u64>(), 1);
        h.record(90.0, false);
        assert_eq!(h.counts[3], PrrCount { received: 1, expected: 2 });
    }

    #[test]
    fn ci_formula() {
        let s = mean_ci(&[0.8, 0.9]).unwrap();
        assert!((s.mean - 0.85).abs() < 1e-12);
        let expect = 1.96 * (0.005f64).sqrt() / 2f64.sqrt();
        assert!((s.ci95.unwrap() - expect).abs() < 1e-12);
        assert!((s.ci95.unwrap() - 0.098).abs() < 1e-3);
        assert_eq!(mean_ci(&[0.5]).unwrap().ci95, None);
        assert_eq!(mean_ci(&[0.5, 0.5, 0.5]).unwrap().ci95, Some(0.0));
    }

    #[test]
    fn empty_bins_are_dropped() {
        let mut a = PrrHistogram::new(25.0, 4);
        a.record(10.0, true);
        let rows = aggregate(&[&a, &a]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].stats.ci95, Some(0.0));
    }

    #[test]
    fn csv_round_trip() {
        let mut a = PrrHistogram::new(25.0, 4);
        a.record(30.0, true);
        a.record(30.0, false);
        let rows = aggregate(&[&a]);
        let mut buf = Vec::new();
        write_prr_csv(&mut buf, "s", "none", &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scenario,mode,bin_lo_m,bin_hi_m,prr,ci95,n_runs\n"));
        let back = read_prr_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0].prr, 0.5);
        assert_eq!(back[0].ci95, None);
        assert_eq!(back[0].n_runs, 1);
    }

    #[test]
    fn pooled_bins() {
        let mut h = PrrHistogram::new(25.0, 12);
        h.record(180.0, true);
        h.record(210.0, false);
        h.record(230.0, true);
        assert_eq!(h.pooled(175.0, 225.0), PrrCount { received: 1, expected: 2 });
    }

    #[test]
    fn channel_load_mean() {
        let a = [0.2, 0.4];
        let b = [0.6];
        assert!((mean_channel_load([&a[..], &b[..]]) - 0.4).abs() < 1e-12);
        assert_eq!(mean_channel_load(std::iter::empty()), 0.0);
    }
}
