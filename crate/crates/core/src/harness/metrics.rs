//! Trace summaries: accuracy curves, retransmission histograms, rank correlation.

use std::collections::BTreeMap;
use std::io::Write;

use crate::arq::{SampleRecord, ARQ_TRACE_HEADER};
use crate::error::{Error, Result};
use crate::federated::FEDERATED_TRACE_HEADER;
use crate::scheduling::SCHEDULING_TRACE_HEADER;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Arq,
    Scheduling,
    Federated,
}

impl TraceKind {
    pub fn from_header(header: &str) -> Option<Self> {
        match header.trim_end() {
            ARQ_TRACE_HEADER => Some(TraceKind::Arq),
            SCHEDULING_TRACE_HEADER => Some(TraceKind::Scheduling),
            FEDERATED_TRACE_HEADER => Some(TraceKind::Federated),
            _ => None,
        }
    }
}

/// Accuracy checkpoints `(x, accuracy)` read back from a trace CSV.
///
/// `x` is channel uses spent for ARQ traces, the block for scheduling traces
/// and the round for federated traces.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrace {
    pub kind: TraceKind,
    pub checkpoints: Vec<(usize, f64)>,
}

pub fn parse_trace(text: &str) -> Result<ParsedTrace> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Empty("trace"))?;
    let kind = TraceKind::from_header(header)
        .ok_or_else(|| Error::Config(format!("unrecognised trace header `{header}`")))?;
    let (x_col, acc_col) = match kind {
        TraceKind::Arq => (5, 6),
        TraceKind::Scheduling => (0, 5),
        TraceKind::Federated => (0, 5),
    };
    let mut checkpoints = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::Config(format!("trace line {}: malformed row `{line}`", n + 2));
        let acc = fields.get(acc_col).ok_or_else(bad)?;
        if acc.is_empty() {
            continue;
        }
        let x: usize = fields[x_col].parse().map_err(|_| bad())?;
        let a: f64 = acc.parse().map_err(|_| bad())?;
        checkpoints.push((x, a));
    }
    Ok(ParsedTrace { kind, checkpoints })
}

/// Value of the checkpoint step function at `x`: the latest accuracy
/// recorded at or before `x`.
pub fn accuracy_at(checkpoints: &[(usize, f64)], x: usize) -> Option<f64> {
    checkpoints
        .iter()
        .take_while(|&&(cx, _)| cx <= x)
        .last()
        .map(|&(_, a)| a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    pub x: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub replicates: usize,
}

pub const SUMMARY_HEADER: &str = "policy,x,mean_accuracy,std_accuracy,replicates";

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and spread of accuracy across replicates for each policy.
///
/// ARQ traces are sampled on the grid `grid_step, 2 grid_step, ...` up to the
/// largest budget seen, skipping points before a replicate's first
/// checkpoint. Other traces are summarized at each checkpoint `x`.
pub fn summarize(traces: &[(String, ParsedTrace)], grid_step: usize) -> Result<Vec<SummaryRow>> {
    let mut by_policy: BTreeMap<&str, Vec<&ParsedTrace>> = BTreeMap::new();
    for (policy, t) in traces {
        by_policy.entry(policy.as_str()).or_default().push(t);
    }
    let mut rows = Vec::new();
    for (policy, ts) in by_policy {
        let grid: Vec<usize> = if ts.iter().all(|t| t.kind == TraceKind::Arq) {
            if grid_step == 0 {
                return Err(Error::invalid("grid_step", "must be at least 1"));
            }
            let end = ts
                .iter()
                .filter_map(|t| t.checkpoints.last().map(|c| c.0))
                .max()
                .unwrap_or(0);
            (1..=end / grid_step).map(|i| i * grid_step).collect()
        } else {
            let mut xs: Vec<usize> = ts.iter().flat_map(|t| t.checkpoints.iter().map(|c| c.0)).collect();
            xs.sort_unstable();
            xs.dedup();
            xs
        };
        for x in grid {
            let values: Vec<f64> = ts.iter().filter_map(|t| accuracy_at(&t.checkpoints, x)).collect();
            if values.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&values);
            rows.push(SummaryRow {
                policy: policy.to_string(),
                x,
                mean_accuracy: mean,
                std_accuracy: std,
                replicates: values.len(),
            });
        }
    }
    Ok(rows)
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.policy, r.x, r.mean_accuracy, r.std_accuracy, r.replicates
        )?;
    }
    Ok(())
}

/// Splits a trace file stem `{policy}_seed{n}` into its parts.
pub fn parse_trace_stem(stem: &str) -> Option<(&str, u64)> {
    let (policy, seed) = stem.rsplit_once("_seed")?;
    Some((policy, seed.parse().ok()?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_transmissions: f64,
}

pub const HISTOGRAM_HEADER: &str = "policy,bin,lower,upper,count,mean_transmissions";

/// Mean transmissions per uncertainty bin.
///
/// Bins hold equal numbers of samples (the first `len % n_bins` bins get one
/// extra) after sorting by uncertainty, so heavy-tailed uncertainty still
/// fills every bin. Only samples that completed their transmissions are used.
pub fn build_retx_histogram(records: &[SampleRecord], n_bins: usize) -> Vec<HistogramBin> {
    let mut pts: Vec<(f64, usize)> = records
        .iter()
        .filter(|r| r.accepted)
        .map(|r| (r.uncertainty, r.transmissions))
        .collect();
    if pts.is_empty() || n_bins == 0 {
        return Vec::new();
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_bins = n_bins.min(pts.len());
    let base = pts.len() / n_bins;
    let extra = pts.len() % n_bins;
    let mut start = 0;
    (0..n_bins)
        .map(|b| {
            let len = base + usize::from(b < extra);
            let chunk = &pts[start..start + len];
            start += len;
            HistogramBin {
                bin: b,
                lower: chunk[0].0,
                upper: chunk[len - 1].0,
                count: len,
                mean_transmissions: chunk.iter().map(|p| p.1 as f64).sum::<f64>() / len as f64,
            }
        })
        .collect()
}

pub fn write_histogram<W: Write>(
    bins: &[(String, Vec<HistogramBin>)],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{HISTOGRAM_HEADER}")?;
    for (policy, hist) in bins {
        for b in hist {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                policy, b.bin, b.lower, b.upper, b.count, b.mean_transmissions
            )?;
        }
    }
    Ok(())
}

/// Ranks starting at 1, ties sharing the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation. NaN when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: x.len(),
        });
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}
