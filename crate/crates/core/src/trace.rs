//! Loss traces: per-evaluation proxy-loss records, CSV export, and the
//! smoothing and trend helpers used to compare schedules.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Obj,
    Edge,
    Scene,
    Target,
    Spatial,
}

impl LossKind {
    /// Edge-conditioned kinds: joint (`edge`) and targeted (`target`) evaluations.
    pub const RELATIONAL: [LossKind; 2] = [LossKind::Edge, LossKind::Target];
}

/// One traced loss evaluation. `stage` is 0 for the translation-only
/// pre-phase, 2 for the second stage of the staged schedule, and 1 otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTraceRecord {
    pub iter: usize,
    pub stage: u8,
    pub kind: LossKind,
    pub subject: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<LossTraceRecord>,
}

impl LossTrace {
    pub fn push(&mut self, iter: usize, stage: u8, kind: LossKind, subject: impl Into<String>, value: f64) {
        self.records.push(LossTraceRecord {
            iter,
            stage,
            kind,
            subject: subject.into(),
            value,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| Error::Config(format!("flushing trace: {e}")))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let records = r.deserialize().collect::<std::result::Result<Vec<LossTraceRecord>, _>>()?;
        Ok(LossTrace { records })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_csv()?;
        std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_csv(&bytes)
    }

    /// Per-iteration mean of the records of the given kinds, restricted to
    /// stages in `stages`, ordered by iteration.
    pub fn series(&self, kinds: &[LossKind], stages: &[u8]) -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in &self.records {
            if kinds.contains(&r.kind) && stages.contains(&r.stage) {
                let e = acc.entry(r.iter).or_insert((0.0, 0));
                e.0 += r.value;
                e.1 += 1;
            }
        }
        acc.into_iter().map(|(i, (s, n))| (i, s / n as f64)).collect()
    }
}

/// Centered running median over `window` samples (rounded up to odd),
/// truncated at the ends of the series.
pub fn median_filter(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let mut buf = Vec::with_capacity(window + 1);
    (0..values.len())
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(half), (i + half + 1).min(values.len()));
            buf.clear();
            buf.extend_from_slice(&values[lo..hi]);
            buf.sort_by(f64::total_cmp);
            let m = buf.len();
            if m % 2 == 1 {
                buf[m / 2]
            } else {
                0.5 * (buf[m / 2 - 1] + buf[m / 2])
            }
        })
        .collect()
}

/// Least-squares slope of `ys` against `xs` (0 for fewer than two points).
pub fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for k in 0..n {
        sxy += (xs[k] - mx) * (ys[k] - my);
        sxx += (xs[k] - mx) * (xs[k] - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Final level and trend of one loss family over the last fraction of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    /// Mean of the raw values in the tail window.
    pub final_mean: f64,
    /// Slope of the median-filtered tail, per iteration, divided by
    /// `final_mean` so schedules with different loss scales compare.
    pub relative_slope: f64,
    pub samples: usize,
}

pub fn summarize_tail(series: &[(usize, f64)], tail_fraction: f64, window: usize) -> Option<SeriesSummary> {
    if series.is_empty() {
        return None;
    }
    let first = series.first()?.0 as f64;
    let last = series.last()?.0 as f64;
    let cut = last - (last - first) * tail_fraction;
    let tail: Vec<(usize, f64)> = series.iter().copied().filter(|&(i, _)| i as f64 >= cut).collect();
    let values: Vec<f64> = tail.iter().map(|p| p.1).collect();
    let xs: Vec<f64> = tail.iter().map(|p| p.0 as f64).collect();
    let final_mean = values.iter().sum::<f64>() / values.len() as f64;
    let smooth = median_filter(&values, window);
    let slope = linear_slope(&xs, &smooth);
    Some(SeriesSummary {
        final_mean,
        relative_slope: if final_mean != 0.0 { slope / final_mean } else { 0.0 },
        samples: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub obj: Option<SeriesSummary>,
    pub edge: Option<SeriesSummary>,
    pub scene: Option<SeriesSummary>,
}

impl TraceSummary {
    /// Summaries over the last 20% of the optimization iterations.
    pub fn of(trace: &LossTrace) -> Self {
        let s = |kinds: &[LossKind]| summarize_tail(&trace.series(kinds, &[1, 2]), 0.2, 25);
        TraceSummary {
            obj: s(&[LossKind::Obj]),
            edge: s(&LossKind::RELATIONAL),
            scene: s(&[LossKind::Scene]),
        }
    }
}
