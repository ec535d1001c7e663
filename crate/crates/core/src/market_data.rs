//! Historical index series, evaluation windows and stylized-fact statistics.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::paths::PricePath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetLabel {
    Development,
    Test,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexSeries {
    pub dates: Vec<NaiveDate>,
    pub closes: Vec<f64>,
    pub label: DatasetLabel,
}

impl IndexSeries {
    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    date: String,
    close: String,
}

pub fn load_series(path: &Path, label: DatasetLabel) -> Result<IndexSeries> {
    let file = std::fs::File::open(path)?;
    read_series(file, label)
}

/// Parses `date,close` CSV (ISO dates) and returns the series sorted by date.
pub fn read_series<R: Read>(input: R, label: DatasetLabel) -> Result<IndexSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    ensure!(
        headers.iter().any(|h| h == "date") && headers.iter().any(|h| h == "close"),
        "series CSV needs a `date,close` header, found `{}`",
        headers.iter().collect::<Vec<_>>().join(",")
    );
    let mut rows: Vec<(NaiveDate, f64)> = Vec::new();
    for (i, record) in reader.deserialize::<Row>().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let row = record.map_err(|e| Error::validation(format!("line {line}: {e}")))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| Error::validation(format!("line {line}: bad date `{}`: {e}", row.date)))?;
        let close: f64 = row
            .close
            .parse()
            .map_err(|e| Error::validation(format!("line {line}: bad close `{}`: {e}", row.close)))?;
        ensure!(
            close.is_finite() && close > 0.0,
            "line {line}: close must be positive, got {close}"
        );
        rows.push((date, close));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::validation(format!("duplicate date {}", w[0].0)));
    }
    let (dates, closes) = rows.into_iter().unzip();
    Ok(IndexSeries { dates, closes, label })
}

/// Sliding windows of `window_len` closes, each normalized to start at 1.
pub fn extract_windows(closes: &[f64], window_len: usize, stride: usize) -> Result<Vec<PricePath>> {
    ensure!(window_len >= 2, "window must hold at least two closes");
    ensure!(stride >= 1, "stride must be >= 1");
    if closes.len() < window_len {
        log::warn!(
            "series of length {} is shorter than the {window_len}-close window",
            closes.len()
        );
        return Ok(Vec::new());
    }
    (0..=closes.len() - window_len)
        .step_by(stride)
        .map(|start| PricePath::normalized(&closes[start..start + window_len]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StylizedStats {
    /// Raw kurtosis `m4 / m2²` of lag-k log-returns; `None` when undefined.
    pub kurtosis_by_lag: BTreeMap<usize, Option<f64>>,
    /// `(bin_center, mass)` of lag-1 standardized returns.
    pub histogram: Vec<(f64, f64)>,
    pub bin_width: f64,
}

/// Raw (non-excess) kurtosis; `None` for fewer than 4 samples or zero
/// variance.
pub fn raw_kurtosis(xs: &[f64]) -> Option<f64> {
    if xs.len() < 4 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    let scale = xs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m2 <= (1e-14 * scale.max(f64::MIN_POSITIVE)).powi(2) {
        return None;
    }
    Some(m4 / (m2 * m2))
}

/// Lag-k log-returns `ln(S_{t+k}/S_t)` for every admissible `t` of every
/// path, pooled.
pub fn lagged_returns(paths: &[&[f64]], lag: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for p in paths {
        if p.len() > lag {
            out.extend((0..p.len() - lag).map(|t| (p[t + lag] / p[t]).ln()));
        }
    }
    out
}

/// Histogram of returns standardized to zero mean and unit variance, in bins
/// of `bin_width` centered on multiples of `bin_width`.
pub fn standardized_histogram(returns: &[f64], bin_width: f64) -> Vec<(f64, f64)> {
    if returns.len() < 2 {
        return Vec::new();
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return vec![(0.0, 1.0)];
    }
    let sd = var.sqrt();
    let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
    for r in returns {
        let bin = ((r - mean) / sd / bin_width).round() as i64;
        *counts.entry(bin).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(b, c)| (b as f64 * bin_width, c as f64 / n))
        .collect()
}

pub fn stylized_stats(paths: &[&[f64]], max_lag: usize, bin_width: f64) -> Result<StylizedStats> {
    ensure!(max_lag >= 1, "max_lag must be >= 1");
    ensure!(bin_width > 0.0, "bin width must be positive");
    let kurtosis_by_lag = (1..=max_lag)
        .map(|lag| (lag, raw_kurtosis(&lagged_returns(paths, lag))))
        .collect();
    let histogram = standardized_histogram(&lagged_returns(paths, 1), bin_width);
    Ok(StylizedStats {
        kurtosis_by_lag,
        histogram,
        bin_width,
    })
}

impl StylizedStats {
    /// `lag,kurtosis` rows; undefined values are left empty.
    pub fn write_kurtosis_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "lag,kurtosis")?;
        for (lag, k) in &self.kurtosis_by_lag {
            match k {
                Some(k) => writeln!(out, "{lag},{k}")?,
                None => writeln!(out, "{lag},")?,
            }
        }
        Ok(())
    }

    pub fn write_histogram_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin_center,mass")?;
        for (center, mass) in &self.histogram {
            writeln!(out, "{center},{mass}")?;
        }
        Ok(())
    }
}
