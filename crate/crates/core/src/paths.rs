//! Normalized price paths and their on-disk batch format.
//!
//! A batch is written as a headerless CSV matrix (one path per row, columns
//! `t_0..t_n`) next to a JSON sidecar carrying the generator config and seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// One price series `S_{t_0..t_n}`, normally starting at 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePath(Vec<f64>);

impl PricePath {
    pub fn new(prices: Vec<f64>) -> Result<Self> {
        ensure!(!prices.is_empty(), "price path must be nonempty");
        ensure!(
            prices.iter().all(|p| p.is_finite() && *p > 0.0),
            "price path entries must be finite and positive"
        );
        Ok(PricePath(prices))
    }

    /// Divides every entry by the first one so that `S_{t_0} = 1`.
    pub fn normalized(prices: &[f64]) -> Result<Self> {
        ensure!(!prices.is_empty(), "price path must be nonempty");
        let first = prices[0];
        PricePath::new(prices.iter().map(|p| p / first).collect())
    }

    pub(crate) fn from_vec_unchecked(prices: Vec<f64>) -> Self {
        PricePath(prices)
    }

    pub fn prices(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of hedging intervals (`len - 1`).
    pub fn steps(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn terminal(&self) -> f64 {
        *self.0.last().expect("nonempty path")
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for PricePath {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-path RNG substream: `(seed, index)` fully determine the stream, so
/// batches can be generated in any order or in parallel.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives an independent child seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BatchSidecar {
    pub generator: String,
    pub seed: u64,
    pub n_paths: usize,
    pub path_len: usize,
    /// Generator parameter block, as given.
    pub config: serde_json::Value,
    /// Paths discarded and regenerated (negative touches or degenerate sessions).
    #[serde(default)]
    pub rejected: u64,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the CSV matrix and its JSON sidecar (same stem, `.json`).
pub fn write_batch(csv_path: &Path, paths: &[PricePath], sidecar: &BatchSidecar) -> Result<()> {
    let mut out = String::new();
    for path in paths {
        let row: Vec<String> = path.prices().iter().map(|p| format!("{p}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut file = fs::File::create(csv_path)?;
    file.write_all(out.as_bytes())?;
    let json = serde_json::to_string_pretty(sidecar)?;
    fs::write(sidecar_path(csv_path), json + "\n")?;
    Ok(())
}

/// Reads a CSV path matrix. The sidecar is optional.
pub fn read_batch(csv_path: &Path) -> Result<(Vec<PricePath>, Option<BatchSidecar>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(csv_path)?;
    let mut paths = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let prices = record
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: {e}", row + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        paths.push(
            PricePath::new(prices)
                .map_err(|e| Error::Format(format!("row {}: {e}", row + 1)))?,
        );
    }
    let sidecar_file = sidecar_path(csv_path);
    let sidecar = if sidecar_file.exists() {
        Some(serde_json::from_str(&fs::read_to_string(sidecar_file)?)?)
    } else {
        None
    };
    Ok((paths, sidecar))
}
