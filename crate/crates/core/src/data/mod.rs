//! Dataset ingestion: the community `.ts` archive format, a CSV fallback,
//! resampling/normalization, stratified splitting, and seeded synthetic
//! datasets for desk-scale runs.

mod csv;
mod preprocess;
mod synthetic;
mod ts;

pub use csv::parse_csv;
pub use preprocess::{resample_linear, stratified_split, znormalize};
pub use synthetic::{make_synthetic, make_synthetic_pair};
pub use ts::{parse_ts, write_ts};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labeled set of fixed-length multivariate series. Every sample is a flat
/// `V x L` row-major buffer; labels index into `class_names`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    pub samples: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub n_variables: usize,
    pub series_length: usize,
    pub origin: String,
}

impl TimeSeriesDataset {
    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Enforce the structural invariants: shapes, label range, no NaN.
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.samples.len() {
            return Err(Error::Data(format!(
                "{} samples but {} labels",
                self.samples.len(),
                self.labels.len()
            )));
        }
        let expect = self.n_variables * self.series_length;
        for (i, s) in self.samples.iter().enumerate() {
            if s.len() != expect {
                return Err(Error::Data(format!(
                    "sample {i} has {} values, expected {} ({}x{})",
                    s.len(),
                    expect,
                    self.n_variables,
                    self.series_length
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("sample {i} contains non-finite values")));
            }
        }
        for (i, &y) in self.labels.iter().enumerate() {
            if y >= self.class_names.len() {
                return Err(Error::Data(format!(
                    "label {y} of sample {i} out of range 0..{}",
                    self.class_names.len()
                )));
            }
        }
        Ok(())
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_names.len()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// New dataset from a subset of sample indices (order preserved).
    pub fn subset(&self, indices: &[usize]) -> TimeSeriesDataset {
        TimeSeriesDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            n_variables: self.n_variables,
            series_length: self.series_length,
            origin: self.origin.clone(),
        }
    }

    /// Apply z-normalization to every sample in place.
    pub fn znormalize_all(&mut self) {
        for s in &mut self.samples {
            znormalize(s, self.n_variables, self.series_length);
        }
    }
}

/// Recipe for a seeded synthetic dataset: class `c` is a sine at
/// `base_frequencies[c]` cycles per window with uniform random phase plus
/// Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_variables: usize,
    pub series_length: usize,
    pub base_frequencies: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.n_variables == 0 || self.series_length < 2 {
            return Err(Error::Data("synthetic spec dimensions must be positive".into()));
        }
        if self.base_frequencies.len() != self.n_classes {
            return Err(Error::Data(format!(
                "{} base frequencies for {} classes",
                self.base_frequencies.len(),
                self.n_classes
            )));
        }
        for (i, a) in self.base_frequencies.iter().enumerate() {
            for b in &self.base_frequencies[i + 1..] {
                if a == b {
                    return Err(Error::Data(format!("base frequencies must be distinct, got {a} twice")));
                }
            }
        }
        if self.noise_std < 0.0 {
            return Err(Error::Data("noise_std must be nonnegative".into()));
        }
        Ok(())
    }
}
