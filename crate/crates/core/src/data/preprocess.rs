//! Resampling, per-channel normalization, and stratified splitting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::TimeSeriesDataset;

/// Linear interpolation of one channel onto `target` equally spaced points
/// spanning the original index range. Endpoints are preserved exactly, and a
/// matching source/target length is the identity.
pub fn resample_linear(channel: &[f64], target: usize) -> Result<Vec<f64>> {
    let l0 = channel.len();
    if l0 < 2 {
        return Err(Error::Data(format!("resample_linear requires length >= 2, got {l0}")));
    }
    if target < 2 {
        return Err(Error::Data(format!("resample target {target} must be >= 2")));
    }
    if target == l0 {
        return Ok(channel.to_vec());
    }
    let mut out = Vec::with_capacity(target);
    let scale = (l0 - 1) as f64 / (target - 1) as f64;
    for j in 0..target {
        if j == target - 1 {
            out.push(channel[l0 - 1]);
            continue;
        }
        let pos = j as f64 * scale;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if frac == 0.0 {
            out.push(channel[i]);
        } else {
            out.push(channel[i] + frac * (channel[i + 1] - channel[i]));
        }
    }
    Ok(out)
}

/// Per-channel, per-sample z-normalization with population standard
/// deviation; near-constant channels (std < 1e-8) are centered only.
pub fn znormalize(sample: &mut [f32], v: usize, l: usize) {
    debug_assert_eq!(sample.len(), v * l);
    for ch in sample.chunks_mut(l) {
        let mean = ch.iter().map(|&x| x as f64).sum::<f64>() / l as f64;
        let var = ch.iter().map(|&x| (x as f64 - mean) * (x as f64 - mean)).sum::<f64>() / l as f64;
        let std = var.sqrt();
        if std < 1e-8 {
            for x in ch.iter_mut() {
                *x = (*x as f64 - mean) as f32;
            }
        } else {
            for x in ch.iter_mut() {
                *x = ((*x as f64 - mean) / std) as f32;
            }
        }
    }
}

/// Seeded stratified split: per class, `round(fraction * count)` samples (at
/// least one) go to the holdout. The two parts partition the input.
pub fn stratified_split(
    ds: &TimeSeriesDataset,
    fraction: f64,
    seed: u64,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    if !(0.0..1.0).contains(&fraction) || fraction <= 0.0 {
        return Err(Error::Data(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    let counts = ds.class_counts();
    if let Some((c, _)) = counts.iter().enumerate().find(|(_, &n)| n < 2) {
        return Err(Error::Data(format!(
            "class {c} ('{}') has fewer than 2 samples; disable the validation split for this dataset",
            ds.class_names[c]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut holdout_idx = Vec::new();
    let mut train_idx = Vec::new();
    for c in 0..ds.n_classes() {
        let mut members: Vec<usize> =
            (0..ds.n_samples()).filter(|&i| ds.labels[i] == c).collect();
        // Fisher-Yates on the class members, fixed order of rng consumption
        for i in (1..members.len()).rev() {
            let j = rng.gen_range(0..=i);
            members.swap(i, j);
        }
        let take = ((fraction * members.len() as f64).round() as usize).max(1);
        holdout_idx.extend_from_slice(&members[..take]);
        train_idx.extend_from_slice(&members[take..]);
    }
    holdout_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((ds.subset(&train_idx), ds.subset(&holdout_idx)))
}
