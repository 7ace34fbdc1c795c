//! Synthetic sensor simulation and evaluation metrics.
//!
//! Frames are rendered with the multiplicative sensor model
//! `out = clamp((1 + K) * scene + N, 0, 255)`, where `K` is a zero-mean per-pixel
//! sensitivity pattern and `N` white additive noise.

mod experiment;

pub use experiment::{
    parse_size, run_experiment, CellOutcome, DirectorySetup, ExperimentConfig, ExperimentReport, ExperimentSource,
    SceneKind, SyntheticSetup, TestVideo, TrialRecord, DEFAULT_RATES,
};

use std::f64::consts::TAU;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::imgio::FrameImage;
use crate::{Error, Result};

/// Flat training backgrounds: grey levels followed by the luma of pure red, green
/// and blue, then white and black. Mid-grey comes first so that coarse sampling
/// still sees an informative frame.
pub const FLAT_SCENE_LEVELS: [f64; 8] = [128.0, 192.0, 64.0, 76.245, 149.685, 29.07, 255.0, 0.0];

/// A simulated camera with a planted sensitivity pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCamera {
    pub label: String,
    /// Zero-mean multiplicative pattern, shape `(height, width)`.
    pub k: Array2<f64>,
    pub strength: f64,
    pub additive_sigma: f64,
    pub seed: u64,
}

impl SyntheticCamera {
    pub fn dims(&self) -> (usize, usize) {
        (self.k.ncols(), self.k.nrows())
    }
}

/// Draws `K ~ N(0, strength^2)` i.i.d. from `seed`, then removes its mean.
pub fn simulate_camera(
    label: impl Into<String>,
    width: usize,
    height: usize,
    strength: f64,
    additive_sigma: f64,
    seed: u64,
) -> Result<SyntheticCamera> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidConfig(format!("camera size {width}x{height} is empty")));
    }
    if !(strength.is_finite() && strength >= 0.0) {
        return Err(Error::InvalidConfig(format!("strength must be >= 0, got {strength}")));
    }
    if !(additive_sigma.is_finite() && additive_sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "additive sigma must be >= 0, got {additive_sigma}"
        )));
    }
    let k = if strength == 0.0 {
        Array2::zeros((height, width))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, strength).expect("finite non-negative std");
        let raw = Array2::from_shape_simple_fn((height, width), || normal.sample(&mut rng));
        let mean = raw.mean().unwrap_or(0.0);
        raw.mapv(|v| v - mean)
    };
    Ok(SyntheticCamera {
        label: label.into(),
        k,
        strength,
        additive_sigma,
        seed,
    })
}

/// Renders `scene` through the camera. The output keeps the scene's `source_index`.
pub fn render_frame(cam: &SyntheticCamera, scene: &FrameImage, frame_seed: u64) -> Result<FrameImage> {
    if scene.dims() != cam.dims() {
        return Err(Error::mismatch(cam.dims(), scene.dims()));
    }
    let mut out = scene.pixels() * &cam.k.mapv(|k| 1.0 + k);
    if cam.additive_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
        let normal = Normal::new(0.0, cam.additive_sigma).expect("finite non-negative std");
        out.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    out.mapv_inplace(|v| v.clamp(0.0, 255.0));
    FrameImage::new(out, scene.source_index())
}

pub fn flat_scene(width: usize, height: usize, level: f64, source_index: u64) -> FrameImage {
    FrameImage::constant(width, height, level, source_index).expect("flat scene level within [0, 255]")
}

/// Smooth, slowly moving synthetic content with a few hard-edged patches.
///
/// `seed` fixes the layout, `frame` advances the motion. Deterministic.
pub fn textured_scene(width: usize, height: usize, seed: u64, frame: u64) -> FrameImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..TAU),
                rng.random_range(8.0..28.0),
                rng.random_range(-0.08..0.08),
            )
        })
        .collect();
    let patches: Vec<(f64, f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..0.8),
                rng.random_range(0.0..0.8),
                rng.random_range(0.1..0.3),
                rng.random_range(0.1..0.3),
                rng.random_range(-35.0..35.0),
            )
        })
        .collect();
    let tilt = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
    let t = frame as f64;
    let drift = 0.004 * t;

    let pixels = Array2::from_shape_fn((height, width), |(r, c)| {
        let y = r as f64 / height as f64;
        let x = c as f64 / width as f64;
        let mut v = 128.0 + tilt.0 * (x - 0.5) + tilt.1 * (y - 0.5);
        for &(fx, fy, phase, amp, speed) in &waves {
            v += amp * (TAU * (fx * x + fy * y) + phase + speed * t).sin();
        }
        for &(px, py, pw, ph, offset) in &patches {
            let (px, py) = ((px + drift) % 1.0, py);
            if x >= px && x < px + pw && y >= py && y < py + ph {
                v += offset;
            }
        }
        v.clamp(20.0, 235.0)
    });
    FrameImage::new(pixels, frame).expect("scene values clamped to range")
}

/// Counts of `(true camera, predicted camera)`; rows are true labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        if counts.len() != k || counts.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidConfig(format!("confusion counts are not {k}x{k}")));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidConfig(format!("duplicate label `{l}`")));
            }
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Tallies `(true, predicted)` pairs over `labels`.
pub fn confusion_matrix<S: AsRef<str>>(trials: &[(S, S)], labels: &[String]) -> Result<ConfusionMatrix> {
    let index = |l: &str| {
        labels
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| Error::UnknownLabel(l.to_string()))
    };
    let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
    for (t, p) in trials {
        counts[index(t.as_ref())?][index(p.as_ref())?] += 1;
    }
    ConfusionMatrix::from_counts(labels.to_vec(), counts)
}

/// Success rate `p = 100 * trace / total` and error rate `q = 100 - p`, in percent.
pub fn success_error_rate(cm: &ConfusionMatrix) -> Result<(f64, f64)> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix has no trials".into()));
    }
    let p = cm.correct() as f64 / total as f64 * 100.0;
    Ok((p, 100.0 - p))
}

/// Percentages are reported with two decimals.
pub fn format_rate(v: f64) -> String {
    format!("{v:.2}")
}

/// Deterministic 64-bit seed derived from a base seed and a path of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    tags.iter().fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}
