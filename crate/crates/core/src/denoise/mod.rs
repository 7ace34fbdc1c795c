//! Wavelet-domain Wiener denoising and noise residual extraction.
//!
//! The frame is decomposed with an orthogonal 8-tap Daubechies filter bank. Every detail
//! coefficient `c` is attenuated by `H = s / (s + sigma0^2)`, where the local signal
//! variance `s = max(0, min_w mean_w(c^2) - sigma0^2)` is taken over several odd box
//! windows `w`. The coarsest approximation band passes through untouched. The residual
//! of a frame is the frame minus its denoised version.

pub mod wavelet;

use ndarray::Array2;

use crate::imgio::FrameImage;
use crate::{Error, Result};

use wavelet::{sym_index, FilterBank, Plane};

/// Parameters of the wavelet Wiener denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    /// Assumed white-noise standard deviation, in pixel units.
    pub sigma0: f64,
    /// Decomposition depth.
    pub levels: usize,
    /// Odd box-window sizes used for the local variance estimate.
    pub variance_windows: Vec<usize>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            sigma0: 3.0,
            levels: 4,
            variance_windows: vec![3, 5, 7, 9],
        }
    }
}

impl DenoiserConfig {
    pub fn with_sigma(sigma0: f64) -> Self {
        DenoiserConfig {
            sigma0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0.is_finite() && self.sigma0 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sigma0 must be >= 0, got {}",
                self.sigma0
            )));
        }
        if self.levels == 0 {
            return Err(Error::InvalidConfig("wavelet levels must be >= 1".into()));
        }
        if self.variance_windows.is_empty() {
            return Err(Error::InvalidConfig("at least one variance window is required".into()));
        }
        if let Some(w) = self.variance_windows.iter().find(|&&w| w < 3 || w % 2 == 0) {
            return Err(Error::InvalidConfig(format!(
                "variance window {w} must be odd and >= 3"
            )));
        }
        Ok(())
    }
}

/// Noise residual `W = frame - denoise(frame)` of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseResidual {
    pub values: Array2<f64>,
    pub frame_index: u64,
}

/// Wiener attenuation for a coefficient whose local mean energy is `local_energy`.
#[inline]
pub fn wiener_gain(local_energy: f64, sigma0: f64) -> f64 {
    let noise = sigma0 * sigma0;
    let signal = (local_energy - noise).max(0.0);
    if signal + noise > 0.0 {
        signal / (signal + noise)
    } else {
        0.0
    }
}

/// Minimum over `windows` of the box-filtered mean of `c^2`, symmetric extension at borders.
///
/// Window sums add non-negative terms directly (separably), so a non-zero coefficient
/// never ends up with zero local energy through cancellation.
fn min_local_energy(band: &Plane, windows: &[usize]) -> Vec<f64> {
    let (w, h) = (band.width, band.height);
    let pad = windows.iter().max().copied().unwrap_or(1) / 2;
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let mut sq = vec![0.0; pw * ph];
    for r in 0..ph {
        let src_r = sym_index(r as isize - pad as isize, h);
        for c in 0..pw {
            let v = band.at(src_r, sym_index(c as isize - pad as isize, w));
            sq[r * pw + c] = v * v;
        }
    }

    let mut out = vec![f64::INFINITY; w * h];
    let mut row_sums = vec![0.0; ph * w];
    for &win in windows {
        let half = win / 2;
        for r in 0..ph {
            let line = &sq[r * pw..(r + 1) * pw];
            for c in 0..w {
                row_sums[r * w + c] = line[c + pad - half..=c + pad + half].iter().sum();
            }
        }
        let area = (win * win) as f64;
        for r in 0..h {
            for c in 0..w {
                let sum: f64 = (r + pad - half..=r + pad + half).map(|k| row_sums[k * w + c]).sum();
                let slot = &mut out[r * w + c];
                *slot = slot.min(sum / area);
            }
        }
    }
    out
}

fn wiener_shrink(band: &mut Plane, cfg: &DenoiserConfig) {
    let energy = min_local_energy(band, &cfg.variance_windows);
    for (c, e) in band.data.iter_mut().zip(energy) {
        *c *= wiener_gain(e, cfg.sigma0);
    }
}

fn symmetric_pad(pixels: &Array2<f64>, width: usize, height: usize) -> Plane {
    let (h, w) = pixels.dim();
    let mut plane = Plane::zeros(width, height);
    for r in 0..height {
        let sr = sym_index(r as isize, h);
        for c in 0..width {
            plane.data[r * width + c] = pixels[[sr, sym_index(c as isize, w)]];
        }
    }
    plane
}

/// Denoises a raw luminance matrix. See [`wavelet_denoise`].
pub fn denoise_matrix(pixels: &Array2<f64>, cfg: &DenoiserConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let (h, w) = pixels.dim();
    if w == 0 || h == 0 {
        return Err(Error::Degenerate(format!("cannot denoise a {w}x{h} matrix")));
    }
    let first = pixels[[0, 0]];
    if pixels.iter().all(|&v| v == first) {
        // no detail energy: every attenuated coefficient is zero
        return Ok(pixels.clone());
    }

    let min_side = 1usize.checked_shl(cfg.levels as u32).unwrap_or(usize::MAX);
    let (pw, ph) = (w.max(min_side), h.max(min_side));
    if pw.checked_mul(ph).is_none() {
        return Err(Error::Degenerate(format!("{} levels is too deep", cfg.levels)));
    }
    let plane = symmetric_pad(pixels, pw, ph);

    let bank = FilterBank::default();
    let mut dec = wavelet::decompose(&bank, &plane, cfg.levels);
    for level in &mut dec.details {
        for band in level.bands_mut() {
            wiener_shrink(band, cfg);
        }
    }
    let out = wavelet::reconstruct(&bank, &dec);
    Ok(Array2::from_shape_fn((h, w), |(r, c)| out.at(r, c)))
}

/// Wavelet Wiener denoised version of `frame`, same shape as the input.
pub fn wavelet_denoise(frame: &FrameImage, cfg: &DenoiserConfig) -> Result<Array2<f64>> {
    denoise_matrix(frame.pixels(), cfg)
}

/// Residual and denoised matrix together, as needed by fingerprint accumulation.
pub fn residual_and_denoised(frame: &FrameImage, cfg: &DenoiserConfig) -> Result<(NoiseResidual, Array2<f64>)> {
    let denoised = wavelet_denoise(frame, cfg)?;
    let values = frame.pixels() - &denoised;
    Ok((
        NoiseResidual {
            values,
            frame_index: frame.source_index(),
        },
        denoised,
    ))
}

/// `W = frame - wavelet_denoise(frame)`.
pub fn extract_residual(frame: &FrameImage, cfg: &DenoiserConfig) -> Result<NoiseResidual> {
    residual_and_denoised(frame, cfg).map(|(w, _)| w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::textured_scene;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noisy_pair(seed: u64, sigma: f64) -> (Array2<f64>, FrameImage) {
        let clean = textured_scene(256, 256, seed, 0).into_pixels();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead_beef);
        let normal = Normal::new(0.0, sigma).unwrap();
        let noisy = clean.mapv(|v| (v + normal.sample(&mut rng)).clamp(0.0, 255.0));
        (clean, FrameImage::new(noisy, 0).unwrap())
    }

    fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a - b).mapv(|d| d * d).mean().unwrap()
    }

    #[test]
    fn constant_frame_passes_through() {
        for level in [0.0, 76.245, 128.0, 255.0] {
            let f = FrameImage::constant(40, 33, level, 0).unwrap();
            let d = wavelet_denoise(&f, &DenoiserConfig::default()).unwrap();
            assert_eq!(&d, f.pixels());
            let w = extract_residual(&f, &DenoiserConfig::with_sigma(0.0)).unwrap();
            assert!(w.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_sigma_is_identity() {
        let (clean, noisy) = noisy_pair(5, 5.0);
        let cfg = DenoiserConfig::with_sigma(0.0);
        // the clean scene has saturated flat areas with near-zero detail coefficients
        for frame in [noisy, FrameImage::new(clean, 0).unwrap()] {
            let d = wavelet_denoise(&frame, &cfg).unwrap();
            let err = (&d - frame.pixels()).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn denoising_reduces_error() {
        let (clean, noisy) = noisy_pair(7, 5.0);
        let d = wavelet_denoise(&noisy, &DenoiserConfig::with_sigma(5.0)).unwrap();
        let (before, after) = (mse(noisy.pixels(), &clean), mse(&d, &clean));
        assert!(after < before, "denoised {after} vs noisy {before}");
    }

    #[test]
    fn second_pass_removes_less() {
        let (_, noisy) = noisy_pair(9, 5.0);
        let cfg = DenoiserConfig::with_sigma(5.0);
        let first = extract_residual(&noisy, &cfg).unwrap();
        let once = FrameImage::new(wavelet_denoise(&noisy, &cfg).unwrap().mapv(|v| v.clamp(0.0, 255.0)), 0).unwrap();
        let second = extract_residual(&once, &cfg).unwrap();
        let energy = |w: &NoiseResidual| w.values.mapv(|v| v * v).sum();
        assert!(energy(&second) <= energy(&first));
    }

    #[test]
    fn shapes_preserved_on_small_and_odd_frames() {
        for (w, h) in [(1, 1), (3, 17), (15, 2), (33, 31)] {
            let px = Array2::from_shape_fn((h, w), |(i, j)| ((i * 7 + j * 13) % 256) as f64);
            let f = FrameImage::new(px, 4).unwrap();
            let r = extract_residual(&f, &DenoiserConfig::default()).unwrap();
            assert_eq!(r.values.dim(), (h, w));
            assert_eq!(r.frame_index, 4);
            assert!(r.values.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn config_validation() {
        let f = FrameImage::constant(8, 8, 1.0, 0).unwrap();
        let bad = [
            DenoiserConfig {
                sigma0: -1.0,
                ..Default::default()
            },
            DenoiserConfig {
                levels: 0,
                ..Default::default()
            },
            DenoiserConfig {
                variance_windows: vec![4],
                ..Default::default()
            },
            DenoiserConfig {
                variance_windows: vec![1],
                ..Default::default()
            },
            DenoiserConfig {
                variance_windows: vec![],
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(
                matches!(wavelet_denoise(&f, &cfg), Err(Error::InvalidConfig(_))),
                "{cfg:?}"
            );
        }
        assert!(matches!(
            denoise_matrix(&Array2::zeros((0, 4)), &DenoiserConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn gain_is_monotone_in_sigma() {
        for energy in [0.0, 1.0, 9.0, 30.0, 1e4] {
            let mut prev = f64::INFINITY;
            for s in [0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0] {
                let g = wiener_gain(energy, s);
                assert!((0.0..=1.0).contains(&g));
                assert!(g <= prev);
                prev = g;
            }
        }
        assert_eq!(wiener_gain(4.0, 0.0), 1.0);
        assert_eq!(wiener_gain(0.0, 0.0), 0.0);
    }

    #[test]
    fn local_energy_matches_brute_force() {
        let mut band = Plane::zeros(6, 4);
        band.data
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i as f64 * 0.37).sin() * 4.0);
        let got = min_local_energy(&band, &[3, 5]);
        for r in 0..4 {
            for c in 0..6 {
                let mean = |win: isize| {
                    let half = win / 2;
                    let mut s = 0.0;
                    for dr in -half..=half {
                        for dc in -half..=half {
                            let v = band.at(sym_index(r as isize + dr, 4), sym_index(c as isize + dc, 6));
                            s += v * v;
                        }
                    }
                    s / (win * win) as f64
                };
                let expected = mean(3).min(mean(5));
                assert!((got[r * 6 + c] - expected).abs() < 1e-12);
            }
        }
    }
}
