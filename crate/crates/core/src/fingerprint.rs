//! Camera fingerprint estimation and persistence.
//!
//! A fingerprint is the weighted average `F = sum(W_n * I_n) / sum(I_n^2)` over training
//! frames, where `I_n` is the denoised frame and `W_n` its noise residual.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic "PRNUFP01" | width u32 | height u32 | frames_used u32 | reserved u32 (0)
//! width*height f32 values, row-major
//! label length u16 | label UTF-8 bytes
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use crate::denoise::{residual_and_denoised, DenoiserConfig};
use crate::imgio::{select_frames, write_atomic, FrameImage, SamplingPolicy};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PRNUFP01";
pub const HEADER_LEN: usize = 24;
/// Pixels whose accumulated denominator is below this get a zero fingerprint value.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Running numerator and denominator sums of the fingerprint estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerprintAccumulator {
    numerator: Array2<f64>,
    denominator: Array2<f64>,
    frames_seen: u64,
}

/// One frame's contribution `(W * I, I^2)`.
struct Contribution {
    index: u64,
    weighted: Array2<f64>,
    energy: Array2<f64>,
}

fn contribution(frame: &FrameImage, cfg: &DenoiserConfig) -> Result<Contribution> {
    let (residual, denoised) = residual_and_denoised(frame, cfg)?;
    Ok(Contribution {
        index: frame.source_index(),
        weighted: residual.values * &denoised,
        energy: denoised.mapv(|v| v * v),
    })
}

impl FingerprintAccumulator {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Degenerate(format!("empty accumulator {width}x{height}")));
        }
        Ok(FingerprintAccumulator {
            numerator: Array2::zeros((height, width)),
            denominator: Array2::zeros((height, width)),
            frames_seen: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.numerator.ncols()
    }

    pub fn height(&self) -> usize {
        self.numerator.nrows()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn numerator(&self) -> &Array2<f64> {
        &self.numerator
    }

    pub fn denominator(&self) -> &Array2<f64> {
        &self.denominator
    }

    fn check(&self, frame: &FrameImage) -> Result<()> {
        if frame.dims() != self.dims() {
            return Err(Error::mismatch(self.dims(), frame.dims()));
        }
        Ok(())
    }

    fn absorb(&mut self, c: Contribution) {
        self.numerator += &c.weighted;
        self.denominator += &c.energy;
        self.frames_seen += 1;
    }

    /// Denoises `frame` and adds its `(W * I, I^2)` to the sums.
    pub fn accumulate(&mut self, frame: &FrameImage, cfg: &DenoiserConfig) -> Result<()> {
        self.check(frame)?;
        let c = contribution(frame, cfg)?;
        self.absorb(c);
        Ok(())
    }

    /// Accumulates a batch: residuals are computed in parallel, then added in
    /// ascending `source_index` order so the sums do not depend on thread count.
    pub fn accumulate_batch(&mut self, frames: &[FrameImage], cfg: &DenoiserConfig) -> Result<()> {
        for f in frames {
            self.check(f)?;
        }
        let mut parts = frames
            .par_iter()
            .map(|f| contribution(f, cfg))
            .collect::<Result<Vec<_>>>()?;
        parts.sort_by_key(|c| c.index);
        for c in parts {
            self.absorb(c);
        }
        Ok(())
    }

    /// `F = numerator / denominator`, with zero where the denominator is below
    /// [`DENOMINATOR_FLOOR`].
    pub fn finalize(&self, label: impl Into<String>) -> Result<Fingerprint> {
        if self.frames_seen == 0 {
            return Err(Error::Empty("no frames were accumulated".into()));
        }
        let frames_used = u32::try_from(self.frames_seen)
            .map_err(|_| Error::InvalidConfig(format!("{} frames overflow the file format", self.frames_seen)))?;
        let mut values = Array2::<f32>::zeros(self.numerator.dim());
        Zip::from(&mut values)
            .and(&self.numerator)
            .and(&self.denominator)
            .for_each(|f, &n, &d| {
                *f = if d < DENOMINATOR_FLOOR { 0.0 } else { (n / d) as f32 };
            });
        Fingerprint::new(values, frames_used, label)
    }
}

/// Estimates a fingerprint from the frames selected by `policy`.
pub fn enroll(
    frames: &[FrameImage],
    policy: SamplingPolicy,
    cfg: &DenoiserConfig,
    label: impl Into<String>,
) -> Result<Fingerprint> {
    let selected: Vec<FrameImage> = select_frames(frames, policy).into_iter().cloned().collect();
    let first = selected
        .first()
        .ok_or_else(|| Error::Empty("no training frames".into()))?;
    let mut acc = FingerprintAccumulator::new(first.width(), first.height())?;
    acc.accumulate_batch(&selected, cfg)?;
    acc.finalize(label)
}

/// Estimated sensor pattern of one camera at one resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Fingerprint {
    values: Array2<f32>,
    frames_used: u32,
    camera_label: String,
}

impl Fingerprint {
    pub fn new(values: Array2<f32>, frames_used: u32, label: impl Into<String>) -> Result<Self> {
        let (h, w) = values.dim();
        if w == 0 || h == 0 {
            return Err(Error::Degenerate(format!("empty fingerprint {w}x{h}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("fingerprint contains non-finite values".into()));
        }
        Ok(Fingerprint {
            values,
            frames_used,
            camera_label: label.into(),
        })
    }

    /// Rounds `values` to single precision.
    pub fn from_f64(values: &Array2<f64>, frames_used: u32, label: impl Into<String>) -> Result<Self> {
        Self::new(values.mapv(|v| v as f32), frames_used, label)
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    pub fn frames_used(&self) -> u32 {
        self.frames_used
    }

    pub fn label(&self) -> &str {
        &self.camera_label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.camera_label = label.into();
        self
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let label = self.camera_label.as_bytes();
        let label_len = u16::try_from(label.len())
            .map_err(|_| Error::InvalidConfig(format!("label is {} bytes, limit is 65535", label.len())))?;
        let dim = |v: usize| u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("dimension {v} overflows u32")));
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len() + 2 + label.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&dim(self.width())?.to_le_bytes());
        out.extend_from_slice(&dim(self.height())?.to_le_bytes());
        out.extend_from_slice(&self.frames_used.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&label_len.to_le_bytes());
        out.extend_from_slice(label);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let (width, height, frames_used, reserved) = (word(8), word(12), word(16), word(20));
        if reserved != 0 {
            return Err(bad(format!("reserved field is {reserved}, expected 0")));
        }
        if width == 0 || height == 0 {
            return Err(bad(format!("empty dimensions {width}x{height}")));
        }
        let count = (width as usize)
            .checked_mul(height as usize)
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| bad(format!("dimensions {width}x{height} overflow")))?;
        let payload_end = HEADER_LEN
            .checked_add(count * 4)
            .ok_or_else(|| bad("dimension overflow".into()))?;
        let payload = bytes
            .get(HEADER_LEN..payload_end)
            .ok_or_else(|| bad(format!("truncated payload: need {} value bytes", count * 4)))?;
        let len_bytes = bytes
            .get(payload_end..payload_end + 2)
            .ok_or_else(|| bad("truncated label length".into()))?;
        let label_len = u16::from_le_bytes([len_bytes[0], len_bytes[1]]) as usize;
        let label = bytes
            .get(payload_end + 2..payload_end + 2 + label_len)
            .ok_or_else(|| bad("truncated label".into()))?;
        if bytes.len() != payload_end + 2 + label_len {
            return Err(bad("trailing bytes after label".into()));
        }
        let label = std::str::from_utf8(label).map_err(|e| bad(format!("label is not UTF-8: {e}")))?;
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let values =
            Array2::from_shape_vec((height as usize, width as usize), values).map_err(|e| bad(e.to_string()))?;
        Fingerprint::new(values, frames_used, label).map_err(|e| bad(e.to_string()))
    }
}

/// Subtracts each row's mean from the row, then each column's mean from the column.
pub fn zero_mean(fp: &Fingerprint) -> Fingerprint {
    let mut v = fp.to_f64();
    for mut row in v.rows_mut() {
        let m = row.mean().unwrap_or(0.0);
        row.mapv_inplace(|x| x - m);
    }
    for mut col in v.columns_mut() {
        let m = col.mean().unwrap_or(0.0);
        col.mapv_inplace(|x| x - m);
    }
    Fingerprint {
        values: v.mapv(|x| x as f32),
        frames_used: fp.frames_used,
        camera_label: fp.camera_label.clone(),
    }
}

/// Writes the fingerprint atomically (temp file + rename).
pub fn save_fingerprint(fp: &Fingerprint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &fp.to_bytes()?)
}

pub fn load_fingerprint(path: impl AsRef<Path>) -> Result<Fingerprint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Fingerprint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::wavelet_denoise;
    use crate::eval::textured_scene;
    use ndarray::array;
    use proptest::prelude::*;

    fn cfg() -> DenoiserConfig {
        DenoiserConfig::default()
    }

    #[test]
    fn constant_frame_contributes_only_energy() {
        let mut acc = FingerprintAccumulator::new(16, 12).unwrap();
        acc.accumulate(&FrameImage::constant(16, 12, 128.0, 0).unwrap(), &cfg())
            .unwrap();
        assert!(acc.numerator().iter().all(|&v| v == 0.0));
        assert!(acc.denominator().iter().all(|&v| v == 128.0 * 128.0));
        assert_eq!(acc.frames_seen(), 1);
    }

    #[test]
    fn duplicate_frames_double_sums_and_keep_estimate() {
        let f = textured_scene(48, 40, 3, 0);
        let mut one = FingerprintAccumulator::new(48, 40).unwrap();
        one.accumulate(&f, &cfg()).unwrap();
        let mut two = one.clone();
        two.accumulate(&f, &cfg()).unwrap();
        assert_eq!(two.numerator(), &(one.numerator() * 2.0));
        assert_eq!(two.denominator(), &(one.denominator() * 2.0));
        let (a, b) = (one.finalize("c").unwrap(), two.finalize("c").unwrap());
        assert_eq!(a.values(), b.values());
        assert_eq!(b.frames_used(), 2);
    }

    #[test]
    fn single_frame_estimate_is_residual_over_denoised() {
        let f = textured_scene(32, 32, 8, 0);
        let mut acc = FingerprintAccumulator::new(32, 32).unwrap();
        acc.accumulate(&f, &cfg()).unwrap();
        let fp = acc.finalize("x").unwrap();
        let denoised = wavelet_denoise(&f, &cfg()).unwrap();
        for ((r, c), &v) in fp.values().indexed_iter() {
            let i = denoised[[r, c]];
            let expected = ((f.pixels()[[r, c]] - i) / i) as f32;
            assert!(
                (v - expected).abs() <= 1e-6 * expected.abs().max(1e-3),
                "{v} vs {expected}"
            );
        }
    }

    #[test]
    fn black_training_gives_zero_fingerprint() {
        let mut acc = FingerprintAccumulator::new(8, 8).unwrap();
        for i in 0..3 {
            acc.accumulate(&FrameImage::constant(8, 8, 0.0, i).unwrap(), &cfg())
                .unwrap();
        }
        let fp = acc.finalize("dark").unwrap();
        assert!(fp.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let acc = FingerprintAccumulator::new(8, 8).unwrap();
        assert!(matches!(acc.finalize("x"), Err(Error::Empty(_))));
        let mut acc = acc;
        let err = acc
            .accumulate(&FrameImage::constant(9, 8, 1.0, 0).unwrap(), &cfg())
            .unwrap_err();
        assert!(
            err.to_string().contains("8x8") && err.to_string().contains("9x8"),
            "{err}"
        );
        assert!(FingerprintAccumulator::new(0, 3).is_err());
    }

    #[test]
    fn batch_matches_sequential_in_index_order() {
        let frames: Vec<FrameImage> = (0..6).map(|i| textured_scene(40, 24, 11, i)).collect();
        let mut seq = FingerprintAccumulator::new(40, 24).unwrap();
        for f in &frames {
            seq.accumulate(f, &cfg()).unwrap();
        }
        let mut shuffled = frames.clone();
        shuffled.reverse();
        shuffled.swap(1, 4);
        let mut batch = FingerprintAccumulator::new(40, 24).unwrap();
        batch.accumulate_batch(&shuffled, &cfg()).unwrap();
        assert_eq!(seq, batch);
    }

    #[test]
    fn arbitrary_order_agrees_closely() {
        let frames: Vec<FrameImage> = (0..5).map(|i| textured_scene(32, 32, 2, i)).collect();
        let mut fwd = FingerprintAccumulator::new(32, 32).unwrap();
        let mut rev = FingerprintAccumulator::new(32, 32).unwrap();
        for f in &frames {
            fwd.accumulate(f, &cfg()).unwrap();
        }
        for f in frames.iter().rev() {
            rev.accumulate(f, &cfg()).unwrap();
        }
        for (a, b) in fwd.numerator().iter().zip(rev.numerator()) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-9));
        }
    }

    #[test]
    fn zero_mean_examples() {
        let fp = Fingerprint::new(array![[1.0f32, 2.0], [3.0, 4.0]], 1, "a").unwrap();
        assert!(zero_mean(&fp).values().iter().all(|&v| v.abs() < 1e-12));

        let constant = Fingerprint::new(Array2::from_elem((3, 5), 0.7f32), 1, "a").unwrap();
        assert!(zero_mean(&constant).values().iter().all(|&v| v.abs() < 1e-6));

        let centred = Fingerprint::new(array![[1.0f32, -1.0], [-1.0, 1.0]], 1, "a").unwrap();
        assert_eq!(zero_mean(&centred).values(), centred.values());
    }

    #[test]
    fn file_layout_size() {
        let fp = Fingerprint::new(array![[1.0f32, 2.0], [3.0, 4.0]], 3, "").unwrap();
        let bytes = fp.to_bytes().unwrap();
        // 24-byte header, 4 f32 values, then the u16 label length
        assert_eq!(bytes.len(), 24 + 16 + 2);
        assert_eq!(&bytes[..8], b"PRNUFP01");
        assert_eq!(&bytes[8..24], &[2, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
        let labelled = fp.with_label("cam").to_bytes().unwrap();
        assert_eq!(labelled.len(), 24 + 16 + 2 + 3);
    }

    #[test]
    fn load_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let fp = Fingerprint::new(array![[1.0f32, 2.0], [3.0, 4.0]], 3, "cam").unwrap();
        let good = fp.to_bytes().unwrap();
        let cases: Vec<(&str, Vec<u8>)> = vec![
            ("magic", {
                let mut b = good.clone();
                b[0] = b'X';
                b
            }),
            ("short", good[..30].to_vec()),
            ("header", good[..10].to_vec()),
            ("trailing", {
                let mut b = good.clone();
                b.push(0);
                b
            }),
            ("huge", {
                let mut b = good.clone();
                b[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
                b[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
                b
            }),
            ("reserved", {
                let mut b = good.clone();
                b[20] = 1;
                b
            }),
            ("zero-dim", {
                let mut b = good.clone();
                b[8..12].copy_from_slice(&0u32.to_le_bytes());
                b
            }),
            ("nan", {
                let mut b = good.clone();
                b[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
                b
            }),
        ];
        for (name, bytes) in cases {
            let p = dir.path().join(format!("{name}.prnufp"));
            fs::write(&p, bytes).unwrap();
            assert!(matches!(load_fingerprint(&p), Err(Error::Format { .. })), "{name}");
        }
    }

    #[test]
    fn save_is_atomic_and_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cam.prnufp");
        let fp = Fingerprint::new(array![[0.5f32, -0.25]], 7, "cam").unwrap();
        save_fingerprint(&fp, &p).unwrap();
        assert_eq!(load_fingerprint(&p).unwrap(), fp);
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip_is_bit_exact(
            w in 1usize..9, h in 1usize..9, frames in any::<u32>(),
            label in "[a-zA-Z0-9_ -]{0,20}",
            raw in proptest::collection::vec(any::<u32>(), 64),
        ) {
            let values = Array2::from_shape_fn((h, w), |(r, c)| {
                let v = f32::from_bits(raw[(r * w + c) % 64]);
                if v.is_finite() { v } else { 0.0 }
            });
            let fp = Fingerprint::new(values, frames, label).unwrap();
            let back = Fingerprint::from_bytes(&fp.to_bytes().unwrap(), Path::new("mem")).unwrap();
            prop_assert_eq!(back.frames_used(), fp.frames_used());
            prop_assert_eq!(back.label(), fp.label());
            for (a, b) in back.values().iter().zip(fp.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
