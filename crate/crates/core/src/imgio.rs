//! Frame decoding, luminance conversion, nearest-neighbour downscaling and frame sampling.
//!
//! Frames live on disk as a directory of numbered images, `frame_%06d.(pgm|ppm|png)`.
//! Any external decoder that writes this layout can feed the pipeline; nothing here
//! parses video containers.

use std::fs;
use std::io::Write;
use std::num::NonZeroU32;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::{Error, Result};

/// ITU-R BT.601 luma weights.
const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// One decoded frame as a real-valued luminance matrix in `[0, 255]`.
///
/// `pixels` is indexed `[row, col]`, i.e. its shape is `(height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameImage {
    pixels: Array2<f64>,
    source_index: u64,
}

impl FrameImage {
    /// Wraps a luminance matrix, rejecting empty matrices and values outside `[0, 255]`.
    pub fn new(pixels: Array2<f64>, source_index: u64) -> Result<Self> {
        let (h, w) = pixels.dim();
        if w == 0 || h == 0 {
            return Err(Error::InvalidFrame(format!("empty frame {w}x{h}")));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 255.0) {
            return Err(Error::InvalidFrame(format!("pixel value {v} outside [0, 255]")));
        }
        Ok(FrameImage { pixels, source_index })
    }

    /// A frame filled with a single luminance level.
    pub fn constant(width: usize, height: usize, level: f64, source_index: u64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), level), source_index)
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    /// `(width, height)`
    pub fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    pub fn source_index(&self) -> u64 {
        self.source_index
    }

    pub fn with_source_index(mut self, source_index: u64) -> Self {
        self.source_index = source_index;
        self
    }
}

/// Process one frame out of every `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SamplingPolicy {
    n: NonZeroU32,
}

impl SamplingPolicy {
    pub fn new(n: u32) -> Result<Self> {
        NonZeroU32::new(n)
            .map(|n| SamplingPolicy { n })
            .ok_or_else(|| Error::InvalidConfig("sampling divisor must be >= 1".into()))
    }

    /// Keep every frame (rate 1/1).
    pub fn every_frame() -> Self {
        SamplingPolicy { n: NonZeroU32::MIN }
    }

    pub fn divisor(&self) -> u32 {
        self.n.get()
    }

    /// Whether the frame at `offset` positions past the first frame is selected.
    pub fn selects(&self, offset: u64) -> bool {
        offset.is_multiple_of(u64::from(self.n.get()))
    }
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self::every_frame()
    }
}

/// Indices `0, N, 2N, ...` below `total_frames`. Index 0 is always kept.
pub fn sample_indices(total_frames: usize, policy: SamplingPolicy) -> Vec<usize> {
    let step = policy.divisor() as usize;
    (0..total_frames.max(1)).step_by(step).collect()
}

/// Selects frames whose `source_index` is a multiple of `N` past the earliest frame.
///
/// Output is ordered by ascending `source_index`. Selecting an already sampled
/// sequence with the same policy returns it unchanged.
pub fn select_frames(frames: &[FrameImage], policy: SamplingPolicy) -> Vec<&FrameImage> {
    let Some(first) = frames.iter().map(FrameImage::source_index).min() else {
        return Vec::new();
    };
    let mut selected: Vec<&FrameImage> = frames
        .iter()
        .filter(|f| policy.selects(f.source_index() - first))
        .collect();
    selected.sort_by_key(|f| f.source_index());
    selected
}

/// Per-pixel BT.601 luma, not rounded.
pub fn to_luminance(r: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if r.dim() != g.dim() || r.dim() != b.dim() {
        return Err(Error::InvalidFrame(format!(
            "channel shapes differ: {:?} {:?} {:?}",
            r.dim(),
            g.dim(),
            b.dim()
        )));
    }
    let mut out = Array2::zeros(r.dim());
    ndarray::Zip::from(&mut out)
        .and(r)
        .and(g)
        .and(b)
        .for_each(|o, &r, &g, &b| *o = LUMA_R * r + LUMA_G * g + LUMA_B * b);
    Ok(out)
}

/// Nearest-neighbour downscale. Output `(i, j)` reads input
/// `(floor(i * height / target_h), floor(j * width / target_w))`, so no new values appear.
pub fn downscale_nearest(frame: &FrameImage, target_w: usize, target_h: usize) -> Result<FrameImage> {
    let (w, h) = frame.dims();
    if target_w == 0 || target_h == 0 {
        return Err(Error::InvalidConfig(format!(
            "target size {target_w}x{target_h} is empty"
        )));
    }
    if target_w > w || target_h > h {
        return Err(Error::InvalidConfig(format!(
            "cannot upscale {w}x{h} to {target_w}x{target_h}"
        )));
    }
    if (target_w, target_h) == (w, h) {
        return Ok(frame.clone());
    }
    let src = frame.pixels();
    let cols: Vec<usize> = (0..target_w).map(|j| j * w / target_w).collect();
    let out = Array2::from_shape_fn((target_h, target_w), |(i, j)| src[[i * h / target_h, cols[j]]]);
    FrameImage::new(out, frame.source_index())
}

/// Brings a frame to `(width, height)`, downscaling only when `allow_downscale` is set.
pub fn conform(frame: &FrameImage, width: usize, height: usize, allow_downscale: bool) -> Result<FrameImage> {
    if frame.dims() == (width, height) {
        return Ok(frame.clone());
    }
    if allow_downscale && frame.width() >= width && frame.height() >= height {
        return downscale_nearest(frame, width, height);
    }
    Err(Error::mismatch((width, height), frame.dims()))
}

/// Trailing decimal integer of the file stem, e.g. `frame_000042` gives 42.
pub fn index_from_stem(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits_start = stem
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_ascii_digit())
        .last()
        .map(|(i, _)| i)?;
    stem[digits_start..].parse().ok()
}

/// Decodes a binary PGM (P5), binary PPM (P6) or 8-bit PNG frame.
pub fn load_frame(path: impl AsRef<Path>) -> Result<FrameImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let pixels = if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(&bytes).map_err(|reason| Error::decode(path, reason))?
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes).map_err(|reason| Error::decode(path, reason))?
    } else {
        return Err(Error::decode(path, "unsupported format"));
    };
    FrameImage::new(pixels, index_from_stem(path).unwrap_or(0))
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Array2<f64>, String> {
    use image::DynamicImage;

    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| e.to_string())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            Array2::from_shape_vec((h, w), buf.into_raw().into_iter().map(f64::from).collect())
                .map_err(|e| e.to_string())
        }
        DynamicImage::ImageLumaA8(_) => {
            let buf = img.to_luma8();
            Array2::from_shape_vec((h, w), buf.into_raw().into_iter().map(f64::from).collect())
                .map_err(|e| e.to_string())
        }
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            let rgb = img.to_rgb8().into_raw();
            rgb_to_luminance(&rgb, w, h)
        }
        other => Err(format!("unsupported PNG pixel type {:?}", other.color())),
    }
}

fn rgb_to_luminance(rgb: &[u8], w: usize, h: usize) -> std::result::Result<Array2<f64>, String> {
    let channel = |c: usize| Array2::from_shape_fn((h, w), |(i, j)| f64::from(rgb[3 * (i * w + j) + c]));
    to_luminance(&channel(0), &channel(1), &channel(2)).map_err(|e| e.to_string())
}

fn decode_pnm(bytes: &[u8]) -> std::result::Result<Array2<f64>, String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed header number")?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header".into());
    }
    pos += 1;

    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(format!("maxval {maxval} is not supported (expected 255)"));
    }
    if w == 0 || h == 0 {
        return Err(format!("empty image {w}x{h}"));
    }
    let channels = if &bytes[..2] == b"P6" { 3 } else { 1 };
    let needed = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(channels))
        .ok_or("image dimensions overflow")?;
    let data = bytes
        .get(pos..pos + needed)
        .ok_or_else(|| format!("truncated pixel data ({} of {needed} bytes)", bytes.len() - pos))?;
    if channels == 3 {
        rgb_to_luminance(data, w, h)
    } else {
        Array2::from_shape_vec((h, w), data.iter().copied().map(f64::from).collect()).map_err(|e| e.to_string())
    }
}

/// Writes the frame as binary PGM, rounding each value to the nearest byte.
pub fn save_pgm(frame: &FrameImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    buf.extend(frame.pixels().iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    write_atomic(path, &buf)
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);

    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes)
        .and_then(|_| file.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// The numbered frames of one video directory, sorted by frame index.
#[derive(Clone, Debug)]
pub struct FrameDir {
    dir: PathBuf,
    entries: Vec<(u64, PathBuf)>,
}

impl FrameDir {
    /// Lists `frame_<digits>.(pgm|ppm|png)` files; other files are ignored.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for entry in read {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let ext_ok = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "png"));
            let stem_ok = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.strip_prefix("frame_"))
                .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()));
            if ext_ok && stem_ok {
                if let Some(index) = index_from_stem(&path) {
                    entries.push((index, path));
                }
            }
        }
        entries.sort();
        Ok(FrameDir {
            dir: dir.to_path_buf(),
            entries,
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Paths selected by `policy`, by position in the sorted listing.
    pub fn sampled_paths(&self, policy: SamplingPolicy) -> Vec<&Path> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        sample_indices(self.entries.len(), policy)
            .into_iter()
            .map(|i| self.entries[i].1.as_path())
            .collect()
    }

    /// Loads the frames selected by `policy`.
    pub fn load_sampled(&self, policy: SamplingPolicy) -> Result<Vec<FrameImage>> {
        self.sampled_paths(policy).into_iter().map(load_frame).collect()
    }
}
