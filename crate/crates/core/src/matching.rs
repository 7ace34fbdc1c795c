//! Similarity measures: Pearson correlation at zero shift, full cyclic cross-correlation
//! and peak-to-correlation energy (PCE).

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

/// Default side of the square neighbourhood removed around the correlation peak.
pub const DEFAULT_EXCLUSION: usize = 11;

/// Outcome of one PCE comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PceResult {
    pub pce: f64,
    /// Cyclic shift `(s, t)` of the correlation maximum.
    pub peak_row: usize,
    pub peak_col: usize,
    /// Raw correlation value at the peak.
    pub peak_value: f64,
}

fn check_shape(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::mismatch((a.1, a.0), (b.1, b.0)));
    }
    if a.0 == 0 || a.1 == 0 {
        return Err(Error::Degenerate("empty matrix".into()));
    }
    Ok(())
}

fn is_constant(m: ArrayView2<f64>) -> bool {
    let first = m.iter().next().copied();
    first.is_none_or(|f| m.iter().all(|&v| v == f))
}

fn centered(m: ArrayView2<f64>) -> Array2<f64> {
    let mean = m.mean().unwrap_or(0.0);
    m.mapv(|v| v - mean)
}

/// Pearson correlation coefficient of two equally shaped matrices.
///
/// A constant input has no defined correlation and is reported as
/// [`Error::Degenerate`], never as a zero score.
pub fn ncc(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    check_shape(a.dim(), b.dim())?;
    if is_constant(a) || is_constant(b) {
        return Err(Error::Degenerate("zero variance input to correlation".into()));
    }
    let (ma, mb) = (a.mean().unwrap(), b.mean().unwrap());
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let denom = (saa * sbb).sqrt();
    if denom == 0.0 {
        return Err(Error::Degenerate("zero variance input to correlation".into()));
    }
    Ok((sab / denom).clamp(-1.0, 1.0))
}

/// Frequency-domain transform of a mean-subtracted matrix, stored column-major.
#[derive(Clone, Debug)]
pub struct Spectrum {
    width: usize,
    height: usize,
    data: Vec<Complex<f64>>,
}

impl Spectrum {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Cached FFT plans for cyclic correlation of `width x height` matrices.
///
/// Plans are immutable and shared; scratch space is allocated per call, so one
/// correlator can serve many threads.
#[derive(Clone)]
pub struct Correlator {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Correlator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Correlator")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish()
    }
}

fn transpose(src: &[Complex<f64>], rows: usize, cols: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::default(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

fn run(fft: &Arc<dyn Fft<f64>>, buf: &mut [Complex<f64>]) {
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(buf, &mut scratch);
}

impl Correlator {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Degenerate(format!("cannot correlate {width}x{height} matrices")));
        }
        let mut planner = FftPlanner::new();
        Ok(Correlator {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Spectrum of `m - mean(m)`.
    pub fn spectrum(&self, m: ArrayView2<f64>) -> Result<Spectrum> {
        check_shape((self.height, self.width), m.dim())?;
        let c = centered(m);
        let mut buf: Vec<Complex<f64>> = c.iter().map(|&v| Complex::new(v, 0.0)).collect();
        run(&self.row_fwd, &mut buf);
        let mut cols = transpose(&buf, self.height, self.width);
        run(&self.col_fwd, &mut cols);
        Ok(Spectrum {
            width: self.width,
            height: self.height,
            data: cols,
        })
    }

    /// `C(s, t) = sum_ij a~(i, j) b~(i + s, j + t)` with cyclic indices.
    pub fn correlate(&self, a: &Spectrum, b: &Spectrum) -> Result<Array2<f64>> {
        let dims = (self.width, self.height);
        if a.dims() != dims || b.dims() != dims {
            let bad = if a.dims() != dims { a.dims() } else { b.dims() };
            return Err(Error::mismatch(dims, bad));
        }
        let mut prod: Vec<Complex<f64>> = a.data.iter().zip(&b.data).map(|(x, y)| x.conj() * y).collect();
        run(&self.col_inv, &mut prod);
        let mut rows = transpose(&prod, self.width, self.height);
        run(&self.row_inv, &mut rows);
        let scale = 1.0 / (self.width * self.height) as f64;
        Array2::from_shape_vec(
            (self.height, self.width),
            rows.into_iter().map(|z| z.re * scale).collect(),
        )
        .map_err(|e| Error::Degenerate(e.to_string()))
    }

    /// PCE of two precomputed spectra.
    pub fn pce(&self, a: &Spectrum, b: &Spectrum, exclusion: usize) -> Result<PceResult> {
        pce_of_surface(self.correlate(a, b)?.view(), exclusion)
    }
}

/// Full cyclic cross-correlation of the mean-subtracted inputs, computed in the
/// frequency domain.
pub fn cross_correlate_full(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_shape(a.dim(), b.dim())?;
    let (h, w) = a.dim();
    let corr = Correlator::new(w, h)?;
    corr.correlate(&corr.spectrum(a)?, &corr.spectrum(b)?)
}

fn check_exclusion(exclusion: usize, dims: (usize, usize)) -> Result<()> {
    if exclusion == 0 || exclusion.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "exclusion window must be a positive odd size, got {exclusion}"
        )));
    }
    if dims.0 * dims.1 <= exclusion * exclusion {
        return Err(Error::Degenerate(format!(
            "{}x{} surface is not larger than the {exclusion}x{exclusion} exclusion window",
            dims.1, dims.0
        )));
    }
    Ok(())
}

/// PCE of a correlation surface: squared maximum over the mean squared value outside
/// the cyclic `exclusion x exclusion` neighbourhood of the maximum.
pub fn pce_of_surface(surface: ArrayView2<f64>, exclusion: usize) -> Result<PceResult> {
    let (h, w) = surface.dim();
    check_exclusion(exclusion, (h, w))?;

    let mut peak = (0, 0, f64::NEG_INFINITY);
    for ((r, c), &v) in surface.indexed_iter() {
        if v > peak.2 {
            peak = (r, c, v);
        }
    }
    let (peak_row, peak_col, peak_value) = peak;

    let half = (exclusion / 2) as isize;
    let mut excluded = vec![false; h * w];
    for dr in -half..=half {
        let r = (peak_row as isize + dr).rem_euclid(h as isize) as usize;
        for dc in -half..=half {
            let c = (peak_col as isize + dc).rem_euclid(w as isize) as usize;
            excluded[r * w + c] = true;
        }
    }
    let (mut energy, mut count) = (0.0, 0usize);
    for (v, &skip) in surface.iter().zip(&excluded) {
        if !skip {
            energy += v * v;
            count += 1;
        }
    }
    let energy = energy / count as f64;
    if energy == 0.0 || !energy.is_finite() {
        return Err(Error::Degenerate("correlation surface has no background energy".into()));
    }
    Ok(PceResult {
        pce: peak_value * peak_value / energy,
        peak_row,
        peak_col,
        peak_value,
    })
}

/// Peak-to-correlation energy of `a` against `b`.
pub fn pce(a: ArrayView2<f64>, b: ArrayView2<f64>, exclusion: usize) -> Result<PceResult> {
    check_shape(a.dim(), b.dim())?;
    check_exclusion(exclusion, a.dim())?;
    if is_constant(a) || is_constant(b) {
        return Err(Error::Degenerate(
            "constant input gives a zero correlation surface".into(),
        ));
    }
    pce_of_surface(cross_correlate_full(a, b)?.view(), exclusion)
}
