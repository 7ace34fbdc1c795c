//! Separable 2D orthogonal wavelet transform with half-sample symmetric extension.
//!
//! Each 1D analysis step keeps `floor((n + F - 1) / 2)` coefficients per band, which is
//! enough for the transposed (synthesis) operator to rebuild every input sample exactly.

/// 8-tap Daubechies decomposition low-pass filter (four vanishing moments).
pub const DAUB8_LO: [f64; 8] = [
    -0.010597401785069032,
    0.0328830116668852,
    0.030841381835560764,
    -0.18703481171909309,
    -0.027983769416859854,
    0.6308807679298589,
    0.7148465705529157,
    0.2303778133088965,
];

/// Quadrature-mirror high-pass companion of `lo`: `g[j] = (-1)^j lo[F-1-j]`.
pub fn highpass_of(lo: &[f64]) -> Vec<f64> {
    let f = lo.len();
    (0..f)
        .map(|j| if j % 2 == 0 { lo[f - 1 - j] } else { -lo[f - 1 - j] })
        .collect()
}

/// Index into the half-sample symmetric extension of a length-`n` signal.
#[inline]
pub fn sym_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let r = i.rem_euclid(period) as usize;
    if r < n {
        r
    } else {
        2 * n - 1 - r
    }
}

/// Orthogonal two-channel filter bank.
#[derive(Clone, Debug)]
pub struct FilterBank {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Default for FilterBank {
    fn default() -> Self {
        Self::new(&DAUB8_LO)
    }
}

impl FilterBank {
    pub fn new(lo: &[f64]) -> Self {
        assert!(
            lo.len() >= 2 && lo.len().is_multiple_of(2),
            "filter length must be even"
        );
        FilterBank {
            lo: lo.to_vec(),
            hi: highpass_of(lo),
        }
    }

    pub fn taps(&self) -> usize {
        self.lo.len()
    }

    /// Number of coefficients per band for a length-`n` signal.
    pub fn coeff_len(&self, n: usize) -> usize {
        (n + self.taps() - 1) / 2
    }

    /// `lo[k] = sum_j h[j] x[2k+1-j]` over the symmetric extension of `x`.
    pub fn analyze(&self, x: &[f64], lo: &mut [f64], hi: &mut [f64]) {
        let n = x.len();
        let len = self.coeff_len(n);
        debug_assert!(lo.len() == len && hi.len() == len);
        for k in 0..len {
            let (mut a, mut d) = (0.0, 0.0);
            for (j, (hl, hh)) in self.lo.iter().zip(&self.hi).enumerate() {
                let v = x[sym_index(2 * k as isize + 1 - j as isize, n)];
                a += hl * v;
                d += hh * v;
            }
            lo[k] = a;
            hi[k] = d;
        }
    }

    /// Transpose of [`analyze`](Self::analyze), restricted to the `out.len()` original samples.
    pub fn synthesize(&self, lo: &[f64], hi: &[f64], out: &mut [f64]) {
        let n = out.len() as isize;
        out.fill(0.0);
        for (k, (&a, &d)) in lo.iter().zip(hi).enumerate() {
            for (j, (hl, hh)) in self.lo.iter().zip(&self.hi).enumerate() {
                let m = 2 * k as isize + 1 - j as isize;
                if (0..n).contains(&m) {
                    out[m as usize] += hl * a + hh * d;
                }
            }
        }
    }
}

/// Row-major real matrix used inside the transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.width..(r + 1) * self.width]
    }

    fn column(&self, c: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend((0..self.height).map(|r| self.data[r * self.width + c]));
    }

    fn set_column(&mut self, c: usize, values: &[f64]) {
        for (r, v) in values.iter().enumerate() {
            self.data[r * self.width + c] = *v;
        }
    }
}

/// Detail subbands of one decomposition level.
#[derive(Clone, Debug)]
pub struct DetailBands {
    /// Size of the approximation this level was computed from.
    pub source_width: usize,
    pub source_height: usize,
    /// Horizontal low-pass, vertical high-pass.
    pub lh: Plane,
    /// Horizontal high-pass, vertical low-pass.
    pub hl: Plane,
    pub hh: Plane,
}

impl DetailBands {
    pub fn bands_mut(&mut self) -> [&mut Plane; 3] {
        [&mut self.lh, &mut self.hl, &mut self.hh]
    }
}

/// Multi-level decomposition: coarsest approximation plus details, finest level first.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub approx: Plane,
    pub details: Vec<DetailBands>,
}

fn split_rows(bank: &FilterBank, src: &Plane) -> (Plane, Plane) {
    let cw = bank.coeff_len(src.width);
    let mut lo = Plane::zeros(cw, src.height);
    let mut hi = Plane::zeros(cw, src.height);
    for r in 0..src.height {
        bank.analyze(src.row(r), lo.row_mut(r), hi.row_mut(r));
    }
    (lo, hi)
}

fn split_columns(bank: &FilterBank, src: &Plane) -> (Plane, Plane) {
    let ch = bank.coeff_len(src.height);
    let mut lo = Plane::zeros(src.width, ch);
    let mut hi = Plane::zeros(src.width, ch);
    let (mut col, mut l, mut h) = (Vec::new(), vec![0.0; ch], vec![0.0; ch]);
    for c in 0..src.width {
        src.column(c, &mut col);
        bank.analyze(&col, &mut l, &mut h);
        lo.set_column(c, &l);
        hi.set_column(c, &h);
    }
    (lo, hi)
}

fn merge_columns(bank: &FilterBank, lo: &Plane, hi: &Plane, height: usize) -> Plane {
    let mut out = Plane::zeros(lo.width, height);
    let (mut l, mut h, mut o) = (Vec::new(), Vec::new(), vec![0.0; height]);
    for c in 0..lo.width {
        lo.column(c, &mut l);
        hi.column(c, &mut h);
        bank.synthesize(&l, &h, &mut o);
        out.set_column(c, &o);
    }
    out
}

fn merge_rows(bank: &FilterBank, lo: &Plane, hi: &Plane, width: usize) -> Plane {
    let mut out = Plane::zeros(width, lo.height);
    for r in 0..lo.height {
        bank.synthesize(lo.row(r), hi.row(r), out.row_mut(r));
    }
    out
}

/// `levels`-deep separable decomposition (rows, then columns, at each level).
pub fn decompose(bank: &FilterBank, input: &Plane, levels: usize) -> Decomposition {
    let mut approx = input.clone();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (l, h) = split_rows(bank, &approx);
        let (ll, lh) = split_columns(bank, &l);
        let (hl, hh) = split_columns(bank, &h);
        details.push(DetailBands {
            source_width: approx.width,
            source_height: approx.height,
            lh,
            hl,
            hh,
        });
        approx = ll;
    }
    Decomposition { approx, details }
}

/// Inverse of [`decompose`].
pub fn reconstruct(bank: &FilterBank, dec: &Decomposition) -> Plane {
    let mut approx = dec.approx.clone();
    for level in dec.details.iter().rev() {
        let l = merge_columns(bank, &approx, &level.lh, level.source_height);
        let h = merge_columns(bank, &level.hl, &level.hh, level.source_height);
        approx = merge_rows(bank, &l, &h, level.source_width);
    }
    approx
}
