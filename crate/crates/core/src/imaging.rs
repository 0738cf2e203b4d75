//! Pixel containers, translation warps and the block-average 3× decimation.
//!
//! Coordinates: pixel centers sit on integer coordinates, rows are stored
//! contiguously, and a translation `(dx, dy)` warps as
//! `output(x, y) = input(x + dx, y + dy)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grid of reflectance values, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at index {pos}"
            )));
        }
        Ok(ImageGrid {
            width,
            height,
            values,
        })
    }

    /// Grid with every pixel set to `value`.
    ///
    /// Panics if a dimension is zero or `value` is not finite.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("valid constant grid")
    }

    /// Builds a grid by evaluating `f(x, y)` at every pixel.
    ///
    /// Panics if a dimension is zero or `f` produces a non-finite value.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values).expect("generator produced an invalid grid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.values[y * self.width..(y + 1) * self.width]
    }

    /// Applies `f` to every value. Panics if `f` yields a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        ImageGrid::new(
            self.width,
            self.height,
            self.values.iter().map(|&v| f(v)).collect(),
        )
        .expect("map produced a non-finite value")
    }

    pub fn clamp01(&self) -> ImageGrid {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Sub-rectangle starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<ImageGrid> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::DimensionMismatch(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut values = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            values.extend_from_slice(&self.row(y)[x0..x0 + width]);
        }
        Ok(ImageGrid {
            width,
            height,
            values,
        })
    }

    pub fn flip_horizontal(&self) -> ImageGrid {
        ImageGrid::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    pub fn flip_vertical(&self) -> ImageGrid {
        ImageGrid::from_fn(self.width, self.height, |x, y| {
            self.get(x, self.height - 1 - y)
        })
    }
}

/// Per-pixel clear/obscured flags paired with an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusMap {
    width: usize,
    height: usize,
    clear: Vec<bool>,
}

impl StatusMap {
    pub fn new(width: usize, height: usize, clear: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "status map dimensions must be positive, got {width}x{height}"
            )));
        }
        if clear.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} flags for a {width}x{height} status map",
                clear.len()
            )));
        }
        Ok(StatusMap {
            width,
            height,
            clear,
        })
    }

    pub fn all_clear(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![true; width * height]).expect("valid status map")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut clear = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                clear.push(f(x, y));
            }
        }
        Self::new(width, height, clear).expect("valid status map")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.clear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clear.is_empty()
    }

    #[inline]
    pub fn is_clear(&self, x: usize, y: usize) -> bool {
        self.clear[y * self.width + x]
    }

    pub fn flags(&self) -> &[bool] {
        &self.clear
    }

    pub fn count_clear(&self) -> usize {
        self.clear.iter().filter(|&&c| c).count()
    }

    /// Pixel-wise AND. Panics on a dimension mismatch.
    pub fn and(&self, other: &StatusMap) -> StatusMap {
        assert_eq!(self.dims(), other.dims(), "status map dimensions differ");
        StatusMap {
            width: self.width,
            height: self.height,
            clear: self
                .clear
                .iter()
                .zip(&other.clear)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    /// The map as a 0/1 grid.
    pub fn to_grid(&self) -> ImageGrid {
        ImageGrid {
            width: self.width,
            height: self.height,
            values: self
                .clear
                .iter()
                .map(|&c| if c { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Cells of `grid` at or above `threshold` become clear.
    pub fn from_threshold(grid: &ImageGrid, threshold: f64) -> StatusMap {
        StatusMap {
            width: grid.width,
            height: grid.height,
            clear: grid.values.iter().map(|&v| v >= threshold).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> StatusMap {
        StatusMap::from_fn(self.width, self.height, |x, y| {
            self.is_clear(self.width - 1 - x, y)
        })
    }

    pub fn flip_vertical(&self) -> StatusMap {
        StatusMap::from_fn(self.width, self.height, |x, y| {
            self.is_clear(x, self.height - 1 - y)
        })
    }
}

/// Sub-pixel translation in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Translation {
    pub dx: f64,
    pub dy: f64,
}

impl Translation {
    pub const ZERO: Translation = Translation { dx: 0.0, dy: 0.0 };

    pub fn new(dx: f64, dy: f64) -> Result<Self> {
        if !dx.is_finite() || !dy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite translation ({dx}, {dy})"
            )));
        }
        Ok(Translation { dx, dy })
    }

    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    pub fn scaled(&self, s: f64) -> Translation {
        Translation {
            dx: self.dx * s,
            dy: self.dy * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite()
    }
}

impl std::ops::Neg for Translation {
    type Output = Translation;

    fn neg(self) -> Translation {
        Translation {
            dx: -self.dx,
            dy: -self.dy,
        }
    }
}

impl std::ops::Add for Translation {
    type Output = Translation;

    fn add(self, rhs: Translation) -> Translation {
        Translation {
            dx: self.dx + rhs.dx,
            dy: self.dy + rhs.dy,
        }
    }
}

impl std::ops::Sub for Translation {
    type Output = Translation;

    fn sub(self, rhs: Translation) -> Translation {
        Translation {
            dx: self.dx - rhs.dx,
            dy: self.dy - rhs.dy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    Nearest,
    Bilinear,
    #[default]
    Bicubic,
}

/// Warp output together with the pixels whose sample fell inside the source.
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub image: ImageGrid,
    pub valid: StatusMap,
}

const EDGE_EPS: f64 = 1e-9;

/// Keys cubic convolution kernel, a = -0.5.
#[inline]
fn cubic_weight(d: f64) -> f64 {
    const A: f64 = -0.5;
    let d = d.abs();
    if d <= 1.0 {
        ((A + 2.0) * d - (A + 3.0)) * d * d + 1.0
    } else if d < 2.0 {
        ((A * d - 5.0 * A) * d + 8.0 * A) * d - 4.0 * A
    } else {
        0.0
    }
}

/// Taps (relative offsets and weights) for sampling at fractional offset `frac` in `[0, 1)`.
fn taps(interp: Interpolation, frac: f64) -> Vec<(isize, f64)> {
    match interp {
        Interpolation::Nearest => {
            if frac >= 0.5 {
                vec![(1, 1.0)]
            } else {
                vec![(0, 1.0)]
            }
        }
        Interpolation::Bilinear => vec![(0, 1.0 - frac), (1, frac)],
        Interpolation::Bicubic => {
            let mut t: Vec<(isize, f64)> = (-1..=2)
                .map(|k| (k, cubic_weight(frac - k as f64)))
                .collect();
            let sum: f64 = t.iter().map(|(_, w)| w).sum();
            for (_, w) in &mut t {
                *w /= sum;
            }
            t
        }
    }
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Weighted sum of taps written as offsets from the first tap, so that
/// constant neighborhoods come back bit-exact.
#[inline]
fn interpolate(taps: &[(isize, f64)], sample: impl Fn(isize) -> f64) -> f64 {
    let first = sample(taps[0].0);
    first
        + taps[1..]
            .iter()
            .map(|&(k, wt)| wt * (sample(k) - first))
            .sum::<f64>()
}

/// Vertical pass over whole rows: `out[x] = interpolate(taps, |k| row(k)[x])`.
fn interpolate_rows<'a>(out: &mut [f64], taps: &[(isize, f64)], row: impl Fn(isize) -> &'a [f64]) {
    let first = row(taps[0].0);
    out.copy_from_slice(first);
    for &(k, wt) in &taps[1..] {
        for ((o, &s), &f) in out.iter_mut().zip(row(k)).zip(first) {
            *o += wt * (s - f);
        }
    }
}

/// Translates `img` so that `output(x, y) = img(x + dx, y + dy)`.
///
/// Samples whose source position leaves the frame are marked invalid in the
/// returned mask; their values come from edge-clamped neighbors and must not
/// be used. Bicubic output is clamped to `[0, 1]`. Integer translations are
/// exact copies for every interpolation mode.
pub fn warp(img: &ImageGrid, t: Translation, interp: Interpolation) -> Result<Warped> {
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite translation ({}, {})",
            t.dx, t.dy
        )));
    }
    let (w, h) = img.dims();

    let valid_axis = |n: usize, shift: f64| -> Vec<bool> {
        (0..n)
            .map(|i| {
                let p = i as f64 + shift;
                match interp {
                    Interpolation::Nearest => {
                        let r = (p + 0.5).floor();
                        r >= 0.0 && r <= (n - 1) as f64
                    }
                    _ => p >= -EDGE_EPS && p <= (n - 1) as f64 + EDGE_EPS,
                }
            })
            .collect()
    };
    let valid_x = valid_axis(w, t.dx);
    let valid_y = valid_axis(h, t.dy);
    let valid = StatusMap::from_fn(w, h, |x, y| valid_x[x] && valid_y[y]);

    let integral = t.dx.fract() == 0.0 && t.dy.fract() == 0.0;
    let interp = if integral {
        Interpolation::Nearest
    } else {
        interp
    };

    let base_x = t.dx.floor();
    let base_y = t.dy.floor();
    let taps_x = taps(interp, t.dx - base_x);
    let taps_y = taps(interp, t.dy - base_y);
    let base_x = base_x as isize;
    let base_y = base_y as isize;

    // horizontal pass
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let src = img.row(y);
        let dst = &mut tmp[y * w..(y + 1) * w];
        for (x, out) in dst.iter_mut().enumerate() {
            let x0 = x as isize + base_x;
            *out = interpolate(&taps_x, |k| src[clamp_index(x0 + k, w)]);
        }
    }
    // vertical pass
    let mut values = vec![0.0; w * h];
    for y in 0..h {
        let y0 = y as isize + base_y;
        interpolate_rows(&mut values[y * w..(y + 1) * w], &taps_y, |k| {
            let sy = clamp_index(y0 + k, h);
            &tmp[sy * w..(sy + 1) * w]
        });
    }
    if interp == Interpolation::Bicubic {
        for v in &mut values {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(Warped {
        image: ImageGrid::new(w, h, values)?,
        valid,
    })
}

/// Translates a status map with nearest-neighbor sampling; pixels sampled
/// outside the frame come back obscured.
pub fn warp_mask(mask: &StatusMap, t: Translation) -> Result<StatusMap> {
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite translation ({}, {})",
            t.dx, t.dy
        )));
    }
    let (w, h) = mask.dims();
    Ok(StatusMap::from_fn(w, h, |x, y| {
        let sx = (x as f64 + t.dx + 0.5).floor();
        let sy = (y as f64 + t.dy + 0.5).floor();
        sx >= 0.0
            && sy >= 0.0
            && sx <= (w - 1) as f64
            && sy <= (h - 1) as f64
            && mask.is_clear(sx as usize, sy as usize)
    }))
}

fn check_divisible(w: usize, h: usize, factor: usize) -> Result<()> {
    if factor == 0 {
        return Err(Error::InvalidArgument("factor must be positive".into()));
    }
    if w % factor != 0 || h % factor != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{w}x{h} is not divisible by {factor}"
        )));
    }
    Ok(())
}

/// Block-average low-pass followed by decimation by `factor`.
pub fn downsample_hr(hr: &ImageGrid, factor: usize) -> Result<ImageGrid> {
    let (w, h) = hr.dims();
    check_divisible(w, h, factor)?;
    let (ow, oh) = (w / factor, h / factor);
    let norm = (factor * factor) as f64;
    let mut values = Vec::with_capacity(ow * oh);
    for by in 0..oh {
        for bx in 0..ow {
            let mut sum = 0.0;
            for y in by * factor..(by + 1) * factor {
                sum += hr.row(y)[bx * factor..(bx + 1) * factor]
                    .iter()
                    .sum::<f64>();
            }
            values.push(sum / norm);
        }
    }
    ImageGrid::new(ow, oh, values)
}

/// Fraction of clear pixels in every `factor`×`factor` block.
pub fn downscale_mask(m: &StatusMap, factor: usize) -> Result<ImageGrid> {
    let (w, h) = m.dims();
    check_divisible(w, h, factor)?;
    let (ow, oh) = (w / factor, h / factor);
    let norm = (factor * factor) as f64;
    let mut values = Vec::with_capacity(ow * oh);
    for by in 0..oh {
        for bx in 0..ow {
            let mut count = 0usize;
            for y in by * factor..(by + 1) * factor {
                for x in bx * factor..(bx + 1) * factor {
                    count += m.is_clear(x, y) as usize;
                }
            }
            values.push(count as f64 / norm);
        }
    }
    ImageGrid::new(ow, oh, values)
}

/// Bicubic magnification by an integer factor, aligned with [`downsample_hr`]:
/// the center of low-resolution pixel `i` maps to high-resolution pixel
/// `factor * i + (factor - 1) / 2`. Output is clamped to `[0, 1]`.
pub fn upsample_bicubic(img: &ImageGrid, factor: usize) -> Result<ImageGrid> {
    if factor == 0 {
        return Err(Error::InvalidArgument("factor must be positive".into()));
    }
    let (w, h) = img.dims();
    let (ow, oh) = (w * factor, h * factor);
    let axis_taps = |n_out: usize| -> Vec<(isize, Vec<(isize, f64)>)> {
        (0..n_out)
            .map(|o| {
                let src = (o as f64 + 0.5) / factor as f64 - 0.5;
                let base = src.floor();
                (base as isize, taps(Interpolation::Bicubic, src - base))
            })
            .collect()
    };
    let tx = axis_taps(ow);
    let ty = axis_taps(oh);

    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let src = img.row(y);
        for (x, (base, taps)) in tx.iter().enumerate() {
            tmp[y * ow + x] = interpolate(taps, |k| src[clamp_index(base + k, w)]);
        }
    }
    let mut values = vec![0.0; ow * oh];
    for (y, (base, taps)) in ty.iter().enumerate() {
        interpolate_rows(&mut values[y * ow..(y + 1) * ow], taps, |k| {
            let sy = clamp_index(base + k, h);
            &tmp[sy * ow..(sy + 1) * ow]
        });
    }
    for v in &mut values {
        *v = v.clamp(0.0, 1.0);
    }
    ImageGrid::new(ow, oh, values)
}

/// Sample of `img` at a real-valued position with edge clamping.
pub fn sample_bicubic(img: &ImageGrid, x: f64, y: f64) -> f64 {
    let bx = x.floor();
    let by = y.floor();
    let tx = taps(Interpolation::Bicubic, x - bx);
    let ty = taps(Interpolation::Bicubic, y - by);
    let (bx, by) = (bx as isize, by as isize);
    let (w, h) = img.dims();
    interpolate(&ty, |ky| {
        let row = img.row(clamp_index(by + ky, h));
        interpolate(&tx, |kx| row[clamp_index(bx + kx, w)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> ImageGrid {
        ImageGrid::from_fn(w, h, |x, _| x as f64 / w as f64)
    }

    fn texture(w: usize, h: usize) -> ImageGrid {
        ImageGrid::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            0.5 + 0.2 * (0.31 * x).sin() * (0.17 * y).cos() + 0.1 * (0.05 * (x + 2.0 * y)).sin()
        })
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            ImageGrid::new(2, 2, vec![0.0; 3]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(ImageGrid::new(0, 2, vec![]).is_err());
        assert!(ImageGrid::new(1, 1, vec![f64::NAN]).is_err());
        assert!(StatusMap::new(2, 2, vec![true; 5]).is_err());
    }

    #[test]
    fn identity_warp_is_bit_identical() {
        let img = texture(17, 11);
        for interp in [
            Interpolation::Nearest,
            Interpolation::Bilinear,
            Interpolation::Bicubic,
        ] {
            let out = warp(&img, Translation::ZERO, interp).unwrap();
            assert_eq!(out.image, img);
            assert_eq!(out.valid.count_clear(), img.len());
        }
    }

    #[test]
    fn constant_survives_bilinear_warp() {
        let img = ImageGrid::filled(20, 20, 0.5);
        let out = warp(&img, Translation::new(1.3, -0.7).unwrap(), Interpolation::Bilinear).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                if out.valid.is_clear(x, y) {
                    assert!((out.image.get(x, y) - 0.5).abs() < 1e-15);
                }
            }
        }
        // x + 1.3 <= 19 → x <= 17; y - 0.7 >= 0 → y >= 1
        assert!(out.valid.is_clear(17, 1));
        assert!(!out.valid.is_clear(18, 1));
        assert!(!out.valid.is_clear(5, 0));
    }

    #[test]
    fn ramp_shifts_by_one_column() {
        let (w, h) = (16, 8);
        let img = ramp(w, h);
        let out = warp(&img, Translation::new(1.0, 0.0).unwrap(), Interpolation::Bilinear).unwrap();
        for y in 0..h {
            for x in 0..w - 1 {
                let expected = (x + 1) as f64 / w as f64;
                assert_eq!(out.image.get(x, y), expected);
                assert!(out.valid.is_clear(x, y));
            }
            assert!(!out.valid.is_clear(w - 1, y));
        }
    }

    #[test]
    fn fractional_ramp_matches_closed_form() {
        let (w, h) = (16, 8);
        let img = ramp(w, h);
        let out = warp(&img, Translation::new(0.25, 0.0).unwrap(), Interpolation::Bilinear).unwrap();
        for x in 0..w - 1 {
            let expected = (x as f64 + 0.25) / w as f64;
            assert!((out.image.get(x, 3) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn round_trip_warp_on_linear_image() {
        let img = ImageGrid::from_fn(24, 24, |x, y| 0.2 + 0.01 * x as f64 + 0.005 * y as f64);
        let t = Translation::new(1.4, -2.3).unwrap();
        let fwd = warp(&img, t, Interpolation::Bilinear).unwrap();
        let back = warp(&fwd.image, -t, Interpolation::Bilinear).unwrap();
        // interior where both passes sampled inside the frame
        for y in 4..20 {
            for x in 4..20 {
                assert!((back.image.get(x, y) - img.get(x, y)).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn non_finite_translation_is_rejected() {
        let img = texture(8, 8);
        let t = Translation {
            dx: f64::NAN,
            dy: 0.0,
        };
        assert!(matches!(
            warp(&img, t, Interpolation::Bicubic),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Translation::new(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn bicubic_stays_in_unit_range() {
        let img = ImageGrid::from_fn(16, 16, |x, _| if x < 8 { 0.0 } else { 1.0 });
        let out = warp(&img, Translation::new(0.4, 0.0).unwrap(), Interpolation::Bicubic).unwrap();
        assert!(out.image.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn downsample_dims_and_block_mean() {
        let hr = ImageGrid::filled(384, 384, 0.3);
        let lr = downsample_hr(&hr, 3).unwrap();
        assert_eq!(lr.dims(), (128, 128));
        assert!(lr.values().iter().all(|&v| (v - 0.3).abs() < 1e-15));

        let block = ImageGrid::new(3, 3, (0..9).map(|i| i as f64 / 8.0).collect()).unwrap();
        let out = downsample_hr(&block, 3).unwrap();
        assert_eq!(out.values(), &[0.5]);
    }

    #[test]
    fn downsample_rejects_non_divisible() {
        let hr = ImageGrid::filled(10, 9, 0.1);
        assert!(matches!(
            downsample_hr(&hr, 3),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(downscale_mask(&StatusMap::all_clear(9, 10), 3).is_err());
    }

    #[test]
    fn downscale_mask_counts_clear_fraction() {
        let all = downscale_mask(&StatusMap::all_clear(384, 384), 3).unwrap();
        assert_eq!(all.dims(), (128, 128));
        assert!(all.values().iter().all(|&v| v == 1.0));

        let six = StatusMap::new(3, 3, (0..9).map(|i| i < 6).collect()).unwrap();
        assert_eq!(downscale_mask(&six, 3).unwrap().values(), &[6.0 / 9.0]);
    }

    #[test]
    fn decimation_commutes_with_flips() {
        let img = texture(12, 9);
        let m = StatusMap::from_fn(12, 9, |x, y| (x * 7 + y * 3) % 5 != 0);
        let a = downsample_hr(&img.flip_horizontal(), 3).unwrap();
        let b = downsample_hr(&img, 3).unwrap().flip_horizontal();
        for (p, q) in a.values().iter().zip(b.values()) {
            assert!((p - q).abs() < 1e-15);
        }
        let a = downsample_hr(&img.flip_vertical(), 3).unwrap();
        let b = downsample_hr(&img, 3).unwrap().flip_vertical();
        for (p, q) in a.values().iter().zip(b.values()) {
            assert!((p - q).abs() < 1e-15);
        }
        assert_eq!(
            downscale_mask(&m.flip_horizontal(), 3).unwrap(),
            downscale_mask(&m, 3).unwrap().flip_horizontal()
        );
        assert_eq!(
            downscale_mask(&m.flip_vertical(), 3).unwrap(),
            downscale_mask(&m, 3).unwrap().flip_vertical()
        );
    }

    #[test]
    fn upsample_preserves_constants_and_samples() {
        let img = ImageGrid::filled(128, 128, 0.5);
        let up = upsample_bicubic(&img, 3).unwrap();
        assert_eq!(up.dims(), (384, 384));
        assert!(up.values().iter().all(|&v| (v - 0.5).abs() < 1e-12));

        // low-res centers land on high-res pixel 3i+1 and are reproduced
        let tex = texture(10, 10);
        let up = upsample_bicubic(&tex, 3).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                assert!((up.get(3 * i + 1, 3 * j + 1) - tex.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mask_warp_marks_out_of_frame() {
        let m = StatusMap::all_clear(6, 6);
        let w = warp_mask(&m, Translation::new(2.0, 0.0).unwrap()).unwrap();
        assert!(w.is_clear(3, 0));
        assert!(!w.is_clear(4, 0));
    }
}
