//! Seeded generator of satellite-like scenes with known ground truth.
//!
//! Each scene starts from a quantized high-resolution canvas (multi-octave
//! value noise plus piecewise-constant parcels) that is slightly larger than
//! the target so that shifted views never sample outside it. Every view is
//! the canvas, optionally changed over time, covered by clouds, translated,
//! cropped, block-averaged by 3, offset by a global bias and corrupted by
//! sensor noise. One view, the planted reference, shares the target's date:
//! no temporal change, no bias, and the target's own clouds.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset_io;
use crate::error::{Error, Result};
use crate::imaging::{downsample_hr, warp, ImageGrid, Interpolation, StatusMap, Translation};
use crate::reference::{
    clearance_fraction, Band, Frame, Scene, MAX_VIEWS, MIN_HR_CLEARANCE, MIN_LR_CLEARANCE,
    MIN_VIEWS, SCALE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_scenes: usize,
    pub n_views: usize,
    pub band: Band,
    /// Side of the low-resolution views.
    pub lr_size: usize,
    /// Standard deviation of the per-view translation, low-resolution pixels.
    pub shift_sigma: f64,
    pub noise_sigma: f64,
    /// Largest cloud cover of a single image.
    pub cloud_coverage_max: f64,
    /// Probability that an image is entirely cloud free.
    pub clear_probability: f64,
    /// Peak relative gain change of the temporal field.
    pub temporal_amplitude: f64,
    /// Views get a global offset drawn uniformly from `±bias_range`.
    pub bias_range: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            n_scenes: 10,
            n_views: 12,
            band: Band::Nir,
            lr_size: 128,
            shift_sigma: 0.6,
            noise_sigma: 0.005,
            cloud_coverage_max: 0.35,
            clear_probability: 0.25,
            temporal_amplitude: 0.15,
            bias_range: 0.02,
        }
    }
}

/// Translations are clipped to this many low-resolution pixels.
pub const MAX_SHIFT: f64 = 2.0;
/// Extra high-resolution pixels around the target on the working canvas.
const MARGIN: usize = 12;
const MAX_CLOUD_ATTEMPTS: usize = 64;
/// Largest cloud cover drawn for a target image.
const HR_COVERAGE_MAX: f64 = 0.2;

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        if !(MIN_VIEWS..=MAX_VIEWS).contains(&self.n_views) {
            return bad(format!(
                "n_views {} outside {MIN_VIEWS}..={MAX_VIEWS}",
                self.n_views
            ));
        }
        if self.lr_size < 32 {
            return bad(format!("lr_size {} below 32", self.lr_size));
        }
        if !(0.0..=0.40).contains(&self.cloud_coverage_max) {
            return bad(format!(
                "cloud_coverage_max {} outside [0, 0.4]",
                self.cloud_coverage_max
            ));
        }
        if !(0.0..=1.0).contains(&self.clear_probability) {
            return bad(format!(
                "clear_probability {} outside [0, 1]",
                self.clear_probability
            ));
        }
        for (name, v) in [
            ("shift_sigma", self.shift_sigma),
            ("noise_sigma", self.noise_sigma),
            ("temporal_amplitude", self.temporal_amplitude),
            ("bias_range", self.bias_range),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.temporal_amplitude > 0.5 || self.bias_range > 0.1 {
            return bad("temporal_amplitude ≤ 0.5 and bias_range ≤ 0.1 required".into());
        }
        Ok(())
    }

    pub fn scene_id(index: usize) -> String {
        format!("imgset{index:04}")
    }
}

/// Kind of temporal change applied to one view.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TemporalChange {
    /// Peak relative amplitude of the smooth multiplicative gain field.
    pub gain_amplitude: f64,
    /// Number of bright (snow-like) or dark (shadow-like) patches.
    pub patches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub scene_id: String,
    pub true_ref_index: usize,
    pub shifts: Vec<Translation>,
    pub biases: Vec<f64>,
    pub temporal: Vec<TemporalChange>,
}

/// Rounds to the 16-bit grid used on disk.
pub fn quantize16(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0
}

/// Value noise: a random lattice with spacing `cell`, smoothstep-blended.
fn value_noise(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: f64) -> Vec<f64> {
    let lw = (w as f64 / cell).ceil() as usize + 2;
    let lh = (h as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..lw * lh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ox: f64 = rng.random_range(0.0..1.0);
    let oy: f64 = rng.random_range(0.0..1.0);
    let smooth = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
    let axis = |n: usize, offset: f64| -> Vec<(usize, f64)> {
        (0..n)
            .map(|i| {
                let f = i as f64 / cell + offset;
                let k = f.floor();
                (k as usize, smooth(f - k))
            })
            .collect()
    };
    let xs = axis(w, ox);
    let ys = axis(h, oy);
    let mut out = Vec::with_capacity(w * h);
    for &(iy, ty) in &ys {
        let r0 = &lattice[iy * lw..(iy + 1) * lw];
        let r1 = &lattice[(iy + 1) * lw..(iy + 2) * lw];
        for &(ix, tx) in &xs {
            let top = r0[ix] + (r0[ix + 1] - r0[ix]) * tx;
            let bottom = r1[ix] + (r1[ix + 1] - r1[ix]) * tx;
            out.push(top + (bottom - top) * ty);
        }
    }
    out
}

/// Sum of `octaves` value-noise layers, halving cell size and amplitude.
fn fractal_noise(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: f64, octaves: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let mut amp = 1.0;
    let mut norm = 0.0;
    let mut c = cell;
    for _ in 0..octaves {
        let layer = value_noise(rng, w, h, c);
        for (o, l) in out.iter_mut().zip(layer) {
            *o += amp * l;
        }
        norm += amp;
        amp *= 0.5;
        c = (c * 0.5).max(1.5);
    }
    for o in &mut out {
        *o /= norm;
    }
    out
}

fn base_canvas(rng: &mut ChaCha8Rng, side: usize) -> Vec<f64> {
    let texture = fractal_noise(rng, side, side, 48.0, 5);
    // Voronoi parcels with their own offsets
    let n_parcels = rng.random_range(8..16);
    let parcels: Vec<(f64, f64, f64)> = (0..n_parcels)
        .map(|_| {
            (
                rng.random_range(0.0..side as f64),
                rng.random_range(0.0..side as f64),
                rng.random_range(-0.12..0.12),
            )
        })
        .collect();
    let level = rng.random_range(0.22..0.4);
    let contrast = rng.random_range(0.15..0.25);
    (0..side * side)
        .map(|i| {
            let (x, y) = ((i % side) as f64, (i / side) as f64);
            let offset = parcels
                .iter()
                .map(|&(px, py, o)| ((x - px).powi(2) + (y - py).powi(2), o))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, o)| o)
                .unwrap_or(0.0);
            quantize16((level + contrast * texture[i] + offset).clamp(0.02, 0.85))
        })
        .collect()
}

/// Cloud indicator on the canvas covering roughly `coverage` of it.
fn cloud_layer(rng: &mut ChaCha8Rng, side: usize, coverage: f64) -> Vec<f64> {
    if coverage <= 0.0 {
        return vec![0.0; side * side];
    }
    let field = fractal_noise(rng, side, side, 64.0, 3);
    let mut scratch = field.clone();
    let k = ((1.0 - coverage) * (scratch.len() - 1) as f64).round() as usize;
    let threshold = *scratch.select_nth_unstable_by(k, f64::total_cmp).1;
    field
        .into_iter()
        .map(|v| if v > threshold { 1.0 } else { 0.0 })
        .collect()
}

fn draw_coverage(rng: &mut ChaCha8Rng, clear_p: f64, max: f64) -> f64 {
    if max <= 0.0 || rng.random_bool(clear_p) {
        0.0
    } else {
        rng.random_range(0.0..max).max(0.02)
    }
}

const CLOUD_LEVEL: f64 = 0.9;
const CLOUD_OPACITY: f64 = 0.8;

fn apply_clouds(canvas: &[f64], clouds: &[f64]) -> Vec<f64> {
    canvas
        .iter()
        .zip(clouds)
        .map(|(&v, &c)| v + c * CLOUD_OPACITY * (CLOUD_LEVEL - v))
        .collect()
}

fn temporal_change(
    rng: &mut ChaCha8Rng,
    canvas: &[f64],
    side: usize,
    amplitude: f64,
) -> (Vec<f64>, TemporalChange) {
    if amplitude <= 0.0 {
        return (canvas.to_vec(), TemporalChange::default());
    }
    let gain_amplitude = amplitude * rng.random_range(0.5..1.0);
    let field = fractal_noise(rng, side, side, 96.0, 2);
    let mut out: Vec<f64> = canvas
        .iter()
        .zip(&field)
        .map(|(&v, &f)| v * (1.0 + gain_amplitude * f))
        .collect();

    let patches = if rng.random_bool(0.5) {
        rng.random_range(1..=3)
    } else {
        0
    };
    for _ in 0..patches {
        let cx = rng.random_range(0.0..side as f64);
        let cy = rng.random_range(0.0..side as f64);
        let r = rng.random_range(8.0..30.0);
        let snow = rng.random_bool(0.5);
        for (i, v) in out.iter_mut().enumerate() {
            let (x, y) = ((i % side) as f64, (i / side) as f64);
            if (x - cx).powi(2) + (y - cy).powi(2) <= r * r {
                *v = if snow { 0.6 + 0.3 * *v } else { 0.5 * *v };
            }
        }
    }
    (
        out,
        TemporalChange {
            gain_amplitude,
            patches,
        },
    )
}

struct Canvas {
    side: usize,
    values: Vec<f64>,
}

impl Canvas {
    fn grid(&self, values: Vec<f64>) -> ImageGrid {
        ImageGrid::new(self.side, self.side, values).expect("canvas values are finite")
    }
}

/// Produces one view: translate, crop the target window, block-average.
/// Returns the view and its cloud fraction per pixel.
fn render_view(
    canvas: &Canvas,
    values: Vec<f64>,
    clouds: &[f64],
    shift: Translation,
    hr_side: usize,
) -> Result<(ImageGrid, ImageGrid)> {
    let hr_shift = shift.scaled(SCALE as f64);
    let img = warp(&canvas.grid(values), hr_shift, Interpolation::Bicubic)?.image;
    let img = downsample_hr(&img.crop(MARGIN, MARGIN, hr_side, hr_side)?, SCALE)?;
    let lr = hr_side / SCALE;
    let cl = if clouds.iter().all(|&c| c == 0.0) {
        ImageGrid::filled(lr, lr, 0.0)
    } else {
        let cl = warp(&canvas.grid(clouds.to_vec()), hr_shift, Interpolation::Bilinear)?.image;
        downsample_hr(&cl.crop(MARGIN, MARGIN, hr_side, hr_side)?, SCALE)?
    };
    Ok((img, cl))
}

/// Generates the scene at `index` of the corpus described by `cfg`.
/// The result depends only on `cfg.seed`, `index` and the other fields of `cfg`.
pub fn generate_scene(cfg: &SyntheticConfig, index: usize) -> Result<(Scene, SceneTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    generate_scene_with_rng(cfg, SyntheticConfig::scene_id(index), &mut rng)
}

pub fn generate_scene_with_rng(
    cfg: &SyntheticConfig,
    scene_id: String,
    rng: &mut ChaCha8Rng,
) -> Result<(Scene, SceneTruth)> {
    cfg.validate()?;
    let lr = cfg.lr_size;
    let hr_side = lr * SCALE;
    let side = hr_side + 2 * MARGIN;
    let canvas = Canvas {
        side,
        values: base_canvas(rng, side),
    };
    let true_ref = rng.random_range(0..cfg.n_views);

    // target image and its clouds
    let crop = |v: &[f64]| canvas.grid(v.to_vec()).crop(MARGIN, MARGIN, hr_side, hr_side);
    let mut hr_clouds;
    let mut attempts = 0;
    let hr_mask = loop {
        let cov = draw_coverage(
            rng,
            cfg.clear_probability,
            cfg.cloud_coverage_max.min(HR_COVERAGE_MAX),
        );
        hr_clouds = cloud_layer(rng, side, cov);
        let mask = StatusMap::from_threshold(&crop(&hr_clouds)?.map(|c| 1.0 - c), 0.5);
        if clearance_fraction(&mask) >= MIN_HR_CLEARANCE {
            break mask;
        }
        attempts += 1;
        if attempts >= MAX_CLOUD_ATTEMPTS {
            return Err(Error::InvalidArgument(
                "could not draw a target cloud layer meeting the clearance floor".into(),
            ));
        }
    };
    let hr_image = crop(&apply_clouds(&canvas.values, &hr_clouds))?.map(quantize16);

    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut views = Vec::with_capacity(cfg.n_views);
    let mut shifts = Vec::with_capacity(cfg.n_views);
    let mut biases = Vec::with_capacity(cfg.n_views);
    let mut temporal = Vec::with_capacity(cfg.n_views);
    for i in 0..cfg.n_views {
        let is_ref = i == true_ref;
        let shift_dist = Normal::new(0.0, cfg.shift_sigma.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut draw_shift = || {
            if cfg.shift_sigma == 0.0 {
                0.0
            } else {
                shift_dist.sample(rng).clamp(-MAX_SHIFT, MAX_SHIFT)
            }
        };
        let shift = Translation::new(draw_shift(), draw_shift())?;

        let (values, change) = if is_ref {
            (canvas.values.clone(), TemporalChange::default())
        } else {
            temporal_change(rng, &canvas.values, side, cfg.temporal_amplitude)
        };
        let bias = if is_ref || cfg.bias_range == 0.0 {
            0.0
        } else {
            rng.random_range(-cfg.bias_range..=cfg.bias_range)
        };

        let mut attempts = 0;
        let (image, cloud_fraction) = loop {
            let clouds = if is_ref {
                hr_clouds.clone()
            } else {
                let cov = draw_coverage(rng, cfg.clear_probability, cfg.cloud_coverage_max);
                cloud_layer(rng, side, cov)
            };
            let rendered = render_view(
                &canvas,
                apply_clouds(&values, &clouds),
                &clouds,
                shift,
                hr_side,
            )?;
            let clear = rendered.1.values().iter().filter(|&&c| c < 0.5).count();
            if clear as f64 >= MIN_LR_CLEARANCE * (lr * lr) as f64 {
                break rendered;
            }
            attempts += 1;
            if attempts >= MAX_CLOUD_ATTEMPTS {
                return Err(Error::InvalidArgument(
                    "could not draw a view cloud layer meeting the clearance floor".into(),
                ));
            }
        };
        let mask = StatusMap::from_threshold(&cloud_fraction.map(|c| 1.0 - c), 0.5);
        let values: Vec<f64> = image
            .values()
            .iter()
            .map(|&v| {
                let n = if cfg.noise_sigma > 0.0 {
                    noise.sample(rng)
                } else {
                    0.0
                };
                quantize16(v + bias + n)
            })
            .collect();
        views.push(Frame::new(ImageGrid::new(lr, lr, values)?, mask)?);
        shifts.push(shift);
        biases.push(bias);
        temporal.push(change);
    }

    let scene = Scene {
        id: scene_id.clone(),
        band: cfg.band,
        views,
        hr: Some(Frame::new(hr_image, hr_mask)?),
        true_ref: Some(true_ref),
    };
    let truth = SceneTruth {
        scene_id,
        true_ref_index: true_ref,
        shifts,
        biases,
        temporal,
    };
    Ok((scene, truth))
}

/// Outcome of [`generate_corpus`].
#[derive(Debug, Default)]
pub struct CorpusReport {
    /// Scene id → planted reference, for every scene written.
    pub truth: BTreeMap<String, usize>,
    /// Scenes that could not be generated or written.
    pub failures: Vec<(String, Error)>,
}

/// Generates `cfg.n_scenes` scenes in parallel, saves them under `root`
/// and writes `root/truth.csv` listing the scenes that were written.
pub fn generate_corpus(cfg: &SyntheticConfig, root: &Path, force: bool) -> Result<CorpusReport> {
    cfg.validate()?;
    let results: Vec<(String, Result<usize>)> = (0..cfg.n_scenes)
        .into_par_iter()
        .map(|i| {
            let id = SyntheticConfig::scene_id(i);
            let res = generate_scene(cfg, i).and_then(|(scene, truth)| {
                dataset_io::save_scene(root, &scene, force)?;
                Ok(truth.true_ref_index)
            });
            (id, res)
        })
        .collect();
    let mut report = CorpusReport::default();
    for (id, res) in results {
        match res {
            Ok(idx) => {
                report.truth.insert(id, idx);
            }
            Err(e) => report.failures.push((id, e)),
        }
    }
    dataset_io::write_truth_csv(&root.join(dataset_io::TRUTH_FILE), &report.truth)?;
    Ok(report)
}
