//! Reference-anchored classical super-resolution.
//!
//! [`shift_and_add`] registers every view to an anchor (a view or the
//! median composite), corrects each view's global brightness offset against
//! the anchor, and scatters every clear sample onto the 3× grid at its
//! registered position. What is accumulated is the sample's residual with
//! respect to the bicubic magnification of the anchor, weighted by a
//! truncated Gaussian of the distance and by a robustness term that
//! discounts samples disagreeing with the anchor. The normalized residual
//! is added back to the magnified anchor; cells no sample reaches keep the
//! magnified anchor value.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{
    sample_bicubic, upsample_bicubic, warp, warp_mask, ImageGrid, Interpolation, Translation,
};
use crate::reference::{
    clearance_reference, find_true_reference, heuristic_reference, median_in_place,
    median_reference, Frame, HeuristicOptions, ReferenceMethod, Scene, SimilarityConfig,
};
use crate::registration::{estimate_translation, RegistrationConfig};

/// Which image anchors the reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefChoice {
    Method(ReferenceMethod),
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fill {
    #[default]
    BicubicRef,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrConfig {
    pub upscale: usize,
    pub ref_method: RefChoice,
    pub fill: Fill,
    /// Gaussian accumulation kernel, high-resolution pixels.
    pub kernel_sigma: f64,
    pub accumulator_radius: f64,
    /// Views whose registration residual exceeds this multiple of the
    /// median residual are dropped.
    pub outlier_factor: f64,
    /// Scale of the disagreement-with-anchor weight; `None` disables it.
    pub robust_sigma: Option<f64>,
    /// Half-width, in low-resolution pixels, of the window whose mean
    /// residual is removed before scattering; `None` keeps raw residuals.
    pub detrend_radius: Option<usize>,
    pub registration: RegistrationConfig,
}

impl Default for SrConfig {
    fn default() -> Self {
        SrConfig {
            upscale: 3,
            ref_method: RefChoice::Method(ReferenceMethod::Clearance),
            fill: Fill::BicubicRef,
            kernel_sigma: 0.5,
            accumulator_radius: 1.5,
            outlier_factor: 3.0,
            robust_sigma: Some(0.03),
            detrend_radius: Some(3),
            registration: RegistrationConfig::default(),
        }
    }
}

impl SrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.upscale < 2 {
            return Err(Error::InvalidArgument(format!(
                "upscale must be at least 2, got {}",
                self.upscale
            )));
        }
        if !(self.kernel_sigma > 0.0) || !(self.accumulator_radius > 0.0) {
            return Err(Error::InvalidArgument(
                "kernel sigma and radius must be positive".into(),
            ));
        }
        if !(self.outlier_factor > 0.0) {
            return Err(Error::InvalidArgument("outlier factor must be positive".into()));
        }
        if let Some(s) = self.robust_sigma {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument("robust sigma must be positive".into()));
            }
        }
        self.registration.validate()
    }
}

/// Single-image control arm: bicubic magnification.
pub fn bicubic_sisr(view: &ImageGrid, upscale: usize) -> Result<ImageGrid> {
    if upscale < 2 {
        return Err(Error::InvalidArgument(format!(
            "upscale must be at least 2, got {upscale}"
        )));
    }
    upsample_bicubic(view, upscale)
}

fn nearest_upsample(img: &ImageGrid, s: usize) -> ImageGrid {
    ImageGrid::from_fn(img.width() * s, img.height() * s, |x, y| img.get(x / s, y / s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub frame: Frame,
    /// Index of the anchoring view; `None` for a composite.
    pub view_index: Option<usize>,
}

/// Options needed to turn a [`RefChoice`] into an [`Anchor`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnchorOptions {
    pub similarity: SimilarityConfig,
    pub heuristic: HeuristicOptions,
}

pub fn resolve_anchor(scene: &Scene, choice: RefChoice, opts: &AnchorOptions) -> Result<Anchor> {
    let view = |i: usize| -> Result<Anchor> {
        let frame = scene.views.get(i).cloned().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "scene {} has {} views, index {i} requested",
                scene.id,
                scene.views.len()
            ))
        })?;
        Ok(Anchor {
            frame,
            view_index: Some(i),
        })
    };
    match choice {
        RefChoice::Fixed(i) => view(i),
        RefChoice::Method(ReferenceMethod::Similarity) => {
            view(find_true_reference(scene, &opts.similarity)?.chosen)
        }
        RefChoice::Method(ReferenceMethod::Heuristic) => {
            view(heuristic_reference(scene, &opts.heuristic)?.chosen)
        }
        RefChoice::Method(ReferenceMethod::Clearance) => view(clearance_reference(scene)?.chosen),
        RefChoice::Method(ReferenceMethod::Median) => {
            let d = median_reference(scene)?;
            Ok(Anchor {
                frame: d.composite.expect("median method yields a composite"),
                view_index: None,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrOutput {
    pub image: ImageGrid,
    pub anchor_index: Option<usize>,
    /// Views that contributed samples, in scene order.
    pub used_views: Vec<usize>,
    /// Set when no view could be registered and the output is the plain
    /// magnified anchor.
    pub fell_back: bool,
}

/// A registered view ready for scattering.
struct Registered<'a> {
    index: usize,
    frame: &'a Frame,
    t: Translation,
    offset: f64,
}

/// Mean of `anchor - view` after aligning the view, over pixels clear in both.
fn brightness_offset(frame: &Frame, t: Translation, anchor: &Frame) -> Result<f64> {
    let aligned = warp(&frame.image, -t, Interpolation::Bicubic)?;
    let mask = warp_mask(&frame.mask, -t)?
        .and(&aligned.valid)
        .and(&anchor.mask);
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&a, &v), &c) in anchor
        .image
        .values()
        .iter()
        .zip(aligned.image.values())
        .zip(mask.flags())
    {
        if c {
            sum += a - v;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Shift-and-add anchored on `cfg.ref_method`.
pub fn shift_and_add(scene: &Scene, cfg: &SrConfig, opts: &AnchorOptions) -> Result<SrOutput> {
    cfg.validate()?;
    scene.check_structure()?;
    let anchor = resolve_anchor(scene, cfg.ref_method, opts)?;
    shift_and_add_with_anchor(scene, &anchor, cfg)
}

pub fn shift_and_add_with_anchor(scene: &Scene, anchor: &Anchor, cfg: &SrConfig) -> Result<SrOutput> {
    cfg.validate()?;
    let s = cfg.upscale;
    let base = match cfg.fill {
        Fill::BicubicRef => bicubic_sisr(&anchor.frame.image, s)?,
        Fill::Nearest => nearest_upsample(&anchor.frame.image, s),
    };

    let mut registered = Vec::new();
    let mut residuals = Vec::new();
    for (i, frame) in scene.views.iter().enumerate() {
        if frame.image.dims() != anchor.frame.image.dims() {
            return Err(Error::DimensionMismatch(format!(
                "view {i} is {:?}, anchor is {:?}",
                frame.image.dims(),
                anchor.frame.image.dims()
            )));
        }
        if anchor.view_index == Some(i) {
            registered.push((
                Registered {
                    index: i,
                    frame,
                    t: Translation::ZERO,
                    offset: 0.0,
                },
                0.0,
            ));
            continue;
        }
        match estimate_translation(
            &frame.image,
            &anchor.frame.image,
            Some(&frame.mask),
            Some(&anchor.frame.mask),
            &cfg.registration,
        ) {
            Ok(r) => {
                let offset = brightness_offset(frame, r.t, &anchor.frame)?;
                residuals.push(r.residual_rmse);
                registered.push((
                    Registered {
                        index: i,
                        frame,
                        t: r.t,
                        offset,
                    },
                    r.residual_rmse,
                ));
            }
            Err(e) => warn!("scene {} view {i} not registered: {e}", scene.id),
        }
    }

    if registered.iter().all(|(r, _)| anchor.view_index == Some(r.index)) {
        warn!(
            "scene {}: no view registered, falling back to the magnified anchor",
            scene.id
        );
        return Ok(SrOutput {
            image: base,
            anchor_index: anchor.view_index,
            used_views: Vec::new(),
            fell_back: true,
        });
    }

    let cutoff = if residuals.is_empty() {
        f64::INFINITY
    } else {
        cfg.outlier_factor * median_in_place(&mut residuals)
    };
    let used: Vec<Registered> = registered
        .into_iter()
        .filter(|(r, res)| anchor.view_index == Some(r.index) || *res <= cutoff)
        .map(|(r, _)| r)
        .collect();

    let image = accumulate(&used, anchor, &base, cfg)?;
    Ok(SrOutput {
        image,
        anchor_index: anchor.view_index,
        used_views: used.iter().map(|r| r.index).collect(),
        fell_back: false,
    })
}

/// Residual of every sample of one view against the magnified anchor, in
/// view pixel order; `None` for obscured or out-of-frame samples.
struct ViewResiduals {
    position: Vec<(f64, f64)>,
    residual: Vec<Option<f64>>,
    anchor_clear: Vec<bool>,
}

fn view_residuals(view: &Registered, anchor: &Anchor) -> ViewResiduals {
    let anchor_img = &anchor.frame.image;
    let (aw, ah) = anchor_img.dims();
    let (w, h) = view.frame.image.dims();
    let is_anchor = anchor.view_index == Some(view.index);
    let mut out = ViewResiduals {
        position: Vec::with_capacity(w * h),
        residual: Vec::with_capacity(w * h),
        anchor_clear: Vec::with_capacity(w * h),
    };
    for y in 0..h {
        for x in 0..w {
            // position of this sample in anchor coordinates
            let ax = x as f64 + view.t.dx;
            let ay = y as f64 + view.t.dy;
            out.position.push((ax, ay));
            let inside = ax >= -0.5 && ay >= -0.5 && ax <= aw as f64 - 0.5 && ay <= ah as f64 - 0.5;
            if !inside || !view.frame.mask.is_clear(x, y) {
                out.residual.push(None);
                out.anchor_clear.push(false);
                continue;
            }
            let nx = ax.round().clamp(0.0, (aw - 1) as f64) as usize;
            let ny = ay.round().clamp(0.0, (ah - 1) as f64) as usize;
            out.anchor_clear.push(anchor.frame.mask.is_clear(nx, ny));
            let r = if is_anchor {
                0.0
            } else {
                view.frame.image.get(x, y) + view.offset - sample_bicubic(anchor_img, ax, ay)
            };
            out.residual.push(Some(r));
        }
    }
    out
}

/// Subtracts the local mean residual (box of half-width `radius`, over
/// samples where the anchor is clear) so that only detail the anchor lacks
/// is transferred. Slowly varying radiometric change is left to the anchor.
fn detrend(res: &mut ViewResiduals, w: usize, h: usize, radius: usize) {
    let usable = |i: usize| res.anchor_clear[i] && res.residual[i].is_some();
    // summed-area tables of residuals and counts
    let stride = w + 1;
    let mut sum = vec![0.0; stride * (h + 1)];
    let mut cnt = vec![0.0; stride * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (v, c) = if usable(i) {
                (res.residual[i].unwrap(), 1.0)
            } else {
                (0.0, 0.0)
            };
            let k = (y + 1) * stride + x + 1;
            sum[k] = v + sum[k - 1] + sum[k - stride] - sum[k - stride - 1];
            cnt[k] = c + cnt[k - 1] + cnt[k - stride] - cnt[k - stride - 1];
        }
    }
    let rect = |t: &[f64], x0: usize, y0: usize, x1: usize, y1: usize| {
        t[y1 * stride + x1] - t[y0 * stride + x1] - t[y1 * stride + x0] + t[y0 * stride + x0]
    };
    let mut means = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !usable(i) {
                continue;
            }
            let (x0, y0) = (x.saturating_sub(radius), y.saturating_sub(radius));
            let (x1, y1) = ((x + radius + 1).min(w), (y + radius + 1).min(h));
            means[i] = rect(&sum, x0, y0, x1, y1) / rect(&cnt, x0, y0, x1, y1);
        }
    }
    for (r, m) in res.residual.iter_mut().zip(means) {
        if let Some(r) = r.as_mut() {
            *r -= m;
        }
    }
}

fn accumulate(
    views: &[Registered],
    anchor: &Anchor,
    base: &ImageGrid,
    cfg: &SrConfig,
) -> Result<ImageGrid> {
    let s = cfg.upscale as f64;
    let center = (s - 1.0) / 2.0;
    let (ow, oh) = base.dims();
    let mut num = vec![0.0; ow * oh];
    let mut den = vec![0.0; ow * oh];
    let r = cfg.accumulator_radius;
    let inv_two_sigma2 = 1.0 / (2.0 * cfg.kernel_sigma * cfg.kernel_sigma);

    for view in views {
        let (w, h) = view.frame.image.dims();
        let mut res = view_residuals(view, anchor);
        if let Some(radius) = cfg.detrend_radius {
            if anchor.view_index != Some(view.index) {
                detrend(&mut res, w, h, radius);
            }
        }
        for i in 0..w * h {
            let Some(residual) = res.residual[i] else {
                continue;
            };
            let robust = match cfg.robust_sigma {
                Some(hs) if res.anchor_clear[i] => (-residual * residual / (2.0 * hs * hs)).exp(),
                _ => 1.0,
            };
            let (ax, ay) = res.position[i];
            let px = s * ax + center;
            let py = s * ay + center;
            let x0 = (px - r).ceil().max(0.0) as usize;
            let x1 = (px + r).floor().min((ow - 1) as f64);
            let y0 = (py - r).ceil().max(0.0) as usize;
            let y1 = (py + r).floor().min((oh - 1) as f64);
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            for cy in y0..=y1 as usize {
                for cx in x0..=x1 as usize {
                    let d2 = (cx as f64 - px).powi(2) + (cy as f64 - py).powi(2);
                    if d2 > r * r {
                        continue;
                    }
                    let wgt = robust * (-d2 * inv_two_sigma2).exp();
                    let k = cy * ow + cx;
                    num[k] += wgt * residual;
                    den[k] += wgt;
                }
            }
        }
    }

    let values = base
        .values()
        .iter()
        .zip(num.iter().zip(&den))
        .map(|(&b, (&n, &d))| {
            if d > 1e-12 {
                (b + n / d).clamp(0.0, 1.0)
            } else {
                b
            }
        })
        .collect();
    ImageGrid::new(ow, oh, values)
}
