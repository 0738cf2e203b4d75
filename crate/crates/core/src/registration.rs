//! Translation-only inverse compositional alignment.
//!
//! The template (`fixed`) supplies the gradients and the Gauss-Newton
//! Hessian; the moving image is resampled at the current estimate on every
//! iteration. A coarse-to-fine pyramid extends the capture range.
//!
//! Sign convention: the returned translation `t` satisfies
//! `moving(x) ≈ fixed(x + t)`, so `warp(fixed, t)` reproduces `moving` and
//! `warp(moving, -t)` lands `moving` on the `fixed` grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{warp, warp_mask, ImageGrid, Interpolation, StatusMap, Translation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub max_iters: usize,
    /// Stop once the update norm (finest-level pixels) drops below this.
    pub tol: f64,
    pub pyramid_levels: usize,
    /// Largest admissible |dx| or |dy|, in pixels.
    pub search_bound: f64,
    /// Minimum fraction of pixels that must be usable at the finest level.
    pub min_usable_fraction: f64,
    /// Solve for an additive brightness offset alongside the translation, so
    /// that `moving + c` registers exactly like `moving`.
    #[serde(default)]
    pub estimate_offset: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            max_iters: 50,
            tol: 1e-3,
            pyramid_levels: 3,
            search_bound: 10.0,
            min_usable_fraction: 0.25,
            estimate_offset: false,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad tolerance {}", self.tol)));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::InvalidArgument(
                "at least one pyramid level is required".into(),
            ));
        }
        if !(self.search_bound > 0.0 && self.search_bound.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bad search bound {}",
                self.search_bound
            )));
        }
        if !(0.0..=1.0).contains(&self.min_usable_fraction) {
            return Err(Error::InvalidArgument(format!(
                "bad usable fraction {}",
                self.min_usable_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub t: Translation,
    /// Gauss-Newton iterations summed over all pyramid levels.
    pub iterations: usize,
    pub final_update_norm: f64,
    pub converged: bool,
    /// RMSE at `t` over the usable pixels, after removing the offset when
    /// one is estimated.
    pub residual_rmse: f64,
}

/// One pyramid level of an image and its mask.
struct Level {
    image: ImageGrid,
    mask: StatusMap,
}

fn halve(level: &Level) -> Level {
    let (w, h) = level.image.dims();
    let (ow, oh) = (w / 2, h / 2);
    let image = ImageGrid::from_fn(ow, oh, |x, y| {
        let (sx, sy) = (2 * x, 2 * y);
        0.25 * (level.image.get(sx, sy)
            + level.image.get(sx + 1, sy)
            + level.image.get(sx, sy + 1)
            + level.image.get(sx + 1, sy + 1))
    });
    // a coarse cell is usable only if all four children are
    let mask = StatusMap::from_fn(ow, oh, |x, y| {
        let (sx, sy) = (2 * x, 2 * y);
        level.mask.is_clear(sx, sy)
            && level.mask.is_clear(sx + 1, sy)
            && level.mask.is_clear(sx, sy + 1)
            && level.mask.is_clear(sx + 1, sy + 1)
    });
    Level { image, mask }
}

const MIN_LEVEL_SIDE: usize = 16;

fn build_pyramid(image: &ImageGrid, mask: StatusMap, levels: usize) -> Vec<Level> {
    let mut pyramid = vec![Level {
        image: image.clone(),
        mask,
    }];
    while pyramid.len() < levels {
        let last = pyramid.last().unwrap();
        let (w, h) = last.image.dims();
        if w / 2 < MIN_LEVEL_SIDE || h / 2 < MIN_LEVEL_SIDE {
            break;
        }
        let next = halve(last);
        pyramid.push(next);
    }
    pyramid
}

/// Template-side precomputation: central-difference gradients and their
/// products. Pixels on the frame border or next to an obscured pixel carry
/// no gradient.
struct Template<'a> {
    level: &'a Level,
    gx: Vec<f64>,
    gy: Vec<f64>,
    has_grad: Vec<bool>,
}

impl<'a> Template<'a> {
    fn new(level: &'a Level) -> Self {
        let (w, h) = level.image.dims();
        let n = w * h;
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        let mut has_grad = vec![false; n];
        let img = &level.image;
        let m = &level.mask;
        for y in 1..h.saturating_sub(1) {
            for x in 1..w - 1 {
                if !(m.is_clear(x, y)
                    && m.is_clear(x - 1, y)
                    && m.is_clear(x + 1, y)
                    && m.is_clear(x, y - 1)
                    && m.is_clear(x, y + 1))
                {
                    continue;
                }
                let i = y * w + x;
                gx[i] = 0.5 * (img.get(x + 1, y) - img.get(x - 1, y));
                gy[i] = 0.5 * (img.get(x, y + 1) - img.get(x, y - 1));
                has_grad[i] = true;
            }
        }
        Template {
            level,
            gx,
            gy,
            has_grad,
        }
    }
}

/// Error statistics and Gauss-Newton terms at one warp estimate.
struct Evaluation {
    mse: f64,
    usable: usize,
    hessian: [f64; 3],
    steepest: [f64; 2],
}

fn evaluate(tpl: &Template, moving: &Level, p: Translation, offset: bool) -> Result<Evaluation> {
    let warped = warp(&moving.image, p, Interpolation::Bicubic)?;
    let warped_mask = warp_mask(&moving.mask, p)?;
    let t_img = tpl.level.image.values();
    let w_img = warped.image.values();
    let valid = warped.valid.flags();
    let wmask = warped_mask.flags();

    let mut sse = 0.0;
    let mut usable = 0usize;
    let mut hxx = 0.0;
    let mut hxy = 0.0;
    let mut hyy = 0.0;
    let mut bx = 0.0;
    let mut by = 0.0;
    let (mut sgx, mut sgy, mut se) = (0.0, 0.0, 0.0);
    for i in 0..t_img.len() {
        if !(tpl.has_grad[i] && valid[i] && wmask[i]) {
            continue;
        }
        let e = w_img[i] - t_img[i];
        let (gx, gy) = (tpl.gx[i], tpl.gy[i]);
        sse += e * e;
        usable += 1;
        hxx += gx * gx;
        hxy += gx * gy;
        hyy += gy * gy;
        bx += gx * e;
        by += gy * e;
        sgx += gx;
        sgy += gy;
        se += e;
    }
    if usable == 0 {
        return Ok(Evaluation {
            mse: f64::INFINITY,
            usable,
            hessian: [0.0; 3],
            steepest: [0.0; 2],
        });
    }
    let n = usable as f64;
    if offset {
        // eliminate the offset: center gradients and residuals over the usable set
        let (mgx, mgy, me) = (sgx / n, sgy / n, se / n);
        hxx -= n * mgx * mgx;
        hxy -= n * mgx * mgy;
        hyy -= n * mgy * mgy;
        bx -= n * mgx * me;
        by -= n * mgy * me;
        sse -= n * me * me;
    }
    let mse = (sse / n).max(0.0);
    Ok(Evaluation {
        mse,
        usable,
        hessian: [hxx, hxy, hyy],
        steepest: [bx, by],
    })
}

fn solve_2x2(h: [f64; 3], b: [f64; 2]) -> Option<Translation> {
    let [hxx, hxy, hyy] = h;
    let trace = hxx + hyy;
    let det = hxx * hyy - hxy * hxy;
    if !(trace > 1e-18) || !(det > 1e-10 * trace * trace) {
        return None;
    }
    Some(Translation {
        dx: (hyy * b[0] - hxy * b[1]) / det,
        dy: (hxx * b[1] - hxy * b[0]) / det,
    })
}

/// Estimates the translation `t` with `moving(x) ≈ fixed(x + t)`.
///
/// Pixels obscured in either mask are excluded from both the residual and
/// the Hessian; the moving mask follows the estimate with nearest-neighbor
/// resampling. A run that exhausts `max_iters` still returns its best
/// estimate, flagged `converged = false`.
pub fn estimate_translation(
    moving: &ImageGrid,
    fixed: &ImageGrid,
    moving_mask: Option<&StatusMap>,
    fixed_mask: Option<&StatusMap>,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let dims = fixed.dims();
    if moving.dims() != dims {
        return Err(Error::DimensionMismatch(format!(
            "moving {:?} vs fixed {:?}",
            moving.dims(),
            dims
        )));
    }
    for m in [moving_mask, fixed_mask].into_iter().flatten() {
        if m.dims() != dims {
            return Err(Error::DimensionMismatch(format!(
                "mask {:?} vs image {:?}",
                m.dims(),
                dims
            )));
        }
    }
    let all = || StatusMap::all_clear(dims.0, dims.1);
    let moving_mask = moving_mask.cloned().unwrap_or_else(all);
    let fixed_mask = fixed_mask.cloned().unwrap_or_else(all);

    let usable = moving_mask.and(&fixed_mask).count_clear();
    let total = dims.0 * dims.1;
    if (usable as f64) < cfg.min_usable_fraction * total as f64 {
        return Err(Error::NoValidPixels(format!(
            "{usable} of {total} pixels usable for registration"
        )));
    }

    let fixed_pyr = build_pyramid(fixed, fixed_mask, cfg.pyramid_levels);
    let moving_pyr = build_pyramid(moving, moving_mask, fixed_pyr.len());

    // p is the inverse-compositional parameter: moving(x + p) ≈ fixed(x)
    let mut p = Translation::ZERO;
    let mut iterations = 0;
    let mut last_update = f64::INFINITY;
    let mut converged = false;
    let mut best = (f64::INFINITY, Translation::ZERO);

    for (level_idx, (tpl_level, mov_level)) in
        fixed_pyr.iter().zip(&moving_pyr).enumerate().rev()
    {
        let scale = (1usize << level_idx) as f64;
        let finest = level_idx == 0;
        let tpl = Template::new(tpl_level);
        let bound = cfg.search_bound / scale;
        converged = false;
        best = (f64::INFINITY, p);

        for _ in 0..cfg.max_iters {
            let eval = evaluate(&tpl, mov_level, p, cfg.estimate_offset)?;
            if eval.mse < best.0 {
                best = (eval.mse, p);
            }
            if eval.usable < 3 {
                break;
            }
            let delta = match solve_2x2(eval.hessian, eval.steepest) {
                Some(d) => d,
                None if finest || eval.hessian[0] + eval.hessian[2] <= 0.0 => {
                    return Err(Error::Degenerate(
                        "template has no usable gradient structure".into(),
                    ))
                }
                None => break,
            };
            iterations += 1;
            p = p - delta;
            last_update = delta.norm() * scale;
            if p.dx.abs() > bound || p.dy.abs() > bound {
                p = Translation {
                    dx: p.dx.clamp(-bound, bound),
                    dy: p.dy.clamp(-bound, bound),
                };
                break;
            }
            if last_update < cfg.tol {
                converged = true;
                break;
            }
        }
        let eval = evaluate(&tpl, mov_level, p, cfg.estimate_offset)?;
        if eval.mse < best.0 {
            best = (eval.mse, p);
        }
        if finest {
            let at_zero = evaluate(&tpl, mov_level, Translation::ZERO, cfg.estimate_offset)?;
            if at_zero.mse < best.0 {
                best = (at_zero.mse, Translation::ZERO);
            }
        } else {
            p = best.1.scaled(2.0);
        }
    }

    if !best.0.is_finite() {
        return Err(Error::NoValidPixels(
            "no overlap left at the final estimate".into(),
        ));
    }
    Ok(RegistrationResult {
        t: -best.1,
        iterations,
        final_update_norm: last_update,
        converged,
        residual_rmse: best.0.sqrt(),
    })
}

/// Registers each view against `target`; a failing view yields an `Err`
/// entry in place without affecting the others.
pub fn align_views(
    views: &[(ImageGrid, StatusMap)],
    target: &ImageGrid,
    target_mask: Option<&StatusMap>,
    cfg: &RegistrationConfig,
) -> Vec<Result<RegistrationResult>> {
    views
        .iter()
        .map(|(img, mask)| estimate_translation(img, target, Some(mask), target_mask, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize) -> ImageGrid {
        ImageGrid::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            0.45 + 0.15 * (0.21 * x + 0.05 * y).sin() * (0.13 * y).cos()
                + 0.08 * (0.07 * x - 0.19 * y).sin()
                + 0.05 * (0.33 * x).cos() * (0.29 * y + 1.0).sin()
        })
    }

    #[test]
    fn identity_is_recovered_exactly() {
        let img = texture(64, 64);
        let r = estimate_translation(&img, &img, None, None, &RegistrationConfig::default())
            .unwrap();
        assert_eq!(r.t, Translation::ZERO);
        assert_eq!(r.residual_rmse, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn constant_template_is_degenerate() {
        let fixed = ImageGrid::filled(64, 64, 0.5);
        let moving = texture(64, 64);
        let err = estimate_translation(&moving, &fixed, None, None, &RegistrationConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn planted_shift_is_recovered() {
        let fixed = texture(96, 96);
        let s = Translation::new(1.5, -0.75).unwrap();
        let moving = warp(&fixed, s, Interpolation::Bicubic).unwrap().image;
        let r = estimate_translation(&moving, &fixed, None, None, &RegistrationConfig::default())
            .unwrap();
        assert!((r.t.dx - 1.5).abs() < 0.05, "{:?}", r.t);
        assert!((r.t.dy + 0.75).abs() < 0.05, "{:?}", r.t);
        assert!(r.converged);
        assert!(r.iterations <= 3 * 50);
    }

    #[test]
    fn offset_mode_ignores_brightness_shifts() {
        let fixed = texture(96, 96);
        let s = Translation::new(-0.6, 1.2).unwrap();
        let moving = warp(&fixed, s, Interpolation::Bicubic).unwrap().image;
        let cfg = RegistrationConfig {
            estimate_offset: true,
            ..RegistrationConfig::default()
        };
        let plain = estimate_translation(&moving, &fixed, None, None, &cfg).unwrap();
        let brighter = moving.map(|v| v + 0.08);
        let r = estimate_translation(&brighter, &fixed, None, None, &cfg).unwrap();
        assert!((r.t - plain.t).norm() < 1e-9, "{:?} vs {:?}", r.t, plain.t);
        assert!((r.t - s).norm() < 0.05);
        assert!(r.residual_rmse < 1e-3);
    }

    #[test]
    fn rejects_mismatched_and_unusable_inputs() {
        let a = texture(32, 32);
        let b = texture(32, 30);
        let cfg = RegistrationConfig::default();
        assert!(matches!(
            estimate_translation(&a, &b, None, None, &cfg),
            Err(Error::DimensionMismatch(_))
        ));
        let mostly_cloudy = StatusMap::from_fn(32, 32, |x, _| x < 6);
        assert!(matches!(
            estimate_translation(&a, &a, Some(&mostly_cloudy), None, &cfg),
            Err(Error::NoValidPixels(_))
        ));
    }

    #[test]
    fn align_views_keeps_order_and_isolates_failures() {
        let target = texture(48, 48);
        let views = vec![
            (target.clone(), StatusMap::all_clear(48, 48)),
            (target.clone(), StatusMap::from_fn(48, 48, |_, y| y < 3)),
            (target.clone(), StatusMap::all_clear(48, 48)),
        ];
        let out = align_views(&views, &target, None, &RegistrationConfig::default());
        assert_eq!(out.len(), 3);
        assert!(out[0].as_ref().unwrap().t == Translation::ZERO);
        assert!(out[1].is_err());
        assert!(out[2].as_ref().unwrap().t == Translation::ZERO);
        assert!(align_views(&[], &target, None, &RegistrationConfig::default()).is_empty());
    }
}
