//! Reference-view selection.
//!
//! Four selectors share one [`ReferenceDecision`] shape:
//!
//! * similarity: register every view to the block-averaged target and keep
//!   the one with the lowest masked RMSE (needs the high-resolution image),
//! * heuristic: mask agreement with the downscaled target mask, a median
//!   brightness term and a clearance term (needs only the target mask),
//! * clearance: the view with the most clear pixels,
//! * median: the per-pixel median of the nine clearest views.
//!
//! Every selector stores per-view scores where lower is better and picks the
//! lowest index among equal scores.

use std::fmt;
use std::str::FromStr;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{
    downsample_hr, downscale_mask, warp, warp_mask, ImageGrid, Interpolation, StatusMap,
};
use crate::registration::{estimate_translation, RegistrationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    #[serde(rename = "NIR")]
    Nir,
    #[serde(rename = "RED")]
    Red,
}

impl Band {
    pub const ALL: [Band; 2] = [Band::Nir, Band::Red];

    pub fn as_str(&self) -> &'static str {
        match self {
            Band::Nir => "NIR",
            Band::Red => "RED",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NIR" => Ok(Band::Nir),
            "RED" => Ok(Band::Red),
            other => Err(Error::InvalidArgument(format!("unknown band {other:?}"))),
        }
    }
}

/// An image with its status map.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: ImageGrid,
    pub mask: StatusMap,
}

impl Frame {
    pub fn new(image: ImageGrid, mask: StatusMap) -> Result<Self> {
        if image.dims() != mask.dims() {
            return Err(Error::DimensionMismatch(format!(
                "image {:?} vs status map {:?}",
                image.dims(),
                mask.dims()
            )));
        }
        Ok(Frame { image, mask })
    }
}

/// One site: its low-resolution series and, for training-like splits, the
/// high-resolution target.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub band: Band,
    pub views: Vec<Frame>,
    pub hr: Option<Frame>,
    pub true_ref: Option<usize>,
}

pub const MIN_LR_CLEARANCE: f64 = 0.60;
pub const MIN_HR_CLEARANCE: f64 = 0.75;
pub const MIN_VIEWS: usize = 9;
pub const MAX_VIEWS: usize = 35;

/// Resolution ratio between target and views.
pub const SCALE: usize = 3;

impl Scene {
    pub fn lr_dims(&self) -> Option<(usize, usize)> {
        self.views.first().map(|v| v.image.dims())
    }

    /// Structural checks that every scene must pass.
    pub fn check_structure(&self) -> Result<()> {
        let Some(dims) = self.lr_dims() else {
            return Err(Error::InvalidArgument(format!(
                "scene {} has no views",
                self.id
            )));
        };
        for (i, v) in self.views.iter().enumerate() {
            if v.image.dims() != dims || v.mask.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "scene {} view {i} is {:?}, expected {dims:?}",
                    self.id,
                    v.image.dims()
                )));
            }
        }
        if let Some(hr) = &self.hr {
            let expected = (dims.0 * SCALE, dims.1 * SCALE);
            if hr.image.dims() != expected || hr.mask.dims() != expected {
                return Err(Error::DimensionMismatch(format!(
                    "scene {} target is {:?}, expected {expected:?}",
                    self.id,
                    hr.image.dims()
                )));
            }
        }
        if let Some(r) = self.true_ref {
            if r >= self.views.len() {
                return Err(Error::InvalidArgument(format!(
                    "scene {} true reference {r} out of range",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Curation rules of the real dataset: view count and clearance floors.
    /// Returns the index of the offending view (`None` for the target) with
    /// a reason.
    pub fn check_curation(&self) -> std::result::Result<(), (Option<usize>, String)> {
        let n = self.views.len();
        if !(MIN_VIEWS..=MAX_VIEWS).contains(&n) {
            return Err((
                None,
                format!("{n} views, expected {MIN_VIEWS} to {MAX_VIEWS}"),
            ));
        }
        for (i, v) in self.views.iter().enumerate() {
            let c = clearance_fraction(&v.mask);
            if c < MIN_LR_CLEARANCE {
                return Err((
                    Some(i),
                    format!("clearance {c:.4} below {MIN_LR_CLEARANCE}"),
                ));
            }
        }
        if let Some(hr) = &self.hr {
            let c = clearance_fraction(&hr.mask);
            if c < MIN_HR_CLEARANCE {
                return Err((
                    None,
                    format!("target clearance {c:.4} below {MIN_HR_CLEARANCE}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceMethod {
    Similarity,
    Clearance,
    Median,
    Heuristic,
}

impl ReferenceMethod {
    pub const ALL: [ReferenceMethod; 4] = [
        ReferenceMethod::Similarity,
        ReferenceMethod::Clearance,
        ReferenceMethod::Median,
        ReferenceMethod::Heuristic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ReferenceMethod::Similarity => "similarity",
            ReferenceMethod::Clearance => "clearance",
            ReferenceMethod::Median => "median",
            ReferenceMethod::Heuristic => "heuristic",
        }
    }
}

impl fmt::Display for ReferenceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReferenceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReferenceMethod::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown reference method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDecision {
    pub scene_id: String,
    pub method: ReferenceMethod,
    pub chosen: usize,
    /// One score per view, lower is better.
    pub scores: Vec<f64>,
    /// Median method only.
    pub composite: Option<Frame>,
}

/// Fraction of clear pixels.
pub fn clearance_fraction(m: &StatusMap) -> f64 {
    m.count_clear() as f64 / m.len() as f64
}

/// Number of clear pixels.
pub fn clearance_sum(m: &StatusMap) -> usize {
    m.count_clear()
}

/// Index of the smallest finite score; ties go to the lowest index.
pub fn argmin(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Median of a non-empty slice (mean of the two middle values for even
/// lengths). Reorders the slice.
pub fn median_in_place(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    let n = values.len();
    let mid = n / 2;
    let (lower, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + upper)
    }
}

fn require_hr<'a>(scene: &'a Scene) -> Result<&'a Frame> {
    scene.hr.as_ref().ok_or_else(|| {
        Error::Precondition(format!("scene {} has no high-resolution target", scene.id))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub registration: RegistrationConfig,
    /// A downscaled target cell counts as clear at or above this fraction.
    pub mask_threshold: f64,
    /// Remove the mean difference before taking the RMSE.
    pub bias_corrected: bool,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            registration: RegistrationConfig::default(),
            mask_threshold: 0.5,
            bias_corrected: false,
        }
    }
}

fn aligned_rmse(
    view: &Frame,
    target: &ImageGrid,
    target_mask: &StatusMap,
    cfg: &SimilarityConfig,
) -> Result<f64> {
    let reg_cfg = RegistrationConfig {
        estimate_offset: cfg.registration.estimate_offset || cfg.bias_corrected,
        ..cfg.registration
    };
    let reg = estimate_translation(
        &view.image,
        target,
        Some(&view.mask),
        Some(target_mask),
        &reg_cfg,
    )?;
    let aligned = warp(&view.image, -reg.t, Interpolation::Bicubic)?;
    let mask = warp_mask(&view.mask, -reg.t)?
        .and(&aligned.valid)
        .and(target_mask);

    let pairs = || {
        aligned
            .image
            .values()
            .iter()
            .zip(target.values())
            .zip(mask.flags())
            .filter(|(_, &c)| c)
            .map(|((&a, &b), _)| a - b)
    };
    let n = pairs().count();
    if n == 0 {
        return Err(Error::NoValidPixels("no overlap after alignment".into()));
    }
    let bias = if cfg.bias_corrected {
        pairs().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let sse: f64 = pairs().map(|d| (d - bias) * (d - bias)).sum();
    Ok((sse / n as f64).sqrt())
}

/// Picks the view most similar to the block-averaged target after
/// sub-pixel alignment. Views that cannot be registered score `+inf`.
pub fn find_true_reference(scene: &Scene, cfg: &SimilarityConfig) -> Result<ReferenceDecision> {
    let hr = require_hr(scene)?;
    scene.check_structure()?;
    let target = downsample_hr(&hr.image, SCALE)?;
    let target_mask = StatusMap::from_threshold(&downscale_mask(&hr.mask, SCALE)?, cfg.mask_threshold);

    let scores: Vec<f64> = scene
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| match aligned_rmse(v, &target, &target_mask, cfg) {
            Ok(s) => s,
            Err(e) => {
                debug!("scene {} view {i}: {e}", scene.id);
                f64::INFINITY
            }
        })
        .collect();
    let chosen = argmin(&scores).ok_or_else(|| Error::NoValidView(scene.id.clone()))?;
    Ok(ReferenceDecision {
        scene_id: scene.id.clone(),
        method: ReferenceMethod::Similarity,
        chosen,
        scores,
        composite: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for HeuristicWeights {
    fn default() -> Self {
        HeuristicWeights {
            alpha: 0.1,
            beta: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MedianPool {
    /// Median over every pixel of every view.
    #[default]
    Pooled,
    /// Median of the per-view medians.
    MedianOfMedians,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicOptions {
    pub weights: HeuristicWeights,
    /// Use the raw mask L1 and clear-pixel count instead of per-pixel means.
    pub raw_terms: bool,
    /// Flip the clearance term so clear views are favored.
    pub reward_clearance: bool,
    pub median_pool: MedianPool,
    /// Take medians over clear pixels only.
    pub median_clear_only: bool,
}

impl Default for HeuristicOptions {
    fn default() -> Self {
        HeuristicOptions {
            weights: HeuristicWeights::default(),
            raw_terms: false,
            reward_clearance: false,
            median_pool: MedianPool::Pooled,
            median_clear_only: false,
        }
    }
}

fn view_pixels(v: &Frame, clear_only: bool) -> Vec<f64> {
    let all: Vec<f64> = v.image.values().to_vec();
    if !clear_only {
        return all;
    }
    let clear: Vec<f64> = all
        .iter()
        .zip(v.mask.flags())
        .filter(|(_, &c)| c)
        .map(|(&p, _)| p)
        .collect();
    if clear.is_empty() {
        all
    } else {
        clear
    }
}

/// Scores each view by
/// `|mask - downscaled target mask|_1 + alpha |median(view) - median(set)| + beta clearance`
/// and returns the argmin. Target pixel values are never read.
pub fn heuristic_reference(scene: &Scene, opts: &HeuristicOptions) -> Result<ReferenceDecision> {
    let hr = require_hr(scene)?;
    scene.check_structure()?;
    let target_mask = downscale_mask(&hr.mask, SCALE)?;
    let n = target_mask.len() as f64;
    let HeuristicWeights { alpha, beta } = opts.weights;

    let mut view_medians = Vec::with_capacity(scene.views.len());
    let mut pooled = Vec::new();
    for v in &scene.views {
        let mut px = view_pixels(v, opts.median_clear_only);
        if opts.median_pool == MedianPool::Pooled {
            pooled.extend_from_slice(&px);
        }
        view_medians.push(median_in_place(&mut px));
    }
    let set_median = match opts.median_pool {
        MedianPool::Pooled => median_in_place(&mut pooled),
        MedianPool::MedianOfMedians => median_in_place(&mut view_medians.clone()),
    };

    let sign = if opts.reward_clearance { -1.0 } else { 1.0 };
    let scores = scene
        .views
        .iter()
        .zip(&view_medians)
        .map(|(v, &med)| {
            let mut l1: f64 = v
                .mask
                .flags()
                .iter()
                .zip(target_mask.values())
                .map(|(&c, &t)| ((c as u8 as f64) - t).abs())
                .sum();
            let mut clearance = clearance_sum(&v.mask) as f64;
            if !opts.raw_terms {
                l1 /= n;
                clearance /= n;
            }
            l1 + alpha * (med - set_median).abs() + sign * beta * clearance
        })
        .collect::<Vec<_>>();
    let chosen = argmin(&scores).ok_or_else(|| Error::NoValidView(scene.id.clone()))?;
    Ok(ReferenceDecision {
        scene_id: scene.id.clone(),
        method: ReferenceMethod::Heuristic,
        chosen,
        scores,
        composite: None,
    })
}

fn clearance_scores(scene: &Scene) -> Vec<f64> {
    scene
        .views
        .iter()
        .map(|v| 1.0 - clearance_fraction(&v.mask))
        .collect()
}

/// The clearest view. Scores are `1 - clearance_fraction`.
pub fn clearance_reference(scene: &Scene) -> Result<ReferenceDecision> {
    let scores = clearance_scores(scene);
    let chosen = argmin(&scores).ok_or_else(|| Error::NoValidView(scene.id.clone()))?;
    Ok(ReferenceDecision {
        scene_id: scene.id.clone(),
        method: ReferenceMethod::Clearance,
        chosen,
        scores,
        composite: None,
    })
}

/// How many of the clearest views feed the median composite.
pub const MEDIAN_VIEWS: usize = 9;

/// Indices of the `k` clearest views, clearest first, ties by index.
pub fn clearest_views(scene: &Scene, k: usize) -> Vec<usize> {
    let counts: Vec<usize> = scene.views.iter().map(|v| v.mask.count_clear()).collect();
    let mut order: Vec<usize> = (0..scene.views.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Per-pixel median of the nine clearest views. The composite's status map
/// marks a pixel clear when a majority of the contributing views see it
/// clear. `chosen` names the clearest contributor.
pub fn median_reference(scene: &Scene) -> Result<ReferenceDecision> {
    scene.check_structure()?;
    let picked = clearest_views(scene, MEDIAN_VIEWS);
    let (w, h) = scene.lr_dims().expect("structure check guarantees a view");
    let mut buf = Vec::with_capacity(picked.len());
    let mut values = Vec::with_capacity(w * h);
    let mut clear = Vec::with_capacity(w * h);
    for i in 0..w * h {
        buf.clear();
        buf.extend(picked.iter().map(|&k| scene.views[k].image.values()[i]));
        values.push(median_in_place(&mut buf));
        let votes = picked
            .iter()
            .filter(|&&k| scene.views[k].mask.flags()[i])
            .count();
        clear.push(2 * votes > picked.len());
    }
    let composite = Frame::new(ImageGrid::new(w, h, values)?, StatusMap::new(w, h, clear)?)?;
    Ok(ReferenceDecision {
        scene_id: scene.id.clone(),
        method: ReferenceMethod::Median,
        chosen: picked[0],
        scores: clearance_scores(scene),
        composite: Some(composite),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(img: ImageGrid) -> Frame {
        let (w, h) = img.dims();
        Frame::new(img, StatusMap::all_clear(w, h)).unwrap()
    }

    fn scene(views: Vec<Frame>, hr: Option<Frame>) -> Scene {
        Scene {
            id: "s".into(),
            band: Band::Nir,
            views,
            hr,
            true_ref: None,
        }
    }

    #[test]
    fn clearance_counts() {
        assert_eq!(clearance_fraction(&StatusMap::all_clear(128, 128)), 1.0);
        assert_eq!(clearance_sum(&StatusMap::all_clear(128, 128)), 16384);
        let m = StatusMap::from_fn(128, 128, |x, y| y * 128 + x < 9830);
        assert_eq!(clearance_sum(&m), 9830);
        assert!((clearance_fraction(&m) - 9830.0 / 16384.0).abs() < 1e-15);
        assert!(clearance_fraction(&m) < MIN_LR_CLEARANCE);
        let none = StatusMap::new(4, 4, vec![false; 16]).unwrap();
        assert_eq!(clearance_sum(&none), 0);
        // 2×2 block fully clear plus one extra pixel
        let three = StatusMap::new(3, 2, vec![true, false, true, false, true, false]).unwrap();
        assert_eq!(clearance_sum(&three), 3);
    }

    #[test]
    fn argmin_ties_and_infinities() {
        assert_eq!(argmin(&[2.0, 1.0, 1.0]), Some(1));
        assert_eq!(argmin(&[f64::INFINITY, 3.0]), Some(1));
        assert_eq!(argmin(&[f64::INFINITY]), None);
        assert_eq!(argmin(&[]), None);
    }

    #[test]
    fn median_helper() {
        assert_eq!(median_in_place(&mut [0.9, 0.1, 0.2]), 0.2);
        assert_eq!(median_in_place(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median_in_place(&mut [7.0]), 7.0);
    }

    #[test]
    fn missing_target_is_a_precondition_error() {
        let s = scene(vec![frame(ImageGrid::filled(8, 8, 0.2))], None);
        assert!(matches!(
            find_true_reference(&s, &SimilarityConfig::default()),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            heuristic_reference(&s, &HeuristicOptions::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn clearance_picks_clearest_with_low_index_ties() {
        let cloudy = |k: usize| {
            Frame::new(
                ImageGrid::filled(8, 8, 0.3),
                StatusMap::from_fn(8, 8, |x, _| x >= k),
            )
            .unwrap()
        };
        let s = scene(vec![cloudy(2), cloudy(0), cloudy(1)], None);
        assert_eq!(clearance_reference(&s).unwrap().chosen, 1);
        let s = scene(vec![cloudy(1), cloudy(1), cloudy(1)], None);
        assert_eq!(clearance_reference(&s).unwrap().chosen, 0);
    }

    #[test]
    fn median_composite_of_three() {
        let v = |p: f64| frame(ImageGrid::filled(2, 2, p));
        let s = scene(vec![v(0.1), v(0.9), v(0.2)], None);
        let d = median_reference(&s).unwrap();
        let c = d.composite.unwrap();
        assert!(c.image.values().iter().all(|&x| x == 0.2));
        assert_eq!(c.mask.count_clear(), 4);
        assert_eq!(d.chosen, 0);
    }

    #[test]
    fn heuristic_ties_go_to_lower_index() {
        let img = ImageGrid::filled(4, 4, 0.4);
        let s = scene(
            vec![frame(img.clone()), frame(img.clone())],
            Some(frame(ImageGrid::filled(12, 12, 0.4))),
        );
        let d = heuristic_reference(&s, &HeuristicOptions::default()).unwrap();
        assert_eq!(d.chosen, 0);
        assert_eq!(d.scores[0], d.scores[1]);
    }

    #[test]
    fn method_and_band_parse() {
        for m in ReferenceMethod::ALL {
            assert_eq!(m.as_str().parse::<ReferenceMethod>().unwrap(), m);
        }
        assert!("best".parse::<ReferenceMethod>().is_err());
        assert_eq!("nir".parse::<Band>().unwrap(), Band::Nir);
        assert_eq!(Band::Red.to_string(), "RED");
    }
}
