//! Masked RMSE and the corrected-clear PSNR (cPSNR) used to score
//! super-resolved scenes.
//!
//! cPSNR crops a fixed border from the target, slides the equally sized
//! crop of the candidate over a small window of integer offsets, removes
//! the mean brightness difference over clear target pixels at each offset
//! and keeps the best resulting PSNR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ImageGrid, StatusMap};

/// Root-mean-square difference over the clear cells of `mask`.
pub fn masked_rmse(a: &ImageGrid, b: &ImageGrid, mask: &StatusMap) -> Result<f64> {
    if a.dims() != b.dims() || a.dims() != mask.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{:?}, {:?} and mask {:?}",
            a.dims(),
            b.dims(),
            mask.dims()
        )));
    }
    let mut sse = 0.0;
    let mut n = 0usize;
    for ((&p, &q), &c) in a.values().iter().zip(b.values()).zip(mask.flags()) {
        if c {
            let d = p - q;
            sse += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels("mask has no clear cell".into()));
    }
    Ok((sse / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpsnrConfig {
    /// Pixels cropped from each side of the target.
    pub border: usize,
    /// Side of the square of integer offsets searched; odd, at most `2 * border + 1`.
    pub window: usize,
    /// Lower bound on the corrected MSE; caps the score at `-10 log10(floor)`.
    pub mse_floor: f64,
}

impl Default for CpsnrConfig {
    fn default() -> Self {
        CpsnrConfig {
            border: 3,
            window: 7,
            mse_floor: 1e-10,
        }
    }
}

impl CpsnrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "cPSNR window must be odd, got {}",
                self.window
            )));
        }
        if self.window > 2 * self.border + 1 {
            return Err(Error::InvalidArgument(format!(
                "cPSNR window {} does not fit a border of {}",
                self.window, self.border
            )));
        }
        if !(self.mse_floor > 0.0) {
            return Err(Error::InvalidArgument("MSE floor must be positive".into()));
        }
        Ok(())
    }

    pub fn cap_db(&self) -> f64 {
        -10.0 * self.mse_floor.log10()
    }

    fn offsets(&self) -> std::ops::RangeInclusive<usize> {
        let half = self.window / 2;
        self.border - half..=self.border + half
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpsnrReport {
    pub scene_id: String,
    pub cpsnr_db: f64,
    /// Column (`u`) and row (`v`) offset of the candidate crop.
    pub best_shift: (usize, usize),
    pub bias_b: f64,
    pub clear_pixel_count: usize,
}

/// Scores `sr` against `hr`. Offsets are searched with `u` (columns) in the
/// outer loop; ties keep the lexicographically lowest `(u, v)`.
pub fn cpsnr(
    scene_id: &str,
    sr: &ImageGrid,
    hr: &ImageGrid,
    hr_mask: &StatusMap,
    cfg: &CpsnrConfig,
) -> Result<CpsnrReport> {
    cfg.validate()?;
    let (w, h) = hr.dims();
    if sr.dims() != hr.dims() || hr_mask.dims() != hr.dims() {
        return Err(Error::DimensionMismatch(format!(
            "sr {:?}, hr {:?}, mask {:?}",
            sr.dims(),
            hr.dims(),
            hr_mask.dims()
        )));
    }
    let b = cfg.border;
    if w <= 2 * b || h <= 2 * b {
        return Err(Error::DimensionMismatch(format!(
            "{w}x{h} image is too small for a {b}-pixel border"
        )));
    }
    let (cw, ch) = (w - 2 * b, h - 2 * b);

    // clear target pixels inside the crop, as (target index, crop-relative x, y)
    let mut clear = Vec::new();
    for y in 0..ch {
        for x in 0..cw {
            if hr_mask.is_clear(x + b, y + b) {
                clear.push(((y + b) * w + x + b, x, y));
            }
        }
    }
    let hr_v = hr.values();
    let sr_v = sr.values();

    let mut best: Option<CpsnrReport> = None;
    for u in cfg.offsets() {
        for v in cfg.offsets() {
            if clear.is_empty() {
                continue;
            }
            let n = clear.len() as f64;
            let diff = |&(hi, x, y): &(usize, usize, usize)| hr_v[hi] - sr_v[(y + v) * w + x + u];
            let bias = clear.iter().map(diff).sum::<f64>() / n;
            let cmse = clear
                .iter()
                .map(|c| {
                    let e = diff(c) - bias;
                    e * e
                })
                .sum::<f64>()
                / n;
            let score = -10.0 * cmse.max(cfg.mse_floor).log10();
            if best.as_ref().is_none_or(|r| score > r.cpsnr_db) {
                best = Some(CpsnrReport {
                    scene_id: scene_id.to_string(),
                    cpsnr_db: score,
                    best_shift: (u, v),
                    bias_b: bias,
                    clear_pixel_count: clear.len(),
                });
            }
        }
    }
    best.ok_or_else(|| {
        Error::NoValidPixels(format!("scene {scene_id}: no clear pixel in any window"))
    })
}

/// One scene to score: its target, target mask and (if produced) candidate.
pub struct EvalItem<'a> {
    pub scene_id: &'a str,
    pub hr: Option<(&'a ImageGrid, &'a StatusMap)>,
    pub sr: Option<&'a ImageGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedScene {
    pub scene_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusEvaluation {
    pub reports: Vec<CpsnrReport>,
    pub skipped: Vec<SkippedScene>,
    /// Mean cPSNR over scored scenes; absent for an empty corpus.
    pub mean_cpsnr: Option<f64>,
}

/// Scores every item in input order. Items missing a candidate or target,
/// or whose windows hold no clear pixel, are listed as skipped.
pub fn evaluate_corpus(items: &[EvalItem], cfg: &CpsnrConfig) -> Result<CorpusEvaluation> {
    cfg.validate()?;
    let mut out = CorpusEvaluation::default();
    for item in items {
        let skip = |reason: String| SkippedScene {
            scene_id: item.scene_id.to_string(),
            reason,
        };
        let (Some(sr), Some((hr, mask))) = (item.sr, item.hr) else {
            let reason = if item.sr.is_none() {
                "no super-resolved image"
            } else {
                "no high-resolution target"
            };
            out.skipped.push(skip(reason.into()));
            continue;
        };
        match cpsnr(item.scene_id, sr, hr, mask, cfg) {
            Ok(r) => out.reports.push(r),
            Err(e) => out.skipped.push(skip(e.to_string())),
        }
    }
    if !out.reports.is_empty() {
        let sum: f64 = out.reports.iter().map(|r| r.cpsnr_db).sum();
        out.mean_cpsnr = Some(sum / out.reports.len() as f64);
    }
    Ok(out)
}
