use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use refkit::baseline_sr::{
    bicubic_sisr, resolve_anchor, shift_and_add_with_anchor, AnchorOptions, RefChoice, SrConfig,
};
use refkit::dataset_io::{self, LoadOptions};
use refkit::metrics::{cpsnr, CpsnrConfig};
use refkit::reference::{
    find_true_reference, heuristic_reference, HeuristicOptions, HeuristicWeights, SimilarityConfig,
};
use refkit::synthetic::{generate_corpus, SyntheticConfig};
use refkit::reference::SCALE;
use refkit::{ReferenceDecision, ReferenceMethod, Scene};

use crate::manifest::{sidecar, ManifestBuilder};
use crate::{
    EvalArgs, FindRefArgs, GenArgs, GlobalArgs, HeuristicArgs, HeuristicRefArgs, ReportArgs,
    SimilarityArgs, SrArgs, SrMethod,
};

pub enum Outcome {
    Complete,
    Partial,
}

impl Outcome {
    fn from_failures(n: usize) -> Self {
        if n == 0 {
            Outcome::Complete
        } else {
            Outcome::Partial
        }
    }
}

/// How `sr` picks the anchor of each scene.
#[derive(Debug, Clone, PartialEq)]
pub enum RefSpec {
    Method(ReferenceMethod),
    Fixed(usize),
    /// Indices from a reference table (any scene → index CSV).
    Table(PathBuf),
}

impl RefSpec {
    pub fn label(&self) -> String {
        match self {
            RefSpec::Method(m) => m.as_str().to_string(),
            RefSpec::Fixed(i) => format!("fixed:{i}"),
            RefSpec::Table(p) => format!(
                "csv:{}",
                p.file_stem().unwrap_or_default().to_string_lossy()
            ),
        }
    }

    fn slug(&self) -> String {
        self.label().replace(':', "-")
    }
}

pub fn parse_ref_spec(s: &str) -> Result<RefSpec, String> {
    if let Some(n) = s.strip_prefix("fixed:") {
        return n
            .parse()
            .map(RefSpec::Fixed)
            .map_err(|_| format!("bad view index {n:?}"));
    }
    if let Some(p) = s.strip_prefix("csv:") {
        if p.is_empty() {
            return Err("csv: needs a path".into());
        }
        return Ok(RefSpec::Table(PathBuf::from(p)));
    }
    ReferenceMethod::from_str(s).map_err(|e| e.to_string())
        .map(RefSpec::Method)
}

fn similarity_config(a: &SimilarityArgs) -> SimilarityConfig {
    SimilarityConfig {
        registration: a.registration.config(),
        bias_corrected: a.bias_corrected,
        ..SimilarityConfig::default()
    }
}

fn heuristic_options(a: &HeuristicArgs) -> HeuristicOptions {
    HeuristicOptions {
        weights: HeuristicWeights {
            alpha: a.alpha,
            beta: a.beta,
        },
        raw_terms: a.heuristic_raw_terms,
        reward_clearance: a.reward_clearance,
        median_pool: a.median_pool.into(),
        median_clear_only: a.median_clear_only,
    }
}

fn load_options(g: &GlobalArgs) -> LoadOptions {
    LoadOptions {
        validate: g.validate,
        invert_status: g.invert_status,
    }
}

fn scene_ids(g: &GlobalArgs) -> anyhow::Result<Vec<String>> {
    if !g.root.is_dir() {
        bail!("dataset root {} does not exist", g.root.display());
    }
    Ok(dataset_io::list_scenes(&g.root, g.band)?)
}

struct SceneResult<T> {
    id: String,
    result: anyhow::Result<T>,
    ms: f64,
}

/// Runs `f` on every scene in parallel; results come back in `ids` order.
fn per_scene<T, F>(ids: &[String], f: F) -> Vec<SceneResult<T>>
where
    T: Send,
    F: Fn(&str) -> anyhow::Result<T> + Sync,
{
    ids.par_iter()
        .map(|id| {
            let start = Instant::now();
            let result = f(id);
            SceneResult {
                id: id.clone(),
                result,
                ms: start.elapsed().as_secs_f64() * 1e3,
            }
        })
        .collect()
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(p) => Ok(dataset_io::write_bytes(p, bytes)?),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            Ok(stdout.flush()?)
        }
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> anyhow::Result<()> {
    if path.exists() && !force {
        bail!("{} exists; pass --force to replace it", path.display());
    }
    Ok(())
}

pub fn gen(g: &GlobalArgs, a: &GenArgs) -> anyhow::Result<Outcome> {
    let cfg = SyntheticConfig {
        seed: a.seed,
        n_scenes: a.n_scenes,
        n_views: a.n_views,
        band: g.band,
        lr_size: a.lr_size,
        shift_sigma: a.shift_sigma,
        noise_sigma: a.noise_sigma,
        cloud_coverage_max: a.cloud_coverage_max,
        clear_probability: a.clear_probability,
        temporal_amplitude: a.temporal_amplitude,
        bias_range: a.bias_range,
    };
    let mut manifest = ManifestBuilder::new("gen", Some(a.seed), &cfg);
    std::fs::create_dir_all(&g.root)
        .with_context(|| format!("creating {}", g.root.display()))?;
    let report = generate_corpus(&cfg, &g.root, g.force)?;
    for (id, e) in &report.failures {
        log::warn!("{id}: {e}");
    }
    let truth = g.root.join(dataset_io::TRUTH_FILE);
    log::info!(
        "wrote {} scenes to {} ({} failed)",
        report.truth.len(),
        dataset_io::band_dir(&g.root, g.band).display(),
        report.failures.len()
    );
    manifest.output(&truth);
    manifest.write(&sidecar(&truth))?;
    Ok(Outcome::from_failures(report.failures.len()))
}

fn reference_command<F>(
    g: &GlobalArgs,
    name: &str,
    out: Option<&Path>,
    truth: Option<&Path>,
    config: impl Serialize,
    pick: F,
) -> anyhow::Result<Outcome>
where
    F: Fn(&Scene) -> refkit::Result<ReferenceDecision> + Sync,
{
    if let Some(p) = out {
        refuse_overwrite(p, g.force)?;
    }
    let mut manifest = ManifestBuilder::new(name, None, config);
    let ids = scene_ids(g)?;
    let opts = load_options(g);
    let results = per_scene(&ids, |id| {
        let scene = dataset_io::load_scene(&g.root, g.band, id, &opts)?;
        Ok(pick(&scene)?)
    });

    let mut decisions = Vec::new();
    let mut failures = 0;
    for r in &results {
        manifest.timing(&r.id, r.ms);
        match &r.result {
            Ok(d) => decisions.push((g.band, d)),
            Err(e) => {
                failures += 1;
                log::warn!("{}: skipped: {e:#}", r.id);
            }
        }
    }
    emit(out, &dataset_io::decisions_csv(&decisions))?;
    log::info!("{name}: {} scenes decided, {failures} skipped", decisions.len());

    let default_truth = g.root.join(dataset_io::TRUTH_FILE);
    let truth = truth
        .map(Path::to_path_buf)
        .or_else(|| default_truth.is_file().then_some(default_truth));
    if let Some(path) = truth {
        let truth = dataset_io::read_index_map(&path)?;
        let chosen: BTreeMap<&str, usize> = decisions
            .iter()
            .map(|(_, d)| (d.scene_id.as_str(), d.chosen))
            .collect();
        let judged: Vec<&String> = ids.iter().filter(|id| truth.contains_key(*id)).collect();
        let hits = judged
            .iter()
            .filter(|id| chosen.get(id.as_str()) == truth.get(id.as_str()))
            .count();
        if judged.is_empty() {
            log::warn!("no listed scene appears in {}", path.display());
        } else {
            eprintln!(
                "accuracy {:.4} ({hits}/{}) against {}",
                hits as f64 / judged.len() as f64,
                judged.len(),
                path.display()
            );
        }
    }

    if let Some(p) = out {
        manifest.output(p);
        manifest.write(&sidecar(p))?;
    }
    Ok(Outcome::from_failures(failures))
}

pub fn find_ref(g: &GlobalArgs, a: &FindRefArgs) -> anyhow::Result<Outcome> {
    let cfg = similarity_config(&a.similarity);
    reference_command(
        g,
        "find-ref",
        a.out.as_deref(),
        a.truth.as_deref(),
        cfg,
        |s| find_true_reference(s, &cfg),
    )
}

pub fn heuristic_ref(g: &GlobalArgs, a: &HeuristicRefArgs) -> anyhow::Result<Outcome> {
    let opts = heuristic_options(&a.heuristic);
    reference_command(
        g,
        "heuristic-ref",
        a.out.as_deref(),
        a.truth.as_deref(),
        opts,
        |s| heuristic_reference(s, &opts),
    )
}

pub const SR_MANIFEST: &str = "sr_manifest.json";
pub const SR_ANCHORS: &str = "sr_anchors.csv";

pub fn sr_file_name(scene_id: &str) -> String {
    format!("{scene_id}_SR.png")
}

/// Identifies what produced a directory of super-resolved images.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SrProvenance {
    band: String,
    sr_method: String,
    ref_method: String,
}

struct SrScene {
    raw: Vec<u16>,
    side: (usize, usize),
    anchor: Option<usize>,
    used_views: usize,
    fell_back: bool,
}

pub fn sr(g: &GlobalArgs, a: &SrArgs) -> anyhow::Result<Outcome> {
    let out = a.out.clone().unwrap_or_else(|| {
        g.root.join("sr").join(g.band.as_str()).join(format!(
            "{}_{}",
            a.sr_method.as_str(),
            a.ref_method.slug()
        ))
    });
    if out.exists() && std::fs::read_dir(&out)?.next().is_some() {
        refuse_overwrite(&out, g.force)?;
    }
    let cfg = SrConfig {
        registration: a.similarity.registration.config(),
        ..SrConfig::default()
    };
    let anchor_opts = AnchorOptions {
        similarity: similarity_config(&a.similarity),
        heuristic: heuristic_options(&a.heuristic),
    };
    let table = match &a.ref_method {
        RefSpec::Table(p) => Some(dataset_io::read_index_map(p)?),
        _ => None,
    };
    let provenance = SrProvenance {
        band: g.band.as_str().into(),
        sr_method: a.sr_method.as_str().into(),
        ref_method: a.ref_method.label(),
    };
    let mut manifest = ManifestBuilder::new(
        "sr",
        None,
        serde_json::json!({ "sr": cfg, "anchor_similarity": anchor_opts.similarity,
            "anchor_heuristic": anchor_opts.heuristic, "provenance": provenance }),
    );

    let ids = scene_ids(g)?;
    let opts = load_options(g);
    let results = per_scene(&ids, |id| {
        let scene = dataset_io::load_scene(&g.root, g.band, id, &opts)?;
        let choice = match &a.ref_method {
            RefSpec::Method(m) => RefChoice::Method(*m),
            RefSpec::Fixed(i) => RefChoice::Fixed(*i),
            RefSpec::Table(p) => match table.as_ref().and_then(|t| t.get(id)) {
                Some(&i) => RefChoice::Fixed(i),
                None => bail!("no entry in {}", p.display()),
            },
        };
        let anchor = resolve_anchor(&scene, choice, &anchor_opts)?;
        let (image, used_views, fell_back) = match a.sr_method {
            SrMethod::Bicubic => (bicubic_sisr(&anchor.frame.image, SCALE)?, 0, false),
            SrMethod::ShiftAndAdd => {
                let o = shift_and_add_with_anchor(&scene, &anchor, &cfg)?;
                (o.image, o.used_views.len(), o.fell_back)
            }
        };
        Ok(SrScene {
            side: image.dims(),
            raw: dataset_io::encode16(&image),
            anchor: anchor.view_index,
            used_views,
            fell_back,
        })
    });

    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut anchors = String::from("scene_id,anchor_index,used_views,fell_back\n");
    let mut failures = 0;
    for r in results {
        manifest.timing(&r.id, r.ms);
        match r.result {
            Ok(s) => {
                let path = out.join(sr_file_name(&r.id));
                dataset_io::write_raw16(&path, s.side.0, s.side.1, s.raw)?;
                let anchor = s.anchor.map(|i| i.to_string()).unwrap_or_default();
                anchors.push_str(&format!(
                    "{},{anchor},{},{}\n",
                    r.id, s.used_views, s.fell_back
                ));
            }
            Err(e) => {
                failures += 1;
                log::warn!("{}: skipped: {e:#}", r.id);
            }
        }
    }
    dataset_io::write_bytes(&out.join(SR_ANCHORS), anchors.as_bytes())?;
    log::info!(
        "sr: {} images in {} ({failures} skipped)",
        ids.len() - failures,
        out.display()
    );
    manifest.output(&out);
    manifest.extra(serde_json::to_value(&provenance)?);
    manifest.write(&out.join(SR_MANIFEST))?;
    Ok(Outcome::from_failures(failures))
}

/// Written next to each evaluation CSV and read by `report`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub band: String,
    pub sr_method: String,
    pub ref_method: String,
    pub mean_cpsnr: Option<f64>,
    pub n_scenes: usize,
    pub n_skipped: usize,
    pub eval_csv: String,
}

pub const SUMMARY_SUFFIX: &str = ".summary.json";

fn summary_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().unwrap_or_default().to_string_lossy();
    csv.with_file_name(format!("{stem}{SUMMARY_SUFFIX}"))
}

fn read_provenance(sr_dir: &Path) -> Option<SrProvenance> {
    let bytes = dataset_io::read_bytes(&sr_dir.join(SR_MANIFEST)).ok()?;
    let v: serde_json::Value = serde_json::from_slice(&bytes).ok()?;
    serde_json::from_value(v.get("extra")?.clone()).ok()
}

pub fn eval(g: &GlobalArgs, a: &EvalArgs) -> anyhow::Result<Outcome> {
    let cfg = CpsnrConfig {
        border: a.cpsnr_border,
        window: a.cpsnr_window,
        ..CpsnrConfig::default()
    };
    cfg.validate()?;
    if !a.sr_dir.is_dir() {
        bail!("{} is not a directory", a.sr_dir.display());
    }
    let out = a.out.clone().unwrap_or_else(|| a.sr_dir.join("eval.csv"));
    refuse_overwrite(&out, g.force)?;
    let mut manifest = ManifestBuilder::new("eval", None, cfg);
    let ids = scene_ids(g)?;
    let opts = load_options(g);
    let results = per_scene(&ids, |id| {
        let scene = dataset_io::load_scene(&g.root, g.band, id, &opts)?;
        let Some(hr) = scene.hr else {
            bail!("no high-resolution target");
        };
        let path = a.sr_dir.join(sr_file_name(id));
        if !path.is_file() {
            bail!("no super-resolved image");
        }
        let sr = dataset_io::read_image16(&path)?;
        Ok(cpsnr(id, &sr, &hr.image, &hr.mask, &cfg)?)
    });

    let mut csv = String::from("scene_id,cpsnr_db,u,v,bias\n");
    let mut scores = Vec::new();
    let mut skipped = 0;
    for r in &results {
        manifest.timing(&r.id, r.ms);
        match &r.result {
            Ok(rep) => {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    rep.scene_id, rep.cpsnr_db, rep.best_shift.0, rep.best_shift.1, rep.bias_b
                ));
                scores.push(rep.cpsnr_db);
            }
            Err(e) => {
                skipped += 1;
                log::warn!("{}: skipped: {e:#}", r.id);
            }
        }
    }
    let mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    let prov = read_provenance(&a.sr_dir).unwrap_or_else(|| SrProvenance {
        band: g.band.as_str().into(),
        sr_method: "unknown".into(),
        ref_method: "unknown".into(),
    });
    let summary = EvalSummary {
        band: g.band.as_str().into(),
        sr_method: prov.sr_method,
        ref_method: prov.ref_method,
        mean_cpsnr: mean,
        n_scenes: scores.len(),
        n_skipped: skipped,
        eval_csv: out
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned(),
    };
    dataset_io::write_bytes(&out, csv.as_bytes())?;
    let summary_file = summary_path(&out);
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    dataset_io::write_bytes(&summary_file, json.as_bytes())?;
    match mean {
        Some(m) => log::info!("eval: mean cPSNR {m:.4} dB over {} scenes, {skipped} skipped", scores.len()),
        None => log::info!("eval: no scene scored, {skipped} skipped"),
    }
    manifest.output(&out);
    manifest.output(&summary_file);
    manifest.write(&sidecar(&out))?;
    Ok(Outcome::from_failures(skipped))
}

fn find_summaries(dir: &Path, found: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_summaries(&p, found)?;
        } else if p
            .file_name()
            .is_some_and(|n| n.to_string_lossy().ends_with(SUMMARY_SUFFIX))
        {
            found.push(p);
        }
    }
    Ok(())
}

fn column_rank(label: &str) -> (usize, &str) {
    let rank = ReferenceMethod::ALL
        .iter()
        .position(|m| m.as_str() == label)
        .unwrap_or(ReferenceMethod::ALL.len());
    (rank, label)
}

fn row_rank(label: &str) -> (usize, &str) {
    let rank = match label {
        "shift-and-add" => 0,
        "bicubic" => 1,
        _ => 2,
    };
    (rank, label)
}

/// Mean cPSNR with rows = super-resolution method and columns = reference
/// method, as CSV and as an aligned text table.
fn cross_tab(summaries: &[(PathBuf, EvalSummary)]) -> (String, String) {
    let mut cells: BTreeMap<(String, String), Option<f64>> = BTreeMap::new();
    for (path, s) in summaries {
        let key = (s.sr_method.clone(), s.ref_method.clone());
        if cells.contains_key(&key) {
            log::warn!(
                "{}: duplicate {} / {} evaluation ignored",
                path.display(),
                key.0,
                key.1
            );
            continue;
        }
        cells.insert(key, s.mean_cpsnr);
    }
    let mut rows: Vec<&str> = cells.keys().map(|k| k.0.as_str()).collect();
    rows.sort_by_key(|r| row_rank(r));
    rows.dedup();
    let mut cols: Vec<&str> = cells.keys().map(|k| k.1.as_str()).collect();
    cols.sort_by_key(|c| column_rank(c));
    cols.dedup();

    let fmt = |r: &str, c: &str| {
        cells
            .get(&(r.to_string(), c.to_string()))
            .copied()
            .flatten()
            .map(|v| format!("{v:.4}"))
            .unwrap_or_default()
    };
    let mut csv = String::from("sr_method");
    for c in &cols {
        csv.push(',');
        csv.push_str(c);
    }
    csv.push('\n');
    let mut grid: Vec<Vec<String>> = vec![std::iter::once("sr_method".to_string())
        .chain(cols.iter().map(|c| c.to_string()))
        .collect()];
    for r in &rows {
        let vals: Vec<String> = cols.iter().map(|c| fmt(r, c)).collect();
        csv.push_str(r);
        for v in &vals {
            csv.push(',');
            csv.push_str(v);
        }
        csv.push('\n');
        grid.push(std::iter::once(r.to_string()).chain(vals).collect());
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|j| grid.iter().map(|row| row[j].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for row in &grid {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (cell, &w))| {
                if j == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        text.push_str(line.join("  ").trim_end());
        text.push('\n');
    }
    (csv, text)
}

pub fn report(g: &GlobalArgs, a: &ReportArgs) -> anyhow::Result<Outcome> {
    let dir = a.eval_dir.clone().unwrap_or_else(|| g.root.join("sr"));
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    if let Some(p) = &a.out {
        refuse_overwrite(p, g.force)?;
    }
    let mut manifest = ManifestBuilder::new("report", None, serde_json::json!({ "eval_dir": dir }));
    let mut paths = Vec::new();
    find_summaries(&dir, &mut paths)?;
    let mut summaries = Vec::new();
    for p in paths {
        let bytes = dataset_io::read_bytes(&p)?;
        let s: EvalSummary =
            serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))?;
        if s.band == g.band.as_str() {
            summaries.push((p, s));
        }
    }
    let (csv, text) = cross_tab(&summaries);
    emit(None, text.as_bytes())?;
    if let Some(p) = &a.out {
        dataset_io::write_bytes(p, csv.as_bytes())?;
        manifest.output(p);
        manifest.write(&sidecar(p))?;
    }
    Ok(Outcome::Complete)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(sr: &str, rf: &str, mean: Option<f64>) -> (PathBuf, EvalSummary) {
        (
            PathBuf::from(format!("{sr}_{rf}/eval.summary.json")),
            EvalSummary {
                band: "NIR".into(),
                sr_method: sr.into(),
                ref_method: rf.into(),
                mean_cpsnr: mean,
                n_scenes: 1,
                n_skipped: 0,
                eval_csv: "eval.csv".into(),
            },
        )
    }

    #[test]
    fn ref_specs_parse() {
        assert_eq!(
            parse_ref_spec("Similarity").unwrap(),
            RefSpec::Method(ReferenceMethod::Similarity)
        );
        assert_eq!(parse_ref_spec("fixed:4").unwrap(), RefSpec::Fixed(4));
        assert_eq!(parse_ref_spec("fixed:4").unwrap().label(), "fixed:4");
        assert_eq!(
            parse_ref_spec("csv:out/refs.csv").unwrap().label(),
            "csv:refs"
        );
        assert!(parse_ref_spec("fixed:x").is_err());
        assert!(parse_ref_spec("oracle").is_err());
    }

    #[test]
    fn empty_cross_tab() {
        let (csv, text) = cross_tab(&[]);
        assert_eq!(csv, "sr_method\n");
        assert_eq!(text, "sr_method\n");
    }

    #[test]
    fn cross_tab_orders_rows_and_columns() {
        let (csv, _) = cross_tab(&[
            summary("bicubic", "heuristic", Some(30.0)),
            summary("shift-and-add", "similarity", Some(40.123456)),
            summary("shift-and-add", "clearance", None),
            summary("shift-and-add", "similarity", Some(1.0)),
            summary("bicubic", "fixed:0", Some(29.0)),
        ]);
        assert_eq!(
            csv,
            "sr_method,similarity,clearance,heuristic,fixed:0\n\
             shift-and-add,40.1235,,,\n\
             bicubic,,,30.0000,29.0000\n"
        );
    }
}
