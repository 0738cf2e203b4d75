//! On-disk scene layout and reference-index tables.
//!
//! ```text
//! <root>/<band>/<scene_id>/LR000.png   16-bit grayscale view
//!                          QM000.png   status map of LR000 (nonzero = clear)
//!                          ...
//!                          HR.png      16-bit target (optional)
//!                          SM.png      status map of HR.png
//! ```
//!
//! Reflectance is stored as `round(v * 65535)`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ImageGrid, StatusMap};
use crate::reference::{Band, Frame, ReferenceDecision, Scene};

pub fn band_dir(root: &Path, band: Band) -> PathBuf {
    root.join(band.as_str())
}

pub fn scene_dir(root: &Path, band: Band, id: &str) -> PathBuf {
    band_dir(root, band).join(id)
}

/// Scene ids of one band, sorted lexicographically. Hidden entries (for
/// example interrupted writes) are ignored. A missing band directory yields
/// an empty list.
pub fn list_scenes(root: &Path, band: Band) -> Result<Vec<String>> {
    let dir = band_dir(root, band);
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            ids.push(name);
        }
    }
    ids.sort();
    Ok(ids)
}

/// Bands that have a directory under `root`.
pub fn bands_present(root: &Path) -> Vec<Band> {
    Band::ALL
        .into_iter()
        .filter(|&b| band_dir(root, b).is_dir())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Enforce view-count and clearance curation rules.
    pub validate: bool,
    /// Treat zero as clear in status maps.
    pub invert_status: bool,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedScene {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_image16(path: &Path) -> Result<ImageGrid> {
    match decode(path)? {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            let values = buf.into_raw().into_iter().map(from_u16).collect();
            ImageGrid::new(w as usize, h as usize, values)
        }
        other => Err(malformed(
            path,
            format!("expected 16-bit grayscale, found {:?}", other.color()),
        )),
    }
}

pub fn read_status_map(path: &Path, invert: bool) -> Result<StatusMap> {
    let (w, h, flags): (u32, u32, Vec<bool>) = match decode(path)? {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            (w, h, buf.into_raw().into_iter().map(|v| v != 0).collect())
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            (w, h, buf.into_raw().into_iter().map(|v| v != 0).collect())
        }
        other => {
            return Err(malformed(
                path,
                format!("expected a grayscale status map, found {:?}", other.color()),
            ))
        }
    };
    let flags = flags.into_iter().map(|c| c != invert).collect();
    StatusMap::new(w as usize, h as usize, flags)
}

pub fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn from_u16(v: u16) -> f64 {
    v as f64 / 65535.0
}

/// Row-major 16-bit samples of `img`.
pub fn encode16(img: &ImageGrid) -> Vec<u16> {
    img.values().iter().map(|&v| to_u16(v)).collect()
}

pub fn write_image16(path: &Path, img: &ImageGrid) -> Result<()> {
    write_raw16(path, img.width(), img.height(), encode16(img))
}

pub fn write_raw16(path: &Path, width: usize, height: usize, raw: Vec<u16>) -> Result<()> {
    let n = raw.len();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, raw).ok_or_else(|| {
            Error::DimensionMismatch(format!("{n} samples for {width}x{height}"))
        })?;
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_status_map(path: &Path, m: &StatusMap) -> Result<()> {
    let raw: Vec<u8> = m.flags().iter().map(|&c| if c { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(m.width() as u32, m.height() as u32, raw)
            .expect("buffer length matches dimensions");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// `LR012.png` → 12.
fn view_number(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("LR")?.strip_suffix(".png")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn load_frame(image: &Path, mask: &Path, opts: &LoadOptions) -> Result<Frame> {
    let img = read_image16(image)?;
    let m = read_status_map(mask, opts.invert_status)?;
    Frame::new(img, m).map_err(|_| {
        malformed(
            mask,
            format!("status map does not match {}", image.display()),
        )
    })
}

/// Reads one scene. `true_ref` is left empty; ground truth lives in the
/// corpus manifests.
pub fn load_scene(root: &Path, band: Band, id: &str, opts: &LoadOptions) -> Result<Scene> {
    let dir = scene_dir(root, band, id);
    if !dir.is_dir() {
        return Err(Error::io(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "scene directory not found"),
        ));
    }
    let mut numbers: Vec<(usize, String)> = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(n) = view_number(&name) {
            numbers.push((n, name));
        }
    }
    numbers.sort();
    if numbers.is_empty() {
        return Err(malformed(&dir, "no LR views"));
    }

    let mut views = Vec::with_capacity(numbers.len());
    for (_, name) in &numbers {
        let lr = dir.join(name);
        let qm = dir.join(name.replacen("LR", "QM", 1));
        if !qm.is_file() {
            return Err(malformed(&lr, "missing status map"));
        }
        views.push(load_frame(&lr, &qm, opts)?);
    }

    let hr_path = dir.join("HR.png");
    let sm_path = dir.join("SM.png");
    let hr = match (hr_path.is_file(), sm_path.is_file()) {
        (true, true) => Some(load_frame(&hr_path, &sm_path, opts)?),
        (false, false) => None,
        (true, false) => return Err(malformed(&hr_path, "missing SM.png")),
        (false, true) => return Err(malformed(&sm_path, "missing HR.png")),
    };

    let scene = Scene {
        id: id.to_string(),
        band,
        views,
        hr,
        true_ref: None,
    };
    scene
        .check_structure()
        .map_err(|e| malformed(&dir, e.to_string()))?;
    if opts.validate {
        if let Err((view, reason)) = scene.check_curation() {
            let path = match view {
                Some(i) => dir.join(&numbers[i].1),
                None if reason.starts_with("target") => hr_path,
                None => dir,
            };
            return Err(Error::Validation { path, reason });
        }
    }
    Ok(scene)
}

/// Writes a scene into `<root>/<band>/<id>`, staging it in a hidden sibling
/// directory and renaming it into place. An existing scene is replaced only
/// with `force`.
pub fn save_scene(root: &Path, scene: &Scene, force: bool) -> Result<()> {
    scene.check_structure()?;
    let parent = band_dir(root, scene.band);
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let target = parent.join(&scene.id);
    if target.exists() && !force {
        return Err(Error::AlreadyExists(target));
    }
    let staging = parent.join(format!(".{}.tmp-{}", scene.id, std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;

    let write_all = || -> Result<()> {
        for (i, v) in scene.views.iter().enumerate() {
            write_image16(&staging.join(format!("LR{i:03}.png")), &v.image)?;
            write_status_map(&staging.join(format!("QM{i:03}.png")), &v.mask)?;
        }
        if let Some(hr) = &scene.hr {
            write_image16(&staging.join("HR.png"), &hr.image)?;
            write_status_map(&staging.join("SM.png"), &hr.mask)?;
        }
        Ok(())
    };
    if let Err(e) = write_all() {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if target.exists() {
        fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
    }
    fs::rename(&staging, &target).map_err(|e| Error::io(&target, e))
}

fn parse_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(parse_err(
            path,
            format!(
                "expected header {:?}, found {:?}",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(())
}

/// Published reference-index row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub band: Band,
    pub index: usize,
}

#[derive(Serialize, Deserialize)]
struct IndexRow {
    scene_id: String,
    band: Band,
    index: usize,
}

/// Writes `scene_id,band,index` rows sorted by scene id.
pub fn write_reference_csv(path: &Path, entries: &BTreeMap<String, IndexEntry>) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut wtr = csv::Writer::from_writer(&mut out);
        wtr.write_record(["scene_id", "band", "index"])
            .map_err(|e| Error::csv(path, e))?;
        for (id, e) in entries {
            wtr.write_record([id.as_str(), e.band.as_str(), &e.index.to_string()])
                .map_err(|e| Error::csv(path, e))?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
    }
    write_bytes(path, &out)
}

pub fn read_reference_csv(path: &Path) -> Result<BTreeMap<String, IndexEntry>> {
    let mut rdr = open_reader(path)?;
    check_header(path, &mut rdr, &["scene_id", "band", "index"])?;
    let mut map = BTreeMap::new();
    for row in rdr.deserialize::<IndexRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        if map.contains_key(&row.scene_id) {
            return Err(parse_err(path, format!("duplicate scene_id {}", row.scene_id)));
        }
        map.insert(
            row.scene_id,
            IndexEntry {
                band: row.band,
                index: row.index,
            },
        );
    }
    Ok(map)
}

/// Ground-truth manifest written next to a synthetic corpus.
pub const TRUTH_FILE: &str = "truth.csv";

pub fn write_truth_csv(path: &Path, truth: &BTreeMap<String, usize>) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut wtr = csv::Writer::from_writer(&mut out);
        wtr.write_record(["scene_id", "true_ref_index"])
            .map_err(|e| Error::csv(path, e))?;
        for (id, idx) in truth {
            wtr.write_record([id.as_str(), &idx.to_string()])
                .map_err(|e| Error::csv(path, e))?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
    }
    write_bytes(path, &out)
}

/// Reads any scene → index table: the truth manifest, a published index
/// list, or a decisions file. The index column is the first of
/// `true_ref_index`, `index`, `chosen_index` present.
pub fn read_index_map(path: &Path) -> Result<BTreeMap<String, usize>> {
    let mut rdr = open_reader(path)?;
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let id_col = col("scene_id").ok_or_else(|| parse_err(path, "no scene_id column"))?;
    let idx_col = ["true_ref_index", "index", "chosen_index"]
        .iter()
        .find_map(|c| col(c))
        .ok_or_else(|| parse_err(path, "no index column"))?;
    let mut map = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let id = rec.get(id_col).unwrap_or_default().to_string();
        let idx: usize = rec
            .get(idx_col)
            .unwrap_or_default()
            .parse()
            .map_err(|_| parse_err(path, format!("bad index on data row {}", line + 1)))?;
        if map.insert(id.clone(), idx).is_some() {
            return Err(parse_err(path, format!("duplicate scene_id {id}")));
        }
    }
    Ok(map)
}

/// Reference decisions as `scene_id,band,method,chosen_index`, in the given order.
pub fn decisions_csv(decisions: &[(Band, &ReferenceDecision)]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut wtr = csv::Writer::from_writer(&mut out);
        wtr.write_record(["scene_id", "band", "method", "chosen_index"])
            .expect("in-memory write");
        for (band, d) in decisions {
            wtr.write_record([
                d.scene_id.as_str(),
                band.as_str(),
                d.method.as_str(),
                &d.chosen.to_string(),
            ])
            .expect("in-memory write");
        }
        wtr.flush().expect("in-memory write");
    }
    out
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}
