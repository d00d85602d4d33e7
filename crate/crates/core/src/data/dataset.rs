use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{decode_image, preprocess};
use super::mask::{apply_mask, read_masks, MASKS_FILE};
use super::{classify_count, DensityClass, LabeledExample};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "labels.csv";
pub const MANIFEST_HEADER: &str = "image_id,camera_id,capture_time,car_count,label";
const MANIFEST_VERSION_LINE: &str = "# format_version=1";
const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// One line of `labels.csv`. `label` and `car_count` may both be blank for
/// frames that were downloaded but not yet labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_id: String,
    pub camera_id: String,
    pub capture_time: String,
    pub car_count: Option<f64>,
    pub label: Option<DensityClass>,
}

/// File-system safe stem for a capture timestamp.
pub fn image_stem(capture_time: &str) -> String {
    capture_time
        .chars()
        .map(|c| match c {
            ':' => '-',
            '/' | '\\' | ' ' => '_',
            c => c,
        })
        .collect()
}

/// `<root>/images/<camera_id>/<stem>.<ext>` for the first extension that exists.
pub fn image_path(root: &Path, camera_id: &str, capture_time: &str) -> Option<PathBuf> {
    let dir = root.join("images").join(camera_id);
    let stem = image_stem(capture_time);
    IMAGE_EXTENSIONS.iter().map(|ext| dir.join(format!("{stem}.{ext}"))).find(|p| p.is_file())
}

fn parse_row(record: &csv::StringRecord) -> std::result::Result<ManifestRow, String> {
    if record.len() != 5 {
        return Err(format!("expected 5 fields, found {}", record.len()));
    }
    let field = |i: usize| record.get(i).unwrap_or("").trim();
    let car_count = match field(3) {
        "" => None,
        s => {
            let v: f64 = s.parse().map_err(|_| format!("car_count {s:?} is not a number"))?;
            if v.is_nan() || v < 0.0 || (v * 2.0).fract() != 0.0 {
                return Err(format!("car_count {s} must be a non-negative multiple of 0.5"));
            }
            Some(v)
        }
    };
    let label = match field(4) {
        "" => None,
        s => Some(s.parse::<DensityClass>().map_err(|e| e.to_string())?),
    };
    if field(0).is_empty() || field(1).is_empty() || field(2).is_empty() {
        return Err("image_id, camera_id and capture_time are required".into());
    }
    Ok(ManifestRow {
        image_id: field(0).to_string(),
        camera_id: field(1).to_string(),
        capture_time: field(2).to_string(),
        car_count,
        label,
    })
}

/// Parses `labels.csv`. Returns the rows that parsed and one message per row
/// that did not (`line N: ...`).
pub fn read_manifest(path: &Path) -> Result<(Vec<ManifestRow>, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut header_line = None;
    for (n, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("format_version=") {
                if v.trim() != "1" {
                    return Err(Error::format(path, format!("unsupported format_version {v}")));
                }
            }
            continue;
        }
        if t != MANIFEST_HEADER {
            return Err(Error::format(path, format!("line {}: expected header {MANIFEST_HEADER:?}", n + 1)));
        }
        header_line = Some(n);
        break;
    }
    let Some(header_line) = header_line else {
        return Ok((Vec::new(), Vec::new()));
    };

    let body: String = text.lines().skip(header_line + 1).map(|l| format!("{l}\n")).collect();
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).comment(Some(b'#')).from_reader(body.as_bytes());
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize + header_line + 1).unwrap_or(0);
        match parse_row(&record) {
            Ok(row) => rows.push(row),
            Err(msg) => errors.push(format!("line {line}: {msg}")),
        }
    }
    Ok((rows, errors))
}

/// Atomically replaces `path` with the given rows (write to a sibling
/// temporary file, then rename).
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(".{}.tmp", path.file_name().and_then(|n| n.to_str()).unwrap_or(MANIFEST_FILE)));
    {
        let mut out = Vec::new();
        writeln!(out, "{MANIFEST_VERSION_LINE}").expect("vec write");
        writeln!(out, "{MANIFEST_HEADER}").expect("vec write");
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
        for r in rows {
            w.write_record([
                r.image_id.as_str(),
                r.camera_id.as_str(),
                r.capture_time.as_str(),
                &r.car_count.map(|c| c.to_string()).unwrap_or_default(),
                r.label.map(|l| l.name()).unwrap_or(""),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        drop(w);
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&out).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub height: usize,
    pub width: usize,
    pub grayscale: bool,
    /// Apply the per-camera polygon from `masks.json` after resizing.
    pub apply_masks: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { height: 128, width: 128, grayscale: true, apply_masks: false }
    }
}

#[derive(Debug, Default)]
pub struct LoadReport {
    pub examples: Vec<LabeledExample>,
    /// One message per manifest row that could not be turned into an example.
    pub errors: Vec<String>,
    /// Rows with neither a label nor a car count.
    pub unlabeled: usize,
    pub rows: usize,
}

impl LoadReport {
    pub fn into_result(self) -> Result<Vec<LabeledExample>> {
        if self.errors.is_empty() {
            Ok(self.examples)
        } else {
            Err(Error::InvalidRows(self.errors))
        }
    }
}

/// Loads every labeled manifest row under `root`. Rows that fail (missing or
/// undecodable image, label contradicting the car count, unknown mask)
/// are reported in [`LoadReport::errors`] rather than skipped.
pub fn load_dataset(root: &Path, options: &LoadOptions) -> Result<LoadReport> {
    let (rows, mut errors) = read_manifest(&root.join(MANIFEST_FILE))?;
    let masks: HashMap<String, _> = if options.apply_masks {
        read_masks(&root.join(MASKS_FILE))?.into_iter().map(|m| (m.camera_id.clone(), m)).collect()
    } else {
        HashMap::new()
    };

    let mut report = LoadReport { rows: rows.len() + errors.len(), ..LoadReport::default() };
    for row in rows {
        let tag = format!("{} ({}/{})", row.image_id, row.camera_id, row.capture_time);
        let label = match (row.label, row.car_count) {
            (None, None) => {
                report.unlabeled += 1;
                continue;
            }
            (Some(l), None) => l,
            (l, Some(count)) => {
                let derived = classify_count(count)?;
                if let Some(l) = l.filter(|&l| l != derived) {
                    errors.push(format!("{tag}: label {l} contradicts car_count {count} ({derived})"));
                    continue;
                }
                derived
            }
        };
        let Some(path) = image_path(root, &row.camera_id, &row.capture_time) else {
            errors.push(format!("{tag}: image file missing"));
            continue;
        };
        let raw = match decode_image(&path) {
            Ok(raw) => raw,
            Err(e) => {
                errors.push(format!("{tag}: {e}"));
                continue;
            }
        };
        let mut image = match preprocess(&raw, options.height, options.width, options.grayscale) {
            Ok(t) => t,
            Err(e) => {
                errors.push(format!("{tag}: {e}"));
                continue;
            }
        };
        if options.apply_masks {
            let Some(mask) = masks.get(&row.camera_id) else {
                errors.push(format!("{tag}: no mask for camera"));
                continue;
            };
            let scaled =
                mask.scaled(options.width as f64 / raw.width() as f64, options.height as f64 / raw.height() as f64);
            image = match apply_mask(&image, &scaled) {
                Ok(t) => t,
                Err(e) => {
                    errors.push(format!("{tag}: {e}"));
                    continue;
                }
            };
        }
        report.examples.push(LabeledExample {
            image_id: row.image_id,
            camera_id: row.camera_id,
            capture_time: row.capture_time,
            image,
            label,
            car_count: row.car_count,
        });
    }
    report.errors = errors;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.9, seed: 0 }
    }
}

/// Seeded shuffle, then the first `floor(n · fraction)` items (at least one,
/// at most `n − 1`) become the training half.
pub fn split<T>(items: Vec<T>, spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let n = items.len();
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} example(s)")));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {} outside (0, 1)", spec.train_fraction)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let cut = ((n as f64 * spec.train_fraction).floor() as usize).clamp(1, n - 1);
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take =
        |idx: &[usize]| -> Vec<T> { idx.iter().map(|&i| slots[i].take().expect("each index once")).collect() };
    let train = take(&order[..cut]);
    let validation = take(&order[cut..]);
    Ok((train, validation))
}
