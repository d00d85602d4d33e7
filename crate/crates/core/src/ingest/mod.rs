//! Traffic-camera feed client: polls the feed, stores new frames under
//! `<root>/images/<camera_id>/<timestamp>.<ext>` and records them in the
//! dataset manifest.

mod fixture;
mod source;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{image_path, image_stem, read_manifest, write_manifest, ManifestRow, MANIFEST_FILE};
use crate::error::{Error, Result};

pub use fixture::{FixtureResponse, FixtureServer};
pub use source::{FeedSource, FixtureFeed, HttpFeed, RetryPolicy, BASE_URL_ENV, DEFAULT_BASE_URL, FEED_PATH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFeedEntry {
    pub camera_id: String,
    pub image_url: String,
    pub timestamp: String,
    pub width: Option<u32>,
    pub height: Option<u32>,
}

impl CameraFeedEntry {
    /// Extension taken from the URL path, `jpg` when it has none we know.
    pub fn extension(&self) -> String {
        let path = self.image_url.split(['?', '#']).next().unwrap_or("");
        let last = path.rsplit('/').next().unwrap_or("");
        match last.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()) {
            Some(e) if matches!(e.as_str(), "jpg" | "jpeg" | "png") => e,
            _ => "jpg".to_string(),
        }
    }

    pub fn image_id(&self) -> String {
        format!("{}_{}", self.camera_id, image_stem(&self.timestamp))
    }
}

/// Reads the feed payload: `items[].cameras[]` with `camera_id`, `image`,
/// `timestamp` and optional `image_metadata.{width,height}`. Entries missing
/// a field are reported and skipped.
pub fn parse_feed(json: &str) -> Result<(Vec<CameraFeedEntry>, Vec<String>)> {
    let root: Value = serde_json::from_str(json)?;
    let items = root
        .get("items")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Http("feed payload has no items array".into()))?;
    let mut entries = Vec::new();
    let mut problems = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let Some(cameras) = item.get("cameras").and_then(Value::as_array) else {
            problems.push(format!("items[{i}]: no cameras array"));
            continue;
        };
        for (j, cam) in cameras.iter().enumerate() {
            let text = |key: &str| match cam.get(key) {
                Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
                Some(Value::Number(n)) => Some(n.to_string()),
                _ => None,
            };
            let dim = |key: &str| {
                cam.get("image_metadata").and_then(|m| m.get(key)).and_then(Value::as_u64).map(|v| v as u32)
            };
            match (text("camera_id"), text("image"), text("timestamp")) {
                (Some(camera_id), Some(image_url), Some(timestamp)) => entries.push(CameraFeedEntry {
                    camera_id,
                    image_url,
                    timestamp,
                    width: dim("width"),
                    height: dim("height"),
                }),
                _ => problems.push(format!("items[{i}].cameras[{j}]: missing camera_id, image or timestamp")),
            }
        }
    }
    Ok((entries, problems))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollSummary {
    pub fetched: usize,
    /// Already present, or filtered out.
    pub skipped: usize,
    /// Image downloads that failed after retries.
    pub failed: usize,
    pub malformed: usize,
}

impl std::ops::AddAssign for PollSummary {
    fn add_assign(&mut self, o: Self) {
        self.fetched += o.fetched;
        self.skipped += o.skipped;
        self.failed += o.failed;
        self.malformed += o.malformed;
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(".{}.tmp", path.file_name().and_then(|n| n.to_str()).unwrap_or("image")));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join(MANIFEST_FILE)
}

/// One poll: fetches the feed and downloads every frame not yet in the
/// manifest. Frames already on disk but missing from the manifest (an
/// interrupted earlier poll) are recorded without downloading again.
pub fn poll_once(source: &mut dyn FeedSource, root: &Path, cameras: Option<&[String]>) -> Result<PollSummary> {
    let payload = source.fetch_feed()?;
    let (entries, problems) = parse_feed(&payload)?;
    let mut summary = PollSummary { malformed: problems.len(), ..PollSummary::default() };
    for p in &problems {
        log::warn!("feed entry skipped: {p}");
    }

    let manifest = manifest_path(root);
    let mut rows = if manifest.is_file() {
        let (rows, errors) = read_manifest(&manifest)?;
        if !errors.is_empty() {
            return Err(Error::InvalidRows(errors));
        }
        rows
    } else {
        Vec::new()
    };
    let mut known: HashSet<(String, String)> =
        rows.iter().map(|r| (r.camera_id.clone(), r.capture_time.clone())).collect();

    let before = rows.len();
    for entry in entries {
        let key = (entry.camera_id.clone(), entry.timestamp.clone());
        if known.contains(&key) || cameras.is_some_and(|c| !c.contains(&entry.camera_id)) {
            summary.skipped += 1;
            continue;
        }
        if image_path(root, &entry.camera_id, &entry.timestamp).is_none() {
            match source.fetch_image(&entry.image_url) {
                Ok(bytes) => {
                    let path = root.join("images").join(&entry.camera_id).join(format!(
                        "{}.{}",
                        image_stem(&entry.timestamp),
                        entry.extension()
                    ));
                    write_atomic(&path, &bytes)?;
                }
                Err(e) => {
                    log::warn!("camera {} at {}: {e}", entry.camera_id, entry.timestamp);
                    summary.failed += 1;
                    continue;
                }
            }
        }
        summary.fetched += 1;
        rows.push(ManifestRow {
            image_id: entry.image_id(),
            camera_id: entry.camera_id,
            capture_time: entry.timestamp,
            car_count: None,
            label: None,
        });
        known.insert(key);
    }
    if rows.len() > before {
        write_manifest(&manifest, &rows)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub interval: Duration,
    /// Consecutive failed polls tolerated before giving up.
    pub max_consecutive_failures: usize,
    /// Stop after this many polls.
    pub max_ticks: Option<usize>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig { interval: Duration::from_secs(20), max_consecutive_failures: 5, max_ticks: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopSummary {
    pub ticks: usize,
    pub failed_polls: usize,
    pub totals: PollSummary,
}

/// Polls every `interval` (measured from the start of each poll) until
/// `stop` is set or `max_ticks` is reached. Returns an error once
/// `max_consecutive_failures` polls in a row have failed.
pub fn poll_loop(
    source: &mut dyn FeedSource,
    root: &Path,
    cameras: Option<&[String]>,
    cfg: &LoopConfig,
    stop: &AtomicBool,
) -> Result<LoopSummary> {
    let mut summary = LoopSummary::default();
    let mut consecutive = 0;
    let start = Instant::now();
    loop {
        if stop.load(Ordering::SeqCst) || cfg.max_ticks.is_some_and(|m| summary.ticks >= m) {
            return Ok(summary);
        }
        match poll_once(source, root, cameras) {
            Ok(s) => {
                consecutive = 0;
                summary.totals += s;
            }
            Err(e) => {
                consecutive += 1;
                summary.failed_polls += 1;
                log::warn!("poll {} failed: {e}", summary.ticks + 1);
                if consecutive >= cfg.max_consecutive_failures {
                    return Err(Error::Http(format!("{consecutive} consecutive polls failed; last: {e}")));
                }
            }
        }
        summary.ticks += 1;
        let next = start + cfg.interval * summary.ticks as u32;
        while Instant::now() < next {
            if stop.load(Ordering::SeqCst) || cfg.max_ticks.is_some_and(|m| summary.ticks >= m) {
                return Ok(summary);
            }
            std::thread::sleep((next - Instant::now()).min(Duration::from_millis(50)));
        }
    }
}
