//! The three-camera feed fixture and the ingest properties checked on it.
//! Everything here runs against in-memory sources.

use std::path::Path;

use traffic_density::data::{read_manifest, MANIFEST_FILE};
use traffic_density::ingest::{parse_feed, poll_once, FeedSource, FixtureFeed, PollSummary};
use traffic_density::Result;

pub const FEED: &str = include_str!("../fixtures/traffic_images.json");

pub fn frame_bytes(seed: u8) -> Vec<u8> {
    let img = image::GrayImage::from_fn(8, 6, |x, y| image::Luma([seed.wrapping_add((x * 7 + y * 3) as u8)]));
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

pub fn fixture_feed() -> FixtureFeed {
    let (entries, _) = parse_feed(FEED).unwrap();
    let images = entries.iter().enumerate().map(|(i, e)| (e.image_url.clone(), frame_bytes(i as u8))).collect();
    FixtureFeed::new(vec![FEED.to_string()], images)
}

pub fn files_under(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    if let Ok(rd) = std::fs::read_dir(dir) {
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(files_under(&p));
            } else {
                out.push(p.display().to_string());
            }
        }
    }
    out.sort();
    out
}

/// Serves the feed but dies on the second image download.
pub struct Crashing {
    inner: FixtureFeed,
    downloads: usize,
}

impl FeedSource for Crashing {
    fn fetch_feed(&mut self) -> Result<String> {
        self.inner.fetch_feed()
    }

    fn fetch_image(&mut self, url: &str) -> Result<Vec<u8>> {
        self.downloads += 1;
        if self.downloads == 2 {
            panic!("simulated crash");
        }
        self.inner.fetch_image(url)
    }
}

/// A second poll of the same feed downloads and writes nothing.
pub fn replay_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut feed = fixture_feed();
    poll_once(&mut feed, dir.path(), None).unwrap();
    let manifest = dir.path().join(MANIFEST_FILE);
    let before = (std::fs::read(&manifest).unwrap(), files_under(dir.path()));
    let modified = std::fs::metadata(&manifest).unwrap().modified().unwrap();

    let s = poll_once(&mut feed, dir.path(), None).unwrap();
    assert_eq!(s, PollSummary { fetched: 0, skipped: 3, failed: 0, malformed: 0 });
    assert_eq!((std::fs::read(&manifest).unwrap(), files_under(dir.path())), before);
    assert_eq!(std::fs::metadata(&manifest).unwrap().modified().unwrap(), modified);
    assert_eq!(feed.image_calls, 3, "no second download");
}

/// A crash mid-poll leaves the manifest intact; the rerun completes it.
pub fn crash_then_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let mut feed = fixture_feed();
    // one earlier poll of a single camera
    poll_once(&mut feed, dir.path(), Some(&["2703".to_string()])).unwrap();
    let manifest = dir.path().join(MANIFEST_FILE);
    let committed = std::fs::read(&manifest).unwrap();
    // a torn temporary file from some earlier interrupted write
    std::fs::write(dir.path().join(format!(".{MANIFEST_FILE}.tmp")), b"image_id,cam").unwrap();

    let mut crashing = Crashing { inner: fixture_feed(), downloads: 0 };
    let root = dir.path().to_path_buf();
    let crashed = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| poll_once(&mut crashing, &root, None)));
    assert!(crashed.is_err());

    // the committed manifest is intact and parseable
    assert_eq!(std::fs::read(&manifest).unwrap(), committed);
    let (rows, errors) = read_manifest(&manifest).unwrap();
    assert!(errors.is_empty());
    assert_eq!(rows.len(), 1);

    // the frame saved before the crash is adopted, not downloaded again
    let mut feed = fixture_feed();
    let s = poll_once(&mut feed, dir.path(), None).unwrap();
    assert_eq!(s, PollSummary { fetched: 2, skipped: 1, failed: 0, malformed: 0 });
    assert_eq!(feed.image_calls, 1);
    let (rows, _) = read_manifest(&manifest).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(files_under(&dir.path().join("images")).len(), 3);

    let again = poll_once(&mut feed, dir.path(), None).unwrap();
    assert_eq!(again.fetched, 0);
}
