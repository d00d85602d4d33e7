//! Ingests a recorded camera feed served from a loopback HTTP server, twice.
//! The second pass finds nothing new.

use std::collections::HashMap;
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use traffic_density::data::MANIFEST_FILE;
use traffic_density::ingest::{poll_loop, FixtureResponse, FixtureServer, HttpFeed, LoopConfig, FEED_PATH};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let server = FixtureServer::start(HashMap::new())?;
    let mut cameras = Vec::new();
    for (i, id) in ["1701", "2703", "4713"].iter().enumerate() {
        let path = format!("/frames/{id}.png");
        let img = image::GrayImage::from_fn(16, 12, |x, y| image::Luma([(x * 9 + y * 5 + i as u32 * 40) as u8]));
        let mut bytes = std::io::Cursor::new(Vec::new());
        img.write_to(&mut bytes, image::ImageFormat::Png)?;
        server.set_route(&path, FixtureResponse::ok("image/png", bytes.into_inner()));
        cameras.push(serde_json::json!({
            "camera_id": id,
            "image": format!("{}{path}", server.base_url()),
            "timestamp": format!("2024-05-02T08:00:0{i}+08:00"),
            "image_metadata": {"width": 16, "height": 12},
        }));
    }
    let feed = serde_json::json!({"items": [{"timestamp": "2024-05-02T08:00:05+08:00", "cameras": cameras}]});
    server.set_route(FEED_PATH, FixtureResponse::ok("application/json", feed.to_string()));

    let root = std::env::temp_dir().join(format!("feed_replay_{}", std::process::id()));
    let mut client = HttpFeed::new(server.base_url(), Duration::from_secs(5));
    let cfg = LoopConfig { interval: Duration::from_millis(100), max_consecutive_failures: 3, max_ticks: Some(2) };
    let summary = poll_loop(&mut client, &root, None, &cfg, &AtomicBool::new(false))?;
    println!("{} polls: {:?}", summary.ticks, summary.totals);
    print!("{}", std::fs::read_to_string(root.join(MANIFEST_FILE))?);
    std::fs::remove_dir_all(&root)?;
    Ok(())
}
