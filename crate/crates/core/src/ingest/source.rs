use std::collections::HashMap;
use std::time::Duration;

use crate::error::{Error, Result};

pub const DEFAULT_BASE_URL: &str = "https://api.data.gov.sg";
pub const FEED_PATH: &str = "/v1/transport/traffic-images";
/// Environment variable overriding the feed base URL.
pub const BASE_URL_ENV: &str = "TRAFFIC_FEED_BASE_URL";

/// Where feed payloads and images come from.
pub trait FeedSource {
    /// Raw JSON of the current feed.
    fn fetch_feed(&mut self) -> Result<String>;
    fn fetch_image(&mut self, url: &str) -> Result<Vec<u8>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles each time.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn run<T>(&self, what: &str, mut f: impl FnMut() -> Result<T>) -> Result<T> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match f() {
                Ok(v) => return Ok(v),
                Err(e) if attempt >= self.attempts.max(1) => {
                    return Err(Error::Http(format!("{what}: giving up after {attempt} attempts: {e}")));
                }
                Err(e) => {
                    log::warn!("{what}: attempt {attempt} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

/// Live HTTP client for the traffic-images endpoint.
pub struct HttpFeed {
    base_url: String,
    agent: ureq::Agent,
    pub retry: RetryPolicy,
}

impl HttpFeed {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        HttpFeed {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent: config.into(),
            retry: RetryPolicy::default(),
        }
    }

    /// Base URL from the flag, else the environment, else the public API.
    pub fn resolve_base_url(flag: Option<&str>) -> String {
        flag.map(str::to_string)
            .or_else(|| std::env::var(BASE_URL_ENV).ok().filter(|s| !s.is_empty()))
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_string())
    }

    pub fn feed_url(&self) -> String {
        format!("{}{FEED_PATH}", self.base_url)
    }

    fn get(&self, url: &str) -> Result<Vec<u8>> {
        let mut resp = self.agent.get(url).call().map_err(|e| Error::Http(format!("GET {url}: {e}")))?;
        resp.body_mut().read_to_vec().map_err(|e| Error::Http(format!("GET {url}: reading body: {e}")))
    }
}

impl FeedSource for HttpFeed {
    fn fetch_feed(&mut self) -> Result<String> {
        let url = self.feed_url();
        let bytes = self.retry.run(&url, || self.get(&url))?;
        String::from_utf8(bytes).map_err(|e| Error::Http(format!("feed is not UTF-8: {e}")))
    }

    fn fetch_image(&mut self, url: &str) -> Result<Vec<u8>> {
        self.retry.run(url, || self.get(url))
    }
}

/// Recorded payloads replayed in order (the last one repeats) with images
/// served from memory.
#[derive(Debug, Clone, Default)]
pub struct FixtureFeed {
    pub payloads: Vec<String>,
    pub images: HashMap<String, Vec<u8>>,
    pub feed_calls: usize,
    pub image_calls: usize,
}

impl FixtureFeed {
    pub fn new(payloads: Vec<String>, images: HashMap<String, Vec<u8>>) -> Self {
        FixtureFeed { payloads, images, ..FixtureFeed::default() }
    }
}

impl FeedSource for FixtureFeed {
    fn fetch_feed(&mut self) -> Result<String> {
        let i = self.feed_calls.min(self.payloads.len().saturating_sub(1));
        self.feed_calls += 1;
        self.payloads.get(i).cloned().ok_or_else(|| Error::Http("fixture has no payloads".into()))
    }

    fn fetch_image(&mut self, url: &str) -> Result<Vec<u8>> {
        self.image_calls += 1;
        self.images.get(url).cloned().ok_or_else(|| Error::Http(format!("GET {url}: 404")))
    }
}
