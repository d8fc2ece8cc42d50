//! HTTP client for an external neural renderer.
//!
//! Wire format: `POST {url}/render` with `{"weights", "text", "sample_rate"}`,
//! answered by a WAVE body and an optional `X-Style-Embedding` header of
//! comma-separated reals. A 503 is retried once after a pause.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use gsp_core::{AudioBuffer, RendererIdentity, DEFAULT_SAMPLE_RATE};
use serde::Serialize;

use crate::error::{RenderError, Result};
use crate::renderer::{Rendered, Renderer};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const BUSY_RETRY_DELAY: Duration = Duration::from_secs(1);
pub const EMBEDDING_HEADER: &str = "X-Style-Embedding";

#[derive(Serialize)]
struct RenderRequest<'a> {
    weights: &'a [f64],
    text: &'a str,
    sample_rate: u32,
}

type CacheKey = (Vec<u64>, String);

pub struct ExternalRenderer {
    agent: ureq::Agent,
    endpoint: String,
    base_url: String,
    dimensions: usize,
    retry_delay: Duration,
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    slot_freed: Condvar,
    cache: Mutex<HashMap<CacheKey, Rendered>>,
    requests: AtomicUsize,
}

impl ExternalRenderer {
    pub fn new(url: &str, dimensions: usize) -> Self {
        Self::with_settings(url, dimensions, DEFAULT_TIMEOUT, DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_settings(url: &str, dimensions: usize, timeout: Duration, max_in_flight: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base_url = url.trim_end_matches('/').to_string();
        ExternalRenderer {
            agent,
            endpoint: format!("{base_url}/render"),
            base_url,
            dimensions,
            retry_delay: BUSY_RETRY_DELAY,
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            slot_freed: Condvar::new(),
            cache: Mutex::default(),
            requests: AtomicUsize::new(0),
        }
    }

    /// Pause before retrying a busy service.
    pub fn retry_delay(mut self, delay: Duration) -> Self {
        self.retry_delay = delay;
        self
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    fn key(weights: &[f64], text: &str) -> CacheKey {
        (weights.iter().map(|w| w.to_bits()).collect(), text.to_string())
    }

    fn acquire(&self) {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max_in_flight {
            n = self.slot_freed.wait(n).unwrap();
        }
        *n += 1;
    }

    fn release(&self) {
        *self.in_flight.lock().unwrap() -= 1;
        self.slot_freed.notify_one();
    }

    fn request(&self, weights: &[f64], text: &str) -> Result<Rendered> {
        let body = serde_json::to_vec(&RenderRequest {
            weights,
            text,
            sample_rate: DEFAULT_SAMPLE_RATE,
        })
        .expect("request serializes");
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.requests.fetch_add(1, Ordering::Relaxed);
            let mut response = self
                .agent
                .post(&self.endpoint)
                .header("Content-Type", "application/json")
                .send(&body[..])
                .map_err(|e| RenderError::Backend(e.to_string()))?;
            let status = response.status().as_u16();
            if status == 503 {
                if attempt == 1 {
                    thread::sleep(self.retry_delay);
                    continue;
                }
                return Err(RenderError::Busy);
            }
            let bytes = response
                .body_mut()
                .read_to_vec()
                .map_err(|e| RenderError::Backend(e.to_string()))?;
            if status != 200 {
                let detail = String::from_utf8_lossy(&bytes);
                return Err(RenderError::Backend(format!("status {status}: {}", detail.trim())));
            }
            let embedding = match response.headers().get(EMBEDDING_HEADER) {
                Some(v) => Some(parse_embedding(
                    v.to_str()
                        .map_err(|_| RenderError::Backend("embedding header is not text".into()))?,
                )?),
                None => None,
            };
            return Ok(Rendered {
                audio: decode_audio(&bytes)?,
                embedding,
            });
        }
    }
}

/// Decode a response body, insisting on the shared sample rate.
pub fn decode_audio(bytes: &[u8]) -> Result<AudioBuffer> {
    let audio = AudioBuffer::from_wav_bytes(bytes).map_err(|e| RenderError::Backend(format!("not audio: {e}")))?;
    if audio.sample_rate != DEFAULT_SAMPLE_RATE {
        return Err(RenderError::Backend(format!(
            "sample rate {} (expected {DEFAULT_SAMPLE_RATE})",
            audio.sample_rate
        )));
    }
    Ok(audio)
}

pub fn parse_embedding(header: &str) -> Result<Vec<f64>> {
    header
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| RenderError::Backend(format!("bad embedding value {s:?}")))
        })
        .collect()
}

impl Renderer for ExternalRenderer {
    fn identity(&self) -> RendererIdentity {
        RendererIdentity::new(format!("external:{}", self.base_url), None)
    }

    fn dimensions(&self) -> usize {
        self.dimensions
    }

    fn render(&self, weights: &[f64], sentence: &str) -> Result<Rendered> {
        if weights.len() != self.dimensions {
            return Err(RenderError::Shape {
                expected: self.dimensions,
                got: weights.len(),
            });
        }
        let key = Self::key(weights, sentence);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        self.acquire();
        let result = self.request(weights, sentence);
        self.release();
        let rendered = result?;
        self.cache.lock().unwrap().insert(key, rendered.clone());
        Ok(rendered)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_header() {
        assert_eq!(parse_embedding("0.5, -1,2e-3").unwrap(), vec![0.5, -1.0, 0.002]);
        assert!(parse_embedding("1,,2").is_err());
        assert!(parse_embedding("nan").is_err());
    }

    #[test]
    fn wrong_length_never_touches_the_network() {
        // Nothing listens on port 9; a request would fail with a different error.
        let r = ExternalRenderer::new("http://127.0.0.1:9", 10);
        assert!(matches!(
            r.render(&[0.0; 3], "x"),
            Err(RenderError::Shape { expected: 10, got: 3 })
        ));
        assert_eq!(r.requests(), 0);
    }
}
