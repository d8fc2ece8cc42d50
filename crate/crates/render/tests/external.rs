use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use gsp_core::{AudioBuffer, DEFAULT_SAMPLE_RATE};
use gsp_render::{ExternalRenderer, MemoryStore, RenderError, Renderer, StimulusCache};

#[derive(Clone)]
struct Reply {
    status: u16,
    headers: Vec<(&'static str, String)>,
    body: Vec<u8>,
    delay: Duration,
}

impl Reply {
    fn wav(audio: &AudioBuffer) -> Self {
        Reply {
            status: 200,
            headers: vec![("Content-Type", "audio/wav".into())],
            body: audio.to_wav_bytes(),
            delay: Duration::ZERO,
        }
    }

    fn status(status: u16) -> Self {
        Reply {
            status,
            headers: vec![],
            body: b"nope".to_vec(),
            delay: Duration::ZERO,
        }
    }

    fn header(mut self, k: &'static str, v: &str) -> Self {
        self.headers.push((k, v.to_string()));
        self
    }

    fn after(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

/// Scripted HTTP server: pops one reply per request, falling back to the
/// last one when the script runs out.
struct Mock {
    url: String,
    bodies: Arc<Mutex<Vec<serde_json::Value>>>,
    paths: Arc<Mutex<Vec<String>>>,
    peak_concurrency: Arc<AtomicUsize>,
}

fn mock(script: Vec<Reply>) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let script = Arc::new(Mutex::new(VecDeque::from(script)));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let paths = Arc::new(Mutex::new(Vec::new()));
    let active = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    {
        let (bodies, paths, peak) = (bodies.clone(), paths.clone(), peak.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let (script, bodies, paths, active, peak) =
                    (script.clone(), bodies.clone(), paths.clone(), active.clone(), peak.clone());
                thread::spawn(move || {
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    paths.lock().unwrap().push(line.split_whitespace().nth(1).unwrap_or("").to_string());
                    let mut len = 0;
                    loop {
                        let mut h = String::new();
                        reader.read_line(&mut h).unwrap();
                        if h.trim().is_empty() {
                            break;
                        }
                        if let Some((k, v)) = h.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                len = v.trim().parse().unwrap();
                            }
                        }
                    }
                    let mut body = vec![0; len];
                    reader.read_exact(&mut body).unwrap();
                    bodies.lock().unwrap().push(serde_json::from_slice(&body).unwrap());
                    let reply = {
                        let mut s = script.lock().unwrap();
                        if s.len() > 1 {
                            s.pop_front().unwrap()
                        } else {
                            s.front().unwrap().clone()
                        }
                    };
                    thread::sleep(reply.delay);
                    let mut head = format!(
                        "HTTP/1.1 {} X\r\nContent-Length: {}\r\nConnection: close\r\n",
                        reply.status,
                        reply.body.len()
                    );
                    for (k, v) in &reply.headers {
                        head.push_str(&format!("{k}: {v}\r\n"));
                    }
                    head.push_str("\r\n");
                    let _ = stream.write_all(head.as_bytes());
                    let _ = stream.write_all(&reply.body);
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
    }
    Mock {
        url,
        bodies,
        paths,
        peak_concurrency: peak,
    }
}

fn silent_clip() -> AudioBuffer {
    AudioBuffer::new(vec![0.0; 10], DEFAULT_SAMPLE_RATE).unwrap()
}

fn renderer(m: &Mock) -> ExternalRenderer {
    ExternalRenderer::new(&m.url, 10).retry_delay(Duration::from_millis(50))
}

#[test]
fn sends_the_wire_request_and_accepts_a_tiny_clip() {
    let m = mock(vec![Reply::wav(&silent_clip()).header("X-Style-Embedding", "0.1,0.2,-0.3")]);
    let r = renderer(&m);
    let weights: Vec<f64> = (0..10).map(|i| i as f64 * 0.01).collect();
    let out = r.render(&weights, "Hello there.").unwrap();
    assert_eq!(out.audio.samples.len(), 10);
    assert_eq!(out.embedding, Some(vec![0.1, 0.2, -0.3]));

    assert_eq!(m.paths.lock().unwrap()[0], "/render");
    let body = &m.bodies.lock().unwrap()[0];
    assert_eq!(body["text"], "Hello there.");
    assert_eq!(body["sample_rate"], 22050);
    let sent: Vec<f64> = serde_json::from_value(body["weights"].clone()).unwrap();
    assert_eq!(sent, weights);
}

#[test]
fn missing_embedding_header_is_fine() {
    let m = mock(vec![Reply::wav(&silent_clip())]);
    assert_eq!(renderer(&m).render(&[0.0; 10], "a").unwrap().embedding, None);
}

#[test]
fn repeated_request_is_served_from_cache() {
    let m = mock(vec![Reply::wav(&silent_clip())]);
    let r = renderer(&m);
    let a = r.render(&[0.0; 10], "a").unwrap();
    let b = r.render(&[0.0; 10], "a").unwrap();
    assert_eq!(a, b);
    assert_eq!(r.requests(), 1);
    r.render(&[0.0; 10], "b").unwrap();
    assert_eq!(r.requests(), 2);
}

#[test]
fn busy_service_is_retried_once() {
    let m = mock(vec![Reply::status(503), Reply::wav(&silent_clip())]);
    let r = renderer(&m);
    r.render(&[0.0; 10], "a").unwrap();
    assert_eq!(r.requests(), 2);

    let m = mock(vec![Reply::status(503)]);
    let r = renderer(&m);
    assert!(matches!(r.render(&[0.0; 10], "a"), Err(RenderError::Busy)));
    assert_eq!(r.requests(), 2);
}

#[test]
fn default_retry_waits_a_second() {
    let m = mock(vec![Reply::status(503), Reply::wav(&silent_clip())]);
    let r = ExternalRenderer::new(&m.url, 10);
    let t = Instant::now();
    r.render(&[0.0; 10], "a").unwrap();
    assert!(t.elapsed() >= Duration::from_secs(1));
}

#[test]
fn bad_responses_are_backend_errors() {
    let cases = [
        Reply::status(400),
        Reply {
            body: b"<html>".to_vec(),
            ..Reply::wav(&silent_clip())
        },
        Reply::wav(&AudioBuffer::new(vec![0.0; 10], 16_000).unwrap()),
        Reply::wav(&silent_clip()).header("X-Style-Embedding", "1,x"),
    ];
    for reply in cases {
        let m = mock(vec![reply]);
        let err = renderer(&m).render(&[0.0; 10], "a").unwrap_err();
        assert!(matches!(err, RenderError::Backend(_)), "{err}");
    }
}

#[test]
fn slow_service_times_out() {
    let m = mock(vec![Reply::wav(&silent_clip()).after(Duration::from_secs(2))]);
    let r = ExternalRenderer::with_settings(&m.url, 10, Duration::from_millis(200), 4);
    let t = Instant::now();
    assert!(matches!(r.render(&[0.0; 10], "a"), Err(RenderError::Backend(_))));
    assert!(t.elapsed() < Duration::from_secs(2));
}

#[test]
fn in_flight_requests_are_bounded() {
    let m = mock(vec![Reply::wav(&silent_clip()).after(Duration::from_millis(100))]);
    let r = Arc::new(ExternalRenderer::with_settings(&m.url, 10, Duration::from_secs(5), 2));
    let handles: Vec<_> = (0..6)
        .map(|i| {
            let r = r.clone();
            thread::spawn(move || r.render(&[i as f64 * 0.01; 10], "a").unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(r.requests(), 6);
    assert!(m.peak_concurrency.load(Ordering::SeqCst) <= 2);
}

#[test]
fn works_behind_the_stimulus_cache() {
    let m = mock(vec![Reply::wav(&silent_clip()).header("X-Style-Embedding", "1,2")]);
    let cache = StimulusCache::new(Arc::new(renderer(&m)), Arc::new(MemoryStore::new()));
    let id = cache.ensure(&[0.0; 10], "a").unwrap();
    assert_eq!(cache.embedding(&id), Some(vec![1.0, 2.0]));
    let wav = cache.fetch(&id).unwrap();
    assert_eq!(AudioBuffer::from_wav_bytes(&wav).unwrap().samples.len(), 10);
}
