//! The built-in parametric synthesizer.
//!
//! A Rosenberg glottal-flow-derivative pulse train (with a polyBLEP
//! correction at glottal closure to keep aliasing low) runs continuously
//! through the utterance. Each syllable is cut from it with a raised-cosine
//! window, filtered by a cascade of three Klatt resonators for its vowel, and
//! overlap-added; neighbouring syllables of a word crossfade across the
//! 10 ms ramps, words are separated by short pauses.

use std::f64::consts::PI;

use gsp_core::AudioBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::prosody::ProsodyParams;
use crate::score::{SentenceScore, VowelClass, FORMANT_BANDWIDTHS};

const RAMP_SECS: f64 = 0.010;
const WORD_GAP_SECS: f64 = 0.040;
const EDGE_PAD_SECS: f64 = 0.030;
/// Peak level each syllable is normalized to before windowing.
const SYLLABLE_PEAK: f64 = 0.5;
const PEAK_LIMIT: f64 = 0.95;
/// Rosenberg opening and closing phases as fractions of a cycle.
const OPEN_PHASE: f64 = 0.40;
const CLOSE_PHASE: f64 = 0.16;

struct Segment {
    /// Window start and end in samples.
    start: usize,
    end: usize,
    vowel: VowelClass,
}

struct Layout {
    segments: Vec<Segment>,
    /// Syllable centres (s) and pitch offsets (st) for the intonation curve.
    anchors: Vec<(f64, f64)>,
    total: usize,
    /// Voiced span in seconds, for slope terms centred on its midpoint.
    voiced: (f64, f64),
}

fn ramp_samples(sr: f64) -> usize {
    2 * ((RAMP_SECS * sr / 2.0).round() as usize)
}

fn layout(score: &SentenceScore, rate: f64, sr: f64) -> Layout {
    let half = ramp_samples(sr) / 2;
    let mut t = EDGE_PAD_SECS;
    let mut segments = Vec::with_capacity(score.syllables.len());
    let mut anchors = Vec::with_capacity(score.syllables.len());
    let n = score.syllables.len();
    for (i, syl) in score.syllables.iter().enumerate() {
        if syl.word_initial && i > 0 {
            t += WORD_GAP_SECS / rate;
        }
        let dur = syl.base_duration / rate;
        let word_final = i + 1 == n || score.syllables[i + 1].word_initial;
        // interior boundaries overlap by one ramp so the two windows sum to 1
        let a = (t * sr).round() as usize;
        let b = ((t + dur) * sr).round() as usize;
        segments.push(Segment {
            start: if syl.word_initial { a } else { a - half },
            end: if word_final { b } else { b + half },
            vowel: syl.vowel,
        });
        anchors.push((t + dur / 2.0, syl.base_pitch_offset));
        t += dur;
    }
    let voiced = (EDGE_PAD_SECS, t);
    Layout {
        segments,
        anchors,
        total: ((t + EDGE_PAD_SECS) * sr).round() as usize,
        voiced,
    }
}

/// Smooth (cosine-eased) interpolation between anchors, constant outside.
/// Queried at increasing times, so it keeps its place between calls.
struct Intonation<'a> {
    anchors: &'a [(f64, f64)],
    next: usize,
}

impl<'a> Intonation<'a> {
    fn new(anchors: &'a [(f64, f64)]) -> Self {
        Intonation { anchors, next: 0 }
    }

    fn at(&mut self, t: f64) -> f64 {
        let a = self.anchors;
        while self.next < a.len() && t > a[self.next].0 {
            self.next += 1;
        }
        if self.next == 0 {
            return a[0].1;
        }
        if self.next == a.len() {
            return a[a.len() - 1].1;
        }
        let (t0, v0) = a[self.next - 1];
        let (t1, v1) = a[self.next];
        let u = (t - t0) / (t1 - t0);
        let e = 0.5 - 0.5 * (PI * u).cos();
        v0 + e * (v1 - v0)
    }
}

/// Rosenberg flow derivative at phase `p` in [0, 1), normalized to unit
/// negative peak.
fn flow_derivative(p: f64) -> f64 {
    let v = if p < OPEN_PHASE {
        (PI / (2.0 * OPEN_PHASE)) * (PI * p / OPEN_PHASE).sin()
    } else if p < OPEN_PHASE + CLOSE_PHASE {
        -(PI / (2.0 * CLOSE_PHASE)) * (PI * (p - OPEN_PHASE) / (2.0 * CLOSE_PHASE)).sin()
    } else {
        0.0
    };
    v * (2.0 * CLOSE_PHASE / PI)
}

/// Height of the upward jump at closure, in the units of [`flow_derivative`].
const CLOSURE_JUMP: f64 = 1.0;

fn poly_blep(t: f64, dt: f64) -> f64 {
    if t < dt {
        let x = t / dt;
        2.0 * x - x * x - 1.0
    } else if t > 1.0 - dt {
        let x = (t - 1.0) / dt;
        x * x + 2.0 * x + 1.0
    } else {
        0.0
    }
}

/// Pitch is computed every `CONTROL_HOP` samples and interpolated linearly
/// in between.
const CONTROL_HOP: usize = 32;

/// F0 in Hz (before jitter) at control points `0, HOP, 2*HOP, ...` covering
/// `total` samples.
fn f0_track(params: &ProsodyParams, lay: &Layout, sr: f64) -> Vec<f64> {
    let mid = 0.5 * (lay.voiced.0 + lay.voiced.1);
    let mut contour = Intonation::new(&lay.anchors);
    (0..=lay.total.div_ceil(CONTROL_HOP))
        .map(|k| {
            let t = (k * CONTROL_HOP) as f64 / sr;
            let mut st = contour.at(t) + params.f0_slope * (t - mid);
            if params.vibrato_depth != 0.0 {
                st += params.vibrato_depth * (2.0 * PI * params.vibrato_rate * t).sin();
            }
            params.f0_mean * (st / 12.0).exp2()
        })
        .collect()
}

/// Glottal source for the whole utterance.
fn source(params: &ProsodyParams, lay: &Layout, sr: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let track = f0_track(params, lay, sr);
    let mut out = Vec::with_capacity(lay.total);
    let mut phase = 0.0f64;
    let mut jitter = 1.0;
    let mut amp = 1.0;
    for n in 0..lay.total {
        let (k, r) = (n / CONTROL_HOP, n % CONTROL_HOP);
        let u = r as f64 / CONTROL_HOP as f64;
        let f0 = (track[k] + u * (track[k + 1] - track[k])) * jitter;
        let dt = (f0 / sr).min(0.5);
        let closure = phase - (OPEN_PHASE + CLOSE_PHASE);
        let closure = if closure < 0.0 { closure + 1.0 } else { closure };
        let v = flow_derivative(phase) + 0.5 * CLOSURE_JUMP * poly_blep(closure, dt);
        out.push(amp * v);
        phase += dt;
        if phase >= 1.0 {
            phase -= 1.0;
            jitter = 1.0 + params.jitter_depth * rng.random_range(-1.0..1.0);
            amp = 1.0 + params.shimmer_depth * rng.random_range(-1.0..1.0);
        }
    }
    out
}

/// Cascade of three two-pole resonators with unit gain at DC.
struct Resonators {
    coef: [(f64, f64, f64); 3],
    state: [(f64, f64); 3],
}

impl Resonators {
    fn new(vowel: VowelClass, sr: f64) -> Self {
        let f = vowel.formants();
        let coef = std::array::from_fn(|k| {
            let r = (-PI * FORMANT_BANDWIDTHS[k] / sr).exp();
            let c = -r * r;
            let b = 2.0 * r * (2.0 * PI * f[k] / sr).cos();
            (1.0 - b - c, b, c)
        });
        Resonators {
            coef,
            state: [(0.0, 0.0); 3],
        }
    }

    fn step(&mut self, mut x: f64) -> f64 {
        for ((a, b, c), (y1, y2)) in self.coef.iter().zip(self.state.iter_mut()) {
            let y = a * x + b * *y1 + c * *y2;
            *y2 = *y1;
            *y1 = y;
            x = y;
        }
        x
    }
}

fn window(i: usize, len: usize, ramp: usize) -> f64 {
    if ramp == 0 {
        return 1.0;
    }
    let edge = i.min(len - 1 - i);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * (edge as f64 + 0.5) / ramp as f64).cos()
    }
}

/// Render `score` with already-clamped `params`. `seed` drives the
/// cycle-level perturbations.
pub fn synthesize(params: &ProsodyParams, score: &SentenceScore, sample_rate: u32, seed: u64) -> AudioBuffer {
    let sr = sample_rate as f64;
    let lay = layout(score, params.rate, sr);
    let src = source(params, &lay, sr, seed);
    let ramp = ramp_samples(sr);
    let mid = 0.5 * (lay.voiced.0 + lay.voiced.1);

    // 10^(slope * (t - mid) / 20), by a geometric recurrence
    let ratio = 10f64.powf(params.intensity_slope / (20.0 * sr));
    let mut g = 10f64.powf(-params.intensity_slope * mid / 20.0);
    let gain: Vec<f64> = (0..lay.total)
        .map(|_| {
            let v = g;
            g *= ratio;
            v
        })
        .collect();

    let mut out = vec![0.0f64; lay.total];
    let mut seg_buf = Vec::new();
    for seg in &lay.segments {
        let end = seg.end.min(lay.total);
        if end <= seg.start {
            continue;
        }
        let mut filt = Resonators::new(seg.vowel, sr);
        seg_buf.clear();
        seg_buf.extend(src[seg.start..end].iter().map(|&x| filt.step(x)));
        let len = seg_buf.len();
        let r = ramp.min(len / 2);
        let peak = seg_buf[r..len - r].iter().fold(0.0f64, |m, y| m.max(y.abs()));
        let norm = if peak > 0.0 { SYLLABLE_PEAK / peak } else { 0.0 };
        for (i, &y) in seg_buf.iter().enumerate() {
            out[seg.start + i] += y * norm * window(i, len, r) * gain[seg.start + i];
        }
    }

    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if peak > PEAK_LIMIT { PEAK_LIMIT / peak } else { 1.0 };
    let samples = out.into_iter().map(|x| (x * scale) as f32).collect();
    AudioBuffer::new(samples, sample_rate).expect("synthesis yields finite samples")
}
