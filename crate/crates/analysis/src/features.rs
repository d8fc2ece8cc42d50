//! Acoustic features: duration, F0 statistics, jitter (ddp) and shimmer
//! (local).
//!
//! F0 comes from a normalized-autocorrelation tracker. Cycle-level pulse
//! marks are placed inside voiced spans by matching each cycle's waveform
//! against the next one.

use gsp_core::AudioBuffer;
use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchSettings {
    pub frame_secs: f64,
    pub hop_secs: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    pub voicing_threshold: f64,
    /// Frames more than this many dB below the loudest frame are unvoiced.
    pub silence_db: f64,
}

impl Default for PitchSettings {
    fn default() -> Self {
        PitchSettings {
            frame_secs: 0.040,
            hop_secs: 0.010,
            f0_min: 75.0,
            f0_max: 500.0,
            voicing_threshold: 0.45,
            silence_db: 40.0,
        }
    }
}

/// Largest ratio between consecutive periods (or amplitudes) still treated
/// as the same voiced stretch when computing perturbation measures.
const MAX_PERIOD_FACTOR: f64 = 1.3;
const MAX_AMPLITUDE_FACTOR: f64 = 1.6;
/// Cycles quieter than this fraction of the loudest cycle in their voiced
/// span are treated as pauses.
const AMPLITUDE_FLOOR: f64 = 0.1;
/// Candidate lags within this fraction of the best correlation win if they
/// are shorter; guards against picking a subharmonic.
const OCTAVE_TOLERANCE: f64 = 0.95;
/// Samples either side of the correlation estimate searched for the cycle's
/// waveform peak.
const PEAK_SEARCH: usize = 3;
/// Below this peak level (relative to full scale) audio counts as silent.
const SILENCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchFrame {
    pub start: usize,
    /// Frame centre in seconds.
    pub time: f64,
    pub f0: Option<f64>,
    pub strength: f64,
}

/// Per-frame F0 by normalized autocorrelation.
pub fn track_pitch(samples: &[f64], sample_rate: u32, settings: &PitchSettings) -> Vec<PitchFrame> {
    let sr = sample_rate as f64;
    let n = (settings.frame_secs * sr).round() as usize;
    let hop = ((settings.hop_secs * sr).round() as usize).max(1);
    let lag_min = ((sr / settings.f0_max).floor() as usize).max(2);
    let lag_max = (sr / settings.f0_min).ceil() as usize;
    if samples.len() < n || n == 0 {
        return Vec::new();
    }

    let mut cum = Vec::with_capacity(samples.len() + 1);
    cum.push(0.0);
    for &x in samples {
        cum.push(cum.last().unwrap() + x * x);
    }
    let energy = |a: usize, b: usize| {
        let len = samples.len();
        cum[b.min(len)] - cum[a.min(len)]
    };

    let starts: Vec<usize> = (0..).map(|i| i * hop).take_while(|s| s + n <= samples.len()).collect();
    let max_energy = starts
        .iter()
        .map(|&s| energy(s, s + n))
        .fold(0.0f64, f64::max);
    let floor = max_energy * 10f64.powf(-settings.silence_db / 10.0);

    let mut r = vec![0.0; lag_max + 2];
    starts
        .iter()
        .map(|&s| {
            let time = (s as f64 + n as f64 / 2.0) / sr;
            let unvoiced = PitchFrame {
                start: s,
                time,
                f0: None,
                strength: 0.0,
            };
            let e0 = energy(s, s + n);
            if e0 <= 0.0 || e0 < floor {
                return unvoiced;
            }
            let frame = &samples[s..s + n];
            for tau in (lag_min - 1)..=(lag_max + 1) {
                let avail = samples.len().saturating_sub(s + tau).min(n);
                let shifted = &samples[s + tau..s + tau + avail];
                let cross: f64 = frame[..avail].iter().zip(shifted).map(|(a, b)| a * b).sum();
                let et = energy(s + tau, s + tau + n);
                r[tau] = if et > 0.0 { cross / (e0 * et).sqrt() } else { 0.0 };
            }
            let mut candidates = Vec::new();
            for tau in lag_min..=lag_max {
                if r[tau] > r[tau - 1] && r[tau] >= r[tau + 1] {
                    let (offset, peak) = parabolic_peak(r[tau - 1], r[tau], r[tau + 1]);
                    candidates.push((tau as f64 + offset, peak.min(1.0)));
                }
            }
            let best = candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            if !(best >= settings.voicing_threshold) {
                return PitchFrame {
                    strength: best.max(0.0),
                    ..unvoiced
                };
            }
            let (lag, strength) = candidates
                .into_iter()
                .find(|c| c.1 >= OCTAVE_TOLERANCE * best)
                .expect("best candidate qualifies");
            let f0 = sr / lag;
            PitchFrame {
                start: s,
                time,
                f0: (settings.f0_min..=settings.f0_max).contains(&f0).then_some(f0),
                strength,
            }
        })
        .collect()
}

/// Vertex of the parabola through three equally spaced points, as (offset
/// from the middle point in [-0.5, 0.5], value).
fn parabolic_peak(left: f64, mid: f64, right: f64) -> (f64, f64) {
    let denom = left - 2.0 * mid + right;
    if denom.abs() < 1e-300 {
        return (0.0, mid);
    }
    let offset = (0.5 * (left - right) / denom).clamp(-0.5, 0.5);
    (offset, mid - 0.25 * (left - right) * offset)
}

/// One glottal cycle marker: integer sample plus sub-sample offset, so that
/// period differences between identically shaped cycles are exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseMark {
    pub sample: usize,
    pub frac: f64,
    pub amplitude: f64,
}

/// Pulse marks for every voiced span, edge cycles removed.
///
/// The first mark of a span sits on its largest sample within one expected
/// period. Each following mark is placed by waveform matching: the lag in
/// [0.75, 1.25] expected periods that maximizes the normalized correlation
/// between one period of signal at the current mark and at the candidate,
/// refined with a parabola. A cycle's amplitude is its peak absolute value.
pub fn pulse_marks(samples: &[f64], sample_rate: u32, frames: &[PitchFrame], settings: &PitchSettings) -> Vec<Vec<PulseMark>> {
    let sr = sample_rate as f64;
    let n = (settings.frame_secs * sr).round() as usize;
    let mut spans = Vec::new();
    let mut i = 0;
    while i < frames.len() {
        if frames[i].f0.is_none() {
            i += 1;
            continue;
        }
        let j = (i..frames.len()).find(|&k| frames[k].f0.is_none()).unwrap_or(frames.len());
        spans.push(&frames[i..j]);
        i = j;
    }

    let mut out = Vec::new();
    for span in spans {
        let lo = span[0].start;
        let hi = (span.last().unwrap().start + n).min(samples.len());
        let period_at = |pos: f64| sr / interpolate_f0(span, pos / sr);
        let first_period = period_at(lo as f64).round() as usize;
        let search = lo + first_period / 2 + 1;
        let Some(start) = argmax_abs(samples, search, (search + first_period).min(hi)) else {
            continue;
        };
        let mut marks = Vec::new();
        let (mut k, mut frac) = (start, 0.0);
        loop {
            let p = period_at(k as f64 + frac);
            let len = p.round() as usize;
            let half = len / 2;
            if k < half || k - half + len > hi {
                break;
            }
            let a = k - half;
            marks.push(PulseMark {
                sample: k,
                frac,
                amplitude: cycle_peak(samples, a, a + len),
            });
            let lag_lo = (0.75 * p).floor() as usize;
            let lag_hi = (1.25 * p).ceil() as usize;
            if a + lag_hi + 1 + len > hi {
                break;
            }
            let reference = &samples[a..a + len];
            let r: Vec<f64> = (lag_lo - 1..=lag_hi + 1)
                .map(|lag| normalized_correlation(reference, &samples[a + lag..a + lag + len]))
                .collect();
            let Some(best) = (1..r.len() - 1).max_by(|&x, &y| r[x].total_cmp(&r[y]).then(y.cmp(&x))) else {
                break;
            };
            // the correlation picks the cycle; the position within it comes
            // from the same waveform peak the current mark sits on
            let guess = k + lag_lo - 1 + best;
            let Some(peak) = argmax_abs(samples, guess.saturating_sub(PEAK_SEARCH), guess + PEAK_SEARCH + 1) else {
                break;
            };
            k = peak;
            frac = if peak == 0 || peak + 1 >= samples.len() {
                0.0
            } else {
                let (l, m, r) = (samples[peak - 1].abs(), samples[peak].abs(), samples[peak + 1].abs());
                quantize_offset(parabolic_peak(l, m, r).0)
            };
        }
        if marks.len() > 2 {
            marks.remove(0);
            marks.pop();
            out.push(marks);
        }
    }
    out
}

/// Sub-sample offsets are kept on a 1e-6 sample lattice so that rounding
/// noise in the correlation sums cannot turn an exactly periodic input into
/// a non-zero perturbation.
fn quantize_offset(offset: f64) -> f64 {
    (offset * 1e6).round() / 1e6
}

fn normalized_correlation(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa > 0.0 && bb > 0.0 {
        ab / (aa * bb).sqrt()
    } else {
        0.0
    }
}

fn cycle_peak(samples: &[f64], a: usize, b: usize) -> f64 {
    let Some(k) = argmax_abs(samples, a, b) else {
        return 0.0;
    };
    if k == 0 || k + 1 >= samples.len() {
        return samples[k].abs();
    }
    let (l, m, r) = (samples[k - 1].abs(), samples[k].abs(), samples[k + 1].abs());
    parabolic_peak(l, m, r).1.max(m)
}

fn interpolate_f0(span: &[PitchFrame], t: f64) -> f64 {
    let f = |p: &PitchFrame| p.f0.expect("voiced span");
    if t <= span[0].time {
        return f(&span[0]);
    }
    for w in span.windows(2) {
        if t <= w[1].time {
            let u = (t - w[0].time) / (w[1].time - w[0].time);
            return f(&w[0]) + u * (f(&w[1]) - f(&w[0]));
        }
    }
    f(span.last().unwrap())
}

fn argmax_abs(samples: &[f64], a: usize, b: usize) -> Option<usize> {
    let b = b.min(samples.len());
    (a..b).max_by(|&i, &j| samples[i].abs().total_cmp(&samples[j].abs()).then(j.cmp(&i)))
}

/// Periods (in seconds) between consecutive marks.
pub fn periods_of(marks: &[PulseMark], sample_rate: u32) -> Vec<f64> {
    marks
        .windows(2)
        .map(|w| ((w[1].sample - w[0].sample) as f64 + (w[1].frac - w[0].frac)) / sample_rate as f64)
        .collect()
}

/// Mean absolute second difference of consecutive periods over the mean
/// period. Needs at least three periods.
pub fn jitter_ddp(periods: &[f64]) -> Option<f64> {
    jitter_ddp_pooled(&[periods.to_vec()])
}

/// Jitter (ddp) with the numerator pooled over several voiced stretches.
pub fn jitter_ddp_pooled(sequences: &[Vec<f64>]) -> Option<f64> {
    let mut num = 0.0;
    let mut terms = 0usize;
    let mut total = 0.0;
    let mut count = 0usize;
    for p in sequences.iter().filter(|p| p.len() >= 3) {
        for w in p.windows(3) {
            num += ((w[2] - w[1]) - (w[1] - w[0])).abs();
            terms += 1;
        }
        total += p.iter().sum::<f64>();
        count += p.len();
    }
    (terms > 0).then(|| (num / terms as f64) / (total / count as f64))
}

/// Mean absolute difference of consecutive cycle amplitudes over the mean
/// amplitude. Needs at least two amplitudes.
pub fn shimmer_local(amplitudes: &[f64]) -> Option<f64> {
    shimmer_local_pooled(&[amplitudes.to_vec()])
}

pub fn shimmer_local_pooled(sequences: &[Vec<f64>]) -> Option<f64> {
    let mut num = 0.0;
    let mut terms = 0usize;
    let mut total = 0.0;
    let mut count = 0usize;
    for a in sequences.iter().filter(|a| a.len() >= 2) {
        for w in a.windows(2) {
            num += (w[1] - w[0]).abs();
            terms += 1;
        }
        total += a.iter().sum::<f64>();
        count += a.len();
    }
    (terms > 0 && total > 0.0).then(|| (num / terms as f64) / (total / count as f64))
}

/// Cut a span's marks into stretches of stable cycles: consecutive
/// amplitudes within [`MAX_AMPLITUDE_FACTOR`] of each other and above
/// [`AMPLITUDE_FLOOR`] of the span's loudest cycle, periods within the pitch
/// search range and within [`MAX_PERIOD_FACTOR`] of the previous period. The
/// first and last cycle of every stretch are dropped.
pub fn stable_stretches(marks: &[PulseMark], sample_rate: u32, settings: &PitchSettings) -> Vec<Vec<PulseMark>> {
    let sr = sample_rate as f64;
    let (p_lo, p_hi) = (sr / settings.f0_max, sr / settings.f0_min);
    let loudest = marks.iter().fold(0.0f64, |m, k| m.max(k.amplitude));
    let floor = AMPLITUDE_FLOOR * loudest;
    let period = |a: &PulseMark, b: &PulseMark| (b.sample - a.sample) as f64 + (b.frac - a.frac);
    let within = |a: f64, b: f64, factor: f64| a.max(b) <= factor * a.min(b);

    let mut runs: Vec<Vec<PulseMark>> = Vec::new();
    let mut run: Vec<PulseMark> = Vec::new();
    for &m in marks {
        let Some(&last) = run.last() else {
            run.push(m);
            continue;
        };
        let p = period(&last, &m);
        let pair_ok = last.amplitude >= floor
            && m.amplitude >= floor
            && within(last.amplitude, m.amplitude, MAX_AMPLITUDE_FACTOR)
            && (p_lo..=p_hi).contains(&p);
        if !pair_ok {
            runs.push(std::mem::replace(&mut run, vec![m]));
            continue;
        }
        if run.len() >= 2 && !within(period(&run[run.len() - 2], &last), p, MAX_PERIOD_FACTOR) {
            runs.push(std::mem::replace(&mut run, vec![last, m]));
            continue;
        }
        run.push(m);
    }
    runs.push(run);
    runs.into_iter()
        .filter(|r| r.len() > 3)
        .map(|r| r[1..r.len() - 1].to_vec())
        .collect()
}

/// Least-squares slope of semitone-scaled F0 against time (semitones/s).
pub fn semitone_slope(times: &[f64], f0: &[f64]) -> Option<f64> {
    if times.len() < 2 || times.len() != f0.len() {
        return None;
    }
    let st: Vec<f64> = f0.iter().map(|&f| semitones(f)).collect();
    let n = times.len() as f64;
    let mt = times.iter().sum::<f64>() / n;
    let ms = st.iter().sum::<f64>() / n;
    let sxx: f64 = times.iter().map(|t| (t - mt).powi(2)).sum();
    let sxy: f64 = times.iter().zip(&st).map(|(t, s)| (t - mt) * (s - ms)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Population standard deviation of the mean-centred semitone track.
pub fn semitone_sd(f0: &[f64]) -> Option<f64> {
    if f0.is_empty() {
        return None;
    }
    let st: Vec<f64> = f0.iter().map(|&f| semitones(f)).collect();
    let m = st.iter().sum::<f64>() / st.len() as f64;
    Some((st.iter().map(|s| (s - m).powi(2)).sum::<f64>() / st.len() as f64).sqrt())
}

fn semitones(f0: f64) -> f64 {
    12.0 * (f0 / 100.0).log2()
}

/// Duration between the first and last sample within `db` of the peak.
pub fn trimmed_duration(samples: &[f64], sample_rate: u32, db: f64) -> Option<f64> {
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak <= SILENCE_FLOOR {
        return None;
    }
    let threshold = peak * 10f64.powf(-db / 20.0);
    let first = samples.iter().position(|x| x.abs() >= threshold)?;
    let last = samples.iter().rposition(|x| x.abs() >= threshold)?;
    Some((last - first + 1) as f64 / sample_rate as f64)
}

pub const FEATURE_NAMES: [&str; 6] = [
    "duration",
    "f0_mean",
    "f0_slope",
    "f0_range",
    "jitter_ddp",
    "shimmer_local",
];

/// Hand-crafted prosodic features of one stimulus. F0-derived fields are
/// `None` when the audio has no voiced frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub duration: f64,
    pub f0_mean: Option<f64>,
    pub f0_slope: Option<f64>,
    pub f0_range: Option<f64>,
    pub jitter_ddp: Option<f64>,
    pub shimmer_local: Option<f64>,
}

impl FeatureVector {
    pub fn values(&self) -> [Option<f64>; 6] {
        [
            Some(self.duration),
            self.f0_mean,
            self.f0_slope,
            self.f0_range,
            self.jitter_ddp,
            self.shimmer_local,
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureExtractor {
    pub pitch: PitchSettings,
    pub trim_db: f64,
}

impl FeatureExtractor {
    pub fn new() -> Self {
        FeatureExtractor {
            pitch: PitchSettings::default(),
            trim_db: 40.0,
        }
    }

    pub fn extract(&self, audio: &AudioBuffer) -> Result<FeatureVector> {
        let sr = audio.sample_rate;
        let x: Vec<f64> = audio.samples.iter().map(|&s| s as f64).collect();
        if audio.duration_secs() < 0.2 {
            return Err(AnalysisError::TooShort(audio.duration_secs()));
        }
        let duration = trimmed_duration(&x, sr, self.trim_db).ok_or(AnalysisError::Silent)?;

        let frames = track_pitch(&x, sr, &self.pitch);
        let voiced: Vec<&PitchFrame> = frames.iter().filter(|f| f.f0.is_some()).collect();
        let times: Vec<f64> = voiced.iter().map(|f| f.time).collect();
        let f0s: Vec<f64> = voiced.iter().map(|f| f.f0.unwrap()).collect();
        let f0_mean = (!f0s.is_empty()).then(|| f0s.iter().sum::<f64>() / f0s.len() as f64);

        let mut period_runs = Vec::new();
        let mut amplitude_runs = Vec::new();
        for span in pulse_marks(&x, sr, &frames, &self.pitch) {
            for stretch in stable_stretches(&span, sr, &self.pitch) {
                period_runs.push(periods_of(&stretch, sr));
                amplitude_runs.push(stretch.iter().map(|m| m.amplitude).collect::<Vec<_>>());
            }
        }

        Ok(FeatureVector {
            duration,
            f0_mean,
            f0_slope: semitone_slope(&times, &f0s),
            f0_range: if f0s.len() >= 2 { semitone_sd(&f0s) } else { None },
            jitter_ddp: jitter_ddp_pooled(&period_runs),
            shimmer_local: shimmer_local_pooled(&amplitude_runs),
        })
    }
}

/// Features of one stimulus with the default settings.
pub fn extract_features(audio: &AudioBuffer) -> Result<FeatureVector> {
    FeatureExtractor::new().extract(audio)
}
