//! Mono audio buffers and their on-disk form (RIFF/WAVE, 16-bit PCM).

use std::io::Cursor;

use thiserror::Error;

pub const DEFAULT_SAMPLE_RATE: u32 = 22_050;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("expected mono audio, got {0} channels")]
    NotMono(u16),
    #[error("unsupported sample format: {0}")]
    Format(String),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite { index });
        }
        Ok(AudioBuffer {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// Encode as 16-bit little-endian PCM WAVE. Samples are clamped to
    /// [-1, 1] before quantization.
    pub fn to_wav_bytes(&self) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::with_capacity(44 + 2 * self.samples.len()));
        {
            let mut w = hound::WavWriter::new(&mut cursor, spec).expect("in-memory writer");
            let mut w16 = w.get_i16_writer(self.samples.len() as u32);
            for &s in &self.samples {
                w16.write_sample(quantize(s));
            }
            w16.flush().expect("in-memory write");
            w.finalize().expect("in-memory write");
        }
        cursor.into_inner()
    }

    /// Decode a mono WAVE file (16-bit integer or 32-bit float).
    pub fn from_wav_bytes(bytes: &[u8]) -> Result<Self, AudioError> {
        let mut r = hound::WavReader::new(Cursor::new(bytes))?;
        let spec = r.spec();
        if spec.channels != 1 {
            return Err(AudioError::NotMono(spec.channels));
        }
        let samples: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Int, 16) => r
                .samples::<i16>()
                .map(|s| s.map(|v| v as f32 / 32768.0))
                .collect::<Result<_, _>>()?,
            (hound::SampleFormat::Float, 32) => r.samples::<f32>().collect::<Result<_, _>>()?,
            (fmt, bits) => return Err(AudioError::Format(format!("{fmt:?} {bits}-bit"))),
        };
        AudioBuffer::new(samples, spec.sample_rate)
    }
}

fn quantize(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}
