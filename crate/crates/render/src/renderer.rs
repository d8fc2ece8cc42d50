use gsp_core::{AudioBuffer, LatentPoint, RendererIdentity, SliderGrid, DEFAULT_SAMPLE_RATE};

use crate::error::Result;
use crate::prosody::{ProsodyMapping, ProsodyParams};
use crate::score::SentenceScore;
use crate::synth::synthesize;

/// Audio plus the backend's style embedding, when it reports one.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub audio: AudioBuffer,
    pub embedding: Option<Vec<f64>>,
}

/// Anything that turns control weights and sentence text into audio.
pub trait Renderer: Send + Sync {
    fn identity(&self) -> RendererIdentity;
    fn dimensions(&self) -> usize;
    fn render(&self, weights: &[f64], sentence: &str) -> Result<Rendered>;
}

pub const BUILTIN_TAG: &str = "builtin-v1";

/// Deterministic parametric synthesizer driven by a [`ProsodyMapping`].
#[derive(Debug, Clone)]
pub struct BuiltinRenderer {
    mapping: ProsodyMapping,
    sample_rate: u32,
}

impl BuiltinRenderer {
    pub fn new(mapping: ProsodyMapping) -> Self {
        BuiltinRenderer {
            mapping,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }

    pub fn mapping(&self) -> &ProsodyMapping {
        &self.mapping
    }

    pub fn params(&self, weights: &[f64]) -> Result<ProsodyParams> {
        self.mapping.map(weights)
    }

    pub fn render_point(&self, point: &LatentPoint, grid: &SliderGrid, sentence: &str) -> Result<AudioBuffer> {
        Ok(self.render(&point.weights(grid), sentence)?.audio)
    }

    /// Render explicit parameters, bypassing the mapping. The noise seed is
    /// still keyed by `weights` and `sentence`.
    pub fn render_params(&self, params: &ProsodyParams, weights: &[f64], sentence: &str) -> Result<AudioBuffer> {
        let score = SentenceScore::from_text(sentence)?;
        let seed = self.noise_seed(weights, sentence);
        Ok(synthesize(&params.clamped(), &score, self.sample_rate, seed))
    }

    fn noise_seed(&self, weights: &[f64], sentence: &str) -> u64 {
        let id = self.identity().stimulus_id(weights, sentence);
        u64::from_str_radix(&id.as_str()[..16], 16).expect("hex id")
    }
}

impl Default for BuiltinRenderer {
    fn default() -> Self {
        BuiltinRenderer::new(ProsodyMapping::builtin())
    }
}

impl Renderer for BuiltinRenderer {
    fn identity(&self) -> RendererIdentity {
        RendererIdentity::new(BUILTIN_TAG, Some(self.mapping.checksum.clone()))
    }

    fn dimensions(&self) -> usize {
        self.mapping.dimensions()
    }

    fn render(&self, weights: &[f64], sentence: &str) -> Result<Rendered> {
        let params = self.params(weights)?;
        let audio = self.render_params(&params, weights, sentence)?;
        Ok(Rendered {
            audio,
            embedding: Some(params.to_array().to_vec()),
        })
    }
}
