//! Stimulus rendering: the built-in parametric synthesizer, a client for an
//! external neural renderer, and a content-addressed stimulus cache.

pub mod cache;
pub mod error;
pub mod external;
pub mod prosody;
pub mod renderer;
pub mod score;
pub mod store;
pub mod synth;

pub use cache::{render_slider_batch, StimulusCache};
pub use error::{RenderError, Result};
pub use external::{ExternalRenderer, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TIMEOUT, EMBEDDING_HEADER};
pub use prosody::{map_latent_to_prosody, ProsodyMapping, ProsodyParams, PARAM_NAMES};
pub use renderer::{BuiltinRenderer, Rendered, Renderer, BUILTIN_TAG};
pub use score::{SentenceScore, Syllable, VowelClass};
pub use store::{DirStore, MemoryStore, StimulusStore, WavBytes};
