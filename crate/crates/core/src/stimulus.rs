use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Identifies the backend that turns latent points into audio. Part of every
/// stimulus id so a different renderer (or mapping matrix) never aliases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RendererIdentity {
    pub tag: String,
    /// Checksum of the mapping matrix, for the built-in renderer.
    pub mapping_checksum: Option<String>,
}

impl RendererIdentity {
    pub fn new(tag: impl Into<String>, mapping_checksum: Option<String>) -> Self {
        RendererIdentity {
            tag: tag.into(),
            mapping_checksum,
        }
    }

    /// Content address of `(weights, sentence)` rendered by this backend.
    pub fn stimulus_id(&self, weights: &[f64], sentence: &str) -> StimulusId {
        match &self.mapping_checksum {
            Some(sum) => StimulusId::for_content(&format!("{}#{sum}", self.tag), weights, sentence),
            None => StimulusId::for_content(&self.tag, weights, sentence),
        }
    }
}

/// Content address of a rendered stimulus: a hash of the renderer identity,
/// the control weights and the sentence text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StimulusId(String);

impl StimulusId {
    pub fn for_content(renderer_tag: &str, weights: &[f64], sentence: &str) -> Self {
        let mut h = Sha256::new();
        h.update(renderer_tag.as_bytes());
        h.update([0u8]);
        h.update((weights.len() as u64).to_le_bytes());
        for w in weights {
            // -0.0 and 0.0 are the same control value
            let w = if *w == 0.0 { 0.0f64 } else { *w };
            h.update(w.to_bits().to_le_bytes());
        }
        h.update(sentence.as_bytes());
        let digest = h.finalize();
        StimulusId(hex::encode(&digest[..16]))
    }

    /// Parse an id received from outside (e.g. a URL path segment).
    pub fn parse(s: &str) -> Option<Self> {
        (s.len() == 32 && s.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()))
            .then(|| StimulusId(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StimulusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_depend_on_every_input() {
        let a = StimulusId::for_content("builtin", &[0.0, 0.1], "hello");
        assert_eq!(a, StimulusId::for_content("builtin", &[-0.0, 0.1], "hello"));
        assert_ne!(a, StimulusId::for_content("builtin", &[0.0, 0.12], "hello"));
        assert_ne!(a, StimulusId::for_content("other", &[0.0, 0.1], "hello"));
        assert_ne!(a, StimulusId::for_content("builtin", &[0.0, 0.1], "hello."));
        assert_eq!(StimulusId::parse(a.as_str()), Some(a));
        assert_eq!(StimulusId::parse("../etc/passwd"), None);
    }
}
