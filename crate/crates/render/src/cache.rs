use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use gsp_core::{ChainState, RendererIdentity, SliderGrid, StimulusId};

use crate::error::{RenderError, Result};
use crate::renderer::Renderer;
use crate::store::{StimulusStore, WavBytes};

/// A renderer in front of a content-addressed store. Requests for content
/// already in the store do not reach the renderer.
pub struct StimulusCache {
    renderer: Arc<dyn Renderer>,
    identity: RendererIdentity,
    store: Arc<dyn StimulusStore>,
    renders: AtomicUsize,
    embeddings: Mutex<HashMap<StimulusId, Vec<f64>>>,
}

impl StimulusCache {
    pub fn new(renderer: Arc<dyn Renderer>, store: Arc<dyn StimulusStore>) -> Self {
        StimulusCache {
            identity: renderer.identity(),
            renderer,
            store,
            renders: AtomicUsize::new(0),
            embeddings: Mutex::default(),
        }
    }

    pub fn identity(&self) -> &RendererIdentity {
        &self.identity
    }

    pub fn renderer(&self) -> &Arc<dyn Renderer> {
        &self.renderer
    }

    pub fn id_of(&self, weights: &[f64], sentence: &str) -> StimulusId {
        self.identity.stimulus_id(weights, sentence)
    }

    /// Number of calls that reached the renderer.
    pub fn renders(&self) -> usize {
        self.renders.load(Ordering::Relaxed)
    }

    /// Id of the stimulus, rendering and storing it if needed.
    pub fn ensure(&self, weights: &[f64], sentence: &str) -> Result<StimulusId> {
        let id = self.id_of(weights, sentence);
        if self.store.contains(&id) {
            return Ok(id);
        }
        let rendered = self.renderer.render(weights, sentence)?;
        self.renders.fetch_add(1, Ordering::Relaxed);
        if let Some(e) = rendered.embedding {
            self.embeddings.lock().unwrap().insert(id.clone(), e);
        }
        self.store.insert_if_absent(&id, rendered.audio.to_wav_bytes().into())?;
        Ok(id)
    }

    pub fn fetch(&self, id: &StimulusId) -> Option<WavBytes> {
        self.store.get(id)
    }

    /// Style embedding reported when `id` was rendered by this cache.
    pub fn embedding(&self, id: &StimulusId) -> Option<Vec<f64>> {
        self.embeddings.lock().unwrap().get(id).cloned()
    }
}

/// Render one stimulus per slider position of the chain's free dimension.
/// Failures are collected and reported together with their indices.
pub fn render_slider_batch(cache: &StimulusCache, chain: &ChainState, grid: &SliderGrid) -> Result<Vec<StimulusId>> {
    if chain.is_complete() {
        return Err(RenderError::Backend(format!("chain {} is complete", chain.id())));
    }
    let mut ids = Vec::with_capacity(grid.n_positions());
    let mut failed = Vec::new();
    let mut reason = String::new();
    for k in 0..grid.n_positions() {
        let point = chain.current_point.with_index(chain.free_dimension, k);
        match cache.ensure(&point.weights(grid), &chain.spec.sentence) {
            Ok(id) => ids.push(id),
            Err(e) => {
                if failed.is_empty() {
                    reason = e.to_string();
                }
                failed.push(k);
            }
        }
    }
    if failed.is_empty() {
        Ok(ids)
    } else {
        Err(RenderError::Batch {
            indices: failed,
            reason,
        })
    }
}
