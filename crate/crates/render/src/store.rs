//! Content-addressed storage for encoded stimuli.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use gsp_core::StimulusId;

use crate::error::Result;

pub type WavBytes = Arc<[u8]>;

pub trait StimulusStore: Send + Sync {
    fn get(&self, id: &StimulusId) -> Option<WavBytes>;

    fn contains(&self, id: &StimulusId) -> bool {
        self.get(id).is_some()
    }

    /// Store `wav` under `id` unless present. Returns whether it was added.
    fn insert_if_absent(&self, id: &StimulusId, wav: WavBytes) -> Result<bool>;
}

/// In-memory store; with a capacity, the oldest entries are evicted first.
#[derive(Debug, Default)]
pub struct MemoryStore {
    capacity: Option<usize>,
    inner: Mutex<(HashMap<StimulusId, WavBytes>, VecDeque<StimulusId>)>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bounded(capacity: usize) -> Self {
        MemoryStore {
            capacity: Some(capacity.max(1)),
            inner: Mutex::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl StimulusStore for MemoryStore {
    fn get(&self, id: &StimulusId) -> Option<WavBytes> {
        self.inner.lock().unwrap().0.get(id).cloned()
    }

    fn insert_if_absent(&self, id: &StimulusId, wav: WavBytes) -> Result<bool> {
        let mut guard = self.inner.lock().unwrap();
        let (map, order) = &mut *guard;
        if map.contains_key(id) {
            return Ok(false);
        }
        if let Some(cap) = self.capacity {
            while map.len() >= cap {
                let Some(old) = order.pop_front() else { break };
                map.remove(&old);
            }
        }
        map.insert(id.clone(), wav);
        order.push_back(id.clone());
        Ok(true)
    }
}

/// One `{id}.wav` file per stimulus in a directory.
#[derive(Debug)]
pub struct DirStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl DirStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(DirStore {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn path_of(&self, id: &StimulusId) -> PathBuf {
        self.dir.join(format!("{id}.wav"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl StimulusStore for DirStore {
    fn get(&self, id: &StimulusId) -> Option<WavBytes> {
        std::fs::read(self.path_of(id)).ok().map(Into::into)
    }

    fn contains(&self, id: &StimulusId) -> bool {
        self.path_of(id).is_file()
    }

    fn insert_if_absent(&self, id: &StimulusId, wav: WavBytes) -> Result<bool> {
        let _guard = self.write_lock.lock().unwrap();
        let path = self.path_of(id);
        if path.is_file() {
            return Ok(false);
        }
        let tmp = self.dir.join(format!(".{id}.wav.tmp"));
        std::fs::write(&tmp, &wav)?;
        std::fs::rename(&tmp, &path)?;
        Ok(true)
    }
}
