//! Frozen-encoder features of dataset clips.
//!
//! Students never update the vision encoder, so its per-layer outputs are
//! computed once per clip and view and reused by every training step.

use egoexo_tensor::Tensor;

use crate::error::Result;
use crate::vlm::{patchify, EncoderCache, Vlm, VlmConfig};
use crate::world::{resize_area, Dataset};

/// Model-ready patch rows of `[T × H × W × 3]` frames (area-resized when needed).
pub fn view_patches(frames: &Tensor<f32>, cfg: &VlmConfig) -> Result<Tensor<f32>> {
    if frames.shape().get(1) == Some(&cfg.image_size) {
        patchify(frames, cfg)
    } else {
        patchify(&resize_area(frames, cfg.image_size), cfg)
    }
}

#[derive(Clone, Debug)]
pub struct ViewFeatures {
    pub patches: Tensor<f32>,
    pub cache: EncoderCache<f32>,
}

impl ViewFeatures {
    pub fn compute(encoder: &Vlm<f32>, frames: &Tensor<f32>) -> Result<Self> {
        let patches = view_patches(frames, &encoder.cfg)?;
        let cache = encoder.encoder_cache(&patches)?;
        Ok(ViewFeatures { patches, cache })
    }
}

#[derive(Clone, Debug)]
pub struct ClipFeatures {
    pub id: String,
    pub exo: Option<ViewFeatures>,
    pub ego: Option<ViewFeatures>,
}

/// Which renders to load.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Views {
    pub exo: bool,
    pub ego: bool,
}

impl Views {
    pub const EXO: Views = Views { exo: true, ego: false };
    pub const EGO: Views = Views { exo: false, ego: true };
    pub const BOTH: Views = Views { exo: true, ego: true };
}

#[derive(Clone, Debug, Default)]
pub struct FeatureStore {
    pub clips: Vec<ClipFeatures>,
}

impl FeatureStore {
    /// Reads only the requested render files; scripts are never touched.
    pub fn build(ds: &Dataset, encoder: &Vlm<f32>, ids: &[String], views: Views, camera: usize) -> Result<Self> {
        let mut clips = Vec::with_capacity(ids.len());
        for id in ids {
            let exo = if views.exo { Some(ViewFeatures::compute(encoder, &ds.exo(id, camera)?)?) } else { None };
            let ego = if views.ego { Some(ViewFeatures::compute(encoder, &ds.ego(id)?)?) } else { None };
            clips.push(ClipFeatures { id: id.clone(), exo, ego });
        }
        Ok(FeatureStore { clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.clips.iter().map(|c| c.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ClipFeatures> {
        self.clips.iter().find(|c| c.id == id)
    }
}
