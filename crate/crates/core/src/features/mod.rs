//! Feature bundles, caption files and the synthetic data generator.

mod bundle;
mod captions;
pub mod container;
pub mod synth;

pub use bundle::{
    load_bundle, matrix_tensor, save_bundle, video_id_from_path, FeatureBundle, ObjectFeatures,
    ACTION, OBJECT, OBJECT_MASK, VISUAL_TEXT,
};
pub use captions::{read_captions, read_jsonl, validate_captions, write_captions, write_jsonl, CaptionRecord};
pub use container::{NamedTensor, TensorArchive};
pub use synth::{synth_dataset, synth_generate, Pattern, SynthDims, SynthSample};

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("bad magic: not a VFT1 file")]
    BadMagic,
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite value in tensor {0:?}")]
    NonFiniteValue(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("unknown synthetic pattern {0:?} (expected constant-action, drift or burst)")]
    BadPattern(String),
    #[error("video {0:?} has no captions")]
    NoCaptions(String),
    #[error("video id {0:?} appears more than once")]
    DuplicateVideoId(String),
    #[error("{path}:{line}: {message}")]
    Json {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FeatureError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        FeatureError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
