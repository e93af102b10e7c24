//! Losses, simultaneous teacher/student training with distillation,
//! checkpoints and student-only inference.

mod config;
mod infer;
mod model;
mod optim;
mod train;

pub use config::TrainConfig;
pub use infer::{caption_file, infer, infer_ids, load_visual_text, DecodeOptions};
pub use model::{
    load_card, load_student, load_teacher, save_checkpoint, student_init, FeatureDims, ModelCard, TeacherEncoding,
    TeacherParams, TeacherVars, CARD_FILE, STUDENT_FILE, TEACHER_FILE,
};
pub use optim::{Adam, ADAM_EPS, BETA1, BETA2};
pub use train::{
    batch_gradients, cross_entropy_loss, dataset_accuracy, kl_distillation_loss, load_dataset_dir, student_greedy,
    teacher_forcing_prefix, teacher_greedy, token_accuracy, total_loss, train, train_with, video_losses,
    BatchGradients, Dataset, EpochLog, TrainItem, TrainLog, TrainOutcome, VideoLosses,
};

use std::path::Path;

use thiserror::Error;

use crate::caption::CaptionError;
use crate::features::FeatureError;
use crate::graph::GraphError;
use crate::numerics::NumericsError;
use crate::semantic::SemanticError;
use crate::temporal::TemporalError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{path}: {source}")]
    Bundle {
        path: String,
        #[source]
        source: FeatureError,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("video {0:?} has no caption record")]
    MissingCaptions(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        let inner = match self {
            TrainError::DivergedLoss { .. } => return true,
            TrainError::Numerics(e)
            | TrainError::Temporal(TemporalError::Numerics(e))
            | TrainError::Semantic(SemanticError::Numerics(e))
            | TrainError::Graph(GraphError::Numerics(e))
            | TrainError::Caption(CaptionError::Numerics(e)) => e,
            _ => return false,
        };
        matches!(inner, NumericsError::NonFinite(_))
    }
}
