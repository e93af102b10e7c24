use std::path::Path;

use super::model::{load_student, ModelCard};
use super::TrainError;
use crate::caption::{beam_decode, greedy_decode, DecoderParams};
use crate::features::{matrix_tensor, TensorArchive, VISUAL_TEXT};
use crate::graph::graph_invocations;
use crate::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    /// 1 decodes greedily.
    pub beam: usize,
    /// Generation limit; the decoder's own `max_len` when `None`.
    pub max_len: Option<usize>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { beam: 1, max_len: None }
    }
}

/// Student caption ids for a visual-text sequence. Runs the student decoder
/// alone and checks that no graph code was reached.
pub fn infer_ids(student: &DecoderParams<f64>, visual: &Matrix, opts: DecodeOptions) -> Result<Vec<usize>, TrainError> {
    let before = graph_invocations();
    let max_len = opts.max_len.unwrap_or(student.max_len).min(student.max_len);
    let hyp = if opts.beam <= 1 {
        greedy_decode(visual, student, max_len)?
    } else {
        beam_decode(visual, student, opts.beam, max_len)?
    };
    assert_eq!(graph_invocations(), before, "student inference reached graph code");
    Ok(hyp.tokens)
}

pub fn infer(student: &DecoderParams<f64>, card: &ModelCard, visual: &Matrix, opts: DecodeOptions) -> Result<String, TrainError> {
    if visual.cols() != card.dims.visual_text {
        return Err(TrainError::InvalidData(format!(
            "visual_text has width {}, model expects {}",
            visual.cols(),
            card.dims.visual_text
        )));
    }
    Ok(card.vocab.decode(&infer_ids(student, visual, opts)?))
}

/// Reads only the `visual_text` tensor of a feature file.
pub fn load_visual_text(path: &Path) -> Result<Matrix, TrainError> {
    let wrap = |source| TrainError::Bundle {
        path: path.display().to_string(),
        source,
    };
    let archive = TensorArchive::read(path).map_err(wrap)?;
    let t = archive.require(VISUAL_TEXT).map_err(wrap)?;
    matrix_tensor(t).map_err(wrap)
}

/// Loads the student checkpoint from `ckpt` and captions one feature file.
pub fn caption_file(ckpt: &Path, bundle: &Path, opts: DecodeOptions) -> Result<String, TrainError> {
    let (card, student) = load_student(ckpt)?;
    let visual = load_visual_text(bundle)?;
    infer(&student, &card, &visual, opts)
}
