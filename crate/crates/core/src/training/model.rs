//! Teacher and student parameter sets, the teacher's encoding pipeline and
//! checkpoint files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::caption::{DecoderParams, DecoderVars, Vocabulary};
use crate::features::{FeatureBundle, NamedTensor, TensorArchive};
use crate::graph::{build_action_graph, merge_graphs, GraphTransformerParams, GraphTransformerVars, TemporalGraph};
use crate::numerics::{derive_seed, Scalar, Tape, Var};
use crate::numerics::Matrix as GenericMatrix;
use crate::Matrix;
use crate::semantic::{SemanticParams, SemanticVars};
use crate::temporal::{TemporalParams, TemporalVars};

pub const TEACHER_FILE: &str = "teacher.vft";
pub const STUDENT_FILE: &str = "student.vft";
pub const CARD_FILE: &str = "model.json";

/// Feature widths a model was built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDims {
    pub object: usize,
    pub action: usize,
    pub visual_text: usize,
}

impl FeatureDims {
    pub fn of(bundle: &FeatureBundle) -> Self {
        Self {
            object: bundle.objects.dim(),
            action: bundle.action.cols(),
            visual_text: bundle.visual_text.cols(),
        }
    }
}

/// Sidecar of a checkpoint directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCard {
    pub dims: FeatureDims,
    pub config: TrainConfig,
    pub vocab: Vocabulary,
}

/// Graph transformer network: temporal and semantic attention, graph
/// encoder and a decoder over `[C | F_graph]`. Ablated stages are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherParams<T> {
    pub temporal: Option<TemporalParams<T>>,
    pub semantic: Option<SemanticParams<T>>,
    pub graph: GraphTransformerParams<T>,
    pub decoder: DecoderParams<T>,
}

#[derive(Clone, Debug)]
pub struct TeacherVars<T> {
    pub temporal: Option<TemporalVars<T>>,
    pub semantic: Option<SemanticVars<T>>,
    pub graph: GraphTransformerVars<T>,
    pub decoder: DecoderVars<T>,
}

/// Tape nodes of one teacher encoding pass.
#[derive(Clone, Debug)]
pub struct TeacherEncoding {
    pub fused: Var,
    /// Features fed to the action nodes (`B_seq`, or `A_fused` without the semantic stage).
    pub action_nodes: Var,
    pub graph_frames: Var,
    /// Decoder input `[C | F_graph]`.
    pub decoder_input: Var,
    pub graph: TemporalGraph,
}

impl<T: Scalar> TeacherParams<T> {
    pub fn init(dims: FeatureDims, vocab: usize, cfg: &TrainConfig) -> Self {
        let seed = derive_seed(cfg.seed, 1);
        let a = cfg.attn_dim;
        let temporal = (!cfg.disable_temporal)
            .then(|| TemporalParams::init(dims.action, a, a, cfg.window, derive_seed(seed, 0)));
        let fused = temporal.as_ref().map_or(2 * dims.action, |t| t.fused_dim());
        let semantic = (!cfg.disable_semantic)
            .then(|| SemanticParams::init(dims.visual_text, fused, a, a, cfg.values_from, derive_seed(seed, 1)));
        let node_dim = semantic.as_ref().map_or(fused, |s| s.output_dim());
        Self {
            temporal,
            semantic,
            graph: GraphTransformerParams::init(
                dims.object,
                node_dim,
                cfg.graph_dim,
                cfg.graph_layers,
                cfg.graph_norm,
                derive_seed(seed, 2),
            ),
            decoder: DecoderParams::init(dims.visual_text + cfg.graph_dim, vocab, &cfg.decoder, derive_seed(seed, 3)),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> TeacherVars<T> {
        TeacherVars {
            temporal: self.temporal.as_ref().map(|p| p.bind(tape)),
            semantic: self.semantic.as_ref().map(|p| p.bind(tape)),
            graph: self.graph.bind(tape),
            decoder: self.decoder.bind(tape),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut GenericMatrix<T>> {
        let mut v = Vec::new();
        if let Some(t) = &mut self.temporal {
            v.extend(t.params_mut());
        }
        if let Some(s) = &mut self.semantic {
            v.extend(s.params_mut());
        }
        v.extend(self.graph.params_mut());
        v.extend(self.decoder.params_mut());
        v
    }

    pub fn named(&self) -> Vec<(String, &GenericMatrix<T>)> {
        let mut v = Vec::new();
        if let Some(t) = &self.temporal {
            v.extend(t.named("temporal"));
        }
        if let Some(s) = &self.semantic {
            v.extend(s.named("semantic"));
        }
        v.extend(self.graph.named("graph"));
        v.extend(self.decoder.named("decoder"));
        v
    }
}

pub fn student_init<T: Scalar>(dims: FeatureDims, vocab: usize, cfg: &TrainConfig) -> DecoderParams<T> {
    DecoderParams::init(dims.visual_text, vocab, &cfg.decoder, derive_seed(cfg.seed, 2))
}

impl<T: Scalar> TeacherVars<T> {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = Vec::new();
        if let Some(t) = &self.temporal {
            v.extend(t.vars());
        }
        if let Some(s) = &self.semantic {
            v.extend(s.vars());
        }
        v.extend(self.graph.vars());
        v.extend(self.decoder.vars());
        v
    }

    /// Temporal attention, semantic attention, graph construction around
    /// the current action-node features and graph encoding. `object_graph`
    /// is the fixed per-video object graph.
    pub fn encode(
        &self,
        tape: &mut Tape<T>,
        action: Var,
        visual: Var,
        object_graph: &TemporalGraph,
    ) -> Result<TeacherEncoding, TrainError> {
        let fused = match &self.temporal {
            Some(t) => t.forward(tape, action)?.fused,
            None => tape.concat_rows(action, action)?,
        };
        let action_nodes = match &self.semantic {
            Some(s) => s.forward(tape, visual, fused)?.seq,
            None => fused,
        };
        let values = tape.value(action_nodes);
        let b_seq = Matrix::from_fn(values.rows(), values.cols(), |r, c| values.get(r, c).to_f64().unwrap());
        let graph = merge_graphs(object_graph, &build_action_graph(&b_seq))?;
        let out = self.graph.forward(tape, &graph, Some(action_nodes))?;
        let decoder_input = tape.concat_rows(visual, out.frames)?;
        Ok(TeacherEncoding {
            fused,
            action_nodes,
            graph_frames: out.frames,
            decoder_input,
            graph,
        })
    }
}

fn to_archive<'a>(named: impl IntoIterator<Item = (String, &'a Matrix)>) -> TensorArchive {
    let mut a = TensorArchive::new();
    for (name, m) in named {
        a.push(NamedTensor::from_f64(name, vec![m.rows() as u32, m.cols() as u32], m.data()));
    }
    a
}

/// Overwrites every parameter from the archive entry of the same name.
fn fill_from_archive(
    names: Vec<String>,
    params: Vec<&mut Matrix>,
    archive: &TensorArchive,
    file: &str,
) -> Result<(), TrainError> {
    for (name, p) in names.into_iter().zip(params) {
        let t = archive
            .get(&name)
            .ok_or_else(|| TrainError::Checkpoint(format!("{file}: missing tensor {name:?}")))?;
        if t.dims != [p.rows() as u32, p.cols() as u32] {
            return Err(TrainError::Checkpoint(format!(
                "{file}: tensor {name:?} has dims {:?}, expected {:?}",
                t.dims,
                p.shape()
            )));
        }
        *p = Matrix::new(p.rows(), p.cols(), t.to_f64())
            .map_err(|e| TrainError::Checkpoint(format!("{file}: tensor {name:?}: {e}")))?;
    }
    Ok(())
}

pub fn save_checkpoint(
    dir: &Path,
    card: &ModelCard,
    teacher: &TeacherParams<f64>,
    student: &DecoderParams<f64>,
) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
    to_archive(teacher.named()).write(&dir.join(TEACHER_FILE))?;
    to_archive(student.named("student")).write(&dir.join(STUDENT_FILE))?;
    let json = serde_json::to_string_pretty(card).expect("card serializes") + "\n";
    let path = dir.join(CARD_FILE);
    std::fs::write(&path, json).map_err(|e| TrainError::io(&path, e))
}

pub fn load_card(dir: &Path) -> Result<ModelCard, TrainError> {
    let path = dir.join(CARD_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| TrainError::io(&path, e))?;
    let card: ModelCard =
        serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))?;
    card.config.validate()?;
    Ok(card)
}

/// Reads the card and the student decoder only.
pub fn load_student(dir: &Path) -> Result<(ModelCard, DecoderParams<f64>), TrainError> {
    let card = load_card(dir)?;
    let path = dir.join(STUDENT_FILE);
    if !path.exists() {
        return Err(TrainError::Checkpoint(format!("{}: student checkpoint not found", path.display())));
    }
    let archive = TensorArchive::read(&path)?;
    let mut student = student_init::<f64>(card.dims, card.vocab.len(), &card.config);
    let names = student.named("student").into_iter().map(|(n, _)| n).collect();
    fill_from_archive(names, student.params_mut(), &archive, STUDENT_FILE)?;
    Ok((card, student))
}

pub fn load_teacher(dir: &Path) -> Result<(ModelCard, TeacherParams<f64>), TrainError> {
    let card = load_card(dir)?;
    let archive = TensorArchive::read(&dir.join(TEACHER_FILE))?;
    let mut teacher = TeacherParams::<f64>::init(card.dims, card.vocab.len(), &card.config);
    let names = teacher.named().into_iter().map(|(n, _)| n).collect();
    fill_from_archive(names, teacher.params_mut(), &archive, TEACHER_FILE)?;
    Ok((card, teacher))
}
