//! Per-edge-type attention over the objects-action graph.
//!
//! Every layer computes one query projection and, for each of the four
//! neighbourhood types (the node itself, obj-obj, act-act and obj-act
//! neighbours), its own key and value projections. The logits of all types
//! are laid side by side and normalised with a single masked softmax, so a
//! node distributes one unit of attention over its whole neighbourhood.
//! Similarity edges add `ln(weight)` to their logit. Edges are read in both
//! directions.

use serde::{Deserialize, Serialize};

use super::build::{EdgeType, NodeKind, TemporalGraph};
use super::{count_invocation, GraphError};
use crate::numerics::{derive_seed, seeded_init, InitScheme, Matrix, Scalar, Tape, Var};

/// Number of neighbourhood types: self plus the three edge types.
pub const NEIGHBOURHOODS: usize = 4;

/// Weights below this are clamped before taking the log offset.
const MIN_EDGE_WEIGHT: f64 = 1e-6;

/// Epsilon of the layer normalisation; a zero row stays zero.
pub const NORM_EPS: f64 = 1e-8;

fn slot(edge_type: EdgeType) -> usize {
    match edge_type {
        EdgeType::ObjObj => 1,
        EdgeType::ActAct => 2,
        EdgeType::ObjAct => 3,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphNorm {
    #[default]
    LayerNorm,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphLayerParams<T> {
    pub query: Matrix<T>,
    /// Indexed self, obj-obj, act-act, obj-act.
    pub keys: Vec<Matrix<T>>,
    pub values: Vec<Matrix<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphTransformerParams<T> {
    pub object_proj: Matrix<T>,
    pub action_proj: Matrix<T>,
    pub layers: Vec<GraphLayerParams<T>>,
    pub output: Matrix<T>,
    pub norm: GraphNorm,
}

#[derive(Clone, Debug)]
pub struct GraphLayerVars {
    pub query: Var,
    pub keys: Vec<Var>,
    pub values: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct GraphTransformerVars<T> {
    pub object_proj: Var,
    pub action_proj: Var,
    pub layers: Vec<GraphLayerVars>,
    pub output: Var,
    pub norm: GraphNorm,
    pub scale: T,
}

#[derive(Clone, Copy, Debug)]
pub struct GraphOutput {
    /// `N × d_g`, one row per node id.
    pub nodes: Var,
    /// `T × d_g`, row `t` is the mean over the nodes of frame `t`.
    pub frames: Var,
}

/// Encoder output with both granularities.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphFeatures<T> {
    pub nodes: Matrix<T>,
    pub frames: Matrix<T>,
}

impl<T: Scalar> GraphLayerParams<T> {
    fn init(d: usize, seed: u64) -> Self {
        let m = |stream| seeded_init(d, d, derive_seed(seed, stream), InitScheme::FanIn);
        Self {
            query: m(0),
            keys: (0..NEIGHBOURHOODS as u64).map(|e| m(1 + e)).collect(),
            values: (0..NEIGHBOURHOODS as u64).map(|e| m(10 + e)).collect(),
        }
    }

    fn identity(d: usize) -> Self {
        Self {
            query: Matrix::identity(d),
            keys: vec![Matrix::identity(d); NEIGHBOURHOODS],
            values: vec![Matrix::identity(d); NEIGHBOURHOODS],
        }
    }
}

impl<T: Scalar> GraphTransformerParams<T> {
    pub fn init(d_object: usize, d_action: usize, d_graph: usize, layers: usize, norm: GraphNorm, seed: u64) -> Self {
        Self {
            object_proj: seeded_init(d_object, d_graph, derive_seed(seed, 0), InitScheme::FanIn),
            action_proj: seeded_init(d_action, d_graph, derive_seed(seed, 1), InitScheme::FanIn),
            layers: (0..layers)
                .map(|l| GraphLayerParams::init(d_graph, derive_seed(seed, 100 + l as u64)))
                .collect(),
            output: seeded_init(d_graph, d_graph, derive_seed(seed, 2), InitScheme::FanIn),
            norm,
        }
    }

    /// Every projection the identity; input widths must equal `d`.
    pub fn identity(d: usize, layers: usize, norm: GraphNorm) -> Self {
        Self {
            object_proj: Matrix::identity(d),
            action_proj: Matrix::identity(d),
            layers: (0..layers).map(|_| GraphLayerParams::identity(d)).collect(),
            output: Matrix::identity(d),
            norm,
        }
    }

    pub fn width(&self) -> usize {
        self.output.cols()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> GraphTransformerVars<T> {
        self.bind_with(tape, |tape, m| tape.param(m))
    }

    pub fn bind_constant(&self, tape: &mut Tape<T>) -> GraphTransformerVars<T> {
        self.bind_with(tape, |tape, m| tape.constant(m))
    }

    fn bind_with(&self, tape: &mut Tape<T>, mut leaf: impl FnMut(&mut Tape<T>, Matrix<T>) -> Var) -> GraphTransformerVars<T> {
        let object_proj = leaf(tape, self.object_proj.clone());
        let action_proj = leaf(tape, self.action_proj.clone());
        let layers = self
            .layers
            .iter()
            .map(|l| GraphLayerVars {
                query: leaf(tape, l.query.clone()),
                keys: l.keys.iter().map(|k| leaf(tape, k.clone())).collect(),
                values: l.values.iter().map(|v| leaf(tape, v.clone())).collect(),
            })
            .collect();
        let output = leaf(tape, self.output.clone());
        GraphTransformerVars {
            object_proj,
            action_proj,
            layers,
            output,
            norm: self.norm,
            scale: T::from_usize(self.width().max(1)).unwrap(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut v = vec![&mut self.object_proj, &mut self.action_proj];
        for l in &mut self.layers {
            v.push(&mut l.query);
            v.extend(l.keys.iter_mut());
            v.extend(l.values.iter_mut());
        }
        v.push(&mut self.output);
        v
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Matrix<T>)> {
        let mut v = vec![
            (format!("{prefix}.object_proj"), &self.object_proj),
            (format!("{prefix}.action_proj"), &self.action_proj),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            v.push((format!("{prefix}.layer{i}.query"), &l.query));
            for (e, k) in l.keys.iter().enumerate() {
                v.push((format!("{prefix}.layer{i}.key{e}"), k));
            }
            for (e, val) in l.values.iter().enumerate() {
                v.push((format!("{prefix}.layer{i}.value{e}"), val));
            }
        }
        v.push((format!("{prefix}.output"), &self.output));
        v
    }
}

impl<T> GraphTransformerVars<T> {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = vec![self.object_proj, self.action_proj];
        for l in &self.layers {
            v.push(l.query);
            v.extend(&l.keys);
            v.extend(&l.values);
        }
        v.push(self.output);
        v
    }
}

/// Attention mask (`N × 4N`, row-major) and pre-scaled logit offsets.
struct Neighbourhoods<T> {
    mask: Vec<bool>,
    offsets: Vec<Option<Matrix<T>>>,
}

fn neighbourhoods<T: Scalar>(graph: &TemporalGraph, root_scale: T) -> Neighbourhoods<T> {
    let n = graph.nodes.len();
    let width = NEIGHBOURHOODS * n;
    let mut mask = vec![false; n * width];
    for i in 0..n {
        mask[i * width + i] = true;
    }
    let mut offsets: Vec<Option<Matrix<T>>> = vec![None; NEIGHBOURHOODS];
    for e in &graph.edges {
        let s = slot(e.edge_type);
        for (a, b) in [(e.src, e.dst), (e.dst, e.src)] {
            mask[a * width + s * n + b] = true;
            if e.edge_type.is_similarity() {
                let off = T::lit(e.weight.max(MIN_EDGE_WEIGHT).ln()) * root_scale;
                offsets[s].get_or_insert_with(|| Matrix::zeros(n, n)).set(a, b, off);
            }
        }
    }
    Neighbourhoods { mask, offsets }
}

fn features_of<T: Scalar>(graph: &TemporalGraph, ids: &[usize], width: usize, kind: &'static str) -> Result<Matrix<T>, GraphError> {
    let mut rows = Vec::with_capacity(ids.len());
    for &i in ids {
        let f = &graph.nodes[i].feature;
        if f.len() != width {
            return Err(GraphError::FeatureDim {
                kind,
                expected: width,
                actual: f.len(),
            });
        }
        rows.push(f.iter().map(|&v| T::lit(v)).collect::<Vec<T>>());
    }
    Ok(Matrix::from_rows(&rows)?)
}

impl<T: Scalar> GraphTransformerVars<T> {
    /// Encodes `graph` on the tape. Object node inputs come from the graph.
    /// Action node inputs are row `frame` of `actions` when given (so
    /// gradients reach whatever produced them), otherwise the stored node
    /// features.
    pub fn forward(&self, tape: &mut Tape<T>, graph: &TemporalGraph, actions: Option<Var>) -> Result<GraphOutput, GraphError> {
        count_invocation();
        let n = graph.nodes.len();
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let (mut obj_ids, mut act_ids) = (Vec::new(), Vec::new());
        for node in &graph.nodes {
            match node.kind {
                NodeKind::Object { .. } => obj_ids.push(node.id),
                NodeKind::Action => act_ids.push(node.id),
            }
        }

        let mut parts = Vec::new();
        if !obj_ids.is_empty() {
            let x = features_of(graph, &obj_ids, tape.shape(self.object_proj).0, "object")?;
            let x = tape.constant(x);
            parts.push(tape.matmul(x, self.object_proj)?);
        }
        if !act_ids.is_empty() {
            let x = match actions {
                Some(src) => {
                    let frames: Vec<usize> = act_ids.iter().map(|&i| graph.nodes[i].frame).collect();
                    tape.gather_rows(src, &frames)?
                }
                None => {
                    let x = features_of(graph, &act_ids, tape.shape(self.action_proj).0, "action")?;
                    tape.constant(x)
                }
            };
            parts.push(tape.matmul(x, self.action_proj)?);
        }
        let stacked = if parts.len() == 1 { parts[0] } else { tape.vstack(&parts)? };
        let mut order = vec![0; n];
        for (row, &id) in obj_ids.iter().chain(&act_ids).enumerate() {
            order[id] = row;
        }
        let mut h = tape.gather_rows(stacked, &order)?;

        let hood = neighbourhoods(graph, self.scale.sqrt());
        for layer in &self.layers {
            let q = tape.matmul(h, layer.query)?;
            let mut logits = None;
            let mut values = Vec::with_capacity(NEIGHBOURHOODS);
            for e in 0..NEIGHBOURHOODS {
                let k = tape.matmul(h, layer.keys[e])?;
                let mut s = tape.matmul_transposed(q, k)?;
                if let Some(off) = &hood.offsets[e] {
                    let off = tape.constant(off.clone());
                    s = tape.add(s, off)?;
                }
                logits = Some(match logits {
                    None => s,
                    Some(acc) => tape.concat_rows(acc, s)?,
                });
                values.push(tape.matmul(h, layer.values[e])?);
            }
            let weights = tape.softmax_rows(logits.expect("at least one neighbourhood"), self.scale, Some(&hood.mask))?;
            let v = tape.vstack(&values)?;
            let msg = tape.matmul(weights, v)?;
            h = tape.add(h, msg)?;
            if self.norm == GraphNorm::LayerNorm {
                h = tape.layer_norm(h, T::lit(NORM_EPS));
            }
        }
        let nodes = tape.matmul(h, self.output)?;

        let mut pool = Matrix::zeros(graph.frames, n);
        let mut counts = vec![0usize; graph.frames];
        for node in &graph.nodes {
            counts[node.frame] += 1;
        }
        for node in &graph.nodes {
            pool.set(node.frame, node.id, T::one() / T::from_usize(counts[node.frame]).unwrap());
        }
        let pool = tape.constant(pool);
        let frames = tape.matmul(pool, nodes)?;
        Ok(GraphOutput { nodes, frames })
    }
}

/// Encodes a graph from its stored node features.
pub fn graph_transformer_encode<T: Scalar>(
    graph: &TemporalGraph,
    params: &GraphTransformerParams<T>,
) -> Result<GraphFeatures<T>, GraphError> {
    let mut tape = Tape::new();
    let vars = params.bind_constant(&mut tape);
    let out = vars.forward(&mut tape, graph, None)?;
    Ok(GraphFeatures {
        nodes: tape.value(out.nodes).clone(),
        frames: tape.value(out.frames).clone(),
    })
}
