use serde::{Deserialize, Serialize};

use super::{count_invocation, GraphError};
use crate::features::ObjectFeatures;
use crate::Matrix;

/// Cosine denominators below this count as a zero vector.
const ZERO_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    Object { slot: usize },
    Action,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeType {
    #[serde(rename = "obj-obj")]
    ObjObj,
    #[serde(rename = "act-act")]
    ActAct,
    #[serde(rename = "obj-act")]
    ObjAct,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::ObjObj, EdgeType::ActAct, EdgeType::ObjAct];

    /// Similarity edges carry a cosine weight; the rest are structural.
    pub fn is_similarity(self) -> bool {
        self == EdgeType::ObjObj
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::ObjObj => "obj-obj",
            EdgeType::ActAct => "act-act",
            EdgeType::ObjAct => "obj-act",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub frame: usize,
    pub kind: NodeKind,
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    #[serde(rename = "type")]
    pub edge_type: EdgeType,
    pub weight: f64,
}

/// Typed nodes over a frame range `0..frames` and weighted typed edges.
/// Node ids equal their position in `nodes`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TemporalGraph {
    pub frames: usize,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

/// Object linking rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Minimum cosine similarity for an obj-obj edge.
    pub threshold: f64,
    /// Each object links to at most this many matches in the next frame.
    pub top_k: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            top_k: 1,
        }
    }
}

impl TemporalGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges_of(&self, edge_type: EdgeType) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.edge_type == edge_type)
    }

    /// Dense `N × N` adjacency of one edge type, symmetric, holding the weights.
    pub fn adjacency(&self, edge_type: EdgeType) -> Matrix {
        let n = self.nodes.len();
        let mut m = Matrix::zeros(n, n);
        for e in self.edges_of(edge_type) {
            m.set(e.src, e.dst, e.weight);
            m.set(e.dst, e.src, e.weight);
        }
        m
    }

    /// Uniform feature width, `None` for an empty graph or mixed widths.
    pub fn feature_dim(&self, kind_is_object: bool) -> Option<usize> {
        let mut dims = self
            .nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Object { .. }) == kind_is_object)
            .map(|n| n.feature.len());
        let first = dims.next()?;
        dims.all(|d| d == first).then_some(first)
    }

    /// Checks ids, frame range, edge endpoints and the locality rules:
    /// obj-obj and act-act edges join frames `t` and `t + 1`, obj-act edges
    /// stay inside one frame.
    pub fn validate(&self) -> Result<(), GraphError> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(GraphError::Invalid(format!("node at position {i} has id {}", n.id)));
            }
            if n.frame >= self.frames {
                return Err(GraphError::Invalid(format!(
                    "node {i} on frame {} outside 0..{}",
                    n.frame, self.frames
                )));
            }
            if n.feature.iter().any(|v| !v.is_finite()) {
                return Err(GraphError::Invalid(format!("node {i} has a non-finite feature")));
            }
        }
        for e in &self.edges {
            let (Some(s), Some(d)) = (self.nodes.get(e.src), self.nodes.get(e.dst)) else {
                return Err(GraphError::Invalid(format!("edge {}->{} has a missing endpoint", e.src, e.dst)));
            };
            let is_obj = |n: &Node| matches!(n.kind, NodeKind::Object { .. });
            let ok = match e.edge_type {
                EdgeType::ObjObj => is_obj(s) && is_obj(d) && d.frame == s.frame + 1,
                EdgeType::ActAct => !is_obj(s) && !is_obj(d) && d.frame == s.frame + 1,
                EdgeType::ObjAct => is_obj(s) != is_obj(d) && s.frame == d.frame,
            };
            if !ok {
                return Err(GraphError::Invalid(format!(
                    "{} edge {}->{} breaks frame locality",
                    e.edge_type.as_str(),
                    e.src,
                    e.dst
                )));
            }
            let range = if e.edge_type.is_similarity() { -1.0..=1.0 } else { 1.0..=1.0 };
            if !range.contains(&e.weight) {
                return Err(GraphError::Invalid(format!("edge {}->{} has weight {}", e.src, e.dst, e.weight)));
            }
        }
        Ok(())
    }
}

/// Cosine similarity, or `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < ZERO_NORM || nb < ZERO_NORM {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// One node per present object; an obj-obj edge from `(t, n)` to `(t+1, n')`
/// when their cosine similarity reaches the threshold and `n'` is among the
/// `top_k` most similar qualifying objects of frame `t + 1` (ties go to the
/// lower slot).
pub fn build_object_graph(objects: &ObjectFeatures, link: &LinkConfig) -> TemporalGraph {
    count_invocation();
    let frames = objects.frames();
    let mut nodes = Vec::new();
    let mut by_frame: Vec<Vec<usize>> = vec![Vec::new(); frames];
    for t in 0..frames {
        for slot in 0..objects.slots() {
            if objects.is_present(t, slot) {
                let id = nodes.len();
                nodes.push(Node {
                    id,
                    frame: t,
                    kind: NodeKind::Object { slot },
                    feature: objects.feature(t, slot).to_vec(),
                });
                by_frame[t].push(id);
            }
        }
    }

    let mut edges = Vec::new();
    for t in 0..frames.saturating_sub(1) {
        for &src in &by_frame[t] {
            let mut candidates: Vec<(f64, usize)> = by_frame[t + 1]
                .iter()
                .map(|&dst| {
                    let sim = cosine(&nodes[src].feature, &nodes[dst].feature).unwrap_or_else(|| {
                        log::warn!("zero object vector between nodes {src} and {dst}; similarity taken as 0");
                        0.0
                    });
                    (sim, dst)
                })
                .filter(|&(sim, _)| sim >= link.threshold)
                .collect();
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(weight, dst) in candidates.iter().take(link.top_k) {
                edges.push(Edge {
                    src,
                    dst,
                    edge_type: EdgeType::ObjObj,
                    weight,
                });
            }
        }
    }
    TemporalGraph { frames, nodes, edges }
}

/// One action node per row of `b_seq` and weight-1 chain edges `t → t+1`.
pub fn build_action_graph(b_seq: &Matrix) -> TemporalGraph {
    count_invocation();
    let frames = b_seq.rows();
    let nodes = (0..frames)
        .map(|t| Node {
            id: t,
            frame: t,
            kind: NodeKind::Action,
            feature: b_seq.row(t).to_vec(),
        })
        .collect();
    let edges = (1..frames)
        .map(|t| Edge {
            src: t - 1,
            dst: t,
            edge_type: EdgeType::ActAct,
            weight: 1.0,
        })
        .collect();
    TemporalGraph { frames, nodes, edges }
}

/// Object nodes keep their ids, action nodes follow them. Each action node
/// gets a weight-1 obj-act edge to every object node of its frame.
pub fn merge_graphs(objects: &TemporalGraph, actions: &TemporalGraph) -> Result<TemporalGraph, GraphError> {
    count_invocation();
    if objects.frames != actions.frames {
        return Err(GraphError::FrameRangeMismatch {
            objects: objects.frames,
            actions: actions.frames,
        });
    }
    let offset = objects.nodes.len();
    let mut nodes = objects.nodes.clone();
    nodes.extend(actions.nodes.iter().map(|n| Node {
        id: n.id + offset,
        ..n.clone()
    }));
    let mut edges = objects.edges.clone();
    edges.extend(actions.edges.iter().map(|e| Edge {
        src: e.src + offset,
        dst: e.dst + offset,
        ..e.clone()
    }));
    for act in &actions.nodes {
        for obj in objects.nodes.iter().filter(|o| o.frame == act.frame) {
            edges.push(Edge {
                src: act.id + offset,
                dst: obj.id,
                edge_type: EdgeType::ObjAct,
                weight: 1.0,
            });
        }
    }
    Ok(TemporalGraph {
        frames: objects.frames,
        nodes,
        edges,
    })
}
