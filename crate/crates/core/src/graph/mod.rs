//! Temporal objects-action graph and its graph transformer encoder.
//!
//! Object nodes link across adjacent frames by cosine similarity, action
//! nodes form a frame chain, and every action node links to the objects of
//! its own frame.

mod build;
mod encoder;
mod export;

pub use build::{
    build_action_graph, build_object_graph, cosine, merge_graphs, Edge, EdgeType, LinkConfig, Node, NodeKind,
    TemporalGraph,
};
pub use encoder::{
    graph_transformer_encode, GraphFeatures, GraphLayerParams, GraphLayerVars, GraphNorm, GraphOutput,
    GraphTransformerParams, GraphTransformerVars, NEIGHBOURHOODS, NORM_EPS,
};
pub use export::{export_graph, from_json, to_dot, to_json, ExportFormat};

use std::cell::Cell;

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("object graph spans {objects} frames but action graph spans {actions}")]
    FrameRangeMismatch { objects: usize, actions: usize },
    #[error("{kind} node feature has width {actual}, projection expects {expected}")]
    FeatureDim {
        kind: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("graph JSON: {0}")]
    Json(String),
    #[error("unknown export format {0:?} (expected json or dot)")]
    UnknownFormat(String),
}

thread_local! {
    static INVOCATIONS: Cell<u64> = const { Cell::new(0) };
}

fn count_invocation() {
    INVOCATIONS.with(|c| c.set(c.get() + 1));
}

/// Number of graph build, merge and encode calls made on this thread.
pub fn graph_invocations() -> u64 {
    INVOCATIONS.with(Cell::get)
}

pub fn reset_graph_invocations() {
    INVOCATIONS.with(|c| c.set(0));
}
