use std::fmt::Write as _;
use std::str::FromStr;

use super::build::{NodeKind, TemporalGraph};
use super::GraphError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
}

impl FromStr for ExportFormat {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "dot" => Ok(Self::Dot),
            other => Err(GraphError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn export_graph(graph: &TemporalGraph, format: ExportFormat) -> String {
    match format {
        ExportFormat::Json => to_json(graph),
        ExportFormat::Dot => to_dot(graph),
    }
}

/// Pretty JSON; floats are written in shortest round-trip form.
pub fn to_json(graph: &TemporalGraph) -> String {
    serde_json::to_string_pretty(graph).expect("graph serializes")
}

/// Parses and validates a JSON graph.
pub fn from_json(text: &str) -> Result<TemporalGraph, GraphError> {
    let graph: TemporalGraph = serde_json::from_str(text).map_err(|e| GraphError::Json(e.to_string()))?;
    graph.validate()?;
    Ok(graph)
}

pub fn to_dot(graph: &TemporalGraph) -> String {
    let mut out = String::from("digraph temporal {\n");
    for n in &graph.nodes {
        let (label, shape) = match n.kind {
            NodeKind::Object { slot } => (format!("obj t{} s{}", n.frame, slot), "ellipse"),
            NodeKind::Action => (format!("act t{}", n.frame), "box"),
        };
        writeln!(out, "  n{} [label=\"{label}\", shape={shape}];", n.id).unwrap();
    }
    for e in &graph.edges {
        writeln!(
            out,
            "  n{} -> n{} [label=\"{} {:.3}\"];",
            e.src,
            e.dst,
            e.edge_type.as_str(),
            e.weight
        )
        .unwrap();
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build::{build_action_graph, build_object_graph, merge_graphs, LinkConfig};
    use crate::features::{synth_generate, Pattern, SynthDims};

    fn sample() -> TemporalGraph {
        let s = synth_generate(3, 5, 3, SynthDims::default(), Pattern::Burst).unwrap();
        let og = build_object_graph(&s.bundle.objects, &LinkConfig::default());
        let ag = build_action_graph(&s.bundle.action);
        merge_graphs(&og, &ag).unwrap()
    }

    #[test]
    fn json_round_trip() {
        let g = sample();
        assert_eq!(from_json(&to_json(&g)).unwrap(), g);
    }

    #[test]
    fn dot_has_one_statement_per_node() {
        let g = sample();
        let dot = to_dot(&g);
        assert_eq!(dot.lines().filter(|l| l.contains("[label=") && !l.contains("->")).count(), g.node_count());
        assert_eq!(dot.matches("->").count(), g.edge_count());
    }

    #[test]
    fn empty_graph_documents() {
        let g = TemporalGraph::default();
        assert_eq!(to_dot(&g), "digraph temporal {\n}\n");
        assert_eq!(from_json(&to_json(&g)).unwrap(), g);
    }

    #[test]
    fn format_parsing() {
        assert_eq!("dot".parse::<ExportFormat>().unwrap(), ExportFormat::Dot);
        assert!("svg".parse::<ExportFormat>().is_err());
    }
}
