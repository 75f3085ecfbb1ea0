//! Case networks: cases, their perpetrator addresses, entities and
//! collector entities, exported as Graphviz DOT or JSON.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use super::LinkError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum NodeKind {
    #[serde(rename = "case")]
    Case,
    #[serde(rename = "address")]
    Address,
    #[serde(rename = "entity")]
    Entity,
    #[serde(rename = "collector_entity")]
    Collector,
}

impl NodeKind {
    /// Fixed fill colours: green cases, orange addresses, purple entities,
    /// red collectors.
    pub fn fill_color(&self) -> &'static str {
        match self {
            Self::Case => "#ccffcc",
            Self::Address => "#ffe6cc",
            Self::Entity => "#ccccff",
            Self::Collector => "#ffcccc",
        }
    }

    fn id_prefix(&self) -> &'static str {
        match self {
            Self::Case => "case",
            Self::Address => "addr",
            Self::Entity => "entity",
            Self::Collector => "collector",
        }
    }

    pub fn node_id(&self, label: &str) -> String {
        format!("{}:{}", self.id_prefix(), label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// case -> address
    Annotation,
    /// address -> entity
    Membership,
    /// entity -> collector, one hop downstream
    Flow,
}

impl EdgeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Annotation => "annotation",
            Self::Membership => "membership",
            Self::Flow => "flow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetworkNode {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: NodeKind,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetworkEdge {
    pub src: String,
    pub dst: String,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkFormat {
    Dot,
    Json,
}

impl FromStr for NetworkFormat {
    type Err = LinkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(Self::Dot),
            "json" => Ok(Self::Json),
            other => Err(LinkError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CaseNetwork {
    pub nodes: Vec<NetworkNode>,
    pub edges: Vec<NetworkEdge>,
}

fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl CaseNetwork {
    pub fn count_nodes(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serialises")
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph case_network {\n");
        s.push_str("    node [style=filled, shape=ellipse];\n");
        for node in &self.nodes {
            let _ = writeln!(
                s,
                "    {} [label={}, fillcolor=\"{}\"];",
                quote(&node.id),
                quote(&node.label),
                node.kind.fill_color()
            );
        }
        for edge in &self.edges {
            let _ = writeln!(
                s,
                "    {} -> {} [label=\"{}\"];",
                quote(&edge.src),
                quote(&edge.dst),
                edge.kind.as_str()
            );
        }
        s.push_str("}\n");
        s
    }

    pub fn export(&self, format: NetworkFormat) -> Vec<u8> {
        match format {
            NetworkFormat::Dot => self.to_dot().into_bytes(),
            NetworkFormat::Json => self.to_json().into_bytes(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_documents() {
        let net = CaseNetwork::default();
        assert_eq!(net.to_json(), r#"{"nodes":[],"edges":[]}"#);
        assert_eq!(
            net.to_dot(),
            "digraph case_network {\n    node [style=filled, shape=ellipse];\n}\n"
        );
    }

    #[test]
    fn dot_escapes_and_colours() {
        let net = CaseNetwork {
            nodes: vec![NetworkNode {
                id: NodeKind::Address.node_id("we\"ird"),
                kind: NodeKind::Address,
                label: "we\"ird".into(),
            }],
            edges: vec![],
        };
        let dot = net.to_dot();
        assert!(dot.contains(r##""addr:we\"ird" [label="we\"ird", fillcolor="#ffe6cc"];"##));
        let json: serde_json::Value = serde_json::from_str(&net.to_json()).unwrap();
        assert_eq!(json["nodes"][0]["type"], "address");
    }

    #[test]
    fn unknown_format() {
        assert!(matches!(
            "svg".parse::<NetworkFormat>(),
            Err(LinkError::UnknownFormat(_))
        ));
        assert_eq!("dot".parse::<NetworkFormat>().unwrap(), NetworkFormat::Dot);
    }
}
