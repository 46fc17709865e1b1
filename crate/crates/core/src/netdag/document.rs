//! Versioned JSON model documents.
//!
//! Weights appear twice: as readable row-major decimal arrays and as a
//! base-16 dump of the raw IEEE-754 bits (16 hex digits per value). Loading
//! reads the hex dump, so round trips are bit-exact.

use super::{Activation, DagNetwork, Edge, EdgeId, Node, NodeId};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NodeDoc {
    id: usize,
    width: usize,
    activation: Activation,
    rank: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeDoc {
    id: usize,
    src: usize,
    dst: usize,
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
    weight_hex: String,
    bias_hex: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDoc {
    format_version: u32,
    input_id: usize,
    output_id: usize,
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
}

fn to_hex(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| format!("{:016x}", v.to_bits())).collect()
}

fn from_hex(s: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    if s.len() != expected * 16 || !s.is_ascii() {
        return Err(Error::Document(format!(
            "{what}: expected {} hex digits, found {}",
            expected * 16,
            s.len()
        )));
    }
    (0..expected)
        .map(|i| {
            u64::from_str_radix(&s[16 * i..16 * (i + 1)], 16)
                .map(f64::from_bits)
                .map_err(|e| Error::Document(format!("{what}: {e}")))
        })
        .collect()
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter().copied());
    }
    out
}

pub fn to_document(net: &DagNetwork) -> String {
    let doc = ModelDoc {
        format_version: FORMAT_VERSION,
        input_id: net.input().0,
        output_id: net.output().0,
        nodes: net
            .nodes()
            .iter()
            .map(|n| NodeDoc {
                id: n.id.0,
                width: n.width,
                activation: n.activation,
                rank: n.rank,
            })
            .collect(),
        edges: net
            .edges()
            .iter()
            .map(|e| {
                let weight = row_major(&e.weight);
                EdgeDoc {
                    id: e.id.0,
                    src: e.src.0,
                    dst: e.dst.0,
                    rows: e.weight.nrows(),
                    cols: e.weight.ncols(),
                    weight_hex: to_hex(weight.iter().copied()),
                    weight,
                    bias: e.bias.iter().copied().collect(),
                    bias_hex: to_hex(e.bias.iter().copied()),
                }
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("model documents always serialize")
}

/// Parse and validate a model document.
pub fn from_document(text: &str) -> Result<DagNetwork> {
    let probe: serde_json::Value = serde_json::from_str(text)?;
    let version = probe
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Document("missing format_version".into()))? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let doc: ModelDoc = serde_json::from_value(probe)?;
    let nodes = doc
        .nodes
        .iter()
        .map(|n| Node {
            id: NodeId(n.id),
            width: n.width,
            activation: n.activation,
            rank: n.rank,
        })
        .collect();
    let mut edges = Vec::with_capacity(doc.edges.len());
    for e in &doc.edges {
        let what = format!("edge {}", e.id);
        let count = e
            .rows
            .checked_mul(e.cols)
            .ok_or_else(|| Error::Document(format!("{what}: dimensions overflow")))?;
        let w = from_hex(&e.weight_hex, count, &what)?;
        let b = from_hex(&e.bias_hex, e.bias.len(), &what)?;
        if e.weight.len() != count {
            return Err(Error::Document(format!(
                "{what}: {} decimal weights for a {}x{} matrix",
                e.weight.len(),
                e.rows,
                e.cols
            )));
        }
        edges.push(Edge {
            id: EdgeId(e.id),
            src: NodeId(e.src),
            dst: NodeId(e.dst),
            weight: DMatrix::from_row_slice(e.rows, e.cols, &w),
            bias: DVector::from_vec(b),
        });
    }
    let net = DagNetwork::from_parts(nodes, edges, NodeId(doc.input_id), NodeId(doc.output_id));
    net.ensure_valid()?;
    Ok(net)
}

pub fn save_model(net: &DagNetwork, path: &Path) -> Result<()> {
    fs::write(path, to_document(net))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DagNetwork> {
    from_document(&fs::read_to_string(path)?)
}
