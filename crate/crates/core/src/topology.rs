//! CV-connectivity of the coupling nodes and the resulting convergence prediction.
//!
//! Two nodes are CV-connected when a path made only of capacitors and voltage
//! sources joins them. If the field terminals are not CV-connected, waveform
//! relaxation with a current-driven field and a voltage-driven circuit
//! converges on sufficiently small windows. The criterion is sufficient only,
//! so a CV-connected coupling yields [`Prediction::NoGuarantee`] rather than
//! a divergence claim.

use std::collections::VecDeque;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::netlist::{CircuitGraph, ElementKind, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Prediction {
    ConvergenceGuaranteed,
    NoGuarantee,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CvVerdict {
    pub cv_connected: bool,
    /// Element names along a shortest C/V-only path, present iff connected.
    pub witness: Option<Vec<String>>,
    pub prediction: Prediction,
}

impl CvVerdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }
}

impl fmt::Display for CvVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CV-connected: {}", self.cv_connected)?;
        if let Some(path) = &self.witness {
            write!(f, " via [{}]", path.join(", "))?;
        }
        write!(f, " -> {:?}", self.prediction)
    }
}

fn is_cv(kind: ElementKind) -> bool {
    matches!(kind, ElementKind::Capacitor | ElementKind::VoltageSource)
}

/// Decide whether `a` and `b` are joined by a capacitor/voltage-source path.
pub fn cv_connected(graph: &CircuitGraph, a: NodeId, b: NodeId) -> Result<CvVerdict> {
    for n in [a, b] {
        if n >= graph.num_nodes() {
            return Err(Error::UnknownNode(n));
        }
    }
    let mut adj: Vec<Vec<(NodeId, usize)>> = vec![Vec::new(); graph.num_nodes()];
    for (idx, e) in graph.elements().iter().enumerate() {
        if is_cv(e.kind()) {
            adj[e.node_plus].push((e.node_minus, idx));
            adj[e.node_minus].push((e.node_plus, idx));
        }
    }

    // BFS from `a`, remembering the edge used to reach each node.
    let mut via: Vec<Option<(NodeId, usize)>> = vec![None; graph.num_nodes()];
    let mut seen = vec![false; graph.num_nodes()];
    seen[a] = true;
    let mut queue = VecDeque::from([a]);
    while let Some(n) = queue.pop_front() {
        if n == b {
            break;
        }
        for &(m, edge) in &adj[n] {
            if !seen[m] {
                seen[m] = true;
                via[m] = Some((n, edge));
                queue.push_back(m);
            }
        }
    }

    if !seen[b] {
        return Ok(CvVerdict {
            cv_connected: false,
            witness: None,
            prediction: Prediction::ConvergenceGuaranteed,
        });
    }
    let mut path = Vec::new();
    let mut node = b;
    while let Some((prev, edge)) = via[node] {
        path.push(graph.elements()[edge].name.clone());
        node = prev;
    }
    path.reverse();
    Ok(CvVerdict {
        cv_connected: true,
        witness: Some(path),
        prediction: Prediction::NoGuarantee,
    })
}

/// Apply the CV criterion to the terminals of the graph's field element.
pub fn predict(graph: &CircuitGraph) -> Result<CvVerdict> {
    let field = graph.field_element().ok_or(Error::NoFieldElement)?;
    cv_connected(graph, field.node_plus, field.node_minus)
}
