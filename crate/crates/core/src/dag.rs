//! Weighted DAGs in topological order.
//!
//! Nodes are numbered `0..n` (the JSON document uses `1..=n`). Every edge goes
//! from a parent `j` to a child `i` with `j < i`. Node `0` is the unique source,
//! node `n - 1` the unique sink, and every node lies on a source-to-sink path.
//!
//! Edges are stored grouped by child, with parents sorted ascending, so the
//! incoming edges of node `i` occupy the contiguous id range `edges_into(i)`.
//! Edge-indexed quantities (weights, gradients, perturbations) are plain
//! slices in that order.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    n_nodes: usize,
    offsets: Vec<usize>,
    parents: Vec<usize>,
    children: Vec<usize>,
    weights: Vec<f64>,
    out_offsets: Vec<usize>,
    out_edges: Vec<usize>,
}

/// On-disk form: `{"n_nodes": N, "edges": [[child, parent, weight], ...]}`, 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagDocument {
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl Dag {
    /// Builds and validates a DAG from 0-based `(child, parent, weight)` triples.
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::InvalidDag(format!(
                "need at least 2 nodes, got {n_nodes}"
            )));
        }
        let mut list: Vec<(usize, usize, f64)> = edges.into_iter().collect();
        for &(child, parent, w) in &list {
            if child >= n_nodes || parent >= n_nodes {
                return Err(Error::InvalidDag(format!(
                    "edge ({}, {}) out of range for {n_nodes} nodes",
                    child + 1,
                    parent + 1
                )));
            }
            if parent >= child {
                return Err(Error::InvalidDag(format!(
                    "edge ({}, {}) violates topological order: parent must precede child",
                    child + 1,
                    parent + 1
                )));
            }
            if !w.is_finite() {
                return Err(Error::InvalidDag(format!(
                    "edge ({}, {}) has non-finite weight {w}",
                    child + 1,
                    parent + 1
                )));
            }
        }
        list.sort_by_key(|e| (e.0, e.1));
        for pair in list.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(Error::InvalidDag(format!(
                    "duplicate edge ({}, {})",
                    pair[0].0 + 1,
                    pair[0].1 + 1
                )));
            }
        }

        let mut offsets = vec![0usize; n_nodes + 1];
        for &(child, _, _) in &list {
            offsets[child + 1] += 1;
        }
        for i in 0..n_nodes {
            offsets[i + 1] += offsets[i];
        }
        let parents: Vec<usize> = list.iter().map(|e| e.1).collect();
        let children: Vec<usize> = list.iter().map(|e| e.0).collect();
        let weights: Vec<f64> = list.iter().map(|e| e.2).collect();

        let mut out_count = vec![0usize; n_nodes + 1];
        for &p in &parents {
            out_count[p + 1] += 1;
        }
        for i in 0..n_nodes {
            out_count[i + 1] += out_count[i];
        }
        let out_offsets = out_count.clone();
        let mut cursor = out_count;
        let mut out_edges = vec![0usize; parents.len()];
        for (e, &p) in parents.iter().enumerate() {
            out_edges[cursor[p]] = e;
            cursor[p] += 1;
        }

        for i in 1..n_nodes {
            if offsets[i] == offsets[i + 1] {
                return Err(Error::InvalidDag(format!("node {} has no parent", i + 1)));
            }
        }
        for j in 0..n_nodes - 1 {
            if out_offsets[j] == out_offsets[j + 1] {
                return Err(Error::InvalidDag(format!("node {} has no child", j + 1)));
            }
        }

        Ok(Self {
            n_nodes,
            offsets,
            parents,
            children,
            weights,
            out_offsets,
            out_edges,
        })
    }

    /// Builds from 1-based `(child, parent, weight)` triples.
    pub fn from_one_based(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut shifted = Vec::new();
        for (c, p, w) in edges {
            if c == 0 || p == 0 {
                return Err(Error::InvalidDag(
                    "node indices are 1-based; found index 0".to_string(),
                ));
            }
            shifted.push((c - 1, p - 1, w));
        }
        Self::new(n_nodes, shifted)
    }

    pub fn from_document(doc: &DagDocument) -> Result<Self> {
        Self::from_one_based(doc.n_nodes, doc.edges.iter().copied())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DagDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        Self::from_document(&doc)
    }

    pub fn to_document(&self) -> DagDocument {
        DagDocument {
            n_nodes: self.n_nodes,
            edges: (0..self.n_edges())
                .map(|e| (self.children[e] + 1, self.parents[e] + 1, self.weights[e]))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("DAG document serializes")
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.parents.len()
    }

    /// Ids of the edges entering `node`, ordered by ascending parent.
    pub fn edges_into(&self, node: usize) -> Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    /// Ids of the edges leaving `node`.
    pub fn edges_out_of(&self, node: usize) -> &[usize] {
        &self.out_edges[self.out_offsets[node]..self.out_offsets[node + 1]]
    }

    pub fn parent(&self, edge: usize) -> usize {
        self.parents[edge]
    }

    pub fn child(&self, edge: usize) -> usize {
        self.children[edge]
    }

    pub fn weight(&self, edge: usize) -> f64 {
        self.weights[edge]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn edge_id(&self, child: usize, parent: usize) -> Option<usize> {
        if child >= self.n_nodes {
            return None;
        }
        let range = self.edges_into(child);
        self.parents[range.clone()]
            .binary_search(&parent)
            .ok()
            .map(|k| range.start + k)
    }

    /// Same graph with new edge weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        check_edge_len(self, weights.len())?;
        if let Some((index, &value)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    /// Number of source-to-sink paths, as a float so that huge counts do not overflow.
    pub fn path_count(&self) -> f64 {
        let mut count = vec![0.0f64; self.n_nodes];
        count[0] = 1.0;
        for i in 1..self.n_nodes {
            count[i] = self.edges_into(i).map(|e| count[self.parents[e]]).sum();
        }
        count[self.n_nodes - 1]
    }

    /// `<Y, θ>` for an edge-indexed vector `y`.
    pub fn inner(&self, y: &[f64]) -> f64 {
        y.iter().zip(&self.weights).map(|(a, b)| a * b).sum()
    }
}

pub(crate) fn check_edge_len(dag: &Dag, got: usize) -> Result<()> {
    if got != dag.n_edges() {
        return Err(Error::LengthMismatch {
            expected: dag.n_edges(),
            got,
        });
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn diamond() -> Dag {
        Dag::from_one_based(4, [(2, 1, 1.0), (3, 1, 0.0), (4, 2, 1.0), (4, 3, 0.0)]).unwrap()
    }

    #[test]
    fn layout() {
        let g = diamond();
        assert_eq!(g.n_nodes(), 4);
        assert_eq!(g.n_edges(), 4);
        assert_eq!(g.edges_into(3), 2..4);
        assert_eq!(g.parent(2), 1);
        assert_eq!(g.edges_out_of(0), &[0, 1]);
        assert_eq!(g.edge_id(3, 2), Some(3));
        assert_eq!(g.edge_id(3, 0), None);
        assert_eq!(g.path_count(), 2.0);
    }

    #[test]
    fn json_round_trip() {
        let g = diamond();
        let text = g.to_json();
        assert_eq!(Dag::from_json(&text).unwrap(), g);
        let g2 = Dag::from_json(r#"{"n_nodes": 3, "edges": [[2, 1, 0.5], [3, 2, -1.0]]}"#).unwrap();
        assert_eq!(g2.path_count(), 1.0);
    }

    #[test]
    fn rejects_invalid() {
        assert!(Dag::new(1, []).is_err());
        // parent after child
        assert!(Dag::from_one_based(3, [(2, 3, 0.0), (3, 1, 0.0)]).is_err());
        // node 2 has no child
        assert!(Dag::from_one_based(3, [(2, 1, 0.0), (3, 1, 0.0)]).is_err());
        // node 3 has no parent
        assert!(Dag::from_one_based(3, [(2, 1, 0.0)]).is_err());
        // duplicate
        assert!(Dag::from_one_based(2, [(2, 1, 0.0), (2, 1, 1.0)]).is_err());
        // non-finite
        assert!(Dag::from_one_based(2, [(2, 1, f64::NAN)]).is_err());
        // zero index
        assert!(Dag::from_one_based(2, [(2, 0, 1.0)]).is_err());
        assert!(matches!(Dag::from_json("{\"n_nodes\": 2,\n \"edges\": [[2, 1]]}"), Err(Error::Parse { line: 2, .. })));
    }
}
