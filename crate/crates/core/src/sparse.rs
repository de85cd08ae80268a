//! Symmetric-normalized adjacency in CSR form.
//!
//! Edges from the relation triples are made undirected and binary, every node
//! gets a self-loop, and the stored value at `(i, j)` is `1 / sqrt(d_i · d_j)`
//! where `d` counts neighbours including the self-loop.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::KnowledgeGraph;
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn from_graph(graph: &KnowledgeGraph) -> Self {
        let edges = graph
            .relation_triples()
            .iter()
            .map(|t| (t.head.0, t.tail.0));
        Self::from_edges(graph.entity_count(), edges)
    }

    /// Builds from an arbitrary directed edge list over `0..n`. Direction,
    /// multiplicity and explicit self-loops are ignored.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut neighbours: Vec<BTreeSet<u32>> = (0..n as u32)
            .map(|i| {
                let mut s = BTreeSet::new();
                s.insert(i);
                s
            })
            .collect();
        for (a, b) in edges {
            assert!(
                (a as usize) < n && (b as usize) < n,
                "edge ({a}, {b}) out of range for {n} nodes"
            );
            neighbours[a as usize].insert(b);
            neighbours[b as usize].insert(a);
        }
        let degree: Vec<f64> = neighbours.iter().map(|s| s.len() as f64).collect();

        let nnz = neighbours.iter().map(BTreeSet::len).sum();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_offsets.push(0);
        for (i, row) in neighbours.iter().enumerate() {
            for &j in row {
                col_indices.push(j);
                values.push(1.0 / libm::sqrt(degree[i] * degree[j as usize]));
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            n,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored entries of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .iter()
            .zip(&self.values[range])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// `self · dense`. Because the matrix is symmetric this is also the
    /// transpose product used in the backward pass.
    pub fn spmm(&self, dense: &Matrix) -> Matrix {
        assert_eq!(
            dense.rows(),
            self.n,
            "spmm shape mismatch: {}x{} adjacency times {:?}",
            self.n,
            self.n,
            dense.shape()
        );
        let mut out = Matrix::zeros(self.n, dense.cols());
        for i in 0..self.n {
            let out_row = out.row_mut(i);
            for (j, v) in self.row(i) {
                for (o, x) in out_row.iter_mut().zip(dense.row(j)) {
                    *o += v * x;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Coordinate-list dump `(row, col, value)` of every stored entry.
    pub fn coo(&self) -> Vec<(usize, usize, f64)> {
        let mut out = vec![];
        for i in 0..self.n {
            out.extend(self.row(i).map(|(j, v)| (i, j, v)));
        }
        out
    }
}
