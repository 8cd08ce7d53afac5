use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::mesh::{norm, sub, TriangleMesh};
use crate::scalar::Real;

/// Vertex adjacency with Euclidean edge lengths, reusable across sources.
#[derive(Clone, Debug)]
pub struct EdgeGraph<T> {
    offsets: Vec<usize>,
    neighbors: Vec<(usize, T)>,
}

#[derive(PartialEq)]
struct Entry<T>(T, usize);

impl<T: Real> Eq for Entry<T> {}

impl<T: Real> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then on vertex index
        other
            .0
            .partial_cmp(&self.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl<T: Real> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> EdgeGraph<T> {
    pub fn new(mesh: &TriangleMesh<T>) -> Self {
        let n = mesh.num_vertices();
        let edges = mesh.edges();
        let mut degree = vec![0usize; n];
        for &(i, j) in &edges {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![(0usize, T::zero()); offsets[n]];
        let v = mesh.vertices();
        for &(i, j) in &edges {
            let len = norm(sub(v[i], v[j]));
            neighbors[fill[i]] = (j, len);
            fill[i] += 1;
            neighbors[fill[j]] = (i, len);
            fill[j] += 1;
        }
        Self { offsets, neighbors }
    }

    pub fn num_vertices(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, T)] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Single-source shortest path lengths; unreachable vertices are `+∞`.
    pub fn distances_from(&self, source: usize) -> Vec<T> {
        let n = self.num_vertices();
        assert!(source < n, "source vertex out of range");
        let mut dist = vec![T::infinity(); n];
        dist[source] = T::zero();
        let mut heap = BinaryHeap::new();
        heap.push(Entry(T::zero(), source));
        while let Some(Entry(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(u, len) in self.neighbors(v) {
                let nd = d + len;
                if nd < dist[u] {
                    dist[u] = nd;
                    heap.push(Entry(nd, u));
                }
            }
        }
        dist
    }
}

/// Dijkstra distances over the mesh edge graph from `source`.
pub fn geodesic_distances<T: Real>(mesh: &TriangleMesh<T>, source: usize) -> Vec<T> {
    EdgeGraph::new(mesh).distances_from(source)
}
