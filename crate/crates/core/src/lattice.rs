//! 3-D voxel lattice with 6-connectivity.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl LatticeDims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn n_voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Voxel index with x varying fastest.
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        (
            i % self.nx,
            (i / self.nx) % self.ny,
            i / (self.nx * self.ny),
        )
    }

    /// Face neighbours of voxel `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y, z) = self.coords(i);
        let d = *self;
        let cand = [
            (x > 0).then(|| d.index(x - 1, y, z)),
            (x + 1 < d.nx).then(|| d.index(x + 1, y, z)),
            (y > 0).then(|| d.index(x, y - 1, z)),
            (y + 1 < d.ny).then(|| d.index(x, y + 1, z)),
            (z > 0).then(|| d.index(x, y, z - 1)),
            (z + 1 < d.nz).then(|| d.index(x, y, z + 1)),
        ];
        cand.into_iter().flatten()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_voxels() == 0 {
            return Err(Error::invalid(format!(
                "lattice {}x{}x{} has zero volume",
                self.nx, self.ny, self.nz
            )));
        }
        Ok(())
    }
}

/// Sparse symmetric adjacency between voxels (or any nodes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeAdjacency {
    neighbors: Vec<Vec<usize>>,
}

impl LatticeAdjacency {
    pub fn from_lattice(dims: LatticeDims) -> Self {
        let neighbors = (0..dims.n_voxels())
            .map(|i| dims.neighbors(i).collect())
            .collect();
        Self { neighbors }
    }

    /// Every node adjacent to every other node.
    pub fn complete(n: usize) -> Self {
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect();
        Self { neighbors }
    }

    /// Builds an adjacency from undirected edges, symmetrizing and dropping
    /// self-loops and duplicates.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("edge ({a}, {b}) outside 0..{n}")));
            }
            if a != b {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { neighbors })
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn is_symmetric(&self) -> bool {
        self.neighbors
            .iter()
            .enumerate()
            .all(|(i, ns)| ns.iter().all(|&j| self.neighbors[j].contains(&i)))
    }

    pub fn has_self_edges(&self) -> bool {
        self.neighbors
            .iter()
            .enumerate()
            .any(|(i, ns)| ns.contains(&i))
    }

    /// Connected-component label per node and the number of components.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let n = self.n_nodes();
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for &w in &self.neighbors[v] {
                    if label[w] == usize::MAX {
                        label[w] = count;
                        queue.push_back(w);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    /// Whether the induced subgraph on `nodes` is connected.
    pub fn is_connected_subset(&self, nodes: &[usize]) -> bool {
        if nodes.is_empty() {
            return false;
        }
        let mut member = vec![false; self.n_nodes()];
        for &v in nodes {
            member[v] = true;
        }
        let mut seen = vec![false; self.n_nodes()];
        let mut queue = VecDeque::from([nodes[0]]);
        seen[nodes[0]] = true;
        let mut reached = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &self.neighbors[v] {
                if member[w] && !seen[w] {
                    seen[w] = true;
                    reached += 1;
                    queue.push_back(w);
                }
            }
        }
        reached == nodes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip_and_degree() {
        let d = LatticeDims::new(3, 4, 5);
        for i in 0..d.n_voxels() {
            let (x, y, z) = d.coords(i);
            assert_eq!(d.index(x, y, z), i);
        }
        let adj = LatticeAdjacency::from_lattice(d);
        assert!(adj.is_symmetric());
        assert!(!adj.has_self_edges());
        assert_eq!(adj.neighbors(d.index(1, 1, 1)).len(), 6);
        assert_eq!(adj.neighbors(0).len(), 3);
        assert_eq!(adj.components().1, 1);
    }

    #[test]
    fn disconnected_edges_count_components() {
        let adj = LatticeAdjacency::from_edges(5, &[(0, 1), (2, 3), (3, 3)]).unwrap();
        assert!(!adj.has_self_edges());
        assert_eq!(adj.components().1, 3);
        assert!(adj.is_connected_subset(&[2, 3]));
        assert!(!adj.is_connected_subset(&[1, 2]));
    }
}
