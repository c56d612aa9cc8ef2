//! Agglomerative Ward clustering restricted to adjacent clusters.
//!
//! Costs are Ward inertia increases `nₐ n_b / (nₐ + n_b) ‖μₐ − μ_b‖²`. After a
//! merge, costs to the new cluster follow the Lance-Williams recurrence; when
//! a neighbour was adjacent to only one of the merged clusters, the missing
//! term is computed from the centroids first.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use crate::error::{Error, Result};
use crate::lattice::{LatticeAdjacency, LatticeDims};
use crate::linalg::Matrix;

use super::Parcellation;

/// One merge. Leaves are `0..n`; the cluster created by merge `s` has id
/// `n + s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WardMerge {
    pub a: usize,
    pub b: usize,
    pub cost: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WardTree {
    pub n_leaves: usize,
    pub merges: Vec<WardMerge>,
}

#[derive(Debug, PartialEq)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Reversed: the heap pops the cheapest merge, then the lowest ids.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.a.cmp(&self.a))
            .then(other.b.cmp(&self.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn ward_cost(ca: &[f64], na: usize, cb: &[f64], nb: usize) -> f64 {
    let d2: f64 = ca.iter().zip(cb).map(|(x, y)| (x - y).powi(2)).sum();
    (na * nb) as f64 / (na + nb) as f64 * d2
}

/// Builds the merge tree until no adjacent pair remains.
pub fn ward_tree(features: &Matrix, adjacency: &LatticeAdjacency) -> Result<WardTree> {
    let n = features.nrows();
    if adjacency.n_nodes() != n {
        return Err(Error::invalid(format!(
            "adjacency has {} nodes for {n} samples",
            adjacency.n_nodes()
        )));
    }
    let total = 2 * n;
    let mut centroid: Vec<Vec<f64>> = Vec::with_capacity(total);
    for i in 0..n {
        centroid.push(features.row(i).iter().copied().collect());
    }
    let mut size = vec![1usize; n];
    size.reserve(n);
    let mut alive = vec![true; n];
    alive.reserve(n);
    let mut nbrs: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    let mut heap = BinaryHeap::new();
    for i in 0..n {
        for &j in adjacency.neighbors(i) {
            if j > i {
                let cost = ward_cost(&centroid[i], 1, &centroid[j], 1);
                nbrs[i].insert(j, cost);
                nbrs[j].insert(i, cost);
                heap.push(Candidate { cost, a: i, b: j });
            }
        }
    }

    let mut merges = Vec::new();
    while let Some(Candidate { cost, a, b }) = heap.pop() {
        if !alive[a] || !alive[b] {
            continue;
        }
        let m = centroid.len();
        let (na, nb) = (size[a], size[b]);
        let nm = na + nb;
        let merged: Vec<f64> = centroid[a]
            .iter()
            .zip(&centroid[b])
            .map(|(x, y)| (na as f64 * x + nb as f64 * y) / nm as f64)
            .collect();
        alive[a] = false;
        alive[b] = false;
        let na_map = std::mem::take(&mut nbrs[a]);
        let nb_map = std::mem::take(&mut nbrs[b]);
        let mut touched: Vec<usize> = na_map.keys().chain(nb_map.keys()).copied().collect();
        touched.sort_unstable();
        touched.dedup();

        let mut new_map = BTreeMap::new();
        for c in touched {
            if c == a || c == b || !alive[c] {
                continue;
            }
            let nc = size[c];
            let dca = na_map
                .get(&c)
                .copied()
                .unwrap_or_else(|| ward_cost(&centroid[c], nc, &centroid[a], na));
            let dcb = nb_map
                .get(&c)
                .copied()
                .unwrap_or_else(|| ward_cost(&centroid[c], nc, &centroid[b], nb));
            let d = ((na + nc) as f64 * dca + (nb + nc) as f64 * dcb - nc as f64 * cost)
                / (na + nb + nc) as f64;
            nbrs[c].remove(&a);
            nbrs[c].remove(&b);
            nbrs[c].insert(m, d);
            new_map.insert(c, d);
            heap.push(Candidate {
                cost: d,
                a: c,
                b: m,
            });
        }
        centroid.push(merged);
        size.push(nm);
        alive.push(true);
        nbrs.push(new_map);
        merges.push(WardMerge {
            a: a.min(b),
            b: a.max(b),
            cost,
            size: nm,
        });
    }
    Ok(WardTree {
        n_leaves: n,
        merges,
    })
}

impl WardTree {
    /// Flat labels after the first `n − k` merges, numbered by first
    /// appearance.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.n_leaves;
        if k == 0 || k > n {
            return Err(Error::invalid(format!(
                "cannot cut {n} leaves into {k} clusters"
            )));
        }
        let needed = n - k;
        if self.merges.len() < needed {
            return Err(Error::invalid(format!(
                "adjacency graph has {} connected components; cannot form {k} clusters",
                n - self.merges.len()
            )));
        }
        let mut parent: Vec<usize> = (0..n + needed).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (s, m) in self.merges[..needed].iter().enumerate() {
            let id = n + s;
            parent[m.a] = id;
            parent[m.b] = id;
        }
        let mut label_of = std::collections::HashMap::new();
        Ok((0..n)
            .map(|i| {
                let root = find(&mut parent, i);
                let next = label_of.len();
                *label_of.entry(root).or_insert(next)
            })
            .collect())
    }
}

/// Spatially constrained Ward parcellation into exactly `k` regions.
pub fn ward_parcellate(
    features: &Matrix,
    dims: LatticeDims,
    k: usize,
    adjacency: &LatticeAdjacency,
) -> Result<Parcellation> {
    if features.nrows() != dims.n_voxels() {
        return Err(Error::invalid("one feature row per voxel required"));
    }
    let (_, components) = adjacency.components();
    if k < components {
        return Err(Error::invalid(format!(
            "k = {k} is below the {components} connected components of the adjacency"
        )));
    }
    let labels = ward_tree(features, adjacency)?.cut(k)?;
    Parcellation::from_labels(labels, dims)
}
