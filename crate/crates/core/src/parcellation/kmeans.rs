use rand::Rng as _;

use crate::error::{Error, Result};
use crate::lattice::LatticeDims;
use crate::linalg::Matrix;
use crate::par;
use crate::rng::{self, tag};

use super::Parcellation;

const MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    pub inertia: f64,
    /// Inertia after the initial assignment and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub restart: usize,
}

fn sq_dist(x: &Matrix, i: usize, c: &Matrix, j: usize) -> f64 {
    x.row(i)
        .iter()
        .zip(c.row(j).iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum()
}

/// Nearest centroid per sample (lowest index on ties) and the inertia.
fn assign(x: &Matrix, c: &Matrix) -> (Vec<usize>, Vec<f64>) {
    let mut labels = vec![0; x.nrows()];
    let mut dist = vec![0.0; x.nrows()];
    for i in 0..x.nrows() {
        let (mut best, mut bd) = (0, f64::INFINITY);
        for j in 0..c.nrows() {
            let d = sq_dist(x, i, c, j);
            if d < bd {
                best = j;
                bd = d;
            }
        }
        labels[i] = best;
        dist[i] = bd;
    }
    (labels, dist)
}

fn plus_plus(x: &Matrix, k: usize, rng: &mut rng::Rng) -> Matrix {
    let n = x.nrows();
    let mut centers = Matrix::zeros(k, x.ncols());
    let first = rng.random_range(0..n);
    centers.set_row(0, &x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.set_row(c, &x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, &centers, c));
        }
    }
    centers
}

fn lloyd(x: &Matrix, k: usize, rng: &mut rng::Rng, restart: usize) -> KMeansResult {
    let mut centroids = plus_plus(x, k, rng);
    let (mut labels, mut dist) = assign(x, &centroids);
    let mut history = vec![dist.iter().sum::<f64>()];
    for _ in 0..MAX_ITER {
        let mut sums = Matrix::zeros(k, x.ncols());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            let mut row = sums.row_mut(l);
            row += x.row(i);
        }
        let mut taken = vec![false; x.nrows()];
        for j in 0..k {
            if counts[j] > 0 {
                let mean = sums.row(j) / counts[j] as f64;
                centroids.set_row(j, &mean);
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = (0..x.nrows())
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("more samples than clusters");
                taken[far] = true;
                centroids.set_row(j, &x.row(far));
            }
        }
        let (new_labels, new_dist) = assign(x, &centroids);
        let inertia: f64 = new_dist.iter().sum();
        let converged = new_labels == labels;
        labels = new_labels;
        dist = new_dist;
        history.push(inertia);
        if converged {
            break;
        }
    }
    KMeansResult {
        labels,
        centroids,
        inertia: *history.last().expect("history nonempty"),
        inertia_history: history,
        restart,
    }
}

/// Lloyd's algorithm with k-means++ seeding; the best of `n_init` restarts by
/// inertia is kept (earliest restart on ties). Restarts run in parallel with
/// independent seeded streams.
pub fn kmeans(x: &Matrix, k: usize, seed: u64, n_init: usize) -> Result<KMeansResult> {
    if k == 0 || k > x.nrows() {
        return Err(Error::invalid(format!(
            "cannot form {k} clusters from {} samples",
            x.nrows()
        )));
    }
    let runs = par::map_range(n_init.max(1), |r| {
        let mut g = rng::stream(seed, &[tag::KMEANS, r as u64]);
        lloyd(x, k, &mut g, r)
    });
    Ok(runs
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("at least one restart"))
}

/// K-Means over voxel profiles (p voxels × features).
pub fn kmeans_parcellate(
    features: &Matrix,
    dims: LatticeDims,
    k: usize,
    seed: u64,
    n_init: usize,
) -> Result<Parcellation> {
    if features.nrows() != dims.n_voxels() {
        return Err(Error::invalid("one feature row per voxel required"));
    }
    let res = kmeans(features, k, seed, n_init)?;
    Ok(Parcellation::new(res.labels.into_iter().map(Some).collect(), dims, k)?.canonicalized())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Matrix {
        Matrix::from_fn(20, 2, |i, j| {
            let base = if i < 10 { 0.0 } else { 10.0 };
            base + ((i * 7 + j * 3) % 5) as f64 * 0.1
        })
    }

    #[test]
    fn single_cluster_covers_all() {
        let d = LatticeDims::new(20, 1, 1);
        let p = kmeans_parcellate(&blobs(), d, 1, 0, 3).unwrap();
        assert_eq!(p.n_regions(), 1);
        assert_eq!(p.region_sizes(), vec![20]);
    }

    #[test]
    fn inertia_never_increases_and_reruns_match() {
        let x = Matrix::from_fn(60, 3, |i, j| {
            ((i * 13 + j * 7) % 11) as f64 + (i % 3) as f64 * 5.0
        });
        let a = kmeans(&x, 4, 9, 5).unwrap();
        for w in a.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        let b = kmeans(&x, 4, 9, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_clusters() {
        assert!(kmeans(&blobs(), 21, 0, 1).is_err());
    }
}
