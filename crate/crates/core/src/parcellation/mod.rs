//! Region definition: smoothing, K-Means and spatially constrained Ward
//! clustering of voxel profiles, largest-ROI selection and DICE consensus.
//!
//! Clustering runs on voxel profiles: each voxel is a sample whose features
//! are the (PCA-reduced) concatenated time courses of the training subjects.

mod consensus;
mod kmeans;
mod profiles;
mod smooth;
mod ward;

pub use consensus::{consensus_atlas, dice, Consensus, ConsensusRegion};
pub use kmeans::{kmeans, kmeans_parcellate, KMeansResult};
pub use profiles::{ProfileGram, VoxelProfiles};
pub use smooth::{fwhm_to_sigma, gaussian_smooth};
pub use ward::{ward_parcellate, ward_tree, WardMerge, WardTree};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeAdjacency, LatticeDims};
use crate::linalg::Matrix;
use crate::provenance::{FoldRoles, Tagged};
use crate::signal::AtlasMaps;

/// Default number of regions kept per atlas.
pub const DEFAULT_ROI_COUNT: usize = 84;

/// Hard assignment of voxels to regions; `None` marks background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parcellation {
    labels: Vec<Option<usize>>,
    dims: LatticeDims,
    n_regions: usize,
}

impl Parcellation {
    pub fn new(labels: Vec<Option<usize>>, dims: LatticeDims, n_regions: usize) -> Result<Self> {
        if labels.len() != dims.n_voxels() {
            return Err(Error::invalid(format!(
                "{} labels for a lattice of {} voxels",
                labels.len(),
                dims.n_voxels()
            )));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&l| l >= n_regions) {
            return Err(Error::invalid(format!(
                "label {bad} outside 0..{n_regions}"
            )));
        }
        Ok(Self {
            labels,
            dims,
            n_regions,
        })
    }

    /// Full-coverage parcellation with `n_regions = max label + 1`.
    pub fn from_labels(labels: Vec<usize>, dims: LatticeDims) -> Result<Self> {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(labels.into_iter().map(Some).collect(), dims, k)
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn dims(&self) -> LatticeDims {
        self.dims
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_voxels(&self) -> usize {
        self.labels.len()
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_regions];
        for l in self.labels.iter().flatten() {
            sizes[*l] += 1;
        }
        sizes
    }

    pub fn covered(&self) -> usize {
        self.labels.iter().flatten().count()
    }

    pub fn region_voxels(&self, r: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(r))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn regions(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_regions];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(l) = l {
                out[*l].push(i);
            }
        }
        out
    }

    /// Relabels regions 0.. in order of first appearance, dropping empty ids.
    pub fn canonicalized(&self) -> Self {
        let mut map = vec![None; self.n_regions];
        let mut next = 0;
        let labels = self
            .labels
            .iter()
            .map(|l| {
                l.map(|l| {
                    *map[l].get_or_insert_with(|| {
                        next += 1;
                        next - 1
                    })
                })
            })
            .collect();
        Self {
            labels,
            dims: self.dims,
            n_regions: next,
        }
    }

    /// Indicator maps, one row per nonempty region in id order.
    pub fn to_maps(&self) -> Result<AtlasMaps> {
        let sizes = self.region_sizes();
        let ids: Vec<usize> = (0..self.n_regions).filter(|&r| sizes[r] > 0).collect();
        let mut maps = Matrix::zeros(ids.len(), self.n_voxels());
        let row_of: std::collections::HashMap<usize, usize> =
            ids.iter().enumerate().map(|(row, &id)| (id, row)).collect();
        for (v, l) in self.labels.iter().enumerate() {
            if let Some(l) = l {
                maps[(row_of[l], v)] = 1.0;
            }
        }
        AtlasMaps::with_ids(maps, ids)
    }

    /// Whether every nonempty region induces a connected subgraph.
    pub fn regions_connected(&self, adjacency: &LatticeAdjacency) -> bool {
        self.regions()
            .iter()
            .filter(|r| !r.is_empty())
            .all(|r| adjacency.is_connected_subset(r))
    }
}

/// Keeps the `m` regions with the most voxels (ties to the lower region id)
/// as indicator maps ordered by region id.
pub fn select_largest_rois(parcellation: &Parcellation, m: usize) -> Result<AtlasMaps> {
    let maps = parcellation.to_maps()?;
    if maps.n_regions() < m {
        return Err(Error::invalid(format!(
            "atlas has {} regions, fewer than the {m} requested",
            maps.n_regions()
        )));
    }
    maps.select_largest(m)
}

/// Clustering method used to derive an atlas from training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtlasMethod {
    #[serde(rename = "kmeans")]
    KMeans,
    Ward,
    Ica,
    Msdl,
}

impl AtlasMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AtlasMethod::KMeans => "kmeans",
            AtlasMethod::Ward => "ward",
            AtlasMethod::Ica => "ica",
            AtlasMethod::Msdl => "msdl",
        }
    }
}

/// Parameters for [`estimate_atlas`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtlasSpec {
    pub method: AtlasMethod,
    pub n_clusters: usize,
    pub max_components: usize,
    pub seed: u64,
    pub n_init: usize,
}

/// Estimates a parcellation from training subjects' voxel-profile Gram
/// matrices. Every subject must belong to the fold's training set; test
/// subjects are refused.
pub fn estimate_atlas(
    spec: &AtlasSpec,
    subjects: &[(usize, &ProfileGram)],
    roles: &FoldRoles,
    dims: LatticeDims,
) -> Result<Tagged<Parcellation>> {
    if matches!(spec.method, AtlasMethod::Ica | AtlasMethod::Msdl) {
        return Err(Error::Unimplemented(format!(
            "atlas method `{}`",
            spec.method.name()
        )));
    }
    let provenance = roles.ensure_train_only("atlas", subjects.iter().map(|(id, _)| *id))?;
    let grams: Vec<&ProfileGram> = subjects.iter().map(|(_, g)| *g).collect();
    let profiles = VoxelProfiles::from_grams(&grams, spec.max_components)?;
    let parcellation = match spec.method {
        AtlasMethod::KMeans => kmeans_parcellate(
            profiles.features(),
            dims,
            spec.n_clusters,
            spec.seed,
            spec.n_init,
        )?,
        AtlasMethod::Ward => ward_parcellate(
            profiles.features(),
            dims,
            spec.n_clusters,
            &LatticeAdjacency::from_lattice(dims),
        )?,
        AtlasMethod::Ica | AtlasMethod::Msdl => unreachable!(),
    };
    Ok(Tagged::new(parcellation, provenance))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> LatticeDims {
        LatticeDims::new(10, 10, 1)
    }

    #[test]
    fn largest_rois_keep_suffix_of_sizes() {
        // 100 voxels: region r has r+1 voxels for r in 0..13 (sum 91), region 13 has 9.
        // Regions 8 and 13 tie at 9 voxels; the lower row wins.
        let mut labels = Vec::new();
        for r in 0..13 {
            labels.extend(std::iter::repeat(r).take(r + 1));
        }
        labels.extend(std::iter::repeat(13).take(9));
        let p = Parcellation::from_labels(labels, dims()).unwrap();
        let maps = select_largest_rois(&p, 5).unwrap();
        assert_eq!(maps.region_ids(), &[8, 9, 10, 11, 12]);
        let mut kept = maps.support_sizes();
        kept.sort_unstable();
        assert_eq!(kept, vec![9, 10, 11, 12, 13]);
    }

    #[test]
    fn sizes_one_to_hundred_keep_seventeen_up() {
        let sizes: Vec<usize> = (1..=100).collect();
        let total: usize = sizes.iter().sum();
        let mut labels = Vec::with_capacity(total);
        for (r, s) in sizes.iter().enumerate() {
            labels.extend(std::iter::repeat(r).take(*s));
        }
        let p = Parcellation::from_labels(labels, LatticeDims::new(total, 1, 1)).unwrap();
        let maps = select_largest_rois(&p, DEFAULT_ROI_COUNT).unwrap();
        let mut kept = maps.support_sizes();
        kept.sort_unstable();
        assert_eq!(kept, (17..=100).collect::<Vec<_>>());
    }

    #[test]
    fn exact_count_is_a_noop_and_too_few_errors() {
        let labels: Vec<usize> = (0..100).map(|v| v % 84).collect();
        let p = Parcellation::from_labels(labels, dims()).unwrap();
        let maps = select_largest_rois(&p, 84).unwrap();
        assert_eq!(maps.maps(), p.to_maps().unwrap().maps());
        assert!(select_largest_rois(&p, 85).is_err());
    }

    #[test]
    fn canonical_relabel() {
        let p = Parcellation::new(
            vec![Some(3), Some(3), None, Some(1), Some(0)],
            LatticeDims::new(5, 1, 1),
            4,
        )
        .unwrap();
        let c = p.canonicalized();
        assert_eq!(c.labels(), &[Some(0), Some(0), None, Some(1), Some(2)]);
        assert_eq!(c.n_regions(), 3);
        assert_eq!(c.region_sizes(), vec![2, 1, 1]);
    }

    #[test]
    fn ica_and_msdl_are_reserved() {
        let roles = FoldRoles::new(0, [0usize], [1usize]).unwrap();
        let spec = AtlasSpec {
            method: AtlasMethod::Ica,
            n_clusters: 2,
            max_components: 10,
            seed: 0,
            n_init: 1,
        };
        let err = estimate_atlas(&spec, &[], &roles, dims()).unwrap_err();
        assert!(matches!(err, Error::Unimplemented(_)));
        let parsed: AtlasMethod = serde_json::from_str("\"msdl\"").unwrap();
        assert_eq!(parsed, AtlasMethod::Msdl);
    }

    #[test]
    fn test_subjects_are_refused() {
        let roles = FoldRoles::new(0, [0usize, 1], [2usize]).unwrap();
        let gram =
            ProfileGram::from_series(&Matrix::from_fn(5, 100, |t, v| (t + v) as f64)).unwrap();
        let spec = AtlasSpec {
            method: AtlasMethod::Ward,
            n_clusters: 2,
            max_components: 3,
            seed: 0,
            n_init: 1,
        };
        let err = estimate_atlas(&spec, &[(0, &gram), (2, &gram)], &roles, dims()).unwrap_err();
        assert!(matches!(err, Error::Leakage(_)));
    }
}
