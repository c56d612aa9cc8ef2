use std::collections::BTreeSet;

use crate::error::{Error, Result};

use super::Parcellation;

/// Overlap `2|A∩B| / (|A| + |B|)`.
pub fn dice(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("DICE of an empty voxel set"));
    }
    let inter = a.intersection(b).count();
    Ok(2.0 * inter as f64 / (a.len() + b.len()) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusRegion {
    /// Region id in the first atlas.
    pub source_region: usize,
    /// Best-matching region id in each other atlas.
    pub partners: Vec<usize>,
    pub min_dice: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consensus {
    /// Consensus regions; voxels outside every kept region are background.
    pub parcellation: Parcellation,
    pub regions: Vec<ConsensusRegion>,
}

impl Consensus {
    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

/// Regions of the first atlas whose best DICE partner in every other atlas
/// reaches `threshold`. Each kept region is the voxelwise majority of itself
/// and its partners; a voxel claimed twice goes to the earlier region.
pub fn consensus_atlas(atlases: &[Parcellation], threshold: f64) -> Result<Consensus> {
    if atlases.len() < 2 {
        return Err(Error::invalid("consensus needs at least two atlases"));
    }
    let dims = atlases[0].dims();
    if atlases.iter().any(|a| a.dims() != dims) {
        return Err(Error::invalid("atlases cover different lattices"));
    }
    let sets: Vec<Vec<BTreeSet<usize>>> = atlases
        .iter()
        .map(|a| a.regions().into_iter().map(BTreeSet::from_iter).collect())
        .collect();

    let p = dims.n_voxels();
    let mut labels = vec![None; p];
    let mut regions = Vec::new();
    for (r, reference) in sets[0].iter().enumerate() {
        if reference.is_empty() {
            continue;
        }
        let mut partners = Vec::with_capacity(atlases.len() - 1);
        let mut min_dice = f64::INFINITY;
        for other in &sets[1..] {
            let mut best = (0usize, -1.0f64);
            for (j, cand) in other.iter().enumerate() {
                if cand.is_empty() {
                    continue;
                }
                let d = dice(reference, cand)?;
                if d > best.1 {
                    best = (j, d);
                }
            }
            partners.push(best.0);
            min_dice = min_dice.min(best.1.max(0.0));
        }
        if min_dice < threshold {
            continue;
        }
        let members: Vec<&BTreeSet<usize>> = std::iter::once(reference)
            .chain(partners.iter().zip(&sets[1..]).map(|(&j, s)| &s[j]))
            .collect();
        let union: BTreeSet<usize> = members.iter().flat_map(|s| s.iter().copied()).collect();
        let id = regions.len();
        let mut any = false;
        for v in union {
            let votes = members.iter().filter(|s| s.contains(&v)).count();
            if 2 * votes > members.len() && labels[v].is_none() {
                labels[v] = Some(id);
                any = true;
            }
        }
        if !any {
            continue;
        }
        regions.push(ConsensusRegion {
            source_region: r,
            partners,
            min_dice,
        });
    }
    if regions.is_empty() {
        log::warn!("no region reached DICE {threshold} across all atlases; consensus is empty");
    }
    let n = regions.len();
    Ok(Consensus {
        parcellation: Parcellation::new(labels, dims, n)?,
        regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeDims;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn dice_cases() {
        assert_eq!(dice(&set(&[1, 2, 3]), &set(&[1, 2, 3])).unwrap(), 1.0);
        assert_eq!(dice(&set(&[1, 2]), &set(&[3, 4])).unwrap(), 0.0);
        let a = set(&[0, 1, 2, 3]);
        let b = set(&[1, 2, 3, 10, 11, 12]);
        assert!((dice(&a, &b).unwrap() - 0.6).abs() < 1e-15);
        assert!(dice(&set(&[]), &a).is_err());
    }

    fn stripes(dims: LatticeDims, width: usize) -> Parcellation {
        let labels = (0..dims.n_voxels())
            .map(|v| dims.coords(v).0 / width)
            .collect();
        Parcellation::from_labels(labels, dims).unwrap()
    }

    #[test]
    fn identical_atlases_are_their_own_consensus() {
        let d = LatticeDims::new(9, 3, 1);
        let atlases = vec![stripes(d, 3); 10];
        let c = consensus_atlas(&atlases, 0.9).unwrap();
        assert_eq!(c.parcellation, atlases[0]);
        assert_eq!(c.regions.len(), 3);
    }

    #[test]
    fn jittered_region_is_dropped() {
        // Three 10-voxel stripes. The jittered atlas hands two voxels of
        // region 1 to region 0 and takes two from region 2, so region 1
        // overlaps its original in 8 of 10 voxels: DICE 0.8.
        let d = LatticeDims::new(30, 1, 1);
        let base = Parcellation::from_labels((0..30).map(|v| v / 10).collect(), d).unwrap();
        let mut jitter: Vec<usize> = (0..30).map(|v| v / 10).collect();
        jitter[10] = 0;
        jitter[11] = 0;
        jitter[20] = 1;
        jitter[21] = 1;
        let jittered = Parcellation::from_labels(jitter, d).unwrap();
        let r1_base: BTreeSet<usize> = base.region_voxels(1).into_iter().collect();
        let r1_jit: BTreeSet<usize> = jittered.region_voxels(1).into_iter().collect();
        assert!((dice(&r1_base, &r1_jit).unwrap() - 0.8).abs() < 1e-12);

        let mut atlases = vec![base.clone(); 9];
        atlases.push(jittered);
        let c = consensus_atlas(&atlases, 0.9).unwrap();
        let sources: Vec<usize> = c.regions.iter().map(|r| r.source_region).collect();
        assert!(!sources.contains(&1));
        assert!(sources.contains(&0));
    }

    #[test]
    fn zero_threshold_keeps_every_region() {
        let d = LatticeDims::new(9, 3, 1);
        let a = stripes(d, 3);
        let b = stripes(d, 2);
        let c = consensus_atlas(&[a.clone(), b], 0.0).unwrap();
        assert_eq!(c.regions.len(), a.n_regions());
    }

    #[test]
    fn nothing_survives_gives_empty_consensus() {
        let d = LatticeDims::new(8, 1, 1);
        let a = Parcellation::from_labels(vec![0, 0, 0, 0, 1, 1, 1, 1], d).unwrap();
        let b = Parcellation::from_labels(vec![0, 0, 1, 1, 1, 1, 2, 2], d).unwrap();
        let c = consensus_atlas(&[a, b], 0.9).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.parcellation.covered(), 0);
    }
}
