use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::tiling::{parse_tile_name, TileId};

use super::kmeans::ClusterModel;

/// Tile id encoded in an entry's image file stem.
pub fn entry_tile_id(entry: &ManifestEntry) -> Result<TileId> {
    let stem = Path::new(&entry.image_path)
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidInput(format!("no file stem in {:?}", entry.image_path)))?;
    parse_tile_name(stem)
}

/// Draws exactly `quotas[c]` entries from every cluster `c`, uniformly at
/// random under `seed`, and records the cluster on each selected entry.
pub fn stratified_select(
    manifest: &DatasetManifest,
    clusters: &ClusterModel,
    quotas: &[usize],
    seed: u64,
) -> Result<DatasetManifest> {
    if quotas.len() != clusters.k {
        return Err(Error::InvalidInput(format!(
            "{} quotas for {} clusters",
            quotas.len(),
            clusters.k
        )));
    }
    let mut by_cluster: Vec<Vec<usize>> = vec![Vec::new(); clusters.k];
    for (i, e) in manifest.entries.iter().enumerate() {
        let id = entry_tile_id(e)?;
        let c = *clusters.assignments.get(&id).ok_or_else(|| {
            Error::InvalidInput(format!("tile {id} has no cluster assignment"))
        })?;
        by_cluster[c].push(i);
    }
    let short: Vec<String> = quotas
        .iter()
        .zip(&by_cluster)
        .enumerate()
        .filter(|(_, (&q, members))| q > members.len())
        .map(|(c, (q, members))| format!("cluster {c} wants {q}, has {}", members.len()))
        .collect();
    if !short.is_empty() {
        return Err(Error::QuotaShortfall(short.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<(usize, usize)> = Vec::new();
    for (c, members) in by_cluster.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        picked.extend(members[..quotas[c]].iter().map(|&i| (i, c)));
    }
    picked.sort_unstable();
    let entries = picked
        .into_iter()
        .map(|(i, c)| ManifestEntry {
            cluster_index: Some(c),
            ..manifest.entries[i].clone()
        })
        .collect();
    Ok(DatasetManifest {
        seed,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// `(cluster, population)` sorted by ascending population.
    pub histogram: Vec<(usize, usize)>,
    /// Up to [`MONTAGE_SIZE`] sampled tiles per cluster, indexed by cluster.
    pub samples: Vec<Vec<TileId>>,
}

pub const MONTAGE_SIZE: usize = 100;

impl ClusterReport {
    /// Populations divided by the smallest one.
    pub fn ratios(&self) -> Vec<f64> {
        let min = self.histogram.first().map_or(1, |h| h.1.max(1)) as f64;
        self.histogram.iter().map(|h| h.1 as f64 / min).collect()
    }
}

pub fn cluster_report(model: &ClusterModel) -> ClusterReport {
    let mut histogram: Vec<(usize, usize)> = model.populations().into_iter().enumerate().collect();
    histogram.sort_by_key(|&(c, n)| (n, c));
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let samples = (0..model.k)
        .map(|c| {
            let members = model.members(c);
            let mut s: Vec<TileId> = members
                .choose_multiple(&mut rng, MONTAGE_SIZE)
                .copied()
                .collect();
            s.sort_unstable();
            s
        })
        .collect();
    ClusterReport { histogram, samples }
}

/// Groups manifest entries by their recorded cluster.
pub fn group_by_cluster(manifest: &DatasetManifest) -> BTreeMap<Option<usize>, usize> {
    let mut g = BTreeMap::new();
    for e in &manifest.entries {
        *g.entry(e.cluster_index).or_insert(0) += 1;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{Provenance, Split};
    use crate::tiling::tile_name;

    fn setup(sizes: &[usize]) -> (DatasetManifest, ClusterModel) {
        let mut manifest = DatasetManifest::new(0);
        let mut assignments = BTreeMap::new();
        let mut n = 0;
        for (c, &size) in sizes.iter().enumerate() {
            for _ in 0..size {
                let id = TileId::new(n / 100, n % 100);
                n += 1;
                assignments.insert(id, c);
                manifest.entries.push(ManifestEntry {
                    image_path: format!("tiles/{}.png", tile_name(id)).into(),
                    mask_path: format!("masks/{}.png", tile_name(id)).into(),
                    cluster_index: None,
                    split: Split::Train,
                    provenance: Provenance::Manual,
                });
            }
        }
        let model = ClusterModel {
            k: sizes.len(),
            seed: 1,
            centroids: vec![vec![0.0]; sizes.len()],
            assignments,
            objective_trace: vec![],
        };
        (manifest, model)
    }

    const REFERENCE_SIZES: [usize; 5] = [120, 234, 238, 287, 648];

    #[test]
    fn ten_per_cluster() {
        let (m, model) = setup(&REFERENCE_SIZES);
        let sel = stratified_select(&m, &model, &[10; 5], 3).unwrap();
        assert_eq!(sel.entries.len(), 50);
        // Independent grouping via the model, not the recorded index.
        let mut counts = vec![0; 5];
        for e in &sel.entries {
            let c = model.assignments[&entry_tile_id(e).unwrap()];
            assert_eq!(e.cluster_index, Some(c));
            counts[c] += 1;
        }
        assert_eq!(counts, vec![10; 5]);
        assert_eq!(sel, stratified_select(&m, &model, &[10; 5], 3).unwrap());
        assert_ne!(sel, stratified_select(&m, &model, &[10; 5], 4).unwrap());
    }

    #[test]
    fn zero_and_full_quotas() {
        let (m, model) = setup(&[3, 4]);
        assert!(stratified_select(&m, &model, &[0, 0], 0).unwrap().entries.is_empty());
        let all = stratified_select(&m, &model, &[3, 4], 0).unwrap();
        let paths: Vec<_> = all.entries.iter().map(|e| e.image_path.clone()).collect();
        let orig: Vec<_> = m.entries.iter().map(|e| e.image_path.clone()).collect();
        assert_eq!(paths, orig);
    }

    #[test]
    fn shortfall_names_cluster() {
        let (m, model) = setup(&[3, 4]);
        match stratified_select(&m, &model, &[1, 5], 0) {
            Err(Error::QuotaShortfall(msg)) => assert!(msg.contains("cluster 1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn report_matches_reference_ratios() {
        let (_, model) = setup(&[648, 120, 287, 234, 238]);
        let r = cluster_report(&model);
        let counts: Vec<usize> = r.histogram.iter().map(|h| h.1).collect();
        assert_eq!(counts, REFERENCE_SIZES.to_vec());
        assert_eq!(counts.iter().sum::<usize>(), 1527);
        for (got, want) in r.ratios().iter().zip([1.0, 1.95, 1.98, 2.39, 5.4]) {
            assert!((got - want).abs() < 0.1);
        }
        assert!(r.samples.iter().all(|s| s.len() == MONTAGE_SIZE));
    }

    #[test]
    fn report_of_single_cluster() {
        let (_, model) = setup(&[7]);
        let r = cluster_report(&model);
        assert_eq!(r.histogram, vec![(0, 7)]);
        assert_eq!(r.samples[0].len(), 7);
    }
}
