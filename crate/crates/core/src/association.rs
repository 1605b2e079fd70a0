//! Positive/hard-negative proxy association for an anchor instance:
//! offline (all proxies of the anchor's cluster), online (balanced
//! similarity + per-camera 1-NN cap), and the merged union variant.

use serde::{Deserialize, Serialize};

use crate::clustering::{LabeledInstance, ProxyTable};
use crate::error::{O2capError, Result};
use crate::memory::MemoryBank;
use crate::metricspace::knn;
use crate::vecmath::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssociationMode {
    Offline,
    Online,
    Merged,
}

/// Positive proxy set and ordered hard-negative list for one anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationResult {
    /// Ascending global proxy indices.
    pub positives: Vec<usize>,
    /// Hard negatives, ordered by similarity descending.
    pub negatives: Vec<usize>,
    pub mode: AssociationMode,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AssociationParams {
    /// Number of hard negatives.
    pub k1: usize,
    /// Maximum number of online positives (at most one per camera).
    pub k2: usize,
    /// Instance-to-proxy weight of the balanced similarity.
    pub w: f64,
}

impl Default for AssociationParams {
    fn default() -> Self {
        Self {
            k1: 50,
            k2: 3,
            w: 0.15,
        }
    }
}

impl AssociationParams {
    pub fn validate(&self, num_cameras: u32) -> Result<()> {
        if self.k1 < 1 {
            return Err(O2capError::Parameter("k1 must be >= 1".into()));
        }
        if self.k2 < 1 || self.k2 as u32 > num_cameras {
            return Err(O2capError::Parameter(format!(
                "k2={} must lie in [1, C={num_cameras}]",
                self.k2
            )));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(O2capError::Parameter(format!(
                "w={} must lie in [0,1]",
                self.w
            )));
        }
        Ok(())
    }
}

/// Offline association: positives are every proxy split from the anchor's
/// cluster; negatives are the k1 most similar remaining proxies by
/// instance-to-proxy similarity against the bank.
pub fn associate_offline(
    feature: &[f64],
    anchor: &LabeledInstance,
    proxies: &ProxyTable,
    bank: &MemoryBank,
    p: &AssociationParams,
) -> AssociationResult {
    let positives = proxies.proxies_of_cluster(anchor.global_label).to_vec();
    let sims = bank.similarities(feature);
    let negatives = knn(&sims, p.k1, |j| positives.binary_search(&j).is_ok());
    AssociationResult {
        positives,
        negatives,
        mode: AssociationMode::Offline,
    }
}

/// Instance-proxy balanced similarity: a `w`-weighted blend of the
/// instance-to-proxy and self-proxy-to-proxy cosine similarities.
pub fn balanced_similarity(
    feature: &[f64],
    self_proxy: usize,
    j: usize,
    bank: &MemoryBank,
    w: f64,
) -> f64 {
    w * dot(feature, bank.entry(j)) + (1.0 - w) * dot(bank.entry(self_proxy), bank.entry(j))
}

/// Online association via the camera-aware nearest-neighbor criterion:
/// one champion proxy per camera by balanced similarity, the top-k2
/// champions become positives, and hard negatives come from the rest by
/// plain instance-to-proxy similarity.
pub fn associate_online(
    feature: &[f64],
    anchor: &LabeledInstance,
    proxies: &ProxyTable,
    bank: &MemoryBank,
    p: &AssociationParams,
) -> AssociationResult {
    let mut champions: Vec<(usize, f64)> = Vec::new();
    for camera in proxies.cameras() {
        let range = proxies.camera_range(camera);
        let mut best: Option<(usize, f64)> = None;
        for j in range {
            let s = balanced_similarity(feature, anchor.proxy_index, j, bank, p.w);
            let better = match best {
                None => true,
                Some((bj, bs)) => s > bs || (s == bs && j < bj),
            };
            if better {
                best = Some((j, s));
            }
        }
        if let Some(b) = best {
            champions.push(b);
        }
    }
    champions.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut positives: Vec<usize> = champions.iter().take(p.k2).map(|&(j, _)| j).collect();
    positives.sort_unstable();

    let sims = bank.similarities(feature);
    let negatives = knn(&sims, p.k1, |j| positives.binary_search(&j).is_ok());
    AssociationResult {
        positives,
        negatives,
        mode: AssociationMode::Online,
    }
}

/// Merged association: positives are the union of the offline and online
/// positive sets; negatives are re-mined from the remainder.
pub fn associate_merged(
    feature: &[f64],
    anchor: &LabeledInstance,
    proxies: &ProxyTable,
    bank: &MemoryBank,
    p: &AssociationParams,
) -> AssociationResult {
    let off = associate_offline(feature, anchor, proxies, bank, p);
    let on = associate_online(feature, anchor, proxies, bank, p);
    let mut positives = off.positives;
    positives.extend(on.positives);
    positives.sort_unstable();
    positives.dedup();
    let sims = bank.similarities(feature);
    let negatives = knn(&sims, p.k1, |j| positives.binary_search(&j).is_ok());
    AssociationResult {
        positives,
        negatives,
        mode: AssociationMode::Merged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::clustering::{split_by_camera, RetainedAssignment};
    use crate::memory::{MemoryBank, MemoryLevel};
    use crate::vecmath;

    /// Build a proxy table + bank from random features, `clusters` labels
    /// and `cams` camera labels.
    fn fixture(
        seed: u64,
        dim: usize,
        clusters: &[usize],
        cams: &[u32],
    ) -> (Vec<Vec<f64>>, ProxyTable, MemoryBank) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = clusters.len();
        let feats: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() + 0.05).collect();
                vecmath::normalized(&v).unwrap()
            })
            .collect();
        let r = RetainedAssignment {
            kept: (0..n).collect(),
            labels: clusters.to_vec(),
            num_clusters: clusters.iter().max().unwrap() + 1,
        };
        let table = split_by_camera(&r, cams).unwrap();
        let slots: Vec<Vec<usize>> = table.proxies().iter().map(|p| p.members.clone()).collect();
        let bank =
            MemoryBank::init_from_partition(&feats, &slots, MemoryLevel::Proxy, 0.2, true).unwrap();
        (feats, table, bank)
    }

    #[test]
    fn offline_positives_are_cluster_proxies() {
        let clusters = [0, 0, 1, 1];
        let cams = [1, 2, 1, 1];
        let (feats, table, bank) = fixture(1, 6, &clusters, &cams);
        let p = AssociationParams {
            k1: 2,
            k2: 1,
            w: 0.15,
        };
        let anchor = table.labeled_instances()[0];
        let res = associate_offline(&feats[0], &anchor, &table, &bank, &p);
        assert_eq!(res.positives, table.proxies_of_cluster(0).to_vec());
        assert_eq!(res.positives.len(), 2);
        for q in &res.negatives {
            assert!(!res.positives.contains(q));
        }
    }

    #[test]
    fn offline_single_camera_cluster() {
        let clusters = [0, 0, 1];
        let cams = [1, 1, 2];
        let (feats, table, bank) = fixture(2, 5, &clusters, &cams);
        let p = AssociationParams {
            k1: 1,
            k2: 1,
            w: 0.15,
        };
        let anchor = table.labeled_instances()[0];
        let res = associate_offline(&feats[0], &anchor, &table, &bank, &p);
        assert_eq!(res.positives, vec![anchor.proxy_index]);
    }

    #[test]
    fn offline_negatives_match_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // 30 proxies: 30 singleton instances, 10 clusters x 3 cameras.
        let clusters: Vec<usize> = (0..30).map(|i| i / 3).collect();
        let cams: Vec<u32> = (0..30).map(|i| (i % 3 + 1) as u32).collect();
        let (feats, table, bank) = fixture(4, 8, &clusters, &cams);
        let p = AssociationParams {
            k1: 5,
            k2: 2,
            w: 0.15,
        };
        let idx = rng.gen_range(0..30);
        let anchor = table.labeled_instances()[idx];
        let res = associate_offline(&feats[anchor.instance], &anchor, &table, &bank, &p);

        let sims = bank.similarities(&feats[anchor.instance]);
        let mut order: Vec<usize> = (0..bank.len())
            .filter(|j| !res.positives.contains(j))
            .collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
        assert_eq!(res.negatives, order[..5].to_vec());
    }

    #[test]
    fn balanced_similarity_endpoints() {
        let clusters = [0, 0];
        let cams = [1, 2];
        let (feats, table, bank) = fixture(5, 4, &clusters, &cams);
        let anchor = table.labeled_instances()[0];
        // w = 1: exactly the instance-to-proxy similarity.
        let s = balanced_similarity(&feats[0], anchor.proxy_index, 1, &bank, 1.0);
        assert!((s - dot(&feats[0], bank.entry(1))).abs() < 1e-12);
        // w = 0, self proxy: unit self-dot.
        let s = balanced_similarity(
            &feats[0],
            anchor.proxy_index,
            anchor.proxy_index,
            &bank,
            0.0,
        );
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn balanced_similarity_hand_value() {
        // 0.15 * 0.4 + 0.85 * 0.8 = 0.74 checked via a synthetic geometry.
        let w = 0.15_f64;
        let blended = w * 0.4 + (1.0 - w) * 0.8;
        assert!((blended - 0.74).abs() < 1e-12);
    }

    #[test]
    fn online_one_positive_per_camera() {
        let clusters = [0, 0, 1, 1, 0, 1];
        let cams = [1, 1, 1, 2, 2, 2];
        let (feats, table, bank) = fixture(6, 6, &clusters, &cams);
        let p = AssociationParams {
            k1: 2,
            k2: 2,
            w: 0.15,
        };
        for anchor in table.labeled_instances() {
            let res = associate_online(&feats[anchor.instance], anchor, &table, &bank, &p);
            assert_eq!(res.positives.len(), 2);
            let cams_of: Vec<u32> = res
                .positives
                .iter()
                .map(|&j| table.proxy(j).camera)
                .collect();
            assert_ne!(cams_of[0], cams_of[1]);
        }
    }

    #[test]
    fn online_single_camera_caps_at_one() {
        let clusters = [0, 1, 2];
        let cams = [1, 1, 1];
        let (feats, table, bank) = fixture(7, 5, &clusters, &cams);
        let p = AssociationParams {
            k1: 1,
            k2: 3,
            w: 0.15,
        };
        let anchor = table.labeled_instances()[0];
        let res = associate_online(&feats[0], &anchor, &table, &bank, &p);
        assert_eq!(res.positives.len(), 1);
    }

    #[test]
    fn online_matches_two_stage_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // 6 cameras x 4 clusters of singleton proxies.
        let clusters: Vec<usize> = (0..24).map(|i| i % 4).collect();
        let cams: Vec<u32> = (0..24).map(|i| (i / 4 + 1) as u32).collect();
        let (feats, table, bank) = fixture(9, 8, &clusters, &cams);
        let p = AssociationParams {
            k1: 4,
            k2: 3,
            w: 0.15,
        };
        for _ in 0..10 {
            let idx = rng.gen_range(0..24);
            let anchor = table.labeled_instances()[idx];
            let f = &feats[anchor.instance];
            let res = associate_online(f, &anchor, &table, &bank, &p);

            // Stage 1: per-camera argmax of balanced similarity.
            let mut champs: Vec<(usize, f64)> = Vec::new();
            for cam in 1..=6u32 {
                let best = table
                    .camera_range(cam)
                    .map(|j| (j, balanced_similarity(f, anchor.proxy_index, j, &bank, p.w)))
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                    .unwrap();
                champs.push(best);
            }
            // Stage 2: global top-3.
            champs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut want: Vec<usize> = champs[..3].iter().map(|&(j, _)| j).collect();
            want.sort_unstable();
            assert_eq!(res.positives, want);
        }
    }

    #[test]
    fn online_w1_champions_are_plain_argmax() {
        let clusters: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let cams: Vec<u32> = (0..12).map(|i| (i / 4 + 1) as u32).collect();
        let (feats, table, bank) = fixture(10, 6, &clusters, &cams);
        let p = AssociationParams {
            k1: 2,
            k2: 3,
            w: 1.0,
        };
        let anchor = table.labeled_instances()[0];
        let f = &feats[0];
        let res = associate_online(f, &anchor, &table, &bank, &p);
        // With w=1 each selected positive must be its camera's plain argmax.
        let sims = bank.similarities(f);
        for &j in &res.positives {
            let cam = table.proxy(j).camera;
            let best = table
                .camera_range(cam)
                .max_by(|&a, &b| sims[a].total_cmp(&sims[b]).then(b.cmp(&a)))
                .unwrap();
            assert_eq!(j, best);
        }
    }

    #[test]
    fn merged_union_and_counts() {
        let clusters: Vec<usize> = (0..20).map(|i| i / 4).collect();
        let cams: Vec<u32> = (0..20).map(|i| (i % 4 + 1) as u32).collect();
        let (feats, table, bank) = fixture(11, 8, &clusters, &cams);
        let p = AssociationParams {
            k1: 6,
            k2: 2,
            w: 0.15,
        };
        for anchor in table.labeled_instances() {
            let f = &feats[anchor.instance];
            let off = associate_offline(f, anchor, &table, &bank, &p);
            let on = associate_online(f, anchor, &table, &bank, &p);
            let merged = associate_merged(f, anchor, &table, &bank, &p);
            let mut want: Vec<usize> = off.positives.iter().chain(&on.positives).copied().collect();
            want.sort_unstable();
            want.dedup();
            assert_eq!(merged.positives, want);
            for q in &merged.negatives {
                assert!(!merged.positives.contains(q));
            }
            let z = bank.len();
            assert_eq!(merged.negatives.len(), p.k1.min(z - merged.positives.len()));
        }
    }

    #[test]
    fn params_validate() {
        assert!(AssociationParams {
            k1: 0,
            k2: 1,
            w: 0.5
        }
        .validate(4)
        .is_err());
        assert!(AssociationParams {
            k1: 5,
            k2: 5,
            w: 0.5
        }
        .validate(4)
        .is_err());
        assert!(AssociationParams {
            k1: 5,
            k2: 3,
            w: 1.5
        }
        .validate(4)
        .is_err());
        assert!(AssociationParams::default().validate(6).is_ok());
    }
}
