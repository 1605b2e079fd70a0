//! Retrieval metrics (mAP, CMC), clustering quality (ARI, purity), and
//! the offline/online association statistics (IoU, precision, recall).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterAssignment, LabeledInstance, ProxyTable};
use crate::dataset::Instance;
use crate::error::{O2capError, Result};
use crate::vecmath::dot;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CmcCurve {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RetrievalMetrics {
    pub map: f64,
    pub cmc: CmcCurve,
    /// Queries skipped for having no valid cross-camera positive.
    pub skipped_queries: usize,
}

/// Standard cross-camera Re-ID protocol: gallery entries sharing both the
/// query's camera and identity are excluded from ranking; positives are
/// same-identity entries from other cameras. Queries without a valid
/// positive are excluded from the mAP/CMC denominators.
pub fn evaluate_retrieval(query: &[Instance], gallery: &[Instance]) -> Result<RetrievalMetrics> {
    let mut ap_sum = 0.0;
    let mut cmc_hits = [0usize; 3];
    let ranks = [1usize, 5, 10];
    let mut valid_queries = 0usize;
    let mut skipped = 0usize;

    for q in query {
        let qid = q.true_id.ok_or_else(|| {
            O2capError::Contract("retrieval evaluation requires ground-truth ids".into())
        })?;
        let mut scored: Vec<(f64, usize, bool)> = Vec::with_capacity(gallery.len());
        for (gi, g) in gallery.iter().enumerate() {
            let gid = g.true_id.ok_or_else(|| {
                O2capError::Contract("retrieval evaluation requires ground-truth ids".into())
            })?;
            let same_id = gid == qid;
            if same_id && g.camera == q.camera {
                continue; // junk: same camera, same identity
            }
            scored.push((dot(&q.embedding, &g.embedding), gi, same_id));
        }
        let num_pos = scored.iter().filter(|(_, _, p)| *p).count();
        if num_pos == 0 {
            skipped += 1;
            continue;
        }
        valid_queries += 1;
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut hits = 0usize;
        let mut ap = 0.0;
        let mut first_hit_rank = usize::MAX;
        for (rank0, (_, _, is_pos)) in scored.iter().enumerate() {
            if *is_pos {
                hits += 1;
                ap += hits as f64 / (rank0 + 1) as f64;
                if first_hit_rank == usize::MAX {
                    first_hit_rank = rank0 + 1;
                }
            }
        }
        ap_sum += ap / num_pos as f64;
        for (slot, &r) in ranks.iter().enumerate() {
            if first_hit_rank <= r {
                cmc_hits[slot] += 1;
            }
        }
    }

    if valid_queries == 0 {
        return Err(O2capError::Contract("no query has a valid positive".into()));
    }
    let denom = valid_queries as f64;
    Ok(RetrievalMetrics {
        map: ap_sum / denom,
        cmc: CmcCurve {
            r1: cmc_hits[0] as f64 / denom,
            r5: cmc_hits[1] as f64 / denom,
            r10: cmc_hits[2] as f64 / denom,
        },
        skipped_queries: skipped,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AssociationStats {
    pub iou: f64,
    pub precision_offline: f64,
    pub precision_online: f64,
    pub precision_union: f64,
    pub recall_offline: f64,
    pub recall_online: f64,
    pub recall_union: f64,
}

fn intersection_len(a: &[usize], b: &[usize]) -> usize {
    // Both sorted ascending.
    let (mut ia, mut ib, mut n) = (0, 0, 0);
    while ia < a.len() && ib < b.len() {
        match a[ia].cmp(&b[ib]) {
            std::cmp::Ordering::Less => ia += 1,
            std::cmp::Ordering::Greater => ib += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                ia += 1;
                ib += 1;
            }
        }
    }
    n
}

/// Majority ground-truth identity of each proxy, ties broken by lowest id.
pub fn proxy_majority_ids(proxies: &ProxyTable, true_ids: &[Option<u32>]) -> Result<Vec<u32>> {
    proxies
        .proxies()
        .iter()
        .map(|p| {
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for &m in &p.members {
                let id = true_ids[m].ok_or_else(|| {
                    O2capError::Contract("association stats require ground-truth ids".into())
                })?;
                *counts.entry(id).or_default() += 1;
            }
            // BTreeMap iteration is ascending by id, so `>` keeps the
            // lowest id on ties.
            let mut best = (0u32, 0usize);
            for (&id, &c) in &counts {
                if c > best.1 {
                    best = (id, c);
                }
            }
            Ok(best.0)
        })
        .collect()
}

/// The per-epoch association statistics: mean IoU between offline and
/// online positive sets, and precision/recall of the offline, online,
/// and union sets against the ground-truth positive proxies.
///
/// `offline[i]` / `online[i]` are the sorted positive sets of anchor
/// `anchors[i]`.
pub fn association_stats(
    offline: &[Vec<usize>],
    online: &[Vec<usize>],
    anchors: &[LabeledInstance],
    proxies: &ProxyTable,
    true_ids: &[Option<u32>],
) -> Result<AssociationStats> {
    if offline.len() != anchors.len() || online.len() != anchors.len() {
        return Err(O2capError::Shape("per-anchor set counts disagree".into()));
    }
    if anchors.is_empty() {
        return Err(O2capError::Contract("no anchors".into()));
    }
    let proxy_gt = proxy_majority_ids(proxies, true_ids)?;
    let mut gt_sets: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (j, &id) in proxy_gt.iter().enumerate() {
        gt_sets.entry(id).or_default().push(j);
    }
    let empty: Vec<usize> = Vec::new();

    let mut iou = 0.0;
    let mut prec = [0.0; 3];
    let mut rec = [0.0; 3];
    for (i, anchor) in anchors.iter().enumerate() {
        let p1 = &offline[i];
        let p2 = &online[i];
        let mut p3: Vec<usize> = p1.iter().chain(p2).copied().collect();
        p3.sort_unstable();
        p3.dedup();

        let inter12 = intersection_len(p1, p2);
        let union12 = p1.len() + p2.len() - inter12;
        iou += inter12 as f64 / union12 as f64;

        let anchor_id = true_ids[anchor.instance].ok_or_else(|| {
            O2capError::Contract("association stats require ground-truth ids".into())
        })?;
        let gt = gt_sets.get(&anchor_id).unwrap_or(&empty);
        for (slot, set) in [p1, p2, &p3].into_iter().enumerate() {
            let hit = intersection_len(set, gt) as f64;
            prec[slot] += if set.is_empty() {
                0.0
            } else {
                hit / set.len() as f64
            };
            rec[slot] += if gt.is_empty() {
                0.0
            } else {
                hit / gt.len() as f64
            };
        }
    }
    let n = anchors.len() as f64;
    Ok(AssociationStats {
        iou: iou / n,
        precision_offline: prec[0] / n,
        precision_online: prec[1] / n,
        precision_union: prec[2] / n,
        recall_offline: rec[0] / n,
        recall_online: rec[1] / n,
        recall_union: rec[2] / n,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ClusteringQuality {
    pub ari: f64,
    pub purity: f64,
}

/// Adjusted Rand Index and mean cluster purity over non-outliers,
/// computed from the contingency table.
pub fn clustering_quality(
    assignment: &ClusterAssignment,
    true_ids: &[Option<u32>],
) -> Result<ClusteringQuality> {
    let mut table: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    let mut row_sums: BTreeMap<usize, usize> = BTreeMap::new();
    let mut col_sums: BTreeMap<u32, usize> = BTreeMap::new();
    let mut n = 0usize;
    for (i, label) in assignment.labels.iter().enumerate() {
        let Some(y) = label else { continue };
        let id = true_ids[i].ok_or_else(|| {
            O2capError::Contract("clustering quality requires ground-truth ids".into())
        })?;
        *table.entry((*y, id)).or_default() += 1;
        *row_sums.entry(*y).or_default() += 1;
        *col_sums.entry(id).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return Err(O2capError::Contract("all instances are outliers".into()));
    }
    let comb2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.values().map(|&v| comb2(v)).sum();
    let sum_rows: f64 = row_sums.values().map(|&v| comb2(v)).sum();
    let sum_cols: f64 = col_sums.values().map(|&v| comb2(v)).sum();
    let total = comb2(n);
    let expected = sum_rows * sum_cols / total;
    let max_index = (sum_rows + sum_cols) / 2.0;
    let ari = if (max_index - expected).abs() < 1e-15 {
        1.0
    } else {
        (sum_cells - expected) / (max_index - expected)
    };

    let mut purity = 0.0;
    for (&y, &size) in &row_sums {
        let best = table
            .iter()
            .filter(|((row, _), _)| *row == y)
            .map(|(_, &v)| v)
            .max()
            .unwrap_or(0);
        purity += best as f64 / size as f64 * (size as f64 / n as f64);
    }
    Ok(ClusteringQuality { ari, purity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::clustering::{split_by_camera, RetainedAssignment};
    use crate::vecmath;

    fn inst(embedding: Vec<f64>, camera: u32, id: u32, index: usize) -> Instance {
        Instance {
            embedding: vecmath::normalized(&embedding).unwrap(),
            camera,
            true_id: Some(id),
            index,
        }
    }

    #[test]
    fn perfect_single_retrieval() {
        let q = vec![inst(vec![1.0, 0.0], 1, 0, 0)];
        let g = vec![inst(vec![1.0, 0.1], 2, 0, 0)];
        let m = evaluate_retrieval(&q, &g).unwrap();
        assert_eq!(m.map, 1.0);
        assert_eq!(m.cmc.r1, 1.0);
    }

    #[test]
    fn match_at_rank_two() {
        let q = vec![inst(vec![1.0, 0.0], 1, 0, 0)];
        let g = vec![
            inst(vec![1.0, 0.05], 2, 1, 0), // closer, wrong id
            inst(vec![1.0, 0.4], 2, 0, 1),  // correct at rank 2
        ];
        let m = evaluate_retrieval(&q, &g).unwrap();
        assert!((m.map - 0.5).abs() < 1e-12);
        assert_eq!(m.cmc.r1, 0.0);
        assert_eq!(m.cmc.r5, 1.0);
    }

    #[test]
    fn same_camera_same_id_excluded() {
        let q = vec![inst(vec![1.0, 0.0], 1, 0, 0)];
        let g = vec![
            inst(vec![1.0, 0.0], 1, 0, 0), // junk: same cam, same id
            inst(vec![1.0, 0.3], 2, 0, 1),
        ];
        let m = evaluate_retrieval(&q, &g).unwrap();
        assert_eq!(m.map, 1.0);
    }

    /// Brute-force per-positive rank-counting reference scorer.
    fn map_oracle(query: &[Instance], gallery: &[Instance]) -> (f64, f64) {
        let mut ap_sum = 0.0;
        let mut r1_hits = 0.0;
        let mut valid = 0.0;
        for q in query {
            let qid = q.true_id.unwrap();
            let pool: Vec<(usize, &Instance)> = gallery
                .iter()
                .enumerate()
                .filter(|(_, g)| !(g.true_id.unwrap() == qid && g.camera == q.camera))
                .collect();
            let positives: Vec<&(usize, &Instance)> = pool
                .iter()
                .filter(|(_, g)| g.true_id.unwrap() == qid)
                .collect();
            if positives.is_empty() {
                continue;
            }
            valid += 1.0;
            let sim = |g: &(usize, &Instance)| dot(&q.embedding, &g.1.embedding);
            let ahead = |target: &(usize, &Instance)| {
                pool.iter()
                    .filter(|other| {
                        let (so, st) = (sim(other), sim(target));
                        so > st || (so == st && other.0 < target.0)
                    })
                    .count()
            };
            let mut ranks: Vec<usize> = positives.iter().map(|p| ahead(p) + 1).collect();
            ranks.sort_unstable();
            let ap: f64 = ranks
                .iter()
                .enumerate()
                .map(|(hits, &r)| (hits + 1) as f64 / r as f64)
                .sum::<f64>()
                / ranks.len() as f64;
            ap_sum += ap;
            if ranks[0] == 1 {
                r1_hits += 1.0;
            }
        }
        (ap_sum / valid, r1_hits / valid)
    }

    #[test]
    fn retrieval_matches_reference_scorer() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mk = |rng: &mut ChaCha8Rng, idx: usize| {
            let v: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() - 0.5).collect();
            inst(v, rng.gen_range(1..4), rng.gen_range(0..8), idx)
        };
        let query: Vec<Instance> = (0..20).map(|i| mk(&mut rng, i)).collect();
        let gallery: Vec<Instance> = (0..100).map(|i| mk(&mut rng, i)).collect();
        let m = evaluate_retrieval(&query, &gallery).unwrap();
        let (map_ref, r1_ref) = map_oracle(&query, &gallery);
        assert!((m.map - map_ref).abs() < 1e-12);
        assert!((m.cmc.r1 - r1_ref).abs() < 1e-12);
        assert!(m.cmc.r1 <= m.cmc.r5 + 1e-15);
        assert!(m.cmc.r5 <= m.cmc.r10 + 1e-15);
    }

    #[test]
    fn retrieval_invariant_under_gallery_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mk = |rng: &mut ChaCha8Rng, idx: usize| {
            let v: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() - 0.5).collect();
            inst(v, rng.gen_range(1..4), rng.gen_range(0..6), idx)
        };
        let query: Vec<Instance> = (0..10).map(|i| mk(&mut rng, i)).collect();
        let gallery: Vec<Instance> = (0..50).map(|i| mk(&mut rng, i)).collect();
        let base = evaluate_retrieval(&query, &gallery).unwrap();
        let mut reversed: Vec<Instance> = gallery.iter().rev().cloned().collect();
        for (i, g) in reversed.iter_mut().enumerate() {
            g.index = i;
        }
        let rev = evaluate_retrieval(&query, &reversed).unwrap();
        assert!((base.map - rev.map).abs() < 1e-12);
        assert!((base.cmc.r1 - rev.cmc.r1).abs() < 1e-12);
    }

    fn toy_proxies(clusters: &[usize], cams: &[u32]) -> ProxyTable {
        let r = RetainedAssignment {
            kept: (0..clusters.len()).collect(),
            labels: clusters.to_vec(),
            num_clusters: clusters.iter().max().unwrap() + 1,
        };
        split_by_camera(&r, cams).unwrap()
    }

    #[test]
    fn identical_sets_full_iou() {
        let table = toy_proxies(&[0, 0, 1, 1], &[1, 2, 1, 2]);
        let anchors = table.labeled_instances().to_vec();
        let ids: Vec<Option<u32>> = vec![Some(0), Some(0), Some(1), Some(1)];
        let sets: Vec<Vec<usize>> = anchors
            .iter()
            .map(|a| table.proxies_of_cluster(a.global_label).to_vec())
            .collect();
        let s = association_stats(&sets, &sets, &anchors, &table, &ids).unwrap();
        assert_eq!(s.iou, 1.0);
        assert_eq!(s.precision_offline, 1.0);
        assert_eq!(s.recall_offline, 1.0);
    }

    #[test]
    fn oracle_online_association_perfect() {
        let table = toy_proxies(&[0, 0, 1, 1], &[1, 2, 1, 2]);
        let anchors = table.labeled_instances().to_vec();
        let ids: Vec<Option<u32>> = vec![Some(0), Some(0), Some(1), Some(1)];
        let gt = proxy_majority_ids(&table, &ids).unwrap();
        let online: Vec<Vec<usize>> = anchors
            .iter()
            .map(|a| {
                let aid = ids[a.instance].unwrap();
                (0..table.num_proxies()).filter(|&j| gt[j] == aid).collect()
            })
            .collect();
        let offline: Vec<Vec<usize>> = anchors.iter().map(|a| vec![a.proxy_index]).collect();
        let s = association_stats(&offline, &online, &anchors, &table, &ids).unwrap();
        assert_eq!(s.precision_online, 1.0);
        assert_eq!(s.recall_online, 1.0);
        assert!(s.recall_union >= s.recall_offline && s.recall_union >= s.recall_online);
    }

    #[test]
    fn stats_match_set_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let clusters: Vec<usize> = (0..12).map(|i| i / 3).collect();
        let cams: Vec<u32> = (0..12).map(|_| rng.gen_range(1..4)).collect();
        let table = toy_proxies(&clusters, &cams);
        let ids: Vec<Option<u32>> = (0..12).map(|_| Some(rng.gen_range(0..3))).collect();
        let anchors = table.labeled_instances().to_vec();
        let z = table.num_proxies();
        let rand_set = |rng: &mut ChaCha8Rng| {
            let mut s: Vec<usize> = (0..z).filter(|_| rng.gen::<bool>()).collect();
            if s.is_empty() {
                s.push(rng.gen_range(0..z));
            }
            s
        };
        let offline: Vec<Vec<usize>> = anchors.iter().map(|_| rand_set(&mut rng)).collect();
        let online: Vec<Vec<usize>> = anchors.iter().map(|_| rand_set(&mut rng)).collect();
        let s = association_stats(&offline, &online, &anchors, &table, &ids).unwrap();

        // Exhaustive set-arithmetic oracle with BTreeSet.
        use std::collections::BTreeSet;
        let gt_ids = proxy_majority_ids(&table, &ids).unwrap();
        let mut iou = 0.0;
        let mut rec_union = 0.0;
        for (i, a) in anchors.iter().enumerate() {
            let s1: BTreeSet<usize> = offline[i].iter().copied().collect();
            let s2: BTreeSet<usize> = online[i].iter().copied().collect();
            iou += s1.intersection(&s2).count() as f64 / s1.union(&s2).count() as f64;
            let gt: BTreeSet<usize> = (0..z)
                .filter(|&j| gt_ids[j] == ids[a.instance].unwrap())
                .collect();
            let union: BTreeSet<usize> = s1.union(&s2).copied().collect();
            if !gt.is_empty() {
                rec_union += union.intersection(&gt).count() as f64 / gt.len() as f64;
            }
        }
        assert!((s.iou - iou / anchors.len() as f64).abs() < 1e-12);
        assert!((s.recall_union - rec_union / anchors.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn clustering_quality_perfect() {
        let a = ClusterAssignment {
            labels: vec![Some(0), Some(0), Some(1), Some(1)],
            num_clusters: 2,
        };
        let ids = vec![Some(5), Some(5), Some(9), Some(9)];
        let q = clustering_quality(&a, &ids).unwrap();
        assert_eq!(q.ari, 1.0);
        assert_eq!(q.purity, 1.0);
    }

    #[test]
    fn single_cluster_purity_is_max_share() {
        let a = ClusterAssignment {
            labels: vec![Some(0); 5],
            num_clusters: 1,
        };
        let ids = vec![Some(0), Some(0), Some(0), Some(1), Some(1)];
        let q = clustering_quality(&a, &ids).unwrap();
        assert!((q.purity - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ari_matches_pair_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let labels: Vec<Option<usize>> = (0..50).map(|_| Some(rng.gen_range(0..5usize))).collect();
        let ids: Vec<Option<u32>> = (0..50).map(|_| Some(rng.gen_range(0..4u32))).collect();
        let a = ClusterAssignment {
            labels: labels.clone(),
            num_clusters: 5,
        };
        let q = clustering_quality(&a, &ids).unwrap();

        // Pair-counting ARI.
        let (mut n11, mut n10, mut n01, mut n00) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..50 {
            for j in (i + 1)..50 {
                let same_cluster = labels[i] == labels[j];
                let same_class = ids[i] == ids[j];
                match (same_cluster, same_class) {
                    (true, true) => n11 += 1.0,
                    (true, false) => n10 += 1.0,
                    (false, true) => n01 += 1.0,
                    (false, false) => n00 += 1.0,
                }
            }
        }
        let total = n11 + n10 + n01 + n00;
        let expected = (n11 + n10) * (n11 + n01) / total;
        let max_index = ((n11 + n10) + (n11 + n01)) / 2.0;
        let ari = (n11 - expected) / (max_index - expected);
        assert!((q.ari - ari).abs() < 1e-9);
    }
}
