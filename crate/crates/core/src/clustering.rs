//! DBSCAN over a precomputed distance matrix, outlier discarding, and the
//! camera-aware splitting of clusters into per-camera proxies.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{O2capError, Result};
use crate::metricspace::Matrix;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DbscanParams {
    /// Neighborhood radius on the distance matrix.
    pub eps: f64,
    /// Minimum points (including self) for a core point.
    pub min_samples: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        // The clustering setup this pipeline follows: eps = 0.5 on the
        // Jaccard distance, 4 points to form a core.
        Self {
            eps: 0.5,
            min_samples: 4,
        }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if !self.eps.is_finite() || self.eps <= 0.0 {
            return Err(O2capError::Parameter(format!(
                "eps={} must be finite and > 0",
                self.eps
            )));
        }
        if self.min_samples < 1 {
            return Err(O2capError::Parameter("min_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-instance global pseudo label; `None` marks a DBSCAN outlier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<Option<usize>>,
    pub num_clusters: usize,
}

impl ClusterAssignment {
    pub fn num_outliers(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

/// Cluster assignment with outliers removed and labels compacted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetainedAssignment {
    /// Original dataset indices of the retained instances.
    pub kept: Vec<usize>,
    /// Compacted cluster label per retained instance, 0..num_clusters.
    pub labels: Vec<usize>,
    pub num_clusters: usize,
}

impl RetainedAssignment {
    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

/// Standard DBSCAN semantics over a symmetric zero-diagonal distance
/// matrix. Core iff >= min_samples points (including self) within eps;
/// clusters are connected components of core points under eps-reachability;
/// border points attach to the cluster of their lowest-index core
/// neighbor; noise becomes an outlier.
pub fn dbscan(d: &Matrix, p: &DbscanParams) -> Result<ClusterAssignment> {
    p.validate()?;
    let n = d.rows();
    if d.cols() != n {
        return Err(O2capError::Shape(format!(
            "distance matrix must be square, got {}x{}",
            n,
            d.cols()
        )));
    }
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| d.get(i, j) <= p.eps).collect())
        .collect();
    let core: Vec<bool> = neighbors
        .iter()
        .map(|nb| nb.len() >= p.min_samples)
        .collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut num_clusters = 0;
    for start in 0..n {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        let cluster = num_clusters;
        num_clusters += 1;
        let mut queue = vec![start];
        labels[start] = Some(cluster);
        while let Some(i) = queue.pop() {
            for &j in &neighbors[i] {
                if core[j] && labels[j].is_none() {
                    labels[j] = Some(cluster);
                    queue.push(j);
                }
            }
        }
    }
    // Border points: lowest-index core neighbor decides the cluster.
    for i in 0..n {
        if core[i] || labels[i].is_some() {
            continue;
        }
        if let Some(&j) = neighbors[i].iter().find(|&&j| core[j]) {
            labels[i] = labels[j];
        }
    }
    Ok(ClusterAssignment {
        labels,
        num_clusters,
    })
}

/// Drop outliers and compact cluster labels to 0..Y.
pub fn discard_outliers(a: &ClusterAssignment) -> Result<RetainedAssignment> {
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    let mut kept = Vec::new();
    let mut labels = Vec::new();
    for (i, label) in a.labels.iter().enumerate() {
        if let Some(y) = label {
            let next = remap.len();
            let compact = *remap.entry(*y).or_insert(next);
            kept.push(i);
            labels.push(compact);
        }
    }
    if kept.is_empty() {
        return Err(O2capError::EmptyTrainingSet);
    }
    Ok(RetainedAssignment {
        kept,
        labels,
        num_clusters: remap.len(),
    })
}

/// One camera-aware proxy: the members of one cluster seen by one camera.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proxy {
    pub cluster: usize,
    pub camera: u32,
    /// Original dataset indices of the member instances.
    pub members: Vec<usize>,
}

/// A retained instance annotated with its pseudo labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledInstance {
    /// Original dataset index.
    pub instance: usize,
    /// Global cluster pseudo label, 0..Y.
    pub global_label: usize,
    pub camera: u32,
    /// Per-camera proxy label, 0..Z_c within the instance's camera.
    pub proxy_label: usize,
    /// Global memory index of the instance's proxy, 0..Z.
    pub proxy_index: usize,
}

/// Camera-aware proxies plus the per-instance labeling they induce.
///
/// Global proxy indices are contiguous and grouped by ascending camera,
/// so the memory offset of camera `c` is the sum of proxy counts of the
/// cameras before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProxyTable {
    proxies: Vec<Proxy>,
    /// (camera, range of global proxy indices), ascending by camera.
    camera_ranges: Vec<(u32, Range<usize>)>,
    labeled: Vec<LabeledInstance>,
    cluster_proxies: Vec<Vec<usize>>,
}

impl ProxyTable {
    pub fn num_proxies(&self) -> usize {
        self.proxies.len()
    }

    pub fn proxies(&self) -> &[Proxy] {
        &self.proxies
    }

    pub fn proxy(&self, j: usize) -> &Proxy {
        &self.proxies[j]
    }

    /// Retained instances with their pseudo labels (the dataset D'').
    pub fn labeled_instances(&self) -> &[LabeledInstance] {
        &self.labeled
    }

    /// Global proxy-index range of one camera; empty if the camera has
    /// no proxies.
    pub fn camera_range(&self, camera: u32) -> Range<usize> {
        self.camera_ranges
            .iter()
            .find(|(c, _)| *c == camera)
            .map(|(_, r)| r.clone())
            .unwrap_or(0..0)
    }

    pub fn cameras(&self) -> Vec<u32> {
        self.camera_ranges.iter().map(|(c, _)| *c).collect()
    }

    /// Global proxy indices of one cluster, ascending.
    pub fn proxies_of_cluster(&self, cluster: usize) -> &[usize] {
        &self.cluster_proxies[cluster]
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_proxies.len()
    }

    /// Debug dump: `instance,cluster,camera,proxy_label,proxy_index`.
    pub fn dump_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "instance,cluster,camera,proxy_label,proxy_index")?;
        for li in &self.labeled {
            writeln!(
                w,
                "{},{},{},{},{}",
                li.instance, li.global_label, li.camera, li.proxy_label, li.proxy_index
            )?;
        }
        Ok(())
    }
}

/// Split clusters into camera-aware proxies. `cameras` is the per-original-
/// instance camera label array.
pub fn split_by_camera(r: &RetainedAssignment, cameras: &[u32]) -> Result<ProxyTable> {
    for &i in &r.kept {
        if cameras[i] < 1 {
            return Err(O2capError::Label(format!(
                "instance {i} has camera label {} outside [1, C]",
                cameras[i]
            )));
        }
    }
    // Group members by (camera, cluster); BTreeMap order yields the
    // camera-major contiguous global indexing.
    let mut groups: BTreeMap<(u32, usize), Vec<usize>> = BTreeMap::new();
    for (pos, &inst) in r.kept.iter().enumerate() {
        groups
            .entry((cameras[inst], r.labels[pos]))
            .or_default()
            .push(inst);
    }

    let mut proxies = Vec::with_capacity(groups.len());
    let mut camera_ranges: Vec<(u32, Range<usize>)> = Vec::new();
    let mut per_instance: BTreeMap<usize, (usize, usize)> = BTreeMap::new(); // inst -> (proxy_index, proxy_label)
    for ((camera, cluster), members) in groups {
        let global = proxies.len();
        match camera_ranges.last_mut() {
            Some((c, range)) if *c == camera => range.end = global + 1,
            _ => camera_ranges.push((camera, global..global + 1)),
        }
        let label_in_camera = global - camera_ranges.last().unwrap().1.start;
        for &inst in &members {
            per_instance.insert(inst, (global, label_in_camera));
        }
        proxies.push(Proxy {
            cluster,
            camera,
            members,
        });
    }

    let mut cluster_proxies = vec![Vec::new(); r.num_clusters];
    for (j, proxy) in proxies.iter().enumerate() {
        cluster_proxies[proxy.cluster].push(j);
    }

    let labeled = r
        .kept
        .iter()
        .zip(&r.labels)
        .map(|(&inst, &cluster)| {
            let (proxy_index, proxy_label) = per_instance[&inst];
            LabeledInstance {
                instance: inst,
                global_label: cluster,
                camera: cameras[inst],
                proxy_label,
                proxy_index,
            }
        })
        .collect();

    Ok(ProxyTable {
        proxies,
        camera_ranges,
        labeled,
        cluster_proxies,
    })
}
