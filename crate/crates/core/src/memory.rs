//! External memory bank of unit-vector centroids: cluster-level for the
//! baseline losses, proxy-level for the camera-aware losses. Entries move
//! by the moving-average rule `K[y] <- mu*K[y] + (1-mu)*f`.

use crate::error::{O2capError, Result};
use crate::vecmath;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryLevel {
    Cluster,
    Proxy,
}

#[derive(Debug, Clone)]
pub struct MemoryBank {
    entries: Vec<Vec<f64>>,
    level: MemoryLevel,
    mu: f64,
    renormalize: bool,
    degeneracy_count: u64,
}

impl MemoryBank {
    /// Initialize each slot to the L2-normalized mean of its members'
    /// features. `slots[j]` lists the feature indices of slot `j`.
    pub fn init_from_partition(
        features: &[Vec<f64>],
        slots: &[Vec<usize>],
        level: MemoryLevel,
        mu: f64,
        renormalize: bool,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(O2capError::Parameter(format!("mu={mu} must lie in [0,1]")));
        }
        let dim = features.first().map(|f| f.len()).unwrap_or(0);
        let mut entries = Vec::with_capacity(slots.len());
        for (j, members) in slots.iter().enumerate() {
            if members.is_empty() {
                return Err(O2capError::Init(format!("memory slot {j} has no members")));
            }
            let mut mean = vec![0.0; dim];
            for &m in members {
                vecmath::axpy(&mut mean, 1.0 / members.len() as f64, &features[m]);
            }
            if !vecmath::normalize(&mut mean) {
                return Err(O2capError::Init(format!(
                    "memory slot {j} has a degenerate (near-zero) mean"
                )));
            }
            entries.push(mean);
        }
        Ok(Self {
            entries,
            level,
            mu,
            renormalize,
            degeneracy_count: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn level(&self) -> MemoryLevel {
        self.level
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn entry(&self, j: usize) -> &[f64] {
        &self.entries[j]
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn degeneracy_count(&self) -> u64 {
        self.degeneracy_count
    }

    /// Dot products of `feature` against every entry.
    pub fn similarities(&self, feature: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| vecmath::dot(e, feature))
            .collect()
    }

    /// Moving-average update of one slot. If the blended vector is
    /// degenerate the entry is left unchanged and a counter incremented.
    pub fn update(&mut self, slot: usize, feature: &[f64]) {
        let entry = &self.entries[slot];
        let mut blended: Vec<f64> = entry
            .iter()
            .zip(feature)
            .map(|(e, f)| self.mu * e + (1.0 - self.mu) * f)
            .collect();
        if self.renormalize {
            if vecmath::normalize(&mut blended) {
                self.entries[slot] = blended;
            } else {
                self.degeneracy_count += 1;
            }
        } else if vecmath::norm(&blended) >= 1e-12 {
            self.entries[slot] = blended;
        } else {
            self.degeneracy_count += 1;
        }
    }
}
