//! Proxy- and cluster-level contrastive objectives with exact analytic
//! gradients w.r.t. the anchor embedding. Memory entries are treated as
//! constants; the gradient is the raw Euclidean one (the trainer applies
//! the tangent-space projection).

use serde::{Deserialize, Serialize};

use crate::association::AssociationResult;
use crate::clustering::LabeledInstance;
use crate::error::{O2capError, Result};
use crate::memory::MemoryBank;
use crate::vecmath::{axpy, dot};

/// Scalar loss value plus d(loss)/d(anchor embedding).
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossOutput {
    fn zero(dim: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; dim],
        }
    }

    fn add(&mut self, other: &LossOutput) {
        self.value += other.value;
        axpy(&mut self.grad, 1.0, &other.grad);
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LossParams {
    /// Softmax temperature.
    pub tau: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self { tau: 0.07 }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(O2capError::Parameter(format!(
                "tau={} must be > 0",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Shared multi-positive InfoNCE core over the index set P ∪ Q:
///
/// value = -(1/|P|) Σ_{u∈P} log softmax_u,  softmax over P ∪ Q at
/// temperature tau; gradient = (1/tau)(Σ_j π_j K[j] - (1/|P|) Σ_{u∈P} K[u]).
///
/// Softmax is computed in log space with max subtraction.
fn nce(
    feature: &[f64],
    bank: &MemoryBank,
    positives: &[usize],
    negatives: &[usize],
    tau: f64,
) -> LossOutput {
    let dim = feature.len();
    let indices: Vec<usize> = positives.iter().chain(negatives).copied().collect();
    let scaled: Vec<f64> = indices
        .iter()
        .map(|&j| dot(bank.entry(j), feature) / tau)
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = scaled.iter().map(|s| (s - max).exp()).sum();
    let lse = max + denom.ln();

    let inv_p = 1.0 / positives.len() as f64;
    let pos_sum: f64 = scaled[..positives.len()].iter().sum();
    let value = lse - inv_p * pos_sum;

    let mut grad = vec![0.0; dim];
    for (&j, &s) in indices.iter().zip(&scaled) {
        let pi = (s - max).exp() / denom;
        axpy(&mut grad, pi / tau, bank.entry(j));
    }
    for &u in positives {
        axpy(&mut grad, -inv_p / tau, bank.entry(u));
    }
    LossOutput { value, grad }
}

/// Cluster-level baseline loss: -log softmax over all Y cluster
/// centroids with the anchor's pseudo label as target.
pub fn loss_base(
    feature: &[f64],
    bank: &MemoryBank,
    label: usize,
    p: &LossParams,
) -> Result<LossOutput> {
    p.validate()?;
    if bank.len() < 2 {
        return Err(O2capError::DegenerateLoss(format!(
            "cluster bank has {} entries, need >= 2",
            bank.len()
        )));
    }
    let negatives: Vec<usize> = (0..bank.len()).filter(|&j| j != label).collect();
    Ok(nce(feature, bank, &[label], &negatives, p.tau))
}

/// Baseline variant restricted to hard negatives: -log softmax over
/// {label} ∪ Q0. An empty Q0 degenerates to zero loss.
pub fn loss_base2(
    feature: &[f64],
    bank: &MemoryBank,
    label: usize,
    negatives: &[usize],
    p: &LossParams,
) -> Result<LossOutput> {
    p.validate()?;
    if negatives.is_empty() {
        return Ok(LossOutput::zero(feature.len()));
    }
    if negatives.contains(&label) {
        return Err(O2capError::Contract(
            "Q0 must exclude the target label".into(),
        ));
    }
    Ok(nce(feature, bank, &[label], negatives, p.tau))
}

/// The multi-positive proxy loss shared by the offline, online, and
/// merged objectives; they differ only in which P/Q is supplied.
pub fn loss_positive_set(
    feature: &[f64],
    bank: &MemoryBank,
    positives: &[usize],
    negatives: &[usize],
    p: &LossParams,
) -> Result<LossOutput> {
    p.validate()?;
    if positives.is_empty() {
        return Err(O2capError::Contract(
            "positive set must be non-empty".into(),
        ));
    }
    if negatives.iter().any(|q| positives.contains(q)) {
        return Err(O2capError::Contract("P and Q must be disjoint".into()));
    }
    Ok(nce(feature, bank, positives, negatives, p.tau))
}

/// Intra-camera loss: -log softmax over the proxies of the anchor's
/// camera only, target = the anchor's own proxy.
pub fn loss_intra(
    feature: &[f64],
    bank: &MemoryBank,
    anchor: &LabeledInstance,
    camera_range: std::ops::Range<usize>,
    p: &LossParams,
) -> Result<LossOutput> {
    p.validate()?;
    if !camera_range.contains(&anchor.proxy_index) {
        return Err(O2capError::Contract(format!(
            "anchor proxy {} outside camera range {camera_range:?}",
            anchor.proxy_index
        )));
    }
    if camera_range.len() < 2 {
        return Ok(LossOutput::zero(feature.len()));
    }
    let negatives: Vec<usize> = camera_range.filter(|&j| j != anchor.proxy_index).collect();
    Ok(nce(feature, bank, &[anchor.proxy_index], &negatives, p.tau))
}

/// Combined loss: sum of the offline and online positive-set losses.
pub fn loss_o2cap(
    feature: &[f64],
    bank: &MemoryBank,
    offline: &AssociationResult,
    online: &AssociationResult,
    p: &LossParams,
) -> Result<LossOutput> {
    let mut out = loss_positive_set(feature, bank, &offline.positives, &offline.negatives, p)?;
    let on = loss_positive_set(feature, bank, &online.positives, &online.negatives, p)?;
    out.add(&on);
    Ok(out)
}
