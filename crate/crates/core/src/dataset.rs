//! Synthetic multi-camera identity data and embedding-file ingestion.
//!
//! A dataset is a flat list of [`Instance`]s: unit-norm embedding vectors
//! tagged with a camera index and, for synthetic/eval data, a ground-truth
//! identity. Two on-disk encodings are supported (CSV and a compact binary
//! format); the loader auto-detects by magic bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{O2capError, Result};
use crate::vecmath;

const MAGIC: &[u8; 4] = b"O2EB";

/// One sample: embedding + camera label + optional ground-truth identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Unit L2-norm embedding of dimension `d`.
    pub embedding: Vec<f64>,
    /// Camera index in `[1, C]`.
    pub camera: u32,
    /// Ground-truth identity; used only for synthesis and evaluation.
    pub true_id: Option<u32>,
    /// Position in the dataset.
    pub index: usize,
}

/// Configuration for [`synthesize`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SynthesisConfig {
    pub num_ids: usize,
    pub num_cameras: u32,
    pub dim: usize,
    /// Target number of distinct cameras each identity appears in (CID).
    pub cameras_per_id: u32,
    /// Target number of images per identity (IID).
    pub images_per_id: usize,
    /// Magnitude of the fixed per-camera additive bias.
    pub camera_shift_scale: f64,
    /// Per-instance Gaussian noise magnitude.
    pub noise_scale: f64,
    pub rng_seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            num_ids: 40,
            num_cameras: 6,
            dim: 32,
            cameras_per_id: 4,
            images_per_id: 20,
            camera_shift_scale: 0.8,
            noise_scale: 0.25,
            rng_seed: 7,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_ids == 0 || self.num_cameras == 0 || self.dim == 0 || self.images_per_id == 0 {
            return Err(O2capError::Config(
                "num_ids, num_cameras, dim and images_per_id must be positive".into(),
            ));
        }
        if self.cameras_per_id == 0 || self.cameras_per_id > self.num_cameras {
            return Err(O2capError::Config(format!(
                "cameras_per_id must be in [1, {}], got {}",
                self.num_cameras, self.cameras_per_id
            )));
        }
        if !self.camera_shift_scale.is_finite() || self.camera_shift_scale < 0.0 {
            return Err(O2capError::Config(
                "camera_shift_scale must be finite and >= 0".into(),
            ));
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(O2capError::Config(
                "noise_scale must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generate a synthetic dataset. Deterministic given the config.
///
/// Each instance is `normalize(id_prototype + camera_bias + noise)`. The
/// camera bias is a fixed random vector per camera shared by all identities,
/// so clusters develop per-camera sub-structure.
pub fn synthesize(cfg: &SynthesisConfig) -> Result<Vec<Instance>> {
    synthesize_with_noise_seed(cfg, cfg.rng_seed)
}

/// Like [`synthesize`], but draws the per-instance noise from a separate
/// stream. Calling this with the same config and a different `noise_seed`
/// yields a fresh set of images of the *same* identities under the *same*
/// cameras, which is how held-out query/gallery splits are produced.
pub fn synthesize_with_noise_seed(cfg: &SynthesisConfig, noise_seed: u64) -> Result<Vec<Instance>> {
    cfg.validate()?;
    let mut structure_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed.wrapping_add(0x6f32_6361_70));

    let prototypes: Vec<Vec<f64>> = (0..cfg.num_ids)
        .map(|_| {
            let mut v = gaussian_vec(&mut structure_rng, cfg.dim);
            vecmath::normalize(&mut v);
            v
        })
        .collect();
    // Bias norm equals camera_shift_scale regardless of dimension, so the
    // scale is directly comparable to the unit-norm prototypes.
    let camera_bias: Vec<Vec<f64>> = (0..cfg.num_cameras)
        .map(|_| {
            let mut v = gaussian_vec(&mut structure_rng, cfg.dim);
            vecmath::normalize(&mut v);
            for x in v.iter_mut() {
                *x *= cfg.camera_shift_scale;
            }
            v
        })
        .collect();

    let all_cameras: Vec<u32> = (1..=cfg.num_cameras).collect();
    let mut instances = Vec::with_capacity(cfg.num_ids * cfg.images_per_id);
    for id in 0..cfg.num_ids {
        let mut cams: Vec<u32> = all_cameras
            .choose_multiple(&mut structure_rng, cfg.cameras_per_id as usize)
            .copied()
            .collect();
        cams.sort_unstable();
        // Spread images_per_id over the chosen cameras as evenly as possible.
        let base = cfg.images_per_id / cams.len();
        let extra = cfg.images_per_id % cams.len();
        for (ci, &cam) in cams.iter().enumerate() {
            let count = base + usize::from(ci < extra);
            for _ in 0..count {
                let mut v = prototypes[id].clone();
                vecmath::axpy(&mut v, 1.0, &camera_bias[(cam - 1) as usize]);
                let mut noise = gaussian_vec(&mut noise_rng, cfg.dim);
                vecmath::normalize(&mut noise);
                vecmath::axpy(&mut v, cfg.noise_scale, &noise);
                if !vecmath::normalize(&mut v) {
                    // Astronomically unlikely; resample direction deterministically.
                    v = gaussian_vec(&mut noise_rng, cfg.dim);
                    vecmath::normalize(&mut v);
                }
                let index = instances.len();
                instances.push(Instance {
                    embedding: v,
                    camera: cam,
                    true_id: Some(id as u32),
                    index,
                });
            }
        }
    }
    Ok(instances)
}

/// Number of distinct cameras in a dataset (max camera label).
pub fn num_cameras(instances: &[Instance]) -> u32 {
    instances.iter().map(|i| i.camera).max().unwrap_or(0)
}

/// Averaged cameras-per-identity over instances with ground truth.
pub fn mean_cameras_per_id(instances: &[Instance]) -> f64 {
    use std::collections::BTreeMap;
    let mut cams: BTreeMap<u32, std::collections::BTreeSet<u32>> = BTreeMap::new();
    for i in instances {
        if let Some(id) = i.true_id {
            cams.entry(id).or_default().insert(i.camera);
        }
    }
    if cams.is_empty() {
        return 0.0;
    }
    cams.values().map(|s| s.len() as f64).sum::<f64>() / cams.len() as f64
}

/// Averaged images-per-identity over instances with ground truth.
pub fn mean_images_per_id(instances: &[Instance]) -> f64 {
    use std::collections::BTreeMap;
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for i in instances {
        if let Some(id) = i.true_id {
            *counts.entry(id).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return 0.0;
    }
    counts.values().map(|&c| c as f64).sum::<f64>() / counts.len() as f64
}

/// Write the CSV encoding: header `dim=<d>,n=<N>`, then one row per
/// instance as `camera,true_id_or_-1,v1,...,vd`.
pub fn save_csv(instances: &[Instance], path: &Path) -> Result<()> {
    let dim = instances.first().map(|i| i.embedding.len()).unwrap_or(0);
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "dim={},n={}", dim, instances.len())?;
    for inst in instances {
        let id = inst.true_id.map(|v| v as i64).unwrap_or(-1);
        write!(w, "{},{}", inst.camera, id)?;
        for v in &inst.embedding {
            write!(w, ",{}", v)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Write the binary encoding: magic `O2EB`, LE u32 N, u32 d, then N
/// records of (u32 camera, i32 true_id, d x f32).
pub fn save_binary(instances: &[Instance], path: &Path) -> Result<()> {
    let dim = instances.first().map(|i| i.embedding.len()).unwrap_or(0);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(instances.len() as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for inst in instances {
        w.write_all(&inst.camera.to_le_bytes())?;
        let id: i32 = inst.true_id.map(|v| v as i32).unwrap_or(-1);
        w.write_all(&id.to_le_bytes())?;
        for &v in &inst.embedding {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load an embedding file, auto-detecting the encoding by magic bytes.
/// Embeddings are re-normalized to unit L2 norm.
pub fn load_embeddings(path: &Path) -> Result<Vec<Instance>> {
    let mut f = File::open(path)?;
    let mut magic = [0u8; 4];
    let n_read = f.read(&mut magic)?;
    drop(f);
    if n_read == 4 && &magic == MAGIC {
        load_binary(path)
    } else {
        load_csv(path)
    }
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> O2capError {
    O2capError::Parse {
        location: location.into(),
        message: message.into(),
    }
}

fn load_csv(path: &Path) -> Result<Vec<Instance>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err("line 1", "empty file"))??;
    let (dim, n) = parse_csv_header(header.trim())
        .ok_or_else(|| parse_err("line 1", format!("malformed header: {header:?}")))?;
    let mut instances = Vec::with_capacity(n);
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let lineno = lineno + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 2 {
            return Err(parse_err(
                format!("line {lineno}"),
                format!("expected {} fields, got {}", dim + 2, fields.len()),
            ));
        }
        let camera: u32 = fields[0]
            .parse()
            .map_err(|e| parse_err(format!("line {lineno}"), format!("bad camera: {e}")))?;
        let id: i64 = fields[1]
            .parse()
            .map_err(|e| parse_err(format!("line {lineno}"), format!("bad true_id: {e}")))?;
        let mut embedding = Vec::with_capacity(dim);
        for (fi, field) in fields[2..].iter().enumerate() {
            let v: f64 = field.parse().map_err(|e| {
                parse_err(
                    format!("line {lineno}"),
                    format!("bad value {}: {e}", fi + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    format!("line {lineno}"),
                    format!("non-finite value {v} at column {}", fi + 3),
                ));
            }
            embedding.push(v);
        }
        if !vecmath::normalize(&mut embedding) {
            return Err(parse_err(format!("line {lineno}"), "zero-norm embedding"));
        }
        let index = instances.len();
        instances.push(Instance {
            embedding,
            camera,
            true_id: if id < 0 { None } else { Some(id as u32) },
            index,
        });
    }
    if instances.len() != n {
        return Err(parse_err(
            "end of file",
            format!("header declares n={n} but found {} rows", instances.len()),
        ));
    }
    Ok(instances)
}

fn parse_csv_header(header: &str) -> Option<(usize, usize)> {
    let mut dim = None;
    let mut n = None;
    for part in header.split(',') {
        let (key, value) = part.split_once('=')?;
        match key.trim() {
            "dim" => dim = Some(value.trim().parse().ok()?),
            "n" => n = Some(value.trim().parse().ok()?),
            _ => return None,
        }
    }
    Some((dim?, n?))
}

fn load_binary(path: &Path) -> Result<Vec<Instance>> {
    let mut data = Vec::new();
    File::open(path)?.read_to_end(&mut data)?;
    if data.len() < 12 || &data[..4] != MAGIC {
        return Err(parse_err("byte 0", "missing O2EB magic"));
    }
    let n = u32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
    let record = 8 + 4 * dim;
    let expected = 12 + n * record;
    if data.len() != expected {
        return Err(parse_err(
            format!("byte {}", data.len()),
            format!("expected {expected} bytes for n={n}, d={dim}"),
        ));
    }
    let mut instances = Vec::with_capacity(n);
    for r in 0..n {
        let off = 12 + r * record;
        let camera = u32::from_le_bytes(data[off..off + 4].try_into().unwrap());
        let id = i32::from_le_bytes(data[off + 4..off + 8].try_into().unwrap());
        let mut embedding = Vec::with_capacity(dim);
        for k in 0..dim {
            let o = off + 8 + 4 * k;
            let v = f32::from_le_bytes(data[o..o + 4].try_into().unwrap()) as f64;
            if !v.is_finite() {
                return Err(parse_err(
                    format!("byte {o}"),
                    format!("non-finite value {v}"),
                ));
            }
            embedding.push(v);
        }
        if !vecmath::normalize(&mut embedding) {
            return Err(parse_err(format!("byte {off}"), "zero-norm embedding"));
        }
        instances.push(Instance {
            embedding,
            camera,
            true_id: if id < 0 { None } else { Some(id as u32) },
            index: r,
        });
    }
    Ok(instances)
}
