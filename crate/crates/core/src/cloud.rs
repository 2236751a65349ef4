//! Structure-of-arrays Gaussian storage with an object partition.
//!
//! Gaussians of one object always occupy a contiguous index range, and ranges
//! appear in object order. Densification keeps that layout by rebuilding the
//! arrays rather than appending at the end.

use std::ops::Range;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::primitive::rotation_z;
use crate::scene::{ObjectSpec, SceneSpec};

pub const DEFAULT_POINTS_PER_OBJECT: usize = 4096;
pub const INITIAL_OPACITY: f64 = 0.1;
pub const COLOR_JITTER: f64 = 0.05;
/// Random draws reserved per point in the counter-based stream (in 32-bit words).
const WORDS_PER_POINT: u128 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSlot {
    pub id: String,
    pub range: Range<usize>,
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    pub means: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    /// Quaternions stored as `(w, x, y, z)`.
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    /// Unconstrained color parameters; rendered through a sigmoid.
    pub colors: Vec<[f64; 3]>,
    pub objects: Vec<ObjectSlot>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Initial isotropic standard deviation for an object's Gaussians.
pub fn initial_sigma(size: f64, n_points: usize) -> f64 {
    size * (n_points as f64).powf(-1.0 / 3.0) * 0.5
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn range(&self, object: usize) -> Range<usize> {
        self.objects[object].range.clone()
    }

    /// Object owning Gaussian `index`.
    pub fn owner(&self, index: usize) -> usize {
        self.objects
            .partition_point(|o| o.range.end <= index)
            .min(self.objects.len().saturating_sub(1))
    }

    /// Per-Gaussian owner table.
    pub fn owners(&self) -> Vec<usize> {
        let mut out = vec![0; self.len()];
        for (k, slot) in self.objects.iter().enumerate() {
            out[slot.range.clone()].fill(k);
        }
        out
    }

    /// Gaussian indices belonging to the given objects, ascending.
    pub fn subset_indices(&self, objects: &[usize]) -> Vec<usize> {
        let mut sorted = objects.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        sorted.iter().flat_map(|&k| self.range(k)).collect()
    }

    pub fn all_objects(&self) -> Vec<usize> {
        (0..self.objects.len()).collect()
    }

    /// Means with each object's translation applied. Never mutates stored state.
    pub fn effective_means(&self) -> Vec<[f64; 3]> {
        let mut out = self.means.clone();
        for slot in &self.objects {
            let t = slot.translation;
            for m in &mut out[slot.range.clone()] {
                m[0] += t[0];
                m[1] += t[1];
                m[2] += t[2];
            }
        }
        out
    }

    pub fn effective_mean(&self, index: usize) -> [f64; 3] {
        let t = self.objects[self.owner(index)].translation;
        let m = self.means[index];
        [m[0] + t[0], m[1] + t[1], m[2] + t[2]]
    }

    /// Checks array lengths, partition disjointness/coverage and quaternion norms.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.len();
        if self.log_scales.len() != n
            || self.rotations.len() != n
            || self.opacity_logits.len() != n
            || self.colors.len() != n
        {
            return Err("parameter arrays have mismatched lengths".into());
        }
        let mut cursor = 0;
        for slot in &self.objects {
            if slot.range.start != cursor || slot.range.end < slot.range.start {
                return Err(format!("partition of `{}` is not contiguous at {cursor}", slot.id));
            }
            cursor = slot.range.end;
        }
        if cursor != n {
            return Err(format!("partitions cover [0, {cursor}) but cloud has {n} Gaussians"));
        }
        for (i, q) in self.rotations.iter().enumerate() {
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(format!("quaternion {i} has norm {norm}"));
            }
        }
        Ok(())
    }

    /// Copy of a single object's Gaussians (translation preserved).
    pub fn extract_object(&self, object: usize) -> GaussianCloud {
        let slot = &self.objects[object];
        let r = slot.range.clone();
        GaussianCloud {
            means: self.means[r.clone()].to_vec(),
            log_scales: self.log_scales[r.clone()].to_vec(),
            rotations: self.rotations[r.clone()].to_vec(),
            opacity_logits: self.opacity_logits[r.clone()].to_vec(),
            colors: self.colors[r.clone()].to_vec(),
            objects: vec![ObjectSlot {
                id: slot.id.clone(),
                range: 0..r.len(),
                translation: slot.translation,
            }],
        }
    }

    pub fn extract_object_by_id(&self, id: &str) -> Result<GaussianCloud> {
        let k = self.object_index(id).ok_or_else(|| Error::UnknownObject(id.to_string()))?;
        Ok(self.extract_object(k))
    }

    /// Appends another cloud's objects after the existing ones.
    pub fn append(&mut self, other: GaussianCloud) {
        let offset = self.len();
        self.means.extend(other.means);
        self.log_scales.extend(other.log_scales);
        self.rotations.extend(other.rotations);
        self.opacity_logits.extend(other.opacity_logits);
        self.colors.extend(other.colors);
        for slot in other.objects {
            self.objects.push(ObjectSlot {
                id: slot.id,
                range: slot.range.start + offset..slot.range.end + offset,
                translation: slot.translation,
            });
        }
    }

    pub fn renormalize_rotations(&mut self) {
        for q in &mut self.rotations {
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                q.iter_mut().for_each(|c| *c /= norm);
            } else {
                *q = [1.0, 0.0, 0.0, 0.0];
            }
        }
    }
}

/// Samples `n_points` Gaussians for one object.
///
/// Point `k` of object `object_index` draws from a ChaCha stream selected by
/// `(seed, object_index)` at word position `16 * k`, so every point is
/// reproducible independently of how many others are generated.
pub fn init_object_cloud(obj: &ObjectSpec, object_index: usize, n_points: usize, seed: u64) -> GaussianCloud {
    assert!(n_points >= 1, "an object needs at least one Gaussian");
    let rotation = rotation_z(obj.orientation);
    let center = obj.center();
    let log_sigma = initial_sigma(obj.size, n_points).ln();
    let opacity_logit = logit(INITIAL_OPACITY);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(object_index as u64);

    let mut cloud = GaussianCloud::default();
    for k in 0..n_points {
        rng.set_word_pos(k as u128 * WORDS_PER_POINT);
        let u = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let local = obj.primitive.sample_volume(u);
        let p: Vector3<f64> = obj.size * (rotation * local) + center;
        let mut color = [0.0; 3];
        for (c, hint) in color.iter_mut().zip(obj.color_hint) {
            let jitter = (rng.gen::<f64>() * 2.0 - 1.0) * COLOR_JITTER;
            *c = logit((hint + jitter).clamp(0.01, 0.99));
        }
        cloud.means.push([p.x, p.y, p.z]);
        cloud.log_scales.push([log_sigma; 3]);
        cloud.rotations.push([1.0, 0.0, 0.0, 0.0]);
        cloud.opacity_logits.push(opacity_logit);
        cloud.colors.push(color);
    }
    cloud.objects.push(ObjectSlot {
        id: obj.id.clone(),
        range: 0..n_points,
        translation: [0.0; 3],
    });
    cloud
}

/// Concatenates per-object clouds in spec order with zero translations.
pub fn assemble_scene(spec: &SceneSpec, n_points_per_object: usize, seed: u64) -> GaussianCloud {
    let mut cloud = GaussianCloud::default();
    for (k, obj) in spec.objects.iter().enumerate() {
        cloud.append(init_object_cloud(obj, k, n_points_per_object, seed));
    }
    cloud
}
