use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cloud::{sigmoid, GaussianCloud, ObjectSlot};
use crate::raster::math::{normalize_quat, quat_to_mat};
use crate::raster::CloudGrad;

use super::adam::AdamState;

pub const SPLIT_SHRINK: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub start_iter: usize,
    pub end_iter: usize,
    pub interval: usize,
    /// Threshold on the mean normalized screen-space gradient norm.
    pub grad_threshold: f64,
    pub opacity_prune_threshold: f64,
    pub max_gaussians: usize,
    /// Gaussians whose largest scale exceeds this fraction of their object's
    /// bounding radius are split; smaller ones are cloned.
    pub percent_dense: f64,
    pub enabled: bool,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            start_iter: 100,
            end_iter: 900,
            interval: 100,
            grad_threshold: 2e-4,
            opacity_prune_threshold: 0.01,
            max_gaussians: 200_000,
            percent_dense: 0.01,
            enabled: true,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.start_iter >= self.end_iter {
            return Err("densify start_iter must be below end_iter".into());
        }
        if self.interval == 0 {
            return Err("densify interval must be positive".into());
        }
        if !(self.grad_threshold >= 0.0 && self.opacity_prune_threshold >= 0.0 && self.percent_dense >= 0.0) {
            return Err("densify thresholds must be non-negative".into());
        }
        Ok(())
    }

    pub fn is_refinement_iteration(&self, iter: usize) -> bool {
        self.enabled && iter >= self.start_iter && iter <= self.end_iter && iter % self.interval == 0
    }
}

/// Running sum of screen-space gradient norms per Gaussian.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensifyStats {
    pub accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        DensifyStats {
            accum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds the screen gradients of visible Gaussians of `objects`, scaled by
    /// `scale` (pixel-sum units to per-pixel normalized-device units).
    pub fn observe(&mut self, cloud: &GaussianCloud, grad: &CloudGrad, objects: &[usize], scale: f64) {
        for &k in objects {
            for i in cloud.range(k) {
                if grad.visible[i] {
                    self.accum[i] += grad.screen[i] * scale;
                    self.count[i] += 1;
                }
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }

    pub fn reset(&mut self, n: usize) {
        *self = DensifyStats::new(n);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub prune_only: bool,
}

#[derive(Clone, Copy)]
enum Action {
    Keep,
    Prune,
    Clone,
    Split,
}

/// Clones or splits high-gradient Gaussians and removes transparent ones,
/// keeping partitions contiguous and the Adam moments aligned. New
/// Gaussians inherit their source's object and start with zero moments.
pub fn densify_and_prune<R: Rng + ?Sized>(
    cloud: &mut GaussianCloud,
    stats: &mut DensifyStats,
    adam: &mut AdamState,
    object_extents: &[f64],
    config: &DensifyConfig,
    rng: &mut R,
) -> DensifyReport {
    let n = cloud.len();
    let mut actions = vec![Action::Keep; n];
    let mut report = DensifyReport::default();
    let mut growth = 0usize;
    for (k, slot) in cloud.objects.iter().enumerate() {
        let extent = object_extents.get(k).copied().unwrap_or(1.0);
        let mut survivors = 0usize;
        let mut best = None;
        for i in slot.range.clone() {
            let opacity = sigmoid(cloud.opacity_logits[i]);
            if opacity < config.opacity_prune_threshold {
                actions[i] = Action::Prune;
                if best.map_or(true, |(_, o)| opacity > o) {
                    best = Some((i, opacity));
                }
                continue;
            }
            survivors += 1;
            if stats.mean(i) > config.grad_threshold {
                let max_scale = cloud.log_scales[i].iter().copied().fold(f64::NEG_INFINITY, f64::max).exp();
                actions[i] = if max_scale > config.percent_dense * extent {
                    Action::Split
                } else {
                    Action::Clone
                };
                growth += 1;
            }
        }
        // Never empty a partition entirely.
        if survivors == 0 {
            if let Some((i, _)) = best {
                actions[i] = Action::Keep;
            }
        }
    }
    let pruned = actions.iter().filter(|a| matches!(a, Action::Prune)).count();
    if n - pruned + growth > config.max_gaussians {
        report.prune_only = true;
        for a in &mut actions {
            if matches!(a, Action::Clone | Action::Split) {
                *a = Action::Keep;
            }
        }
    }

    let mut out = GaussianCloud::default();
    let mut sources: Vec<Option<usize>> = Vec::with_capacity(n + growth);
    let push = |out: &mut GaussianCloud, sources: &mut Vec<Option<usize>>, src: &GaussianCloud, i: usize, from: Option<usize>| {
        out.means.push(src.means[i]);
        out.log_scales.push(src.log_scales[i]);
        out.rotations.push(src.rotations[i]);
        out.opacity_logits.push(src.opacity_logits[i]);
        out.colors.push(src.colors[i]);
        sources.push(from);
    };
    for slot in &cloud.objects {
        let start = out.len();
        for i in slot.range.clone() {
            match actions[i] {
                Action::Keep => push(&mut out, &mut sources, cloud, i, Some(i)),
                Action::Prune => report.pruned += 1,
                Action::Clone => {
                    push(&mut out, &mut sources, cloud, i, Some(i));
                    push(&mut out, &mut sources, cloud, i, None);
                    report.cloned += 1;
                }
                Action::Split => {
                    let scale = Vector3::from(cloud.log_scales[i].map(f64::exp));
                    let (q, _) = normalize_quat(cloud.rotations[i]);
                    let rot = quat_to_mat(q);
                    let mean = Vector3::from(cloud.means[i]);
                    for _ in 0..2 {
                        let z = Vector3::new(
                            rng.sample::<f64, _>(StandardNormal),
                            rng.sample::<f64, _>(StandardNormal),
                            rng.sample::<f64, _>(StandardNormal),
                        );
                        let p = mean + rot * scale.component_mul(&z);
                        push(&mut out, &mut sources, cloud, i, None);
                        let last = out.len() - 1;
                        out.means[last] = [p.x, p.y, p.z];
                        out.log_scales[last] = cloud.log_scales[i].map(|s| s - SPLIT_SHRINK.ln());
                    }
                    report.split += 1;
                }
            }
        }
        out.objects.push(ObjectSlot {
            id: slot.id.clone(),
            range: start..out.len(),
            translation: slot.translation,
        });
    }
    *cloud = out;
    adam.remap(&sources);
    stats.reset(cloud.len());
    report
}
