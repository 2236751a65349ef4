use serde::{Deserialize, Serialize};

use crate::cloud::GaussianCloud;
use crate::raster::CloudGrad;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub means: f64,
    /// Value the means rate decays to (exponentially) by the last iteration.
    pub means_final: f64,
    pub colors: f64,
    pub opacity: f64,
    pub scales: f64,
    pub rotations: f64,
    pub translations: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            means: 1.6e-4,
            means_final: 1.6e-6,
            colors: 2.5e-3,
            opacity: 5e-2,
            scales: 5e-3,
            rotations: 1e-3,
            translations: 1e-2,
        }
    }
}

impl LearningRates {
    pub fn means_at(&self, iter: usize, total: usize) -> f64 {
        if total <= 1 || self.means <= 0.0 || self.means_final <= 0.0 {
            return self.means;
        }
        let s = (iter as f64 / (total - 1) as f64).clamp(0.0, 1.0);
        (self.means.ln() * (1.0 - s) + self.means_final.ln() * s).exp()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let all = [
            self.means,
            self.means_final,
            self.colors,
            self.opacity,
            self.scales,
            self.rotations,
            self.translations,
        ];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err("learning rates must be finite and non-negative".into())
        }
    }
}

/// One Adam update of a scalar parameter; `step` is the 1-based count.
#[inline]
pub fn adam_update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, step: u64, lr: f64) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    let m_hat = *m / (1.0 - BETA1.powi(step as i32));
    let v_hat = *v / (1.0 - BETA2.powi(step as i32));
    *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Moments<const K: usize> {
    pub m: Vec<[f64; K]>,
    pub v: Vec<[f64; K]>,
}

impl<const K: usize> Moments<K> {
    fn zeros(n: usize) -> Self {
        Moments {
            m: vec![[0.0; K]; n],
            v: vec![[0.0; K]; n],
        }
    }

    fn update(&mut self, params: &mut [[f64; K]], grads: &[[f64; K]], offset: usize, step: u64, lr: f64) {
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[offset + k], &mut self.v[offset + k]);
            for d in 0..K {
                adam_update(&mut p[d], g[d], &mut m[d], &mut v[d], step, lr);
            }
        }
    }

    fn remap(&mut self, sources: &[Option<usize>]) {
        let pick = |src: &Vec<[f64; K]>| sources.iter().map(|s| s.map_or([0.0; K], |i| src[i])).collect();
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Adam moments mirroring every parameter array, with per-object step
/// counters so a partition's bias correction advances only when it is
/// actually updated.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: LearningRates,
    pub means: Moments<3>,
    pub log_scales: Moments<3>,
    pub rotations: Moments<4>,
    pub opacity_logits: Moments<1>,
    pub colors: Moments<3>,
    pub translations: Moments<3>,
    pub steps: Vec<u64>,
    pub translation_steps: Vec<u64>,
}

impl AdamState {
    pub fn new(cloud: &GaussianCloud, lr: LearningRates) -> Self {
        let n = cloud.len();
        let k = cloud.object_count();
        AdamState {
            lr,
            means: Moments::zeros(n),
            log_scales: Moments::zeros(n),
            rotations: Moments::zeros(n),
            opacity_logits: Moments::zeros(n),
            colors: Moments::zeros(n),
            translations: Moments::zeros(k),
            steps: vec![0; k],
            translation_steps: vec![0; k],
        }
    }

    /// Updates every Gaussian parameter of the listed objects. Rotations are
    /// renormalized afterwards; other partitions are untouched.
    pub fn step(&mut self, cloud: &mut GaussianCloud, grad: &CloudGrad, objects: &[usize], means_lr: f64) {
        for &k in objects {
            self.steps[k] += 1;
            let step = self.steps[k];
            let r = cloud.range(k);
            let o = r.start;
            self.means.update(&mut cloud.means[r.clone()], &grad.means[r.clone()], o, step, means_lr);
            self.log_scales
                .update(&mut cloud.log_scales[r.clone()], &grad.log_scales[r.clone()], o, step, self.lr.scales);
            self.rotations
                .update(&mut cloud.rotations[r.clone()], &grad.rotations[r.clone()], o, step, self.lr.rotations);
            self.colors.update(&mut cloud.colors[r.clone()], &grad.colors[r.clone()], o, step, self.lr.colors);
            for i in r {
                let (m, v) = (&mut self.opacity_logits.m[i][0], &mut self.opacity_logits.v[i][0]);
                adam_update(&mut cloud.opacity_logits[i], grad.opacity_logits[i], m, v, step, self.lr.opacity);
                let q = &mut cloud.rotations[i];
                let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
                if n > 0.0 && n.is_finite() {
                    q.iter_mut().for_each(|c| *c /= n);
                } else {
                    *q = [1.0, 0.0, 0.0, 0.0];
                }
            }
        }
    }

    /// Updates only the per-object translations of the listed objects.
    pub fn step_translations(&mut self, cloud: &mut GaussianCloud, grad: &CloudGrad, objects: &[usize]) {
        for &k in objects {
            self.translation_steps[k] += 1;
            let step = self.translation_steps[k];
            let t = &mut cloud.objects[k].translation;
            let (m, v) = (&mut self.translations.m[k], &mut self.translations.v[k]);
            for d in 0..3 {
                adam_update(&mut t[d], grad.translations[k][d], &mut m[d], &mut v[d], step, self.lr.translations);
            }
        }
    }

    /// Rebuilds the per-Gaussian moments after densify/prune: entry `i` of
    /// the new cloud takes the moments of `sources[i]`, or zeros when new.
    pub fn remap(&mut self, sources: &[Option<usize>]) {
        self.means.remap(sources);
        self.log_scales.remap(sources);
        self.rotations.remap(sources);
        self.opacity_logits.remap(sources);
        self.colors.remap(sources);
    }

    pub fn check_alignment(&self, cloud: &GaussianCloud) -> std::result::Result<(), String> {
        let n = cloud.len();
        let lens = [
            self.means.m.len(),
            self.means.v.len(),
            self.log_scales.m.len(),
            self.log_scales.v.len(),
            self.rotations.m.len(),
            self.rotations.v.len(),
            self.opacity_logits.m.len(),
            self.opacity_logits.v.len(),
            self.colors.m.len(),
            self.colors.v.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(format!("moment lengths {lens:?} do not match {n} Gaussians"));
        }
        let k = cloud.object_count();
        if self.translations.len() != k || self.steps.len() != k || self.translation_steps.len() != k {
            return Err("per-object optimizer state does not match object count".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::ObjectSlot;

    /// Textbook Adam, written out independently.
    fn reference(grads: &[f64], lr: f64, p0: f64) -> f64 {
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-15);
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t));
            let vh = v / (1.0 - b2.powf(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        p
    }

    #[test]
    fn scalar_probe_matches_reference() {
        let grads = [0.3, -1.2, 4.0, 1e-8, -0.02, 0.7, 0.7, 0.0, -3.3];
        let (mut p, mut m, mut v) = (0.25, 0.0, 0.0);
        for (k, g) in grads.iter().enumerate() {
            adam_update(&mut p, *g, &mut m, &mut v, k as u64 + 1, 0.01);
        }
        assert!((p - reference(&grads, 0.01, 0.25)).abs() < 1e-12);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut p, mut m, mut v) = (1.0, 0.0, 0.0);
        adam_update(&mut p, 123.0, &mut m, &mut v, 1, 0.1);
        assert!((p - 0.9).abs() < 1e-12);
    }

    #[test]
    fn means_rate_decays_exponentially() {
        let lr = LearningRates::default();
        assert_eq!(lr.means_at(0, 1000), 1.6e-4);
        assert!((lr.means_at(999, 1000) - 1.6e-6).abs() < 1e-18);
        assert!((lr.means_at(999, 1999) - 1.6e-5).abs() < 1e-15);
    }

    fn cloud() -> GaussianCloud {
        GaussianCloud {
            means: vec![[0.0; 3]; 3],
            log_scales: vec![[0.0; 3]; 3],
            rotations: vec![[1.0, 0.0, 0.0, 0.0]; 3],
            opacity_logits: vec![0.0; 3],
            colors: vec![[0.0; 3]; 3],
            objects: vec![
                ObjectSlot {
                    id: "a".into(),
                    range: 0..1,
                    translation: [0.0; 3],
                },
                ObjectSlot {
                    id: "b".into(),
                    range: 1..3,
                    translation: [0.0; 3],
                },
            ],
        }
    }

    #[test]
    fn only_listed_objects_move() {
        let mut c = cloud();
        let mut adam = AdamState::new(&c, LearningRates::default());
        let mut g = CloudGrad::zeros(&c);
        g.means = vec![[1.0; 3]; 3];
        g.opacity_logits = vec![1.0; 3];
        g.translations = vec![[1.0; 3]; 2];
        adam.step(&mut c, &g, &[1], 0.1);
        assert_eq!(c.means[0], [0.0; 3]);
        assert!((c.means[1][0] + 0.1).abs() < 1e-12);
        assert_eq!(adam.steps, vec![0, 1]);
        assert_eq!(c.objects[1].translation, [0.0; 3]);
        adam.step_translations(&mut c, &g, &[0]);
        assert!((c.objects[0].translation[2] + 1e-2).abs() < 1e-12);
        assert!((c.means[1][0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn remap_zeroes_new_entries() {
        let c = cloud();
        let mut adam = AdamState::new(&c, LearningRates::default());
        adam.means.m = vec![[1.0; 3], [2.0; 3], [3.0; 3]];
        adam.remap(&[Some(2), None, Some(0), Some(0)]);
        assert_eq!(adam.means.m, vec![[3.0; 3], [0.0; 3], [1.0; 3], [1.0; 3]]);
        assert_eq!(adam.colors.len(), 4);
    }
}
