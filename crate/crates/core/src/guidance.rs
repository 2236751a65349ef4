//! Verifiable stand-in for diffusion guidance.
//!
//! A hidden ground-truth arrangement (each object a shaded solid primitive at
//! its spec placement) provides target images for every prompt and view. The
//! surrogate denoiser is built so that the score-distillation residual keeps
//! its usual structure,
//!
//! ```text
//! z_t   = √ᾱ(t)·z + √(1-ᾱ(t))·ε
//! ε̂     = (z_t - √ᾱ(t)·target) / √(1-ᾱ(t))
//! grad  = ω(t)·(ε̂ - ε)
//! ```
//!
//! and its expectation over `ε` is exactly `ω(t)·√ᾱ/√(1-ᾱ)·(z - target)`.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::{bin_view, corrected_azimuth, Camera, ViewBin, ViewSample};
use crate::error::{Error, Result};
use crate::primitive::{rotation_z, Primitive};
use crate::scene::SceneSpec;

pub const T_MIN: f64 = 0.02;
pub const T_MAX_START: f64 = 0.98;
pub const T_MAX_END: f64 = 0.5;
pub const DEFAULT_NEGATIVE_WEIGHT: f64 = 0.1;
const AMBIENT: f64 = 0.45;

/// Cosine noise schedule `ᾱ(t) = cos²(πt/2)` with weight `ω(t) = 1 - ᾱ(t)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule;

impl NoiseSchedule {
    pub fn alpha_bar(&self, t: f64) -> f64 {
        let c = (0.5 * std::f64::consts::PI * t).cos();
        c * c
    }

    pub fn weight(&self, t: f64) -> f64 {
        1.0 - self.alpha_bar(t)
    }

    /// `ω(t)·√ᾱ/√(1-ᾱ)`, the factor multiplying `(z - target)` in expectation.
    pub fn residual_gain(&self, t: f64) -> f64 {
        let ab = self.alpha_bar(t);
        self.weight(t) * ab.sqrt() / (1.0 - ab).sqrt()
    }
}

/// Linear annealing of the maximum timestep from 0.98 to 0.5 over a warm-up
/// window, optionally restarted at a later iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimestepAnnealing {
    pub warmup_iters: usize,
    /// `(start, length)` of a second warm-up window.
    pub restart: Option<(usize, usize)>,
}

impl TimestepAnnealing {
    pub fn t_max(&self, iter: usize) -> f64 {
        let ramp = |elapsed: usize, len: usize| {
            if len == 0 || elapsed >= len {
                T_MAX_END
            } else {
                T_MAX_START + (T_MAX_END - T_MAX_START) * elapsed as f64 / len as f64
            }
        };
        match self.restart {
            Some((start, len)) if iter >= start => ramp(iter - start, len),
            _ => ramp(iter, self.warmup_iters),
        }
    }
}

pub fn sample_timestep<R: Rng + ?Sized>(rng: &mut R, iter: usize, annealing: &TimestepAnnealing) -> f64 {
    let hi = annealing.t_max(iter);
    let t = T_MIN + (hi - T_MIN) * rng.gen::<f64>();
    t.clamp(T_MIN, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptRef {
    Object(usize),
    Edge(usize),
    Scene,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Object,
    Edge,
    Scene,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidancePrompt {
    pub prompt_id: String,
    pub target: PromptRef,
    pub view_conditioned: bool,
    /// Object indices whose prompts are repelled.
    pub negatives: Vec<usize>,
}

impl GuidancePrompt {
    pub fn kind(&self) -> PromptKind {
        match self.target {
            PromptRef::Object(_) => PromptKind::Object,
            PromptRef::Edge(_) => PromptKind::Edge,
            PromptRef::Scene => PromptKind::Scene,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetImage {
    pub width: usize,
    pub height: usize,
    pub image: Vec<f64>,
    /// Index of the object hit by each pixel's ray.
    pub owner: Vec<Option<usize>>,
}

impl TargetImage {
    pub fn mask(&self) -> Vec<bool> {
        self.owner.iter().map(Option::is_some).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct PlacedPrimitive {
    object: usize,
    primitive: Primitive,
    center: Vector3<f64>,
    size: f64,
    orientation: f64,
    color: [f64; 3],
}

/// Procedural target images for every prompt of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetField {
    spec: SceneSpec,
    conflict_delta: f64,
    light: Vector3<f64>,
}

impl TargetField {
    pub fn new(spec: &SceneSpec, conflict_delta: f64) -> Self {
        TargetField {
            spec: spec.clone(),
            conflict_delta,
            light: Vector3::new(0.4, 0.3, 0.87).normalize(),
        }
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn conflict_delta(&self) -> f64 {
        self.conflict_delta
    }

    /// Horizontal displacement applied to object `k`'s own target when
    /// conflict injection is enabled.
    pub fn conflict_offset(&self, k: usize) -> Vector3<f64> {
        let angle = 0.5 + 2.399_963_229_728_653 * k as f64;
        Vector3::new(angle.cos(), angle.sin(), 0.0) * self.conflict_delta
    }

    /// Resolves a prompt identifier: object prompts first, then edges, then
    /// the global prompt.
    pub fn prompt(&self, prompt_id: &str) -> Result<GuidancePrompt> {
        if let Some(k) = self.spec.objects.iter().position(|o| o.prompt_id == prompt_id) {
            return Ok(self.object_prompt(k));
        }
        if let Some(e) = self.spec.edges.iter().position(|e| e.prompt_id == prompt_id) {
            return Ok(self.edge_prompt(e));
        }
        if self.spec.global_prompt_id == prompt_id {
            return Ok(self.scene_prompt());
        }
        Err(Error::UnknownPrompt(prompt_id.to_string()))
    }

    pub fn object_prompt(&self, k: usize) -> GuidancePrompt {
        let obj = &self.spec.objects[k];
        GuidancePrompt {
            prompt_id: obj.prompt_id.clone(),
            target: PromptRef::Object(k),
            view_conditioned: true,
            negatives: obj
                .negative_ids
                .iter()
                .filter_map(|id| self.spec.object_index(id))
                .collect(),
        }
    }

    pub fn edge_prompt(&self, e: usize) -> GuidancePrompt {
        GuidancePrompt {
            prompt_id: self.spec.edges[e].prompt_id.clone(),
            target: PromptRef::Edge(e),
            view_conditioned: false,
            negatives: vec![],
        }
    }

    pub fn scene_prompt(&self) -> GuidancePrompt {
        GuidancePrompt {
            prompt_id: self.spec.global_prompt_id.clone(),
            target: PromptRef::Scene,
            view_conditioned: false,
            negatives: vec![],
        }
    }

    fn placed(&self, k: usize, as_object_prompt: bool) -> PlacedPrimitive {
        let o = &self.spec.objects[k];
        let (center, orientation) = if as_object_prompt {
            // The object prompt knows the object only in its canonical frame;
            // viewing it from the corrected azimuth ψ - φ is the same as
            // turning it by φ about the vertical axis.
            (o.center() + self.conflict_offset(k), o.azimuth_offset)
        } else {
            (o.center(), o.orientation)
        };
        PlacedPrimitive {
            object: k,
            primitive: o.primitive,
            center,
            size: o.size,
            orientation,
            color: o.color_hint,
        }
    }

    fn primitives_for(&self, prompt: PromptRef) -> Vec<PlacedPrimitive> {
        match prompt {
            PromptRef::Object(k) => vec![self.placed(k, true)],
            PromptRef::Edge(e) => {
                let refs = self.spec.edge_refs();
                vec![self.placed(refs[e].src, false), self.placed(refs[e].dst, false)]
            }
            PromptRef::Scene => (0..self.spec.objects.len()).map(|k| self.placed(k, false)).collect(),
        }
    }

    /// Target image of `prompt` seen through `camera`. Pure: identical
    /// arguments give identical images.
    pub fn render(&self, prompt: PromptRef, camera: &Camera, background: [f64; 3]) -> TargetImage {
        let prims = self.primitives_for(prompt);
        let (w, h) = (camera.width, camera.height);
        let mut image = Vec::with_capacity(w * h * 3);
        let mut owner = Vec::with_capacity(w * h);
        let frames: Vec<_> = prims
            .iter()
            .map(|p| (p, rotation_z(p.orientation), rotation_z(p.orientation).transpose()))
            .collect();
        for py in 0..h {
            for px in 0..w {
                let dir = camera.ray_direction(px as f64 + 0.5, py as f64 + 0.5);
                let mut best: Option<(f64, Vector3<f64>, &PlacedPrimitive)> = None;
                for (p, rot, rot_t) in &frames {
                    let o_local = rot_t * (camera.position - p.center) / p.size;
                    let d_local = rot_t * dir / p.size;
                    if let Some((t, n_local)) = p.primitive.intersect(&o_local, &d_local) {
                        if best.as_ref().map_or(true, |(bt, _, _)| t < *bt) {
                            best = Some((t, rot * n_local, p));
                        }
                    }
                }
                match best {
                    Some((_, n, p)) => {
                        let shade = AMBIENT + (1.0 - AMBIENT) * n.normalize().dot(&self.light).max(0.0);
                        image.extend(p.color.map(|c| c * shade));
                        owner.push(Some(p.object));
                    }
                    None => {
                        image.extend(background);
                        owner.push(None);
                    }
                }
            }
        }
        TargetImage {
            width: w,
            height: h,
            image,
            owner,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrad {
    /// `H×W×3` gradient of the loss with respect to the rendered image.
    pub grad_image: Vec<f64>,
    /// `‖ω(t)(ε̂ - ε)‖² / (H·W)` of the positive term.
    pub scalar_loss: f64,
    pub timestep: f64,
    pub view_bin: Option<ViewBin>,
}

pub fn sds_surrogate_grad(
    z: &[f64],
    target: &[f64],
    t: f64,
    noise: &[f64],
    schedule: &NoiseSchedule,
) -> Result<ScoreGrad> {
    if target.len() != z.len() {
        return Err(Error::ShapeMismatch {
            expected: z.len(),
            actual: target.len(),
        });
    }
    if noise.len() != z.len() {
        return Err(Error::ShapeMismatch {
            expected: z.len(),
            actual: noise.len(),
        });
    }
    let ab = schedule.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let w = schedule.weight(t);
    let grad_image: Vec<f64> = z
        .iter()
        .zip(target)
        .zip(noise)
        .map(|((&zi, &yi), &eps)| {
            let z_t = sa * zi + sn * eps;
            let eps_hat = (z_t - sa * yi) / sn;
            w * (eps_hat - eps)
        })
        .collect();
    let pixels = (z.len() / 3).max(1) as f64;
    let scalar_loss = grad_image.iter().map(|g| g * g).sum::<f64>() / pixels;
    Ok(ScoreGrad {
        grad_image,
        scalar_loss,
        timestep: t,
        view_bin: None,
    })
}

/// Guidance configuration shared by all loss evaluations of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Guidance {
    pub schedule: NoiseSchedule,
    pub targets: TargetField,
    pub negative_weight: f64,
    /// Scalar gain on the positive term.
    pub gain: f64,
}

impl Guidance {
    pub fn new(targets: TargetField) -> Self {
        Guidance {
            schedule: NoiseSchedule,
            targets,
            negative_weight: DEFAULT_NEGATIVE_WEIGHT,
            gain: 1.0,
        }
    }

    /// Full guidance gradient for a rendered image: the positive surrogate
    /// term toward the prompt's target minus `β` times the surrogate term
    /// toward each negative prompt's target, all at one shared `(t, ε)`.
    #[allow(clippy::too_many_arguments)]
    pub fn grad<R: Rng + ?Sized>(
        &self,
        z: &[f64],
        prompt: &GuidancePrompt,
        view: &ViewSample,
        camera: &Camera,
        background: [f64; 3],
        iter: usize,
        annealing: &TimestepAnnealing,
        rng: &mut R,
    ) -> Result<ScoreGrad> {
        let t = sample_timestep(rng, iter, annealing);
        let noise: Vec<f64> = (0..z.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.grad_at(z, prompt, view, camera, background, t, &noise)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn grad_at(
        &self,
        z: &[f64],
        prompt: &GuidancePrompt,
        view: &ViewSample,
        camera: &Camera,
        background: [f64; 3],
        t: f64,
        noise: &[f64],
    ) -> Result<ScoreGrad> {
        let target = self.targets.render(prompt.target, camera, background);
        let mut out = sds_surrogate_grad(z, &target.image, t, noise, &self.schedule)?;
        if self.gain != 1.0 {
            out.grad_image.iter_mut().for_each(|g| *g *= self.gain);
        }
        if self.negative_weight != 0.0 {
            for &neg in &prompt.negatives {
                let neg_target = self.targets.render(PromptRef::Object(neg), camera, background);
                let rep = sds_surrogate_grad(z, &neg_target.image, t, noise, &self.schedule)?;
                for (g, r) in out.grad_image.iter_mut().zip(&rep.grad_image) {
                    *g -= self.negative_weight * r;
                }
            }
        }
        if let PromptRef::Object(k) = prompt.target {
            let phi = self.targets.spec().objects[k].azimuth_offset;
            out.view_bin = Some(bin_view(corrected_azimuth(view.azimuth, phi), view.elevation));
        }
        Ok(out)
    }
}

/// Intersection-over-union of two boolean masks (1 when both are empty).
pub fn silhouette_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
