//! Loss evaluations: render a subset of objects from a sampled view, query
//! the guidance oracle, and backpropagate into the routed partitions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{pose_from_view, sample_view, CameraIntrinsics, SamplingRanges, ViewBin, ViewSample};
use crate::cloud::GaussianCloud;
use crate::error::Result;
use crate::guidance::{Guidance, GuidancePrompt, PromptRef, TimestepAnnealing};
use crate::raster::{backward, render, CloudGrad};
use crate::scene::{EdgeRef, SceneSpec};
use crate::trace::LossKind;

/// Camera sampling around a look-at point. `ranges.radius` multiplies the
/// distance at which the subject's bounding sphere fills `fill` of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewConfig {
    pub ranges: SamplingRanges,
    pub fill: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            ranges: SamplingRanges {
                elevation: [-10.0, 45.0],
                radius: [0.9, 1.1],
            },
            fill: 0.7,
        }
    }
}

/// Everything a loss evaluation needs besides the cloud and the generator.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub spec: &'a SceneSpec,
    pub guidance: &'a Guidance,
    pub intrinsics: &'a CameraIntrinsics,
    pub views: &'a ViewConfig,
    pub annealing: &'a TimestepAnnealing,
    pub iter: usize,
    pub background: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub kind: LossKind,
    pub subject: String,
    /// Gradient, zero outside `routed`.
    pub grad: CloudGrad,
    pub routed: Vec<usize>,
    pub value: f64,
    pub view: ViewSample,
    pub timestep: f64,
    pub view_bin: Option<ViewBin>,
}

/// Look-at point and base camera distance framing `objects` at their spec
/// placement.
pub fn framing(spec: &SceneSpec, objects: &[usize], intr: &CameraIntrinsics, fill: f64) -> ([f64; 3], f64) {
    let (c, r) = spec.bounding_sphere(objects);
    ([c.x, c.y, c.z], intr.framing_distance(r, fill))
}

impl LossContext<'_> {
    fn sample<R: Rng + ?Sized>(&self, subjects: &[usize], rng: &mut R) -> Result<ViewSample> {
        let (look_at, base) = framing(self.spec, subjects, self.intrinsics, self.views.fill);
        let mut v = sample_view(rng, &self.views.ranges, look_at)?;
        v.radius *= base;
        Ok(v)
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate<R: Rng + ?Sized>(
        &self,
        cloud: &GaussianCloud,
        visible: &[usize],
        routed: &[usize],
        prompt: &GuidancePrompt,
        view: ViewSample,
        kind: LossKind,
        subject: String,
        rng: &mut R,
    ) -> Result<LossEval> {
        let camera = pose_from_view(&view, self.intrinsics);
        let out = render(cloud, visible, &camera, self.background);
        let score = self.guidance.grad(
            &out.image,
            prompt,
            &view,
            &camera,
            self.background,
            self.iter,
            self.annealing,
            rng,
        )?;
        let mut grad = backward(cloud, visible, &camera, self.background, &score.grad_image);
        grad.restrict_to(cloud, routed);
        Ok(LossEval {
            kind,
            subject,
            grad,
            routed: routed.to_vec(),
            value: score.scalar_loss,
            view,
            timestep: score.timestep,
            view_bin: score.view_bin,
        })
    }
}

fn edge_label(spec: &SceneSpec, e: &EdgeRef) -> String {
    spec.edges[e.index].label()
}

/// Edge prompt on the rendered pair, gradients into both partitions.
pub fn loss_joint<R: Rng + ?Sized>(
    ctx: &LossContext,
    cloud: &GaussianCloud,
    edge: &EdgeRef,
    rng: &mut R,
) -> Result<LossEval> {
    let pair = [edge.src, edge.dst];
    let view = ctx.sample(&pair, rng)?;
    let prompt = ctx.guidance.targets.edge_prompt(edge.index);
    ctx.evaluate(cloud, &pair, &pair, &prompt, view, LossKind::Edge, edge_label(ctx.spec, edge), rng)
}

/// Edge prompt on the rendered pair, gradients into `optimize` only.
pub fn loss_target<R: Rng + ?Sized>(
    ctx: &LossContext,
    cloud: &GaussianCloud,
    edge: &EdgeRef,
    optimize: usize,
    rng: &mut R,
) -> Result<LossEval> {
    assert!(optimize == edge.src || optimize == edge.dst, "optimized object must belong to the edge");
    let pair = [edge.src, edge.dst];
    let view = ctx.sample(&pair, rng)?;
    let prompt = ctx.guidance.targets.edge_prompt(edge.index);
    ctx.evaluate(cloud, &pair, &[optimize], &prompt, view, LossKind::Target, edge_label(ctx.spec, edge), rng)
}

/// Targeted losses for both endpoints sharing one render, view and noise
/// draw, applied as a single combined update.
pub fn loss_target_pair<R: Rng + ?Sized>(
    ctx: &LossContext,
    cloud: &GaussianCloud,
    edge: &EdgeRef,
    rng: &mut R,
) -> Result<LossEval> {
    let pair = [edge.src, edge.dst];
    let view = ctx.sample(&pair, rng)?;
    let prompt = ctx.guidance.targets.edge_prompt(edge.index);
    ctx.evaluate(cloud, &pair, &pair, &prompt, view, LossKind::Target, edge_label(ctx.spec, edge), rng)
}

/// View-aware object loss: the object alone, framed on itself.
pub fn loss_obj<R: Rng + ?Sized>(ctx: &LossContext, cloud: &GaussianCloud, object: usize, rng: &mut R) -> Result<LossEval> {
    let view = ctx.sample(&[object], rng)?;
    let prompt = ctx.guidance.targets.object_prompt(object);
    let id = ctx.spec.objects[object].id.clone();
    ctx.evaluate(cloud, &[object], &[object], &prompt, view, LossKind::Obj, id, rng)
}

pub fn loss_scene<R: Rng + ?Sized>(ctx: &LossContext, cloud: &GaussianCloud, rng: &mut R) -> Result<LossEval> {
    let all = cloud.all_objects();
    let view = ctx.sample(&all, rng)?;
    let prompt = ctx.guidance.targets.scene_prompt();
    ctx.evaluate(cloud, &all, &all, &prompt, view, LossKind::Scene, "scene".to_string(), rng)
}

/// Deterministic proxy loss of `prompt` from a fixed view: timestep 0.5,
/// mid-gray background, no noise.
pub fn proxy_loss_at(
    spec: &SceneSpec,
    guidance: &Guidance,
    intr: &CameraIntrinsics,
    cloud: &GaussianCloud,
    prompt: PromptRef,
    view: &ViewSample,
) -> Result<f64> {
    let visible: Vec<usize> = match prompt {
        PromptRef::Object(k) => vec![k],
        PromptRef::Edge(e) => {
            let r = spec.edge_refs()[e];
            vec![r.src, r.dst]
        }
        PromptRef::Scene => cloud.all_objects(),
    };
    let bg = [0.5; 3];
    let camera = pose_from_view(view, intr);
    let out = render(cloud, &visible, &camera, bg);
    let p = match prompt {
        PromptRef::Object(k) => guidance.targets.object_prompt(k),
        PromptRef::Edge(e) => guidance.targets.edge_prompt(e),
        PromptRef::Scene => guidance.targets.scene_prompt(),
    };
    let noise = vec![0.0; out.image.len()];
    Ok(guidance.grad_at(&out.image, &p, view, &camera, bg, 0.5, &noise)?.scalar_loss)
}

/// Evenly spaced evaluation views around `look_at`.
pub fn ring_views(look_at: [f64; 3], radius: f64, count: usize, elevation: f64) -> Vec<ViewSample> {
    (0..count)
        .map(|k| ViewSample {
            azimuth: -180.0 + 360.0 * (k as f64 + 0.5) / count as f64,
            elevation,
            radius,
            look_at,
        })
        .collect()
}

/// Mean deterministic proxy losses over a ring of views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub obj: Vec<f64>,
    pub edge: Vec<f64>,
    pub scene: f64,
    /// Silhouette IoU of each object rendered alone against its own target.
    pub object_iou: Vec<f64>,
}

impl EvalReport {
    pub fn mean_obj(&self) -> f64 {
        mean(&self.obj)
    }

    pub fn mean_edge(&self) -> f64 {
        mean(&self.edge)
    }

    pub fn mean_iou(&self) -> f64 {
        mean(&self.object_iou)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn evaluate(
    spec: &SceneSpec,
    guidance: &Guidance,
    intr: &CameraIntrinsics,
    views: &ViewConfig,
    cloud: &GaussianCloud,
    n_views: usize,
) -> Result<EvalReport> {
    let ring = |objects: &[usize]| {
        let (c, r) = framing(spec, objects, intr, views.fill);
        ring_views(c, r, n_views, 15.0)
    };
    let avg = |prompt: PromptRef, objects: &[usize]| -> Result<f64> {
        let vs = ring(objects);
        let mut s = 0.0;
        for v in &vs {
            s += proxy_loss_at(spec, guidance, intr, cloud, prompt, v)?;
        }
        Ok(s / vs.len().max(1) as f64)
    };
    let mut report = EvalReport {
        obj: vec![],
        edge: vec![],
        scene: avg(PromptRef::Scene, &cloud.all_objects())?,
        object_iou: vec![],
    };
    for k in 0..spec.objects.len() {
        report.obj.push(avg(PromptRef::Object(k), &[k])?);
        let mut iou = 0.0;
        let vs = ring(&[k]);
        for v in &vs {
            let camera = pose_from_view(v, intr);
            let out = render(cloud, &[k], &camera, [0.0; 3]);
            let target = guidance.targets.render(PromptRef::Object(k), &camera, [0.0; 3]);
            let mask: Vec<bool> = out.alpha.iter().map(|&a| a > 0.5).collect();
            iou += crate::guidance::silhouette_iou(&mask, &target.mask());
        }
        report.object_iou.push(iou / vs.len().max(1) as f64);
    }
    for e in spec.edge_refs() {
        report.edge.push(avg(PromptRef::Edge(e.index), &[e.src, e.dst])?);
    }
    Ok(report)
}
