//! Optimization schedules over object, edge and scene losses.

pub mod adam;
pub mod densify;
pub mod losses;
pub mod schedule;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::cloud::{assemble_scene, GaussianCloud, DEFAULT_POINTS_PER_OBJECT};
use crate::error::{Error, Result};
use crate::guidance::{Guidance, TargetField, TimestepAnnealing, DEFAULT_NEGATIVE_WEIGHT};
use crate::raster::CloudGrad;
use crate::scene::{EdgeRef, SceneSpec};
use crate::trace::{LossKind, LossTrace};

pub use adam::{AdamState, LearningRates};
pub use densify::{densify_and_prune, DensifyConfig, DensifyReport, DensifyStats};
pub use losses::{
    evaluate, loss_joint, loss_obj, loss_scene, loss_target, loss_target_pair, EvalReport, LossContext, LossEval,
    ViewConfig,
};
use schedule::StageOneAction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Heuristic {
    /// Scene prompt only.
    Holistic,
    /// Weighted sum of object, edge and scene losses every iteration.
    Simultaneous,
    /// Object, edge and scene losses in turn, one update after each.
    Iterative,
    /// Relationship stage with a growing object term, then targeted refinement.
    Staged,
    /// Edge losses alone, round-robin.
    JointOnly,
    /// Edge loss plus both endpoint object losses at equal weight.
    JointObj,
}

impl Heuristic {
    pub const ALL: [Heuristic; 6] = [
        Heuristic::Holistic,
        Heuristic::Simultaneous,
        Heuristic::Iterative,
        Heuristic::Staged,
        Heuristic::JointOnly,
        Heuristic::JointObj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Heuristic::Holistic => "holistic",
            Heuristic::Simultaneous => "simultaneous",
            Heuristic::Iterative => "iterative",
            Heuristic::Staged => "staged",
            Heuristic::JointOnly => "joint-only",
            Heuristic::JointObj => "joint-obj",
        }
    }
}

impl std::str::FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Heuristic::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown heuristic `{s}`")))
    }
}

impl std::fmt::Display for Heuristic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub heuristic: Heuristic,
    /// Defaults to 1500 per object.
    pub total_iters: Option<usize>,
    /// Defaults to 450 per object.
    pub warmup_iters: Option<usize>,
    pub lambda: f64,
    pub gamma: f64,
    pub stage2_warmup_fraction: f64,
    /// `(w_obj, w_edge, w_scene)` for the simultaneous schedule.
    pub simultaneous_weights: [f64; 3],
    pub translation_iters: usize,
    pub points_per_object: usize,
    pub resolution: usize,
    pub fov_y_deg: f64,
    pub views: ViewConfig,
    /// Range of the per-iteration random gray background.
    pub background: [f64; 2],
    pub conflict_delta: f64,
    pub negative_weight: f64,
    pub guidance_gain: f64,
    pub learning_rates: LearningRates,
    pub densify: DensifyConfig,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            heuristic: Heuristic::Staged,
            total_iters: None,
            warmup_iters: None,
            lambda: 8.0,
            gamma: 0.6,
            stage2_warmup_fraction: 0.3,
            simultaneous_weights: [1.0, 1.0, 1.0],
            translation_iters: 200,
            points_per_object: DEFAULT_POINTS_PER_OBJECT,
            resolution: 256,
            fov_y_deg: 45.0,
            views: ViewConfig::default(),
            background: [0.3, 0.7],
            conflict_delta: 0.0,
            negative_weight: DEFAULT_NEGATIVE_WEIGHT,
            guidance_gain: 1.0,
            learning_rates: LearningRates::default(),
            densify: DensifyConfig::default(),
        }
    }
}

impl CurriculumConfig {
    pub fn total_iters_for(&self, spec: &SceneSpec) -> usize {
        self.total_iters.unwrap_or(1500 * spec.objects.len())
    }

    pub fn warmup_iters_for(&self, spec: &SceneSpec) -> usize {
        self.warmup_iters.unwrap_or(450 * spec.objects.len())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fov_y: self.fov_y_deg,
            ..CameraIntrinsics::square(self.resolution)
        }
    }

    pub fn validate(&self, spec: &SceneSpec) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !self.simultaneous_weights.iter().all(|w| *w >= 0.0 && w.is_finite()) {
            return bad("simultaneous weights must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.stage2_warmup_fraction) {
            return bad("stage2_warmup_fraction must lie in [0, 1]".into());
        }
        if self.total_iters_for(spec) == 0 {
            return bad("total_iters must be positive".into());
        }
        if self.points_per_object == 0 {
            return bad("points_per_object must be positive".into());
        }
        if self.resolution == 0 || self.resolution > 4096 {
            return bad(format!("resolution {} out of range", self.resolution));
        }
        let [b0, b1] = self.background;
        if !(0.0 <= b0 && b0 <= b1 && b1 <= 1.0) {
            return bad("background range must be ordered within [0, 1]".into());
        }
        if !(self.conflict_delta >= 0.0 && self.conflict_delta.is_finite()) {
            return bad("conflict_delta must be non-negative".into());
        }
        if !(self.negative_weight >= 0.0 && self.guidance_gain.is_finite() && self.negative_weight.is_finite()) {
            return bad("guidance weights must be finite and non-negative".into());
        }
        if !(self.views.fill > 0.0 && self.views.fill < 1.0) {
            return bad("view fill must lie in (0, 1)".into());
        }
        if matches!(self.heuristic, Heuristic::JointOnly | Heuristic::JointObj) && spec.edges.is_empty() {
            return bad(format!("heuristic `{}` needs at least one edge", self.heuristic));
        }
        self.views.ranges.validate()?;
        self.intrinsics().validate()?;
        self.learning_rates.validate().map_err(Error::Config)?;
        self.densify.validate().map_err(Error::Config)?;
        Ok(())
    }
}

/// One applied optimizer update and the partitions it was allowed to touch.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedUpdate {
    pub objects: Vec<usize>,
    pub grad: CloudGrad,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub updates: Vec<AppliedUpdate>,
    pub densify: Option<DensifyReport>,
}

/// Mutable state of one optimization run.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub spec: SceneSpec,
    pub config: CurriculumConfig,
    pub cloud: GaussianCloud,
    pub adam: AdamState,
    pub guidance: Guidance,
    pub intrinsics: CameraIntrinsics,
    pub annealing: TimestepAnnealing,
    pub total_iters: usize,
    pub stats: DensifyStats,
    pub trace: LossTrace,
    pub rng: ChaCha8Rng,
    edges: Vec<EdgeRef>,
    extents: Vec<f64>,
}

impl OptimizerState {
    pub fn new(spec: &SceneSpec, config: &CurriculumConfig, seed: u64) -> Result<Self> {
        spec.validate()?;
        config.validate(spec)?;
        let cloud = assemble_scene(spec, config.points_per_object, seed);
        let total = config.total_iters_for(spec);
        let warmup = config.warmup_iters_for(spec);
        let restart = (config.heuristic == Heuristic::Staged).then(|| {
            (schedule::stage_boundary(config.gamma, total), total, config.stage2_warmup_fraction)
        });
        let mut guidance = Guidance::new(TargetField::new(spec, config.conflict_delta));
        guidance.negative_weight = config.negative_weight;
        guidance.gain = config.guidance_gain;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        Ok(OptimizerState {
            spec: spec.clone(),
            config: config.clone(),
            adam: AdamState::new(&cloud, config.learning_rates),
            stats: DensifyStats::new(cloud.len()),
            cloud,
            guidance,
            intrinsics: config.intrinsics(),
            annealing: schedule::annealing(warmup, restart),
            total_iters: total,
            trace: LossTrace::default(),
            rng,
            edges: spec.edge_refs(),
            extents: spec.objects.iter().map(|o| o.bounding_radius()).collect(),
        })
    }

    pub fn edges(&self) -> &[EdgeRef] {
        &self.edges
    }

    fn background(&mut self) -> [f64; 3] {
        let [lo, hi] = self.config.background;
        let g = if lo == hi { lo } else { lo + (hi - lo) * self.rng.gen::<f64>() };
        [g; 3]
    }

    /// Runs `f` with a loss context for iteration `iter`.
    fn with_ctx<T>(
        &mut self,
        iter: usize,
        background: [f64; 3],
        f: impl FnOnce(&LossContext, &GaussianCloud, &mut ChaCha8Rng) -> Result<T>,
    ) -> Result<T> {
        let ctx = LossContext {
            spec: &self.spec,
            guidance: &self.guidance,
            intrinsics: &self.intrinsics,
            views: &self.config.views,
            annealing: &self.annealing,
            iter,
            background,
        };
        f(&ctx, &self.cloud, &mut self.rng)
    }

    fn record(&mut self, iter: usize, stage: u8, eval: &LossEval) {
        self.trace.push(iter, stage, eval.kind, eval.subject.clone(), eval.value);
    }

    /// Sums weighted evaluations and applies one Adam update to `objects`.
    fn apply(&mut self, iter: usize, terms: &[(f64, &LossEval)], objects: &[usize]) -> AppliedUpdate {
        let mut grad = CloudGrad::zeros(&self.cloud);
        let scale = self.screen_scale();
        for (w, e) in terms {
            if *w != 0.0 {
                grad.add_scaled(&e.grad, *w);
                self.stats.observe(&self.cloud, &e.grad, &e.routed, scale);
            }
        }
        let lr = self.adam.lr.means_at(iter, self.total_iters);
        self.adam.step(&mut self.cloud, &grad, objects, lr);
        AppliedUpdate {
            objects: objects.to_vec(),
            grad,
        }
    }

    /// Converts the summed pixel-space gradient norm to the per-pixel,
    /// normalized-device scale the densify threshold is expressed in.
    fn screen_scale(&self) -> f64 {
        let (w, h) = (self.intrinsics.width as f64, self.intrinsics.height as f64);
        0.5 * w.max(h) / (w * h)
    }

    /// Translation-only pre-phase: every iteration sums the joint-loss
    /// translation gradients of all edges and updates the translations.
    pub fn spatial_error_correction(&mut self, iters: usize) -> Result<()> {
        if self.edges.is_empty() {
            return Ok(());
        }
        let edges = self.edges.clone();
        let mut objects: Vec<usize> = edges.iter().flat_map(|e| [e.src, e.dst]).collect();
        objects.sort_unstable();
        objects.dedup();
        for iter in 0..iters {
            let bg = self.background();
            let mut total = CloudGrad::zeros(&self.cloud);
            for e in &edges {
                let eval = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_joint(ctx, cloud, e, rng))?;
                self.trace.push(iter, 0, LossKind::Spatial, eval.subject.clone(), eval.value);
                for (t, g) in total.translations.iter_mut().zip(&eval.grad.translations) {
                    for d in 0..3 {
                        t[d] += g[d];
                    }
                }
            }
            self.adam.step_translations(&mut self.cloud, &total, &objects);
        }
        Ok(())
    }

    /// One iteration of the configured schedule, followed by densify/prune
    /// on refinement iterations.
    pub fn step(&mut self, iter: usize) -> Result<StepReport> {
        let mut report = match self.config.heuristic {
            Heuristic::Holistic => self.step_holistic(iter)?,
            Heuristic::Simultaneous => self.step_simultaneous(iter)?,
            Heuristic::Iterative => self.step_iterative(iter)?,
            Heuristic::Staged => self.step_staged(iter)?,
            Heuristic::JointOnly => self.step_joint(iter, 0.0)?,
            Heuristic::JointObj => self.step_joint(iter, 1.0)?,
        };
        if self.config.densify.is_refinement_iteration(iter) {
            report.densify = Some(densify_and_prune(
                &mut self.cloud,
                &mut self.stats,
                &mut self.adam,
                &self.extents,
                &self.config.densify,
                &mut self.rng,
            ));
        }
        Ok(report)
    }

    pub fn step_holistic(&mut self, iter: usize) -> Result<StepReport> {
        let bg = self.background();
        let scene = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_scene(ctx, cloud, rng))?;
        self.record(iter, 1, &scene);
        let all = self.cloud.all_objects();
        let u = self.apply(iter, &[(1.0, &scene)], &all);
        Ok(StepReport {
            updates: vec![u],
            densify: None,
        })
    }

    pub fn step_simultaneous(&mut self, iter: usize) -> Result<StepReport> {
        let [w_obj, w_edge, w_scene] = self.config.simultaneous_weights;
        let bg = self.background();
        let mut evals: Vec<(f64, LossEval)> = Vec::new();
        if w_obj != 0.0 {
            for k in 0..self.cloud.object_count() {
                let e = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_obj(ctx, cloud, k, rng))?;
                evals.push((w_obj, e));
            }
        }
        if w_edge != 0.0 {
            for edge in self.edges.clone() {
                let e = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_joint(ctx, cloud, &edge, rng))?;
                evals.push((w_edge, e));
            }
        }
        if w_scene != 0.0 {
            let e = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_scene(ctx, cloud, rng))?;
            evals.push((w_scene, e));
        }
        for (_, e) in &evals {
            self.record(iter, 1, e);
        }
        let mut objects: Vec<usize> = evals.iter().flat_map(|(_, e)| e.routed.iter().copied()).collect();
        objects.sort_unstable();
        objects.dedup();
        let terms: Vec<(f64, &LossEval)> = evals.iter().map(|(w, e)| (*w, e)).collect();
        let u = self.apply(iter, &terms, &objects);
        Ok(StepReport {
            updates: vec![u],
            densify: None,
        })
    }

    pub fn step_iterative(&mut self, iter: usize) -> Result<StepReport> {
        let bg = self.background();
        let mut updates = Vec::new();
        for k in 0..self.cloud.object_count() {
            let e = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_obj(ctx, cloud, k, rng))?;
            self.record(iter, 1, &e);
            updates.push(self.apply(iter, &[(1.0, &e)], &[k]));
        }
        for edge in self.edges.clone() {
            let e = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_joint(ctx, cloud, &edge, rng))?;
            self.record(iter, 1, &e);
            updates.push(self.apply(iter, &[(1.0, &e)], &[edge.src, edge.dst]));
        }
        let e = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_scene(ctx, cloud, rng))?;
        self.record(iter, 1, &e);
        let all = self.cloud.all_objects();
        updates.push(self.apply(iter, &[(1.0, &e)], &all));
        Ok(StepReport { updates, densify: None })
    }

    /// Object-loss multiplier applied at `iter` by the staged schedule.
    pub fn staged_object_weight(&self, iter: usize) -> f64 {
        if schedule::in_stage_one(iter, self.config.gamma, self.total_iters) {
            schedule::object_weight(self.config.lambda, iter, self.total_iters)
        } else {
            1.0
        }
    }

    pub fn step_staged(&mut self, iter: usize) -> Result<StepReport> {
        let bg = self.background();
        let n_e = self.edges.len();
        let stage_one = schedule::in_stage_one(iter, self.config.gamma, self.total_iters);
        let stage = if stage_one { 1 } else { 2 };
        if n_e == 0 {
            // Without edges the first stage reduces to the scene prompt and
            // the second to round-robin object refinement.
            return if stage_one {
                self.step_holistic(iter)
            } else {
                let k = schedule::round_robin(iter, self.cloud.object_count());
                let e = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_obj(ctx, cloud, k, rng))?;
                self.record(iter, 2, &e);
                let u = self.apply(iter, &[(1.0, &e)], &[k]);
                Ok(StepReport {
                    updates: vec![u],
                    densify: None,
                })
            };
        }
        let edge = if stage_one {
            match schedule::stage_one_action(iter, n_e) {
                StageOneAction::Scene => {
                    let e = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_scene(ctx, cloud, rng))?;
                    self.record(iter, 1, &e);
                    let all = self.cloud.all_objects();
                    let u = self.apply(iter, &[(1.0, &e)], &all);
                    return Ok(StepReport {
                        updates: vec![u],
                        densify: None,
                    });
                }
                StageOneAction::Edge(k) => self.edges[k],
            }
        } else {
            self.edges[schedule::round_robin(iter, n_e)]
        };
        let w = self.staged_object_weight(iter);
        let relational = self.with_ctx(iter, bg, |ctx, cloud, rng| {
            if stage_one {
                loss_joint(ctx, cloud, &edge, rng)
            } else {
                loss_target_pair(ctx, cloud, &edge, rng)
            }
        })?;
        let obj_a = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_obj(ctx, cloud, edge.src, rng))?;
        let obj_b = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_obj(ctx, cloud, edge.dst, rng))?;
        for e in [&relational, &obj_a, &obj_b] {
            self.record(iter, stage, e);
        }
        let u = self.apply(iter, &[(1.0, &relational), (w, &obj_a), (w, &obj_b)], &[edge.src, edge.dst]);
        Ok(StepReport {
            updates: vec![u],
            densify: None,
        })
    }

    /// Edge loss on `E[t mod n_e]` plus `obj_weight` times both endpoint
    /// object losses.
    pub fn step_joint(&mut self, iter: usize, obj_weight: f64) -> Result<StepReport> {
        let bg = self.background();
        let edge = self.edges[schedule::round_robin(iter, self.edges.len())];
        let joint = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_joint(ctx, cloud, &edge, rng))?;
        self.record(iter, 1, &joint);
        let mut terms = vec![(1.0, joint)];
        if obj_weight != 0.0 {
            for k in [edge.src, edge.dst] {
                let e = self.with_ctx(iter, bg, |ctx, cloud, rng| loss_obj(ctx, cloud, k, rng))?;
                self.record(iter, 1, &e);
                terms.push((obj_weight, e));
            }
        }
        let refs: Vec<(f64, &LossEval)> = terms.iter().map(|(w, e)| (*w, e)).collect();
        let u = self.apply(iter, &refs, &[edge.src, edge.dst]);
        Ok(StepReport {
            updates: vec![u],
            densify: None,
        })
    }

    pub fn evaluate(&self, n_views: usize) -> Result<EvalReport> {
        evaluate(
            &self.spec,
            &self.guidance,
            &self.intrinsics,
            &self.config.views,
            &self.cloud,
            n_views,
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub cloud: GaussianCloud,
    pub trace: LossTrace,
    pub total_iters: usize,
    pub densify_events: Vec<(usize, DensifyReport)>,
}

/// Assemble, correct translations, then run the configured schedule.
pub fn run_optimization(spec: &SceneSpec, config: &CurriculumConfig, seed: u64) -> Result<RunOutput> {
    run_optimization_with(spec, config, seed, |_, _| Ok(()))
}

/// Like [`run_optimization`], calling `observe(iter, state)` after every
/// iteration.
pub fn run_optimization_with(
    spec: &SceneSpec,
    config: &CurriculumConfig,
    seed: u64,
    mut observe: impl FnMut(usize, &OptimizerState) -> Result<()>,
) -> Result<RunOutput> {
    let mut state = OptimizerState::new(spec, config, seed)?;
    state.spatial_error_correction(config.translation_iters)?;
    let mut densify_events = Vec::new();
    for iter in 0..state.total_iters {
        let report = state.step(iter)?;
        if let Some(d) = report.densify {
            densify_events.push((iter, d));
        }
        observe(iter, &state)?;
    }
    Ok(RunOutput {
        total_iters: state.total_iters,
        cloud: state.cloud,
        trace: state.trace,
        densify_events,
    })
}
