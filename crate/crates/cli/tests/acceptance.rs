//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 5`.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use compsplat::camera::{pose_from_view, Camera, CameraIntrinsics, ViewSample};
use compsplat::cloud::{GaussianCloud, ObjectSlot};
use compsplat::guidance::{sample_timestep, sds_surrogate_grad, NoiseSchedule};
use compsplat::optim::densify::DensifyConfig;
use compsplat::optim::schedule;
use compsplat::optim::{run_optimization, CurriculumConfig, Heuristic, OptimizerState, RunOutput};
use compsplat::raster::{backward, composite, render, Splat2D};
use compsplat::scene::SceneSpec;
use compsplat::trace::{median_filter, LossKind, LossTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

const TABLETOP: &str = include_str!("../../../scenes/tabletop.json");

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn random_scene(rng: &mut ChaCha8Rng) -> GaussianCloud {
    let mut cloud = GaussianCloud::default();
    for (k, n) in [3usize, 2].into_iter().enumerate() {
        let start = cloud.len();
        for _ in 0..n {
            cloud.means.push([0, 1, 2].map(|_| rng.gen_range(-0.45..0.45)));
            cloud.log_scales.push([0, 1, 2].map(|_| rng.gen_range(-2.1..-1.2)));
            let q = [0, 1, 2, 3].map(|_| rng.gen_range(-1.0..1.0));
            let n = q.iter().map(|c: &f64| c * c).sum::<f64>().sqrt();
            cloud.rotations.push(q.map(|c| c / n));
            cloud.opacity_logits.push(rng.gen_range(-1.5..1.5));
            cloud.colors.push([0, 1, 2].map(|_| rng.gen_range(-2.0..2.0)));
        }
        cloud.objects.push(ObjectSlot {
            id: format!("o{k}"),
            range: start..cloud.len(),
            translation: [0, 1, 2].map(|_| rng.gen_range(-0.15..0.15)),
        });
    }
    cloud
}

fn gradient_correctness() -> Outcome {
    const SCENES: usize = 20;
    let h = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let intr = CameraIntrinsics::square(32);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let mut misses = Vec::new();
    for _ in 0..SCENES {
        let cloud = random_scene(&mut rng);
        let view = ViewSample {
            azimuth: rng.gen_range(-180.0..180.0),
            elevation: rng.gen_range(-30.0..30.0),
            radius: 3.0,
            look_at: [0.0; 3],
        };
        let cam = pose_from_view(&view, &intr);
        let bg = [0, 1, 2].map(|_| rng.gen_range(0.0..1.0));
        let up: Vec<f64> = (0..32 * 32 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let all = [0, 1];
        let g = backward(&cloud, &all, &cam, bg, &up);
        let f = |c: &GaussianCloud| -> f64 { render(c, &all, &cam, bg).image.iter().zip(&up).map(|(a, b)| a * b).sum() };
        let mut probe = |analytic: f64, perturb: &dyn Fn(&mut GaussianCloud, f64)| {
            let mut p = cloud.clone();
            perturb(&mut p, h);
            let mut m = cloud.clone();
            perturb(&mut m, -h);
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let err = (fd - analytic).abs();
            let scale = fd.abs().max(analytic.abs());
            worst = worst.max(err / scale.max(1e-6));
            if err > (1e-3 * scale).max(1e-6) {
                misses.push(format!("partial {checked}: fd {fd:.6e} analytic {analytic:.6e}"));
            }
            checked += 1;
        };
        for i in 0..cloud.len() {
            for d in 0..3 {
                probe(g.means[i][d], &|c, e| c.means[i][d] += e);
                probe(g.log_scales[i][d], &|c, e| c.log_scales[i][d] += e);
                probe(g.colors[i][d], &|c, e| c.colors[i][d] += e);
            }
            for d in 0..4 {
                probe(g.rotations[i][d], &|c, e| c.rotations[i][d] += e);
            }
            probe(g.opacity_logits[i], &|c, e| c.opacity_logits[i] += e);
        }
        for k in 0..2 {
            for d in 0..3 {
                probe(g.translations[k][d], &|c, e| c.objects[k].translation[d] += e);
            }
        }
    }
    check(
        misses.is_empty(),
        format!(
            "{SCENES} scenes, {checked} partials, {} outside 1e-3 relative or 1e-6 absolute; max error/scale {worst:.2e}{}",
            misses.len(),
            misses.first().map(|m| format!(", first: {m}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn random_splat(rng: &mut ChaCha8Rng) -> Splat2D {
    let a = rng.gen_range(0.05..2.0);
    let c = rng.gen_range(0.05..2.0);
    let r: f64 = rng.gen_range(-0.5..0.5);
    Splat2D {
        mean_2d: [rng.gen_range(0.0..16.0), rng.gen_range(0.0..16.0)],
        conic: [a, r * (a * c as f64).sqrt(), c],
        depth: rng.gen_range(0.1..10.0),
        color: [0, 1, 2].map(|_| rng.gen_range(0.0..=1.0)),
        alpha_max: rng.gen_range(0.0..=1.0),
        source_index: 0,
        extent: [20.0, 20.0],
    }
}

fn small_camera() -> Camera {
    let view = ViewSample {
        azimuth: 0.0,
        elevation: 0.0,
        radius: 4.0,
        look_at: [0.0; 3],
    };
    pose_from_view(&view, &CameraIntrinsics::square(16))
}

fn compositing_invariants() -> Outcome {
    const PIXELS: usize = 1000;
    let cam = small_camera();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = Vec::new();
    for trial in 0..PIXELS {
        let n = rng.gen_range(1..=8);
        let mut splats: Vec<Splat2D> = (0..n).map(|_| random_splat(&mut rng)).collect();
        splats.sort_by(|a, b| a.depth.total_cmp(&b.depth));
        let bg = [0, 1, 2].map(|_| rng.gen_range(0.0..=1.0));
        let (px, py) = (rng.gen_range(0..16), rng.gen_range(0..16));
        let mut prev_t = 1.0;
        for k in 0..=n {
            let out = composite(&splats[..k], &cam, bg);
            let t = 1.0 - out.alpha[py * 16 + px];
            if t > prev_t {
                violations.push(format!("pixel {trial}: transmittance rose {prev_t} -> {t}"));
            }
            prev_t = t;
            if out.pixel(px, py).iter().any(|v| !(0.0..=1.0).contains(v)) {
                violations.push(format!("pixel {trial}: value {:?} outside [0,1]", out.pixel(px, py)));
            }
        }
    }
    let mut worst_blend: f64 = 0.0;
    for _ in 0..PIXELS {
        let (px, py) = (rng.gen_range(0..16), rng.gen_range(0..16));
        let c1 = [0, 1, 2].map(|_| rng.gen_range(0.0..=1.0));
        let c2 = [0, 1, 2].map(|_| rng.gen_range(0.0..=1.0));
        let bg = [0, 1, 2].map(|_| rng.gen_range(0.0..=1.0));
        let splat = |color, depth| Splat2D {
            mean_2d: [px as f64 + 0.5, py as f64 + 0.5],
            conic: [1.0, 0.0, 1.0],
            depth,
            color,
            alpha_max: 0.5,
            source_index: 0,
            extent: [4.0, 4.0],
        };
        let out = composite(&[splat(c1, 1.0), splat(c2, 2.0)], &cam, bg);
        let p = out.pixel(px, py);
        for ch in 0..3 {
            worst_blend = worst_blend.max((p[ch] - (0.5 * c1[ch] + 0.25 * c2[ch] + 0.25 * bg[ch])).abs());
        }
    }
    if worst_blend >= 1e-6 {
        violations.push(format!("two-splat blend off by {worst_blend:.2e}"));
    }
    check(
        violations.is_empty(),
        match violations.first() {
            None => format!("{PIXELS} random pixels monotone and in range; two-splat blend error {worst_blend:.1e}"),
            Some(v) => format!("{} violations, first: {v}", violations.len()),
        },
    )
}

// ---------------------------------------------------------------- 3

fn surrogate_unbiasedness() -> Outcome {
    const DRAWS: usize = 10_000;
    let sched = NoiseSchedule;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 16 * 16 * 3;
    let z: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let target: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut details = Vec::new();
    let mut ok = true;
    for t in [0.1, 0.5, 0.9] {
        let mut mean = vec![0.0; n];
        for _ in 0..DRAWS {
            let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let g = sds_surrogate_grad(&z, &target, t, &noise, &sched).map_err(|e| e.to_string())?;
            for (m, v) in mean.iter_mut().zip(&g.grad_image) {
                *m += v / DRAWS as f64;
            }
        }
        let ab = (std::f64::consts::FRAC_PI_2 * t).cos().powi(2);
        let gain = (1.0 - ab) * ab.sqrt() / (1.0 - ab).sqrt();
        let closed: Vec<f64> = z.iter().zip(&target).map(|(a, b)| gain * (a - b)).collect();
        let num: f64 = mean.iter().zip(&closed).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = closed.iter().map(|b| b * b).sum::<f64>().sqrt();
        let rel = num / den;
        ok &= rel < 0.02;
        details.push(format!("t={t}: {rel:.1e}"));
    }
    check(ok, format!("relative Frobenius error over {DRAWS} draws: {}", details.join(", ")))
}

// ---------------------------------------------------------------- 4

const TRIPLE: &str = r#"{
  "global_prompt": "three things",
  "objects": [
    {"id": "a", "prompt": "pa", "primitive": "sphere", "center": [-0.9, 0, 0], "size": 0.4, "color_hint": [0.9, 0.1, 0.1]},
    {"id": "b", "prompt": "pb", "primitive": "box", "center": [0, 0, 0], "size": 0.4, "color_hint": [0.1, 0.2, 0.9]},
    {"id": "c", "prompt": "pc", "primitive": "cylinder", "center": [0.9, 0, 0], "size": 0.4, "color_hint": [0.2, 0.8, 0.2]}
  ],
  "edges": [{"src": "a", "dst": "b", "prompt": "pab"}, {"src": "b", "dst": "c", "prompt": "pbc"}]
}"#;

fn schedule_exactness() -> Outcome {
    let (total, warmup, lambda, gamma) = (1000usize, 450usize, 8.0, 0.6);
    let spec = SceneSpec::from_json(TRIPLE).map_err(|e| e.to_string())?;
    let cfg = CurriculumConfig {
        total_iters: Some(total),
        warmup_iters: Some(warmup),
        resolution: 16,
        points_per_object: 8,
        translation_iters: 0,
        ..CurriculumConfig::default()
    };
    let mut state = OptimizerState::new(&spec, &cfg, 1).map_err(|e| e.to_string())?;
    let mut errs = Vec::new();

    for t in 0..total {
        let expected = if t < 600 {
            let r = t as f64 / total as f64;
            lambda * r * r
        } else {
            1.0
        };
        if state.staged_object_weight(t) != expected {
            errs.push(format!("object weight at {t}"));
        }
    }
    if state.staged_object_weight(300) != 0.72 && (state.staged_object_weight(300) - 0.72).abs() > 1e-15 {
        errs.push("object weight at 300 is not 0.72".into());
    }
    if schedule::stage_boundary(gamma, total) != 600 {
        errs.push("stage boundary".into());
    }

    // Drive the staged step directly and inspect what it recorded.
    for t in [0usize, 1, 2, 3, 4, 5, 6, 299, 300, 301, 599, 600, 601, 999] {
        let before = state.trace.len();
        state.step(t).map_err(|e| e.to_string())?;
        let recs = &state.trace.records[before..];
        let kinds: Vec<LossKind> = recs.iter().map(|r| r.kind).collect();
        let stage = recs[0].stage;
        let ok = if t < 600 {
            if t % 3 == 0 {
                kinds == [LossKind::Scene] && stage == 1
            } else {
                let label = ["a-b", "b-c"][t % 2];
                kinds == [LossKind::Edge, LossKind::Obj, LossKind::Obj] && recs[0].subject == label && stage == 1
            }
        } else {
            let label = ["a-b", "b-c"][t % 2];
            kinds == [LossKind::Target, LossKind::Obj, LossKind::Obj] && recs[0].subject == label && stage == 2
        };
        if !ok {
            errs.push(format!("step {t} recorded {kinds:?} at stage {stage}"));
        }
    }

    let restart_len = (0.3 * (total - 600) as f64).round() as usize;
    for t in 0..total {
        let expected = if t < warmup {
            0.98 - 0.48 * t as f64 / warmup as f64
        } else if t >= 600 && t < 600 + restart_len {
            0.98 - 0.48 * (t - 600) as f64 / restart_len as f64
        } else {
            0.5
        };
        if (state.annealing.t_max(t) - expected).abs() > 1e-15 {
            errs.push(format!("t_max at {t}: {} vs {expected}", state.annealing.t_max(t)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..10_000 {
        let iter = k % total;
        let s = sample_timestep(&mut rng, iter, &state.annealing);
        if !(0.02..=state.annealing.t_max(iter)).contains(&s) {
            errs.push(format!("timestep {s} at {iter}"));
        }
    }
    check(
        errs.is_empty(),
        match errs.first() {
            None => "object multiplier, boundary, scene interleave, anneal 0.98 to 0.5 with restart and 0.02 floor".into(),
            Some(e) => format!("{} mismatches, first: {e}", errs.len()),
        },
    )
}

// ---------------------------------------------------------------- 5

const PAIR: &str = r#"{
  "global_prompt": "a ball beside an egg",
  "objects": [
    {"id": "ball", "prompt": "a red ball", "primitive": "sphere", "center": [0, -0.6, 0], "size": 0.5, "color_hint": [0.9, 0.15, 0.1]},
    {"id": "egg", "prompt": "a blue egg", "primitive": "ellipsoid", "center": [0, 0.6, 0], "size": 0.55, "orientation_deg": 40, "azimuth_offset_deg": 40, "color_hint": [0.15, 0.3, 0.9]}
  ],
  "edges": [{"src": "ball", "dst": "egg", "prompt": "a red ball beside a blue egg"}]
}"#;

fn spatial_error_correction() -> Outcome {
    let spec = SceneSpec::from_json(PAIR).map_err(|e| e.to_string())?;
    let cfg = CurriculumConfig {
        total_iters: Some(10),
        resolution: 128,
        points_per_object: 1000,
        conflict_delta: 0.0,
        ..CurriculumConfig::default()
    };
    let mut state = OptimizerState::new(&spec, &cfg, 3).map_err(|e| e.to_string())?;
    for i in state.cloud.range(0) {
        state.cloud.means[i][0] += 0.5;
    }
    let before = state.cloud.clone();
    state.spatial_error_correction(200).map_err(|e| e.to_string())?;
    let t = state.cloud.objects[0].translation;
    let err = ((t[0] + 0.5).powi(2) + t[1].powi(2) + t[2].powi(2)).sqrt();
    let frozen = state.cloud.means == before.means
        && state.cloud.log_scales == before.log_scales
        && state.cloud.rotations == before.rotations
        && state.cloud.opacity_logits == before.opacity_logits
        && state.cloud.colors == before.colors;
    check(
        err < 0.1 && frozen,
        format!(
            "recovered [{:.3}, {:.3}, {:.3}], distance {err:.3} from [-0.5, 0, 0]; other parameters {}",
            t[0],
            t[1],
            t[2],
            if frozen { "bit-unchanged" } else { "CHANGED" }
        ),
    )
}

// ---------------------------------------------------------------- 6, 7

const CONFLICT_DELTA: f64 = 0.1;
const BUDGET: usize = 1200;
const SEED: u64 = 7;

fn conflict_config(heuristic: Heuristic) -> CurriculumConfig {
    let mut cfg = CurriculumConfig {
        heuristic,
        total_iters: Some(BUDGET),
        warmup_iters: Some(BUDGET * 3 / 10),
        resolution: 128,
        points_per_object: 400,
        conflict_delta: CONFLICT_DELTA,
        translation_iters: 0,
        ..CurriculumConfig::default()
    };
    cfg.densify.start_iter = BUDGET / 15;
    cfg.densify.end_iter = BUDGET * 6 / 10;
    cfg.densify.interval = BUDGET / 15;
    cfg.densify.max_gaussians = 4000;
    cfg
}

/// Median-filter window used for every trace comparison.
fn window() -> usize {
    (BUDGET / 10) | 1
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

fn filtered(trace: &LossTrace, kinds: &[LossKind]) -> (Vec<usize>, Vec<f64>) {
    let s = trace.series(kinds, &[1, 2]);
    let v: Vec<f64> = s.iter().map(|p| p.1).collect();
    (s.iter().map(|p| p.0).collect(), median_filter(&v, window()))
}

/// Mean of the filtered series over the last 20% of iterations.
fn final_level(trace: &LossTrace, kinds: &[LossKind]) -> f64 {
    let (iters, m) = filtered(trace, kinds);
    let cut = BUDGET * 4 / 5;
    let tail: Vec<f64> = iters.iter().zip(&m).filter(|(i, _)| **i >= cut).map(|(_, v)| *v).collect();
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn final_obj_edge(trace: &LossTrace) -> f64 {
    0.5 * (final_level(trace, &[LossKind::Obj]) + final_level(trace, &LossKind::RELATIONAL))
}

struct ConflictRuns {
    spec: SceneSpec,
    runs: Vec<(Heuristic, RunOutput, f64)>,
}

impl ConflictRuns {
    fn new() -> Result<Self, String> {
        Ok(ConflictRuns {
            spec: SceneSpec::from_json(TABLETOP).map_err(|e| e.to_string())?,
            runs: Vec::new(),
        })
    }

    fn get(&mut self, h: Heuristic) -> Result<&RunOutput, String> {
        if !self.runs.iter().any(|r| r.0 == h) {
            let t0 = Instant::now();
            let out = run_optimization(&self.spec, &conflict_config(h), SEED).map_err(|e| e.to_string())?;
            self.runs.push((h, out, t0.elapsed().as_secs_f64()));
        }
        Ok(&self.runs.iter().find(|r| r.0 == h).unwrap().1)
    }

    fn seconds(&self, hs: &[Heuristic]) -> f64 {
        self.runs.iter().filter(|r| hs.contains(&r.0)).map(|r| r.2).sum()
    }

    fn mean_iou(&mut self, h: Heuristic) -> Result<f64, String> {
        let cloud = self.get(h)?.cloud.clone();
        let mut probe = OptimizerState::new(&self.spec, &conflict_config(h), SEED).map_err(|e| e.to_string())?;
        probe.cloud = cloud;
        Ok(probe.evaluate(8).map_err(|e| e.to_string())?.mean_iou())
    }
}

fn loss_dynamics(runs: &mut ConflictRuns) -> Outcome {
    let w = window();
    let boundary = schedule::stage_boundary(0.6, BUDGET);
    let staged = runs.get(Heuristic::Staged)?.trace.clone();

    let (iters, rel) = filtered(&staged, &LossKind::RELATIONAL);
    let b = iters.iter().position(|&i| i >= boundary).ok_or("no stage-2 records")?;
    let start = median(&rel[..w]);
    let at_boundary = median(&rel[b - w..b]);
    let decrease = 1.0 - at_boundary / start;
    let drift = rel[b..].iter().copied().fold(f64::MIN, f64::max) / at_boundary - 1.0;

    let (oiters, obj) = filtered(&staged, &[LossKind::Obj]);
    let ob = oiters.iter().position(|&i| i >= boundary).ok_or("no stage-2 object records")?;
    let fall = 1.0 - median(&obj[obj.len() - w..]) / median(&obj[ob..ob + w]);

    let staged_final = final_obj_edge(&staged);
    let iterative_final = final_obj_edge(&runs.get(Heuristic::Iterative)?.trace.clone());
    let simultaneous_final = final_obj_edge(&runs.get(Heuristic::Simultaneous)?.trace.clone());
    let ratio = iterative_final / staged_final;

    let a = decrease >= 0.5 && drift <= 0.2 && fall >= 0.3;
    let b_ok = ratio >= 2.0;
    let c = simultaneous_final > staged_final;
    let secs = runs.seconds(&[Heuristic::Staged, Heuristic::Iterative, Heuristic::Simultaneous]);
    let mark = |x: bool| if x { "ok" } else { "FAIL" };
    check(
        a && b_ok && c && secs < 1800.0,
        format!(
            "(a) {}: stage-1 edge decrease {:.0}%, stage-2 drift {:+.0}%, stage-2 object fall {:.0}%; \
             (b) {}: iterative/staged final obj+edge {ratio:.2} (iterative {iterative_final:.2e}, staged {staged_final:.2e}); \
             (c) {}: simultaneous {simultaneous_final:.2e} vs staged {staged_final:.2e}; {secs:.0}s",
            mark(a),
            100.0 * decrease,
            100.0 * drift,
            100.0 * fall,
            mark(b_ok),
            mark(c)
        ),
    )
}

fn ablation(runs: &mut ConflictRuns) -> Outcome {
    let staged_iou = runs.mean_iou(Heuristic::Staged)?;
    let joint_iou = runs.mean_iou(Heuristic::JointOnly)?;
    let staged_edge = final_level(&runs.get(Heuristic::Staged)?.trace.clone(), &LossKind::RELATIONAL);
    let joint_obj_edge = final_level(&runs.get(Heuristic::JointObj)?.trace.clone(), &LossKind::RELATIONAL);
    let iou_ok = joint_iou < staged_iou;
    let edge_ok = joint_obj_edge > staged_edge;
    let mark = |x: bool| if x { "ok" } else { "FAIL" };
    check(
        iou_ok && edge_ok,
        format!(
            "{}: joint-only IoU {joint_iou:.3} vs staged {staged_iou:.3}; \
             {}: joint+object final edge {joint_obj_edge:.2e} vs staged {staged_edge:.2e}",
            mark(iou_ok),
            mark(edge_ok)
        ),
    )
}

// ---------------------------------------------------------------- 8

fn fuzz_scene(rng: &mut ChaCha8Rng) -> SceneSpec {
    let prims = ["sphere", "box", "cylinder", "ellipsoid"];
    let n = rng.gen_range(2..=4);
    let objects: Vec<String> = (0..n)
        .map(|k| {
            format!(
                r#"{{"id": "o{k}", "prompt": "p{k}", "primitive": "{}", "center": [{}, {}, 0], "size": {}, "color_hint": [{}, {}, {}], "orientation_deg": {}, "azimuth_offset_deg": {}}}"#,
                prims[rng.gen_range(0..4)],
                1.1 * k as f64,
                rng.gen_range(-0.3..0.3),
                rng.gen_range(0.3..0.5),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(-90.0..90.0),
                rng.gen_range(-90.0..90.0),
            )
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.5) {
                edges.push(format!(r#"{{"src": "o{i}", "dst": "o{j}", "prompt": "e{i}{j}"}}"#));
            }
        }
    }
    let text = format!(
        r#"{{"global_prompt": "g", "objects": [{}], "edges": [{}]}}"#,
        objects.join(","),
        edges.join(",")
    );
    SceneSpec::from_json(&text).expect("fuzz scene is valid")
}

/// Partitions each sub-update of step `t` may touch.
fn expected_updates(state: &OptimizerState, t: usize) -> Vec<Vec<usize>> {
    let n = state.cloud.object_count();
    let all: Vec<usize> = (0..n).collect();
    let edges = state.edges();
    let pair = |k: usize| vec![edges[k].src, edges[k].dst];
    match state.config.heuristic {
        Heuristic::Holistic | Heuristic::Simultaneous => vec![all],
        Heuristic::Iterative => {
            let mut v: Vec<Vec<usize>> = (0..n).map(|k| vec![k]).collect();
            v.extend((0..edges.len()).map(pair));
            v.push(all);
            v
        }
        Heuristic::Staged => {
            let n_e = edges.len();
            let stage_one = (t as f64) < state.config.gamma * state.total_iters as f64;
            match (stage_one, n_e) {
                (true, 0) => vec![all],
                (false, 0) => vec![vec![t % n]],
                (true, _) if t % (n_e + 1) == 0 => vec![all],
                _ => vec![pair(t % n_e)],
            }
        }
        Heuristic::JointOnly | Heuristic::JointObj => vec![pair(t % edges.len())],
    }
}

fn partition_integrity() -> Outcome {
    const STEPS: usize = 250;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut errs = Vec::new();
    let mut densify_events = 0;
    let mut steps = 0;
    for h in [Heuristic::Holistic, Heuristic::Simultaneous, Heuristic::Iterative, Heuristic::Staged] {
        let spec = fuzz_scene(&mut rng);
        let cfg = CurriculumConfig {
            heuristic: h,
            total_iters: Some(STEPS),
            warmup_iters: Some(50),
            resolution: 24,
            points_per_object: 12,
            translation_iters: 3,
            densify: DensifyConfig {
                start_iter: 4,
                end_iter: STEPS - 10,
                interval: 4,
                grad_threshold: 1e-7,
                opacity_prune_threshold: 0.08,
                max_gaussians: 150,
                ..DensifyConfig::default()
            },
            ..CurriculumConfig::default()
        };
        let mut state = OptimizerState::new(&spec, &cfg, rng.gen()).map_err(|e| e.to_string())?;
        state.spatial_error_correction(cfg.translation_iters).map_err(|e| e.to_string())?;
        for t in 0..STEPS {
            let before = state.cloud.clone();
            let expected = expected_updates(&state, t);
            let report = state.step(t).map_err(|e| e.to_string())?;
            steps += 1;
            let got: Vec<Vec<usize>> = report.updates.iter().map(|u| u.objects.clone()).collect();
            if got != expected {
                errs.push(format!("{h} step {t}: updated {got:?}, expected {expected:?}"));
            }
            for u in &report.updates {
                for k in 0..before.object_count() {
                    if !u.objects.contains(&k) && !u.grad.object_is_zero(&before, k) {
                        errs.push(format!("{h} step {t}: gradient leaked into partition {k}"));
                    }
                }
            }
            if report.densify.is_none() {
                let touched: Vec<usize> = got.concat();
                for k in (0..before.object_count()).filter(|k| !touched.contains(k)) {
                    let (r0, r1) = (before.range(k), state.cloud.range(k));
                    if before.means[r0.clone()] != state.cloud.means[r1.clone()]
                        || before.colors[r0.clone()] != state.cloud.colors[r1.clone()]
                        || before.opacity_logits[r0] != state.cloud.opacity_logits[r1]
                    {
                        errs.push(format!("{h} step {t}: untouched partition {k} changed"));
                    }
                }
            } else {
                densify_events += 1;
            }
            if let Err(e) = state.cloud.check_invariants() {
                errs.push(format!("{h} step {t}: {e}"));
            }
            if let Err(e) = state.adam.check_alignment(&state.cloud) {
                errs.push(format!("{h} step {t}: {e}"));
            }
            if state.stats.accum.len() != state.cloud.len() || state.stats.count.len() != state.cloud.len() {
                errs.push(format!("{h} step {t}: densify statistics misaligned"));
            }
            if state.cloud.objects.iter().any(|o| o.range.is_empty()) {
                errs.push(format!("{h} step {t}: empty partition"));
            }
        }
    }
    check(
        errs.is_empty() && densify_events > 0,
        match errs.first() {
            None => format!("{steps} steps over 4 heuristics, {densify_events} densify/prune events, no violations"),
            Some(e) => format!("{} violations, first: {e}", errs.len()),
        },
    )
}

// ---------------------------------------------------------------- 9

fn cli_run(dir: &Path, name: &str, threads: Option<&str>) -> Result<std::path::PathBuf, String> {
    let scene = dir.join("scene.json");
    let cfg = dir.join("config.json");
    let out = dir.join(name);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_compsplat"));
    cmd.env_remove("SPLAT_THREADS");
    if let Some(t) = threads {
        cmd.env("SPLAT_THREADS", t);
    }
    let o = cmd
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--spec")
        .arg(&scene)
        .arg("--out")
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(dir.path().join("scene.json"), TABLETOP).map_err(|e| e.to_string())?;
    let cfg = r#"{
      "seed": 3,
      "curriculum": {
        "conflict_delta": 0.3,
        "total_iters": 30,
        "warmup_iters": 9,
        "translation_iters": 5,
        "points_per_object": 60,
        "resolution": 48,
        "densify": {"start_iter": 10, "end_iter": 25, "interval": 5, "grad_threshold": 1e-6}
      }
    }"#;
    std::fs::write(dir.path().join("config.json"), cfg).map_err(|e| e.to_string())?;
    let runs = [
        cli_run(dir.path(), "default_a", None)?,
        cli_run(dir.path(), "default_b", None)?,
        cli_run(dir.path(), "one", Some("1"))?,
        cli_run(dir.path(), "four", Some("4"))?,
    ];
    let mut differing = Vec::new();
    for f in ["final.ply", "trace.csv"] {
        let reference = std::fs::read(runs[0].join(f)).map_err(|e| e.to_string())?;
        for r in &runs[1..] {
            if std::fs::read(r.join(f)).map_err(|e| e.to_string())? != reference {
                differing.push(format!("{}/{f}", r.file_name().unwrap().to_string_lossy()));
            }
        }
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            "final.ply and trace.csv byte-identical across 2 reruns and SPLAT_THREADS=1,4".into()
        } else {
            format!("differs: {}", differing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut runs = match ConflictRuns::new() {
        Ok(r) => r,
        Err(e) => {
            println!("cannot load conflict scene: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !selected(n) {
            return;
        }
        let t0 = Instant::now();
        let outcome = f();
        let secs = t0.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} {name}: {tag} ({detail}) [{secs:.1}s]");
    };
    report(1, "gradient correctness", &mut gradient_correctness);
    report(2, "compositing invariants", &mut compositing_invariants);
    report(3, "surrogate unbiasedness", &mut surrogate_unbiasedness);
    report(4, "schedule exactness", &mut schedule_exactness);
    report(5, "spatial error correction", &mut spatial_error_correction);
    report(6, "loss dynamics", &mut || loss_dynamics(&mut runs));
    report(7, "ablation", &mut || ablation(&mut runs));
    report(8, "partition integrity", &mut partition_integrity);
    report(9, "determinism", &mut determinism);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
