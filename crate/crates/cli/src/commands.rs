use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use compsplat::camera::{pose_from_view, CameraIntrinsics, ViewSample};
use compsplat::cloud::GaussianCloud;
use compsplat::guidance::PromptRef;
use compsplat::image_io::write_png;
use compsplat::optim::losses::framing;
use compsplat::optim::{run_optimization_with, Heuristic, OptimizerState, RunOutput};
use compsplat::ply::{export_ply, import_ply};
use compsplat::raster::render;
use compsplat::scene::{load_scene_spec, SceneSpec};
use compsplat::trace::{LossTrace, SeriesSummary, TraceSummary};
use compsplat::Error;
use serde::Serialize;

use crate::config::{Manifest, RunConfig, Versions};

pub const EVAL_AZIMUTH: f64 = 30.0;
pub const EVAL_ELEVATION: f64 = 20.0;
const EVAL_BACKGROUND: [f64; 3] = [1.0; 3];

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn cmd_validate(spec_path: &Path) -> Result<String, Error> {
    let spec = load_scene_spec(spec_path)?;
    let mut report = format!("objects: {}, edges: {}\n", spec.objects.len(), spec.edges.len());
    for w in spec.warnings() {
        let _ = writeln!(report, "warning: {w}");
    }
    Ok(report)
}

/// Fixed inspection view of the whole scene.
pub fn eval_view(spec: &SceneSpec, intr: &CameraIntrinsics, fill: f64) -> ViewSample {
    let all: Vec<usize> = (0..spec.objects.len()).collect();
    let (look_at, radius) = framing(spec, &all, intr, fill);
    ViewSample {
        azimuth: EVAL_AZIMUTH,
        elevation: EVAL_ELEVATION,
        radius,
        look_at,
    }
}

fn write_render(path: &Path, cloud: &GaussianCloud, objects: &[usize], view: &ViewSample, intr: &CameraIntrinsics) -> Result<(), Error> {
    let camera = pose_from_view(view, intr);
    let out = render(cloud, objects, &camera, EVAL_BACKGROUND);
    write_png(path, &out.image, intr.width, intr.height)
}

fn write_translations(path: &Path, cloud: &GaussianCloud) -> Result<(), Error> {
    let map: BTreeMap<&str, [f64; 3]> = cloud.objects.iter().map(|o| (o.id.as_str(), o.translation)).collect();
    let text = serde_json::to_string_pretty(&map).expect("translations serialize");
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn dump_targets(dir: &Path, state: &OptimizerState) -> Result<(), Error> {
    let spec = &state.spec;
    let intr = &state.intrinsics;
    let fill = state.config.views.fill;
    let mut prompts: Vec<(String, PromptRef, Vec<usize>)> = vec![];
    for (k, o) in spec.objects.iter().enumerate() {
        prompts.push((format!("obj_{}", o.id), PromptRef::Object(k), vec![k]));
    }
    for e in spec.edge_refs() {
        prompts.push((format!("edge_{}", spec.edges[e.index].label()), PromptRef::Edge(e.index), vec![e.src, e.dst]));
    }
    prompts.push(("scene".into(), PromptRef::Scene, (0..spec.objects.len()).collect()));
    for (name, prompt, objects) in prompts {
        let (look_at, radius) = framing(spec, &objects, intr, fill);
        let view = ViewSample {
            azimuth: EVAL_AZIMUTH,
            elevation: EVAL_ELEVATION,
            radius,
            look_at,
        };
        let img = state.guidance.targets.render(prompt, &pose_from_view(&view, intr), EVAL_BACKGROUND);
        write_png(dir.join(format!("{name}.png")), &img.image, intr.width, intr.height)?;
    }
    Ok(())
}

/// Runs one optimization and writes its artifacts into `config.output_dir`.
pub fn cmd_run(config: &RunConfig) -> Result<RunOutput, Error> {
    let mut config = config.clone();
    let spec = config.resolve()?;
    let out_dir = config.output_dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    let seed = config.seed;
    let total = config.curriculum.total_iters_for(&spec);
    let manifest = Manifest {
        config: config.clone(),
        heuristic: config.curriculum.heuristic,
        seed,
        total_iters: total,
        versions: Versions::current(),
    };
    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(|e| io_err(&manifest_path, e))?;

    let intr = config.curriculum.intrinsics();
    let view = eval_view(&spec, &intr, config.curriculum.views.fill);
    let ckpt_dir = out_dir.join("checkpoints");
    if config.checkpoint_interval.is_some() {
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| io_err(&ckpt_dir, e))?;
    }
    if config.dump_targets {
        let dir = out_dir.join("targets");
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        dump_targets(&dir, &OptimizerState::new(&spec, &config.curriculum, seed)?)?;
    }
    let render_every = config.render_interval.unwrap_or((total / 5).max(1));
    let output = run_optimization_with(&spec, &config.curriculum, seed, |iter, state| {
        let done = iter + 1;
        if done % render_every == 0 || done == total {
            let all = state.cloud.all_objects();
            write_render(&out_dir.join(format!("render_{done:06}.png")), &state.cloud, &all, &view, &intr)?;
        }
        if let Some(k) = config.checkpoint_interval {
            if done % k == 0 {
                export_ply(&state.cloud, None, ckpt_dir.join(format!("ckpt_{done:06}.ply")))?;
                write_translations(&ckpt_dir.join(format!("ckpt_{done:06}.translations.json")), &state.cloud)?;
            }
        }
        Ok(())
    })?;

    output.trace.write_csv(out_dir.join("trace.csv"))?;
    export_ply(&output.cloud, None, out_dir.join("final.ply"))?;
    write_translations(&out_dir.join("final.translations.json"), &output.cloud)?;
    for o in &output.cloud.objects {
        export_ply(&output.cloud, Some(&o.id), out_dir.join(format!("obj_{}.ply", o.id)))?;
    }
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub heuristic: String,
    pub final_obj: Option<f64>,
    pub final_edge: Option<f64>,
    pub final_scene: Option<f64>,
    pub slope_obj: Option<f64>,
    pub slope_edge: Option<f64>,
    pub slope_scene: Option<f64>,
}

impl ComparisonRow {
    pub fn new(heuristic: &str, s: &TraceSummary) -> Self {
        let f = |x: &Option<SeriesSummary>| x.map(|v| v.final_mean);
        let d = |x: &Option<SeriesSummary>| x.map(|v| v.relative_slope);
        ComparisonRow {
            heuristic: heuristic.to_string(),
            final_obj: f(&s.obj),
            final_edge: f(&s.edge),
            final_scene: f(&s.scene),
            slope_obj: d(&s.obj),
            slope_edge: d(&s.edge),
            slope_scene: d(&s.scene),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

pub fn format_table(rows: &[ComparisonRow]) -> String {
    let mut s = format!(
        "{:<14} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}\n",
        "heuristic", "final_obj", "final_edge", "final_scene", "slope_obj", "slope_edge", "slope_scene"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<14} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            r.heuristic,
            fmt_opt(r.final_obj),
            fmt_opt(r.final_edge),
            fmt_opt(r.final_scene),
            fmt_opt(r.slope_obj),
            fmt_opt(r.slope_edge),
            fmt_opt(r.slope_scene)
        );
    }
    s
}

fn write_merged(path: &Path, traces: &[(String, LossTrace)]) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(Error::Csv)?;
    w.write_record(["heuristic", "iter", "stage", "kind", "subject", "value"])
        .map_err(Error::Csv)?;
    for (h, t) in traces {
        for r in &t.records {
            let kind = serde_json::to_value(r.kind).expect("kind serializes");
            w.write_record([
                h.as_str(),
                &r.iter.to_string(),
                &r.stage.to_string(),
                kind.as_str().unwrap_or_default(),
                &r.subject,
                &r.value.to_string(),
            ])
            .map_err(Error::Csv)?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Runs every heuristic with the same scene and seed into
/// `<out>/<heuristic>/`, then writes `merged.csv`, `summary.csv` and
/// `summary.txt` into `<out>`.
pub fn cmd_compare(base: &RunConfig, heuristics: &[Heuristic]) -> Result<Vec<ComparisonRow>, Error> {
    if heuristics.len() < 2 {
        return Err(Error::Config("compare needs at least two heuristics".into()));
    }
    let root = base.output_dir.clone();
    std::fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
    let mut traces = Vec::new();
    let mut rows = Vec::new();
    for (k, &h) in heuristics.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.curriculum.heuristic = h;
        // Repeated entries get their own directory.
        let name = if heuristics[..k].contains(&h) {
            format!("{}_{k}", h.name())
        } else {
            h.name().to_string()
        };
        cfg.output_dir = root.join(&name);
        let out = cmd_run(&cfg)?;
        rows.push(ComparisonRow::new(&name, &TraceSummary::of(&out.trace)));
        traces.push((name, out.trace));
    }
    write_merged(&root.join("merged.csv"), &traces)?;
    let mut w = csv::Writer::from_path(root.join("summary.csv")).map_err(Error::Csv)?;
    for r in &rows {
        w.serialize(r).map_err(Error::Csv)?;
    }
    w.flush().map_err(|e| io_err(&root, e))?;
    let table = format_table(&rows);
    let p = root.join("summary.txt");
    std::fs::write(&p, &table).map_err(|e| io_err(&p, e))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderRequest {
    pub input: PathBuf,
    pub output: PathBuf,
    pub object: Option<String>,
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: Option<f64>,
    pub turntable: bool,
    pub resolution: usize,
}

/// Loads `final.ply` (and the scene, when a manifest is present) from a run
/// directory, or a bare PLY file.
fn load_artifact(input: &Path) -> Result<(GaussianCloud, Option<SceneSpec>), Error> {
    if input.is_dir() {
        let ply = input.join("final.ply");
        if !ply.exists() {
            return Err(io_err(&ply, std::io::ErrorKind::NotFound.into()));
        }
        let manifest = input.join("manifest.json");
        let spec = match std::fs::read_to_string(&manifest) {
            Ok(text) => RunConfig::from_json(&text)?.scene,
            Err(_) => None,
        };
        Ok((import_ply(ply)?, spec))
    } else if input.exists() {
        Ok((import_ply(input)?, None))
    } else {
        Err(io_err(input, std::io::ErrorKind::NotFound.into()))
    }
}

/// Centroid of the effective means and a distance framing all of them.
fn cloud_framing(cloud: &GaussianCloud, objects: &[usize], intr: &CameraIntrinsics) -> ([f64; 3], f64) {
    let idx = cloud.subset_indices(objects);
    if idx.is_empty() {
        return ([0.0; 3], 4.0);
    }
    let pts: Vec<[f64; 3]> = idx.iter().map(|&i| cloud.effective_mean(i)).collect();
    let mut c = [0.0; 3];
    for p in &pts {
        for d in 0..3 {
            c[d] += p[d] / pts.len() as f64;
        }
    }
    let r = pts
        .iter()
        .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt())
        .fold(0.0, f64::max)
        .max(1e-3);
    (c, intr.framing_distance(r * 1.1, 0.7))
}

/// Renders one view, or 36 turntable frames at 10° azimuth steps. Returns
/// the written paths.
pub fn cmd_render(req: &RenderRequest) -> Result<Vec<PathBuf>, Error> {
    let (cloud, spec) = load_artifact(&req.input)?;
    let objects = match &req.object {
        Some(id) => vec![cloud.object_index(id).ok_or_else(|| Error::UnknownObject(id.clone()))?],
        None => cloud.all_objects(),
    };
    let intr = CameraIntrinsics::square(req.resolution);
    intr.validate()?;
    let (look_at, base) = match &spec {
        Some(s) if s.objects.len() == cloud.object_count() => {
            let ids: Vec<usize> = match &req.object {
                Some(id) => s.object_index(id).into_iter().collect(),
                None => (0..s.objects.len()).collect(),
            };
            framing(s, &ids, &intr, 0.7)
        }
        _ => cloud_framing(&cloud, &objects, &intr),
    };
    let radius = req.radius.unwrap_or(base);
    let azimuths: Vec<f64> = if req.turntable {
        (0..36).map(|k| -180.0 + 10.0 * k as f64).collect()
    } else {
        vec![req.azimuth]
    };
    let mut written = Vec::new();
    if req.turntable {
        std::fs::create_dir_all(&req.output).map_err(|e| io_err(&req.output, e))?;
    } else if let Some(parent) = req.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    for (k, az) in azimuths.iter().enumerate() {
        let view = ViewSample {
            azimuth: *az,
            elevation: req.elevation,
            radius,
            look_at,
        };
        let path = if req.turntable {
            req.output.join(format!("frame_{k:02}.png"))
        } else {
            req.output.clone()
        };
        write_render(&path, &cloud, &objects, &view, &intr)?;
        written.push(path);
    }
    Ok(written)
}
