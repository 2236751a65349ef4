use std::path::{Path, PathBuf};

use compsplat::optim::{CurriculumConfig, Heuristic};
use compsplat::scene::{load_scene_spec, SceneSpec};
use compsplat::Error;
use serde::{Deserialize, Serialize};

/// Everything needed to reproduce a run. Loaded from JSON, then overridden
/// by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene_spec: Option<PathBuf>,
    /// Inline scene; takes precedence over `scene_spec` and is always
    /// filled in the manifest so a run directory is self-describing.
    pub scene: Option<SceneSpec>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub checkpoint_interval: Option<usize>,
    pub render_interval: Option<usize>,
    pub dump_targets: bool,
    pub curriculum: CurriculumConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene_spec: None,
            scene: None,
            output_dir: PathBuf::from("run"),
            seed: 0,
            checkpoint_interval: None,
            render_interval: None,
            dump_targets: false,
            curriculum: CurriculumConfig::default(),
        }
    }
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: RunConfig,
    pub heuristic: Heuristic,
    pub seed: u64,
    pub total_iters: usize,
    pub versions: Versions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Versions {
    pub compsplat: String,
    pub cli: String,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            compsplat: compsplat::VERSION.to_string(),
            cli: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Flag values that override the configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub spec: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub heuristic: Option<Heuristic>,
    pub iters: Option<usize>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub conflict_delta: Option<f64>,
    pub resolution: Option<usize>,
    pub points: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub render_every: Option<usize>,
    pub dump_targets: bool,
}

impl RunConfig {
    /// Parses either a bare run configuration or a run manifest.
    pub fn from_json(text: &str) -> Result<Self, Error> {
        if let Ok(m) = serde_json::from_str::<Manifest>(text) {
            return Ok(m.config);
        }
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(p) = &o.spec {
            self.scene_spec = Some(p.clone());
            self.scene = None;
        }
        if let Some(p) = &o.out {
            self.output_dir = p.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        let c = &mut self.curriculum;
        if let Some(h) = o.heuristic {
            c.heuristic = h;
        }
        if let Some(n) = o.iters {
            c.total_iters = Some(n);
        }
        if let Some(v) = o.lambda {
            c.lambda = v;
        }
        if let Some(v) = o.gamma {
            c.gamma = v;
        }
        if let Some(v) = o.conflict_delta {
            c.conflict_delta = v;
        }
        if let Some(v) = o.resolution {
            c.resolution = v;
        }
        if let Some(v) = o.points {
            c.points_per_object = v;
        }
        if let Some(v) = o.checkpoint_every {
            self.checkpoint_interval = Some(v);
        }
        if let Some(v) = o.render_every {
            self.render_interval = Some(v);
        }
        self.dump_targets |= o.dump_targets;
    }

    /// Loads the scene into `scene` (if given by path) and validates both
    /// the scene and the curriculum settings.
    pub fn resolve(&mut self) -> Result<SceneSpec, Error> {
        let spec = match (&self.scene, &self.scene_spec) {
            (Some(s), _) => {
                s.validate()?;
                s.clone()
            }
            (None, Some(p)) => load_scene_spec(p)?,
            (None, None) => return Err(Error::Config("no scene given (use --spec or `scene_spec`)".into())),
        };
        self.curriculum.validate(&spec)?;
        if self.checkpoint_interval == Some(0) || self.render_interval == Some(0) {
            return Err(Error::Config("intervals must be positive".into()));
        }
        self.scene = Some(spec.clone());
        Ok(spec)
    }
}
