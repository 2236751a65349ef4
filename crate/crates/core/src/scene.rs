//! Scene-graph description of a compositional prompt: objects with placement
//! and appearance hints, plus the relationship edges between them.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::primitive::Primitive;

/// Objects are expected to sit inside this axis-aligned world box.
pub const WORLD_HALF_EXTENT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: String,
    #[serde(rename = "prompt")]
    pub prompt_id: String,
    pub primitive: Primitive,
    pub center: [f64; 3],
    pub size: f64,
    #[serde(rename = "orientation_deg", default)]
    pub orientation: f64,
    #[serde(rename = "azimuth_offset_deg", default)]
    pub azimuth_offset: f64,
    pub color_hint: [f64; 3],
    #[serde(rename = "negatives", default)]
    pub negative_ids: Vec<String>,
}

impl ObjectSpec {
    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    /// Radius of a sphere around `center` enclosing the placed primitive.
    pub fn bounding_radius(&self) -> f64 {
        self.size * self.primitive.bounding_radius()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub src: String,
    pub dst: String,
    #[serde(rename = "prompt")]
    pub prompt_id: String,
}

impl EdgeSpec {
    /// Stable identifier used in traces.
    pub fn label(&self) -> String {
        format!("{}-{}", self.src, self.dst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(rename = "global_prompt")]
    pub global_prompt_id: String,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
}

/// An edge with its endpoints resolved to object indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeRef {
    pub index: usize,
    pub src: usize,
    pub dst: usize,
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene spec serializes")
    }

    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn edge_refs(&self) -> Vec<EdgeRef> {
        self.edges
            .iter()
            .enumerate()
            .map(|(index, e)| EdgeRef {
                index,
                src: self.object_index(&e.src).expect("validated edge"),
                dst: self.object_index(&e.dst).expect("validated edge"),
            })
            .collect()
    }

    /// Indices of objects sharing an edge with `object`, in spec order.
    pub fn neighbors(&self, object: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edge_refs()
            .iter()
            .filter_map(|e| {
                if e.src == object {
                    Some(e.dst)
                } else if e.dst == object {
                    Some(e.src)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::Validation("scene must contain at least one object".into()));
        }
        let mut ids = HashSet::new();
        for obj in &self.objects {
            if obj.id.is_empty() {
                return Err(Error::Validation("object id must not be empty".into()));
            }
            if !ids.insert(obj.id.as_str()) {
                return Err(Error::Validation(format!("duplicate object id `{}`", obj.id)));
            }
            if !(obj.size.is_finite() && obj.size > 0.0) {
                return Err(Error::Validation(format!("object `{}` size must be > 0", obj.id)));
            }
            if obj.center.iter().any(|c| !c.is_finite()) || !obj.orientation.is_finite() {
                return Err(Error::Validation(format!("object `{}` placement must be finite", obj.id)));
            }
            if !(-180.0..=180.0).contains(&obj.azimuth_offset) {
                return Err(Error::Validation(format!(
                    "object `{}` azimuth offset must lie in [-180, 180]",
                    obj.id
                )));
            }
            if obj.color_hint.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Validation(format!(
                    "object `{}` color hint must lie in [0, 1]",
                    obj.id
                )));
            }
        }
        for edge in &self.edges {
            for end in [&edge.src, &edge.dst] {
                if !ids.contains(end.as_str()) {
                    return Err(Error::Validation(format!(
                        "edge `{}` references unknown object `{end}`",
                        edge.label()
                    )));
                }
            }
            if edge.src == edge.dst {
                return Err(Error::Validation(format!("edge `{}` is a self-loop", edge.label())));
            }
        }
        let mut adjacency: HashMap<&str, HashSet<&str>> = HashMap::new();
        for edge in &self.edges {
            adjacency.entry(&edge.src).or_default().insert(&edge.dst);
            adjacency.entry(&edge.dst).or_default().insert(&edge.src);
        }
        for obj in &self.objects {
            for neg in &obj.negative_ids {
                let connected = adjacency.get(obj.id.as_str()).is_some_and(|s| s.contains(neg.as_str()));
                if !connected {
                    return Err(Error::Validation(format!(
                        "object `{}` lists negative `{neg}` which is not a directly connected object",
                        obj.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Non-fatal placement warnings.
    pub fn warnings(&self) -> Vec<String> {
        self.objects
            .iter()
            .filter(|o| o.center.iter().any(|c| c.abs() > WORLD_HALF_EXTENT))
            .map(|o| {
                format!(
                    "object `{}` center {:?} lies outside the [-{w}, {w}]^3 world box",
                    o.id,
                    o.center,
                    w = WORLD_HALF_EXTENT
                )
            })
            .collect()
    }

    /// Centroid and enclosing radius of a set of objects at their spec placement.
    pub fn bounding_sphere(&self, objects: &[usize]) -> (Vector3<f64>, f64) {
        let n = objects.len().max(1) as f64;
        let centroid = objects
            .iter()
            .fold(Vector3::zeros(), |acc, &i| acc + self.objects[i].center())
            / n;
        let radius = objects
            .iter()
            .map(|&i| (self.objects[i].center() - centroid).norm() + self.objects[i].bounding_radius())
            .fold(0.0, f64::max);
        (centroid, radius)
    }
}

pub fn load_scene_spec(path: impl AsRef<Path>) -> Result<SceneSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SceneSpec::from_json(&text)
}
