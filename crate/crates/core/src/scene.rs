//! 2D reflector geometry, single-bounce ray casting and trajectories.
//!
//! Scene files are TOML:
//!
//! ```toml
//! # optional named preset, expanded before the explicit segments
//! preset = "metal-plate-range"
//! distance = 4.0          # only read by metal-plate-range
//!
//! [[segments]]
//! x1 = 0.0
//! y1 = 5.0
//! x2 = 3.0
//! y2 = 5.0
//! reflectivity = 0.8     # in (0, 1]
//! ```

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::geometry::Pose2;
use crate::SPEED_OF_LIGHT;

/// Distances below this are clamped in the spreading-loss term.
pub const MIN_GAIN_DISTANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub reflectivity: f64,
}

impl Segment {
    pub fn new(a: [f64; 2], b: [f64; 2], reflectivity: f64) -> Self {
        Self {
            x1: a[0],
            y1: a[1],
            x2: b[0],
            y2: b[1],
            reflectivity,
        }
    }

    pub fn a(&self) -> [f64; 2] {
        [self.x1, self.y1]
    }

    pub fn b(&self) -> [f64; 2] {
        [self.x2, self.y2]
    }

    pub fn length(&self) -> f64 {
        (self.x2 - self.x1).hypot(self.y2 - self.y1)
    }

    /// Euclidean distance from `p` to the closest point of the segment.
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        let (dx, dy) = (self.x2 - self.x1, self.y2 - self.y1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p[0] - self.x1) * dx + (p[1] - self.y1) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p[0] - self.x1 - t * dx).hypot(p[1] - self.y1 - t * dy)
    }
}

/// An immutable set of validated reflecting segments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scene {
    segments: Vec<Segment>,
}

impl Scene {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("scene has no segments".into()));
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.length() > 1e-9) || !s.length().is_finite() {
                return Err(Error::Config(format!("segment {i} has zero length")));
            }
            if !(s.reflectivity > 0.0 && s.reflectivity <= 1.0) {
                return Err(Error::Config(format!(
                    "segment {i} reflectivity {} outside (0, 1]",
                    s.reflectivity
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Distance from `p` to the nearest segment.
    pub fn distance_to_nearest(&self, p: [f64; 2]) -> f64 {
        self.segments
            .iter()
            .map(|s| s.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Applies a rigid transform to every segment.
    pub fn transformed(&self, t: &Pose2) -> Scene {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment::new(t.transform_point(s.a()), t.transform_point(s.b()), s.reflectivity))
            .collect();
        Scene { segments }
    }
}

/// One ray-cast return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathHit {
    /// World-frame azimuth of the ray, radians.
    pub beam_azimuth_world: f64,
    pub distance: f64,
    /// Angle between the ray and the surface normal.
    pub incidence: f64,
    pub reflectivity: f64,
    /// Round-trip delay `2d/c`, seconds.
    pub delay: f64,
    pub gain: f64,
}

/// Reflection amplitude `ρ cos(incidence) / max(d, d_min)²`.
pub fn path_gain(reflectivity: f64, incidence: f64, distance: f64) -> f64 {
    reflectivity * incidence.cos().max(0.0) / distance.max(MIN_GAIN_DISTANCE).powi(2)
}

/// Nearest intersection of the ray from `pose` along `world_azimuth`.
pub fn cast_beam(scene: &Scene, pose: &Pose2, world_azimuth: f64, max_range: f64) -> Option<PathHit> {
    assert!(max_range > 0.0, "max_range must be positive");
    let (dy, dx) = world_azimuth.sin_cos();
    let o = [pose.x, pose.y];
    let mut best: Option<(f64, &Segment)> = None;
    for seg in &scene.segments {
        let e = [seg.x2 - seg.x1, seg.y2 - seg.y1];
        let denom = dx * e[1] - dy * e[0];
        if denom.abs() < 1e-12 * seg.length() {
            continue;
        }
        let w = [seg.x1 - o[0], seg.y1 - o[1]];
        let t = (w[0] * e[1] - w[1] * e[0]) / denom;
        let s = (w[0] * dy - w[1] * dx) / denom;
        if t > 1e-9 && t <= max_range && (-1e-12..=1.0 + 1e-12).contains(&s) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, seg));
            }
        }
    }
    best.map(|(d, seg)| {
        let len = seg.length();
        let n = [-(seg.y2 - seg.y1) / len, (seg.x2 - seg.x1) / len];
        let cos_inc = (dx * n[0] + dy * n[1]).abs().min(1.0);
        let incidence = cos_inc.acos();
        PathHit {
            beam_azimuth_world: world_azimuth,
            distance: d,
            incidence,
            reflectivity: seg.reflectivity,
            delay: 2.0 * d / SPEED_OF_LIGHT,
            gain: path_gain(seg.reflectivity, incidence, d),
        }
    })
}

/// `n` equidistant counter-clockwise poses on a circle, heading tangent.
pub fn circle_trajectory(center: [f64; 2], radius: f64, n_poses: usize) -> Vec<Pose2> {
    assert!(radius > 0.0 && n_poses >= 2, "need radius > 0 and n >= 2");
    (0..n_poses)
        .map(|k| {
            let phi = 2.0 * PI * k as f64 / n_poses as f64;
            Pose2::new(
                center[0] + radius * phi.cos(),
                center[1] + radius * phi.sin(),
                phi + PI / 2.0,
            )
        })
        .collect()
}

/// `n` poses evenly spaced from `start` to `end`, heading along the line.
pub fn line_trajectory(start: [f64; 2], end: [f64; 2], n_poses: usize) -> Vec<Pose2> {
    assert!(n_poses >= 2, "need n >= 2");
    let heading = (end[1] - start[1]).atan2(end[0] - start[0]);
    (0..n_poses)
        .map(|k| {
            let f = k as f64 / (n_poses - 1) as f64;
            Pose2::new(
                start[0] + f * (end[0] - start[0]),
                start[1] + f * (end[1] - start[1]),
                heading,
            )
        })
        .collect()
}

pub const PRESET_NAMES: [&str; 3] = ["metal-plate-range", "glass-door-room", "cnv-arena"];

/// Built-in scenes. `distance` is only used by `metal-plate-range`.
pub fn preset_segments(name: &str, distance: Option<f64>) -> Result<Vec<Segment>> {
    match name {
        "metal-plate-range" => {
            let d = distance.unwrap_or(4.0);
            if !(d > 0.0) {
                return Err(Error::Config(format!("plate distance {d} must be positive")));
            }
            Ok(vec![Segment::new([d, -0.5], [d, 0.5], 1.0)])
        }
        "glass-door-room" => {
            let near = 6.0;
            Ok(vec![
                // glass panels flanking the open doorway
                Segment::new([near, 0.75], [near, 2.5], 0.25),
                Segment::new([near, -2.5], [near, -0.75], 0.25),
                Segment::new([near, 2.5], [near, 8.0], 0.8),
                Segment::new([near, -8.0], [near, -2.5], 0.8),
                Segment::new([15.0, -8.0], [15.0, 8.0], 0.8),
            ])
        }
        "cnv-arena" => Ok(cnv_arena()),
        other => Err(Error::Config(format!(
            "unknown scene preset '{other}' (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

fn polyline(points: &[[f64; 2]], reflectivity: f64) -> Vec<Segment> {
    points
        .windows(2)
        .map(|w| Segment::new(w[0], w[1], reflectivity))
        .collect()
}

fn cnv_arena() -> Vec<Segment> {
    let (hx, hy) = (9.0, 8.0);
    let mut segs = polyline(&[[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy], [-hx, -hy]], 0.8);
    let (top, bot) = (0.8, -0.8);
    // C
    segs.extend(polyline(&[[-1.2, top], [-2.6, top], [-2.6, bot], [-1.2, bot]], 1.0));
    // N
    segs.extend(polyline(&[[-0.7, bot], [-0.7, top], [0.7, bot], [0.7, top]], 1.0));
    // V
    segs.extend(polyline(&[[1.2, top], [1.9, bot], [2.6, top]], 1.0));
    segs
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    preset: Option<String>,
    distance: Option<f64>,
    #[serde(default)]
    segments: Vec<Segment>,
}

impl Scene {
    pub fn preset(name: &str, distance: Option<f64>) -> Result<Scene> {
        Scene::new(preset_segments(name, distance)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Scene> {
        let file: SceneFile = toml::from_str(text).map_err(|e| Error::Config(format!("scene file: {e}")))?;
        let mut segments = match &file.preset {
            Some(name) => preset_segments(name, file.distance)?,
            None => Vec::new(),
        };
        segments.extend(file.segments);
        Scene::new(segments)
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
    Scene::from_toml_str(&text)
}
