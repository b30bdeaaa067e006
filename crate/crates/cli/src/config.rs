//! Scenario files: TOML with preset inheritance.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use toml::{Table, Value};

use radioslam::channel::{SensingConfig, SnrReference};
use radioslam::experiments::{table_ranges, CalibrationProtocol, MfStudyOptions, TwoTargetOptions};
use radioslam::scene::{circle_trajectory, line_trajectory, load_scene, preset_segments, Scene, Segment};
use radioslam::sensing::ScanOptions;
use radioslam::slam::SlamOptions;
use radioslam::waveform::{ArrayConfig, OfdmConfig};
use radioslam::Pose2;

use crate::presets;

const MAX_DEPTH: usize = 16;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub ofdm: OfdmConfig,
    pub array: ArrayConfig,
    pub sensing: SensingSpec,
    pub ranging: RangingSpec,
    #[serde(default)]
    pub scan: ScanOptions,
    #[serde(default)]
    pub calibration: CalibrationProtocol,
    #[serde(default)]
    pub slam: SlamOptions,
    #[serde(default)]
    pub mf_study: MfStudyOptions,
    #[serde(default)]
    pub two_target: TwoTargetOptions,
    #[serde(default)]
    pub range_table: RangeTableSpec,
    /// Directory relative scene files are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub preset: Option<String>,
    pub distance: Option<f64>,
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrajectorySpec {
    Single {
        pose: Pose2,
    },
    Circle {
        center: [f64; 2],
        radius: f64,
        n_poses: usize,
    },
    Line {
        start: [f64; 2],
        end: [f64; 2],
        n_poses: usize,
    },
    Poses {
        poses: Vec<Pose2>,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingSpec {
    pub snr_db: f64,
    pub hardware_delay: f64,
    /// Used for scans and the matched-filter studies.
    pub snr_reference: SnrReference,
    /// Used for single-plate calibration and the range table.
    pub calibration_reference: SnrReference,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangingSpec {
    pub iterations: usize,
    pub threshold_db: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RangeTableSpec {
    pub ranges: Vec<f64>,
}

impl Default for RangeTableSpec {
    fn default() -> Self {
        Self { ranges: table_ranges() }
    }
}

/// Recursively overlays `top` onto `base`. Tables merge key by key, except
/// that a table naming a different `kind` replaces its base outright.
pub fn deep_merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t))
                if t.get("kind").is_none_or(|kind| b.get("kind") == Some(kind)) =>
            {
                deep_merge(b, t)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_table(text: &str, origin: &str) -> Result<Table> {
    text.parse::<Table>().with_context(|| format!("parsing {origin}"))
}

/// Follows the `preset` chain of `table`, merging from the root down.
fn resolve(mut table: Table, base_dir: &Path, depth: usize) -> Result<Table> {
    let Some(parent) = table.remove("preset") else {
        return Ok(table);
    };
    if depth >= MAX_DEPTH {
        bail!("preset chain deeper than {MAX_DEPTH}");
    }
    let name = parent.as_str().ok_or_else(|| anyhow!("`preset` must be a string"))?;
    let (parent_table, parent_dir) = match presets::lookup(name) {
        Some(text) => (parse_table(text, &format!("preset {name}"))?, base_dir.to_path_buf()),
        None => {
            let path = base_dir.join(name);
            if !path.is_file() {
                bail!(
                    "unknown preset '{name}' (built-in: {}; or a path to a scenario file)",
                    presets::NAMES.join(", ")
                );
            }
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (parse_table(&text, &path.display().to_string())?, dir)
        }
    };
    let mut merged = resolve(parent_table, &parent_dir, depth + 1)?;
    deep_merge(&mut merged, table);
    Ok(merged)
}

impl ScenarioConfig {
    pub fn from_str(text: &str, base_dir: &Path) -> Result<Self> {
        let table = resolve(parse_table(text, "scenario")?, base_dir, 0)?;
        let mut cfg: ScenarioConfig = Value::Table(table).try_into().context("invalid scenario")?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    /// Loads a scenario file, or a built-in preset when `path` names one and
    /// no such file exists.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            if let Some(name) = path.to_str().filter(|n| presets::lookup(n).is_some()) {
                return Self::from_str(&format!("preset = \"{name}\""), Path::new("."));
            }
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, &dir).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            bail!("a seed is required (config `seed` or --seed)");
        }
        self.ofdm.validate()?;
        self.array.validate()?;
        self.slam.validate()?;
        self.sensing(self.sensing.snr_reference).validate()?;
        if self.ranging.iterations == 0 {
            bail!("ranging.iterations must be positive");
        }
        if !self.ranging.threshold_db.is_finite() || self.ranging.threshold_db > 0.0 {
            bail!("ranging.threshold_db must be a finite value <= 0");
        }
        if self.trajectory()?.is_empty() {
            bail!("trajectory has no poses");
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or_default()
    }

    pub fn sensing(&self, reference: SnrReference) -> SensingConfig {
        SensingConfig {
            snr_db: self.sensing.snr_db,
            snr_reference: reference,
            hardware_delay: self.sensing.hardware_delay,
            window_offset: 0.0,
            rng_seed: self.seed(),
        }
    }

    pub fn scene(&self) -> Result<Scene> {
        let s = &self.scene;
        let mut segments = match (&s.file, &s.preset) {
            (Some(_), Some(_)) => bail!("scene: give either `file` or `preset`, not both"),
            (Some(file), None) => {
                let scene = load_scene(self.base_dir.join(file))?;
                scene.segments().to_vec()
            }
            (None, Some(name)) => preset_segments(name, s.distance)?,
            (None, None) => Vec::new(),
        };
        segments.extend(s.segments.iter().copied());
        Ok(Scene::new(segments)?)
    }

    pub fn trajectory(&self) -> Result<Vec<Pose2>> {
        Ok(match &self.trajectory {
            TrajectorySpec::Single { pose } => vec![*pose],
            TrajectorySpec::Circle {
                center,
                radius,
                n_poses,
            } => {
                if !(*radius > 0.0) {
                    bail!("trajectory radius must be positive");
                }
                circle_trajectory(*center, *radius, *n_poses)
            }
            TrajectorySpec::Line { start, end, n_poses } => line_trajectory(*start, *end, *n_poses),
            TrajectorySpec::Poses { poses } => poses.clone(),
        })
    }

    pub fn scan_options(&self) -> ScanOptions {
        ScanOptions {
            iterations: self.ranging.iterations,
            ..self.scan.clone()
        }
    }

    pub fn calibration_protocol(&self) -> CalibrationProtocol {
        CalibrationProtocol {
            iterations: self.ranging.iterations,
            ..self.calibration.clone()
        }
    }
}
