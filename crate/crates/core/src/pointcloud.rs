//! Per-pose radio scans: assembly from beam peaks, intensity thresholding and
//! polar/Cartesian conversion.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{wrap_angle, Pose2};
use crate::ranging::{delay_to_range, PeakEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    /// Terminal frame, radians.
    pub azimuth: f64,
    pub range: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scan {
    pub points: Vec<ScanPoint>,
    pub pose_truth: Option<Pose2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub intensity: f64,
}

impl Scan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Terminal-frame Cartesian coordinates.
    pub fn local_xy(&self) -> Vec<[f64; 2]> {
        self.points
            .iter()
            .map(|p| [p.range * p.azimuth.cos(), p.range * p.azimuth.sin()])
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "azimuth_rad,range_m,intensity")?;
        for p in &self.points {
            writeln!(w, "{:.9},{:.9},{:.9e}", p.azimuth, p.range, p.intensity)?;
        }
        Ok(())
    }
}

/// Builds a scan from per-orientation beam peaks.
///
/// `peaks[o][b]` is the peak of beam `b` (physical angle `beam_angles[b]`)
/// with the array turned by `orientations[o]`; its delay is measured from
/// transmission, so `hardware_delay` is removed before converting to range.
/// Intensity is the peak energy `|D|²`.
pub fn assemble_scan(
    orientations: &[f64],
    beam_angles: &[f64],
    peaks: &[Vec<Option<PeakEstimate>>],
    hardware_delay: f64,
) -> Result<Scan> {
    if peaks.len() != orientations.len() {
        return invalid(format!(
            "{} orientation rows for {} orientations",
            peaks.len(),
            orientations.len()
        ));
    }
    let mut points = Vec::new();
    for (row, &o) in peaks.iter().zip(orientations) {
        if row.len() != beam_angles.len() {
            return invalid(format!("{} beam peaks for {} beams", row.len(), beam_angles.len()));
        }
        for (peak, &b) in row.iter().zip(beam_angles) {
            let Some(peak) = peak else { continue };
            let range = delay_to_range(peak.delay - hardware_delay);
            if range > 0.0 && peak.magnitude > 0.0 {
                points.push(ScanPoint {
                    azimuth: wrap_angle(o + b),
                    range,
                    intensity: peak.magnitude * peak.magnitude,
                });
            }
        }
    }
    Ok(Scan {
        points,
        pose_truth: None,
    })
}

/// Normalizes intensities by the scan's peak and drops points below
/// `threshold_db`.
pub fn filter_scan(scan: &Scan, threshold_db: f64) -> Result<Scan> {
    if threshold_db > 0.0 || threshold_db.is_nan() {
        return invalid(format!("threshold {threshold_db} dB must be <= 0"));
    }
    let peak = scan.points.iter().map(|p| p.intensity).fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Ok(scan.clone());
    }
    let points = scan
        .points
        .iter()
        .map(|p| ScanPoint {
            intensity: p.intensity / peak,
            ..*p
        })
        .filter(|p| 10.0 * p.intensity.log10() >= threshold_db)
        .collect();
    Ok(Scan {
        points,
        pose_truth: scan.pose_truth,
    })
}

pub fn scan_to_points(scan: &Scan, pose: &Pose2) -> Vec<WorldPoint> {
    scan.points
        .iter()
        .map(|p| {
            let a = pose.heading + p.azimuth;
            WorldPoint {
                x: pose.x + p.range * a.cos(),
                y: pose.y + p.range * a.sin(),
                intensity: p.intensity,
            }
        })
        .collect()
}

/// Inverse of [`scan_to_points`] for one point: `(azimuth, range)`.
pub fn point_to_polar(x: f64, y: f64, pose: &Pose2) -> (f64, f64) {
    let dx = x - pose.x;
    let dy = y - pose.y;
    (wrap_angle(dy.atan2(dx) - pose.heading), dx.hypot(dy))
}

pub fn write_points_csv<W: Write>(points: &[WorldPoint], mut w: W) -> Result<()> {
    writeln!(w, "x,y,intensity")?;
    for p in points {
        writeln!(w, "{:.9},{:.9},{:.9e}", p.x, p.y, p.intensity)?;
    }
    Ok(())
}

/// Beams × delay-bins magnitude map of one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub matrix: Array2<f64>,
    /// Terminal frame, one per matrix row.
    pub beam_azimuths: Vec<f64>,
    pub bin_resolution: f64,
    /// Added to `bin * bin_resolution` to get the hardware-corrected delay.
    pub delay_offset: f64,
}

#[derive(Debug, Serialize)]
struct HeatmapMeta<'a> {
    rows: usize,
    bins: usize,
    bin_resolution_s: f64,
    delay_offset_s: f64,
    beam_azimuths_rad: &'a [f64],
}

impl Heatmap {
    pub fn new(matrix: Array2<f64>, beam_azimuths: Vec<f64>, bin_resolution: f64, delay_offset: f64) -> Result<Self> {
        if matrix.nrows() != beam_azimuths.len() {
            return invalid(format!(
                "heatmap has {} rows for {} beams",
                matrix.nrows(),
                beam_azimuths.len()
            ));
        }
        if !(bin_resolution > 0.0) {
            return invalid("bin resolution must be positive");
        }
        Ok(Self {
            matrix,
            beam_azimuths,
            bin_resolution,
            delay_offset,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for row in self.matrix.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn write_meta<W: Write>(&self, w: W) -> Result<()> {
        let meta = HeatmapMeta {
            rows: self.matrix.nrows(),
            bins: self.matrix.ncols(),
            bin_resolution_s: self.bin_resolution,
            delay_offset_s: self.delay_offset,
            beam_azimuths_rad: &self.beam_azimuths,
        };
        serde_json::to_writer_pretty(w, &meta).map_err(|e| crate::Error::Io(e.into()))?;
        Ok(())
    }
}
