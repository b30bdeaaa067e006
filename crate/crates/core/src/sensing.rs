//! Beam-scan simulation of one terminal pose: four array orientations, the
//! selected codebook beams per orientation, ray casting against the scene,
//! synthesis, channel estimation and per-beam peak refinement.

use std::f64::consts::{FRAC_PI_2, PI};

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{estimate_channel, BeamSynthesizer, SensingConfig, WeightedPath};
use crate::error::{invalid, Error, Result};
use crate::geometry::{wrap_angle, Pose2};
use crate::pointcloud::{assemble_scan, Heatmap, Scan};
use crate::ranging::{bisect_peak, pdp, DelayProfile, PeakEstimate};
use crate::scene::{cast_beam, PathHit, Scene};
use crate::waveform::{
    dft_codebook, generate_payload, selected_beams, ArrayConfig, Codebook, OfdmConfig, PayloadMode, ResourceGrid,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanOptions {
    /// Beams on either side of the array normal.
    pub half_width: usize,
    pub orientations: Vec<f64>,
    pub max_range: f64,
    pub iterations: usize,
    pub payload: PayloadMode,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            half_width: 23,
            orientations: vec![0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2],
            max_range: 60.0,
            iterations: crate::ranging::DEFAULT_ITERATIONS,
            payload: PayloadMode::Different,
        }
    }
}

/// Raw per-beam results of one pose.
#[derive(Debug, Clone)]
pub struct PoseMeasurement {
    pub orientations: Vec<f64>,
    /// Physical beam angles relative to the array normal.
    pub beam_angles: Vec<f64>,
    /// `[orientation][beam]`, delay counted from transmission.
    pub peaks: Vec<Vec<Option<PeakEstimate>>>,
    /// `[orientation][beam]`, window-relative `N_c`-point profiles.
    pub profiles: Vec<Vec<DelayProfile>>,
    pub window_offset: f64,
    pub pose_truth: Pose2,
}

impl PoseMeasurement {
    pub fn scan(&self, hardware_delay: f64) -> Result<Scan> {
        let mut scan = assemble_scan(&self.orientations, &self.beam_angles, &self.peaks, hardware_delay)?;
        scan.pose_truth = Some(self.pose_truth);
        Ok(scan)
    }

    /// Rows ordered by orientation, then beam.
    pub fn heatmap(&self, hardware_delay: f64) -> Result<Heatmap> {
        let rows = self.orientations.len() * self.beam_angles.len();
        let bins = self.profiles.first().and_then(|r| r.first()).map_or(0, |p| p.len());
        let mut m = Array2::zeros((rows, bins));
        let mut az = Vec::with_capacity(rows);
        for (o, row) in self.orientations.iter().zip(&self.profiles) {
            for (b, prof) in self.beam_angles.iter().zip(row) {
                let r = az.len();
                m.row_mut(r).assign(&ndarray::ArrayView1::from(&prof.values));
                az.push(wrap_angle(o + b));
            }
        }
        let res = self
            .profiles
            .first()
            .and_then(|r| r.first())
            .map_or(1.0, |p| p.bin_resolution);
        Heatmap::new(m, az, res, self.window_offset - hardware_delay)
    }
}

pub struct ScanSimulator {
    ofdm: OfdmConfig,
    codebook: Codebook,
    beams: Vec<usize>,
    beam_angles: Vec<f64>,
    synth: BeamSynthesizer,
    tx: ResourceGrid,
    opts: ScanOptions,
}

impl ScanSimulator {
    pub fn new(ofdm: &OfdmConfig, array: &ArrayConfig, sensing: &SensingConfig, opts: &ScanOptions) -> Result<Self> {
        if opts.orientations.is_empty() {
            return invalid("at least one orientation is required");
        }
        if !(opts.max_range > 0.0) {
            return invalid("max_range must be positive");
        }
        let synth = BeamSynthesizer::new(ofdm, array, sensing)?;
        let codebook = dft_codebook(array)?;
        let beams = selected_beams(array, opts.half_width)?;
        let beam_angles = beams
            .iter()
            .map(|&i| {
                codebook
                    .physical_angle(i)
                    .ok_or_else(|| Error::InvalidArgument(format!("beam {i} is not visible")))
            })
            .collect::<Result<Vec<_>>>()?;
        let tx = generate_payload(sensing.rng_seed, ofdm, opts.payload)?;
        Ok(Self {
            ofdm: *ofdm,
            codebook,
            beams,
            beam_angles,
            synth,
            tx,
            opts: opts.clone(),
        })
    }

    pub fn beam_angles(&self) -> &[f64] {
        &self.beam_angles
    }

    pub fn tx(&self) -> &ResourceGrid {
        &self.tx
    }

    /// Rays cast along every selected beam direction of one orientation.
    fn cast(&self, scene: &Scene, pose: &Pose2, orientation: f64) -> Vec<(f64, PathHit)> {
        self.beam_angles
            .iter()
            .filter_map(|&a| {
                cast_beam(scene, pose, pose.heading + orientation + a, self.opts.max_range).map(|h| (a, h))
            })
            .collect()
    }

    pub fn measure_pose(&self, scene: &Scene, pose: &Pose2, pose_id: u64) -> Result<PoseMeasurement> {
        let n_o = self.opts.orientations.len();
        let n_b = self.beams.len();
        let per_orientation: Vec<(Vec<f64>, Vec<Vec<Complex64>>, Vec<PathHit>)> = self
            .opts
            .orientations
            .par_iter()
            .map(|&o| {
                let hits = self.cast(scene, pose, o);
                let ramps = hits
                    .iter()
                    .map(|(_, h)| self.synth.path_response(h.delay))
                    .collect::<Result<Vec<_>>>()?;
                let angles = hits.iter().map(|(a, _)| *a).collect();
                Ok((angles, ramps, hits.into_iter().map(|(_, h)| h).collect()))
            })
            .collect::<Result<Vec<_>>>()?;

        let jobs: Vec<(usize, usize)> = (0..n_o).flat_map(|o| (0..n_b).map(move |b| (o, b))).collect();
        let results: Vec<(Option<PeakEstimate>, DelayProfile)> = jobs
            .par_iter()
            .map(|&(o, b)| self.beam(pose_id, o, b, &per_orientation[o]))
            .collect::<Result<Vec<_>>>()?;

        let window = self.synth.sensing().window_offset;
        let mut peaks = vec![Vec::with_capacity(n_b); n_o];
        let mut profiles = vec![Vec::with_capacity(n_b); n_o];
        for ((o, _), (peak, prof)) in jobs.iter().zip(results) {
            peaks[*o].push(peak.map(|p| PeakEstimate {
                delay: p.delay + window,
                ..p
            }));
            profiles[*o].push(prof);
        }
        Ok(PoseMeasurement {
            orientations: self.opts.orientations.clone(),
            beam_angles: self.beam_angles.clone(),
            peaks,
            profiles,
            window_offset: window,
            pose_truth: *pose,
        })
    }

    fn beam(
        &self,
        pose_id: u64,
        o: usize,
        b: usize,
        (angles, ramps, hits): &(Vec<f64>, Vec<Vec<Complex64>>, Vec<PathHit>),
    ) -> Result<(Option<PeakEstimate>, DelayProfile)> {
        let i = self.beams[b];
        let n = self.ofdm.n_subcarriers;
        let weighted: Vec<WeightedPath> = angles
            .iter()
            .zip(hits)
            .map(|(a, hit)| WeightedPath {
                hit: *hit,
                alignment: self.codebook.gain(i, *a),
            })
            .collect();
        let mut h = vec![Complex64::new(0.0, 0.0); n];
        for (w, ramp) in weighted.iter().zip(ramps) {
            let amp = w.alignment * w.hit.gain;
            for (hk, r) in h.iter_mut().zip(ramp) {
                *hk += amp * r;
            }
        }
        let var = self.synth.noise_variance(&weighted);
        let meas = self
            .synth
            .measure(i, &[pose_id, o as u64], &h, var, hits.clone(), &self.tx)?;
        let est = estimate_channel(&meas, &self.tx, &self.ofdm)?.averaged();
        let prof = pdp(&est, n, &self.ofdm)?;
        let peak = match bisect_peak(&est, 1, self.opts.iterations, &self.ofdm) {
            Ok(p) => p.into_iter().next(),
            Err(Error::NoPeak) => None,
            Err(e) => return Err(e),
        };
        Ok((peak, prof))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Segment;
    use crate::SPEED_OF_LIGHT;

    fn sim(snr_db: f64, orientations: Vec<f64>) -> ScanSimulator {
        let sensing = SensingConfig {
            snr_db,
            rng_seed: 11,
            ..SensingConfig::default()
        };
        let opts = ScanOptions {
            orientations,
            ..ScanOptions::default()
        };
        ScanSimulator::new(&OfdmConfig::prototype(), &ArrayConfig::default(), &sensing, &opts).unwrap()
    }

    #[test]
    fn boresight_plate_gives_one_strong_point() {
        let scene = Scene::new(vec![Segment::new([5.0, -0.5], [5.0, 0.5], 1.0)]).unwrap();
        let s = sim(f64::INFINITY, vec![0.0]);
        let m = s.measure_pose(&scene, &Pose2::identity(), 0).unwrap();
        let scan = m.scan(0.0).unwrap();
        let best = scan
            .points
            .iter()
            .max_by(|a, b| a.intensity.partial_cmp(&b.intensity).unwrap())
            .unwrap();
        assert!(best.azimuth.abs() < 1e-12);
        // neighbouring rays hit the plate slightly farther out and leak in
        // through the overlapping beams
        assert!((best.range - 5.0).abs() < 0.02, "{}", best.range);
        assert_eq!(m.profiles[0].len(), 47);
        let hm = m.heatmap(0.0).unwrap();
        assert_eq!(hm.matrix.dim(), (47, 1024));
        let bin = (2.0 * 5.0 / SPEED_OF_LIGHT / hm.bin_resolution).round() as usize;
        let row = hm.beam_azimuths.iter().position(|a| a.abs() < 1e-12).unwrap();
        assert!(hm.matrix[[row, bin]] > 0.5 * hm.matrix.row(row).iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn square_room_has_boresight_maxima() {
        let r = 4.0;
        let scene = Scene::new(vec![
            Segment::new([-r, -r], [r, -r], 1.0),
            Segment::new([r, -r], [r, r], 1.0),
            Segment::new([r, r], [-r, r], 1.0),
            Segment::new([-r, r], [-r, -r], 1.0),
        ])
        .unwrap();
        let s = sim(f64::INFINITY, ScanOptions::default().orientations);
        let m = s.measure_pose(&scene, &Pose2::identity(), 0).unwrap();
        let scan = m.scan(0.0).unwrap();
        let max = scan.points.iter().map(|p| p.intensity).fold(0.0, f64::max);
        let strong: Vec<_> = scan.points.iter().filter(|p| p.intensity > 0.999 * max).collect();
        assert_eq!(strong.len(), 4);
        for p in strong {
            let q = p.azimuth / FRAC_PI_2;
            assert!((q - q.round()).abs() < 1e-9);
            assert!((p.range - r).abs() < 0.05, "{}", p.range);
        }
    }

    #[test]
    fn measurement_is_deterministic() {
        let scene = Scene::preset("glass-door-room", None).unwrap();
        let s = sim(10.0, ScanOptions::default().orientations);
        let a = s.measure_pose(&scene, &Pose2::new(0.3, 0.2, 0.1), 4).unwrap();
        let b = s.measure_pose(&scene, &Pose2::new(0.3, 0.2, 0.1), 4).unwrap();
        assert_eq!(a.peaks, b.peaks);
        let c = s.measure_pose(&scene, &Pose2::new(0.3, 0.2, 0.1), 5).unwrap();
        assert_ne!(a.peaks, c.peaks);
    }
}
