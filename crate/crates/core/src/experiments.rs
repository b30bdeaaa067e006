//! End-to-end measurement protocols: the single-plate ranging table, the
//! matched-filter sidelobe study, the two-target margin, hardware-delay
//! calibration and scan simulation for SLAM, plus the metrics used to score
//! them.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::channel::{estimate_channel, BeamMeasurement, BeamSynthesizer, SensingConfig, WeightedPath};
use crate::error::{invalid, Error, Result};
use crate::geometry::Pose2;
use crate::pointcloud::{filter_scan, Scan, WorldPoint};
use crate::ranging::{
    bisect_peak, calibrate_hardware_delay, coarse_peaks, delay_to_range, matched_filter_profile, pdp,
    peak_sidelobe_level, pss_coarse_sync, range_to_delay, CalibrationRecord, DelayProfile, SyncOptions,
};
use crate::rng::{stream_rng, tag};
use crate::scene::{cast_beam, PathHit, Scene};
use crate::sensing::{ScanOptions, ScanSimulator};
use crate::slam::rigid_align;
use crate::waveform::{
    dft_codebook, generate_payload, generate_payload_stream, pss_waveform, zc_sequence, ArrayConfig, OfdmConfig,
    OfdmModem, PayloadMode, ResourceGrid,
};

/// Samples the receive window opens ahead of the calibrated echo start.
pub const WINDOW_BACKOFF: usize = 8;

/// Normalized-energy threshold applied to radio scans.
pub const SCAN_THRESHOLD_DB: f64 = -13.0;

/// Receive-window start for a hardware delay estimate: the estimate rounded
/// to a sample, less [`WINDOW_BACKOFF`].
pub fn window_offset(hardware_delay: f64, ofdm: &OfdmConfig) -> f64 {
    ((hardware_delay * ofdm.sample_rate).round() - WINDOW_BACKOFF as f64) / ofdm.sample_rate
}

/// Plate distances 0.8 m to 12.8 m in 0.8 m steps.
pub fn table_ranges() -> Vec<f64> {
    (1..=16).map(|k| 0.8 * k as f64).collect()
}

fn plate_hit(distance: f64) -> Result<PathHit> {
    let scene = Scene::preset("metal-plate-range", Some(distance))?;
    cast_beam(&scene, &Pose2::identity(), 0.0, 2.0 * distance + 1.0)
        .ok_or_else(|| Error::InvalidArgument(format!("boresight ray misses the plate at {distance} m")))
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangeRow {
    pub range: f64,
    pub grid_range: f64,
    pub refined_range: f64,
    /// Grid-peak error `ε₁`, meters.
    pub eps_grid: f64,
    /// Bisection error `ε₂`, meters.
    pub eps_refined: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeTable {
    pub rows: Vec<RangeRow>,
}

impl RangeTable {
    pub fn rmse_grid(&self) -> f64 {
        rms(self.rows.iter().map(|r| r.eps_grid))
    }

    pub fn rmse_refined(&self) -> f64 {
        rms(self.rows.iter().map(|r| r.eps_refined))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "range_m,grid_range_m,refined_range_m,eps_grid_m,eps_refined_m")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.3},{:.9},{:.9},{:.9},{:.9}",
                r.range, r.grid_range, r.refined_range, r.eps_grid, r.eps_refined
            )?;
        }
        Ok(())
    }
}

/// Ranges a single plate on the boresight beam at each distance.
///
/// The receive window is placed from `hardware_delay_estimate`, which is
/// also what gets subtracted from the measured delays.
pub fn range_table(
    ranges: &[f64],
    ofdm: &OfdmConfig,
    array: &ArrayConfig,
    sensing: &SensingConfig,
    hardware_delay_estimate: f64,
    iterations: usize,
) -> Result<RangeTable> {
    if ranges.is_empty() {
        return invalid("no ranges given");
    }
    let sensing = SensingConfig {
        window_offset: window_offset(hardware_delay_estimate, ofdm),
        ..*sensing
    };
    let synth = BeamSynthesizer::new(ofdm, array, &sensing)?;
    let codebook = dft_codebook(array)?;
    let tx = generate_payload(sensing.rng_seed, ofdm, PayloadMode::Different)?;
    let to_range = |delay: f64| delay_to_range(delay + sensing.window_offset - hardware_delay_estimate);
    let rows = ranges
        .par_iter()
        .enumerate()
        .map(|(k, &d)| {
            let hit = plate_hit(d)?;
            let paths = [WeightedPath {
                hit,
                alignment: codebook.gain(0, 0.0),
            }];
            let meas = synth.synthesize(0, &[k as u64], &paths, &tx)?;
            let h = estimate_channel(&meas, &tx, ofdm)?.averaged();
            let grid = coarse_peaks(&h, 1, ofdm)?[0];
            let refined = bisect_peak(&h, 1, iterations, ofdm)?[0];
            let (g, r) = (to_range(grid.delay), to_range(refined.delay));
            Ok(RangeRow {
                range: d,
                grid_range: g,
                refined_range: r,
                eps_grid: g - d,
                eps_refined: r - d,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RangeTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfStudyOptions {
    /// `+inf` entries run noise-free.
    pub snr_db: Vec<f64>,
    pub trials: usize,
    /// Point-target delay in samples.
    pub target_delay_samples: f64,
    pub mainlobe_halfwidth: usize,
}

impl Default for MfStudyOptions {
    fn default() -> Self {
        Self {
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            trials: 50,
            target_delay_samples: 5.0,
            mainlobe_halfwidth: 1,
        }
    }
}

/// Mean PSL (dB) over the trials at one SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MfStudyRow {
    pub snr_db: f64,
    pub psl_single: f64,
    pub psl_identical: f64,
    pub psl_different: f64,
}

impl MfStudyRow {
    pub fn different_gain(&self) -> f64 {
        self.psl_single - self.psl_different
    }

    pub fn identical_gain(&self) -> f64 {
        self.psl_single - self.psl_identical
    }
}

pub fn write_mf_csv<W: Write>(rows: &[MfStudyRow], mut w: W) -> Result<()> {
    writeln!(w, "snr_db,psl_single_db,psl_identical_db,psl_different_db")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6}",
            r.snr_db, r.psl_single, r.psl_identical, r.psl_different
        )?;
    }
    Ok(())
}

fn time_symbols(modem: &OfdmModem, grid: &ResourceGrid) -> Result<Vec<Vec<Complex64>>> {
    (0..grid.n_symbols())
        .map(|q| modem.to_time(&grid.column_vec(q)))
        .collect()
}

fn repeat_column(grid: &ResourceGrid, q: usize, times: usize) -> ResourceGrid {
    let col = grid.column(q);
    ResourceGrid {
        data: Array2::from_shape_fn((grid.n_subcarriers(), times), |(k, _)| col[k]),
    }
}

fn point_target(delay: f64, gain: f64) -> PathHit {
    PathHit {
        beam_azimuth_world: 0.0,
        distance: delay_to_range(delay),
        incidence: 0.0,
        reflectivity: 1.0,
        delay,
        gain,
    }
}

/// Coherent MF profile of a measurement against its transmit grid.
fn coherent_mf(modem: &OfdmModem, meas: &BeamMeasurement, tx: &ResourceGrid, fs: f64) -> Result<DelayProfile> {
    let rx = time_symbols(modem, &meas.rx_grid)?;
    let x = time_symbols(modem, tx)?;
    matched_filter_profile(&rx, &x, true, fs)
}

/// Peak sidelobe level of a boresight point target for one symbol, twelve
/// identical and twelve independent symbols, averaged in dB over trials.
pub fn mf_study(ofdm: &OfdmConfig, array: &ArrayConfig, seed: u64, opts: &MfStudyOptions) -> Result<Vec<MfStudyRow>> {
    if opts.trials == 0 || opts.snr_db.is_empty() {
        return invalid("MF study needs at least one SNR and one trial");
    }
    let modem = OfdmModem::new(ofdm)?;
    let codebook = dft_codebook(array)?;
    let hit = point_target(opts.target_delay_samples / ofdm.sample_rate, 1.0);
    let paths = [WeightedPath {
        hit,
        alignment: codebook.gain(0, 0.0),
    }];
    let r = ofdm.symbols_per_beam;
    opts.snr_db
        .iter()
        .enumerate()
        .map(|(si, &snr)| {
            let sensing = SensingConfig {
                snr_db: snr,
                rng_seed: seed,
                ..SensingConfig::default()
            };
            let synth = BeamSynthesizer::new(ofdm, array, &sensing)?;
            let h = synth.channel_response(&paths)?;
            let var = synth.noise_variance(&paths);
            let trials = (0..opts.trials)
                .into_par_iter()
                .map(|t| {
                    let different =
                        generate_payload_stream(seed, &[tag::TRIAL, t as u64], ofdm, PayloadMode::Different)?;
                    let grids = [
                        repeat_column(&different, 0, 1),
                        repeat_column(&different, 0, r),
                        different,
                    ];
                    let mut psl = [0.0; 3];
                    for (mode, tx) in grids.iter().enumerate() {
                        let stream = [tag::TRIAL, si as u64, t as u64, mode as u64];
                        let meas = synth.measure(0, &stream, &h, var, vec![hit], tx)?;
                        let prof = coherent_mf(&modem, &meas, tx, ofdm.sample_rate)?;
                        psl[mode] = peak_sidelobe_level(&prof, opts.mainlobe_halfwidth)?;
                    }
                    Ok(psl)
                })
                .collect::<Result<Vec<_>>>()?;
            let mean = |m: usize| trials.iter().map(|p| p[m]).sum::<f64>() / trials.len() as f64;
            Ok(MfStudyRow {
                snr_db: snr,
                psl_single: mean(0),
                psl_identical: mean(1),
                psl_different: mean(2),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoTargetOptions {
    pub ranges: [f64; 2],
    pub gains: [f64; 2],
    /// Azimuth of both targets relative to the array normal.
    pub azimuth: f64,
    /// Bins on either side of the weak target used for the floor.
    pub floor_halfwidth: usize,
    /// Bins around each target excluded from the floor.
    pub guard: usize,
}

impl Default for TwoTargetOptions {
    fn default() -> Self {
        Self {
            ranges: [8.0, 9.0],
            gains: [1.0, 0.3],
            azimuth: PI / 4.0,
            floor_halfwidth: 64,
            guard: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoTargetOutcome {
    pub beam_index: usize,
    /// Bin nearest the weak target's delay.
    pub weak_bin: usize,
    /// Coherently integrated MF power profile.
    pub mf: DelayProfile,
    /// Single-symbol PDP.
    pub pdp: DelayProfile,
    pub mf_margin_db: f64,
    pub pdp_margin_db: f64,
}

/// Power at `bin` over the mean power of the bins within `halfwidth` of it,
/// skipping bins within `guard` of any of `exclude`.
fn local_margin_db(power: &[f64], bin: usize, exclude: &[usize], halfwidth: usize, guard: usize) -> f64 {
    let n = power.len();
    let circ = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(n - d)
    };
    let floor: Vec<f64> = (0..n)
        .filter(|&i| circ(i, bin) <= halfwidth && exclude.iter().all(|&e| circ(i, e) > guard))
        .map(|i| power[i])
        .collect();
    let mean = floor.iter().sum::<f64>() / floor.len().max(1) as f64;
    10.0 * (power[bin] / mean).log10()
}

/// Two point targets seen by the codebook beam closest to `azimuth`: margin
/// of the weak target's bin over the local floor, for the coherently
/// integrated MF profile and for the PDP of the first symbol alone.
pub fn two_target(
    ofdm: &OfdmConfig,
    array: &ArrayConfig,
    sensing: &SensingConfig,
    opts: &TwoTargetOptions,
) -> Result<TwoTargetOutcome> {
    let synth = BeamSynthesizer::new(ofdm, array, sensing)?;
    let codebook = dft_codebook(array)?;
    let beam_index = (0..codebook.len())
        .filter_map(|i| codebook.physical_angle(i).map(|a| (i, (a - opts.azimuth).abs())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::InvalidArgument("no visible beam".into()))?;
    let alignment = codebook.gain(beam_index, opts.azimuth);
    let paths: Vec<WeightedPath> = opts
        .ranges
        .iter()
        .zip(opts.gains)
        .map(|(&d, g)| WeightedPath {
            hit: point_target(range_to_delay(d), g),
            alignment,
        })
        .collect();
    let tx = generate_payload(sensing.rng_seed, ofdm, PayloadMode::Different)?;
    let meas = synth.synthesize(beam_index, &[], &paths, &tx)?;
    let modem = OfdmModem::new(ofdm)?;
    let mf = coherent_mf(&modem, &meas, &tx, ofdm.sample_rate)?;
    let est = estimate_channel(&meas, &tx, ofdm)?;
    let single = pdp(&est.symbol(0), ofdm.n_subcarriers, ofdm)?;

    let n = ofdm.n_subcarriers;
    let bin_of = |d: f64| {
        let w = synth.window_delay(range_to_delay(d)).unwrap_or(0.0);
        ((w * ofdm.sample_rate).round() as usize) % n
    };
    let bins = [bin_of(opts.ranges[0]), bin_of(opts.ranges[1])];
    let pdp_power: Vec<f64> = single.values.iter().map(|v| v * v).collect();
    Ok(TwoTargetOutcome {
        beam_index,
        weak_bin: bins[1],
        mf_margin_db: local_margin_db(&mf.values, bins[1], &bins, opts.floor_halfwidth, opts.guard),
        pdp_margin_db: local_margin_db(&pdp_power, bins[1], &bins, opts.floor_halfwidth, opts.guard),
        mf,
        pdp: single,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationProtocol {
    pub ranges: Vec<f64>,
    pub zc_root: u64,
    pub zc_length: u64,
    pub sync: SyncOptions,
    /// Samples the data windows open ahead of the synchronized frame start.
    pub backoff: usize,
    pub iterations: usize,
}

impl Default for CalibrationProtocol {
    fn default() -> Self {
        Self {
            ranges: table_ranges(),
            zc_root: 25,
            zc_length: 127,
            sync: SyncOptions::default(),
            backoff: WINDOW_BACKOFF,
            iterations: crate::ranging::DEFAULT_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    pub records: Vec<CalibrationRecord>,
    pub estimate: f64,
}

pub fn write_calibration_csv<W: Write>(records: &[CalibrationRecord], mut w: W) -> Result<()> {
    writeln!(w, "t1_s,t2_s,t_ota_s")?;
    for r in records {
        writeln!(w, "{:.15e},{:.15e},{:.15e}", r.t1, r.t2, r.t_ota)?;
    }
    Ok(())
}

/// Delays `signal` by `delay` samples (any real value) with a circular
/// frequency-domain phase ramp and scales it by `amp`.
fn fractional_delay(signal: &[Complex64], delay: f64, amp: Complex64) -> Vec<Complex64> {
    let n = signal.len();
    let mut planner = FftPlanner::new();
    let mut buf = signal.to_vec();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
        *v *= amp * Complex64::from_polar(1.0 / n as f64, -2.0 * PI * f * delay / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}

/// Hardware-delay calibration over single-plate echoes.
///
/// Each echo is a time-domain frame (PSS then `R` data symbols, all with
/// cyclic prefix) delayed by the true round trip plus `T_H`. `T1` is the
/// synchronized frame start less the window backoff; `T2` is the refined
/// PDP peak inside the data windows opened at `T1`.
pub fn run_calibration(
    ofdm: &OfdmConfig,
    array: &ArrayConfig,
    sensing: &SensingConfig,
    protocol: &CalibrationProtocol,
) -> Result<CalibrationOutcome> {
    if protocol.ranges.is_empty() {
        return invalid("no calibration targets");
    }
    let modem = OfdmModem::new(ofdm)?;
    let synth = BeamSynthesizer::new(ofdm, array, sensing)?;
    let codebook = dft_codebook(array)?;
    let (n, cp, fs) = (ofdm.n_subcarriers, ofdm.cp_samples, ofdm.sample_rate);
    let zc = zc_sequence(protocol.zc_root, protocol.zc_length)?;
    // boost the PSS to the per-sample power of a fully loaded symbol
    let boost = (n as f64 / zc.len() as f64).sqrt();
    let pss: Vec<Complex64> = pss_waveform(&zc, ofdm)?.iter().map(|v| v * boost).collect();
    let tx = generate_payload(sensing.rng_seed, ofdm, PayloadMode::Different)?;

    let mut frame: Vec<Complex64> = pss[n - cp..].to_vec();
    frame.extend_from_slice(&pss);
    for q in 0..tx.n_symbols() {
        frame.extend(modem.modulate(&tx.column_vec(q))?);
    }
    let sym = ofdm.samples_per_symbol();

    let records = protocol
        .ranges
        .par_iter()
        .enumerate()
        .map(|(k, &d)| {
            let hit = plate_hit(d)?;
            let path = WeightedPath {
                hit,
                alignment: codebook.gain(0, 0.0),
            };
            let delay = (hit.delay + sensing.hardware_delay) * fs;
            let len = (delay.ceil() as usize + frame.len() + sym).next_power_of_two();
            let mut padded = frame.clone();
            padded.resize(len, Complex64::new(0.0, 0.0));
            let mut stream = fractional_delay(&padded, delay, path.alignment * hit.gain);
            let var = synth.noise_variance(&[path]);
            if var > 0.0 {
                let mut rng = stream_rng(sensing.rng_seed, &[tag::FRAME_NOISE, k as u64]);
                let sigma = (var / 2.0).sqrt();
                for v in stream.iter_mut() {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *v += Complex64::new(re, im) * sigma;
                }
            }

            let t_sync = pss_coarse_sync(&stream, &pss, &protocol.sync, fs)?;
            let start = (t_sync * fs).round() as i64 - (cp + protocol.backoff) as i64;
            if start < 0 {
                return invalid(format!("synchronized frame start {start} lies before the stream"));
            }
            let start = start as usize;
            let mut rx = Array2::zeros((n, tx.n_symbols()));
            for q in 0..tx.n_symbols() {
                let s = start + (q + 1) * sym + cp;
                let col = modem.to_freq(&stream[s..s + n])?;
                rx.column_mut(q).assign(&ndarray::ArrayView1::from(&col));
            }
            let meas = BeamMeasurement {
                beam_index: 0,
                rx_grid: ResourceGrid { data: rx },
                truth_paths: vec![hit],
            };
            let h = estimate_channel(&meas, &tx, ofdm)?.averaged();
            let fine = bisect_peak(&h, 1, protocol.iterations, ofdm)?[0];
            Ok(CalibrationRecord {
                t1: start as f64 / fs,
                t2: fine.delay,
                t_ota: hit.delay,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let estimate = calibrate_hardware_delay(&records)?;
    Ok(CalibrationOutcome { records, estimate })
}

/// Filtered scans along `trajectory`, hardware delay removed with
/// `hardware_delay_estimate` (which also places the receive window).
#[allow(clippy::too_many_arguments)]
pub fn simulate_scans(
    scene: &Scene,
    trajectory: &[Pose2],
    ofdm: &OfdmConfig,
    array: &ArrayConfig,
    sensing: &SensingConfig,
    scan: &ScanOptions,
    hardware_delay_estimate: f64,
    threshold_db: f64,
) -> Result<Vec<Scan>> {
    let sensing = SensingConfig {
        window_offset: window_offset(hardware_delay_estimate, ofdm),
        ..*sensing
    };
    let sim = ScanSimulator::new(ofdm, array, &sensing, scan)?;
    trajectory
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let m = sim.measure_pose(scene, pose, i as u64)?;
            filter_scan(&m.scan(hardware_delay_estimate)?, threshold_db)
        })
        .collect()
}

/// Position RMSE after the best rigid alignment of `estimate` onto `truth`.
pub fn aligned_rmse(estimate: &[Pose2], truth: &[Pose2]) -> Result<f64> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return invalid(format!("{} estimated vs {} true poses", estimate.len(), truth.len()));
    }
    let pairs: Vec<([f64; 2], [f64; 2])> = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| ([e.x, e.y], [t.x, t.y]))
        .collect();
    let align = rigid_align(&pairs);
    Ok(rms(pairs.iter().map(|(e, t)| {
        let a = align.transform_point(*e);
        (a[0] - t[0]).hypot(a[1] - t[1])
    })))
}

/// RMS distance from map points to the nearest scene segment.
pub fn map_rms(points: &[WorldPoint], scene: &Scene) -> f64 {
    rms(points.iter().map(|p| scene.distance_to_nearest([p.x, p.y])))
}
