use std::fmt::Write as _;
use std::io::Write;

use anyhow::{bail, Result};
use log::info;
use serde::Serialize;

use radioslam::channel::SensingConfig;
use radioslam::experiments::{
    aligned_rmse, map_rms, mf_study, range_table, run_calibration, simulate_scans, two_target, window_offset,
    write_calibration_csv, write_mf_csv,
};
use radioslam::pointcloud::{filter_scan, write_points_csv};
use radioslam::sensing::ScanSimulator;
use radioslam::slam::{run_slam, write_trajectory_csv, SlamOptions};

use crate::config::ScenarioConfig;
use crate::output::Artifacts;

/// Flags that override the scenario file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub snr_db: Option<f64>,
    pub no_pgo: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        }
        if let Some(snr) = self.snr_db {
            cfg.sensing.snr_db = snr;
            cfg.mf_study.snr_db = vec![snr];
        }
        if self.no_pgo {
            cfg.slam.use_pgo = false;
        }
    }
}

fn finish(out: &Artifacts, summary: String) -> Result<()> {
    print!("{summary}");
    out.write_text("summary.txt", &summary)
}

pub fn cmd_range_table(cfg: &ScenarioConfig, out: &Artifacts) -> Result<()> {
    let sensing = cfg.sensing(cfg.sensing.calibration_reference);
    let table = range_table(
        &cfg.range_table.ranges,
        &cfg.ofdm,
        &cfg.array,
        &sensing,
        cfg.sensing.hardware_delay,
        cfg.ranging.iterations,
    )?;
    out.write("range_table.csv", |w| Ok(table.write_csv(w)?))?;
    let mut s = format!(
        "single-plate ranging, SNR {} dB, seed {}\n",
        cfg.sensing.snr_db,
        cfg.seed()
    );
    writeln!(s, "{:>8} {:>12} {:>12}", "range_m", "eps_grid_m", "eps_bisect_m")?;
    for r in &table.rows {
        writeln!(s, "{:>8.2} {:>12.4} {:>12.4}", r.range, r.eps_grid, r.eps_refined)?;
    }
    writeln!(
        s,
        "RMSE grid {:.4} m, bisection {:.4} m",
        table.rmse_grid(),
        table.rmse_refined()
    )?;
    finish(out, s)
}

#[derive(Serialize)]
struct TwoTargetReport {
    beam_index: usize,
    weak_bin: usize,
    mf_margin_db: f64,
    pdp_margin_db: f64,
}

pub fn cmd_mf_study(cfg: &ScenarioConfig, out: &Artifacts) -> Result<()> {
    let rows = mf_study(&cfg.ofdm, &cfg.array, cfg.seed(), &cfg.mf_study)?;
    out.write("mf_psl.csv", |w| Ok(write_mf_csv(&rows, w)?))?;
    let sensing = SensingConfig {
        window_offset: window_offset(cfg.sensing.hardware_delay, &cfg.ofdm),
        ..cfg.sensing(cfg.sensing.snr_reference)
    };
    let tt = two_target(&cfg.ofdm, &cfg.array, &sensing, &cfg.two_target)?;
    out.write("two_target.csv", |w| {
        writeln!(w, "bin,delay_s,mf_power,pdp_power")?;
        for (k, (m, p)) in tt.mf.values.iter().zip(&tt.pdp.values).enumerate() {
            writeln!(w, "{k},{:.9e},{m:.9e},{:.9e}", k as f64 * tt.mf.bin_resolution, p * p)?;
        }
        Ok(())
    })?;
    out.write_json(
        "two_target.json",
        &TwoTargetReport {
            beam_index: tt.beam_index,
            weak_bin: tt.weak_bin,
            mf_margin_db: tt.mf_margin_db,
            pdp_margin_db: tt.pdp_margin_db,
        },
    )?;

    let mut s = format!(
        "matched-filter PSL, {} trials, seed {}\n",
        cfg.mf_study.trials,
        cfg.seed()
    );
    writeln!(
        s,
        "{:>8} {:>10} {:>12} {:>12}",
        "snr_db", "single", "identical", "different"
    )?;
    for r in &rows {
        writeln!(
            s,
            "{:>8} {:>10.2} {:>12.2} {:>12.2}",
            r.snr_db, r.psl_single, r.psl_identical, r.psl_different
        )?;
    }
    writeln!(
        s,
        "weak target margin: integrated MF {:.2} dB, single-symbol PDP {:.2} dB",
        tt.mf_margin_db, tt.pdp_margin_db
    )?;
    finish(out, s)
}

fn calibrate(cfg: &ScenarioConfig) -> Result<radioslam::experiments::CalibrationOutcome> {
    let sensing = cfg.sensing(cfg.sensing.calibration_reference);
    Ok(run_calibration(
        &cfg.ofdm,
        &cfg.array,
        &sensing,
        &cfg.calibration_protocol(),
    )?)
}

pub fn cmd_calibrate(cfg: &ScenarioConfig, out: &Artifacts) -> Result<()> {
    let cal = calibrate(cfg)?;
    out.write("calibration.csv", |w| Ok(write_calibration_csv(&cal.records, w)?))?;
    let err = cal.estimate - cfg.sensing.hardware_delay;
    let mut s = format!(
        "hardware delay calibration over {} targets, seed {}\n",
        cal.records.len(),
        cfg.seed()
    );
    writeln!(s, "estimate  {:.6} us", cal.estimate * 1e6)?;
    writeln!(s, "injected  {:.6} us", cfg.sensing.hardware_delay * 1e6)?;
    writeln!(
        s,
        "error     {:.3} ns ({:.3} samples)",
        err * 1e9,
        err * cfg.ofdm.sample_rate
    )?;
    finish(out, s)
}

/// Scan and heatmap of the first trajectory pose.
pub fn cmd_scan(cfg: &ScenarioConfig, out: &Artifacts) -> Result<()> {
    let pose = cfg.trajectory()?[0];
    let scene = cfg.scene()?;
    let estimate = calibrate(cfg)?.estimate;
    let sensing = SensingConfig {
        window_offset: window_offset(estimate, &cfg.ofdm),
        ..cfg.sensing(cfg.sensing.snr_reference)
    };
    let sim = ScanSimulator::new(&cfg.ofdm, &cfg.array, &sensing, &cfg.scan_options())?;
    let m = sim.measure_pose(&scene, &pose, 0)?;
    let raw = m.scan(estimate)?;
    let kept = filter_scan(&raw, cfg.ranging.threshold_db)?;
    let heatmap = m.heatmap(estimate)?;
    out.write("scan_raw.csv", |w| Ok(raw.write_csv(w)?))?;
    out.write("scan.csv", |w| Ok(kept.write_csv(w)?))?;
    out.write("heatmap.csv", |w| Ok(heatmap.write_csv(w)?))?;
    out.write("heatmap.json", |w| Ok(heatmap.write_meta(w)?))?;
    let mut s = format!(
        "scan at ({:.3}, {:.3}, {:.2} deg), seed {}\n",
        pose.x,
        pose.y,
        pose.heading.to_degrees(),
        cfg.seed()
    );
    writeln!(s, "hardware delay estimate {:.6} us", estimate * 1e6)?;
    writeln!(
        s,
        "{} beam peaks, {} kept above {} dB",
        raw.len(),
        kept.len(),
        cfg.ranging.threshold_db
    )?;
    finish(out, s)
}

#[derive(Debug, Serialize)]
pub struct RunMetrics {
    pub pgo: bool,
    pub trajectory_rmse_m: f64,
    pub map_rms_m: f64,
    pub map_points: usize,
    pub loop_edges: usize,
    pub dropped_scans: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct SlamMetrics {
    pub seed: u64,
    pub poses: usize,
    pub hardware_delay_estimate_s: f64,
    pub runs: Vec<RunMetrics>,
}

/// Calibrates, scans every trajectory pose and runs SLAM. Without
/// `--no-pgo` both the optimized and the odometry-only runs are scored and
/// the optimized run's artifacts are written; the odometry-only trajectory
/// and map get a `_nopgo` suffix.
pub fn cmd_slam(cfg: &ScenarioConfig, out: &Artifacts) -> Result<()> {
    let truth = cfg.trajectory()?;
    if truth.len() == 1 {
        info!("single-pose trajectory: writing the scan only");
        return cmd_scan(cfg, out);
    }
    let scene = cfg.scene()?;
    let estimate = calibrate(cfg)?.estimate;
    info!("hardware delay estimate {:.6} us", estimate * 1e6);
    let scans = simulate_scans(
        &scene,
        &truth,
        &cfg.ofdm,
        &cfg.array,
        &cfg.sensing(cfg.sensing.snr_reference),
        &cfg.scan_options(),
        estimate,
        cfg.ranging.threshold_db,
    )?;
    if scans.iter().all(|s| s.is_empty()) {
        bail!("no scan retained any point");
    }
    let modes: &[bool] = if cfg.slam.use_pgo { &[true, false] } else { &[false] };
    let mut runs = Vec::new();
    for &pgo in modes {
        let opts = SlamOptions {
            use_pgo: pgo,
            initial_pose: truth[0],
            ..cfg.slam.clone()
        };
        let r = run_slam(&scans, &opts)?;
        let suffix = if pgo || !cfg.slam.use_pgo { "" } else { "_nopgo" };
        out.write(&format!("trajectory{suffix}.csv"), |w| Ok(r.write_trajectory(w)?))?;
        out.write(&format!("map{suffix}.csv"), |w| Ok(write_points_csv(&r.map, w)?))?;
        if suffix.is_empty() {
            out.write("graph.txt", |w| Ok(r.graph.write_dump(w)?))?;
        }
        runs.push(RunMetrics {
            pgo,
            trajectory_rmse_m: aligned_rmse(&r.trajectory, &truth)?,
            map_rms_m: map_rms(&r.map, &scene),
            map_points: r.map.len(),
            loop_edges: r.loop_edges,
            dropped_scans: r.dropped,
        });
    }
    out.write("truth.csv", |w| Ok(write_trajectory_csv(&truth, w)?))?;
    let metrics = SlamMetrics {
        seed: cfg.seed(),
        poses: truth.len(),
        hardware_delay_estimate_s: estimate,
        runs,
    };
    out.write_json("metrics.json", &metrics)?;

    let mut s = format!("SLAM over {} poses, seed {}\n", truth.len(), cfg.seed());
    for r in &metrics.runs {
        writeln!(
            s,
            "{:<8} trajectory RMSE {:.3} m, map RMS {:.3} m, {} loop edges, {} dropped",
            if r.pgo { "PGO" } else { "no PGO" },
            r.trajectory_rmse_m,
            r.map_rms_m,
            r.loop_edges,
            r.dropped_scans.len()
        )?;
    }
    finish(out, s)
}
