//! Delay estimation from channel estimates.
//!
//! The delay-domain transform used throughout is
//!
//! ```text
//! D(τ) = (1/N_c) Σ_p ĥ_p exp(+j2π p Δf τ)
//! ```
//!
//! with `p` the signed subcarrier index. Sampling `D` on the grid
//! `τ = m / (n·Δf)` gives the (zero-padded) `n`-point IFFT.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::waveform::OfdmConfig;
use crate::SPEED_OF_LIGHT;

/// Returned by [`peak_sidelobe_level`] when nothing lies outside the mainlobe
/// or every sidelobe is exactly zero.
pub const PSL_FLOOR_DB: f64 = -300.0;

pub const DEFAULT_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileKind {
    /// Magnitude `|D(τ)|`.
    Pdp,
    /// Power `|r̃|²` of a matched-filter output.
    Mf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayProfile {
    pub values: Vec<f64>,
    pub bin_resolution: f64,
    pub kind: ProfileKind,
}

impl DelayProfile {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest value; ties go to the earliest bin.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if best.is_none_or(|b| v > self.values[b]) {
                best = Some(i);
            }
        }
        best
    }

    /// Converts a value to dB, respecting whether it is a magnitude or a power.
    pub fn to_db(&self, v: f64) -> f64 {
        match self.kind {
            ProfileKind::Pdp => 20.0 * v.log10(),
            ProfileKind::Mf => 10.0 * v.log10(),
        }
    }

    /// `delay_s,magnitude` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "delay_s,magnitude")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{:.9e},{:.9e}", i as f64 * self.bin_resolution, v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    pub delay: f64,
    pub magnitude: f64,
    pub refined: bool,
}

impl PeakEstimate {
    pub fn range(&self) -> f64 {
        delay_to_range(self.delay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub t1: f64,
    pub t2: f64,
    pub t_ota: f64,
}

pub fn delay_to_range(delay: f64) -> f64 {
    SPEED_OF_LIGHT * delay / 2.0
}

pub fn range_to_delay(range: f64) -> f64 {
    2.0 * range / SPEED_OF_LIGHT
}

fn check_channel(h: &[Complex64], cfg: &OfdmConfig) -> Result<()> {
    if h.len() != cfg.n_subcarriers {
        return invalid(format!("channel has {} bins, expected {}", h.len(), cfg.n_subcarriers));
    }
    Ok(())
}

/// `n_ifft`-point delay profile of `ĥ`; negative frequencies are kept at the
/// top of the zero-padded buffer.
pub fn pdp(h: &[Complex64], n_ifft: usize, cfg: &OfdmConfig) -> Result<DelayProfile> {
    check_channel(h, cfg)?;
    let n = cfg.n_subcarriers;
    if n_ifft < n {
        return invalid(format!("n_ifft {n_ifft} is smaller than {n}"));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n_ifft];
    for (k, &v) in h.iter().enumerate() {
        let p = cfg.signed_index(k);
        let idx = if p >= 0 {
            p as usize
        } else {
            (n_ifft as i64 + p) as usize
        };
        buf[idx] = v;
    }
    FftPlanner::new().plan_fft_inverse(n_ifft).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(DelayProfile {
        values: buf.iter().map(|v| v.norm() * scale).collect(),
        bin_resolution: 1.0 / (n_ifft as f64 * cfg.subcarrier_spacing),
        kind: ProfileKind::Pdp,
    })
}

/// Continuous-delay evaluation of the delay transform.
pub fn dtft_at(h: &[Complex64], tau: f64, cfg: &OfdmConfig) -> Result<Complex64> {
    check_channel(h, cfg)?;
    if !tau.is_finite() {
        return invalid("delay must be finite");
    }
    Ok(dtft_unchecked(h, tau, cfg))
}

fn dtft_unchecked(h: &[Complex64], tau: f64, cfg: &OfdmConfig) -> Complex64 {
    let n = cfg.n_subcarriers;
    // reduce Δf·τ mod 1 so large delays keep their phase precision
    let w = 2.0 * PI * (cfg.subcarrier_spacing * tau).rem_euclid(1.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, &v) in h.iter().enumerate() {
        if v.re == 0.0 && v.im == 0.0 {
            continue;
        }
        let p = cfg.signed_index(k) as f64;
        acc += v * Complex64::from_polar(1.0, w * p);
    }
    acc / n as f64
}

/// Strict local maxima (circular neighbours), strongest first, ties to the
/// earlier bin.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    if n < 3 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n)
        .filter(|&i| {
            let v = values[i];
            v > values[(i + n - 1) % n] && v > values[(i + 1) % n]
        })
        .collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Grid peaks of the `N_c`-point profile without refinement.
pub fn coarse_peaks(h: &[Complex64], k_peaks: usize, cfg: &OfdmConfig) -> Result<Vec<PeakEstimate>> {
    if k_peaks == 0 {
        return invalid("k_peaks must be >= 1");
    }
    let prof = pdp(h, cfg.n_subcarriers, cfg)?;
    let peaks = local_maxima(&prof.values);
    if peaks.is_empty() {
        return Err(Error::NoPeak);
    }
    Ok(peaks
        .into_iter()
        .take(k_peaks)
        .map(|m| PeakEstimate {
            delay: m as f64 * prof.bin_resolution,
            magnitude: prof.values[m],
            refined: false,
        })
        .collect())
}

/// Refines the `k_peaks` strongest grid peaks by bisection on the
/// continuous-delay transform.
///
/// Each step evaluates the midpoint between the current peak and its
/// neighbour. A larger midpoint becomes the new peak and the old peak its
/// neighbour; otherwise the midpoint replaces the neighbour. The bracket
/// halves every iteration.
pub fn bisect_peak(h: &[Complex64], k_peaks: usize, iterations: usize, cfg: &OfdmConfig) -> Result<Vec<PeakEstimate>> {
    if iterations == 0 {
        return invalid("iterations must be >= 1");
    }
    if k_peaks == 0 {
        return invalid("k_peaks must be >= 1");
    }
    let n = cfg.n_subcarriers;
    let prof = pdp(h, n, cfg)?;
    let peaks = local_maxima(&prof.values);
    if peaks.is_empty() {
        return Err(Error::NoPeak);
    }
    let ts = cfg.sample_period();
    let mag = |s: f64| dtft_unchecked(h, s * ts, cfg).norm();
    let out = peaks
        .into_iter()
        .take(k_peaks)
        .map(|m| {
            let left = prof.values[(m + n - 1) % n];
            let right = prof.values[(m + 1) % n];
            let mut p = m as f64;
            let mut a = if left >= right { p - 1.0 } else { p + 1.0 };
            let mut mp = prof.values[m];
            for _ in 0..iterations {
                let mid = 0.5 * (p + a);
                let mm = mag(mid);
                if mm > mp {
                    a = p;
                    p = mid;
                    mp = mm;
                } else {
                    a = mid;
                }
            }
            PeakEstimate {
                delay: p.rem_euclid(n as f64) * ts,
                magnitude: mp,
                refined: true,
            }
        })
        .collect();
    Ok(out)
}

/// Circular cross-correlation `r[i] = Σ_n conj(x[n]) y[(n+i) mod N]` via FFT.
pub fn circular_xcorr(x: &[Complex64], y: &[Complex64]) -> Result<Vec<Complex64>> {
    if x.len() != y.len() || x.is_empty() {
        return invalid(format!("xcorr lengths {} and {}", x.len(), y.len()));
    }
    let n = x.len();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut xf = x.to_vec();
    let mut yf = y.to_vec();
    fwd.process(&mut xf);
    fwd.process(&mut yf);
    let mut r: Vec<Complex64> = xf.iter().zip(&yf).map(|(a, b)| a.conj() * b).collect();
    inv.process(&mut r);
    let scale = 1.0 / n as f64;
    r.iter_mut().for_each(|v| *v *= scale);
    Ok(r)
}

/// Matched-filter range profile over `R` CP-stripped symbols. With
/// `coherent` the complex correlations are summed before squaring;
/// otherwise their powers are summed.
pub fn matched_filter_profile(
    rx_symbols: &[Vec<Complex64>],
    tx_symbols: &[Vec<Complex64>],
    coherent: bool,
    sample_rate: f64,
) -> Result<DelayProfile> {
    if rx_symbols.len() != tx_symbols.len() || rx_symbols.is_empty() {
        return invalid(format!(
            "{} rx symbols vs {} tx symbols",
            rx_symbols.len(),
            tx_symbols.len()
        ));
    }
    if !(sample_rate > 0.0) {
        return invalid("sample rate must be positive");
    }
    let n = rx_symbols[0].len();
    let mut sum = vec![Complex64::new(0.0, 0.0); n];
    let mut power = vec![0.0; n];
    for (y, x) in rx_symbols.iter().zip(tx_symbols) {
        if y.len() != n || x.len() != n {
            return invalid("symbol lengths differ");
        }
        let r = circular_xcorr(x, y)?;
        for i in 0..n {
            sum[i] += r[i];
            power[i] += r[i].norm_sqr();
        }
    }
    let values = if coherent {
        sum.iter().map(|v| v.norm_sqr()).collect()
    } else {
        power
    };
    Ok(DelayProfile {
        values,
        bin_resolution: 1.0 / sample_rate,
        kind: ProfileKind::Mf,
    })
}

/// Largest value outside `±mainlobe_halfwidth` bins (circular) of the global
/// peak, relative to the peak, in dB.
pub fn peak_sidelobe_level(profile: &DelayProfile, mainlobe_halfwidth: usize) -> Result<f64> {
    let g = profile.argmax().ok_or(Error::NoPeak)?;
    let peak = profile.values[g];
    if !(peak > 0.0) {
        return Err(Error::NoPeak);
    }
    let n = profile.len();
    let side = profile
        .values
        .iter()
        .enumerate()
        .filter(|&(i, _)| {
            let d = i.abs_diff(g);
            d.min(n - d) > mainlobe_halfwidth
        })
        .map(|(_, &v)| v)
        .fold(0.0, f64::max);
    if side <= 0.0 {
        return Ok(PSL_FLOOR_DB);
    }
    Ok(profile.to_db(side / peak).max(PSL_FLOOR_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncOptions {
    pub decimation: usize,
    /// Detection needs the correlation peak above this multiple of the
    /// median correlation magnitude.
    pub threshold_factor: f64,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self {
            decimation: 4,
            threshold_factor: 6.0,
        }
    }
}

/// Coarse timing from the decimated cross-correlation of `stream` with the
/// time-domain PSS reference. Returns `T1` in seconds.
pub fn pss_coarse_sync(stream: &[Complex64], pss: &[Complex64], opts: &SyncOptions, sample_rate: f64) -> Result<f64> {
    let d = opts.decimation;
    if d == 0 {
        return invalid("decimation must be >= 1");
    }
    let s: Vec<Complex64> = stream.iter().step_by(d).copied().collect();
    let p: Vec<Complex64> = pss.iter().step_by(d).copied().collect();
    if p.is_empty() || s.len() < p.len() {
        return invalid(format!(
            "stream of {} samples is shorter than the reference",
            stream.len()
        ));
    }
    let corr: Vec<f64> = (0..=s.len() - p.len())
        .map(|l| {
            p.iter()
                .zip(&s[l..])
                .map(|(a, b)| a.conj() * b)
                .sum::<Complex64>()
                .norm()
        })
        .collect();
    let mut best = 0;
    for (i, &c) in corr.iter().enumerate() {
        if c > corr[best] {
            best = i;
        }
    }
    let mut sorted = corr.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let median = sorted[sorted.len() / 2];
    let threshold = opts.threshold_factor * median;
    if !(corr[best] > threshold) {
        return Err(Error::SyncFailure {
            peak: corr[best],
            threshold,
        });
    }
    Ok((best * d) as f64 / sample_rate)
}

/// Mean of `t1 + t2 - t_ota` over the records.
pub fn calibrate_hardware_delay(records: &[CalibrationRecord]) -> Result<f64> {
    if records.is_empty() {
        return invalid("no calibration records");
    }
    let sum: f64 = records.iter().map(|r| r.t1 + r.t2 - r.t_ota).sum();
    Ok(sum / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::waveform::{pss_waveform, zc_sequence};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Noise-free single path: ĥ_p = a·exp(-j2π p τ/N_c) on active bins, τ in samples.
    fn single_path(cfg: &OfdmConfig, tau_samples: f64, amp: f64) -> Vec<Complex64> {
        let n = cfg.n_subcarriers as f64;
        (0..cfg.n_subcarriers)
            .map(|k| {
                if cfg.is_active(k) {
                    let p = cfg.signed_index(k) as f64;
                    Complex64::from_polar(amp, -2.0 * PI * p * tau_samples / n)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect()
    }

    fn dense_argmax(h: &[Complex64], cfg: &OfdmConfig, lo: f64, hi: f64, n: usize) -> f64 {
        let ts = cfg.sample_period();
        let mut best = (lo, -1.0);
        for i in 0..=n {
            let s = lo + (hi - lo) * i as f64 / n as f64;
            let m = dtft_at(h, s * ts, cfg).unwrap().norm();
            if m > best.1 {
                best = (s, m);
            }
        }
        best.0
    }

    #[test]
    fn range_resolution_constant() {
        let cfg = OfdmConfig::analysis();
        let bin = 1.0 / (cfg.n_subcarriers as f64 * cfg.subcarrier_spacing);
        assert!((delay_to_range(bin) - 1.220703125).abs() < 1e-12);
        let tau = range_to_delay(6.1035);
        assert!((tau - 40.69e-9).abs() < 1e-12);
        assert!((tau / bin - 5.0).abs() < 1e-4);
    }

    #[test]
    fn pdp_on_grid_is_a_delta() {
        let cfg = OfdmConfig::analysis();
        let h = single_path(&cfg, 5.0, 8.0);
        let prof = pdp(&h, 1024, &cfg).unwrap();
        assert_eq!(prof.argmax(), Some(5));
        assert!((prof.values[5] - 8.0).abs() < 1e-12);
        for (i, v) in prof.values.iter().enumerate() {
            if i != 5 {
                assert!(*v < 1e-12, "bin {i}: {v}");
            }
        }
        assert!(pdp(&vec![Complex64::new(0.0, 0.0); 1024], 1024, &cfg)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn pdp_half_sample_matches_dirichlet_kernel() {
        // |D(m)| = |sin(π(m-τ)) / (N sin(π(m-τ)/N))| for a full band
        let cfg = OfdmConfig::analysis();
        let h = single_path(&cfg, 5.5, 1.0);
        let prof = pdp(&h, 1024, &cfg).unwrap();
        let n = 1024.0;
        for m in [3usize, 4, 5, 6, 7, 20, 700] {
            let x = PI * (m as f64 - 5.5);
            let want = (x.sin() / (n * (x / n).sin())).abs();
            assert!((prof.values[m] - want).abs() < 1e-12, "bin {m}");
        }
        assert!((prof.values[5] - prof.values[6]).abs() < 1e-12);
    }

    #[test]
    fn dtft_matches_zero_padded_bins() {
        let cfg = OfdmConfig::prototype();
        let h = single_path(&cfg, 7.3, 2.0);
        for n_ifft in [1024usize, 4096] {
            let prof = pdp(&h, n_ifft, &cfg).unwrap();
            for m in [0usize, 29, 30, 500, n_ifft - 1] {
                let v = dtft_at(&h, m as f64 * prof.bin_resolution, &cfg).unwrap().norm();
                assert!((v - prof.values[m]).abs() < 1e-10);
            }
        }
        assert_eq!(
            dtft_at(&vec![Complex64::new(0.0, 0.0); 1024], 1e-8, &cfg)
                .unwrap()
                .norm(),
            0.0
        );
    }

    #[test]
    fn dtft_peaks_at_true_delay() {
        let cfg = OfdmConfig::prototype();
        let h = single_path(&cfg, 5.3, 1.0);
        let s = dense_argmax(&h, &cfg, 4.0, 7.0, 30000);
        assert!((s - 5.3).abs() <= 1e-4);
    }

    #[test]
    fn bisection_on_grid_stays_put() {
        let cfg = OfdmConfig::prototype();
        let h = single_path(&cfg, 5.0, 8.0);
        let est = bisect_peak(&h, 1, 20, &cfg).unwrap();
        let s = est[0].delay / cfg.sample_period();
        assert!((s - 5.0).abs() < 1e-6);
        assert!(est[0].refined);
    }

    #[test]
    fn bisection_off_grid_converges() {
        let cfg = OfdmConfig::prototype();
        let h = single_path(&cfg, 5.3, 8.0);
        let est = bisect_peak(&h, 1, 20, &cfg).unwrap();
        let s = est[0].delay / cfg.sample_period();
        assert!((s - 5.3).abs() < 2f64.powi(-20), "{s}");
        let coarse = coarse_peaks(&h, 1, &cfg).unwrap()[0];
        assert!(!coarse.refined);
        assert!((coarse.delay / cfg.sample_period() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn bisection_handles_wraparound() {
        let cfg = OfdmConfig::analysis();
        let h = single_path(&cfg, 1023.7, 1.0);
        let est = bisect_peak(&h, 1, 24, &cfg).unwrap();
        let s = est[0].delay / cfg.sample_period();
        assert!((s - 1023.7).abs() < 1e-6, "{s}");
        let h = single_path(&cfg, 0.2, 1.0);
        let s = bisect_peak(&h, 1, 24, &cfg).unwrap()[0].delay / cfg.sample_period();
        assert!((s - 0.2).abs() < 1e-6, "{s}");
    }

    #[test]
    fn bisection_two_targets() {
        let cfg = OfdmConfig::analysis();
        let a = single_path(&cfg, 65.54, 8.0);
        let b = single_path(&cfg, 90.27, 2.4);
        let h: Vec<_> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let est = bisect_peak(&h, 2, 20, &cfg).unwrap();
        let s: Vec<f64> = est.iter().map(|e| e.delay / cfg.sample_period()).collect();
        let o0 = dense_argmax(&h, &cfg, 64.5, 66.5, 20000);
        let o1 = dense_argmax(&h, &cfg, 89.5, 91.5, 20000);
        assert!((s[0] - o0).abs() < 2e-4, "{s:?} {o0}");
        assert!((s[1] - o1).abs() < 2e-4, "{s:?} {o1}");
        assert!(est[0].magnitude > est[1].magnitude);
    }

    #[test]
    fn bisection_errors() {
        let cfg = OfdmConfig::analysis();
        let zero = vec![Complex64::new(0.0, 0.0); 1024];
        assert!(matches!(bisect_peak(&zero, 1, 20, &cfg), Err(Error::NoPeak)));
        let h = single_path(&cfg, 3.0, 1.0);
        assert!(bisect_peak(&h, 1, 0, &cfg).is_err());
        assert!(bisect_peak(&h, 0, 5, &cfg).is_err());
        assert!(bisect_peak(&h[..100], 1, 5, &cfg).is_err());
    }

    fn random_vec(seed: u64, n: usize) -> Vec<Complex64> {
        let mut rng = stream_rng(seed, &[77]);
        (0..n)
            .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect()
    }

    fn direct_xcorr(x: &[Complex64], y: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|i| (0..n).map(|k| x[k].conj() * y[(k + i) % n]).sum())
            .collect()
    }

    #[test]
    fn mf_trivial_cases() {
        let x = random_vec(1, 256);
        let prof = matched_filter_profile(&[x.clone()], &[x.clone()], true, 1.0).unwrap();
        let e: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        assert_eq!(prof.argmax(), Some(0));
        assert!((prof.values[0] / (e * e) - 1.0).abs() < 1e-12);

        let y: Vec<_> = (0..256).map(|n| x[(n + 256 - 5) % 256]).collect();
        let prof = matched_filter_profile(&[y], &[x.clone()], true, 1.0).unwrap();
        assert_eq!(prof.argmax(), Some(5));

        assert!(matched_filter_profile(&[x.clone()], &[], true, 1.0).is_err());
        assert!(matched_filter_profile(&[x.clone()], &[x[..10].to_vec()], true, 1.0).is_err());
    }

    #[test]
    fn mf_identical_data_scales_by_r() {
        let x = random_vec(2, 128);
        let y = random_vec(3, 128);
        let one = matched_filter_profile(&[y.clone()], &[x.clone()], true, 1.0).unwrap();
        let many = matched_filter_profile(&vec![y; 12], &vec![x; 12], true, 1.0).unwrap();
        for (a, b) in one.values.iter().zip(&many.values) {
            assert!((b - 144.0 * a).abs() <= 1e-9 * b.max(1.0));
        }
        let psl1 = peak_sidelobe_level(&one, 1).unwrap();
        let psl12 = peak_sidelobe_level(&many, 1).unwrap();
        assert!((psl1 - psl12).abs() < 1e-9);
    }

    #[test]
    fn zc_matched_filter_has_no_sidelobes() {
        let zc = zc_sequence(25, 127).unwrap();
        let prof = matched_filter_profile(&[zc.clone()], &[zc], true, 1.0).unwrap();
        assert!(peak_sidelobe_level(&prof, 0).unwrap() < -100.0);
    }

    #[test]
    fn psl_cases() {
        let delta = DelayProfile {
            values: vec![0.0, 0.0, 3.0, 0.0],
            bin_resolution: 1.0,
            kind: ProfileKind::Pdp,
        };
        assert_eq!(peak_sidelobe_level(&delta, 0).unwrap(), PSL_FLOOR_DB);
        let p = DelayProfile {
            values: vec![1.0, 0.1, 0.02, 0.01],
            bin_resolution: 1.0,
            kind: ProfileKind::Pdp,
        };
        assert!((peak_sidelobe_level(&p, 0).unwrap() + 20.0).abs() < 1e-12);
        // the last bin neighbours the peak circularly
        assert!((peak_sidelobe_level(&p, 1).unwrap() + 20.0 * 50f64.log10()).abs() < 1e-12);
        let mf = DelayProfile {
            kind: ProfileKind::Mf,
            ..p
        };
        assert!((peak_sidelobe_level(&mf, 0).unwrap() + 10.0).abs() < 1e-12);
        let zero = DelayProfile {
            values: vec![0.0; 4],
            bin_resolution: 1.0,
            kind: ProfileKind::Mf,
        };
        assert!(peak_sidelobe_level(&zero, 0).is_err());
    }

    fn sync_stream(offset: usize, len: usize) -> (Vec<Complex64>, Vec<Complex64>) {
        let cfg = OfdmConfig::analysis();
        let pss = pss_waveform(&zc_sequence(25, 127).unwrap(), &cfg).unwrap();
        let mut s = vec![Complex64::new(0.0, 0.0); len];
        s[offset..offset + pss.len()].copy_from_slice(&pss);
        (s, pss)
    }

    #[test]
    fn sync_on_decimation_grid() {
        let fs = 122.88e6;
        let (s, pss) = sync_stream(400, 3000);
        let t1 = pss_coarse_sync(&s, &pss, &SyncOptions::default(), fs).unwrap();
        assert_eq!(t1, 400.0 / fs);
        let (s, pss) = sync_stream(402, 3000);
        let t1 = pss_coarse_sync(&s, &pss, &SyncOptions::default(), fs).unwrap();
        assert!(t1 == 400.0 / fs || t1 == 404.0 / fs, "{}", t1 * fs);
    }

    #[test]
    fn sync_rejects_noise() {
        let (_, pss) = sync_stream(0, 1024);
        for seed in 0..5 {
            let noise = random_vec(100 + seed, 4000);
            let r = pss_coarse_sync(&noise, &pss, &SyncOptions::default(), 122.88e6);
            assert!(matches!(r, Err(Error::SyncFailure { .. })), "seed {seed}");
        }
        assert!(pss_coarse_sync(&pss[..100], &pss, &SyncOptions::default(), 1.0).is_err());
    }

    #[test]
    fn calibration_mean() {
        let rec = CalibrationRecord {
            t1: 40e-6,
            t2: 0.5e-6,
            t_ota: 8.5e-6,
        };
        assert!((calibrate_hardware_delay(&[rec]).unwrap() - 32e-6).abs() < 1e-15);
        let zero = CalibrationRecord {
            t1: 1e-6,
            t2: 2e-6,
            t_ota: 3e-6,
        };
        assert!(calibrate_hardware_delay(&[zero, zero]).unwrap().abs() < 1e-18);
        assert!(calibrate_hardware_delay(&[]).is_err());
    }

    #[test]
    fn profile_csv() {
        let p = DelayProfile {
            values: vec![1.0, 0.5],
            bin_resolution: 1e-9,
            kind: ProfileKind::Pdp,
        };
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "delay_s,magnitude");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1.000000000e-9,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fft_xcorr_matches_direct(seed in any::<u64>(), n in 1usize..=256) {
            let x = random_vec(seed, n);
            let y = random_vec(seed ^ 0xabcdef, n);
            let fast = circular_xcorr(&x, &y).unwrap();
            let slow = direct_xcorr(&x, &y);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).norm() < 1e-9);
            }
        }

        #[test]
        fn bisection_never_degrades(tau in 2.0f64..1000.0, amp in 0.1f64..10.0) {
            let cfg = OfdmConfig::prototype();
            let h = single_path(&cfg, tau, amp);
            let ts = cfg.sample_period();
            let coarse = coarse_peaks(&h, 1, &cfg).unwrap()[0].delay / ts;
            let fine = bisect_peak(&h, 1, 20, &cfg).unwrap()[0].delay / ts;
            prop_assert!((fine - tau).abs() <= (coarse - tau).abs() + 2f64.powi(-20));
        }

        #[test]
        fn calibration_shift_and_permutation(
            t in proptest::collection::vec((0.0f64..1e-4, 0.0f64..1e-8, 0.0f64..1e-7), 1..20),
            shift in 0.0f64..1e-5,
        ) {
            let recs: Vec<_> = t.iter().map(|&(t1, t2, t_ota)| CalibrationRecord { t1, t2, t_ota }).collect();
            let base = calibrate_hardware_delay(&recs).unwrap();
            let mut rev = recs.clone();
            rev.reverse();
            prop_assert!((calibrate_hardware_delay(&rev).unwrap() - base).abs() < 1e-18);
            let shifted: Vec<_> = recs.iter().map(|r| CalibrationRecord { t1: r.t1 + shift, ..*r }).collect();
            prop_assert!((calibrate_hardware_delay(&shifted).unwrap() - base - shift).abs() < 1e-15);
        }
    }

    #[test]
    fn noisy_profile_values_are_nonnegative() {
        let cfg = OfdmConfig::analysis();
        let mut rng = stream_rng(5, &[1]);
        let h: Vec<Complex64> = (0..1024).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        assert!(pdp(&h, 2048, &cfg).unwrap().values.iter().all(|&v| v >= 0.0));
    }
}
