//! Array steering, DFT codebook beams, and OFDM waveform primitives.
//!
//! FFT normalization is unitary in both directions: `ofdm_modulate` scales
//! the inverse transform by `1/√N_c` and `ofdm_demodulate` scales the forward
//! transform by `1/√N_c`, so average power per sample equals average power
//! per subcarrier.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;
use num_integer::Integer;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{stream_rng, tag};
use crate::SPEED_OF_LIGHT;

/// Uniform linear array and its DFT codebook size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_elements: usize,
    /// Element spacing over wavelength, `d/λ`.
    pub spacing_ratio: f64,
    /// `M`: the codebook holds `2^M` beams.
    pub codebook_bits: u32,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            n_elements: 8,
            spacing_ratio: 0.5,
            codebook_bits: 6,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_elements == 0 {
            return invalid("array needs at least one element");
        }
        if !(self.spacing_ratio > 0.0 && self.spacing_ratio <= 0.5) {
            return invalid(format!("spacing ratio {} outside (0, 0.5]", self.spacing_ratio));
        }
        if self.codebook_bits == 0 || self.codebook_bits > 16 {
            return invalid(format!("codebook bits {} outside 1..=16", self.codebook_bits));
        }
        Ok(())
    }

    pub fn codebook_size(&self) -> usize {
        1usize << self.codebook_bits
    }

    /// Normalized spatial angle `ϑ = (d/λ) sin θ` for a physical azimuth.
    pub fn spatial_angle(&self, azimuth: f64) -> f64 {
        self.spacing_ratio * azimuth.sin()
    }
}

/// `a(ϑ)`: element `m` is `exp(-j2π m ϑ)`.
pub fn steering_vector(spatial_angle: f64, n: usize) -> Result<Vec<Complex64>> {
    if n == 0 {
        return invalid("steering vector needs n >= 1");
    }
    Ok((0..n)
        .map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 * spatial_angle))
        .collect())
}

/// The `2^M` beamforming vectors `w_i = a(i/2^M)/√N`.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub vectors: Vec<Vec<Complex64>>,
    pub spatial_angles: Vec<f64>,
    array: ArrayConfig,
}

pub fn dft_codebook(cfg: &ArrayConfig) -> Result<Codebook> {
    cfg.validate()?;
    let size = cfg.codebook_size();
    let norm = 1.0 / (cfg.n_elements as f64).sqrt();
    let spatial_angles: Vec<f64> = (0..size).map(|i| i as f64 / size as f64).collect();
    let vectors = spatial_angles
        .iter()
        .map(|&v| steering_vector(v, cfg.n_elements).map(|a| a.into_iter().map(|e| e * norm).collect()))
        .collect::<Result<_>>()?;
    Ok(Codebook {
        vectors,
        spatial_angles,
        array: *cfg,
    })
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn array(&self) -> &ArrayConfig {
        &self.array
    }

    /// Two-way alignment factor `ϖ = (wᴴa)(aᴴw)` of beam `i` toward a target
    /// at physical azimuth `azimuth` (radians from the array normal).
    pub fn gain(&self, i: usize, azimuth: f64) -> Complex64 {
        let w = &self.vectors[i];
        let v = self.array.spatial_angle(azimuth);
        let inner: Complex64 = w
            .iter()
            .enumerate()
            .map(|(m, wm)| wm.conj() * Complex64::from_polar(1.0, -2.0 * PI * m as f64 * v))
            .sum();
        inner * inner.conj()
    }

    pub fn physical_angle(&self, i: usize) -> Option<f64> {
        let folded = fold_spatial_angle(self.spatial_angles[i]);
        (folded.abs() <= self.array.spacing_ratio).then(|| (folded / self.array.spacing_ratio).clamp(-1.0, 1.0).asin())
    }
}

fn fold_spatial_angle(v: f64) -> f64 {
    v - (v + 0.5).floor()
}

/// Physical azimuth of beam `i` relative to the array normal, or `None` when
/// its spatial angle lies outside the visible region.
pub fn beam_physical_angle(i: usize, cfg: &ArrayConfig) -> Result<Option<f64>> {
    cfg.validate()?;
    let size = cfg.codebook_size();
    if i >= size {
        return invalid(format!("beam index {i} out of range 0..{size}"));
    }
    let folded = fold_spatial_angle(i as f64 / size as f64);
    Ok((folded.abs() <= cfg.spacing_ratio).then(|| (folded / cfg.spacing_ratio).clamp(-1.0, 1.0).asin()))
}

pub fn beam_gain(i: usize, azimuth: f64, cfg: &ArrayConfig) -> Result<Complex64> {
    cfg.validate()?;
    if i >= cfg.codebook_size() {
        return invalid(format!("beam index {i} out of range"));
    }
    Ok(dft_codebook(cfg)?.gain(i, azimuth))
}

/// Codebook indices of the beams within `half_width` steps of the array
/// normal, ordered from most negative to most positive azimuth.
pub fn selected_beams(cfg: &ArrayConfig, half_width: usize) -> Result<Vec<usize>> {
    cfg.validate()?;
    let size = cfg.codebook_size() as i64;
    let hw = half_width as i64;
    if 2 * hw + 1 > size {
        return invalid(format!("{} beams requested from a {size}-entry codebook", 2 * hw + 1));
    }
    Ok((-hw..=hw).map(|k| k.rem_euclid(size) as usize).collect())
}

/// OFDM numerology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    pub n_subcarriers: usize,
    pub active_subcarriers: usize,
    /// Hz.
    pub subcarrier_spacing: f64,
    pub cp_samples: usize,
    /// Hz; must equal `n_subcarriers * subcarrier_spacing`.
    pub sample_rate: f64,
    pub symbols_per_beam: usize,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self::analysis()
    }
}

impl OfdmConfig {
    /// All 1024 subcarriers active.
    pub fn analysis() -> Self {
        Self {
            n_subcarriers: 1024,
            active_subcarriers: 1024,
            subcarrier_spacing: 120e3,
            cp_samples: 72,
            sample_rate: 122.88e6,
            symbols_per_beam: 12,
        }
    }

    /// Hardware numerology: 792 centered subcarriers with DC nulled.
    pub fn prototype() -> Self {
        Self {
            active_subcarriers: 792,
            ..Self::analysis()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers < 2 {
            return invalid("need at least two subcarriers");
        }
        if self.active_subcarriers == 0 || self.active_subcarriers > self.n_subcarriers {
            return invalid(format!(
                "active subcarriers {} outside 1..={}",
                self.active_subcarriers, self.n_subcarriers
            ));
        }
        if self.active_subcarriers < self.n_subcarriers && self.active_subcarriers % 2 != 0 {
            return invalid("a partially loaded grid needs an even active count");
        }
        if !(self.subcarrier_spacing > 0.0) {
            return invalid("subcarrier spacing must be positive");
        }
        let expected = self.n_subcarriers as f64 * self.subcarrier_spacing;
        if (self.sample_rate - expected).abs() > 1e-9 * expected {
            return invalid(format!(
                "sample rate {} != n_subcarriers * spacing = {expected}",
                self.sample_rate
            ));
        }
        if self.cp_samples >= self.n_subcarriers {
            return invalid("cyclic prefix must be shorter than the symbol");
        }
        if self.symbols_per_beam == 0 {
            return invalid("symbols_per_beam must be >= 1");
        }
        Ok(())
    }

    /// Signed frequency index of FFT bin `k` (`k - N` for the upper half).
    pub fn signed_index(&self, k: usize) -> i64 {
        let n = self.n_subcarriers;
        if k < n / 2 {
            k as i64
        } else {
            k as i64 - n as i64
        }
    }

    pub fn is_active(&self, k: usize) -> bool {
        if self.active_subcarriers == self.n_subcarriers {
            return k < self.n_subcarriers;
        }
        let p = self.signed_index(k);
        let half = (self.active_subcarriers / 2) as i64;
        p != 0 && p.abs() <= half
    }

    pub fn active_bins(&self) -> Vec<usize> {
        (0..self.n_subcarriers).filter(|&k| self.is_active(k)).collect()
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Delay spanned by one bin of an `N_c`-point profile, `1/(N_c Δf)`.
    pub fn delay_resolution(&self) -> f64 {
        1.0 / (self.n_subcarriers as f64 * self.subcarrier_spacing)
    }

    /// `c / (2 N_c Δf)`.
    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT * self.delay_resolution() / 2.0
    }

    /// Useful symbol duration `1/Δf`.
    pub fn symbol_duration(&self) -> f64 {
        1.0 / self.subcarrier_spacing
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.n_subcarriers + self.cp_samples
    }
}

/// Frequency-domain samples: `n_subcarriers` rows by one column per symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    pub data: Array2<Complex64>,
}

impl ResourceGrid {
    pub fn zeros(n_subcarriers: usize, n_symbols: usize) -> Self {
        Self {
            data: Array2::zeros((n_subcarriers, n_symbols)),
        }
    }

    pub fn n_subcarriers(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_symbols(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, q: usize) -> ArrayView1<'_, Complex64> {
        self.data.column(q)
    }

    pub fn column_vec(&self, q: usize) -> Vec<Complex64> {
        self.data.column(q).to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadMode {
    /// One random column repeated for every symbol.
    Identical,
    /// Independent random columns.
    Different,
}

/// Gray-mapped 16-QAM with unit average power (3GPP bit ordering b0..b3).
pub fn qam16(bits: u8) -> Complex64 {
    let b = |k: u8| f64::from((bits >> (3 - k)) & 1);
    let re = (1.0 - 2.0 * b(0)) * (2.0 - (1.0 - 2.0 * b(2)));
    let im = (1.0 - 2.0 * b(1)) * (2.0 - (1.0 - 2.0 * b(3)));
    Complex64::new(re, im) / 10f64.sqrt()
}

pub fn generate_payload(seed: u64, cfg: &OfdmConfig, mode: PayloadMode) -> Result<ResourceGrid> {
    generate_payload_stream(seed, &[], cfg, mode)
}

/// Payload drawn from the stream keyed by `seed` and `tags`.
pub fn generate_payload_stream(seed: u64, tags: &[u64], cfg: &OfdmConfig, mode: PayloadMode) -> Result<ResourceGrid> {
    cfg.validate()?;
    let mut key = vec![tag::PAYLOAD];
    key.extend_from_slice(tags);
    let mut rng = stream_rng(seed, &key);
    let bins = cfg.active_bins();
    let r = cfg.symbols_per_beam;
    let mut grid = ResourceGrid::zeros(cfg.n_subcarriers, r);
    let fresh = match mode {
        PayloadMode::Identical => 1,
        PayloadMode::Different => r,
    };
    for q in 0..fresh {
        for &k in &bins {
            grid.data[[k, q]] = qam16(rng.random_range(0..16u8));
        }
    }
    if mode == PayloadMode::Identical {
        let first = grid.data.column(0).to_owned();
        for q in 1..r {
            grid.data.column_mut(q).assign(&first);
        }
    }
    Ok(grid)
}

/// Zadoff-Chu sequence `z[n] = exp(-jπ u n(n+1)/L)`.
pub fn zc_sequence(root: u64, length: u64) -> Result<Vec<Complex64>> {
    if length < 2 {
        return invalid("ZC length must be >= 2");
    }
    if root == 0 || root >= length {
        return invalid(format!("ZC root {root} outside 1..{length}"));
    }
    if root.gcd(&length) != 1 {
        return invalid(format!("ZC root {root} not coprime with length {length}"));
    }
    Ok((0..length)
        .map(|n| {
            // reduce n(n+1)u modulo 2L before scaling to keep the phase exact
            let k = ((n * (n + 1)) % (2 * length)) * root % (2 * length);
            Complex64::from_polar(1.0, -PI * k as f64 / length as f64)
        })
        .collect())
}

/// Cached unitary FFT pair for one OFDM numerology.
#[derive(Clone)]
pub struct OfdmModem {
    cfg: OfdmConfig,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for OfdmModem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OfdmModem").field("cfg", &self.cfg).finish()
    }
}

impl OfdmModem {
    pub fn new(cfg: &OfdmConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg: *cfg,
            forward: planner.plan_fft_forward(cfg.n_subcarriers),
            inverse: planner.plan_fft_inverse(cfg.n_subcarriers),
            scale: 1.0 / (cfg.n_subcarriers as f64).sqrt(),
        })
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.cfg
    }

    /// Unitary IFFT of one frequency column, no cyclic prefix.
    pub fn to_time(&self, column: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(column.len(), self.cfg.n_subcarriers)?;
        let mut buf = column.to_vec();
        self.inverse.process(&mut buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
        Ok(buf)
    }

    /// Unitary FFT of one CP-free time block.
    pub fn to_freq(&self, block: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(block.len(), self.cfg.n_subcarriers)?;
        let mut buf = block.to_vec();
        self.forward.process(&mut buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
        Ok(buf)
    }

    pub fn modulate(&self, column: &[Complex64]) -> Result<Vec<Complex64>> {
        let body = self.to_time(column)?;
        let n = self.cfg.n_subcarriers;
        let cp = self.cfg.cp_samples;
        let mut out = Vec::with_capacity(n + cp);
        out.extend_from_slice(&body[n - cp..]);
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn demodulate(&self, samples: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(samples.len(), self.cfg.samples_per_symbol())?;
        self.to_freq(&samples[self.cfg.cp_samples..])
    }

    fn check_len(&self, got: usize, want: usize) -> Result<()> {
        if got != want {
            return invalid(format!("expected {want} samples, got {got}"));
        }
        Ok(())
    }
}

pub fn ofdm_modulate(column: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    OfdmModem::new(cfg)?.modulate(column)
}

pub fn ofdm_demodulate(samples: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    OfdmModem::new(cfg)?.demodulate(samples)
}

/// Time-domain PSS: the sequence mapped onto the centered subcarriers
/// `-(L-1)/2 ..= (L-1)/2` of one `N_c`-point symbol (no cyclic prefix).
pub fn pss_waveform(zc: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    let modem = OfdmModem::new(cfg)?;
    let n = cfg.n_subcarriers as i64;
    let len = zc.len() as i64;
    if len == 0 || len > n {
        return invalid("PSS sequence does not fit the grid");
    }
    let start = -(len - 1) / 2;
    let mut column = vec![Complex64::new(0.0, 0.0); cfg.n_subcarriers];
    for (i, z) in zc.iter().enumerate() {
        let p = start + i as i64;
        column[p.rem_euclid(n) as usize] = *z;
    }
    modem.to_time(&column)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn steering_vector_trivial_cases() {
        let v = steering_vector(0.0, 8).unwrap();
        assert!(v.iter().all(|e| (*e - c(1.0, 0.0)).norm() < 1e-15));

        let v = steering_vector(0.25, 4).unwrap();
        let want = [c(1.0, 0.0), c(0.0, -1.0), c(-1.0, 0.0), c(0.0, 1.0)];
        for (a, b) in v.iter().zip(want) {
            assert!((*a - b).norm() < 1e-12);
        }
        assert!(steering_vector(0.3, 0).is_err());
    }

    #[test]
    fn steering_vector_element_seven() {
        // cos/sin of -2π·7/64 evaluated independently
        let v = steering_vector(1.0 / 64.0, 8).unwrap();
        let angle = -2.0 * PI * 7.0 / 64.0;
        assert!((v[7].re - angle.cos()).abs() < 1e-14);
        assert!((v[7].im - angle.sin()).abs() < 1e-14);
        assert!((v[7].re - 0.773_010_453_362_737).abs() < 1e-12);
        assert!((v[7].im + 0.634_393_284_163_645_5).abs() < 1e-12);
        assert_eq!(v[0], c(1.0, 0.0));
        assert!(v.iter().all(|e| (e.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn codebook_shapes_and_orthogonality() {
        let cb = dft_codebook(&ArrayConfig::default()).unwrap();
        assert_eq!(cb.len(), 64);
        let s = 1.0 / 8f64.sqrt();
        assert!(cb.vectors[0].iter().all(|e| (*e - c(s, 0.0)).norm() < 1e-15));

        let cb = dft_codebook(&ArrayConfig {
            n_elements: 2,
            spacing_ratio: 0.5,
            codebook_bits: 1,
        })
        .unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((cb.vectors[1][1] - c(-s, 0.0)).norm() < 1e-15);

        // N = 8, M = 3 is a full DFT: Gram matrix is the identity
        let cb = dft_codebook(&ArrayConfig {
            n_elements: 8,
            spacing_ratio: 0.5,
            codebook_bits: 3,
        })
        .unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let g: Complex64 = cb.vectors[i]
                    .iter()
                    .zip(&cb.vectors[j])
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - c(want, 0.0)).norm() < 1e-12, "gram[{i}][{j}] = {g}");
            }
        }
    }

    #[test]
    fn physical_angles() {
        let cfg = ArrayConfig::default();
        assert_eq!(beam_physical_angle(0, &cfg).unwrap(), Some(0.0));
        let a = beam_physical_angle(23, &cfg).unwrap().unwrap();
        assert!((a.to_degrees() - 45.95).abs() < 0.01, "{}", a.to_degrees());
        let a = beam_physical_angle(41, &cfg).unwrap().unwrap();
        assert!((a.to_degrees() + 45.95).abs() < 0.01);
        let edge = beam_physical_angle(32, &cfg).unwrap().unwrap();
        assert!((edge + PI / 2.0).abs() < 1e-12);
        assert!(beam_physical_angle(64, &cfg).is_err());

        let narrow = ArrayConfig {
            spacing_ratio: 0.25,
            ..cfg
        };
        assert_eq!(beam_physical_angle(20, &narrow).unwrap(), None);
    }

    #[test]
    fn selected_beams_cover_plus_minus_23() {
        let cfg = ArrayConfig::default();
        let beams = selected_beams(&cfg, 23).unwrap();
        assert_eq!(beams.len(), 47);
        assert_eq!(beams[0], 41);
        assert_eq!(beams[23], 0);
        assert_eq!(beams[46], 23);
        let angles: Vec<f64> = beams
            .iter()
            .map(|&i| beam_physical_angle(i, &cfg).unwrap().unwrap())
            .collect();
        assert!(angles.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn beam_gain_peak_adjacent_and_null() {
        let cfg = ArrayConfig::default();
        let on = beam_gain(3, beam_physical_angle(3, &cfg).unwrap().unwrap(), &cfg).unwrap();
        assert!((on - c(8.0, 0.0)).norm() < 1e-12);

        // target one codebook step away: direct inner product oracle
        let theta = (2.0 * 4.0 / 64.0f64).asin();
        let w = steering_vector(3.0 / 64.0, 8).unwrap();
        let a = steering_vector(4.0 / 64.0, 8).unwrap();
        let ip: Complex64 = w.iter().zip(&a).map(|(x, y)| x.conj() * y).sum();
        let oracle = ip.norm_sqr() / 8.0;
        let g = beam_gain(3, theta, &cfg).unwrap();
        assert!((g.re - oracle).abs() < 1e-12 && g.im.abs() < 1e-12);
        assert!(g.re > 0.0 && g.re < 8.0);

        // 1/8 offset in spatial angle is a DFT null for N = 8
        let theta = (2.0 * (3.0 / 64.0 + 0.125f64)).asin();
        assert!(beam_gain(3, theta, &cfg).unwrap().norm() < 1e-9);
    }

    #[test]
    fn payload_determinism_and_modes() {
        let cfg = OfdmConfig::analysis();
        let a = generate_payload(11, &cfg, PayloadMode::Different).unwrap();
        let b = generate_payload(11, &cfg, PayloadMode::Different).unwrap();
        assert_eq!(a, b);
        for q in 1..12 {
            assert_ne!(a.column(0), a.column(q));
        }
        let id = generate_payload(11, &cfg, PayloadMode::Identical).unwrap();
        for q in 1..12 {
            assert_eq!(id.column(0), id.column(q));
        }

        let proto = OfdmConfig::prototype();
        let g = generate_payload(2, &proto, PayloadMode::Different).unwrap();
        assert_eq!(g.data[[0, 0]], c(0.0, 0.0));
        assert_eq!(g.data[[400, 3]], c(0.0, 0.0));
        assert_ne!(g.data[[396, 3]], c(0.0, 0.0));
        assert_eq!(proto.active_bins().len(), 792);
    }

    #[test]
    fn qam_constellation_power() {
        let exact: f64 = (0..16u8).map(|b| qam16(b).norm_sqr()).sum::<f64>() / 16.0;
        assert!((exact - 1.0).abs() < 1e-12);
        // Gray mapping: horizontal neighbours differ by one bit
        for b in 0..16u8 {
            for d in 0..16u8 {
                let dist = (qam16(b) - qam16(d)).norm() * 10f64.sqrt();
                if (dist - 2.0).abs() < 1e-9 {
                    assert_eq!((b ^ d).count_ones(), 1);
                }
            }
        }
        let g = generate_payload(5, &OfdmConfig::analysis(), PayloadMode::Different).unwrap();
        let p = g.data.iter().map(|v| v.norm_sqr()).sum::<f64>() / g.data.len() as f64;
        assert!((p - 1.0).abs() < 0.01, "power {p}");
    }

    #[test]
    fn zc_properties() {
        let z = zc_sequence(25, 127).unwrap();
        assert!(z.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let corr = |lag: usize| -> Complex64 { (0..127).map(|n| z[(n + lag) % 127] * z[n].conj()).sum() };
        assert!((corr(0) - c(127.0, 0.0)).norm() < 1e-9);
        for lag in 1..127 {
            assert!(corr(lag).norm() < 1e-9, "lag {lag}: {}", corr(lag).norm());
        }
        assert!(zc_sequence(2, 4).is_err());
        assert!(zc_sequence(0, 127).is_err());
    }

    #[test]
    fn modulation_trivial_cases() {
        let cfg = OfdmConfig::analysis();
        let zero = vec![c(0.0, 0.0); 1024];
        let t = ofdm_modulate(&zero, &cfg).unwrap();
        assert_eq!(t.len(), 1096);
        assert!(t.iter().all(|v| v.norm() == 0.0));
        assert!(ofdm_demodulate(&t, &cfg).unwrap().iter().all(|v| v.norm() == 0.0));

        let mut dc = zero.clone();
        dc[0] = c(1.0, 0.0);
        let t = ofdm_modulate(&dc, &cfg).unwrap();
        let amp = 1.0 / 32.0;
        assert!(t.iter().all(|v| (*v - c(amp, 0.0)).norm() < 1e-15));
        let back = ofdm_demodulate(&t, &cfg).unwrap();
        assert!((back[0] - c(1.0, 0.0)).norm() < 1e-12);

        assert!(ofdm_modulate(&zero[..10], &cfg).is_err());
        assert!(ofdm_demodulate(&zero, &cfg).is_err());
    }

    #[test]
    fn cyclic_prefix_is_tail_copy() {
        let cfg = OfdmConfig::analysis();
        let g = generate_payload(1, &cfg, PayloadMode::Different).unwrap();
        let t = ofdm_modulate(&g.column_vec(0), &cfg).unwrap();
        assert_eq!(&t[..72], &t[1024..]);
    }

    #[test]
    fn pss_waveform_is_bandlimited() {
        let cfg = OfdmConfig::analysis();
        let zc = zc_sequence(25, 127).unwrap();
        let w = pss_waveform(&zc, &cfg).unwrap();
        let modem = OfdmModem::new(&cfg).unwrap();
        let f = modem.to_freq(&w).unwrap();
        for k in 0..1024 {
            let p = cfg.signed_index(k);
            if p.abs() > 63 {
                assert!(f[k].norm() < 1e-12);
            } else {
                assert!((f[k].norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = OfdmConfig::analysis();
        cfg.sample_rate = 100e6;
        assert!(cfg.validate().is_err());
        let mut cfg = OfdmConfig::analysis();
        cfg.active_subcarriers = 2000;
        assert!(cfg.validate().is_err());
        assert!(ArrayConfig {
            spacing_ratio: 0.7,
            ..ArrayConfig::default()
        }
        .validate()
        .is_err());
        assert!((OfdmConfig::analysis().range_resolution() - 1.220_703_125).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn codebook_vectors_have_unit_norm(n in 1usize..16, m in 1u32..8) {
            let cb = dft_codebook(&ArrayConfig { n_elements: n, spacing_ratio: 0.5, codebook_bits: m }).unwrap();
            for v in &cb.vectors {
                let e: f64 = v.iter().map(|x| x.norm_sqr()).sum();
                prop_assert!((e - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn beam_gain_ignores_global_phase(i in 0usize..64, theta in -1.5f64..1.5, phi in -3.0f64..3.0) {
            let cb = dft_codebook(&ArrayConfig::default()).unwrap();
            let g = cb.gain(i, theta);
            let rot = Complex64::from_polar(1.0, phi);
            let w: Vec<Complex64> = cb.vectors[i].iter().map(|x| x * rot).collect();
            let a = steering_vector(0.5 * theta.sin(), 8).unwrap();
            let ip: Complex64 = w.iter().zip(&a).map(|(x, y)| x.conj() * y).sum();
            prop_assert!((ip * ip.conj() - g).norm() < 1e-10);
            prop_assert!(g.re >= -1e-12 && g.im.abs() < 1e-10);
        }

        #[test]
        fn modulation_round_trip(seed in 0u64..1000) {
            let cfg = OfdmConfig::analysis();
            let g = generate_payload(seed, &cfg, PayloadMode::Different).unwrap();
            let modem = OfdmModem::new(&cfg).unwrap();
            let x = g.column_vec(seed as usize % 12);
            let back = modem.demodulate(&modem.modulate(&x).unwrap()).unwrap();
            let err: f64 = x.iter().zip(&back).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let norm: f64 = x.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            prop_assert!(err / norm < 1e-12);
        }
    }
}
