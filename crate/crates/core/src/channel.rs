//! Frequency-domain echo synthesis per beam and least-squares channel
//! estimation.
//!
//! For beam `i`, subcarrier `p` (signed frequency index) and symbol `q`:
//!
//! ```text
//! y[p,q] = Σ_k ϖ_ik b_k exp(-j2π p Δf (τ_k + T_H - T_W)) x[p,q] + z[p,q]
//! ```
//!
//! where `T_W` is the receiver's FFT window offset. Noise is circularly
//! symmetric Gaussian on every bin.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, tag};
use crate::scene::PathHit;
use crate::waveform::{ArrayConfig, OfdmConfig, ResourceGrid};

/// What received power the SNR is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnrReference {
    /// A unit-gain path on the beam's boresight (`|ϖ b|² = N²`).
    #[default]
    UnitPath,
    /// The strongest path present in the measurement.
    StrongestPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingConfig {
    /// Per-subcarrier SNR in dB; `+inf` disables noise.
    pub snr_db: f64,
    #[serde(default)]
    pub snr_reference: SnrReference,
    /// Injected hardware delay `T_H`, seconds.
    pub hardware_delay: f64,
    /// Start of the receiver FFT window relative to transmission, seconds.
    #[serde(default)]
    pub window_offset: f64,
    pub rng_seed: u64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            snr_db: f64::INFINITY,
            snr_reference: SnrReference::UnitPath,
            hardware_delay: 0.0,
            window_offset: 0.0,
            rng_seed: 0,
        }
    }
}

impl SensingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hardware_delay >= 0.0) || !self.hardware_delay.is_finite() {
            return invalid(format!("hardware delay {} must be >= 0", self.hardware_delay));
        }
        if !self.window_offset.is_finite() {
            return invalid("window offset must be finite");
        }
        if self.snr_db.is_nan() {
            return invalid("snr_db is NaN");
        }
        Ok(())
    }

    pub fn noiseless(&self) -> bool {
        self.snr_db == f64::INFINITY
    }
}

/// A propagation path as seen by one beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPath {
    pub hit: PathHit,
    /// Alignment factor `ϖ_ik` of the beam toward this path.
    pub alignment: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamMeasurement {
    pub beam_index: usize,
    pub rx_grid: ResourceGrid,
    /// Ground truth, carried for evaluation only.
    pub truth_paths: Vec<PathHit>,
}

/// Synthesizes beam measurements for fixed OFDM, array and sensing settings.
#[derive(Debug, Clone)]
pub struct BeamSynthesizer {
    ofdm: OfdmConfig,
    sensing: SensingConfig,
    n_elements: usize,
    freqs: Vec<f64>,
}

impl BeamSynthesizer {
    pub fn new(ofdm: &OfdmConfig, array: &ArrayConfig, sensing: &SensingConfig) -> Result<Self> {
        ofdm.validate()?;
        array.validate()?;
        sensing.validate()?;
        let freqs = (0..ofdm.n_subcarriers)
            .map(|k| ofdm.signed_index(k) as f64 * ofdm.subcarrier_spacing)
            .collect();
        Ok(Self {
            ofdm: *ofdm,
            sensing: *sensing,
            n_elements: array.n_elements,
            freqs,
        })
    }

    pub fn ofdm(&self) -> &OfdmConfig {
        &self.ofdm
    }

    pub fn sensing(&self) -> &SensingConfig {
        &self.sensing
    }

    /// Delay of a path inside the receiver window, checked against the
    /// unambiguous span.
    pub fn window_delay(&self, path_delay: f64) -> Result<f64> {
        let d = path_delay + self.sensing.hardware_delay - self.sensing.window_offset;
        let samples = d * self.ofdm.sample_rate;
        let span = self.ofdm.n_subcarriers - self.ofdm.cp_samples;
        if !(samples >= 0.0) || samples >= span as f64 {
            return Err(Error::AliasedDelay {
                delay_samples: samples,
                span_samples: span,
            });
        }
        Ok(d)
    }

    /// Unit-amplitude response of a single path on the active bins.
    pub fn path_response(&self, path_delay: f64) -> Result<Vec<Complex64>> {
        let tau = self.window_delay(path_delay)?;
        Ok((0..self.ofdm.n_subcarriers)
            .map(|k| {
                if self.ofdm.is_active(k) {
                    Complex64::from_polar(1.0, -2.0 * PI * self.freqs[k] * tau)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect())
    }

    /// Noise-free channel `H[p] = Σ_k ϖ_k b_k exp(-j2π p Δf τ_k')` over all
    /// bins; inactive bins are zero.
    pub fn channel_response(&self, paths: &[WeightedPath]) -> Result<Vec<Complex64>> {
        let mut h = vec![Complex64::new(0.0, 0.0); self.ofdm.n_subcarriers];
        for path in paths {
            let ramp = self.path_response(path.hit.delay)?;
            let amp = path.alignment * path.hit.gain;
            if amp.norm_sqr() == 0.0 {
                continue;
            }
            for (hk, r) in h.iter_mut().zip(&ramp) {
                *hk += amp * r;
            }
        }
        Ok(h)
    }

    /// Per-bin noise variance, or 0 when noise is disabled.
    pub fn noise_variance(&self, paths: &[WeightedPath]) -> f64 {
        if self.sensing.noiseless() {
            return 0.0;
        }
        let unit = (self.n_elements * self.n_elements) as f64;
        let reference = match self.sensing.snr_reference {
            SnrReference::UnitPath => unit,
            SnrReference::StrongestPath => {
                let strongest = paths
                    .iter()
                    .map(|p| (p.alignment * p.hit.gain).norm_sqr())
                    .fold(0.0, f64::max);
                if strongest > 0.0 {
                    strongest
                } else {
                    unit
                }
            }
        };
        reference / 10f64.powf(self.sensing.snr_db / 10.0)
    }

    /// `stream` distinguishes independent noise realizations (pose,
    /// orientation, trial, ...); the beam index is appended to it.
    pub fn synthesize(
        &self,
        beam_index: usize,
        stream: &[u64],
        paths: &[WeightedPath],
        tx: &ResourceGrid,
    ) -> Result<BeamMeasurement> {
        let h = self.channel_response(paths)?;
        let var = self.noise_variance(paths);
        let truth = paths.iter().map(|p| p.hit).collect();
        self.measure(beam_index, stream, &h, var, truth, tx)
    }

    /// Applies a precomputed channel `h` to `tx` and adds noise of variance
    /// `noise_var` drawn from the `(stream, beam_index)` stream.
    pub fn measure(
        &self,
        beam_index: usize,
        stream: &[u64],
        h: &[Complex64],
        noise_var: f64,
        truth_paths: Vec<PathHit>,
        tx: &ResourceGrid,
    ) -> Result<BeamMeasurement> {
        if tx.n_subcarriers() != self.ofdm.n_subcarriers || h.len() != self.ofdm.n_subcarriers {
            return invalid(format!(
                "tx grid has {} subcarriers and channel {} bins, expected {}",
                tx.n_subcarriers(),
                h.len(),
                self.ofdm.n_subcarriers
            ));
        }
        let n_sym = tx.n_symbols();
        let mut rx = Array2::from_shape_fn((self.ofdm.n_subcarriers, n_sym), |(k, q)| h[k] * tx.data[[k, q]]);
        if noise_var > 0.0 {
            let mut key = vec![tag::NOISE];
            key.extend_from_slice(stream);
            key.push(beam_index as u64);
            let mut rng = stream_rng(self.sensing.rng_seed, &key);
            let sigma = (noise_var / 2.0).sqrt();
            // column-major draw order keeps a symbol's noise contiguous in the stream
            for q in 0..n_sym {
                for k in 0..self.ofdm.n_subcarriers {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    rx[[k, q]] += Complex64::new(re, im) * sigma;
                }
            }
        }
        Ok(BeamMeasurement {
            beam_index,
            rx_grid: ResourceGrid { data: rx },
            truth_paths,
        })
    }
}

#[allow(clippy::too_many_arguments)]
pub fn synthesize_beam(
    beam_index: usize,
    paths: &[WeightedPath],
    tx: &ResourceGrid,
    ofdm: &OfdmConfig,
    array: &ArrayConfig,
    sensing: &SensingConfig,
) -> Result<BeamMeasurement> {
    BeamSynthesizer::new(ofdm, array, sensing)?.synthesize(beam_index, &[], paths, tx)
}

/// Least-squares channel estimate `ĥ[p,q] = y[p,q] / x[p,q]` on active bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub per_symbol: ResourceGrid,
}

impl ChannelEstimate {
    /// Mean over the symbol axis.
    pub fn averaged(&self) -> Vec<Complex64> {
        let r = self.per_symbol.n_symbols() as f64;
        self.per_symbol
            .data
            .rows()
            .into_iter()
            .map(|row| row.sum() / r)
            .collect()
    }

    pub fn symbol(&self, q: usize) -> Vec<Complex64> {
        self.per_symbol.column_vec(q)
    }
}

pub fn estimate_channel(meas: &BeamMeasurement, tx: &ResourceGrid, ofdm: &OfdmConfig) -> Result<ChannelEstimate> {
    let rx = &meas.rx_grid;
    if rx.data.dim() != tx.data.dim() || rx.n_subcarriers() != ofdm.n_subcarriers {
        return invalid(format!(
            "rx grid {:?} and tx grid {:?} do not match",
            rx.data.dim(),
            tx.data.dim()
        ));
    }
    let mut est = ResourceGrid::zeros(rx.n_subcarriers(), rx.n_symbols());
    for k in ofdm.active_bins() {
        for q in 0..rx.n_symbols() {
            let x = tx.data[[k, q]];
            if x.norm_sqr() == 0.0 {
                return Err(Error::ZeroPilot {
                    subcarrier: k,
                    symbol: q,
                });
            }
            est.data[[k, q]] = rx.data[[k, q]] / x;
        }
    }
    Ok(ChannelEstimate { per_symbol: est })
}
