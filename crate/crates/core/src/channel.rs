//! Baseband impairments: CFO, delay, sampling drift, coupling loss, AWGN.
//!
//! SNR is defined against unit transmit power inside the waveform's occupied
//! bandwidth, before coupling loss. The complex noise variance per sample is
//! `(fs / B) / snr`, so after OFDM demodulation every resource element of a
//! unit-energy grid sees noise variance `10^(-(snr_db - loss_db) / 10)`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Waveform;

pub const INTERP_TAPS: usize = 16;
pub const INTERP_PHASES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub cfo_hz: f64,
    pub delay_samples: f64,
    /// Sampling clock error in ppm; the output is time-stretched by
    /// `1 + drift_ppm * 1e-6`.
    pub drift_ppm: f64,
    pub coupling_loss_db: f64,
    pub seed: u64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec {
            snr_db: f64::INFINITY,
            cfo_hz: 0.0,
            delay_samples: 0.0,
            drift_ppm: 0.0,
            coupling_loss_db: 0.0,
            seed: 0,
        }
    }
}

impl ChannelSpec {
    pub fn awgn(snr_db: f64, seed: u64) -> Self {
        ChannelSpec {
            snr_db,
            seed,
            ..Default::default()
        }
    }

    /// Oscillator error of `ppm` at `carrier_hz` plus a raster offset. The
    /// sampling clock shares the oscillator, so it drifts by the same ppm.
    pub fn from_oscillator(ppm: f64, carrier_hz: f64, raster_offset_hz: f64) -> Self {
        ChannelSpec {
            cfo_hz: ppm * 1e-6 * carrier_hz + raster_offset_hz,
            drift_ppm: ppm,
            ..Default::default()
        }
    }

    /// Transmit-referenced SNR from a link budget; the coupling loss is kept
    /// separately and applied by [`apply`].
    pub fn from_link_budget(
        tx_power_dbm: f64,
        noise_figure_db: f64,
        bandwidth_hz: f64,
        coupling_loss_db: f64,
    ) -> Self {
        let noise_dbm = -174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db;
        ChannelSpec {
            snr_db: tx_power_dbm - noise_dbm,
            coupling_loss_db,
            ..Default::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// SNR seen at the receiver after coupling loss.
    pub fn effective_snr_db(&self) -> f64 {
        self.snr_db - self.coupling_loss_db
    }
}

/// Noise variance per unit-energy resource element.
pub fn re_noise_variance(effective_snr_db: f64) -> f64 {
    10f64.powf(-effective_snr_db / 10.0)
}

/// Timing slip accumulated when the sampling clock is off by
/// `cfo_hz / carrier_hz`.
pub fn drift_from_cfo(cfo_hz: f64, carrier_hz: f64, duration_s: f64) -> f64 {
    cfo_hz / carrier_hz * duration_s
}

fn blackman(x: f64, half: f64) -> f64 {
    // x in [-half, half]
    let t = (x + half) / (2.0 * half);
    0.42 - 0.5 * (2.0 * PI * t).cos() + 0.08 * (4.0 * PI * t).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Polyphase windowed-sinc table: `table[p][j]` weights input sample
/// `floor(t) - 7 + j` for fractional part `p / INTERP_PHASES`.
fn interp_table() -> &'static Vec<[f64; INTERP_TAPS]> {
    static TABLE: OnceLock<Vec<[f64; INTERP_TAPS]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let half = INTERP_TAPS as f64 / 2.0;
        (0..=INTERP_PHASES)
            .map(|p| {
                let frac = p as f64 / INTERP_PHASES as f64;
                let mut h = [0.0; INTERP_TAPS];
                for (j, hj) in h.iter_mut().enumerate() {
                    let x = j as f64 - (half - 1.0) - frac;
                    *hj = sinc(x) * blackman(x, half);
                }
                let sum: f64 = h.iter().sum();
                h.iter_mut().for_each(|v| *v /= sum);
                h
            })
            .collect()
    })
}

/// Band-limited sample of `x` at fractional index `t` (zero outside).
pub fn interpolate(x: &[Complex64], t: f64) -> Complex64 {
    let i = t.floor();
    let frac = t - i;
    let p = (frac * INTERP_PHASES as f64).round() as usize;
    let h = &interp_table()[p];
    let base = i as i64 - (INTERP_TAPS as i64 / 2 - 1);
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, &w) in h.iter().enumerate() {
        let k = base + j as i64;
        if k >= 0 && (k as usize) < x.len() {
            acc += x[k as usize] * w;
        }
    }
    acc
}

pub fn rotate(samples: &mut [Complex64], cfo_hz: f64, sample_rate_hz: f64, start_index: u64) {
    if cfo_hz == 0.0 {
        return;
    }
    let step = cfo_hz / sample_rate_hz;
    for (n, s) in samples.iter_mut().enumerate() {
        let cycles = (step * (start_index + n as u64) as f64).fract();
        *s *= Complex64::from_polar(1.0, 2.0 * PI * cycles);
    }
}

/// `out[n] = in(n / (1 + eps) - delay)`, length grown to hold the whole
/// delayed, stretched input.
pub fn delay_and_drift(samples: &[Complex64], delay: f64, drift_ppm: f64) -> Vec<Complex64> {
    let eps = drift_ppm * 1e-6;
    let out_len = ((samples.len() as f64 + delay.max(0.0)) * (1.0 + eps)).ceil() as usize;
    if eps == 0.0 && delay.fract() == 0.0 {
        let d = delay as i64;
        return (0..out_len as i64)
            .map(|n| {
                let k = n - d;
                if k >= 0 && (k as usize) < samples.len() {
                    samples[k as usize]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
    }
    (0..out_len)
        .map(|n| interpolate(samples, n as f64 / (1.0 + eps) - delay))
        .collect()
}

/// Add complex white noise of total variance `variance` per sample.
pub fn add_noise(samples: &mut [Complex64], variance: f64, seed: u64) {
    if variance <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = (variance / 2.0).sqrt();
    for x in samples.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *x += Complex64::new(re * s, im * s);
    }
}

/// Per-sample noise variance for a waveform under `spec`.
pub fn noise_variance(wave: &Waveform, snr_db: f64) -> f64 {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return 0.0;
    }
    (wave.sample_rate_hz / wave.occupied_bandwidth_hz) * 10f64.powf(-snr_db / 10.0)
}

pub fn apply(wave: &Waveform, spec: &ChannelSpec) -> Waveform {
    let mut x = wave.samples.clone();
    rotate(&mut x, spec.cfo_hz, wave.sample_rate_hz, 0);
    let mut y = if spec.delay_samples == 0.0 && spec.drift_ppm == 0.0 {
        x
    } else {
        delay_and_drift(&x, spec.delay_samples, spec.drift_ppm)
    };
    if spec.coupling_loss_db != 0.0 {
        let g = 10f64.powf(-spec.coupling_loss_db / 20.0);
        y.iter_mut().for_each(|s| *s *= g);
    }
    add_noise(&mut y, noise_variance(wave, spec.snr_db), spec.seed);
    Waveform {
        samples: y,
        ..wave.clone()
    }
}
