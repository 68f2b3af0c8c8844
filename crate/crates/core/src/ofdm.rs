//! 15 kHz OFDM modulation of one-PRB subframes at 1.92 Msps.
//!
//! Subcarrier `k` (0..12) of the NB-IoT PRB maps to transform bin `k - 6`,
//! so the carrier sits half a subcarrier below baseband DC. Time-domain
//! samples are scaled by `1/sqrt(12)`, giving unit average power for a fully
//! loaded grid of unit-energy resource elements and unit per-element gain
//! through [`modulate_subframe`] followed by [`demodulate_subframe`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::numerology::{
    cp_len, symbol_body_offset, FFT_SIZE, SUBCARRIERS, SUBFRAME_SAMPLES, SYMBOLS_PER_SLOT,
    SYMBOLS_PER_SUBFRAME,
};

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        p.borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// Unnormalized in-place forward DFT.
pub fn fft(buf: &mut [Complex64]) {
    plan(buf.len(), false).process(buf);
}

/// Unnormalized in-place inverse DFT.
pub fn ifft(buf: &mut [Complex64]) {
    plan(buf.len(), true).process(buf);
}

/// Transform bin carrying PRB subcarrier `k` for a transform of size `n`
/// with `tones` tones centered on DC.
pub fn tone_bin(k: usize, tones: usize, n: usize) -> usize {
    (k + n - tones / 2) % n
}

/// Frequency in Hz of PRB subcarrier `k` for the 15 kHz grid.
pub fn subcarrier_freq_hz(k: usize) -> f64 {
    (k as f64 - (SUBCARRIERS / 2) as f64) * 15_000.0
}

pub const GRID_SCALE: f64 = 0.288_675_134_594_812_9; // 1/sqrt(12)

/// Modulate a 12 x 14 grid stored symbol-major (`symbol * 12 + subcarrier`).
pub fn modulate_subframe(res: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(res.len(), SUBCARRIERS * SYMBOLS_PER_SUBFRAME);
    let mut out = Vec::with_capacity(SUBFRAME_SAMPLES);
    let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
    for l in 0..SYMBOLS_PER_SUBFRAME {
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for k in 0..SUBCARRIERS {
            buf[tone_bin(k, SUBCARRIERS, FFT_SIZE)] = res[l * SUBCARRIERS + k] * GRID_SCALE;
        }
        ifft(&mut buf);
        let cp = cp_len(l % SYMBOLS_PER_SLOT);
        out.extend_from_slice(&buf[FFT_SIZE - cp..]);
        out.extend_from_slice(&buf);
    }
    debug_assert_eq!(out.len(), SUBFRAME_SAMPLES);
    out
}

/// Demodulate one subframe starting at `samples[0]`.
///
/// `frac_delay` is a fractional sample delay of the subframe start that is
/// removed in the frequency domain.
pub fn demodulate_subframe(samples: &[Complex64], frac_delay: f64) -> Vec<Complex64> {
    assert!(samples.len() >= SUBFRAME_SAMPLES);
    let mut out = vec![Complex64::new(0.0, 0.0); SUBCARRIERS * SYMBOLS_PER_SUBFRAME];
    let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
    let scale = 1.0 / (GRID_SCALE * FFT_SIZE as f64);
    for l in 0..SYMBOLS_PER_SUBFRAME {
        let off = symbol_body_offset(l);
        buf.copy_from_slice(&samples[off..off + FFT_SIZE]);
        fft(&mut buf);
        for k in 0..SUBCARRIERS {
            let bin = k as f64 - (SUBCARRIERS / 2) as f64;
            let ramp = if frac_delay == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(
                    1.0,
                    2.0 * std::f64::consts::PI * bin * frac_delay / FFT_SIZE as f64,
                )
            };
            out[l * SUBCARRIERS + k] = buf[tone_bin(k, SUBCARRIERS, FFT_SIZE)] * scale * ramp;
        }
    }
    out
}

/// Time-domain useful part (no CP) of one symbol carrying `tones` on the
/// lowest subcarriers, at grid scale.
pub fn symbol_body(tones: &[Complex64]) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
    for (k, v) in tones.iter().enumerate() {
        buf[tone_bin(k, SUBCARRIERS, FFT_SIZE)] = v * GRID_SCALE;
    }
    ifft(&mut buf);
    buf
}
