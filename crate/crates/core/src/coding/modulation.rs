//! Unit-modulus constellations with soft demapping.
//!
//! The rotating schemes carry a symbol counter so phase continuity can be
//! kept across calls: symbol `i` of π/2-BPSK is rotated by `iπ/2`, symbol
//! `i` of π/4-QPSK by `iπ/4`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

use num_complex::Complex64;

use crate::error::{arg_err, Result};
use crate::Bit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModScheme {
    Qpsk,
    Pi2Bpsk,
    Pi4Qpsk,
}

impl ModScheme {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            ModScheme::Pi2Bpsk => 1,
            _ => 2,
        }
    }

    fn rotation(self, index: u64) -> Complex64 {
        match self {
            ModScheme::Qpsk => Complex64::new(1.0, 0.0),
            ModScheme::Pi2Bpsk => Complex64::from_polar(1.0, FRAC_PI_2 * (index % 4) as f64),
            ModScheme::Pi4Qpsk => Complex64::from_polar(1.0, FRAC_PI_4 * (index % 8) as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulatedSymbols {
    pub symbols: Vec<Complex64>,
    pub scheme: ModScheme,
}

fn qpsk(b0: Bit, b1: Bit) -> Complex64 {
    Complex64::new(
        FRAC_1_SQRT_2 * (1.0 - 2.0 * b0 as f64),
        FRAC_1_SQRT_2 * (1.0 - 2.0 * b1 as f64),
    )
}

/// Modulate starting at symbol counter `start`.
pub fn modulate_from(bits: &[Bit], scheme: ModScheme, start: u64) -> Result<ModulatedSymbols> {
    let bps = scheme.bits_per_symbol();
    if !bits.len().is_multiple_of(bps) {
        return arg_err(format!(
            "{scheme:?} needs a multiple of {bps} bits, got {}",
            bits.len()
        ));
    }
    let symbols = bits
        .chunks(bps)
        .enumerate()
        .map(|(i, c)| {
            let base = if bps == 1 {
                qpsk(c[0], c[0])
            } else {
                qpsk(c[0], c[1])
            };
            base * scheme.rotation(start + i as u64)
        })
        .collect();
    Ok(ModulatedSymbols { symbols, scheme })
}

pub fn modulate(bits: &[Bit], scheme: ModScheme) -> Result<ModulatedSymbols> {
    modulate_from(bits, scheme, 0)
}

/// LLRs (positive favours 0) for complex noise variance `noise_var` per
/// symbol. Symbols must already be equalized.
pub fn demodulate_from(
    symbols: &[Complex64],
    scheme: ModScheme,
    noise_var: f64,
    start: u64,
) -> Vec<f64> {
    let nv = noise_var.max(1e-12);
    let mut out = Vec::with_capacity(symbols.len() * scheme.bits_per_symbol());
    for (i, y) in symbols.iter().enumerate() {
        let z = y * scheme.rotation(start + i as u64).conj();
        match scheme {
            ModScheme::Pi2Bpsk => {
                // Project onto the (1 + j)/sqrt(2) axis.
                let a = (z.re + z.im) * FRAC_1_SQRT_2;
                out.push(4.0 * a / nv);
            }
            _ => {
                out.push(2.0 * std::f64::consts::SQRT_2 * z.re / nv);
                out.push(2.0 * std::f64::consts::SQRT_2 * z.im / nv);
            }
        }
    }
    out
}

pub fn demodulate(symbols: &[Complex64], scheme: ModScheme, noise_var: f64) -> Vec<f64> {
    demodulate_from(symbols, scheme, noise_var, 0)
}

pub fn hard_decision(llr: &[f64]) -> Vec<Bit> {
    llr.iter().map(|&l| (l < 0.0) as Bit).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wrap(a: f64) -> f64 {
        let mut x = a % (2.0 * std::f64::consts::PI);
        if x > std::f64::consts::PI {
            x -= 2.0 * std::f64::consts::PI;
        }
        if x <= -std::f64::consts::PI {
            x += 2.0 * std::f64::consts::PI;
        }
        x
    }

    #[test]
    fn pi4_qpsk_transitions_exhaustive() {
        // Every pair of 2-bit symbols, at both counter parities.
        for start in 0..2 {
            for pattern in 0..16u8 {
                let bits: Vec<Bit> = (0..4).map(|i| (pattern >> (3 - i)) & 1).collect();
                let s = modulate_from(&bits, ModScheme::Pi4Qpsk, start)
                    .unwrap()
                    .symbols;
                let d = wrap((s[1] / s[0]).arg()).abs();
                let ok = [FRAC_PI_4, 3.0 * FRAC_PI_4]
                    .iter()
                    .any(|t| (d - t).abs() < 1e-9);
                assert!(ok, "pattern {pattern:04b}: {d}");
            }
        }
    }

    #[test]
    fn pi2_bpsk_transitions() {
        for pattern in 0..4u8 {
            let bits = [pattern >> 1, pattern & 1];
            let s = modulate(&bits, ModScheme::Pi2Bpsk).unwrap().symbols;
            let d = wrap((s[1] / s[0]).arg()).abs();
            assert!((d - FRAC_PI_2).abs() < 1e-9);
        }
    }

    #[test]
    fn roundtrip_all_schemes() {
        let bits: Vec<Bit> = (0..40).map(|i| ((i * 5 + 1) % 3 == 0) as Bit).collect();
        for scheme in [ModScheme::Qpsk, ModScheme::Pi2Bpsk, ModScheme::Pi4Qpsk] {
            let m = modulate_from(&bits, scheme, 3).unwrap();
            assert!(m.symbols.iter().all(|s| (s.norm() - 1.0).abs() < 1e-12));
            let llr = demodulate_from(&m.symbols, scheme, 1e-6, 3);
            assert_eq!(hard_decision(&llr), bits);
        }
        assert!(modulate(&[1, 0, 1], ModScheme::Qpsk).is_err());
    }
}
