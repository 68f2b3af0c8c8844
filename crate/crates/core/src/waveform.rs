//! Complex baseband sample streams and the binary IQ file format.
//!
//! IQ file layout, all fields little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `NBIQ`                            |
//! | 4      | 4    | format version, `u32` (currently 1)     |
//! | 8      | 8    | sample rate in Hz, `f64`                |
//! | 16     | 8    | carrier offset in Hz, `f64`             |
//! | 24     | 8    | sample count, `u64`                     |
//! | 32     | 8·n  | samples as interleaved `f32` I, Q pairs |

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerology::{PRB_BANDWIDTH_HZ, SAMPLE_RATE_HZ};

pub const IQ_MAGIC: &[u8; 4] = b"NBIQ";
pub const IQ_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
    /// Nominal offset of the carrier center from the receiver's tuning.
    pub carrier_offset_hz: f64,
    /// Bandwidth the signal occupies; the channel defines SNR inside it.
    pub occupied_bandwidth_hz: f64,
}

impl Waveform {
    pub fn new(samples: Vec<Complex64>, occupied_bandwidth_hz: f64) -> Self {
        Waveform {
            samples,
            sample_rate_hz: SAMPLE_RATE_HZ,
            carrier_offset_hz: 0.0,
            occupied_bandwidth_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn papr_db(&self) -> f64 {
        papr_db(&self.samples)
    }

    /// Append another waveform with the same sample rate.
    pub fn extend(&mut self, other: &Waveform) {
        debug_assert_eq!(self.sample_rate_hz, other.sample_rate_hz);
        self.samples.extend_from_slice(&other.samples);
    }

    pub fn write_iq<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(IQ_MAGIC)?;
        w.write_all(&IQ_VERSION.to_le_bytes())?;
        w.write_all(&self.sample_rate_hz.to_le_bytes())?;
        w.write_all(&self.carrier_offset_hz.to_le_bytes())?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.samples.len() * 8);
        for s in &self.samples {
            buf.extend_from_slice(&(s.re as f32).to_le_bytes());
            buf.extend_from_slice(&(s.im as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Read an IQ file. The occupied bandwidth is not stored and defaults to
    /// one PRB.
    pub fn read_iq<R: Read>(mut r: R) -> Result<Waveform> {
        let mut header = [0u8; 32];
        r.read_exact(&mut header)?;
        if &header[0..4] != IQ_MAGIC {
            return Err(Error::Io("not an NBIQ file".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != IQ_VERSION {
            return Err(Error::Io(format!("unsupported NBIQ version {version}")));
        }
        let sample_rate_hz = f64::from_le_bytes(header[8..16].try_into().unwrap());
        let carrier_offset_hz = f64::from_le_bytes(header[16..24].try_into().unwrap());
        let n = u64::from_le_bytes(header[24..32].try_into().unwrap()) as usize;
        let mut body = vec![0u8; n * 8];
        r.read_exact(&mut body)?;
        let samples = body
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
                let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
                Complex64::new(re as f64, im as f64)
            })
            .collect();
        Ok(Waveform {
            samples,
            sample_rate_hz,
            carrier_offset_hz,
            occupied_bandwidth_hz: PRB_BANDWIDTH_HZ,
        })
    }
}

pub fn mean_power(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
}

/// Peak-to-average power ratio in dB over the non-silent samples.
pub fn papr_db(samples: &[Complex64]) -> f64 {
    let active: Vec<f64> = samples
        .iter()
        .map(|s| s.norm_sqr())
        .filter(|&p| p > 1e-20)
        .collect();
    if active.is_empty() {
        return 0.0;
    }
    let peak = active.iter().cloned().fold(0.0, f64::max);
    let mean = active.iter().sum::<f64>() / active.len() as f64;
    10.0 * (peak / mean).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iq_file_roundtrip() {
        let mut w = Waveform::new(
            (0..100)
                .map(|n| Complex64::from_polar(1.0, n as f64 * 0.1))
                .collect(),
            PRB_BANDWIDTH_HZ,
        );
        w.carrier_offset_hz = -2_500.0;
        let mut bytes = Vec::new();
        w.write_iq(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 32 + 100 * 8);
        assert_eq!(&bytes[0..4], b"NBIQ");
        assert_eq!(f64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1.92e6);
        let back = Waveform::read_iq(&bytes[..]).unwrap();
        assert_eq!(back.carrier_offset_hz, -2_500.0);
        for (a, b) in back.samples.iter().zip(&w.samples) {
            assert!((a - b).norm() < 1e-6);
        }
        assert!(Waveform::read_iq(&b"XXXX0000"[..]).is_err());
    }

    #[test]
    fn papr_of_constant_envelope_is_zero() {
        let s: Vec<Complex64> = (0..64)
            .map(|n| Complex64::from_polar(2.0, n as f64))
            .collect();
        assert!(papr_db(&s).abs() < 1e-12);
    }
}
