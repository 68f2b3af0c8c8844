//! Channel coding for the NB-IoT transport channels.
//!
//! Downlink channels use the tail-biting convolutional code, NPUSCH format
//! 1 the turbo code, NPUSCH format 2 a plain repetition code. Transport
//! blocks carry CRC24A except the 23-bit DCI, which carries CRC16.

pub mod crc;
pub mod modulation;
pub mod rate_match;
pub mod tbcc;
pub mod turbo;

use rand::Rng;

use crate::error::{arg_err, Result};
use crate::Bit;

pub use modulation::{
    demodulate, demodulate_from, modulate, modulate_from, ModScheme, ModulatedSymbols,
};

pub const MAX_TBS_NPDSCH: usize = 680;
pub const MAX_TBS_NPUSCH: usize = 1000;
pub const DCI_BITS: usize = 23;
pub const MIB_BITS: usize = 34;

pub const TBS_LADDER_DL: [usize; 10] = [16, 24, 32, 56, 88, 120, 256, 328, 440, 680];
pub const TBS_LADDER_UL: [usize; 11] = [16, 24, 32, 56, 88, 120, 256, 328, 440, 680, 1000];

pub const DEFAULT_TURBO_ITERATIONS: usize = 6;
pub const VITERBI_PASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Npdsch,
    NpuschF1,
    Npbch,
    Npdcch,
}

impl Channel {
    pub fn is_downlink(self) -> bool {
        !matches!(self, Channel::NpuschF1)
    }

    pub fn crc_len(self) -> usize {
        match self {
            Channel::Npdcch => 16,
            _ => 24,
        }
    }

    fn crc_poly(self) -> u32 {
        match self {
            Channel::Npdcch => crc::CRC16_POLY,
            _ => crc::CRC24A_POLY,
        }
    }

    fn check_size(self, tbs: usize) -> Result<()> {
        let ok = match self {
            Channel::Npdsch => (1..=MAX_TBS_NPDSCH).contains(&tbs),
            Channel::NpuschF1 => (1..=MAX_TBS_NPUSCH).contains(&tbs),
            Channel::Npdcch => tbs == DCI_BITS,
            Channel::Npbch => tbs == MIB_BITS,
        };
        if ok {
            Ok(())
        } else {
            arg_err(format!(
                "transport block size {tbs} not allowed on {self:?}"
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportBlock {
    pub payload_bits: Vec<Bit>,
    pub tbs: usize,
    pub channel: Channel,
}

impl TransportBlock {
    pub fn new(payload_bits: Vec<Bit>, channel: Channel) -> Result<Self> {
        channel.check_size(payload_bits.len())?;
        if payload_bits.iter().any(|&b| b > 1) {
            return arg_err("payload bits must be 0 or 1");
        }
        Ok(TransportBlock {
            tbs: payload_bits.len(),
            payload_bits,
            channel,
        })
    }

    pub fn random<R: Rng>(tbs: usize, channel: Channel, rng: &mut R) -> Result<Self> {
        Self::new(
            (0..tbs).map(|_| rng.random_range(0..2u8)).collect(),
            channel,
        )
    }

    pub fn with_crc(&self) -> Vec<Bit> {
        crc::attach(
            &self.payload_bits,
            self.channel.crc_poly(),
            self.channel.crc_len() as u32,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Tbcc,
    Turbo,
    Repetition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedBlock {
    /// Mother-code output, stream-major for the convolutional codes.
    pub bits: Vec<Bit>,
    pub scheme: Scheme,
    pub rate_matched_length: usize,
}

/// Coded length before rate matching.
pub fn mother_length(scheme: Scheme, tbs: usize, channel: Channel) -> usize {
    let k = tbs + channel.crc_len();
    match scheme {
        Scheme::Tbcc => 3 * k,
        Scheme::Turbo => 3 * k + 12,
        Scheme::Repetition => tbs,
    }
}

pub fn tbcc_encode(tb: &TransportBlock) -> Result<CodedBlock> {
    if !tb.channel.is_downlink() {
        return arg_err("TBCC is used on downlink channels only");
    }
    tb.channel.check_size(tb.tbs)?;
    let bits = tbcc::encode(&tb.with_crc());
    Ok(CodedBlock {
        rate_matched_length: bits.len(),
        bits,
        scheme: Scheme::Tbcc,
    })
}

/// Decode mother-code LLRs (length `3 * (tbs + crc)`). Returns the block
/// and whether its CRC passed.
pub fn viterbi_decode(
    soft_bits: &[f64],
    tbs: usize,
    channel: Channel,
) -> Result<(TransportBlock, bool)> {
    let expected = mother_length(Scheme::Tbcc, tbs, channel);
    if soft_bits.len() != expected {
        return arg_err(format!(
            "expected {expected} soft bits, got {}",
            soft_bits.len()
        ));
    }
    let decoded = tbcc::decode(soft_bits, VITERBI_PASSES);
    let ok = crc::check(&decoded, channel.crc_poly(), channel.crc_len() as u32);
    let tb = TransportBlock {
        payload_bits: decoded[..tbs].to_vec(),
        tbs,
        channel,
    };
    Ok((tb, ok))
}

pub fn turbo_encode(tb: &TransportBlock) -> Result<CodedBlock> {
    if tb.channel != Channel::NpuschF1 {
        return arg_err("turbo coding is used on NPUSCH format 1 only");
    }
    tb.channel.check_size(tb.tbs)?;
    let bits = turbo::encode(&tb.with_crc())?;
    Ok(CodedBlock {
        rate_matched_length: bits.len(),
        bits,
        scheme: Scheme::Turbo,
    })
}

/// Iterative decode with CRC-based early stopping.
pub fn turbo_decode(
    soft_bits: &[f64],
    tbs: usize,
    iterations: usize,
) -> Result<(TransportBlock, bool)> {
    let expected = mother_length(Scheme::Turbo, tbs, Channel::NpuschF1);
    if soft_bits.len() != expected {
        return arg_err(format!(
            "expected {expected} soft bits, got {}",
            soft_bits.len()
        ));
    }
    let check = |b: &[Bit]| crc::check(b, crc::CRC24A_POLY, 24);
    let decoded = turbo::decode(soft_bits, iterations, check)?;
    let ok = check(&decoded);
    let tb = TransportBlock {
        payload_bits: decoded[..tbs].to_vec(),
        tbs,
        channel: Channel::NpuschF1,
    };
    Ok((tb, ok))
}

pub fn repetition_encode(bit: Bit, factor: usize) -> Result<CodedBlock> {
    if factor == 0 {
        return arg_err("repetition factor must be at least 1");
    }
    Ok(CodedBlock {
        bits: vec![bit & 1; factor],
        scheme: Scheme::Repetition,
        rate_matched_length: factor,
    })
}

/// Soft combining: the sign of the LLR sum.
pub fn repetition_decode(soft: &[f64]) -> Bit {
    (soft.iter().sum::<f64>() < 0.0) as Bit
}

/// Hard majority vote; ties go to 0.
pub fn repetition_majority(bits: &[Bit]) -> Bit {
    let ones = bits.iter().filter(|&&b| b == 1).count();
    (2 * ones > bits.len()) as Bit
}

/// Circular-buffer rate matching from offset 0 (single redundancy version).
pub fn rate_match(coded: &CodedBlock, target_length: usize) -> Result<Vec<Bit>> {
    if target_length == 0 {
        return arg_err("rate-matching target must be at least 1 bit");
    }
    Ok(rate_match::rate_match_bits(
        &coded.bits,
        coded.scheme,
        target_length,
    ))
}

pub fn rate_dematch(soft: &[f64], scheme: Scheme, coded_len: usize) -> Vec<f64> {
    rate_match::rate_dematch(soft, scheme, coded_len)
}

/// Mother-code bits in circular-buffer order.
pub fn circular_buffer(coded: &CodedBlock) -> Vec<Bit> {
    rate_match::rate_match_bits(&coded.bits, coded.scheme, coded.bits.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn tbcc_lengths_and_zero_word() {
        let zero = tbcc::encode(&[0; 40]);
        assert!(zero.iter().all(|&b| b == 0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for tbs in TBS_LADDER_DL {
            let tb = TransportBlock::random(tbs, Channel::Npdsch, &mut rng).unwrap();
            let c = tbcc_encode(&tb).unwrap();
            assert_eq!(c.bits.len(), 3 * (tbs + 24));
            let llr: Vec<f64> = c.bits.iter().map(|&b| 1.0 - 2.0 * b as f64).collect();
            let (back, ok) = viterbi_decode(&llr, tbs, Channel::Npdsch).unwrap();
            assert!(ok);
            assert_eq!(back, tb);
        }
        assert!(TransportBlock::random(681, Channel::Npdsch, &mut rng).is_err());
        assert!(viterbi_decode(&[0.0; 10], 16, Channel::Npdsch).is_err());
    }

    #[test]
    fn dci_uses_crc16() {
        let tb = TransportBlock::new(vec![1; 23], Channel::Npdcch).unwrap();
        assert_eq!(tbcc_encode(&tb).unwrap().bits.len(), 3 * 39);
        assert!(TransportBlock::new(vec![1; 22], Channel::Npdcch).is_err());
    }

    #[test]
    fn rate_match_identity_and_wrap() {
        let tb = TransportBlock::new(
            vec![1, 0, 1, 1, 0, 0, 0, 1, 1, 1, 0, 1, 0, 1, 1, 0],
            Channel::Npdsch,
        )
        .unwrap();
        let c = tbcc_encode(&tb).unwrap();
        let n = c.bits.len();
        let once = rate_match(&c, n).unwrap();
        let mut a = once.clone();
        a.sort_unstable();
        let mut b = c.bits.clone();
        b.sort_unstable();
        assert_eq!(a, b);
        let twice = rate_match(&c, 2 * n).unwrap();
        assert_eq!(&twice[..n], &once[..]);
        assert_eq!(&twice[n..], &once[..]);
        assert_eq!(rate_match(&c, 77).unwrap(), rate_match(&c, 77).unwrap());
    }

    #[test]
    fn repetition_basics() {
        assert_eq!(repetition_encode(1, 16).unwrap().bits, vec![1; 16]);
        assert_eq!(repetition_majority(&[1; 16]), 1);
        assert_eq!(repetition_majority(&[0; 16]), 0);
        assert!(repetition_encode(1, 0).is_err());
    }
}
