//! Synchronization and reference sequences.
//!
//! NSSS construction (one PCID, one even frame `f`):
//!
//! ```text
//! n  = 0..131,  n' = n mod 131,  m = n mod 128
//! u  = (pcid mod 126) + 3,  q = pcid / 126,  theta = (f / 2) mod 4
//! d[n] = b_q[m] * z_u[(n + 33 * theta) mod 132]
//! z_u[k] = exp(-j*pi*u*k'(k'+1)/131),  k' = k mod 131
//! ```
//!
//! `b_q` is row {0, 31, 63, 127}[q] of the 128 x 128 Sylvester-Hadamard
//! matrix. Each quarter of the 80 ms block therefore moves the ZC base by a
//! quarter of its length.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{arg_err, Result};
use crate::grid::CellConfig;
use crate::phy_ul::NpuschFormat;

pub const NPSS_LEN: usize = 11;
pub const NPSS_ROOT: u32 = 5;
pub const NPSS_CODE_COVER: [i8; 11] = [1, 1, 1, 1, -1, -1, 1, 1, 1, -1, 1];

pub const NSSS_LEN: usize = 132;
pub const NSSS_ZC_LEN: usize = 131;
pub const NSSS_SHIFT_STEP: usize = 33;
pub const NSSS_HADAMARD_ROWS: [usize; 4] = [0, 31, 63, 127];

pub const MAX_PCID: u16 = 503;

#[derive(Debug, Clone, PartialEq)]
pub struct ZcSequence {
    pub length: usize,
    pub root: u32,
    pub values: Vec<Complex64>,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn zc_value(root: u32, n: usize, length: usize) -> Complex64 {
    // Reduce the exponent modulo 2*length to keep the phase exact for large n.
    let e = (root as u64 * n as u64 * (n as u64 + 1)) % (2 * length as u64);
    Complex64::from_polar(1.0, -std::f64::consts::PI * e as f64 / length as f64)
}

pub fn generate_zc(length: usize, root: u32) -> Result<ZcSequence> {
    if length == 0 || length.is_multiple_of(2) {
        return arg_err(format!("ZC length must be odd, got {length}"));
    }
    if root == 0 || gcd(root as u64, length as u64) != 1 {
        return arg_err(format!("ZC root {root} is not coprime to {length}"));
    }
    let values = (0..length).map(|n| zc_value(root, n, length)).collect();
    Ok(ZcSequence {
        length,
        root,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpssBlock {
    pub code_cover: [i8; 11],
    pub base: ZcSequence,
    /// `symbols[l][k]`: value on subcarrier `k` (0..11) of NPSS symbol `l`.
    pub symbols: Vec<Vec<Complex64>>,
}

pub fn generate_npss() -> NpssBlock {
    let base = generate_zc(NPSS_LEN, NPSS_ROOT).expect("root 5 is coprime to 11");
    let symbols = NPSS_CODE_COVER
        .iter()
        .map(|&c| base.values.iter().map(|v| v * c as f64).collect())
        .collect();
    NpssBlock {
        code_cover: NPSS_CODE_COVER,
        base,
        symbols,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsssBlock {
    pub nb_pcid: u16,
    pub frame_number_mod8: u8,
    pub values: Vec<Complex64>,
}

impl NsssBlock {
    /// Shift index 0..3 within the 80 ms block.
    pub fn shift_index(&self) -> usize {
        (self.frame_number_mod8 / 2) as usize
    }
}

/// Element `m` of row `row` of the Sylvester-Hadamard matrix of order 128.
pub fn hadamard(row: usize, m: usize) -> f64 {
    if (row & m).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

pub fn nsss_root(nb_pcid: u16) -> u32 {
    (nb_pcid as u32 % 126) + 3
}

pub fn nsss_shift(frame_number: u32) -> usize {
    ((frame_number / 2) % 4) as usize
}

pub fn generate_nsss(nb_pcid: u16, frame_number: u32) -> Result<NsssBlock> {
    if nb_pcid > MAX_PCID {
        return arg_err(format!("NB-PCID {nb_pcid} out of range"));
    }
    if !frame_number.is_multiple_of(2) {
        return arg_err(format!(
            "NSSS is only sent in even frames, got frame {frame_number}"
        ));
    }
    let u = nsss_root(nb_pcid);
    let row = NSSS_HADAMARD_ROWS[nb_pcid as usize / 126];
    let theta = nsss_shift(frame_number);
    let values = (0..NSSS_LEN)
        .map(|n| {
            let k = (n + NSSS_SHIFT_STEP * theta) % NSSS_LEN;
            zc_value(u, k % NSSS_ZC_LEN, NSSS_ZC_LEN) * hadamard(row, n % 128)
        })
        .collect();
    Ok(NsssBlock {
        nb_pcid,
        frame_number_mod8: (frame_number % 8) as u8,
        values,
    })
}

/// Length-31 Gold sequence with the LTE generator pair and 1600-chip
/// advance.
pub fn gold_sequence(c_init: u32, len: usize) -> Vec<u8> {
    const NC: usize = 1600;
    let total = NC + len + 31;
    let mut x1 = vec![0u8; total];
    let mut x2 = vec![0u8; total];
    x1[0] = 1;
    for i in 0..31 {
        x2[i] = ((c_init >> i) & 1) as u8;
    }
    for n in 0..total - 31 {
        x1[n + 31] = x1[n + 3] ^ x1[n];
        x2[n + 31] = x2[n + 3] ^ x2[n + 2] ^ x2[n + 1] ^ x2[n];
    }
    (0..len).map(|n| x1[n + NC] ^ x2[n + NC]).collect()
}

/// Unit-modulus QPSK symbols from consecutive Gold chip pairs.
pub fn gold_qpsk(c_init: u32, count: usize) -> Vec<Complex64> {
    let c = gold_sequence(c_init, 2 * count);
    let a = std::f64::consts::FRAC_1_SQRT_2;
    (0..count)
        .map(|i| {
            Complex64::new(
                a * (1.0 - 2.0 * c[2 * i] as f64),
                a * (1.0 - 2.0 * c[2 * i + 1] as f64),
            )
        })
        .collect()
}

/// Seed families. Keeping them in disjoint top bits prevents two uses from
/// ever sharing an initial state.
pub mod seed {
    pub fn dmrs(nb_pcid: u16, slot: u32) -> u32 {
        ((slot & 0xFFFF) << 9) | nb_pcid as u32
    }

    pub fn nrs(nb_pcid: u16, subframe: u32, port: u8) -> u32 {
        (1 << 30) | ((subframe % 10) << 10) | ((port as u32 & 1) << 9) | nb_pcid as u32
    }

    pub fn npbch(nb_pcid: u16, sub_block: u32) -> u32 {
        (1 << 29) | ((sub_block & 7) << 9) | nb_pcid as u32
    }

    pub fn data(nb_pcid: u16, rnti: u16) -> u32 {
        (1 << 28) | ((rnti as u32 & 0x3FFF) << 9) | nb_pcid as u32
    }

    pub fn nprach(nb_pcid: u16) -> u32 {
        (3 << 29) | nb_pcid as u32
    }
}

/// NRS values for one port in one subframe: 8 unit-modulus QPSK symbols.
pub fn nrs_values(nb_pcid: u16, subframe: u32, port: u8) -> Vec<Complex64> {
    gold_qpsk(seed::nrs(nb_pcid, subframe, port), 8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmrsSlot {
    /// Symbol indexes (0..7) within the slot carrying DMRS.
    pub symbols: Vec<usize>,
    /// `values[i][k]`: value on tone `k` (0..12) of DMRS symbol `symbols[i]`.
    pub values: Vec<Vec<Complex64>>,
}

pub fn dmrs_symbols(format: NpuschFormat) -> &'static [usize] {
    match format {
        NpuschFormat::F1 => &[3],
        NpuschFormat::F2 => &[2, 3, 4],
    }
}

pub fn generate_dmrs(format: NpuschFormat, slot: u32, cell: &CellConfig) -> DmrsSlot {
    let symbols = dmrs_symbols(format).to_vec();
    let flat = gold_qpsk(seed::dmrs(cell.nb_pcid, slot), 12 * symbols.len());
    let values = flat.chunks(12).map(|c| c.to_vec()).collect();
    DmrsSlot { symbols, values }
}

/// Write `index,re,im` rows.
pub fn write_csv<W: Write>(values: &[Complex64], mut w: W) -> Result<()> {
    writeln!(w, "index,re,im")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{i},{:.12},{:.12}", v.re, v.im)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn periodic_xcorr(a: &[Complex64], b: &[Complex64], lag: usize) -> Complex64 {
        let n = a.len();
        (0..n).map(|i| a[i] * b[(i + lag) % n].conj()).sum()
    }

    #[test]
    fn zc_basics() {
        let z = generate_zc(11, 5).unwrap();
        assert_eq!(z.values[0], Complex64::new(1.0, 0.0));
        assert!(z.values.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        for lag in 1..11 {
            assert!(
                periodic_xcorr(&z.values, &z.values, lag).norm() < 1e-9,
                "lag {lag}"
            );
        }
        assert!(generate_zc(12, 5).is_err());
        assert!(generate_zc(15, 5).is_err());
    }

    #[test]
    fn npss_structure() {
        let p = generate_npss();
        assert_eq!(p.symbols.len(), 11);
        let mut energy = Complex64::new(0.0, 0.0);
        for (l, s) in p.symbols.iter().enumerate() {
            for (k, v) in s.iter().enumerate() {
                assert_eq!(*v, p.base.values[k] * NPSS_CODE_COVER[l] as f64);
                energy += v * v.conj();
            }
        }
        assert!((energy.re - 121.0).abs() < 1e-9);
        assert_eq!(generate_npss(), p);
    }

    #[test]
    fn nsss_shift_relation() {
        for pcid in [0u16, 17, 200, 503] {
            let a = generate_nsss(pcid, 0).unwrap();
            let b = generate_nsss(pcid, 2).unwrap();
            let row = NSSS_HADAMARD_ROWS[pcid as usize / 126];
            // Remove scrambling, then b's base is a's base moved by 33.
            for n in 0..NSSS_LEN {
                let za = a.values[(n + 33) % NSSS_LEN] * hadamard(row, ((n + 33) % NSSS_LEN) % 128);
                let zb = b.values[n] * hadamard(row, n % 128);
                assert!((za - zb).norm() < 1e-9);
            }
        }
        assert!(generate_nsss(3, 1).is_err());
        assert!(generate_nsss(504, 0).is_err());
    }

    #[test]
    fn nsss_cross_correlation_small_subset() {
        let seqs: Vec<_> = (0..16)
            .map(|p| generate_nsss(p, 4).unwrap().values)
            .collect();
        for i in 0..16 {
            for j in 0..16 {
                if i == j {
                    continue;
                }
                let c = periodic_xcorr(&seqs[i], &seqs[j], 0).norm() / NSSS_LEN as f64;
                assert!(c < 0.5, "pcids {i},{j}: {c}");
            }
        }
    }

    #[test]
    fn nsss_shift_injective_over_80ms() {
        let shifts: std::collections::HashSet<_> = (0..8).step_by(2).map(nsss_shift).collect();
        assert_eq!(shifts.len(), 4);
    }

    #[test]
    fn gold_matches_reference_register_model() {
        // Independent bit-serial formulation of the same generator pair.
        fn reference(c_init: u32, len: usize) -> Vec<u8> {
            let mut r1: u32 = 1;
            let mut r2: u32 = c_init & 0x7FFF_FFFF;
            let mut out = Vec::new();
            for n in 0..1600 + len {
                let o = ((r1 ^ r2) & 1) as u8;
                if n >= 1600 {
                    out.push(o);
                }
                let f1 = (r1 ^ (r1 >> 3)) & 1;
                let f2 = (r2 ^ (r2 >> 1) ^ (r2 >> 2) ^ (r2 >> 3)) & 1;
                r1 = (r1 >> 1) | (f1 << 30);
                r2 = (r2 >> 1) | (f2 << 30);
            }
            out
        }
        for c in [0u32, 1, 0x1234, (7 << 9) | 99] {
            assert_eq!(gold_sequence(c, 200), reference(c, 200));
        }
    }

    #[test]
    fn dmrs_layout() {
        let cell = CellConfig::standalone(7);
        let f1 = generate_dmrs(NpuschFormat::F1, 3, &cell);
        assert_eq!(f1.symbols, vec![3]);
        let f2 = generate_dmrs(NpuschFormat::F2, 3, &cell);
        assert_eq!(f2.symbols, vec![2, 3, 4]);
        assert!(f2
            .values
            .iter()
            .flatten()
            .all(|v| (v.norm() - 1.0).abs() < 1e-12));
        assert_eq!(f2, generate_dmrs(NpuschFormat::F2, 3, &cell));
    }

    #[test]
    fn csv_export() {
        let mut out = Vec::new();
        write_csv(&generate_zc(11, 5).unwrap().values, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("index,re,im\n0,1.0"));
        assert_eq!(text.lines().count(), 12);
    }
}
