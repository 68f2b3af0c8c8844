//! Sub-block interleaving and circular-buffer rate matching.
//!
//! Each of the three coded streams goes through a 32-column block
//! interleaver (dummy bits padded at the front, columns permuted, read out
//! column by column). The interleaved streams form a circular buffer that
//! is always read from position 0: there is a single redundancy version.

use super::Scheme;

const COLUMNS: usize = 32;

/// Column permutation for turbo-coded streams.
pub const TURBO_COLUMN_PERM: [usize; 32] = [
    0, 16, 8, 24, 4, 20, 12, 28, 2, 18, 10, 26, 6, 22, 14, 30, 1, 17, 9, 25, 5, 21, 13, 29, 3, 19,
    11, 27, 7, 23, 15, 31,
];

/// Column permutation for convolutionally coded streams.
pub const CONV_COLUMN_PERM: [usize; 32] = [
    1, 17, 9, 25, 5, 21, 13, 29, 3, 19, 11, 27, 7, 23, 15, 31, 0, 16, 8, 24, 4, 20, 12, 28, 2, 18,
    10, 26, 6, 22, 14, 30,
];

/// Interleaved read order of a stream of length `d`: each entry is an input
/// index, dummy positions removed.
pub fn subblock_order(d: usize, perm: &[usize; 32]) -> Vec<usize> {
    let rows = d.div_ceil(COLUMNS);
    let dummies = rows * COLUMNS - d;
    let mut out = Vec::with_capacity(d);
    for &c in perm {
        for r in 0..rows {
            let pos = r * COLUMNS + c;
            if pos >= dummies {
                out.push(pos - dummies);
            }
        }
    }
    out
}

/// Read order of the third turbo stream, which is offset by one position so
/// that both parity streams see different interleaving.
pub fn turbo_third_order(d: usize) -> Vec<usize> {
    let rows = d.div_ceil(COLUMNS);
    let kpi = rows * COLUMNS;
    let dummies = kpi - d;
    (0..kpi)
        .filter_map(|k| {
            let pos = (TURBO_COLUMN_PERM[k / rows] + COLUMNS * (k % rows) + 1) % kpi;
            (pos >= dummies).then(|| pos - dummies)
        })
        .collect()
}

/// Coded-bit index for every circular-buffer position.
pub fn buffer_order(scheme: Scheme, coded_len: usize) -> Vec<usize> {
    match scheme {
        Scheme::Repetition => (0..coded_len).collect(),
        Scheme::Tbcc => {
            let d = coded_len / 3;
            let o = subblock_order(d, &CONV_COLUMN_PERM);
            (0..3)
                .flat_map(|s| o.iter().map(move |&i| s * d + i))
                .collect()
        }
        Scheme::Turbo => {
            let d = coded_len / 3;
            let o0 = subblock_order(d, &TURBO_COLUMN_PERM);
            let o2 = turbo_third_order(d);
            let mut out: Vec<usize> = o0.clone();
            for (a, b) in o0.iter().zip(&o2) {
                out.push(d + a);
                out.push(2 * d + b);
            }
            out
        }
    }
}

pub fn rate_match_bits<T: Copy>(bits: &[T], scheme: Scheme, target: usize) -> Vec<T> {
    let order = buffer_order(scheme, bits.len());
    (0..target).map(|i| bits[order[i % order.len()]]).collect()
}

/// Accumulate received soft values back onto the coded positions.
pub fn rate_dematch(soft: &[f64], scheme: Scheme, coded_len: usize) -> Vec<f64> {
    let order = buffer_order(scheme, coded_len);
    let mut out = vec![0.0; coded_len];
    for (i, &v) in soft.iter().enumerate() {
        out[order[i % coded_len]] += v;
    }
    out
}
