//! Rate-1/3 tail-biting convolutional code, constraint length 7.
//!
//! The shift register holds `u[k] u[k-1] .. u[k-6]` in bits 6..0, so the
//! octal generators read directly as masks. The encoder starts in the state
//! formed by the last six input bits, which makes start and end states equal.
//! Output is stream-major: all of `d0`, then `d1`, then `d2`.

use crate::Bit;

pub const GENERATORS: [u32; 3] = [0o133, 0o171, 0o165];
const STATES: usize = 64;

fn parity(x: u32) -> u8 {
    (x.count_ones() & 1) as u8
}

/// Output triplet for each 7-bit register value.
fn output_table() -> [[u8; 3]; 128] {
    let mut t = [[0u8; 3]; 128];
    for (r, row) in t.iter_mut().enumerate() {
        for (i, g) in GENERATORS.iter().enumerate() {
            row[i] = parity(r as u32 & g);
        }
    }
    t
}

/// Encoder state before the first input: the last six bits, newest in bit 5.
pub fn initial_state(bits: &[Bit]) -> u32 {
    let n = bits.len();
    (0..6.min(n)).fold(0, |s, i| s | ((bits[n - 1 - i] as u32) << (5 - i)))
}

/// Returns the three streams concatenated and the final encoder state.
pub fn encode_with_state(bits: &[Bit]) -> (Vec<Bit>, u32) {
    let n = bits.len();
    let table = output_table();
    let mut out = vec![0u8; 3 * n];
    let mut s = initial_state(bits);
    for (k, &u) in bits.iter().enumerate() {
        let r = ((u as u32) << 6) | s;
        for i in 0..3 {
            out[i * n + k] = table[r as usize][i];
        }
        s = r >> 1;
    }
    (out, s)
}

pub fn encode(bits: &[Bit]) -> Vec<Bit> {
    encode_with_state(bits).0
}

/// Wrap-around Viterbi decoder over stream-major LLRs (positive favours 0).
///
/// Runs the circular trellis up to `max_passes` times, seeding each pass
/// with the previous pass's end metrics, and stops once the best survivor
/// is tail-biting.
pub fn decode(llr: &[f64], max_passes: usize) -> Vec<Bit> {
    assert!(
        llr.len().is_multiple_of(3),
        "TBCC input must be a multiple of 3"
    );
    let n = llr.len() / 3;
    if n == 0 {
        return Vec::new();
    }
    let table = output_table();
    let mut metric = [0.0f64; STATES];
    let mut decisions = vec![0u64; n];
    let mut best_path = Vec::new();
    for _pass in 0..max_passes.max(1) {
        let mut next = [0.0f64; STATES];
        for k in 0..n {
            let l = [llr[k], llr[n + k], llr[2 * n + k]];
            // Branch gain for each register value: correlation with +-1.
            let mut gain = [0.0f64; 128];
            for (r, g) in gain.iter_mut().enumerate() {
                let o = table[r];
                *g = (0..3).map(|i| if o[i] == 0 { l[i] } else { -l[i] }).sum();
            }
            let mut dec = 0u64;
            for ns in 0..STATES {
                let u = (ns >> 5) as u32;
                let s0 = (ns & 0x1F) << 1;
                let s1 = s0 | 1;
                let m0 = metric[s0] + gain[((u << 6) as usize) | s0];
                let m1 = metric[s1] + gain[((u << 6) as usize) | s1];
                if m1 > m0 {
                    next[ns] = m1;
                    dec |= 1 << ns;
                } else {
                    next[ns] = m0;
                }
            }
            decisions[k] = dec;
            // Normalize to keep the metrics bounded over many passes.
            let top = next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (m, x) in metric.iter_mut().zip(next.iter()) {
                *m = x - top;
            }
        }
        let end = (0..STATES)
            .max_by(|&a, &b| metric[a].partial_cmp(&metric[b]).unwrap())
            .unwrap();
        let (path, start) = traceback(&decisions, end);
        best_path = path;
        if start == end {
            break;
        }
    }
    best_path
}

fn traceback(decisions: &[u64], end: usize) -> (Vec<Bit>, usize) {
    let n = decisions.len();
    let mut bits = vec![0u8; n];
    let mut ns = end;
    for k in (0..n).rev() {
        bits[k] = (ns >> 5) as u8;
        let b = ((decisions[k] >> ns) & 1) as usize;
        ns = ((ns & 0x1F) << 1) | b;
    }
    (bits, ns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    // Direct convolution with the generator taps, no state machine.
    fn reference_encode(u: &[Bit]) -> Vec<Bit> {
        let n = u.len();
        let mut out = vec![0u8; 3 * n];
        for (i, g) in GENERATORS.iter().enumerate() {
            for k in 0..n {
                let mut acc = 0u8;
                for d in 0..7 {
                    if (g >> (6 - d)) & 1 == 1 {
                        acc ^= u[(k + n * 7 - d) % n];
                    }
                }
                out[i * n + k] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_circular_convolution() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for len in [8, 40, 58, 100] {
            let u: Vec<Bit> = (0..len).map(|_| rng.random_range(0..2)).collect();
            assert_eq!(encode(&u), reference_encode(&u));
        }
    }

    #[test]
    fn tail_biting_and_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let len = rng.random_range(7..200);
            let u: Vec<Bit> = (0..len).map(|_| rng.random_range(0..2)).collect();
            let (c, end) = encode_with_state(&u);
            assert_eq!(end, initial_state(&u));
            let llr: Vec<f64> = c.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect();
            assert_eq!(decode(&llr, 4), u);
        }
    }

    #[test]
    fn corrects_two_errors() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let u: Vec<Bit> = (0..64).map(|_| rng.random_range(0..2)).collect();
            let c = encode(&u);
            let mut llr: Vec<f64> = c.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect();
            let i = rng.random_range(0..llr.len());
            let mut j = rng.random_range(0..llr.len());
            while j == i {
                j = rng.random_range(0..llr.len());
            }
            llr[i] = -llr[i];
            llr[j] = -llr[j];
            assert_eq!(decode(&llr, 4), u);
        }
    }
}
