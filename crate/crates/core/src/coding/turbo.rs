//! Parallel concatenated code with two 8-state RSC constituents
//! (feedback 13, feedforward 15 octal) and a QPP interleaver.
//!
//! Coded output is stream-major with `K + 4` bits per stream; the twelve
//! termination bits are spread over the stream tails as in LTE.

use crate::error::{arg_err, Result};
use crate::Bit;

/// `(K, f1, f2)` for every code block size reachable from the TBS ladder.
pub const QPP_TABLE: [(usize, usize, usize); 11] = [
    (40, 3, 10),
    (48, 7, 12),
    (56, 19, 42),
    (80, 11, 20),
    (112, 41, 84),
    (144, 17, 108),
    (280, 103, 210),
    (352, 21, 44),
    (464, 247, 58),
    (704, 155, 44),
    (1024, 31, 64),
];

pub fn qpp_interleaver(k: usize) -> Result<Vec<usize>> {
    let Some(&(_, f1, f2)) = QPP_TABLE.iter().find(|e| e.0 == k) else {
        return arg_err(format!("no interleaver for block size {k}"));
    };
    Ok((0..k).map(|i| (f1 * i + f2 * i * i) % k).collect())
}

/// One RSC step from state `(s1, s2, s3)` packed as `s1<<2 | s2<<1 | s3`.
/// Returns `(next_state, parity)`.
#[inline]
fn rsc_step(state: usize, x: u8) -> (usize, u8) {
    let s1 = (state >> 2) as u8 & 1;
    let s2 = (state >> 1) as u8 & 1;
    let s3 = state as u8 & 1;
    let a = x ^ s2 ^ s3;
    let p = a ^ s1 ^ s3;
    (((a as usize) << 2) | ((s1 as usize) << 1) | s2 as usize, p)
}

/// Systematic input that drives the register toward zero.
#[inline]
fn tail_input(state: usize) -> u8 {
    (((state >> 1) ^ state) & 1) as u8
}

/// Encode one constituent: parity bits plus 3 tail `(x, z)` pairs.
fn rsc_encode(bits: &[Bit]) -> (Vec<Bit>, [(Bit, Bit); 3]) {
    let mut s = 0;
    let mut parity = Vec::with_capacity(bits.len());
    for &x in bits {
        let (ns, p) = rsc_step(s, x);
        parity.push(p);
        s = ns;
    }
    let mut tail = [(0, 0); 3];
    for t in tail.iter_mut() {
        let x = tail_input(s);
        let (ns, p) = rsc_step(s, x);
        *t = (x, p);
        s = ns;
    }
    debug_assert_eq!(s, 0);
    (parity, tail)
}

pub fn encode(bits: &[Bit]) -> Result<Vec<Bit>> {
    let k = bits.len();
    let pi = qpp_interleaver(k)?;
    let (z, t1) = rsc_encode(bits);
    let interleaved: Vec<Bit> = pi.iter().map(|&i| bits[i]).collect();
    let (z2, t2) = rsc_encode(&interleaved);
    let d = k + 4;
    let mut out = vec![0u8; 3 * d];
    out[..k].copy_from_slice(bits);
    out[d..d + k].copy_from_slice(&z);
    out[2 * d..2 * d + k].copy_from_slice(&z2);
    for (pos, val) in tail_layout(k).iter().zip(tail_values(&t1, &t2)) {
        out[*pos] = val;
    }
    Ok(out)
}

/// Order of tail values: x_K, x_K+1, x_K+2, z_K, z_K+1, z_K+2, then the
/// same for the second encoder.
fn tail_values(t1: &[(Bit, Bit); 3], t2: &[(Bit, Bit); 3]) -> [Bit; 12] {
    [
        t1[0].0, t1[1].0, t1[2].0, t1[0].1, t1[1].1, t1[2].1, t2[0].0, t2[1].0, t2[2].0, t2[0].1,
        t2[1].1, t2[2].1,
    ]
}

/// Positions in the stream-major output for the values of [`tail_values`].
fn tail_layout(k: usize) -> [usize; 12] {
    let d = k + 4;
    let (s0, s1, s2) = (0, d, 2 * d);
    [
        s0 + k,     // x_K
        s2 + k,     // x_K+1
        s1 + k + 1, // x_K+2
        s1 + k,     // z_K
        s0 + k + 1, // z_K+1
        s2 + k + 1, // z_K+2
        s0 + k + 2, // x'_K
        s2 + k + 2, // x'_K+1
        s1 + k + 3, // x'_K+2
        s1 + k + 2, // z'_K
        s0 + k + 3, // z'_K+1
        s2 + k + 3, // z'_K+2
    ]
}

const NEG: f64 = -1e30;

/// Max-log-MAP over one terminated constituent. LLRs are positive for 0.
/// `sys` and `par` have `K + 3` entries, `apriori` has `K`.
fn max_log_map(sys: &[f64], par: &[f64], apriori: &[f64]) -> Vec<f64> {
    let n = sys.len();
    let k = apriori.len();
    let gamma = |t: usize, x: u8, p: u8| -> f64 {
        let la = if t < k { apriori[t] } else { 0.0 };
        let sx = if x == 0 { 1.0 } else { -1.0 };
        let sp = if p == 0 { 1.0 } else { -1.0 };
        0.5 * sx * (sys[t] + la) + 0.5 * sp * par[t]
    };
    let mut alpha = vec![[NEG; 8]; n + 1];
    alpha[0][0] = 0.0;
    for t in 0..n {
        for s in 0..8 {
            let a = alpha[t][s];
            if a <= NEG / 2.0 {
                continue;
            }
            for x in 0..2u8 {
                if t >= k && x != tail_input(s) {
                    continue;
                }
                let (ns, p) = rsc_step(s, x);
                let m = a + gamma(t, x, p);
                if m > alpha[t + 1][ns] {
                    alpha[t + 1][ns] = m;
                }
            }
        }
    }
    let mut beta = [NEG; 8];
    beta[0] = 0.0;
    let mut out = vec![0.0; k];
    for t in (0..n).rev() {
        let mut nb = [NEG; 8];
        let mut best = [NEG; 2];
        for s in 0..8 {
            for x in 0..2u8 {
                if t >= k && x != tail_input(s) {
                    continue;
                }
                let (ns, p) = rsc_step(s, x);
                let g = gamma(t, x, p);
                let b = g + beta[ns];
                if b > nb[s] {
                    nb[s] = b;
                }
                let full = alpha[t][s] + b;
                if full > best[x as usize] {
                    best[x as usize] = full;
                }
            }
        }
        if t < k {
            out[t] = best[0] - best[1];
        }
        beta = nb;
    }
    out
}

/// Iterative decoder over stream-major LLRs of length `3K + 12`.
///
/// `stop` is called with the hard decisions after each iteration; returning
/// true ends decoding early.
pub fn decode(
    llr: &[f64],
    iterations: usize,
    mut stop: impl FnMut(&[Bit]) -> bool,
) -> Result<Vec<Bit>> {
    if iterations == 0 {
        return arg_err("turbo decoding needs at least one iteration");
    }
    if llr.len() < 12 || !(llr.len() - 12).is_multiple_of(3) {
        return arg_err(format!("turbo input length {} is not 3K+12", llr.len()));
    }
    let k = (llr.len() - 12) / 3;
    let pi = qpp_interleaver(k)?;
    let d = k + 4;
    let tl = tail_layout(k);
    let tv: Vec<f64> = tl.iter().map(|&p| llr[p]).collect();

    let mut sys1: Vec<f64> = llr[..k].to_vec();
    sys1.extend_from_slice(&tv[0..3]);
    let mut par1: Vec<f64> = llr[d..d + k].to_vec();
    par1.extend_from_slice(&tv[3..6]);
    let mut sys2: Vec<f64> = pi.iter().map(|&i| llr[i]).collect();
    sys2.extend_from_slice(&tv[6..9]);
    let mut par2: Vec<f64> = llr[2 * d..2 * d + k].to_vec();
    par2.extend_from_slice(&tv[9..12]);

    const SCALE: f64 = 0.7;
    let mut le2 = vec![0.0; k];
    let mut hard = vec![0u8; k];
    for _ in 0..iterations {
        let l1 = max_log_map(&sys1, &par1, &le2);
        let le1: Vec<f64> = (0..k).map(|i| SCALE * (l1[i] - sys1[i] - le2[i])).collect();
        let a2: Vec<f64> = pi.iter().map(|&i| le1[i]).collect();
        let l2 = max_log_map(&sys2, &par2, &a2);
        let mut next = vec![0.0; k];
        for (j, &i) in pi.iter().enumerate() {
            next[i] = SCALE * (l2[j] - sys2[j] - a2[j]);
            hard[i] = (l2[j] < 0.0) as u8;
        }
        le2 = next;
        if stop(&hard) {
            break;
        }
    }
    Ok(hard)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn qpp_tables_are_permutations() {
        for &(k, _, _) in &QPP_TABLE {
            let mut p = qpp_interleaver(k).unwrap();
            p.sort_unstable();
            assert_eq!(p, (0..k).collect::<Vec<_>>(), "K={k}");
        }
        assert!(qpp_interleaver(41).is_err());
    }

    #[test]
    fn termination_returns_to_zero() {
        for s in 0..8 {
            let mut st = s;
            for _ in 0..3 {
                st = rsc_step(st, tail_input(st)).0;
            }
            assert_eq!(st, 0);
        }
    }

    #[test]
    fn noiseless_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for &(k, _, _) in &QPP_TABLE {
            let u: Vec<Bit> = (0..k).map(|_| rng.random_range(0..2)).collect();
            let c = encode(&u).unwrap();
            assert_eq!(c.len(), 3 * k + 12);
            let llr: Vec<f64> = c.iter().map(|&b| if b == 0 { 4.0 } else { -4.0 }).collect();
            assert_eq!(decode(&llr, 6, |_| false).unwrap(), u);
        }
    }

    #[test]
    fn zero_iterations_rejected() {
        assert!(decode(&[0.0; 132], 0, |_| false).is_err());
    }
}
