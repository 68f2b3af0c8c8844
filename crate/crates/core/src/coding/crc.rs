use crate::Bit;

/// CRC24A generator `0x1864CFB`, top bit implied.
pub const CRC24A_POLY: u32 = 0x86_4CFB;
/// CRC16 generator `0x11021`, top bit implied.
pub const CRC16_POLY: u32 = 0x1021;

/// Parity bits of `bits` for a generator of degree `len`, MSB first.
pub fn crc_bits(bits: &[Bit], poly: u32, len: u32) -> Vec<Bit> {
    let top = 1u32 << (len - 1);
    let mask = if len == 32 {
        u32::MAX
    } else {
        (1u32 << len) - 1
    };
    let mut reg = 0u32;
    for &b in bits {
        let fb = ((reg & top) != 0) as u32 ^ b as u32;
        reg = (reg << 1) & mask;
        if fb != 0 {
            reg ^= poly;
        }
    }
    (0..len).rev().map(|i| ((reg >> i) & 1) as Bit).collect()
}

pub fn attach(bits: &[Bit], poly: u32, len: u32) -> Vec<Bit> {
    let mut out = bits.to_vec();
    out.extend(crc_bits(bits, poly, len));
    out
}

/// True when the trailing `len` bits are the CRC of the rest.
pub fn check(bits_with_crc: &[Bit], poly: u32, len: u32) -> bool {
    let n = bits_with_crc.len();
    if n < len as usize {
        return false;
    }
    let (data, parity) = bits_with_crc.split_at(n - len as usize);
    crc_bits(data, poly, len) == parity
}

#[cfg(test)]
mod tests {
    use super::*;

    // Polynomial long division over GF(2), written independently of the
    // shift-register form.
    fn long_division(bits: &[Bit], gen: u64, len: u32) -> Vec<Bit> {
        let mut dividend: Vec<u8> = bits.to_vec();
        dividend.extend(std::iter::repeat_n(0, len as usize));
        let g: Vec<u8> = (0..=len).rev().map(|i| ((gen >> i) & 1) as u8).collect();
        for i in 0..bits.len() {
            if dividend[i] == 1 {
                for (j, gj) in g.iter().enumerate() {
                    dividend[i + j] ^= gj;
                }
            }
        }
        dividend[bits.len()..].to_vec()
    }

    #[test]
    fn matches_long_division() {
        let msgs: [&[Bit]; 4] = [&[1], &[1, 0, 1, 1, 0, 0, 1], &[0; 23], &[1; 40]];
        for m in msgs {
            assert_eq!(
                crc_bits(m, CRC24A_POLY, 24),
                long_division(m, 0x1864CFB, 24)
            );
            assert_eq!(crc_bits(m, CRC16_POLY, 16), long_division(m, 0x11021, 16));
        }
    }

    #[test]
    fn detects_single_flip() {
        let m: Vec<Bit> = (0..50).map(|i| (i * 7 % 3 == 0) as Bit).collect();
        let mut c = attach(&m, CRC24A_POLY, 24);
        assert!(check(&c, CRC24A_POLY, 24));
        c[10] ^= 1;
        assert!(!check(&c, CRC24A_POLY, 24));
    }
}
