use nbiot::coding::{
    self, crc, demodulate, modulate, rate_match::rate_match_bits, tbcc, Channel, ModScheme, Scheme,
    TransportBlock,
};
use proptest::prelude::*;

fn llr(bits: &[u8]) -> Vec<f64> {
    bits.iter()
        .map(|&b| if b == 0 { 4.0 } else { -4.0 })
        .collect()
}

fn bits(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..2, 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tbcc_roundtrip_any_size(payload in bits(coding::MAX_TBS_NPDSCH)) {
        let tb = TransportBlock::new(payload, Channel::Npdsch).unwrap();
        let coded = coding::tbcc_encode(&tb).unwrap();
        let (back, ok) = coding::viterbi_decode(&llr(&coded.bits), tb.tbs, Channel::Npdsch).unwrap();
        prop_assert!(ok);
        prop_assert_eq!(back, tb);
    }

    #[test]
    fn tbcc_start_equals_end_state(input in prop::collection::vec(0u8..2, 6..1200)) {
        let (_, end) = tbcc::encode_with_state(&input);
        prop_assert_eq!(end, tbcc::initial_state(&input));
    }

    #[test]
    fn tbcc_corrects_one_flip(payload in bits(200), pos in any::<prop::sample::Index>()) {
        let tb = TransportBlock::new(payload, Channel::Npdsch).unwrap();
        let coded = coding::tbcc_encode(&tb).unwrap();
        let mut soft = llr(&coded.bits);
        let i = pos.index(soft.len());
        soft[i] = -soft[i];
        let (back, ok) = coding::viterbi_decode(&soft, tb.tbs, Channel::Npdsch).unwrap();
        prop_assert!(ok);
        prop_assert_eq!(back, tb);
    }

    #[test]
    fn turbo_roundtrip(idx in 0..coding::TBS_LADDER_UL.len(), seed in any::<u64>()) {
        use rand::SeedableRng;
        let tbs = coding::TBS_LADDER_UL[idx];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tb = TransportBlock::random(tbs, Channel::NpuschF1, &mut rng).unwrap();
        let coded = coding::turbo_encode(&tb).unwrap();
        let (back, ok) = coding::turbo_decode(&llr(&coded.bits), tbs, 2).unwrap();
        prop_assert!(ok);
        prop_assert_eq!(back, tb);
    }

    #[test]
    fn crc_catches_single_flip(payload in bits(300), pos in any::<prop::sample::Index>()) {
        let mut word = crc::attach(&payload, crc::CRC24A_POLY, 24);
        prop_assert!(crc::check(&word, crc::CRC24A_POLY, 24));
        let i = pos.index(word.len());
        word[i] ^= 1;
        prop_assert!(!crc::check(&word, crc::CRC24A_POLY, 24));
    }

    /// Rate matching then de-matching recovers the sign of every mother bit
    /// that was transmitted, whether the target punctures or repeats.
    #[test]
    fn rate_dematch_inverts_rate_match(payload in bits(120), ratio in 0.4f64..3.0) {
        let tb = TransportBlock::new(payload, Channel::Npdsch).unwrap();
        let coded = coding::tbcc_encode(&tb).unwrap();
        let target = ((coded.bits.len() as f64 * ratio) as usize).max(1);
        let sent = coding::rate_match(&coded, target).unwrap();
        let soft = coding::rate_dematch(&llr(&sent), Scheme::Tbcc, coded.bits.len());
        prop_assert_eq!(soft.len(), coded.bits.len());
        let mut nonzero = 0;
        for (s, &b) in soft.iter().zip(&coded.bits) {
            if *s != 0.0 {
                nonzero += 1;
                prop_assert_eq!((*s < 0.0) as u8, b);
            }
        }
        prop_assert_eq!(nonzero, target.min(coded.bits.len()));
        // The rate matcher is a pure reordering up to the mother length.
        let order = rate_match_bits(&(0..coded.bits.len()).collect::<Vec<_>>(), Scheme::Tbcc, coded.bits.len());
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..coded.bits.len()).collect::<Vec<_>>());
    }

    #[test]
    fn modulation_roundtrip(payload in prop::collection::vec(0u8..2, 1..200).prop_map(|mut v| { if v.len() % 2 == 1 { v.push(0) } v }),
                            scheme in prop::sample::select(vec![ModScheme::Qpsk, ModScheme::Pi2Bpsk, ModScheme::Pi4Qpsk])) {
        let m = modulate(&payload, scheme).unwrap();
        prop_assert!(m.symbols.iter().all(|s| (s.norm() - 1.0).abs() < 1e-12));
        let back = coding::modulation::hard_decision(&demodulate(&m.symbols, scheme, 0.1));
        prop_assert_eq!(back, payload);
    }

    #[test]
    fn repetition_majority_tolerates_minority_errors(bit in 0u8..2, factor in 1usize..64, flips in 0usize..32) {
        let mut c = coding::repetition_encode(bit, factor).unwrap().bits;
        let flips = flips.min((factor - 1) / 2);
        for b in c.iter_mut().take(flips) {
            *b ^= 1;
        }
        prop_assert_eq!(coding::repetition_majority(&c), bit);
    }
}
