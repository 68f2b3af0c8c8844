use nbiot::mac::{
    self, DlGrant, RaConfig, RaStep, ScheduleTimeline, Transaction, UeContext, UlGrant,
    MIN_ACK_GAP, MIN_DL_DATA_GAP, MIN_UL_DATA_GAP,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
enum Req {
    Dl {
        wait: u64,
        dci: u64,
        data: u64,
        ack: u64,
        gap: u64,
        ack_gap: u64,
    },
    Ul {
        wait: u64,
        dci: u64,
        data: u64,
        gap: u64,
    },
}

fn req() -> impl Strategy<Value = Req> {
    prop_oneof![
        (0u64..6, 1u64..4, 1u64..10, 1u64..4, 0u64..10, 0u64..20).prop_map(
            |(wait, dci, data, ack, gap, ack_gap)| Req::Dl {
                wait,
                dci,
                data,
                ack,
                gap,
                ack_gap
            }
        ),
        (0u64..6, 1u64..4, 1u64..10, 0u64..14).prop_map(|(wait, dci, data, gap)| Req::Ul {
            wait,
            dci,
            data,
            gap
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Requests placed after the previous transaction are accepted exactly
    /// when their gaps meet the minimums, and accepted schedules never hold
    /// two HARQ processes at once.
    #[test]
    fn gaps_decide_acceptance(reqs in prop::collection::vec(req(), 1..12)) {
        let mut tl = ScheduleTimeline::new();
        for r in &reqs {
            let start = tl.busy_until() + match r { Req::Dl { wait, .. } | Req::Ul { wait, .. } => *wait };
            match *r {
                Req::Dl { dci, data, ack, gap, ack_gap, .. } => {
                    let data_start = start + dci + gap;
                    let g = DlGrant {
                        dci_start: start,
                        dci_subframes: dci,
                        data_start,
                        data_subframes: data,
                        ack_start: data_start + data + ack_gap,
                        ack_subframes: ack,
                    };
                    let legal = gap >= MIN_DL_DATA_GAP && ack_gap >= MIN_ACK_GAP;
                    prop_assert_eq!(tl.schedule_dl(g).is_ok(), legal);
                }
                Req::Ul { dci, data, gap, .. } => {
                    let g = UlGrant { dci_start: start, dci_subframes: dci, data_start: start + dci + gap, data_subframes: data };
                    prop_assert_eq!(tl.schedule_ul(g).is_ok(), gap >= MIN_UL_DATA_GAP);
                }
            }
        }
        for t in 0..tl.busy_until() {
            prop_assert!(tl.pending_at(t) <= 1);
        }
        for w in tl.transactions.windows(2) {
            prop_assert!(w[1].start() >= w[0].end());
        }
    }

    /// A DCI inside an active transaction is always refused.
    #[test]
    fn second_process_refused(data in 1u64..10, ack in 1u64..4, offset in 0u64..30, ul in any::<bool>()) {
        let mut tl = ScheduleTimeline::new();
        let first = DlGrant::minimal(5, 1, data, ack);
        tl.schedule_dl(first).unwrap();
        let at = 5 + offset % (first.end() - 5);
        let r = if ul {
            tl.schedule_ul(UlGrant::minimal(at, 1, 2))
        } else {
            tl.schedule_dl(DlGrant::minimal(at, 1, 2, 1))
        };
        prop_assert!(r.is_err());
        prop_assert_eq!(tl.transactions.len(), 1);
        prop_assert!(matches!(tl.transactions[0], Transaction::Dl(_)));
    }

    #[test]
    fn coverage_level_is_monotone_in_rsrp(a in -150.0f64..-60.0, b in -150.0f64..-60.0) {
        let classes = mac::default_coverage_classes();
        let la = mac::select_coverage_level(a, &classes).unwrap().level;
        let lb = mac::select_coverage_level(b, &classes).unwrap().level;
        if a >= b {
            prop_assert!(la <= lb);
        }
    }

    /// With ideal msg1 detection every UE ends resolved or failed, never
    /// beyond the attempt limit, in the coverage class of its RSRP and with
    /// its capability read correctly from the preamble.
    #[test]
    fn random_access_terminates_consistently(n in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = mac::default_coverage_classes();
        let ues: Vec<UeContext> = (0..n)
            .map(|i| {
                use rand::Rng;
                UeContext::new(i as u32, rng.random_range(-130.0..-90.0), rng.random_bool(0.5))
            })
            .collect();
        let ra = RaConfig::default();
        let out = mac::random_access(&ues, &classes, &ra, &mut rng).unwrap();
        prop_assert_eq!(out.states.len(), n);
        for (ue, s) in ues.iter().zip(&out.states) {
            prop_assert!(matches!(s.step, RaStep::Resolved | RaStep::Failed));
            prop_assert!(s.attempt_count >= 1 && s.attempt_count <= ra.max_attempts);
            prop_assert_eq!(s.coverage_level, mac::select_coverage_level(ue.rsrp_dbm, &classes).unwrap().level);
            prop_assert!(s.inferred_multitone.is_none_or(|m| m == ue.multitone_capable));
            if s.step == RaStep::Resolved {
                prop_assert!(s.timing_advance_s.is_some());
            }
        }
        for ue in &ues {
            let times: Vec<u64> = out.trace.iter().filter(|e| e.ue_id == ue.id).map(|e| e.time_ms).collect();
            prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn coverage_thresholds_tie_to_better_level() {
    let classes = mac::default_coverage_classes();
    assert_eq!(
        mac::select_coverage_level(-110.0, &classes).unwrap().level,
        0
    );
    assert_eq!(
        mac::select_coverage_level(-110.01, &classes).unwrap().level,
        1
    );
    assert_eq!(
        mac::select_coverage_level(-120.0, &classes).unwrap().level,
        1
    );
    assert_eq!(
        mac::select_coverage_level(-170.0, &classes).unwrap().level,
        2
    );
    assert!(mac::select_coverage_level(-100.0, &[]).is_err());
}

#[test]
fn trace_csv_has_header_and_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = mac::random_access(
        &[UeContext::new(4, -95.0, true)],
        &mac::default_coverage_classes(),
        &RaConfig::default(),
        &mut rng,
    )
    .unwrap();
    let mut buf = Vec::new();
    mac::write_trace_csv(&out.trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("time_ms,ue_id,event,detail\n"));
    assert_eq!(text.lines().count(), out.trace.len() + 1);
}
