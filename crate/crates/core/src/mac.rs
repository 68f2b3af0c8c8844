//! Procedure layer: coverage classes, the four-step random access, the
//! single-process HARQ timeline and rate and link-budget calculators.
//!
//! Timeline intervals are half-open subframe ranges `[start, end)`. A gap is
//! the number of idle subframes between the end of one transmission and the
//! start of the next, so "NPDCCH ends at n, NPDSCH starts at n + 4" is a gap
//! of 4.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;

use crate::channel::{self, ChannelSpec};
use crate::error::{arg_err, config_err, Error, Result};
use crate::phy_dl::Direction;
use crate::phy_ul::{build_nprach, NprachConfig};
use crate::receiver::nprach_detect;
use crate::Waveform;

pub const MAX_COVERAGE_CLASSES: usize = 3;
pub const MIN_DL_DATA_GAP: u64 = 4;
pub const MIN_ACK_GAP: u64 = 12;
pub const MIN_UL_DATA_GAP: u64 = 8;
/// Idle subframes after a transaction before the next DCI.
pub const DEFAULT_TURNAROUND: u64 = 3;
pub const DEFAULT_RAR_WINDOW_MS: u64 = 10;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 10;

pub const PEAK_TBS_DL: usize = 680;
pub const PEAK_SUBFRAMES_DL: u64 = 3;
pub const PEAK_TBS_UL: usize = 1000;
pub const PEAK_SUBFRAMES_UL: u64 = 4;

// Coverage classes -------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageClass {
    pub level: u8,
    /// Lowest RSRP belonging to this class.
    pub rsrp_threshold_dbm: f64,
    pub nprach_config: NprachConfig,
    /// Cap on the open-loop preamble power.
    pub preamble_tx_power_dbm: f64,
}

impl CoverageClass {
    /// Open-loop preamble power: target received power plus the path loss
    /// implied by `rsrp_dbm`, capped.
    pub fn preamble_power_dbm(
        &self,
        rsrp_dbm: f64,
        reference_power_dbm: f64,
        target_rx_dbm: f64,
    ) -> f64 {
        (target_rx_dbm + reference_power_dbm - rsrp_dbm).min(self.preamble_tx_power_dbm)
    }
}

/// Three classes with 1/8/32 NPRACH repetitions and thresholds -110/-120 dBm.
pub fn default_coverage_classes() -> Vec<CoverageClass> {
    let base = NprachConfig::default();
    vec![
        CoverageClass {
            level: 0,
            rsrp_threshold_dbm: -110.0,
            nprach_config: base,
            preamble_tx_power_dbm: 23.0,
        },
        CoverageClass {
            level: 1,
            rsrp_threshold_dbm: -120.0,
            nprach_config: NprachConfig {
                repetitions: 8,
                periodicity_ms: 320,
                ..base
            },
            preamble_tx_power_dbm: 23.0,
        },
        CoverageClass {
            level: 2,
            rsrp_threshold_dbm: f64::NEG_INFINITY,
            nprach_config: NprachConfig {
                repetitions: 32,
                periodicity_ms: 640,
                ..base
            },
            preamble_tx_power_dbm: 23.0,
        },
    ]
}

pub fn validate_classes(classes: &[CoverageClass]) -> Result<()> {
    if classes.is_empty() || classes.len() > MAX_COVERAGE_CLASSES {
        return config_err(format!("1 to 3 coverage classes, got {}", classes.len()));
    }
    for (i, c) in classes.iter().enumerate() {
        if c.level as usize != i {
            return config_err(format!("class {i} has level {}", c.level));
        }
        c.nprach_config.validate()?;
        if i > 0 && c.rsrp_threshold_dbm >= classes[i - 1].rsrp_threshold_dbm {
            return config_err("RSRP thresholds must strictly decrease with level");
        }
    }
    Ok(())
}

/// The best class whose threshold the measurement reaches; a measurement
/// equal to a threshold belongs to that (better) class. The worst class
/// catches everything else.
pub fn select_coverage_level(
    measured_rsrp_dbm: f64,
    classes: &[CoverageClass],
) -> Result<&CoverageClass> {
    let Some(worst) = classes.last() else {
        return arg_err("no coverage classes configured");
    };
    Ok(classes
        .iter()
        .find(|c| measured_rsrp_dbm >= c.rsrp_threshold_dbm)
        .unwrap_or(worst))
}

// Event trace ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time_ms: u64,
    pub ue_id: u32,
    pub event: String,
    pub detail: String,
}

pub fn write_trace_csv<W: Write>(events: &[TraceEvent], mut w: W) -> Result<()> {
    writeln!(w, "time_ms,ue_id,event,detail")?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{}",
            e.time_ms,
            e.ue_id,
            e.event,
            e.detail.replace(',', ";")
        )?;
    }
    Ok(())
}

// Random access ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RaStep {
    Idle,
    Msg1Sent,
    RarReceived,
    Msg3Sent,
    Resolved,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomAccessState {
    pub step: RaStep,
    pub coverage_level: u8,
    pub chosen_subcarrier: Option<usize>,
    pub multitone_capable: bool,
    pub attempt_count: u32,
    /// Capability the network read from the preamble subcarrier.
    pub inferred_multitone: Option<bool>,
    /// Msg3 grant was multi-tone.
    pub multitone_grant: Option<bool>,
    pub timing_advance_s: Option<f64>,
    pub failure_reason: Option<String>,
}

impl RandomAccessState {
    pub fn new(coverage_level: u8, multitone_capable: bool) -> Self {
        RandomAccessState {
            step: RaStep::Idle,
            coverage_level,
            chosen_subcarrier: None,
            multitone_capable,
            attempt_count: 0,
            inferred_multitone: None,
            multitone_grant: None,
            timing_advance_s: None,
            failure_reason: None,
        }
    }

    /// Move to `next`, enforcing the four-step order. Any step may fail or
    /// fall back to `Idle` for a new attempt.
    pub fn advance(&mut self, next: RaStep) -> Result<()> {
        use RaStep::*;
        let ok = matches!(
            (self.step, next),
            (Idle, Msg1Sent)
                | (Msg1Sent, RarReceived)
                | (RarReceived, Msg3Sent)
                | (Msg3Sent, Resolved)
                | (Idle | Msg1Sent | RarReceived | Msg3Sent, Idle | Failed)
        );
        if !ok {
            return Err(Error::Scheduling(format!(
                "illegal random access transition {:?} -> {next:?}",
                self.step
            )));
        }
        self.step = next;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeContext {
    pub id: u32,
    pub rsrp_dbm: f64,
    pub multitone_capable: bool,
    /// Contention-resolution identity sent in msg3.
    pub identity: u64,
    /// Fixed preamble subcarrier for every attempt (tests); random if `None`.
    pub forced_subcarrier: Option<usize>,
    /// One-way propagation delay in seconds.
    pub delay_s: f64,
}

impl UeContext {
    pub fn new(id: u32, rsrp_dbm: f64, multitone_capable: bool) -> Self {
        UeContext {
            id,
            rsrp_dbm,
            multitone_capable,
            identity: 0x1000 + id as u64,
            forced_subcarrier: None,
            delay_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaConfig {
    pub rar_window_ms: u64,
    pub max_attempts: u32,
    /// Run msg1 through NPRACH waveforms and the detector at this SNR;
    /// `None` uses ideal preamble detection.
    pub phy_snr_db: Option<f64>,
    pub nb_pcid: u16,
    /// Subframes from msg1 end to the RAR.
    pub rar_delay_ms: u64,
    pub msg3_subframes: u64,
    pub backoff_max_ms: u64,
}

impl Default for RaConfig {
    fn default() -> Self {
        RaConfig {
            rar_window_ms: DEFAULT_RAR_WINDOW_MS,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            phy_snr_db: None,
            nb_pcid: 0,
            rar_delay_ms: 3,
            msg3_subframes: 4,
            backoff_max_ms: 160,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaOutcome {
    /// Final state per UE, in input order.
    pub states: Vec<RandomAccessState>,
    pub trace: Vec<TraceEvent>,
    /// Occasions where two or more UEs sent the same preamble.
    pub collisions: u32,
}

fn pick_subcarrier<R: Rng>(cfg: &NprachConfig, ue: &UeContext, rng: &mut R) -> usize {
    if let Some(s) = ue.forced_subcarrier {
        return s;
    }
    let side = if ue.multitone_capable {
        cfg.multi_tone_subcarriers()
    } else {
        cfg.single_tone_subcarriers()
    };
    rng.random_range(side)
}

/// Network-side msg1 detection for UEs transmitting on one occasion.
/// Returns detected subcarriers with their timing-advance estimates.
fn detect_msg1<R: Rng>(
    cfg: &NprachConfig,
    sent: &[(usize, f64)],
    ra: &RaConfig,
    rng: &mut R,
) -> Result<Vec<(usize, f64)>> {
    let Some(snr) = ra.phy_snr_db else {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for &(s, d) in sent {
            if !out.iter().any(|o| o.0 == s) {
                out.push((s, 2.0 * d));
            }
        }
        return Ok(out);
    };
    let mut sum: Option<Waveform> = None;
    for &(s, d) in sent {
        let (_, w) = build_nprach(cfg, s, ra.nb_pcid)?;
        let spec = ChannelSpec {
            delay_samples: 2.0 * d * w.sample_rate_hz,
            ..Default::default()
        };
        let y = channel::apply(&w, &spec);
        sum = Some(match sum {
            None => y,
            Some(mut acc) => {
                if y.samples.len() > acc.samples.len() {
                    acc.samples.resize(y.samples.len(), Default::default());
                }
                for (a, b) in acc.samples.iter_mut().zip(&y.samples) {
                    *a += b;
                }
                acc
            }
        });
    }
    let Some(total) = sum else {
        return Ok(Vec::new());
    };
    let noisy = channel::apply(&total, &ChannelSpec::awgn(snr, rng.random()));
    Ok(nprach_detect(&noisy.samples, cfg, ra.nb_pcid)?
        .into_iter()
        .map(|d| (d.start_subcarrier, d.timing_advance_s))
        .collect())
}

/// Run contention-based random access for `ues` until every UE resolves
/// or fails. UEs transmitting on the same NPRACH occasion and subcarrier
/// collide: the network answers the preamble once, all of them send msg3
/// on the same grant and msg4 echoes only the identity it decoded, that of
/// the strongest UE (lowest id on ties).
pub fn random_access<R: Rng>(
    ues: &[UeContext],
    classes: &[CoverageClass],
    ra: &RaConfig,
    rng: &mut R,
) -> Result<RaOutcome> {
    validate_classes(classes)?;
    let mut states: Vec<RandomAccessState> = Vec::with_capacity(ues.len());
    let mut ready_at: Vec<u64> = vec![0; ues.len()];
    for ue in ues {
        let class = select_coverage_level(ue.rsrp_dbm, classes)?;
        states.push(RandomAccessState::new(class.level, ue.multitone_capable));
    }
    let mut trace = Vec::new();
    let mut collisions = 0;
    let mut guard = 0u64;
    loop {
        let active: Vec<usize> = (0..ues.len())
            .filter(|&i| !matches!(states[i].step, RaStep::Resolved | RaStep::Failed))
            .collect();
        if active.is_empty() {
            break;
        }
        guard += 1;
        if guard > 100_000 {
            return Err(Error::Scheduling("random access did not terminate".into()));
        }
        // Next occasion of every active UE's class; serve the earliest.
        let next: Vec<u64> = (0..ues.len())
            .map(|i| {
                let c = &classes[states[i].coverage_level as usize].nprach_config;
                let p = c.periodicity_ms as u64;
                let s = c.start_time_ms as u64;
                let t = ready_at[i].max(s);
                s + (t - s).div_ceil(p) * p
            })
            .collect();
        let t = active.iter().map(|&i| next[i]).min().expect("non-empty");
        for level in 0..classes.len() as u8 {
            let group: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&i| states[i].coverage_level == level && next[i] == t)
                .collect();
            if group.is_empty() {
                continue;
            }
            let cfg = &classes[level as usize].nprach_config;
            let mut sent = Vec::new();
            for &i in &group {
                let s = pick_subcarrier(cfg, &ues[i], rng);
                states[i].attempt_count += 1;
                states[i].chosen_subcarrier = Some(s);
                states[i].advance(RaStep::Msg1Sent)?;
                sent.push((s, ues[i].delay_s));
                trace.push(TraceEvent {
                    time_ms: t,
                    ue_id: ues[i].id,
                    event: "msg1".into(),
                    detail: format!(
                        "level={level} subcarrier={s} attempt={}",
                        states[i].attempt_count
                    ),
                });
            }
            let msg1_end = t + (cfg.total_duration_s() * 1e3).ceil() as u64;
            let detected = detect_msg1(cfg, &sent, ra, rng)?;
            let rar_time = msg1_end + ra.rar_delay_ms;
            // Group UEs by preamble subcarrier.
            let mut by_sc: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &i in &group {
                by_sc
                    .entry(states[i].chosen_subcarrier.expect("set above"))
                    .or_default()
                    .push(i);
            }
            for (sc, members) in by_sc {
                if members.len() > 1 {
                    collisions += 1;
                }
                let hit = detected.iter().find(|d| d.0 == sc).copied();
                let within = ra.rar_delay_ms <= ra.rar_window_ms;
                let Some((_, ta)) = hit.filter(|_| within) else {
                    for &i in &members {
                        retry(
                            &mut states[i],
                            &mut ready_at[i],
                            &mut trace,
                            ues[i].id,
                            msg1_end + ra.rar_window_ms,
                            "no RAR in window",
                            ra,
                            rng,
                        )?;
                    }
                    continue;
                };
                let inferred = cfg.signals_multitone(sc);
                let msg3_start = rar_time + 1 + MIN_UL_DATA_GAP;
                for &i in &members {
                    states[i].advance(RaStep::RarReceived)?;
                    states[i].inferred_multitone = Some(inferred);
                    states[i].multitone_grant = Some(inferred);
                    states[i].timing_advance_s = Some(ta);
                    trace.push(TraceEvent {
                        time_ms: rar_time,
                        ue_id: ues[i].id,
                        event: "msg2".into(),
                        detail: format!(
                            "ta_us={:.2} grant={}",
                            ta * 1e6,
                            if inferred {
                                "multi-tone"
                            } else {
                                "single-tone"
                            }
                        ),
                    });
                    states[i].advance(RaStep::Msg3Sent)?;
                    trace.push(TraceEvent {
                        time_ms: msg3_start,
                        ue_id: ues[i].id,
                        event: "msg3".into(),
                        detail: format!("identity={:#x}", ues[i].identity),
                    });
                }
                let winner = members
                    .iter()
                    .copied()
                    .max_by(|&a, &b| {
                        ues[a]
                            .rsrp_dbm
                            .total_cmp(&ues[b].rsrp_dbm)
                            .then(ues[b].id.cmp(&ues[a].id))
                    })
                    .expect("non-empty");
                let msg4_time = msg3_start + ra.msg3_subframes + MIN_DL_DATA_GAP;
                for &i in &members {
                    if i == winner {
                        states[i].advance(RaStep::Resolved)?;
                        trace.push(TraceEvent {
                            time_ms: msg4_time,
                            ue_id: ues[i].id,
                            event: "msg4".into(),
                            detail: format!("resolved identity={:#x}", ues[i].identity),
                        });
                    } else {
                        retry(
                            &mut states[i],
                            &mut ready_at[i],
                            &mut trace,
                            ues[i].id,
                            msg4_time,
                            "contention lost",
                            ra,
                            rng,
                        )?;
                    }
                }
            }
        }
    }
    Ok(RaOutcome {
        states,
        trace,
        collisions,
    })
}

#[allow(clippy::too_many_arguments)]
fn retry<R: Rng>(
    st: &mut RandomAccessState,
    ready_at: &mut u64,
    trace: &mut Vec<TraceEvent>,
    ue_id: u32,
    now: u64,
    reason: &str,
    ra: &RaConfig,
    rng: &mut R,
) -> Result<()> {
    if st.attempt_count >= ra.max_attempts {
        st.advance(RaStep::Failed)?;
        st.failure_reason = Some(format!("{reason}; {} attempts exhausted", st.attempt_count));
        trace.push(TraceEvent {
            time_ms: now,
            ue_id,
            event: "failed".into(),
            detail: reason.into(),
        });
    } else {
        st.advance(RaStep::Idle)?;
        let backoff = if ra.backoff_max_ms > 0 {
            rng.random_range(0..=ra.backoff_max_ms)
        } else {
            0
        };
        *ready_at = now + 1 + backoff;
        trace.push(TraceEvent {
            time_ms: now,
            ue_id,
            event: "retry".into(),
            detail: format!("{reason}; backoff={backoff}"),
        });
    }
    Ok(())
}

// HARQ timeline ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimelineChannel {
    Npdcch,
    Npdsch,
    Npusch,
    HarqAck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActiveHarq {
    None,
    DlPending,
    UlPending,
}

/// Downlink assignment: DCI, data and the HARQ-ACK on NPUSCH format 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DlGrant {
    pub dci_start: u64,
    pub dci_subframes: u64,
    pub data_start: u64,
    pub data_subframes: u64,
    pub ack_start: u64,
    pub ack_subframes: u64,
}

/// Uplink grant: DCI and NPUSCH data; the next DCI carries the feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UlGrant {
    pub dci_start: u64,
    pub dci_subframes: u64,
    pub data_start: u64,
    pub data_subframes: u64,
}

impl DlGrant {
    /// Earliest legal grant for a DCI at `dci_start` with the given lengths.
    pub fn minimal(
        dci_start: u64,
        dci_subframes: u64,
        data_subframes: u64,
        ack_subframes: u64,
    ) -> Self {
        let data_start = dci_start + dci_subframes + MIN_DL_DATA_GAP;
        let ack_start = data_start + data_subframes + MIN_ACK_GAP;
        DlGrant {
            dci_start,
            dci_subframes,
            data_start,
            data_subframes,
            ack_start,
            ack_subframes,
        }
    }

    pub fn end(&self) -> u64 {
        self.ack_start + self.ack_subframes
    }
}

impl UlGrant {
    pub fn minimal(dci_start: u64, dci_subframes: u64, data_subframes: u64) -> Self {
        UlGrant {
            dci_start,
            dci_subframes,
            data_start: dci_start + dci_subframes + MIN_UL_DATA_GAP,
            data_subframes,
        }
    }

    pub fn end(&self) -> u64 {
        self.data_start + self.data_subframes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transaction {
    Dl(DlGrant),
    Ul(UlGrant),
}

impl Transaction {
    pub fn end(&self) -> u64 {
        match self {
            Transaction::Dl(g) => g.end(),
            Transaction::Ul(g) => g.end(),
        }
    }

    pub fn start(&self) -> u64 {
        match self {
            Transaction::Dl(g) => g.dci_start,
            Transaction::Ul(g) => g.dci_start,
        }
    }
}

/// Subframe ledger of one UE. Transactions are serialized: a DCI may only
/// start once the previous transaction, including its HARQ-ACK, is over.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScheduleTimeline {
    pub occupancy: BTreeMap<u64, (TimelineChannel, Direction)>,
    pub transactions: Vec<Transaction>,
}

impl ScheduleTimeline {
    pub fn new() -> Self {
        Self::default()
    }

    /// HARQ state at subframe `t`.
    pub fn active_harq(&self, t: u64) -> ActiveHarq {
        for tr in &self.transactions {
            if tr.start() <= t && t < tr.end() {
                return match tr {
                    Transaction::Dl(_) => ActiveHarq::DlPending,
                    Transaction::Ul(_) => ActiveHarq::UlPending,
                };
            }
        }
        ActiveHarq::None
    }

    /// Subframe after which a new DCI may start.
    pub fn busy_until(&self) -> u64 {
        self.transactions.iter().map(|t| t.end()).max().unwrap_or(0)
    }

    /// Transactions whose HARQ-ACK is still outstanding at `t`.
    pub fn pending_at(&self, t: u64) -> usize {
        self.transactions
            .iter()
            .filter(|tr| tr.start() <= t && t < tr.end())
            .count()
    }

    fn check_free(&self, ranges: &[(u64, u64)]) -> Result<()> {
        for &(s, len) in ranges {
            if len == 0 {
                return Err(Error::Scheduling(
                    "transmissions need at least one subframe".into(),
                ));
            }
            if let Some((sf, _)) = self.occupancy.range(s..s + len).next() {
                return Err(Error::Scheduling(format!("subframe {sf} already occupied")));
            }
        }
        Ok(())
    }

    fn check_serial(&self, dci_start: u64) -> Result<()> {
        let busy = self.busy_until();
        if !self.transactions.is_empty() && dci_start < busy {
            return Err(Error::Scheduling(format!(
                "a HARQ process is active until subframe {busy}; only one is allowed"
            )));
        }
        Ok(())
    }

    fn occupy(&mut self, start: u64, len: u64, ch: TimelineChannel, dir: Direction) {
        for sf in start..start + len {
            self.occupancy.insert(sf, (ch, dir));
        }
    }

    pub fn schedule_dl(&mut self, g: DlGrant) -> Result<()> {
        check_dl_gaps(&g)?;
        self.check_serial(g.dci_start)?;
        self.check_free(&[
            (g.dci_start, g.dci_subframes),
            (g.data_start, g.data_subframes),
            (g.ack_start, g.ack_subframes),
        ])?;
        self.occupy(
            g.dci_start,
            g.dci_subframes,
            TimelineChannel::Npdcch,
            Direction::Dl,
        );
        self.occupy(
            g.data_start,
            g.data_subframes,
            TimelineChannel::Npdsch,
            Direction::Dl,
        );
        self.occupy(
            g.ack_start,
            g.ack_subframes,
            TimelineChannel::HarqAck,
            Direction::Ul,
        );
        self.transactions.push(Transaction::Dl(g));
        Ok(())
    }

    pub fn schedule_ul(&mut self, g: UlGrant) -> Result<()> {
        check_ul_gaps(&g)?;
        self.check_serial(g.dci_start)?;
        self.check_free(&[
            (g.dci_start, g.dci_subframes),
            (g.data_start, g.data_subframes),
        ])?;
        self.occupy(
            g.dci_start,
            g.dci_subframes,
            TimelineChannel::Npdcch,
            Direction::Ul,
        );
        self.occupy(
            g.data_start,
            g.data_subframes,
            TimelineChannel::Npusch,
            Direction::Ul,
        );
        self.transactions.push(Transaction::Ul(g));
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "subframe,channel,direction")?;
        for (sf, (ch, dir)) in &self.occupancy {
            writeln!(w, "{sf},{ch:?},{dir:?}")?;
        }
        Ok(())
    }
}

fn check_dl_gaps(g: &DlGrant) -> Result<()> {
    if g.data_start < g.dci_start + g.dci_subframes + MIN_DL_DATA_GAP {
        return Err(Error::Scheduling(format!(
            "NPDSCH at {} is less than {MIN_DL_DATA_GAP} subframes after NPDCCH end {}",
            g.data_start,
            g.dci_start + g.dci_subframes
        )));
    }
    if g.ack_start < g.data_start + g.data_subframes + MIN_ACK_GAP {
        return Err(Error::Scheduling(format!(
            "HARQ-ACK at {} is less than {MIN_ACK_GAP} subframes after NPDSCH end {}",
            g.ack_start,
            g.data_start + g.data_subframes
        )));
    }
    Ok(())
}

fn check_ul_gaps(g: &UlGrant) -> Result<()> {
    if g.data_start < g.dci_start + g.dci_subframes + MIN_UL_DATA_GAP {
        return Err(Error::Scheduling(format!(
            "NPUSCH at {} is less than {MIN_UL_DATA_GAP} subframes after NPDCCH end {}",
            g.data_start,
            g.dci_start + g.dci_subframes
        )));
    }
    Ok(())
}

// Rate and link budget calculators --------------------------------------

/// Layer-1 peak rate in bits per second.
pub fn peak_rate(direction: Direction) -> f64 {
    match direction {
        Direction::Dl => PEAK_TBS_DL as f64 / (PEAK_SUBFRAMES_DL as f64 * 1e-3),
        Direction::Ul => PEAK_TBS_UL as f64 / (PEAK_SUBFRAMES_UL as f64 * 1e-3),
    }
}

/// Gap and length choices of one HARQ cycle, in subframes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CycleGaps {
    pub dci_subframes: u64,
    pub data_gap: u64,
    pub ack_gap: u64,
    pub ack_subframes: u64,
    pub turnaround: u64,
}

impl CycleGaps {
    pub fn minimal(direction: Direction) -> Self {
        CycleGaps {
            dci_subframes: 1,
            data_gap: match direction {
                Direction::Dl => MIN_DL_DATA_GAP,
                Direction::Ul => MIN_UL_DATA_GAP,
            },
            ack_gap: MIN_ACK_GAP,
            ack_subframes: 1,
            turnaround: DEFAULT_TURNAROUND,
        }
    }
}

/// Subframes of one full HARQ cycle.
pub fn cycle_subframes(
    direction: Direction,
    tx_subframes: u64,
    repetitions: u64,
    gaps: &CycleGaps,
) -> Result<u64> {
    if tx_subframes == 0 || repetitions == 0 || gaps.dci_subframes == 0 {
        return arg_err("subframe and repetition counts must be positive");
    }
    let data = tx_subframes * repetitions;
    match direction {
        Direction::Dl => {
            if gaps.data_gap < MIN_DL_DATA_GAP
                || gaps.ack_gap < MIN_ACK_GAP
                || gaps.ack_subframes == 0
            {
                return arg_err("downlink gaps below the 4/12 subframe minima");
            }
            Ok(gaps.dci_subframes
                + gaps.data_gap
                + data
                + gaps.ack_gap
                + gaps.ack_subframes
                + gaps.turnaround)
        }
        Direction::Ul => {
            if gaps.data_gap < MIN_UL_DATA_GAP {
                return arg_err("uplink gap below the 8 subframe minimum");
            }
            Ok(gaps.dci_subframes + gaps.data_gap + data + gaps.turnaround)
        }
    }
}

/// Throughput when HARQ cycles run back to back.
pub fn sustained_rate(
    direction: Direction,
    tbs: usize,
    tx_subframes: u64,
    repetitions: u64,
    gaps: &CycleGaps,
) -> Result<f64> {
    let n = cycle_subframes(direction, tx_subframes, repetitions, gaps)?;
    Ok(tbs as f64 / (n as f64 * 1e-3))
}

/// Maximum coupling loss in dB.
pub fn link_budget(
    tx_power_dbm: f64,
    noise_figure_db: f64,
    bandwidth_hz: f64,
    required_snr_db: f64,
) -> Result<f64> {
    if !(bandwidth_hz > 0.0) {
        return arg_err("bandwidth must be positive");
    }
    Ok(tx_power_dbm - (-174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db + required_snr_db))
}

/// Reference uplink link budget entry: single-tone 15 kHz NPUSCH with 128
/// repetitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudgetEntry {
    pub name: &'static str,
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub bandwidth_hz: f64,
    pub repetitions: u32,
    pub tbs: usize,
    /// Required SNR at 10% BLER with `repetitions`, extrapolated from the
    /// simulated single-transmission value at `MCL_REFERENCE_BASE_REPS`
    /// repetitions by ideal combining gain.
    pub required_snr_db: f64,
}

/// Repetitions at which the reference required SNR was simulated.
pub const MCL_REFERENCE_BASE_REPS: u32 = 8;
/// Simulated 10% BLER SNR of single-tone NPUSCH (TBS 16, one resource unit,
/// pi/2-BPSK) with `MCL_REFERENCE_BASE_REPS` repetitions.
pub const MCL_REFERENCE_BASE_SNR_DB: f64 = -8.8;

pub fn reference_link_budget() -> LinkBudgetEntry {
    let extra = 10.0 * (128.0 / MCL_REFERENCE_BASE_REPS as f64).log10();
    LinkBudgetEntry {
        name: "npusch-single-tone-15k-rep128",
        tx_power_dbm: 23.0,
        noise_figure_db: 5.0,
        bandwidth_hz: 15_000.0,
        repetitions: 128,
        tbs: 16,
        required_snr_db: MCL_REFERENCE_BASE_SNR_DB - extra,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn coverage_selection() {
        let c = default_coverage_classes();
        validate_classes(&c).unwrap();
        assert_eq!(select_coverage_level(-100.0, &c).unwrap().level, 0);
        assert_eq!(select_coverage_level(-110.0, &c).unwrap().level, 0);
        assert_eq!(select_coverage_level(-110.01, &c).unwrap().level, 1);
        assert_eq!(select_coverage_level(-150.0, &c).unwrap().level, 2);
        assert!(select_coverage_level(-100.0, &[]).is_err());
        let mut bad = c.clone();
        bad[1].rsrp_threshold_dbm = -100.0;
        assert!(validate_classes(&bad).is_err());
    }

    #[test]
    fn gap_examples() {
        let mut t = ScheduleTimeline::new();
        let ok = DlGrant::minimal(10, 1, 3, 1);
        assert_eq!(ok.data_start, 15);
        let bad = DlGrant {
            data_start: 14,
            ack_start: 14 + 3 + 12,
            ..ok
        };
        assert!(t.clone().schedule_dl(bad).is_err());
        let late_ack = DlGrant {
            ack_start: ok.ack_start - 1,
            ..ok
        };
        assert!(t.clone().schedule_dl(late_ack).is_err());
        t.schedule_dl(ok).unwrap();
        // A second process while the first awaits its ACK.
        assert!(t
            .clone()
            .schedule_ul(UlGrant::minimal(ok.data_start + 5, 1, 4))
            .is_err());
        let ul = UlGrant::minimal(ok.end(), 1, 4);
        assert_eq!(ul.data_start, ok.end() + 9);
        assert!(t
            .clone()
            .schedule_ul(UlGrant {
                data_start: ul.data_start - 1,
                ..ul
            })
            .is_err());
        t.schedule_ul(ul).unwrap();
        assert_eq!(t.pending_at(ul.data_start), 1);
    }

    #[test]
    fn rates() {
        assert!((peak_rate(Direction::Dl) - 226_666.67).abs() < 1.0);
        assert_eq!(peak_rate(Direction::Ul), 250_000.0);
        let dl =
            sustained_rate(Direction::Dl, 680, 3, 1, &CycleGaps::minimal(Direction::Dl)).unwrap();
        assert!((dl - 680.0 / 24e-3).abs() < 1e-6);
        let ul = sustained_rate(
            Direction::Ul,
            16,
            8,
            128,
            &CycleGaps::minimal(Direction::Ul),
        )
        .unwrap();
        assert!(ul > 20.0 / 3.0 && ul < 60.0, "{ul}");
        let bad = CycleGaps {
            data_gap: 3,
            ..CycleGaps::minimal(Direction::Dl)
        };
        assert!(sustained_rate(Direction::Dl, 680, 3, 1, &bad).is_err());
    }

    #[test]
    fn link_budget_examples() {
        let m = link_budget(23.0, 5.0, 15_000.0, -11.8).unwrap();
        assert!((m - 162.04).abs() < 0.01, "{m}");
        let half = link_budget(23.0, 5.0, 7_500.0, -11.8).unwrap();
        assert!((half - m - 10.0 * 2f64.log10()).abs() < 1e-12);
        assert!(link_budget(23.0, 5.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn ra_single_and_contention() {
        let classes = default_coverage_classes();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = random_access(
            &[UeContext::new(1, -90.0, false)],
            &classes,
            &RaConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.states[0].step, RaStep::Resolved);
        assert_eq!(out.states[0].attempt_count, 1);

        let mut a = UeContext::new(1, -95.0, false);
        let mut b = UeContext::new(2, -90.0, false);
        a.forced_subcarrier = Some(3);
        b.forced_subcarrier = Some(3);
        let cfg = RaConfig {
            max_attempts: 1,
            ..Default::default()
        };
        let out = random_access(&[a, b], &classes, &cfg, &mut rng).unwrap();
        let resolved = out
            .states
            .iter()
            .filter(|s| s.step == RaStep::Resolved)
            .count();
        assert_eq!(resolved, 1);
        assert_eq!(out.collisions, 1);
        assert_eq!(out.states[1].step, RaStep::Resolved);
        assert!(out.states[0].failure_reason.is_some());
    }

    #[test]
    fn ra_transitions_are_ordered() {
        let mut s = RandomAccessState::new(0, true);
        assert!(s.advance(RaStep::RarReceived).is_err());
        s.advance(RaStep::Msg1Sent).unwrap();
        assert!(s.advance(RaStep::Resolved).is_err());
    }
}
