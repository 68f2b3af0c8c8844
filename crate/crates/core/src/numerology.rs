//! Frame timing, subcarrier numerologies and 100 kHz raster arithmetic.

use crate::error::{config_err, Result};

/// Baseband sample rate used for every waveform in the crate.
pub const SAMPLE_RATE_HZ: f64 = 1.92e6;
/// OFDM transform size at [`SAMPLE_RATE_HZ`] for 15 kHz subcarriers.
pub const FFT_SIZE: usize = 128;
pub const SUBCARRIERS: usize = 12;
pub const SYMBOLS_PER_SLOT: usize = 7;
pub const SYMBOLS_PER_SUBFRAME: usize = 14;
pub const SLOT_SAMPLES: usize = 960;
pub const SUBFRAME_SAMPLES: usize = 1920;
pub const FRAME_SAMPLES: usize = 19200;
pub const SUBFRAMES_PER_FRAME: u32 = 10;
/// The system frame number is a 10-bit counter.
pub const FRAME_NUMBER_MODULUS: u32 = 1024;
pub const PRB_BANDWIDTH_HZ: f64 = 180_000.0;
pub const RASTER_HZ: f64 = 100_000.0;
pub const DEFAULT_CARRIER_HZ: f64 = 900e6;
/// Largest distance from the 100 kHz raster at which an anchor carrier may sit.
pub const MAX_ANCHOR_RASTER_OFFSET_HZ: f64 = 7_500.0;

/// Cyclic prefix length in samples for symbol `l` (0..7) of a 15 kHz slot.
pub const fn cp_len(symbol_in_slot: usize) -> usize {
    if symbol_in_slot == 0 {
        10
    } else {
        9
    }
}

/// Start of the useful part (after CP) of symbol `l` (0..14) inside a subframe.
pub fn symbol_body_offset(symbol: usize) -> usize {
    let slot = symbol / SYMBOLS_PER_SLOT;
    let mut off = slot * SLOT_SAMPLES;
    for l in 0..symbol % SYMBOLS_PER_SLOT {
        off += cp_len(l) + FFT_SIZE;
    }
    off + cp_len(symbol % SYMBOLS_PER_SLOT)
}

/// Subcarrier numerology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Numerology {
    Khz15,
    Khz3_75,
}

impl Numerology {
    pub fn subcarrier_spacing_hz(self) -> f64 {
        match self {
            Numerology::Khz15 => 15_000.0,
            Numerology::Khz3_75 => 3_750.0,
        }
    }

    pub fn slot_duration_s(self) -> f64 {
        match self {
            Numerology::Khz15 => 0.5e-3,
            Numerology::Khz3_75 => 2e-3,
        }
    }

    pub fn symbols_per_slot(self) -> usize {
        SYMBOLS_PER_SLOT
    }

    /// Tones that fit into one 180 kHz PRB.
    pub fn tone_count(self) -> usize {
        match self {
            Numerology::Khz15 => 12,
            Numerology::Khz3_75 => 48,
        }
    }

    pub fn fft_size(self) -> usize {
        (SAMPLE_RATE_HZ / self.subcarrier_spacing_hz()) as usize
    }

    /// Cyclic prefix samples; the 3.75 kHz slot uses one CP length and ends
    /// with a guard period.
    pub fn cp_samples(self, symbol_in_slot: usize) -> usize {
        match self {
            Numerology::Khz15 => cp_len(symbol_in_slot),
            Numerology::Khz3_75 => 16,
        }
    }

    pub fn slot_samples(self) -> usize {
        (self.slot_duration_s() * SAMPLE_RATE_HZ).round() as usize
    }

    /// Trailing idle samples in a slot after the seventh symbol.
    pub fn slot_guard_samples(self) -> usize {
        let used: usize = (0..SYMBOLS_PER_SLOT)
            .map(|l| self.cp_samples(l) + self.fft_size())
            .sum();
        self.slot_samples() - used
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeploymentMode {
    StandAlone,
    InBand,
    GuardBand,
}

impl DeploymentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DeploymentMode::StandAlone => "standalone",
            DeploymentMode::InBand => "inband",
            DeploymentMode::GuardBand => "guardband",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "standalone" => Some(DeploymentMode::StandAlone),
            "inband" => Some(DeploymentMode::InBand),
            "guardband" => Some(DeploymentMode::GuardBand),
            _ => None,
        }
    }
}

/// LTE channel bandwidths that can host an NB-IoT carrier.
pub const LTE_BANDWIDTHS_MHZ: [u32; 5] = [3, 5, 10, 15, 20];

/// Number of PRBs in an LTE carrier of the given bandwidth.
pub fn lte_prb_count(lte_bandwidth_mhz: u32) -> Result<i64> {
    Ok(match lte_bandwidth_mhz {
        3 => 15,
        5 => 25,
        10 => 50,
        15 => 75,
        20 => 100,
        other => return config_err(format!("unsupported LTE bandwidth {other} MHz")),
    })
}

/// Center frequency of PRB `prb` relative to the LTE DC subcarrier.
///
/// Indexes outside `0..N` are virtual PRB slots continuing the same 180 kHz
/// grid into the guard band.
pub fn prb_center_offset_hz(lte_bandwidth_mhz: u32, prb: i64) -> Result<f64> {
    let n = lte_prb_count(lte_bandwidth_mhz)?;
    let scs = 15_000.0;
    let subcarriers = if n % 2 == 0 {
        let upper = n / 2;
        if prb >= upper {
            6.5 + 12.0 * (prb - upper) as f64
        } else {
            -(6.5 + 12.0 * (upper - 1 - prb) as f64)
        }
    } else {
        // The middle PRB straddles the unused DC subcarrier.
        let mid = (n - 1) / 2;
        match prb.cmp(&mid) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Greater => 12.0 * (prb - mid) as f64 + 0.5,
            std::cmp::Ordering::Less => -(12.0 * (mid - prb) as f64 + 0.5),
        }
    };
    Ok(subcarriers * scs)
}

/// Signed distance from `freq_hz` to the nearest 100 kHz raster point.
pub fn raster_distance_hz(freq_hz: f64) -> f64 {
    let d = freq_hz - (freq_hz / RASTER_HZ).round() * RASTER_HZ;
    // Snap floating-point dust so that exact offsets compare equal.
    (d * 1e6).round() / 1e6
}

/// PRBs overlapping the central 72 subcarriers (LTE sync and broadcast).
pub fn is_middle_prb(lte_bandwidth_mhz: u32, prb: i64) -> Result<bool> {
    let n = lte_prb_count(lte_bandwidth_mhz)?;
    Ok(if n % 2 == 0 {
        (n / 2 - 3..n / 2 + 3).contains(&prb)
    } else {
        let mid = (n - 1) / 2;
        (mid - 3..=mid + 3).contains(&prb)
    })
}

/// In-band PRB indexes usable as an anchor carrier.
pub fn anchor_prb_candidates(lte_bandwidth_mhz: u32) -> Result<Vec<i64>> {
    let n = lte_prb_count(lte_bandwidth_mhz)?;
    let mut out = Vec::new();
    for prb in 0..n {
        let center = prb_center_offset_hz(lte_bandwidth_mhz, prb)?;
        if raster_distance_hz(center).abs() <= MAX_ANCHOR_RASTER_OFFSET_HZ
            && !is_middle_prb(lte_bandwidth_mhz, prb)?
        {
            out.push(prb);
        }
    }
    Ok(out)
}

/// Virtual PRB slot of the first guard-band anchor above the LTE carrier.
pub fn guard_band_anchor_slot(lte_bandwidth_mhz: u32) -> Result<i64> {
    let n = lte_prb_count(lte_bandwidth_mhz)?;
    for prb in n..n + 20 {
        let center = prb_center_offset_hz(lte_bandwidth_mhz, prb)?;
        if raster_distance_hz(center).abs() <= MAX_ANCHOR_RASTER_OFFSET_HZ {
            return Ok(prb);
        }
    }
    config_err(format!(
        "no guard-band anchor slot for {lte_bandwidth_mhz} MHz"
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DeploymentConfig {
    pub mode: DeploymentMode,
    /// Required for in-band and guard-band deployments.
    pub lte_bandwidth_mhz: Option<u32>,
    /// In-band: PRB index inside the LTE carrier. Guard-band: optional
    /// virtual PRB slot outside `0..N` (defaults to the first anchor slot
    /// above the carrier).
    pub prb_index: Option<i64>,
    pub is_anchor: bool,
}

impl DeploymentConfig {
    pub fn standalone() -> Self {
        DeploymentConfig {
            mode: DeploymentMode::StandAlone,
            lte_bandwidth_mhz: None,
            prb_index: None,
            is_anchor: true,
        }
    }

    pub fn in_band(lte_bandwidth_mhz: u32, prb_index: i64) -> Self {
        DeploymentConfig {
            mode: DeploymentMode::InBand,
            lte_bandwidth_mhz: Some(lte_bandwidth_mhz),
            prb_index: Some(prb_index),
            is_anchor: true,
        }
    }

    pub fn guard_band(lte_bandwidth_mhz: u32) -> Self {
        DeploymentConfig {
            mode: DeploymentMode::GuardBand,
            lte_bandwidth_mhz: Some(lte_bandwidth_mhz),
            prb_index: None,
            is_anchor: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            DeploymentMode::StandAlone => Ok(()),
            DeploymentMode::InBand => {
                let bw = self.require_bandwidth()?;
                let n = lte_prb_count(bw)?;
                let Some(prb) = self.prb_index else {
                    return config_err("in-band deployment needs a PRB index");
                };
                if !(0..n).contains(&prb) {
                    return config_err(format!("PRB {prb} outside a {n}-PRB carrier"));
                }
                if self.is_anchor {
                    if is_middle_prb(bw, prb)? {
                        return config_err(format!(
                            "PRB {prb} is one of the middle PRBs of a {bw} MHz carrier"
                        ));
                    }
                    if !anchor_prb_candidates(bw)?.contains(&prb) {
                        return config_err(format!(
                            "PRB {prb} is more than 7.5 kHz off the 100 kHz raster"
                        ));
                    }
                }
                Ok(())
            }
            DeploymentMode::GuardBand => {
                let bw = self.require_bandwidth()?;
                let n = lte_prb_count(bw)?;
                if let Some(prb) = self.prb_index {
                    if (0..n).contains(&prb) {
                        return config_err(format!(
                            "guard-band slot {prb} lies inside the carrier"
                        ));
                    }
                    if self.is_anchor {
                        let center = prb_center_offset_hz(bw, prb)?;
                        if raster_distance_hz(center).abs() > MAX_ANCHOR_RASTER_OFFSET_HZ {
                            return config_err(format!(
                                "guard-band slot {prb} is more than 7.5 kHz off the raster"
                            ));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    fn require_bandwidth(&self) -> Result<u32> {
        match self.lte_bandwidth_mhz {
            Some(bw) => {
                lte_prb_count(bw)?;
                Ok(bw)
            }
            None => config_err(format!(
                "{} deployment needs an LTE bandwidth",
                self.mode.as_str()
            )),
        }
    }

    /// Center of the NB-IoT carrier relative to the LTE DC subcarrier.
    pub fn center_offset_hz(&self) -> Result<f64> {
        self.validate()?;
        match self.mode {
            DeploymentMode::StandAlone => Ok(0.0),
            DeploymentMode::InBand => {
                prb_center_offset_hz(self.require_bandwidth()?, self.prb_index.unwrap_or(0))
            }
            DeploymentMode::GuardBand => {
                let bw = self.require_bandwidth()?;
                let slot = match self.prb_index {
                    Some(p) => p,
                    None => guard_band_anchor_slot(bw)?,
                };
                prb_center_offset_hz(bw, slot)
            }
        }
    }
}

/// Offset of the carrier center from the nearest 100 kHz raster point.
pub fn raster_offset(config: &DeploymentConfig) -> Result<f64> {
    Ok(raster_distance_hz(config.center_offset_hz()?))
}

/// Position on the downlink frame structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TimingPosition {
    pub frame_number: u32,
    pub subframe_number: u32,
    pub slot_in_subframe: u32,
    pub sample_offset: u32,
}

impl TimingPosition {
    pub fn new(frame_number: u32, subframe_number: u32) -> Result<Self> {
        let p = TimingPosition {
            frame_number,
            subframe_number,
            slot_in_subframe: 0,
            sample_offset: 0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_number >= FRAME_NUMBER_MODULUS {
            return config_err(format!("frame number {} out of range", self.frame_number));
        }
        if self.subframe_number >= SUBFRAMES_PER_FRAME {
            return config_err(format!(
                "subframe number {} out of range",
                self.subframe_number
            ));
        }
        if self.slot_in_subframe > 1 {
            return config_err(format!("slot {} out of range", self.slot_in_subframe));
        }
        if self.sample_offset as usize >= SLOT_SAMPLES {
            return config_err(format!("sample offset {} out of range", self.sample_offset));
        }
        Ok(())
    }

    /// Subframe count since frame 0, subframe 0 of the current SFN cycle.
    pub fn absolute_subframe(&self) -> u64 {
        self.frame_number as u64 * SUBFRAMES_PER_FRAME as u64 + self.subframe_number as u64
    }

    pub fn from_absolute_subframe(sf: u64) -> Self {
        let cycle = FRAME_NUMBER_MODULUS as u64 * SUBFRAMES_PER_FRAME as u64;
        let sf = sf % cycle;
        TimingPosition {
            frame_number: (sf / SUBFRAMES_PER_FRAME as u64) as u32,
            subframe_number: (sf % SUBFRAMES_PER_FRAME as u64) as u32,
            slot_in_subframe: 0,
            sample_offset: 0,
        }
    }

    /// NSSS is only sent in even-numbered frames.
    pub fn is_nsss_frame(&self) -> bool {
        self.frame_number.is_multiple_of(2)
    }
}

/// Advance a position by whole subframes, wrapping at frame 1024.
pub fn timing_advance(position: TimingPosition, subframes: u64) -> TimingPosition {
    let mut next = TimingPosition::from_absolute_subframe(position.absolute_subframe() + subframes);
    next.slot_in_subframe = position.slot_in_subframe;
    next.sample_offset = position.sample_offset;
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_structures() {
        assert_eq!(Numerology::Khz15.slot_samples(), SLOT_SAMPLES);
        assert_eq!(Numerology::Khz15.slot_guard_samples(), 0);
        assert_eq!(Numerology::Khz3_75.fft_size(), 512);
        assert_eq!(Numerology::Khz3_75.slot_samples(), 3840);
        assert_eq!(Numerology::Khz3_75.slot_guard_samples(), 144);
        for n in [Numerology::Khz15, Numerology::Khz3_75] {
            assert_eq!(
                n.subcarrier_spacing_hz() * n.tone_count() as f64,
                PRB_BANDWIDTH_HZ
            );
        }
        assert_eq!(symbol_body_offset(0), 10);
        assert_eq!(symbol_body_offset(1), 147);
        assert_eq!(symbol_body_offset(7), 970);
        assert_eq!(symbol_body_offset(13) + FFT_SIZE, SUBFRAME_SAMPLES);
    }

    #[test]
    fn prb25_of_10mhz_sits_97_5_khz_above_dc() {
        assert_eq!(prb_center_offset_hz(10, 25).unwrap(), 97_500.0);
        assert_eq!(prb_center_offset_hz(10, 24).unwrap(), -97_500.0);
    }

    #[test]
    fn anchor_list_for_10mhz() {
        assert_eq!(
            anchor_prb_candidates(10).unwrap(),
            vec![4, 9, 14, 19, 30, 35, 40, 45]
        );
        assert!(!anchor_prb_candidates(10).unwrap().contains(&25));
    }

    #[test]
    fn unsupported_bandwidth() {
        assert!(matches!(
            anchor_prb_candidates(7),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn anchors_within_raster_distance_brute_force() {
        // Independent enumeration of every PRB center from its subcarrier span.
        for bw in LTE_BANDWIDTHS_MHZ {
            let n = lte_prb_count(bw).unwrap();
            let anchors = anchor_prb_candidates(bw).unwrap();
            assert!(!anchors.is_empty());
            // LTE subcarriers -6N..-1 and 1..6N (DC unused), chunked 12 per PRB.
            let subcarriers: Vec<i64> = (-6 * n..=6 * n).filter(|&k| k != 0).collect();
            for prb in 0..n {
                let sc = &subcarriers[(prb * 12) as usize..(prb * 12 + 12) as usize];
                let center = sc.iter().sum::<i64>() as f64 / 12.0 * 15_000.0;
                assert_eq!(center, prb_center_offset_hz(bw, prb).unwrap());
                let d = center - (center / 1e5).round() * 1e5;
                let near = d.abs() <= 7_500.0 + 1e-6;
                if anchors.contains(&prb) {
                    assert!(near, "{bw} MHz PRB {prb} at {center}");
                }
            }
            if n % 2 == 0 {
                for a in &anchors {
                    assert!(
                        anchors.contains(&(n - 1 - a)),
                        "asymmetric anchors for {bw} MHz"
                    );
                }
            }
        }
    }

    #[test]
    fn raster_offsets_by_bandwidth() {
        for bw in LTE_BANDWIDTHS_MHZ {
            let expected = if bw == 10 || bw == 20 {
                2_500.0
            } else {
                7_500.0
            };
            for prb in anchor_prb_candidates(bw).unwrap() {
                let off = raster_offset(&DeploymentConfig::in_band(bw, prb)).unwrap();
                assert_eq!(off.abs(), expected, "{bw} MHz PRB {prb}");
            }
            let gb = raster_offset(&DeploymentConfig::guard_band(bw)).unwrap();
            assert_eq!(gb.abs(), expected, "guard band {bw} MHz");
        }
        assert_eq!(raster_offset(&DeploymentConfig::standalone()).unwrap(), 0.0);
        assert_eq!(
            raster_offset(&DeploymentConfig::in_band(10, 30)).unwrap(),
            -2_500.0
        );
        assert_eq!(
            raster_offset(&DeploymentConfig::in_band(10, 19)).unwrap(),
            2_500.0
        );
    }

    #[test]
    fn invalid_in_band_configs() {
        assert!(DeploymentConfig::in_band(10, 25).validate().is_err());
        assert!(DeploymentConfig::in_band(10, 31).validate().is_err());
        assert!(DeploymentConfig::in_band(10, 50).validate().is_err());
        let mut no_bw = DeploymentConfig::in_band(10, 4);
        no_bw.lte_bandwidth_mhz = None;
        assert!(no_bw.validate().is_err());
        let mut secondary = DeploymentConfig::in_band(10, 31);
        secondary.is_anchor = false;
        assert!(secondary.validate().is_ok());
    }

    #[test]
    fn frame_counter_arithmetic() {
        let p = |f, s| TimingPosition::new(f, s).unwrap();
        assert_eq!(timing_advance(p(0, 9), 1), p(1, 0));
        assert_eq!(timing_advance(p(1023, 9), 1), p(0, 0));
        // (2*10 + 3 + 25) = 48 -> frame 4, subframe 8
        assert_eq!(timing_advance(p(2, 3), 25), p(4, 8));
        assert!(TimingPosition::new(1024, 0).is_err());
        assert!(TimingPosition::new(0, 10).is_err());
    }
}
