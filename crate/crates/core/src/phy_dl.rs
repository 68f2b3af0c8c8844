//! Downlink transmit chains: NPSS, NSSS, NPBCH, NPDCCH and NPDSCH onto
//! subframe grids, and OFDM serialization of grid sequences.
//!
//! NPBCH: the 34-bit MIB gets CRC24A, TBCC (174 bits) and is rate matched
//! to 1600 bits. Sub-block `i` is bits `200i..200i+200`, scrambled with a
//! Gold sequence seeded by `(pcid, i)`, QPSK-mapped to the 100 NPBCH
//! elements and sent in subframe 0 of 8 consecutive frames. Each sub-block
//! alone is a rate-0.29 codeword of the whole MIB.

use num_complex::Complex64;
use rand::Rng;

use crate::coding::{self, Channel, ModScheme, TransportBlock, TBS_LADDER_DL, TBS_LADDER_UL};
use crate::error::{arg_err, Result};
use crate::grid::{
    data_capacity, data_positions, insert_nrs, map_channel, map_channel_in, ncce_subcarriers,
    subframe_role, CellConfig, ChannelKind, ResourceGrid, SubframeRole, NPBCH_RES,
};
use crate::numerology::{DeploymentMode, TimingPosition, PRB_BANDWIDTH_HZ, SUBCARRIERS};
use crate::ofdm::modulate_subframe;
use crate::sequences::{generate_npss, generate_nsss, gold_sequence, seed};
use crate::{Bit, Waveform};

pub const NPBCH_SUBBLOCKS: usize = 8;
pub const NPBCH_REPETITIONS: usize = 8;
pub const NPBCH_SUBBLOCK_BITS: usize = 2 * NPBCH_RES;
pub const NPBCH_CODED_BITS: usize = NPBCH_SUBBLOCKS * NPBCH_SUBBLOCK_BITS;
pub const NPBCH_TTI_FRAMES: u32 = 64;

pub const DL_REPETITIONS: [u32; 10] = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512];
pub const DL_TIME_OFFSETS: [u32; 5] = [4, 8, 16, 32, 64];
pub const UL_TIME_OFFSETS: [u32; 4] = [8, 16, 32, 64];
/// Highest code rate NPDSCH is scheduled at when sizing subframe counts.
pub const NPDSCH_MAX_CODE_RATE: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mib {
    /// SFN bits 9..6: the 640 ms TTI index.
    pub sfn_msbs: u8,
    pub deployment_mode: DeploymentMode,
    /// 28 opaque bits standing in for scheduling information.
    pub system_info_stub: u32,
}

impl Mib {
    pub fn new(sfn: u32, deployment_mode: DeploymentMode, stub: u32) -> Self {
        Mib {
            sfn_msbs: ((sfn >> 6) & 0xF) as u8,
            deployment_mode,
            system_info_stub: stub & 0x0FFF_FFFF,
        }
    }

    pub fn payload_bits(&self) -> Vec<Bit> {
        let mode = match self.deployment_mode {
            DeploymentMode::StandAlone => 0u32,
            DeploymentMode::InBand => 1,
            DeploymentMode::GuardBand => 2,
        };
        let word =
            ((self.sfn_msbs as u64) << 30) | ((mode as u64) << 28) | self.system_info_stub as u64;
        (0..34).rev().map(|i| ((word >> i) & 1) as Bit).collect()
    }

    pub fn from_bits(bits: &[Bit]) -> Result<Self> {
        if bits.len() != 34 {
            return arg_err("MIB is 34 bits");
        }
        let word = bits.iter().fold(0u64, |a, &b| (a << 1) | b as u64);
        let deployment_mode = match (word >> 28) & 3 {
            0 => DeploymentMode::StandAlone,
            1 => DeploymentMode::InBand,
            2 => DeploymentMode::GuardBand,
            _ => return arg_err("reserved deployment mode value"),
        };
        Ok(Mib {
            sfn_msbs: ((word >> 30) & 0xF) as u8,
            deployment_mode,
            system_info_stub: (word & 0x0FFF_FFFF) as u32,
        })
    }

    pub fn first_frame(&self) -> u32 {
        self.sfn_msbs as u32 * NPBCH_TTI_FRAMES
    }
}

/// Rate-matched NPBCH bits before scrambling.
pub fn npbch_codeword(mib: &Mib) -> Vec<Bit> {
    let tb = TransportBlock::new(mib.payload_bits(), Channel::Npbch).expect("MIB size is fixed");
    let coded = coding::tbcc_encode(&tb).expect("NPBCH is a downlink channel");
    coding::rate_match(&coded, NPBCH_CODED_BITS).expect("non-zero target")
}

pub fn npbch_scrambling(nb_pcid: u16, sub_block: usize) -> Vec<Bit> {
    gold_sequence(seed::npbch(nb_pcid, sub_block as u32), NPBCH_SUBBLOCK_BITS)
}

/// QPSK symbols of sub-block `i`.
pub fn npbch_subblock_symbols(mib: &Mib, cell: &CellConfig, sub_block: usize) -> Vec<Complex64> {
    let cw = npbch_codeword(mib);
    let scr = npbch_scrambling(cell.nb_pcid, sub_block);
    let bits: Vec<Bit> = cw[sub_block * NPBCH_SUBBLOCK_BITS..(sub_block + 1) * NPBCH_SUBBLOCK_BITS]
        .iter()
        .zip(&scr)
        .map(|(a, b)| a ^ b)
        .collect();
    coding::modulate(&bits, ModScheme::Qpsk)
        .expect("even length")
        .symbols
}

pub fn npbch_subframe(mib: &Mib, cell: &CellConfig, frame: u32) -> Result<ResourceGrid> {
    let position = TimingPosition::new(frame % 1024, 0)?;
    let mut g = ResourceGrid::new(position, cell);
    let sub_block = ((frame % NPBCH_TTI_FRAMES) / 8) as usize;
    map_channel(
        &mut g,
        &npbch_subblock_symbols(mib, cell, sub_block),
        ChannelKind::Npbch,
        cell,
    )?;
    insert_nrs(&mut g, cell);
    Ok(g)
}

/// The 64 NPBCH subframes of the MIB's 640 ms TTI.
pub fn build_npbch_tti(mib: &Mib, cell: &CellConfig) -> Result<Vec<ResourceGrid>> {
    (0..NPBCH_TTI_FRAMES)
        .map(|j| npbch_subframe(mib, cell, mib.first_frame() + j))
        .collect()
}

pub fn npss_subframe(frame: u32, cell: &CellConfig) -> Result<ResourceGrid> {
    let mut g = ResourceGrid::new(TimingPosition::new(frame % 1024, 5)?, cell);
    map_channel(
        &mut g,
        &generate_npss().symbols.concat(),
        ChannelKind::Npss,
        cell,
    )?;
    Ok(g)
}

pub fn nsss_subframe(frame: u32, cell: &CellConfig) -> Result<ResourceGrid> {
    let mut g = ResourceGrid::new(TimingPosition::new(frame % 1024, 9)?, cell);
    map_channel(
        &mut g,
        &generate_nsss(cell.nb_pcid, frame)?.values,
        ChannelKind::Nsss,
        cell,
    )?;
    Ok(g)
}

// DCI ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Dl,
    Ul,
}

/// 23-bit DCI: direction 1, TBS index 4, repetition index 4, time-offset
/// index 3, NDI 1, resource field 6, spare 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dci {
    pub direction: Direction,
    pub tbs_index: u8,
    pub repetition_index: u8,
    pub time_offset_index: u8,
    pub new_data_indicator: bool,
    /// UL: subcarrier allocation index. DL: HARQ-ACK resource.
    pub resource: u8,
}

impl Dci {
    pub fn tbs(&self) -> Result<usize> {
        let table: &[usize] = match self.direction {
            Direction::Dl => &TBS_LADDER_DL,
            Direction::Ul => &TBS_LADDER_UL,
        };
        table
            .get(self.tbs_index as usize)
            .copied()
            .ok_or_else(|| crate::Error::InvalidArgument(format!("TBS index {}", self.tbs_index)))
    }

    pub fn repetitions(&self) -> Result<u32> {
        let max = match self.direction {
            Direction::Dl => 9,
            Direction::Ul => 7,
        };
        if self.repetition_index > max {
            return arg_err(format!("repetition index {}", self.repetition_index));
        }
        Ok(1 << self.repetition_index)
    }

    pub fn time_offset_subframes(&self) -> Result<u32> {
        let table: &[u32] = match self.direction {
            Direction::Dl => &DL_TIME_OFFSETS,
            Direction::Ul => &UL_TIME_OFFSETS,
        };
        table
            .get(self.time_offset_index as usize)
            .copied()
            .ok_or_else(|| {
                crate::Error::InvalidArgument(format!(
                    "time offset index {}",
                    self.time_offset_index
                ))
            })
    }

    pub fn to_bits(&self) -> Vec<Bit> {
        let fields: [(u32, u32); 7] = [
            ((self.direction == Direction::Ul) as u32, 1),
            (self.tbs_index as u32, 4),
            (self.repetition_index as u32, 4),
            (self.time_offset_index as u32, 3),
            (self.new_data_indicator as u32, 1),
            (self.resource as u32, 6),
            (0, 4),
        ];
        let mut out = Vec::with_capacity(23);
        for (v, w) in fields {
            out.extend((0..w).rev().map(|i| ((v >> i) & 1) as Bit));
        }
        out
    }

    pub fn from_bits(bits: &[Bit]) -> Result<Self> {
        if bits.len() != 23 {
            return arg_err("DCI is 23 bits");
        }
        let mut pos = 0;
        let mut take = |w: usize| {
            let v = bits[pos..pos + w]
                .iter()
                .fold(0u32, |a, &b| (a << 1) | b as u32);
            pos += w;
            v
        };
        let direction = if take(1) == 1 {
            Direction::Ul
        } else {
            Direction::Dl
        };
        Ok(Dci {
            direction,
            tbs_index: take(4) as u8,
            repetition_index: take(4) as u8,
            time_offset_index: take(3) as u8,
            new_data_indicator: take(1) == 1,
            resource: take(6) as u8,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregationLevel {
    Al1,
    Al2,
}

/// Data elements one DCI occupies per subframe.
pub fn npdcch_res(cell: &CellConfig, al: AggregationLevel, ncce: usize) -> usize {
    match al {
        AggregationLevel::Al2 => data_capacity(cell),
        AggregationLevel::Al1 => data_positions(cell, ncce_subcarriers(ncce)).len(),
    }
}

/// Information bits (DCI + CRC16) over coded bits per subframe.
pub fn npdcch_code_rate(cell: &CellConfig, al: AggregationLevel) -> f64 {
    (coding::DCI_BITS + 16) as f64 / (2 * npdcch_res(cell, al, 0)) as f64
}

pub fn npdcch_symbols(
    dci: &Dci,
    cell: &CellConfig,
    al: AggregationLevel,
    ncce: usize,
) -> Vec<Complex64> {
    let tb = TransportBlock::new(dci.to_bits(), Channel::Npdcch).expect("DCI size is fixed");
    let coded = coding::tbcc_encode(&tb).expect("downlink");
    let bits = coding::rate_match(&coded, 2 * npdcch_res(cell, al, ncce)).expect("non-zero");
    coding::modulate(&bits, ModScheme::Qpsk)
        .expect("even")
        .symbols
}

/// Pool subframes at or after `start`, in order.
pub fn pool_subframes(start: TimingPosition, count: usize) -> Vec<TimingPosition> {
    let mut out = Vec::with_capacity(count);
    let mut sf = start.absolute_subframe();
    while out.len() < count {
        let p = TimingPosition::from_absolute_subframe(sf);
        if subframe_role(&p) == SubframeRole::Pool {
            out.push(p);
        }
        sf += 1;
    }
    out
}

/// One subframe per repetition; at AL1 the DCI uses NCCE `ncce` only.
pub fn build_npdcch(
    dci: &Dci,
    al: AggregationLevel,
    repetitions: u32,
    ncce: usize,
    cell: &CellConfig,
    start: TimingPosition,
) -> Result<Vec<ResourceGrid>> {
    if repetitions == 0 {
        return arg_err("NPDCCH repetitions must be at least 1");
    }
    let syms = npdcch_symbols(dci, cell, al, ncce);
    let range = match al {
        AggregationLevel::Al2 => 0..SUBCARRIERS,
        AggregationLevel::Al1 => ncce_subcarriers(ncce),
    };
    pool_subframes(start, repetitions as usize)
        .into_iter()
        .map(|p| {
            let mut g = ResourceGrid::new(p, cell);
            map_channel_in(&mut g, &syms, ChannelKind::Npdcch, cell, range.clone())?;
            insert_nrs(&mut g, cell);
            Ok(g)
        })
        .collect()
}

// NPDSCH ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NpdschConfig {
    pub tbs: usize,
    pub repetitions: u32,
    pub start_position: TimingPosition,
    /// Subframes per repetition; derived from capacity when `None`.
    pub subframes: Option<usize>,
}

impl NpdschConfig {
    pub fn new(tbs: usize, repetitions: u32) -> Self {
        NpdschConfig {
            tbs,
            repetitions,
            start_position: TimingPosition::default(),
            subframes: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tbs == 0 || self.tbs > coding::MAX_TBS_NPDSCH {
            return arg_err(format!("NPDSCH TBS {} outside 1..680", self.tbs));
        }
        if !DL_REPETITIONS.contains(&self.repetitions) {
            return arg_err(format!(
                "{} repetitions not on the 1..512 ladder",
                self.repetitions
            ));
        }
        if self.subframes == Some(0) {
            return arg_err("at least one subframe");
        }
        Ok(())
    }

    pub fn subframes_per_repetition(&self, cell: &CellConfig) -> usize {
        self.subframes
            .unwrap_or_else(|| npdsch_subframes(self.tbs, cell))
    }

    pub fn total_subframes(&self, cell: &CellConfig) -> usize {
        self.subframes_per_repetition(cell) * self.repetitions as usize
    }
}

/// Fewest subframes keeping the code rate at or below 0.75.
pub fn npdsch_subframes(tbs: usize, cell: &CellConfig) -> usize {
    let bits_per_sf = 2 * data_capacity(cell);
    let info = (tbs + 24) as f64;
    let mut n = 1;
    while info / (bits_per_sf * n) as f64 > NPDSCH_MAX_CODE_RATE {
        n += 1;
    }
    n
}

/// Scrambled, rate-matched codeword for one repetition.
pub fn npdsch_bits(tb: &TransportBlock, cfg: &NpdschConfig, cell: &CellConfig) -> Result<Vec<Bit>> {
    let n = cfg.subframes_per_repetition(cell);
    let coded = coding::tbcc_encode(tb)?;
    let target = 2 * data_capacity(cell) * n;
    let bits = coding::rate_match(&coded, target)?;
    let scr = gold_sequence(seed::data(cell.nb_pcid, 0), target);
    Ok(bits.iter().zip(&scr).map(|(a, b)| a ^ b).collect())
}

pub fn build_npdsch(
    tb: &TransportBlock,
    cfg: &NpdschConfig,
    cell: &CellConfig,
) -> Result<Vec<ResourceGrid>> {
    cfg.validate()?;
    if tb.channel != Channel::Npdsch {
        return arg_err("transport block is not an NPDSCH block");
    }
    let bits = npdsch_bits(tb, cfg, cell)?;
    let syms = coding::modulate(&bits, ModScheme::Qpsk)?.symbols;
    let cap = data_capacity(cell);
    let n = cfg.subframes_per_repetition(cell);
    let positions = pool_subframes(cfg.start_position, n * cfg.repetitions as usize);
    positions
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let j = i % n;
            let mut g = ResourceGrid::new(p, cell);
            map_channel(
                &mut g,
                &syms[j * cap..(j + 1) * cap],
                ChannelKind::Npdsch,
                cell,
            )?;
            insert_nrs(&mut g, cell);
            Ok(g)
        })
        .collect()
}

/// OFDM-modulate consecutive subframe grids.
pub fn serialize(grids: &[ResourceGrid]) -> Waveform {
    let mut samples = Vec::with_capacity(grids.len() * crate::numerology::SUBFRAME_SAMPLES);
    for g in grids {
        samples.extend(modulate_subframe(&g.values));
    }
    Waveform::new(samples, PRB_BANDWIDTH_HZ)
}

/// What goes into pool subframes of a generated downlink carrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolFill {
    /// NRS only.
    Empty,
    /// Random QPSK on every data element, plus NRS.
    RandomData,
}

/// Continuous downlink carrier from absolute subframe `first` for `count`
/// subframes: NPBCH, NPSS and NSSS in their subframes and pool subframes
/// filled per `fill`. The MIB follows the SFN of each subframe.
pub fn build_downlink<R: Rng>(
    cell: &CellConfig,
    stub: u32,
    first: u64,
    count: usize,
    fill: PoolFill,
    rng: &mut R,
) -> Result<Vec<ResourceGrid>> {
    let mut grids = Vec::with_capacity(count);
    for sf in first..first + count as u64 {
        let p = TimingPosition::from_absolute_subframe(sf);
        let g = match subframe_role(&p) {
            SubframeRole::Npbch => {
                let mib = Mib::new(p.frame_number, cell.deployment.mode, stub);
                npbch_subframe(&mib, cell, p.frame_number)?
            }
            SubframeRole::Npss => npss_subframe(p.frame_number, cell)?,
            SubframeRole::Nsss => nsss_subframe(p.frame_number, cell)?,
            SubframeRole::Pool => {
                let mut g = ResourceGrid::new(p, cell);
                if fill == PoolFill::RandomData {
                    let bits: Vec<Bit> = (0..2 * data_capacity(cell))
                        .map(|_| rng.random_range(0..2u8))
                        .collect();
                    let syms = coding::modulate(&bits, ModScheme::Qpsk)?.symbols;
                    map_channel(&mut g, &syms, ChannelKind::Npdsch, cell)?;
                }
                insert_nrs(&mut g, cell);
                g
            }
        };
        grids.push(g);
    }
    Ok(grids)
}
