//! Uplink transmit chains: NPUSCH format 1 and 2, NPRACH preambles.
//!
//! Single-tone transmissions are synthesized as a tone continuous in
//! absolute time, `x[n] = v * exp(j 2 pi f n / fs)`, where `v` is the
//! current symbol value and `n` counts samples from the start of the
//! transmission. Because the tone period divides the useful symbol length,
//! every cyclic prefix is automatically the tail of its symbol. Multi-tone
//! NPUSCH uses DFT-precoded OFDM (SC-FDMA) per symbol.
//!
//! Tone frequencies: 15 kHz tone `k` sits at `(k - 6) * 15 kHz`, 3.75 kHz
//! tone `k` at `(k - 24) * 3.75 kHz`, so both grids start at -90 kHz.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::coding::{self, Channel, ModScheme, TransportBlock};
use crate::error::{arg_err, config_err, Result};
use crate::grid::CellConfig;
use crate::numerology::{Numerology, SAMPLE_RATE_HZ, SYMBOLS_PER_SLOT};
use crate::ofdm::{fft, ifft, tone_bin};
use crate::sequences::{generate_dmrs, gold_sequence, seed};
use crate::Bit;
use crate::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NpuschFormat {
    F1,
    F2,
}

pub const MAX_UL_REPETITIONS: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NpuschAllocation {
    pub numerology: Numerology,
    pub tone_count: usize,
    pub tone_offset: usize,
    pub format: NpuschFormat,
    pub repetitions: u32,
    /// Resource units per transmission (format 1); format 2 always uses one.
    pub resource_units: usize,
    /// Constellation for single-tone format 1.
    pub single_tone_scheme: ModScheme,
}

impl NpuschAllocation {
    pub fn multi_tone(tone_count: usize, tone_offset: usize, resource_units: usize) -> Self {
        NpuschAllocation {
            numerology: Numerology::Khz15,
            tone_count,
            tone_offset,
            format: NpuschFormat::F1,
            repetitions: 1,
            resource_units,
            single_tone_scheme: ModScheme::Pi2Bpsk,
        }
    }

    pub fn single_tone(numerology: Numerology, tone: usize, scheme: ModScheme) -> Self {
        NpuschAllocation {
            numerology,
            tone_count: 1,
            tone_offset: tone,
            format: NpuschFormat::F1,
            repetitions: 1,
            resource_units: 1,
            single_tone_scheme: scheme,
        }
    }

    pub fn ack(numerology: Numerology, tone: usize) -> Self {
        NpuschAllocation {
            format: NpuschFormat::F2,
            ..Self::single_tone(numerology, tone, ModScheme::Pi2Bpsk)
        }
    }

    pub fn with_repetitions(mut self, repetitions: u32) -> Self {
        self.repetitions = repetitions;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let tones = self.numerology.tone_count();
        match self.numerology {
            Numerology::Khz3_75 if self.tone_count != 1 => {
                return arg_err("3.75 kHz transmissions are single-tone")
            }
            Numerology::Khz15 if !matches!(self.tone_count, 1 | 3 | 6 | 12) => {
                return arg_err(format!(
                    "{} tones is not a valid allocation",
                    self.tone_count
                ))
            }
            _ => {}
        }
        if self.tone_offset + self.tone_count > tones {
            return arg_err(format!(
                "tones {}..{} exceed the {tones}-tone grid",
                self.tone_offset,
                self.tone_offset + self.tone_count
            ));
        }
        if self.tone_count > 1 && !self.tone_offset.is_multiple_of(self.tone_count) {
            return arg_err("multi-tone allocations start on a multiple of their width");
        }
        if self.format == NpuschFormat::F2 && self.tone_count != 1 {
            return arg_err("NPUSCH format 2 is single-tone only");
        }
        if self.repetitions == 0
            || self.repetitions > MAX_UL_REPETITIONS
            || !self.repetitions.is_power_of_two()
        {
            return arg_err(format!(
                "{} repetitions not in 1..128 powers of two",
                self.repetitions
            ));
        }
        if self.resource_units == 0 {
            return arg_err("at least one resource unit");
        }
        if self.tone_count == 1
            && self.format == NpuschFormat::F1
            && self.single_tone_scheme == ModScheme::Qpsk
        {
            return arg_err("single-tone NPUSCH uses pi/2-BPSK or pi/4-QPSK");
        }
        Ok(())
    }

    pub fn slots_per_ru(&self) -> usize {
        match self.format {
            NpuschFormat::F2 => 4,
            NpuschFormat::F1 => match self.tone_count {
                12 => 2,
                6 => 4,
                3 => 8,
                _ => 16,
            },
        }
    }

    pub fn slots_per_repetition(&self) -> usize {
        let rus = if self.format == NpuschFormat::F2 {
            1
        } else {
            self.resource_units
        };
        self.slots_per_ru() * rus
    }

    pub fn scheme(&self) -> ModScheme {
        if self.format == NpuschFormat::F2 {
            ModScheme::Pi2Bpsk
        } else if self.tone_count == 1 {
            self.single_tone_scheme
        } else {
            ModScheme::Qpsk
        }
    }

    pub fn dmrs_symbols(&self) -> &'static [usize] {
        crate::sequences::dmrs_symbols(self.format)
    }

    pub fn data_symbols_per_slot(&self) -> usize {
        SYMBOLS_PER_SLOT - self.dmrs_symbols().len()
    }

    /// Modulation symbols carrying data in one repetition.
    pub fn data_res(&self) -> usize {
        self.slots_per_repetition() * self.data_symbols_per_slot() * self.tone_count
    }

    /// Coded bits carried by one repetition.
    pub fn coded_bits(&self) -> usize {
        self.data_res() * self.scheme().bits_per_symbol()
    }

    pub fn duration_s(&self) -> f64 {
        self.slots_per_repetition() as f64
            * self.repetitions as f64
            * self.numerology.slot_duration_s()
    }

    /// Subframes occupied, rounded up.
    pub fn subframes(&self) -> u64 {
        (self.duration_s() * 1e3).ceil() as u64
    }

    pub fn occupied_bandwidth_hz(&self) -> f64 {
        self.tone_count as f64 * self.numerology.subcarrier_spacing_hz()
    }

    pub fn tone_freq_hz(&self, tone: usize) -> f64 {
        tone_freq_hz(self.numerology, tone)
    }
}

pub fn tone_freq_hz(numerology: Numerology, tone: usize) -> f64 {
    let half = numerology.tone_count() as f64 / 2.0;
    (tone as f64 - half) * numerology.subcarrier_spacing_hz()
}

/// Sample offset of symbol `l`'s useful part inside a slot.
pub fn slot_symbol_body_offset(numerology: Numerology, l: usize) -> usize {
    let n = numerology.fft_size();
    (0..l).map(|i| numerology.cp_samples(i) + n).sum::<usize>() + numerology.cp_samples(l)
}

/// Continuous tone sample at absolute index `n`.
#[inline]
pub fn tone_at(freq_hz: f64, n: usize) -> Complex64 {
    // Reduce the phase in integer-cycle units to stay exact over long runs.
    let cycles = freq_hz * n as f64 / SAMPLE_RATE_HZ;
    Complex64::from_polar(1.0, 2.0 * PI * cycles.fract())
}

/// Per-slot symbol values `[symbol][tone]` in transmission order.
fn synthesize(alloc: &NpuschAllocation, slots: &[Vec<Vec<Complex64>>]) -> Vec<Complex64> {
    let num = alloc.numerology;
    let n = num.fft_size();
    let slot_len = num.slot_samples();
    let mut out = vec![Complex64::new(0.0, 0.0); slots.len() * slot_len];
    if alloc.tone_count == 1 {
        let f = alloc.tone_freq_hz(alloc.tone_offset);
        for (s, syms) in slots.iter().enumerate() {
            let mut pos = s * slot_len;
            for (l, v) in syms.iter().enumerate() {
                let len = num.cp_samples(l) + n;
                for i in pos..pos + len {
                    out[i] = v[0] * tone_at(f, i);
                }
                pos += len;
            }
        }
    } else {
        let m = alloc.tone_count;
        let scale = 1.0 / (m as f64).sqrt();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (s, syms) in slots.iter().enumerate() {
            let mut pos = s * slot_len;
            for (l, v) in syms.iter().enumerate() {
                buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
                for (i, x) in v.iter().enumerate() {
                    buf[tone_bin(alloc.tone_offset + i, 12, n)] = x * scale;
                }
                ifft(&mut buf);
                let cp = num.cp_samples(l);
                out[pos..pos + cp].copy_from_slice(&buf[n - cp..]);
                out[pos + cp..pos + cp + n].copy_from_slice(&buf);
                pos += cp + n;
            }
        }
    }
    out
}

/// Normalized M-point DFT used for transform precoding.
pub fn dft_precode(block: &[Complex64]) -> Vec<Complex64> {
    let mut b = block.to_vec();
    fft(&mut b);
    let s = 1.0 / (b.len() as f64).sqrt();
    b.iter_mut().for_each(|x| *x *= s);
    b
}

pub fn dft_deprecode(block: &[Complex64]) -> Vec<Complex64> {
    let mut b = block.to_vec();
    ifft(&mut b);
    let s = 1.0 / (b.len() as f64).sqrt();
    b.iter_mut().for_each(|x| *x *= s);
    b
}

/// DMRS values per DMRS symbol of `slot`, restricted to the allocated
/// tones. Single 3.75 kHz tones reuse the 12-tone sequence modulo 12.
pub fn dmrs_values(alloc: &NpuschAllocation, slot: u32, cell: &CellConfig) -> Vec<Vec<Complex64>> {
    let dmrs = generate_dmrs(alloc.format, slot, cell);
    let m = alloc.tone_count;
    let k = alloc.tone_offset % SUBCARRIERS_15K;
    dmrs.values.iter().map(|v| v[k..k + m].to_vec()).collect()
}

const SUBCARRIERS_15K: usize = 12;

/// Lay data symbols and DMRS into slots. `data` holds one repetition's
/// symbols in slot, symbol, tone order.
fn build_slots(
    alloc: &NpuschAllocation,
    cell: &CellConfig,
    data: &[Complex64],
    first_slot: usize,
) -> Vec<Vec<Vec<Complex64>>> {
    let dmrs_syms = alloc.dmrs_symbols();
    let m = alloc.tone_count;
    let mut it = data.chunks(m);
    (0..alloc.slots_per_repetition())
        .map(|s| {
            let dmrs = dmrs_values(alloc, (first_slot + s) as u32, cell);
            (0..SYMBOLS_PER_SLOT)
                .map(|l| {
                    if let Some(j) = dmrs_syms.iter().position(|&d| d == l) {
                        dmrs[j].clone()
                    } else {
                        let chunk = it.next().expect("data length matches the allocation");
                        if m > 1 {
                            dft_precode(chunk)
                        } else {
                            chunk.to_vec()
                        }
                    }
                })
                .collect()
        })
        .collect()
}

fn modulate_repetitions(
    alloc: &NpuschAllocation,
    cell: &CellConfig,
    bits: &[Bit],
) -> Result<Vec<Complex64>> {
    let per_rep = alloc.data_res();
    let mut slots = Vec::new();
    for r in 0..alloc.repetitions as usize {
        // The symbol counter runs across repetitions to keep phase continuity.
        let start = (r * per_rep) as u64;
        let data = coding::modulate_from(bits, alloc.scheme(), start)?.symbols;
        slots.extend(build_slots(
            alloc,
            cell,
            &data,
            r * alloc.slots_per_repetition(),
        ));
    }
    Ok(synthesize(alloc, &slots))
}

/// Coded and rate-matched bits of one NPUSCH format 1 repetition.
pub fn npusch_f1_bits(tb: &TransportBlock, alloc: &NpuschAllocation) -> Result<Vec<Bit>> {
    let coded = coding::turbo_encode(tb)?;
    coding::rate_match(&coded, alloc.coded_bits())
}

pub fn build_npusch_f1(
    tb: &TransportBlock,
    alloc: &NpuschAllocation,
    cell: &CellConfig,
) -> Result<Waveform> {
    alloc.validate()?;
    if alloc.format != NpuschFormat::F1 {
        return arg_err("allocation is not format 1");
    }
    if tb.channel != Channel::NpuschF1 {
        return arg_err("transport block is not an NPUSCH block");
    }
    let bits = npusch_f1_bits(tb, alloc)?;
    let samples = modulate_repetitions(alloc, cell, &bits)?;
    Ok(Waveform::new(samples, alloc.occupied_bandwidth_hz()))
}

pub fn build_npusch_f2(ack: Bit, alloc: &NpuschAllocation, cell: &CellConfig) -> Result<Waveform> {
    alloc.validate()?;
    if alloc.format != NpuschFormat::F2 {
        return arg_err("allocation is not format 2");
    }
    let bits = coding::repetition_encode(ack, alloc.data_res())?.bits;
    let samples = modulate_repetitions(alloc, cell, &bits)?;
    Ok(Waveform::new(samples, alloc.occupied_bandwidth_hz()))
}

// NPRACH ------------------------------------------------------------------

pub const NPRACH_SYMBOL_SAMPLES: usize = 512;
pub const NPRACH_SYMBOLS_PER_GROUP: usize = 5;
pub const NPRACH_GROUPS: usize = 4;
pub const NPRACH_TONES: usize = 48;
pub const NPRACH_BAND: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NprachFormat {
    F0,
    F1,
}

impl NprachFormat {
    pub fn cp_samples(self) -> usize {
        match self {
            NprachFormat::F0 => 128,
            NprachFormat::F1 => 512,
        }
    }

    pub fn cp_length_s(self) -> f64 {
        self.cp_samples() as f64 / SAMPLE_RATE_HZ
    }

    pub fn max_cell_radius_km(self) -> f64 {
        match self {
            NprachFormat::F0 => 10.0,
            NprachFormat::F1 => 40.0,
        }
    }
}

pub fn group_samples(format: NprachFormat) -> usize {
    format.cp_samples() + NPRACH_SYMBOLS_PER_GROUP * NPRACH_SYMBOL_SAMPLES
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NprachConfig {
    pub format: NprachFormat,
    pub repetitions: u32,
    pub periodicity_ms: u32,
    pub start_time_ms: u32,
    pub subcarrier_offset: usize,
    pub num_subcarriers: usize,
    /// Subcarriers below `subcarrier_offset + boundary` are for single-tone
    /// UEs, the rest for multi-tone capable UEs.
    pub multitone_partition_boundary: usize,
}

impl Default for NprachConfig {
    fn default() -> Self {
        NprachConfig {
            format: NprachFormat::F0,
            repetitions: 1,
            periodicity_ms: 160,
            start_time_ms: 8,
            subcarrier_offset: 0,
            num_subcarriers: 48,
            multitone_partition_boundary: 24,
        }
    }
}

impl NprachConfig {
    pub fn cp_length_s(&self) -> f64 {
        self.format.cp_length_s()
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.num_subcarriers, 12 | 24 | 36 | 48) {
            return config_err(format!(
                "{} NPRACH subcarriers not supported",
                self.num_subcarriers
            ));
        }
        if self.subcarrier_offset + self.num_subcarriers > NPRACH_TONES {
            return config_err("NPRACH subcarriers exceed the 48-tone grid");
        }
        if self.repetitions == 0
            || self.repetitions > MAX_UL_REPETITIONS
            || !self.repetitions.is_power_of_two()
        {
            return config_err(format!(
                "{} NPRACH repetitions not supported",
                self.repetitions
            ));
        }
        if !self
            .multitone_partition_boundary
            .is_multiple_of(NPRACH_BAND)
            || self.multitone_partition_boundary > self.num_subcarriers
        {
            return config_err(
                "partition boundary must be a multiple of 12 inside the NPRACH range",
            );
        }
        if (self.basic_duration_s() * self.repetitions as f64) * 1e3 > self.periodicity_ms as f64 {
            return config_err("NPRACH repetitions do not fit the periodicity");
        }
        Ok(())
    }

    pub fn basic_duration_s(&self) -> f64 {
        (NPRACH_GROUPS * group_samples(self.format)) as f64 / SAMPLE_RATE_HZ
    }

    pub fn total_duration_s(&self) -> f64 {
        self.basic_duration_s() * self.repetitions as f64
    }

    pub fn total_samples(&self) -> usize {
        NPRACH_GROUPS * group_samples(self.format) * self.repetitions as usize
    }

    pub fn subcarriers(&self) -> std::ops::Range<usize> {
        self.subcarrier_offset..self.subcarrier_offset + self.num_subcarriers
    }

    pub fn single_tone_subcarriers(&self) -> std::ops::Range<usize> {
        self.subcarrier_offset..self.subcarrier_offset + self.multitone_partition_boundary
    }

    pub fn multi_tone_subcarriers(&self) -> std::ops::Range<usize> {
        self.subcarrier_offset + self.multitone_partition_boundary
            ..self.subcarrier_offset + self.num_subcarriers
    }

    /// Capability signaled by a start subcarrier.
    pub fn signals_multitone(&self, start_subcarrier: usize) -> bool {
        self.multi_tone_subcarriers().contains(&start_subcarrier)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NprachPreamble {
    pub symbol_groups: usize,
    /// One tone per symbol group, `4 * repetitions` entries.
    pub tone_indexes: Vec<usize>,
    pub repetitions: u32,
    pub start_subcarrier: usize,
}

/// Offset applied to the local start tone for each repetition.
pub fn nprach_repetition_offsets(nb_pcid: u16, repetitions: u32) -> Vec<usize> {
    let c = gold_sequence(seed::nprach(nb_pcid), 8 * repetitions as usize);
    (0..repetitions as usize)
        .map(|r| {
            if r == 0 {
                0
            } else {
                (0..8).fold(0usize, |a, i| a | ((c[8 * r + i] as usize) << i)) % NPRACH_BAND
            }
        })
        .collect()
}

/// Tone sequence of one preamble.
///
/// Inside each 12-tone band the four groups hop `k, k^1, (k^1)+-6, ...^1`:
/// one short (1 tone) and one long (6 tone) hop in each direction. Every
/// repetition first moves `k` by a cell-specific offset within the band.
pub fn nprach_hopping(
    config: &NprachConfig,
    start_subcarrier: usize,
    nb_pcid: u16,
) -> Result<Vec<usize>> {
    config.validate()?;
    if !config.subcarriers().contains(&start_subcarrier) {
        return arg_err(format!(
            "start subcarrier {start_subcarrier} outside the NPRACH range"
        ));
    }
    let rel = start_subcarrier - config.subcarrier_offset;
    let base = config.subcarrier_offset + NPRACH_BAND * (rel / NPRACH_BAND);
    let k = rel % NPRACH_BAND;
    let mut out = Vec::with_capacity(4 * config.repetitions as usize);
    for off in nprach_repetition_offsets(nb_pcid, config.repetitions) {
        let g0 = (k + off) % NPRACH_BAND;
        let g1 = g0 ^ 1;
        let g2 = (g1 + 6) % NPRACH_BAND;
        let g3 = g2 ^ 1;
        out.extend([g0, g1, g2, g3].map(|g| base + g));
    }
    Ok(out)
}

pub fn nprach_tone_freq_hz(tone: usize) -> f64 {
    tone_freq_hz(Numerology::Khz3_75, tone)
}

/// Preamble waveform: each symbol group is a tone of unit amplitude whose
/// phase starts at zero at the beginning of the group.
pub fn build_nprach(
    config: &NprachConfig,
    start_subcarrier: usize,
    nb_pcid: u16,
) -> Result<(NprachPreamble, Waveform)> {
    let tones = nprach_hopping(config, start_subcarrier, nb_pcid)?;
    let g = group_samples(config.format);
    let mut samples = Vec::with_capacity(tones.len() * g);
    for &t in &tones {
        let f = nprach_tone_freq_hz(t);
        samples.extend((0..g).map(|i| tone_at(f, i)));
    }
    let pre = NprachPreamble {
        symbol_groups: NPRACH_GROUPS,
        tone_indexes: tones,
        repetitions: config.repetitions,
        start_subcarrier,
    };
    Ok((pre, Waveform::new(samples, 3_750.0)))
}
