//! Subframe resource grids and LTE-aware resource-element mapping.
//!
//! A grid is 12 subcarriers by 14 OFDM symbols, stored symbol-major at
//! `symbol * 12 + subcarrier`. Every element carries one [`Usage`] label.
//! Values are the NB-IoT contribution only; LTE signals are represented by
//! their labels and never by energy.

use std::collections::BTreeMap;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{config_err, Error, Result};
use crate::numerology::{
    DeploymentConfig, DeploymentMode, TimingPosition, SUBCARRIERS, SYMBOLS_PER_SUBFRAME,
};
use crate::sequences::{nrs_values, MAX_PCID};

pub const RES_PER_SUBFRAME: usize = SUBCARRIERS * SYMBOLS_PER_SUBFRAME;
/// NPSS, NSSS and NPBCH never use the first three symbols.
pub const SYNC_FIRST_SYMBOL: usize = 3;
pub const NRS_SYMBOLS: [usize; 4] = [5, 6, 12, 13];
pub const NPBCH_RES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Usage {
    NbData,
    Nrs,
    LteCrs,
    LtePdcch,
    Punctured,
    Unused,
}

impl Usage {
    pub fn as_str(self) -> &'static str {
        match self {
            Usage::NbData => "nb_data",
            Usage::Nrs => "nrs",
            Usage::LteCrs => "lte_crs",
            Usage::LtePdcch => "lte_pdcch",
            Usage::Punctured => "punctured",
            Usage::Unused => "unused",
        }
    }

    pub fn is_lte_reserved(self) -> bool {
        matches!(self, Usage::LteCrs | Usage::LtePdcch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubframeRole {
    Npbch,
    Npss,
    Nsss,
    /// Available to NPDCCH or NPDSCH.
    Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Npss,
    Nsss,
    Npbch,
    Npdcch,
    Npdsch,
}

impl ChannelKind {
    pub fn role(self) -> SubframeRole {
        match self {
            ChannelKind::Npss => SubframeRole::Npss,
            ChannelKind::Nsss => SubframeRole::Nsss,
            ChannelKind::Npbch => SubframeRole::Npbch,
            ChannelKind::Npdcch | ChannelKind::Npdsch => SubframeRole::Pool,
        }
    }
}

pub fn subframe_role(position: &TimingPosition) -> SubframeRole {
    match position.subframe_number {
        0 => SubframeRole::Npbch,
        5 => SubframeRole::Npss,
        9 if position.frame_number.is_multiple_of(2) => SubframeRole::Nsss,
        _ => SubframeRole::Pool,
    }
}

/// How the LTE PCID follows from the NB-PCID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PcidMap {
    #[default]
    Identity,
    /// `lte = (nb + k) mod 504`.
    Offset(u16),
}

impl PcidMap {
    pub fn apply(self, nb_pcid: u16) -> u16 {
        match self {
            PcidMap::Identity => nb_pcid,
            PcidMap::Offset(k) => (nb_pcid + k) % (MAX_PCID + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellConfig {
    pub nb_pcid: u16,
    pub lte_pcid: u16,
    pub pcid_map: PcidMap,
    pub deployment: DeploymentConfig,
    pub lte_crs_ports: u8,
    pub lte_pdcch_symbols: u8,
    pub nrs_ports: u8,
}

impl CellConfig {
    pub fn standalone(nb_pcid: u16) -> Self {
        CellConfig {
            nb_pcid,
            lte_pcid: nb_pcid,
            pcid_map: PcidMap::Identity,
            deployment: DeploymentConfig::standalone(),
            lte_crs_ports: 0,
            lte_pdcch_symbols: 0,
            nrs_ports: 1,
        }
    }

    /// In-band cell with 2 CRS ports and a 3-symbol control region.
    pub fn in_band(nb_pcid: u16, lte_bandwidth_mhz: u32, prb_index: i64) -> Self {
        CellConfig {
            deployment: DeploymentConfig::in_band(lte_bandwidth_mhz, prb_index),
            lte_crs_ports: 2,
            lte_pdcch_symbols: 3,
            ..Self::standalone(nb_pcid)
        }
    }

    pub fn guard_band(nb_pcid: u16, lte_bandwidth_mhz: u32) -> Self {
        CellConfig {
            deployment: DeploymentConfig::guard_band(lte_bandwidth_mhz),
            ..Self::standalone(nb_pcid)
        }
    }

    pub fn with_pcid_map(mut self, map: PcidMap) -> Self {
        self.pcid_map = map;
        self.lte_pcid = map.apply(self.nb_pcid);
        self
    }

    pub fn is_in_band(&self) -> bool {
        self.deployment.mode == DeploymentMode::InBand
    }

    pub fn validate(&self) -> Result<()> {
        self.deployment.validate()?;
        if self.nb_pcid > MAX_PCID {
            return config_err(format!("NB-PCID {} out of range", self.nb_pcid));
        }
        if self.lte_pcid != self.pcid_map.apply(self.nb_pcid) {
            return config_err("LTE PCID does not follow from the NB-PCID mapping");
        }
        if !matches!(self.nrs_ports, 1 | 2) {
            return config_err(format!("{} NRS ports not supported", self.nrs_ports));
        }
        if self.is_in_band() {
            if !matches!(self.lte_crs_ports, 1 | 2 | 4) {
                return config_err(format!("{} CRS ports not supported", self.lte_crs_ports));
            }
            if self.lte_pdcch_symbols > 3 {
                return config_err("at most 3 LTE control symbols");
            }
        } else if self.lte_pdcch_symbols != 0 {
            return config_err("LTE control region only exists in in-band deployments");
        }
        Ok(())
    }
}

#[inline]
pub fn re_index(subcarrier: usize, symbol: usize) -> usize {
    symbol * SUBCARRIERS + subcarrier
}

/// LTE CRS positions `(subcarrier, symbol)` inside one PRB and subframe.
pub fn crs_positions(lte_pcid: u16, ports: u8) -> Vec<(usize, usize)> {
    let vshift = (lte_pcid % 6) as usize;
    let mut out = Vec::new();
    for slot in 0..2 {
        for port in 0..ports.min(4) {
            let entries: &[(usize, usize)] = match port {
                0 => &[(0, 0), (4, 3)],
                1 => &[(0, 3), (4, 0)],
                2 => &[(1, 3 * slot)],
                _ => &[(1, 3 + 3 * slot)],
            };
            for &(sym, v) in entries {
                for m in 0..2 {
                    out.push(((v + vshift) % 6 + 6 * m, sym + 7 * slot));
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

pub fn nrs_positions(nb_pcid: u16, port: u8) -> Vec<(usize, usize)> {
    let base = (nb_pcid % 6) as usize;
    let shift = if port == 0 { 0 } else { 3 };
    let k0 = (base + shift) % 6;
    NRS_SYMBOLS
        .iter()
        .flat_map(|&l| [(k0, l), (k0 + 6, l)])
        .collect()
}

/// LTE elements an in-band carrier must leave alone, labeled. CRS wins over
/// PDCCH where both apply. Empty outside in-band mode.
pub fn lte_reserved_elements(cell: &CellConfig) -> BTreeMap<(usize, usize), Usage> {
    let mut out = BTreeMap::new();
    if !cell.is_in_band() {
        return out;
    }
    for l in 0..cell.lte_pdcch_symbols as usize {
        for k in 0..SUBCARRIERS {
            out.insert((k, l), Usage::LtePdcch);
        }
    }
    for p in crs_positions(cell.lte_pcid, cell.lte_crs_ports) {
        out.insert(p, Usage::LteCrs);
    }
    out
}

/// NPBCH elements, identical in every deployment mode: symbols 3..13,
/// skipping the 4-port CRS pattern of the mapped LTE PCID and the 2-port NRS
/// pattern. Order is frequency-first.
pub fn npbch_positions(cell: &CellConfig) -> Vec<(usize, usize)> {
    let mut skip: Vec<(usize, usize)> = crs_positions(cell.lte_pcid, 4);
    skip.extend(nrs_positions(cell.nb_pcid, 0));
    skip.extend(nrs_positions(cell.nb_pcid, 1));
    let mut out = Vec::with_capacity(NPBCH_RES);
    for l in SYNC_FIRST_SYMBOL..SYMBOLS_PER_SUBFRAME {
        for k in 0..SUBCARRIERS {
            if !skip.contains(&(k, l)) {
                out.push((k, l));
            }
        }
    }
    out
}

/// First symbol available to NPDCCH/NPDSCH.
pub fn data_start_symbol(cell: &CellConfig) -> usize {
    if cell.is_in_band() {
        cell.lte_pdcch_symbols as usize
    } else {
        0
    }
}

/// NPDCCH/NPDSCH elements in frequency-first order, optionally limited to a
/// subcarrier range (used by aggregation level 1).
pub fn data_positions(
    cell: &CellConfig,
    subcarriers: std::ops::Range<usize>,
) -> Vec<(usize, usize)> {
    let reserved = lte_reserved_elements(cell);
    let mut nrs: Vec<(usize, usize)> = Vec::new();
    for port in 0..cell.nrs_ports {
        nrs.extend(nrs_positions(cell.nb_pcid, port));
    }
    let mut out = Vec::new();
    for l in data_start_symbol(cell)..SYMBOLS_PER_SUBFRAME {
        for k in subcarriers.clone() {
            if !reserved.contains_key(&(k, l)) && !nrs.contains(&(k, l)) {
                out.push((k, l));
            }
        }
    }
    out
}

/// Data elements available per pool subframe.
pub fn data_capacity(cell: &CellConfig) -> usize {
    data_positions(cell, 0..SUBCARRIERS).len()
}

/// Subcarrier range of NCCE `ncce` (0 or 1) at aggregation level 1.
pub fn ncce_subcarriers(ncce: usize) -> std::ops::Range<usize> {
    if ncce == 0 {
        0..6
    } else {
        6..12
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    pub position: TimingPosition,
    pub role: SubframeRole,
    pub values: Vec<Complex64>,
    pub usage: Vec<Usage>,
}

impl ResourceGrid {
    /// Empty grid with the cell's LTE elements already labeled.
    pub fn new(position: TimingPosition, cell: &CellConfig) -> Self {
        let mut usage = vec![Usage::Unused; RES_PER_SUBFRAME];
        for (&(k, l), &u) in &lte_reserved_elements(cell) {
            usage[re_index(k, l)] = u;
        }
        ResourceGrid {
            position,
            role: subframe_role(&position),
            values: vec![Complex64::new(0.0, 0.0); RES_PER_SUBFRAME],
            usage,
        }
    }

    pub fn get(&self, subcarrier: usize, symbol: usize) -> Complex64 {
        self.values[re_index(subcarrier, symbol)]
    }

    pub fn usage_at(&self, subcarrier: usize, symbol: usize) -> Usage {
        self.usage[re_index(subcarrier, symbol)]
    }

    pub fn count(&self, usage: Usage) -> usize {
        self.usage.iter().filter(|&&u| u == usage).count()
    }

    /// Sum of |value|^2 over elements whose label satisfies `pred`.
    pub fn energy_where(&self, pred: impl Fn(Usage) -> bool) -> f64 {
        self.values
            .iter()
            .zip(&self.usage)
            .filter(|(_, &u)| pred(u))
            .map(|(v, _)| v.norm_sqr())
            .sum()
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    fn place(&mut self, k: usize, l: usize, v: Complex64) {
        let i = re_index(k, l);
        if self.usage[i].is_lte_reserved() {
            // LTE keeps its element; the NB-IoT value is dropped.
            self.values[i] = Complex64::new(0.0, 0.0);
        } else {
            self.values[i] = v;
            self.usage[i] = Usage::NbData;
        }
    }

    fn place_sync(&mut self, k: usize, l: usize, v: Complex64) {
        let i = re_index(k, l);
        if self.usage[i] == Usage::LteCrs {
            self.values[i] = Complex64::new(0.0, 0.0);
            self.usage[i] = Usage::Punctured;
        } else {
            self.values[i] = v;
            self.usage[i] = Usage::NbData;
        }
    }

    /// Write `(subframe, symbol, subcarrier, usage, re, im)` rows; the header
    /// is written by the caller when `header` is set.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "subframe,symbol,subcarrier,usage,re,im")?;
        }
        let sf = self.position.absolute_subframe();
        for l in 0..SYMBOLS_PER_SUBFRAME {
            for k in 0..SUBCARRIERS {
                let v = self.get(k, l);
                writeln!(
                    w,
                    "{sf},{l},{k},{},{:.9},{:.9}",
                    self.usage_at(k, l).as_str(),
                    v.re,
                    v.im
                )?;
            }
        }
        Ok(())
    }
}

fn mapping_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Mapping(msg.into()))
}

/// Map channel symbols onto `grid`.
///
/// - NPSS: 121 values, symbol-major over symbols 3..13 and subcarriers 0..10.
/// - NSSS: 132 values, frequency-first over symbols 3..13.
/// - NPBCH: exactly [`NPBCH_RES`] values on [`npbch_positions`].
/// - NPDCCH/NPDSCH: up to [`data_capacity`] values on [`data_positions`].
///
/// Sync signals are punctured by CRS; the other channels are mapped around
/// reserved elements so nothing is lost.
pub fn map_channel(
    grid: &mut ResourceGrid,
    symbols: &[Complex64],
    kind: ChannelKind,
    cell: &CellConfig,
) -> Result<()> {
    map_channel_in(grid, symbols, kind, cell, 0..SUBCARRIERS)
}

/// [`map_channel`] restricted to a subcarrier range for data channels.
pub fn map_channel_in(
    grid: &mut ResourceGrid,
    symbols: &[Complex64],
    kind: ChannelKind,
    cell: &CellConfig,
    subcarriers: std::ops::Range<usize>,
) -> Result<()> {
    if grid.role != kind.role() {
        return mapping_err(format!(
            "{kind:?} cannot go into a {:?} subframe",
            grid.role
        ));
    }
    match kind {
        ChannelKind::Npss => {
            if symbols.len() != 121 {
                return mapping_err(format!("NPSS needs 121 values, got {}", symbols.len()));
            }
            for (i, &v) in symbols.iter().enumerate() {
                grid.place_sync(i % 11, SYNC_FIRST_SYMBOL + i / 11, v);
            }
        }
        ChannelKind::Nsss => {
            if symbols.len() != 132 {
                return mapping_err(format!("NSSS needs 132 values, got {}", symbols.len()));
            }
            for (i, &v) in symbols.iter().enumerate() {
                grid.place_sync(i % SUBCARRIERS, SYNC_FIRST_SYMBOL + i / SUBCARRIERS, v);
            }
        }
        ChannelKind::Npbch => {
            let pos = npbch_positions(cell);
            if symbols.len() != pos.len() {
                return mapping_err(format!(
                    "NPBCH needs {} values, got {}",
                    pos.len(),
                    symbols.len()
                ));
            }
            for (&(k, l), &v) in pos.iter().zip(symbols) {
                grid.place(k, l, v);
            }
        }
        ChannelKind::Npdcch | ChannelKind::Npdsch => {
            let pos = data_positions(cell, subcarriers);
            if symbols.len() > pos.len() {
                return mapping_err(format!(
                    "{} symbols exceed the {} available elements",
                    symbols.len(),
                    pos.len()
                ));
            }
            for (&(k, l), &v) in pos.iter().zip(symbols) {
                grid.place(k, l, v);
            }
        }
    }
    Ok(())
}

/// Read values back in mapping order.
pub fn demap(values: &[Complex64], positions: &[(usize, usize)]) -> Vec<Complex64> {
    positions
        .iter()
        .map(|&(k, l)| values[re_index(k, l)])
        .collect()
}

/// Insert NRS for every configured port. No-op in NPSS/NSSS subframes.
pub fn insert_nrs(grid: &mut ResourceGrid, cell: &CellConfig) {
    if matches!(grid.role, SubframeRole::Npss | SubframeRole::Nsss) {
        return;
    }
    for port in 0..cell.nrs_ports {
        let vals = nrs_values(cell.nb_pcid, grid.position.subframe_number, port);
        for (&(k, l), v) in nrs_positions(cell.nb_pcid, port).iter().zip(vals) {
            let i = re_index(k, l);
            grid.values[i] = v;
            grid.usage[i] = Usage::Nrs;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::generate_npss;

    fn pos(frame: u32, sf: u32) -> TimingPosition {
        TimingPosition::new(frame, sf).unwrap()
    }

    #[test]
    fn roles() {
        assert_eq!(subframe_role(&pos(2, 5)), SubframeRole::Npss);
        assert_eq!(subframe_role(&pos(2, 9)), SubframeRole::Nsss);
        assert_eq!(subframe_role(&pos(3, 9)), SubframeRole::Pool);
        assert_eq!(subframe_role(&pos(7, 0)), SubframeRole::Npbch);
        assert_eq!(subframe_role(&pos(7, 3)), SubframeRole::Pool);
    }

    #[test]
    fn reserved_counts() {
        assert!(lte_reserved_elements(&CellConfig::standalone(0)).is_empty());
        let cell = CellConfig::in_band(0, 10, 9);
        let r = lte_reserved_elements(&cell);
        let control = r.keys().filter(|(_, l)| *l < 3).count();
        assert_eq!(control, 36);
        let crs_syms: std::collections::BTreeSet<usize> = r
            .iter()
            .filter(|(_, &u)| u == Usage::LteCrs)
            .map(|((_, l), _)| *l)
            .collect();
        assert_eq!(crs_syms.into_iter().collect::<Vec<_>>(), vec![0, 4, 7, 11]);
        // 4 per CRS symbol with two ports.
        assert_eq!(r.values().filter(|&&u| u == Usage::LteCrs).count(), 16);
        let shifted = CellConfig::in_band(6, 10, 9);
        assert_eq!(crs_positions(0, 2), crs_positions(6, 2));
        assert_eq!(
            lte_reserved_elements(&cell).keys().collect::<Vec<_>>(),
            lte_reserved_elements(&shifted).keys().collect::<Vec<_>>()
        );
    }

    #[test]
    fn npss_puncturing_matches_enumeration() {
        let npss: Vec<Complex64> = generate_npss().symbols.concat();
        for pcid in 0..6u16 {
            let cell = CellConfig::in_band(pcid, 10, 9);
            let mut g = ResourceGrid::new(pos(0, 5), &cell);
            map_channel(&mut g, &npss, ChannelKind::Npss, &cell).unwrap();
            // Oracle: CRS of ports 0/1 on symbols 4, 7, 11 at k = vshift + {0,3,6,9}.
            let v = (pcid % 6) as usize;
            let expected = [4, 7, 11]
                .iter()
                .flat_map(|&l| [0, 3, 6, 9].map(|d| ((v + d) % 12, l)))
                .filter(|&(k, _)| k < 11)
                .count();
            assert_eq!(g.count(Usage::Punctured), expected, "pcid {pcid}");
            assert_eq!(g.energy_where(Usage::is_lte_reserved), 0.0);
        }
        let sa = CellConfig::standalone(0);
        let mut g = ResourceGrid::new(pos(0, 5), &sa);
        map_channel(&mut g, &npss, ChannelKind::Npss, &sa).unwrap();
        assert_eq!(g.count(Usage::Punctured), 0);
        assert_eq!(g.count(Usage::NbData), 121);
    }

    #[test]
    fn npbch_has_fixed_size_and_loses_nothing() {
        for cell in [
            CellConfig::standalone(11),
            CellConfig::in_band(11, 10, 30),
            CellConfig::guard_band(11, 5),
        ] {
            let p = npbch_positions(&cell);
            assert_eq!(p.len(), NPBCH_RES);
            let vals: Vec<Complex64> = (0..100).map(|i| Complex64::new(1.0, i as f64)).collect();
            let mut g = ResourceGrid::new(pos(0, 0), &cell);
            map_channel(&mut g, &vals, ChannelKind::Npbch, &cell).unwrap();
            insert_nrs(&mut g, &cell);
            assert_eq!(demap(&g.values, &p), vals);
            assert_eq!(g.count(Usage::Punctured), 0);
        }
    }

    #[test]
    fn nrs_counts_and_noop() {
        let mut cell = CellConfig::in_band(5, 10, 4);
        let mut g = ResourceGrid::new(pos(0, 1), &cell);
        insert_nrs(&mut g, &cell);
        assert_eq!(g.count(Usage::Nrs), 8);
        cell.nrs_ports = 2;
        let mut g = ResourceGrid::new(pos(0, 1), &cell);
        insert_nrs(&mut g, &cell);
        assert_eq!(g.count(Usage::Nrs), 16);
        let mut g = ResourceGrid::new(pos(0, 5), &cell);
        insert_nrs(&mut g, &cell);
        assert_eq!(g.count(Usage::Nrs), 0);
    }

    #[test]
    fn nrs_never_hits_crs() {
        for pcid in 0..504u16 {
            let crs = crs_positions(pcid, 4);
            for port in 0..2 {
                assert!(nrs_positions(pcid, port).iter().all(|p| !crs.contains(p)));
            }
        }
    }

    #[test]
    fn data_capacity_by_mode() {
        assert_eq!(data_capacity(&CellConfig::standalone(0)), 160);
        let mut c = CellConfig::in_band(0, 10, 4);
        // 168 - 36 control - 12 CRS outside control - 8 NRS.
        assert_eq!(data_capacity(&c), 112);
        c.lte_pdcch_symbols = 1;
        assert_eq!(data_capacity(&c), 168 - 12 - 12 - 8);
    }

    #[test]
    fn overflow_and_wrong_role() {
        let cell = CellConfig::standalone(0);
        let mut g = ResourceGrid::new(pos(0, 1), &cell);
        let too_many = vec![Complex64::new(1.0, 0.0); 161];
        assert!(map_channel(&mut g, &too_many, ChannelKind::Npdsch, &cell).is_err());
        let mut g = ResourceGrid::new(pos(0, 5), &cell);
        assert!(map_channel(&mut g, &too_many[..10], ChannelKind::Npdsch, &cell).is_err());
    }

    #[test]
    fn csv_dump_shape() {
        let cell = CellConfig::standalone(0);
        let g = ResourceGrid::new(pos(1, 2), &cell);
        let mut out = Vec::new();
        g.write_csv(&mut out, true).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 169);
        assert!(text.lines().nth(1).unwrap().starts_with("12,0,0,unused,"));
    }
}
