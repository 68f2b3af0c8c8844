//! Scenario files and the Monte Carlo runner.
//!
//! A scenario is a flat INI-like text file:
//!
//! ```text
//! # comment
//! [scenario]
//! name = sync-sweep
//! procedure = sync
//! trials = 100
//! seed = 1
//!
//! [cell]
//! mode = standalone
//! nb_pcid = 17
//!
//! [channel]
//! snr_db = -12, -9, -6
//! ```
//!
//! Any value outside `[scenario]` may be a comma-separated list; the runner
//! sweeps the cartesian product of all lists. Trial `t` of every sweep point
//! uses the same seed, so points differ only in the swept parameters.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{self, ChannelSpec};
use crate::coding::{Channel, ModScheme, TransportBlock, DEFAULT_TURBO_ITERATIONS};
use crate::error::{Error, Result};
use crate::grid::CellConfig;
use crate::mac::{self, DlGrant, RaConfig, ScheduleTimeline, UeContext, UlGrant};
use crate::numerology::{
    raster_offset, DeploymentMode, Numerology, DEFAULT_CARRIER_HZ, FRAME_SAMPLES, SUBFRAME_SAMPLES,
};
use crate::phy_dl::{build_downlink, build_npdsch, serialize, NpdschConfig, PoolFill};
use crate::phy_ul::{build_nprach, build_npusch_f1, NprachConfig, NprachFormat, NpuschAllocation};
use crate::receiver::{
    cell_search, decode_npdsch, decode_npusch, npbch_acquire, nprach_detect, NpbchParams,
    SearchConfig, DEFAULT_FORGETTING, RASTER_HYPOTHESES_HZ, SEGMENT_INPUT_SAMPLES, SEGMENT_SAMPLES,
};

/// Sync succeeds when the detected timing is within this many samples.
pub const SYNC_TIMING_TOLERANCE: f64 = 9.0;
/// NPRACH detection succeeds when the timing advance is this close.
pub const NPRACH_TA_TOLERANCE_S: f64 = 3e-6;
const MIB_STUB: u32 = 0x5A5A5A5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Procedure {
    Sync,
    Npbch,
    Nprach,
    LinkDl,
    LinkUl,
    RandomAccess,
    Timeline,
}

impl Procedure {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "sync" => Procedure::Sync,
            "npbch" => Procedure::Npbch,
            "nprach" => Procedure::Nprach,
            "link_dl" => Procedure::LinkDl,
            "link_ul" => Procedure::LinkUl,
            "random_access" => Procedure::RandomAccess,
            "timeline" => Procedure::Timeline,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Procedure::Sync => "sync",
            Procedure::Npbch => "npbch",
            Procedure::Nprach => "nprach",
            Procedure::LinkDl => "link_dl",
            Procedure::LinkUl => "link_ul",
            Procedure::RandomAccess => "random_access",
            Procedure::Timeline => "timeline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Text,
}

const KEYS: &[(&str, &str, Kind)] = &[
    ("cell", "mode", Kind::Text),
    ("cell", "nb_pcid", Kind::Int),
    ("cell", "lte_bandwidth_mhz", Kind::Int),
    ("cell", "prb_index", Kind::Int),
    ("cell", "carrier_hz", Kind::Float),
    ("channel", "snr_db", Kind::Float),
    ("channel", "ppm", Kind::Float),
    ("channel", "raster_offset_hz", Kind::Float),
    ("channel", "delay_us", Kind::Float),
    ("procedure", "segments", Kind::Int),
    ("procedure", "weight", Kind::Float),
    ("procedure", "nsss_occasions", Kind::Int),
    ("procedure", "tbs", Kind::Int),
    ("procedure", "repetitions", Kind::Int),
    ("procedure", "tones", Kind::Int),
    ("procedure", "tone_offset", Kind::Int),
    ("procedure", "numerology", Kind::Text),
    ("procedure", "scheme", Kind::Text),
    ("procedure", "resource_units", Kind::Int),
    ("procedure", "turbo_iterations", Kind::Int),
    ("procedure", "format", Kind::Int),
    ("procedure", "subcarrier", Kind::Int),
    ("procedure", "ues", Kind::Int),
    ("procedure", "same_subcarrier", Kind::Int),
    ("procedure", "rsrp_dbm", Kind::Float),
    ("procedure", "grants", Kind::Int),
];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    values: Vec<String>,
    line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub procedure: Procedure,
    pub trials: usize,
    pub seed_base: u64,
    /// `section.key` to its (possibly swept) values.
    entries: BTreeMap<String, Entry>,
}

/// One sweep point: `section.key` to a single value.
pub type Point = BTreeMap<String, String>;

fn perr<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        message: message.into(),
    })
}

pub fn parse(text: &str) -> Result<Scenario> {
    let mut section: Option<String> = None;
    let mut head: BTreeMap<String, (String, usize)> = BTreeMap::new();
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
            continue;
        }
        if let Some(name) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim();
            if !matches!(name, "scenario" | "cell" | "channel" | "procedure") {
                return perr(line, format!("unknown section [{name}]"));
            }
            section = Some(name.to_string());
            continue;
        }
        let Some((k, v)) = s.split_once('=') else {
            return perr(line, format!("expected key = value, got {s:?}"));
        };
        let (k, v) = (k.trim(), v.trim());
        let Some(sec) = section.as_deref() else {
            return perr(line, "key outside any section");
        };
        if sec == "scenario" {
            if !matches!(k, "name" | "procedure" | "trials" | "seed") {
                return perr(line, format!("unknown key {k} in [scenario]"));
            }
            if head.insert(k.to_string(), (v.to_string(), line)).is_some() {
                return perr(line, format!("duplicate key {k}"));
            }
            continue;
        }
        let Some(&(_, _, kind)) = KEYS.iter().find(|e| e.0 == sec && e.1 == k) else {
            return perr(line, format!("unknown key {k} in [{sec}]"));
        };
        let values: Vec<String> = v.split(',').map(|x| x.trim().to_string()).collect();
        for x in &values {
            let ok = match kind {
                Kind::Int => x.parse::<i64>().is_ok(),
                Kind::Float => x.parse::<f64>().map(f64::is_finite).unwrap_or(false),
                Kind::Text => !x.is_empty(),
            };
            if !ok {
                return perr(line, format!("bad value {x:?} for {k}"));
            }
        }
        if entries
            .insert(format!("{sec}.{k}"), Entry { values, line })
            .is_some()
        {
            return perr(line, format!("duplicate key {k}"));
        }
    }
    let get = |k: &str| head.get(k).cloned();
    let Some((proc_name, pl)) = get("procedure") else {
        return perr(0, "[scenario] needs a procedure");
    };
    let Some(procedure) = Procedure::parse(&proc_name) else {
        return perr(pl, format!("unknown procedure {proc_name:?}"));
    };
    let trials = match get("trials") {
        None => 1,
        Some((t, l)) => match t.parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => return perr(l, "trials must be an integer >= 1"),
        },
    };
    let seed_base = match get("seed") {
        None => 0,
        Some((t, l)) => match t.parse::<u64>() {
            Ok(n) => n,
            Err(_) => return perr(l, "seed must be a non-negative integer"),
        },
    };
    let name = get("name")
        .map(|n| n.0)
        .unwrap_or_else(|| procedure.as_str().to_string());
    let sc = Scenario {
        name,
        procedure,
        trials,
        seed_base,
        entries,
    };
    // Resolve every point once so configuration errors surface before running.
    for p in sc.points() {
        sc.check_point(&p)?;
    }
    Ok(sc)
}

impl Scenario {
    /// Keys that carry more than one value.
    pub fn swept_keys(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| e.values.len() > 1)
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Cartesian product of all lists, first key slowest.
    pub fn points(&self) -> Vec<Point> {
        let mut pts: Vec<Point> = vec![Point::new()];
        for (k, e) in &self.entries {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    e.values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(k.clone(), v.clone());
                        q
                    })
                })
                .collect();
        }
        pts
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map(|e| e.line).unwrap_or(0)
    }

    fn check_point(&self, p: &Point) -> Result<()> {
        let cfg = PointConfig::from_point(self, p)?;
        cfg.cell.validate().map_err(|e| Error::Parse {
            line: self.line_of("cell.mode"),
            message: e.to_string(),
        })?;
        Ok(())
    }
}

/// Typed view of one sweep point.
#[derive(Debug, Clone, PartialEq)]
struct PointConfig {
    cell: CellConfig,
    carrier_hz: f64,
    snr_db: f64,
    ppm: f64,
    raster_offset_hz: Option<f64>,
    delay_us: Option<f64>,
    p: Point,
}

impl PointConfig {
    fn from_point(sc: &Scenario, p: &Point) -> Result<Self> {
        let cfg = PointConfig {
            cell: CellConfig::standalone(0),
            carrier_hz: DEFAULT_CARRIER_HZ,
            snr_db: f64::INFINITY,
            ppm: 0.0,
            raster_offset_hz: None,
            delay_us: None,
            p: p.clone(),
        };
        let pcid = cfg.int(sc, "cell.nb_pcid", 0)?;
        if !(0..504).contains(&pcid) {
            return perr(sc.line_of("cell.nb_pcid"), "nb_pcid must be in 0..504");
        }
        let pcid = pcid as u16;
        let mode_text = cfg.text("cell.mode").unwrap_or("standalone");
        let Some(mode) = DeploymentMode::parse(mode_text) else {
            return perr(
                sc.line_of("cell.mode"),
                format!("unknown deployment mode {mode_text:?}"),
            );
        };
        let bw = cfg.int(sc, "cell.lte_bandwidth_mhz", 10)? as u32;
        let cell = match mode {
            DeploymentMode::StandAlone => CellConfig::standalone(pcid),
            DeploymentMode::InBand => {
                CellConfig::in_band(pcid, bw, cfg.int(sc, "cell.prb_index", 30)?)
            }
            DeploymentMode::GuardBand => CellConfig::guard_band(pcid, bw),
        };
        Ok(PointConfig {
            cell,
            carrier_hz: cfg.float(sc, "cell.carrier_hz", DEFAULT_CARRIER_HZ)?,
            snr_db: cfg.float(sc, "channel.snr_db", f64::INFINITY)?,
            ppm: cfg.float(sc, "channel.ppm", 0.0)?,
            raster_offset_hz: cfg.opt_float("channel.raster_offset_hz"),
            delay_us: cfg.opt_float("channel.delay_us"),
            ..cfg
        })
    }

    fn text(&self, key: &str) -> Option<&str> {
        self.p.get(key).map(String::as_str)
    }

    fn opt_float(&self, key: &str) -> Option<f64> {
        self.text(key).and_then(|v| v.parse().ok())
    }

    fn float(&self, sc: &Scenario, key: &str, default: f64) -> Result<f64> {
        match self.text(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .or_else(|_| perr(sc.line_of(key), format!("bad number for {key}"))),
        }
    }

    fn int(&self, sc: &Scenario, key: &str, default: i64) -> Result<i64> {
        match self.text(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .or_else(|_| perr(sc.line_of(key), format!("bad integer for {key}"))),
        }
    }

    fn usize(&self, sc: &Scenario, key: &str, default: usize) -> Result<usize> {
        let v = self.int(sc, key, default as i64)?;
        if v < 0 {
            return perr(sc.line_of(key), format!("{key} must be non-negative"));
        }
        Ok(v as usize)
    }

    fn raster(&self) -> f64 {
        self.raster_offset_hz
            .unwrap_or_else(|| raster_offset(&self.cell.deployment).unwrap_or(0.0))
    }
}

// Results ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub point: usize,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    /// Procedure-specific measurements, same names for every trial.
    pub values: Vec<(&'static str, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub point: usize,
    pub params: Point,
    pub trials: usize,
    pub successes: usize,
    /// Means of each trial value, NaN values skipped.
    pub means: Vec<(&'static str, f64)>,
}

impl PointSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub scenario: Scenario,
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<PointSummary>,
}

fn trial_seed(base: u64, trial: usize) -> u64 {
    // SplitMix64 step so adjacent bases do not share streams.
    let mut z = base.wrapping_add((trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run every trial of every point. `seed_override` replaces the file's seed.
pub fn run(sc: &Scenario, seed_override: Option<u64>) -> Result<RunResult> {
    let base = seed_override.unwrap_or(sc.seed_base);
    let points = sc.points();
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for (pi, p) in points.iter().enumerate() {
        let cfg = PointConfig::from_point(sc, p)?;
        let recs: Vec<TrialRecord> = (0..sc.trials)
            .into_par_iter()
            .map(|t| {
                let seed = trial_seed(base, t);
                run_trial(sc, &cfg, seed)
                    .map(|(success, values)| TrialRecord {
                        point: pi,
                        trial: t,
                        seed,
                        success,
                        values,
                    })
                    .map_err(|e| {
                        Error::DetectionFailed(format!("point {pi} trial {t} (seed {seed}): {e}"))
                    })
            })
            .collect::<Result<_>>()?;
        let names: Vec<&'static str> = recs
            .first()
            .map(|r| r.values.iter().map(|v| v.0).collect())
            .unwrap_or_default();
        let means = names
            .iter()
            .enumerate()
            .map(|(j, n)| {
                let xs: Vec<f64> = recs
                    .iter()
                    .map(|r| r.values[j].1)
                    .filter(|x| x.is_finite())
                    .collect();
                (
                    *n,
                    if xs.is_empty() {
                        f64::NAN
                    } else {
                        xs.iter().sum::<f64>() / xs.len() as f64
                    },
                )
            })
            .collect();
        summaries.push(PointSummary {
            point: pi,
            params: p.clone(),
            trials: recs.len(),
            successes: recs.iter().filter(|r| r.success).count(),
            means,
        });
        records.extend(recs);
    }
    Ok(RunResult {
        scenario: sc.clone(),
        records,
        summaries,
    })
}

fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.6}")
    }
}

impl RunResult {
    /// `point,trial,seed,<swept keys>,success,<values>`.
    pub fn write_trials_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let swept = self.scenario.swept_keys();
        let names: Vec<&str> = self
            .records
            .first()
            .map(|r| r.values.iter().map(|v| v.0).collect())
            .unwrap_or_default();
        let mut head = vec!["point".to_string(), "trial".into(), "seed".into()];
        head.extend(swept.iter().cloned());
        head.push("success".into());
        head.extend(names.iter().map(|s| s.to_string()));
        writeln!(w, "{}", head.join(","))?;
        for r in &self.records {
            let p = &self.summaries[r.point].params;
            let mut row = vec![r.point.to_string(), r.trial.to_string(), r.seed.to_string()];
            row.extend(swept.iter().map(|k| p[k].clone()));
            row.push((r.success as u8).to_string());
            row.extend(r.values.iter().map(|v| fmt_f(v.1)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// `point,<swept keys>,trials,successes,success_rate,mean_<values>`.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let swept = self.scenario.swept_keys();
        let names: Vec<&str> = self
            .summaries
            .first()
            .map(|s| s.means.iter().map(|v| v.0).collect())
            .unwrap_or_default();
        let mut head = vec!["point".to_string()];
        head.extend(swept.iter().cloned());
        head.extend(["trials", "successes", "success_rate"].map(String::from));
        head.extend(names.iter().map(|n| format!("mean_{n}")));
        writeln!(w, "{}", head.join(","))?;
        for s in &self.summaries {
            let mut row = vec![s.point.to_string()];
            row.extend(swept.iter().map(|k| s.params[k].clone()));
            row.push(s.trials.to_string());
            row.push(s.successes.to_string());
            row.push(fmt_f(s.success_rate()));
            row.extend(s.means.iter().map(|v| fmt_f(v.1)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

// Trials -------------------------------------------------------------------

type Outcome = (bool, Vec<(&'static str, f64)>);

fn run_trial(sc: &Scenario, cfg: &PointConfig, seed: u64) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match sc.procedure {
        Procedure::Sync => sync_trial(sc, cfg, &mut rng),
        Procedure::Npbch => npbch_trial(sc, cfg, &mut rng),
        Procedure::Nprach => nprach_trial(sc, cfg, &mut rng),
        Procedure::LinkDl => link_dl_trial(sc, cfg, &mut rng),
        Procedure::LinkUl => link_ul_trial(sc, cfg, &mut rng),
        Procedure::RandomAccess => random_access_trial(sc, cfg, &mut rng),
        Procedure::Timeline => timeline_trial(sc, cfg, &mut rng),
    }
}

fn b(x: bool) -> f64 {
    x as u8 as f64
}

/// Impaired downlink starting at a random frame with random delay and a
/// random oscillator error within `ppm`. Returns the received samples, the
/// channel and the first frame number.
fn impaired_downlink(
    cfg: &PointConfig,
    subframes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<crate::Complex64>, ChannelSpec, u32)> {
    let frame0: u32 = rng.random_range(0..1024);
    let ppm = if cfg.ppm > 0.0 {
        rng.random_range(-cfg.ppm..=cfg.ppm)
    } else {
        0.0
    };
    let delay = match cfg.delay_us {
        Some(d) => d * 1e-6 * crate::numerology::SAMPLE_RATE_HZ,
        None => rng.random_range(0.0..FRAME_SAMPLES as f64),
    };
    let grids = build_downlink(
        &cfg.cell,
        MIB_STUB,
        frame0 as u64 * 10,
        subframes,
        PoolFill::RandomData,
        rng,
    )?;
    let w = serialize(&grids);
    let spec = ChannelSpec {
        snr_db: cfg.snr_db,
        delay_samples: delay,
        seed: rng.random(),
        ..ChannelSpec::from_oscillator(ppm, cfg.carrier_hz, cfg.raster())
    };
    Ok((channel::apply(&w, &spec).samples, spec, frame0))
}

/// Signed timing error of `est` against the nearest NPSS subframe start,
/// and the index of that NPSS frame relative to the first frame.
fn npss_timing_error(est: f64, spec: &ChannelSpec) -> (f64, i64) {
    let t_in =
        est / (1.0 + spec.drift_ppm * 1e-6) - spec.delay_samples - 5.0 * SUBFRAME_SAMPLES as f64;
    let j = (t_in / FRAME_SAMPLES as f64).round();
    (t_in - j * FRAME_SAMPLES as f64, j as i64)
}

fn search_config(sc: &Scenario, cfg: &PointConfig) -> Result<SearchConfig> {
    Ok(SearchConfig {
        weight: cfg.float(sc, "procedure.weight", DEFAULT_FORGETTING)?,
        carrier_hz: cfg.carrier_hz,
        nsss_occasions: cfg.usize(
            sc,
            "procedure.nsss_occasions",
            crate::receiver::DEFAULT_NSSS_OCCASIONS,
        )?,
        ..SearchConfig::default()
    })
}

fn sync_trial(sc: &Scenario, cfg: &PointConfig, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let segments = cfg.usize(sc, "procedure.segments", 16)?.max(1);
    let need = (segments - 1) * SEGMENT_SAMPLES + SEGMENT_INPUT_SAMPLES;
    let subframes = need / SUBFRAME_SAMPLES + 2 * 10 + 2;
    let (y, spec, frame0) = impaired_downlink(cfg, subframes, rng)?;
    let s = cell_search(&y[..need], &search_config(sc, cfg)?)?;
    let (err, j) = npss_timing_error(s.sample_timing, &spec);
    let pcid_ok = s.detected && s.nb_pcid == cfg.cell.nb_pcid;
    let frame_ok = s.detected && (frame0 as i64 + j).rem_euclid(8) == s.frame_position_80ms as i64;
    let timing_ok = s.detected && err.abs() <= SYNC_TIMING_TOLERANCE;
    Ok((
        s.detected && pcid_ok && timing_ok,
        vec![
            ("detected", b(s.detected)),
            ("pcid_ok", b(pcid_ok)),
            ("frame_ok", b(frame_ok)),
            (
                "timing_error_samples",
                if s.detected { err } else { f64::NAN },
            ),
            (
                "cfo_error_hz",
                if s.detected {
                    s.cfo_hz_estimate - spec.cfo_hz
                } else {
                    f64::NAN
                },
            ),
            ("metric", s.metric_peak),
        ],
    ))
}

fn npbch_trial(sc: &Scenario, cfg: &PointConfig, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let segments = cfg.usize(sc, "procedure.segments", 8)?.max(1);
    let need = (segments - 1) * SEGMENT_SAMPLES + SEGMENT_INPUT_SAMPLES;
    let subframes = segments * 10 + 2 * 640 + 40;
    let (y, spec, frame0) = impaired_downlink(cfg, subframes, rng)?;
    let s = cell_search(&y[..need], &search_config(sc, cfg)?)?;
    let fail = |d: f64| {
        Ok((
            false,
            vec![
                ("sync_ok", d),
                ("raster_ok", 0.0),
                ("frame_ok", 0.0),
                ("attempts", f64::NAN),
                ("elapsed_ms", f64::NAN),
            ],
        ))
    };
    let (err, j) = npss_timing_error(s.sample_timing, &spec);
    if !s.detected || s.nb_pcid != cfg.cell.nb_pcid || err.abs() > SYNC_TIMING_TOLERANCE {
        return fail(0.0);
    }
    let hyps: &[f64] = if cfg.cell.deployment.mode == DeploymentMode::StandAlone {
        &[0.0]
    } else {
        &RASTER_HYPOTHESES_HZ
    };
    let params = NpbchParams {
        carrier_hz: cfg.carrier_hz,
        pcid_map: cfg.cell.pcid_map,
        ..Default::default()
    };
    match npbch_acquire(&y, &s, hyps, &params) {
        Ok(a) => {
            let raster_ok = (a.raster_offset_hz - cfg.raster()).abs() < 1.0;
            let frame_ok = a.sync_frame_number as i64 == (frame0 as i64 + j).rem_euclid(1024)
                && a.mib.system_info_stub == MIB_STUB
                && a.mib.deployment_mode == cfg.cell.deployment.mode;
            Ok((
                raster_ok && frame_ok,
                vec![
                    ("sync_ok", 1.0),
                    ("raster_ok", b(raster_ok)),
                    ("frame_ok", b(frame_ok)),
                    ("attempts", a.attempts as f64),
                    ("elapsed_ms", a.elapsed_ms as f64),
                ],
            ))
        }
        Err(Error::AcquisitionFailed { .. }) => fail(1.0),
        Err(e) => Err(e),
    }
}

fn nprach_trial(sc: &Scenario, cfg: &PointConfig, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let format = match cfg.int(sc, "procedure.format", 0)? {
        0 => NprachFormat::F0,
        1 => NprachFormat::F1,
        f => {
            return perr(
                sc.line_of("procedure.format"),
                format!("NPRACH format {f} not supported"),
            )
        }
    };
    let reps = cfg.usize(sc, "procedure.repetitions", 1)? as u32;
    let nc = NprachConfig {
        format,
        repetitions: reps,
        periodicity_ms: 2560,
        ..NprachConfig::default()
    };
    let sub = match cfg.text("procedure.subcarrier") {
        Some(_) => cfg.usize(sc, "procedure.subcarrier", 0)?,
        None => rng.random_range(nc.subcarriers()),
    };
    let delay_s = match cfg.delay_us {
        Some(d) => d * 1e-6,
        None => rng.random_range(0.0..0.8 * nc.cp_length_s()),
    };
    let (_, w) = build_nprach(&nc, sub, cfg.cell.nb_pcid)?;
    let spec = ChannelSpec {
        snr_db: cfg.snr_db,
        delay_samples: delay_s * w.sample_rate_hz,
        seed: rng.random(),
        ..Default::default()
    };
    let y = channel::apply(&w, &spec);
    let det = nprach_detect(&y.samples, &nc, cfg.cell.nb_pcid)?;
    let hit = det.iter().find(|d| d.start_subcarrier == sub);
    let ta_err = hit
        .map(|d| d.timing_advance_s - delay_s)
        .unwrap_or(f64::NAN);
    let ok = hit.is_some() && ta_err.abs() <= NPRACH_TA_TOLERANCE_S;
    Ok((
        ok,
        vec![
            ("detected", b(hit.is_some())),
            ("ta_error_us", ta_err * 1e6),
            (
                "false_detections",
                det.iter().filter(|d| d.start_subcarrier != sub).count() as f64,
            ),
        ],
    ))
}

fn link_dl_trial(sc: &Scenario, cfg: &PointConfig, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let tbs = cfg.usize(sc, "procedure.tbs", 256)?;
    let reps = cfg.usize(sc, "procedure.repetitions", 1)? as u32;
    let nc = NpdschConfig::new(tbs, reps);
    let tb = TransportBlock::random(tbs, Channel::Npdsch, rng)?;
    let w = serialize(&build_npdsch(&tb, &nc, &cfg.cell)?);
    let y = channel::apply(&w, &ChannelSpec::awgn(cfg.snr_db, rng.random()));
    let (back, crc) = decode_npdsch(&y.samples, &nc, &cfg.cell)?;
    let ok = crc && back == tb;
    Ok((
        ok,
        vec![
            ("block_error", b(!ok)),
            ("subframes", nc.total_subframes(&cfg.cell) as f64),
        ],
    ))
}

fn ul_allocation(sc: &Scenario, cfg: &PointConfig) -> Result<NpuschAllocation> {
    let numerology = match cfg.text("procedure.numerology").unwrap_or("15") {
        "15" | "15k" => Numerology::Khz15,
        "3.75" | "3.75k" => Numerology::Khz3_75,
        n => {
            return perr(
                sc.line_of("procedure.numerology"),
                format!("numerology {n:?} is 15 or 3.75"),
            )
        }
    };
    let scheme = match cfg.text("procedure.scheme").unwrap_or("pi2bpsk") {
        "pi2bpsk" => ModScheme::Pi2Bpsk,
        "pi4qpsk" => ModScheme::Pi4Qpsk,
        s => {
            return perr(
                sc.line_of("procedure.scheme"),
                format!("scheme {s:?} is pi2bpsk or pi4qpsk"),
            )
        }
    };
    let tones = cfg.usize(sc, "procedure.tones", 1)?;
    let offset = cfg.usize(sc, "procedure.tone_offset", 0)?;
    let base = if tones == 1 {
        NpuschAllocation::single_tone(numerology, offset, scheme)
    } else {
        NpuschAllocation {
            numerology,
            ..NpuschAllocation::multi_tone(tones, offset, 1)
        }
    };
    let alloc = NpuschAllocation {
        resource_units: cfg.usize(sc, "procedure.resource_units", 1)?,
        repetitions: cfg.usize(sc, "procedure.repetitions", 1)? as u32,
        ..base
    };
    alloc.validate().map_err(|e| Error::Parse {
        line: sc.line_of("procedure.tones"),
        message: e.to_string(),
    })?;
    Ok(alloc)
}

fn link_ul_trial(sc: &Scenario, cfg: &PointConfig, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let tbs = cfg.usize(sc, "procedure.tbs", 88)?;
    let alloc = ul_allocation(sc, cfg)?;
    let iters = cfg.usize(sc, "procedure.turbo_iterations", DEFAULT_TURBO_ITERATIONS)?;
    let tb = TransportBlock::random(tbs, Channel::NpuschF1, rng)?;
    let w = build_npusch_f1(&tb, &alloc, &cfg.cell)?;
    let y = channel::apply(&w, &ChannelSpec::awgn(cfg.snr_db, rng.random()));
    let (back, crc) = decode_npusch(&y.samples, &alloc, &cfg.cell, tbs, iters)?;
    let ok = crc && back == tb;
    Ok((
        ok,
        vec![
            ("block_error", b(!ok)),
            ("subframes", alloc.subframes() as f64),
        ],
    ))
}

fn random_access_trial(sc: &Scenario, cfg: &PointConfig, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let n = cfg.usize(sc, "procedure.ues", 2)?.max(1);
    let same = cfg.int(sc, "procedure.same_subcarrier", 0)? != 0;
    let rsrp = cfg.float(sc, "procedure.rsrp_dbm", -100.0)?;
    let classes = mac::default_coverage_classes();
    // Colliding UEs share a capability so they can share a preamble.
    let shared_cap = rng.random_bool(0.5);
    let ues: Vec<UeContext> = (0..n)
        .map(|i| {
            let cap = if same {
                shared_cap
            } else {
                rng.random_bool(0.5)
            };
            let mut u = UeContext::new(i as u32, rsrp + rng.random_range(-3.0..3.0), cap);
            u.delay_s = rng.random_range(0.0..40e-6);
            u
        })
        .collect();
    let ra = RaConfig {
        phy_snr_db: cfg.snr_db.is_finite().then_some(cfg.snr_db),
        nb_pcid: cfg.cell.nb_pcid,
        ..RaConfig::default()
    };
    let out = if same {
        // First attempt on a shared subcarrier, then free choice.
        let shared: Vec<UeContext> = ues
            .iter()
            .map(|u| UeContext {
                forced_subcarrier: Some(if u.multitone_capable { 30 } else { 3 }),
                ..u.clone()
            })
            .collect();
        let first = mac::random_access(
            &shared,
            &classes,
            &RaConfig {
                max_attempts: 1,
                ..ra.clone()
            },
            rng,
        )?;
        let resolved_first = first
            .states
            .iter()
            .filter(|s| s.step == mac::RaStep::Resolved)
            .count();
        let again: Vec<UeContext> = ues
            .iter()
            .zip(&first.states)
            .filter(|(_, s)| s.step != mac::RaStep::Resolved)
            .map(|(u, _)| u.clone())
            .collect();
        let mut rest = mac::random_access(&again, &classes, &ra, rng)?;
        for s in &mut rest.states {
            s.attempt_count += 1;
        }
        let cap_ok = first.states.iter().chain(&rest.states).all(capability_ok);
        let resolved = resolved_first
            + rest
                .states
                .iter()
                .filter(|s| s.step == mac::RaStep::Resolved)
                .count();
        let attempts: u32 = first
            .states
            .iter()
            .filter(|s| s.step == mac::RaStep::Resolved)
            .map(|s| s.attempt_count)
            .sum::<u32>()
            + rest.states.iter().map(|s| s.attempt_count).sum::<u32>();
        return Ok((
            resolved == n && cap_ok && resolved_first <= 1,
            vec![
                ("resolved", resolved as f64),
                ("first_attempt_winners", resolved_first as f64),
                ("mean_attempts", attempts as f64 / n as f64),
                ("collisions", (first.collisions + rest.collisions) as f64),
                ("capability_ok", b(cap_ok)),
            ],
        ));
    } else {
        mac::random_access(&ues, &classes, &ra, rng)?
    };
    let resolved = out
        .states
        .iter()
        .filter(|s| s.step == mac::RaStep::Resolved)
        .count();
    let first_winners = out
        .states
        .iter()
        .filter(|s| s.step == mac::RaStep::Resolved && s.attempt_count == 1)
        .count();
    let cap_ok = out.states.iter().all(capability_ok);
    Ok((
        resolved == n && cap_ok,
        vec![
            ("resolved", resolved as f64),
            ("first_attempt_winners", first_winners as f64),
            (
                "mean_attempts",
                out.states
                    .iter()
                    .map(|s| s.attempt_count as f64)
                    .sum::<f64>()
                    / n as f64,
            ),
            ("collisions", out.collisions as f64),
            ("capability_ok", b(cap_ok)),
        ],
    ))
}

fn capability_ok(s: &mac::RandomAccessState) -> bool {
    s.inferred_multitone
        .is_none_or(|m| m == s.multitone_capable)
}

fn timeline_trial(sc: &Scenario, cfg: &PointConfig, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let grants = cfg.usize(sc, "procedure.grants", 20)?;
    let mut tl = ScheduleTimeline::new();
    let mut t = 0u64;
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let mut bits = 0usize;
    for _ in 0..grants {
        t += rng.random_range(0..6);
        let dci_len = 1 << rng.random_range(0..3);
        let res = if rng.random_bool(0.5) {
            let data = rng.random_range(1..=6);
            let g = DlGrant {
                dci_start: t,
                dci_subframes: dci_len,
                data_start: t + dci_len + rng.random_range(2..8),
                data_subframes: data,
                ack_start: 0,
                ack_subframes: 1,
            };
            let g = DlGrant {
                ack_start: g.data_start + data + rng.random_range(10..16),
                ..g
            };
            tl.schedule_dl(g).map(|_| (g.end(), 680))
        } else {
            let data = rng.random_range(1..=8);
            let g = UlGrant {
                dci_start: t,
                dci_subframes: dci_len,
                data_start: t + dci_len + rng.random_range(6..12),
                data_subframes: data,
            };
            tl.schedule_ul(g).map(|_| (g.end(), 1000))
        };
        match res {
            Ok((end, tbs)) => {
                accepted += 1;
                bits += tbs;
                t = end + mac::DEFAULT_TURNAROUND;
            }
            Err(Error::Scheduling(_)) => rejected += 1,
            Err(e) => return Err(e),
        }
    }
    let span = tl.busy_until().max(1);
    let throughput = bits as f64 / (span as f64 * 1e-3);
    let below_peak = throughput < mac::peak_rate(crate::phy_dl::Direction::Ul);
    Ok((
        below_peak,
        vec![
            ("accepted", accepted as f64),
            ("rejected", rejected as f64),
            ("throughput_bps", throughput),
        ],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# comment
[scenario]
name = t
procedure = link_dl
trials = 3
seed = 5

[cell]
mode = in-band
nb_pcid = 4
lte_bandwidth_mhz = 10
prb_index = 30

[channel]
snr_db = 20, 30

[procedure]
tbs = 56
repetitions = 1, 2
";

    #[test]
    fn parses_and_sweeps() {
        let sc = parse(SAMPLE).unwrap();
        assert_eq!(sc.procedure, Procedure::LinkDl);
        assert_eq!(sc.trials, 3);
        assert_eq!(sc.points().len(), 4);
        assert_eq!(
            sc.swept_keys(),
            vec![
                "channel.snr_db".to_string(),
                "procedure.repetitions".to_string()
            ]
        );
    }

    #[test]
    fn parse_errors_carry_lines() {
        let bad = SAMPLE.replace("tbs = 56", "tbs = many");
        match parse(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 19),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse("[scenario]\nprocedure = dance\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse("[nope]\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse("[scenario]\nprocedure = sync\ntrials = 0\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse("[scenario]\nprocedure = sync\n[channel]\nsnr_db = inf\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn runs_deterministically() {
        let sc = parse(SAMPLE).unwrap();
        let a = run(&sc, None).unwrap();
        let b = run(&sc, None).unwrap();
        assert_eq!(a, b);
        assert!(a.summaries.iter().all(|s| s.successes == 3));
        let mut csv = Vec::new();
        a.write_summary_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with(
            "point,channel.snr_db,procedure.repetitions,trials,successes,success_rate"
        ));
    }
}
