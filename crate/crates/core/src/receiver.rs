//! Receive-side algorithms.
//!
//! Cell search runs in three stages. [`npss_search`] correlates every
//! 10 ms segment against the NPSS under seven coarse CFO hypotheses and
//! accumulates a differential metric with exponential forgetting.
//! [`estimate_cfo`] and [`refine_timing`] then use the most recent NPSS
//! occasions for fractional corrections, and [`nsss_detect`] finds the cell
//! identity and the 80 ms position. [`npbch_acquire`] decodes the MIB under a
//! set of raster-offset hypotheses, each implying a different sampling-clock
//! correction.
//!
//! Timing values are absolute sample indexes into the slice handed to the
//! function. A timing `t` means the subframe of interest starts at `t`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::coding::{self, Channel, ModScheme, Scheme, TransportBlock};
use crate::error::{arg_err, Error, Result};
use crate::grid::{
    data_positions, npbch_positions, nrs_positions, re_index, CellConfig, PcidMap, NRS_SYMBOLS,
};
use crate::numerology::{
    symbol_body_offset, DEFAULT_CARRIER_HZ, FFT_SIZE, FRAME_SAMPLES, SAMPLE_RATE_HZ, SUBCARRIERS,
    SUBFRAME_SAMPLES,
};
use crate::ofdm::{demodulate_subframe, fft, ifft, symbol_body, tone_bin};
use crate::phy_dl::{
    npbch_codeword, npbch_scrambling, pool_subframes, Mib, NpdschConfig, NPBCH_CODED_BITS,
    NPBCH_SUBBLOCKS, NPBCH_SUBBLOCK_BITS, NPBCH_TTI_FRAMES,
};
use crate::phy_ul::{
    dft_deprecode, dmrs_values, group_samples, nprach_hopping, slot_symbol_body_offset, tone_at,
    NprachConfig, NpuschAllocation, NpuschFormat, NPRACH_SYMBOLS_PER_GROUP, NPRACH_SYMBOL_SAMPLES,
    NPRACH_TONES,
};
use crate::sequences::{
    generate_npss, generate_nsss, nrs_values, NPSS_CODE_COVER, NPSS_LEN, NSSS_LEN,
};
use crate::Bit;

pub const CFO_HYPOTHESES_HZ: [f64; 7] = [
    -22_500.0, -15_000.0, -7_500.0, 0.0, 7_500.0, 15_000.0, 22_500.0,
];
pub const DEFAULT_FORGETTING: f64 = 0.9;
pub const SEGMENT_SAMPLES: usize = FRAME_SAMPLES;
/// A segment is read with one extra subframe so an NPSS near its end is
/// complete.
pub const SEGMENT_INPUT_SAMPLES: usize = FRAME_SAMPLES + SUBFRAME_SAMPLES;
pub const NPSS_SUBFRAME: usize = 5;
pub const NSSS_SUBFRAME: usize = 9;
pub const DEFAULT_NSSS_OCCASIONS: usize = 8;
/// Most recent NPSS occasions used for fractional CFO and timing.
pub const FINE_OCCASIONS: usize = 64;
/// Best NSSS hypothesis over the hypothesis mean, by number of occasions
/// combined (1..=8, more use the last). Under noise each hypothesis sum is
/// Gamma(M, 1/M) after normalization; these are its quantiles at which the
/// maximum over all 4032 hypotheses (PCID, shift, parity) exceeds the
/// threshold with probability 1%.
pub const NSSS_THRESHOLDS: [f64; 8] = [12.902, 7.859, 6.037, 5.073, 4.467, 4.047, 3.736, 3.496];

pub fn nsss_threshold(occasions: usize) -> f64 {
    NSSS_THRESHOLDS[occasions.clamp(1, NSSS_THRESHOLDS.len()) - 1]
}
/// NPRACH group energy over the noise floor, per group.
pub const NPRACH_THRESHOLD: f64 = 4.0;
pub const CFO_FINE_SPAN_HZ: f64 = 700.0;

/// Peak-to-mean thresholds of the accumulated NPSS metric at the default
/// forgetting factor, keyed by segments accumulated. Each is the 99.5%
/// quantile of the noise-only ratio (tests/calibration.rs), leaving margin
/// under a 1% false-alarm rate. Counts between entries use the next smaller
/// entry.
pub const NPSS_THRESHOLDS: [(usize, f64); 7] = [
    (1, 7.25),
    (2, 6.40),
    (4, 5.67),
    (8, 5.30),
    (16, 5.14),
    (32, 5.08),
    (64, 5.06),
];

const CORR_FFT: usize = 32_768;

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// NPSS threshold for `segments` accumulated segments.
pub fn npss_threshold(segments: usize) -> f64 {
    NPSS_THRESHOLDS
        .iter()
        .rev()
        .find(|(k, _)| *k <= segments.max(1))
        .map(|(_, t)| *t)
        .unwrap_or(NPSS_THRESHOLDS[0].1)
}

// NPSS search --------------------------------------------------------------

struct NpssReference {
    /// `conj(FFT(p_h))` per CFO hypothesis, zero padded to `CORR_FFT`.
    spectra: Vec<Vec<Complex64>>,
    /// Symbol body offsets of the 11 NPSS symbols inside their subframe.
    offsets: [usize; NPSS_LEN],
    /// Per-subcarrier reference of symbol `l`: cover times base sequence.
    grid: Vec<Vec<Complex64>>,
}

fn npss_reference() -> &'static NpssReference {
    static REF: OnceLock<NpssReference> = OnceLock::new();
    REF.get_or_init(|| {
        let npss = generate_npss();
        let body = symbol_body(&npss.base.values);
        let spectra = CFO_HYPOTHESES_HZ
            .iter()
            .map(|&f| {
                let mut buf = vec![czero(); CORR_FFT];
                for (n, v) in body.iter().enumerate() {
                    buf[n] =
                        v * Complex64::from_polar(1.0, 2.0 * PI * f * n as f64 / SAMPLE_RATE_HZ);
                }
                fft(&mut buf);
                buf.iter().map(|v| v.conj()).collect()
            })
            .collect();
        let mut offsets = [0; NPSS_LEN];
        for (l, o) in offsets.iter_mut().enumerate() {
            *o = symbol_body_offset(3 + l);
        }
        let grid = npss.symbols.clone();
        NpssReference {
            spectra,
            offsets,
            grid,
        }
    })
}

/// Accumulated NPSS metric, one 10 ms buffer per coarse CFO hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatorState {
    pub buffers: Vec<Vec<Complex64>>,
    /// Forgetting factor: the buffer becomes `weight * old + new`.
    pub weight: f64,
    pub segments_accumulated: usize,
    /// Absolute index of the next segment to read.
    pub samples_consumed: usize,
    /// Absolute index of the most recent segment.
    pub last_segment_start: usize,
}

impl AccumulatorState {
    pub fn new(weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight <= 1.0) {
            return arg_err(format!("forgetting factor {weight} outside (0, 1]"));
        }
        Ok(AccumulatorState {
            buffers: vec![vec![czero(); SEGMENT_SAMPLES]; CFO_HYPOTHESES_HZ.len()],
            weight,
            segments_accumulated: 0,
            samples_consumed: 0,
            last_segment_start: 0,
        })
    }

    /// Add one segment of `SEGMENT_INPUT_SAMPLES` samples.
    pub fn accumulate(&mut self, segment: &[Complex64]) -> Result<()> {
        let metric = segment_metric(segment)?;
        for (buf, new) in self.buffers.iter_mut().zip(metric) {
            for (b, n) in buf.iter_mut().zip(new) {
                *b = *b * self.weight + n;
            }
        }
        self.segments_accumulated += 1;
        Ok(())
    }

    /// `(hypothesis, lag, |B|, mean |B|)` of the largest buffer entry.
    pub fn peak(&self) -> (usize, usize, f64, f64) {
        let mut best = (0, 0, 0.0);
        let mut sum = 0.0;
        for (h, buf) in self.buffers.iter().enumerate() {
            for (t, v) in buf.iter().enumerate() {
                let a = v.norm();
                sum += a;
                if a > best.2 {
                    best = (h, t, a);
                }
            }
        }
        let mean = sum / (self.buffers.len() * SEGMENT_SAMPLES) as f64;
        (best.0, best.1, best.2, mean)
    }
}

/// Differential NPSS metric of one segment, `D_h(t)` for every lag `t` of
/// the 10 ms segment and every CFO hypothesis `h`.
pub fn segment_metric(segment: &[Complex64]) -> Result<Vec<Vec<Complex64>>> {
    if segment.len() < SEGMENT_INPUT_SAMPLES {
        return arg_err(format!(
            "a segment needs {SEGMENT_INPUT_SAMPLES} samples, got {}",
            segment.len()
        ));
    }
    let r = npss_reference();
    let mut spec = vec![czero(); CORR_FFT];
    spec[..SEGMENT_INPUT_SAMPLES].copy_from_slice(&segment[..SEGMENT_INPUT_SAMPLES]);
    fft(&mut spec);
    let cover: Vec<f64> = NPSS_CODE_COVER.iter().map(|&c| c as f64).collect();
    let mut out = Vec::with_capacity(CFO_HYPOTHESES_HZ.len());
    let mut corr = vec![czero(); CORR_FFT];
    for ref_spec in &r.spectra {
        for ((c, s), p) in corr.iter_mut().zip(&spec).zip(ref_spec) {
            *c = s * p;
        }
        ifft(&mut corr);
        let d: Vec<Complex64> = (0..SEGMENT_SAMPLES)
            .map(|t| {
                let mut acc = czero();
                for l in 0..NPSS_LEN - 1 {
                    let a = corr[t + r.offsets[l]];
                    let b = corr[t + r.offsets[l + 1]];
                    acc += a * b.conj() * (cover[l] * cover[l + 1]);
                }
                // Undo the unnormalized transform pair.
                acc / (CORR_FFT as f64 * CORR_FFT as f64)
            })
            .collect();
        out.push(d);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncResult {
    pub detected: bool,
    /// Start of the NPSS subframe in the most recent segment.
    pub sample_timing: f64,
    pub cfo_hz_estimate: f64,
    pub nb_pcid: u16,
    /// Frame number modulo 8 of the frame holding `sample_timing`.
    pub frame_position_80ms: u8,
    /// Peak-to-mean ratio of the accumulated NPSS metric.
    pub metric_peak: f64,
    pub accumulation_count: usize,
}

/// Accumulate every complete segment of `samples`, whose first element is
/// absolute index `state.samples_consumed`. Detection compares the buffer
/// peak-to-mean ratio against `threshold` (default: [`npss_threshold`]).
pub fn npss_search(
    samples: &[Complex64],
    state: &mut AccumulatorState,
    threshold: Option<f64>,
) -> Result<SyncResult> {
    let mut pos = 0;
    while pos + SEGMENT_INPUT_SAMPLES <= samples.len() {
        state.accumulate(&samples[pos..pos + SEGMENT_INPUT_SAMPLES])?;
        state.last_segment_start = state.samples_consumed + pos;
        pos += SEGMENT_SAMPLES;
    }
    state.samples_consumed += pos;
    if state.segments_accumulated == 0 {
        return arg_err("at least one full 10 ms segment is needed");
    }
    let (h, lag, peak, mean) = state.peak();
    let ratio = if mean > 0.0 { peak / mean } else { 0.0 };
    let thr = threshold.unwrap_or_else(|| npss_threshold(state.segments_accumulated));
    let b = state.buffers[h][lag];
    Ok(SyncResult {
        detected: ratio > thr,
        sample_timing: (state.last_segment_start + lag) as f64,
        cfo_hz_estimate: coarse_cfo(CFO_HYPOTHESES_HZ[h], b),
        nb_pcid: 0,
        frame_position_80ms: 0,
        metric_peak: ratio,
        accumulation_count: state.segments_accumulated,
    })
}

/// Mean spacing of adjacent NPSS symbol bodies.
fn npss_symbol_spacing() -> f64 {
    let o = npss_reference().offsets;
    (o[NPSS_LEN - 1] - o[0]) as f64 / (NPSS_LEN - 1) as f64
}

/// CFO from the phase of the accumulated differential metric. The phase
/// aliases every `fs / spacing` Hz; the alias nearest the winning
/// hypothesis is taken.
fn coarse_cfo(hypothesis_hz: f64, b: Complex64) -> f64 {
    let spacing = npss_symbol_spacing();
    let alias = SAMPLE_RATE_HZ / spacing;
    let base = -b.arg() * SAMPLE_RATE_HZ / (2.0 * PI * spacing);
    let m = ((hypothesis_hz - base) / alias).round();
    base + m * alias
}

// Fine CFO, timing, NSSS --------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub weight: f64,
    /// Overrides the calibrated NPSS threshold.
    pub threshold: Option<f64>,
    pub carrier_hz: f64,
    pub nsss_occasions: usize,
    pub pcid_candidates: Option<Vec<u16>>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            weight: DEFAULT_FORGETTING,
            threshold: None,
            carrier_hz: DEFAULT_CARRIER_HZ,
            nsss_occasions: DEFAULT_NSSS_OCCASIONS,
            pcid_candidates: None,
        }
    }
}

/// Copy one subframe at fractional start `t`, remove `cfo_hz` using
/// absolute sample indexes and OFDM-demodulate it.
fn subframe_at(samples: &[Complex64], t: f64, cfo_hz: f64) -> Option<Vec<Complex64>> {
    if t < 0.0 {
        return None;
    }
    let base = t.floor() as usize;
    if base + SUBFRAME_SAMPLES > samples.len() {
        return None;
    }
    let step = cfo_hz / SAMPLE_RATE_HZ;
    let buf: Vec<Complex64> = samples[base..base + SUBFRAME_SAMPLES]
        .iter()
        .enumerate()
        .map(|(n, &v)| {
            v * Complex64::from_polar(1.0, -2.0 * PI * (step * (base + n) as f64).fract())
        })
        .collect();
    Some(demodulate_subframe(&buf, t - base as f64))
}

/// Starts of the `count` most recent occasions of a once-per-frame signal,
/// newest first, given the newest at `t` and a sampling drift `eps`.
fn occasion_starts(t: f64, eps: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|j| t - (j * FRAME_SAMPLES) as f64 * (1.0 + eps))
        .filter(|&s| s >= 0.0)
        .collect()
}

/// NPSS elements times the conjugate reference, `[occasion][symbol][k]`.
fn npss_products(
    samples: &[Complex64],
    sync: &SyncResult,
    cfo: f64,
    carrier_hz: f64,
) -> Vec<Vec<Vec<Complex64>>> {
    let r = npss_reference();
    let n = sync.accumulation_count.clamp(1, FINE_OCCASIONS);
    occasion_starts(sync.sample_timing, cfo / carrier_hz, n)
        .into_iter()
        .filter_map(|t| subframe_at(samples, t, cfo))
        .map(|g| {
            (0..NPSS_LEN)
                .map(|l| {
                    (0..NPSS_LEN)
                        .map(|k| g[re_index(k, 3 + l)] * r.grid[l][k].conj())
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Refined CFO: a periodogram over `±CFO_FINE_SPAN_HZ` around the coarse
/// estimate, coherent over the 11 symbols of an occasion and non-coherent
/// across occasions.
pub fn estimate_cfo(samples: &[Complex64], sync: &SyncResult, carrier_hz: f64) -> f64 {
    let coarse = sync.cfo_hz_estimate;
    let prods = npss_products(samples, sync, coarse, carrier_hz);
    if prods.is_empty() {
        return coarse;
    }
    let times: Vec<f64> = npss_reference()
        .offsets
        .iter()
        .map(|&o| o as f64 + FFT_SIZE as f64 / 2.0)
        .collect();
    let sums: Vec<Vec<Complex64>> = prods
        .iter()
        .map(|occ| occ.iter().map(|sym| sym.iter().sum()).collect())
        .collect();
    let metric = |df: f64| -> f64 {
        sums.iter()
            .map(|u| {
                u.iter()
                    .zip(&times)
                    .map(|(v, &t)| {
                        v * Complex64::from_polar(1.0, -2.0 * PI * df * t / SAMPLE_RATE_HZ)
                    })
                    .sum::<Complex64>()
                    .norm_sqr()
            })
            .sum()
    };
    let step = 5.0;
    let n = (CFO_FINE_SPAN_HZ / step) as i64;
    let (mut best_i, mut best_m) = (0i64, f64::MIN);
    for i in -n..=n {
        let m = metric(i as f64 * step);
        if m > best_m {
            best_m = m;
            best_i = i;
        }
    }
    let f = best_i as f64 * step;
    // Parabolic interpolation between grid points.
    let (a, b, c) = (metric(f - step), best_m, metric(f + step));
    let denom = a - 2.0 * b + c;
    let delta = if denom < 0.0 {
        0.5 * (a - c) / denom
    } else {
        0.0
    };
    coarse + f + delta.clamp(-1.0, 1.0) * step
}

/// Fractional timing from the phase slope across NPSS subcarriers.
pub fn refine_timing(samples: &[Complex64], sync: &SyncResult, carrier_hz: f64) -> f64 {
    let prods = npss_products(samples, sync, sync.cfo_hz_estimate, carrier_hz);
    let mut s = czero();
    for occ in &prods {
        // Per-subcarrier channel of the occasion, averaged over its symbols.
        let h: Vec<Complex64> = (0..NPSS_LEN)
            .map(|k| occ.iter().map(|sym| sym[k]).sum())
            .collect();
        for k in 0..NPSS_LEN - 1 {
            s += h[k] * h[k + 1].conj();
        }
    }
    if s.norm() == 0.0 {
        return sync.sample_timing;
    }
    sync.sample_timing + s.arg() * FFT_SIZE as f64 / (2.0 * PI)
}

fn nsss_table() -> &'static Vec<Vec<Complex64>> {
    static TABLE: OnceLock<Vec<Vec<Complex64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(504 * 4);
        for pcid in 0..504u16 {
            for theta in 0..4u32 {
                t.push(
                    generate_nsss(pcid, 2 * theta)
                        .expect("valid pcid and even frame")
                        .values,
                );
            }
        }
        t
    })
}

/// Maximum-likelihood NB-PCID and 80 ms position. Hypotheses are
/// (pcid, shift of the newest NSSS, frame parity); the metric is coherent
/// inside an occasion and summed in power across occasions.
pub fn nsss_detect(
    samples: &[Complex64],
    sync: &SyncResult,
    cfg: &SearchConfig,
) -> Result<(u16, u8)> {
    let eps = sync.cfo_hz_estimate / cfg.carrier_hz;
    let t0 = sync.sample_timing
        + ((NSSS_SUBFRAME - NPSS_SUBFRAME) * SUBFRAME_SAMPLES) as f64 * (1.0 + eps);
    // frames[j]: NSSS subframe values of the frame j back from the newest.
    let frames: Vec<Option<Vec<Complex64>>> = (0..2 * cfg.nsss_occasions)
        .map(|j| {
            let t = t0 - (j * FRAME_SAMPLES) as f64 * (1.0 + eps);
            subframe_at(samples, t, sync.cfo_hz_estimate).map(|g| {
                (0..NSSS_LEN)
                    .map(|i| g[re_index(i % SUBCARRIERS, 3 + i / SUBCARRIERS)])
                    .collect()
            })
        })
        .collect();
    let table = nsss_table();
    let candidates: Vec<u16> = match &cfg.pcid_candidates {
        Some(c) if !c.is_empty() => c.iter().copied().filter(|&p| p <= 503).collect(),
        _ => (0..504).collect(),
    };
    if candidates.is_empty() {
        return arg_err("no valid NB-PCID candidates");
    }
    let mut best = (0u16, 0usize, 0usize, f64::MIN);
    let mut sum = [0.0; 2];
    let mut count = [0usize; 2];
    let mut best_threshold = NSSS_THRESHOLDS[0];
    for parity in 0..2 {
        // corr[m][seq]: NSSS occasion m (frame parity + 2m back) against every sequence.
        // Keep each occasion's distance from the newest even when the
        // newest ones lie beyond the input.
        let occ: Vec<(usize, &Vec<Complex64>)> = frames
            .iter()
            .skip(parity)
            .step_by(2)
            .enumerate()
            .filter_map(|(m, f)| f.as_ref().map(|f| (m, f)))
            .collect();
        if occ.is_empty() {
            continue;
        }
        let threshold = nsss_threshold(occ.len());
        for &pcid in &candidates {
            let mut per_theta = [0.0f64; 4];
            for &(m, y) in &occ {
                for theta in 0..4 {
                    let seq = &table[pcid as usize * 4 + theta];
                    let c: Complex64 = y.iter().zip(seq).map(|(a, b)| a * b.conj()).sum();
                    // Occasion m sits m NSSS periods before the newest.
                    let newest = (theta + m) % 4;
                    per_theta[newest] += c.norm_sqr();
                }
            }
            for (theta, &v) in per_theta.iter().enumerate() {
                sum[parity] += v;
                count[parity] += 1;
                if v > best.3 {
                    best = (pcid, theta, parity, v);
                    best_threshold = threshold;
                }
            }
        }
    }
    if count[best.2] == 0 {
        return Err(Error::DetectionFailed(
            "no complete NSSS occasion in the input".into(),
        ));
    }
    // Normalize by the mean of the winning parity, whose hypotheses share
    // the same number of combined occasions.
    let mean = sum[best.2] / count[best.2] as f64;
    if mean <= 0.0 || best.3 / mean < best_threshold {
        return Err(Error::DetectionFailed(format!(
            "NSSS metric {:.2} below threshold {best_threshold}",
            if mean > 0.0 { best.3 / mean } else { 0.0 }
        )));
    }
    // The newest NSSS frame has number 2*theta mod 8 and is `parity`
    // frames before the newest NPSS frame.
    let pos = ((2 * best.1 + best.2) % 8) as u8;
    Ok((best.0, pos))
}

/// Full cell search: NPSS detection, fine CFO and timing, NSSS.
pub fn cell_search(samples: &[Complex64], cfg: &SearchConfig) -> Result<SyncResult> {
    let mut state = AccumulatorState::new(cfg.weight)?;
    let mut sync = npss_search(samples, &mut state, cfg.threshold)?;
    if !sync.detected {
        return Ok(sync);
    }
    sync.cfo_hz_estimate = estimate_cfo(samples, &sync, cfg.carrier_hz);
    sync.sample_timing = refine_timing(samples, &sync, cfg.carrier_hz);
    match nsss_detect(samples, &sync, cfg) {
        Ok((pcid, pos)) => {
            sync.nb_pcid = pcid;
            sync.frame_position_80ms = pos;
        }
        Err(Error::DetectionFailed(_)) => sync.detected = false,
        Err(e) => return Err(e),
    }
    Ok(sync)
}

// Channel estimation -------------------------------------------------------

/// Least-squares plane `a + b (l - l0) + c (k - k0)` through reference
/// observations, with the residual variance as noise estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneEstimate {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub l0: f64,
    pub k0: f64,
    pub noise_var: f64,
}

impl PlaneEstimate {
    /// Parameter mean of estimates sharing the same reference pattern.
    pub fn average(ests: &[PlaneEstimate]) -> Self {
        let n = ests.len() as f64;
        let mut e = ests[0];
        e.a = ests.iter().map(|x| x.a).sum::<Complex64>() / n;
        e.b = ests.iter().map(|x| x.b).sum::<Complex64>() / n;
        e.c = ests.iter().map(|x| x.c).sum::<Complex64>() / n;
        e.noise_var = ests.iter().map(|x| x.noise_var).sum::<f64>() / n;
        e
    }

    /// Fit from `(k, l, y / x)` samples.
    pub fn fit(obs: &[(f64, f64, Complex64)]) -> Self {
        let n = obs.len() as f64;
        let k0 = obs.iter().map(|o| o.0).sum::<f64>() / n;
        let l0 = obs.iter().map(|o| o.1).sum::<f64>() / n;
        let a = obs.iter().map(|o| o.2).sum::<Complex64>() / n;
        let skk: f64 = obs.iter().map(|o| (o.0 - k0).powi(2)).sum();
        let sll: f64 = obs.iter().map(|o| (o.1 - l0).powi(2)).sum();
        let c = if skk > 0.0 {
            obs.iter().map(|o| o.2 * (o.0 - k0)).sum::<Complex64>() / skk
        } else {
            czero()
        };
        let b = if sll > 0.0 {
            obs.iter().map(|o| o.2 * (o.1 - l0)).sum::<Complex64>() / sll
        } else {
            czero()
        };
        let mut e = PlaneEstimate {
            a,
            b,
            c,
            l0,
            k0,
            noise_var: 0.0,
        };
        let params = 1 + (skk > 0.0) as usize + (sll > 0.0) as usize;
        let resid: f64 = obs.iter().map(|o| (o.2 - e.at(o.0, o.1)).norm_sqr()).sum();
        e.noise_var = if obs.len() > params {
            resid / (obs.len() - params) as f64
        } else {
            0.0
        };
        e
    }

    pub fn at(&self, k: f64, l: f64) -> Complex64 {
        self.a + self.b * (l - self.l0) + self.c * (k - self.k0)
    }
}

/// NRS-based estimate for one demodulated downlink subframe (port 0).
pub fn estimate_dl_channel(grid: &[Complex64], nb_pcid: u16, subframe: u32) -> PlaneEstimate {
    let vals = nrs_values(nb_pcid, subframe, 0);
    let obs: Vec<(f64, f64, Complex64)> = nrs_positions(nb_pcid, 0)
        .iter()
        .zip(&vals)
        .map(|(&(k, l), x)| (k as f64, l as f64, grid[re_index(k, l)] / x))
        .collect();
    debug_assert_eq!(obs.len(), 2 * NRS_SYMBOLS.len());
    PlaneEstimate::fit(&obs)
}

const NOISE_FLOOR: f64 = 1e-9;

/// Unnormalized QPSK LLRs `(Re, Im)` of `conj(H) y`; positive favors 0.
fn qpsk_soft(y: Complex64, h: Complex64, noise_var: f64) -> [f64; 2] {
    let z = h.conj() * y * (2.0 * std::f64::consts::SQRT_2 / noise_var.max(NOISE_FLOOR));
    [z.re, z.im]
}

// NPBCH ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct NpbchParams {
    pub carrier_hz: f64,
    pub pcid_map: PcidMap,
    /// TTI-long attempts before giving up.
    pub max_attempts: u32,
}

impl Default for NpbchParams {
    fn default() -> Self {
        NpbchParams {
            carrier_hz: DEFAULT_CARRIER_HZ,
            pcid_map: PcidMap::Identity,
            max_attempts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpbchAcquisition {
    pub mib: Mib,
    pub raster_offset_hz: f64,
    /// Sub-block index of the sub-block that completed decoding.
    pub sub_block: u8,
    /// Frame number of the frame holding `sync.sample_timing`.
    pub sync_frame_number: u32,
    pub attempts: u32,
    /// Simulated time from the sync reference to the end of the last
    /// NPBCH subframe used.
    pub elapsed_ms: u64,
    /// Coherent agreement between the received sub-blocks and the
    /// re-encoded MIB under a flat channel estimate; higher means better
    /// timing alignment.
    pub metric: f64,
}

/// Full raster-offset hypothesis set.
pub const RASTER_HYPOTHESES_HZ: [f64; 5] = [0.0, -2_500.0, 2_500.0, -7_500.0, 7_500.0];

struct SubBlockObs {
    /// Soft bits before descrambling.
    llr: Vec<f64>,
    /// Equalizer-free products `y * conj(mean H)` per QPSK symbol, for the
    /// selection metric.
    flat: Vec<Complex64>,
}

/// Decode the MIB. Each raster hypothesis `r` implies the clock correction
/// `(cfo - r) / carrier`; the hypothesis that matches the true raster
/// offset keeps NPBCH subframes aligned. After every sub-block all
/// (hypothesis, sub-block index) pairs are tried; among CRC-passing pairs
/// the best metric wins.
pub fn npbch_acquire(
    samples: &[Complex64],
    sync: &SyncResult,
    hypotheses: &[f64],
    params: &NpbchParams,
) -> Result<NpbchAcquisition> {
    if hypotheses.is_empty() {
        return arg_err("at least one raster hypothesis");
    }
    let mut cell = CellConfig::standalone(sync.nb_pcid).with_pcid_map(params.pcid_map);
    cell.lte_pcid = params.pcid_map.apply(sync.nb_pcid);
    let positions = npbch_positions(&cell);
    let fp = sync.frame_position_80ms as usize % 8;
    // Frames after the sync frame until the next sub-block boundary.
    let first = if fp == 0 { 8 } else { 8 - fp };
    let sf_offset = |j: usize| ((10 * j - NPSS_SUBFRAME) * SUBFRAME_SAMPLES) as f64;
    let descr: Vec<Vec<f64>> = (0..NPBCH_SUBBLOCKS)
        .map(|i| {
            npbch_scrambling(sync.nb_pcid, i)
                .iter()
                .map(|&c| 1.0 - 2.0 * c as f64)
                .collect()
        })
        .collect();
    let mut elapsed_ms = 0u64;
    for attempt in 0..params.max_attempts {
        // obs[h][sb]: sub-blocks received so far in this attempt.
        let mut obs: Vec<Vec<SubBlockObs>> = hypotheses.iter().map(|_| Vec::new()).collect();
        for sb in 0..NPBCH_SUBBLOCKS {
            let j0 = first + NPBCH_TTI_FRAMES as usize * attempt as usize + 8 * sb;
            let mut complete = true;
            for (h, &r) in hypotheses.iter().enumerate() {
                let eps = (sync.cfo_hz_estimate - r) / params.carrier_hz;
                let mut llr = vec![0.0; NPBCH_SUBBLOCK_BITS];
                let mut flat = vec![czero(); positions.len()];
                for rep in 0..8 {
                    let t = sync.sample_timing + sf_offset(j0 + rep) * (1.0 + eps);
                    let Some(g) = subframe_at(samples, t, sync.cfo_hz_estimate) else {
                        complete = false;
                        break;
                    };
                    let est = estimate_dl_channel(&g, sync.nb_pcid, 0);
                    for (i, &(k, l)) in positions.iter().enumerate() {
                        let y = g[re_index(k, l)];
                        let s = qpsk_soft(y, est.at(k as f64, l as f64), est.noise_var.max(1e-3));
                        llr[2 * i] += s[0];
                        llr[2 * i + 1] += s[1];
                        flat[i] += y * est.a.conj();
                    }
                }
                if !complete {
                    break;
                }
                obs[h].push(SubBlockObs { llr, flat });
            }
            if !complete {
                return Err(Error::AcquisitionFailed {
                    attempts: attempt + 1,
                    elapsed_ms,
                });
            }
            // End of the NPBCH subframe of frame j0 + 7, from the sync NPSS.
            elapsed_ms = ((j0 + 7) * 10 + 1 - NPSS_SUBFRAME) as u64;
            // Try every (hypothesis, index of the first sub-block) pair.
            let mut winner: Option<(f64, usize, Mib, usize)> = None;
            for (h, blocks) in obs.iter().enumerate() {
                for i0 in 0..NPBCH_SUBBLOCKS {
                    // Sub-blocks of the TTI that holds the newest one.
                    let newest = (i0 + sb) % NPBCH_SUBBLOCKS;
                    let from = sb - newest.min(sb);
                    let mut buf = vec![0.0; NPBCH_CODED_BITS];
                    for (s, o) in blocks.iter().enumerate().skip(from) {
                        let idx = (i0 + s) % NPBCH_SUBBLOCKS;
                        for (b, (&v, &d)) in o.llr.iter().zip(&descr[idx]).enumerate() {
                            buf[idx * NPBCH_SUBBLOCK_BITS + b] += v * d;
                        }
                    }
                    let mother = coding::rate_dematch(
                        &buf,
                        Scheme::Tbcc,
                        coding::mother_length(Scheme::Tbcc, 34, Channel::Npbch),
                    );
                    let (tb, ok) = coding::viterbi_decode(&mother, 34, Channel::Npbch)?;
                    if !ok {
                        continue;
                    }
                    let Ok(mib) = Mib::from_bits(&tb.payload_bits) else {
                        continue;
                    };
                    let metric = npbch_metric(
                        &mib,
                        &blocks[from..],
                        (i0 + from) % NPBCH_SUBBLOCKS,
                        sync.nb_pcid,
                    );
                    if winner.as_ref().is_none_or(|w| metric > w.0) {
                        winner = Some((metric, h, mib, newest));
                    }
                }
            }
            if let Some((metric, h, mib, newest)) = winner {
                // The newest sub-block starts j0 frames after the sync frame.
                let sync_frame = (mib.first_frame() as i64 + 8 * newest as i64 - j0 as i64)
                    .rem_euclid(1024) as u32;
                return Ok(NpbchAcquisition {
                    mib,
                    raster_offset_hz: hypotheses[h],
                    sub_block: newest as u8,
                    sync_frame_number: sync_frame,
                    attempts: attempt + 1,
                    elapsed_ms,
                    metric,
                });
            }
        }
    }
    Err(Error::AcquisitionFailed {
        attempts: params.max_attempts,
        elapsed_ms,
    })
}

fn npbch_metric(mib: &Mib, blocks: &[SubBlockObs], first_index: usize, nb_pcid: u16) -> f64 {
    let cw = npbch_codeword(mib);
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, o) in blocks.iter().enumerate() {
        let idx = (first_index + s) % NPBCH_SUBBLOCKS;
        let scr = npbch_scrambling(nb_pcid, idx);
        for (i, f) in o.flat.iter().enumerate() {
            let b0 = cw[idx * NPBCH_SUBBLOCK_BITS + 2 * i] ^ scr[2 * i];
            let b1 = cw[idx * NPBCH_SUBBLOCK_BITS + 2 * i + 1] ^ scr[2 * i + 1];
            let x = Complex64::new(1.0 - 2.0 * b0 as f64, 1.0 - 2.0 * b1 as f64)
                * std::f64::consts::FRAC_1_SQRT_2;
            num += (f * x.conj()).re;
            den += f.norm();
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

// NPRACH -----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NprachDetection {
    pub start_subcarrier: usize,
    /// Round-trip delay seen at the base station.
    pub timing_advance_s: f64,
    pub metric: f64,
}

/// Correlate every symbol group of a preamble window (starting at sample
/// 0) against all 48 tones, then test every start subcarrier's hopping
/// pattern. Timing advance comes from the phase of adjacent-group products:
/// one-tone hops give an unambiguous coarse value, six-tone hops refine it.
pub fn nprach_detect(
    samples: &[Complex64],
    config: &NprachConfig,
    nb_pcid: u16,
) -> Result<Vec<NprachDetection>> {
    config.validate()?;
    let groups = 4 * config.repetitions as usize;
    let g_len = group_samples(config.format);
    let cp = config.format.cp_samples();
    let n = NPRACH_SYMBOL_SAMPLES;
    if samples.len() < groups * g_len {
        return arg_err(format!(
            "NPRACH window needs {} samples, got {}",
            groups * g_len,
            samples.len()
        ));
    }
    let half = NPRACH_TONES / 2;
    let mut y = vec![vec![czero(); NPRACH_TONES]; groups];
    let mut buf = vec![czero(); n];
    for (g, yg) in y.iter_mut().enumerate() {
        let mut acc = vec![czero(); n];
        for s in 0..NPRACH_SYMBOLS_PER_GROUP {
            let start = g * g_len + cp + s * n;
            buf.copy_from_slice(&samples[start..start + n]);
            fft(&mut buf);
            acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
        }
        for (t, v) in yg.iter_mut().enumerate() {
            let bin = tone_bin(t, NPRACH_TONES, n);
            let phase = -2.0 * PI * (t as f64 - half as f64) * cp as f64 / n as f64;
            *v = acc[bin] * Complex64::from_polar(1.0, phase)
                / (NPRACH_SYMBOLS_PER_GROUP * n) as f64;
        }
    }
    let mut energies: Vec<f64> = y
        .iter()
        .flat_map(|yg| config.subcarriers().map(move |t| yg[t].norm_sqr()))
        .collect();
    energies.sort_by(|a, b| a.total_cmp(b));
    let median = energies[energies.len() / 2];
    let peak = energies.last().copied().unwrap_or(0.0);
    let noise = (median / std::f64::consts::LN_2)
        .max(peak * 1e-12)
        .max(1e-300);
    let mut out = Vec::new();
    for s in config.subcarriers() {
        let tones = nprach_hopping(config, s, nb_pcid)?;
        let e: f64 = tones
            .iter()
            .enumerate()
            .map(|(g, &t)| y[g][t].norm_sqr())
            .sum();
        let metric = e / (groups as f64 * noise);
        if metric <= NPRACH_THRESHOLD {
            continue;
        }
        let (mut s1, mut s6) = (czero(), czero());
        for g in 0..groups {
            if g % 4 == 3 {
                continue;
            }
            let dt = tones[g + 1] as i64 - tones[g] as i64;
            let mut p = y[g + 1][tones[g + 1]] * y[g][tones[g]].conj();
            if dt < 0 {
                p = p.conj();
            }
            match dt.abs() {
                1 => s1 += p,
                6 => s6 += p,
                _ => {}
            }
        }
        let df = 3_750.0;
        let coarse = -s1.arg() / (2.0 * PI * df);
        let ta = if s6.norm() > 0.0 {
            let fine = -s6.arg() / (2.0 * PI * 6.0 * df);
            let alias = 1.0 / (6.0 * df);
            fine + ((coarse - fine) / alias).round() * alias
        } else {
            coarse
        };
        out.push(NprachDetection {
            start_subcarrier: s,
            timing_advance_s: ta,
            metric,
        });
    }
    Ok(out)
}

// Data channels ----------------------------------------------------------

/// Decode NPDSCH from its subframes placed back to back (as
/// [`crate::phy_dl::serialize`] emits them) starting at `samples[0]`.
pub fn decode_npdsch(
    samples: &[Complex64],
    cfg: &NpdschConfig,
    cell: &CellConfig,
) -> Result<(TransportBlock, bool)> {
    cfg.validate()?;
    let n = cfg.subframes_per_repetition(cell);
    let total = n * cfg.repetitions as usize;
    if samples.len() < total * SUBFRAME_SAMPLES {
        return Err(Error::Mapping(format!(
            "NPDSCH needs {} subframes, input holds {}",
            total,
            samples.len() / SUBFRAME_SAMPLES
        )));
    }
    let positions = data_positions(cell, 0..SUBCARRIERS);
    let cap = positions.len();
    let sfs = pool_subframes(cfg.start_position, total);
    let grids: Vec<Vec<Complex64>> = (0..total)
        .map(|i| demodulate_subframe(&samples[i * SUBFRAME_SAMPLES..], 0.0))
        .collect();
    let raw: Vec<PlaneEstimate> = grids
        .iter()
        .zip(&sfs)
        .map(|(g, p)| estimate_dl_channel(g, cell.nb_pcid, p.subframe_number))
        .collect();
    // Noise is stationary over the transmission; pooling keeps the LLR
    // scale stable when a single subframe has few reference elements.
    let nv = raw.iter().map(|e| e.noise_var).sum::<f64>() / total as f64;
    let mut soft = vec![0.0; 2 * cap * n];
    for (i, g) in grids.iter().enumerate() {
        let lo = i.saturating_sub(DL_ESTIMATION_HALF_WINDOW);
        let hi = (i + DL_ESTIMATION_HALF_WINDOW + 1).min(total);
        let est = PlaneEstimate::average(&raw[lo..hi]);
        let j = i % n;
        for (m, &(k, l)) in positions.iter().enumerate() {
            let s = qpsk_soft(g[re_index(k, l)], est.at(k as f64, l as f64), nv);
            soft[2 * (j * cap + m)] += s[0];
            soft[2 * (j * cap + m) + 1] += s[1];
        }
    }
    let scr =
        crate::sequences::gold_sequence(crate::sequences::seed::data(cell.nb_pcid, 0), soft.len());
    soft.iter_mut().zip(&scr).for_each(|(v, &c)| {
        if c == 1 {
            *v = -*v
        }
    });
    let mother = coding::rate_dematch(
        &soft,
        Scheme::Tbcc,
        coding::mother_length(Scheme::Tbcc, cfg.tbs, Channel::Npdsch),
    );
    coding::viterbi_decode(&mother, cfg.tbs, Channel::Npdsch)
}

/// Per-slot received values `[symbol][tone]` of an NPUSCH allocation.
fn ul_slot_values(
    samples: &[Complex64],
    alloc: &NpuschAllocation,
    slot: usize,
) -> Vec<Vec<Complex64>> {
    let num = alloc.numerology;
    let n = num.fft_size();
    let slot_start = slot * num.slot_samples();
    let m = alloc.tone_count;
    (0..crate::numerology::SYMBOLS_PER_SLOT)
        .map(|l| {
            let body = slot_start + slot_symbol_body_offset(num, l);
            let chunk = &samples[body..body + n];
            if m == 1 {
                let f = alloc.tone_freq_hz(alloc.tone_offset);
                let acc: Complex64 = chunk
                    .iter()
                    .enumerate()
                    .map(|(i, &r)| r * tone_at(f, body + i).conj())
                    .sum();
                vec![acc / n as f64]
            } else {
                let mut buf = chunk.to_vec();
                fft(&mut buf);
                let scale = (m as f64).sqrt() / n as f64;
                (0..m)
                    .map(|i| buf[tone_bin(alloc.tone_offset + i, SUBCARRIERS, n)] * scale)
                    .collect()
            }
        })
        .collect()
}

/// Slots sharing one channel estimate.
const UL_ESTIMATION_SLOTS: usize = 16;
/// Downlink estimates average this many neighbouring subframes each side.
const DL_ESTIMATION_HALF_WINDOW: usize = 2;

/// Equalized data symbols and their noise variances, one entry per data
/// symbol in transmission order.
fn ul_equalize(
    samples: &[Complex64],
    alloc: &NpuschAllocation,
    cell: &CellConfig,
) -> Result<Vec<(Complex64, f64)>> {
    alloc.validate()?;
    let slots = alloc.slots_per_repetition() * alloc.repetitions as usize;
    let need = slots * alloc.numerology.slot_samples();
    if samples.len() < need {
        return Err(Error::Mapping(format!(
            "NPUSCH needs {need} samples, input holds {}",
            samples.len()
        )));
    }
    let dmrs_syms = alloc.dmrs_symbols();
    let m = alloc.tone_count;
    let per_rep = alloc.slots_per_repetition();
    let block = UL_ESTIMATION_SLOTS.min(per_rep);
    let mut blocks = Vec::new();
    let mut s0 = 0;
    while s0 < slots {
        // Blocks never straddle a repetition boundary.
        let end = (s0 + block).min((s0 / per_rep + 1) * per_rep);
        let vals: Vec<Vec<Vec<Complex64>>> = (s0..end)
            .map(|s| ul_slot_values(samples, alloc, s))
            .collect();
        let mut obs = Vec::new();
        for (bi, s) in (s0..end).enumerate() {
            let dmrs = dmrs_values(alloc, s as u32, cell);
            for (j, &l) in dmrs_syms.iter().enumerate() {
                for i in 0..m {
                    obs.push((i as f64, 0.0, vals[bi][l][i] / dmrs[j][i]));
                }
            }
        }
        blocks.push((PlaneEstimate::fit(&obs), vals));
        s0 = end;
    }
    let noise = blocks.iter().map(|b| b.0.noise_var).sum::<f64>() / blocks.len() as f64;
    let mut out = Vec::with_capacity(alloc.data_res() * alloc.repetitions as usize);
    for (est, vals) in &blocks {
        for v in vals {
            for (l, sym) in v.iter().enumerate() {
                if dmrs_syms.contains(&l) {
                    continue;
                }
                let eq: Vec<Complex64> = sym
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| {
                        let h = est.at(i as f64, 0.0);
                        if h.norm_sqr() > 0.0 {
                            y / h
                        } else {
                            czero()
                        }
                    })
                    .collect();
                let g = est.a.norm_sqr().max(1e-300);
                let nv = (noise / g).max(NOISE_FLOOR);
                let data = if m > 1 { dft_deprecode(&eq) } else { eq };
                out.extend(data.into_iter().map(|d| (d, nv)));
            }
        }
    }
    Ok(out)
}

/// Per-repetition LLRs combined over repetitions.
fn ul_combined_llrs(symbols: &[(Complex64, f64)], alloc: &NpuschAllocation) -> Vec<f64> {
    let per_rep = alloc.data_res();
    let scheme = alloc.scheme();
    let mut acc = vec![0.0; per_rep * scheme.bits_per_symbol()];
    for (r, chunk) in symbols.chunks(per_rep).enumerate() {
        for (i, &(z, nv)) in chunk.iter().enumerate() {
            let start = (r * per_rep + i) as u64;
            let llr = coding::demodulate_from(&[z], scheme, nv, start);
            let bps = scheme.bits_per_symbol();
            for (b, v) in llr.into_iter().enumerate() {
                acc[i * bps + b] += v;
            }
        }
    }
    acc
}

/// Decode NPUSCH format 1 transmitted from `samples[0]`.
pub fn decode_npusch(
    samples: &[Complex64],
    alloc: &NpuschAllocation,
    cell: &CellConfig,
    tbs: usize,
    turbo_iterations: usize,
) -> Result<(TransportBlock, bool)> {
    if alloc.format != NpuschFormat::F1 {
        return arg_err("allocation is not format 1");
    }
    let syms = ul_equalize(samples, alloc, cell)?;
    let llr = ul_combined_llrs(&syms, alloc);
    let mother = coding::rate_dematch(
        &llr,
        Scheme::Turbo,
        coding::mother_length(Scheme::Turbo, tbs, Channel::NpuschF1),
    );
    coding::turbo_decode(&mother, tbs, turbo_iterations)
}

/// Decode the HARQ-ACK bit of NPUSCH format 2 by soft combining.
pub fn decode_npusch_f2(
    samples: &[Complex64],
    alloc: &NpuschAllocation,
    cell: &CellConfig,
) -> Result<Bit> {
    if alloc.format != NpuschFormat::F2 {
        return arg_err("allocation is not format 2");
    }
    let syms = ul_equalize(samples, alloc, cell)?;
    let llr = ul_combined_llrs(&syms, alloc);
    Ok(coding::repetition_decode(&llr))
}

/// Soft demodulation helper for tests and tools: LLRs of equalized QPSK.
pub fn qpsk_llrs(symbols: &[Complex64], noise_var: f64) -> Vec<f64> {
    coding::demodulate(symbols, ModScheme::Qpsk, noise_var)
}
