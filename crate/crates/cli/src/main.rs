//! `nbiot` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nbiot::grid::CellConfig;
use nbiot::mac::{self, CycleGaps};
use nbiot::numerology::{self, DeploymentMode};
use nbiot::phy_dl::{build_downlink, Direction, PoolFill};
use nbiot::phy_ul::{NprachConfig, NprachFormat};
use nbiot::{scenario, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser, Debug)]
#[command(
    name = "nbiot",
    version,
    about = "NB-IoT link-level simulator and calculators"
)]
struct Cli {
    /// Directory for CSV outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// In-band anchor PRBs of an LTE carrier and their raster offsets.
    AnchorScan {
        /// LTE bandwidth in MHz (3, 5, 10, 15 or 20).
        #[arg(long)]
        bw: u32,
        /// List every PRB, not only anchor candidates.
        #[arg(long)]
        all: bool,
    },
    /// Peak and sustained layer-1 rates.
    Rates,
    /// Maximum coupling loss from a link budget.
    Linkbudget {
        #[arg(long, default_value_t = 23.0, allow_negative_numbers = true)]
        tx_power_dbm: f64,
        #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
        noise_figure_db: f64,
        #[arg(long, default_value_t = 15_000.0)]
        bandwidth_hz: f64,
        /// Required SNR; defaults to the simulated 128-repetition reference.
        #[arg(long, allow_negative_numbers = true)]
        required_snr_db: Option<f64>,
    },
    /// Run a scenario file.
    Simulate {
        scenario: PathBuf,
        /// Seed base; overrides the file and NBIOT_SEED.
        #[arg(long, env = "NBIOT_SEED")]
        seed: Option<u64>,
    },
    /// NPRACH format durations, cell radius and subcarrier partition.
    NprachInfo {
        #[arg(long, default_value_t = 1)]
        repetitions: u32,
        #[arg(long, default_value_t = 24)]
        partition: usize,
    },
    /// Resource-element usage of generated downlink subframes.
    GridDump {
        #[arg(long, default_value = "standalone")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        pcid: u16,
        #[arg(long, default_value_t = 10)]
        bw: u32,
        #[arg(long, default_value_t = 30)]
        prb: i64,
        #[arg(long, default_value_t = 0)]
        frame: u32,
        #[arg(long, default_value_t = 10)]
        subframes: usize,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Parse { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type Res<T> = std::result::Result<T, Failure>;

/// Rows printed to stdout and, with `--out`, written to `<out>/<name>.csv`.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            writeln!(w, "{}", r.join(","))?;
        }
        Ok(())
    }

    fn emit(&self, out: Option<&Path>, name: &str) -> Res<()> {
        self.write(io::stdout().lock())?;
        if let Some(dir) = out {
            self.write(BufWriter::new(create(dir, &format!("{name}.csv"))?))?;
        }
        Ok(())
    }
}

fn create(dir: &Path, file: &str) -> Res<File> {
    std::fs::create_dir_all(dir)?;
    Ok(File::create(dir.join(file))?)
}

fn anchor_scan(bw: u32, all: bool, out: Option<&Path>) -> Res<()> {
    let n = numerology::lte_prb_count(bw)?;
    let anchors = numerology::anchor_prb_candidates(bw)?;
    let mut t = Table::new(&[
        "prb_index",
        "center_offset_hz",
        "raster_offset_hz",
        "anchor_ok",
    ]);
    for prb in 0..n {
        let ok = anchors.contains(&prb);
        if !ok && !all {
            continue;
        }
        let center = numerology::prb_center_offset_hz(bw, prb)?;
        t.push(vec![
            prb.to_string(),
            format!("{center:.1}"),
            format!("{:.1}", numerology::raster_distance_hz(center)),
            ok.to_string(),
        ]);
    }
    t.emit(out, "anchor_scan")
}

fn rates(out: Option<&Path>) -> Res<()> {
    let mut t = Table::new(&[
        "direction",
        "tbs",
        "tx_subframes",
        "repetitions",
        "cycle_ms",
        "rate_bps",
        "peak_bps",
    ]);
    let rows: [(Direction, usize, u64, u64); 8] = [
        (Direction::Dl, 680, 3, 1),
        (Direction::Dl, 680, 3, 2),
        (Direction::Dl, 680, 3, 16),
        (Direction::Dl, 16, 1, 512),
        (Direction::Ul, 1000, 4, 1),
        (Direction::Ul, 1000, 4, 4),
        (Direction::Ul, 16, 8, 1),
        (Direction::Ul, 16, 8, 128),
    ];
    for (dir, tbs, sf, reps) in rows {
        let gaps = CycleGaps::minimal(dir);
        let cycle = mac::cycle_subframes(dir, sf, reps, &gaps)?;
        let rate = mac::sustained_rate(dir, tbs, sf, reps, &gaps)?;
        t.push(vec![
            format!("{dir:?}").to_uppercase(),
            tbs.to_string(),
            sf.to_string(),
            reps.to_string(),
            cycle.to_string(),
            format!("{rate:.1}"),
            format!("{:.1}", mac::peak_rate(dir)),
        ]);
    }
    eprintln!(
        "peak DL {:.1} kbps, peak UL {:.1} kbps",
        mac::peak_rate(Direction::Dl) / 1e3,
        mac::peak_rate(Direction::Ul) / 1e3
    );
    t.emit(out, "rates")
}

fn linkbudget(tx: f64, nf: f64, bw: f64, snr: Option<f64>, out: Option<&Path>) -> Res<()> {
    let reference = mac::reference_link_budget();
    let snr = snr.unwrap_or(reference.required_snr_db);
    let mcl = mac::link_budget(tx, nf, bw, snr)?;
    let mut t = Table::new(&[
        "tx_power_dbm",
        "noise_figure_db",
        "bandwidth_hz",
        "required_snr_db",
        "mcl_db",
    ]);
    t.push(vec![
        format!("{tx}"),
        format!("{nf}"),
        format!("{bw}"),
        format!("{snr:.2}"),
        format!("{mcl:.2}"),
    ]);
    t.emit(out, "linkbudget")
}

fn simulate(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Res<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let sc = scenario::parse(&text)?;
    let res = scenario::run(&sc, seed).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    res.write_summary_csv(io::stdout().lock())?;
    if let Some(dir) = out {
        res.write_trials_csv(BufWriter::new(create(
            dir,
            &format!("{}_trials.csv", sc.name),
        )?))?;
        res.write_summary_csv(BufWriter::new(create(
            dir,
            &format!("{}_summary.csv", sc.name),
        )?))?;
    }
    Ok(())
}

fn nprach_info(repetitions: u32, partition: usize, out: Option<&Path>) -> Res<()> {
    let mut t = Table::new(&[
        "format",
        "cp_us",
        "basic_duration_ms",
        "total_duration_ms",
        "max_cell_radius_km",
        "single_tone_subcarriers",
        "multi_tone_subcarriers",
    ]);
    for format in [NprachFormat::F0, NprachFormat::F1] {
        let c = NprachConfig {
            format,
            repetitions,
            periodicity_ms: 10_240,
            multitone_partition_boundary: partition,
            ..NprachConfig::default()
        };
        c.validate()?;
        let st = c.single_tone_subcarriers();
        let mt = c.multi_tone_subcarriers();
        t.push(vec![
            format!("{}", format as u8),
            format!("{:.2}", c.cp_length_s() * 1e6),
            format!("{:.4}", c.basic_duration_s() * 1e3),
            format!("{:.4}", c.total_duration_s() * 1e3),
            format!("{:.1}", format.max_cell_radius_km()),
            format!("{}-{}", st.start, st.end.saturating_sub(1)),
            if mt.is_empty() {
                String::new()
            } else {
                format!("{}-{}", mt.start, mt.end - 1)
            },
        ]);
    }
    t.emit(out, "nprach_info")
}

fn grid_dump(
    mode: &str,
    pcid: u16,
    bw: u32,
    prb: i64,
    frame: u32,
    subframes: usize,
    out: Option<&Path>,
) -> Res<()> {
    let cell = match DeploymentMode::parse(mode) {
        Some(DeploymentMode::StandAlone) => CellConfig::standalone(pcid),
        Some(DeploymentMode::InBand) => CellConfig::in_band(pcid, bw, prb),
        Some(DeploymentMode::GuardBand) => CellConfig::guard_band(pcid, bw),
        None => return Err(usage(format!("unknown deployment mode {mode:?}"))),
    };
    cell.validate()?;
    if frame >= numerology::FRAME_NUMBER_MODULUS {
        return Err(usage("frame must be below 1024"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let grids = build_downlink(
        &cell,
        0,
        frame as u64 * 10,
        subframes,
        PoolFill::RandomData,
        &mut rng,
    )?;
    let mut buf = Vec::new();
    for (i, g) in grids.iter().enumerate() {
        g.write_csv(&mut buf, i == 0)?;
    }
    io::stdout().lock().write_all(&buf)?;
    if let Some(dir) = out {
        create(dir, "grid.csv")?.write_all(&buf)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Res<()> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::AnchorScan { bw, all } => anchor_scan(bw, all, out),
        Command::Rates => rates(out),
        Command::Linkbudget {
            tx_power_dbm,
            noise_figure_db,
            bandwidth_hz,
            required_snr_db,
        } => linkbudget(
            tx_power_dbm,
            noise_figure_db,
            bandwidth_hz,
            required_snr_db,
            out,
        ),
        Command::Simulate { scenario, seed } => simulate(&scenario, seed, out),
        Command::NprachInfo {
            repetitions,
            partition,
        } => nprach_info(repetitions, partition, out),
        Command::GridDump {
            mode,
            pcid,
            bw,
            prb,
            frame,
            subframes,
        } => grid_dump(&mode, pcid, bw, prb, frame, subframes, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
