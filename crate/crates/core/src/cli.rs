//! Configuration and experiment drivers behind the `tbsync` binary.
//!
//! A run is described by `key = value` pairs. Values carry explicit units (`300ps`,
//! `120km`, `2.3us/s`); later sources override earlier ones: built-in defaults for the
//! subcommand, then the config file, then command-line `--set` flags.
//!
//! Every driver is deterministic for a given configuration and seed. Sweeps run in
//! parallel, with each point drawing from its own ChaCha stream, and rows are emitted
//! in sweep order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::clock::{
    calibration_interval_for_limit, max_calibration_interval, max_unambiguous_drift, short_term_stability_bound,
    ClockPair,
};
use crate::error::{Error, Result};
use crate::metrics::{
    moving_average, octave_taus, summarize, tdev, write_summary, write_tdev_csv, SeriesKind, TimeSeries,
};
use crate::pdf::QberModel;
use crate::physics::{channel_transmittance, effective_rates, pulse_sigma_at_distance, OpticalLink, SpadModel};
use crate::sim::{
    poisson_from_probabilities, FoldedProfile, OscillatorNoise, Pattern, QubitSource, SimScenario, Simulator,
    TdcModel, PATTERN_SLOTS,
};
use crate::sync::{
    baseline_qber, circular_mean, converged_after, circular_mean_weights, estimate_drift_with_floor, practical_drift_limit,
    write_trace_csv, BinnedLink, IterationRecord, Phase, PracticalLimitConfig, RampConfig, SyncController,
    SyncLink, MODULUS_FLOOR,
};
use crate::units::{parse_list, parse_quantity, Dimension};

const YEAR: f64 = 365.25 * 86_400.0;

/// Name of the generator behind every stochastic output.
pub const RNG_NAME: &str = "ChaCha8Rng";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    QberCurve,
    DriftLimit,
    SyncRun,
    ErrorMap,
    Constraints,
    FieldSim,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::QberCurve,
        Command::DriftLimit,
        Command::SyncRun,
        Command::ErrorMap,
        Command::Constraints,
        Command::FieldSim,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Command::QberCurve => "qber-curve",
            Command::DriftLimit => "drift-limit",
            Command::SyncRun => "sync-run",
            Command::ErrorMap => "error-map",
            Command::Constraints => "constraints",
            Command::FieldSim => "field-sim",
        }
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown subcommand `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Quantity(Dimension),
    List(Dimension),
    Count,
    Flag,
    Choice(&'static [&'static str]),
    /// A time, or the given keyword.
    TimeOr(&'static str),
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: &'static str,
    help: &'static str,
}

macro_rules! key {
    ($name:literal, $kind:expr, $default:literal, $help:literal) => {
        Key { name: $name, kind: $kind, default: $default, help: $help }
    };
}

use Dimension as D;
use Kind::*;

const KEYS: &[Key] = &[
    key!("wavelength", Quantity(D::Length), "1550nm", "carrier wavelength"),
    key!("pulse_fwhm", Quantity(D::Time), "77ps", "intensity FWHM of the emitted pulse"),
    key!("chirp", Quantity(D::Chirp), "-3.7e20rad/s^2", "quadratic phase rate of the pulse"),
    key!("dispersion", Quantity(D::Dispersion), "17ps/nm/km", "fiber dispersion coefficient"),
    key!("fiber_length", Quantity(D::Length), "120km", "fiber length"),
    key!("attenuation", Quantity(D::Attenuation), "0.2dB/km", "fiber attenuation"),
    key!("loss_db", Quantity(D::Decibel), "0dB", "loss on top of the fiber attenuation"),
    key!("skew_shape", Quantity(D::Dimensionless), "3", "skew-normal shape of the detector jitter"),
    key!("skew_scale", Quantity(D::Time), "150ps", "skew-normal scale of the detector jitter"),
    key!("efficiency", Quantity(D::Dimensionless), "25%", "detection efficiency"),
    key!("dead_time", Quantity(D::Time), "15us", "detector dead time"),
    key!("dark_count_rate", Quantity(D::Frequency), "1800Hz", "dark count rate"),
    key!("f_alice", Quantity(D::Frequency), "500MHz", "Alice's qubit clock"),
    key!("initial_drift", Quantity(D::Drift), "2.3us/s", "drift of Bob's clock against Alice's at start"),
    key!("static_offset", TimeOr("random"), "random", "static offset t0, or `random` to draw it from the seed"),
    key!("aging_rate", Quantity(D::Aging), "0ps/s^2", "rate of change of the relative drift"),
    key!("t_bin", Quantity(D::Time), "1ns", "time-bin width"),
    key!("t_int", Quantity(D::Time), "500ms", "full-length integration time"),
    key!("window_width", Quantity(D::Time), "300ps", "temporal filter width"),
    key!("error_threshold", Quantity(D::Dimensionless), "0.1%", "QBER threshold for the drift limit"),
    key!("z_list", List(D::Length), "0km,40km,80km,120km,160km,200km", "fiber lengths to sweep"),
    key!("loss_list", List(D::Decibel), "", "losses to sweep in sync-run (empty: use loss_db)"),
    key!("w_list", List(D::Time), "1000ps,300ps", "filter widths to sweep"),
    key!(
        "t_drift_list",
        List(D::Drift),
        "-3us/s,-2.5us/s,-2us/s,-1.5us/s,-1us/s,-0.5us/s,0.5us/s,1us/s,1.5us/s,2us/s,2.5us/s,3us/s",
        "drifts of the error map"
    ),
    key!(
        "t_int_list",
        List(D::Time),
        "155us,310us,620us,1.24ms,2.48ms,4.96ms,9.92ms",
        "integration times of the error map"
    ),
    key!("dt_points", Count, "101", "points of the accumulated-shift sweep in [0, T_bin]"),
    key!("n_bar_ramp", Quantity(D::Dimensionless), "10", "mean photon number while ramping"),
    key!("n_bar", Quantity(D::Dimensionless), "0.225", "nominal mean photon number"),
    key!("t_int_start", Quantity(D::Time), "155us", "first integration time of the ramp"),
    key!("intrinsic_error", Quantity(D::Dimensionless), "1%", "bit-flip probability not caused by timing"),
    key!("white_phase", Quantity(D::Time), "10ps", "per-acquisition white timing noise"),
    key!("random_walk_fm", Quantity(D::Drift), "0ps/s", "random-walk frequency noise per sqrt(second)"),
    key!("guard", Quantity(D::Dimensionless), "0.95", "fraction of T_bin/2 above which an estimate rolls back"),
    key!("lock_threshold", Quantity(D::Dimensionless), "0.5", "minimum Pearson peak for offset recovery"),
    key!("correct_phi_q", Flag, "true", "remove the detector phase bias from the circular mean"),
    key!("engine", Choice(&["event", "binned"]), "event", "event-level or per-bin simulation"),
    key!("duration", Quantity(D::Time), "20s", "acquisition time of the tracking phase"),
    key!("max_ramp_iters", Count, "100", "iterations allowed to reach tracking"),
    key!("convergence_factor", Quantity(D::Dimensionless), "2", "tracking QBER bound as a multiple of the baseline"),
    key!("clock_aging", Quantity(D::Aging), "5ppm/year", "single-clock aging for the calibration interval"),
    key!("xo_aging", Quantity(D::Aging), "500ppb/day", "single-clock aging of a crystal oscillator"),
    key!("drift_limit", TimeOr("auto"), "auto", "tolerable shift for the short-term bound, or `auto`"),
    key!("n_bar_align", Quantity(D::Dimensionless), "10", "mean photon number of the first acquisitions"),
    key!("photons_per_hist", Quantity(D::Dimensionless), "10", "detections needed in the first histogram"),
    key!("safety", Quantity(D::Dimensionless), "70%", "margin on the practical drift limit"),
    key!("ma_window", Quantity(D::Time), "10min", "moving-average window of the field series"),
    key!("seed", Count, "1", "master seed"),
    key!("realtime", Flag, "false", "pace acquisitions in wall-clock time"),
];

fn command_defaults(cmd: Command) -> &'static [(&'static str, &'static str)] {
    match cmd {
        Command::SyncRun => &[("fiber_length", "0km"), ("loss_db", "20dB")],
        Command::ErrorMap => &[("fiber_length", "0km"), ("loss_db", "20dB")],
        Command::FieldSim => &[
            ("fiber_length", "16km"),
            ("loss_db", "8.3dB"),
            ("engine", "binned"),
            ("initial_drift", "0ps/s"),
            ("static_offset", "0ps"),
            ("white_phase", "10ps"),
            ("intrinsic_error", "1.3%"),
            ("dark_count_rate", "40kHz"),
            ("duration", "24h"),
        ],
        _ => &[],
    }
}

fn lookup(name: &str) -> Result<&'static Key> {
    KEYS.iter()
        .find(|k| k.name == name)
        .ok_or_else(|| Error::Config(format!("unknown key `{name}`")))
}

/// One line per key: name, default and description.
pub fn key_help() -> String {
    let mut s = String::new();
    for k in KEYS {
        let _ = writeln!(s, "{:<20} {:<24} {}", k.name, k.default, k.help);
    }
    s
}

fn parse_bool(name: &str, text: &str) -> Result<bool> {
    match text {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{name}`: expected true or false, got `{text}`"))),
    }
}

fn parse_count(name: &str, text: &str) -> Result<u64> {
    text.parse()
        .map_err(|_| Error::Config(format!("`{name}`: expected a non-negative integer, got `{text}`")))
}

fn check_value(key: &Key, text: &str) -> Result<()> {
    match key.kind {
        Quantity(d) => parse_quantity(text, d).map(drop),
        List(d) => parse_list(text, d).map(drop),
        Count => parse_count(key.name, text).map(drop),
        Flag => parse_bool(key.name, text).map(drop),
        Choice(opts) => {
            if opts.contains(&text) {
                Ok(())
            } else {
                Err(Error::Config(format!("`{}`: expected one of {opts:?}, got `{text}`", key.name)))
            }
        }
        TimeOr(word) => {
            if text == word {
                Ok(())
            } else {
                parse_quantity(text, D::Time).map(drop)
            }
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a `key=value` command-line override.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("`{text}`: expected key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub link: OpticalLink,
    pub spad: SpadModel,
    pub f_alice: f64,
    pub initial_drift: f64,
    /// `None` draws the offset from the seed.
    pub static_offset: Option<f64>,
    pub aging_rate: f64,
    pub t_bin: f64,
    pub t_int: f64,
    pub window_width: f64,
    pub error_threshold: f64,
    pub z_list: Vec<f64>,
    pub loss_list: Vec<f64>,
    pub w_list: Vec<f64>,
    pub t_drift_list: Vec<f64>,
    pub t_int_list: Vec<f64>,
    pub dt_points: usize,
    pub n_bar_ramp: f64,
    pub n_bar: f64,
    pub t_int_start: f64,
    pub intrinsic_error: f64,
    pub noise: OscillatorNoise,
    pub guard: f64,
    pub lock_threshold: f64,
    pub correct_phi_q: bool,
    pub binned: bool,
    pub duration: f64,
    pub max_ramp_iters: usize,
    pub convergence_factor: f64,
    pub clock_aging: f64,
    pub xo_aging: f64,
    /// `None` derives the tolerable shift from the QBER model.
    pub drift_limit: Option<f64>,
    pub practical: PracticalLimitConfig,
    pub ma_window: f64,
    pub seed: u64,
    pub realtime: bool,
    /// Resolved textual values, the input of [`RunConfig::hash`].
    values: BTreeMap<&'static str, String>,
}

impl RunConfig {
    /// Resolves defaults, then `sources` in order (later wins), and validates.
    pub fn resolve<'a, I>(command: Command, sources: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a (String, String)>,
    {
        let mut values: BTreeMap<&'static str, String> = KEYS.iter().map(|k| (k.name, k.default.to_string())).collect();
        for (k, v) in command_defaults(command) {
            values.insert(lookup(k)?.name, v.to_string());
        }
        for (k, v) in sources {
            let key = lookup(k)?;
            check_value(key, v)?;
            values.insert(key.name, v.clone());
        }
        Self::from_values(command, values)
    }

    pub fn defaults(command: Command) -> Result<Self> {
        Self::resolve(command, &[])
    }

    fn from_values(command: Command, values: BTreeMap<&'static str, String>) -> Result<Self> {
        let get = |name: &str| -> Result<&str> {
            values
                .get(name)
                .map(String::as_str)
                .ok_or_else(|| Error::Config(format!("missing `{name}`")))
        };
        let q = |name: &str| -> Result<f64> {
            let key = lookup(name)?;
            match key.kind {
                Quantity(d) => parse_quantity(get(name)?, d),
                _ => unreachable!("{name} is not a quantity"),
            }
        };
        let list = |name: &str| -> Result<Vec<f64>> {
            match lookup(name)?.kind {
                List(d) => parse_list(get(name)?, d),
                _ => unreachable!("{name} is not a list"),
            }
        };
        let count = |name: &str| -> Result<usize> { Ok(parse_count(name, get(name)?)? as usize) };
        let flag = |name: &str| -> Result<bool> { parse_bool(name, get(name)?) };
        let time_or = |name: &str, word: &str| -> Result<Option<f64>> {
            let v = get(name)?;
            if v == word {
                Ok(None)
            } else {
                parse_quantity(v, D::Time).map(Some)
            }
        };

        let link = OpticalLink {
            wavelength: q("wavelength")?,
            pulse_fwhm: q("pulse_fwhm")?,
            chirp: q("chirp")?,
            dispersion: q("dispersion")?,
            fiber_length: q("fiber_length")?,
            attenuation_db_per_km: q("attenuation")?,
            extra_loss_db: q("loss_db")?,
        };
        let spad = SpadModel {
            skew_shape: q("skew_shape")?,
            skew_scale: q("skew_scale")?,
            efficiency: q("efficiency")?,
            dead_time: q("dead_time")?,
            dark_count_rate: q("dark_count_rate")?,
        };
        let cfg = RunConfig {
            command,
            link,
            spad,
            f_alice: q("f_alice")?,
            initial_drift: q("initial_drift")?,
            static_offset: time_or("static_offset", "random")?,
            aging_rate: q("aging_rate")?,
            t_bin: q("t_bin")?,
            t_int: q("t_int")?,
            window_width: q("window_width")?,
            error_threshold: q("error_threshold")?,
            z_list: list("z_list")?,
            loss_list: list("loss_list")?,
            w_list: list("w_list")?,
            t_drift_list: list("t_drift_list")?,
            t_int_list: list("t_int_list")?,
            dt_points: count("dt_points")?,
            n_bar_ramp: q("n_bar_ramp")?,
            n_bar: q("n_bar")?,
            t_int_start: q("t_int_start")?,
            intrinsic_error: q("intrinsic_error")?,
            noise: OscillatorNoise {
                white_phase: q("white_phase")?,
                random_walk_fm: q("random_walk_fm")?,
            },
            guard: q("guard")?,
            lock_threshold: q("lock_threshold")?,
            correct_phi_q: flag("correct_phi_q")?,
            binned: get("engine")? == "binned",
            duration: q("duration")?,
            max_ramp_iters: count("max_ramp_iters")?,
            convergence_factor: q("convergence_factor")?,
            clock_aging: q("clock_aging")?,
            xo_aging: q("xo_aging")?,
            drift_limit: time_or("drift_limit", "auto")?,
            practical: PracticalLimitConfig {
                n_bar_align: q("n_bar_align")?,
                photons_per_hist: q("photons_per_hist")?,
                safety: q("safety")?,
            },
            ma_window: q("ma_window")?,
            seed: parse_count("seed", get("seed")?)?,
            realtime: flag("realtime")?,
            values,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.link.validate()?;
        self.spad.validate()?;
        if !(self.t_bin > 0.0) {
            return bad("t_bin must be > 0");
        }
        if !(self.window_width > 0.0 && self.window_width <= self.t_bin) {
            return bad("window_width must be in (0, t_bin]");
        }
        if self.w_list.iter().any(|&w| !(w > 0.0 && w <= self.t_bin)) {
            return bad("w_list entries must be in (0, t_bin]");
        }
        if !(self.error_threshold > 0.0 && self.error_threshold < 0.5) {
            return bad("error_threshold must be in (0, 0.5)");
        }
        if self.z_list.iter().any(|&z| !(z >= 0.0)) {
            return bad("z_list entries must be >= 0");
        }
        if self.loss_list.iter().any(|&l| !(l >= 0.0)) || !(self.link.extra_loss_db >= 0.0) {
            return bad("losses must be >= 0 dB");
        }
        if self.t_int_list.iter().any(|&t| !(t > 0.0)) || !(self.t_int > 0.0) {
            return bad("integration times must be > 0");
        }
        if self.t_drift_list.iter().any(|d| !(d.abs() < 1e-3)) || !(self.initial_drift.abs() < 1e-3) {
            return bad("drifts must be below 1000 ppm in magnitude");
        }
        if self.dt_points < 2 {
            return bad("dt_points must be >= 2");
        }
        if !(0.0..=0.5).contains(&self.intrinsic_error) {
            return bad("intrinsic_error must be in [0, 0.5]");
        }
        if !(self.noise.white_phase >= 0.0 && self.noise.random_walk_fm >= 0.0) {
            return bad("noise levels must be >= 0");
        }
        if !(self.duration >= 0.0) || !(self.ma_window > 0.0) {
            return bad("duration must be >= 0 and ma_window > 0");
        }
        if !(self.convergence_factor >= 1.0) {
            return bad("convergence_factor must be >= 1");
        }
        if !(self.f_alice > 0.0) {
            return bad("f_alice must be > 0");
        }
        self.ramp_config().validate()
    }

    /// SHA-256 of the command and every resolved `key=value`, in key order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_str().as_bytes());
        h.update(b"\n");
        for (k, v) in &self.values {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn ramp_config(&self) -> RampConfig {
        RampConfig {
            t_int_start: self.t_int_start,
            t_int_max: self.t_int,
            n_bar_ramp: self.n_bar_ramp,
            n_bar_final: self.n_bar,
            window_width: self.window_width,
            guard: self.guard,
            lock_threshold: self.lock_threshold,
            correct_phi_q: self.correct_phi_q,
            ..RampConfig::default()
        }
    }

    fn link_at(&self, fiber_length: f64, loss_db: f64) -> OpticalLink {
        OpticalLink { fiber_length, extra_loss_db: loss_db, ..self.link }
    }

    fn model_at(&self, fiber_length: f64) -> QberModel {
        QberModel::new(pulse_sigma_at_distance(&self.link_at(fiber_length, 0.0)), self.spad, self.t_bin)
    }

    fn header(&self) -> String {
        format!(
            "# tbsync {} {}\n# seed={} rng={} config_sha256={}\n",
            env!("CARGO_PKG_VERSION"),
            self.command.as_str(),
            self.seed,
            RNG_NAME,
            self.hash()
        )
    }
}

/// Independent generator for sweep point `index`.
pub fn point_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub content: String,
}

/// Everything a subcommand produced. A failure is reported after the tables are written.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub tables: Vec<Table>,
    pub failure: Option<Error>,
}

impl Report {
    /// Writes each table to `dir/name`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for t in &self.tables {
            std::fs::write(dir.join(&t.name), &t.content)?;
        }
        Ok(())
    }

    /// All tables concatenated, each introduced by a `# file:` line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tables {
            let _ = writeln!(s, "# file: {}", t.name);
            s.push_str(&t.content);
        }
        s
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParameter { .. } | Error::Unbounded => 2,
        Error::Convergence(_) | Error::NoLock { .. } | Error::FlatHistogram { .. } | Error::NoCounts => 3,
        _ => 1,
    }
}

pub fn run(cfg: &RunConfig) -> Result<Report> {
    match cfg.command {
        Command::QberCurve => cmd_qber_curve(cfg),
        Command::DriftLimit => cmd_drift_limit(cfg),
        Command::SyncRun => cmd_sync_run(cfg),
        Command::ErrorMap => cmd_error_map(cfg),
        Command::Constraints => cmd_constraints(cfg),
        Command::FieldSim => cmd_field_sim(cfg),
    }
}

fn table(cfg: &RunConfig, name: &str, body: String) -> Table {
    Table { name: name.to_string(), content: cfg.header() + &body }
}

fn io<T>(r: std::io::Result<T>) -> Result<T> {
    r.map_err(Error::from)
}

/// Drift-induced QBER over accumulated shifts in `[0, T_bin]`.
pub fn cmd_qber_curve(cfg: &RunConfig) -> Result<Report> {
    let n = cfg.dt_points;
    let shifts: Vec<f64> = (0..n).map(|i| cfg.t_bin * i as f64 / (n - 1) as f64).collect();
    let mut body = String::from("dt_drift_ps,w_ps,z_km,qber\n");
    for &z in &cfg.z_list {
        let model = cfg.model_at(z);
        let rows: Vec<Vec<f64>> = shifts
            .par_iter()
            .map(|&dt| model.drift_qber_widths(dt, &cfg.w_list))
            .collect::<Result<_>>()?;
        for (wi, &w) in cfg.w_list.iter().enumerate() {
            for (dt, q) in shifts.iter().zip(&rows) {
                let _ = writeln!(body, "{:.3},{:.3},{},{:.9}", dt * 1e12, w * 1e12, z / 1e3, q[wi]);
            }
        }
    }
    Ok(Report { tables: vec![table(cfg, "qber_curve.csv", body)], failure: None })
}

/// Largest accumulated shift keeping the drift QBER at `error_threshold`, versus distance.
pub fn cmd_drift_limit(cfg: &RunConfig) -> Result<Report> {
    let points: Vec<(f64, f64)> = cfg
        .z_list
        .iter()
        .flat_map(|&z| cfg.w_list.iter().map(move |&w| (z, w)))
        .collect();
    let limits: Vec<Result<f64>> = points
        .par_iter()
        .map(|&(z, w)| cfg.model_at(z).invert_drift_for_threshold(cfg.error_threshold, w))
        .collect();
    let mut body = String::from("z_km,w_ps,max_dt_drift_ps\n");
    for ((z, w), lim) in points.iter().zip(limits) {
        let value = match lim {
            Ok(v) => format!("{:.3}", v * 1e12),
            Err(Error::Unreachable { .. }) => "unreachable".to_string(),
            Err(e) => return Err(e),
        };
        let _ = writeln!(body, "{},{:.3},{value}", z / 1e3, w * 1e12);
    }
    Ok(Report { tables: vec![table(cfg, "drift_limit.csv", body)], failure: None })
}

fn drift_estimate_cell(
    profile: &FoldedProfile,
    t_drift: f64,
    t_int: f64,
    t_bin: f64,
    rates: (f64, f64),
    rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    let bw = 100e-12;
    let d = t_drift * t_int;
    let p1 = profile.bin_probabilities(bw, 0.0, d);
    let p2 = profile.bin_probabilities(bw, d, d);
    let (m1, m2) = match rng {
        Some(rng) => {
            let h1 = poisson_from_probabilities(&p1, rates, t_int, bw, rng)?;
            let h2 = poisson_from_probabilities(&p2, rates, t_int, bw, rng)?;
            (circular_mean(&h1, t_bin)?, circular_mean(&h2, t_bin)?)
        }
        None => {
            let expected = |p: &[f64]| -> Vec<f64> {
                let dark = rates.1 * t_int / p.len() as f64;
                p.iter().map(|&pi| rates.0 * t_int * pi + dark).collect()
            };
            (
                circular_mean_weights(&expected(&p1), bw, t_bin)?,
                circular_mean_weights(&expected(&p2), bw, t_bin)?,
            )
        }
    };
    estimate_drift_with_floor(&m1, &m2, t_int, t_bin, MODULUS_FLOOR)
}

/// Relative drift-estimation error over a `(t_drift, T_int)` grid, from expected and
/// from Poisson-sampled histograms.
pub fn cmd_error_map(cfg: &RunConfig) -> Result<Report> {
    let model = cfg.model_at(cfg.link.fiber_length);
    let profile = FoldedProfile::new(&crate::pdf::fold_auto(&model.early_pdf(0.0)?, cfg.t_bin)?)?;
    let eta = channel_transmittance(&cfg.link);
    let r = effective_rates(&cfg.spad, cfg.f_alice, cfg.n_bar_ramp, eta);
    let rates = (r.alice, r.dark);
    let mut cells = Vec::new();
    for &t_int in &cfg.t_int_list {
        for &t_drift in &cfg.t_drift_list {
            for noisy in [false, true] {
                cells.push((t_drift, t_int, noisy));
            }
        }
    }
    let errors: Vec<Result<f64>> = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(t_drift, t_int, noisy))| {
            let mut rng = point_rng(cfg.seed, i as u64);
            let est = drift_estimate_cell(&profile, t_drift, t_int, cfg.t_bin, rates, noisy.then_some(&mut rng));
            match est {
                Ok(e) => Ok(100.0 * (e - t_drift) / t_drift),
                Err(Error::FlatHistogram { .. } | Error::NoCounts) => Ok(f64::NAN),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut body = String::from("t_drift_per_s,t_int_s,noisy,rel_error_pct\n");
    for ((t_drift, t_int, noisy), e) in cells.iter().zip(errors) {
        let _ = writeln!(body, "{t_drift:.6e},{t_int:.6e},{},{:.6}", u8::from(*noisy), e?);
    }
    Ok(Report { tables: vec![table(cfg, "error_map.csv", body)], failure: None })
}

/// The clock constraints: maximum drift, calibration interval and short-term stability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraints {
    pub max_unambiguous_drift: f64,
    pub practical_t_int: f64,
    pub practical_raw: f64,
    pub practical_limit: f64,
    /// Tolerable shift over one acquisition pair (s).
    pub drift_limit: f64,
    pub short_term_bound: f64,
    pub calibration_theoretical: f64,
    pub calibration_practical: f64,
    pub xo_relative_aging: f64,
}

pub fn constraints(cfg: &RunConfig) -> Result<Constraints> {
    let max_drift = max_unambiguous_drift(cfg.t_bin, cfg.spad.dead_time)?;
    let eta = channel_transmittance(&cfg.link);
    let practical = practical_drift_limit(&cfg.practical, &cfg.spad, cfg.f_alice, eta, cfg.t_bin)?;
    let drift_limit = match cfg.drift_limit {
        Some(d) => d,
        None => {
            let w = cfg.w_list.first().copied().unwrap_or(cfg.t_bin);
            cfg.model_at(cfg.link.fiber_length).invert_drift_for_threshold(cfg.error_threshold, w)?
        }
    };
    let pair_aging = 2.0 * cfg.clock_aging;
    Ok(Constraints {
        max_unambiguous_drift: max_drift,
        practical_t_int: practical.t_int,
        practical_raw: practical.raw,
        practical_limit: practical.limit,
        drift_limit,
        short_term_bound: short_term_stability_bound(cfg.t_int, drift_limit)?,
        calibration_theoretical: max_calibration_interval(pair_aging, cfg.t_bin, cfg.spad.dead_time)?,
        calibration_practical: calibration_interval_for_limit(pair_aging, practical.limit),
        xo_relative_aging: 2.0 * cfg.xo_aging,
    })
}

pub fn cmd_constraints(cfg: &RunConfig) -> Result<Report> {
    let c = constraints(cfg)?;
    let mut body = String::new();
    let mut row = |k: &str, v: String, unit: &str| {
        let _ = writeln!(body, "{k:<34} {v:>12} {unit}");
    };
    row("max_unambiguous_drift", format!("{:.4}", c.max_unambiguous_drift * 1e6), "us/s");
    row("first_acquisition_t_int", format!("{:.2}", c.practical_t_int * 1e6), "us");
    row("recoverable_drift", format!("{:.4}", c.practical_raw * 1e6), "us/s");
    row("practical_drift_limit", format!("{:.4}", c.practical_limit * 1e6), "us/s");
    row("tolerable_shift", format!("{:.3}", c.drift_limit * 1e12), "ps");
    row("short_term_stability_bound", format!("{:.3}", c.short_term_bound * 1e12), "ps/s^2");
    row("calibration_interval_theoretical", format!("{:.4}", c.calibration_theoretical / YEAR), "years");
    row("calibration_interval_practical", format!("{:.4}", c.calibration_practical / YEAR), "years");
    row("xo_pair_aging", format!("{:.3}", c.xo_relative_aging * 1e12), "ps/s^2");
    let ok = if c.xo_relative_aging <= c.short_term_bound { "yes" } else { "no" };
    row("xo_within_short_term_bound", ok.to_string(), "");
    Ok(Report { tables: vec![table(cfg, "constraints.txt", body)], failure: None })
}

fn run_controller<L: SyncLink>(
    cfg: &RunConfig,
    ramp: RampConfig,
    link: &mut L,
    track_iters: usize,
) -> Result<SyncController> {
    let mut ctl = SyncController::new(ramp, link)?;
    let pace = |r: &IterationRecord| {
        if cfg.realtime {
            std::thread::sleep(std::time::Duration::from_secs_f64(2.0 * r.t_int));
        }
    };
    while ctl.state().phase != Phase::Tracking {
        if ctl.state().iteration >= cfg.max_ramp_iters {
            return Err(Error::Convergence(format!(
                "not tracking after {} iterations",
                cfg.max_ramp_iters
            )));
        }
        pace(ctl.step(link)?);
    }
    for _ in 0..track_iters {
        pace(ctl.step(link)?);
    }
    Ok(ctl)
}

/// Outcome of one closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncOutcome {
    pub loss_db: f64,
    pub history: Vec<IterationRecord>,
    pub baseline: f64,
    pub baseline_filtered: f64,
    pub convergence_time: Option<f64>,
}

impl SyncOutcome {
    pub fn tracking(&self) -> impl Iterator<Item = &IterationRecord> {
        self.history.iter().filter(|r| r.phase == Phase::Tracking && r.drift_est.is_finite())
    }
}

/// One closed-loop synchronization at `loss_db`, seeded from `rng`.
pub fn sync_once(cfg: &RunConfig, loss_db: f64, rng: &mut ChaCha8Rng) -> Result<SyncOutcome> {
    let offset = cfg.static_offset.unwrap_or_else(|| rng.random_range(0.0..PATTERN_SLOTS as f64 * 2.0 * cfg.t_bin));
    let clocks = ClockPair::with_drift(cfg.f_alice, cfg.initial_drift)?
        .offset(offset)
        .aging(cfg.aging_rate);
    let link = cfg.link_at(cfg.link.fiber_length, loss_db);
    let ramp = cfg.ramp_config();
    let track_iters = (cfg.duration / (2.0 * ramp.t_int_max)).ceil() as usize;
    let seed = rng.random::<u64>();
    let history = if cfg.binned {
        let mut l = BinnedLink::new(clocks, &link, cfg.spad, cfg.t_bin, cfg.intrinsic_error, cfg.noise, seed)?;
        let ramp = RampConfig { recover_offset: false, ..ramp };
        run_controller(cfg, ramp, &mut l, track_iters)?.history().to_vec()
    } else {
        let mut scenario = SimScenario::new(clocks, link, ramp.n_bar_ramp, seed)?;
        scenario.spad = cfg.spad;
        scenario.t_bin = cfg.t_bin;
        scenario.tdc = TdcModel::standard(cfg.t_bin)?;
        scenario.source = QubitSource::Pattern(Pattern::random(PATTERN_SLOTS, rng));
        scenario.intrinsic_error = cfg.intrinsic_error;
        scenario.noise = cfg.noise;
        let mut sim = Simulator::new(scenario)?;
        run_controller(cfg, ramp, &mut sim, track_iters)?.history().to_vec()
    };
    let model = QberModel::new(pulse_sigma_at_distance(&link), cfg.spad, cfg.t_bin);
    let eta = channel_transmittance(&link);
    let base = baseline_qber(&model, cfg.f_alice, cfg.n_bar, eta, cfg.window_width, cfg.intrinsic_error)?;
    let threshold = cfg.convergence_factor * base.unfiltered;
    let convergence_time = converged_after(&history, threshold);
    Ok(SyncOutcome {
        loss_db,
        history,
        baseline: base.unfiltered,
        baseline_filtered: base.filtered,
        convergence_time,
    })
}

fn fmt_opt(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{:.6}", x * scale))
}

fn summary_lines(out: &mut String, prefix: &str, name: &str, values: &[f64], scale: f64) -> Result<()> {
    if values.is_empty() {
        let _ = writeln!(out, "{prefix}{name}_n=0");
        return Ok(());
    }
    let s = summarize(values)?;
    let _ = writeln!(out, "{prefix}{name}_mean={:.6}", s.mean * scale);
    let _ = writeln!(out, "{prefix}{name}_std={:.6}", s.std * scale);
    Ok(())
}

/// Closed-loop runs: ramp, offset recovery, tracking.
pub fn cmd_sync_run(cfg: &RunConfig) -> Result<Report> {
    let losses = if cfg.loss_list.is_empty() { vec![cfg.link.extra_loss_db] } else { cfg.loss_list.clone() };
    let outcomes: Vec<Result<SyncOutcome>> = losses
        .par_iter()
        .enumerate()
        .map(|(i, &loss)| sync_once(cfg, loss, &mut point_rng(cfg.seed, i as u64)))
        .collect();
    let mut tables = Vec::new();
    let mut summary = String::new();
    let mut failure = None;
    for (loss, outcome) in losses.iter().zip(outcomes) {
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) if exit_code(&e) == 3 => {
                let _ = writeln!(summary, "loss_{loss}dB.failure={e}");
                failure.get_or_insert(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let name = if losses.len() == 1 { "sync_trace.csv".to_string() } else { format!("sync_trace_{loss}dB.csv") };
        let mut trace = Vec::new();
        io(write_trace_csv(&outcome.history, &mut trace))?;
        tables.push(table(cfg, &name, String::from_utf8(trace).expect("ascii")));

        let p = if losses.len() == 1 { String::new() } else { format!("loss_{loss}dB.") };
        let _ = writeln!(summary, "{p}loss_db={loss}");
        let _ = writeln!(summary, "{p}iterations={}", outcome.history.len());
        let _ = writeln!(summary, "{p}baseline_qber={:.6}", outcome.baseline);
        let _ = writeln!(summary, "{p}baseline_qber_filtered={:.6}", outcome.baseline_filtered);
        let _ = writeln!(summary, "{p}convergence_time_s={}", fmt_opt(outcome.convergence_time, 1.0));
        if let Some(lock) = outcome.history.iter().find_map(|r| r.lock) {
            let _ = writeln!(summary, "{p}lock_peak={:.4}", lock.peak);
        }
        let tr: Vec<&IterationRecord> = outcome.tracking().collect();
        let pick = |f: fn(&IterationRecord) -> f64| tr.iter().map(|r| f(r)).collect::<Vec<f64>>();
        summary_lines(&mut summary, &p, "center_ps", &pick(|r| r.mean_center), 1e12)?;
        summary_lines(&mut summary, &p, "drift_ps_per_s", &pick(|r| r.drift_est), 1e12)?;
        summary_lines(&mut summary, &p, "qber", &pick(|r| r.qber.unfiltered), 1.0)?;
        summary_lines(&mut summary, &p, "qber_filtered", &pick(|r| r.qber.filtered), 1.0)?;
        if outcome.convergence_time.is_none() && failure.is_none() {
            failure = Some(Error::Convergence(format!(
                "QBER at {loss} dB did not settle below {} x baseline",
                cfg.convergence_factor
            )));
        }
    }
    tables.push(table(cfg, "sync_summary.txt", summary));
    Ok(Report { tables, failure })
}

/// Field statistics of a tracking run.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldResult {
    pub history: Vec<IterationRecord>,
    pub center: TimeSeries,
    pub drift: TimeSeries,
    pub qber: TimeSeries,
    pub qber_filtered: TimeSeries,
    /// `(tau, TDEV)` of the centre series.
    pub tdev: Vec<(f64, Result<f64>)>,
}

/// Long tracking run at full integration time.
pub fn field_run(cfg: &RunConfig) -> Result<FieldResult> {
    let mut rng = point_rng(cfg.seed, 0);
    let offset = cfg.static_offset.unwrap_or_else(|| rng.random_range(0.0..cfg.t_bin));
    let clocks = ClockPair::with_drift(cfg.f_alice, cfg.initial_drift)?
        .offset(offset)
        .aging(cfg.aging_rate);
    let ramp = RampConfig { start_tracking: true, recover_offset: false, ..cfg.ramp_config() };
    let iters = (cfg.duration / (2.0 * ramp.t_int_max)).round() as usize;
    let mut l = BinnedLink::new(clocks, &cfg.link, cfg.spad, cfg.t_bin, cfg.intrinsic_error, cfg.noise, rng.random::<u64>())?;
    let history = run_controller(cfg, ramp, &mut l, iters)?.history().to_vec();
    let ok: Vec<&IterationRecord> = history.iter().filter(|r| r.drift_est.is_finite()).collect();
    let ts: Vec<f64> = ok.iter().map(|r| r.t_cumulative).collect();
    let series = |f: fn(&IterationRecord) -> f64, kind| TimeSeries::new(ts.clone(), ok.iter().map(|r| f(r)).collect(), kind);
    let center = series(|r| r.mean_center, SeriesKind::Center)?;
    let tau0 = 2.0 * ramp.t_int_max;
    let uniform = TimeSeries::uniform(center.values().to_vec(), tau0, SeriesKind::Center)?;
    let tdev = tdev(&uniform, &octave_taus(tau0, uniform.len()))?;
    Ok(FieldResult {
        center,
        drift: series(|r| r.drift_est, SeriesKind::Drift)?,
        qber: series(|r| r.qber.unfiltered, SeriesKind::Qber)?,
        qber_filtered: series(|r| r.qber.filtered, SeriesKind::QberFiltered)?,
        tdev,
        history,
    })
}

/// 24-hour style tracking emulation: trace, moving averages, summary and TDEV.
pub fn cmd_field_sim(cfg: &RunConfig) -> Result<Report> {
    let f = field_run(cfg)?;
    let mut trace = Vec::new();
    io(write_trace_csv(&f.history, &mut trace))?;

    let ma = [&f.center, &f.drift, &f.qber, &f.qber_filtered]
        .into_iter()
        .map(|s| moving_average(s, cfg.ma_window))
        .collect::<Result<Vec<_>>>()?;
    let mut ma_body = String::from("t_s,center_ps,drift_ps_per_s,qber,qber_filtered\n");
    for i in 0..f.center.len() {
        let _ = writeln!(
            ma_body,
            "{:.3},{:.3},{:.3},{:.6},{:.6}",
            f.center.timestamps()[i],
            ma[0].values()[i] * 1e12,
            ma[1].values()[i] * 1e12,
            ma[2].values()[i],
            ma[3].values()[i]
        );
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "iterations={}", f.history.len());
    let _ = writeln!(summary, "valid_iterations={}", f.center.len());
    let entries = [
        (SeriesKind::Center, summarize(f.center.values())?, 1e12, "ps"),
        (SeriesKind::Drift, summarize(f.drift.values())?, 1e12, "ps_per_s"),
        (SeriesKind::Qber, summarize(f.qber.values())?, 1.0, "fraction"),
        (SeriesKind::QberFiltered, summarize(f.qber_filtered.values())?, 1.0, "fraction"),
    ];
    let mut buf = Vec::new();
    io(write_summary(&entries, &mut buf))?;
    summary.push_str(&String::from_utf8(buf).expect("ascii"));

    let mut tdev_out = Vec::new();
    io(write_tdev_csv(&f.tdev, &mut tdev_out))?;
    Ok(Report {
        tables: vec![
            table(cfg, "field_trace.csv", String::from_utf8(trace).expect("ascii")),
            table(cfg, "field_moving_average.csv", ma_body),
            table(cfg, "field_summary.txt", summary),
            table(cfg, "field_tdev.csv", String::from_utf8(tdev_out).expect("ascii")),
        ],
        failure: None,
    })
}
