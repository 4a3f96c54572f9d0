//! The `dnls` command line: `sample`, `evolve`, `experiment` and `norms`.
//!
//! Settings are layered as built-in defaults, then a TOML file (`--config`),
//! then flags. The resolved settings are written to
//! `<output_dir>/resolved_config.toml`, which can be passed back through
//! `--config` to repeat a run. Experiment parameters live in
//! `[experiments.<name>]` tables of the same file.
//!
//! Exit codes: 0 on success, 1 when an experiment fails its check or a run
//! errors, 2 on usage and validation errors.

use std::ffi::OsString;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dynamics::{default_dt, flow, FlowConfig, RhsKind};
use crate::error::{Error, Result};
use crate::experiments::{run_experiment, ExperimentConfigs, ExperimentName};
use crate::measure::{calibrate_cutoff, draw_sample, reweight_to_mu, sample_tilted, tilt_for_cutoff, weighted_estimate, Ensemble};
use crate::spectral::{fl_norm, l2_norm, SpectralState};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "DNLS_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "dnls-output";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Ensemble draws used when `cutoff_b = "auto"` calibrates `B`.
const PILOT_COUNT: usize = 2000;

#[derive(Parser, Debug)]
#[command(name = "dnls", version, about = "Gauged derivative NLS: flows, Gibbs-type measures and experiments")]
struct Cli {
    /// TOML file with run settings and `[experiments.<name>]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: CommandArgs,
}

#[derive(Subcommand, Debug)]
enum CommandArgs {
    /// Draw a ρ_N or μ_N ensemble; writes the ensemble and a moment summary.
    Sample,
    /// Integrate one state; writes its trajectory.
    Evolve,
    /// Run a named experiment, or `all`.
    Experiment { name: String },
    /// Print the FL^{s,r} norm of a state file.
    Norms,
}

/// One flag per settings key.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long, global = true)]
    n_modes: Option<usize>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    t_final: Option<f64>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// A number, `auto` (pilot calibration) or `none`.
    #[arg(long, global = true)]
    cutoff_b: Option<Cutoff>,
    #[arg(long, global = true)]
    tilt: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    s: Option<f64>,
    #[arg(long, global = true)]
    r: Option<f64>,
    #[arg(long, global = true)]
    record_every: Option<usize>,
    #[arg(long, global = true)]
    sample_index: Option<u64>,
    /// `fgdnls`, `gdnls-plus` or `dnls`.
    #[arg(long, global = true)]
    rhs: Option<String>,
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    snapshots: Option<bool>,
    #[arg(long, global = true, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    /// Thread count; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

/// The `L²` cutoff setting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cutoff {
    /// Calibrate `B` with a pilot run.
    Auto,
    /// No cutoff: a plain `ρ_N` ensemble.
    None,
    Value(f64),
}

impl FromStr for Cutoff {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(Cutoff::Auto),
            "none" => Ok(Cutoff::None),
            _ => s.parse().map(Cutoff::Value).map_err(|_| format!("expected a number, `auto` or `none`, got `{s}`")),
        }
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cutoff::Auto => f.write_str("auto"),
            Cutoff::None => f.write_str("none"),
            Cutoff::Value(b) => write!(f, "{b}"),
        }
    }
}

impl Serialize for Cutoff {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cutoff::Value(b) => s.serialize_f64(*b),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Cutoff {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(b) => Ok(Cutoff::Value(b)),
            Raw::Int(b) => Ok(Cutoff::Value(b as f64)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Sample,
    Evolve,
    Experiment,
    Norms,
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Informational on input; the subcommand decides what runs.
    pub command: Option<Command>,
    pub n_modes: usize,
    /// Unset means the state-dependent default step.
    pub dt: Option<f64>,
    pub t_final: f64,
    pub samples: usize,
    pub seed: u64,
    pub cutoff_b: Cutoff,
    /// Proposal tilt for `sample`; unset picks it from `B`.
    pub tilt: Option<f64>,
    pub s: f64,
    pub r: f64,
    pub record_every: usize,
    /// First `ρ_N` draw considered for `evolve` when no input is given.
    pub sample_index: u64,
    pub rhs: String,
    pub input: Option<PathBuf>,
    /// Also write binary state snapshots from `evolve`.
    pub snapshots: bool,
    pub experiment_name: Option<String>,
    pub output_dir: PathBuf,
    pub workers: Option<usize>,
    pub experiments: ExperimentConfigs,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            n_modes: 16,
            dt: None,
            t_final: 1.0,
            samples: 1000,
            seed: 0,
            cutoff_b: Cutoff::None,
            tilt: None,
            s: 2.0 / 3.0 - 0.01,
            r: 3.0,
            record_every: 10,
            sample_index: 0,
            rhs: "fgdnls".into(),
            input: None,
            snapshots: false,
            experiment_name: None,
            output_dir: PathBuf::from(DEFAULT_OUTPUT_DIR),
            workers: None,
            experiments: ExperimentConfigs::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![format!("config file: {e}")]))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("cannot write config: {e}")))
    }

    pub fn rhs_kind(&self) -> Option<RhsKind> {
        match self.rhs.as_str() {
            "fgdnls" => Some(RhsKind::Fgdnls),
            "gdnls-plus" => Some(RhsKind::GdnlsPlus),
            "dnls" => Some(RhsKind::Dnls),
            _ => None,
        }
    }

    /// Every violated constraint for `command`, reported together.
    pub fn validate(&self, command: Command) -> Result<()> {
        let mut errs = Vec::new();
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                errs.push(format!("dt = {dt} must be positive and finite"));
            }
        }
        if !self.t_final.is_finite() {
            errs.push(format!("t_final = {} must be finite", self.t_final));
        }
        if self.samples == 0 {
            errs.push("samples must be at least 1".into());
        }
        if let Cutoff::Value(b) = self.cutoff_b {
            if !(b > 0.0) {
                errs.push(format!("cutoff_b = {b} must be positive"));
            }
        }
        if let Some(t) = self.tilt {
            if !(t.is_finite() && t >= 0.0) {
                errs.push(format!("tilt = {t} must be finite and non-negative"));
            }
        }
        if !self.s.is_finite() {
            errs.push(format!("s = {} must be finite", self.s));
        }
        if !(self.r >= 1.0) {
            errs.push(format!("r = {} must be at least 1", self.r));
        }
        if self.record_every == 0 {
            errs.push("record_every must be at least 1".into());
        }
        if self.rhs_kind().is_none() {
            errs.push(format!("rhs = `{}` is not one of fgdnls, gdnls-plus, dnls", self.rhs));
        }
        if self.workers == Some(0) {
            errs.push("workers must be at least 1".into());
        }
        if command == Command::Norms && self.input.is_none() {
            errs.push("norms needs --input".into());
        }
        if command == Command::Experiment {
            match self.experiment_name.as_deref() {
                Some("all") => {}
                Some(name) if ExperimentName::parse(name).is_some() => {}
                Some(name) => errs.push(format!(
                    "unknown experiment `{name}`; expected `all` or one of {}",
                    ExperimentName::ALL.map(|e| e.as_str()).join(", ")
                )),
                None => errs.push("experiment name missing".into()),
            }
        }
        if errs.is_empty() { Ok(()) } else { Err(Error::Config(errs)) }
    }

    fn apply(&mut self, o: Overrides) {
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = o.$field { self.$field = v; } )* };
        }
        macro_rules! set_opt {
            ($($field:ident),*) => { $( if o.$field.is_some() { self.$field = o.$field; } )* };
        }
        set!(n_modes, t_final, samples, seed, cutoff_b, s, r, record_every, sample_index, rhs, snapshots, output_dir);
        set_opt!(dt, tilt, input, workers);
    }
}

/// Writes `<output_dir>/manifest.json`.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    program_version: &'static str,
    command: Command,
    git_hash: String,
    seed: u64,
    started: String,
    finished: String,
    argv: Vec<String>,
    config: &'a RunConfig,
    outputs: Vec<String>,
    passed: bool,
}

fn git_hash() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match resolve(cli).and_then(|(cmd, cfg)| run(cmd, &cfg, &argv)) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_FAILED,
            }
        }
    }
}

fn resolve(cli: Cli) -> Result<(Command, RunConfig)> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_toml(
            &std::fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?,
        )?,
        None => RunConfig::default(),
    };
    let command = match cli.command {
        CommandArgs::Sample => Command::Sample,
        CommandArgs::Evolve => Command::Evolve,
        CommandArgs::Norms => Command::Norms,
        CommandArgs::Experiment { name } => {
            cfg.experiment_name = Some(name);
            Command::Experiment
        }
    };
    cfg.apply(cli.overrides);
    cfg.command = Some(command);
    cfg.validate(command)?;
    Ok((command, cfg))
}

/// Runs a resolved command; `Ok(false)` means an experiment failed its check.
pub fn run(command: Command, cfg: &RunConfig, argv: &[String]) -> Result<bool> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        if command == Command::Norms {
            let state = read_state(cfg.input.as_deref().expect("validated"))?;
            println!("{:.17e}", fl_norm(&state, cfg.s, cfg.r)?);
            return Ok(true);
        }
        let started = chrono::Utc::now().to_rfc3339();
        std::fs::create_dir_all(&cfg.output_dir)?;
        let config_text = cfg.to_toml()?;
        print!("# resolved configuration\n{config_text}");
        std::fs::write(cfg.output_dir.join(RESOLVED_CONFIG_FILE), &config_text)?;
        let (passed, mut outputs) = match command {
            Command::Sample => run_sample(cfg)?,
            Command::Evolve => run_evolve(cfg)?,
            Command::Experiment => run_experiments(cfg)?,
            Command::Norms => unreachable!(),
        };
        outputs.insert(0, RESOLVED_CONFIG_FILE.into());
        let manifest = Manifest {
            schema_version: 1,
            program_version: env!("CARGO_PKG_VERSION"),
            command,
            git_hash: git_hash(),
            seed: cfg.seed,
            started,
            finished: chrono::Utc::now().to_rfc3339(),
            argv: argv.to_vec(),
            config: cfg,
            outputs,
            passed,
        };
        let mut f = BufWriter::new(File::create(cfg.output_dir.join(MANIFEST_FILE))?);
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(passed)
    })
}

pub fn read_state(path: &Path) -> Result<SpectralState> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

fn resolve_b(cfg: &RunConfig) -> Result<Option<f64>> {
    Ok(match cfg.cutoff_b {
        Cutoff::None => None,
        Cutoff::Value(b) => Some(b),
        Cutoff::Auto => {
            let cal = calibrate_cutoff(cfg.n_modes, PILOT_COUNT, cfg.seed ^ 0x5eed)?;
            eprintln!("calibrated cutoff B = {} (pilot pass fraction {:.3})", cal.b, cal.pass_fraction);
            Some(cal.b)
        }
    })
}

fn run_sample(cfg: &RunConfig) -> Result<(bool, Vec<String>)> {
    let b = resolve_b(cfg)?;
    let tilt = match (cfg.tilt, b) {
        (Some(t), _) => t,
        (None, Some(b)) => tilt_for_cutoff(cfg.n_modes, b),
        (None, None) => 0.0,
    };
    let mut ens = sample_tilted(cfg.n_modes, cfg.samples, cfg.seed, tilt)?;
    if let Some(b) = b {
        ens = reweight_to_mu(&ens, b);
    }
    ens.write(&cfg.output_dir.join("ensemble.bin"))?;
    ens.write_csv(BufWriter::new(File::create(cfg.output_dir.join("samples.csv"))?))?;
    write_moments(&ens, &cfg.output_dir.join("moments.csv"))?;
    println!(
        "samples {} ess {:.1} pass_fraction {:.4} cutoff_b {} tilt {}",
        ens.count(),
        ens.effective_sample_size(),
        ens.pass_fraction(),
        ens.cutoff_b,
        ens.tilt
    );
    Ok((true, vec!["ensemble.bin".into(), "samples.csv".into(), "moments.csv".into()]))
}

/// Weighted `E|c_n|²` per mode next to the `ρ_N` value `2/(1+n²)`.
fn write_moments(ens: &Ensemble, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["n", "second_moment", "std_error", "rho_second_moment", "ess"])?;
    let n = ens.bandwidth as i64;
    for k in -n..=n {
        let values: Vec<f64> = ens.samples.iter().map(|s| s.coeff(k).norm_sqr()).collect();
        let (mean, se, ess) = match weighted_estimate(&values, &ens.log_weights) {
            Ok(e) => (e.mean, e.std_error, e.effective_sample_size),
            Err(Error::UnusableEstimate { ess, .. }) => (f64::NAN, f64::NAN, ess),
            Err(e) => return Err(e),
        };
        w.write_record([
            k.to_string(),
            format!("{mean:.17e}"),
            format!("{se:.17e}"),
            format!("{:.17e}", crate::measure::mode_second_moment(k)),
            format!("{ess:.17e}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_evolve(cfg: &RunConfig) -> Result<(bool, Vec<String>)> {
    let state = match &cfg.input {
        Some(path) => read_state(path)?,
        None => {
            let b = resolve_b(cfg)?.unwrap_or(f64::INFINITY);
            let (index, s) = (cfg.sample_index..cfg.sample_index + 100_000)
                .map(|i| (i, draw_sample(cfg.n_modes, cfg.seed, i)))
                .find(|(_, s)| l2_norm(s) <= b)
                .ok_or_else(|| Error::invalid(format!("no sample within B = {b} in 100000 draws")))?;
            eprintln!("initial state: sample {index} of seed {}", cfg.seed);
            s
        }
    };
    let dt = cfg.dt.unwrap_or_else(|| default_dt(&state));
    let flow_cfg = FlowConfig::new(state.bandwidth(), dt, cfg.t_final)?.with_record_every(cfg.record_every);
    if let Some(w) = flow_cfg.stability_warning(&state) {
        eprintln!("warning: {w}");
    }
    let traj = flow(&state, cfg.rhs_kind().expect("validated"), &flow_cfg)?;
    traj.write_csv(BufWriter::new(File::create(cfg.output_dir.join("trajectory.csv"))?))?;
    let mut outputs = vec!["trajectory.csv".to_string(), "final_state.json".to_string()];
    let mut f = BufWriter::new(File::create(cfg.output_dir.join("final_state.json"))?);
    serde_json::to_writer(&mut f, traj.last())?;
    f.flush()?;
    if cfg.snapshots {
        let mut f = BufWriter::new(File::create(cfg.output_dir.join("snapshots.bin"))?);
        traj.write_snapshots(&mut f)?;
        f.flush()?;
        outputs.push("snapshots.bin".into());
    }
    Ok((true, outputs))
}

fn run_experiments(cfg: &RunConfig) -> Result<(bool, Vec<String>)> {
    let names: Vec<ExperimentName> = match cfg.experiment_name.as_deref().expect("validated") {
        "all" => ExperimentName::ALL.to_vec(),
        name => vec![ExperimentName::parse(name).expect("validated")],
    };
    let mut all_passed = true;
    let mut outputs = Vec::new();
    for name in names {
        for result in run_experiment(name, &cfg.experiments)? {
            let (json, rows) = result.write(&cfg.output_dir)?;
            println!(
                "{} {} ({:.1} s) {}",
                if result.passed { "PASS" } else { "FAIL" },
                result.name,
                result.runtime_seconds,
                serde_json::to_string(&result.fitted)?
            );
            all_passed &= result.passed;
            for p in [json, rows] {
                outputs.push(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
            }
        }
    }
    Ok((all_passed, outputs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_parsing() {
        assert_eq!("auto".parse::<Cutoff>().unwrap(), Cutoff::Auto);
        assert_eq!("none".parse::<Cutoff>().unwrap(), Cutoff::None);
        assert_eq!("1.5".parse::<Cutoff>().unwrap(), Cutoff::Value(1.5));
        assert!("big".parse::<Cutoff>().is_err());
        let cfg = RunConfig::from_toml("cutoff_b = 2\n").unwrap();
        assert_eq!(cfg.cutoff_b, Cutoff::Value(2.0));
        let cfg = RunConfig::from_toml("cutoff_b = \"auto\"\n").unwrap();
        assert_eq!(cfg.cutoff_b, Cutoff::Auto);
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("n_mode = 3\n"), Err(Error::Config(_))));
    }

    #[test]
    fn validation_lists_every_violation() {
        let cfg = RunConfig {
            dt: Some(-1.0),
            samples: 0,
            r: 0.5,
            rhs: "kdv".into(),
            ..RunConfig::default()
        };
        match cfg.validate(Command::Norms) {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 5, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }
}
