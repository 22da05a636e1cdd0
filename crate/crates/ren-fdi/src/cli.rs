//! Command-line pipeline: `simulate`, `train`, `evaluate`, `verify`, `infer`
//! and `plot`. Every run writes exactly one `run_manifest.json` next to its
//! outputs carrying the subcommand, resolved configuration, seeds and paths,
//! so a run is reproducible from its manifest alone.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{self, DatasetConfig, ScenarioSet, INPUT_COUNT, SENSOR_COUNT};
use crate::plotting::{line_chart, Series};
use crate::ren::{Checkpoint, FilterBank, PerformanceSpec, RenDims};
use crate::training::{self, TrainConfig};
use crate::verify::{self, SuiteConfig};

/// Environment variable consulted for a default `--config` path.
pub const CONFIG_ENV_VAR: &str = "REN_FDI_CONFIG";

#[derive(Parser)]
#[command(
    name = "ren-fdi",
    version,
    about = "Sensor fault detection and isolation with a bank of contraction-guaranteed recurrent filters"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a scenario dataset (plant simulation plus synthetic faults).
    Simulate(SimulateArgs),
    /// Train filters on a dataset and write checkpoints.
    Train(TrainArgs),
    /// Evaluate a trained bank: per-class mean RMSE table.
    Evaluate(EvaluateArgs),
    /// Run the property suite (well-posedness, contraction, constraint gap,
    /// sensitivity/insensitivity bounds) and write a JSON report.
    Verify(VerifyArgs),
    /// Run a bank on one scenario and write the residual traces.
    Infer(InferArgs),
    /// Render residual/fault traces of one scenario to SVG, one file per
    /// filter.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory (parent must exist).
    #[arg(long)]
    out: PathBuf,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset configuration (TOML); defaults to the built-in training
    /// composition.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generate healthy scenarios only.
    #[arg(long)]
    healthy_only: bool,
    /// Generate the three-class test composition instead of the training one.
    #[arg(long, conflicts_with = "healthy_only")]
    test_composition: bool,
    /// Override the scenario count of every composition group.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Filter to train: an index 1..=4 or `all`.
    #[arg(long, default_value = "all")]
    filter: String,
    /// Dataset directory (written by `simulate`).
    #[arg(long)]
    data: PathBuf,
    /// Training configuration (TOML); falls back to $REN_FDI_CONFIG, then to
    /// built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints, logs and reports.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory holding filter_<i>.json checkpoints.
    #[arg(long)]
    bank: PathBuf,
    /// Dataset directory to evaluate on.
    #[arg(long)]
    scenarios: PathBuf,
    /// Warm-up samples excluded from the RMSE.
    #[arg(long, default_value_t = 4)]
    k0: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Bank to verify; omit to verify a freshly initialized random bank.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Seed for the suite's synthetic inputs (and for the random bank when no
    /// bank is given).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trials per constraint-gap and bound check.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Random initial-state pairs per contraction check.
    #[arg(long, default_value_t = 20)]
    contraction_pairs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    scenarios: PathBuf,
    /// Scenario id within the dataset.
    #[arg(long)]
    scenario: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    scenarios: PathBuf,
    #[arg(long)]
    scenario: usize,
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Data(String),
    VerificationFailed,
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::VerificationFailed => 3,
        }
    }
}

macro_rules! data_err {
    ($($arg:tt)*) => { CliError::Data(format!($($arg)*)) };
}

fn to_data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

/// Runs the CLI on the given argument list (including the program name) and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Infer(a) => cmd_infer(a),
        Cmd::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("usage error: {msg}"),
                CliError::Data(msg) => eprintln!("error: {msg}"),
                CliError::VerificationFailed => eprintln!("verification failed"),
            }
            e.code()
        }
    }
}

// --- shared helpers ---------------------------------------------------------

/// The output directory itself is created, but its parent must exist.
fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    if path.is_dir() {
        return Ok(());
    }
    match path.parent() {
        Some(parent) if parent.as_os_str().is_empty() || parent.is_dir() => {
            std::fs::create_dir(path)
                .map_err(|e| data_err!("cannot create output directory {}: {e}", path.display()))
        }
        _ => Err(data_err!(
            "output directory {} does not exist and its parent is missing",
            path.display()
        )),
    }
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    tool_version: String,
    timestamp_unix_s: u64,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    config_sha256: String,
    config: serde_json::Value,
}

fn write_run_manifest(
    dir: &Path,
    subcommand: &str,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    config: serde_json::Value,
) -> Result<(), CliError> {
    let config_text = serde_json::to_string(&config).expect("config serialization");
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    let digest = hasher.finalize();
    let mut config_sha256 = String::with_capacity(64);
    for b in digest {
        write!(config_sha256, "{b:02x}").unwrap();
    }
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        seeds,
        inputs,
        outputs,
        config_sha256,
        config,
    };
    let path = dir.join("run_manifest.json");
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    std::fs::write(&path, body)
        .map_err(|e| data_err!("cannot write run manifest {}: {e}", path.display()))
}

fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| data_err!("cannot read config {}: {e}", path.display()))?;
    toml::from_str(&body).map_err(|e| data_err!("malformed config {}: {e}", path.display()))
}

fn load_set_or_err(path: &Path) -> Result<ScenarioSet, CliError> {
    dataset::load_set(path).map_err(to_data)
}

fn load_bank_or_err(path: &Path) -> Result<FilterBank, CliError> {
    FilterBank::load(path).map_err(to_data)
}

// --- subcommands ------------------------------------------------------------

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut config: DatasetConfig = match &a.config {
        Some(path) => load_toml(path)?,
        None if a.healthy_only => DatasetConfig::healthy_only(a.count.unwrap_or(5)),
        None if a.test_composition => DatasetConfig::test_composition(a.count.unwrap_or(100)),
        None => DatasetConfig::default(),
    };
    if a.config.is_some() && (a.healthy_only || a.test_composition) {
        return Err(CliError::Usage(
            "--config conflicts with --healthy-only/--test-composition".into(),
        ));
    }
    if let Some(count) = a.count {
        for g in &mut config.groups {
            g.count = count;
        }
    }
    ensure_out_dir(&a.out)?;
    let set = dataset::build_scenarios(&config, a.seed).map_err(to_data)?;
    dataset::save_set(&set, &a.out).map_err(to_data)?;

    let outputs = vec!["manifest.json".to_string(), "scenario_<id>.csv".to_string()];
    write_run_manifest(
        &a.out,
        "simulate",
        BTreeMap::from([("master".to_string(), a.seed)]),
        vec![],
        outputs,
        serde_json::to_value(&config).expect("config to json"),
    )?;
    println!(
        "simulate: wrote {} scenarios ({} samples each) to {}",
        set.scenarios.len(),
        set.config.data_len(),
        a.out.display()
    );
    Ok(())
}

/// Model half of the training configuration file.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub n_z: usize,
    pub n_v: usize,
    pub beta: f64,
    pub gamma: f64,
    pub q: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            n_z: 8,
            n_v: 32,
            beta: crate::ren::DEFAULT_BETA,
            gamma: crate::ren::DEFAULT_GAMMA,
            q: crate::ren::DEFAULT_Q,
        }
    }
}

/// Complete training configuration file: `[model]` plus `[optim]` sections,
/// every field optional with these defaults.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub model: ModelSettings,
    pub optim: TrainConfig,
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let config_path = a.config.clone().or_else(|| {
        std::env::var_os(CONFIG_ENV_VAR).map(PathBuf::from)
    });
    let settings: TrainSettings = match &config_path {
        Some(path) => load_toml(path)?,
        None => TrainSettings::default(),
    };
    let set = load_set_or_err(&a.data)?;
    ensure_out_dir(&a.out)?;

    let dims = RenDims::new(settings.model.n_z, settings.model.n_v, INPUT_COUNT + SENSOR_COUNT)
        .map_err(to_data)?;
    let filters: Vec<usize> = if a.filter == "all" {
        (1..=SENSOR_COUNT).collect()
    } else {
        let i: usize = a
            .filter
            .parse()
            .map_err(|_| CliError::Usage(format!("--filter must be 1..={SENSOR_COUNT} or `all`, got `{}`", a.filter)))?;
        if i < 1 || i > SENSOR_COUNT {
            return Err(CliError::Usage(format!(
                "--filter must be 1..={SENSOR_COUNT} or `all`, got `{i}`"
            )));
        }
        vec![i]
    };

    let mut outputs = Vec::new();
    for &i in &filters {
        let spec = PerformanceSpec::new(
            settings.model.beta,
            settings.model.gamma,
            settings.model.q,
            i,
            INPUT_COUNT,
            SENSOR_COUNT,
        )
        .map_err(to_data)?;
        let (params, mut report) =
            training::train_filter(i, &dims, &spec, &set, &settings.optim).map_err(to_data)?;

        let ck = Checkpoint::new(dims, spec, &params, settings.optim.filter_seed(i));
        let ck_path = a.out.join(format!("filter_{i}.json"));
        ck.save(&ck_path).map_err(to_data)?;
        report.checkpoint_path = Some(ck_path.clone());

        let log_path = a.out.join(format!("training_log_filter_{i}.csv"));
        training::write_training_log(&report, &log_path).map_err(to_data)?;
        let report_path = a.out.join(format!("train_report_filter_{i}.json"));
        std::fs::write(
            &report_path,
            serde_json::to_string_pretty(&report).expect("report serialization"),
        )
        .map_err(|e| data_err!("cannot write {}: {e}", report_path.display()))?;

        let initial = report.per_epoch.first().map_or(report.final_loss, |r| r.loss);
        println!(
            "train: filter {i}: loss {initial:.4e} -> {:.4e} over {} epochs in {:.1}s{}",
            report.final_loss,
            report.per_epoch.len(),
            report.wall_time_s,
            report
                .grad_check_worst_rel_err
                .map(|e| format!(", grad-check worst rel err {e:.2e}"))
                .unwrap_or_default()
        );
        if report.descent_window_violations > 0 {
            eprintln!(
                "train: filter {i}: loss rose over a 50-epoch window {} times (diagnostic only)",
                report.descent_window_violations
            );
        }
        outputs.push(ck_path.file_name().unwrap().to_string_lossy().into_owned());
        outputs.push(log_path.file_name().unwrap().to_string_lossy().into_owned());
        outputs.push(report_path.file_name().unwrap().to_string_lossy().into_owned());
    }

    write_run_manifest(
        &a.out,
        "train",
        BTreeMap::from([("train_master".to_string(), settings.optim.seed)]),
        vec![a.data.display().to_string()],
        outputs,
        serde_json::to_value(settings).expect("settings to json"),
    )
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let bank = load_bank_or_err(&a.bank)?;
    let set = load_set_or_err(&a.scenarios)?;
    ensure_out_dir(&a.out)?;
    let table = training::evaluate_rmse(&bank, &set, a.k0).map_err(to_data)?;
    print!("{}", table.render());
    let csv_path = a.out.join("rmse.csv");
    std::fs::write(&csv_path, table.to_csv())
        .map_err(|e| data_err!("cannot write {}: {e}", csv_path.display()))?;
    write_run_manifest(
        &a.out,
        "evaluate",
        BTreeMap::new(),
        vec![a.bank.display().to_string(), a.scenarios.display().to_string()],
        vec!["rmse.csv".to_string()],
        serde_json::json!({ "k0": a.k0 }),
    )
}

fn cmd_verify(a: VerifyArgs) -> Result<(), CliError> {
    let bank = match &a.bank {
        Some(path) => load_bank_or_err(path)?,
        None => {
            // Architectural checks hold for untrained filters; verify a
            // freshly drawn bank.
            let dims = RenDims::new(8, 32, INPUT_COUNT + SENSOR_COUNT).map_err(to_data)?;
            let mut filters = Vec::new();
            for i in 1..=SENSOR_COUNT {
                let spec =
                    PerformanceSpec::with_defaults(i, INPUT_COUNT, SENSOR_COUNT).map_err(to_data)?;
                let seed = crate::signals::mix_seed(a.seed, i as u64);
                let params =
                    crate::ren::init_params(&dims, &Default::default(), seed).map_err(to_data)?;
                filters.push(Checkpoint::new(dims, spec, &params, seed));
            }
            FilterBank { filters }
        }
    };
    ensure_out_dir(&a.out)?;
    let cfg = SuiteConfig {
        seed: a.seed,
        iqc_trials: a.trials,
        bound_trials: a.trials,
        contraction_pairs: a.contraction_pairs,
        ..SuiteConfig::default()
    };
    let records = verify::run_suite(&bank, &cfg).map_err(to_data)?;
    for r in &records {
        println!(
            "verify: {:<24} {}  (worst margin {:+.3e})",
            r.name,
            if r.pass { "pass" } else { "FAIL" },
            r.worst_margin
        );
    }
    let report_path = a.out.join("verify_report.json");
    std::fs::write(&report_path, verify::report_json(&records))
        .map_err(|e| data_err!("cannot write {}: {e}", report_path.display()))?;
    write_run_manifest(
        &a.out,
        "verify",
        BTreeMap::from([("suite".to_string(), a.seed)]),
        a.bank.iter().map(|p| p.display().to_string()).collect(),
        vec!["verify_report.json".to_string()],
        serde_json::json!({
            "trials": a.trials,
            "contraction_pairs": a.contraction_pairs,
            "random_bank": a.bank.is_none(),
        }),
    )?;
    if records.iter().all(|r| r.pass) {
        Ok(())
    } else {
        Err(CliError::VerificationFailed)
    }
}

fn residual_traces(
    bank: &FilterBank,
    set: &ScenarioSet,
    scenario_id: usize,
) -> Result<(Vec<Vec<f64>>, usize), CliError> {
    let sc = set.scenario(scenario_id).map_err(to_data)?;
    let inputs = set.filter_input(sc);
    let rens = bank.instantiate().map_err(to_data)?;
    Ok((training::run_bank(&rens, &inputs), sc.id))
}

fn cmd_infer(a: InferArgs) -> Result<(), CliError> {
    let bank = load_bank_or_err(&a.bank)?;
    let set = load_set_or_err(&a.scenarios)?;
    ensure_out_dir(&a.out)?;
    let (traces, id) = residual_traces(&bank, &set, a.scenario)?;

    let mut csv = String::from("k,t,r1,r2,r3,r4\n");
    let dt = 1.0 / set.config.data_rate_hz;
    for k in 0..set.config.data_len() {
        write!(csv, "{k},{}", crate::plant::fmt_f64(k as f64 * dt)).unwrap();
        for trace in &traces {
            write!(csv, ",{}", crate::plant::fmt_f64(trace[k])).unwrap();
        }
        csv.push('\n');
    }
    let name = format!("residuals_scenario_{id:03}.csv");
    let path = a.out.join(&name);
    std::fs::write(&path, csv).map_err(|e| data_err!("cannot write {}: {e}", path.display()))?;
    println!("infer: wrote {}", path.display());
    write_run_manifest(
        &a.out,
        "infer",
        BTreeMap::new(),
        vec![a.bank.display().to_string(), a.scenarios.display().to_string()],
        vec![name],
        serde_json::json!({ "scenario": a.scenario }),
    )
}

fn cmd_plot(a: PlotArgs) -> Result<(), CliError> {
    let bank = load_bank_or_err(&a.bank)?;
    let set = load_set_or_err(&a.scenarios)?;
    ensure_out_dir(&a.out)?;
    let sc = set.scenario(a.scenario).map_err(to_data)?;
    let (traces, id) = residual_traces(&bank, &set, a.scenario)?;
    let dt = 1.0 / set.config.data_rate_hz;

    let mut outputs = Vec::new();
    for (fi, trace) in traces.iter().enumerate() {
        let sensor = bank.filters[fi].spec.sensor_index();
        let fault = &sc.faults[sensor - 1].signal;
        let svg = line_chart(
            &format!("detector {sensor} — scenario {id}"),
            "residual [m]",
            dt,
            &[
                Series { label: "residual", color: "#1f77b4", values: trace },
                Series { label: "true fault", color: "#d62728", values: fault },
            ],
        );
        let name = format!("plot_scenario_{id:03}_filter_{sensor}.svg");
        let path = a.out.join(&name);
        std::fs::write(&path, svg)
            .map_err(|e| data_err!("cannot write {}: {e}", path.display()))?;
        outputs.push(name);
    }
    println!("plot: wrote {} panels to {}", outputs.len(), a.out.display());
    write_run_manifest(
        &a.out,
        "plot",
        BTreeMap::new(),
        vec![a.bank.display().to_string(), a.scenarios.display().to_string()],
        outputs,
        serde_json::json!({ "scenario": a.scenario }),
    )
}
