//! Command-line front end.
//!
//! Human-readable text goes to the writer passed to [`run`] (standard output
//! for the binary); artifacts go only to the paths named by flags. The
//! process exit code is the API: see [`CliError::exit_code`].

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::dpo::{run_batch, DpoError, LossConfig};
use crate::halmetrics::{evaluate, read_ground_truth, read_predictions, MetricsError, ObjectLexicon};
use crate::pairgen::{
    dataset_stats, emit_jsonl, generate, write_skip_log, GenConfig, Level, PairgenError, Pools, Stats,
};
use crate::toy_align::{check_all, run_experiment, ScheduleMode, ToyError, ToyRunConfig, DEFAULT_TOLERANCE};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Diverged(String),
    #[error("gradient check failed: max relative error {0:e} exceeds {DEFAULT_TOLERANCE:e}")]
    GradCheck(f64),
}

impl CliError {
    /// 1 config, 2 input/pool/schema, 3 non-finite training, 4 failed gradient check.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Input(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::GradCheck(_) => 4,
        }
    }
}

impl From<PairgenError> for CliError {
    fn from(e: PairgenError) -> Self {
        match e {
            PairgenError::BadConfig(_) | PairgenError::BadRange(_) | PairgenError::BadPerturbation(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DpoError> for CliError {
    fn from(e: DpoError) -> Self {
        match e {
            DpoError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ToyError> for CliError {
    fn from(e: ToyError) -> Self {
        match e {
            ToyError::InvalidConfig(_) | ToyError::Dpo(DpoError::InvalidConfig(_)) => {
                CliError::Config(e.to_string())
            }
            ToyError::NonFinite { .. } => CliError::Diverged(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::Input(format!("writing output: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "prefalign", version, about = "Multi-image preference data, metrics and losses")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate preference pairs from caption pools.
    GenPairs(GenPairsArgs),
    /// Score predictions for hallucination and coverage.
    Eval(EvalArgs),
    /// Evaluate losses and gradients for a batch of log-prob records.
    Losses(LossesArgs),
    /// Train the tabular toy policy.
    TrainToy(TrainToyArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Summarize a preference-pair file.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Context,
    NeedleT,
    NeedleV,
    All,
}

impl LevelArg {
    fn levels(self) -> Vec<Level> {
        match self {
            LevelArg::Context => vec![Level::Context],
            LevelArg::NeedleT => vec![Level::NeedleT],
            LevelArg::NeedleV => vec![Level::NeedleV],
            LevelArg::All => Level::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Multi,
    Mixed,
}

/// Config file plus `key=value` overrides with dotted keys.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML config file; relative paths inside resolve against its directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set context.n_range=[2,3]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GenPairsArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum, default_value = "all")]
    pub level: LevelArg,
    /// Pair file; overrides `output` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip log; defaults to `<out>.skipped.jsonl`.
    #[arg(long)]
    pub skip_log: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pairs per selected level.
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Writes the full report (raw ratios) as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Only score sequences with this many images.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LossesArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta2: f64,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-epoch history, one JSON object per line.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Trained logits as text.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
}

/// Parses a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets a dotted key in a table, creating intermediate tables.
pub fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| CliError::Config(format!("empty key in {key:?}")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Reads the config file, applies overrides and deserializes the result.
fn load_config<T: DeserializeOwned>(args: &ConfigArgs, flags: Vec<(&str, toml::Value)>) -> Result<T, CliError> {
    let mut table = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for raw in &args.overrides {
        let (key, value) = raw
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {raw:?} is not KEY=VALUE")))?;
        set_dotted(&mut table, key.trim(), parse_value(value.trim()))?;
    }
    for (key, value) in flags {
        set_dotted(&mut table, key, value)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
}

fn config_dir(args: &ConfigArgs) -> PathBuf {
    args.config
        .as_ref()
        .and_then(|p| p.parent())
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

fn echo_config<W: Write, T: Serialize>(out: &mut W, command: &str, cfg: &T) -> Result<(), CliError> {
    let body = toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    writeln!(out, "# effective config: {command}\n{}", body.trim_end()).map_err(out_err)?;
    writeln!(out).map_err(out_err)
}

/// Table of per-level statistics.
pub fn format_stats(stats: &Stats) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<9} {:>6} {:>7} {:>11} {:>13}  perturbations",
        "level", "pairs", "images", "chosen_tok", "rejected_tok"
    );
    for (level, l) in &stats.levels {
        let rejected = l
            .mean_rejected_tokens
            .map_or_else(|| "-".to_string(), |m| format!("{m:.2}"));
        let perturbations: Vec<String> = l.perturbations.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(
            s,
            "{:<9} {:>6} {:>7} {:>11.2} {:>13}  {}",
            level.as_str(),
            l.count,
            format!("{}-{}", l.images_min, l.images_max),
            l.mean_chosen_tokens,
            rejected,
            perturbations.join(" ")
        );
    }
    let _ = writeln!(s, "total {}", stats.total);
    s
}

fn gen_pairs<W: Write>(args: &GenPairsArgs, out: &mut W) -> Result<(), CliError> {
    let mut flags = Vec::new();
    if let Some(seed) = args.seed {
        flags.push(("master_seed", toml::Value::Integer(seed as i64)));
    }
    if let Some(path) = &args.out {
        flags.push(("output", toml::Value::String(path.display().to_string())));
    }
    let mut cfg: GenConfig = load_config(&args.config, flags)?;
    let levels = args.level.levels();
    if let Some(count) = args.count {
        for level in &levels {
            cfg.set_count(*level, count);
        }
    }
    cfg.validate()?;
    echo_config(out, "gen-pairs", &cfg)?;
    let path = cfg
        .output
        .clone()
        .ok_or_else(|| CliError::Config("no output path: pass --out or set output".into()))?;
    let skip_path = args
        .skip_log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.skipped.jsonl", path.display())));

    let pools = Pools::load(&cfg.pools, &config_dir(&args.config))?;
    let generated = generate(&cfg, &pools, &levels)?;
    let written = emit_jsonl(&generated.pairs, &path)?;
    write_skip_log(&generated.skipped, &skip_path)?;
    writeln!(
        out,
        "wrote {written} pairs to {} ({} skipped, see {})\n",
        path.display(),
        generated.skipped.len(),
        skip_path.display()
    )
    .map_err(out_err)?;
    write!(out, "{}", format_stats(&crate::pairgen::stats_of(&generated.pairs))).map_err(out_err)
}

fn eval<W: Write>(args: &EvalArgs, out: &mut W) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct EvalEcho<'a> {
        pred: &'a Path,
        gt: &'a Path,
        lexicon: &'a Path,
        #[serde(skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
    }
    echo_config(
        out,
        "eval",
        &EvalEcho {
            pred: &args.pred,
            gt: &args.gt,
            lexicon: &args.lexicon,
            n: args.n,
        },
    )?;
    let lexicon = ObjectLexicon::from_file(&args.lexicon)?;
    let gt = read_ground_truth(&args.gt)?;
    let preds = read_predictions(&args.pred)?;
    let report = evaluate(&preds, &gt, &lexicon, args.n)?;
    if let Some(path) = &args.report {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &report).map_err(|e| CliError::Input(e.to_string()))?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))?;
    }
    let cols = report.percent_columns();
    writeln!(out, "sequences {}", report.per_sequence.len()).map_err(out_err)?;
    let header: Vec<String> = cols.iter().map(|(name, _)| format!("{name:>8}")).collect();
    let values: Vec<String> = cols.iter().map(|(_, v)| format!("{v:>8.1}")).collect();
    writeln!(out, "{}\n{}", header.join(""), values.join("")).map_err(out_err)
}

fn losses<W: Write>(args: &LossesArgs, out: &mut W) -> Result<(), CliError> {
    let cfg = LossConfig {
        beta: args.beta,
        beta1: args.beta1,
        beta2: args.beta2,
        gamma: args.gamma,
    };
    cfg.validate()?;
    echo_config(out, "losses", &cfg)?;
    let input = File::open(&args.input).map_err(|e| io_err(&args.input, e))?;
    let output = File::create(&args.out).map_err(|e| io_err(&args.out, e))?;
    let n = run_batch(BufReader::new(input), BufWriter::new(output), &cfg).map_err(|e| match e {
        DpoError::Record { .. } => CliError::Input(format!("{}:{}", args.input.display(), e)),
        other => other.into(),
    })?;
    writeln!(out, "wrote {n} loss records to {}", args.out.display()).map_err(out_err)
}

fn train_toy<W: Write>(args: &TrainToyArgs, out: &mut W) -> Result<(), CliError> {
    let mut flags = Vec::new();
    if let Some(seed) = args.seed {
        flags.push(("seed", toml::Value::Integer(seed as i64)));
    }
    if let Some(s) = args.schedule {
        let mode = match s {
            ScheduleArg::Multi => "multi_stage",
            ScheduleArg::Mixed => "one_stage_mixed",
        };
        flags.push(("schedule", toml::Value::String(mode.into())));
    }
    let cfg: ToyRunConfig = load_config(&args.config, flags)?;
    cfg.synth.validate()?;
    cfg.train.loss.validate().map_err(ToyError::from)?;
    cfg.schedule().validate()?;
    echo_config(out, "train-toy", &cfg)?;

    let run = run_experiment(&cfg)?;
    if let Some(path) = &args.history {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = BufWriter::new(file);
        for h in &run.result.history {
            serde_json::to_writer(&mut w, h).map_err(|e| CliError::Input(e.to_string()))?;
            writeln!(w).map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
    }
    if let Some(path) = &args.dump {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        run.result.policy.dump(BufWriter::new(file)).map_err(|e| io_err(path, e))?;
    }
    let mode = match cfg.schedule {
        ScheduleMode::MultiStage => "multi-stage",
        ScheduleMode::OneStageMixed => "one-stage mixed",
    };
    writeln!(out, "schedule {mode}, {} training pairs", run.dataset.train.len()).map_err(out_err)?;
    for (stage, first, last) in run.stage_losses() {
        writeln!(out, "  {stage:<9} mean loss {first:.6} -> {last:.6}").map_err(out_err)?;
    }
    writeln!(
        out,
        "held-out preference accuracy {:.4} ({} pairs, {} ties)",
        run.heldout.accuracy, run.heldout.total, run.heldout.ties
    )
    .map_err(out_err)
}

fn gradcheck<W: Write>(args: &GradcheckArgs, out: &mut W) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct GradEcho {
        trials: usize,
        step: f64,
        seed: u64,
        tolerance: f64,
    }
    echo_config(
        out,
        "gradcheck",
        &GradEcho {
            trials: args.trials,
            step: args.step,
            seed: args.seed,
            tolerance: DEFAULT_TOLERANCE,
        },
    )?;
    let results = check_all(args.trials, args.step, args.seed)?;
    for r in &results {
        writeln!(out, "{:<20} max rel err {:.3e} (trial {})", r.kind.as_str(), r.max_rel_err, r.worst_trial)
            .map_err(out_err)?;
    }
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("at least one kind");
    writeln!(
        out,
        "worst: {} trial {} rel err {:.3e}",
        worst.kind, worst.worst_trial, worst.max_rel_err
    )
    .map_err(out_err)?;
    if worst.max_rel_err <= DEFAULT_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::GradCheck(worst.max_rel_err))
    }
}

fn stats<W: Write>(args: &StatsArgs, out: &mut W) -> Result<(), CliError> {
    let s = dataset_stats(&args.input)?;
    writeln!(out, "{}", args.input.display()).map_err(out_err)?;
    write!(out, "{}", format_stats(&s)).map_err(out_err)
}

/// Runs a parsed command inside a thread pool of the requested size.
pub fn run<W: Write + Send>(cli: &Cli, out: &mut W) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::GenPairs(a) => gen_pairs(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Losses(a) => losses(a, out),
        Command::TrainToy(a) => train_toy(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Stats(a) => stats(a, out),
    })
}

/// Parses `args`, runs, reports errors on `out` and returns the exit code.
pub fn main_with<I, T, W>(args: I, out: &mut W) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
    W: Write + Send,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(out, "{}", e.render());
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_overrides() {
        let mut t = toml::Table::new();
        set_dotted(&mut t, "context.n_range", parse_value("[2, 3]")).unwrap();
        set_dotted(&mut t, "master_seed", parse_value("7")).unwrap();
        set_dotted(&mut t, "output", parse_value("out/pairs.jsonl")).unwrap();
        let cfg: GenConfig = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(cfg.context.n_range, [2, 3]);
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.output, Some(PathBuf::from("out/pairs.jsonl")));
        let mut t = toml::Table::new();
        set_dotted(&mut t, "seed", parse_value("1")).unwrap();
        assert!(set_dotted(&mut t, "seed.x", parse_value("1")).is_err());
        assert!(set_dotted(&mut t, "", parse_value("1")).is_err());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let args = ConfigArgs {
            config: None,
            overrides: vec!["contxt.count=3".into()],
        };
        let err = load_config::<GenConfig>(&args, vec![]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn toy_config_round_trips_through_toml() {
        let cfg = ToyRunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: ToyRunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn error_codes() {
        let mut buf = Vec::new();
        assert_eq!(main_with(["prefalign", "nope"], &mut buf), 1);
        assert_eq!(main_with(["prefalign", "--help"], &mut buf), 0);
        let mut buf = Vec::new();
        let code = main_with(["prefalign", "stats", "--in", "/nonexistent/pairs.jsonl"], &mut buf);
        assert_eq!(code, 2);
        assert!(String::from_utf8(buf).unwrap().contains("/nonexistent/pairs.jsonl"));
    }
}
