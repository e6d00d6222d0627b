//! `picaso` command line: `generate`, `train`, `eval`, `export-attention`
//! and `gradcheck`.
//!
//! Settings come from an optional TOML file, then command-line overrides.
//! The resolved [`RunConfig`] is embedded in every artifact: as a
//! `run_config` object in JSON files and as `# `-prefixed lines at the top of
//! CSV files. Commands that read a checkpoint echo the checkpoint's model
//! section rather than the config file's.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::mog::{read_dataset, sample_mog, write_dataset, DatasetError, DatasetHeader, MogConfig};
use crate::seed::derive_seed;
use crate::set_ops::write_attention_csv;
use crate::tensor::TensorError;
use crate::trainer::checkpoint::{Checkpoint, CheckpointError};
use crate::trainer::gradcheck::{run_suite, DEFAULT_EPS};
use crate::trainer::{
    build_model, evaluate_shifts, parse_shifts, write_metrics_csv, EncoderKind, ModelConfig, PoolKind, Scorer,
    TrainConfig, TrainData, TrainError, Trainer, DEFAULT_SHIFTS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub num_sets: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self { num_sets: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub shifts: Vec<f64>,
    pub num_sets: usize,
    /// Score with each set's generative parameters instead of a model.
    pub oracle: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            shifts: DEFAULT_SHIFTS.to_vec(),
            num_sets: 1000,
            oracle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub probes: Option<usize>,
    pub eps: Option<f64>,
}

/// Everything a run depends on. Every field has a default; output paths are
/// only demanded by the commands that write them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Training log; defaults to `<out>.log.csv`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
    pub set_index: usize,
    pub data: MogConfig,
    pub generate: GenerateSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub gradcheck: GradcheckSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    /// The config as `# `-prefixed lines for CSV headers.
    pub fn comment_block(&self) -> String {
        let mut s = String::new();
        for line in self.to_toml().lines() {
            s.push_str("# ");
            s.push_str(line);
            s.push('\n');
        }
        s
    }

    fn require(&self, field: &str, value: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        value.clone().ok_or_else(|| {
            CliError::Usage(format!(
                "missing required field `{field}` (set --{field} or `{field}` in the config file)"
            ))
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Numerical(e.to_string()),
            TrainError::Tensor(t) => t.into(),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let ck = Checkpoint::read(BufReader::new(f)).map_err(|e| io_err(path, e))?;
    ck.to_trainer().map_err(|e| match e {
        CheckpointError::Io(_) | CheckpointError::Json(_) => io_err(path, e),
        _ => CliError::Usage(format!("{}: {e}", path.display())),
    })?;
    Ok(ck)
}

fn read_sets(path: &Path) -> Result<(DatasetHeader, crate::mog::SetBatch), CliError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    read_dataset(BufReader::new(f)).map_err(|e| match e {
        DatasetError::Tensor(t) => CliError::Usage(format!("{}: {t}", path.display())),
        _ => io_err(path, e),
    })
}

/// Writes through a buffer and reports failures against `path`.
fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

#[derive(Debug, Parser)]
#[command(
    name = "picaso",
    version,
    about = "Cascaded attentional set pooling: data, training and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic Gaussian-mixture dataset.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint plus a per-epoch log.
    Train(TrainArgs),
    /// Score a checkpoint (or the generative oracle) on shifted test sets.
    Eval(EvalArgs),
    /// Write the pooling attention weights for one input set.
    ExportAttention(ExportArgs),
    /// Finite-difference gradient checks over every registered block.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub pool: Option<PoolKind>,
    /// Cascade length for pb/gpb.
    #[arg(long)]
    pub steps: Option<usize>,
    /// rff, sa or ae<m> (e.g. ae16, ae32).
    #[arg(long)]
    pub encoder: Option<EncoderKind>,
    #[arg(long, action = clap::ArgAction::Set)]
    pub post_sa: Option<bool>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub num_sets: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Train on a dataset file instead of freshly generated sets.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub train_sets: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated, e.g. `0,8,-8`; an empty string scores nothing.
    #[arg(long, allow_hyphen_values = true)]
    pub shifts: Option<String>,
    #[arg(long)]
    pub num_sets: Option<usize>,
    /// Score with the generative parameters; no checkpoint needed.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset file holding the set to export.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub set_index: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Random probes per block.
    #[arg(long)]
    pub probes: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Adds this offset to one analytic gradient entry per probe; for testing
    /// that failures are reported.
    #[arg(long, hide = true)]
    pub inject_fault: Option<f64>,
}

/// File config, then flag overrides.
pub fn resolve(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    Ok(cfg)
}

fn apply_model(cfg: &mut ModelConfig, a: &ModelArgs) {
    if let Some(p) = a.pool {
        cfg.pool = p;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(e) = a.encoder {
        cfg.encoder = e;
    }
    if let Some(b) = a.post_sa {
        cfg.post_sa = b;
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<String, CliError> {
    let mut cfg = resolve(&args.common)?;
    if let Some(n) = args.num_sets {
        cfg.generate.num_sets = n;
    }
    let out = cfg.require("out", &cfg.out)?;
    let batch = sample_mog(&cfg.data, cfg.generate.num_sets, derive_seed(cfg.seed, "generate"))?;
    let mut header = DatasetHeader::new(cfg.data.clone(), cfg.seed, cfg.generate.num_sets);
    header.run_config = Some(cfg.to_json());
    write_file(&out, |w| {
        write_dataset(&header, &batch, &mut *w).map_err(|e| match e {
            DatasetError::Io(io) => io,
            other => std::io::Error::other(other.to_string()),
        })
    })?;
    Ok(format!(
        "generated {} sets (seed {}) -> {}",
        batch.len(),
        cfg.seed,
        out.display()
    ))
}

pub fn cmd_train(args: &TrainArgs, mut progress: impl FnMut(&str)) -> Result<String, CliError> {
    let mut cfg = resolve(&args.common)?;
    apply_model(&mut cfg.model, &args.model);
    if args.input.is_some() {
        cfg.input = args.input.clone();
    }
    if args.log.is_some() {
        cfg.log = args.log.clone();
    }
    let t = &mut cfg.train;
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.lr {
        t.lr = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.train_sets {
        t.train_sets = v;
    }
    let out = cfg.require("out", &cfg.out)?;
    let log_path = cfg.log.clone().unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    cfg.model.validate()?;
    cfg.train.validate()?;

    let data = match &cfg.input {
        Some(path) => {
            let (_, batch) = read_sets(path)?;
            TrainData::from_sets(batch.sets.into_iter().map(|s| s.points).collect(), cfg.train.batch_size)?
        }
        None => TrainData::generate(&cfg.data, &cfg.train, derive_seed(cfg.seed, "train-data"))?,
    };
    let model = build_model(&cfg.model, derive_seed(cfg.seed, "model-init"))?;
    let mut trainer = Trainer::new(model, cfg.train.lr, derive_seed(cfg.seed, "train-order"));

    let f = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log = BufWriter::new(f);
    writeln!(log, "{}epoch,avg_ll", cfg.comment_block()).map_err(|e| io_err(&log_path, e))?;
    let mut log_err = None;
    let result = trainer.train(&data, cfg.train.epochs, |r| {
        let line = format!("{},{:.6}", r.epoch, r.avg_ll);
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
        progress(&format!("epoch {} avg_ll {:.6} lr {}", r.epoch, r.avg_ll, r.lr));
    });
    if let Some(e) = log_err {
        return Err(io_err(&log_path, e));
    }
    result?;

    let ck = Checkpoint::from_trainer(&trainer, Some(cfg.to_json()));
    write_file(&out, |w| {
        ck.write(&mut *w).map_err(|e| std::io::Error::other(e.to_string()))
    })?;
    let last = trainer.history.last().map_or(f64::NAN, |r| r.avg_ll);
    Ok(format!(
        "trained {} epochs, final avg_ll {last:.6} -> {} (log {})",
        trainer.epoch,
        out.display(),
        log_path.display()
    ))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String, CliError> {
    let mut cfg = resolve(&args.common)?;
    if args.checkpoint.is_some() {
        cfg.checkpoint = args.checkpoint.clone();
    }
    if let Some(s) = &args.shifts {
        cfg.eval.shifts = parse_shifts(s).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(n) = args.num_sets {
        cfg.eval.num_sets = n;
    }
    cfg.eval.oracle |= args.oracle;
    let out = cfg.require("out", &cfg.out)?;
    let model = if cfg.eval.oracle {
        None
    } else {
        let path = cfg.require("checkpoint", &cfg.checkpoint)?;
        let model = read_checkpoint(&path)?
            .to_model()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.model = model.config.clone();
        Some(model)
    };
    let scorer = model.as_ref().map_or(Scorer::Oracle, Scorer::Model);
    let rows = if cfg.eval.shifts.is_empty() {
        vec![]
    } else {
        evaluate_shifts(scorer, &cfg.data, &cfg.eval.shifts, cfg.eval.num_sets, cfg.seed)?
    };
    write_file(&out, |w| {
        w.write_all(cfg.comment_block().as_bytes())?;
        write_metrics_csv(&rows, &mut *w)
    })?;
    Ok(format!("{} shifts scored -> {}", rows.len(), out.display()))
}

pub fn cmd_export_attention(args: &ExportArgs) -> Result<String, CliError> {
    let mut cfg = resolve(&args.common)?;
    if args.checkpoint.is_some() {
        cfg.checkpoint = args.checkpoint.clone();
    }
    if args.input.is_some() {
        cfg.input = args.input.clone();
    }
    if let Some(i) = args.set_index {
        cfg.set_index = i;
    }
    let out = cfg.require("out", &cfg.out)?;
    let ck_path = cfg.require("checkpoint", &cfg.checkpoint)?;
    let input = cfg.require("input", &cfg.input)?;
    let model = read_checkpoint(&ck_path)?
        .to_model()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.model = model.config.clone();
    if model.config.cascade_steps() == 0 {
        return Err(CliError::Usage(format!(
            "pool `{}` has no attention weights to export",
            model.config.pool
        )));
    }
    let (_, batch) = read_sets(&input)?;
    let set = batch.sets.get(cfg.set_index).ok_or_else(|| {
        CliError::Usage(format!(
            "set_index {} out of range ({} sets)",
            cfg.set_index,
            batch.len()
        ))
    })?;
    let pred = model.predict(&set.points)?;
    write_file(&out, |w| {
        w.write_all(cfg.comment_block().as_bytes())?;
        write_attention_csv(&pred.attention, &mut *w)
    })?;
    Ok(format!("{} weight groups -> {}", pred.attention.len(), out.display()))
}

/// Returns the report and whether every block passed.
pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(String, bool), CliError> {
    let mut cfg = resolve(&args.common)?;
    if args.probes.is_some() {
        cfg.gradcheck.probes = args.probes;
    }
    if args.eps.is_some() {
        cfg.gradcheck.eps = args.eps;
    }
    let probes = cfg.gradcheck.probes.unwrap_or(20);
    let eps = cfg.gradcheck.eps.unwrap_or(DEFAULT_EPS);
    if probes == 0 || !(eps > 0.0 && eps.is_finite()) {
        return Err(CliError::Usage(
            "gradcheck needs probes ≥ 1 and a positive finite eps".into(),
        ));
    }
    let results = run_suite(probes, cfg.seed, eps, args.inject_fault)?;
    let mut report = String::from("block,probes,step,tolerance,max_rel_error,status\n");
    let mut ok = true;
    for r in &results {
        ok &= r.passed();
        report.push_str(&format!(
            "{},{},{:e},{:e},{:.3e},{}\n",
            r.name,
            r.probes,
            r.step,
            r.tolerance,
            r.max_error,
            if r.passed() { "pass" } else { "FAIL" }
        ));
    }
    if let Some(out) = &cfg.out {
        write_file(out, |w| {
            w.write_all(cfg.comment_block().as_bytes())?;
            w.write_all(report.as_bytes())
        })?;
    }
    Ok((report, ok))
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code; messages go to `stdout`/`stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 {
                write!(stdout, "{e}")
            } else {
                write!(stderr, "{e}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a, |line| {
            let _ = writeln!(stderr, "{line}");
        }),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportAttention(a) => cmd_export_attention(a),
        Command::Gradcheck(a) => cmd_gradcheck(a).and_then(|(report, ok)| {
            let _ = write!(stdout, "{report}");
            if ok {
                Ok("all blocks within tolerance".to_string())
            } else {
                Err(CliError::Numerical(
                    "gradient check failed for at least one block".into(),
                ))
            }
        }),
    };
    match result {
        Ok(msg) => {
            let _ = writeln!(stdout, "{msg}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.model.encoder = EncoderKind::Ae(16);
        cfg.out = Some("x.json".into());
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\n[model]\npool = \"pma\"\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model.pool, PoolKind::Pma);
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let e = RunConfig::from_toml("[model]\nwidth = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn bad_flags_exit_one() {
        let (mut o, mut e) = (vec![], vec![]);
        assert_eq!(run(["picaso", "train", "--pool", "sum"], &mut o, &mut e), 1);
        assert_eq!(run(["picaso", "frobnicate"], &mut o, &mut e), 1);
        assert_eq!(run(["picaso", "--help"], &mut o, &mut e), 0);
    }

    #[test]
    fn missing_out_names_the_field() {
        let (mut o, mut e) = (vec![], vec![]);
        assert_eq!(run(["picaso", "generate"], &mut o, &mut e), 1);
        assert!(String::from_utf8(e).unwrap().contains("`out`"));
    }
}
