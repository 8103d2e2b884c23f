//! The `ffusion` command line.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | usage error (unknown flag or subcommand, bad argument) |
//! | 3 | malformed config or input file |
//! | 4 | missing input file |
//! | 5 | other I/O failure |
//! | 6 | checkpoint does not match the configured model |
//! | 7 | training diverged |
//! | 8 | domain error (invalid fault, fusion, dimensions, ...) |
//! | 9 | `asil-check --strict` found an invalid decomposition |
//!
//! Failures print one line to stderr:
//! `error code=<n> kind=<kind> msg="<message>"`.

mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{EvalConfig, RunConfig, CONFIG_TAG};

use crate::error::{Error, Result};
use crate::model::{Modality, ModalityHealth, ModelInput, Vocab};
use crate::safety::{
    check_decomposition, fail_operational_eval, render_report, render_summary, single_modality_probe,
    snr_enrichment_eval, verify_independence, ArchGraph, FaultKind, FaultSpec, Report, Scenario, Verdict,
};
use crate::scene::{build_dataset, load_dataset, write_dataset, CommandLabel, Dataset, Sample, Split};
use crate::tasks::{train, Rig, TrainMetrics};
use crate::tensor::{read_checkpoint, write_checkpoint};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_STRICT_INVALID: i32 = 9;

pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Debug, Parser)]
#[command(name = "ffusion", version, about = "Multimodal fusion model with a fail-operational safety harness")]
pub struct Cli {
    /// JSON run config; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic dataset into <out_dir>/data.
    Generate,
    /// Train on the train split; writes the checkpoint, vocab and metrics.json.
    Train,
    /// Run the fault campaign and checks; writes report.json and summary.txt.
    Eval {
        /// Defaults to <out_dir>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a faulted copy of one split to <out_dir>/injected with health verdicts.
    Inject {
        /// `modality:kind[:magnitude[:seed]]`, e.g. `camera:gaussian_noise:0.5`. Repeatable.
        #[arg(long = "fault", required = true)]
        faults: Vec<String>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Check the decomposition claims of an architecture file.
    AsilCheck {
        /// Defaults to the config's `eval.arch`.
        graph: Option<PathBuf>,
        /// Exit 9 if any claim is invalid.
        #[arg(long)]
        strict: bool,
    },
    /// Merge metrics.json and asil.json into report.json and re-render summary.txt.
    Report,
    /// Print the effective config after overrides.
    ShowConfig,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } => 3,
        Error::MissingFile(_) => 4,
        Error::Io { .. } => 5,
        Error::CheckpointMismatch(_) => 6,
        Error::Diverged(_) | Error::NonFiniteGradient(_) => 7,
        _ => 8,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Dimension(_) => "dimension",
        Error::Index(_) => "index",
        Error::Input(_) => "input",
        Error::NonFiniteGradient(_) => "non_finite_gradient",
        Error::Diverged(_) => "diverged",
        Error::Registration(_) => "registration",
        Error::Generation(_) => "generation",
        Error::Fusion(_) => "fusion",
        Error::InvalidFault(_) => "invalid_fault",
        Error::CheckpointMismatch(_) => "checkpoint_mismatch",
        Error::Parse { .. } => "parse",
        Error::MissingFile(_) => "missing_file",
        Error::Io { .. } => "io",
        Error::Config(_) => "config",
    }
}

/// The single stderr line for a failure.
pub fn error_line(code: i32, kind: &str, msg: &str) -> String {
    let msg: String = msg
        .chars()
        .flat_map(|c| match c {
            '"' => vec!['\\', '"'],
            '\\' => vec!['\\', '\\'],
            '\n' => vec!['\\', 'n'],
            c => vec![c],
        })
        .collect();
    format!("error code={code} kind={kind} msg=\"{msg}\"")
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line(EXIT_USAGE, "usage", first));
            return EXIT_USAGE;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_line(code, kind(&e), &e.to_string()));
            code
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match &cli.command {
        Command::Generate => cmd_generate(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval { checkpoint } => cmd_eval(&cfg, checkpoint.as_deref()),
        Command::Inject { faults, split } => cmd_inject(&cfg, faults, split),
        Command::AsilCheck { graph, strict } => cmd_asil_check(&cfg, graph.as_deref(), *strict),
        Command::Report => cmd_report(&cfg),
        Command::ShowConfig => {
            print!("{}", cfg.to_json());
            Ok(0)
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_json(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializes");
    s.push('\n');
    s
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

/// Wall-clock seconds per stage, kept apart from the deterministic outputs.
fn record_timing(cfg: &RunConfig, stage: &str, start: Instant) -> Result<()> {
    let path = cfg.out("timings.json");
    let mut t: BTreeMap<String, f64> = if path.exists() { read_json(&path)? } else { BTreeMap::new() };
    t.insert(format!("{stage}_seconds"), start.elapsed().as_secs_f64());
    write(&path, to_json(&t))
}

/// Loads the dataset and insists it was generated from this config.
fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = load_dataset(&cfg.data_dir())?;
    if ds.config != cfg.dataset {
        return Err(Error::Config(format!(
            "dataset in {} was generated from a different dataset config; rerun `generate`",
            cfg.data_dir().display()
        )));
    }
    Ok(ds)
}

fn cmd_generate(cfg: &RunConfig) -> Result<i32> {
    let ds = build_dataset(&cfg.dataset, Some(&cfg.data_dir()))?;
    println!(
        "generated {} train / {} val / {} test samples in {}",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        cfg.data_dir().display()
    );
    Ok(0)
}

fn cmd_train(cfg: &RunConfig) -> Result<i32> {
    let ds = dataset(cfg)?;
    let rig = Rig::from_dataset(&ds.config);
    let start = Instant::now();
    let out = train(&ds.train, &rig, &cfg.model, &cfg.train, |e, loss| {
        eprintln!("epoch {} loss {loss:.4}", e + 1);
    })?;
    write_checkpoint(&out.params, &cfg.out(CHECKPOINT_FILE))?;
    write(&cfg.out("vocab.txt"), Vocab::default().to_file_string())?;
    write(&cfg.out("metrics.json"), to_json(&out.metrics))?;
    record_timing(cfg, "train", start)?;
    println!("trained {} epochs; checkpoint {}", cfg.train.epochs, cfg.out(CHECKPOINT_FILE).display());
    Ok(0)
}

fn load_arch(path: &Path) -> Result<Vec<Verdict>> {
    check_decomposition(&ArchGraph::parse(&read(path)?)?)
}

fn check_vocab(cfg: &RunConfig) -> Result<()> {
    let path = cfg.out("vocab.txt");
    if path.exists() && Vocab::from_file_str(&read(&path)?)? != Vocab::default() {
        return Err(Error::CheckpointMismatch(format!("{} differs from the built-in vocabulary", path.display())));
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<i32> {
    let ckpt = checkpoint.map_or_else(|| cfg.out(CHECKPOINT_FILE), Path::to_path_buf);
    let params = read_checkpoint(&ckpt)?;
    check_vocab(cfg)?;
    let ds = dataset(cfg)?;
    let rig = Rig::from_dataset(&ds.config);
    let start = Instant::now();
    let mut degradation = fail_operational_eval(&params, &cfg.model, &rig, &ds.test, &cfg.scenarios)?;
    let metrics_path = cfg.out("metrics.json");
    if metrics_path.exists() {
        let tm: TrainMetrics = read_json(&metrics_path)?;
        degradation.nominal.loss_curve = tm.loss_curve;
    }
    let inputs = |samples: &[Sample]| -> Result<Vec<ModelInput>> {
        samples.iter().map(|s| rig.prepare(s, &cfg.model)).collect()
    };
    let probe: Vec<(ModelInput, Sample)> = ds
        .test
        .iter()
        .take(cfg.eval.independence_samples)
        .map(|s| Ok((rig.prepare(s, &cfg.model)?, s.clone())))
        .collect::<Result<_>>()?;
    if !probe.is_empty() {
        degradation.independence = Some(verify_independence(&params, &cfg.model, &probe)?);
    }
    let mut report = Report::new(serde_json::to_value(cfg).expect("config serializes"), degradation);
    if cfg.eval.probes && !ds.train.is_empty() && !ds.val.is_empty() {
        let (xtr, xval) = (inputs(&ds.train)?, inputs(&ds.val)?);
        let ytr: Vec<CommandLabel> = ds.train.iter().map(|s| s.label).collect();
        let yval: Vec<CommandLabel> = ds.val.iter().map(|s| s.label).collect();
        let seed = cfg.train.seed;
        for m in Modality::ALL {
            report.probes.push(single_modality_probe(&params, &cfg.model, (&xtr, &ytr), (&xval, &yval), m, false, seed)?);
        }
        report.probes.push(single_modality_probe(
            &params,
            &cfg.model,
            (&xtr, &ytr),
            (&xval, &yval),
            Modality::Text,
            true,
            seed,
        )?);
    }
    report.snr = snr_enrichment_eval(&params, &cfg.model, &rig, &ds.test, &cfg.eval.snr_sigmas)?;
    if let Some(arch) = &cfg.eval.arch {
        report.asil = load_arch(arch)?;
    }
    write(&cfg.out("report.json"), render_report(&report))?;
    write(&cfg.out("summary.txt"), render_summary(&report))?;
    record_timing(cfg, "eval", start)?;
    print!("{}", render_summary(&report));
    Ok(0)
}

/// `modality:kind[:magnitude[:seed]]`
pub fn parse_fault(s: &str) -> Result<FaultSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    if !(2..=4).contains(&parts.len()) {
        return Err(Error::Config(format!("fault `{s}` is not modality:kind[:magnitude[:seed]]")));
    }
    let modality = Modality::parse(parts[0]).map_err(|e| Error::Config(e.to_string()))?;
    let kind: FaultKind = serde_json::from_value(serde_json::Value::String(parts[1].into()))
        .map_err(|_| Error::Config(format!("unknown fault kind `{}`", parts[1])))?;
    let num = |i: usize, what: &str| -> Result<Option<f64>> {
        parts
            .get(i)
            .map(|p| p.parse::<f64>().map_err(|_| Error::Config(format!("fault {what} `{p}` is not a number"))))
            .transpose()
    };
    let mut spec = FaultSpec::new(modality, kind, num(2, "magnitude")?.unwrap_or(0.0));
    if let Some(p) = parts.get(3) {
        spec.seed = p.parse().map_err(|_| Error::Config(format!("fault seed `{p}` is not an integer")))?;
    }
    spec.validate()?;
    Ok(spec)
}

#[derive(Serialize)]
struct InjectedHealth {
    id: usize,
    health: Vec<ModalityHealth>,
}

#[derive(Serialize)]
struct InjectRecord {
    split: Split,
    faults: Vec<FaultSpec>,
    samples: Vec<InjectedHealth>,
}

fn cmd_inject(cfg: &RunConfig, faults: &[String], split: &str) -> Result<i32> {
    let faults: Vec<FaultSpec> = faults.iter().map(|f| parse_fault(f)).collect::<Result<_>>()?;
    let split: Split = serde_json::from_value(serde_json::Value::String(split.into()))
        .map_err(|_| Error::Config(format!("unknown split `{split}` (train, val or test)")))?;
    let ds = dataset(cfg)?;
    let rig = Rig::from_dataset(&ds.config);
    let scenario = Scenario {
        name: "inject".into(),
        faults: faults.clone(),
        mask: None,
    };
    let faulted: Vec<Sample> = ds.split(split).iter().map(|s| scenario.apply(s)).collect::<Result<_>>()?;
    let samples = faulted
        .iter()
        .map(|s| {
            let input = rig.prepare(s, &cfg.model)?;
            Ok(InjectedHealth {
                id: s.id,
                health: input.health.to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Dataset {
        config: ds.config.clone(),
        train: vec![],
        val: vec![],
        test: vec![],
    };
    match split {
        Split::Train => out.train = faulted,
        Split::Val => out.val = faulted,
        Split::Test => out.test = faulted,
    }
    let dir = cfg.out("injected");
    write_dataset(&out, &dir)?;
    let failed = samples
        .iter()
        .flat_map(|s| &s.health)
        .filter(|h| !h.usable())
        .count();
    let n = samples.len();
    write(&dir.join("health.json"), to_json(&InjectRecord { split, faults, samples }))?;
    println!("injected {n} samples into {}; {failed} modality readings flagged failed", dir.display());
    Ok(0)
}

fn cmd_asil_check(cfg: &RunConfig, graph: Option<&Path>, strict: bool) -> Result<i32> {
    let path = graph
        .map(Path::to_path_buf)
        .or_else(|| cfg.eval.arch.clone())
        .ok_or_else(|| Error::Config("no architecture file given and eval.arch is unset".into()))?;
    let verdicts = load_arch(&path)?;
    for v in &verdicts {
        match &v.reason {
            None => println!("VALID   {}", v.claim),
            Some(r) => println!("INVALID {}: {r}", v.claim),
        }
    }
    write(&cfg.out("asil.json"), to_json(&verdicts))?;
    let all_valid = verdicts.iter().all(|v| v.valid);
    Ok(if strict && !all_valid { EXIT_STRICT_INVALID } else { 0 })
}

fn cmd_report(cfg: &RunConfig) -> Result<i32> {
    let mut report: Report = read_json(&cfg.out("report.json"))?;
    let metrics = cfg.out("metrics.json");
    if metrics.exists() {
        let tm: TrainMetrics = read_json(&metrics)?;
        report.degradation.nominal.loss_curve = tm.loss_curve;
    }
    let asil = cfg.out("asil.json");
    if asil.exists() {
        report.asil = read_json(&asil)?;
    }
    write(&cfg.out("report.json"), render_report(&report))?;
    write(&cfg.out("summary.txt"), render_summary(&report))?;
    print!("{}", render_summary(&report));
    Ok(0)
}
