//! Command-line pipeline stages: WAE pre-training, training, evaluation,
//! adaptation, embedding export, corruption generation and reporting.

pub mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mada_core::config::{Preset, RunConfig, KEYS};
use mada_core::eval::{self, ErrorTable, ResultRecord};
use mada_core::ingest::{self, CorruptionKind, CorruptionSpec, DataOrigin, ShiftKind, Split};
use mada_core::metaloop::{self, IterationRecord, MetaRoundReport, MetricsLog, Observer, Streams, TrainState, WaeTrainReport};
use mada_core::nets::checkpoint::{self, Archive};
use mada_core::nets::{TaskModel, TaskParams, Wae};
use mada_core::{Domain, Error as CoreError, ErrorKind, ImageShape, ShapeSignature};

pub const VERSION: &str = env!("MADA_VERSION");

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Table of override keys appended to every verb's help.
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|k| k.0.len()).max().unwrap_or(0);
    let mut s = String::from("Override keys (--set key=value):\n");
    for (k, sym, desc) in KEYS {
        let sym = if sym.is_empty() { String::new() } else { format!("[{sym}] ") };
        s.push_str(&format!("  {k:<width$}  {sym}{desc}\n"));
    }
    s
}

#[derive(Parser, Debug)]
#[command(name = "mada", version = VERSION, about = "Meta-learning adversarial domain augmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base preset when no configuration file is given.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pre-train the WAE on the source domain.
    #[command(after_help = keys_help())]
    PretrainWae {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the task model; k_domains=0 gives the ERM baseline.
    #[command(after_help = keys_help())]
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory of a previous pretrain-wae run.
        #[arg(long)]
        wae: Option<PathBuf>,
    },
    /// Accuracy per domain, plus mCE and RmCE against a baseline.
    #[command(after_help = keys_help())]
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Domain directories written by `corrupt`.
        #[arg(long, num_args = 1..)]
        domains: Vec<PathBuf>,
        /// Also evaluate the built-in shift suite of the held-out split.
        #[arg(long)]
        shifts: bool,
        /// ERM checkpoint used as the mCE / RmCE reference.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Run name in the results; defaults to the checkpoint's directory name.
        #[arg(long)]
        run: Option<String>,
    },
    /// Few-shot fine-tuning on a labelled target domain.
    #[command(after_help = keys_help())]
    Adapt {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target domain directory.
        #[arg(long, conflicts_with = "shift")]
        target: Option<PathBuf>,
        /// Built-in shift of the held-out split used as target.
        #[arg(long)]
        shift: Option<String>,
        #[arg(long)]
        run: Option<String>,
    },
    /// Write task-network embeddings of domains as CSV.
    #[command(after_help = keys_help())]
    ExportEmbeddings {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, num_args = 1..)]
        domains: Vec<PathBuf>,
        #[arg(long)]
        shifts: bool,
    },
    /// Write corrupted and shifted copies of the held-out split.
    #[command(after_help = keys_help())]
    Corrupt {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corruption kinds, comma separated, or `all`.
        #[arg(long, value_delimiter = ',', default_value = "all")]
        kinds: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        severities: Vec<u8>,
        /// Synthetic shifts, comma separated.
        #[arg(long, value_delimiter = ',')]
        shifts: Vec<String>,
    },
    /// Tables and plots from results and metrics files.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        results: Vec<PathBuf>,
        /// Training metrics logs for loss curves.
        #[arg(long, num_args = 1..)]
        metrics: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

impl Command {
    pub fn verb(&self) -> &'static str {
        match self {
            Command::PretrainWae { .. } => "pretrain-wae",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Adapt { .. } => "adapt",
            Command::ExportEmbeddings { .. } => "export-embeddings",
            Command::Corrupt { .. } => "corrupt",
            Command::Report { .. } => "report",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Command::PretrainWae { cfg }
            | Command::Train { cfg, .. }
            | Command::Evaluate { cfg, .. }
            | Command::Adapt { cfg, .. }
            | Command::ExportEmbeddings { cfg, .. }
            | Command::Corrupt { cfg, .. } => &cfg.out,
            Command::Report { out, .. } => out,
        }
    }

    fn config_args(&self) -> Option<&ConfigArgs> {
        match self {
            Command::PretrainWae { cfg }
            | Command::Train { cfg, .. }
            | Command::Evaluate { cfg, .. }
            | Command::Adapt { cfg, .. }
            | Command::ExportEmbeddings { cfg, .. }
            | Command::Corrupt { cfg, .. } => Some(cfg),
            Command::Report { .. } => None,
        }
    }
}

/// Record written to `manifest.json` by every command.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub started: String,
    pub finished: String,
    pub status: String,
    pub outputs: Vec<String>,
}

/// Exit code for an error chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e.kind() {
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numerical => EXIT_NUMERICAL,
            };
        }
        if cause.downcast_ref::<clap::Error>().is_some() {
            return EXIT_CONFIG;
        }
    }
    EXIT_DATA
}

/// `error[kind]: message` on one line.
pub fn error_line(err: &anyhow::Error) -> String {
    let kind = match exit_code(err) {
        EXIT_CONFIG => "config",
        EXIT_NUMERICAL => "numerical",
        _ => "data",
    };
    let msg: Vec<String> = err.chain().map(|c| c.to_string()).collect();
    format!("error[{kind}]: {}", msg.join(": ").replace('\n', " "))
}

pub fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CoreError::config("config", format!("cannot read {}: {e}", path.display())))?;
            let cfg = RunConfig::parse_text(&text)?;
            if let Some(p) = &args.preset {
                if p.parse::<Preset>()? != cfg.preset {
                    return Err(CoreError::config("preset", "conflicts with the configuration file").into());
                }
            }
            cfg
        }
        (None, Some(p)) => RunConfig::preset(p.parse()?),
        (None, None) => RunConfig::default(),
    };
    cfg.apply_overrides(&args.set)?;
    // class count and image size are checked again once data is loaded
    let channels = if cfg.data.rgb { 3 } else { 1 };
    let nominal = ShapeSignature { image: ImageShape::new(cfg.data.image_size, cfg.data.image_size, channels), n_classes: 2 };
    cfg.validate(&nominal)?;
    Ok(cfg)
}

/// Parse argv and run; returns the process exit code.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            eprintln!("error[config]: {}", first.trim_start_matches("error: "));
            return EXIT_CONFIG;
        }
    };
    match run(&cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            exit_code(&e)
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Run one command and write its manifest, also on failure.
pub fn run(cmd: &Command, argv: &[String]) -> Result<()> {
    let started = now();
    let out = cmd.out().to_path_buf();
    let cfg = cmd.config_args().map(resolve_config).transpose()?;
    fs::create_dir_all(&out).map_err(|e| CoreError::io(format!("creating {}", out.display()), e))?;
    if let Some(c) = &cfg {
        write_text(&out.join("config.cfg"), &c.to_string())?;
    }
    let mut outputs = Vec::new();
    let result = dispatch(cmd, cfg.as_ref(), &out, &mut outputs);
    let manifest = RunManifest {
        command: cmd.verb().into(),
        argv: argv.to_vec(),
        version: VERSION.into(),
        seed: cfg.as_ref().map(|c| c.hyper.seed),
        config: cfg.as_ref().map(RunConfig::to_map).unwrap_or_default(),
        started,
        finished: now(),
        status: match &result {
            Ok(()) => "ok".into(),
            Err(e) => error_line(e),
        },
        outputs,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    result
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CoreError::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing")?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text).map_err(|e| CoreError::Data(format!("{}: {e}", path.display())))?)
}

fn dispatch(cmd: &Command, cfg: Option<&RunConfig>, out: &Path, outputs: &mut Vec<String>) -> Result<()> {
    match cmd {
        Command::PretrainWae { .. } => pretrain_wae(cfg.expect("config"), out, outputs),
        Command::Train { wae, .. } => train(cfg.expect("config"), wae.as_deref(), out, outputs),
        Command::Evaluate { checkpoint, domains, shifts, baseline, run, .. } => {
            evaluate(cfg.expect("config"), checkpoint, domains, *shifts, baseline.as_deref(), run.as_deref(), out, outputs)
        }
        Command::Adapt { checkpoint, target, shift, run, .. } => {
            adapt(cfg.expect("config"), checkpoint, target.as_deref(), shift.as_deref(), run.as_deref(), out, outputs)
        }
        Command::ExportEmbeddings { checkpoint, domains, shifts, .. } => {
            export(cfg.expect("config"), checkpoint, domains, *shifts, out, outputs)
        }
        Command::Corrupt { kinds, severities, shifts, .. } => corrupt(cfg.expect("config"), kinds, severities, shifts, out, outputs),
        Command::Report { results, metrics, out } => report_cmd(results, metrics, out, outputs),
    }
}

fn name(path: &Path, outputs: &mut Vec<String>) -> PathBuf {
    outputs.push(path.display().to_string());
    path.to_path_buf()
}

fn load_source(cfg: &RunConfig) -> Result<(Domain, Domain)> {
    let (src, heldout) = cfg.load_data()?;
    cfg.validate(&src.signature)?;
    Ok((src, heldout))
}

fn pretrain_wae(cfg: &RunConfig, out: &Path, outputs: &mut Vec<String>) -> Result<()> {
    let (src, _) = load_source(cfg)?;
    let wae = Wae::new(cfg.wae_arch(src.dim()))?;
    let mut streams = Streams::new(cfg.hyper.seed);
    let init = wae.init_params(&mut streams.wae);
    let (psi, report) = metaloop::pretrain_wae(&wae, &init, &src, &cfg.hyper, &cfg.schedule.wae, &mut streams.wae)?;
    checkpoint::wae_archive(&wae, &psi, 0, cfg.to_map()).save(&name(&out.join("wae.ckpt"), outputs))?;
    write_json(&name(&out.join("wae_report.json"), outputs), &report)?;
    println!("wae held-out reconstruction error {:.6} -> {:.6}", report.heldout_before, report.heldout_after);
    Ok(())
}

/// Writes the metrics log, round reports, augmented domains and a
/// checkpoint at every round boundary.
struct TrainObserver<'a> {
    log: MetricsLog,
    rounds: MetricsLog,
    task: &'a TaskModel,
    out: &'a Path,
    config: BTreeMap<String, String>,
}

impl Observer for TrainObserver<'_> {
    fn iteration(&mut self, record: &IterationRecord) -> mada_core::Result<()> {
        self.log.write(record)
    }

    fn round(&mut self, state: &TrainState, report: &MetaRoundReport) -> mada_core::Result<()> {
        self.rounds.write(report)?;
        self.rounds.flush()?;
        self.log.flush()?;
        let dom = &state.augmented[report.round - 1];
        ingest::save_domain(dom, &self.out.join("augmented").join(&dom.id), Split::Train, DataOrigin::Synthesized)?;
        checkpoint::task_archive(self.task, &state.theta, state.iteration, self.config.clone()).save(&self.out.join("model.ckpt"))
    }
}

fn train(cfg: &RunConfig, wae_dir: Option<&Path>, out: &Path, outputs: &mut Vec<String>) -> Result<()> {
    let (src, heldout) = load_source(cfg)?;
    let task = TaskModel::new(cfg.arch.clone(), src.signature)?;
    let (wae, psi) = match wae_dir {
        Some(dir) => {
            let (wae, psi) = checkpoint::wae_from_archive(&Archive::load(&dir.join("wae.ckpt"))?)?;
            let report: WaeTrainReport = read_json(&dir.join("wae_report.json"))?;
            if wae.arch.input_dim != src.dim() {
                bail!(CoreError::Shape(format!("WAE expects {} inputs, source has {}", wae.arch.input_dim, src.dim())));
            }
            (wae, Some((psi, report)))
        }
        None => (Wae::new(cfg.wae_arch(src.dim()))?, None),
    };
    let metrics = out.join("metrics.jsonl");
    let rounds = out.join("rounds.jsonl");
    for p in [&metrics, &rounds] {
        if p.exists() {
            fs::remove_file(p).map_err(|e| CoreError::io(format!("removing {}", p.display()), e))?;
        }
    }
    let mut obs = TrainObserver {
        log: MetricsLog::create(&name(&metrics, outputs))?,
        rounds: MetricsLog::create(&name(&rounds, outputs))?,
        task: &task,
        out,
        config: cfg.to_map(),
    };
    let state = metaloop::run_mada(&task, &wae, psi, &src, &cfg.hyper, &cfg.schedule, &mut obs)?;
    obs.log.flush()?;
    checkpoint::task_archive(&task, &state.theta, state.iteration, cfg.to_map()).save(&name(&out.join("model.ckpt"), outputs))?;
    if let Some(psi) = &state.psi {
        checkpoint::wae_archive(&wae, psi, state.iteration, cfg.to_map()).save(&name(&out.join("wae.ckpt"), outputs))?;
    }
    if let Some(r) = &state.wae_report {
        write_json(&name(&out.join("wae_report.json"), outputs), r)?;
    }
    let acc = eval::accuracy(&task, &state.theta.values, &heldout)?;
    let last = state.history.last().map_or(f64::NAN, |r| r.source_loss);
    println!("trained {} iterations, {} rounds; final source loss {last:.4}; held-out accuracy {:.2}%", state.iteration, state.rounds.len(), acc * 100.0);
    Ok(())
}

fn load_task(path: &Path) -> Result<(TaskModel, TaskParams, Archive)> {
    let archive = Archive::load(path)?;
    let (task, theta) = checkpoint::task_from_archive(&archive)?;
    Ok((task, theta, archive))
}

fn run_name(explicit: Option<&str>, checkpoint: &Path) -> String {
    explicit.map(str::to_string).unwrap_or_else(|| {
        checkpoint
            .parent()
            .and_then(|p| p.file_name())
            .map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned())
    })
}

fn checkpoint_seed(archive: &Archive) -> u64 {
    archive.manifest.config.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0)
}

/// Domains from directories plus, optionally, the built-in shift suite.
/// Plain files are skipped so that a glob over a `corrupt` output
/// directory can be passed as is.
fn gather_domains(cfg: &RunConfig, dirs: &[PathBuf], shifts: bool) -> Result<Vec<Domain>> {
    let mut out = Vec::new();
    for d in dirs.iter().filter(|d| !d.is_file()) {
        out.push(ingest::load_domain(d)?.0);
    }
    if shifts {
        let (_, heldout) = load_source(cfg)?;
        out.extend(ingest::shift_suite(&heldout, cfg.eval.shift_seed)?);
    }
    if out.is_empty() {
        bail!(CoreError::config("domains", "give --domains or --shifts"));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    cfg: &RunConfig,
    ckpt: &Path,
    dirs: &[PathBuf],
    shifts: bool,
    baseline: Option<&Path>,
    run: Option<&str>,
    out: &Path,
    outputs: &mut Vec<String>,
) -> Result<()> {
    let (task, theta, archive) = load_task(ckpt)?;
    let domains = gather_domains(cfg, dirs, shifts)?;
    let run = run_name(run, ckpt);
    let seed = checkpoint_seed(&archive);
    let mut records = Vec::new();
    let mut acc = BTreeMap::new();
    for d in &domains {
        let a = eval::accuracy(&task, &theta.values, d)?;
        acc.insert(d.id.clone(), a);
        records.push(ResultRecord { run: run.clone(), seed, domain: d.id.clone(), metric: "accuracy".into(), value: a });
    }
    if let Some(base) = baseline {
        let (btask, btheta, _) = load_task(base)?;
        let (_, clean) = load_source(cfg)?;
        let mut bacc = BTreeMap::new();
        for d in &domains {
            bacc.insert(d.id.clone(), eval::accuracy(&btask, &btheta.values, d)?);
        }
        let f = ErrorTable::from_accuracies(&acc, eval::accuracy(&task, &theta.values, &clean)?)?;
        let erm = ErrorTable::from_accuracies(&bacc, eval::accuracy(&btask, &btheta.values, &clean)?)?;
        for (metric, v) in [("mce", eval::mce(&f, &erm)), ("rmce", eval::rmce(&f, &erm))] {
            match v {
                Ok(value) => records.push(ResultRecord { run: run.clone(), seed, domain: "all".into(), metric: metric.into(), value }),
                Err(e @ CoreError::UndefinedRatio { .. }) => eprintln!("warning: {metric} not reported: {e}"),
                Err(e) => return Err(e.into()),
            }
        }
    }
    eval::append_results(&name(&out.join("results.jsonl"), outputs), &records)?;
    print!("{}", report::accuracy_table(&records));
    if let Some(t) = report::summary_table(&records) {
        print!("\n{t}");
    }
    Ok(())
}

fn adapt(
    cfg: &RunConfig,
    ckpt: &Path,
    target: Option<&Path>,
    shift: Option<&str>,
    run: Option<&str>,
    out: &Path,
    outputs: &mut Vec<String>,
) -> Result<()> {
    let (task, theta, archive) = load_task(ckpt)?;
    let target = match (target, shift) {
        (Some(dir), _) => ingest::load_domain(dir)?.0,
        (None, Some(kind)) => {
            let (_, heldout) = load_source(cfg)?;
            ingest::synth_shift(&heldout, kind.parse::<ShiftKind>()?, cfg.eval.shift_seed)?
        }
        (None, None) => bail!(CoreError::config("target", "give --target or --shift")),
    };
    let (shots, rest) = eval::split_shots(&target, cfg.eval.shots, cfg.hyper.seed)?;
    let settings = eval::FewShotSettings { seed: cfg.hyper.seed, ..cfg.eval.fewshot.clone() };
    let adapted = eval::fewshot_adapt(&task, &theta, &shots, &settings)?;
    let before = eval::accuracy(&task, &theta.values, &rest)?;
    let after = eval::accuracy(&task, &adapted.values, &rest)?;
    let run = run_name(run, ckpt);
    let seed = checkpoint_seed(&archive);
    let records = vec![
        ResultRecord { run: format!("{run}-zero-shot"), seed, domain: target.id.clone(), metric: "accuracy".into(), value: before },
        ResultRecord { run: format!("{run}-{}-shot", cfg.eval.shots), seed, domain: target.id.clone(), metric: "accuracy".into(), value: after },
    ];
    let mut config = archive.manifest.config.clone();
    config.extend(cfg.to_map().into_iter().filter(|(k, _)| k.starts_with("fewshot") || k == "shots"));
    checkpoint::task_archive(&task, &adapted, archive.manifest.iteration, config).save(&name(&out.join("adapted.ckpt"), outputs))?;
    eval::append_results(&name(&out.join("results.jsonl"), outputs), &records)?;
    print!("{}", report::accuracy_table(&records));
    Ok(())
}

fn export(cfg: &RunConfig, ckpt: &Path, dirs: &[PathBuf], shifts: bool, out: &Path, outputs: &mut Vec<String>) -> Result<()> {
    let (task, theta, _) = load_task(ckpt)?;
    let domains = gather_domains(cfg, dirs, shifts)?;
    let rows = eval::export_embeddings(&task, &theta.values, &domains, &name(&out.join("embeddings.csv"), outputs))?;
    println!("wrote {rows} embeddings of dimension {}", task.embedding_dim());
    Ok(())
}

fn corrupt(cfg: &RunConfig, kinds: &[String], severities: &[u8], shifts: &[String], out: &Path, outputs: &mut Vec<String>) -> Result<()> {
    let kinds: Vec<CorruptionKind> = if kinds.iter().any(|k| k == "all") {
        CorruptionKind::ALL.to_vec()
    } else {
        kinds.iter().map(|k| k.parse()).collect::<mada_core::Result<_>>()?
    };
    let shifts: Vec<ShiftKind> = shifts.iter().map(|k| k.parse()).collect::<mada_core::Result<_>>()?;
    let (_, heldout) = load_source(cfg)?;
    let seed = cfg.hyper.seed;
    for &kind in &kinds {
        for &sev in severities {
            let d = ingest::corrupt(&heldout, CorruptionSpec::new(kind, sev)?, seed)?;
            ingest::save_domain(&d, &name(&out.join(&d.id), outputs), Split::Test, DataOrigin::Synthesized)?;
        }
    }
    for &kind in &shifts {
        let d = ingest::synth_shift(&heldout, kind, cfg.eval.shift_seed)?;
        ingest::save_domain(&d, &name(&out.join(&d.id), outputs), Split::Test, DataOrigin::Synthesized)?;
    }
    println!("wrote {} domains to {}", outputs.len(), out.display());
    Ok(())
}

fn report_cmd(results: &[PathBuf], metrics: &[PathBuf], out: &Path, outputs: &mut Vec<String>) -> Result<()> {
    let mut records = Vec::new();
    for p in results {
        records.extend(eval::read_results(p)?);
    }
    if records.is_empty() {
        bail!(CoreError::Empty("results"));
    }
    let mut text = report::accuracy_table(&records);
    if let Some(t) = report::summary_table(&records) {
        text.push('\n');
        text.push_str(&t);
    }
    write_text(&name(&out.join("tables.txt"), outputs), &text)?;
    print!("{text}");
    let sev = report::severity_series(&records);
    if !sev.is_empty() {
        let svg = report::line_plot_svg("Accuracy vs corruption severity", "severity", "accuracy (%)", &sev, Some(&[1.0, 2.0, 3.0, 4.0, 5.0]));
        write_text(&name(&out.join("severity.svg"), outputs), &svg)?;
    }
    let mut curves = Vec::new();
    for p in metrics {
        let text = fs::read_to_string(p).map_err(|e| CoreError::io(format!("reading {}", p.display()), e))?;
        let history: Vec<IterationRecord> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| CoreError::Data(format!("{}:{}: {e}", p.display(), n + 1))))
            .collect::<std::result::Result<_, _>>()?;
        let label = p.parent().and_then(|d| d.file_name()).map_or("run".into(), |n| n.to_string_lossy().into_owned());
        curves.extend(report::loss_series(&label, &history, 500));
    }
    if !curves.is_empty() {
        let svg = report::line_plot_svg("Training losses", "iteration", "loss", &curves, None);
        write_text(&name(&out.join("losses.svg"), outputs), &svg)?;
    }
    Ok(())
}
