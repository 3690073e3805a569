//! Command-line driver: dataset generation, validation, decomposition,
//! batch evaluation and report rendering.
//!
//! Every subcommand is a plain function over parsed arguments so tests can run
//! them in-process and inject a model backend through [`Context`].

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context as _};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use vln_core::dataset::{load_dataset, write_atomic, write_dataset};
use vln_core::decompose::{decompose, DecomposeError, DecomposeOptions};
use vln_core::episode::{Episode, InstructionText};
use vln_core::kinematics::KinematicsConfig;
use vln_core::metrics::{
    aggregate, render_report, score_episode, EpisodeResult, Partition, ReportFormat,
};
use vln_core::model::{CannedBackend, ChatCompletionsClient, ModelClient, ENV_ENDPOINT, ENV_MODEL};
use vln_core::policy::{random_policy, scripted_oracle_policy, DecideOptions, Policy, VlmPolicy};
use vln_core::runner::{run_episode, EpisodeRun};
use vln_core::synth::{compute_stats, generate, GeneratorSpec};
use vln_core::template::PromptTemplate;

pub const STAMP_FILE: &str = "stamp.json";
pub const RUNS_DIR: &str = "runs";
pub const RESULTS_DIR: &str = "results";
pub const REPORT_STEM: &str = "report";

#[derive(Debug, Parser)]
#[command(name = "vln", version, about = "Evaluate instruction-following navigation policies on recorded episodes")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Kinematics config (JSON); unspecified fields keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Episodes evaluated concurrently.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
    /// Treat flagged decomposition checks as failures.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Skip episodes that already have a result file.
    #[arg(long, global = true)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Csv,
    Json,
}

impl OutputFormat {
    fn report_format(self) -> ReportFormat {
        match self {
            OutputFormat::Table => ReportFormat::TableText,
            OutputFormat::Csv => ReportFormat::Csv,
            OutputFormat::Json => ReportFormat::Structured,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen {
        /// Generator spec (JSON); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n_episodes: Option<usize>,
    },
    /// Print dataset statistics.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        /// Rows of the word frequency table in table output.
        #[arg(long, default_value_t = 20)]
        top_words: usize,
    },
    /// Check every manifest of a dataset.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Decompose one instruction into subtasks and run the checks.
    Decompose {
        instruction: String,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Run a policy over a dataset and write logs, results and a report.
    Eval(EvalArgs),
    /// Re-render the report of a finished evaluation.
    Report {
        /// Evaluation output directory (the one holding `results/`).
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    /// Decomposition prompt template.
    #[arg(long)]
    pub stl_template: Option<PathBuf>,
    /// Decision prompt template.
    #[arg(long)]
    pub decide_template: Option<PathBuf>,
    /// JSON array of model replies to play back instead of a hosted model.
    #[arg(long)]
    pub canned_replies: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PolicyKind {
    Vlm,
    VlmNoStl,
    Random,
    Oracle,
}

impl PolicyKind {
    pub fn needs_backend(self) -> bool {
        matches!(self, PolicyKind::Vlm | PolicyKind::VlmNoStl)
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "stamp")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, required_unless_present = "stamp")]
    pub policy: Option<PolicyKind>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Previous decisions shown in each decision prompt; 0 hides them.
    #[arg(long)]
    pub history_len: Option<usize>,
    /// Repeat a previous run from its stamp file.
    #[arg(long)]
    pub stamp: Option<PathBuf>,
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration: exit 2.
    Config(String),
    /// The command ran and found a problem: exit 1.
    Failed(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Failed(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failed(e)
    }
}

fn config_err(message: impl Into<String>) -> CliError {
    CliError::Config(message.into())
}

/// Process-level hooks; tests use them to swap in a backend and capture output.
#[derive(Default)]
pub struct Context {
    /// Used instead of the hosted client or a canned-replies file.
    pub backend: Option<Arc<dyn ModelClient>>,
}

pub fn run(cli: Cli, ctx: &Context, stdout: &mut dyn Write) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Gen { spec, n_episodes } => cmd_gen(g, spec.as_deref(), *n_episodes, stdout),
        Command::Stats { dataset, top_words } => cmd_stats(g, dataset, *top_words, stdout),
        Command::Validate { dataset } => cmd_validate(dataset, stdout),
        Command::Decompose { instruction, backend } => {
            cmd_decompose(g, instruction, backend, ctx, stdout)
        }
        Command::Eval(args) => cmd_eval(g, args, ctx, stdout).map(|_| ()),
        Command::Report { run } => cmd_report(g, run, stdout),
    }
}

fn out_dir(g: &GlobalArgs) -> Result<&Path, CliError> {
    g.out.as_deref().ok_or_else(|| config_err("--out is required"))
}

fn write_out(stdout: &mut dyn Write, bytes: &[u8]) -> Result<(), CliError> {
    stdout.write_all(bytes).context("writing to stdout")?;
    Ok(())
}

pub fn load_kinematics(path: Option<&Path>) -> Result<KinematicsConfig, CliError> {
    match path {
        None => Ok(KinematicsConfig::default()),
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            KinematicsConfig::from_json(&bytes)
                .map_err(|e| config_err(format!("{}: {e}", p.display())))
        }
    }
}

fn cmd_gen(
    g: &GlobalArgs,
    spec_path: Option<&Path>,
    n_episodes: Option<usize>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let out = out_dir(g)?;
    let mut spec = match spec_path {
        None => GeneratorSpec::default(),
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| config_err(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    if let Some(n) = n_episodes {
        spec.n_episodes = n;
    }
    let episodes = generate(&spec).map_err(|e| config_err(e.to_string()))?;
    write_dataset(&episodes, out)
        .with_context(|| format!("writing dataset to {}", out.display()))?;
    let line = format!("wrote {} episodes to {}\n", episodes.len(), out.display());
    write_out(stdout, line.as_bytes())
}

/// Loads every episode, failing on the first invalid manifest.
pub fn load_valid_dataset(dir: &Path) -> Result<Vec<Episode>, CliError> {
    let entries = load_dataset(dir).map_err(|e| config_err(format!("{}: {e}", dir.display())))?;
    entries
        .into_iter()
        .map(|(path, episode)| {
            episode.map_err(|e| CliError::Failed(anyhow!("invalid episode {}: {e}", path.display())))
        })
        .collect()
}

fn cmd_stats(
    g: &GlobalArgs,
    dataset: &Path,
    top_words: usize,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let episodes = load_valid_dataset(dataset)?;
    let counts: Vec<usize> = episodes
        .iter()
        .map(|e| e.reference_subtask_count().unwrap_or(1))
        .collect();
    let stats = compute_stats(&episodes, &counts).map_err(|e| CliError::Failed(e.into()))?;
    let body = match g.format.unwrap_or(OutputFormat::Table) {
        OutputFormat::Table => stats.render_text(top_words),
        OutputFormat::Csv => stats.render_csv(),
        OutputFormat::Json => serde_json::to_string_pretty(&stats).context("serializing stats")? + "\n",
    };
    write_out(stdout, body.as_bytes())
}

fn cmd_validate(dataset: &Path, stdout: &mut dyn Write) -> Result<(), CliError> {
    let entries =
        load_dataset(dataset).map_err(|e| config_err(format!("{}: {e}", dataset.display())))?;
    let mut report = String::new();
    if entries.is_empty() {
        report.push_str("warning: 0 episodes found\n");
    }
    let mut invalid = 0;
    for (path, outcome) in &entries {
        match outcome {
            Ok(_) => report.push_str(&format!("ok      {}\n", path.display())),
            Err(e) => {
                invalid += 1;
                report.push_str(&format!("invalid {}: {e}\n", path.display()));
            }
        }
    }
    report.push_str(&format!("{} episodes, {invalid} invalid\n", entries.len()));
    write_out(stdout, report.as_bytes())?;
    if invalid > 0 {
        return Err(CliError::Failed(anyhow!("{invalid} invalid episode(s)")));
    }
    Ok(())
}

fn load_template(path: Option<&Path>, default: fn() -> PromptTemplate) -> Result<PromptTemplate, CliError> {
    match path {
        None => Ok(default()),
        Some(p) => PromptTemplate::from_file(p).map_err(|e| config_err(e.to_string())),
    }
}

/// The injected backend, a canned-replies file, or the hosted client from the environment.
fn resolve_backend(args: &BackendArgs, ctx: &Context) -> Result<Arc<dyn ModelClient>, CliError> {
    if let Some(backend) = &ctx.backend {
        return Ok(backend.clone());
    }
    if let Some(path) = &args.canned_replies {
        let bytes = fs::read(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let script: Vec<String> = serde_json::from_slice(&bytes)
            .map_err(|e| config_err(format!("{}: expected a JSON array of strings: {e}", path.display())))?;
        if script.is_empty() {
            return Err(config_err(format!("{}: no replies", path.display())));
        }
        return Ok(Arc::new(CannedBackend::new(script)));
    }
    let client = ChatCompletionsClient::from_env().map_err(|e| config_err(e.to_string()))?;
    Ok(Arc::new(client))
}

#[derive(Serialize)]
struct DecomposeOutput<'a> {
    subtasks: &'a [vln_core::subtask::Subtask],
    reports: &'a [vln_core::decompose::ValidationReport],
}

fn cmd_decompose(
    g: &GlobalArgs,
    instruction: &str,
    args: &BackendArgs,
    ctx: &Context,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let instruction = InstructionText::new(instruction)
        .map_err(|_| config_err("instruction must not be empty"))?;
    let template = load_template(args.stl_template.as_deref(), PromptTemplate::default_decompose)?;
    template
        .require(&["instruction"])
        .map_err(|e| config_err(e.to_string()))?;
    let backend = resolve_backend(args, ctx)?;
    let options = DecomposeOptions {
        strict: g.strict,
        ..DecomposeOptions::default()
    };
    match decompose(&instruction, backend.as_ref(), &template, &options) {
        Ok(d) => {
            let out = DecomposeOutput { subtasks: d.list.subtasks(), reports: &d.reports };
            let body = serde_json::to_string_pretty(&out).context("serializing decomposition")?;
            write_out(stdout, (body + "\n").as_bytes())
        }
        Err(DecomposeError::Validation { report, list }) => {
            let reports = [report];
            let out = DecomposeOutput { subtasks: list.subtasks(), reports: &reports };
            let body = serde_json::to_string_pretty(&out).context("serializing decomposition")?;
            write_out(stdout, (body + "\n").as_bytes())?;
            Err(CliError::Failed(anyhow!(
                "strict mode: the {} check flagged the decomposition",
                reports[0].principle
            )))
        }
        Err(e) => Err(CliError::Failed(e.into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateStamp {
    pub path: Option<PathBuf>,
    pub sha256: String,
}

/// Everything needed to repeat an evaluation. Never holds credentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStamp {
    pub dataset: PathBuf,
    pub policy: PolicyKind,
    pub seed: u64,
    pub parallelism: usize,
    pub strict: bool,
    pub kinematics: KinematicsConfig,
    pub templates: BTreeMap<String, TemplateStamp>,
    pub history_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canned_replies: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendStamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendStamp {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Summary of a finished `eval`.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub results: Vec<EpisodeResult>,
    pub skipped: usize,
    pub out_dir: PathBuf,
}

struct Resolved {
    stamp: RunStamp,
    decompose_template: PromptTemplate,
    decide_template: PromptTemplate,
}

fn resolve_eval(g: &GlobalArgs, args: &EvalArgs) -> Result<Resolved, CliError> {
    let from_stamp = match &args.stamp {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            Some(
                serde_json::from_slice::<RunStamp>(&bytes)
                    .map_err(|e| config_err(format!("{}: {e}", path.display())))?,
            )
        }
        None => None,
    };
    let template_path = |name: &str, flag: &Option<PathBuf>| -> Option<PathBuf> {
        flag.clone().or_else(|| {
            from_stamp
                .as_ref()
                .and_then(|s| s.templates.get(name).and_then(|t| t.path.clone()))
        })
    };
    let decompose_path = template_path("decompose", &args.backend.stl_template);
    let decide_path = template_path("decide", &args.backend.decide_template);
    let decompose_template = load_template(decompose_path.as_deref(), PromptTemplate::default_decompose)?;
    let decide_template = load_template(decide_path.as_deref(), PromptTemplate::default_decide)?;
    decompose_template
        .require(&["instruction"])
        .map_err(|e| config_err(e.to_string()))?;
    decide_template
        .require(&["subtask_table", "focus_id", "action_menu"])
        .map_err(|e| config_err(e.to_string()))?;

    let mut templates = BTreeMap::new();
    templates.insert(
        "decompose".to_string(),
        TemplateStamp { path: decompose_path, sha256: sha256_hex(decompose_template.body.as_bytes()) },
    );
    templates.insert(
        "decide".to_string(),
        TemplateStamp { path: decide_path, sha256: sha256_hex(decide_template.body.as_bytes()) },
    );
    if let Some(previous) = &from_stamp {
        for (name, t) in &templates {
            if previous.templates.get(name).map(|p| &p.sha256) != Some(&t.sha256) {
                return Err(config_err(format!("{name} template differs from the stamped digest")));
            }
        }
    }

    let policy = args
        .policy
        .or(from_stamp.as_ref().map(|s| s.policy))
        .ok_or_else(|| config_err("--policy is required"))?;
    let dataset = args
        .dataset
        .clone()
        .or(from_stamp.as_ref().map(|s| s.dataset.clone()))
        .ok_or_else(|| config_err("--dataset is required"))?;
    let kinematics = match (&g.config, &from_stamp) {
        (None, Some(s)) => s.kinematics,
        (path, _) => load_kinematics(path.as_deref())?,
    };
    let default_parallelism = if policy.needs_backend() {
        1
    } else {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    };
    let parallelism = g
        .parallelism
        .or(from_stamp.as_ref().map(|s| s.parallelism))
        .unwrap_or(default_parallelism);
    if parallelism == 0 {
        return Err(config_err("--parallelism must be at least 1"));
    }
    let stamp = RunStamp {
        dataset,
        policy,
        seed: g.seed.or(from_stamp.as_ref().map(|s| s.seed)).unwrap_or(0),
        parallelism,
        strict: g.strict || from_stamp.as_ref().is_some_and(|s| s.strict),
        kinematics,
        templates,
        history_len: args
            .history_len
            .or(from_stamp.as_ref().map(|s| s.history_len))
            .unwrap_or(DecideOptions::default().history_len),
        canned_replies: args
            .backend
            .canned_replies
            .clone()
            .or(from_stamp.as_ref().and_then(|s| s.canned_replies.clone())),
        backend: None,
    };
    Ok(Resolved { stamp, decompose_template, decide_template })
}

fn build_policy(
    resolved: &mut Resolved,
    ctx: &Context,
) -> Result<Box<dyn Policy>, CliError> {
    let stamp = &mut resolved.stamp;
    Ok(match stamp.policy {
        PolicyKind::Oracle => Box::new(scripted_oracle_policy()),
        PolicyKind::Random => Box::new(random_policy(stamp.seed)),
        kind @ (PolicyKind::Vlm | PolicyKind::VlmNoStl) => {
            let args = BackendArgs {
                canned_replies: stamp.canned_replies.clone(),
                ..BackendArgs::default()
            };
            let backend = resolve_backend(&args, ctx)?;
            let hosted = ctx.backend.is_none() && stamp.canned_replies.is_none();
            let env = |k: &str| if hosted { std::env::var(k).ok() } else { None };
            stamp.backend = Some(BackendStamp {
                id: backend.backend_id().to_string(),
                endpoint: env(ENV_ENDPOINT),
                model: env(ENV_MODEL),
            });
            let decompose_options = DecomposeOptions { strict: stamp.strict, ..DecomposeOptions::default() };
            let decide_options = DecideOptions { history_len: stamp.history_len, ..DecideOptions::default() };
            Box::new(
                VlmPolicy::new(backend, kind == PolicyKind::Vlm)
                    .with_templates(resolved.decompose_template.clone(), resolved.decide_template.clone())
                    .with_options(decompose_options, decide_options),
            )
        }
    })
}

/// One JSON object per line: a line per decision, then a summary line.
pub fn run_log_lines(run: &EpisodeRun) -> String {
    let mut out = String::new();
    for record in &run.records {
        let line = serde_json::json!({
            "kind": "decision",
            "episode_id": run.episode_id,
            "record": record,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    let summary = serde_json::json!({
        "kind": "summary",
        "episode_id": run.episode_id,
        "policy": run.policy,
        "termination": run.termination,
        "early_stop": run.early_stop,
        "initial_subtasks": run.initial_subtasks,
        "final_subtasks": run.final_subtasks,
        "trajectory": run.trajectory,
        "violations": run.violations,
        "validation_reports": run.validation_reports,
        "error": run.error,
    });
    out.push_str(&summary.to_string());
    out.push('\n');
    out
}

fn result_path(out: &Path, episode_id: &str) -> PathBuf {
    out.join(RESULTS_DIR).join(format!("{episode_id}.json"))
}

fn read_result(path: &Path) -> Option<EpisodeResult> {
    serde_json::from_slice(&fs::read(path).ok()?).ok()
}

pub fn cmd_eval(
    g: &GlobalArgs,
    args: &EvalArgs,
    ctx: &Context,
    stdout: &mut dyn Write,
) -> Result<EvalOutcome, CliError> {
    let out = out_dir(g)?.to_path_buf();
    let mut resolved = resolve_eval(g, args)?;
    let policy = build_policy(&mut resolved, ctx)?;
    let stamp = resolved.stamp;
    let episodes = load_valid_dataset(&stamp.dataset)?;
    if episodes.is_empty() {
        return Err(CliError::Failed(anyhow!("dataset {} has no episodes", stamp.dataset.display())));
    }

    for sub in [RUNS_DIR, RESULTS_DIR] {
        fs::create_dir_all(out.join(sub))
            .with_context(|| format!("creating {}", out.join(sub).display()))?;
    }
    write_atomic(
        &out.join(STAMP_FILE),
        &serde_json::to_vec_pretty(&stamp).context("serializing stamp")?,
    )
    .with_context(|| format!("writing {}", out.join(STAMP_FILE).display()))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(stamp.parallelism)
        .build()
        .context("starting worker pool")?;
    let config = stamp.kinematics;
    let resume = g.resume;
    let policy = policy.as_ref();
    let outcomes: Vec<anyhow::Result<(EpisodeResult, bool)>> = pool.install(|| {
        episodes
            .par_iter()
            .map(|episode| {
                let result_file = result_path(&out, &episode.id);
                if resume {
                    if let Some(previous) = read_result(&result_file) {
                        return Ok((previous, true));
                    }
                }
                let run = run_episode(episode, policy, &config);
                let result = score_episode(&run, episode, &config)?;
                write_atomic(
                    &out.join(RUNS_DIR).join(format!("{}.jsonl", episode.id)),
                    run_log_lines(&run).as_bytes(),
                )?;
                write_atomic(&result_file, &serde_json::to_vec_pretty(&result)?)?;
                Ok((result, false))
            })
            .collect()
    });
    let mut results = Vec::with_capacity(outcomes.len());
    let mut skipped = 0;
    for outcome in outcomes {
        let (result, was_skipped) = outcome?;
        skipped += was_skipped as usize;
        results.push(result);
    }

    let format = g.format.unwrap_or(OutputFormat::Table);
    let table = write_reports(&results, &out, format.report_format())?;
    write_out(stdout, &table)?;
    Ok(EvalOutcome { results, skipped, out_dir: out })
}

/// Writes the report in every format under `out` and returns the requested rendering.
fn write_reports(results: &[EpisodeResult], out: &Path, format: ReportFormat) -> Result<Vec<u8>, CliError> {
    let report = aggregate(results, &Partition::ALL).map_err(|e| CliError::Failed(e.into()))?;
    for f in [ReportFormat::TableText, ReportFormat::Csv, ReportFormat::Structured] {
        let path = out.join(format!("{REPORT_STEM}.{}", f.extension()));
        write_atomic(&path, &render_report(&report, f))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(render_report(&report, format))
}

/// Results of a finished evaluation, sorted by episode id.
pub fn load_results(run_dir: &Path) -> Result<Vec<EpisodeResult>, CliError> {
    let dir = run_dir.join(RESULTS_DIR);
    let entries = fs::read_dir(&dir).map_err(|e| config_err(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_slice(&bytes)
                .with_context(|| format!("parsing {}", p.display()))
                .map_err(CliError::Failed)
        })
        .collect()
}

fn cmd_report(g: &GlobalArgs, run_dir: &Path, stdout: &mut dyn Write) -> Result<(), CliError> {
    let results = load_results(run_dir)?;
    if results.is_empty() {
        return Err(CliError::Failed(anyhow!("no results under {}", run_dir.display())));
    }
    let target = g.out.as_deref().unwrap_or(run_dir);
    fs::create_dir_all(target).with_context(|| format!("creating {}", target.display()))?;
    let body = write_reports(&results, target, g.format.unwrap_or(OutputFormat::Table).report_format())?;
    write_out(stdout, &body)
}
