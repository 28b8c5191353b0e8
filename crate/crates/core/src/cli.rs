//! Command-line front end. Exit codes: 0 success, 1 domain failure,
//! 2 usage or schema error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::bundled;
use crate::dataset::{
    compute_stats, diversity_by_name, histogram_csv, load_manifest, manifest_to_string, save_manifest, split_dataset,
    DatasetError, DatasetRecord,
};
use crate::environment::{diff, Environment};
use crate::executor::{ground_and_execute, SearchLimits};
use crate::generator::{generate_dataset, GrammarConfig};
use crate::metrics::{pairwise_similarity, score, similarity_csv, RewardConfig, ScoreReport};
use crate::program::{parse_program, parse_program_with, validate, ParseMode, Program, Severity};
use crate::scene::{prepare_scene, PlacementKB};
use crate::service::{self, Scorer};

#[derive(Debug, Parser)]
#[command(
    name = "homeprog",
    version,
    about = "Household activity programs: parse, execute, score, generate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a program, environment, knowledge base, grammar, or manifest.
    Validate { file: PathBuf },
    /// Ground and execute a program in an environment.
    Exec {
        /// Environment file or bundled home name.
        #[arg(long)]
        env: String,
        #[arg(long)]
        program: PathBuf,
        /// Insert missing objects before executing.
        #[arg(long)]
        prep: bool,
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the step trace as JSON Lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the final environment as JSON.
        #[arg(long)]
        final_env: Option<PathBuf>,
    },
    /// Score predicted programs against ground truth.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        prep: bool,
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic description/program manifest.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        grammar: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus statistics for a manifest.
    Stats {
        manifest: PathBuf,
        /// Write action/object histograms as CSV.
        #[arg(long)]
        hist_csv: Option<PathBuf>,
        /// Write the pairwise similarity matrix as CSV.
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Assign TRAIN/VAL/TEST splits.
    Split {
        manifest: PathBuf,
        #[arg(long, value_parser = parse_ratios)]
        ratios: (f64, f64, f64),
        #[arg(long)]
        seed: u64,
        /// Output manifest; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve score requests as JSON Lines.
    Serve {
        #[arg(long, value_enum, default_value_t = Mode::Stdio)]
        mode: Mode,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long)]
        envs: Option<PathBuf>,
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Stdio,
    Tcp,
}

fn parse_ratios(text: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(format!("expected three comma-separated ratios, got {}", parts.len())),
    }
}

#[derive(Debug, Error)]
enum CliError {
    /// Bad input: usage, unreadable files, schema violations.
    #[error("{0}")]
    Input(String),
    /// Well-formed input whose answer is a failure.
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::DegenerateInput => CliError::Domain(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Input(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, content).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_program(path: &Path) -> Result<Program, CliError> {
    let mut program = parse_program(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    program.source_id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    Ok(program)
}

/// A path to an environment file, or the name of a bundled home.
fn resolve_env(spec: &str) -> Result<Environment, CliError> {
    let path = Path::new(spec);
    if path.is_file() {
        return Environment::from_json_str(&read(path)?).map_err(|e| CliError::Input(format!("{spec}: {e}")));
    }
    let env_dir = std::env::var_os(service::ENVS_VAR).map(PathBuf::from);
    if let Some(dir) = env_dir {
        let candidate = dir.join(format!("{spec}.env.json"));
        if candidate.is_file() {
            return resolve_env(&candidate.to_string_lossy());
        }
    }
    match bundled::demo_home(spec) {
        Some(env) => env.map_err(input_err),
        None => Err(CliError::Input(format!(
            "no environment file or bundled home named `{spec}`"
        ))),
    }
}

fn load_kb(path: Option<&Path>) -> Result<PlacementKB, CliError> {
    match path {
        Some(p) => PlacementKB::from_json_str(&read(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        None => Ok(PlacementKB::bundled()),
    }
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { file } => validate_file(&file, out),
        Command::Exec {
            env,
            program,
            prep,
            kb,
            seed,
            trace,
            final_env,
        } => exec(
            &env,
            &program,
            prep,
            kb.as_deref(),
            seed,
            trace.as_deref(),
            final_env.as_deref(),
            out,
        ),
        Command::Score {
            pred,
            gt,
            env,
            prep,
            kb,
            seed,
        } => score_files(&pred, &gt, env.as_deref(), prep, kb.as_deref(), seed, out),
        Command::Gen {
            n,
            seed,
            grammar,
            out: dir,
        } => {
            let cfg = match grammar {
                Some(p) => GrammarConfig::from_json_str(&read(&p)?).map_err(input_err)?,
                None => GrammarConfig::bundled(),
            }
            .with_seed(seed);
            let records = generate_dataset(&cfg, n).map_err(input_err)?;
            let path = dir.join("manifest.jsonl");
            fs::create_dir_all(&dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
            save_manifest(&records, &path)?;
            writeln!(out, "wrote {} records to {}", records.len(), path.display()).map_err(input_err)
        }
        Command::Stats {
            manifest,
            hist_csv,
            matrix,
        } => {
            let records = load_manifest(&manifest)?;
            let stats = compute_stats(&records)?;
            let mut doc = serde_json::to_value(&stats).expect("stats serialize");
            let diversity = diversity_by_name(&records);
            if !diversity.is_empty() {
                let by_name: BTreeMap<&str, serde_json::Value> = diversity
                    .iter()
                    .map(|(k, (lcs, norm))| (k.as_str(), serde_json::json!({"mean_lcs": lcs, "mean_norm_lcs": norm})))
                    .collect();
                doc["diversity_by_name"] = serde_json::json!(by_name);
            }
            writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json")).map_err(input_err)?;
            if let Some(path) = hist_csv {
                write_file(&path, &histogram_csv(&stats))?;
            }
            if let Some(path) = matrix {
                let programs: Vec<Program> = records.iter().map(|r| r.program.clone()).collect();
                let labels: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
                write_file(&path, &similarity_csv(&labels, &pairwise_similarity(&programs)))?;
            }
            Ok(())
        }
        Command::Split {
            manifest,
            ratios,
            seed,
            out: dest,
        } => {
            let records = split_dataset(&load_manifest(&manifest)?, ratios, seed)?;
            match dest {
                Some(path) => save_manifest(&records, path)?,
                None => out
                    .write_all(manifest_to_string(&records).as_bytes())
                    .map_err(input_err)?,
            }
            Ok(())
        }
        Command::Serve {
            mode,
            port,
            envs,
            kb,
            seed,
            workers,
        } => {
            let mut scorer = Scorer::with_env_dir(envs.as_deref(), load_kb(kb.as_deref())?).map_err(input_err)?;
            scorer.seed = seed;
            let scorer = Arc::new(scorer);
            let served = match mode {
                Mode::Stdio => service::serve_stdio(scorer, workers),
                Mode::Tcp => {
                    let listener = TcpListener::bind(("127.0.0.1", port)).map_err(input_err)?;
                    eprintln!("listening on {}", listener.local_addr().map_err(input_err)?);
                    service::serve_tcp(scorer, listener, workers)
                }
            };
            served.map_err(|e| CliError::Domain(format!("transport: {e}")))
        }
    }
}

fn validate_file(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read(path)?;
    let name = path.to_string_lossy();
    let wr = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(input_err);
    if name.ends_with(".env.json") {
        let env = Environment::from_json_str(&text).map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        return wr(
            out,
            format!("OK environment `{}` with {} instances", env.name, env.instances.len()),
        );
    }
    if name.ends_with(".kb.json") {
        let kb = PlacementKB::from_json_str(&text).map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        return wr(out, format!("OK knowledge base with {} classes", kb.len()));
    }
    if name.ends_with(".jsonl") {
        let records = load_manifest(path)?;
        return wr(out, format!("OK manifest with {} records", records.len()));
    }
    if name.ends_with(".json") {
        let cfg = GrammarConfig::from_json_str(&text).map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        cfg.validate(&PlacementKB::bundled()).map_err(input_err)?;
        return wr(out, format!("OK grammar with {} pooled classes", cfg.object_pool.len()));
    }
    let program = parse_program_with(&text, ParseMode::Archive).map_err(|e| CliError::Input(format!("{name}: {e}")))?;
    let issues = validate(&program);
    let mut errors = 0;
    for issue in &issues {
        let severity = issue.severity();
        if severity == Severity::Error {
            errors += 1;
        }
        wr(out, format!("{severity:?}: {issue}"))?;
    }
    if errors > 0 {
        return Err(CliError::Domain(format!("{name}: {errors} error(s)")));
    }
    wr(out, format!("OK program with {} steps", program.len()))
}

#[allow(clippy::too_many_arguments)]
fn exec(
    env_spec: &str,
    program_path: &Path,
    prep: bool,
    kb: Option<&Path>,
    seed: u64,
    trace_path: Option<&Path>,
    final_env_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let program = load_program(program_path)?;
    let mut env = resolve_env(env_spec)?;
    let w = |out: &mut dyn Write, s: &str| writeln!(out, "{s}").map_err(input_err);
    if prep {
        let prepared =
            prepare_scene(&env, &program, &load_kb(kb)?, seed).map_err(|e| CliError::Domain(e.to_string()))?;
        let added = diff(&env, &prepared).to_string();
        if !added.is_empty() {
            w(out, "prepared:")?;
            for line in added.lines() {
                w(out, &format!("  {line}"))?;
            }
        }
        env = prepared;
    }
    let (grounding, trace) =
        ground_and_execute(&program, &env, SearchLimits::default()).map_err(|e| CliError::Domain(e.to_string()))?;
    if let Some(map) = &grounding {
        w(out, "grounding:")?;
        for line in map.to_string().lines() {
            w(out, &format!("  {line}"))?;
        }
    }
    for (entry, step) in trace.entries.iter().zip(&program.steps) {
        let outcome = serde_json::to_value(entry.outcome).expect("outcome serializes");
        w(
            out,
            &format!("{:>3} {step} {}", entry.idx + 1, outcome.as_str().unwrap_or_default()),
        )?;
    }
    let changes = diff(&env, &trace.final_env).to_string();
    if !changes.is_empty() {
        w(out, "changes:")?;
        for line in changes.lines() {
            w(out, &format!("  {line}"))?;
        }
    }
    w(out, &format!("verdict: {}", trace.verdict))?;
    if let Some(path) = trace_path {
        write_file(path, &trace.to_jsonl())?;
    }
    if let Some(path) = final_env_path {
        write_file(path, &trace.final_env.to_pretty_json())?;
    }
    if trace.verdict.is_executable() {
        Ok(())
    } else {
        Err(CliError::Domain("NOT_EXECUTABLE".into()))
    }
}

fn score_files(
    pred: &Path,
    gt: &Path,
    env_spec: Option<&str>,
    prep: bool,
    kb: Option<&Path>,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let is_manifest = |p: &Path| p.extension().is_some_and(|e| e == "jsonl");
    let pairs: Vec<(String, Program, Program, Option<String>)> = if is_manifest(pred) && is_manifest(gt) {
        let gts: BTreeMap<String, DatasetRecord> = load_manifest(gt)?.into_iter().map(|r| (r.id.clone(), r)).collect();
        load_manifest(pred)?
            .into_iter()
            .map(|p| match gts.get(&p.id) {
                Some(g) => Ok((p.id.clone(), p.program, g.program.clone(), g.env_ref.clone())),
                None => Err(CliError::Input(format!("no ground truth for `{}`", p.id))),
            })
            .collect::<Result<_, _>>()?
    } else if is_manifest(pred) || is_manifest(gt) {
        return Err(CliError::Input(
            "--pred and --gt must both be manifests or both be programs".into(),
        ));
    } else {
        let p = load_program(pred)?;
        let id = p.source_id.clone().unwrap_or_default();
        vec![(id, p, load_program(gt)?, None)]
    };
    let kb = if prep { Some(load_kb(kb)?) } else { None };
    let mut envs: BTreeMap<String, Environment> = BTreeMap::new();
    for (id, predicted, truth, env_ref) in pairs {
        let env_name = env_spec.map(str::to_string).or(env_ref);
        let env = match env_name {
            None => None,
            Some(name) => {
                if !envs.contains_key(&name) {
                    envs.insert(name.clone(), resolve_env(&name)?);
                }
                let base = &envs[&name];
                Some(match &kb {
                    Some(kb) => {
                        prepare_scene(base, &predicted, kb, seed).map_err(|e| CliError::Domain(format!("{id}: {e}")))?
                    }
                    None => base.clone(),
                })
            }
        };
        let report: ScoreReport = score(
            &predicted,
            &truth,
            env.as_ref(),
            RewardConfig::default(),
            SearchLimits::default(),
        )
        .map_err(|e| CliError::Domain(format!("{id}: {e}")))?;
        let mut line = serde_json::to_value(&report).expect("report serializes");
        line.as_object_mut()
            .expect("report is an object")
            .insert("id".into(), serde_json::Value::String(id));
        writeln!(out, "{line}").map_err(input_err)?;
    }
    Ok(())
}

/// Runs the command line in `args` (program name first), writing normal
/// output to `out`. Returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main_with_stdout() -> i32 {
    // unlocked: the stdio service writes from its own thread
    run_cli(std::env::args_os(), &mut io::stdout())
}
