//! Newline-delimited JSON scoring service.
//!
//! Each request names an environment, carries a candidate program (and
//! optionally a reference) as step strings, and gets back the normalized
//! LCS, the executability verdict, and the training reward. Requests share
//! only read-only state, so workers answer them in any order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundled;
use crate::environment::{EnvError, Environment};
use crate::executor::{ground_and_execute, SearchLimits};
use crate::metrics::{lcs_by, normalize, score, RewardConfig};
use crate::program::{canonicalize_ids, ParseMode, Program, Step};
use crate::scene::{prepare_scene, PlacementKB};

pub const ENVS_VAR: &str = "HOMEPROG_ENVS";
pub const PARSE_ERROR: &str = "PARSE_ERROR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: String,
    pub candidate: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<String>>,
    pub env: String,
    #[serde(default)]
    pub prep: bool,
    /// Scene preparation seed; the service default applies when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_lcs: Option<f64>,
    pub executable: bool,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<String>,
    /// Set when the request itself could not be served.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScoreResponse {
    fn failed(id: impl Into<String>, error: impl Into<String>) -> Self {
        ScoreResponse {
            id: id.into(),
            norm_lcs: None,
            executable: false,
            reward: 0.0,
            violation: None,
            error: Some(error.into()),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Env {
        path: PathBuf,
        #[source]
        source: EnvError,
    },
    #[error("no environments found in {0}")]
    NoEnvironments(PathBuf),
}

/// Read-only state shared by all workers.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub envs: BTreeMap<String, Environment>,
    pub kb: PlacementKB,
    pub reward: RewardConfig,
    pub limits: SearchLimits,
    pub seed: u64,
}

/// Environment name for a path: the file name without `.env.json`.
pub fn env_name(path: &Path) -> Option<String> {
    let file = path.file_name()?.to_str()?;
    file.strip_suffix(".env.json").map(str::to_string)
}

pub fn load_env_dir(dir: &Path) -> Result<BTreeMap<String, Environment>, ServiceError> {
    let io_err = |source| ServiceError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| env_name(p).is_some())
        .collect();
    paths.sort();
    let mut envs = BTreeMap::new();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|source| ServiceError::Io {
            path: path.clone(),
            source,
        })?;
        let env = Environment::from_json_str(&text).map_err(|source| ServiceError::Env {
            path: path.clone(),
            source,
        })?;
        envs.insert(env_name(&path).expect("filtered"), env);
    }
    if envs.is_empty() {
        return Err(ServiceError::NoEnvironments(dir.to_path_buf()));
    }
    Ok(envs)
}

pub fn bundled_envs() -> BTreeMap<String, Environment> {
    bundled::DEMO_HOMES
        .iter()
        .map(|(name, text)| {
            let env = Environment::from_json_str(text).expect("bundled home is valid");
            (name.to_string(), env)
        })
        .collect()
}

impl Scorer {
    pub fn new(envs: BTreeMap<String, Environment>, kb: PlacementKB) -> Self {
        Scorer {
            envs,
            kb,
            reward: RewardConfig::default(),
            limits: SearchLimits::default(),
            seed: 0,
        }
    }

    /// Bundled homes and KB.
    pub fn bundled() -> Self {
        Scorer::new(bundled_envs(), PlacementKB::bundled())
    }

    /// Environments from `dir`, else from the directory in
    /// `HOMEPROG_ENVS`, else the bundled homes.
    pub fn with_env_dir(dir: Option<&Path>, kb: PlacementKB) -> Result<Self, ServiceError> {
        let from_var = std::env::var_os(ENVS_VAR).map(PathBuf::from);
        let envs = match dir.map(Path::to_path_buf).or(from_var) {
            Some(dir) => load_env_dir(&dir)?,
            None => bundled_envs(),
        };
        Ok(Scorer::new(envs, kb))
    }

    /// Answers one request. Never panics on bad input.
    pub fn handle(&self, req: &ScoreRequest) -> ScoreResponse {
        let reference = match &req.reference {
            None => None,
            Some(lines) => match parse_lines(lines, ParseMode::Archive) {
                Ok(p) => Some(p),
                Err(e) => return ScoreResponse::failed(&req.id, format!("reference: {e}")),
            },
        };
        let Some(base) = self.envs.get(&req.env) else {
            return ScoreResponse::failed(&req.id, format!("unknown environment `{}`", req.env));
        };

        let candidate = match parse_lines(&req.candidate, ParseMode::Strict) {
            Ok(p) => p,
            Err(_) => return self.parse_error_response(req, reference.as_ref()),
        };

        let env = if req.prep {
            match prepare_scene(base, &candidate, &self.kb, req.seed.unwrap_or(self.seed)) {
                Ok(env) => env,
                Err(e) => return ScoreResponse::failed(&req.id, format!("scene preparation: {e}")),
            }
        } else {
            base.clone()
        };

        match reference {
            Some(reference) => match score(&candidate, &reference, Some(&env), self.reward, self.limits) {
                Ok(report) => ScoreResponse {
                    id: req.id.clone(),
                    norm_lcs: Some(report.norm_lcs),
                    executable: report.executable.unwrap_or(false),
                    reward: report.reward.unwrap_or(0.0),
                    violation: report.violation.map(|v| v.code().to_string()),
                    error: None,
                },
                Err(e) => ScoreResponse::failed(&req.id, e.to_string()),
            },
            None => match ground_and_execute(&candidate, &env, self.limits) {
                Ok((_, trace)) => {
                    let executable = trace.verdict.is_executable();
                    ScoreResponse {
                        id: req.id.clone(),
                        norm_lcs: None,
                        executable,
                        reward: self.reward.reward(0.0, executable),
                        violation: trace.verdict.violation().map(|v| v.code().to_string()),
                        error: None,
                    }
                }
                Err(e) => ScoreResponse::failed(&req.id, e.to_string()),
            },
        }
    }

    /// A candidate with malformed lines is not executable; it still earns
    /// the similarity of whatever lines did parse.
    fn parse_error_response(&self, req: &ScoreRequest, reference: Option<&Program>) -> ScoreResponse {
        let norm_lcs = reference.map(|r| partial_norm_lcs(&req.candidate, r));
        ScoreResponse {
            id: req.id.clone(),
            norm_lcs,
            executable: false,
            reward: norm_lcs.unwrap_or(0.0),
            violation: Some(PARSE_ERROR.to_string()),
            error: None,
        }
    }

    /// Parses one wire line and answers it; malformed JSON still produces
    /// a response, echoing the id when one can be recovered.
    pub fn handle_line(&self, line: &str) -> ScoreResponse {
        match serde_json::from_str::<ScoreRequest>(line) {
            Ok(req) => {
                let outcome = panic::catch_unwind(AssertUnwindSafe(|| self.handle(&req)));
                outcome.unwrap_or_else(|_| ScoreResponse::failed(&req.id, "internal error"))
            }
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_string))
                    .unwrap_or_default();
                ScoreResponse::failed(id, format!("bad request: {e}"))
            }
        }
    }
}

fn parse_lines(lines: &[String], mode: ParseMode) -> Result<Program, String> {
    let steps = lines
        .iter()
        .enumerate()
        .map(|(i, l)| Step::parse_with(l, mode).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Program::new(steps))
}

/// Normalized LCS where unparseable candidate lines match nothing but
/// still count toward the candidate's length.
pub fn partial_norm_lcs(candidate: &[String], reference: &Program) -> f64 {
    let parsed: Vec<Option<Step>> = candidate
        .iter()
        .map(|l| Step::parse_with(l, ParseMode::Archive).ok())
        .collect();
    let kept = canonicalize_ids(&Program::new(parsed.iter().flatten().cloned().collect()));
    let mut kept = kept.steps.into_iter();
    let slots: Vec<Option<Step>> = parsed.iter().map(|s| s.as_ref().and_then(|_| kept.next())).collect();
    let reference = canonicalize_ids(reference);
    let wrapped: Vec<Option<Step>> = reference.steps.into_iter().map(Some).collect();
    let lcs = lcs_by(&slots, &wrapped, |a, b| a.is_some() && a == b);
    normalize(lcs, candidate.len(), wrapped.len())
}

fn default_workers() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(4)
}

/// Serves requests read line by line from `input`, writing one response
/// line each to `output` as workers finish. Returns after `input` ends and
/// every response is written.
pub fn serve_lines<R, W>(scorer: Arc<Scorer>, input: R, output: W, workers: usize) -> io::Result<()>
where
    R: BufRead,
    W: Write + Send + 'static,
{
    let workers = workers.max(1);
    let (job_tx, job_rx) = mpsc::channel::<String>();
    let job_rx = Arc::new(Mutex::new(job_rx));
    let (out_tx, out_rx) = mpsc::channel::<ScoreResponse>();

    let writer = thread::spawn(move || -> io::Result<()> {
        let mut output = output;
        for response in out_rx {
            serde_json::to_writer(&mut output, &response)?;
            output.write_all(b"\n")?;
            output.flush()?;
        }
        Ok(())
    });

    let mut pool = Vec::with_capacity(workers);
    for _ in 0..workers {
        let jobs = Arc::clone(&job_rx);
        let out = out_tx.clone();
        let scorer = Arc::clone(&scorer);
        pool.push(thread::spawn(move || loop {
            let next = jobs.lock().expect("job queue lock").recv();
            let Ok(line) = next else { break };
            if out.send(scorer.handle_line(&line)).is_err() {
                break;
            }
        }));
    }
    drop(out_tx);

    let mut read_result = Ok(());
    for line in input.lines() {
        match line {
            Ok(line) if line.trim().is_empty() => continue,
            Ok(line) => {
                if job_tx.send(line).is_err() {
                    break;
                }
            }
            Err(e) => {
                read_result = Err(e);
                break;
            }
        }
    }
    drop(job_tx);
    for handle in pool {
        let _ = handle.join();
    }
    let write_result = writer
        .join()
        .unwrap_or_else(|_| Err(io::Error::other("writer thread panicked")));
    read_result.and(write_result)
}

pub fn serve_stdio(scorer: Arc<Scorer>, workers: Option<usize>) -> io::Result<()> {
    let stdin = io::stdin();
    serve_lines(
        scorer,
        stdin.lock(),
        io::stdout(),
        workers.unwrap_or_else(default_workers),
    )
}

fn serve_connection(scorer: Arc<Scorer>, stream: TcpStream, workers: usize) -> io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    serve_lines(scorer, reader, stream, workers)
}

/// Accepts connections on `listener` until it fails; each connection is
/// served on its own thread. A failing connection is logged and dropped.
pub fn serve_tcp(scorer: Arc<Scorer>, listener: TcpListener, workers: Option<usize>) -> io::Result<()> {
    let workers = workers.unwrap_or_else(default_workers);
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                eprintln!("accept failed: {e}");
                continue;
            }
        };
        let scorer = Arc::clone(&scorer);
        thread::spawn(move || {
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            if let Err(e) = serve_connection(scorer, stream, workers) {
                eprintln!("connection {peer}: {e}");
            }
        });
    }
    Ok(())
}
