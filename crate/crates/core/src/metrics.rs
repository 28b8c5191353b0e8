//! Program similarity, accuracies, executability, and the training reward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::Environment;
use crate::executor::{ground_and_execute, ExecError, SearchLimits, Violation};
use crate::program::{canonicalize_ids, ActionName, Program, Step};

/// What counts as two steps being equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Equality {
    /// Action, classes, and canonical ids.
    Step,
    Action,
    /// Multiset of object classes, action ignored.
    Object,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("need at least {needed} programs, got {got}")]
    DegenerateInput { needed: usize, got: usize },
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Length of the longest common subsequence of `a` and `b` under `eq`.
pub fn lcs_by<T, F>(a: &[T], b: &[T], eq: F) -> usize
where
    F: Fn(&T, &T) -> bool,
{
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    // Two rows suffice for the length.
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            row[j + 1] = if eq(x, y) { prev[j] + 1 } else { row[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

fn object_classes(step: &Step) -> Vec<&str> {
    let mut classes: Vec<&str> = step.objects.iter().map(|m| m.class_name.as_str()).collect();
    classes.sort_unstable();
    classes
}

fn steps_equal(mode: Equality) -> fn(&Step, &Step) -> bool {
    match mode {
        Equality::Step => |a, b| a == b,
        Equality::Action => |a, b| a.action == b.action,
        Equality::Object => |a, b| object_classes(a) == object_classes(b),
    }
}

/// A step with its ids replaced by canonical ones, borrowing from the
/// program.
#[derive(PartialEq)]
struct CanonicalStep<'a> {
    action: &'a ActionName,
    objects: Vec<(&'a str, u32)>,
}

/// Same renumbering as `canonicalize_ids`, without cloning the program.
fn canonical_steps(program: &Program) -> Vec<CanonicalStep<'_>> {
    let mut seen: Vec<(&str, u32, u32)> = Vec::new();
    let mut counters: Vec<(&str, u32)> = Vec::new();
    program
        .steps
        .iter()
        .map(|step| {
            let objects = step
                .objects
                .iter()
                .map(|m| {
                    let class = m.class_name.as_str();
                    if let Some(&(_, _, id)) = seen.iter().find(|(c, i, _)| *c == class && *i == m.instance_id) {
                        return (class, id);
                    }
                    let id = match counters.iter_mut().find(|(c, _)| *c == class) {
                        Some((_, n)) => {
                            *n += 1;
                            *n
                        }
                        None => {
                            counters.push((class, 1));
                            1
                        }
                    };
                    seen.push((class, m.instance_id, id));
                    (class, id)
                })
                .collect();
            CanonicalStep {
                action: &step.action,
                objects,
            }
        })
        .collect()
}

/// LCS over steps. In `Step` mode ids are compared after canonicalization.
pub fn lcs_length(a: &Program, b: &Program, mode: Equality) -> usize {
    if mode == Equality::Step {
        lcs_by(&canonical_steps(a), &canonical_steps(b), |x, y| x == y)
    } else {
        lcs_by(&a.steps, &b.steps, steps_equal(mode))
    }
}

/// `lcs / max(len)`, with two empty sequences scoring 1.
pub fn normalize(lcs: usize, len_a: usize, len_b: usize) -> f64 {
    let longest = len_a.max(len_b);
    if longest == 0 {
        1.0
    } else {
        lcs as f64 / longest as f64
    }
}

pub fn normalized_lcs(pred: &Program, gt: &Program, mode: Equality) -> f64 {
    normalize(lcs_length(pred, gt, mode), pred.len(), gt.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub lambda_sim: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { lambda_sim: 0.1 }
    }
}

impl RewardConfig {
    pub fn new(lambda_sim: f64) -> Option<Self> {
        (lambda_sim >= 0.0 && lambda_sim.is_finite()).then_some(RewardConfig { lambda_sim })
    }

    /// `lcs_term + lambda_sim * [executable]`.
    pub fn reward(&self, lcs_term: f64, executable: bool) -> f64 {
        lcs_term + self.lambda_sim * if executable { 1.0 } else { 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub lcs_len: usize,
    pub norm_lcs: f64,
    pub action_acc: f64,
    pub object_acc: f64,
    pub step_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executable: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
}

/// Scores `pred` against `gt`; with an environment, also runs `pred` and
/// fills the executability flag and reward.
pub fn score(
    pred: &Program,
    gt: &Program,
    env: Option<&Environment>,
    cfg: RewardConfig,
    limits: SearchLimits,
) -> Result<ScoreReport, MetricsError> {
    let lcs_len = lcs_length(pred, gt, Equality::Step);
    let norm_lcs = normalize(lcs_len, pred.len(), gt.len());
    let mut report = ScoreReport {
        lcs_len,
        norm_lcs,
        action_acc: normalized_lcs(pred, gt, Equality::Action),
        object_acc: normalized_lcs(pred, gt, Equality::Object),
        step_acc: norm_lcs,
        executable: None,
        violation: None,
        reward: None,
    };
    if let Some(env) = env {
        let (_, trace) = ground_and_execute(pred, env, limits)?;
        let executable = trace.verdict.is_executable();
        report.executable = Some(executable);
        report.violation = trace.verdict.violation();
        report.reward = Some(cfg.reward(norm_lcs, executable));
    }
    Ok(report)
}

/// Symmetric matrix of step-mode normalized LCS.
pub fn pairwise_similarity(programs: &[Program]) -> Vec<Vec<f64>> {
    let canon: Vec<Program> = programs.iter().map(canonicalize_ids).collect();
    let n = canon.len();
    let mut matrix = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let lcs = lcs_by(&canon[i].steps, &canon[j].steps, steps_equal(Equality::Step));
            let value = normalize(lcs, canon[i].len(), canon[j].len());
            matrix[i][j] = value;
            matrix[j][i] = value;
        }
    }
    matrix
}

pub fn similarity_csv(labels: &[String], matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("id");
    for label in labels {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for (label, row) in labels.iter().zip(matrix) {
        out.push_str(label);
        for value in row {
            out.push_str(&format!(",{value:.6}"));
        }
        out.push('\n');
    }
    out
}

/// Mean LCS and mean normalized LCS over all unordered pairs.
pub fn diversity_stats(programs: &[Program]) -> Result<(f64, f64), MetricsError> {
    if programs.len() < 2 {
        return Err(MetricsError::DegenerateInput {
            needed: 2,
            got: programs.len(),
        });
    }
    let canon: Vec<Program> = programs.iter().map(canonicalize_ids).collect();
    let (mut sum_lcs, mut sum_norm, mut pairs) = (0.0, 0.0, 0usize);
    for i in 0..canon.len() {
        for j in (i + 1)..canon.len() {
            let lcs = lcs_by(&canon[i].steps, &canon[j].steps, steps_equal(Equality::Step));
            sum_lcs += lcs as f64;
            sum_norm += normalize(lcs, canon[i].len(), canon[j].len());
            pairs += 1;
        }
    }
    Ok((sum_lcs / pairs as f64, sum_norm / pairs as f64))
}

/// Fraction of programs executable in the environment `env_for` builds
/// for each. An empty batch has rate 1.
pub fn executability_rate<F>(programs: &[Program], mut env_for: F, limits: SearchLimits) -> Result<f64, MetricsError>
where
    F: FnMut(&Program) -> Environment,
{
    if programs.is_empty() {
        return Ok(1.0);
    }
    let mut ok = 0usize;
    for p in programs {
        let env = env_for(p);
        let (_, trace) = ground_and_execute(p, &env, limits)?;
        ok += usize::from(trace.verdict.is_executable());
    }
    Ok(ok as f64 / programs.len() as f64)
}
