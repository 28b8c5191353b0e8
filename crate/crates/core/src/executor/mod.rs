//! Grounding and execution of programs.
//!
//! Object mentions are bound to environment instances lazily, at the first
//! step that names them, by depth-first search over the candidates that
//! `query_instances` yields for the simulated state at that point. Each
//! candidate is checked by executing the step; the first assignment that
//! reaches the end of the program wins.

mod semantics;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::environment::{query_instances, Environment, StateDiff, Uid};
use crate::program::{ObjectMention, Program, Step};

pub use semantics::{apply_step, check_step, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchLimits {
    pub max_candidates_per_mention: usize,
    pub max_backtrack_nodes: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits {
            max_candidates_per_mention: 5,
            max_backtrack_nodes: 100_000,
        }
    }
}

impl SearchLimits {
    /// No truncation and no practical node bound; used by oracles.
    pub fn unbounded() -> Self {
        SearchLimits {
            max_candidates_per_mention: usize::MAX,
            max_backtrack_nodes: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("search budget of {0} nodes exceeded")]
    SearchBudgetExceeded(usize),
    #[error("{action} applied with failing precondition {violation}")]
    ContractViolation { action: String, violation: Violation },
    #[error("invalid search limits: both limits must be positive")]
    InvalidLimits,
}

/// Mention `(class, id)` to instance uid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundingMap {
    assignment: BTreeMap<(String, u32), Uid>,
}

impl GroundingMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, mention: &ObjectMention) -> Option<Uid> {
        self.assignment.get(&mention.key()).copied()
    }

    /// Binds a mention. Fails if the uid is already taken by another id of
    /// the same class or the mention is bound elsewhere.
    pub fn bind(&mut self, mention: &ObjectMention, uid: Uid) -> bool {
        if let Some(existing) = self.get(mention) {
            return existing == uid;
        }
        if self.is_taken(&mention.class_name, uid) {
            return false;
        }
        self.assignment.insert(mention.key(), uid);
        true
    }

    fn unbind(&mut self, mention: &ObjectMention) {
        self.assignment.remove(&mention.key());
    }

    fn is_taken(&self, class_name: &str, uid: Uid) -> bool {
        self.assignment.iter().any(|((c, _), u)| c == class_name && *u == uid)
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, u32), &Uid)> {
        self.assignment.iter()
    }
}

impl fmt::Display for GroundingMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .assignment
            .iter()
            .map(|((c, id), uid)| format!("<{c}> ({id}) -> {uid}"))
            .collect();
        f.write_str(&parts.join("\n"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Violated(Violation),
}

impl Serialize for Outcome {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Outcome::Ok => serializer.serialize_str("OK"),
            Outcome::Violated(v) => serializer.serialize_str(v.code()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Executable,
    /// `step` is 0-based.
    Failed {
        step: usize,
        violation: Violation,
    },
}

impl Verdict {
    pub fn is_executable(&self) -> bool {
        matches!(self, Verdict::Executable)
    }

    pub fn violation(&self) -> Option<Violation> {
        match self {
            Verdict::Executable => None,
            Verdict::Failed { violation, .. } => Some(*violation),
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Executable => f.write_str("EXECUTABLE"),
            Verdict::Failed { step, violation } => write!(f, "FAILED at step {} ({violation})", step + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub idx: usize,
    pub action: String,
    pub targets: Vec<Uid>,
    pub outcome: Outcome,
    pub diff: StateDiff,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub entries: Vec<TraceEntry>,
    pub verdict: Verdict,
    pub final_env: Environment,
}

struct FinalLine<'a>(&'a ExecutionTrace);

impl Serialize for FinalLine<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let trace = self.0;
        let mut map = serializer.serialize_map(None)?;
        match trace.verdict {
            Verdict::Executable => map.serialize_entry("verdict", "EXECUTABLE")?,
            Verdict::Failed { step, violation } => {
                map.serialize_entry("verdict", "FAILED")?;
                map.serialize_entry("step", &step)?;
                map.serialize_entry("violation", &violation)?;
            }
        }
        map.serialize_entry("final_env_hash", &trace.final_env.content_hash())?;
        map.end()
    }
}

impl ExecutionTrace {
    /// Re-applies every entry's diff to `initial`.
    pub fn replay(&self, initial: &Environment) -> Environment {
        let mut env = initial.clone();
        for entry in &self.entries {
            entry.diff.apply(&mut env);
        }
        env
    }

    /// JSON Lines: one object per entry, then a verdict line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for entry in &self.entries {
            serde_json::to_writer(&mut out, entry)?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &FinalLine(self))?;
        out.write_all(b"\n")
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

struct Failure {
    step: usize,
    violation: Violation,
    entries: Vec<TraceEntry>,
    env: Environment,
}

struct Search<'a> {
    program: &'a Program,
    limits: SearchLimits,
    nodes: usize,
    deepest: Option<Failure>,
    success: Option<(Vec<TraceEntry>, Environment)>,
}

impl Search<'_> {
    fn tick(&mut self) -> Result<(), ExecError> {
        self.nodes += 1;
        if self.nodes > self.limits.max_backtrack_nodes {
            Err(ExecError::SearchBudgetExceeded(self.limits.max_backtrack_nodes))
        } else {
            Ok(())
        }
    }

    fn fail(
        &mut self,
        step: usize,
        violation: Violation,
        targets: Vec<Uid>,
        entries: &[TraceEntry],
        env: &Environment,
    ) {
        if self.deepest.as_ref().is_some_and(|d| d.step >= step) {
            return;
        }
        let mut entries = entries.to_vec();
        entries.push(TraceEntry {
            idx: step,
            action: self.program.steps[step].action.to_string(),
            targets,
            outcome: Outcome::Violated(violation),
            diff: StateDiff::default(),
        });
        self.deepest = Some(Failure {
            step,
            violation,
            entries,
            env: env.clone(),
        });
    }

    fn run_step(
        &mut self,
        idx: usize,
        env: &Environment,
        map: &mut GroundingMap,
        entries: &mut Vec<TraceEntry>,
    ) -> Result<bool, ExecError> {
        if idx == self.program.steps.len() {
            self.success = Some((entries.clone(), env.clone()));
            return Ok(true);
        }
        let step = &self.program.steps[idx];
        let mut unbound: Vec<&ObjectMention> = Vec::new();
        for m in &step.objects {
            if map.get(m).is_none() && !unbound.contains(&m) {
                unbound.push(m);
            }
        }
        self.bind_mentions(idx, step, &unbound, env, map, entries)
    }

    fn bind_mentions(
        &mut self,
        idx: usize,
        step: &Step,
        unbound: &[&ObjectMention],
        env: &Environment,
        map: &mut GroundingMap,
        entries: &mut Vec<TraceEntry>,
    ) -> Result<bool, ExecError> {
        let Some((mention, rest)) = unbound.split_first() else {
            return self.execute_bound(idx, step, env, map, entries);
        };
        let candidates: Vec<Uid> = query_instances(env, &mention.class_name)
            .into_iter()
            .filter(|uid| !map.is_taken(&mention.class_name, *uid))
            .take(self.limits.max_candidates_per_mention)
            .collect();
        if candidates.is_empty() {
            self.tick()?;
            let targets = step.objects.iter().filter_map(|m| map.get(m)).collect();
            self.fail(idx, Violation::Ungroundable, targets, entries, env);
            return Ok(false);
        }
        for uid in candidates {
            map.bind(mention, uid);
            if self.bind_mentions(idx, step, rest, env, map, entries)? {
                return Ok(true);
            }
            map.unbind(mention);
        }
        Ok(false)
    }

    fn execute_bound(
        &mut self,
        idx: usize,
        step: &Step,
        env: &Environment,
        map: &mut GroundingMap,
        entries: &mut Vec<TraceEntry>,
    ) -> Result<bool, ExecError> {
        self.tick()?;
        let targets: Vec<Uid> = step.objects.iter().map(|m| map.get(m).expect("bound")).collect();
        if let Err(violation) = check_step(env, &step.action, &targets) {
            self.fail(idx, violation, targets, entries, env);
            return Ok(false);
        }
        let mut next = env.clone();
        semantics::apply_in_place(&mut next, &step.action, &targets);
        entries.push(TraceEntry {
            idx,
            action: step.action.to_string(),
            targets,
            outcome: Outcome::Ok,
            diff: StateDiff::between(env, &next),
        });
        if self.run_step(idx + 1, &next, map, entries)? {
            return Ok(true);
        }
        entries.pop();
        Ok(false)
    }
}

/// Searches for a grounding under which every step executes.
///
/// Returns the first such grounding with its trace, or `None` with the
/// trace of the failure that got furthest into the program.
pub fn ground_and_execute(
    program: &Program,
    env: &Environment,
    limits: SearchLimits,
) -> Result<(Option<GroundingMap>, ExecutionTrace), ExecError> {
    if limits.max_candidates_per_mention == 0 || limits.max_backtrack_nodes == 0 {
        return Err(ExecError::InvalidLimits);
    }
    let mut search = Search {
        program,
        limits,
        nodes: 0,
        deepest: None,
        success: None,
    };
    let mut map = GroundingMap::new();
    let mut entries = Vec::new();
    if search.run_step(0, env, &mut map, &mut entries)? {
        let (entries, final_env) = search.success.take().expect("success recorded");
        let trace = ExecutionTrace {
            entries,
            verdict: Verdict::Executable,
            final_env,
        };
        return Ok((Some(map), trace));
    }
    let failure = search.deepest.take().expect("a failing search records its failure");
    let trace = ExecutionTrace {
        entries: failure.entries,
        verdict: Verdict::Failed {
            step: failure.step,
            violation: failure.violation,
        },
        final_env: failure.env,
    };
    Ok((None, trace))
}

pub fn is_executable(
    program: &Program,
    env: &Environment,
    limits: SearchLimits,
) -> Result<(bool, Option<Violation>), ExecError> {
    let (_, trace) = ground_and_execute(program, env, limits)?;
    Ok((trace.verdict.is_executable(), trace.verdict.violation()))
}

/// Executes under a fixed grounding, no search.
pub fn execute_with_grounding(program: &Program, env: &Environment, map: &GroundingMap) -> ExecutionTrace {
    let mut current = env.clone();
    let mut entries = Vec::new();
    for (idx, step) in program.steps.iter().enumerate() {
        let targets: Vec<Uid> = step.objects.iter().filter_map(|m| map.get(m)).collect();
        let outcome = if targets.len() != step.objects.len() {
            Err(Violation::Ungroundable)
        } else {
            check_step(&current, &step.action, &targets)
        };
        if let Err(violation) = outcome {
            entries.push(TraceEntry {
                idx,
                action: step.action.to_string(),
                targets,
                outcome: Outcome::Violated(violation),
                diff: StateDiff::default(),
            });
            return ExecutionTrace {
                entries,
                verdict: Verdict::Failed { step: idx, violation },
                final_env: current,
            };
        }
        let mut next = current.clone();
        semantics::apply_in_place(&mut next, &step.action, &targets);
        entries.push(TraceEntry {
            idx,
            action: step.action.to_string(),
            targets,
            outcome: Outcome::Ok,
            diff: StateDiff::between(&current, &next),
        });
        current = next;
    }
    ExecutionTrace {
        entries,
        verdict: Verdict::Executable,
        final_env: current,
    }
}
