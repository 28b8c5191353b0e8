//! Program data model and the textual step DSL.
//!
//! A program is a list of steps, one per line:
//!
//! ```text
//! # watch tv
//! [Walk] <TELEVISION> (1)
//! [SwitchOn] <TELEVISION> (1)
//! [Put] <MILK> (1) <TABLE> (1)
//! ```
//!
//! Ids are per-class co-reference counters: `<TELEVISION> (1)` and
//! `<SOFA> (1)` are unrelated objects.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Executable action vocabulary.
///
/// `Other` only appears in programs parsed in archive mode; such steps are
/// kept for statistics and similarity but never execute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionName {
    Walk,
    Run,
    Grab,
    SwitchOn,
    SwitchOff,
    Open,
    Close,
    Put,
    LookAt,
    Sit,
    StandUp,
    Touch,
    Other(String),
}

impl ActionName {
    pub const EXECUTABLE: [ActionName; 12] = [
        ActionName::Walk,
        ActionName::Run,
        ActionName::Grab,
        ActionName::SwitchOn,
        ActionName::SwitchOff,
        ActionName::Open,
        ActionName::Close,
        ActionName::Put,
        ActionName::LookAt,
        ActionName::Sit,
        ActionName::StandUp,
        ActionName::Touch,
    ];

    /// Number of object arguments. `None` for archive actions, which accept
    /// whatever the source line carried.
    pub fn arity(&self) -> Option<usize> {
        match self {
            ActionName::StandUp => Some(0),
            ActionName::Put => Some(2),
            ActionName::Other(_) => None,
            _ => Some(1),
        }
    }

    pub fn is_executable(&self) -> bool {
        !matches!(self, ActionName::Other(_))
    }

    pub fn as_str(&self) -> &str {
        match self {
            ActionName::Walk => "Walk",
            ActionName::Run => "Run",
            ActionName::Grab => "Grab",
            ActionName::SwitchOn => "SwitchOn",
            ActionName::SwitchOff => "SwitchOff",
            ActionName::Open => "Open",
            ActionName::Close => "Close",
            ActionName::Put => "Put",
            ActionName::LookAt => "LookAt",
            ActionName::Sit => "Sit",
            ActionName::StandUp => "StandUp",
            ActionName::Touch => "Touch",
            ActionName::Other(name) => name,
        }
    }

    /// Resolves a token against the executable vocabulary and the alias
    /// table. Matching ignores case, `-`, `_` and inner spaces.
    pub fn lookup(token: &str) -> Option<ActionName> {
        let key: String = token
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        let action = match key.as_str() {
            "walk" | "goto" => ActionName::Walk,
            "run" => ActionName::Run,
            "grab" | "take" | "pickup" => ActionName::Grab,
            "switchon" | "turnon" => ActionName::SwitchOn,
            "switchoff" | "turnoff" => ActionName::SwitchOff,
            "open" => ActionName::Open,
            "close" => ActionName::Close,
            "put" | "place" | "putback" => ActionName::Put,
            "lookat" | "watch" => ActionName::LookAt,
            "sit" => ActionName::Sit,
            "standup" => ActionName::StandUp,
            "touch" => ActionName::Touch,
            _ => return None,
        };
        Some(action)
    }
}

impl fmt::Display for ActionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectMention {
    pub class_name: String,
    pub instance_id: u32,
}

impl ObjectMention {
    pub fn new(class_name: impl AsRef<str>, instance_id: u32) -> Self {
        ObjectMention {
            class_name: class_name.as_ref().to_ascii_uppercase(),
            instance_id,
        }
    }

    pub fn key(&self) -> (String, u32) {
        (self.class_name.clone(), self.instance_id)
    }
}

impl fmt::Display for ObjectMention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}> ({})", self.class_name, self.instance_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Step {
    pub action: ActionName,
    pub objects: Vec<ObjectMention>,
}

impl Step {
    pub fn new(action: ActionName, objects: Vec<ObjectMention>) -> Self {
        Step { action, objects }
    }

    pub fn unary(action: ActionName, class_name: &str, id: u32) -> Self {
        Step::new(action, vec![ObjectMention::new(class_name, id)])
    }

    /// Parses a single step line in strict mode.
    pub fn parse(line: &str) -> Result<Step, ParseError> {
        parse_step_line(line, 1, ParseMode::Strict)
    }

    pub fn parse_with(line: &str, mode: ParseMode) -> Result<Step, ParseError> {
        parse_step_line(line, 1, mode)
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.action)?;
        for object in &self.objects {
            write!(f, " {object}")?;
        }
        Ok(())
    }
}

impl FromStr for Step {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Step::parse(s)
    }
}

impl Serialize for Step {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Step {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        // Stored programs may come from the larger crowd vocabulary.
        let line = String::deserialize(deserializer)?;
        Step::parse_with(&line, ParseMode::Archive).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Program {
    pub steps: Vec<Step>,
    pub name: Option<String>,
    pub source_id: Option<String>,
}

impl Program {
    pub fn new(steps: Vec<Step>) -> Self {
        Program {
            steps,
            name: None,
            source_id: None,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn prefix(&self, n: usize) -> Program {
        Program {
            steps: self.steps[..n.min(self.steps.len())].to_vec(),
            name: self.name.clone(),
            source_id: self.source_id.clone(),
        }
    }

    /// Distinct mentions in order of first appearance.
    pub fn mentions(&self) -> Vec<&ObjectMention> {
        let mut seen = std::collections::HashSet::new();
        self.steps
            .iter()
            .flat_map(|s| s.objects.iter())
            .filter(|m| seen.insert((&m.class_name, m.instance_id)))
            .collect()
    }

    pub fn is_executable_vocabulary(&self) -> bool {
        self.steps.iter().all(|s| s.action.is_executable())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Only the executable vocabulary (plus aliases) is accepted.
    #[default]
    Strict,
    /// Unknown bracketed action tokens are kept as `ActionName::Other`.
    Archive,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: syntax error: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown action `{token}`")]
    UnknownAction { line: usize, token: String },
    #[error("line {line}: action {action} takes {expected} object(s), found {found}")]
    Arity {
        line: usize,
        action: String,
        expected: usize,
        found: usize,
    },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::Syntax { line, .. }
            | ParseError::UnknownAction { line, .. }
            | ParseError::Arity { line, .. } => *line,
        }
    }
}

pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    parse_program_with(text, ParseMode::Strict)
}

pub fn parse_program_with(text: &str, mode: ParseMode) -> Result<Program, ParseError> {
    let mut steps = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        steps.push(parse_step_line(line, idx + 1, mode)?);
    }
    Ok(Program::new(steps))
}

/// Canonical text form, one step per line, no trailing newline.
pub fn format_program(program: &Program) -> String {
    program.steps.iter().map(Step::to_string).collect::<Vec<_>>().join("\n")
}

fn parse_step_line(line: &str, line_no: usize, mode: ParseMode) -> Result<Step, ParseError> {
    let syntax = |reason: &str| ParseError::Syntax {
        line: line_no,
        reason: reason.to_string(),
    };
    let mut cursor = Cursor::new(line.trim());

    let token = cursor
        .delimited('[', ']')
        .ok_or_else(|| syntax("expected `[Action]`"))?;
    let token = token.trim();
    if token.is_empty() {
        return Err(syntax("empty action"));
    }

    let mut objects = Vec::new();
    loop {
        cursor.skip_ws();
        if cursor.is_done() {
            break;
        }
        let class = cursor.delimited('<', '>').ok_or_else(|| syntax("expected `<CLASS>`"))?;
        let class = class.trim();
        if class.is_empty() || !class.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(syntax(&format!("invalid class name `{class}`")));
        }
        cursor.skip_ws();
        let id = cursor
            .delimited('(', ')')
            .ok_or_else(|| syntax(&format!("expected `(id)` after <{class}>")))?;
        let id: u32 = id
            .trim()
            .parse()
            .map_err(|_| syntax(&format!("invalid id `{}`", id.trim())))?;
        objects.push(ObjectMention::new(class, id));
    }

    let action = match ActionName::lookup(token) {
        Some(action) => action,
        None => {
            if mode == ParseMode::Archive
                && token
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | ' '))
            {
                ActionName::Other(token.to_string())
            } else {
                return Err(ParseError::UnknownAction {
                    line: line_no,
                    token: token.to_string(),
                });
            }
        }
    };

    if let Some(expected) = action.arity() {
        if expected != objects.len() {
            return Err(ParseError::Arity {
                line: line_no,
                action: action.to_string(),
                expected,
                found: objects.len(),
            });
        }
    } else if objects.len() > 2 {
        return Err(syntax("at most two objects per step"));
    }

    Ok(Step::new(action, objects))
}

struct Cursor<'a> {
    rest: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(s: &'a str) -> Self {
        Cursor { rest: s }
    }

    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start();
    }

    fn is_done(&self) -> bool {
        self.rest.is_empty()
    }

    fn delimited(&mut self, open: char, close: char) -> Option<&'a str> {
        let body = self.rest.strip_prefix(open)?;
        let end = body.find(close)?;
        let inner = &body[..end];
        if inner.contains(open) {
            return None;
        }
        self.rest = &body[end + close.len_utf8()..];
        Some(inner)
    }
}

/// Renumbers ids per class in order of first appearance.
pub fn canonicalize_ids(program: &Program) -> Program {
    let mut next: HashMap<String, u32> = HashMap::new();
    let mut mapping: HashMap<(String, u32), u32> = HashMap::new();
    let steps = program
        .steps
        .iter()
        .map(|step| {
            let objects = step
                .objects
                .iter()
                .map(|m| {
                    let id = *mapping.entry(m.key()).or_insert_with(|| {
                        let counter = next.entry(m.class_name.clone()).or_insert(0);
                        *counter += 1;
                        *counter
                    });
                    ObjectMention {
                        class_name: m.class_name.clone(),
                        instance_id: id,
                    }
                })
                .collect();
            Step::new(step.action.clone(), objects)
        })
        .collect();
    Program {
        steps,
        name: program.name.clone(),
        source_id: program.source_id.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Issue {
    /// Step object count does not match the action's arity.
    ArityIssue {
        step: usize,
        expected: usize,
        found: usize,
    },
    DuplicateStepWarning {
        step: usize,
    },
    InvalidId {
        step: usize,
        class_name: String,
    },
    NonExecutableAction {
        step: usize,
        action: String,
    },
}

impl Issue {
    pub fn severity(&self) -> Severity {
        match self {
            Issue::DuplicateStepWarning { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::ArityIssue { step, expected, found } => {
                write!(f, "step {}: expected {expected} object(s), found {found}", step + 1)
            }
            Issue::DuplicateStepWarning { step } => {
                write!(f, "step {}: repeats the previous step", step + 1)
            }
            Issue::InvalidId { step, class_name } => {
                write!(f, "step {}: <{class_name}> has a non-positive id", step + 1)
            }
            Issue::NonExecutableAction { step, action } => {
                write!(f, "step {}: action `{action}` is not executable", step + 1)
            }
        }
    }
}

/// Static checks that need no environment. Step indices are 0-based.
pub fn validate(program: &Program) -> Vec<Issue> {
    let mut issues = Vec::new();
    for (idx, step) in program.steps.iter().enumerate() {
        match step.action.arity() {
            Some(expected) if expected != step.objects.len() => issues.push(Issue::ArityIssue {
                step: idx,
                expected,
                found: step.objects.len(),
            }),
            None => issues.push(Issue::NonExecutableAction {
                step: idx,
                action: step.action.to_string(),
            }),
            _ => {}
        }
        for m in &step.objects {
            if m.instance_id == 0 {
                issues.push(Issue::InvalidId {
                    step: idx,
                    class_name: m.class_name.clone(),
                });
            }
        }
        if idx > 0 && program.steps[idx - 1] == *step {
            issues.push(Issue::DuplicateStepWarning { step: idx });
        }
    }
    issues
}
