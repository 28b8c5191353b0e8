//! Manifest I/O, seeded splits, and corpus statistics.
//!
//! A manifest is JSON Lines; each record stores its program as an array of
//! canonical step strings.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{diversity_stats, MetricsError};
use crate::program::{format_program, Program, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "TRAIN",
            Split::Val => "VAL",
            Split::Test => "TEST",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub id: String,
    pub name: Option<String>,
    pub description: String,
    pub program: Program,
    pub env_ref: Option<String>,
    pub split: Option<Split>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    description: String,
    program: Vec<Step>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    env_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

impl Serialize for DatasetRecord {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RecordLine {
            id: self.id.clone(),
            name: self.name.clone(),
            description: self.description.clone(),
            program: self.program.steps.clone(),
            env_ref: self.env_ref.clone(),
            split: self.split,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DatasetRecord {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let line = RecordLine::deserialize(deserializer)?;
        let mut program = Program::new(line.program);
        program.name = line.name.clone();
        program.source_id = Some(line.id.clone());
        Ok(DatasetRecord {
            id: line.id,
            name: line.name,
            description: line.description,
            program,
            env_ref: line.env_ref,
            split: line.split,
        })
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}:{line}: {reason}")]
    Schema { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("split ratios {0:?} must be positive and sum to 1")]
    BadRatios((f64, f64, f64)),
    #[error("need at least one record")]
    DegenerateInput,
}

impl DatasetError {
    fn io(path: &Path, source: io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Parses manifest text; `origin` only labels errors.
pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    parse_lines(text.lines().map(|l| Ok(l.to_string())), origin)
}

fn parse_lines<I>(lines: I, origin: &Path) -> Result<Vec<DatasetRecord>, DatasetError>
where
    I: Iterator<Item = io::Result<String>>,
{
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(|e| DatasetError::io(origin, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |reason: String| DatasetError::Schema {
            path: origin.to_path_buf(),
            line: lineno,
            reason,
        };
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| {
            let id = serde_json::from_str::<serde_json::Value>(&line)
                .ok()
                .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_string));
            match id {
                Some(id) => schema(format!("record `{id}`: {e}")),
                None => schema(e.to_string()),
            }
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(schema(format!("duplicate record id `{}`", record.id)));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, DatasetError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    parse_lines(BufReader::new(file).lines(), path)
}

pub fn manifest_to_string(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn save_manifest(records: &[DatasetRecord], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut ids = HashSet::new();
    for (idx, record) in records.iter().enumerate() {
        if !ids.insert(&record.id) {
            return Err(DatasetError::Schema {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: format!("duplicate record id `{}`", record.id),
            });
        }
    }
    let mut file = io::BufWriter::new(fs::File::create(path).map_err(|e| DatasetError::io(path, e))?);
    file.write_all(manifest_to_string(records).as_bytes())
        .and_then(|_| file.flush())
        .map_err(|e| DatasetError::io(path, e))
}

/// Split sizes for `n` items by the largest-remainder method; ties go to
/// the earlier split.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<[usize; 3], DatasetError> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|x| !(x.is_finite() && *x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadRatios(ratios));
    }
    let exact: Vec<f64> = r.iter().map(|x| x * n as f64).collect();
    let mut sizes: [usize; 3] = [0; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n.saturating_sub(sizes.iter().sum());
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Shuffles record positions with `seed` and assigns TRAIN, VAL, TEST in
/// that order. Record order is preserved in the output.
pub fn split_dataset(
    records: &[DatasetRecord],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    let sizes = split_sizes(records.len(), ratios)?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = records.to_vec();
    let mut cursor = 0;
    for (split, size) in Split::ALL.iter().zip(sizes) {
        for &i in &order[cursor..cursor + size] {
            out[i].split = Some(*split);
        }
        cursor += size;
    }
    Ok(out)
}

/// Sentences are maximal text segments ended by a run of `.`, `?` or `!`,
/// plus any trailing unterminated text; whitespace-only segments are not
/// counted.
pub fn count_sentences(text: &str) -> usize {
    text.split(['.', '?', '!'])
        .filter(|segment| !segment.trim().is_empty())
        .count()
}

pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_programs: usize,
    pub avg_steps: f64,
    pub avg_sentences: f64,
    pub avg_words: f64,
    pub action_hist: BTreeMap<String, usize>,
    pub object_hist: BTreeMap<String, usize>,
}

/// Action and object-class occurrence counts for one program.
pub fn histograms(program: &Program) -> (BTreeMap<String, usize>, BTreeMap<String, usize>) {
    let mut actions = BTreeMap::new();
    let mut objects = BTreeMap::new();
    for step in &program.steps {
        *actions.entry(step.action.as_str().to_string()).or_insert(0) += 1;
        for m in &step.objects {
            *objects.entry(m.class_name.clone()).or_insert(0) += 1;
        }
    }
    (actions, objects)
}

pub fn compute_stats(records: &[DatasetRecord]) -> Result<DatasetStats, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::DegenerateInput);
    }
    let n = records.len() as f64;
    let (mut steps, mut sentences, mut words) = (0usize, 0usize, 0usize);
    let mut action_hist = BTreeMap::new();
    let mut object_hist = BTreeMap::new();
    for record in records {
        steps += record.program.len();
        sentences += count_sentences(&record.description);
        words += count_words(&record.description);
        let (a, o) = histograms(&record.program);
        for (k, v) in a {
            *action_hist.entry(k).or_insert(0) += v;
        }
        for (k, v) in o {
            *object_hist.entry(k).or_insert(0) += v;
        }
    }
    Ok(DatasetStats {
        n_programs: records.len(),
        avg_steps: steps as f64 / n,
        avg_sentences: sentences as f64 / n,
        avg_words: words as f64 / n,
        action_hist,
        object_hist,
    })
}

/// Rows `kind,token,count` for both histograms.
pub fn histogram_csv(stats: &DatasetStats) -> String {
    let mut out = String::from("kind,token,count\n");
    for (kind, hist) in [("action", &stats.action_hist), ("object", &stats.object_hist)] {
        for (token, count) in hist {
            out.push_str(&format!("{kind},{token},{count}\n"));
        }
    }
    out
}

/// Mean LCS and mean normalized LCS among programs sharing an activity
/// name, for every name with at least two programs.
pub fn diversity_by_name(records: &[DatasetRecord]) -> BTreeMap<String, (f64, f64)> {
    let mut groups: BTreeMap<&str, Vec<Program>> = BTreeMap::new();
    for r in records {
        if let Some(name) = &r.name {
            groups.entry(name).or_default().push(r.program.clone());
        }
    }
    groups
        .into_iter()
        .filter_map(|(name, programs)| match diversity_stats(&programs) {
            Ok(stats) => Some((name.to_string(), stats)),
            Err(MetricsError::DegenerateInput { .. }) => None,
            Err(e) => unreachable!("diversity has no other failure: {e}"),
        })
        .collect()
}

/// Text form of a record's program, one step per line.
pub fn program_text(record: &DatasetRecord) -> String {
    format_program(&record.program)
}
