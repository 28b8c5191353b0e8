//! Seeded probabilistic grammar for synthetic programs and their
//! templated descriptions.
//!
//! A program is a short sequence of episodes. Each episode kind expands to
//! a fixed step schema, and the sampler tracks just enough state (free
//! hands, appliances left on, stored items already taken) to only emit
//! chains that execute once the scene has been prepared.

mod describe;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetRecord;
use crate::environment::{Property, HAND_SLOTS};
use crate::program::{ActionName, ObjectMention, Program, Step};
use crate::scene::PlacementKB;

pub use describe::{describe, describe_episodes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EpisodeKind {
    FetchPlace,
    UseAppliance,
    Relax,
    OpenFetch,
    Inspect,
}

impl EpisodeKind {
    pub const ALL: [EpisodeKind; 5] = [
        EpisodeKind::FetchPlace,
        EpisodeKind::UseAppliance,
        EpisodeKind::Relax,
        EpisodeKind::OpenFetch,
        EpisodeKind::Inspect,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EpisodeKind::FetchPlace => "fetch_place",
            EpisodeKind::UseAppliance => "use_appliance",
            EpisodeKind::Relax => "relax",
            EpisodeKind::OpenFetch => "open_fetch",
            EpisodeKind::Inspect => "inspect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PoolRole {
    /// Loose grabbable object that lives on surfaces.
    Item,
    /// Grabbable object kept inside a container class.
    Stored,
    Container,
    Appliance,
    Seat,
    Surface,
}

impl PoolRole {
    fn required_properties(self) -> &'static [Property] {
        match self {
            PoolRole::Item | PoolRole::Stored => &[Property::Grabbable],
            PoolRole::Container => &[Property::Openable, Property::Container],
            PoolRole::Appliance => &[Property::Switchable],
            PoolRole::Seat => &[Property::Sittable],
            PoolRole::Surface => &[Property::Surface],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolEntry {
    #[serde(rename = "class")]
    pub class_name: String,
    pub role: PoolRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarConfig {
    pub seed: u64,
    pub min_episodes: usize,
    pub max_episodes: usize,
    #[serde(default = "default_switch_off")]
    pub switch_off_probability: f64,
    pub episode_weights: BTreeMap<EpisodeKind, f64>,
    pub object_pool: Vec<PoolEntry>,
    /// Template key (episode kind, optionally with a variant suffix) to
    /// sentence templates.
    pub templates: BTreeMap<String, Vec<String>>,
    pub synonyms: BTreeMap<String, Vec<String>>,
}

fn default_switch_off() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("grammar config: {0}")]
    Config(String),
    #[error("no template for {0}")]
    TemplateMissing(String),
}

impl GrammarConfig {
    pub fn from_json_str(text: &str) -> Result<GrammarConfig, GenError> {
        let cfg: GrammarConfig = serde_json::from_str(text).map_err(|e| GenError::Config(e.to_string()))?;
        cfg.check_shape()?;
        Ok(cfg)
    }

    pub fn bundled() -> GrammarConfig {
        GrammarConfig::from_json_str(crate::bundled::GRAMMAR).expect("bundled grammar is valid")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn pool(&self, role: PoolRole) -> Vec<&PoolEntry> {
        self.object_pool.iter().filter(|e| e.role == role).collect()
    }

    fn check_shape(&self) -> Result<(), GenError> {
        let bad = |msg: String| Err(GenError::Config(msg));
        if self.min_episodes == 0 || self.min_episodes > self.max_episodes {
            return bad(format!(
                "episode bounds {}..={} must satisfy 1 <= min <= max",
                self.min_episodes, self.max_episodes
            ));
        }
        if !(0.0..=1.0).contains(&self.switch_off_probability) {
            return bad("switch_off_probability must be in [0, 1]".into());
        }
        if self.episode_weights.is_empty() {
            return bad("no episode kinds weighted".into());
        }
        for (kind, w) in &self.episode_weights {
            if !(w.is_finite() && *w > 0.0) {
                return bad(format!("{kind:?} weight must be positive"));
            }
            let roles: &[PoolRole] = match kind {
                EpisodeKind::FetchPlace => &[PoolRole::Item, PoolRole::Surface],
                EpisodeKind::UseAppliance => &[PoolRole::Appliance],
                EpisodeKind::Relax => &[PoolRole::Seat],
                EpisodeKind::OpenFetch => &[PoolRole::Stored, PoolRole::Container],
                EpisodeKind::Inspect => &[],
            };
            for role in roles {
                if self.pool(*role).is_empty() {
                    return bad(format!("{kind:?} needs a non-empty {role:?} pool"));
                }
            }
        }
        if self.object_pool.is_empty() {
            return bad("empty object pool".into());
        }
        let containers: BTreeSet<&str> = self
            .pool(PoolRole::Container)
            .iter()
            .map(|e| e.class_name.as_str())
            .collect();
        for entry in &self.object_pool {
            if entry.role == PoolRole::Stored {
                match &entry.container {
                    Some(c) if containers.contains(c.as_str()) => {}
                    _ => return bad(format!("stored class {} needs a pooled container", entry.class_name)),
                }
            }
        }
        Ok(())
    }

    /// Checks that every pooled class is covered by `kb` with the
    /// properties its role needs.
    pub fn validate(&self, kb: &PlacementKB) -> Result<(), GenError> {
        self.check_shape()?;
        for entry in &self.object_pool {
            let Some(kb_class) = kb.get(&entry.class_name) else {
                return Err(GenError::Config(format!(
                    "{} is not in the placement KB",
                    entry.class_name
                )));
            };
            for p in entry.role.required_properties() {
                if !kb_class.properties.contains(p) {
                    return Err(GenError::Config(format!(
                        "{} ({:?}) lacks {p:?} in the placement KB",
                        entry.class_name, entry.role
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One sampled episode with its resolved mentions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Episode {
    FetchPlace {
        item: ObjectMention,
        surface: ObjectMention,
    },
    UseAppliance {
        appliance: ObjectMention,
        switch_off: bool,
    },
    Relax {
        seat: ObjectMention,
    },
    OpenFetch {
        container: ObjectMention,
        item: ObjectMention,
    },
    Inspect {
        target: ObjectMention,
        touch: bool,
    },
}

impl Episode {
    pub fn kind(&self) -> EpisodeKind {
        match self {
            Episode::FetchPlace { .. } => EpisodeKind::FetchPlace,
            Episode::UseAppliance { .. } => EpisodeKind::UseAppliance,
            Episode::Relax { .. } => EpisodeKind::Relax,
            Episode::OpenFetch { .. } => EpisodeKind::OpenFetch,
            Episode::Inspect { .. } => EpisodeKind::Inspect,
        }
    }

    pub fn steps(&self) -> Vec<Step> {
        use ActionName::*;
        let one = |a: ActionName, m: &ObjectMention| Step::new(a, vec![m.clone()]);
        match self {
            Episode::FetchPlace { item, surface } => vec![
                one(Walk, item),
                one(Grab, item),
                one(Walk, surface),
                Step::new(Put, vec![item.clone(), surface.clone()]),
            ],
            Episode::UseAppliance { appliance, switch_off } => {
                let mut steps = vec![one(Walk, appliance), one(SwitchOn, appliance)];
                if *switch_off {
                    steps.push(one(SwitchOff, appliance));
                }
                steps
            }
            Episode::Relax { seat } => vec![one(Walk, seat), one(Sit, seat), Step::new(StandUp, vec![])],
            Episode::OpenFetch { container, item } => vec![
                one(Walk, container),
                one(Open, container),
                one(Grab, item),
                one(Close, container),
            ],
            Episode::Inspect { target, touch } => {
                vec![one(Walk, target), one(if *touch { Touch } else { LookAt }, target)]
            }
        }
    }
}

pub fn program_from_episodes(episodes: &[Episode]) -> Program {
    Program::new(episodes.iter().flat_map(Episode::steps).collect())
}

/// Splits a program back into episodes by matching step schemata.
pub fn recover_episodes(program: &Program) -> Result<Vec<Episode>, GenError> {
    use ActionName::*;
    let steps = &program.steps;
    let mut out = Vec::new();
    let mut i = 0;
    let arg = |k: usize, n: usize| steps.get(k).and_then(|s| s.objects.get(n)).cloned();
    let action = |k: usize| steps.get(k).map(|s| &s.action);
    while i < steps.len() {
        let unknown = || GenError::TemplateMissing(format!("step {} `{}`", i + 1, steps[i]));
        if action(i) != Some(&Walk) {
            return Err(unknown());
        }
        let first = arg(i, 0).ok_or_else(unknown)?;
        let same = |k: usize| arg(k, 0).as_ref() == Some(&first);
        let (episode, len) = match action(i + 1) {
            Some(Grab) if same(i + 1) && action(i + 2) == Some(&Walk) && action(i + 3) == Some(&Put) => {
                let surface = arg(i + 2, 0).ok_or_else(unknown)?;
                if arg(i + 3, 0).as_ref() != Some(&first) || arg(i + 3, 1).as_ref() != Some(&surface) {
                    return Err(unknown());
                }
                (Episode::FetchPlace { item: first, surface }, 4)
            }
            Some(SwitchOn) if same(i + 1) => {
                let off = action(i + 2) == Some(&SwitchOff) && same(i + 2);
                (
                    Episode::UseAppliance {
                        appliance: first,
                        switch_off: off,
                    },
                    if off { 3 } else { 2 },
                )
            }
            Some(Sit) if same(i + 1) && action(i + 2) == Some(&StandUp) => (Episode::Relax { seat: first }, 3),
            Some(Open)
                if same(i + 1) && action(i + 2) == Some(&Grab) && action(i + 3) == Some(&Close) && same(i + 3) =>
            {
                let item = arg(i + 2, 0).ok_or_else(unknown)?;
                (Episode::OpenFetch { container: first, item }, 4)
            }
            Some(a @ (LookAt | Touch)) if same(i + 1) => (
                Episode::Inspect {
                    target: first,
                    touch: *a == Touch,
                },
                2,
            ),
            _ => return Err(unknown()),
        };
        out.push(episode);
        i += len;
    }
    Ok(out)
}

/// Sampler state threaded through one program.
struct Sampler<'a> {
    cfg: &'a GrammarConfig,
    held: usize,
    next_id: HashMap<String, u32>,
    appliances_on: BTreeSet<String>,
    stored_taken: BTreeSet<String>,
}

impl<'a> Sampler<'a> {
    fn new(cfg: &'a GrammarConfig) -> Self {
        Sampler {
            cfg,
            held: 0,
            next_id: HashMap::new(),
            appliances_on: BTreeSet::new(),
            stored_taken: BTreeSet::new(),
        }
    }

    /// Fixtures keep id 1 so every episode refers to the same instance.
    fn fixture(entry: &PoolEntry) -> ObjectMention {
        ObjectMention::new(&entry.class_name, 1)
    }

    fn fresh(&mut self, class_name: &str) -> ObjectMention {
        let id = self.next_id.entry(class_name.to_string()).or_insert(0);
        *id += 1;
        ObjectMention::new(class_name, *id)
    }

    fn available_stored(&self) -> Vec<&'a PoolEntry> {
        self.cfg
            .pool(PoolRole::Stored)
            .into_iter()
            .filter(|e| !self.stored_taken.contains(&e.class_name))
            .collect()
    }

    fn available_appliances(&self) -> Vec<&'a PoolEntry> {
        self.cfg
            .pool(PoolRole::Appliance)
            .into_iter()
            .filter(|e| !self.appliances_on.contains(&e.class_name))
            .collect()
    }

    fn feasible(&self, kind: EpisodeKind) -> bool {
        match kind {
            // grab then put: one free hand
            EpisodeKind::FetchPlace => self.held < HAND_SLOTS,
            // open, grab, and close each need a free hand afterwards
            EpisodeKind::OpenFetch => self.held + 1 < HAND_SLOTS && !self.available_stored().is_empty(),
            EpisodeKind::UseAppliance => !self.available_appliances().is_empty(),
            EpisodeKind::Relax => !self.cfg.pool(PoolRole::Seat).is_empty(),
            EpisodeKind::Inspect => self.cfg.object_pool.iter().any(|e| e.role != PoolRole::Stored),
        }
    }

    fn sample<R: Rng + ?Sized>(&mut self, kind: EpisodeKind, rng: &mut R) -> Episode {
        let cfg = self.cfg;
        match kind {
            EpisodeKind::FetchPlace => {
                let item = *cfg.pool(PoolRole::Item).choose(rng).expect("checked pool");
                let surface = *cfg.pool(PoolRole::Surface).choose(rng).expect("checked pool");
                Episode::FetchPlace {
                    item: self.fresh(&item.class_name),
                    surface: Self::fixture(surface),
                }
            }
            EpisodeKind::UseAppliance => {
                let appliance = *self.available_appliances().choose(rng).expect("feasible");
                let switch_off = rng.gen_bool(cfg.switch_off_probability);
                if !switch_off {
                    self.appliances_on.insert(appliance.class_name.clone());
                }
                Episode::UseAppliance {
                    appliance: Self::fixture(appliance),
                    switch_off,
                }
            }
            EpisodeKind::Relax => {
                let seat = *cfg.pool(PoolRole::Seat).choose(rng).expect("checked pool");
                Episode::Relax {
                    seat: Self::fixture(seat),
                }
            }
            EpisodeKind::OpenFetch => {
                let item = *self.available_stored().choose(rng).expect("feasible");
                self.stored_taken.insert(item.class_name.clone());
                self.held += 1;
                let container = item.container.as_deref().expect("checked shape");
                Episode::OpenFetch {
                    container: ObjectMention::new(container, 1),
                    item: ObjectMention::new(&item.class_name, 1),
                }
            }
            EpisodeKind::Inspect => {
                let candidates: Vec<&PoolEntry> =
                    cfg.object_pool.iter().filter(|e| e.role != PoolRole::Stored).collect();
                let entry = *candidates.choose(rng).expect("feasible");
                let target = if entry.role == PoolRole::Item {
                    match self.next_id.get(&entry.class_name).copied() {
                        // revisit an item placed earlier in this program
                        Some(used) if rng.gen_bool(0.5) => {
                            ObjectMention::new(&entry.class_name, rng.gen_range(1..=used))
                        }
                        _ => self.fresh(&entry.class_name),
                    }
                } else {
                    Self::fixture(entry)
                };
                Episode::Inspect {
                    target,
                    touch: rng.gen_bool(0.5),
                }
            }
        }
    }
}

/// Samples the episode list behind one program.
pub fn generate_episodes<R: Rng + ?Sized>(cfg: &GrammarConfig, rng: &mut R) -> Result<Vec<Episode>, GenError> {
    cfg.check_shape()?;
    let count = rng.gen_range(cfg.min_episodes..=cfg.max_episodes);
    let mut sampler = Sampler::new(cfg);
    let mut episodes = Vec::with_capacity(count);
    for _ in 0..count {
        let options: Vec<(EpisodeKind, f64)> = cfg
            .episode_weights
            .iter()
            .filter(|(k, _)| sampler.feasible(**k))
            .map(|(k, w)| (*k, *w))
            .collect();
        if options.is_empty() {
            break;
        }
        let dist = WeightedIndex::new(options.iter().map(|o| o.1)).map_err(|e| GenError::Config(e.to_string()))?;
        let kind = options[dist.sample(rng)].0;
        episodes.push(sampler.sample(kind, rng));
    }
    Ok(episodes)
}

pub fn generate_program<R: Rng + ?Sized>(cfg: &GrammarConfig, rng: &mut R) -> Result<Program, GenError> {
    Ok(program_from_episodes(&generate_episodes(cfg, rng)?))
}

/// Random stream for item `index`: independent of every other index.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn generate_record(cfg: &GrammarConfig, index: u64) -> Result<DatasetRecord, GenError> {
    let mut rng = item_rng(cfg.seed, index);
    let episodes = generate_episodes(cfg, &mut rng)?;
    let description = describe_episodes(&episodes, cfg, &mut rng)?;
    let mut program = program_from_episodes(&episodes);
    let id = format!("synth-{}-{index}", cfg.seed);
    let name = episodes.first().map(|e| e.kind().label().to_string());
    program.source_id = Some(id.clone());
    program.name = name.clone();
    Ok(DatasetRecord {
        id,
        name,
        description,
        program,
        env_ref: None,
        split: None,
    })
}

/// `n` description/program pairs, ids `synth-<seed>-<k>`.
pub fn generate_dataset(cfg: &GrammarConfig, n: usize) -> Result<Vec<DatasetRecord>, GenError> {
    (0..n as u64).map(|k| generate_record(cfg, k)).collect()
}
