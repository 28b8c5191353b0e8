//! Symbolic home: rooms, object instances, and the agent.

mod diff;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use diff::{AgentChange, InstanceChange, StateDiff};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Uid(pub u32);

impl fmt::Display for Uid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoomId(pub u32);

impl fmt::Display for RoomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Property {
    Grabbable,
    Openable,
    Switchable,
    Surface,
    Container,
    Sittable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectState {
    Open,
    Closed,
    On,
    Off,
}

impl fmt::Display for ObjectState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectState::Open => "OPEN",
            ObjectState::Closed => "CLOSED",
            ObjectState::On => "ON",
            ObjectState::Off => "OFF",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RelationKind {
    OnTop,
    Inside,
}

impl RelationKind {
    /// Property the relation target must carry.
    pub fn required_property(self) -> Property {
        match self {
            RelationKind::OnTop => Property::Surface,
            RelationKind::Inside => Property::Container,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub kind: RelationKind,
    pub target: Uid,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            RelationKind::OnTop => "ON_TOP",
            RelationKind::Inside => "INSIDE",
        };
        write!(f, "{kind}({})", self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectInstance {
    #[serde(rename = "class")]
    pub class_name: String,
    pub uid: Uid,
    pub room: RoomId,
    #[serde(default)]
    pub properties: BTreeSet<Property>,
    #[serde(default)]
    pub states: BTreeSet<ObjectState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
}

impl ObjectInstance {
    pub fn has(&self, property: Property) -> bool {
        self.properties.contains(&property)
    }

    pub fn is(&self, state: ObjectState) -> bool {
        self.states.contains(&state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Posture {
    Standing,
    Sitting(Uid),
}

impl fmt::Display for Posture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Posture::Standing => f.write_str("STANDING"),
            Posture::Sitting(uid) => write!(f, "SITTING({uid})"),
        }
    }
}

pub const HAND_SLOTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Agent {
    pub room: RoomId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<Uid>,
    #[serde(default)]
    pub held: Vec<Uid>,
    pub posture: Posture,
}

impl Agent {
    pub fn free_hands(&self) -> usize {
        HAND_SLOTS.saturating_sub(self.held.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    pub id: RoomId,
    pub name: String,
}

/// Wire shape of an environment document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentDoc {
    name: String,
    rooms: Vec<Room>,
    instances: Vec<ObjectInstance>,
    agent: Agent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Environment {
    pub name: String,
    pub rooms: Vec<Room>,
    pub instances: BTreeMap<Uid, ObjectInstance>,
    pub agent: Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> EnvError {
    EnvError::Schema {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Parses and checks an environment document.
pub fn load_environment(doc: &serde_json::Value) -> Result<Environment, EnvError> {
    let parsed: EnvironmentDoc = serde_path_to_error::deserialize(doc).map_err(|err| {
        let path = err.path().to_string();
        schema(path, err.into_inner().to_string())
    })?;
    Environment::from_doc(parsed)
}

impl Environment {
    pub fn from_json_str(text: &str) -> Result<Environment, EnvError> {
        let doc: serde_json::Value = serde_json::from_str(text).map_err(|err| schema("$", err.to_string()))?;
        load_environment(&doc)
    }

    fn from_doc(doc: EnvironmentDoc) -> Result<Environment, EnvError> {
        let mut room_ids = BTreeSet::new();
        for (i, room) in doc.rooms.iter().enumerate() {
            if !room_ids.insert(room.id) {
                return Err(schema(
                    format!("rooms[{i}].id"),
                    format!("duplicate room id {}", room.id),
                ));
            }
        }
        if room_ids.is_empty() {
            return Err(schema("rooms", "at least one room is required"));
        }

        let mut instances = BTreeMap::new();
        for (i, inst) in doc.instances.iter().enumerate() {
            if !room_ids.contains(&inst.room) {
                return Err(schema(
                    format!("instances[{i}].room"),
                    format!("unknown room {}", inst.room),
                ));
            }
            if inst.class_name.is_empty() || !inst.class_name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(schema(format!("instances[{i}].class"), "invalid class name"));
            }
            let mut inst = inst.clone();
            inst.class_name = inst.class_name.to_ascii_uppercase();
            if instances.insert(inst.uid, inst.clone()).is_some() {
                return Err(schema(
                    format!("instances[{i}].uid"),
                    format!("duplicate uid {}", inst.uid),
                ));
            }
        }
        for (i, inst) in doc.instances.iter().enumerate() {
            if let Some(rel) = inst.relation {
                if !instances.contains_key(&rel.target) {
                    return Err(schema(
                        format!("instances[{i}].relation.target"),
                        format!("unknown uid {}", rel.target),
                    ));
                }
            }
        }

        if !room_ids.contains(&doc.agent.room) {
            return Err(schema("agent.room", format!("unknown room {}", doc.agent.room)));
        }
        if let Some(near) = doc.agent.near {
            if !instances.contains_key(&near) {
                return Err(schema("agent.near", format!("unknown uid {near}")));
            }
        }
        for (i, held) in doc.agent.held.iter().enumerate() {
            if !instances.contains_key(held) {
                return Err(schema(format!("agent.held[{i}]"), format!("unknown uid {held}")));
            }
        }
        if let Posture::Sitting(seat) = doc.agent.posture {
            if !instances.contains_key(&seat) {
                return Err(schema("agent.posture", format!("unknown uid {seat}")));
            }
        }

        let env = Environment {
            name: doc.name,
            rooms: doc.rooms,
            instances,
            agent: doc.agent,
        };
        env.check_invariants()?;
        Ok(env)
    }

    /// Verifies every structural invariant. Referential problems are
    /// reported as invariant errors here; `load_environment` catches them
    /// earlier with a document path.
    pub fn check_invariants(&self) -> Result<(), EnvError> {
        let invariant = |msg: String| Err(EnvError::Invariant(msg));
        for inst in self.instances.values() {
            let tag = format!("{}[{}]", inst.class_name, inst.uid);
            if !self.has_room(inst.room) {
                return invariant(format!("{tag} is in unknown room {}", inst.room));
            }
            if inst.is(ObjectState::Open) && inst.is(ObjectState::Closed) {
                return invariant(format!("{tag} is both OPEN and CLOSED"));
            }
            if inst.is(ObjectState::On) && inst.is(ObjectState::Off) {
                return invariant(format!("{tag} is both ON and OFF"));
            }
            if (inst.is(ObjectState::Open) || inst.is(ObjectState::Closed)) && !inst.has(Property::Openable) {
                return invariant(format!("{tag} has an open/closed state but is not OPENABLE"));
            }
            if (inst.is(ObjectState::On) || inst.is(ObjectState::Off)) && !inst.has(Property::Switchable) {
                return invariant(format!("{tag} has an on/off state but is not SWITCHABLE"));
            }
            if let Some(rel) = inst.relation {
                let Some(target) = self.instances.get(&rel.target) else {
                    return invariant(format!("{tag} relates to unknown uid {}", rel.target));
                };
                if rel.target == inst.uid {
                    return invariant(format!("{tag} supports itself"));
                }
                if !target.has(rel.kind.required_property()) {
                    return invariant(format!(
                        "{tag} is {rel} but {}[{}] lacks {:?}",
                        target.class_name,
                        target.uid,
                        rel.kind.required_property()
                    ));
                }
                if target.room != inst.room {
                    return invariant(format!("{tag} and its support are in different rooms"));
                }
            }
        }
        for inst in self.instances.values() {
            if self.support_chain(inst.uid).is_none() {
                return invariant(format!("{}[{}] has a cyclic support chain", inst.class_name, inst.uid));
            }
        }

        let agent = &self.agent;
        if !self.has_room(agent.room) {
            return invariant(format!("agent is in unknown room {}", agent.room));
        }
        if agent.held.len() > HAND_SLOTS {
            return invariant(format!("agent holds {} objects", agent.held.len()));
        }
        let distinct: BTreeSet<_> = agent.held.iter().collect();
        if distinct.len() != agent.held.len() {
            return invariant("agent holds the same object twice".into());
        }
        for uid in &agent.held {
            let Some(inst) = self.instances.get(uid) else {
                return invariant(format!("agent holds unknown uid {uid}"));
            };
            if inst.relation.is_some() {
                return invariant(format!("held object {uid} still has a spatial relation"));
            }
            if inst.room != agent.room {
                return invariant(format!("held object {uid} is not in the agent's room"));
            }
        }
        if let Some(near) = agent.near {
            if !self.instances.contains_key(&near) {
                return invariant(format!("agent is near unknown uid {near}"));
            }
        }
        if let Posture::Sitting(seat) = agent.posture {
            if agent.near != Some(seat) {
                return invariant(format!("agent sits on {seat} but is not near it"));
            }
        }
        Ok(())
    }

    pub fn has_room(&self, room: RoomId) -> bool {
        self.rooms.iter().any(|r| r.id == room)
    }

    pub fn room_name(&self, room: RoomId) -> Option<&str> {
        self.rooms.iter().find(|r| r.id == room).map(|r| r.name.as_str())
    }

    pub fn get(&self, uid: Uid) -> Option<&ObjectInstance> {
        self.instances.get(&uid)
    }

    pub fn is_held(&self, uid: Uid) -> bool {
        self.agent.held.contains(&uid)
    }

    /// Supports below `uid`, nearest first. `None` if the chain loops.
    pub fn support_chain(&self, uid: Uid) -> Option<Vec<Uid>> {
        let mut chain = Vec::new();
        let mut current = self.instances.get(&uid)?.relation;
        while let Some(rel) = current {
            if rel.target == uid || chain.contains(&rel.target) {
                return None;
            }
            chain.push(rel.target);
            current = self.instances.get(&rel.target).and_then(|i| i.relation);
        }
        Some(chain)
    }

    /// Objects resting on or inside `uid`, transitively.
    pub fn dependents(&self, uid: Uid) -> Vec<Uid> {
        let mut out = Vec::new();
        let mut frontier = vec![uid];
        while let Some(current) = frontier.pop() {
            for inst in self.instances.values() {
                if inst.relation.map(|r| r.target) == Some(current) && !out.contains(&inst.uid) && inst.uid != uid {
                    out.push(inst.uid);
                    frontier.push(inst.uid);
                }
            }
        }
        out.sort();
        out
    }

    pub fn max_uid(&self) -> Option<Uid> {
        self.instances.keys().next_back().copied()
    }

    pub fn count_class(&self, class_name: &str) -> usize {
        self.instances.values().filter(|i| i.class_name == class_name).count()
    }

    fn to_doc(&self) -> EnvironmentDoc {
        EnvironmentDoc {
            name: self.name.clone(),
            rooms: self.rooms.clone(),
            instances: self.instances.values().cloned().collect(),
            agent: self.agent.clone(),
        }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_doc()).expect("environment serializes")
    }

    /// Compact canonical JSON: instances in uid order, sets sorted.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("environment serializes")
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("environment serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }
}

/// Instances of `class_name`, those in the agent's room first, then by uid.
pub fn query_instances(env: &Environment, class_name: &str) -> Vec<Uid> {
    let class_name = class_name.to_ascii_uppercase();
    let mut uids: Vec<(bool, Uid)> = env
        .instances
        .values()
        .filter(|i| i.class_name == class_name)
        .map(|i| (i.room != env.agent.room, i.uid))
        .collect();
    uids.sort();
    uids.into_iter().map(|(_, uid)| uid).collect()
}

pub fn snapshot(env: &Environment) -> Environment {
    env.clone()
}

pub fn diff(before: &Environment, after: &Environment) -> StateDiff {
    StateDiff::between(before, after)
}
