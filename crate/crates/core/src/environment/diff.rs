use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Environment, ObjectInstance, ObjectState, Posture, Relation, RoomId, Uid};

/// One changed agent field, old value then new value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "field", rename_all = "snake_case")]
pub enum AgentChange {
    Room { from: RoomId, to: RoomId },
    Near { from: Option<Uid>, to: Option<Uid> },
    Held { from: Vec<Uid>, to: Vec<Uid> },
    Posture { from: Posture, to: Posture },
}

/// Changes to one pre-existing instance. Unchanged dimensions are `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceChange {
    pub uid: Uid,
    #[serde(rename = "class")]
    pub class_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<(BTreeSet<ObjectState>, BTreeSet<ObjectState>)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<(Option<Relation>, Option<Relation>)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<(RoomId, RoomId)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDiff {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agent: Vec<AgentChange>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instances: Vec<InstanceChange>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub added: Vec<ObjectInstance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed: Vec<Uid>,
}

impl StateDiff {
    pub fn between(before: &Environment, after: &Environment) -> StateDiff {
        let mut diff = StateDiff::default();
        let (a, b) = (&before.agent, &after.agent);
        if a.room != b.room {
            diff.agent.push(AgentChange::Room {
                from: a.room,
                to: b.room,
            });
        }
        if a.near != b.near {
            diff.agent.push(AgentChange::Near {
                from: a.near,
                to: b.near,
            });
        }
        if a.held != b.held {
            diff.agent.push(AgentChange::Held {
                from: a.held.clone(),
                to: b.held.clone(),
            });
        }
        if a.posture != b.posture {
            diff.agent.push(AgentChange::Posture {
                from: a.posture,
                to: b.posture,
            });
        }

        for (uid, old) in &before.instances {
            let Some(new) = after.instances.get(uid) else {
                diff.removed.push(*uid);
                continue;
            };
            let change = InstanceChange {
                uid: *uid,
                class_name: new.class_name.clone(),
                states: (old.states != new.states).then(|| (old.states.clone(), new.states.clone())),
                relation: (old.relation != new.relation).then_some((old.relation, new.relation)),
                room: (old.room != new.room).then_some((old.room, new.room)),
            };
            if change.states.is_some() || change.relation.is_some() || change.room.is_some() {
                diff.instances.push(change);
            }
        }
        diff.added = after
            .instances
            .values()
            .filter(|i| !before.instances.contains_key(&i.uid))
            .cloned()
            .collect();
        diff
    }

    pub fn is_empty(&self) -> bool {
        self.agent.is_empty() && self.instances.is_empty() && self.added.is_empty() && self.removed.is_empty()
    }

    /// Applies the new-side values of this diff to `env`.
    pub fn apply(&self, env: &mut Environment) {
        for change in &self.agent {
            match change {
                AgentChange::Room { to, .. } => env.agent.room = *to,
                AgentChange::Near { to, .. } => env.agent.near = *to,
                AgentChange::Held { to, .. } => env.agent.held = to.clone(),
                AgentChange::Posture { to, .. } => env.agent.posture = *to,
            }
        }
        for change in &self.instances {
            if let Some(inst) = env.instances.get_mut(&change.uid) {
                if let Some((_, states)) = &change.states {
                    inst.states = states.clone();
                }
                if let Some((_, relation)) = change.relation {
                    inst.relation = relation;
                }
                if let Some((_, room)) = change.room {
                    inst.room = room;
                }
            }
        }
        for uid in &self.removed {
            env.instances.remove(uid);
        }
        for inst in &self.added {
            env.instances.insert(inst.uid, inst.clone());
        }
    }
}

fn states_str(states: &BTreeSet<ObjectState>) -> String {
    if states.is_empty() {
        return "-".into();
    }
    states.iter().map(ToString::to_string).collect::<Vec<_>>().join("+")
}

fn opt<T: fmt::Display>(value: &Option<T>) -> String {
    value.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

impl fmt::Display for StateDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut lines = Vec::new();
        for change in &self.agent {
            lines.push(match change {
                AgentChange::Room { from, to } => format!("agent.room: {from}→{to}"),
                AgentChange::Near { from, to } => format!("agent.near: {}→{}", opt(from), opt(to)),
                AgentChange::Held { from, to } => format!("agent.held: {from:?}→{to:?}"),
                AgentChange::Posture { from, to } => format!("agent.posture: {from}→{to}"),
            });
        }
        for c in &self.instances {
            let tag = format!("{}[{}]", c.class_name, c.uid);
            if let Some((from, to)) = &c.states {
                lines.push(format!("{tag}: {}→{}", states_str(from), states_str(to)));
            }
            if let Some((from, to)) = &c.relation {
                lines.push(format!("{tag}.relation: {}→{}", opt(from), opt(to)));
            }
            if let Some((from, to)) = &c.room {
                lines.push(format!("{tag}.room: {from}→{to}"));
            }
        }
        for inst in &self.added {
            lines.push(format!("+{}[{}]", inst.class_name, inst.uid));
        }
        for uid in &self.removed {
            lines.push(format!("-[{uid}]"));
        }
        f.write_str(&lines.join("\n"))
    }
}
