//! Precondition/effect rules for the twelve executable actions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::environment::{Environment, ObjectState, Posture, Property, Relation, RelationKind, Uid};
use crate::program::ActionName;

use super::ExecError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Violation {
    NotNear,
    HandsFull,
    MissingProperty,
    /// Already open/closed/on/off.
    WrongState,
    NotHeld,
    AlreadyHeld,
    ContainerClosed,
    NotStanding,
    NotSitting,
    NotInRoom,
    /// Put would place an object on itself or on something it carries.
    SelfSupport,
    UnsupportedAction,
    Arity,
    UnknownTarget,
    /// No instance left to ground a mention to.
    Ungroundable,
}

impl Violation {
    pub fn code(self) -> &'static str {
        match self {
            Violation::NotNear => "NOT_NEAR",
            Violation::HandsFull => "HANDS_FULL",
            Violation::MissingProperty => "MISSING_PROPERTY",
            Violation::WrongState => "WRONG_STATE",
            Violation::NotHeld => "NOT_HELD",
            Violation::AlreadyHeld => "ALREADY_HELD",
            Violation::ContainerClosed => "CONTAINER_CLOSED",
            Violation::NotStanding => "NOT_STANDING",
            Violation::NotSitting => "NOT_SITTING",
            Violation::NotInRoom => "NOT_IN_ROOM",
            Violation::SelfSupport => "SELF_SUPPORT",
            Violation::UnsupportedAction => "UNSUPPORTED_ACTION",
            Violation::Arity => "ARITY",
            Violation::UnknownTarget => "UNKNOWN_TARGET",
            Violation::Ungroundable => "UNGROUNDABLE",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

fn require(ok: bool, violation: Violation) -> Result<(), Violation> {
    if ok {
        Ok(())
    } else {
        Err(violation)
    }
}

/// An object inside a closed openable container cannot be reached.
fn reachable(env: &Environment, x: Uid) -> Result<(), Violation> {
    if let Some(Relation {
        kind: RelationKind::Inside,
        target,
    }) = env.instances[&x].relation
    {
        let container = &env.instances[&target];
        if container.has(Property::Openable) && !container.is(ObjectState::Open) {
            return Err(Violation::ContainerClosed);
        }
    }
    Ok(())
}

/// `x` is the nearness target or rests directly on/in it.
fn near_covers(env: &Environment, x: Uid) -> Result<(), Violation> {
    let near = env.agent.near;
    let covered = near == Some(x)
        || env.instances[&x]
            .relation
            .map(|r| r.target)
            .is_some_and(|t| Some(t) == near);
    require(covered, Violation::NotNear)?;
    reachable(env, x)
}

fn near_exactly(env: &Environment, x: Uid) -> Result<(), Violation> {
    require(env.agent.near == Some(x), Violation::NotNear)
}

/// Returns the first violated precondition, or `Ok(())`.
pub fn check_step(env: &Environment, action: &ActionName, targets: &[Uid]) -> Result<(), Violation> {
    match action.arity() {
        None => return Err(Violation::UnsupportedAction),
        Some(n) if n != targets.len() => return Err(Violation::Arity),
        _ => {}
    }
    if targets.iter().any(|t| !env.instances.contains_key(t)) {
        return Err(Violation::UnknownTarget);
    }
    let agent = &env.agent;
    let standing = agent.posture == Posture::Standing;
    match action {
        ActionName::Walk | ActionName::Run => require(standing, Violation::NotStanding),
        ActionName::Grab => {
            let x = targets[0];
            require(env.instances[&x].has(Property::Grabbable), Violation::MissingProperty)?;
            require(!env.is_held(x), Violation::AlreadyHeld)?;
            near_covers(env, x)?;
            require(agent.free_hands() > 0, Violation::HandsFull)
        }
        ActionName::Open | ActionName::Close => {
            let x = targets[0];
            let inst = &env.instances[&x];
            require(inst.has(Property::Openable), Violation::MissingProperty)?;
            near_exactly(env, x)?;
            let from = if *action == ActionName::Open {
                ObjectState::Closed
            } else {
                ObjectState::Open
            };
            require(inst.is(from), Violation::WrongState)?;
            require(agent.free_hands() > 0, Violation::HandsFull)
        }
        ActionName::SwitchOn | ActionName::SwitchOff => {
            let x = targets[0];
            let inst = &env.instances[&x];
            require(inst.has(Property::Switchable), Violation::MissingProperty)?;
            near_exactly(env, x)?;
            let from = if *action == ActionName::SwitchOn {
                ObjectState::Off
            } else {
                ObjectState::On
            };
            require(inst.is(from), Violation::WrongState)
        }
        ActionName::Put => {
            let (x, y) = (targets[0], targets[1]);
            require(env.is_held(x), Violation::NotHeld)?;
            require(x != y && !env.is_held(y), Violation::SelfSupport)?;
            require(
                !env.support_chain(y).unwrap_or_default().contains(&x),
                Violation::SelfSupport,
            )?;
            near_exactly(env, y)?;
            placement(env, y).map(|_| ())
        }
        ActionName::Sit => {
            let x = targets[0];
            require(env.instances[&x].has(Property::Sittable), Violation::MissingProperty)?;
            near_exactly(env, x)?;
            require(standing, Violation::NotStanding)
        }
        ActionName::StandUp => require(matches!(agent.posture, Posture::Sitting(_)), Violation::NotSitting),
        ActionName::LookAt => require(env.instances[&targets[0]].room == agent.room, Violation::NotInRoom),
        ActionName::Touch => {
            let x = targets[0];
            if env.is_held(x) {
                Ok(())
            } else {
                near_covers(env, x)
            }
        }
        ActionName::Other(_) => Err(Violation::UnsupportedAction),
    }
}

/// How `Put` attaches an object to `y`: surfaces first, then containers.
fn placement(env: &Environment, y: Uid) -> Result<RelationKind, Violation> {
    let support = &env.instances[&y];
    if support.has(Property::Surface) {
        Ok(RelationKind::OnTop)
    } else if support.has(Property::Container) {
        if support.has(Property::Openable) && !support.is(ObjectState::Open) {
            Err(Violation::ContainerClosed)
        } else {
            Ok(RelationKind::Inside)
        }
    } else {
        Err(Violation::MissingProperty)
    }
}

/// Moves `uid` and everything resting on it into the agent's room.
fn relocate(env: &mut Environment, uid: Uid, room: crate::environment::RoomId) {
    let mut moved = env.dependents(uid);
    moved.push(uid);
    for m in moved {
        if let Some(inst) = env.instances.get_mut(&m) {
            inst.room = room;
        }
    }
}

fn flip(env: &mut Environment, x: Uid, from: ObjectState, to: ObjectState) {
    let states = &mut env.instances.get_mut(&x).expect("checked target").states;
    states.remove(&from);
    states.insert(to);
}

pub(super) fn apply_in_place(env: &mut Environment, action: &ActionName, targets: &[Uid]) {
    match action {
        ActionName::Walk | ActionName::Run => {
            let x = targets[0];
            let room = env.instances[&x].room;
            env.agent.room = room;
            env.agent.near = Some(x);
            for held in env.agent.held.clone() {
                relocate(env, held, room);
            }
        }
        ActionName::Grab => {
            let x = targets[0];
            let room = env.agent.room;
            env.instances.get_mut(&x).expect("checked target").relation = None;
            env.agent.held.push(x);
            relocate(env, x, room);
        }
        ActionName::Open => flip(env, targets[0], ObjectState::Closed, ObjectState::Open),
        ActionName::Close => flip(env, targets[0], ObjectState::Open, ObjectState::Closed),
        ActionName::SwitchOn => flip(env, targets[0], ObjectState::Off, ObjectState::On),
        ActionName::SwitchOff => flip(env, targets[0], ObjectState::On, ObjectState::Off),
        ActionName::Put => {
            let (x, y) = (targets[0], targets[1]);
            let kind = placement(env, y).expect("checked placement");
            let room = env.instances[&y].room;
            env.agent.held.retain(|h| *h != x);
            env.instances.get_mut(&x).expect("checked target").relation = Some(Relation { kind, target: y });
            relocate(env, x, room);
        }
        ActionName::Sit => env.agent.posture = Posture::Sitting(targets[0]),
        ActionName::StandUp => env.agent.posture = Posture::Standing,
        ActionName::LookAt | ActionName::Touch | ActionName::Other(_) => {}
    }
}

/// Applies the effects of a step whose preconditions hold.
pub fn apply_step(env: &Environment, action: &ActionName, targets: &[Uid]) -> Result<Environment, ExecError> {
    check_step(env, action, targets).map_err(|violation| ExecError::ContractViolation {
        action: action.to_string(),
        violation,
    })?;
    let mut next = env.clone();
    apply_in_place(&mut next, action, targets);
    Ok(next)
}
