#![allow(dead_code)]

use std::collections::BTreeMap;

use homeprog::environment::Uid;
use homeprog::executor::{execute_with_grounding, GroundingMap, Verdict};
use homeprog::program::{ActionName, ObjectMention, Program, Step};
use homeprog::Environment;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};

/// Class, properties, and the state pair to draw from.
const CLASSES: [(&str, &[&str], &[&str]); 6] = [
    ("CUP", &["GRABBABLE"], &[]),
    ("BOOK", &["GRABBABLE"], &[]),
    ("TABLE", &["SURFACE"], &[]),
    ("FRIDGE", &["OPENABLE", "CONTAINER"], &["OPEN", "CLOSED"]),
    ("LAMP", &["SWITCHABLE"], &["ON", "OFF"]),
    ("CHAIR", &["SITTABLE", "SURFACE"], &[]),
];

/// Two rooms, at most three instances per class, grabbables resting on a
/// table or inside a fridge in their room (or loose), and the agent
/// standing, sometimes holding something.
pub fn random_env<R: Rng>(rng: &mut R) -> Environment {
    let mut instances: Vec<Value> = Vec::new();
    let mut placed: Vec<(String, u32, u32)> = Vec::new();
    let mut uid = 0u32;
    for (class, props, states) in CLASSES {
        for _ in 0..rng.gen_range(0..=3) {
            uid += 1;
            let room = rng.gen_range(1..=2);
            let state: Vec<&str> = states.choose(rng).into_iter().copied().collect();
            instances.push(json!({"class": class, "uid": uid, "room": room, "properties": props, "states": state}));
            placed.push((class.to_string(), uid, room));
        }
    }
    let agent_room = rng.gen_range(1..=2u32);
    let mut held = Vec::new();
    for (inst, (class, uid, room)) in instances.iter_mut().zip(&placed) {
        if class != "CUP" && class != "BOOK" {
            continue;
        }
        if *room == agent_room && held.len() < 2 && rng.gen_bool(0.15) {
            held.push(*uid);
            continue;
        }
        let supports: Vec<(&str, u32)> = placed
            .iter()
            .filter(|(c, _, r)| r == room && (c == "TABLE" || c == "FRIDGE"))
            .map(|(c, u, _)| (if c == "TABLE" { "ON_TOP" } else { "INSIDE" }, *u))
            .collect();
        if let Some((kind, target)) = supports.choose(rng) {
            if rng.gen_bool(0.8) {
                inst["relation"] = json!({"kind": kind, "target": target});
            }
        }
    }
    let doc = json!({
        "name": "random",
        "rooms": [{"id": 1, "name": "kitchen"}, {"id": 2, "name": "den"}],
        "instances": instances,
        "agent": {"room": agent_room, "held": held, "posture": "STANDING"},
    });
    Environment::from_json_str(&doc.to_string()).expect("random environment is valid")
}

fn random_mention<R: Rng>(rng: &mut R, fitting: &[&'static str]) -> ObjectMention {
    let class = match fitting.choose(rng) {
        Some(class) if rng.gen_bool(0.8) => *class,
        _ => CLASSES.choose(rng).unwrap().0,
    };
    let id = if rng.gen_bool(0.75) { 1 } else { 2 };
    ObjectMention::new(class, id)
}

/// Classes whose properties suit the action's first (or only) argument.
fn fitting(action: &ActionName) -> &'static [&'static str] {
    use ActionName::*;
    match action {
        Grab | Put | Touch => &["CUP", "BOOK"],
        Open | Close => &["FRIDGE"],
        SwitchOn | SwitchOff => &["LAMP"],
        Sit => &["CHAIR"],
        _ => &[],
    }
}

/// Up to `max_len` steps over the executable vocabulary, with arguments
/// usually of a fitting class and usually preceded by a walk, so a fair
/// share of programs can execute.
pub fn random_program<R: Rng>(rng: &mut R, max_len: usize) -> Program {
    let len = rng.gen_range(1..=max_len);
    let mut steps = Vec::with_capacity(len);
    while steps.len() < len {
        let action = ActionName::EXECUTABLE.choose(rng).unwrap().clone();
        let objects: Vec<ObjectMention> = match action.arity() {
            Some(0) => vec![],
            Some(2) => vec![
                random_mention(rng, fitting(&action)),
                random_mention(rng, &["TABLE", "FRIDGE", "CHAIR"]),
            ],
            _ => vec![random_mention(rng, fitting(&action))],
        };
        let walk_first = !objects.is_empty() && action != ActionName::Walk && rng.gen_bool(0.8);
        if walk_first && steps.len() + 2 <= len {
            let target = objects.last().unwrap().clone();
            steps.push(Step::new(ActionName::Walk, vec![target]));
        }
        steps.push(Step::new(action, objects));
    }
    Program::new(steps)
}

/// Outcome of trying every grounding: whether some full assignment
/// executes, and the furthest step any partial assignment reaches before
/// failing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BruteVerdict {
    pub executable: bool,
    pub deepest_failure: Option<usize>,
}

pub fn brute_force(program: &Program, env: &Environment) -> BruteVerdict {
    let mentions: Vec<ObjectMention> = program.mentions().into_iter().cloned().collect();
    let mut by_class: BTreeMap<String, Vec<Uid>> = BTreeMap::new();
    for inst in env.instances.values() {
        by_class.entry(inst.class_name.clone()).or_default().push(inst.uid);
    }
    // each mention: None (left unbound) or any instance of its class
    let options: Vec<Vec<Option<Uid>>> = mentions
        .iter()
        .map(|m| {
            let mut opts = vec![None];
            opts.extend(by_class.get(&m.class_name).into_iter().flatten().copied().map(Some));
            opts
        })
        .collect();
    let mut verdict = BruteVerdict {
        executable: false,
        deepest_failure: None,
    };
    let mut choice = vec![0usize; mentions.len()];
    loop {
        let mut map = GroundingMap::new();
        let injective = mentions
            .iter()
            .zip(&options)
            .zip(&choice)
            .all(|((m, opts), &c)| match opts[c] {
                Some(uid) => map.bind(m, uid),
                None => true,
            });
        if injective {
            match execute_with_grounding(program, env, &map).verdict {
                Verdict::Executable => verdict.executable = true,
                Verdict::Failed { step, .. } => {
                    verdict.deepest_failure = Some(verdict.deepest_failure.map_or(step, |d| d.max(step)));
                }
            }
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == choice.len() {
                return verdict;
            }
            choice[i] += 1;
            if choice[i] < options[i].len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}
