//! Placement knowledge base and scene preparation.
//!
//! Before a program runs, every class it mentions must have at least as
//! many instances as the highest id the program uses for that class.
//! Missing instances are created with the KB's default properties and
//! states and placed on or inside a support sampled by weight.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{
    query_instances, Environment, ObjectInstance, ObjectState, Property, Relation, RelationKind, Uid,
};
use crate::program::Program;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportEntry {
    #[serde(rename = "class")]
    pub class_name: String,
    pub kind: RelationKind,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbClass {
    pub supports: Vec<SupportEntry>,
    #[serde(default)]
    pub properties: BTreeSet<Property>,
    #[serde(default)]
    pub states: BTreeSet<ObjectState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementKB {
    classes: BTreeMap<String, KbClass>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("placement KB: {0}")]
    InvalidKb(String),
    #[error("class {0} is neither in the environment nor in the placement KB")]
    UnknownClass(String),
    #[error("no support available for {0}")]
    NoSupportAvailable(String),
}

impl PlacementKB {
    pub fn from_json_str(text: &str) -> Result<PlacementKB, SceneError> {
        let raw: BTreeMap<String, KbClass> =
            serde_json::from_str(text).map_err(|e| SceneError::InvalidKb(e.to_string()))?;
        PlacementKB::new(raw)
    }

    pub fn new(raw: BTreeMap<String, KbClass>) -> Result<PlacementKB, SceneError> {
        let mut classes = BTreeMap::new();
        for (name, mut entry) in raw {
            let name = name.to_ascii_uppercase();
            for support in &mut entry.supports {
                support.class_name = support.class_name.to_ascii_uppercase();
            }
            classes.insert(name, entry);
        }
        let kb = PlacementKB { classes };
        kb.check()?;
        Ok(kb)
    }

    pub fn bundled() -> PlacementKB {
        PlacementKB::from_json_str(crate::bundled::PLACEMENT_KB).expect("bundled KB is valid")
    }

    fn check(&self) -> Result<(), SceneError> {
        let bad = |msg: String| Err(SceneError::InvalidKb(msg));
        for (name, entry) in &self.classes {
            if entry.supports.is_empty() {
                return bad(format!("{name} has no support entries"));
            }
            for s in &entry.supports {
                if !(s.weight.is_finite() && s.weight > 0.0) {
                    return bad(format!("{name}: support {} has non-positive weight", s.class_name));
                }
                if let Some(support) = self.classes.get(&s.class_name) {
                    if !support.properties.contains(&s.kind.required_property()) {
                        return bad(format!(
                            "{name}: support {} lacks {:?}",
                            s.class_name,
                            s.kind.required_property()
                        ));
                    }
                }
            }
            let has = |p| entry.properties.contains(&p);
            let is = |s| entry.states.contains(&s);
            if (is(ObjectState::Open) && is(ObjectState::Closed)) || (is(ObjectState::On) && is(ObjectState::Off)) {
                return bad(format!("{name}: contradictory default states"));
            }
            if (is(ObjectState::Open) || is(ObjectState::Closed)) && !has(Property::Openable) {
                return bad(format!("{name}: open/closed default state without OPENABLE"));
            }
            if (is(ObjectState::On) || is(ObjectState::Off)) && !has(Property::Switchable) {
                return bad(format!("{name}: on/off default state without SWITCHABLE"));
            }
        }
        Ok(())
    }

    pub fn get(&self, class_name: &str) -> Option<&KbClass> {
        self.classes.get(class_name)
    }

    pub fn contains(&self, class_name: &str) -> bool {
        self.classes.contains_key(class_name)
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.classes).expect("kb serializes")
    }
}

fn eligible_support(env: &Environment, uid: Uid, kind: RelationKind) -> bool {
    env.get(uid).is_some_and(|i| i.has(kind.required_property())) && !env.is_held(uid)
}

/// Picks a support class by weight among those with an eligible instance
/// in `env`, then the first eligible instance in query order.
pub fn sample_support<R: Rng + ?Sized>(
    kb: &PlacementKB,
    class_name: &str,
    env: &Environment,
    rng: &mut R,
) -> Result<(Uid, RelationKind), SceneError> {
    let entry = kb
        .get(class_name)
        .ok_or_else(|| SceneError::UnknownClass(class_name.to_string()))?;
    let available: Vec<(Uid, RelationKind, f64)> = entry
        .supports
        .iter()
        .filter_map(|s| {
            query_instances(env, &s.class_name)
                .into_iter()
                .find(|uid| eligible_support(env, *uid, s.kind))
                .map(|uid| (uid, s.kind, s.weight))
        })
        .collect();
    match available.len() {
        0 => Err(SceneError::NoSupportAvailable(class_name.to_string())),
        1 => Ok((available[0].0, available[0].1)),
        _ => {
            let dist =
                WeightedIndex::new(available.iter().map(|a| a.2)).map_err(|e| SceneError::InvalidKb(e.to_string()))?;
            let (uid, kind, _) = available[dist.sample(rng)];
            Ok((uid, kind))
        }
    }
}

/// Inserts the instances `program` needs but `env` lacks.
///
/// Classes are handled in order of first mention, so a container named
/// earlier in the program can host objects named later.
pub fn prepare_scene(
    env: &Environment,
    program: &Program,
    kb: &PlacementKB,
    seed: u64,
) -> Result<Environment, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = env.clone();

    let mut needed: Vec<(String, u32)> = Vec::new();
    for m in program.steps.iter().flat_map(|s| s.objects.iter()) {
        match needed.iter_mut().find(|(c, _)| *c == m.class_name) {
            Some((_, n)) => *n = (*n).max(m.instance_id),
            None => needed.push((m.class_name.clone(), m.instance_id)),
        }
    }

    for (class_name, need) in needed {
        let have = out.count_class(&class_name);
        for _ in have..need as usize {
            let uid = Uid(out.max_uid().map_or(1, |u| u.0 + 1));
            let inst = match kb.get(&class_name) {
                Some(entry) => {
                    let (support, kind) = sample_support(kb, &class_name, &out, &mut rng)?;
                    ObjectInstance {
                        class_name: class_name.clone(),
                        uid,
                        room: out.instances[&support].room,
                        properties: entry.properties.clone(),
                        states: entry.states.clone(),
                        relation: Some(Relation { kind, target: support }),
                    }
                }
                None => clone_existing(&out, &class_name, uid)?,
            };
            out.instances.insert(uid, inst);
        }
    }
    Ok(out)
}

/// Copies an existing instance of a class the KB does not cover.
fn clone_existing(env: &Environment, class_name: &str, uid: Uid) -> Result<ObjectInstance, SceneError> {
    let template = query_instances(env, class_name)
        .into_iter()
        .filter_map(|u| env.get(u))
        .find(|i| !env.is_held(i.uid))
        .ok_or_else(|| SceneError::UnknownClass(class_name.to_string()))?;
    Ok(ObjectInstance {
        uid,
        ..template.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::diff;
    use crate::program::parse_program;
    use serde_json::json;

    fn kb(value: serde_json::Value) -> PlacementKB {
        PlacementKB::from_json_str(&value.to_string()).unwrap()
    }

    fn kitchen() -> Environment {
        crate::environment::load_environment(&json!({
            "name": "kitchen",
            "rooms": [{"id": 1, "name": "kitchen"}],
            "instances": [
                {"class": "FLOOR", "uid": 1, "room": 1, "properties": ["SURFACE"]},
                {"class": "FRIDGE", "uid": 2, "room": 1, "properties": ["OPENABLE", "CONTAINER"], "states": ["CLOSED"]},
                {"class": "TABLE", "uid": 3, "room": 1, "properties": ["SURFACE"]},
                {"class": "GLASS", "uid": 4, "room": 1, "properties": ["GRABBABLE"], "relation": {"kind": "ON_TOP", "target": 3}},
                {"class": "TELEVISION", "uid": 5, "room": 1, "properties": ["SWITCHABLE"], "states": ["OFF"]}
            ],
            "agent": {"room": 1, "held": [], "posture": "STANDING"}
        }))
        .unwrap()
    }

    fn milk_kb() -> PlacementKB {
        kb(json!({
            "MILK": {"supports": [{"class": "FRIDGE", "kind": "INSIDE", "weight": 1.0}], "properties": ["GRABBABLE"]},
            "GLASS": {"supports": [{"class": "TABLE", "kind": "ON_TOP", "weight": 1.0}], "properties": ["GRABBABLE"]},
            "CUP": {"supports": [
                {"class": "SHELF", "kind": "ON_TOP", "weight": 5.0},
                {"class": "TABLE", "kind": "ON_TOP", "weight": 1.0}
            ], "properties": ["GRABBABLE"]}
        }))
    }

    #[test]
    fn missing_milk_goes_into_fridge() {
        let env = kitchen();
        let p = parse_program("[Walk] <MILK> (1)").unwrap();
        let out = prepare_scene(&env, &p, &milk_kb(), 0).unwrap();
        let d = diff(&env, &out);
        assert_eq!(d.added.len(), 1);
        let milk = &d.added[0];
        assert_eq!(milk.uid, Uid(6));
        assert_eq!(
            milk.relation,
            Some(Relation {
                kind: RelationKind::Inside,
                target: Uid(2)
            })
        );
        assert!(d.instances.is_empty(), "existing instances untouched");
        out.check_invariants().unwrap();
        // the fridge stays closed
        assert!(out.get(Uid(2)).unwrap().is(ObjectState::Closed));
    }

    #[test]
    fn present_class_is_noop() {
        let env = kitchen();
        let p = parse_program("[Walk] <TELEVISION> (1)").unwrap();
        let out = prepare_scene(&env, &p, &milk_kb(), 3).unwrap();
        assert!(diff(&env, &out).is_empty());
    }

    #[test]
    fn max_id_rule_adds_exactly_the_gap() {
        let env = kitchen();
        let p = parse_program("[Walk] <GLASS> (1)\n[Walk] <GLASS> (2)").unwrap();
        let out = prepare_scene(&env, &p, &milk_kb(), 0).unwrap();
        let d = diff(&env, &out);
        assert_eq!(d.added.len(), 1);
        assert_eq!(d.added[0].class_name, "GLASS");
        assert_eq!(out.count_class("GLASS"), 2);
    }

    #[test]
    fn unknown_class_and_no_support() {
        let env = kitchen();
        let p = parse_program("[Walk] <UNICORN> (1)").unwrap();
        assert_eq!(
            prepare_scene(&env, &p, &milk_kb(), 0),
            Err(SceneError::UnknownClass("UNICORN".into()))
        );
        let lonely = kb(json!({"MILK": {"supports": [{"class": "PANTRY", "kind": "INSIDE", "weight": 1.0}]}}));
        let p = parse_program("[Walk] <MILK> (1)").unwrap();
        assert_eq!(
            prepare_scene(&env, &p, &lonely, 0),
            Err(SceneError::NoSupportAvailable("MILK".into()))
        );
    }

    #[test]
    fn class_outside_kb_is_cloned_from_existing() {
        let env = kitchen();
        let p = parse_program("[Walk] <TELEVISION> (2)").unwrap();
        let out = prepare_scene(&env, &p, &milk_kb(), 0).unwrap();
        let added = &diff(&env, &out).added;
        assert_eq!(added.len(), 1);
        assert!(added[0].is(ObjectState::Off));
    }

    #[test]
    fn single_entry_is_deterministic() {
        let env = kitchen();
        let kb = milk_kb();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(
                sample_support(&kb, "MILK", &env, &mut rng).unwrap(),
                (Uid(2), RelationKind::Inside)
            );
        }
    }

    #[test]
    fn absent_support_class_falls_through() {
        let env = kitchen();
        let kb = milk_kb();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            assert_eq!(
                sample_support(&kb, "CUP", &env, &mut rng).unwrap(),
                (Uid(3), RelationKind::OnTop)
            );
        }
    }

    #[test]
    fn near_zero_weight_is_almost_never_chosen() {
        let env = kitchen();
        let kb = kb(json!({"BOWL": {"supports": [
            {"class": "TABLE", "kind": "ON_TOP", "weight": 1.0},
            {"class": "FLOOR", "kind": "ON_TOP", "weight": 1e-9}
        ]}}));
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let heavy = (0..1000)
            .filter(|_| sample_support(&kb, "BOWL", &env, &mut rng).unwrap().0 == Uid(3))
            .count();
        assert!(heavy >= 999, "heavy support chosen {heavy}/1000 times");
    }

    #[test]
    fn weighted_choice_tracks_weights() {
        // 3:1 weights; binomial(4000, 0.75) has sd ~27, allow 5 sd.
        let env = kitchen();
        let kb = kb(json!({"BOWL": {"supports": [
            {"class": "TABLE", "kind": "ON_TOP", "weight": 3.0},
            {"class": "FLOOR", "kind": "ON_TOP", "weight": 1.0}
        ]}}));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let table = (0..4000)
            .filter(|_| sample_support(&kb, "BOWL", &env, &mut rng).unwrap().0 == Uid(3))
            .count();
        assert!((table as i64 - 3000).abs() < 140, "{table}");
    }

    #[test]
    fn kb_validation() {
        let bad = json!({"CUP": {"supports": [{"class": "TABLE", "kind": "ON_TOP", "weight": 0.0}]}});
        assert!(PlacementKB::from_json_str(&bad.to_string()).is_err());
        let bad = json!({"CUP": {"supports": []}});
        assert!(PlacementKB::from_json_str(&bad.to_string()).is_err());
        let bad =
            json!({"LAMP": {"supports": [{"class": "FLOOR", "kind": "ON_TOP", "weight": 1.0}], "states": ["ON"]}});
        assert!(PlacementKB::from_json_str(&bad.to_string()).is_err());
    }

    #[test]
    fn bundled_kb_covers_forty_classes() {
        let kb = PlacementKB::bundled();
        assert!(kb.len() >= 40, "{}", kb.len());
        for home in crate::bundled::demo_homes() {
            for inst in home.instances.values() {
                assert!(kb.contains(&inst.class_name), "{} missing from KB", inst.class_name);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let env = crate::bundled::demo_homes().remove(0);
        let p = parse_program("[Walk] <CUP> (3)\n[Walk] <PLATE> (2)\n[Walk] <FRIDGE> (1)\n[Walk] <MILK> (1)").unwrap();
        let kb = PlacementKB::bundled();
        let a = prepare_scene(&env, &p, &kb, 77).unwrap();
        let b = prepare_scene(&env, &p, &kb, 77).unwrap();
        assert_eq!(a.to_canonical_json(), b.to_canonical_json());
        a.check_invariants().unwrap();
    }
}
