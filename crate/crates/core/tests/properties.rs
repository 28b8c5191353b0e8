mod common;

use std::collections::BTreeMap;

use homeprog::bundled;
use homeprog::dataset::{
    compute_stats, count_sentences, load_manifest, save_manifest, split_dataset, split_sizes, DatasetRecord,
};
use homeprog::executor::{execute_with_grounding, ground_and_execute, SearchLimits};
use homeprog::generator::{generate_program, generate_record, item_rng, GrammarConfig};
use homeprog::metrics::{lcs_by, lcs_length, normalized_lcs, Equality, RewardConfig};
use homeprog::program::{canonicalize_ids, format_program, parse_program, ActionName, ObjectMention, Program, Step};
use homeprog::scene::{prepare_scene, PlacementKB};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_mention() -> impl Strategy<Value = ObjectMention> {
    let class = prop_oneof![
        prop::sample::select(vec!["CUP", "TABLE", "KITCHEN_COUNTER", "TELEVISION", "SOFA"]).prop_map(String::from),
        "[A-Z][A-Z0-9_]{0,7}",
    ];
    (class, 1u32..6).prop_map(|(c, id)| ObjectMention::new(c, id))
}

fn arb_step() -> impl Strategy<Value = Step> {
    (
        prop::sample::select(ActionName::EXECUTABLE.to_vec()),
        prop::collection::vec(arb_mention(), 2),
    )
        .prop_map(|(action, mut objects)| {
            objects.truncate(action.arity().unwrap());
            Step::new(action, objects)
        })
}

fn arb_program(max: usize) -> impl Strategy<Value = Program> {
    prop::collection::vec(arb_step(), 0..=max).prop_map(Program::new)
}

/// Programs over a tiny vocabulary, so common subsequences are frequent.
fn arb_small_program() -> impl Strategy<Value = Program> {
    let step = (0usize..3, 0usize..2, 1u32..3).prop_map(|(a, c, id)| {
        let action = [ActionName::Walk, ActionName::Grab, ActionName::Touch][a].clone();
        Step::unary(action, ["CUP", "PLATE"][c], id)
    });
    prop::collection::vec(step, 0..8).prop_map(Program::new)
}

fn mention_keys(p: &Program) -> Vec<(String, u32)> {
    p.steps
        .iter()
        .flat_map(|s| s.objects.iter().map(ObjectMention::key))
        .collect()
}

fn record(id: usize, program: Program, description: &str) -> DatasetRecord {
    DatasetRecord {
        id: format!("r{id}"),
        name: None,
        description: description.into(),
        program,
        env_ref: None,
        split: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn format_parse_round_trip(p in arb_program(12)) {
        let text = format_program(&p);
        prop_assert_eq!(parse_program(&text).unwrap(), p);
    }

    #[test]
    fn canonicalize_is_idempotent_and_keeps_coreference(p in arb_program(10)) {
        let c = canonicalize_ids(&p);
        prop_assert_eq!(canonicalize_ids(&c), c.clone());
        let before = mention_keys(&p);
        let after = mention_keys(&c);
        for i in 0..before.len() {
            for j in 0..before.len() {
                prop_assert_eq!(before[i] == before[j], after[i] == after[j]);
            }
        }
        for (class, id) in &after {
            let earlier = after.iter().filter(|(c, _)| c == class).map(|(_, i)| *i).max().unwrap();
            prop_assert!(*id >= 1 && *id <= earlier);
        }
    }

    #[test]
    fn lcs_laws(a in arb_small_program(), b in arb_small_program()) {
        let step = lcs_length(&a, &b, Equality::Step);
        prop_assert_eq!(step, lcs_length(&b, &a, Equality::Step));
        prop_assert!(step <= a.len().min(b.len()));
        prop_assert!(lcs_length(&a, &b, Equality::Action) >= step);
        prop_assert!(lcs_length(&a, &b, Equality::Object) >= step);
        prop_assert_eq!(lcs_length(&a, &a, Equality::Step), a.len());
        let (ca, cb) = (canonicalize_ids(&a), canonicalize_ids(&b));
        prop_assert_eq!(step, lcs_by(&ca.steps, &cb.steps, |x, y| x == y));
        let norm = normalized_lcs(&a, &b, Equality::Step);
        prop_assert!((0.0..=1.0).contains(&norm));
    }

    #[test]
    fn lcs_of_prefix_is_prefix_length(p in arb_program(10), k in 0usize..12) {
        let prefix = p.prefix(k);
        prop_assert_eq!(lcs_length(&p, &prefix, Equality::Step), prefix.len());
    }

    #[test]
    fn reward_is_monotone(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let cfg = RewardConfig::default();
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        for executable in [false, true] {
            prop_assert!(cfg.reward(lo, executable) <= cfg.reward(hi, executable));
        }
        prop_assert!(cfg.reward(x, true) > cfg.reward(x, false));
        prop_assert_eq!(cfg.reward(x, false), x);
        prop_assert_eq!(cfg.reward(x, true), x + 0.1);
    }

    #[test]
    fn grounding_matches_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = common::random_env(&mut rng);
        let program = common::random_program(&mut rng, 6);
        let oracle = common::brute_force(&program, &env);
        let (map, trace) = ground_and_execute(&program, &env, SearchLimits::default()).unwrap();
        prop_assert_eq!(trace.verdict.is_executable(), oracle.executable);
        prop_assert_eq!(map.is_some(), oracle.executable);
        if !oracle.executable {
            prop_assert_eq!(trace.verdict, homeprog::Verdict::Failed {
                step: oracle.deepest_failure.unwrap(),
                violation: trace.verdict.violation().unwrap(),
            });
        }
    }

    #[test]
    fn prefixes_of_executable_programs_execute(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = common::random_env(&mut rng);
        let program = common::random_program(&mut rng, 6);
        if let (Some(map), trace) = ground_and_execute(&program, &env, SearchLimits::default()).unwrap() {
            for k in 0..=program.len() {
                let partial = execute_with_grounding(&program.prefix(k), &env, &map);
                prop_assert!(partial.verdict.is_executable());
            }
            prop_assert_eq!(execute_with_grounding(&program, &env, &map), trace);
        }
    }

    #[test]
    fn execution_conserves_objects_and_hands(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = common::random_env(&mut rng);
        let program = common::random_program(&mut rng, 6);
        let (_, trace) = ground_and_execute(&program, &env, SearchLimits::default()).unwrap();
        let mut state = env.clone();
        for entry in &trace.entries {
            entry.diff.apply(&mut state);
            prop_assert!(state.agent.held.len() <= 2);
            prop_assert!(state.check_invariants().is_ok());
            prop_assert_eq!(state.instances.keys().collect::<Vec<_>>(), env.instances.keys().collect::<Vec<_>>());
            for (uid, inst) in &state.instances {
                prop_assert_eq!(&inst.class_name, &env.instances[uid].class_name);
                prop_assert_eq!(&inst.properties, &env.instances[uid].properties);
            }
        }
        prop_assert_eq!(state, trace.final_env);
    }

    #[test]
    fn prepare_scene_only_adds(index in 0u64..500, home in 0usize..3, prep_seed in any::<u64>()) {
        let cfg = GrammarConfig::bundled();
        let program = generate_program(&cfg, &mut item_rng(cfg.seed, index)).unwrap();
        let kb = PlacementKB::bundled();
        let env = &bundled::demo_homes()[home];
        let prepared = prepare_scene(env, &program, &kb, prep_seed).unwrap();
        prop_assert!(prepared.check_invariants().is_ok());
        for (uid, inst) in &env.instances {
            prop_assert_eq!(Some(inst), prepared.instances.get(uid));
        }
        prop_assert_eq!(&prepared.agent, &env.agent);
        let mut needed: BTreeMap<&str, u32> = BTreeMap::new();
        for m in program.steps.iter().flat_map(|s| &s.objects) {
            let n = needed.entry(m.class_name.as_str()).or_default();
            *n = (*n).max(m.instance_id);
        }
        for (class, n) in needed {
            prop_assert!(prepared.count_class(class) >= n as usize);
        }
        prop_assert_eq!(prepare_scene(&prepared, &program, &kb, prep_seed.wrapping_add(1)).unwrap(), prepared.clone());
        let (_, trace) = ground_and_execute(&program, &prepared, SearchLimits::default()).unwrap();
        prop_assert!(trace.verdict.is_executable());
    }

    #[test]
    fn split_partitions(n in 0usize..60, w in (1u32..50, 1u32..50, 1u32..50), seed in any::<u64>()) {
        let total = f64::from(w.0 + w.1 + w.2);
        let ratios = (f64::from(w.0) / total, f64::from(w.1) / total, f64::from(w.2) / total);
        let records: Vec<DatasetRecord> = (0..n).map(|i| record(i, Program::default(), "")).collect();
        let out = split_dataset(&records, ratios, seed).unwrap();
        prop_assert_eq!(out.len(), n);
        prop_assert!(out.iter().all(|r| r.split.is_some()));
        prop_assert!(out.iter().zip(&records).all(|(a, b)| a.id == b.id));
        let sizes = split_sizes(n, ratios).unwrap();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        for (size, ratio) in sizes.iter().zip([ratios.0, ratios.1, ratios.2]) {
            prop_assert!((*size as f64 - ratio * n as f64).abs() <= 1.0);
        }
        prop_assert_eq!(split_dataset(&records, ratios, seed).unwrap(), out);
    }

    #[test]
    fn histograms_are_additive(ps in prop::collection::vec(arb_program(8), 2..10), cut in 1usize..9) {
        let records: Vec<DatasetRecord> = ps.into_iter().enumerate().map(|(i, p)| record(i, p, "Go. Sit.")).collect();
        let cut = cut.min(records.len() - 1);
        let whole = compute_stats(&records).unwrap();
        let left = compute_stats(&records[..cut]).unwrap();
        let right = compute_stats(&records[cut..]).unwrap();
        let mut actions = left.action_hist.clone();
        for (k, v) in &right.action_hist {
            *actions.entry(k.clone()).or_default() += v;
        }
        let mut objects = left.object_hist.clone();
        for (k, v) in &right.object_hist {
            *objects.entry(k.clone()).or_default() += v;
        }
        prop_assert_eq!(&whole.action_hist, &actions);
        prop_assert_eq!(&whole.object_hist, &objects);
        let steps: usize = records.iter().map(|r| r.program.len()).sum();
        prop_assert_eq!(whole.action_hist.values().sum::<usize>(), steps);
        prop_assert_eq!(whole.avg_sentences, 2.0);
    }

    #[test]
    fn sentences_add_across_terminated_text(a in "[a-z ]{0,12}", b in "[a-z ]{0,12}") {
        let joined = format!("{a}. {b}.");
        prop_assert_eq!(count_sentences(&joined), count_sentences(&format!("{a}.")) + count_sentences(&format!("{b}.")));
    }
}

#[test]
fn manifest_save_load_round_trip() {
    let cfg = GrammarConfig::bundled().with_seed(8);
    let records: Vec<DatasetRecord> = (0..100).map(|k| generate_record(&cfg, k).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    save_manifest(&records, &path).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), records);
}
