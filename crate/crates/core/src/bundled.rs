//! Data files compiled into the library: demo homes, the placement
//! knowledge base, and the default grammar.

use crate::environment::{EnvError, Environment};

pub const DEMO_HOME: &str = include_str!("../data/homes/demo_home.env.json");
pub const APARTMENT: &str = include_str!("../data/homes/apartment.env.json");
pub const COTTAGE: &str = include_str!("../data/homes/cottage.env.json");

pub const DEMO_HOMES: [(&str, &str); 3] = [("demo_home", DEMO_HOME), ("apartment", APARTMENT), ("cottage", COTTAGE)];

pub const PLACEMENT_KB: &str = include_str!("../data/placement.kb.json");
pub const GRAMMAR: &str = include_str!("../data/grammar.json");
pub const WATCH_TV: &str = include_str!("../data/programs/watch_tv.prog");

pub fn demo_home(name: &str) -> Option<Result<Environment, EnvError>> {
    DEMO_HOMES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Environment::from_json_str(text))
}

pub fn demo_homes() -> Vec<Environment> {
    DEMO_HOMES
        .iter()
        .map(|(_, text)| Environment::from_json_str(text).expect("bundled home is valid"))
        .collect()
}
