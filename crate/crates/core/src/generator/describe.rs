use rand::seq::SliceRandom;
use rand::Rng;

use super::{recover_episodes, Episode, GenError, GrammarConfig};
use crate::program::{ObjectMention, Program};

fn noun(m: &ObjectMention) -> String {
    m.class_name.to_lowercase().replace('_', " ")
}

fn template_key(episode: &Episode) -> &'static str {
    match episode {
        Episode::FetchPlace { .. } => "FETCH_PLACE",
        Episode::UseAppliance { switch_off: false, .. } => "USE_APPLIANCE",
        Episode::UseAppliance { switch_off: true, .. } => "USE_APPLIANCE_OFF",
        Episode::Relax { .. } => "RELAX",
        Episode::OpenFetch { .. } => "OPEN_FETCH",
        Episode::Inspect { touch: false, .. } => "INSPECT_LOOK",
        Episode::Inspect { touch: true, .. } => "INSPECT_TOUCH",
    }
}

fn slots(episode: &Episode) -> Vec<(&'static str, String)> {
    match episode {
        Episode::FetchPlace { item, surface } => vec![("item", noun(item)), ("surface", noun(surface))],
        Episode::UseAppliance { appliance, .. } => vec![("appliance", noun(appliance))],
        Episode::Relax { seat } => vec![("seat", noun(seat))],
        Episode::OpenFetch { container, item } => vec![("container", noun(container)), ("item", noun(item))],
        Episode::Inspect { target, .. } => vec![("target", noun(target))],
    }
}

fn fill<R: Rng + ?Sized>(
    template: &str,
    slots: &[(&str, String)],
    cfg: &GrammarConfig,
    rng: &mut R,
) -> Result<String, GenError> {
    let mut out = String::with_capacity(template.len() + 16);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = rest[open..]
            .find('}')
            .map(|c| open + c)
            .ok_or_else(|| GenError::Config(format!("unclosed placeholder in `{template}`")))?;
        let key = &rest[open + 1..close];
        if let Some((_, value)) = slots.iter().find(|(k, _)| *k == key) {
            out.push_str(value);
        } else if let Some(choice) = cfg.synonyms.get(key).and_then(|v| v.choose(rng)) {
            out.push_str(choice);
        } else {
            return Err(GenError::TemplateMissing(format!("placeholder {{{key}}}")));
        }
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// One sentence per episode, joined by spaces.
pub fn describe_episodes<R: Rng + ?Sized>(
    episodes: &[Episode],
    cfg: &GrammarConfig,
    rng: &mut R,
) -> Result<String, GenError> {
    let mut sentences = Vec::with_capacity(episodes.len());
    for episode in episodes {
        let key = template_key(episode);
        let template = cfg
            .templates
            .get(key)
            .and_then(|t| t.choose(rng))
            .ok_or_else(|| GenError::TemplateMissing(key.to_string()))?;
        sentences.push(fill(template, &slots(episode), cfg, rng)?);
    }
    Ok(sentences.join(" "))
}

/// Renders a description for a program built from grammar episodes.
pub fn describe<R: Rng + ?Sized>(program: &Program, cfg: &GrammarConfig, rng: &mut R) -> Result<String, GenError> {
    describe_episodes(&recover_episodes(program)?, cfg, rng)
}
