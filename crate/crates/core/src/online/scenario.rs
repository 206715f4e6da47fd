//! Scenario files: a base game plus a timeline of merge patches.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::{Map, Value};

use super::{GameSequence, SequenceMode};
use crate::error::{GneError, Result};
use crate::game::parse_game;

/// JSON merge patch (RFC 7386).
pub fn merge_patch(target: &mut Value, patch: &Value) {
    let Value::Object(p) = patch else {
        *target = patch.clone();
        return;
    };
    if !target.is_object() {
        *target = Value::Object(Map::new());
    }
    let t = target.as_object_mut().expect("object");
    for (k, v) in p {
        if v.is_null() {
            t.remove(k);
        } else {
            merge_patch(t.entry(k.clone()).or_insert(Value::Null), v);
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TimelineEntry {
    t: usize,
    #[serde(default)]
    patch: Option<Value>,
    /// 1-based index into `family`
    #[serde(default)]
    member: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct Variability {
    #[serde(default)]
    delta1: Option<f64>,
    #[serde(default)]
    delta2: Option<f64>,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<GameSequence> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_scenario(&serde_json::from_str(&text)?)
}

/// Instance t is the base with patch t applied (patches do not accumulate).
/// Steps missing from the timeline repeat the previous instance. A scenario whose
/// timeline only names members of `family` is a finite operator family.
pub fn parse_scenario(v: &Value) -> Result<GameSequence> {
    let mut base = v.clone();
    let obj = base
        .as_object_mut()
        .ok_or_else(|| GneError::Parse("scenario must be a JSON object".into()))?;
    let timeline: Vec<TimelineEntry> = match obj.remove("timeline") {
        Some(t) => serde_json::from_value(t)?,
        None => return Err(GneError::Parse("scenario has no timeline".into())),
    };
    let family: Option<Vec<Value>> = obj.remove("family").map(serde_json::from_value).transpose()?;
    let var: Variability = obj.remove("variability").map(serde_json::from_value).transpose()?.unwrap_or_default();
    if timeline.is_empty() {
        return Err(GneError::Parse("timeline is empty".into()));
    }
    let t_end = timeline.iter().map(|e| e.t).max().unwrap_or(0);
    if timeline.iter().any(|e| e.t == 0) {
        return Err(GneError::Parse("timeline steps are 1-based".into()));
    }
    let mut entries: Vec<Option<&TimelineEntry>> = vec![None; t_end];
    for e in &timeline {
        if entries[e.t - 1].replace(e).is_some() {
            return Err(GneError::Parse(format!("timeline step {} listed twice", e.t)));
        }
    }
    if entries[0].is_none() {
        return Err(GneError::Parse("timeline must start at t = 1".into()));
    }

    let build = |patch: &Value, t: usize| -> Result<crate::game::GameSpec> {
        let mut doc = base.clone();
        merge_patch(&mut doc, patch);
        parse_game(&doc).map_err(|e| GneError::InstanceValidation { t, source: Box::new(e) })
    };

    let all_members = timeline.iter().all(|e| e.member.is_some() && e.patch.is_none());
    if all_members {
        let family = family.ok_or_else(|| GneError::Parse("timeline names members but no family is given".into()))?;
        let mut specs = Vec::with_capacity(family.len());
        for (h, p) in family.iter().enumerate() {
            specs.push(Arc::new(build(p, h + 1)?));
        }
        let mut index = Vec::with_capacity(t_end);
        let mut last = 0;
        for e in &entries {
            if let Some(e) = e {
                let k = e.member.unwrap_or(0);
                if k == 0 || k > specs.len() {
                    return Err(GneError::Parse(format!("timeline step {}: member {k} out of range", e.t)));
                }
                last = k - 1;
            }
            index.push(last);
        }
        let instances = index.iter().map(|&h| specs[h].clone()).collect();
        return GameSequence::new(instances, SequenceMode::FiniteFamily { index }, var.delta1, var.delta2);
    }

    let mut instances = Vec::with_capacity(t_end);
    let mut prev: Option<Arc<crate::game::GameSpec>> = None;
    for (t, e) in entries.iter().enumerate() {
        let spec = match e {
            Some(e) => {
                if e.member.is_some() {
                    return Err(GneError::Parse("timeline mixes patches and family members".into()));
                }
                Arc::new(build(e.patch.as_ref().unwrap_or(&Value::Object(Map::new())), t + 1)?)
            }
            None => prev.clone().expect("first step present"),
        };
        prev = Some(spec.clone());
        instances.push(spec);
    }
    GameSequence::new(instances, SequenceMode::Arbitrary, var.delta1, var.delta2)
}
