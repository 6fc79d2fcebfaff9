use std::fmt;

use serde::Serialize;

use super::{Fleet, PlanGraph};
use crate::model::ObjectId;
use crate::semantic_state::SemanticState;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum PlanViolation {
    Acyclicity,
    DanglingEdge { from: String, to: String },
    SkillUnsatisfiable { node: String },
    BadPreference { node: String, robot: String },
    UnknownObject { node: String, object: String },
    BadParams { node: String, reason: String },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::Acyclicity => f.write_str("plan graph has a cycle"),
            PlanViolation::DanglingEdge { from, to } => write!(f, "edge {from} -> {to} names a missing node"),
            PlanViolation::SkillUnsatisfiable { node } => write!(f, "no robot has the skills for {node}"),
            PlanViolation::BadPreference { node, robot } => write!(f, "{node} prefers {robot}, which cannot run it"),
            PlanViolation::UnknownObject { node, object } => write!(f, "{node} references unknown object {object}"),
            PlanViolation::BadParams { node, reason } => write!(f, "{node}: {reason}"),
        }
    }
}

/// Structural and semantic checks; an empty result means valid.
pub fn validate_plan(plan: &PlanGraph, fleet: &Fleet, state: &SemanticState) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    for (from, to) in &plan.edges {
        if !plan.nodes.contains_key(from) || !plan.nodes.contains_key(to) {
            out.push(PlanViolation::DanglingEdge { from: from.clone(), to: to.clone() });
        }
    }
    if out.is_empty() && plan.topological_order().is_none() {
        out.push(PlanViolation::Acyclicity);
    }
    for (id, n) in &plan.nodes {
        if id != &n.node_id {
            out.push(PlanViolation::BadParams { node: id.clone(), reason: format!("keyed as {id} but named {}", n.node_id) });
        }
        let sig = n.a.signature();
        let keys: Vec<&str> = n.params.keys().map(String::as_str).collect();
        let mut want: Vec<&str> = sig.to_vec();
        want.sort_unstable();
        if keys != want {
            out.push(PlanViolation::BadParams { node: id.clone(), reason: format!("{} expects {:?}, got {keys:?}", n.a, sig) });
            continue;
        }
        if let Some(state_value) = n.param("state") {
            if !n.a.state_values().contains(&state_value) {
                out.push(PlanViolation::BadParams { node: id.clone(), reason: format!("bad state `{state_value}`") });
            }
        }
        if n.req_skills.is_empty() {
            out.push(PlanViolation::BadParams { node: id.clone(), reason: "empty req_skills".into() });
        } else if !fleet.values().any(|skills| n.req_skills.is_subset(skills)) {
            out.push(PlanViolation::SkillUnsatisfiable { node: id.clone() });
        }
        if let Some(r) = &n.r_pref {
            if !fleet.get(r).is_some_and(|skills| n.req_skills.is_subset(skills)) {
                out.push(PlanViolation::BadPreference { node: id.clone(), robot: r.to_string() });
            }
        }
        for key in n.a.object_params() {
            let obj = ObjectId::new(n.params[*key].as_str());
            if !state.objects.contains_key(&obj) {
                out.push(PlanViolation::UnknownObject { node: id.clone(), object: obj.to_string() });
            }
        }
        if let Some(room) = n.param("room") {
            if !state.areas.contains_key(&room.into()) {
                out.push(PlanViolation::BadParams { node: id.clone(), reason: format!("unknown room {room}") });
            }
        }
    }
    out
}
