use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Fleet, Task};
use crate::semantic_state::{serialize_state, SemanticState};

pub const PROTOCOL_VERSION: &str = "r2x-plan v1";
pub const DEFAULT_MAX_NODES: usize = 32;

/// One planner request in the external protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerRequest {
    pub value: Value,
    pub document: String,
}

impl PlannerRequest {
    pub fn chars(&self) -> usize {
        self.document.chars().count()
    }

    /// ceil(chars / 4).
    pub fn token_proxy(&self) -> u64 {
        token_proxy(self.chars())
    }

    pub fn state_section(&self) -> &str {
        self.value["state"].as_str().unwrap_or_default()
    }
}

pub fn token_proxy(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

/// Output schema sent with every request, with a worked example.
pub fn output_schema() -> Value {
    json!({
        "version": PROTOCOL_VERSION,
        "nodes": {
            "node_id": "string, unique",
            "a": ["fetch_and_place", "toggle_device", "open_close", "slice_object", "dispose", "explore_room", "navigate_to"],
            "params": {
                "fetch_and_place": ["object", "receptacle"],
                "toggle_device": ["object", "state: on|off"],
                "open_close": ["object", "state: open|closed"],
                "slice_object": ["object"],
                "dispose": ["object"],
                "explore_room": ["room"],
                "navigate_to": ["room"]
            },
            "req_skills": "list of MoveStep|Rotate|Pickup|Put|Open|Close|ToggleOn|ToggleOff|Slice|Scan",
            "r_pref": "robot id or omitted"
        },
        "edges": "list of [before, after] node id pairs; the graph must be acyclic",
        "usage": "optional {prompt_tokens, completion_tokens}",
        "example": {
            "nodes": [
                {"node_id": "n000", "a": "open_close", "params": {"object": "fridge_0", "state": "open"}, "req_skills": ["MoveStep", "Open"]},
                {"node_id": "n001", "a": "fetch_and_place", "params": {"object": "apple_0", "receptacle": "fridge_0"}, "req_skills": ["MoveStep", "Pickup", "Put"]}
            ],
            "edges": [["n000", "n001"]]
        }
    })
}

/// Deterministic request document for the task, belief and fleet.
pub fn build_prompt(task: &Task, state: &SemanticState, fleet: &Fleet) -> PlannerRequest {
    let fleet_json: serde_json::Map<String, Value> = fleet
        .iter()
        .map(|(r, skills)| (r.to_string(), json!(skills.iter().map(|s| s.name()).collect::<Vec<_>>())))
        .collect();
    let value = json!({
        "version": PROTOCOL_VERSION,
        "task": task.description,
        "goal": task.goal.predicates.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
        "state": serialize_state(state),
        "fleet": fleet_json,
        "schema": output_schema(),
        "max_nodes": DEFAULT_MAX_NODES,
    });
    let document = serde_json::to_string(&value).expect("request serializes");
    PlannerRequest { value, document }
}
