//! Plan graphs over the high-level action vocabulary: prompt construction,
//! the built-in deterministic planner, the external planner protocol, and
//! validation.

mod baseline;
mod external;
mod graph;
mod prompt;
mod validate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActionKind, RobotId};
use crate::semantic_state::{GoalCondition, SemanticState};

pub use baseline::{baseline_plan, exploration_order};
pub use external::{external_plan, Endpoint, TRANSPORT_RETRIES};
pub use graph::{ActionNode, HighLevelKind, NodeStatus, PlanGraph};
pub use prompt::{build_prompt, output_schema, token_proxy, PlannerRequest, DEFAULT_MAX_NODES, PROTOCOL_VERSION};
pub use validate::{validate_plan, PlanViolation};

/// Robot → skills.
pub type Fleet = BTreeMap<RobotId, BTreeSet<ActionKind>>;

pub fn fleet_of(state: &SemanticState) -> Fleet {
    state.robots.values().map(|r| (r.id.clone(), r.skills.clone())).collect()
}

/// `(T, G)`: a natural-language description and the goal conjunction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub description: String,
    pub goal: GoalCondition,
}

impl Task {
    pub fn new(description: impl Into<String>, goal: GoalCondition) -> Self {
        Self { description: description.into(), goal }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("no feasible action: {0}")]
    NoFeasibleAction(String),
    #[error("planner transport failed: {0}")]
    Transport(String),
    #[error("planner response malformed: {0}")]
    Schema(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerOutput {
    pub plan: PlanGraph,
    /// Reported usage, else the character proxy.
    pub tokens: u64,
}

/// Which planner an episode uses.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerBackend {
    #[default]
    Baseline,
    External(Endpoint),
}

impl PlannerBackend {
    /// Builds the request and plans. The baseline planner is charged its own
    /// prompt's token proxy.
    pub fn plan(&self, task: &Task, state: &SemanticState, fleet: &Fleet) -> Result<PlannerOutput, PlanError> {
        let request = build_prompt(task, state, fleet);
        match self {
            PlannerBackend::Baseline => {
                let plan = baseline_plan(task, state, fleet)?;
                Ok(PlannerOutput { plan, tokens: request.token_proxy() })
            }
            PlannerBackend::External(endpoint) => external_plan(&request, endpoint),
        }
    }
}
