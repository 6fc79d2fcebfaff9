//! The sense–plan–act loop: online fusion, replan gating, dependency-aware
//! dispatch and event monitoring with stall detection and fail counting.

mod dispatch;
mod episode;
mod monitor;
pub mod trace;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::FailureReason;
use crate::model::RobotId;
use crate::semantic_state::Observation;

pub use dispatch::{dispatch_ready, match_robot, split_goal, target_cell};
pub use episode::{route_observations, run_episode, EpisodeRun, HubInput};
pub use monitor::{detect_stall, needs_replan, relevant, Progress, ReplanContext, REPLAN_DISTANCE};
pub use trace::TraceRecord;

/// Which observations reach which hub.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// One private hub per robot, own perception only.
    #[serde(rename = "ir")]
    Ir,
    /// Shared hub over all robot observations.
    #[serde(rename = "r2r")]
    R2r,
    /// Shared hub over robot and IoT observations.
    #[default]
    #[serde(rename = "r2x")]
    R2x,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Ir, Protocol::R2r, Protocol::R2x];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Ir => "ir",
            Protocol::R2r => "r2r",
            Protocol::R2x => "r2x",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown protocol `{s}` (expected ir, r2r or r2x)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchestratorConfig {
    pub max_fails: u32,
    /// Ticks per monitor wait.
    pub wait_window: u64,
    pub stall_horizon: u64,
    pub protocol: Protocol,
    pub tick_budget: u64,
    /// Re-expansions after a primitive failure.
    pub retries: u32,
    /// Consecutive collisions before a node fails.
    pub collision_limit: u32,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            max_fails: 5,
            wait_window: 1,
            stall_horizon: 50,
            protocol: Protocol::R2x,
            tick_budget: 2000,
            retries: crate::environment::DEFAULT_RETRIES,
            collision_limit: 8,
        }
    }
}

impl OrchestratorConfig {
    pub fn with_protocol(protocol: Protocol) -> Self {
        Self { protocol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let fields = [
            ("max_fails", self.max_fails as u64),
            ("wait_window", self.wait_window),
            ("stall_horizon", self.stall_horizon),
            ("tick_budget", self.tick_budget),
            ("collision_limit", self.collision_limit as u64),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(OrchestratorError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// What the monitor phase reacts to.
#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    ActionDone { src: RobotId, act: String, res: Result<(), FailureReason> },
    IoTUpdate { obs: Observation },
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GoalSatisfied,
    MaxFails,
    TickBudget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success_truth: bool,
    pub success_belief: bool,
    pub action_steps: u64,
    pub path_length_m: f64,
    pub planner_calls: u64,
    pub token_proxy: u64,
    pub ticks: u64,
    /// Failure events over the whole episode (node failures and rejected plans).
    pub fail_count: u64,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub safety_violations: Vec<String>,
    pub trace_path: Option<String>,
}

impl EpisodeResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    ScenarioInvalid(#[from] crate::bench::ScenarioError),
    #[error("bad orchestrator config: {0}")]
    Config(String),
}
