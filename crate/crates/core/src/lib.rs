//! Multi-robot coordination over a discrete indoor grid world.
//!
//! A central hub fuses robot and IoT observations into a semantic belief,
//! plans a dependency graph of high-level actions, and dispatches ready
//! nodes to idle robots. The [`bench`] module drives protocol, latency,
//! sensor-failure and team-size ablations over generated scenes.

pub mod model;
pub mod semantic_state;
pub mod environment;
pub mod planner;
pub mod sensors;
pub mod orchestrator;
pub mod bench;
