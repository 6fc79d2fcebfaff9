use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{GridWorld, Layout};
use crate::model::{ActionKind, AreaId, Cell, EntityRef, ObjectClass, ObjectId, Property, PropertyVector, RobotId, SourceId};
use crate::planner::Task;
use crate::semantic_state::{ObjectState, Predicate, RobotState};
use crate::sensors::{FailureProfile, IoTDevice};

pub const SCENARIO_VERSION: &str = "r2x-scenario v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: ObjectId,
    pub class: ObjectClass,
    pub cell: Cell,
    pub room: AreaId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rec: Option<EntityRef>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub props: BTreeSet<Property>,
}

impl ObjectSpec {
    pub fn props(&self) -> PropertyVector {
        self.props.iter().fold(PropertyVector::EMPTY, |v, p| v.with(*p, true))
    }

    pub fn to_state(&self) -> ObjectState {
        ObjectState::new(
            self.id.clone(),
            self.class,
            self.cell,
            self.room.clone(),
            self.rec.clone(),
            self.props(),
            SourceId::World,
            0,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub id: RobotId,
    pub cell: Cell,
    #[serde(default)]
    pub theta: f64,
    pub skills: BTreeSet<ActionKind>,
}

impl RobotSpec {
    pub fn to_state(&self) -> RobotState {
        RobotState::new(self.id.clone(), self.cell, self.theta, self.skills.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub layout: Layout,
    pub objects: Vec<ObjectSpec>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub scene_seed: u64,
    pub failure_seed: u64,
}

/// Scripted disturbance: at `tick`, `object` is moved onto `receptacle`
/// by someone outside the fleet.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relocation {
    pub tick: u64,
    pub object: ObjectId,
    pub receptacle: ObjectId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: String,
    pub world: WorldSpec,
    pub robots: Vec<RobotSpec>,
    pub devices: Vec<IoTDevice>,
    pub task: Task,
    /// `rng_seed` is ignored; `seeds.failure_seed` drives the failure stream.
    pub failure: FailureProfile,
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Relocation>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario invalid: {0}")]
    Invalid(String),
    #[error("scenario file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported scenario version `{0}`")]
    Version(String),
}

impl Scenario {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        if s.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(s.version));
        }
        Ok(s)
    }

    /// The failure profile with the scenario's failure seed applied.
    pub fn failure_profile(&self) -> FailureProfile {
        FailureProfile { rng_seed: self.seeds.failure_seed, ..self.failure }
    }

    pub fn build_world(&self) -> GridWorld {
        let mut w = GridWorld::new(self.world.layout.clone());
        for o in &self.world.objects {
            w.add_object(o.to_state());
        }
        for r in &self.robots {
            w.add_robot(r.to_state());
        }
        w
    }

    /// Connectivity, id resolution and placement checks.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let layout = &self.world.layout;
        if self.robots.is_empty() {
            return bad("no robots".into());
        }
        if !layout.is_connected() {
            return bad("layout is not connected".into());
        }
        if !layout.rooms_partition_cells() {
            return bad("rooms do not partition the grid".into());
        }
        self.failure.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let mut ids = BTreeSet::new();
        for o in &self.world.objects {
            if !ids.insert(o.id.clone()) {
                return bad(format!("duplicate object {}", o.id));
            }
            if !layout.in_bounds(o.cell) {
                return bad(format!("{} out of bounds", o.id));
            }
            if layout.room_of(o.cell).map(|r| &r.id) != Some(&o.room) {
                return bad(format!("{} is not in room {}", o.id, o.room));
            }
        }
        let mut cells = BTreeSet::new();
        let mut robots = BTreeSet::new();
        for r in &self.robots {
            if !robots.insert(r.id.clone()) {
                return bad(format!("duplicate robot {}", r.id));
            }
            if !layout.in_bounds(r.cell) || !cells.insert(r.cell) {
                return bad(format!("robot {} badly placed", r.id));
            }
        }
        let world = self.build_world();
        let problems = world.check_invariants();
        if !problems.is_empty() {
            return bad(problems.join("; "));
        }
        for d in &self.devices {
            if let Some(o) = &d.attached_object {
                if !ids.contains(o) {
                    return bad(format!("device {} watches unknown {o}", d.id));
                }
            }
        }
        let rooms: BTreeSet<&AreaId> = layout.rooms.iter().map(|r| &r.id).collect();
        for p in &self.task.goal.predicates {
            for o in p.objects() {
                if !ids.contains(o) {
                    return bad(format!("goal names unknown object {o}"));
                }
            }
            match p {
                Predicate::ObjectInRoom { room, .. } | Predicate::RobotInRoom { room, .. } if !rooms.contains(room) => {
                    return bad(format!("goal names unknown room {room}"));
                }
                Predicate::RobotInRoom { robot, .. } if !robots.contains(robot) => {
                    return bad(format!("goal names unknown robot {robot}"));
                }
                _ => {}
            }
        }
        for e in &self.events {
            if !ids.contains(&e.object) || !ids.contains(&e.receptacle) {
                return bad(format!("relocation at tick {} names unknown objects", e.tick));
            }
        }
        Ok(())
    }
}
