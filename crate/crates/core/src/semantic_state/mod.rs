//! The hub's belief: robot, object and area state sets, and the fusion
//! transition that folds robot and IoT observations into them.

mod codec;
mod fusion;
mod goal;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{
    ActionKind, AreaId, Cell, DeviceId, EntityRef, ObjectClass, ObjectId, Property, PropertyVector,
    Rect, RobotId, SourceId, WriteStamp,
};

pub use codec::{parse_state, serialize_state, CodecError, STATE_FORMAT_VERSION};
pub use fusion::{CompletedAction, FuseReport, FusionError, StateMismatch, Violation};
pub use goal::{query_goal, GoalCondition, GoalError, Predicate};

/// Robot execution status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RobotStatus {
    Idle,
    Executing,
    Canceling,
}

impl RobotStatus {
    pub fn name(self) -> &'static str {
        match self {
            RobotStatus::Idle => "IDLE",
            RobotStatus::Executing => "EXECUTING",
            RobotStatus::Canceling => "CANCELING",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub id: RobotId,
    pub cell: Cell,
    /// Continuous offset within the cell, meters. Always zero in the grid simulator.
    #[serde(default)]
    pub offset: [f64; 2],
    /// Yaw in degrees, `[0, 360)`. 0 faces +x, 90 faces +y.
    pub theta: f64,
    /// Camera pitch in degrees.
    #[serde(default)]
    pub phi: f64,
    pub sigma: RobotStatus,
    pub inv: Option<ObjectId>,
    pub skills: BTreeSet<ActionKind>,
    /// Tick of the last self-report folded into this record.
    #[serde(default)]
    pub tau: u64,
}

impl RobotState {
    pub fn new(id: RobotId, cell: Cell, theta: f64, skills: BTreeSet<ActionKind>) -> Self {
        Self {
            id,
            cell,
            offset: [0.0, 0.0],
            theta: normalize_yaw(theta),
            phi: 0.0,
            sigma: RobotStatus::Idle,
            inv: None,
            skills,
            tau: 0,
        }
    }

    pub fn has_skills(&self, required: &BTreeSet<ActionKind>) -> bool {
        required.is_subset(&self.skills)
    }
}

/// Wraps any angle into `[0, 360)`.
pub fn normalize_yaw(theta: f64) -> f64 {
    let t = theta.rem_euclid(360.0);
    if t >= 360.0 {
        0.0
    } else {
        t
    }
}

/// Per-field write stamps backing last-writer-wins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldStamps {
    /// Covers `cell`, `room` and `rec` together.
    pub pose: WriteStamp,
    pub props: [WriteStamp; Property::COUNT],
}

impl FieldStamps {
    pub fn unwritten() -> Self {
        Self {
            pose: WriteStamp::zero(),
            props: std::array::from_fn(|_| WriteStamp::zero()),
        }
    }

    pub fn max(&self) -> &WriteStamp {
        self.props.iter().fold(&self.pose, |m, s| if s > m { s } else { m })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectState {
    pub id: ObjectId,
    pub class: ObjectClass,
    pub cell: Cell,
    pub rec: Option<EntityRef>,
    pub props: PropertyVector,
    pub room: AreaId,
    /// Last writer.
    pub src: SourceId,
    pub tau: u64,
    pub stamps: FieldStamps,
}

impl ObjectState {
    /// A record written entirely by `src` at `tau`.
    pub fn new(
        id: ObjectId,
        class: ObjectClass,
        cell: Cell,
        room: AreaId,
        rec: Option<EntityRef>,
        props: PropertyVector,
        src: SourceId,
        tau: u64,
    ) -> Self {
        let stamp = WriteStamp::new(tau, src.clone());
        let applicable = class.applicable();
        let mut stamps = FieldStamps::unwritten();
        stamps.pose = stamp.clone();
        for p in applicable.iter() {
            stamps.props[p.index()] = stamp.clone();
        }
        Self {
            id,
            class,
            cell,
            rec,
            props: props.and(applicable),
            room,
            src,
            tau,
            stamps,
        }
    }

    pub(crate) fn refresh_writer(&mut self) {
        let m = self.stamps.max().clone();
        self.src = m.src;
        self.tau = m.tau;
    }

    pub fn receptacle(&self) -> Option<&ObjectId> {
        self.rec.as_ref().and_then(EntityRef::as_object)
    }

    pub fn carrier(&self) -> Option<&RobotId> {
        self.rec.as_ref().and_then(EntityRef::as_robot)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AreaState {
    pub id: AreaId,
    pub name: String,
    pub bounds: Vec<Rect>,
    /// Cells any robot has observed.
    pub observed: BTreeSet<Cell>,
    pub explored_fraction: f64,
}

impl AreaState {
    pub fn new(id: AreaId, name: impl Into<String>, bounds: Vec<Rect>) -> Self {
        Self {
            id,
            name: name.into(),
            bounds,
            observed: BTreeSet::new(),
            explored_fraction: 0.0,
        }
    }

    pub fn contains(&self, c: Cell) -> bool {
        self.bounds.iter().any(|r| r.contains(c))
    }

    pub fn cell_count(&self) -> usize {
        self.bounds.iter().map(Rect::area).sum()
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.bounds.iter().flat_map(|r| r.cells())
    }

    pub(crate) fn recompute_fraction(&mut self) {
        let total = self.cell_count();
        self.explored_fraction = if total == 0 {
            1.0
        } else {
            self.observed.len() as f64 / total as f64
        };
    }

    pub fn fully_explored(&self) -> bool {
        self.observed.len() >= self.cell_count()
    }
}

/// Self-report carried by robot observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotReport {
    pub cell: Cell,
    pub theta: f64,
    pub phi: f64,
    pub inv: Option<ObjectId>,
}

/// One sighted object. `observed` masks which property bits the sensor reported.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sighting {
    pub object: ObjectId,
    pub class: ObjectClass,
    pub cell: Cell,
    pub room: AreaId,
    pub rec: Option<EntityRef>,
    pub observed: PropertyVector,
    pub props: PropertyVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub src: SourceId,
    /// Tick of sensing (delivery may be later).
    pub tau: u64,
    #[serde(default)]
    pub robot: Option<RobotReport>,
    pub entries: Vec<Sighting>,
    /// Cells seen by a robot this tick. Empty for device sources.
    #[serde(default)]
    pub visited_cells: BTreeSet<Cell>,
}

impl Observation {
    pub fn empty(src: SourceId, tau: u64) -> Self {
        Self {
            src,
            tau,
            robot: None,
            entries: Vec::new(),
            visited_cells: BTreeSet::new(),
        }
    }
}

/// The hub's belief `W_t`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SemanticState {
    pub robots: BTreeMap<RobotId, RobotState>,
    pub objects: BTreeMap<ObjectId, ObjectState>,
    pub areas: BTreeMap<AreaId, AreaState>,
    pub clock: u64,
    /// Devices whose observations this state accepts.
    pub devices: BTreeSet<DeviceId>,
}

impl SemanticState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn area_of(&self, c: Cell) -> Option<&AreaId> {
        self.areas.values().find(|a| a.contains(c)).map(|a| &a.id)
    }

    /// An object is directly reachable unless some ancestor receptacle is closed.
    pub fn is_directly_reachable(&self, object: &ObjectId) -> bool {
        self.closed_ancestor(object).is_none()
    }

    /// Nearest enclosing receptacle believed closed, if any.
    pub fn closed_ancestor(&self, object: &ObjectId) -> Option<&ObjectId> {
        let mut cur = self.objects.get(object)?;
        for _ in 0..=self.objects.len() {
            let parent = cur.receptacle()?;
            let p = self.objects.get(parent)?;
            if p.class.is_openable() && !p.props.get(Property::IsOpen) {
                return Some(&p.id);
            }
            cur = p;
        }
        None
    }

    /// True when following `rec` links from `start` would reach `target`.
    pub fn rec_chain_contains(&self, start: &ObjectId, target: &ObjectId) -> bool {
        let mut cur = start;
        for _ in 0..=self.objects.len() {
            if cur == target {
                return true;
            }
            match self.objects.get(cur).and_then(ObjectState::receptacle) {
                Some(next) => cur = next,
                None => return false,
            }
        }
        true
    }

    /// Checks the structural invariants; returns one message per violation.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut carried: BTreeMap<&RobotId, Vec<&ObjectId>> = BTreeMap::new();
        for o in self.objects.values() {
            match &o.rec {
                Some(EntityRef::Object(k)) if !self.objects.contains_key(k) => {
                    out.push(format!("{} rec names unknown object {k}", o.id))
                }
                Some(EntityRef::Robot(r)) => {
                    if !self.robots.contains_key(r) {
                        out.push(format!("{} rec names unknown robot {r}", o.id));
                    }
                    carried.entry(r).or_default().push(&o.id);
                }
                _ => {}
            }
            if let Some(k) = o.receptacle() {
                if self.rec_chain_contains(k, &o.id) {
                    out.push(format!("containment cycle through {}", o.id));
                }
            }
            if o.tau > self.clock {
                out.push(format!("{} tau {} beyond clock {}", o.id, o.tau, self.clock));
            }
        }
        for r in self.robots.values() {
            let held = carried.get(&r.id).cloned().unwrap_or_default();
            if held.len() > 1 {
                out.push(format!("robot {} named as carrier by {} objects", r.id, held.len()));
            }
            if r.inv.as_ref() != held.first().copied() {
                out.push(format!("robot {} inv {:?} disagrees with carried {:?}", r.id, r.inv, held));
            }
            if !(0.0..360.0).contains(&r.theta) {
                out.push(format!("robot {} yaw {} out of range", r.id, r.theta));
            }
            if r.inv.is_some() && !r.skills.contains(&ActionKind::Pickup) {
                out.push(format!("robot {} carries without Pickup skill", r.id));
            }
            if r.tau > self.clock {
                out.push(format!("robot {} tau beyond clock", r.id));
            }
        }
        out
    }
}
