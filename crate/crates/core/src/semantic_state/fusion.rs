use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;
use tracing::warn;

use super::{ObjectState, Observation, SemanticState, Sighting};
use crate::model::{EntityRef, ObjectId, Property, RobotId, SourceId, WriteStamp};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FusionError {
    #[error("observation from unregistered source {0}")]
    UnknownSource(SourceId),
}

/// A dropped entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub object: ObjectId,
    pub reason: String,
}

/// What a fusion step did.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FuseReport {
    /// Objects first seen by this observation.
    pub created: BTreeSet<ObjectId>,
    /// Pre-existing objects whose pose, parent or properties changed.
    pub changed: BTreeSet<ObjectId>,
    pub violations: Vec<Violation>,
}

impl FuseReport {
    pub fn touched(&self) -> impl Iterator<Item = &ObjectId> {
        self.created.iter().chain(self.changed.iter())
    }
}

/// A successfully executed manipulation primitive.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletedAction {
    Pickup(ObjectId),
    Put { object: ObjectId, receptacle: ObjectId },
    Open(ObjectId),
    Close(ObjectId),
    ToggleOn(ObjectId),
    ToggleOff(ObjectId),
    Slice(ObjectId),
}

/// Belief disagrees with a completed action; indicates an executor bug.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateMismatch {
    #[error("unknown robot {0}")]
    UnknownRobot(RobotId),
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("robot {robot} picked up {object} while believed to hold {held}")]
    HandsFull { robot: RobotId, object: ObjectId, held: ObjectId },
    #[error("robot {robot} put {object} but is believed to hold {held:?}")]
    NotHolding { robot: RobotId, object: ObjectId, held: Option<ObjectId> },
}

enum EntryOutcome {
    Applied,
    Deferred,
    Dropped(Violation),
}

impl SemanticState {
    /// Folds one observation into the belief with per-field last-writer-wins.
    ///
    /// Entries that would dangle or close a containment cycle are dropped and
    /// reported; everything else is applied.
    pub fn fuse(&mut self, obs: &Observation) -> Result<FuseReport, FusionError> {
        let registered = match &obs.src {
            SourceId::Robot(r) => self.robots.contains_key(r),
            SourceId::Device(d) => self.devices.contains(d),
            SourceId::World => false,
        };
        if !registered {
            return Err(FusionError::UnknownSource(obs.src.clone()));
        }
        self.clock = self.clock.max(obs.tau);
        let stamp = WriteStamp::new(obs.tau, obs.src.clone());
        let mut report = FuseReport::default();

        if let (SourceId::Robot(r), Some(rep)) = (&obs.src, &obs.robot) {
            let robot = self.robots.get_mut(r).expect("checked above");
            if obs.tau >= robot.tau {
                robot.cell = rep.cell;
                robot.theta = super::normalize_yaw(rep.theta);
                robot.phi = rep.phi;
                robot.tau = obs.tau;
            }
            if rep.inv.is_none() {
                for o in self.objects.values_mut() {
                    if o.carrier() == Some(r) && o.stamps.pose < stamp {
                        o.rec = None;
                        o.stamps.pose = stamp.clone();
                        o.refresh_writer();
                        report.changed.insert(o.id.clone());
                    }
                }
            }
        }

        let mut pending: Vec<&Sighting> = obs.entries.iter().collect();
        loop {
            let mut deferred = Vec::new();
            let mut progressed = false;
            for e in pending {
                match self.apply_sighting(e, &stamp, &mut report) {
                    EntryOutcome::Applied => progressed = true,
                    EntryOutcome::Deferred => deferred.push(e),
                    EntryOutcome::Dropped(v) => {
                        warn!(object = %v.object, reason = %v.reason, "dropped observation entry");
                        report.violations.push(v);
                    }
                }
            }
            if deferred.is_empty() {
                break;
            }
            if !progressed {
                for e in deferred {
                    let v = Violation {
                        object: e.object.clone(),
                        reason: format!("parent {:?} unknown", e.rec),
                    };
                    warn!(object = %v.object, reason = %v.reason, "dropped observation entry");
                    report.violations.push(v);
                }
                break;
            }
            pending = deferred;
        }

        self.normalize_carry(&mut report);

        if obs.src.is_robot() && !obs.visited_cells.is_empty() {
            for area in self.areas.values_mut() {
                let before = area.observed.len();
                let bounds = &area.bounds;
                area.observed.extend(
                    obs.visited_cells.iter().copied().filter(|c| bounds.iter().any(|r| r.contains(*c))),
                );
                if area.observed.len() != before {
                    area.recompute_fraction();
                }
            }
        }
        Ok(report)
    }

    fn apply_sighting(&mut self, e: &Sighting, stamp: &WriteStamp, report: &mut FuseReport) -> EntryOutcome {
        let pose_applies = self
            .objects
            .get(&e.object)
            .map_or(true, |o| *stamp > o.stamps.pose);
        if pose_applies {
            match &e.rec {
                Some(EntityRef::Object(k)) => {
                    if k == &e.object {
                        return EntryOutcome::Dropped(Violation {
                            object: e.object.clone(),
                            reason: "object contains itself".into(),
                        });
                    }
                    if !self.objects.contains_key(k) {
                        return EntryOutcome::Deferred;
                    }
                    if self.objects.contains_key(&e.object) && self.rec_chain_contains(k, &e.object) {
                        return EntryOutcome::Dropped(Violation {
                            object: e.object.clone(),
                            reason: format!("placing inside {k} would create a containment cycle"),
                        });
                    }
                }
                Some(EntityRef::Robot(r)) if !self.robots.contains_key(r) => {
                    return EntryOutcome::Dropped(Violation {
                        object: e.object.clone(),
                        reason: format!("carrier {r} is not a registered robot"),
                    });
                }
                _ => {}
            }
        }

        let applicable = e.class.applicable().and(e.observed);
        match self.objects.get_mut(&e.object) {
            None => {
                let mut o = ObjectState::new(
                    e.object.clone(),
                    e.class,
                    e.cell,
                    e.room.clone(),
                    e.rec.clone(),
                    e.props.and(applicable),
                    stamp.src.clone(),
                    stamp.tau,
                );
                for p in Property::ALL {
                    if !applicable.get(p) {
                        o.stamps.props[p.index()] = WriteStamp::zero();
                    }
                }
                o.refresh_writer();
                report.created.insert(o.id.clone());
                self.objects.insert(o.id.clone(), o);
            }
            Some(o) => {
                let before = (o.cell, o.rec.clone(), o.props, o.room.clone());
                if pose_applies {
                    o.cell = e.cell;
                    o.room = e.room.clone();
                    o.rec = e.rec.clone();
                    o.stamps.pose = stamp.clone();
                }
                for p in applicable.iter() {
                    if *stamp > o.stamps.props[p.index()] {
                        o.props.set(p, e.props.get(p));
                        o.stamps.props[p.index()] = stamp.clone();
                    }
                }
                o.refresh_writer();
                if before != (o.cell, o.rec.clone(), o.props, o.room.clone()) {
                    report.changed.insert(o.id.clone());
                }
            }
        }
        EntryOutcome::Applied
    }

    /// Restores the carry bijection: per robot, the newest carry claim wins
    /// and `inv` mirrors it.
    fn normalize_carry(&mut self, report: &mut FuseReport) {
        let mut claims: BTreeMap<RobotId, Vec<(WriteStamp, ObjectId)>> = BTreeMap::new();
        for o in self.objects.values() {
            if let Some(r) = o.carrier() {
                claims
                    .entry(r.clone())
                    .or_default()
                    .push((o.stamps.pose.clone(), o.id.clone()));
            }
        }
        for robot in self.robots.values_mut() {
            let winner = claims.get(&robot.id).and_then(|c| c.iter().max()).map(|(_, id)| id.clone());
            if let Some(list) = claims.get(&robot.id) {
                for (_, id) in list {
                    if Some(id) != winner.as_ref() {
                        let o = self.objects.get_mut(id).expect("claimed object exists");
                        o.rec = None;
                        report.changed.insert(id.clone());
                    }
                }
            }
            robot.inv = winner;
        }
    }

    /// Bookkeeping for a primitive the executing robot just completed.
    pub fn apply_manipulation_effects(
        &mut self,
        robot: &RobotId,
        action: &CompletedAction,
        tick: u64,
    ) -> Result<(), StateMismatch> {
        let r = self
            .robots
            .get(robot)
            .ok_or_else(|| StateMismatch::UnknownRobot(robot.clone()))?;
        let robot_cell = r.cell;
        let held = r.inv.clone();
        let stamp = WriteStamp::new(tick, SourceId::Robot(robot.clone()));
        self.clock = self.clock.max(tick);
        let known = |s: &Self, o: &ObjectId| {
            if s.objects.contains_key(o) {
                Ok(())
            } else {
                Err(StateMismatch::UnknownObject(o.clone()))
            }
        };

        match action {
            CompletedAction::Pickup(o) => {
                known(self, o)?;
                if let Some(h) = held {
                    if &h != o {
                        return Err(StateMismatch::HandsFull { robot: robot.clone(), object: o.clone(), held: h });
                    }
                }
                let room = self.area_of(robot_cell).cloned();
                let obj = self.objects.get_mut(o).expect("checked");
                obj.rec = Some(EntityRef::Robot(robot.clone()));
                obj.cell = robot_cell;
                if let Some(room) = room {
                    obj.room = room;
                }
                bump(&mut obj.stamps.pose, &stamp);
                obj.refresh_writer();
                self.robots.get_mut(robot).expect("checked").inv = Some(o.clone());
            }
            CompletedAction::Put { object, receptacle } => {
                known(self, object)?;
                known(self, receptacle)?;
                if held.as_ref() != Some(object) {
                    return Err(StateMismatch::NotHolding { robot: robot.clone(), object: object.clone(), held });
                }
                let (cell, room) = {
                    let k = &self.objects[receptacle];
                    (k.cell, k.room.clone())
                };
                let obj = self.objects.get_mut(object).expect("checked");
                obj.rec = Some(EntityRef::Object(receptacle.clone()));
                obj.cell = cell;
                obj.room = room;
                bump(&mut obj.stamps.pose, &stamp);
                obj.refresh_writer();
                self.robots.get_mut(robot).expect("checked").inv = None;
            }
            CompletedAction::Open(k) => self.force_bit(k, Property::IsOpen, true, &stamp)?,
            CompletedAction::Close(k) => self.force_bit(k, Property::IsOpen, false, &stamp)?,
            CompletedAction::ToggleOn(k) => self.force_bit(k, Property::IsToggled, true, &stamp)?,
            CompletedAction::ToggleOff(k) => self.force_bit(k, Property::IsToggled, false, &stamp)?,
            CompletedAction::Slice(o) => self.force_bit(o, Property::IsSliced, true, &stamp)?,
        }
        Ok(())
    }

    fn force_bit(&mut self, id: &ObjectId, p: Property, value: bool, stamp: &WriteStamp) -> Result<(), StateMismatch> {
        let o = self
            .objects
            .get_mut(id)
            .ok_or_else(|| StateMismatch::UnknownObject(id.clone()))?;
        o.props.set(p, value);
        bump(&mut o.stamps.props[p.index()], stamp);
        o.refresh_writer();
        Ok(())
    }
}

fn bump(field: &mut WriteStamp, stamp: &WriteStamp) {
    if *stamp > *field {
        *field = stamp.clone();
    }
}
