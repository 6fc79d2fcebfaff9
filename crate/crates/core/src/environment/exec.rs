use std::fmt;

use serde::{Deserialize, Serialize};

use super::{mark_written, EnvError, GridWorld};
use crate::model::{ActionKind, Cell, EntityRef, ObjectClass, ObjectId, Property, RobotId, SourceId};
use crate::semantic_state::CompletedAction;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepTarget {
    None,
    Cell(Cell),
    Object(ObjectId),
}

/// One primitive. `Put` targets the receptacle; the object is whatever is held.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionStep {
    pub kind: ActionKind,
    pub target: StepTarget,
}

impl ActionStep {
    pub fn move_to(c: Cell) -> Self {
        Self { kind: ActionKind::MoveStep, target: StepTarget::Cell(c) }
    }

    pub fn face(c: Cell) -> Self {
        Self { kind: ActionKind::Rotate, target: StepTarget::Cell(c) }
    }

    pub fn scan() -> Self {
        Self { kind: ActionKind::Scan, target: StepTarget::None }
    }

    pub fn on(kind: ActionKind, object: ObjectId) -> Self {
        Self { kind, target: StepTarget::Object(object) }
    }

    pub fn open(object: ObjectId) -> Self {
        Self::on(ActionKind::Open, object)
    }

    pub fn target_object(&self) -> Option<&ObjectId> {
        match &self.target {
            StepTarget::Object(o) => Some(o),
            _ => None,
        }
    }

    /// Target kind matches action kind.
    pub fn is_well_formed(&self) -> bool {
        match self.kind {
            ActionKind::MoveStep | ActionKind::Rotate => matches!(self.target, StepTarget::Cell(_)),
            ActionKind::Scan => self.target == StepTarget::None,
            _ => matches!(self.target, StepTarget::Object(_)),
        }
    }
}

impl fmt::Display for ActionStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.target {
            StepTarget::None => write!(f, "{}", self.kind),
            StepTarget::Cell(c) => write!(f, "{}({c})", self.kind),
            StepTarget::Object(o) => write!(f, "{}({o})", self.kind),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureReason {
    Collision,
    OutOfRange,
    HandsFull,
    HandsEmpty,
    NotApplicable,
    BlockedByClosedReceptacle,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepResult {
    Success(Option<CompletedAction>),
    Failure(FailureReason),
}

impl StepResult {
    pub fn is_success(&self) -> bool {
        matches!(self, StepResult::Success(_))
    }

    pub fn failure(&self) -> Option<FailureReason> {
        match self {
            StepResult::Failure(r) => Some(*r),
            StepResult::Success(_) => None,
        }
    }
}

type Check = Result<(), FailureReason>;

impl GridWorld {
    /// Executes one primitive for `robot` against ground truth. Failures are
    /// ordinary return values; every call counts one action step.
    pub fn execute_action_step(&mut self, robot: &RobotId, step: &ActionStep) -> Result<StepResult, EnvError> {
        self.robot(robot)?;
        self.counters.entry(robot.clone()).or_default().action_steps += 1;
        let result = match self.try_step(robot, step) {
            Ok(done) => StepResult::Success(done),
            Err(reason) => StepResult::Failure(reason),
        };
        if step.kind == ActionKind::MoveStep && result.is_success() {
            self.counters.entry(robot.clone()).or_default().moves += 1;
        }
        Ok(result)
    }

    fn try_step(&mut self, rid: &RobotId, step: &ActionStep) -> Result<Option<CompletedAction>, FailureReason> {
        let robot = &self.robots[rid];
        if !step.is_well_formed() || !robot.skills.contains(&step.kind) {
            return Err(FailureReason::NotApplicable);
        }
        let here = robot.cell;
        let tick = self.tick;
        let src = SourceId::Robot(rid.clone());
        match (&step.kind, &step.target) {
            (ActionKind::MoveStep, StepTarget::Cell(to)) => {
                let to = *to;
                if here.manhattan(to) != 1 {
                    return Err(FailureReason::OutOfRange);
                }
                if self.layout.blocked(here, to) || self.robot_at(to).is_some() {
                    return Err(FailureReason::Collision);
                }
                let room = self.layout.room_of(to).map(|r| r.id.clone());
                let r = self.robots.get_mut(rid).expect("checked");
                r.cell = to;
                r.theta = yaw_towards(here, to).unwrap_or(r.theta);
                if let Some(held) = r.inv.clone() {
                    let o = self.objects.get_mut(&held).expect("held object exists");
                    o.cell = to;
                    if let Some(room) = room {
                        o.room = room;
                    }
                    mark_written(o, None, tick, src);
                }
                Ok(None)
            }
            (ActionKind::Rotate, StepTarget::Cell(c)) => {
                let r = self.robots.get_mut(rid).expect("checked");
                r.theta = yaw_towards(here, *c).unwrap_or(r.theta);
                Ok(None)
            }
            (ActionKind::Scan, _) => Ok(None),
            (kind, StepTarget::Object(target)) => self.manipulate(rid, *kind, target),
            _ => Err(FailureReason::NotApplicable),
        }
    }

    fn in_reach(&self, rid: &RobotId, object: &ObjectId) -> Check {
        let o = &self.objects[object];
        if let Some(carrier) = o.carrier() {
            return if carrier == rid { Ok(()) } else { Err(FailureReason::OutOfRange) };
        }
        if !self.layout.within_reach(self.robots[rid].cell, o.cell) {
            return Err(FailureReason::OutOfRange);
        }
        if self.closed_ancestor(object).is_some() {
            return Err(FailureReason::BlockedByClosedReceptacle);
        }
        Ok(())
    }

    fn manipulate(&mut self, rid: &RobotId, kind: ActionKind, target: &ObjectId) -> Result<Option<CompletedAction>, FailureReason> {
        let Some(obj) = self.objects.get(target) else {
            return Err(FailureReason::OutOfRange);
        };
        let class = obj.class;
        let held = self.robots[rid].inv.clone();
        let tick = self.tick;
        let src = SourceId::Robot(rid.clone());
        let need = |ok: bool| if ok { Ok(()) } else { Err(FailureReason::NotApplicable) };

        let done = match kind {
            ActionKind::Pickup => {
                if held.is_some() {
                    return Err(FailureReason::HandsFull);
                }
                need(class.is_pickupable())?;
                self.in_reach(rid, target)?;
                let here = self.robots[rid].cell;
                let o = self.objects.get_mut(target).expect("exists");
                o.rec = Some(EntityRef::Robot(rid.clone()));
                o.cell = here;
                mark_written(o, None, tick, src);
                self.robots.get_mut(rid).expect("checked").inv = Some(target.clone());
                CompletedAction::Pickup(target.clone())
            }
            ActionKind::Put => {
                let Some(object) = held else {
                    return Err(FailureReason::HandsEmpty);
                };
                need(class.is_receptacle() && obj.carrier().is_none() && &object != target)?;
                self.in_reach(rid, target)?;
                if class.is_openable() && !obj.props.get(Property::IsOpen) {
                    return Err(FailureReason::BlockedByClosedReceptacle);
                }
                let (cell, room) = (obj.cell, obj.room.clone());
                let o = self.objects.get_mut(&object).expect("held object exists");
                o.rec = Some(EntityRef::Object(target.clone()));
                o.cell = cell;
                o.room = room;
                mark_written(o, None, tick, src);
                self.robots.get_mut(rid).expect("checked").inv = None;
                CompletedAction::Put { object, receptacle: target.clone() }
            }
            ActionKind::Open | ActionKind::Close => {
                need(class.is_openable())?;
                self.in_reach(rid, target)?;
                let open = kind == ActionKind::Open;
                self.set_prop(target, Property::IsOpen, open, src);
                if open {
                    CompletedAction::Open(target.clone())
                } else {
                    CompletedAction::Close(target.clone())
                }
            }
            ActionKind::ToggleOn | ActionKind::ToggleOff => {
                need(class.is_toggleable())?;
                self.in_reach(rid, target)?;
                let on = kind == ActionKind::ToggleOn;
                self.set_prop(target, Property::IsToggled, on, src);
                if on {
                    CompletedAction::ToggleOn(target.clone())
                } else {
                    CompletedAction::ToggleOff(target.clone())
                }
            }
            ActionKind::Slice => {
                need(class.is_sliceable())?;
                match held.as_ref().map(|h| self.objects[h].class) {
                    None => return Err(FailureReason::HandsEmpty),
                    Some(ObjectClass::Knife) => {}
                    Some(_) => return Err(FailureReason::NotApplicable),
                }
                self.in_reach(rid, target)?;
                self.set_prop(target, Property::IsSliced, true, src);
                CompletedAction::Slice(target.clone())
            }
            _ => return Err(FailureReason::NotApplicable),
        };
        Ok(Some(done))
    }

    fn set_prop(&mut self, object: &ObjectId, p: Property, value: bool, src: SourceId) {
        let tick = self.tick;
        let o = self.objects.get_mut(object).expect("exists");
        o.props.set(p, value);
        mark_written(o, Some(p), tick, src);
    }
}

/// Yaw in degrees from one cell to another, `None` if they coincide.
pub(crate) fn yaw_towards(from: Cell, to: Cell) -> Option<f64> {
    if from == to {
        return None;
    }
    let yaw = ((to.y - from.y) as f64).atan2((to.x - from.x) as f64).to_degrees();
    Some(yaw.rem_euclid(360.0))
}
