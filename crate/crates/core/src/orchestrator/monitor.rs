use std::collections::BTreeSet;

use crate::model::{ObjectClass, ObjectId, Property, RobotId};
use crate::planner::{ActionNode, HighLevelKind, NodeStatus, PlanGraph};
use crate::semantic_state::{GoalCondition, ObjectState, Predicate, SemanticState};

/// Relocations shorter than this (Manhattan cells) don't trigger a replan.
pub const REPLAN_DISTANCE: i32 = 2;

/// What happened to the belief since the current plan was made.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplanContext {
    /// Objects first seen since planning.
    pub discovered: BTreeSet<ObjectId>,
    /// An explore node finished since planning.
    pub explore_completed: bool,
}

/// The property a node sets on its target, with the value it sets.
fn node_effect(node: &ActionNode) -> Option<(Property, bool)> {
    let state = node.param("state");
    match node.a {
        HighLevelKind::ToggleDevice => Some((Property::IsToggled, state == Some("on"))),
        HighLevelKind::OpenClose => Some((Property::IsOpen, state == Some("open"))),
        HighLevelKind::SliceObject => Some((Property::IsSliced, true)),
        _ => None,
    }
}

fn node_objects(node: &ActionNode) -> impl Iterator<Item = ObjectId> + '_ {
    node.a.object_params().iter().filter_map(|k| node.param(k)).map(ObjectId::new)
}

/// Moved at least the threshold, or taken by a robot outside this plan.
fn displaced(before: &ObjectState, now: &ObjectState, running_on: &BTreeSet<RobotId>) -> bool {
    match (before.carrier(), now.carrier()) {
        (None, None) => before.cell.manhattan(now.cell) >= REPLAN_DISTANCE,
        (_, Some(r)) => !running_on.contains(r) && before.carrier() != Some(r),
        (Some(_), None) => false,
    }
}

/// Objects whose discovery could unblock an unsatisfied predicate.
pub fn relevant(goal: &GoalCondition, belief: &SemanticState, object: &ObjectState) -> bool {
    goal.unsatisfied(belief).any(|p| {
        p.objects().contains(&&object.id)
            || match p {
                Predicate::PropertyIs { property: Property::IsSliced, value: true, .. } => object.class == ObjectClass::Knife,
                Predicate::ObjectInRoom { room, .. } => &object.room == room && object.class.is_receptacle(),
                _ => false,
            }
    })
}

/// Replan gate evaluated every loop iteration. `snapshot` is the belief
/// the plan was made from; `running_on` lists the robots executing nodes
/// of this plan (their own carrying is expected).
pub fn needs_replan(
    plan: &PlanGraph,
    snapshot: &SemanticState,
    belief: &SemanticState,
    goal: &GoalCondition,
    ctx: &ReplanContext,
    running_on: &BTreeSet<RobotId>,
) -> bool {
    for node in plan.nodes.values() {
        if !matches!(node.status, NodeStatus::Pending | NodeStatus::Running) {
            continue;
        }
        for id in node_objects(node) {
            let (Some(before), Some(now)) = (snapshot.objects.get(&id), belief.objects.get(&id)) else {
                if snapshot.objects.contains_key(&id) {
                    return true;
                }
                continue;
            };
            if displaced(before, now, running_on) {
                return true;
            }
        }
        if let (Some((prop, _)), Some(id)) = (node_effect(node), node.object()) {
            let id = ObjectId::new(id);
            if let (Some(before), Some(now)) = (snapshot.objects.get(&id), belief.objects.get(&id)) {
                if before.props.get(prop) != now.props.get(prop) {
                    return true;
                }
            }
        }
    }
    ctx.explore_completed
        && ctx
            .discovered
            .iter()
            .filter_map(|id| belief.objects.get(id))
            .any(|o| relevant(goal, belief, o))
}

/// Tick of the last observable progress (a node finishing or a robot moving).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Progress {
    pub last_tick: u64,
    pub moves: u64,
}

impl Progress {
    /// Records the fleet's cumulative move count and completions at `tick`.
    pub fn observe(&mut self, tick: u64, moves: u64, completed: bool) {
        if moves > self.moves || completed {
            self.last_tick = tick;
        }
        self.moves = self.moves.max(moves);
    }
}

/// No completion and no movement for `horizon` ticks while something runs.
pub fn detect_stall(plan: &PlanGraph, progress: &Progress, now: u64, horizon: u64) -> bool {
    plan.running().next().is_some() && now.saturating_sub(progress.last_tick) >= horizon
}
