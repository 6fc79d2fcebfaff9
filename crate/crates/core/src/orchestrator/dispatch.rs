use std::collections::{BTreeMap, BTreeSet};

use crate::environment::{distance_map, Layout};
use crate::model::{Cell, ObjectClass, ObjectId, RobotId};
use crate::planner::{ActionNode, HighLevelKind, NodeStatus, PlanGraph};
use crate::semantic_state::{GoalCondition, Predicate, RobotStatus, SemanticState};

/// Where a node will make its robot go, as far as the belief knows.
pub fn target_cell(node: &ActionNode, belief: &SemanticState) -> Option<Cell> {
    if let Some(room) = node.param("room") {
        return belief.areas.get(&room.into()).and_then(|a| a.bounds.first()).map(|b| b.center());
    }
    let o = belief.objects.get(&ObjectId::new(node.object()?))?;
    Some(match o.carrier() {
        Some(r) => belief.robots.get(r).map_or(o.cell, |r| r.cell),
        None => o.cell,
    })
}

fn target_class(node: &ActionNode, belief: &SemanticState) -> Option<ObjectClass> {
    belief.objects.get(&ObjectId::new(node.object()?)).map(|o| o.class)
}

/// 0 = already holds what the node needs, 1 = neutral, 2 = must free hands first.
fn inventory_rank(node: &ActionNode, robot: &RobotId, belief: &SemanticState) -> u8 {
    let held = belief.robots.get(robot).and_then(|r| r.inv.as_ref());
    let object = node.object().map(ObjectId::new);
    if held.is_some() && held == object.as_ref() {
        return 0;
    }
    let held_class = held.and_then(|h| belief.objects.get(h)).map(|o| o.class);
    match node.a {
        HighLevelKind::SliceObject if held_class == Some(ObjectClass::Knife) => 0,
        HighLevelKind::FetchAndPlace | HighLevelKind::Dispose | HighLevelKind::SliceObject => {
            if held.is_none() {
                1
            } else {
                2
            }
        }
        _ => 1,
    }
}

/// Best idle robot for `node`: hard skill/preference filter, then path
/// distance to the target, inventory fit, camera-pitch change and id.
pub fn match_robot(node: &ActionNode, idle: &[RobotId], belief: &SemanticState, layout: &Layout) -> Option<RobotId> {
    let target = target_cell(node, belief).filter(|c| layout.in_bounds(*c));
    let dist = target.map(|t| distance_map(layout, t, &BTreeSet::new()));
    let phi_target = target_class(node, belief).map_or(0.0, ObjectClass::view_horizon);
    idle.iter()
        .filter_map(|id| belief.robots.get(id))
        .filter(|r| r.has_skills(&node.req_skills))
        .filter(|r| node.r_pref.as_ref().is_none_or(|p| p == &r.id))
        .map(|r| {
            let d = dist.as_ref().map_or(0, |m| m.get(r.cell).unwrap_or(u32::MAX));
            let pitch = ((phi_target - r.phi).abs() * 1000.0).round() as i64;
            ((d, inventory_rank(node, &r.id, belief), pitch, r.id.clone()), r.id.clone())
        })
        .min_by(|a, b| a.0.cmp(&b.0))
        .map(|(_, id)| id)
}

/// Assigns ready nodes (id order) to idle robots until either runs out.
/// Marks nodes RUNNING and robots EXECUTING in the belief.
pub fn dispatch_ready(
    plan: &mut PlanGraph,
    idle: &[RobotId],
    belief: &mut SemanticState,
    layout: &Layout,
) -> Vec<(RobotId, String)> {
    let mut free: Vec<RobotId> = idle.to_vec();
    let mut out = Vec::new();
    let ready: Vec<String> = plan.ready().iter().map(|n| n.node_id.clone()).collect();
    for id in ready {
        if free.is_empty() {
            break;
        }
        let Some(robot) = match_robot(&plan.nodes[&id], &free, belief, layout) else { continue };
        free.retain(|r| r != &robot);
        plan.nodes.get_mut(&id).expect("ready node exists").status = NodeStatus::Running;
        if let Some(r) = belief.robots.get_mut(&robot) {
            r.sigma = RobotStatus::Executing;
        }
        out.push((robot, id));
    }
    out
}

/// Isolated-robot task division: robot-specific predicates go to their
/// robot; the rest go one at a time to whoever holds the fewest so far
/// (ties by id).
pub fn split_goal(goal: &GoalCondition, robots: &[RobotId]) -> BTreeMap<RobotId, GoalCondition> {
    let mut out: BTreeMap<RobotId, GoalCondition> = robots.iter().map(|r| (r.clone(), GoalCondition::default())).collect();
    if robots.is_empty() {
        return out;
    }
    for p in &goal.predicates {
        let owner = match p {
            Predicate::RobotInRoom { robot, .. } if out.contains_key(robot) => robot.clone(),
            _ => out.iter().min_by_key(|(id, g)| (g.predicates.len(), (*id).clone())).map(|(id, _)| id.clone()).expect("non-empty"),
        };
        out.get_mut(&owner).expect("known robot").predicates.push(p.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActionKind, EntityRef, PropertyVector, SourceId};
    use crate::semantic_state::{ObjectState, RobotState};

    /// All orderings of `items` (small inputs only).
    fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let head = rest.remove(i);
            for mut tail in permutations(&rest) {
                tail.insert(0, head.clone());
                out.push(tail);
            }
        }
        out
    }

    fn all_skills() -> BTreeSet<ActionKind> {
        ActionKind::ALL.into_iter().collect()
    }

    fn belief(robots: &[(&str, Cell)]) -> SemanticState {
        let layout = Layout::open(10, 10);
        let mut s = SemanticState::new();
        s.areas = layout.area_states();
        for (id, c) in robots {
            s.robots.insert(RobotId::new(*id), RobotState::new(RobotId::new(*id), *c, 0.0, all_skills()));
        }
        s
    }

    fn put_object(s: &mut SemanticState, id: &str, class: ObjectClass, cell: Cell, rec: Option<EntityRef>) {
        let room = s.area_of(cell).cloned().unwrap();
        let o = ObjectState::new(ObjectId::new(id), class, cell, room, rec, PropertyVector::EMPTY, SourceId::World, 0);
        s.objects.insert(o.id.clone(), o);
    }

    fn rid(s: &str) -> RobotId {
        RobotId::new(s)
    }

    #[test]
    fn single_idle_robot_is_chosen() {
        let mut s = belief(&[("r1", Cell::new(0, 0))]);
        put_object(&mut s, "tv", ObjectClass::Television, Cell::new(5, 5), None);
        let n = ActionNode::new("n", HighLevelKind::ToggleDevice, &[("object", "tv"), ("state", "off")]);
        assert_eq!(match_robot(&n, &[rid("r1")], &s, &Layout::open(10, 10)), Some(rid("r1")));
    }

    #[test]
    fn carrier_beats_nearer_empty_hand() {
        let mut s = belief(&[("r1", Cell::new(6, 6)), ("r2", Cell::new(1, 1))]);
        put_object(&mut s, "table", ObjectClass::Table, Cell::new(7, 7), None);
        put_object(&mut s, "apple", ObjectClass::Apple, Cell::new(1, 1), Some(EntityRef::Robot(rid("r2"))));
        s.robots.get_mut(&rid("r2")).unwrap().inv = Some(ObjectId::new("apple"));
        let n = ActionNode::new("n", HighLevelKind::FetchAndPlace, &[("object", "apple"), ("receptacle", "table")]);
        assert_eq!(match_robot(&n, &[rid("r1"), rid("r2")], &s, &Layout::open(10, 10)), Some(rid("r2")));
    }

    #[test]
    fn nearer_robot_wins_then_empty_hands_then_id() {
        let mut s = belief(&[("r1", Cell::new(0, 0)), ("r2", Cell::new(4, 4)), ("r3", Cell::new(6, 6))]);
        put_object(&mut s, "mug", ObjectClass::Mug, Cell::new(5, 5), None);
        put_object(&mut s, "table", ObjectClass::Table, Cell::new(9, 9), None);
        put_object(&mut s, "book", ObjectClass::Book, Cell::new(6, 6), Some(EntityRef::Robot(rid("r3"))));
        s.robots.get_mut(&rid("r3")).unwrap().inv = Some(ObjectId::new("book"));
        let n = ActionNode::new("n", HighLevelKind::FetchAndPlace, &[("object", "mug"), ("receptacle", "table")]);
        let layout = Layout::open(10, 10);
        // r2 and r3 are both 2 away; r3 would have to put the book down first.
        assert_eq!(match_robot(&n, &[rid("r1"), rid("r2"), rid("r3")], &s, &layout), Some(rid("r2")));
        s.robots.get_mut(&rid("r2")).unwrap().cell = Cell::new(4, 6);
        s.robots.get_mut(&rid("r3")).unwrap().cell = Cell::new(6, 4);
        s.robots.get_mut(&rid("r3")).unwrap().inv = None;
        assert_eq!(match_robot(&n, &[rid("r3"), rid("r2")], &s, &layout), Some(rid("r2")));
    }

    #[test]
    fn preference_cannot_override_skills() {
        let mut s = belief(&[("r1", Cell::new(0, 0)), ("r3", Cell::new(1, 0))]);
        s.robots.get_mut(&rid("r3")).unwrap().skills = BTreeSet::from([ActionKind::MoveStep, ActionKind::Scan]);
        put_object(&mut s, "tv", ObjectClass::Television, Cell::new(5, 5), None);
        let mut n = ActionNode::new("n", HighLevelKind::ToggleDevice, &[("object", "tv"), ("state", "off")]);
        n.req_skills = HighLevelKind::ToggleDevice.skills(Some("off"));
        n.r_pref = Some(rid("r3"));
        assert_eq!(match_robot(&n, &[rid("r1"), rid("r3")], &s, &Layout::open(10, 10)), None);
    }

    #[test]
    fn no_idle_robots_no_assignments() {
        let mut s = belief(&[("r1", Cell::new(0, 0))]);
        let mut g = PlanGraph::new();
        g.add(ActionNode::new("a", HighLevelKind::NavigateTo, &[("room", "room_0")]));
        assert!(dispatch_ready(&mut g, &[], &mut s, &Layout::open(10, 10)).is_empty());
    }

    #[test]
    fn independent_nodes_go_to_distinct_robots() {
        let layout = Layout::open(10, 10);
        let mut s = belief(&[("r1", Cell::new(0, 0)), ("r2", Cell::new(9, 9)), ("r3", Cell::new(0, 9))]);
        let mut g = PlanGraph::new();
        for id in ["a", "b", "c"] {
            g.add(ActionNode::new(id, HighLevelKind::NavigateTo, &[("room", "room_0")]));
        }
        let idle = [rid("r1"), rid("r2"), rid("r3")];
        let got = dispatch_ready(&mut g, &idle, &mut s, &layout);
        assert_eq!(got.len(), 3);
        let robots: BTreeSet<_> = got.iter().map(|(r, _)| r.clone()).collect();
        assert_eq!(robots.len(), 3);
        assert!(g.nodes.values().all(|n| n.status == NodeStatus::Running));
        assert!(s.robots.values().all(|r| r.sigma == RobotStatus::Executing));
    }

    /// Every interleaving of completions on the diamond A→{B,C}→D.
    #[test]
    fn diamond_join_waits_for_both_branches() {
        let layout = Layout::open(10, 10);
        let robots = [rid("r1"), rid("r2")];
        // Completion order choices: which running node finishes next.
        for order in permutations(&[0usize, 1, 2, 3]) {
            let mut s = belief(&[("r1", Cell::new(0, 0)), ("r2", Cell::new(9, 9))]);
            let mut g = PlanGraph::new();
            for id in ["A", "B", "C", "D"] {
                g.add(ActionNode::new(id, HighLevelKind::NavigateTo, &[("room", "room_0")]));
            }
            for (a, b) in [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")] {
                g.depend(a, b);
            }
            let mut running: Vec<(RobotId, String)> = Vec::new();
            let mut finished = Vec::new();
            let mut pick = order.iter().cycle();
            for _ in 0..16 {
                let busy: BTreeSet<_> = running.iter().map(|(r, _)| r.clone()).collect();
                let idle: Vec<_> = robots.iter().filter(|r| !busy.contains(*r)).cloned().collect();
                for (r, n) in dispatch_ready(&mut g, &idle, &mut s, &layout) {
                    if n == "D" {
                        assert!(finished.contains(&"B".to_string()) && finished.contains(&"C".to_string()));
                    }
                    running.push((r, n));
                }
                if running.is_empty() {
                    break;
                }
                let k = pick.next().unwrap() % running.len();
                let (r, n) = running.remove(k);
                g.nodes.get_mut(&n).unwrap().status = NodeStatus::Done;
                s.robots.get_mut(&r).unwrap().sigma = RobotStatus::Idle;
                finished.push(n);
            }
            assert_eq!(finished.len(), 4);
            assert_eq!(finished[0], "A");
            assert_eq!(finished[3], "D");
        }
    }

    #[test]
    fn split_goal_spreads_predicates() {
        let goal = GoalCondition::parse(
            "ObjectInReceptacle(a, c) & ObjectInReceptacle(b, c) & PropertyIs(c, isOpen, 0) & RobotInRoom(r1, kitchen)",
        )
        .unwrap();
        let split = split_goal(&goal, &[rid("r1"), rid("r2"), rid("r3")]);
        let sizes: Vec<_> = split.values().map(|g| g.predicates.len()).collect();
        assert_eq!(sizes, [2, 1, 1]);
        assert_eq!(split[&rid("r1")].predicates[0].to_string(), "ObjectInReceptacle(a, c)");
        assert_eq!(split[&rid("r3")].predicates[0].to_string(), "PropertyIs(c, isOpen, 0)");
        assert!(split[&rid("r1")].predicates.iter().any(|p| matches!(p, Predicate::RobotInRoom { .. })));
    }
}
