use std::collections::{BTreeMap, BTreeSet};

use super::{ActionNode, Fleet, HighLevelKind, PlanError, PlanGraph, Task};
use crate::model::{AreaId, ObjectClass, ObjectId, Property};
use crate::semantic_state::{Predicate, RobotStatus, SemanticState};

/// Deterministic rule-based planner over the unsatisfied goal predicates.
///
/// Known targets get manipulation nodes with physical prerequisites as
/// edges; unknown targets get one explore node per unexplored room, nearest
/// room first. Exploration never feeds downstream nodes: discoveries are
/// picked up by replanning.
pub fn baseline_plan(task: &Task, state: &SemanticState, fleet: &Fleet) -> Result<PlanGraph, PlanError> {
    let mut b = Builder { state, graph: PlanGraph::new(), opens: BTreeMap::new(), touches: BTreeMap::new(), closes: Vec::new() };
    let mut needs_explore = false;
    let mut unachievable = Vec::new();

    for p in task.goal.unsatisfied(state) {
        let known = |id: &ObjectId| state.objects.contains_key(id);
        match p {
            Predicate::ObjectInReceptacle { object, receptacle } => {
                if known(object) && known(receptacle) {
                    b.fetch(object, receptacle);
                } else {
                    needs_explore = true;
                }
            }
            Predicate::ObjectInRoom { object, room } => {
                if !known(object) {
                    needs_explore = true;
                } else if let Some(rec) = b.receptacle_in(room, object) {
                    b.fetch(object, &rec);
                } else {
                    needs_explore = true;
                }
            }
            Predicate::PropertyIs { object, property, value } => {
                if !known(object) {
                    needs_explore = true;
                    continue;
                }
                match (property, value) {
                    (Property::IsToggled, v) => {
                        b.simple(HighLevelKind::ToggleDevice, object, if *v { "on" } else { "off" });
                    }
                    (Property::IsOpen, true) => {
                        b.open(object);
                    }
                    (Property::IsOpen, false) => {
                        let id = b.simple(HighLevelKind::OpenClose, object, "closed");
                        b.closes.push((object.clone(), id));
                    }
                    (Property::IsSliced, true) => {
                        if state.objects.values().any(|o| o.class == ObjectClass::Knife) {
                            b.slice(object);
                        } else {
                            needs_explore = true;
                        }
                    }
                    _ => unachievable.push(p.to_string()),
                }
            }
            Predicate::RobotInRoom { robot, room } => {
                let mut n = ActionNode::new(b.next_id(), HighLevelKind::NavigateTo, &[("room", room.as_str())]);
                n.r_pref = Some(robot.clone());
                b.graph.add(n);
            }
        }
    }

    // Receptacles this plan opens but the goal wants shut get closed again.
    for p in &task.goal.predicates {
        if let Predicate::PropertyIs { object, property: Property::IsOpen, value: false } = p {
            if b.opens.contains_key(object) && !b.closes.iter().any(|(o, _)| o == object) {
                let id = b.simple(HighLevelKind::OpenClose, object, "closed");
                b.closes.push((object.clone(), id));
            }
        }
    }

    // Closing waits for everything that goes through the receptacle.
    for (obj, close) in std::mem::take(&mut b.closes) {
        for t in b.touches.get(&obj).cloned().unwrap_or_default() {
            b.graph.depend(&t, &close);
        }
    }

    if needs_explore {
        for room in exploration_order(state, fleet) {
            b.graph.add(ActionNode::new(b.next_id(), HighLevelKind::ExploreRoom, &[("room", room.as_str())]));
        }
    }
    if b.graph.is_empty() && (needs_explore || !unachievable.is_empty()) {
        let why = if unachievable.is_empty() {
            "targets unknown and every room explored".to_string()
        } else {
            format!("no action achieves {}", unachievable.join(", "))
        };
        return Err(PlanError::NoFeasibleAction(why));
    }
    Ok(b.graph)
}

/// Unexplored rooms by Manhattan distance to the nearest idle robot (any
/// robot if none is idle), ties by room id.
pub fn exploration_order(state: &SemanticState, fleet: &Fleet) -> Vec<AreaId> {
    let robots: Vec<_> = state.robots.values().filter(|r| fleet.contains_key(&r.id)).collect();
    let idle: Vec<_> = robots.iter().filter(|r| r.sigma == RobotStatus::Idle).copied().collect();
    let pool = if idle.is_empty() { robots } else { idle };
    let mut rooms: Vec<(i32, AreaId)> = state
        .areas
        .values()
        .filter(|a| !a.fully_explored())
        .map(|a| {
            let d = pool
                .iter()
                .flat_map(|r| a.cells().map(move |c| c.manhattan(r.cell)))
                .min()
                .unwrap_or(i32::MAX);
            (d, a.id.clone())
        })
        .collect();
    rooms.sort();
    rooms.into_iter().map(|(_, id)| id).collect()
}

struct Builder<'a> {
    state: &'a SemanticState,
    graph: PlanGraph,
    /// Receptacle → node opening it.
    opens: BTreeMap<ObjectId, String>,
    /// Receptacle → nodes that take from or put into it.
    touches: BTreeMap<ObjectId, BTreeSet<String>>,
    closes: Vec<(ObjectId, String)>,
}

impl Builder<'_> {
    fn next_id(&self) -> String {
        format!("n{:03}", self.graph.nodes.len())
    }

    fn simple(&mut self, kind: HighLevelKind, object: &ObjectId, state: &str) -> String {
        let id = self.next_id();
        self.graph.add(ActionNode::new(id.clone(), kind, &[("object", object.as_str()), ("state", state)]));
        id
    }

    fn open(&mut self, receptacle: &ObjectId) -> String {
        if let Some(id) = self.opens.get(receptacle) {
            return id.clone();
        }
        let id = self.simple(HighLevelKind::OpenClose, receptacle, "open");
        self.opens.insert(receptacle.clone(), id.clone());
        id
    }

    fn is_closed(&self, id: &ObjectId) -> bool {
        self.state.objects.get(id).is_some_and(|o| o.class.is_openable() && !o.props.get(Property::IsOpen))
    }

    /// Open nodes for every closed receptacle enclosing `object`.
    fn open_enclosing(&mut self, object: &ObjectId) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = self.state.objects.get(object).and_then(|o| o.receptacle()).cloned();
        let mut guard = 0;
        while let Some(parent) = cur {
            guard += 1;
            if guard > self.state.objects.len() {
                break;
            }
            self.touches.entry(parent.clone()).or_default();
            if self.is_closed(&parent) {
                out.push(self.open(&parent));
            }
            cur = self.state.objects.get(&parent).and_then(|o| o.receptacle()).cloned();
        }
        out
    }

    fn fetch(&mut self, object: &ObjectId, receptacle: &ObjectId) {
        let mut deps = self.open_enclosing(object);
        if self.is_closed(receptacle) {
            deps.push(self.open(receptacle));
        }
        deps.extend(self.open_enclosing(receptacle));
        let id = self.next_id();
        self.graph.add(ActionNode::new(
            id.clone(),
            HighLevelKind::FetchAndPlace,
            &[("object", object.as_str()), ("receptacle", receptacle.as_str())],
        ));
        for d in deps {
            self.graph.depend(&d, &id);
        }
        self.touches.entry(receptacle.clone()).or_default().insert(id.clone());
        if let Some(src) = self.state.objects.get(object).and_then(|o| o.receptacle()) {
            self.touches.entry(src.clone()).or_default().insert(id.clone());
        }
    }

    fn slice(&mut self, object: &ObjectId) {
        let deps = self.open_enclosing(object);
        let id = self.next_id();
        self.graph.add(ActionNode::new(id.clone(), HighLevelKind::SliceObject, &[("object", object.as_str())]));
        for d in deps {
            self.graph.depend(&d, &id);
        }
    }

    /// A receptacle believed to be in `room` to hold `object`: non-openable
    /// surfaces first, then by id.
    fn receptacle_in(&self, room: &AreaId, object: &ObjectId) -> Option<ObjectId> {
        self.state
            .objects
            .values()
            .filter(|o| &o.room == room && o.class.is_receptacle() && &o.id != object && o.carrier().is_none())
            .filter(|o| !self.state.rec_chain_contains(&o.id, object))
            .min_by_key(|o| (o.class.is_openable(), o.id.clone()))
            .map(|o| o.id.clone())
    }
}
