use std::collections::BTreeSet;

use thiserror::Error;

use super::{distance_map, line_of_sight, plan_path, plan_path_avoiding, visible_cells, ActionStep, Layout, PathError, ViewCone};
use crate::model::{ActionKind, Cell, ObjectClass, ObjectId, Property, RobotId};
use crate::planner::{ActionNode, HighLevelKind};
use crate::semantic_state::SemanticState;

/// Re-expansions allowed after a primitive failure before the node fails.
pub const DEFAULT_RETRIES: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExpandError {
    #[error("unknown robot {0}")]
    UnknownRobot(RobotId),
    #[error("cannot resolve target: {0}")]
    UnresolvableTarget(String),
    #[error(transparent)]
    Unreachable(#[from] PathError),
}

/// Compiles a high-level node into primitive steps against the robot's
/// current belief. `avoid` lists cells to route around (other robots) when
/// a detour exists.
pub fn expand_to_steps(
    node: &ActionNode,
    belief: &SemanticState,
    layout: &Layout,
    robot: &RobotId,
    avoid: &BTreeSet<Cell>,
) -> Result<Vec<ActionStep>, ExpandError> {
    let r = belief.robots.get(robot).ok_or_else(|| ExpandError::UnknownRobot(robot.clone()))?;
    let mut c = Compiler {
        belief,
        layout,
        avoid,
        robot,
        pos: r.cell,
        inv: r.inv.clone(),
        opened: BTreeSet::new(),
        steps: Vec::new(),
    };
    let param = |k: &str| {
        node.param(k)
            .ok_or_else(|| ExpandError::UnresolvableTarget(format!("{} node {} lacks `{k}`", node.a, node.node_id)))
    };
    let object = |k: &str| param(k).map(ObjectId::new);
    match node.a {
        HighLevelKind::FetchAndPlace => c.place(&object("object")?, &object("receptacle")?)?,
        HighLevelKind::Dispose => {
            let obj = object("object")?;
            let can = c
                .nearest(|o| o.class == ObjectClass::GarbageCan)
                .ok_or_else(|| ExpandError::UnresolvableTarget("no known garbage can".into()))?;
            c.place(&obj, &can)?;
        }
        HighLevelKind::ToggleDevice => {
            let obj = object("object")?;
            let kind = if param("state")? == "off" { ActionKind::ToggleOff } else { ActionKind::ToggleOn };
            c.operate(kind, &obj)?;
        }
        HighLevelKind::OpenClose => {
            let obj = object("object")?;
            let kind = if param("state")? == "closed" { ActionKind::Close } else { ActionKind::Open };
            c.operate(kind, &obj)?;
        }
        HighLevelKind::SliceObject => {
            let obj = object("object")?;
            let holding_knife = c.inv.as_ref().and_then(|h| belief.objects.get(h)).is_some_and(|o| o.class == ObjectClass::Knife);
            if !holding_knife {
                let knife = c
                    .nearest(|o| o.class == ObjectClass::Knife && o.carrier().is_none_or(|k| k == robot))
                    .ok_or_else(|| ExpandError::UnresolvableTarget("no known knife".into()))?;
                c.pickup(&knife)?;
            }
            c.operate(ActionKind::Slice, &obj)?;
        }
        HighLevelKind::ExploreRoom => c.explore(&param("room")?.into())?,
        HighLevelKind::NavigateTo => {
            let room = param("room")?;
            let area = belief
                .areas
                .get(&room.into())
                .ok_or_else(|| ExpandError::UnresolvableTarget(format!("unknown room {room}")))?;
            let centre = area.bounds.first().map(|b| b.center()).ok_or_else(|| ExpandError::UnresolvableTarget(format!("empty room {room}")))?;
            c.go_to(centre)?;
        }
    }
    Ok(c.steps)
}

struct Compiler<'a> {
    belief: &'a SemanticState,
    layout: &'a Layout,
    avoid: &'a BTreeSet<Cell>,
    robot: &'a RobotId,
    pos: Cell,
    inv: Option<ObjectId>,
    opened: BTreeSet<ObjectId>,
    steps: Vec<ActionStep>,
}

impl Compiler<'_> {
    fn known(&self, id: &ObjectId) -> Result<&crate::semantic_state::ObjectState, ExpandError> {
        self.belief
            .objects
            .get(id)
            .ok_or_else(|| ExpandError::UnresolvableTarget(format!("object {id} not in belief")))
    }

    fn is_closed(&self, id: &ObjectId) -> bool {
        let o = &self.belief.objects[id];
        o.class.is_openable() && !o.props.get(Property::IsOpen) && !self.opened.contains(id)
    }

    /// Believed location, following carriers.
    fn cell_of(&self, id: &ObjectId) -> Result<Cell, ExpandError> {
        let o = self.known(id)?;
        Ok(match o.carrier() {
            Some(r) if r == self.robot => self.pos,
            Some(r) => self.belief.robots.get(r).map_or(o.cell, |r| r.cell),
            None => o.cell,
        })
    }

    fn reach_cells(&self, target: Cell) -> Vec<Cell> {
        let mut out = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                let c = target.offset(dx, dy);
                if self.layout.in_bounds(c) && line_of_sight(self.layout, c, target) {
                    out.push(c);
                }
            }
        }
        out
    }

    fn path(&self, to: Cell) -> Result<Vec<Cell>, ExpandError> {
        match plan_path_avoiding(self.layout, self.pos, to, self.avoid) {
            Ok(p) => Ok(p),
            Err(_) => Ok(plan_path(self.layout, self.pos, to)?),
        }
    }

    fn go_to(&mut self, to: Cell) -> Result<(), ExpandError> {
        for c in self.path(to)? {
            self.steps.push(ActionStep::move_to(c));
        }
        self.pos = to;
        Ok(())
    }

    /// Closest cell from which `target` can be manipulated.
    fn best_reach(&self, target: Cell) -> Option<(u32, Cell)> {
        if self.layout.within_reach(self.pos, target) {
            return Some((0, self.pos));
        }
        let dist = distance_map(self.layout, self.pos, &BTreeSet::new());
        self.reach_cells(target)
            .into_iter()
            .filter(|c| !self.avoid.contains(c))
            .filter_map(|c| dist.get(c).map(|d| (d, c)))
            .min()
    }

    fn go_within_reach(&mut self, target: Cell) -> Result<(), ExpandError> {
        let (_, cell) = self
            .best_reach(target)
            .ok_or(ExpandError::Unreachable(PathError::Unreachable { from: self.pos, to: target }))?;
        self.go_to(cell)
    }

    /// Nearest known, unheld-by-others object passing `pred`, by reach distance then id.
    fn nearest(&self, pred: impl Fn(&crate::semantic_state::ObjectState) -> bool) -> Option<ObjectId> {
        self.belief
            .objects
            .values()
            .filter(|o| pred(o))
            .filter_map(|o| {
                let cell = self.cell_of(&o.id).ok()?;
                let (d, _) = self.best_reach(cell)?;
                Some((d, o.id.clone()))
            })
            .min()
            .map(|(_, id)| id)
    }

    /// Opens every believed-closed receptacle around `id`, outermost first.
    fn make_accessible(&mut self, id: &ObjectId) -> Result<(), ExpandError> {
        let mut chain = Vec::new();
        let mut cur = self.known(id)?;
        for _ in 0..=self.belief.objects.len() {
            let Some(parent) = cur.receptacle() else { break };
            let Some(p) = self.belief.objects.get(parent) else { break };
            chain.push(p.id.clone());
            cur = p;
        }
        for c in chain.into_iter().rev() {
            if self.is_closed(&c) {
                self.go_within_reach(self.cell_of(&c)?)?;
                self.steps.push(ActionStep::open(c.clone()));
                self.opened.insert(c);
            }
        }
        Ok(())
    }

    fn operate(&mut self, kind: ActionKind, id: &ObjectId) -> Result<(), ExpandError> {
        self.make_accessible(id)?;
        self.go_within_reach(self.cell_of(id)?)?;
        self.steps.push(ActionStep::on(kind, id.clone()));
        if kind == ActionKind::Open {
            self.opened.insert(id.clone());
        }
        Ok(())
    }

    /// Puts down whatever is held (other than `keep`) on the nearest open receptacle.
    fn free_hands(&mut self, keep: &ObjectId) -> Result<(), ExpandError> {
        let Some(held) = self.inv.clone() else { return Ok(()) };
        if &held == keep {
            return Ok(());
        }
        let spot = self
            .nearest(|o| {
                o.class.is_receptacle()
                    && o.id != held
                    && o.carrier().is_none()
                    && !self.is_closed(&o.id)
                    && self.belief.closed_ancestor(&o.id).is_none()
                    && !self.belief.rec_chain_contains(&o.id, &held)
            })
            .ok_or_else(|| ExpandError::UnresolvableTarget(format!("nowhere to put down {held}")))?;
        self.go_within_reach(self.cell_of(&spot)?)?;
        self.steps.push(ActionStep::on(ActionKind::Put, spot));
        self.inv = None;
        Ok(())
    }

    fn pickup(&mut self, id: &ObjectId) -> Result<(), ExpandError> {
        if self.inv.as_ref() == Some(id) {
            return Ok(());
        }
        if let Some(other) = self.known(id)?.carrier().filter(|r| *r != self.robot) {
            return Err(ExpandError::UnresolvableTarget(format!("{id} is held by {other}")));
        }
        self.free_hands(id)?;
        self.operate(ActionKind::Pickup, id)?;
        self.inv = Some(id.clone());
        Ok(())
    }

    fn place(&mut self, id: &ObjectId, receptacle: &ObjectId) -> Result<(), ExpandError> {
        self.known(receptacle)?;
        self.pickup(id)?;
        self.make_accessible(receptacle)?;
        if self.is_closed(receptacle) {
            self.operate(ActionKind::Open, receptacle)?;
        }
        self.go_within_reach(self.cell_of(receptacle)?)?;
        self.steps.push(ActionStep::on(ActionKind::Put, receptacle.clone()));
        self.inv = None;
        Ok(())
    }

    /// Visits the nearest unobserved cell and scans until the simulated
    /// coverage spans the room.
    fn explore(&mut self, room: &crate::model::AreaId) -> Result<(), ExpandError> {
        let area = self
            .belief
            .areas
            .get(room)
            .ok_or_else(|| ExpandError::UnresolvableTarget(format!("unknown room {room}")))?;
        let mut unseen: BTreeSet<Cell> = area.cells().filter(|c| !area.observed.contains(c)).collect();
        let scan = ViewCone::omni(ViewCone::default().range);
        if unseen.is_empty() {
            self.steps.push(ActionStep::scan());
            return Ok(());
        }
        while !unseen.is_empty() {
            let dist = distance_map(self.layout, self.pos, &BTreeSet::new());
            let Some((_, next)) = unseen.iter().filter_map(|c| dist.get(*c).map(|d| (d, *c))).min() else {
                break;
            };
            self.go_to(next)?;
            self.steps.push(ActionStep::scan());
            for c in visible_cells(self.layout, next, 0.0, scan) {
                unseen.remove(&c);
            }
            unseen.remove(&next);
        }
        Ok(())
    }
}
