//! Ground-truth grid world: rooms and walls, objects and receptacles, robot
//! kinematics, visibility, and primitive action execution.

mod exec;
mod expand;
mod path;
mod visibility;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AreaId, Cell, EntityRef, ObjectId, Property, Rect, RobotId, SourceId, WriteStamp};
use crate::semantic_state::{AreaState, ObjectState, RobotState, SemanticState, Sighting};

pub use exec::{ActionStep, FailureReason, StepResult, StepTarget};
pub use expand::{expand_to_steps, ExpandError, DEFAULT_RETRIES};
pub use path::{distance_map, plan_path, plan_path_avoiding, DistanceMap, PathError};
pub use visibility::{line_of_sight, visible_cells, ViewCone};

pub const DEFAULT_CELL_SIZE: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("unknown robot {0}")]
    UnknownRobot(RobotId),
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
}

/// A wall segment between two 4-adjacent cells, stored with the smaller cell first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[Cell; 2]", into = "[Cell; 2]")]
pub struct WallEdge {
    a: Cell,
    b: Cell,
}

impl WallEdge {
    /// Panics unless the cells are 4-adjacent.
    pub fn between(a: Cell, b: Cell) -> Self {
        assert_eq!(a.manhattan(b), 1, "wall edge needs 4-adjacent cells");
        if a <= b {
            Self { a, b }
        } else {
            Self { a: b, b: a }
        }
    }

    pub fn cells(&self) -> (Cell, Cell) {
        (self.a, self.b)
    }
}

impl From<[Cell; 2]> for WallEdge {
    fn from([a, b]: [Cell; 2]) -> Self {
        WallEdge::between(a, b)
    }
}

impl From<WallEdge> for [Cell; 2] {
    fn from(w: WallEdge) -> Self {
        [w.a, w.b]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Room {
    pub id: AreaId,
    pub name: String,
    pub bounds: Vec<Rect>,
}

impl Room {
    pub fn contains(&self, c: Cell) -> bool {
        self.bounds.iter().any(|r| r.contains(c))
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.bounds.iter().flat_map(|r| r.cells())
    }
}

/// An opening between two rooms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Door {
    pub a: Cell,
    pub b: Cell,
}

/// Static geometry. Every cell inside the grid is navigable; walls block
/// movement and sight between adjacent cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub width: i32,
    pub height: i32,
    pub cell_size: f64,
    pub walls: BTreeSet<WallEdge>,
    pub rooms: Vec<Room>,
    #[serde(default)]
    pub doors: Vec<Door>,
}

/// 4-neighbour offsets in tie-break order: smaller `(dx, dy)` first.
pub(crate) const NEIGHBOURS: [(i32, i32); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

impl Layout {
    pub fn open(width: i32, height: i32) -> Self {
        Self {
            width,
            height,
            cell_size: DEFAULT_CELL_SIZE,
            walls: BTreeSet::new(),
            rooms: vec![Room {
                id: AreaId::new("room_0"),
                name: "room_0".into(),
                bounds: vec![Rect::new(0, 0, width, height)],
            }],
            doors: Vec::new(),
        }
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height
    }

    pub fn cell_count(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Cell::new(x, y)))
    }

    pub fn index(&self, c: Cell) -> usize {
        (c.y * self.width + c.x) as usize
    }

    /// True when moving between 4-adjacent `a` and `b` is impossible.
    pub fn blocked(&self, a: Cell, b: Cell) -> bool {
        !self.in_bounds(a) || !self.in_bounds(b) || self.walls.contains(&WallEdge::between(a, b))
    }

    pub fn neighbours(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        NEIGHBOURS
            .into_iter()
            .map(move |(dx, dy)| c.offset(dx, dy))
            .filter(move |n| !self.blocked(c, *n))
    }

    pub fn room_of(&self, c: Cell) -> Option<&Room> {
        self.rooms.iter().find(|r| r.contains(c))
    }

    pub fn room(&self, id: &AreaId) -> Option<&Room> {
        self.rooms.iter().find(|r| &r.id == id)
    }

    /// Cells next to a wall or the grid border.
    pub fn wall_adjacent(&self, c: Cell) -> bool {
        NEIGHBOURS.into_iter().any(|(dx, dy)| self.blocked(c, c.offset(dx, dy)))
    }

    /// Flood fill from the first cell covers every cell.
    pub fn is_connected(&self) -> bool {
        if self.cell_count() == 0 {
            return true;
        }
        let mut seen = vec![false; self.cell_count()];
        let mut stack = vec![Cell::new(0, 0)];
        seen[0] = true;
        let mut count = 1;
        while let Some(c) = stack.pop() {
            for n in self.neighbours(c) {
                let i = self.index(n);
                if !seen[i] {
                    seen[i] = true;
                    count += 1;
                    stack.push(n);
                }
            }
        }
        count == self.cell_count()
    }

    /// Every cell belongs to exactly one room.
    pub fn rooms_partition_cells(&self) -> bool {
        self.cells().all(|c| self.rooms.iter().filter(|r| r.contains(c)).count() == 1)
    }

    /// Fresh area records for a belief.
    pub fn area_states(&self) -> BTreeMap<AreaId, AreaState> {
        self.rooms
            .iter()
            .map(|r| (r.id.clone(), AreaState::new(r.id.clone(), r.name.clone(), r.bounds.clone())))
            .collect()
    }

    /// Interaction range: Chebyshev distance 1 with clear line of sight.
    pub fn within_reach(&self, from: Cell, target: Cell) -> bool {
        from.chebyshev(target) <= 1 && line_of_sight(self, from, target)
    }
}

/// Per-robot metric counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotCounters {
    pub action_steps: u64,
    pub moves: u64,
}

/// Ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct GridWorld {
    pub layout: Layout,
    pub objects: BTreeMap<ObjectId, ObjectState>,
    pub robots: BTreeMap<RobotId, RobotState>,
    pub counters: BTreeMap<RobotId, RobotCounters>,
    pub cone: ViewCone,
    pub tick: u64,
}

impl GridWorld {
    pub fn new(layout: Layout) -> Self {
        Self {
            layout,
            objects: BTreeMap::new(),
            robots: BTreeMap::new(),
            counters: BTreeMap::new(),
            cone: ViewCone::default(),
            tick: 0,
        }
    }

    pub fn add_robot(&mut self, robot: RobotState) {
        self.counters.insert(robot.id.clone(), RobotCounters::default());
        self.robots.insert(robot.id.clone(), robot);
    }

    pub fn add_object(&mut self, object: ObjectState) {
        self.objects.insert(object.id.clone(), object);
    }

    pub fn robot(&self, id: &RobotId) -> Result<&RobotState, EnvError> {
        self.robots.get(id).ok_or_else(|| EnvError::UnknownRobot(id.clone()))
    }

    pub fn robot_at(&self, c: Cell) -> Option<&RobotId> {
        self.robots.values().find(|r| r.cell == c).map(|r| &r.id)
    }

    pub fn total_action_steps(&self) -> u64 {
        self.counters.values().map(|c| c.action_steps).sum()
    }

    pub fn total_moves(&self) -> u64 {
        self.counters.values().map(|c| c.moves).sum()
    }

    /// Fleet path length in meters.
    pub fn path_length_m(&self) -> f64 {
        self.total_moves() as f64 * self.layout.cell_size
    }

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

    /// Visible objects in `cells`, hiding anything inside a closed receptacle.
    pub fn sight_objects(&self, cells: &BTreeSet<Cell>) -> Vec<Sighting> {
        self.objects
            .values()
            .filter(|o| cells.contains(&o.cell) && self.closed_ancestor(&o.id).is_none())
            .map(|o| Sighting {
                object: o.id.clone(),
                class: o.class,
                cell: o.cell,
                room: o.room.clone(),
                rec: o.rec.clone(),
                observed: o.class.applicable(),
                props: o.props,
            })
            .collect()
    }

    /// Cells and object sightings in the robot's current view cone.
    pub fn field_of_view(&self, robot: &RobotId) -> Result<(BTreeSet<Cell>, Vec<Sighting>), EnvError> {
        self.view_with(robot, self.cone)
    }

    /// Same as [`Self::field_of_view`] with an explicit cone (e.g. a 360° scan).
    pub fn view_with(&self, robot: &RobotId, cone: ViewCone) -> Result<(BTreeSet<Cell>, Vec<Sighting>), EnvError> {
        let r = self.robot(robot)?;
        let cells = visible_cells(&self.layout, r.cell, r.theta, cone);
        let sightings = self.sight_objects(&cells);
        Ok((cells, sightings))
    }

    /// Moves an object onto a receptacle outside of any robot action
    /// (scenario scripting). Ignored if the object is being carried.
    pub fn relocate(&mut self, object: &ObjectId, receptacle: &ObjectId) -> Result<bool, EnvError> {
        let target = self.objects.get(receptacle).ok_or_else(|| EnvError::UnknownObject(receptacle.clone()))?;
        let (cell, room) = (target.cell, target.room.clone());
        let tick = self.tick;
        let o = self.objects.get_mut(object).ok_or_else(|| EnvError::UnknownObject(object.clone()))?;
        if o.carrier().is_some() {
            return Ok(false);
        }
        o.cell = cell;
        o.room = room;
        o.rec = Some(EntityRef::Object(receptacle.clone()));
        mark_written(o, None, tick, SourceId::World);
        Ok(true)
    }

    /// Ground truth rendered as a fully-known semantic state, for scoring.
    pub fn truth_state(&self) -> SemanticState {
        let mut s = SemanticState::new();
        s.robots = self.robots.clone();
        s.objects = self.objects.clone();
        s.areas = self.layout.area_states();
        s.clock = self.tick;
        s
    }

    /// Structural checks on ground truth.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = self.truth_state().check_invariants();
        let mut cells = BTreeSet::new();
        for r in self.robots.values() {
            if !cells.insert(r.cell) {
                out.push(format!("two robots share cell {}", r.cell));
            }
            if !self.layout.in_bounds(r.cell) {
                out.push(format!("robot {} out of bounds", r.id));
            }
        }
        out
    }
}

/// Records a ground-truth write on `o`: pose when `prop` is None, else that bit.
pub(crate) fn mark_written(o: &mut ObjectState, prop: Option<Property>, tick: u64, src: SourceId) {
    let stamp = WriteStamp::new(tick, src);
    match prop {
        None => o.stamps.pose = stamp,
        Some(p) => o.stamps.props[p.index()] = stamp,
    }
    o.src = o.stamps.max().src.clone();
    o.tau = o.stamps.max().tau;
}
