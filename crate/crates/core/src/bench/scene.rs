//! Procedural multi-room households with a sampled task.
//!
//! Independent ChaCha streams per concern (layout and objects, task,
//! robot spawn, cameras), so changing the team size never changes the
//! house, the task or the cameras.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ObjectSpec, Relocation, RobotSpec, Scenario, Seeds, WorldSpec, SCENARIO_VERSION};
use crate::environment::{visible_cells, Door, GridWorld, Layout, Room, ViewCone, WallEdge, DEFAULT_CELL_SIZE};
use crate::model::{ActionKind, AreaId, Cell, EntityRef, ObjectClass, ObjectId, Property, Rect, RobotId};
use crate::planner::Task;
use crate::semantic_state::{GoalCondition, Predicate};
use crate::sensors::{coverage_fraction, generate_layout, FailureProfile, COVERAGE_TOLERANCE, DEFAULT_DEVICE_BUDGET};

pub const ROOMS: std::ops::RangeInclusive<usize> = 3..=8;
pub const TEAM: std::ops::RangeInclusive<usize> = 2..=6;
pub const ROOM_SIZE: std::ops::RangeInclusive<i32> = 5..=10;
const ATTEMPTS: u64 = 64;

const ROOM_NAMES: [&str; 8] = ["kitchen", "living_room", "bedroom", "bathroom", "office", "hallway", "pantry", "study"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTemplate {
    /// Gather items into one cabinet or fridge and leave it closed.
    Consolidate,
    DisposePerishables,
    PowerDown,
    FetchToReceptacle,
}

impl TaskTemplate {
    pub const ALL: [TaskTemplate; 4] =
        [TaskTemplate::Consolidate, TaskTemplate::DisposePerishables, TaskTemplate::PowerDown, TaskTemplate::FetchToReceptacle];

    pub fn name(self) -> &'static str {
        match self {
            TaskTemplate::Consolidate => "consolidate",
            TaskTemplate::DisposePerishables => "dispose_perishables",
            TaskTemplate::PowerDown => "power_down",
            TaskTemplate::FetchToReceptacle => "fetch_to_receptacle",
        }
    }

    /// Templates whose targets can be carried (and so relocated).
    pub fn movable(self) -> bool {
        self != TaskTemplate::PowerDown
    }
}

impl fmt::Display for TaskTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskTemplate {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        TaskTemplate::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| format!("unknown task template `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub rooms: usize,
    /// Nominal room side in cells.
    pub room_size: i32,
    /// Clutter items per room.
    pub object_density: f64,
    pub team_size: usize,
    /// Target fraction of cells seen by cameras.
    pub coverage: f64,
    /// `None` samples uniformly.
    pub template: Option<TaskTemplate>,
    /// Move one carried-type target elsewhere at this tick.
    pub relocation_tick: Option<u64>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self { rooms: 5, room_size: 7, object_density: 1.0, team_size: 3, coverage: 0.5, template: None, relocation_tick: None }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), GenerationError> {
        let bad = |m: String| Err(GenerationError::BadParams(m));
        if !ROOMS.contains(&self.rooms) {
            return bad(format!("rooms = {} outside {ROOMS:?}", self.rooms));
        }
        if !TEAM.contains(&self.team_size) {
            return bad(format!("team_size = {} outside {TEAM:?}", self.team_size));
        }
        if !ROOM_SIZE.contains(&self.room_size) {
            return bad(format!("room_size = {} outside {ROOM_SIZE:?}", self.room_size));
        }
        if !(0.0..=4.0).contains(&self.object_density) {
            return bad(format!("object_density = {} outside [0, 4]", self.object_density));
        }
        if !(0.0..=1.0).contains(&self.coverage) {
            return bad(format!("coverage = {} outside [0, 1]", self.coverage));
        }
        if self.relocation_tick.is_some() && self.template.is_some_and(|t| !t.movable()) {
            return bad("relocation needs a template with movable targets".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error("bad scene parameters: {0}")]
    BadParams(String),
    #[error("no valid scene for seed {seed} after {attempts} attempts (last: {last})")]
    GenerationFailed { seed: u64, attempts: u64, last: String },
}

fn stream(seed: u64, attempt: u64, k: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&attempt.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(k);
    rng
}

/// Seed of the failure stream paired with a scene seed.
pub fn failure_seed(scene_seed: u64) -> u64 {
    stream(scene_seed, u64::MAX, 9).gen()
}

pub fn generate_scene(params: &SceneParams, seed: u64) -> Result<Scenario, GenerationError> {
    params.validate()?;
    let mut last = String::new();
    for attempt in 0..ATTEMPTS {
        match attempt_scene(params, seed, attempt) {
            Ok(s) => return Ok(s),
            Err(why) => last = why,
        }
    }
    Err(GenerationError::GenerationFailed { seed, attempts: ATTEMPTS, last })
}

fn attempt_scene(p: &SceneParams, seed: u64, attempt: u64) -> Result<Scenario, String> {
    let mut rng = stream(seed, attempt, 0);
    let layout = build_layout(p, &mut rng);
    if !layout.is_connected() {
        return Err("disconnected layout".into());
    }
    let mut house = House::new(&layout);
    house.furnish(&mut rng);
    house.clutter(p.object_density, &mut rng);

    let mut task_rng = stream(seed, attempt, 1);
    let template = match p.template {
        Some(t) => t,
        None if p.relocation_tick.is_some() => *[TaskTemplate::Consolidate, TaskTemplate::DisposePerishables, TaskTemplate::FetchToReceptacle]
            .choose(&mut task_rng)
            .expect("non-empty"),
        None => *TaskTemplate::ALL.choose(&mut task_rng).expect("non-empty"),
    };
    let (description, goal) = house.task(template, &mut task_rng)?;

    // Spawn the largest team so smaller teams are prefixes of it.
    let mut spawn_rng = stream(seed, attempt, 2);
    let fleet = house.spawn(*TEAM.end(), &mut spawn_rng)?;
    let seen: BTreeSet<Cell> = fleet
        .iter()
        .flat_map(|r| visible_cells(&layout, r.cell, r.theta, ViewCone::default()))
        .collect();
    let targets: BTreeSet<&ObjectId> = goal.predicates.iter().flat_map(|q| q.objects()).collect();
    let hidden = targets.iter().filter(|t| !seen.contains(&house.objects[**t].cell)).count();
    if 2 * hidden < targets.len() {
        return Err(format!("only {hidden} of {} targets hidden", targets.len()));
    }

    let mut world = GridWorld::new(layout.clone());
    for o in house.objects.values() {
        world.add_object(o.to_state());
    }
    let devices = generate_layout(&world, p.coverage, DEFAULT_DEVICE_BUDGET, &mut stream(seed, attempt, 3)).devices;
    let achieved = coverage_fraction(&world, &devices);
    if (achieved - p.coverage).abs() > COVERAGE_TOLERANCE + 1e-9 {
        return Err(format!("coverage {achieved:.3}"));
    }

    let mut events = Vec::new();
    if let Some(tick) = p.relocation_tick {
        let covered: BTreeSet<Cell> = devices.iter().flat_map(|d| d.coverage.iter().copied()).collect();
        events.push(house.relocation(&goal, &covered, &seen, tick)?);
    }

    let scenario = Scenario {
        version: SCENARIO_VERSION.into(),
        world: WorldSpec { layout: layout.clone(), objects: house.objects.into_values().collect() },
        robots: fleet.into_iter().take(p.team_size).collect(),
        devices,
        task: Task::new(description, goal),
        failure: FailureProfile::default(),
        seeds: Seeds { scene_seed: seed, failure_seed: failure_seed(seed) },
        events,
    };
    scenario.validate().map_err(|e| e.to_string())?;
    Ok(scenario)
}

/// One or two rows of rooms sharing the house width, joined by 2-wide
/// doors: neighbours within a row, and each lower-row room to the upper
/// room it overlaps most.
fn build_layout(p: &SceneParams, rng: &mut impl Rng) -> Layout {
    let rows = if p.rooms <= 3 { 1 } else { 2 };
    let top = p.rooms.div_ceil(rows);
    let per_row: Vec<usize> = if rows == 1 { vec![p.rooms] } else { vec![top, p.rooms - top] };
    let width = top as i32 * p.room_size;
    let heights: Vec<i32> = per_row.iter().map(|_| p.room_size + rng.gen_range(-1..=1)).collect();

    let mut rects: Vec<Vec<Rect>> = Vec::new();
    let mut y = 0;
    for (r, &k) in per_row.iter().enumerate() {
        let mut xs = vec![0];
        for i in 1..k as i32 {
            xs.push(width * i / k as i32 + rng.gen_range(-1..=1));
        }
        xs.push(width);
        rects.push(xs.windows(2).map(|w| Rect::new(w[0], y, w[1] - w[0], heights[r])).collect());
        y += heights[r];
    }

    let mut openings: BTreeSet<WallEdge> = BTreeSet::new();
    let mut doors = Vec::new();
    let mut open = |a: Cell, b: Cell| {
        openings.insert(WallEdge::between(a, b));
        doors.push(Door { a, b });
    };
    for row in &rects {
        for pair in row.windows(2) {
            let (l, r) = (pair[0], pair[1]);
            let yd = rng.gen_range(l.y..=l.y + l.h - 2);
            for dy in 0..2 {
                open(Cell::new(r.x - 1, yd + dy), Cell::new(r.x, yd + dy));
            }
        }
    }
    if rows == 2 {
        for low in &rects[1] {
            let best = rects[0]
                .iter()
                .map(|up| (up.x.max(low.x), (up.x + up.w).min(low.x + low.w)))
                .max_by_key(|(lo, hi)| (hi - lo, -lo))
                .expect("upper row is non-empty");
            let xd = rng.gen_range(best.0..=best.1 - 2);
            for dx in 0..2 {
                open(Cell::new(xd + dx, low.y - 1), Cell::new(xd + dx, low.y));
            }
        }
    }

    let rooms: Vec<Room> = rects
        .iter()
        .flatten()
        .zip(ROOM_NAMES)
        .map(|(r, name)| Room { id: AreaId::new(name), name: name.replace('_', " "), bounds: vec![*r] })
        .collect();
    let mut layout = Layout { width, height: y, cell_size: DEFAULT_CELL_SIZE, walls: BTreeSet::new(), rooms, doors };
    let room_index: BTreeMap<Cell, usize> =
        layout.rooms.iter().enumerate().flat_map(|(i, r)| r.cells().map(move |c| (c, i))).collect();
    let mut walls = BTreeSet::new();
    for c in layout.cells() {
        for n in [c.offset(1, 0), c.offset(0, 1)] {
            if layout.in_bounds(n) && room_index[&c] != room_index[&n] {
                let e = WallEdge::between(c, n);
                if !openings.contains(&e) {
                    walls.insert(e);
                }
            }
        }
    }
    layout.walls = walls;
    layout
}

struct House<'a> {
    layout: &'a Layout,
    objects: BTreeMap<ObjectId, ObjectSpec>,
    /// Cells taken by furniture and devices.
    taken: BTreeSet<Cell>,
    door_cells: BTreeSet<Cell>,
    counts: BTreeMap<ObjectClass, usize>,
}

fn furniture(room: &str) -> &'static [ObjectClass] {
    use ObjectClass::*;
    match room {
        "kitchen" => &[Fridge, CounterTop, GarbageCan, Microwave],
        "living_room" => &[Table, Television, Cabinet],
        "bedroom" => &[Table, Lamp, Cabinet],
        "bathroom" => &[CounterTop, Cabinet, GarbageCan],
        "office" => &[Table, Lamp, Television],
        "hallway" => &[Table, Lamp],
        "pantry" => &[CounterTop, Cabinet, Fridge],
        _ => &[Table, Lamp, Cabinet],
    }
}

const CLUTTER: [ObjectClass; 9] = [
    ObjectClass::Apple,
    ObjectClass::Tomato,
    ObjectClass::Bread,
    ObjectClass::Lettuce,
    ObjectClass::Mug,
    ObjectClass::Cup,
    ObjectClass::Plate,
    ObjectClass::Book,
    ObjectClass::Knife,
];

fn is_surface(class: ObjectClass) -> bool {
    matches!(class, ObjectClass::Table | ObjectClass::CounterTop)
}

impl<'a> House<'a> {
    fn new(layout: &'a Layout) -> Self {
        let door_cells = layout.doors.iter().flat_map(|d| [d.a, d.b]).collect();
        Self { layout, objects: BTreeMap::new(), taken: BTreeSet::new(), door_cells, counts: BTreeMap::new() }
    }

    fn next_id(&mut self, class: ObjectClass) -> ObjectId {
        let n = self.counts.entry(class).or_default();
        *n += 1;
        ObjectId::new(format!("{}_{}", class.name().to_lowercase(), *n - 1))
    }

    /// Furniture along the walls; openables start closed, devices mostly on.
    fn furnish(&mut self, rng: &mut impl Rng) {
        for room in self.layout.rooms.clone() {
            let mut spots: Vec<Cell> = room
                .cells()
                .filter(|c| self.layout.wall_adjacent(*c) && !self.door_cells.contains(c))
                .collect();
            spots.shuffle(rng);
            for (&class, cell) in furniture(room.id.as_str()).iter().zip(spots) {
                let id = self.next_id(class);
                let mut props = BTreeSet::new();
                if matches!(class, ObjectClass::Television | ObjectClass::Lamp) && rng.gen_bool(0.75) {
                    props.insert(Property::IsToggled);
                }
                self.taken.insert(cell);
                self.objects.insert(id.clone(), ObjectSpec { id, class, cell, room: room.id.clone(), rec: None, props });
            }
        }
    }

    fn surfaces(&self) -> Vec<ObjectId> {
        self.objects.values().filter(|o| is_surface(o.class)).map(|o| o.id.clone()).collect()
    }

    fn place_on(&mut self, class: ObjectClass, surface: &ObjectId) -> ObjectId {
        let id = self.next_id(class);
        let s = &self.objects[surface];
        let spec = ObjectSpec {
            id: id.clone(),
            class,
            cell: s.cell,
            room: s.room.clone(),
            rec: Some(EntityRef::Object(surface.clone())),
            props: BTreeSet::new(),
        };
        self.objects.insert(id.clone(), spec);
        id
    }

    fn clutter(&mut self, density: f64, rng: &mut impl Rng) {
        let per_room = (density * 2.0).round() as usize;
        for room in self.layout.rooms.clone() {
            let here: Vec<ObjectId> =
                self.surfaces().into_iter().filter(|s| self.objects[s].room == room.id).collect();
            let all = self.surfaces();
            for _ in 0..per_room {
                let surface = here.choose(rng).or_else(|| all.choose(rng)).expect("every house has a surface").clone();
                let class = *CLUTTER.choose(rng).expect("non-empty");
                self.place_on(class, &surface);
            }
        }
    }

    /// Places the template's items and returns the task.
    fn task(&mut self, template: TaskTemplate, rng: &mut impl Rng) -> Result<(String, GoalCondition), String> {
        let of_class = |h: &Self, pred: &dyn Fn(ObjectClass) -> bool| -> Vec<ObjectId> {
            h.objects.values().filter(|o| pred(o.class) && o.rec.is_none()).map(|o| o.id.clone()).collect()
        };
        let into = |items: &[ObjectId], rec: &ObjectId| -> Vec<Predicate> {
            items.iter().map(|o| Predicate::ObjectInReceptacle { object: o.clone(), receptacle: rec.clone() }).collect()
        };
        let names = |items: &[ObjectId]| items.iter().map(|o| o.as_str()).collect::<Vec<_>>().join(" and ");
        match template {
            TaskTemplate::Consolidate => {
                let dest = of_class(self, &|c| matches!(c, ObjectClass::Cabinet | ObjectClass::Fridge))
                    .choose(rng)
                    .cloned()
                    .ok_or("no container")?;
                let items = self.scatter(&[ObjectClass::Mug, ObjectClass::Cup, ObjectClass::Plate, ObjectClass::Book], 2, &dest, rng)?;
                let mut preds = into(&items, &dest);
                preds.push(Predicate::PropertyIs { object: dest.clone(), property: Property::IsOpen, value: false });
                Ok((format!("Put {} into {dest} and leave it closed", names(&items)), GoalCondition::new(preds)))
            }
            TaskTemplate::DisposePerishables => {
                let bin = of_class(self, &|c| c == ObjectClass::GarbageCan).choose(rng).cloned().ok_or("no bin")?;
                let items = self.scatter(&[ObjectClass::Apple, ObjectClass::Tomato, ObjectClass::Bread, ObjectClass::Lettuce], 2, &bin, rng)?;
                Ok((format!("Throw {} into {bin}", names(&items)), GoalCondition::new(into(&items, &bin))))
            }
            TaskTemplate::PowerDown => {
                let mut devices = of_class(self, &|c| matches!(c, ObjectClass::Television | ObjectClass::Lamp));
                if devices.len() < 2 {
                    return Err("fewer than two devices".into());
                }
                devices.shuffle(rng);
                devices.truncate(3);
                devices.sort();
                for d in &devices {
                    self.objects.get_mut(d).expect("device").props.insert(Property::IsToggled);
                }
                let preds = devices
                    .iter()
                    .map(|d| Predicate::PropertyIs { object: d.clone(), property: Property::IsToggled, value: false })
                    .collect();
                Ok((format!("Power down {}", names(&devices)), GoalCondition::new(preds)))
            }
            TaskTemplate::FetchToReceptacle => {
                let dest = self.surfaces().choose(rng).cloned().ok_or("no surface")?;
                let items = self.scatter(&[ObjectClass::Mug, ObjectClass::Book, ObjectClass::Cup, ObjectClass::Apple], 2, &dest, rng)?;
                Ok((format!("Bring {} to {dest}", names(&items)), GoalCondition::new(into(&items, &dest))))
            }
        }
    }

    /// `n` new items on surfaces away from `dest`, each in a different room
    /// when possible.
    fn scatter(&mut self, classes: &[ObjectClass], n: usize, dest: &ObjectId, rng: &mut impl Rng) -> Result<Vec<ObjectId>, String> {
        let dest_room = self.objects[dest].room.clone();
        let mut surfaces: Vec<ObjectId> = self.surfaces().into_iter().filter(|s| s != dest && self.objects[s].room != dest_room).collect();
        if surfaces.is_empty() {
            surfaces = self.surfaces().into_iter().filter(|s| s != dest).collect();
        }
        surfaces.shuffle(rng);
        if surfaces.is_empty() {
            return Err("no surface for task items".into());
        }
        let mut items = Vec::new();
        for i in 0..n {
            let class = *classes.choose(rng).expect("non-empty");
            let surface = surfaces[i % surfaces.len()].clone();
            items.push(self.place_on(class, &surface));
        }
        Ok(items)
    }

    /// Up to `n` robots packed around a random room's centre, nearest first.
    fn spawn(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<RobotSpec>, String> {
        let room = self.layout.rooms.choose(rng).expect("at least one room");
        let centre = room.bounds[0].center();
        let mut cells: Vec<Cell> = room.cells().filter(|c| !self.taken.contains(c)).collect();
        cells.sort_by_key(|c| (c.manhattan(centre), c.y, c.x));
        if cells.len() < n {
            return Err("spawn room too small".into());
        }
        let skills: BTreeSet<ActionKind> = ActionKind::ALL.into_iter().collect();
        Ok(cells
            .into_iter()
            .take(n)
            .enumerate()
            .map(|(i, cell)| RobotSpec {
                id: RobotId::new(format!("r{}", i + 1)),
                cell,
                theta: 90.0 * rng.gen_range(0..4) as f64,
                skills: skills.clone(),
            })
            .collect())
    }

    /// Moves a goal item onto a camera-watched surface in another room that
    /// no robot sees at the start, as far from the item as possible.
    fn relocation(&self, goal: &GoalCondition, covered: &BTreeSet<Cell>, seen: &BTreeSet<Cell>, tick: u64) -> Result<Relocation, String> {
        let mut best: Option<(i32, ObjectId, ObjectId)> = None;
        for p in &goal.predicates {
            let Predicate::ObjectInReceptacle { object, receptacle } = p else { continue };
            let item = &self.objects[object];
            for s in self.surfaces() {
                let o = &self.objects[&s];
                if &s == receptacle || o.room == item.room || !covered.contains(&o.cell) || seen.contains(&o.cell) {
                    continue;
                }
                let d = o.cell.manhattan(item.cell);
                if best.as_ref().is_none_or(|(bd, ..)| d > *bd) {
                    best = Some((d, object.clone(), s));
                }
            }
        }
        let (_, object, receptacle) = best.ok_or("no watched surface to relocate to")?;
        Ok(Relocation { tick, object, receptacle })
    }
}
