//! Simulated IoT devices: static cameras and device-status reporters,
//! periodic emission, and injected latency / omission / corruption.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::environment::{visible_cells, GridWorld, ViewCone};
use crate::model::{Cell, DeviceId, ObjectId, Property, PropertyVector, RobotId, SourceId};
use crate::semantic_state::{Observation, RobotReport};

pub const DEFAULT_PERIOD: u64 = 5;
pub const DEFAULT_DEVICE_BUDGET: usize = 12;
/// Accepted distance between achieved and requested coverage.
pub const COVERAGE_TOLERANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Cctv,
    StatusReporter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoTDevice {
    pub id: DeviceId,
    pub kind: DeviceKind,
    pub cell: Cell,
    #[serde(default)]
    pub yaw: f64,
    pub coverage: BTreeSet<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attached_object: Option<ObjectId>,
    pub period: u64,
}

impl IoTDevice {
    /// A camera whose coverage is the robot visibility rule from its pose.
    pub fn cctv(id: impl Into<String>, world: &GridWorld, cell: Cell, yaw: f64) -> Self {
        Self {
            id: DeviceId::new(id),
            kind: DeviceKind::Cctv,
            cell,
            yaw,
            coverage: visible_cells(&world.layout, cell, yaw, world.cone),
            attached_object: None,
            period: DEFAULT_PERIOD,
        }
    }

    /// Panics if `object` is not in ground truth.
    pub fn reporter(world: &GridWorld, object: &ObjectId) -> Self {
        let cell = world.objects[object].cell;
        Self {
            id: DeviceId::new(format!("status_{object}")),
            kind: DeviceKind::StatusReporter,
            cell,
            yaw: 0.0,
            coverage: BTreeSet::from([cell]),
            attached_object: Some(object.clone()),
            period: DEFAULT_PERIOD,
        }
    }

    pub fn source(&self) -> SourceId {
        SourceId::Device(self.id.clone())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("coverage {achieved:.3} below target {target:.3} after {placed} cameras")]
    CoverageInfeasible { target: f64, achieved: f64, placed: usize },
    #[error("probability {name} = {value} outside [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
}

/// Devices plus what they achieve.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceLayout {
    pub devices: Vec<IoTDevice>,
    pub coverage: f64,
    /// Set when the budget ran out short of the target band.
    pub shortfall: Option<SensorError>,
}

/// Covered fraction of navigable cells by the union of CCTV coverage sets.
pub fn coverage_fraction(world: &GridWorld, devices: &[IoTDevice]) -> f64 {
    let covered: BTreeSet<Cell> = devices
        .iter()
        .filter(|d| d.kind == DeviceKind::Cctv)
        .flat_map(|d| d.coverage.iter().copied())
        .collect();
    covered.len() as f64 / world.layout.cell_count().max(1) as f64
}

/// Greedy camera placement at wall-adjacent cells until coverage falls in
/// `target ± 0.05` or `budget` cameras are placed; status reporters go on
/// every toggleable object.
pub fn generate_layout(world: &GridWorld, target: f64, budget: usize, rng: &mut impl Rng) -> DeviceLayout {
    let total = world.layout.cell_count().max(1) as f64;
    let mut candidates: Vec<(Cell, f64, BTreeSet<Cell>)> = world
        .layout
        .cells()
        .filter(|c| world.layout.wall_adjacent(*c))
        .flat_map(|c| (0..8).map(move |k| (c, 45.0 * k as f64)))
        .map(|(c, yaw)| (c, yaw, visible_cells(&world.layout, c, yaw, world.cone)))
        .collect();
    candidates.shuffle(rng);

    let mut devices = Vec::new();
    let mut covered: BTreeSet<Cell> = BTreeSet::new();
    let lo = target - COVERAGE_TOLERANCE;
    let hi = target + COVERAGE_TOLERANCE;
    while (covered.len() as f64 / total) < lo && devices.len() < budget {
        let now = covered.len();
        // Largest gain that stays in band; otherwise whatever lands closest to target.
        let scored = candidates.iter().enumerate().map(|(i, (_, _, cov))| {
            let after = now + cov.difference(&covered).count();
            (i, after)
        });
        let fitting = scored.clone().filter(|(_, a)| (*a as f64 / total) <= hi).max_by_key(|(i, a)| (*a, Reverse(*i)));
        let pick = match fitting {
            Some((i, a)) if a > now => Some(i),
            _ => scored
                .filter(|(_, a)| *a > now)
                .min_by(|(i, a), (j, b)| {
                    let da = (*a as f64 / total - target).abs();
                    let db = (*b as f64 / total - target).abs();
                    da.total_cmp(&db).then(i.cmp(j))
                })
                .map(|(i, _)| i),
        };
        let Some(i) = pick else { break };
        let (cell, yaw, cov) = candidates.swap_remove(i);
        covered.extend(cov.iter().copied());
        devices.push(IoTDevice {
            id: DeviceId::new(format!("cam{}", devices.len())),
            kind: DeviceKind::Cctv,
            cell,
            yaw,
            coverage: cov,
            attached_object: None,
            period: DEFAULT_PERIOD,
        });
    }
    let coverage = covered.len() as f64 / total;
    let shortfall = (coverage < lo).then(|| SensorError::CoverageInfeasible { target, achieved: coverage, placed: devices.len() });
    if let Some(e) = &shortfall {
        info!("{e}");
    }
    for o in world.objects.values().filter(|o| o.class.is_toggleable()) {
        devices.push(IoTDevice::reporter(world, &o.id));
    }
    DeviceLayout { devices, coverage, shortfall }
}

/// The device's reading at `tick`, if it emits then.
pub fn emit(device: &IoTDevice, world: &GridWorld, tick: u64) -> Option<Observation> {
    if device.period == 0 || tick % device.period != 0 {
        return None;
    }
    let mut obs = Observation::empty(device.source(), tick);
    match device.kind {
        DeviceKind::Cctv => obs.entries = world.sight_objects(&device.coverage),
        DeviceKind::StatusReporter => {
            let id = device.attached_object.as_ref()?;
            let o = world.objects.get(id)?;
            let mask = o.class.applicable().and(PropertyVector::of(&[Property::IsToggled, Property::IsOpen]));
            obs.entries.push(crate::semantic_state::Sighting {
                object: o.id.clone(),
                class: o.class,
                cell: o.cell,
                room: o.room.clone(),
                rec: o.rec.clone(),
                observed: mask,
                props: o.props.and(mask),
            });
        }
    }
    Some(obs)
}

/// Robot perception for one tick: view cone, or a full circle when scanning.
pub fn robot_observation(world: &GridWorld, robot: &RobotId, scan: bool) -> Option<Observation> {
    let r = world.robots.get(robot)?;
    let cone = if scan { ViewCone::omni(world.cone.range) } else { world.cone };
    let (cells, entries) = world.view_with(robot, cone).ok()?;
    Some(Observation {
        src: SourceId::Robot(robot.clone()),
        tau: world.tick,
        robot: Some(RobotReport { cell: r.cell, theta: r.theta, phi: r.phi, inv: r.inv.clone() }),
        entries,
        visited_cells: cells,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureProfile {
    #[serde(default)]
    pub t_delay: u64,
    #[serde(default)]
    pub p_omit: f64,
    #[serde(default)]
    pub p_corrupt: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for FailureProfile {
    fn default() -> Self {
        Self { t_delay: 0, p_omit: 0.0, p_corrupt: 0.0, rng_seed: 0 }
    }
}

impl FailureProfile {
    pub fn validate(&self) -> Result<(), SensorError> {
        for (name, value) in [("p_omit", self.p_omit), ("p_corrupt", self.p_corrupt)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SensorError::BadProbability { name, value });
            }
        }
        Ok(())
    }

    /// The dedicated failure stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelayedObservation {
    pub deliver_at: u64,
    pub obs: Observation,
}

/// Drops entries and flips reported property bits; delivery is `tau + t_delay`.
/// Robot observations pass through untouched.
pub fn degrade(obs: Observation, profile: &FailureProfile, rng: &mut impl Rng) -> DelayedObservation {
    if obs.src.is_robot() {
        return DelayedObservation { deliver_at: obs.tau, obs };
    }
    let mut obs = obs;
    let entries = std::mem::take(&mut obs.entries);
    // One uniform draw per decision whatever the probability, so sweeps
    // over p share their random numbers.
    let mut hit = |p: f64| rng.gen::<f64>() < p;
    for mut e in entries {
        if hit(profile.p_omit) {
            continue;
        }
        for p in e.observed.and(e.class.applicable()).iter() {
            if hit(profile.p_corrupt) {
                e.props.set(p, !e.props.get(p));
            }
        }
        obs.entries.push(e);
    }
    DelayedObservation { deliver_at: obs.tau + profile.t_delay, obs }
}

/// All devices of a scene plus the in-flight delivery queue.
#[derive(Clone, Debug)]
pub struct SensorNetwork {
    pub devices: Vec<IoTDevice>,
    pub profile: FailureProfile,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<(u64, u64, usize)>>,
    in_flight: Vec<Option<Observation>>,
    seq: u64,
}

impl SensorNetwork {
    pub fn new(devices: Vec<IoTDevice>, profile: FailureProfile) -> Self {
        Self { rng: profile.rng(), devices, profile, queue: BinaryHeap::new(), in_flight: Vec::new(), seq: 0 }
    }

    /// Emits, degrades and enqueues every due reading for `tick`.
    pub fn sense(&mut self, world: &GridWorld, tick: u64) {
        for i in 0..self.devices.len() {
            if let Some(obs) = emit(&self.devices[i], world, tick) {
                let d = degrade(obs, &self.profile, &mut self.rng);
                let slot = self.in_flight.len();
                self.in_flight.push(Some(d.obs));
                self.queue.push(Reverse((d.deliver_at, self.seq, slot)));
                self.seq += 1;
            }
        }
    }

    /// Observations due by `tick`, in delivery order then emission order.
    pub fn deliver(&mut self, tick: u64) -> Vec<Observation> {
        let mut out = Vec::new();
        while let Some(Reverse((at, _, slot))) = self.queue.peek().copied() {
            if at > tick {
                break;
            }
            self.queue.pop();
            if let Some(o) = self.in_flight[slot].take() {
                out.push(o);
            }
        }
        if self.queue.is_empty() {
            self.in_flight.clear();
        }
        out
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{fixtures, Layout, WallEdge};
    use crate::model::{ObjectClass, Rect};
    use crate::semantic_state::Sighting;

    fn rooms_world(n: i32) -> GridWorld {
        let mut l = Layout::open(n, n);
        let half = n / 2;
        for i in 0..n {
            if i != 2 && i != n - 3 {
                l.walls.insert(WallEdge::between(Cell::new(half - 1, i), Cell::new(half, i)));
                l.walls.insert(WallEdge::between(Cell::new(i, half - 1), Cell::new(i, half)));
            }
        }
        l.rooms = (0..4)
            .map(|k| crate::environment::Room {
                id: format!("room_{k}").as_str().into(),
                name: format!("room_{k}"),
                bounds: vec![Rect::new((k % 2) * half, (k / 2) * half, half, half)],
            })
            .collect();
        assert!(l.is_connected() && l.rooms_partition_cells());
        let mut w = GridWorld::new(l);
        w.add_object(fixtures::object("tv1", ObjectClass::Television, Cell::new(1, 1), None, PropertyVector::of(&[Property::IsToggled])));
        w.add_object(fixtures::object("lamp", ObjectClass::Lamp, Cell::new(15, 15), None, PropertyVector::EMPTY));
        w.add_object(fixtures::object("apple", ObjectClass::Apple, Cell::new(3, 3), None, PropertyVector::EMPTY));
        w
    }

    #[test]
    fn zero_target_places_no_cameras() {
        let w = rooms_world(20);
        let l = generate_layout(&w, 0.0, DEFAULT_DEVICE_BUDGET, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(l.devices.iter().all(|d| d.kind == DeviceKind::StatusReporter));
        assert_eq!(l.devices.len(), 2);
        assert_eq!(l.coverage, 0.0);
        assert!(l.shortfall.is_none());
    }

    #[test]
    fn half_coverage_lands_in_band_and_matches_union_count() {
        let w = rooms_world(20);
        for seed in 0..5 {
            let l = generate_layout(&w, 0.5, DEFAULT_DEVICE_BUDGET, &mut ChaCha8Rng::seed_from_u64(seed));
            assert!((0.45..=0.55).contains(&l.coverage), "seed {seed}: {}", l.coverage);
            // Independent recount: per-cell membership test over every camera.
            let mut count = 0;
            for y in 0..20 {
                for x in 0..20 {
                    let c = Cell::new(x, y);
                    if l.devices.iter().any(|d| d.kind == DeviceKind::Cctv && d.coverage.contains(&c)) {
                        count += 1;
                    }
                }
            }
            assert!((l.coverage - count as f64 / 400.0).abs() < 1e-12);
            assert!((coverage_fraction(&w, &l.devices) - l.coverage).abs() < 1e-12);
        }
    }

    #[test]
    fn unreachable_target_reports_shortfall() {
        let w = rooms_world(20);
        let l = generate_layout(&w, 1.0, 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(l.shortfall, Some(SensorError::CoverageInfeasible { placed: 1, .. })));
    }

    #[test]
    fn emission_follows_period() {
        let w = rooms_world(20);
        let d = IoTDevice::reporter(&w, &ObjectId::new("tv1"));
        assert!(emit(&d, &w, 3).is_none());
        let obs = emit(&d, &w, 10).unwrap();
        assert_eq!(obs.tau, 10);
        assert_eq!(obs.entries.len(), 1);
        let e = &obs.entries[0];
        assert!(e.props.get(Property::IsToggled));
        assert_eq!(e.observed, PropertyVector::of(&[Property::IsToggled]));
    }

    #[test]
    fn cctv_entries_equal_field_of_view() {
        let mut w = rooms_world(20);
        w.add_robot(fixtures::robot("probe", Cell::new(0, 0)));
        let cam = IoTDevice::cctv("c", &w, Cell::new(0, 0), 45.0);
        let obs = emit(&cam, &w, 0).unwrap();
        w.robots.get_mut(&RobotId::new("probe")).unwrap().theta = 45.0;
        let (cells, seen) = w.field_of_view(&RobotId::new("probe")).unwrap();
        assert_eq!(cells, cam.coverage);
        assert_eq!(obs.entries, seen);
        assert!(obs.entries.iter().any(|s| s.object.as_str() == "apple"));
    }

    fn sample_obs(n: usize) -> Observation {
        let mut o = Observation::empty(SourceId::Device(DeviceId::new("cam")), 7);
        for i in 0..n {
            o.entries.push(Sighting {
                object: ObjectId::new(format!("o{i}")),
                class: ObjectClass::Fridge,
                cell: Cell::new(0, 0),
                room: "k".into(),
                rec: None,
                observed: ObjectClass::Fridge.applicable(),
                props: PropertyVector::EMPTY,
            });
        }
        o
    }

    #[test]
    fn identity_profile_changes_nothing() {
        let o = sample_obs(20);
        let d = degrade(o.clone(), &FailureProfile::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(d.obs, o);
        assert_eq!(d.deliver_at, 7);
    }

    #[test]
    fn full_omission_empties_entries_and_delay_shifts_delivery() {
        let p = FailureProfile { t_delay: 4, p_omit: 1.0, ..Default::default() };
        let d = degrade(sample_obs(20), &p, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(d.obs.entries.is_empty());
        assert_eq!((d.deliver_at, d.obs.tau), (11, 7));
    }

    #[test]
    fn omission_rate_is_close_to_requested() {
        let p = FailureProfile { p_omit: 0.3, ..Default::default() };
        let d = degrade(sample_obs(10_000), &p, &mut ChaCha8Rng::seed_from_u64(99));
        let rate = 1.0 - d.obs.entries.len() as f64 / 10_000.0;
        assert!((rate - 0.3).abs() <= 0.02, "{rate}");
    }

    #[test]
    fn corruption_flips_only_reported_bits() {
        let p = FailureProfile { p_corrupt: 1.0, ..Default::default() };
        let d = degrade(sample_obs(3), &p, &mut ChaCha8Rng::seed_from_u64(0));
        for e in &d.obs.entries {
            assert_eq!(e.props, ObjectClass::Fridge.applicable());
            assert_eq!(e.cell, Cell::new(0, 0));
        }
    }

    #[test]
    fn robot_observations_are_never_degraded() {
        let mut o = sample_obs(5);
        o.src = SourceId::Robot(RobotId::new("r1"));
        let p = FailureProfile { t_delay: 9, p_omit: 1.0, p_corrupt: 1.0, rng_seed: 0 };
        let d = degrade(o.clone(), &p, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!((d.obs, d.deliver_at), (o, 7));
    }

    #[test]
    fn network_delivers_in_order_after_delay() {
        let w = rooms_world(20);
        let devices = vec![IoTDevice::reporter(&w, &ObjectId::new("tv1")), IoTDevice::reporter(&w, &ObjectId::new("lamp"))];
        let mut net = SensorNetwork::new(devices, FailureProfile { t_delay: 3, ..Default::default() });
        let mut got = Vec::new();
        for t in 0..12 {
            net.sense(&w, t);
            for o in net.deliver(t) {
                got.push((t, o.tau, o.src.to_string()));
            }
        }
        assert_eq!(
            got,
            [
                (3, 0, "device:status_tv1".to_string()),
                (3, 0, "device:status_lamp".into()),
                (8, 5, "device:status_tv1".into()),
                (8, 5, "device:status_lamp".into()),
            ]
        );
        assert_eq!(net.pending(), 2);
    }

    #[test]
    fn same_seed_same_degradation() {
        let p = FailureProfile { p_omit: 0.4, p_corrupt: 0.2, rng_seed: 5, ..Default::default() };
        let a = degrade(sample_obs(50), &p, &mut p.rng());
        let b = degrade(sample_obs(50), &p, &mut p.rng());
        assert_eq!(a, b);
        assert!(p.validate().is_ok());
        assert!(FailureProfile { p_omit: 1.5, ..p }.validate().is_err());
    }
}
