use std::collections::{BTreeMap, BTreeSet, VecDeque};

use tracing::debug;

use super::dispatch::{dispatch_ready, split_goal};
use super::monitor::{detect_stall, needs_replan, Progress, ReplanContext};
use super::trace::{to_jsonl, TraceRecord};
use super::{EpisodeResult, OrchestratorConfig, OrchestratorError, Protocol, Termination};
use crate::bench::Scenario;
use crate::environment::{expand_to_steps, ActionStep, FailureReason, GridWorld, Layout, StepResult, StepTarget};
use crate::model::{ActionKind, Cell, RobotId};
use crate::planner::{fleet_of, validate_plan, NodeStatus, PlanGraph, PlannerBackend, Task};
use crate::semantic_state::{query_goal, Observation, RobotStatus, SemanticState};
use crate::sensors::{robot_observation, SensorNetwork};

/// The observations one hub fuses this tick, and the robots it commands.
#[derive(Clone, Debug, PartialEq)]
pub struct HubInput {
    pub robots: Vec<RobotId>,
    pub observations: Vec<Observation>,
}

/// IR: one hub per robot with only its own perception. R2R: one shared
/// hub, IoT discarded. R2X: one shared hub with robot then IoT readings.
pub fn route_observations(
    protocol: Protocol,
    robots: &[RobotId],
    robot_obs: &[Observation],
    iot: &[Observation],
) -> Vec<HubInput> {
    match protocol {
        Protocol::Ir => robots
            .iter()
            .map(|r| HubInput {
                robots: vec![r.clone()],
                observations: robot_obs.iter().filter(|o| o.src.robot() == Some(r)).cloned().collect(),
            })
            .collect(),
        Protocol::R2r => vec![HubInput { robots: robots.to_vec(), observations: robot_obs.to_vec() }],
        Protocol::R2x => vec![HubInput {
            robots: robots.to_vec(),
            observations: robot_obs.iter().chain(iot).cloned().collect(),
        }],
    }
}

/// Metrics plus the full trace of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRun {
    pub result: EpisodeResult,
    pub trace: Vec<TraceRecord>,
}

impl EpisodeRun {
    pub fn trace_jsonl(&self) -> String {
        to_jsonl(&self.trace)
    }
}

struct Hub {
    name: String,
    robots: Vec<RobotId>,
    task: Task,
    belief: SemanticState,
    snapshot: SemanticState,
    plan: PlanGraph,
    generation: u64,
    replan: bool,
    fails: u32,
    ctx: ReplanContext,
    progress: Progress,
    done: Option<Termination>,
}

#[derive(Default)]
struct Exec {
    hub: usize,
    node: Option<String>,
    generation: u64,
    steps: VecDeque<ActionStep>,
    /// Yield moves; not part of any node.
    detour: VecDeque<ActionStep>,
    retries_left: u32,
    collisions: u32,
    /// Re-expand the node before its next step.
    reexpand: bool,
    avoid_robots: bool,
    scanned: bool,
}

impl Exec {
    fn next_step(&self) -> Option<&ActionStep> {
        self.detour.front().or_else(|| self.steps.front())
    }

    fn path_cells(&self) -> BTreeSet<Cell> {
        self.detour
            .iter()
            .chain(&self.steps)
            .filter_map(|s| match s.target {
                StepTarget::Cell(c) if s.kind == ActionKind::MoveStep => Some(c),
                _ => None,
            })
            .collect()
    }
}

struct Episode<'a> {
    cfg: &'a OrchestratorConfig,
    backend: &'a PlannerBackend,
    world: GridWorld,
    layout: Layout,
    hubs: Vec<Hub>,
    execs: BTreeMap<RobotId, Exec>,
    trace: Vec<TraceRecord>,
    planner_calls: u64,
    tokens: u64,
    fail_count: u64,
    violations: Vec<String>,
}

/// Runs the plan–dispatch–monitor loop on a scenario until the belief goal
/// holds, the fail budget is spent, or the tick budget runs out.
pub fn run_episode(
    scenario: &Scenario,
    config: &OrchestratorConfig,
    backend: &PlannerBackend,
) -> Result<EpisodeRun, OrchestratorError> {
    config.validate()?;
    scenario.validate()?;
    let world = scenario.build_world();
    let layout = world.layout.clone();
    let robots: Vec<RobotId> = world.robots.keys().cloned().collect();
    let devices = if config.protocol == Protocol::R2x { scenario.devices.clone() } else { Vec::new() };
    let mut net = SensorNetwork::new(devices, scenario.failure_profile());

    let goals = match config.protocol {
        Protocol::Ir => split_goal(&scenario.task.goal, &robots),
        _ => BTreeMap::new(),
    };
    let mut hubs = Vec::new();
    let mut execs = BTreeMap::new();
    for (h, input) in route_observations(config.protocol, &robots, &[], &[]).into_iter().enumerate() {
        let mut belief = SemanticState::new();
        belief.areas = layout.area_states();
        for r in &input.robots {
            belief.robots.insert(r.clone(), world.robots[r].clone());
            execs.insert(r.clone(), Exec { hub: h, ..Exec::default() });
        }
        if config.protocol == Protocol::R2x {
            belief.devices = net.devices.iter().map(|d| d.id.clone()).collect();
        }
        let (name, task) = match config.protocol {
            Protocol::Ir => {
                let r = &input.robots[0];
                (format!("hub:{r}"), Task::new(scenario.task.description.clone(), goals[r].clone()))
            }
            _ => ("hub".to_string(), scenario.task.clone()),
        };
        hubs.push(Hub {
            name,
            robots: input.robots,
            task,
            snapshot: belief.clone(),
            belief,
            plan: PlanGraph::new(),
            generation: 0,
            replan: true,
            fails: 0,
            ctx: ReplanContext::default(),
            progress: Progress::default(),
            done: None,
        });
    }

    let header = TraceRecord::header(&layout, robots.clone(), scenario.task.goal.to_string());
    let mut ep = Episode {
        cfg: config,
        backend,
        world,
        layout,
        hubs,
        execs,
        trace: vec![header],
        planner_calls: 0,
        tokens: 0,
        fail_count: 0,
        violations: Vec::new(),
    };

    let mut tick = 0u64;
    let mut since_wait = config.wait_window;
    loop {
        ep.world.tick = tick;
        for e in scenario.events.iter().filter(|e| e.tick == tick) {
            if let Ok(moved) = ep.world.relocate(&e.object, &e.receptacle) {
                debug!(tick, object = %e.object, moved, "scripted relocation");
            }
        }

        // Sense and fuse.
        let robot_obs: Vec<Observation> = robots
            .iter()
            .filter_map(|r| robot_observation(&ep.world, r, ep.execs[r].scanned))
            .collect();
        net.sense(&ep.world, tick);
        let iot = net.deliver(tick);
        let iot_update = !iot.is_empty();
        for (hub, input) in ep.hubs.iter_mut().zip(route_observations(config.protocol, &robots, &robot_obs, &iot)) {
            for obs in &input.observations {
                match hub.belief.fuse(obs) {
                    Ok(report) => hub.ctx.discovered.extend(report.created),
                    Err(e) => debug!(error = %e, "observation rejected"),
                }
            }
        }

        // Goal check, replanning and dispatch once per wait window.
        if since_wait >= config.wait_window {
            since_wait = 0;
            for h in 0..ep.hubs.len() {
                ep.plan_and_dispatch(h, tick);
            }
        }
        if tick >= config.tick_budget {
            for h in 0..ep.hubs.len() {
                if ep.hubs[h].done.is_none() {
                    ep.hubs[h].done = Some(Termination::TickBudget);
                    ep.halt(h, tick);
                }
            }
        }
        if ep.hubs.iter().all(|h| h.done.is_some()) {
            break;
        }
        ep.check_safety(tick);

        // Act.
        let mut finished = Vec::new();
        for r in &robots {
            if let Some(done) = ep.step_robot(r, tick) {
                finished.push(done);
            }
        }

        // Monitor.
        let any_done = !finished.is_empty();
        let mut completed_hubs = BTreeSet::new();
        for (r, node, res) in finished {
            if res.is_ok() {
                completed_hubs.insert(ep.execs[&r].hub);
            }
            ep.finish(&r, &node, res, tick);
        }
        for (h, hub) in ep.hubs.iter_mut().enumerate() {
            let moves: u64 = hub.robots.iter().map(|r| ep.world.counters.get(r).map_or(0, |c| c.moves)).sum();
            hub.progress.observe(tick, moves, completed_hubs.contains(&h));
        }
        if !any_done && !iot_update {
            for hub in ep.hubs.iter_mut().filter(|h| h.done.is_none()) {
                if detect_stall(&hub.plan, &hub.progress, tick, config.stall_horizon) {
                    hub.replan = true;
                    hub.progress.last_tick = tick;
                    ep.trace.push(TraceRecord::Stall { tick, hub: hub.name.clone() });
                }
            }
        }
        since_wait += 1;
        if any_done {
            since_wait = config.wait_window;
        }
        tick += 1;
    }

    let truth = ep.world.truth_state();
    let all_satisfied = ep.hubs.iter().all(|h| h.done == Some(Termination::GoalSatisfied));
    let termination = if all_satisfied {
        Termination::GoalSatisfied
    } else if ep.hubs.iter().any(|h| h.done == Some(Termination::TickBudget)) {
        Termination::TickBudget
    } else {
        Termination::MaxFails
    };
    let result = EpisodeResult {
        success_truth: query_goal(&truth, &scenario.task.goal),
        success_belief: all_satisfied,
        action_steps: ep.world.total_action_steps(),
        path_length_m: ep.world.path_length_m(),
        planner_calls: ep.planner_calls,
        token_proxy: ep.tokens,
        ticks: tick,
        fail_count: ep.fail_count,
        termination,
        safety_violations: ep.violations,
        trace_path: None,
    };
    Ok(EpisodeRun { result, trace: ep.trace })
}

type Finished = (RobotId, String, Result<(), FailureReason>);

impl Episode<'_> {
    fn set_sigma(&mut self, r: &RobotId, sigma: RobotStatus) {
        if let Some(robot) = self.world.robots.get_mut(r) {
            robot.sigma = sigma;
        }
        let h = self.execs[r].hub;
        if let Some(robot) = self.hubs[h].belief.robots.get_mut(r) {
            robot.sigma = sigma;
        }
    }

    /// Stops every robot of hub `h` mid-node; the current step has already
    /// completed, the rest are discarded.
    fn halt(&mut self, h: usize, tick: u64) {
        let mut halted = Vec::new();
        for r in self.hubs[h].robots.clone() {
            let e = self.execs.get_mut(&r).expect("robot has an executor");
            if let Some(node) = e.node.take() {
                e.steps.clear();
                e.reexpand = false;
                if let Some(n) = self.hubs[h].plan.nodes.get_mut(&node) {
                    n.status = NodeStatus::Pending;
                }
                self.set_sigma(&r, RobotStatus::Idle);
                halted.push(r);
            }
        }
        if !halted.is_empty() {
            self.trace.push(TraceRecord::Halt { tick, hub: self.hubs[h].name.clone(), robots: halted });
        }
    }

    fn plan_and_dispatch(&mut self, h: usize, tick: u64) {
        let cfg = self.cfg;
        if self.hubs[h].done.is_some() {
            return;
        }
        if query_goal(&self.hubs[h].belief, &self.hubs[h].task.goal) {
            self.hubs[h].done = Some(Termination::GoalSatisfied);
            self.halt(h, tick);
            return;
        }
        if self.hubs[h].fails >= cfg.max_fails {
            self.hubs[h].done = Some(Termination::MaxFails);
            self.halt(h, tick);
            return;
        }
        let running_on: BTreeSet<RobotId> = self.hubs[h]
            .robots
            .iter()
            .filter(|r| self.execs[*r].node.is_some())
            .cloned()
            .collect();
        let hub = &self.hubs[h];
        let exhausted = !hub.plan.nodes.values().any(|n| matches!(n.status, NodeStatus::Pending | NodeStatus::Running));
        let stale = hub.replan
            || exhausted
            || needs_replan(&hub.plan, &hub.snapshot, &hub.belief, &hub.task.goal, &hub.ctx, &running_on);
        if stale {
            self.halt(h, tick);
            if !self.replan(h, tick) {
                return;
            }
        }
        self.dispatch(h, tick);
    }

    /// One planner call; false when the plan was rejected.
    fn replan(&mut self, h: usize, tick: u64) -> bool {
        let cfg = self.cfg;
        let hub = &mut self.hubs[h];
        let fleet = fleet_of(&hub.belief);
        self.planner_calls += 1;
        let (plan, tokens, errors) = match self.backend.plan(&hub.task, &hub.belief, &fleet) {
            Ok(out) => {
                let mut errors: Vec<String> = validate_plan(&out.plan, &fleet, &hub.belief).iter().map(|v| v.to_string()).collect();
                if errors.is_empty() && out.plan.is_empty() {
                    errors.push("empty plan for an unsatisfied goal".into());
                }
                (out.plan, out.tokens, errors)
            }
            Err(e) => (PlanGraph::new(), 0, vec![e.to_string()]),
        };
        self.tokens += tokens;
        let valid = errors.is_empty();
        self.trace.push(TraceRecord::Plan { tick, hub: hub.name.clone(), valid, nodes: plan.nodes.len(), tokens, errors });
        if valid {
            hub.plan = plan;
            for n in hub.plan.nodes.values_mut() {
                n.status = NodeStatus::Pending;
            }
            hub.snapshot = hub.belief.clone();
            hub.generation += 1;
            hub.replan = false;
            hub.ctx = ReplanContext::default();
            hub.progress.last_tick = tick;
        } else {
            hub.plan = PlanGraph::new();
            hub.replan = true;
            hub.fails += 1;
            self.fail_count += 1;
            if hub.fails >= cfg.max_fails {
                hub.done = Some(Termination::MaxFails);
            }
        }
        valid
    }

    fn dispatch(&mut self, h: usize, tick: u64) {
        let idle: Vec<RobotId> = self.hubs[h].robots.iter().filter(|r| self.execs[*r].node.is_none()).cloned().collect();
        if idle.is_empty() {
            return;
        }
        let hub = &mut self.hubs[h];
        let assignments = dispatch_ready(&mut hub.plan, &idle, &mut hub.belief, &self.layout);
        for (r, node) in assignments {
            let action = hub.plan.nodes[&node].a.name().to_string();
            self.trace.push(TraceRecord::Dispatch { tick, robot: r.clone(), node: node.clone(), action });
            if let Some(robot) = self.world.robots.get_mut(&r) {
                robot.sigma = RobotStatus::Executing;
            }
            let e = self.execs.get_mut(&r).expect("robot has an executor");
            e.node = Some(node);
            e.generation = hub.generation;
            e.steps.clear();
            e.retries_left = self.cfg.retries;
            e.collisions = 0;
            e.reexpand = true;
            e.avoid_robots = false;
        }
    }

    fn expand(&mut self, r: &RobotId) -> Result<(), FailureReason> {
        let e = &self.execs[r];
        let Some(node_id) = e.node.clone() else { return Ok(()) };
        let hub = &self.hubs[e.hub];
        let node = &hub.plan.nodes[&node_id];
        let avoid: BTreeSet<Cell> = if e.avoid_robots {
            self.world.robots.values().filter(|o| &o.id != r).map(|o| o.cell).collect()
        } else {
            hub.belief.robots.values().filter(|o| &o.id != r).map(|o| o.cell).collect()
        };
        let result = expand_to_steps(node, &hub.belief, &self.layout, r, &avoid);
        let e = self.execs.get_mut(r).expect("executor");
        e.reexpand = false;
        e.avoid_robots = false;
        match result {
            Ok(steps) => {
                e.steps = steps.into();
                Ok(())
            }
            Err(err) => {
                debug!(robot = %r, node = %node_id, error = %err, "expansion failed");
                e.steps.clear();
                Err(FailureReason::NotApplicable)
            }
        }
    }

    /// First free neighbour of `from`, preferring cells outside `avoid`.
    fn side_cell(&self, from: Cell, avoid: &BTreeSet<Cell>) -> Option<Cell> {
        let free: Vec<Cell> = self.layout.neighbours(from).filter(|c| self.world.robot_at(*c).is_none()).collect();
        free.iter().find(|c| !avoid.contains(c)).or(free.first()).copied()
    }

    /// Executes one step for `r`; returns the node outcome when it ends.
    fn step_robot(&mut self, r: &RobotId, tick: u64) -> Option<Finished> {
        if self.execs[r].reexpand && self.execs[r].detour.is_empty() && self.execs[r].node.is_some() {
            if let Err(reason) = self.expand(r) {
                self.record(r, tick, None, None);
                return Some((r.clone(), self.execs[r].node.clone().expect("running"), Err(reason)));
            }
        }
        let e = &self.execs[r];
        let from_detour = !e.detour.is_empty();
        let Some(step) = e.next_step().cloned() else {
            let node = e.node.clone();
            self.record(r, tick, None, None);
            return node.map(|n| (r.clone(), n, Ok(())));
        };
        if !from_detour && e.generation != self.hubs[e.hub].generation {
            self.violations.push(format!("tick {tick}: {r} executed a step from a superseded plan"));
        }
        let result = self.world.execute_action_step(r, &step).expect("known robot");
        self.record(r, tick, Some(&step), Some(&result));
        let h = self.execs[r].hub;
        match result {
            StepResult::Success(done) => {
                let e = self.execs.get_mut(r).expect("executor");
                e.scanned = step.kind == ActionKind::Scan;
                e.collisions = 0;
                if from_detour {
                    e.detour.pop_front();
                    if e.detour.is_empty() && e.node.is_some() {
                        e.reexpand = true;
                    }
                    return None;
                }
                e.steps.pop_front();
                let finished = e.steps.is_empty();
                if let Some(action) = done {
                    if let Err(err) = self.hubs[h].belief.apply_manipulation_effects(r, &action, tick) {
                        debug!(robot = %r, error = %err, "effects disagree with belief");
                    }
                }
                let e = &self.execs[r];
                if finished {
                    return e.node.clone().map(|n| (r.clone(), n, Ok(())));
                }
                None
            }
            StepResult::Failure(reason) => {
                let e = self.execs.get_mut(r).expect("executor");
                e.scanned = false;
                if from_detour {
                    e.detour.clear();
                    if e.node.is_some() {
                        e.reexpand = true;
                    }
                    return None;
                }
                if reason == FailureReason::Collision {
                    e.collisions += 1;
                    if e.collisions > self.cfg.collision_limit {
                        return Some((r.clone(), e.node.clone().expect("running"), Err(reason)));
                    }
                    self.resolve_collision(r, &step);
                    return None;
                }
                if e.retries_left == 0 {
                    return Some((r.clone(), e.node.clone().expect("running"), Err(reason)));
                }
                e.retries_left -= 1;
                e.reexpand = true;
                None
            }
        }
    }

    /// Yield rules: an idle blocker is nudged aside; on a head-on meeting
    /// the larger id steps aside; otherwise route around the other robots.
    fn resolve_collision(&mut self, r: &RobotId, step: &ActionStep) {
        let StepTarget::Cell(to) = step.target else { return };
        let here = self.world.robots[r].cell;
        let Some(blocker) = self.world.robot_at(to).cloned() else {
            self.execs.get_mut(r).expect("executor").reexpand = true;
            return;
        };
        let b = &self.execs[&blocker];
        let blocker_busy = b.node.is_some() || !b.detour.is_empty();
        if !blocker_busy {
            let mut avoid = self.execs[r].path_cells();
            avoid.insert(here);
            if let Some(side) = self.side_cell(to, &avoid) {
                self.execs.get_mut(&blocker).expect("executor").detour.push_back(ActionStep::move_to(side));
            }
            return;
        }
        let head_on = b.next_step().is_some_and(|s| s.kind == ActionKind::MoveStep && s.target == StepTarget::Cell(here));
        if head_on {
            if r > &blocker {
                let mut avoid = self.execs[&blocker].path_cells();
                avoid.insert(to);
                if let Some(side) = self.side_cell(here, &avoid) {
                    self.execs.get_mut(r).expect("executor").detour.push_back(ActionStep::move_to(side));
                }
            }
            return;
        }
        let e = self.execs.get_mut(r).expect("executor");
        e.reexpand = true;
        e.avoid_robots = true;
    }

    fn record(&mut self, r: &RobotId, tick: u64, step: Option<&ActionStep>, result: Option<&StepResult>) {
        let robot = &self.world.robots[r];
        self.trace.push(TraceRecord::Robot {
            tick,
            robot: r.clone(),
            node: self.execs[r].node.clone(),
            step: step.map(|s| s.to_string()),
            result: result.map(|res| match res {
                StepResult::Success(_) => "success".to_string(),
                StepResult::Failure(f) => format!("failure:{f}"),
            }),
            cell: robot.cell,
            theta: robot.theta,
            inv: robot.inv.as_ref().map(|o| o.to_string()),
        });
    }

    fn finish(&mut self, r: &RobotId, node: &str, res: Result<(), FailureReason>, tick: u64) {
        let h = self.execs[r].hub;
        {
            let e = self.execs.get_mut(r).expect("executor");
            if e.node.as_deref() != Some(node) {
                return;
            }
            e.node = None;
            e.steps.clear();
            e.reexpand = false;
        }
        self.set_sigma(r, RobotStatus::Idle);
        let hub = &mut self.hubs[h];
        let explore = hub.plan.nodes.get(node).is_some_and(|n| n.a.is_exploratory());
        let status = if res.is_ok() { NodeStatus::Done } else { NodeStatus::Failed };
        if let Some(n) = hub.plan.nodes.get_mut(node) {
            n.status = status;
        }
        match res {
            Ok(()) => {
                hub.fails = 0;
                if explore {
                    hub.ctx.explore_completed = true;
                }
            }
            Err(_) => {
                hub.fails += 1;
                hub.replan = true;
                self.fail_count += 1;
            }
        }
        let result = match res {
            Ok(()) => "success".to_string(),
            Err(f) => format!("failure:{f}"),
        };
        self.trace.push(TraceRecord::Done { tick, robot: r.clone(), node: node.to_string(), result });
    }

    /// Algorithm-level invariants, checked before every execution phase.
    fn check_safety(&mut self, tick: u64) {
        let mut out = Vec::new();
        let mut per_robot: BTreeMap<&RobotId, usize> = BTreeMap::new();
        for (h, hub) in self.hubs.iter().enumerate() {
            for n in hub.plan.running() {
                if !hub.plan.deps_done(&n.node_id) {
                    out.push(format!("tick {tick}: {} RUNNING before its dependencies", n.node_id));
                }
                let owners: Vec<&RobotId> = hub
                    .robots
                    .iter()
                    .filter(|r| self.execs[*r].hub == h && self.execs[*r].node.as_deref() == Some(n.node_id.as_str()))
                    .collect();
                if owners.len() != 1 {
                    out.push(format!("tick {tick}: {} RUNNING on {} robots", n.node_id, owners.len()));
                }
                for o in owners {
                    *per_robot.entry(o).or_default() += 1;
                }
            }
            if hub.fails > self.cfg.max_fails || (hub.fails >= self.cfg.max_fails && hub.done.is_none()) {
                out.push(format!("tick {tick}: {} continued with {} consecutive failures", hub.name, hub.fails));
            }
            for v in hub.belief.check_invariants() {
                out.push(format!("tick {tick}: {} belief: {v}", hub.name));
            }
        }
        for (r, e) in &self.execs {
            if per_robot.get(r).copied().unwrap_or(0) > 1 {
                out.push(format!("tick {tick}: {r} has several RUNNING nodes"));
            }
            let executing = self.world.robots[r].sigma == RobotStatus::Executing;
            if executing != e.node.is_some() {
                out.push(format!("tick {tick}: {r} sigma disagrees with its node"));
            }
            if let Some(node) = &e.node {
                let running = self.hubs[e.hub].plan.nodes.get(node).is_some_and(|n| n.status == NodeStatus::Running);
                if !running {
                    out.push(format!("tick {tick}: {r} works on {node}, which is not RUNNING"));
                }
            }
        }
        for v in self.world.check_invariants() {
            out.push(format!("tick {tick}: world: {v}"));
        }
        self.violations.extend(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{ObjectSpec, RobotSpec, Seeds, WorldSpec, SCENARIO_VERSION};
    use crate::environment::Room;
    use crate::model::{AreaId, EntityRef, ObjectClass, ObjectId, Rect, SourceId};
    use crate::planner::Endpoint;
    use crate::semantic_state::{GoalCondition, Sighting};
    use crate::sensors::FailureProfile;

    fn spec(id: &str, class: ObjectClass, cell: (i32, i32), room: &str, rec: Option<&str>) -> ObjectSpec {
        ObjectSpec {
            id: ObjectId::new(id),
            class,
            cell: Cell::new(cell.0, cell.1),
            room: AreaId::new(room),
            rec: rec.map(|r| EntityRef::Object(ObjectId::new(r))),
            props: BTreeSet::new(),
        }
    }

    fn robot(id: &str, cell: (i32, i32), theta: f64) -> RobotSpec {
        RobotSpec { id: RobotId::new(id), cell: Cell::new(cell.0, cell.1), theta, skills: ActionKind::ALL.into_iter().collect() }
    }

    fn scenario(layout: Layout, objects: Vec<ObjectSpec>, robots: Vec<RobotSpec>, goal: &str) -> Scenario {
        Scenario {
            version: SCENARIO_VERSION.into(),
            world: WorldSpec { layout, objects },
            robots,
            devices: Vec::new(),
            task: Task::new("test", GoalCondition::parse(goal).unwrap()),
            failure: FailureProfile::default(),
            seeds: Seeds::default(),
            events: Vec::new(),
        }
    }

    /// 8x3 open room; r1 fetches the apple west, r2 the mug east.
    fn two_fetches() -> Scenario {
        scenario(
            Layout::open(8, 3),
            vec![
                spec("counter_a", ObjectClass::CounterTop, (3, 1), "room_0", None),
                spec("apple", ObjectClass::Apple, (3, 1), "room_0", Some("counter_a")),
                spec("counter_b", ObjectClass::CounterTop, (4, 1), "room_0", None),
                spec("mug", ObjectClass::Mug, (4, 1), "room_0", Some("counter_b")),
                spec("table_w", ObjectClass::Table, (0, 2), "room_0", None),
                spec("table_e", ObjectClass::Table, (7, 0), "room_0", None),
            ],
            vec![robot("r1", (0, 0), 0.0), robot("r2", (7, 2), 180.0)],
            "ObjectInReceptacle(apple, table_w) & ObjectInReceptacle(mug, table_e)",
        )
    }

    fn run(s: &Scenario, protocol: Protocol) -> EpisodeRun {
        run_episode(s, &OrchestratorConfig::with_protocol(protocol), &PlannerBackend::Baseline).unwrap()
    }

    #[test]
    fn satisfied_goal_needs_no_action() {
        let s = scenario(
            Layout::open(4, 4),
            vec![spec("table", ObjectClass::Table, (2, 2), "room_0", None), spec("cup", ObjectClass::Cup, (2, 2), "room_0", Some("table"))],
            vec![robot("r1", (0, 0), 45.0)],
            "ObjectInReceptacle(cup, table)",
        );
        let r = run(&s, Protocol::R2r).result;
        assert!(r.success_truth && r.success_belief);
        assert_eq!((r.action_steps, r.path_length_m, r.planner_calls, r.ticks), (0, 0.0, 0, 0));
    }

    /// Hand trace: r1 (0,0)→(1,0)→(2,0), Pickup, →(1,0)→(1,1), Put;
    /// r2 (7,2)→(6,2)→(5,2), Pickup, →(5,1)→(6,1), Put. Both finish at
    /// tick 5; the goal is seen satisfied at tick 6.
    #[test]
    fn two_robot_fetch_matches_hand_trace() {
        let run = run(&two_fetches(), Protocol::R2r);
        let r = &run.result;
        assert!(r.success_truth && r.success_belief, "{r:?}");
        assert_eq!(r.action_steps, 12);
        assert_eq!(r.path_length_m, 2.0);
        assert_eq!(r.planner_calls, 1);
        assert_eq!(r.ticks, 6);
        assert_eq!(r.fail_count, 0);
        assert!(r.safety_violations.is_empty(), "{:?}", r.safety_violations);
        let cells = |who: &str| -> Vec<Cell> {
            run.trace
                .iter()
                .filter_map(|t| match t {
                    TraceRecord::Robot { robot, cell, step: Some(_), .. } if robot.as_str() == who => Some(*cell),
                    _ => None,
                })
                .collect()
        };
        let c = |x, y| Cell::new(x, y);
        assert_eq!(cells("r1"), [c(1, 0), c(2, 0), c(2, 0), c(1, 0), c(1, 1), c(1, 1)]);
        assert_eq!(cells("r2"), [c(6, 2), c(5, 2), c(5, 2), c(5, 1), c(6, 1), c(6, 1)]);
        // Step and move counts recomputed from the trace.
        let steps = run.trace.iter().filter(|t| matches!(t, TraceRecord::Robot { step: Some(_), .. })).count();
        assert_eq!(steps as u64, r.action_steps);
    }

    #[test]
    fn r2x_without_devices_is_r2r() {
        let s = two_fetches();
        let a = run(&s, Protocol::R2x);
        let b = run(&s, Protocol::R2r);
        assert_eq!(a.trace_jsonl(), b.trace_jsonl());
        assert_eq!(a.result.to_json(), b.result.to_json());
    }

    #[test]
    fn episodes_are_deterministic() {
        let s = two_fetches();
        for p in Protocol::ALL {
            assert_eq!(run(&s, p).trace_jsonl(), run(&s, p).trace_jsonl());
        }
    }

    #[test]
    fn ir_splits_the_goal_between_private_hubs() {
        let r = run(&two_fetches(), Protocol::Ir);
        assert!(r.result.success_truth);
        // Each private hub plans for itself; r1 cannot see table_w from its
        // start pose, so its hub explores and replans on its own.
        let hubs: BTreeSet<&str> = r
            .trace
            .iter()
            .filter_map(|t| match t {
                TraceRecord::Plan { hub, .. } => Some(hub.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(hubs, BTreeSet::from(["hub:r1", "hub:r2"]));
        assert!(r.result.safety_violations.is_empty(), "{:?}", r.result.safety_violations);
    }

    fn sighting(id: &str) -> Sighting {
        Sighting {
            object: ObjectId::new(id),
            class: ObjectClass::Mug,
            cell: Cell::new(1, 1),
            room: "room_0".into(),
            rec: None,
            observed: ObjectClass::Mug.applicable(),
            props: Default::default(),
        }
    }

    #[test]
    fn routing_isolates_or_shares() {
        let robots = [RobotId::new("a"), RobotId::new("b")];
        let mut seen_by_a = Observation::empty(SourceId::Robot(robots[0].clone()), 3);
        seen_by_a.entries.push(sighting("mug"));
        let from_b = Observation::empty(SourceId::Robot(robots[1].clone()), 3);
        let obs = [seen_by_a, from_b];

        let ir = route_observations(Protocol::Ir, &robots, &obs, &[]);
        assert_eq!(ir.len(), 2);
        assert!(ir[1].observations.iter().all(|o| o.entries.is_empty()));
        assert_eq!(ir[0].observations.len(), 1);

        // The shared hub has A's sighting as soon as the tick's readings are fused.
        let shared = route_observations(Protocol::R2r, &robots, &obs, &[]);
        let mut belief = SemanticState::new();
        for r in &robots {
            belief.robots.insert(r.clone(), crate::semantic_state::RobotState::new(r.clone(), Cell::new(0, 0), 0.0, BTreeSet::new()));
        }
        for o in &shared[0].observations {
            belief.fuse(o).unwrap();
        }
        assert!(belief.objects.contains_key(&ObjectId::new("mug")));

        let iot = Observation::empty(SourceId::Device("cam".into()), 3);
        assert_eq!(route_observations(Protocol::R2r, &robots, &obs, std::slice::from_ref(&iot))[0].observations.len(), 2);
        assert_eq!(route_observations(Protocol::R2x, &robots, &obs, &[iot])[0].observations.len(), 3);
    }

    fn corridor() -> Layout {
        let mut l = Layout::open(2, 1);
        l.rooms = vec![
            Room { id: "west".into(), name: "west".into(), bounds: vec![Rect::new(0, 0, 1, 1)] },
            Room { id: "east".into(), name: "east".into(), bounds: vec![Rect::new(1, 0, 1, 1)] },
        ];
        l
    }

    /// Two robots that must swap through a one-cell passage: nobody can
    /// move, so the monitor declares a stall and replans.
    #[test]
    fn mutual_block_is_detected_as_stall() {
        let s = scenario(
            corridor(),
            vec![],
            vec![robot("r1", (0, 0), 0.0), robot("r2", (1, 0), 180.0)],
            "RobotInRoom(r1, east) & RobotInRoom(r2, west)",
        );
        let cfg = OrchestratorConfig { collision_limit: 10_000, tick_budget: 120, ..OrchestratorConfig::with_protocol(Protocol::R2r) };
        let run = run_episode(&s, &cfg, &PlannerBackend::Baseline).unwrap();
        let stall = run
            .trace
            .iter()
            .position(|t| matches!(t, TraceRecord::Stall { .. }))
            .expect("stall detected");
        let TraceRecord::Stall { tick, .. } = run.trace[stall] else { unreachable!() };
        assert!(tick <= cfg.stall_horizon, "stall at {tick}");
        assert!(run.trace[stall..].iter().any(|t| matches!(t, TraceRecord::Plan { tick: p, .. } if *p == tick + 1)));
        assert!(!run.result.success_truth);
        assert!(run.result.safety_violations.is_empty());
    }

    /// Two rooms joined by a single-cell doorway; robots cross in opposite
    /// directions and both arrive.
    #[test]
    fn doorway_crossing_resolves() {
        let mut l = Layout::open(9, 3);
        for y in 0..3 {
            if y != 1 {
                l.walls.insert(crate::environment::WallEdge::between(Cell::new(3, y), Cell::new(4, y)));
            }
            l.walls.insert(crate::environment::WallEdge::between(Cell::new(4, y), Cell::new(5, y)));
        }
        l.walls.remove(&crate::environment::WallEdge::between(Cell::new(4, 1), Cell::new(5, 1)));
        l.rooms = vec![
            Room { id: "west".into(), name: "west".into(), bounds: vec![Rect::new(0, 0, 4, 3)] },
            Room { id: "door".into(), name: "door".into(), bounds: vec![Rect::new(4, 0, 1, 3)] },
            Room { id: "east".into(), name: "east".into(), bounds: vec![Rect::new(5, 0, 4, 3)] },
        ];
        let s = scenario(
            l,
            vec![],
            vec![robot("r1", (1, 1), 0.0), robot("r2", (7, 1), 180.0)],
            "RobotInRoom(r1, east) & RobotInRoom(r2, west)",
        );
        for p in Protocol::ALL {
            let r = run(&s, p).result;
            assert!(r.success_truth, "{p}: {r:?}");
            assert!(r.safety_violations.is_empty(), "{p}: {:?}", r.safety_violations);
        }
    }

    #[cfg(unix)]
    #[test]
    fn invalid_plans_exhaust_the_fail_budget() {
        let cyclic = r#"{"nodes":[{"node_id":"a","a":"navigate_to","params":{"room":"east"},"req_skills":["MoveStep"]}],"edges":[["a","a"]]}"#;
        let backend = PlannerBackend::External(Endpoint::Command {
            program: "sh".into(),
            args: vec!["-c".into(), format!("cat >/dev/null; printf '%s' '{cyclic}'")],
        });
        let s = scenario(corridor(), vec![], vec![robot("r1", (0, 0), 0.0)], "RobotInRoom(r1, east)");
        let cfg = OrchestratorConfig::with_protocol(Protocol::R2r);
        let r = run_episode(&s, &cfg, &backend).unwrap().result;
        assert_eq!(r.planner_calls, cfg.max_fails as u64);
        assert_eq!(r.fail_count, cfg.max_fails as u64);
        assert_eq!(r.termination, Termination::MaxFails);
        assert_eq!(r.action_steps, 0);
        assert!(!r.success_truth);
    }

    #[test]
    fn unreachable_planner_is_recorded_not_raised() {
        let backend = PlannerBackend::External(Endpoint::Command { program: "/nonexistent/planner".into(), args: vec![] });
        let s = scenario(corridor(), vec![], vec![robot("r1", (0, 0), 0.0)], "RobotInRoom(r1, east)");
        let r = run_episode(&s, &OrchestratorConfig::default(), &backend).unwrap().result;
        assert_eq!(r.termination, Termination::MaxFails);
        assert!(!r.success_truth);
    }

    #[test]
    fn invalid_scenario_is_rejected() {
        let mut s = two_fetches();
        s.robots.clear();
        assert!(matches!(
            run_episode(&s, &OrchestratorConfig::default(), &PlannerBackend::Baseline),
            Err(OrchestratorError::ScenarioInvalid(_))
        ));
    }
}
