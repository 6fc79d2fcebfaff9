use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{ActionKind, RobotId};

/// The closed high-level action vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighLevelKind {
    FetchAndPlace,
    ToggleDevice,
    OpenClose,
    SliceObject,
    Dispose,
    ExploreRoom,
    NavigateTo,
}

impl HighLevelKind {
    pub const ALL: [HighLevelKind; 7] = [
        HighLevelKind::FetchAndPlace,
        HighLevelKind::ToggleDevice,
        HighLevelKind::OpenClose,
        HighLevelKind::SliceObject,
        HighLevelKind::Dispose,
        HighLevelKind::ExploreRoom,
        HighLevelKind::NavigateTo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HighLevelKind::FetchAndPlace => "fetch_and_place",
            HighLevelKind::ToggleDevice => "toggle_device",
            HighLevelKind::OpenClose => "open_close",
            HighLevelKind::SliceObject => "slice_object",
            HighLevelKind::Dispose => "dispose",
            HighLevelKind::ExploreRoom => "explore_room",
            HighLevelKind::NavigateTo => "navigate_to",
        }
    }

    /// Required parameter names, in order.
    pub fn signature(self) -> &'static [&'static str] {
        match self {
            HighLevelKind::FetchAndPlace => &["object", "receptacle"],
            HighLevelKind::ToggleDevice | HighLevelKind::OpenClose => &["object", "state"],
            HighLevelKind::SliceObject | HighLevelKind::Dispose => &["object"],
            HighLevelKind::ExploreRoom | HighLevelKind::NavigateTo => &["room"],
        }
    }

    /// Parameters naming objects that must be known in the belief.
    pub fn object_params(self) -> &'static [&'static str] {
        match self {
            HighLevelKind::FetchAndPlace => &["object", "receptacle"],
            HighLevelKind::ExploreRoom | HighLevelKind::NavigateTo => &[],
            _ => &["object"],
        }
    }

    /// Allowed values for enumerated parameters.
    pub fn state_values(self) -> &'static [&'static str] {
        match self {
            HighLevelKind::ToggleDevice => &["on", "off"],
            HighLevelKind::OpenClose => &["open", "closed"],
            _ => &[],
        }
    }

    pub fn is_exploratory(self) -> bool {
        matches!(self, HighLevelKind::ExploreRoom | HighLevelKind::NavigateTo)
    }

    /// Primitive skills the kind needs; `state` picks the toggle/open direction.
    pub fn skills(self, state: Option<&str>) -> BTreeSet<ActionKind> {
        use ActionKind::*;
        let v: &[ActionKind] = match (self, state) {
            (HighLevelKind::FetchAndPlace | HighLevelKind::Dispose, _) => &[MoveStep, Pickup, Put],
            (HighLevelKind::ToggleDevice, Some("off")) => &[MoveStep, ToggleOff],
            (HighLevelKind::ToggleDevice, _) => &[MoveStep, ToggleOn],
            (HighLevelKind::OpenClose, Some("closed")) => &[MoveStep, Close],
            (HighLevelKind::OpenClose, _) => &[MoveStep, Open],
            (HighLevelKind::SliceObject, _) => &[MoveStep, Pickup, Slice],
            (HighLevelKind::ExploreRoom, _) => &[MoveStep, Scan],
            (HighLevelKind::NavigateTo, _) => &[MoveStep],
        };
        v.iter().copied().collect()
    }
}

impl fmt::Display for HighLevelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HighLevelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HighLevelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown action kind `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeStatus {
    #[default]
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionNode {
    pub node_id: String,
    pub a: HighLevelKind,
    pub params: BTreeMap<String, String>,
    pub req_skills: BTreeSet<ActionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_pref: Option<RobotId>,
    #[serde(default)]
    pub status: NodeStatus,
}

impl ActionNode {
    /// A pending node with skills derived from its kind.
    pub fn new(node_id: impl Into<String>, a: HighLevelKind, params: &[(&str, &str)]) -> Self {
        let params: BTreeMap<String, String> = params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let req_skills = a.skills(params.get("state").map(String::as_str));
        Self { node_id: node_id.into(), a, params, req_skills, r_pref: None, status: NodeStatus::Pending }
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    /// The object the node primarily acts on, if any.
    pub fn object(&self) -> Option<&str> {
        self.param("object")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanGraph {
    pub nodes: BTreeMap<String, ActionNode>,
    pub edges: BTreeSet<(String, String)>,
}

/// Wire form: nodes as a list, edges as `[from, to]` pairs.
#[derive(Serialize, Deserialize)]
struct PlanWire {
    nodes: Vec<ActionNode>,
    #[serde(default)]
    edges: Vec<(String, String)>,
}

impl PlanGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, node: ActionNode) -> String {
        let id = node.node_id.clone();
        self.nodes.insert(id.clone(), node);
        id
    }

    pub fn depend(&mut self, before: &str, after: &str) {
        self.edges.insert((before.to_string(), after.to_string()));
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn deps<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges.iter().filter(move |(_, to)| to == node).map(|(from, _)| from.as_str())
    }

    pub fn deps_done(&self, node: &str) -> bool {
        self.deps(node).all(|d| self.nodes.get(d).is_some_and(|n| n.status == NodeStatus::Done))
    }

    /// PENDING nodes whose dependencies are all DONE, in id order.
    pub fn ready(&self) -> Vec<&ActionNode> {
        self.nodes
            .values()
            .filter(|n| n.status == NodeStatus::Pending && self.deps_done(&n.node_id))
            .collect()
    }

    pub fn all_done(&self) -> bool {
        self.nodes.values().all(|n| n.status == NodeStatus::Done)
    }

    pub fn running(&self) -> impl Iterator<Item = &ActionNode> {
        self.nodes.values().filter(|n| n.status == NodeStatus::Running)
    }

    /// Kahn's algorithm with smallest-id-first; `None` if there is a cycle or
    /// an edge names a missing node.
    pub fn topological_order(&self) -> Option<Vec<String>> {
        let mut indeg: BTreeMap<&str, usize> = self.nodes.keys().map(|k| (k.as_str(), 0)).collect();
        for (from, to) in &self.edges {
            if !self.nodes.contains_key(from) {
                return None;
            }
            *indeg.get_mut(to.as_str())? += 1;
        }
        let mut ready: BTreeSet<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
        let mut out = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            out.push(n.to_string());
            for (_, to) in self.edges.iter().filter(|(f, _)| f == n) {
                let d = indeg.get_mut(to.as_str()).expect("checked");
                *d -= 1;
                if *d == 0 {
                    ready.insert(to.as_str());
                }
            }
        }
        (out.len() == self.nodes.len()).then_some(out)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let wire = PlanWire { nodes: self.nodes.values().cloned().collect(), edges: self.edges.iter().cloned().collect() };
        serde_json::to_value(wire).expect("plan serializes")
    }

    /// Parses the wire form; duplicate node ids are an error.
    pub fn from_json(value: &serde_json::Value) -> Result<Self, String> {
        let wire: PlanWire = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
        let mut g = PlanGraph::new();
        for n in wire.nodes {
            if g.nodes.contains_key(&n.node_id) {
                return Err(format!("duplicate node id `{}`", n.node_id));
            }
            g.add(n);
        }
        g.edges = wire.edges.into_iter().collect();
        Ok(g)
    }
}
