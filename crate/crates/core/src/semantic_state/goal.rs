use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SemanticState;
use crate::model::{AreaId, ObjectId, Property, RobotId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GoalError {
    #[error("malformed goal: {0}")]
    MalformedGoal(String),
}

/// One goal predicate, evaluated against a belief.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Predicate {
    ObjectInRoom { object: ObjectId, room: AreaId },
    ObjectInReceptacle { object: ObjectId, receptacle: ObjectId },
    PropertyIs { object: ObjectId, property: Property, value: bool },
    RobotInRoom { robot: RobotId, room: AreaId },
}

impl Predicate {
    /// Objects the predicate talks about.
    pub fn objects(&self) -> Vec<&ObjectId> {
        match self {
            Predicate::ObjectInRoom { object, .. } | Predicate::PropertyIs { object, .. } => vec![object],
            Predicate::ObjectInReceptacle { object, receptacle } => vec![object, receptacle],
            Predicate::RobotInRoom { .. } => vec![],
        }
    }

    /// Unknown objects make a predicate false.
    pub fn holds(&self, state: &SemanticState) -> bool {
        match self {
            Predicate::ObjectInRoom { object, room } => state.objects.get(object).is_some_and(|o| &o.room == room),
            Predicate::ObjectInReceptacle { object, receptacle } => state
                .objects
                .get(object)
                .is_some_and(|o| o.receptacle() == Some(receptacle) && state.objects.contains_key(receptacle)),
            Predicate::PropertyIs { object, property, value } => {
                state.objects.get(object).is_some_and(|o| o.props.get(*property) == *value)
            }
            Predicate::RobotInRoom { robot, room } => match (state.robots.get(robot), state.areas.get(room)) {
                (Some(r), Some(a)) => a.contains(r.cell),
                _ => false,
            },
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::ObjectInRoom { object, room } => write!(f, "ObjectInRoom({object}, {room})"),
            Predicate::ObjectInReceptacle { object, receptacle } => {
                write!(f, "ObjectInReceptacle({object}, {receptacle})")
            }
            Predicate::PropertyIs { object, property, value } => {
                write!(f, "PropertyIs({object}, {property}, {})", u8::from(*value))
            }
            Predicate::RobotInRoom { robot, room } => write!(f, "RobotInRoom({robot}, {room})"),
        }
    }
}

impl FromStr for Predicate {
    type Err = GoalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| GoalError::MalformedGoal(format!("{why} in `{s}`"));
        let s = s.trim();
        let (kind, rest) = s.split_once('(').ok_or_else(|| bad("missing `(`"))?;
        let args = rest.strip_suffix(')').ok_or_else(|| bad("missing `)`"))?;
        let args: Vec<&str> = args.split(',').map(str::trim).collect();
        if args.iter().any(|a| a.is_empty()) {
            return Err(bad("empty argument"));
        }
        let arity = |n: usize| if args.len() == n { Ok(()) } else { Err(bad("wrong argument count")) };
        match kind.trim() {
            "ObjectInRoom" => {
                arity(2)?;
                Ok(Predicate::ObjectInRoom { object: args[0].into(), room: args[1].into() })
            }
            "ObjectInReceptacle" => {
                arity(2)?;
                Ok(Predicate::ObjectInReceptacle { object: args[0].into(), receptacle: args[1].into() })
            }
            "PropertyIs" => {
                arity(3)?;
                let property = args[1].parse::<Property>().map_err(|e| bad(&e))?;
                let value = match args[2] {
                    "0" | "false" => false,
                    "1" | "true" => true,
                    _ => return Err(bad("property value must be 0 or 1")),
                };
                Ok(Predicate::PropertyIs { object: args[0].into(), property, value })
            }
            "RobotInRoom" => {
                arity(2)?;
                Ok(Predicate::RobotInRoom { robot: args[0].into(), room: args[1].into() })
            }
            other => Err(bad(&format!("unknown predicate kind `{other}`"))),
        }
    }
}

/// Conjunction of predicates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoalCondition {
    pub predicates: Vec<Predicate>,
}

impl GoalCondition {
    pub fn new(predicates: Vec<Predicate>) -> Self {
        Self { predicates }
    }

    /// Parses `P1 & P2 & ...`; the empty string is the empty conjunction.
    pub fn parse(text: &str) -> Result<Self, GoalError> {
        let text = text.trim();
        if text.is_empty() {
            return Ok(Self::default());
        }
        text.split('&').map(str::parse).collect::<Result<Vec<_>, _>>().map(Self::new)
    }

    /// Parses the JSON array form; unknown kinds or property names are malformed.
    pub fn from_json(value: &serde_json::Value) -> Result<Self, GoalError> {
        serde_json::from_value(value.clone()).map_err(|e| GoalError::MalformedGoal(e.to_string()))
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn unsatisfied<'a>(&'a self, state: &'a SemanticState) -> impl Iterator<Item = &'a Predicate> + 'a {
        self.predicates.iter().filter(move |p| !p.holds(state))
    }
}

impl fmt::Display for GoalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.predicates.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// Conjunction over the goal's predicates; vacuously true when empty.
pub fn query_goal(state: &SemanticState, goal: &GoalCondition) -> bool {
    goal.predicates.iter().all(|p| p.holds(state))
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::{Observation, Sighting};
    use super::*;
    use crate::model::{Cell, EntityRef, ObjectClass, PropertyVector, SourceId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_goal_is_vacuously_true() {
        assert!(query_goal(&SemanticState::new(), &GoalCondition::default()));
        assert!(GoalCondition::parse("  ").unwrap().is_empty());
    }

    #[test]
    fn unknown_object_is_false() {
        let g = GoalCondition::parse("PropertyIs(tv1, isToggled, 0)").unwrap();
        assert!(!query_goal(&base_state(), &g));
    }

    #[test]
    fn malformed_goals_are_rejected() {
        for bad in [
            "Teleport(a, b)",
            "PropertyIs(tv1, isShiny, 0)",
            "PropertyIs(tv1, isOpen, 2)",
            "ObjectInRoom(a)",
            "ObjectInRoom(a, b",
        ] {
            assert!(matches!(GoalCondition::parse(bad), Err(GoalError::MalformedGoal(_))), "{bad}");
        }
        let json = serde_json::json!([{"kind": "Levitate", "object": "a"}]);
        assert!(GoalCondition::from_json(&json).is_err());
    }

    #[test]
    fn text_and_json_forms_agree() {
        let text = "ObjectInReceptacle(apple, fridge) & PropertyIs(fridge, isOpen, 0) & RobotInRoom(r1, kitchen)";
        let g = GoalCondition::parse(text).unwrap();
        assert_eq!(g.to_string(), text);
        let json = serde_json::to_value(&g).unwrap();
        assert_eq!(GoalCondition::from_json(&json).unwrap(), g);
    }

    fn random_state(rng: &mut ChaCha8Rng) -> SemanticState {
        let mut s = base_state();
        let mut entries = vec![Sighting {
            object: oid("box"),
            class: ObjectClass::Cabinet,
            cell: Cell::new(2, 2),
            room: AreaId::new("kitchen"),
            rec: None,
            observed: ObjectClass::Cabinet.applicable(),
            props: PropertyVector::from_bits(rng.gen()),
        }];
        for (id, class) in [("tv", ObjectClass::Television), ("apple", ObjectClass::Apple), ("mug", ObjectClass::Mug)] {
            if rng.gen_bool(0.2) {
                continue;
            }
            let x = rng.gen_range(0..10);
            entries.push(Sighting {
                object: oid(id),
                class,
                cell: Cell::new(x, rng.gen_range(0..5)),
                room: AreaId::new(if x < 5 { "kitchen" } else { "living" }),
                rec: rng.gen_bool(0.5).then(|| EntityRef::Object(oid("box"))),
                observed: class.applicable(),
                props: PropertyVector::from_bits(rng.gen()),
            });
        }
        s.fuse(&Observation { entries, ..Observation::empty(SourceId::Robot(rid("r1")), 1) }).unwrap();
        s.robots.get_mut(&rid("r2")).unwrap().cell = Cell::new(rng.gen_range(0..10), 0);
        s
    }

    fn random_predicate(rng: &mut ChaCha8Rng) -> Predicate {
        let objects = ["tv", "apple", "mug", "box", "ghost"];
        let object = ObjectId::new(objects[rng.gen_range(0..objects.len())]);
        let room = |r: &mut ChaCha8Rng| AreaId::new(["kitchen", "living"][r.gen_range(0..2)]);
        match rng.gen_range(0..4) {
            0 => Predicate::ObjectInRoom { object, room: room(rng) },
            1 => Predicate::ObjectInReceptacle { object, receptacle: ObjectId::new("box") },
            2 => Predicate::PropertyIs {
                object,
                property: Property::ALL[rng.gen_range(0..Property::COUNT)],
                value: rng.gen(),
            },
            _ => Predicate::RobotInRoom { robot: rid(["r1", "r2"][rng.gen_range(0..2)]), room: room(rng) },
        }
    }

    /// Independent per-predicate evaluation straight off the raw maps.
    fn naive(state: &SemanticState, p: &Predicate) -> bool {
        match p {
            Predicate::ObjectInRoom { object, room } => match state.objects.get(object) {
                Some(o) => o.room == *room,
                None => false,
            },
            Predicate::ObjectInReceptacle { object, receptacle } => match state.objects.get(object) {
                Some(o) => o.rec == Some(EntityRef::Object(receptacle.clone())),
                None => false,
            },
            Predicate::PropertyIs { object, property, value } => match state.objects.get(object) {
                Some(o) => ((o.props.bits() >> property.index()) & 1 == 1) == *value,
                None => false,
            },
            Predicate::RobotInRoom { robot, room } => {
                let cell = state.robots[robot].cell;
                let r = state.areas[room].bounds[0];
                cell.x >= r.x && cell.x < r.x + r.w && cell.y >= r.y && cell.y < r.y + r.h
            }
        }
    }

    #[test]
    fn random_goals_match_naive_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let s = random_state(&mut rng);
            for _ in 0..20 {
                let preds: Vec<Predicate> = (0..3).map(|_| random_predicate(&mut rng)).collect();
                let expected = preds.iter().all(|p| naive(&s, p));
                assert_eq!(query_goal(&s, &GoalCondition::new(preds.clone())), expected, "{preds:?}");
            }
        }
    }
}
