//! Identifiers, grid cells, primitive action kinds, and the object property vocabulary.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(
    /// Fleet member identifier.
    RobotId
);
string_id!(
    /// Globally unique object identifier (sensors report these directly).
    ObjectId
);
string_id!(
    /// IoT device identifier.
    DeviceId
);
string_id!(
    /// Room identifier.
    AreaId
);

/// Who wrote a piece of state.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SourceId {
    Robot(RobotId),
    Device(DeviceId),
    /// Scenario setup and scripted events.
    World,
}

impl SourceId {
    /// Tie-break rank on equal timestamps: robots beat devices beat the world.
    pub fn rank(&self) -> u8 {
        match self {
            SourceId::Robot(_) => 2,
            SourceId::Device(_) => 1,
            SourceId::World => 0,
        }
    }

    pub fn is_robot(&self) -> bool {
        matches!(self, SourceId::Robot(_))
    }

    pub fn robot(&self) -> Option<&RobotId> {
        match self {
            SourceId::Robot(r) => Some(r),
            _ => None,
        }
    }

    fn id_str(&self) -> &str {
        match self {
            SourceId::Robot(r) => r.as_str(),
            SourceId::Device(d) => d.as_str(),
            SourceId::World => "",
        }
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceId::Robot(r) => write!(f, "robot:{r}"),
            SourceId::Device(d) => write!(f, "device:{d}"),
            SourceId::World => f.write_str("world"),
        }
    }
}

impl FromStr for SourceId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "world" {
            return Ok(SourceId::World);
        }
        match s.split_once(':') {
            Some(("robot", id)) if !id.is_empty() => Ok(SourceId::Robot(RobotId::new(id))),
            Some(("device", id)) if !id.is_empty() => Ok(SourceId::Device(DeviceId::new(id))),
            _ => Err(format!("bad source id `{s}`")),
        }
    }
}

impl TryFrom<String> for SourceId {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SourceId> for String {
    fn from(s: SourceId) -> Self {
        s.to_string()
    }
}

/// Parent of a contained object: a receptacle or a carrying robot.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EntityRef {
    Object(ObjectId),
    Robot(RobotId),
}

impl EntityRef {
    pub fn as_object(&self) -> Option<&ObjectId> {
        match self {
            EntityRef::Object(o) => Some(o),
            EntityRef::Robot(_) => None,
        }
    }

    pub fn as_robot(&self) -> Option<&RobotId> {
        match self {
            EntityRef::Robot(r) => Some(r),
            EntityRef::Object(_) => None,
        }
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityRef::Object(o) => write!(f, "object:{o}"),
            EntityRef::Robot(r) => write!(f, "robot:{r}"),
        }
    }
}

impl FromStr for EntityRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("object", id)) if !id.is_empty() => Ok(EntityRef::Object(ObjectId::new(id))),
            Some(("robot", id)) if !id.is_empty() => Ok(EntityRef::Robot(RobotId::new(id))),
            _ => Err(format!("bad entity reference `{s}`")),
        }
    }
}

impl TryFrom<String> for EntityRef {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<EntityRef> for String {
    fn from(e: EntityRef) -> Self {
        e.to_string()
    }
}

/// Timestamp plus writer, totally ordered for last-writer-wins.
///
/// Order: later tick wins; on equal ticks robots beat devices; then the
/// lexicographically smaller source id wins.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WriteStamp {
    pub tau: u64,
    pub src: SourceId,
}

impl WriteStamp {
    pub fn new(tau: u64, src: SourceId) -> Self {
        Self { tau, src }
    }

    /// Stamp of a field nobody has written yet. Loses to every real write.
    pub fn zero() -> Self {
        Self { tau: 0, src: SourceId::World }
    }
}

impl Ord for WriteStamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.tau
            .cmp(&other.tau)
            .then(self.src.rank().cmp(&other.src.rank()))
            .then_with(|| other.src.id_str().cmp(self.src.id_str()))
    }
}

impl PartialOrd for WriteStamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for WriteStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.tau, self.src)
    }
}

impl FromStr for WriteStamp {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (tau, src) = s.split_once('/').ok_or_else(|| format!("bad stamp `{s}`"))?;
        Ok(Self {
            tau: tau.parse().map_err(|_| format!("bad stamp tick `{tau}`"))?,
            src: src.parse()?,
        })
    }
}

/// Grid cell. Serialized as `[x, y]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Cell) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    pub fn chebyshev(self, other: Cell) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    pub fn offset(self, dx: i32, dy: i32) -> Cell {
        Cell::new(self.x + dx, self.y + dy)
    }
}

impl From<[i32; 2]> for Cell {
    fn from([x, y]: [i32; 2]) -> Self {
        Cell { x, y }
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.x, self.y)
    }
}

impl FromStr for Cell {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (x, y) = s.split_once(',').ok_or_else(|| format!("bad cell `{s}`"))?;
        let x = x.trim().parse().map_err(|_| format!("bad cell `{s}`"))?;
        let y = y.trim().parse().map_err(|_| format!("bad cell `{s}`"))?;
        Ok(Cell { x, y })
    }
}

/// Axis-aligned cell rectangle, half-open: `[x, x+w) × [y, y+h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl Rect {
    pub const fn new(x: i32, y: i32, w: i32, h: i32) -> Self {
        Self { x, y, w, h }
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x >= self.x && c.x < self.x + self.w && c.y >= self.y && c.y < self.y + self.h
    }

    pub fn area(&self) -> usize {
        (self.w.max(0) * self.h.max(0)) as usize
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.y..self.y + self.h).flat_map(move |y| (self.x..self.x + self.w).map(move |x| Cell::new(x, y)))
    }

    pub fn center(&self) -> Cell {
        Cell::new(self.x + self.w / 2, self.y + self.h / 2)
    }
}

/// Primitive action kinds; robot skills are sets of these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    MoveStep,
    Rotate,
    Pickup,
    Put,
    Open,
    Close,
    ToggleOn,
    ToggleOff,
    Slice,
    Scan,
}

impl ActionKind {
    pub const ALL: [ActionKind; 10] = [
        ActionKind::MoveStep,
        ActionKind::Rotate,
        ActionKind::Pickup,
        ActionKind::Put,
        ActionKind::Open,
        ActionKind::Close,
        ActionKind::ToggleOn,
        ActionKind::ToggleOff,
        ActionKind::Slice,
        ActionKind::Scan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::MoveStep => "MoveStep",
            ActionKind::Rotate => "Rotate",
            ActionKind::Pickup => "Pickup",
            ActionKind::Put => "Put",
            ActionKind::Open => "Open",
            ActionKind::Close => "Close",
            ActionKind::ToggleOn => "ToggleOn",
            ActionKind::ToggleOff => "ToggleOff",
            ActionKind::Slice => "Slice",
            ActionKind::Scan => "Scan",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown action kind `{s}`"))
    }
}

/// Dynamic object property, in fixed vector order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Property {
    #[serde(rename = "isOpen")]
    IsOpen,
    #[serde(rename = "isToggled")]
    IsToggled,
    #[serde(rename = "isBroken")]
    IsBroken,
    #[serde(rename = "isSliced")]
    IsSliced,
    #[serde(rename = "isDirty")]
    IsDirty,
    #[serde(rename = "isFilled")]
    IsFilled,
}

impl Property {
    pub const COUNT: usize = 6;
    pub const ALL: [Property; 6] = [
        Property::IsOpen,
        Property::IsToggled,
        Property::IsBroken,
        Property::IsSliced,
        Property::IsDirty,
        Property::IsFilled,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Property::IsOpen => "isOpen",
            Property::IsToggled => "isToggled",
            Property::IsBroken => "isBroken",
            Property::IsSliced => "isSliced",
            Property::IsDirty => "isDirty",
            Property::IsFilled => "isFilled",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Property {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Property::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown property `{s}`"))
    }
}

/// Fixed-order binary vector over [`Property::ALL`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PropertyVector(u8);

impl PropertyVector {
    pub const EMPTY: PropertyVector = PropertyVector(0);
    pub const FULL: PropertyVector = PropertyVector(0b11_1111);

    pub fn from_bits(bits: u8) -> Self {
        Self(bits & Self::FULL.0)
    }

    pub fn of(props: &[Property]) -> Self {
        props.iter().fold(Self::EMPTY, |v, p| v.with(*p, true))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn get(self, p: Property) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn set(&mut self, p: Property, value: bool) {
        if value {
            self.0 |= 1 << p.index();
        } else {
            self.0 &= !(1 << p.index());
        }
    }

    pub fn with(mut self, p: Property, value: bool) -> Self {
        self.set(p, value);
        self
    }

    pub fn and(self, other: PropertyVector) -> Self {
        Self(self.0 & other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Property> {
        Property::ALL.into_iter().filter(move |p| self.get(*p))
    }
}

/// `"010000"` in property order.
impl fmt::Display for PropertyVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in Property::ALL {
            f.write_str(if self.get(p) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for PropertyVector {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != Property::COUNT {
            return Err(format!("property vector `{s}` must have {} bits", Property::COUNT));
        }
        let mut v = PropertyVector::EMPTY;
        for (p, ch) in Property::ALL.into_iter().zip(s.chars()) {
            match ch {
                '0' => {}
                '1' => v.set(p, true),
                _ => return Err(format!("bad property bit `{ch}`")),
            }
        }
        Ok(v)
    }
}

/// Object class labels used by the generated scenes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    Fridge,
    Cabinet,
    Microwave,
    Table,
    CounterTop,
    GarbageCan,
    Television,
    Lamp,
    Laptop,
    Apple,
    Tomato,
    Bread,
    Lettuce,
    Mug,
    Cup,
    Plate,
    Book,
    Knife,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 18] = [
        ObjectClass::Fridge,
        ObjectClass::Cabinet,
        ObjectClass::Microwave,
        ObjectClass::Table,
        ObjectClass::CounterTop,
        ObjectClass::GarbageCan,
        ObjectClass::Television,
        ObjectClass::Lamp,
        ObjectClass::Laptop,
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

    /// Bits that may ever be 1 for this class.
    pub fn applicable(self) -> PropertyVector {
        use ObjectClass::*;
        use Property::*;
        match self {
            Fridge | Cabinet => PropertyVector::of(&[IsOpen]),
            Microwave => PropertyVector::of(&[IsOpen, IsToggled, IsBroken]),
            Table | CounterTop | GarbageCan => PropertyVector::EMPTY,
            Television | Lamp => PropertyVector::of(&[IsToggled, IsBroken]),
            Laptop => PropertyVector::of(&[IsOpen, IsToggled, IsBroken]),
            Apple | Tomato | Bread | Lettuce => PropertyVector::of(&[IsSliced]),
            Mug | Cup => PropertyVector::of(&[IsBroken, IsDirty, IsFilled]),
            Plate => PropertyVector::of(&[IsBroken, IsDirty]),
            Book => PropertyVector::of(&[IsOpen]),
            Knife => PropertyVector::EMPTY,
        }
    }

    pub fn is_receptacle(self) -> bool {
        use ObjectClass::*;
        matches!(self, Fridge | Cabinet | Microwave | Table | CounterTop | GarbageCan)
    }

    /// Openable receptacle (hides its contents when closed).
    pub fn is_container(self) -> bool {
        self.is_receptacle() && self.applicable().get(Property::IsOpen)
    }

    pub fn is_openable(self) -> bool {
        self.applicable().get(Property::IsOpen)
    }

    pub fn is_toggleable(self) -> bool {
        self.applicable().get(Property::IsToggled)
    }

    pub fn is_sliceable(self) -> bool {
        self.applicable().get(Property::IsSliced)
    }

    pub fn is_pickupable(self) -> bool {
        use ObjectClass::*;
        matches!(self, Laptop | Apple | Tomato | Bread | Lettuce | Mug | Cup | Plate | Book | Knife)
    }

    pub fn is_perishable(self) -> bool {
        use ObjectClass::*;
        matches!(self, Apple | Tomato | Bread | Lettuce)
    }

    /// Nominal camera pitch (degrees) needed to interact with this class.
    pub fn view_horizon(self) -> f64 {
        use ObjectClass::*;
        match self {
            GarbageCan => 30.0,
            Cabinet | Television => -30.0,
            _ => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        use ObjectClass::*;
        match self {
            Fridge => "Fridge",
            Cabinet => "Cabinet",
            Microwave => "Microwave",
            Table => "Table",
            CounterTop => "CounterTop",
            GarbageCan => "GarbageCan",
            Television => "Television",
            Lamp => "Lamp",
            Laptop => "Laptop",
            Apple => "Apple",
            Tomato => "Tomato",
            Bread => "Bread",
            Lettuce => "Lettuce",
            Mug => "Mug",
            Cup => "Cup",
            Plate => "Plate",
            Book => "Book",
            Knife => "Knife",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown object class `{s}`"))
    }
}
