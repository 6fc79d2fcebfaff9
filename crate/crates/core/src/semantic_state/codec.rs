//! Canonical text form of a [`SemanticState`].
//!
//! ```text
//! r2x-state v1
//! clock 40
//! devices cam_0,cam_1
//! [robots]
//! r1 cell=2,3 offset=0,0 theta=90 phi=0 sigma=IDLE inv=- skills=MoveStep,Pickup tau=40
//! [objects]
//! apple_0 type=Apple cell=3,4 rec=object:table_1 pi=000100 room=kitchen src=robot:r1 tau=38
//! [areas]
//! kitchen name=kitchen bounds=0,0,5,5 explored=0.48 seen=fff0...
//! ```
//!
//! Lines are key-sorted. Object lines carry `pose@=` / `bits@=` stamp
//! overrides only where a field's stamp differs from its default, so the
//! document parses back to an identical state.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use super::{AreaState, FieldStamps, ObjectState, RobotState, RobotStatus, SemanticState};
use crate::model::{
    ActionKind, AreaId, Cell, DeviceId, EntityRef, ObjectClass, ObjectId, Property, PropertyVector, Rect,
    RobotId, SourceId, WriteStamp,
};

pub const STATE_FORMAT_VERSION: &str = "r2x-state v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("state document line {line}: {message}")]
pub struct CodecError {
    pub line: usize,
    pub message: String,
}

/// Deterministic, key-sorted rendering of the belief.
pub fn serialize_state(state: &SemanticState) -> String {
    let mut out = String::new();
    out.push_str(STATE_FORMAT_VERSION);
    out.push('\n');
    let _ = writeln!(out, "clock {}", state.clock);
    let devices: Vec<&str> = state.devices.iter().map(DeviceId::as_str).collect();
    let _ = writeln!(out, "devices {}", if devices.is_empty() { "-".to_string() } else { devices.join(",") });

    out.push_str("[robots]\n");
    for r in state.robots.values() {
        let skills: Vec<&str> = r.skills.iter().map(|k| k.name()).collect();
        let _ = writeln!(
            out,
            "{} cell={} offset={},{} theta={} phi={} sigma={} inv={} skills={} tau={}",
            r.id,
            r.cell,
            r.offset[0],
            r.offset[1],
            r.theta,
            r.phi,
            r.sigma.name(),
            r.inv.as_ref().map_or("-", ObjectId::as_str),
            if skills.is_empty() { "-".to_string() } else { skills.join(",") },
            r.tau,
        );
    }

    out.push_str("[objects]\n");
    for o in state.objects.values() {
        let _ = write!(
            out,
            "{} type={} cell={} rec={} pi={} room={} src={} tau={}",
            o.id,
            o.class,
            o.cell,
            o.rec.as_ref().map_or_else(|| "-".to_string(), EntityRef::to_string),
            o.props,
            o.room,
            o.src,
            o.tau,
        );
        let record = WriteStamp::new(o.tau, o.src.clone());
        if o.stamps.pose != record {
            let _ = write!(out, " pose@={}", o.stamps.pose);
        }
        let overrides: Vec<String> = Property::ALL
            .into_iter()
            .filter(|p| o.stamps.props[p.index()] != default_bit_stamp(o.class, *p, &record))
            .map(|p| format!("{}:{}", p.name(), o.stamps.props[p.index()]))
            .collect();
        if !overrides.is_empty() {
            let _ = write!(out, " bits@={}", overrides.join(","));
        }
        out.push('\n');
    }

    out.push_str("[areas]\n");
    for a in state.areas.values() {
        let bounds: Vec<String> = a.bounds.iter().map(|r| format!("{},{},{},{}", r.x, r.y, r.w, r.h)).collect();
        let _ = writeln!(
            out,
            "{} name={} bounds={} explored={:.4} seen={}",
            a.id,
            a.name.replace(' ', "_"),
            bounds.join(";"),
            a.explored_fraction,
            seen_hex(a),
        );
    }
    out
}

fn default_bit_stamp(class: ObjectClass, p: Property, record: &WriteStamp) -> WriteStamp {
    if class.applicable().get(p) {
        record.clone()
    } else {
        WriteStamp::zero()
    }
}

fn seen_hex(a: &AreaState) -> String {
    let bits: Vec<bool> = a.cells().map(|c| a.observed.contains(&c)).collect();
    let mut s = String::with_capacity(bits.len() / 4 + 1);
    for chunk in bits.chunks(4) {
        let mut nibble = 0u8;
        for (i, b) in chunk.iter().enumerate() {
            if *b {
                nibble |= 8 >> i;
            }
        }
        s.push(char::from_digit(nibble as u32, 16).expect("nibble"));
    }
    s
}

/// Parses a document produced by [`serialize_state`].
pub fn parse_state(text: &str) -> Result<SemanticState, CodecError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let err = |line: usize, message: String| CodecError { line, message };

    let (n, header) = lines.next().ok_or_else(|| err(1, "empty document".into()))?;
    if header != STATE_FORMAT_VERSION {
        return Err(err(n, format!("expected `{STATE_FORMAT_VERSION}`, got `{header}`")));
    }
    let mut state = SemanticState::new();
    let (n, clock) = lines.next().ok_or_else(|| err(2, "missing clock".into()))?;
    state.clock = clock
        .strip_prefix("clock ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| err(n, "bad clock line".into()))?;
    let (n, devices) = lines.next().ok_or_else(|| err(3, "missing devices".into()))?;
    let devices = devices.strip_prefix("devices ").ok_or_else(|| err(n, "bad devices line".into()))?;
    if devices != "-" {
        state.devices = devices.split(',').map(DeviceId::from).collect();
    }

    let mut section = "";
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = match name {
                "robots" | "objects" | "areas" => name,
                other => return Err(err(n, format!("unknown section `{other}`"))),
            };
            continue;
        }
        let (id, fields) = split_record(line).map_err(|m| err(n, m))?;
        let field = |key: &str| -> Result<&str, CodecError> {
            fields
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| err(n, format!("missing field `{key}`")))
        };
        let parse_err = |m: String| err(n, m);
        match section {
            "robots" => {
                let r = RobotState {
                    id: RobotId::new(id),
                    cell: field("cell")?.parse().map_err(parse_err)?,
                    offset: {
                        let c: Vec<f64> = field("offset")?
                            .split(',')
                            .map(|v| v.parse::<f64>().map_err(|e| err(n, e.to_string())))
                            .collect::<Result<_, _>>()?;
                        <[f64; 2]>::try_from(c).map_err(|_| err(n, "offset needs two values".into()))?
                    },
                    theta: field("theta")?.parse().map_err(|_| err(n, "bad theta".into()))?,
                    phi: field("phi")?.parse().map_err(|_| err(n, "bad phi".into()))?,
                    sigma: match field("sigma")? {
                        "IDLE" => RobotStatus::Idle,
                        "EXECUTING" => RobotStatus::Executing,
                        "CANCELING" => RobotStatus::Canceling,
                        other => return Err(err(n, format!("bad sigma `{other}`"))),
                    },
                    inv: match field("inv")? {
                        "-" => None,
                        o => Some(ObjectId::new(o)),
                    },
                    skills: match field("skills")? {
                        "-" => BTreeSet::new(),
                        s => s.split(',').map(str::parse::<ActionKind>).collect::<Result<_, _>>().map_err(parse_err)?,
                    },
                    tau: field("tau")?.parse().map_err(|_| err(n, "bad tau".into()))?,
                };
                state.robots.insert(r.id.clone(), r);
            }
            "objects" => {
                let class: ObjectClass = field("type")?.parse().map_err(parse_err)?;
                let src: SourceId = field("src")?.parse().map_err(parse_err)?;
                let tau: u64 = field("tau")?.parse().map_err(|_| err(n, "bad tau".into()))?;
                let record = WriteStamp::new(tau, src.clone());
                let mut stamps = FieldStamps {
                    pose: record.clone(),
                    props: std::array::from_fn(|i| default_bit_stamp(class, Property::ALL[i], &record)),
                };
                if let Ok(p) = field("pose@") {
                    stamps.pose = p.parse().map_err(parse_err)?;
                }
                if let Ok(bits) = field("bits@") {
                    for item in bits.split(',') {
                        let (p, st) = item.split_once(':').ok_or_else(|| err(n, format!("bad bit stamp `{item}`")))?;
                        let p: Property = p.parse().map_err(parse_err)?;
                        stamps.props[p.index()] = st.parse().map_err(parse_err)?;
                    }
                }
                let o = ObjectState {
                    id: ObjectId::new(id),
                    class,
                    cell: field("cell")?.parse().map_err(parse_err)?,
                    rec: match field("rec")? {
                        "-" => None,
                        r => Some(r.parse().map_err(parse_err)?),
                    },
                    props: field("pi")?.parse::<PropertyVector>().map_err(parse_err)?,
                    room: AreaId::new(field("room")?),
                    src,
                    tau,
                    stamps,
                };
                state.objects.insert(o.id.clone(), o);
            }
            "areas" => {
                let bounds: Vec<Rect> = field("bounds")?
                    .split(';')
                    .map(|b| {
                        let v: Vec<i32> = b.split(',').filter_map(|x| x.parse().ok()).collect();
                        match v[..] {
                            [x, y, w, h] => Ok(Rect::new(x, y, w, h)),
                            _ => Err(err(n, format!("bad bounds `{b}`"))),
                        }
                    })
                    .collect::<Result<_, _>>()?;
                let mut a = AreaState::new(AreaId::new(id), field("name")?, bounds);
                let hex = field("seen")?;
                let cells: Vec<Cell> = a.cells().collect();
                for (i, ch) in hex.chars().enumerate() {
                    let nibble = ch.to_digit(16).ok_or_else(|| err(n, format!("bad seen digit `{ch}`")))?;
                    for b in 0..4 {
                        if nibble & (8 >> b) != 0 {
                            let c = cells.get(i * 4 + b).ok_or_else(|| err(n, "seen mask too long".into()))?;
                            a.observed.insert(*c);
                        }
                    }
                }
                a.recompute_fraction();
                state.areas.insert(a.id.clone(), a);
            }
            _ => return Err(err(n, "record outside any section".into())),
        }
    }
    Ok(state)
}

fn split_record(line: &str) -> Result<(&str, Vec<(&str, &str)>), String> {
    let mut parts = line.split(' ');
    let id = parts.next().filter(|s| !s.is_empty()).ok_or("missing id")?;
    let fields = parts
        .map(|kv| kv.split_once('=').ok_or_else(|| format!("bad field `{kv}`")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((id, fields))
}
