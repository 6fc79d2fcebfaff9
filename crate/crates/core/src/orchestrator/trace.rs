//! JSON Lines episode traces and their ASCII replay.
//!
//! The first line is a header with the floor plan; then, per tick, one
//! `robot` record per robot (idle robots have no step) interleaved with
//! `plan`, `halt`, `dispatch`, `done` and `stall` records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::environment::{Layout, WallEdge};
use crate::model::{Cell, RobotId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Header {
        width: i32,
        height: i32,
        cell_size: f64,
        walls: Vec<WallEdge>,
        robots: Vec<RobotId>,
        goal: String,
    },
    Plan {
        tick: u64,
        hub: String,
        valid: bool,
        nodes: usize,
        tokens: u64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        errors: Vec<String>,
    },
    Halt {
        tick: u64,
        hub: String,
        robots: Vec<RobotId>,
    },
    Dispatch {
        tick: u64,
        robot: RobotId,
        node: String,
        action: String,
    },
    Robot {
        tick: u64,
        robot: RobotId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result: Option<String>,
        cell: Cell,
        theta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inv: Option<String>,
    },
    Done {
        tick: u64,
        robot: RobotId,
        node: String,
        result: String,
    },
    Stall {
        tick: u64,
        hub: String,
    },
}

impl TraceRecord {
    pub fn header(layout: &Layout, robots: Vec<RobotId>, goal: String) -> Self {
        TraceRecord::Header {
            width: layout.width,
            height: layout.height,
            cell_size: layout.cell_size,
            walls: layout.walls.iter().copied().collect(),
            robots,
            goal,
        }
    }
}

pub fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<TraceRecord>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

/// One top-down frame per tick: `#` walls between cells are drawn on a
/// doubled grid, robots as the last digit of their index (`*` if carrying).
pub fn render_ascii(records: &[TraceRecord]) -> Result<String, String> {
    let Some(TraceRecord::Header { width, height, walls, robots, goal, .. }) = records.first() else {
        return Err("trace has no header".into());
    };
    let (w, h) = (*width as usize, *height as usize);
    let index: BTreeMap<&RobotId, usize> = robots.iter().enumerate().map(|(i, r)| (r, i)).collect();
    let mut frames: BTreeMap<u64, Vec<(usize, Cell, bool, Option<String>)>> = BTreeMap::new();
    for r in &records[1..] {
        if let TraceRecord::Robot { tick, robot, cell, inv, step, .. } = r {
            let i = *index.get(robot).ok_or_else(|| format!("unknown robot {robot}"))?;
            frames.entry(*tick).or_default().push((i, *cell, inv.is_some(), step.clone()));
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "goal: {goal}");
    for (tick, robots_at) in frames {
        let mut grid = vec![vec![' '; 2 * w + 1]; 2 * h + 1];
        for y in 0..h {
            for x in 0..w {
                grid[2 * y + 1][2 * x + 1] = '.';
            }
        }
        for y in 0..=2 * h {
            grid[y][0] = '#';
            grid[y][2 * w] = '#';
        }
        for x in 0..=2 * w {
            grid[0][x] = '#';
            grid[2 * h][x] = '#';
        }
        for e in walls {
            let (a, b) = e.cells();
            let (gx, gy) = ((a.x + b.x + 1) as usize, (a.y + b.y + 1) as usize);
            if gy < grid.len() && gx < grid[0].len() {
                grid[gy][gx] = '#';
            }
        }
        let _ = writeln!(out, "tick {tick}");
        for (i, c, carrying, step) in &robots_at {
            let (gx, gy) = (2 * c.x as usize + 1, 2 * c.y as usize + 1);
            if gy < grid.len() && gx < grid[0].len() {
                grid[gy][gx] = if *carrying { '*' } else { char::from_digit((*i % 10) as u32, 10).unwrap_or('?') };
            }
            let _ = writeln!(out, "  {}: {}", robots[*i], step.as_deref().unwrap_or("idle"));
        }
        // Rows are printed top (max y) to bottom so +y points up.
        for row in grid.iter().rev() {
            out.push_str(row.iter().collect::<String>().trim_end());
            out.push('\n');
        }
    }
    Ok(out)
}
