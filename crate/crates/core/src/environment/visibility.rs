use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Layout, WallEdge};
use crate::model::Cell;

/// Sensor geometry: range in cells and half-angle of the cone in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewCone {
    pub range: f64,
    pub half_angle: f64,
}

impl Default for ViewCone {
    fn default() -> Self {
        Self { range: 12.0, half_angle: 60.0 }
    }
}

impl ViewCone {
    /// Full circle, as used by a scan.
    pub fn omni(range: f64) -> Self {
        Self { range, half_angle: 180.0 }
    }

    fn admits(&self, from: Cell, to: Cell, yaw: f64) -> bool {
        if from == to {
            return true;
        }
        let (dx, dy) = ((to.x - from.x) as f64, (to.y - from.y) as f64);
        if dx.hypot(dy) > self.range + 1e-9 {
            return false;
        }
        if self.half_angle >= 180.0 {
            return true;
        }
        let bearing = dy.atan2(dx).to_degrees();
        let mut diff = (bearing - yaw).rem_euclid(360.0);
        if diff > 180.0 {
            diff = 360.0 - diff;
        }
        diff <= self.half_angle + 1e-9
    }
}

/// Cells visible from `from` facing `yaw` degrees (0 = +x, 90 = +y).
pub fn visible_cells(layout: &Layout, from: Cell, yaw: f64, cone: ViewCone) -> BTreeSet<Cell> {
    if !layout.in_bounds(from) {
        return BTreeSet::new();
    }
    let r = cone.range.ceil() as i32;
    let mut out = BTreeSet::new();
    for y in (from.y - r).max(0)..=(from.y + r).min(layout.height - 1) {
        for x in (from.x - r).max(0)..=(from.x + r).min(layout.width - 1) {
            let c = Cell::new(x, y);
            if cone.admits(from, c, yaw) && line_of_sight(layout, from, c) {
                out.insert(c);
            }
        }
    }
    out
}

/// Whether the segment between the two cell centres avoids every wall.
///
/// Walks the cells the segment passes through. A segment passing exactly
/// through a grid corner is blocked if any wall touches that corner.
pub fn line_of_sight(layout: &Layout, a: Cell, b: Cell) -> bool {
    let (nx, ny) = ((b.x - a.x).abs() as i64, (b.y - a.y).abs() as i64);
    let (sx, sy) = ((b.x - a.x).signum(), (b.y - a.y).signum());
    let wall = |p: Cell, q: Cell| layout.walls.contains(&WallEdge::between(p, q));
    let mut c = a;
    let (mut i, mut j) = (0i64, 0i64);
    while i < nx || j < ny {
        // Crossing parameters are (2i+1)/(2nx) and (2j+1)/(2ny); compare exactly.
        let ord = if i >= nx {
            std::cmp::Ordering::Greater
        } else if j >= ny {
            std::cmp::Ordering::Less
        } else {
            ((2 * i + 1) * ny).cmp(&((2 * j + 1) * nx))
        };
        match ord {
            std::cmp::Ordering::Less => {
                let n = c.offset(sx, 0);
                if wall(c, n) {
                    return false;
                }
                c = n;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                let n = c.offset(0, sy);
                if wall(c, n) {
                    return false;
                }
                c = n;
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                let (h, v, d) = (c.offset(sx, 0), c.offset(0, sy), c.offset(sx, sy));
                if wall(c, h) || wall(c, v) || wall(h, d) || wall(v, d) {
                    return false;
                }
                c = d;
                i += 1;
                j += 1;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Closed-segment intersection against every wall, in doubled integer
    /// coordinates (cell centres are odd, grid lines even).
    fn oracle_los(layout: &Layout, a: Cell, b: Cell) -> bool {
        let p = (2 * a.x as i64 + 1, 2 * a.y as i64 + 1);
        let q = (2 * b.x as i64 + 1, 2 * b.y as i64 + 1);
        layout.walls.iter().all(|w| {
            let (c, d) = w.cells();
            let (s, t) = if c.x != d.x {
                let x = 2 * d.x as i64;
                ((x, 2 * c.y as i64), (x, 2 * c.y as i64 + 2))
            } else {
                let y = 2 * d.y as i64;
                ((2 * c.x as i64, y), (2 * c.x as i64 + 2, y))
            };
            !segments_touch(p, q, s, t)
        })
    }

    fn orient(a: (i64, i64), b: (i64, i64), c: (i64, i64)) -> i64 {
        ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).signum()
    }

    fn on_segment(a: (i64, i64), b: (i64, i64), p: (i64, i64)) -> bool {
        p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
    }

    fn segments_touch(p: (i64, i64), q: (i64, i64), s: (i64, i64), t: (i64, i64)) -> bool {
        let (o1, o2, o3, o4) = (orient(p, q, s), orient(p, q, t), orient(s, t, p), orient(s, t, q));
        if o1 != o2 && o3 != o4 {
            return true;
        }
        (o1 == 0 && on_segment(p, q, s))
            || (o2 == 0 && on_segment(p, q, t))
            || (o3 == 0 && on_segment(s, t, p))
            || (o4 == 0 && on_segment(s, t, q))
    }

    fn random_walls(rng: &mut ChaCha8Rng, n: i32, density: f64) -> Layout {
        let mut l = Layout::open(n, n);
        for c in l.cells().collect::<Vec<_>>() {
            for n2 in [c.offset(1, 0), c.offset(0, 1)] {
                if l.in_bounds(n2) && rng.gen_bool(density) {
                    l.walls.insert(WallEdge::between(c, n2));
                }
            }
        }
        l
    }

    #[test]
    fn line_of_sight_matches_segment_oracle_on_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for density in [0.05, 0.15, 0.3] {
            for _ in 0..4 {
                let l = random_walls(&mut rng, 8, density);
                for a in l.cells() {
                    for b in l.cells() {
                        assert_eq!(line_of_sight(&l, a, b), oracle_los(&l, a, b), "{a} -> {b} walls {:?}", l.walls);
                    }
                }
            }
        }
    }

    #[test]
    fn field_of_view_matches_raycast_oracle_for_all_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = random_walls(&mut rng, 8, 0.15);
        let cone = ViewCone { range: 5.0, half_angle: 60.0 };
        for from in l.cells() {
            for yaw in [0.0, 45.0, 90.0, 180.0, 270.0, 315.0] {
                let got = visible_cells(&l, from, yaw, cone);
                let want: BTreeSet<Cell> = l
                    .cells()
                    .filter(|c| {
                        let (dx, dy) = ((c.x - from.x) as f64, (c.y - from.y) as f64);
                        let ang = (dy.atan2(dx).to_degrees() - yaw + 540.0).rem_euclid(360.0) - 180.0;
                        *c == from || (dx * dx + dy * dy <= 25.0 + 1e-9 && ang.abs() <= 60.0 + 1e-9)
                    })
                    .filter(|c| oracle_los(&l, from, *c))
                    .collect();
                assert_eq!(got, want, "from {from} yaw {yaw}");
            }
        }
    }

    #[test]
    fn wall_blocks_view_of_next_room() {
        let mut l = Layout::open(6, 3);
        for y in 0..3 {
            l.walls.insert(WallEdge::between(Cell::new(2, y), Cell::new(3, y)));
        }
        let seen = visible_cells(&l, Cell::new(0, 1), 0.0, ViewCone::default());
        assert!(seen.contains(&Cell::new(2, 1)));
        assert!(seen.iter().all(|c| c.x <= 2));
    }

    #[test]
    fn cone_excludes_cells_behind() {
        let l = Layout::open(9, 9);
        let seen = visible_cells(&l, Cell::new(4, 4), 0.0, ViewCone::default());
        assert!(seen.contains(&Cell::new(8, 4)));
        assert!(!seen.contains(&Cell::new(0, 4)));
        assert!(seen.contains(&Cell::new(4, 4)));
        let all = visible_cells(&l, Cell::new(4, 4), 0.0, ViewCone::omni(12.0));
        assert_eq!(all.len(), 81);
    }
}
