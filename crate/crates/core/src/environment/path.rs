use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use super::{Layout, NEIGHBOURS};
use crate::model::Cell;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathError {
    #[error("no path from {from} to {to}")]
    Unreachable { from: Cell, to: Cell },
}

/// BFS distances (in moves) to a single origin.
#[derive(Clone, Debug)]
pub struct DistanceMap {
    width: i32,
    dist: Vec<Option<u32>>,
}

impl DistanceMap {
    pub fn get(&self, c: Cell) -> Option<u32> {
        if c.x < 0 || c.y < 0 || c.x >= self.width {
            return None;
        }
        self.dist.get((c.y * self.width + c.x) as usize).copied().flatten()
    }
}

/// Distances from `origin`, never entering cells in `avoid`.
pub fn distance_map(layout: &Layout, origin: Cell, avoid: &BTreeSet<Cell>) -> DistanceMap {
    let mut dist = vec![None; layout.cell_count()];
    if layout.in_bounds(origin) {
        dist[layout.index(origin)] = Some(0);
        let mut queue = VecDeque::from([origin]);
        while let Some(c) = queue.pop_front() {
            let d = dist[layout.index(c)].expect("queued cells have a distance");
            for n in layout.neighbours(c) {
                let i = layout.index(n);
                if dist[i].is_none() && !avoid.contains(&n) {
                    dist[i] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
    }
    DistanceMap { width: layout.width, dist }
}

/// Shortest 4-connected path, excluding `from` and including `to`.
///
/// Each step takes the first neighbour in `(dx, dy)` order that lies on a
/// shortest path, so the result is fully determined by the layout.
pub fn plan_path(layout: &Layout, from: Cell, to: Cell) -> Result<Vec<Cell>, PathError> {
    plan_path_avoiding(layout, from, to, &BTreeSet::new())
}

/// As [`plan_path`] but treating `avoid` cells (other than the endpoints) as blocked.
pub fn plan_path_avoiding(layout: &Layout, from: Cell, to: Cell, avoid: &BTreeSet<Cell>) -> Result<Vec<Cell>, PathError> {
    let unreachable = PathError::Unreachable { from, to };
    if !layout.in_bounds(from) || !layout.in_bounds(to) {
        return Err(unreachable);
    }
    let mut avoid = avoid.clone();
    avoid.remove(&from);
    avoid.remove(&to);
    let dist = distance_map(layout, to, &avoid);
    let mut d = dist.get(from).ok_or(unreachable)?;
    let mut path = Vec::with_capacity(d as usize);
    let mut cur = from;
    while d > 0 {
        cur = NEIGHBOURS
            .into_iter()
            .map(|(dx, dy)| cur.offset(dx, dy))
            .find(|n| !layout.blocked(cur, *n) && dist.get(*n) == Some(d - 1))
            .expect("a shortest-path predecessor exists");
        path.push(cur);
        d -= 1;
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::super::WallEdge;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_cell_is_empty_path() {
        let l = Layout::open(3, 3);
        assert!(plan_path(&l, Cell::new(1, 1), Cell::new(1, 1)).unwrap().is_empty());
    }

    #[test]
    fn open_grid_path_is_manhattan() {
        let l = Layout::open(5, 5);
        let p = plan_path(&l, Cell::new(0, 0), Cell::new(4, 4)).unwrap();
        assert_eq!(p.len(), 8);
        assert!((p.len() as f64 * l.cell_size - 2.0).abs() < 1e-12);
        // Tie-break: (0,1) before (1,0), so the path goes down first.
        assert_eq!(p[0], Cell::new(0, 1));
    }

    #[test]
    fn sealed_target_is_unreachable() {
        let mut l = Layout::open(3, 3);
        let t = Cell::new(2, 2);
        l.walls.insert(WallEdge::between(t, Cell::new(1, 2)));
        l.walls.insert(WallEdge::between(t, Cell::new(2, 1)));
        assert!(matches!(plan_path(&l, Cell::new(0, 0), t), Err(PathError::Unreachable { .. })));
    }

    /// Textbook BFS from the source with explicit visited set.
    fn bfs_oracle(l: &Layout, a: Cell, b: Cell) -> Option<usize> {
        let mut seen = BTreeSet::from([a]);
        let mut frontier = vec![a];
        let mut d = 0;
        while !frontier.is_empty() {
            if frontier.contains(&b) {
                return Some(d);
            }
            let mut next = Vec::new();
            for c in frontier {
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let n = Cell::new(c.x + dx, c.y + dy);
                    let open = n.x >= 0 && n.y >= 0 && n.x < l.width && n.y < l.height
                        && !l.walls.contains(&WallEdge::between(c, n));
                    if open && seen.insert(n) {
                        next.push(n);
                    }
                }
            }
            frontier = next;
            d += 1;
        }
        None
    }

    #[test]
    fn random_walled_grids_match_bfs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let mut l = Layout::open(10, 10);
            for c in l.cells().collect::<Vec<_>>() {
                for n in [c.offset(1, 0), c.offset(0, 1)] {
                    if l.in_bounds(n) && rng.gen_bool(0.3) {
                        l.walls.insert(WallEdge::between(c, n));
                    }
                }
            }
            for _ in 0..30 {
                let a = Cell::new(rng.gen_range(0..10), rng.gen_range(0..10));
                let b = Cell::new(rng.gen_range(0..10), rng.gen_range(0..10));
                match (plan_path(&l, a, b), bfs_oracle(&l, a, b)) {
                    (Ok(p), Some(d)) => {
                        assert_eq!(p.len(), d);
                        let mut prev = a;
                        for c in &p {
                            assert!(!l.blocked(prev, *c), "path crosses wall {prev}->{c}");
                            prev = *c;
                        }
                        assert_eq!(prev, b);
                    }
                    (Err(_), None) => {}
                    (got, want) => panic!("{a}->{b}: {got:?} vs {want:?}"),
                }
            }
        }
    }

    #[test]
    fn avoiding_detours_around_cells() {
        let l = Layout::open(3, 3);
        let avoid = BTreeSet::from([Cell::new(1, 0)]);
        let p = plan_path_avoiding(&l, Cell::new(0, 0), Cell::new(2, 0), &avoid).unwrap();
        assert_eq!(p.len(), 4);
        assert!(!p.contains(&Cell::new(1, 0)));
    }
}
