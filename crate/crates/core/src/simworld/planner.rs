use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use super::geometry::Pose;
use super::world::{Grid, World, NEIGHBORS_8};
use super::SimError;

/// Extra clearance demanded along smoothed segments so that points between
/// line-of-sight samples stay free.
const LOS_MARGIN: f64 = 0.03;

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    cell: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost.total_cmp(&self.cost).then_with(|| o.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Single-source shortest-path distances over grid cells whose clearance is
/// at least `min_clearance`, with 8-connected moves (diagonal cost √2).
#[derive(Clone, Debug)]
pub struct DistanceField {
    pub source: usize,
    pub dist: Vec<f64>,
    pub parent: Vec<usize>,
    pub min_clearance: f64,
    corner_cutting: bool,
}

impl DistanceField {
    /// Runs Dijkstra from `source`; when `corner_cutting` is false a diagonal
    /// move also requires both adjacent orthogonal cells to be passable.
    pub fn compute(grid: &Grid, source: usize, min_clearance: f64, corner_cutting: bool) -> Self {
        let n = grid.nx * grid.ny;
        let pass = |i: usize| grid.clearance[i] >= min_clearance;
        let mut dist = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        if pass(source) {
            dist[source] = 0.0;
            heap.push(Entry { cost: 0.0, cell: source });
        }
        while let Some(Entry { cost, cell }) = heap.pop() {
            if cost > dist[cell] {
                continue;
            }
            let (ix, iy) = ((cell % grid.nx) as isize, (cell / grid.nx) as isize);
            for (dx, dy) in NEIGHBORS_8 {
                let (jx, jy) = (ix + dx, iy + dy);
                if !in_bounds(grid, jx, jy) {
                    continue;
                }
                let j = grid.index(jx as usize, jy as usize);
                if !pass(j) {
                    continue;
                }
                let diagonal = dx != 0 && dy != 0;
                if diagonal && !corner_cutting {
                    let a = grid.index(jx as usize, iy as usize);
                    let b = grid.index(ix as usize, jy as usize);
                    if !pass(a) || !pass(b) {
                        continue;
                    }
                }
                let step = if diagonal { SQRT_2 } else { 1.0 } * grid.cell;
                let c = cost + step;
                if c < dist[j] {
                    dist[j] = c;
                    parent[j] = cell;
                    heap.push(Entry { cost: c, cell: j });
                }
            }
        }
        DistanceField {
            source,
            dist,
            parent,
            min_clearance,
            corner_cutting,
        }
    }

    /// Cells from `cell` back to the source, inclusive.
    pub fn path_to_source(&self, mut cell: usize) -> Option<Vec<usize>> {
        if !self.dist[cell].is_finite() {
            return None;
        }
        let mut out = vec![cell];
        while cell != self.source {
            cell = self.parent[cell];
            out.push(cell);
        }
        Some(out)
    }

    pub fn allows_corner_cutting(&self) -> bool {
        self.corner_cutting
    }
}

fn in_bounds(grid: &Grid, x: isize, y: isize) -> bool {
    x >= 0 && y >= 0 && x < grid.nx as isize && y < grid.ny as isize
}

/// Nearest cell (by centre distance) whose clearance is at least `min_clearance`.
pub fn snap_to_cell(grid: &Grid, p: (f64, f64), min_clearance: f64) -> Option<usize> {
    let (cx, cy) = match grid.cell_of(p.0, p.1) {
        Some(c) => (c.0 as isize, c.1 as isize),
        None => (
            ((p.0 - grid.origin.0) / grid.cell).floor() as isize,
            ((p.1 - grid.origin.1) / grid.cell).floor() as isize,
        ),
    };
    let max_r = grid.nx.max(grid.ny) as isize + 1;
    let mut best: Option<(f64, usize)> = None;
    for r in 0..=max_r {
        for iy in cy - r..=cy + r {
            for ix in cx - r..=cx + r {
                if (iy - cy).abs() != r && (ix - cx).abs() != r {
                    continue;
                }
                if !in_bounds(grid, ix, iy) {
                    continue;
                }
                let i = grid.index(ix as usize, iy as usize);
                if grid.clearance[i] < min_clearance {
                    continue;
                }
                let c = grid.center(ix as usize, iy as usize);
                let d = (c.0 - p.0).powi(2) + (c.1 - p.1).powi(2);
                if best.map_or(true, |(bd, bi)| d < bd || (d == bd && i < bi)) {
                    best = Some((d, i));
                }
            }
        }
        // A ring at Chebyshev radius r holds centres no closer than (r - 1) cells.
        if let Some((bd, _)) = best {
            let bound = (r as f64 - 0.5).max(0.0) * grid.cell;
            if bd.sqrt() <= bound {
                break;
            }
        }
    }
    best.map(|(_, i)| i)
}

/// Geodesic distances to a fixed target, for repeated queries.
#[derive(Clone, Debug)]
pub struct GeodesicField {
    field: Option<DistanceField>,
}

impl GeodesicField {
    pub fn new(world: &World, target: (f64, f64)) -> Self {
        let grid = world.grid();
        let r = world.config.agent_radius;
        let field = snap_to_cell(grid, target, r).map(|s| DistanceField::compute(grid, s, r, true));
        GeodesicField { field }
    }

    pub fn distance_from(&self, world: &World, p: (f64, f64)) -> f64 {
        let Some(f) = &self.field else {
            return f64::INFINITY;
        };
        match snap_to_cell(world.grid(), p, world.config.agent_radius) {
            Some(c) => f.dist[c],
            None => f64::INFINITY,
        }
    }
}

/// Shortest 8-connected path length over the occupancy grid between the free
/// cells nearest to `a` and `b`; `+∞` when they are disconnected.
pub fn geodesic_distance(world: &World, a: (f64, f64), b: (f64, f64)) -> f64 {
    GeodesicField::new(world, b).distance_from(world, a)
}

/// Whether every point sampled along the segment has the given clearance.
pub fn line_of_sight(world: &World, a: (f64, f64), b: (f64, f64), min_clearance: f64) -> bool {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let n = (len / 0.05).ceil().max(1.0) as usize;
    (0..=n).all(|i| {
        let t = i as f64 / n as f64;
        world.clearance(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)) >= min_clearance
    })
}

/// Collision-free pose sequence from `start` to `goal` with spacing at most
/// `max_step`; headings follow the direction of travel.
pub fn plan_path(
    world: &World,
    start: &Pose,
    goal: (f64, f64),
    max_step: f64,
) -> Result<Vec<Pose>, SimError> {
    if !world.is_free(start.x, start.y) {
        return Err(SimError::PoseInObstacle { x: start.x, y: start.y });
    }
    if !world.is_free(goal.0, goal.1) {
        return Err(SimError::PoseInObstacle { x: goal.0, y: goal.1 });
    }
    if start.dist_to(goal) < 1e-9 {
        return Ok(vec![*start]);
    }
    let grid = world.grid();
    let r = world.config.agent_radius;
    let mut clearances = vec![world.config.plan_clearance.max(r)];
    for c in [0.5 * (clearances[0] + r), r] {
        if c < clearances[clearances.len() - 1] {
            clearances.push(c);
        }
    }
    for &c in &clearances {
        let (Some(s), Some(g)) = (snap_to_cell(grid, start.position(), c), snap_to_cell(grid, goal, c)) else {
            continue;
        };
        let field = DistanceField::compute(grid, g, c, false);
        let Some(cells) = field.path_to_source(s) else {
            continue;
        };
        let mut pts = vec![start.position()];
        pts.extend(cells.iter().map(|&i| grid.center(i % grid.nx, i / grid.nx)));
        pts.push(goal);
        if let Some(smooth) = string_pull(world, &pts, c) {
            return Ok(resample(&smooth, start.theta, max_step));
        }
    }
    Err(SimError::Unreachable {
        from: start.position(),
        to: goal,
    })
}

/// Greedy shortcutting: from each kept point advance while the straight
/// segment stays clear.
fn string_pull(world: &World, pts: &[(f64, f64)], clearance: f64) -> Option<Vec<(f64, f64)>> {
    let margin = world.config.agent_radius + LOS_MARGIN;
    let mut out = vec![pts[0]];
    let mut i = 0;
    while i + 1 < pts.len() {
        let mut next = None;
        for j in i + 1..pts.len() {
            // Endpoints may sit closer to obstacles than the planning clearance.
            let need = if i == 0 || j == pts.len() - 1 { margin } else { clearance.max(margin) };
            if line_of_sight(world, pts[i], pts[j], need) {
                next = Some(j);
            } else if next.is_some() {
                break;
            }
        }
        let j = next?;
        out.push(pts[j]);
        i = j;
    }
    Some(out)
}

fn resample(pts: &[(f64, f64)], start_theta: f64, max_step: f64) -> Vec<Pose> {
    let mut xy = vec![pts[0]];
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        if len < 1e-9 {
            continue;
        }
        let n = (len / max_step).ceil() as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            xy.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    let mut poses = Vec::with_capacity(xy.len());
    for i in 0..xy.len() {
        let theta = if i + 1 < xy.len() {
            (xy[i + 1].1 - xy[i].1).atan2(xy[i + 1].0 - xy[i].0)
        } else if i > 0 {
            poses.last().map_or(start_theta, |p: &Pose| p.theta)
        } else {
            start_theta
        };
        poses.push(Pose::new(xy[i].0, xy[i].1, theta));
    }
    poses
}

pub fn path_length(poses: &[Pose]) -> f64 {
    poses
        .windows(2)
        .map(|w| w[0].dist_to(w[1].position()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::geometry::Rect;
    use crate::simworld::world::{Door, WorldConfig};

    fn corridor() -> World {
        World::from_parts(
            0,
            WorldConfig::default(),
            vec![Rect { x0: 0.0, y0: 0.0, x1: 14.0, y1: 2.0 }],
            Vec::new(),
            Vec::new(),
        )
    }

    #[test]
    fn same_point_is_single_pose() {
        let w = corridor();
        let p = Pose::new(1.0, 1.0, 0.3);
        assert_eq!(plan_path(&w, &p, (1.0, 1.0), 0.5).unwrap(), vec![p]);
        assert_eq!(geodesic_distance(&w, (1.0, 1.0), (1.0, 1.0)), 0.0);
    }

    #[test]
    fn corridor_path_is_straight() {
        let w = corridor();
        let path = plan_path(&w, &Pose::new(1.0, 1.0, 0.0), (13.0, 1.0), 0.5).unwrap();
        for p in path.windows(2) {
            assert!(p[1].x > p[0].x);
            assert!(p[0].dist_to(p[1].position()) <= 0.5 + 1e-9);
        }
        let len = path_length(&path);
        assert!((len - 12.0).abs() / 12.0 < 0.05, "{len}");
        assert_eq!(path.last().unwrap().position(), (13.0, 1.0));
    }

    #[test]
    fn goal_in_obstacle_or_disconnected() {
        let w = corridor();
        assert!(plan_path(&w, &Pose::new(1.0, 1.0, 0.0), (13.9, 1.0), 0.5).is_err());
        let two = World::from_parts(
            0,
            WorldConfig::default(),
            vec![
                Rect { x0: 0.0, y0: 0.0, x1: 4.0, y1: 4.0 },
                Rect { x0: 4.0, y0: 0.0, x1: 8.0, y1: 4.0 },
            ],
            Vec::new(),
            Vec::new(),
        );
        assert!(geodesic_distance(&two, (2.0, 2.0), (6.0, 2.0)).is_infinite());
        assert!(matches!(
            plan_path(&two, &Pose::new(2.0, 2.0, 0.0), (6.0, 2.0), 0.5),
            Err(SimError::Unreachable { .. })
        ));
        let open = World::from_parts(
            0,
            WorldConfig::default(),
            two.rooms.clone(),
            vec![Door { vertical: true, coord: 4.0, lo: 1.2, hi: 2.8, rooms: (0, 1) }],
            Vec::new(),
        );
        let d = geodesic_distance(&open, (2.0, 2.0), (6.0, 2.0));
        assert!((d - 4.0).abs() < 0.3, "{d}");
    }
}
