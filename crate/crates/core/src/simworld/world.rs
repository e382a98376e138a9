use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::geometry::{Rect, Segment};
use super::SimError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_rooms: usize,
    /// Semantic classes; class 0 is reserved for walls.
    pub n_classes: usize,
    pub feat_dim: usize,
    pub room_min: f64,
    pub room_max: f64,
    pub objects_per_room: usize,
    pub object_radius_min: f64,
    pub object_radius_max: f64,
    pub door_width: f64,
    pub cell: f64,
    pub max_range: f64,
    pub agent_radius: f64,
    /// Wall/object clearance preferred by the path planner.
    pub plan_clearance: f64,
    pub max_retries: usize,
    /// Seed of the class-embedding table; shared by every world.
    pub embedding_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_rooms: 3,
            n_classes: 8,
            feat_dim: 16,
            room_min: 6.0,
            room_max: 10.0,
            objects_per_room: 2,
            object_radius_min: 0.3,
            object_radius_max: 0.5,
            door_width: 1.6,
            cell: 0.25,
            max_range: 20.0,
            agent_radius: 0.2,
            plan_clearance: 0.45,
            max_retries: 200,
            embedding_seed: 0,
        }
    }
}

/// Gap in a wall shared by two rooms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Door {
    /// Wall is the line `x = coord` when vertical, `y = coord` otherwise.
    pub vertical: bool,
    pub coord: f64,
    pub lo: f64,
    pub hi: f64,
    pub rooms: (usize, usize),
}

impl Door {
    pub fn center(&self) -> (f64, f64) {
        let m = 0.5 * (self.lo + self.hi);
        if self.vertical {
            (self.coord, m)
        } else {
            (m, self.coord)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub class_id: usize,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub room: usize,
}

/// Occupancy and clearance raster over the world's bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub origin: (f64, f64),
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    /// Distance from each cell centre to the nearest wall or object surface;
    /// zero outside every room.
    pub clearance: Vec<f64>,
    /// `clearance >= agent_radius`.
    pub occupancy_free: Vec<bool>,
}

impl Grid {
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + (ix as f64 + 0.5) * self.cell,
            self.origin.1 + (iy as f64 + 0.5) * self.cell,
        )
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin.0) / self.cell).floor();
        let fy = ((y - self.origin.1) / self.cell).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct WorldData {
    seed: u64,
    config: WorldConfig,
    rooms: Vec<Rect>,
    doors: Vec<Door>,
    objects: Vec<Object>,
    class_embeddings: Vec<Vec<f64>>,
}

/// Immutable multi-room world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "WorldData", into = "WorldData")]
pub struct World {
    pub seed: u64,
    pub config: WorldConfig,
    pub rooms: Vec<Rect>,
    pub doors: Vec<Door>,
    pub objects: Vec<Object>,
    /// `n_classes × feat_dim`, unit-norm rows.
    pub class_embeddings: Vec<Vec<f64>>,
    walls: Vec<Segment>,
    grid: Grid,
}

impl From<WorldData> for World {
    fn from(d: WorldData) -> Self {
        World::assemble(d.seed, d.config, d.rooms, d.doors, d.objects, d.class_embeddings)
    }
}

impl From<World> for WorldData {
    fn from(w: World) -> Self {
        WorldData {
            seed: w.seed,
            config: w.config,
            rooms: w.rooms,
            doors: w.doors,
            objects: w.objects,
            class_embeddings: w.class_embeddings,
        }
    }
}

impl World {
    /// Builds a world from explicit geometry; embeddings follow `config`.
    pub fn from_parts(
        seed: u64,
        config: WorldConfig,
        rooms: Vec<Rect>,
        doors: Vec<Door>,
        objects: Vec<Object>,
    ) -> Self {
        let e = class_embeddings(config.n_classes, config.feat_dim, config.embedding_seed);
        World::assemble(seed, config, rooms, doors, objects, e)
    }

    fn assemble(
        seed: u64,
        config: WorldConfig,
        rooms: Vec<Rect>,
        doors: Vec<Door>,
        objects: Vec<Object>,
        class_embeddings: Vec<Vec<f64>>,
    ) -> Self {
        let walls = build_walls(&rooms, &doors);
        let mut w = World {
            seed,
            config,
            rooms,
            doors,
            objects,
            class_embeddings,
            walls,
            grid: Grid {
                origin: (0.0, 0.0),
                cell: 1.0,
                nx: 0,
                ny: 0,
                clearance: Vec::new(),
                occupancy_free: Vec::new(),
            },
        };
        w.grid = w.rasterize();
        w
    }

    pub fn walls(&self) -> &[Segment] {
        &self.walls
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn inside(&self, x: f64, y: f64) -> bool {
        self.rooms.iter().any(|r| r.contains(x, y))
    }

    /// Room whose interior contains the point.
    pub fn room_of(&self, x: f64, y: f64) -> Option<usize> {
        self.rooms.iter().position(|r| r.contains_strict(x, y))
    }

    /// Distance to the nearest wall or object surface (0 outside the rooms).
    pub fn clearance(&self, x: f64, y: f64) -> f64 {
        if !self.inside(x, y) {
            return 0.0;
        }
        let mut c = f64::INFINITY;
        for w in &self.walls {
            c = c.min(w.dist_to((x, y)));
        }
        for o in &self.objects {
            c = c.min(((x - o.x).powi(2) + (y - o.y).powi(2)).sqrt() - o.radius);
        }
        c.max(0.0)
    }

    /// Whether an agent disc centred at the point fits.
    pub fn is_free(&self, x: f64, y: f64) -> bool {
        self.clearance(x, y) >= self.config.agent_radius
    }

    pub fn bounds(&self) -> Rect {
        let mut b = self.rooms[0];
        for r in &self.rooms[1..] {
            b.x0 = b.x0.min(r.x0);
            b.y0 = b.y0.min(r.y0);
            b.x1 = b.x1.max(r.x1);
            b.y1 = b.y1.max(r.y1);
        }
        b
    }

    fn rasterize(&self) -> Grid {
        let b = self.bounds();
        let cell = self.config.cell;
        let nx = (b.width() / cell).ceil() as usize;
        let ny = (b.height() / cell).ceil() as usize;
        let mut grid = Grid {
            origin: (b.x0, b.y0),
            cell,
            nx,
            ny,
            clearance: vec![0.0; nx * ny],
            occupancy_free: vec![false; nx * ny],
        };
        for iy in 0..ny {
            for ix in 0..nx {
                let (x, y) = grid.center(ix, iy);
                let c = self.clearance(x, y);
                let i = grid.index(ix, iy);
                grid.clearance[i] = c;
                grid.occupancy_free[i] = c >= self.config.agent_radius;
            }
        }
        grid
    }

    /// Number of occupancy-free connected components (8-connectivity) that
    /// contain at least one room's free cells, and whether every room has any.
    fn rooms_connected(&self) -> bool {
        let g = &self.grid;
        let mut label = vec![usize::MAX; g.nx * g.ny];
        let mut next = 0;
        for start in 0..label.len() {
            if !g.occupancy_free[start] || label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(i) = stack.pop() {
                let (ix, iy) = ((i % g.nx) as isize, (i / g.nx) as isize);
                for (dx, dy) in NEIGHBORS_8 {
                    let (jx, jy) = (ix + dx, iy + dy);
                    if jx < 0 || jy < 0 || jx >= g.nx as isize || jy >= g.ny as isize {
                        continue;
                    }
                    let j = g.index(jx as usize, jy as usize);
                    if g.occupancy_free[j] && label[j] == usize::MAX {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
            next += 1;
        }
        let mut room_label = None;
        for r in &self.rooms {
            let mut found = None;
            for (i, &l) in label.iter().enumerate() {
                if l == usize::MAX {
                    continue;
                }
                let (x, y) = g.center(i % g.nx, i / g.nx);
                if r.contains_strict(x, y) {
                    found = Some(l);
                    break;
                }
            }
            match (found, room_label) {
                (None, _) => return false,
                (Some(l), None) => room_label = Some(l),
                (Some(l), Some(k)) if l != k => return false,
                _ => {}
            }
        }
        true
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), SimError> {
        for (i, a) in self.rooms.iter().enumerate() {
            for b in &self.rooms[i + 1..] {
                if a.interiors_overlap(b) {
                    return Err(SimError::InvalidWorld("rooms overlap".into()));
                }
            }
        }
        if !self.rooms_connected() {
            return Err(SimError::InvalidWorld("rooms are not connected".into()));
        }
        let e = &self.class_embeddings;
        for (i, row) in e.iter().enumerate() {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(SimError::InvalidWorld(format!("embedding {i} is not unit norm")));
            }
            for other in &e[i + 1..] {
                if row == other {
                    return Err(SimError::InvalidWorld("duplicate class embeddings".into()));
                }
            }
        }
        Ok(())
    }
}

pub(crate) const NEIGHBORS_8: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Splits every room side around the door gaps lying on it.
fn build_walls(rooms: &[Rect], doors: &[Door]) -> Vec<Segment> {
    let mut walls = Vec::new();
    for r in rooms {
        // (vertical, coord, lo, hi)
        let sides = [
            (true, r.x0, r.y0, r.y1),
            (true, r.x1, r.y0, r.y1),
            (false, r.y0, r.x0, r.x1),
            (false, r.y1, r.x0, r.x1),
        ];
        for (vertical, coord, lo, hi) in sides {
            let mut gaps: Vec<(f64, f64)> = doors
                .iter()
                .filter(|d| d.vertical == vertical && (d.coord - coord).abs() < 1e-9)
                .map(|d| (d.lo.max(lo), d.hi.min(hi)))
                .filter(|(a, b)| b > a)
                .collect();
            gaps.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut cur = lo;
            let mut pieces = Vec::new();
            for (a, b) in gaps {
                if a > cur {
                    pieces.push((cur, a));
                }
                cur = cur.max(b);
            }
            if hi > cur {
                pieces.push((cur, hi));
            }
            for (a, b) in pieces {
                walls.push(if vertical {
                    Segment { a: (coord, a), b: (coord, b) }
                } else {
                    Segment { a: (a, coord), b: (b, coord) }
                });
            }
        }
    }
    walls
}

/// Fixed per-class feature vectors: unit norm, pairwise distinct.
pub fn class_embeddings(n_classes: usize, feat_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1a5);
    loop {
        let rows: Vec<Vec<f64>> = (0..n_classes)
            .map(|_| {
                let v: Vec<f64> = (0..feat_dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let distinct = rows.iter().enumerate().all(|(i, a)| {
            rows[i + 1..].iter().all(|b| {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                d2 > 0.25
            })
        });
        if distinct {
            return rows;
        }
    }
}

fn quantize(v: f64, q: f64) -> f64 {
    (v / q).round() * q
}

/// Procedurally generates a connected multi-room world.
pub fn generate_world(seed: u64, cfg: &WorldConfig) -> Result<World, SimError> {
    if cfg.n_rooms == 0 {
        return Err(SimError::Config("n_rooms must be at least 1".into()));
    }
    if cfg.n_classes < 2 {
        return Err(SimError::Config("n_classes must be at least 2".into()));
    }
    if cfg.objects_per_room == 0 {
        return Err(SimError::Config("objects_per_room must be at least 1".into()));
    }
    if !(cfg.room_min > 0.0 && cfg.room_max >= cfg.room_min) {
        return Err(SimError::Config("room size range is empty".into()));
    }
    let embeddings = class_embeddings(cfg.n_classes, cfg.feat_dim, cfg.embedding_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.max_retries {
        let Some((rooms, doors)) = layout(&mut rng, cfg) else {
            continue;
        };
        let Some(objects) = place_objects(&mut rng, cfg, &rooms, &doors) else {
            continue;
        };
        let world = World::assemble(seed, cfg.clone(), rooms, doors, objects, embeddings.clone());
        if world.validate().is_ok() {
            return Ok(world);
        }
    }
    Err(SimError::GenerationFailed {
        seed,
        attempts: cfg.max_retries,
    })
}

fn layout(rng: &mut ChaCha8Rng, cfg: &WorldConfig) -> Option<(Vec<Rect>, Vec<Door>)> {
    const Q: f64 = 0.5;
    let margin = 0.5;
    let min_overlap = cfg.door_width + 2.0 * margin;
    let size = |rng: &mut ChaCha8Rng| quantize(rng.gen_range(cfg.room_min..=cfg.room_max), Q);
    let mut rooms = vec![Rect {
        x0: 0.0,
        y0: 0.0,
        x1: size(rng),
        y1: size(rng),
    }];
    let mut doors = Vec::new();
    for _ in 1..cfg.n_rooms {
        let mut placed = false;
        for _ in 0..cfg.max_retries {
            let pi = rng.gen_range(0..rooms.len());
            let p = rooms[pi];
            let (w, h) = (size(rng), size(rng));
            let side = rng.gen_range(0..4);
            let r = match side {
                0 | 1 => {
                    // east / west: shares a vertical wall
                    let lo = p.y0 - h + min_overlap;
                    let hi = p.y1 - min_overlap;
                    if hi < lo {
                        continue;
                    }
                    let y0 = quantize(rng.gen_range(lo..=hi), Q);
                    let x0 = if side == 0 { p.x1 } else { p.x0 - w };
                    Rect { x0, y0, x1: x0 + w, y1: y0 + h }
                }
                _ => {
                    let lo = p.x0 - w + min_overlap;
                    let hi = p.x1 - min_overlap;
                    if hi < lo {
                        continue;
                    }
                    let x0 = quantize(rng.gen_range(lo..=hi), Q);
                    let y0 = if side == 2 { p.y1 } else { p.y0 - h };
                    Rect { x0, y0, x1: x0 + w, y1: y0 + h }
                }
            };
            if rooms.iter().any(|o| o.interiors_overlap(&r)) {
                continue;
            }
            let (vertical, coord, olo, ohi) = match side {
                0 => (true, p.x1, p.y0.max(r.y0), p.y1.min(r.y1)),
                1 => (true, p.x0, p.y0.max(r.y0), p.y1.min(r.y1)),
                2 => (false, p.y1, p.x0.max(r.x0), p.x1.min(r.x1)),
                _ => (false, p.y0, p.x0.max(r.x0), p.x1.min(r.x1)),
            };
            let half = 0.5 * cfg.door_width;
            let (clo, chi) = (olo + margin + half, ohi - margin - half);
            if chi < clo {
                continue;
            }
            let c = quantize(rng.gen_range(clo..=chi), 0.25).clamp(clo, chi);
            rooms.push(r);
            doors.push(Door {
                vertical,
                coord,
                lo: c - half,
                hi: c + half,
                rooms: (pi, rooms.len() - 1),
            });
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
    }
    Some((rooms, doors))
}

fn place_objects(
    rng: &mut ChaCha8Rng,
    cfg: &WorldConfig,
    rooms: &[Rect],
    doors: &[Door],
) -> Option<Vec<Object>> {
    let mut pool: Vec<usize> = Vec::new();
    let mut objects: Vec<Object> = Vec::new();
    for (ri, room) in rooms.iter().enumerate() {
        let mut used_here = Vec::new();
        for _ in 0..cfg.objects_per_room {
            if pool.iter().all(|c| used_here.contains(c)) {
                pool = (1..cfg.n_classes).collect();
                pool.shuffle(rng);
            }
            let pos = pool.iter().position(|c| !used_here.contains(c))?;
            let class_id = pool.remove(pos);
            used_here.push(class_id);
            let radius = rng.gen_range(cfg.object_radius_min..=cfg.object_radius_max);
            let wall_gap = radius + 0.9;
            let mut ok = None;
            for _ in 0..200 {
                if room.width() <= 2.0 * wall_gap || room.height() <= 2.0 * wall_gap {
                    return None;
                }
                let x = rng.gen_range(room.x0 + wall_gap..room.x1 - wall_gap);
                let y = rng.gen_range(room.y0 + wall_gap..room.y1 - wall_gap);
                let clear_doors = doors.iter().all(|d| {
                    let c = d.center();
                    ((x - c.0).powi(2) + (y - c.1).powi(2)).sqrt() > radius + 2.0
                });
                let clear_objects = objects.iter().all(|o| {
                    ((x - o.x).powi(2) + (y - o.y).powi(2)).sqrt() > radius + o.radius + 1.2
                });
                if clear_doors && clear_objects {
                    ok = Some((x, y));
                    break;
                }
            }
            let (x, y) = ok?;
            objects.push(Object {
                class_id,
                x,
                y,
                radius,
                room: ri,
            });
        }
    }
    Some(objects)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_room_world_is_valid_and_deterministic() {
        let cfg = WorldConfig {
            n_rooms: 4,
            n_classes: 8,
            ..Default::default()
        };
        let a = generate_world(7, &cfg).unwrap();
        a.validate().unwrap();
        assert_eq!(a.rooms.len(), 4);
        assert_eq!(a.doors.len(), 3);
        let b = generate_world(7, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn single_room_world_has_no_doors() {
        let cfg = WorldConfig {
            n_rooms: 1,
            ..Default::default()
        };
        let w = generate_world(7, &cfg).unwrap();
        assert!(w.doors.is_empty());
        w.validate().unwrap();
    }

    #[test]
    fn impossible_layout_is_an_error() {
        let cfg = WorldConfig {
            room_min: 2.0,
            room_max: 2.0,
            max_retries: 5,
            ..Default::default()
        };
        assert!(matches!(
            generate_world(1, &cfg),
            Err(SimError::GenerationFailed { .. })
        ));
    }

    #[test]
    fn json_round_trip_rebuilds_grid() {
        let w = generate_world(3, &WorldConfig::default()).unwrap();
        let s = serde_json::to_string(&w).unwrap();
        let back: World = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn door_removal_disconnects() {
        let w = generate_world(5, &WorldConfig { n_rooms: 2, ..Default::default() }).unwrap();
        let closed = World::assemble(
            w.seed,
            w.config.clone(),
            w.rooms.clone(),
            Vec::new(),
            w.objects.clone(),
            w.class_embeddings.clone(),
        );
        assert!(closed.validate().is_err());
    }
}
