//! Seeded procedural generation of multi-room scenes.
//!
//! Rooms are axis-aligned rectangles separated by one-cell walls. Each new
//! room is attached to an existing room across a wall segment and the two are
//! joined by a doorway cell inside that wall, so the room graph is a tree by
//! construction.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{Cardinal, Cell, Pose, Rect};
use crate::lexicon::OBJECT_NOUNS;

const MAX_LAYOUT_ATTEMPTS: usize = 20_000;
const MAX_PLACEMENT_ATTEMPTS: usize = 500;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Each new room attaches to a uniformly chosen existing room.
    #[default]
    Tree,
    /// Every room attaches to room 0.
    Hub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub room_count: u32,
    pub room_width: i32,
    pub room_height: i32,
    pub objects_per_room: u32,
    pub global_grid: (i32, i32),
    pub seed: u64,
    #[serde(default)]
    pub topology: Topology,
    /// Fraction of objects generated without a facing.
    #[serde(default)]
    pub facingless_fraction: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            room_count: 3,
            room_width: 6,
            room_height: 6,
            objects_per_room: 4,
            global_grid: (20, 20),
            seed: 0,
            topology: Topology::Tree,
            facingless_fraction: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The four-room variant: a main room connected to all others.
    pub fn four_room_hub() -> Self {
        SceneConfig { room_count: 4, topology: Topology::Hub, ..SceneConfig::default() }
    }

    pub fn check(&self) -> Result<(), SceneError> {
        if self.room_count == 0 {
            return Err(SceneError::Infeasible("room_count must be at least 1".into()));
        }
        if self.room_width <= 0 || self.room_height <= 0 || self.objects_per_room == 0 {
            return Err(SceneError::Infeasible("room size and objects_per_room must be positive".into()));
        }
        if self.global_grid.0 <= 0 || self.global_grid.1 <= 0 {
            return Err(SceneError::Infeasible("global grid must be positive".into()));
        }
        let area = (self.room_width * self.room_height) as i64;
        if area <= self.objects_per_room as i64 + 2 {
            return Err(SceneError::Infeasible(format!(
                "{}x{} room cannot hold {} objects plus agent and doorways",
                self.room_width, self.room_height, self.objects_per_room
            )));
        }
        let total = self.room_count as usize * self.objects_per_room as usize;
        if total > OBJECT_NOUNS.len() {
            return Err(SceneError::Infeasible(format!(
                "{total} objects exceed the {}-noun lexicon",
                OBJECT_NOUNS.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.facingless_fraction) {
            return Err(SceneError::Infeasible("facingless_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("configuration infeasible: {0}")]
    Infeasible(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Room {
    pub id: u32,
    pub origin: Cell,
    pub width: i32,
    pub height: i32,
}

impl Room {
    pub fn rect(&self) -> Rect {
        Rect { x: self.origin.x, y: self.origin.y, w: self.width, h: self.height }
    }

    pub fn contains(&self, c: Cell) -> bool {
        self.rect().contains(c)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> {
        let r = self.rect();
        (r.y..r.y + r.h).flat_map(move |y| (r.x..r.x + r.w).map(move |x| Cell::new(x, y)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Doorway {
    pub id: u32,
    pub cell: Cell,
    pub connects: (u32, u32),
}

impl Doorway {
    pub fn touches(&self, room: u32) -> bool {
        self.connects.0 == room || self.connects.1 == room
    }

    pub fn other(&self, room: u32) -> Option<u32> {
        if self.connects.0 == room {
            Some(self.connects.1)
        } else if self.connects.1 == room {
            Some(self.connects.0)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub position: Cell,
    pub facing: Option<Cardinal>,
    pub room_id: u32,
}

/// Rooms and doorways only: the geometry needed to evaluate visibility.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub grid: (i32, i32),
    pub rooms: Vec<Room>,
    pub doorways: Vec<Doorway>,
}

impl Layout {
    pub fn room_at(&self, c: Cell) -> Option<u32> {
        self.rooms.iter().find(|r| r.contains(c)).map(|r| r.id)
    }

    pub fn doorway_at(&self, c: Cell) -> Option<&Doorway> {
        self.doorways.iter().find(|d| d.cell == c)
    }

    pub fn room(&self, id: u32) -> Option<&Room> {
        self.rooms.iter().find(|r| r.id == id)
    }

    pub fn doorway(&self, id: u32) -> Option<&Doorway> {
        self.doorways.iter().find(|d| d.id == id)
    }

    /// Rooms whose contents are visible from `c`: the containing room, or
    /// both rooms of a doorway the agent stands in.
    pub fn rooms_visible_from(&self, c: Cell) -> Vec<u32> {
        if let Some(r) = self.room_at(c) {
            return alloc::vec![r];
        }
        match self.doorway_at(c) {
            Some(d) => alloc::vec![d.connects.0, d.connects.1],
            None => Vec::new(),
        }
    }

    pub fn is_legal(&self, c: Cell) -> bool {
        self.room_at(c).is_some() || self.doorway_at(c).is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub config: SceneConfig,
    pub rooms: Vec<Room>,
    pub doorways: Vec<Doorway>,
    pub objects: Vec<SceneObject>,
    pub spawn: Pose,
    pub object_names: Vec<String>,
    pub room_count_public: u32,
}

impl Scene {
    pub fn layout(&self) -> Layout {
        Layout { grid: self.config.global_grid, rooms: self.rooms.clone(), doorways: self.doorways.clone() }
    }

    pub fn room_at(&self, c: Cell) -> Option<u32> {
        self.rooms.iter().find(|r| r.contains(c)).map(|r| r.id)
    }

    pub fn room(&self, id: u32) -> Option<&Room> {
        self.rooms.iter().find(|r| r.id == id)
    }

    pub fn doorway_at(&self, c: Cell) -> Option<&Doorway> {
        self.doorways.iter().find(|d| d.cell == c)
    }

    pub fn doorway(&self, id: u32) -> Option<&Doorway> {
        self.doorways.iter().find(|d| d.id == id)
    }

    pub fn object(&self, name: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn object_at(&self, c: Cell) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.position == c)
    }

    pub fn rooms_visible_from(&self, c: Cell) -> Vec<u32> {
        if let Some(r) = self.room_at(c) {
            return alloc::vec![r];
        }
        match self.doorway_at(c) {
            Some(d) => alloc::vec![d.connects.0, d.connects.1],
            None => Vec::new(),
        }
    }

    /// Inside a room or on a doorway.
    pub fn is_legal(&self, c: Cell) -> bool {
        self.room_at(c).is_some() || self.doorway_at(c).is_some()
    }

    /// Legal and not occupied by an object.
    pub fn is_free(&self, c: Cell) -> bool {
        self.is_legal(c) && self.object_at(c).is_none()
    }

    pub fn grid_cells(&self) -> usize {
        (self.config.global_grid.0 * self.config.global_grid.1) as usize
    }
}

/// Generate a scene. Identical configs (seed included) give identical scenes.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene, SceneError> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let (rooms, doorways) = place_rooms(config, &mut rng)?;

    let mut names: Vec<&str> = OBJECT_NOUNS.to_vec();
    names.shuffle(&mut rng);
    let mut names = names.into_iter();

    let mut objects = Vec::new();
    for room in &rooms {
        let cells = place_objects_in_room(room, config.objects_per_room as usize, &mut rng)?;
        for cell in cells {
            let facing = if config.facingless_fraction > 0.0 && rng.random_bool(config.facingless_fraction) {
                None
            } else {
                Some(Cardinal::ALL[rng.random_range(0..4)])
            };
            objects.push(SceneObject {
                name: names.next().expect("lexicon size checked").to_string(),
                position: cell,
                facing,
                room_id: room.id,
            });
        }
    }

    let spawn_room = &rooms[rng.random_range(0..rooms.len())];
    let occupied: BTreeSet<Cell> = objects.iter().map(|o| o.position).collect();
    let free: Vec<Cell> = spawn_room.cells().filter(|c| !occupied.contains(c)).collect();
    let position = free[rng.random_range(0..free.len())];
    let heading = Cardinal::ALL[rng.random_range(0..4)];

    let object_names = objects.iter().map(|o| o.name.clone()).collect();
    let scene = Scene {
        config: config.clone(),
        room_count_public: rooms.len() as u32,
        rooms,
        doorways,
        objects,
        spawn: Pose::new(position, heading),
        object_names,
    };
    debug_assert!(validate_scene(&scene).is_empty(), "{:?}", validate_scene(&scene));
    Ok(scene)
}

fn place_rooms(config: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<Room>, Vec<Doorway>), SceneError> {
    let (gw, gh) = config.global_grid;
    let (w, h) = (config.room_width, config.room_height);
    if w > gw || h > gh {
        return Err(SceneError::Infeasible("room larger than global grid".into()));
    }
    'layout: for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let first = Room {
            id: 0,
            origin: Cell::new(rng.random_range(0..=gw - w), rng.random_range(0..=gh - h)),
            width: w,
            height: h,
        };
        let mut rooms = alloc::vec![first];
        let mut doorways = Vec::new();
        while rooms.len() < config.room_count as usize {
            let mut attached = false;
            for _ in 0..64 {
                let parent = match config.topology {
                    Topology::Hub => 0,
                    Topology::Tree => rng.random_range(0..rooms.len()),
                };
                let side = Cardinal::ALL[rng.random_range(0..4)];
                if let Some((room, door_cell)) = attach(&rooms[parent], side, w, h, rng) {
                    let grown = room.rect().grow(1);
                    let inside =
                        room.origin.x >= 0 && room.origin.y >= 0 && room.origin.x + w <= gw && room.origin.y + h <= gh;
                    if inside && rooms.iter().all(|r| !r.rect().intersects(&grown)) {
                        let id = rooms.len() as u32;
                        doorways.push(Doorway {
                            id: doorways.len() as u32,
                            cell: door_cell,
                            connects: (rooms[parent].id, id),
                        });
                        rooms.push(Room { id, ..room });
                        attached = true;
                        break;
                    }
                }
            }
            if !attached {
                continue 'layout;
            }
        }
        return Ok((rooms, doorways));
    }
    Err(SceneError::Infeasible(format!("could not pack {} rooms of {}x{} into {}x{}", config.room_count, w, h, gw, gh)))
}

/// Candidate room on `side` of `parent` across a one-cell wall, sharing at
/// least two cells of wall (or the whole wall when shorter), plus a doorway
/// cell drawn uniformly from the shared wall segment.
fn attach(parent: &Room, side: Cardinal, w: i32, h: i32, rng: &mut ChaCha8Rng) -> Option<(Room, Cell)> {
    let p = parent.rect();
    let vertical_wall = matches!(side, Cardinal::E | Cardinal::W);
    let (p_lo, p_len, n_len) = if vertical_wall { (p.y, p.h, h) } else { (p.x, p.w, w) };
    let min_overlap = 2.min(p_len).min(n_len);
    let lo = p_lo - n_len + min_overlap;
    let hi = p_lo + p_len - min_overlap;
    if lo > hi {
        return None;
    }
    let along = rng.random_range(lo..=hi);
    let origin = match side {
        Cardinal::E => Cell::new(p.x + p.w + 1, along),
        Cardinal::W => Cell::new(p.x - 1 - w, along),
        Cardinal::N => Cell::new(along, p.y + p.h + 1),
        Cardinal::S => Cell::new(along, p.y - 1 - h),
    };
    let overlap_lo = p_lo.max(along);
    let overlap_hi = (p_lo + p_len).min(along + n_len);
    let t = rng.random_range(overlap_lo..overlap_hi);
    let door = match side {
        Cardinal::E => Cell::new(p.x + p.w, t),
        Cardinal::W => Cell::new(p.x - 1, t),
        Cardinal::N => Cell::new(t, p.y + p.h),
        Cardinal::S => Cell::new(t, p.y - 1),
    };
    Some((Room { id: u32::MAX, origin, width: w, height: h }, door))
}

/// Distinct object cells inside `room`, each keeping at least one free
/// 4-neighbour inside the room so `Goto` can always land next to it.
fn place_objects_in_room(room: &Room, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Cell>, SceneError> {
    let all: Vec<Cell> = room.cells().collect();
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let mut cells = all.clone();
        cells.shuffle(rng);
        cells.truncate(count);
        let set: BTreeSet<Cell> = cells.iter().copied().collect();
        let reachable = cells.iter().all(|c| c.neighbors4().iter().any(|n| room.contains(*n) && !set.contains(n)));
        if reachable {
            return Ok(cells);
        }
    }
    Err(SceneError::Infeasible(format!("cannot place {count} reachable objects in room {}", room.id)))
}

/// One broken invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: String,
    pub entity: String,
    pub detail: String,
}

fn violation(invariant: &str, entity: impl Into<String>, detail: impl Into<String>) -> Violation {
    Violation { invariant: invariant.to_string(), entity: entity.into(), detail: detail.into() }
}

/// Every violated scene invariant. Empty iff the scene is valid.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    let (gw, gh) = scene.config.global_grid;
    let grid = Rect { x: 0, y: 0, w: gw, h: gh };

    for (i, r) in scene.rooms.iter().enumerate() {
        let rect = r.rect();
        if rect.w <= 0 || rect.h <= 0 || !(rect.x >= 0 && rect.y >= 0 && rect.x + rect.w <= gw && rect.y + rect.h <= gh)
        {
            out.push(violation("room-in-grid", format!("room {}", r.id), "room exceeds the global grid"));
        }
        for other in &scene.rooms[i + 1..] {
            if rect.intersects(&other.rect()) {
                out.push(violation("rooms-disjoint", format!("room {}", r.id), format!("overlaps room {}", other.id)));
            }
        }
    }
    let ids: BTreeSet<u32> = scene.rooms.iter().map(|r| r.id).collect();
    if ids.len() != scene.rooms.len() {
        out.push(violation("room-ids-unique", "rooms", "duplicate room id"));
    }
    if scene.room_count_public as usize != scene.rooms.len() {
        out.push(violation("room-count-public", "scene", "public room count differs from rooms"));
    }

    for d in &scene.doorways {
        let ent = format!("doorway {}", d.id);
        let (a, b) = d.connects;
        match (scene.room(a), scene.room(b)) {
            (Some(ra), Some(rb)) if a != b => {
                let on_boundary = !ra.contains(d.cell)
                    && !rb.contains(d.cell)
                    && grid.contains(d.cell)
                    && Cardinal::ALL
                        .iter()
                        .any(|&dir| ra.contains(d.cell.step(dir)) && rb.contains(d.cell.step(dir.opposite())));
                if !on_boundary {
                    out.push(violation(
                        "doorway-on-shared-wall",
                        ent,
                        format!("{} is not between rooms {a} and {b}", d.cell),
                    ));
                }
            }
            _ => out.push(violation("doorway-rooms-exist", ent, format!("connects unknown rooms ({a}, {b})"))),
        }
    }

    // Tree topology via union-find over doorway edges.
    let n = scene.rooms.len();
    let index = |id: u32| scene.rooms.iter().position(|r| r.id == id);
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for d in &scene.doorways {
        if let (Some(a), Some(b)) = (index(d.connects.0), index(d.connects.1)) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                out.push(violation(
                    "tree-topology",
                    format!("doorway {}", d.id),
                    "doorway closes a cycle in the room graph",
                ));
            } else {
                parent[ra] = rb;
            }
        }
    }
    if n > 0 {
        let root = find(&mut parent, 0);
        if (1..n).any(|i| find(&mut parent, i) != root) {
            out.push(violation("tree-topology", "rooms", "room graph is not connected"));
        }
    }

    let mut seen_names = BTreeSet::new();
    let mut seen_cells = BTreeSet::new();
    for o in &scene.objects {
        let ent = format!("object {}", o.name);
        if !seen_names.insert(o.name.as_str()) {
            out.push(violation("names-unique", ent.clone(), "duplicate object name"));
        }
        if !seen_cells.insert(o.position) {
            out.push(violation(
                "all-different",
                ent.clone(),
                format!("shares cell {} with another object", o.position),
            ));
        }
        match scene.room(o.room_id) {
            Some(r) if r.contains(o.position) => {}
            _ => out.push(violation(
                "object-in-room",
                ent.clone(),
                format!("{} is outside room {}", o.position, o.room_id),
            )),
        }
        if scene.doorway_at(o.position).is_some() {
            out.push(violation("object-not-on-doorway", ent, "object sits on a doorway"));
        }
    }
    let names: Vec<&str> = scene.objects.iter().map(|o| o.name.as_str()).collect();
    let public: Vec<&str> = scene.object_names.iter().map(|s| s.as_str()).collect();
    if names != public {
        out.push(violation("public-names", "scene", "object_names differ from object list"));
    }

    if scene.room_at(scene.spawn.position).is_none() {
        out.push(violation("spawn-in-room", "spawn", format!("{} is not inside a room", scene.spawn.position)));
    }
    if scene.object_at(scene.spawn.position).is_some() {
        out.push(violation("spawn-free", "spawn", "spawn coincides with an object"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scene_counts() {
        let s = generate_scene(&SceneConfig::default().with_seed(7)).unwrap();
        assert_eq!(s.rooms.len(), 3);
        assert_eq!(s.objects.len(), 12);
        assert_eq!(s.doorways.len(), 2);
        assert!(validate_scene(&s).is_empty());
    }

    #[test]
    fn deterministic() {
        let c = SceneConfig::default().with_seed(7);
        assert_eq!(generate_scene(&c).unwrap(), generate_scene(&c).unwrap());
        assert_ne!(generate_scene(&c).unwrap(), generate_scene(&c.clone().with_seed(8)).unwrap());
    }

    #[test]
    fn hub_is_a_star() {
        for seed in 0..20 {
            let s = generate_scene(&SceneConfig::four_room_hub().with_seed(seed)).unwrap();
            assert_eq!(s.doorways.len(), 3);
            assert!(s.doorways.iter().all(|d| d.touches(0)));
            assert!(validate_scene(&s).is_empty());
        }
    }

    #[test]
    fn infeasible_configs() {
        let crowded = SceneConfig { objects_per_room: 34, ..SceneConfig::default() };
        assert!(matches!(generate_scene(&crowded), Err(SceneError::Infeasible(_))));
        let too_many = SceneConfig { room_count: 9, ..SceneConfig::default() };
        assert!(matches!(generate_scene(&too_many), Err(SceneError::Infeasible(_))));
        let zero = SceneConfig { room_count: 0, ..SceneConfig::default() };
        assert!(generate_scene(&zero).is_err());
    }

    #[test]
    fn duplicate_cell_is_one_violation() {
        let mut s = generate_scene(&SceneConfig::default().with_seed(3)).unwrap();
        let p = s.objects[0].position;
        s.objects[1].position = p;
        s.objects[1].room_id = s.objects[0].room_id;
        let v = validate_scene(&s);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].invariant, "all-different");
    }

    #[test]
    fn cycle_is_one_violation() {
        // Three mutually adjacent rooms: two 6x6 rooms side by side under a 13x6 room.
        let mut s = generate_scene(&SceneConfig::default().with_seed(1)).unwrap();
        s.rooms = alloc::vec![
            Room { id: 0, origin: Cell::new(0, 0), width: 6, height: 6 },
            Room { id: 1, origin: Cell::new(7, 0), width: 6, height: 6 },
            Room { id: 2, origin: Cell::new(0, 7), width: 13, height: 6 },
        ];
        s.doorways = alloc::vec![
            Doorway { id: 0, cell: Cell::new(6, 2), connects: (0, 1) },
            Doorway { id: 1, cell: Cell::new(2, 6), connects: (0, 2) },
            Doorway { id: 2, cell: Cell::new(9, 6), connects: (1, 2) },
        ];
        let names = ["a", "b", "c"];
        s.objects = names
            .iter()
            .enumerate()
            .map(|(i, n)| SceneObject {
                name: n.to_string(),
                position: Cell::new(1 + 7 * (i as i32 % 2), 1 + 7 * (i as i32 / 2)),
                facing: Some(Cardinal::N),
                room_id: i as u32,
            })
            .collect();
        s.object_names = names.iter().map(|n| n.to_string()).collect();
        s.spawn = Pose::new(Cell::new(3, 3), Cardinal::N);
        let v = validate_scene(&s);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].invariant, "tree-topology");
    }
}
