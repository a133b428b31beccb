//! Hard feasible-set beliefs over object positions.
//!
//! Each object has a domain of grid cells. Observations compile into unary
//! constraints (bins, room membership, negative information), objects share
//! an all-different constraint, and optional binary relative-direction
//! constraints link pairs. AC-3 propagates the binary part to a fixed point.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geom::{Cell, Pose, Rect};
use crate::scenegen::{Layout, Scene};
use crate::spatial::{self, AllocBin, DistBin, EgoBin, Sighting};

/// A set of cells of a `W x H` grid, stored as a bitset.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CellSet {
    w: i32,
    h: i32,
    bits: Vec<u64>,
}

impl CellSet {
    pub fn empty(w: i32, h: i32) -> CellSet {
        let n = (w * h) as usize;
        CellSet { w, h, bits: vec![0; n.div_ceil(64)] }
    }

    pub fn full(w: i32, h: i32) -> CellSet {
        let mut s = CellSet::empty(w, h);
        for i in 0..(w * h) as usize {
            s.bits[i / 64] |= 1 << (i % 64);
        }
        s
    }

    pub fn from_cells(w: i32, h: i32, cells: impl IntoIterator<Item = Cell>) -> CellSet {
        let mut s = CellSet::empty(w, h);
        for c in cells {
            s.insert(c);
        }
        s
    }

    fn index(&self, c: Cell) -> Option<usize> {
        (c.x >= 0 && c.y >= 0 && c.x < self.w && c.y < self.h).then(|| (c.y * self.w + c.x) as usize)
    }

    pub fn contains(&self, c: Cell) -> bool {
        self.index(c).is_some_and(|i| self.bits[i / 64] >> (i % 64) & 1 == 1)
    }

    pub fn insert(&mut self, c: Cell) {
        if let Some(i) = self.index(c) {
            self.bits[i / 64] |= 1 << (i % 64);
        }
    }

    pub fn remove(&mut self, c: Cell) -> bool {
        match self.index(c) {
            Some(i) if self.bits[i / 64] >> (i % 64) & 1 == 1 => {
                self.bits[i / 64] &= !(1 << (i % 64));
                true
            }
            _ => false,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// The only cell, if the set is a singleton.
    pub fn single(&self) -> Option<Cell> {
        if self.len() == 1 {
            self.iter().next()
        } else {
            None
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Cell> + '_ {
        let w = self.w;
        self.bits.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut word = word;
            core::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let b = word.trailing_zeros() as usize;
                word &= word - 1;
                let i = (wi * 64 + b) as i32;
                Some(Cell::new(i % w, i / w))
            })
        })
    }

    /// Keep only cells satisfying `f`. Returns whether anything was removed.
    pub fn retain(&mut self, mut f: impl FnMut(Cell) -> bool) -> bool {
        let drop: Vec<Cell> = self.iter().filter(|c| !f(*c)).collect();
        for c in &drop {
            self.remove(*c);
        }
        !drop.is_empty()
    }

    pub fn intersect(&mut self, o: &CellSet) {
        for (a, b) in self.bits.iter_mut().zip(&o.bits) {
            *a &= *b;
        }
    }

    pub fn is_subset(&self, o: &CellSet) -> bool {
        self.bits.iter().zip(&o.bits).all(|(a, b)| a & !b == 0)
    }
}

/// Row-run encoding of a cell set: `(y, x_start, run_length)` triples.
pub fn run_length_rows(s: &CellSet) -> Vec<(i32, i32, i32)> {
    let mut out: Vec<(i32, i32, i32)> = Vec::new();
    for c in s.iter() {
        match out.last_mut() {
            Some((y, x0, len)) if *y == c.y && *x0 + *len == c.x => *len += 1,
            _ => out.push((c.y, c.x, 1)),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Constraint {
    /// Object lies in the given egocentric bin from `pose`.
    UnaryEgoDir {
        object: String,
        pose: Pose,
        bin: EgoBin,
    },
    /// Object lies in the given distance bin from `pose`.
    UnaryDistBin {
        object: String,
        pose: Pose,
        bin: DistBin,
    },
    /// Object lies inside one of the rooms visible when it was sighted.
    UnaryRoomVisibility {
        object: String,
        rooms: Vec<Rect>,
    },
    /// Object was not sighted although these rooms were in view from `pose`.
    UnaryNotSeen {
        object: String,
        pose: Pose,
        rooms: Vec<Rect>,
    },
    /// Exact position (a `Query` reply, or a cell known to be free).
    UnaryAt {
        object: String,
        cell: Cell,
    },
    UnaryNotAt {
        object: String,
        cell: Cell,
    },
    /// `allocentric_bin(pos(a), pos(b)) == bin`.
    BinaryRelative {
        a: String,
        b: String,
        bin: AllocBin,
    },
    AllDifferent {
        objects: Vec<String>,
    },
}

impl Constraint {
    fn unary_target(&self) -> Option<&str> {
        match self {
            Constraint::UnaryEgoDir { object, .. }
            | Constraint::UnaryDistBin { object, .. }
            | Constraint::UnaryRoomVisibility { object, .. }
            | Constraint::UnaryNotSeen { object, .. }
            | Constraint::UnaryAt { object, .. }
            | Constraint::UnaryNotAt { object, .. } => Some(object),
            _ => None,
        }
    }

    /// Whether a cell satisfies a unary constraint. Non-unary constraints
    /// accept every cell.
    pub fn admits(&self, c: Cell) -> bool {
        match self {
            Constraint::UnaryEgoDir { pose, bin, .. } => {
                c != pose.position && spatial::egocentric_bin(*pose, c) == Ok(Some(*bin))
            }
            Constraint::UnaryDistBin { pose, bin, .. } => bin.contains_sq(pose.position.dist_sq(c)),
            Constraint::UnaryRoomVisibility { rooms, .. } => rooms.iter().any(|r| r.contains(c)),
            Constraint::UnaryNotSeen { pose, rooms, .. } => {
                !(rooms.iter().any(|r| r.contains(c)) && c != pose.position && spatial::in_fov(*pose, c))
            }
            Constraint::UnaryAt { cell, .. } => c == *cell,
            Constraint::UnaryNotAt { cell, .. } => c != *cell,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BeliefError {
    #[error("observation leaves no feasible cell for {0}")]
    InconsistentObservation(String),
    #[error("unknown object {0}")]
    UnknownObject(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ArcKind {
    NotEqual,
    /// Bin from the arc's source to its target.
    Relative(AllocBin),
}

/// Per-object feasible domains plus the constraints that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefState {
    grid: (i32, i32),
    names: Vec<String>,
    domains: Vec<CellSet>,
    constraints: Vec<Constraint>,
}

/// Serializable view of a belief: per-object row runs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub grid: (i32, i32),
    pub domains: BTreeMap<String, Vec<(i32, i32, i32)>>,
}

impl BeliefState {
    /// Uniform prior: every object may be on any cell of the grid.
    pub fn new(names: &[String], grid: (i32, i32)) -> BeliefState {
        BeliefState {
            grid,
            names: names.to_vec(),
            domains: names.iter().map(|_| CellSet::full(grid.0, grid.1)).collect(),
            constraints: vec![Constraint::AllDifferent { objects: names.to_vec() }],
        }
    }

    pub fn for_scene(scene: &Scene) -> BeliefState {
        BeliefState::new(&scene.object_names, scene.config.global_grid)
    }

    /// Initial domain size `M`.
    pub fn m(&self) -> usize {
        (self.grid.0 * self.grid.1) as usize
    }

    pub fn grid(&self) -> (i32, i32) {
        self.grid
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    fn idx(&self, name: &str) -> Result<usize, BeliefError> {
        self.names.iter().position(|n| n == name).ok_or_else(|| BeliefError::UnknownObject(name.to_string()))
    }

    pub fn domain(&self, name: &str) -> Option<&CellSet> {
        self.idx(name).ok().map(|i| &self.domains[i])
    }

    pub fn domains(&self) -> impl Iterator<Item = (&str, &CellSet)> {
        self.names.iter().map(|n| n.as_str()).zip(&self.domains)
    }

    pub fn is_resolved(&self, name: &str) -> bool {
        self.domain(name).is_some_and(|d| d.len() == 1)
    }

    /// Normalised information gain `1 - sum log2 max(1, C_i) / (N log2 M)`.
    pub fn information_gain(&self) -> f64 {
        information_gain(&self.domains.iter().map(|d| d.len()).collect::<Vec<_>>(), self.m())
    }

    /// Add constraints and propagate. The receiver is left untouched.
    pub fn with_constraints(&self, cs: impl IntoIterator<Item = Constraint>) -> Result<BeliefState, BeliefError> {
        let mut next = self.clone();
        for c in cs {
            if let Some(obj) = c.unary_target() {
                let i = next.idx(obj)?;
                next.domains[i].retain(|cell| c.admits(cell));
                if next.domains[i].is_empty() {
                    return Err(BeliefError::InconsistentObservation(obj.to_string()));
                }
            } else if let Constraint::BinaryRelative { a, b, .. } = &c {
                next.idx(a)?;
                next.idx(b)?;
            }
            next.constraints.push(c);
        }
        next.propagate()?;
        Ok(next)
    }

    /// Compile one observation made at `pose` and propagate.
    ///
    /// Sighted objects get ego-bin, distance-bin and room-visibility
    /// constraints; every other object is excluded from the in-view part of
    /// the visible rooms; no object can share the observer's cell.
    pub fn assert_observation(
        &self,
        layout: &Layout,
        pose: Pose,
        sightings: &[Sighting],
    ) -> Result<BeliefState, BeliefError> {
        let rooms: Vec<Rect> = layout
            .rooms_visible_from(pose.position)
            .iter()
            .filter_map(|id| layout.room(*id))
            .map(|r| r.rect())
            .collect();
        let mut cs = Vec::new();
        for name in &self.names {
            cs.push(Constraint::UnaryNotAt { object: name.clone(), cell: pose.position });
            match sightings.iter().find(|s| s.entity.object_name() == Some(name.as_str())) {
                Some(s) => {
                    cs.push(Constraint::UnaryEgoDir { object: name.clone(), pose, bin: s.ego_dir });
                    cs.push(Constraint::UnaryDistBin { object: name.clone(), pose, bin: s.dist_bin });
                    cs.push(Constraint::UnaryRoomVisibility { object: name.clone(), rooms: rooms.clone() });
                }
                None => cs.push(Constraint::UnaryNotSeen { object: name.clone(), pose, rooms: rooms.clone() }),
            }
        }
        self.with_constraints(cs)
    }

    /// Record an exact position (e.g. a `Query` reply in world coordinates).
    pub fn assert_position(&self, name: &str, cell: Cell) -> Result<BeliefState, BeliefError> {
        self.with_constraints([Constraint::UnaryAt { object: name.to_string(), cell }])
    }

    pub fn assert_relation(&self, a: &str, b: &str, bin: AllocBin) -> Result<BeliefState, BeliefError> {
        self.with_constraints([Constraint::BinaryRelative { a: a.to_string(), b: b.to_string(), bin }])
    }

    /// Run AC-3 to a fixed point without adding constraints.
    pub fn ac3(&self) -> BeliefState {
        let mut next = self.clone();
        let _ = next.propagate();
        next
    }

    fn arcs(&self) -> Vec<(usize, usize, ArcKind)> {
        let n = self.names.len();
        let mut arcs = Vec::new();
        for c in &self.constraints {
            match c {
                Constraint::AllDifferent { objects } => {
                    let ids: Vec<usize> = objects.iter().filter_map(|o| self.idx(o).ok()).collect();
                    for &x in &ids {
                        for &y in &ids {
                            if x != y {
                                arcs.push((x, y, ArcKind::NotEqual));
                            }
                        }
                    }
                }
                Constraint::BinaryRelative { a, b, bin } => {
                    if let (Ok(x), Ok(y)) = (self.idx(a), self.idx(b)) {
                        arcs.push((x, y, ArcKind::Relative(*bin)));
                        arcs.push((y, x, ArcKind::Relative(AllocBin::ALL[(bin.index() + 4) % 8])));
                    }
                }
                _ => {}
            }
        }
        debug_assert!(arcs.iter().all(|&(x, y, _)| x < n && y < n));
        arcs
    }

    /// Remove values of `x` without support in `y`. Returns whether `x` shrank.
    fn revise(&mut self, x: usize, y: usize, kind: ArcKind) -> bool {
        match kind {
            ArcKind::NotEqual => match self.domains[y].single() {
                Some(v) => self.domains[x].remove(v),
                None => false,
            },
            ArcKind::Relative(bin) => {
                let dy = self.domains[y].clone();
                self.domains[x].retain(|v| dy.iter().any(|w| w != v && spatial::allocentric_bin(v, w) == Ok(bin)))
            }
        }
    }

    fn propagate(&mut self) -> Result<(), BeliefError> {
        let arcs = self.arcs();
        let mut queue: VecDeque<usize> = (0..arcs.len()).collect();
        let mut queued = vec![true; arcs.len()];
        while let Some(a) = queue.pop_front() {
            queued[a] = false;
            let (x, y, kind) = arcs[a];
            if self.revise(x, y, kind) {
                if self.domains[x].is_empty() {
                    return Err(BeliefError::InconsistentObservation(self.names[x].clone()));
                }
                for (k, &(_, t, _)) in arcs.iter().enumerate() {
                    if t == x && !queued[k] {
                        queued[k] = true;
                        queue.push_back(k);
                    }
                }
            }
        }
        Ok(())
    }

    /// Objects whose true position has been pruned from their domain.
    pub fn unsound_objects(&self, scene: &Scene) -> Vec<String> {
        self.names
            .iter()
            .zip(&self.domains)
            .filter(|(n, d)| scene.object(n).is_some_and(|o| !d.contains(o.position)))
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn snapshot(&self) -> BeliefSnapshot {
        BeliefSnapshot {
            grid: self.grid,
            domains: self.names.iter().zip(&self.domains).map(|(n, d)| (n.clone(), run_length_rows(d))).collect(),
        }
    }
}

/// `1 - sum log2 max(1, C_i) / (N log2 M)` over domain sizes `C_i`.
pub fn information_gain(sizes: &[usize], m: usize) -> f64 {
    if sizes.is_empty() || m <= 1 {
        return 1.0;
    }
    let num: f64 = sizes.iter().map(|&c| libm::log2(c.max(1) as f64)).sum();
    let g = 1.0 - num / (sizes.len() as f64 * libm::log2(m as f64));
    g.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn cellset_basics() {
        let mut s = CellSet::empty(20, 20);
        s.insert(Cell::new(3, 4));
        s.insert(Cell::new(19, 19));
        s.insert(Cell::new(25, 0));
        assert_eq!(s.len(), 2);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![Cell::new(3, 4), Cell::new(19, 19)]);
        assert!(s.remove(Cell::new(3, 4)));
        assert_eq!(s.single(), Some(Cell::new(19, 19)));
        assert_eq!(CellSet::full(20, 20).len(), 400);
    }

    #[test]
    fn gain_formula() {
        assert_eq!(information_gain(&[400, 400], 400), 0.0);
        assert_eq!(information_gain(&[1, 1], 400), 1.0);
        assert!((information_gain(&[1, 20], 400) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn all_different_support() {
        let b = BeliefState::new(&names(&["a", "b"]), (20, 20));
        let b = b
            .with_constraints([
                Constraint::UnaryAt { object: "a".into(), cell: Cell::new(0, 0) },
                Constraint::UnaryRoomVisibility { object: "b".into(), rooms: vec![Rect { x: 0, y: 0, w: 2, h: 1 }] },
            ])
            .unwrap();
        assert_eq!(b.domain("b").unwrap().single(), Some(Cell::new(1, 0)));
    }

    #[test]
    fn ac3_is_identity_without_binary_arcs() {
        let b = BeliefState::new(&names(&["a", "b", "c"]), (6, 6));
        assert_eq!(b.ac3(), b);
    }

    #[test]
    fn empty_domain_is_reported() {
        let b = BeliefState::new(&names(&["a"]), (20, 20));
        let r = b.with_constraints([
            Constraint::UnaryAt { object: "a".into(), cell: Cell::new(1, 1) },
            Constraint::UnaryNotAt { object: "a".into(), cell: Cell::new(1, 1) },
        ]);
        assert_eq!(r, Err(BeliefError::InconsistentObservation("a".into())));
    }

    #[test]
    fn relative_prunes() {
        let b = BeliefState::new(&names(&["a", "b"]), (5, 5))
            .assert_position("a", Cell::new(2, 2))
            .unwrap()
            .assert_relation("a", "b", AllocBin::N)
            .unwrap();
        let d = b.domain("b").unwrap();
        assert!(d.iter().all(|c| spatial::allocentric_bin(Cell::new(2, 2), c) == Ok(AllocBin::N)));
        assert!(d.contains(Cell::new(2, 4)));
    }
}
