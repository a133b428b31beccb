//! Integer grid geometry shared by every other module.
//!
//! Convention: `+y` is North, `+x` is East, bearings are measured clockwise
//! from North in degrees.

use core::fmt;
use core::ops::{Add, Sub};
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// A grid cell. Serialized as a two-element integer array `[x, y]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(i32, i32)", into = "(i32, i32)")]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn dist_sq(self, other: Cell) -> i64 {
        let dx = (other.x - self.x) as i64;
        let dy = (other.y - self.y) as i64;
        dx * dx + dy * dy
    }

    pub fn dist(self, other: Cell) -> f64 {
        libm::sqrt(self.dist_sq(other) as f64)
    }

    pub fn step(self, dir: Cardinal) -> Cell {
        self + dir.unit()
    }

    /// 4-neighbourhood in N, E, S, W order.
    pub fn neighbors4(self) -> [Cell; 4] {
        Cardinal::ALL.map(|d| self.step(d))
    }

    pub fn dot(self, other: Cell) -> i64 {
        self.x as i64 * other.x as i64 + self.y as i64 * other.y as i64
    }
}

impl From<(i32, i32)> for Cell {
    fn from((x, y): (i32, i32)) -> Self {
        Cell { x, y }
    }
}

impl From<Cell> for (i32, i32) {
    fn from(c: Cell) -> Self {
        (c.x, c.y)
    }
}

impl Add for Cell {
    type Output = Cell;
    fn add(self, o: Cell) -> Cell {
        Cell::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Cell {
    type Output = Cell;
    fn sub(self, o: Cell) -> Cell {
        Cell::new(self.x - o.x, self.y - o.y)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cardinal {
    N,
    E,
    S,
    W,
}

impl Cardinal {
    /// Clockwise order starting at North.
    pub const ALL: [Cardinal; 4] = [Cardinal::N, Cardinal::E, Cardinal::S, Cardinal::W];

    pub fn index(self) -> u8 {
        match self {
            Cardinal::N => 0,
            Cardinal::E => 1,
            Cardinal::S => 2,
            Cardinal::W => 3,
        }
    }

    pub fn from_index(i: u8) -> Cardinal {
        Cardinal::ALL[(i % 4) as usize]
    }

    /// Rotate clockwise by `quarters` quarter turns.
    pub fn rotate_cw(self, quarters: u8) -> Cardinal {
        Cardinal::from_index(self.index() + quarters % 4)
    }

    pub fn opposite(self) -> Cardinal {
        self.rotate_cw(2)
    }

    pub fn bearing_deg(self) -> f64 {
        self.index() as f64 * 90.0
    }

    pub fn unit(self) -> Cell {
        match self {
            Cardinal::N => Cell::new(0, 1),
            Cardinal::E => Cell::new(1, 0),
            Cardinal::S => Cell::new(0, -1),
            Cardinal::W => Cell::new(-1, 0),
        }
    }

    /// The unit vector pointing to the right of this heading.
    pub fn right(self) -> Cell {
        self.rotate_cw(1).unit()
    }

    /// Quarter turns needed to rotate clockwise from `self` to `to`.
    pub fn quarters_to(self, to: Cardinal) -> u8 {
        (to.index() + 4 - self.index()) % 4
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cardinal::N => "N",
            Cardinal::E => "E",
            Cardinal::S => "S",
            Cardinal::W => "W",
        }
    }

    /// Cardinal pointing from `from` towards an axis-aligned `to`.
    pub fn toward(from: Cell, to: Cell) -> Option<Cardinal> {
        let d = to - from;
        match (d.x.signum(), d.y.signum()) {
            (0, 1) => Some(Cardinal::N),
            (1, 0) => Some(Cardinal::E),
            (0, -1) => Some(Cardinal::S),
            (-1, 0) => Some(Cardinal::W),
            _ => None,
        }
    }
}

impl fmt::Display for Cardinal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cardinal {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim() {
            "N" | "n" | "north" | "North" => Ok(Cardinal::N),
            "E" | "e" | "east" | "East" => Ok(Cardinal::E),
            "S" | "s" | "south" | "South" => Ok(Cardinal::S),
            "W" | "w" | "west" | "West" => Ok(Cardinal::W),
            _ => Err(()),
        }
    }
}

/// Position plus heading of the agent (or of an object used as a viewpoint).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub position: Cell,
    pub heading: Cardinal,
}

impl Pose {
    pub const fn new(position: Cell, heading: Cardinal) -> Self {
        Pose { position, heading }
    }

    pub fn rotated(self, quarters: u8) -> Pose {
        Pose::new(self.position, self.heading.rotate_cw(quarters))
    }
}

/// Axis-aligned rectangle of cells `[x, x+w) x [y, y+h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl Rect {
    pub fn contains(&self, c: Cell) -> bool {
        c.x >= self.x && c.x < self.x + self.w && c.y >= self.y && c.y < self.y + self.h
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.x < o.x + o.w && o.x < self.x + self.w && self.y < o.y + o.h && o.y < self.y + self.h
    }

    pub fn grow(&self, by: i32) -> Rect {
        Rect { x: self.x - by, y: self.y - by, w: self.w + 2 * by, h: self.h + 2 * by }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let (x0, y0, w, h) = (self.x, self.y, self.w, self.h);
        (y0..y0 + h).flat_map(move |y| (x0..x0 + w).map(move |x| Cell::new(x, y)))
    }
}

/// A rigid frame anchored at a pose: local `+y` is the anchor heading and
/// local `+x` is its right-hand side.
///
/// The agent-facing coordinate system is the frame of the spawn pose, and the
/// egocentric (local) map uses the frame of the current pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub origin: Cell,
    pub heading: Cardinal,
}

impl Frame {
    pub fn of(pose: Pose) -> Frame {
        Frame { origin: pose.position, heading: pose.heading }
    }

    pub fn identity() -> Frame {
        Frame { origin: Cell::new(0, 0), heading: Cardinal::N }
    }

    pub fn to_local(&self, world: Cell) -> Cell {
        let d = world - self.origin;
        let fwd = self.heading.unit();
        let right = self.heading.right();
        Cell::new(d.dot(right) as i32, d.dot(fwd) as i32)
    }

    pub fn to_world(&self, local: Cell) -> Cell {
        let fwd = self.heading.unit();
        let right = self.heading.right();
        Cell::new(
            self.origin.x + local.x * right.x + local.y * fwd.x,
            self.origin.y + local.x * right.y + local.y * fwd.y,
        )
    }

    pub fn cardinal_to_local(&self, world: Cardinal) -> Cardinal {
        Cardinal::from_index(world.index() + 4 - self.heading.index())
    }

    pub fn cardinal_to_world(&self, local: Cardinal) -> Cardinal {
        local.rotate_cw(self.heading.index())
    }

    pub fn pose_to_local(&self, p: Pose) -> Pose {
        Pose::new(self.to_local(p.position), self.cardinal_to_local(p.heading))
    }

    pub fn pose_to_world(&self, p: Pose) -> Pose {
        Pose::new(self.to_world(p.position), self.cardinal_to_world(p.heading))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip_and_axes() {
        let f = Frame { origin: Cell::new(5, 7), heading: Cardinal::E };
        // one step ahead (east) is local (0, 1); one step to the right (south) is local (1, 0)
        assert_eq!(f.to_local(Cell::new(6, 7)), Cell::new(0, 1));
        assert_eq!(f.to_local(Cell::new(5, 6)), Cell::new(1, 0));
        for x in -3..12 {
            for y in -3..12 {
                let c = Cell::new(x, y);
                assert_eq!(f.to_world(f.to_local(c)), c);
            }
        }
        assert_eq!(f.cardinal_to_local(Cardinal::E), Cardinal::N);
        assert_eq!(f.cardinal_to_local(Cardinal::N), Cardinal::W);
        for c in Cardinal::ALL {
            assert_eq!(f.cardinal_to_world(f.cardinal_to_local(c)), c);
        }
    }

    #[test]
    fn rotation_is_clockwise() {
        assert_eq!(Cardinal::N.rotate_cw(1), Cardinal::E);
        assert_eq!(Cardinal::W.rotate_cw(1), Cardinal::N);
        assert_eq!(Cardinal::S.quarters_to(Cardinal::E), 3);
    }
}
