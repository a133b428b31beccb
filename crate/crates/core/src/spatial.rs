//! Direction and distance discretization, and field-of-view visibility.
//!
//! Egocentric binning and FOV membership are decided with integer arithmetic
//! so boundary cases (exactly 0 deg, exactly 45 deg) are exact. Allocentric
//! bin edges sit at odd multiples of 22.5 deg, which no integer offset can
//! hit, so a floating-point bearing is safe there.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geom::{Cardinal, Cell, Pose};
use crate::scenegen::Scene;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum SpatialError {
    #[error("points coincide")]
    CoincidentPoints,
    #[error("distance {0} is outside [0, 32]")]
    OutOfRange(f64),
    #[error("pose is outside every room and doorway")]
    PoseOutsideScene,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AllocBin {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl AllocBin {
    pub const ALL: [AllocBin; 8] =
        [AllocBin::N, AllocBin::NE, AllocBin::E, AllocBin::SE, AllocBin::S, AllocBin::SW, AllocBin::W, AllocBin::NW];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        ["N", "NE", "E", "SE", "S", "SW", "W", "NW"][self.index()]
    }

    /// Bin containing a bearing in degrees (any real, wrapped into [0, 360)).
    pub fn from_bearing(deg: f64) -> AllocBin {
        let b = wrap360(deg);
        let i = libm::floor((b + 22.5) / 45.0) as usize % 8;
        AllocBin::ALL[i]
    }

    /// Bin seen after rotating the frame so `heading` becomes North.
    pub fn relative_to(self, heading: Cardinal) -> AllocBin {
        AllocBin::ALL[(self.index() + 8 - 2 * heading.index() as usize) % 8]
    }

    pub fn rotated_cw(self, heading: Cardinal) -> AllocBin {
        AllocBin::ALL[(self.index() + 2 * heading.index() as usize) % 8]
    }
}

impl fmt::Display for AllocBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AllocBin {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        let t = s.trim();
        AllocBin::ALL.iter().copied().find(|b| b.as_str().eq_ignore_ascii_case(t)).ok_or(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EgoBin {
    FrontLeft,
    FrontSlightLeft,
    Front,
    FrontSlightRight,
    FrontRight,
}

impl EgoBin {
    pub const ALL: [EgoBin; 5] =
        [EgoBin::FrontLeft, EgoBin::FrontSlightLeft, EgoBin::Front, EgoBin::FrontSlightRight, EgoBin::FrontRight];

    pub fn as_str(self) -> &'static str {
        match self {
            EgoBin::FrontLeft => "front-left",
            EgoBin::FrontSlightLeft => "front-slight-left",
            EgoBin::Front => "front",
            EgoBin::FrontSlightRight => "front-slight-right",
            EgoBin::FrontRight => "front-right",
        }
    }

    /// Bin for a relative bearing in degrees; `None` outside [-45, 45].
    pub fn from_relative_deg(rel: f64) -> Option<EgoBin> {
        if !(-45.0..=45.0).contains(&rel) {
            None
        } else if rel < -22.5 {
            Some(EgoBin::FrontLeft)
        } else if rel < 0.0 {
            Some(EgoBin::FrontSlightLeft)
        } else if rel == 0.0 {
            Some(EgoBin::Front)
        } else if rel <= 22.5 {
            Some(EgoBin::FrontSlightRight)
        } else {
            Some(EgoBin::FrontRight)
        }
    }
}

impl fmt::Display for EgoBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EgoBin {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        let t = s.trim();
        EgoBin::ALL.iter().copied().find(|b| b.as_str() == t).ok_or(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistBin {
    Same,
    Near,
    Mid,
    SlightlyFar,
    Far,
    VeryFar,
}

impl DistBin {
    pub const ALL: [DistBin; 6] =
        [DistBin::Same, DistBin::Near, DistBin::Mid, DistBin::SlightlyFar, DistBin::Far, DistBin::VeryFar];

    /// Upper bound of each bin (inclusive), in grid units.
    pub const UPPER: [f64; 6] = [0.0, 2.0, 4.0, 8.0, 16.0, 32.0];

    pub fn as_str(self) -> &'static str {
        match self {
            DistBin::Same => "same",
            DistBin::Near => "near",
            DistBin::Mid => "mid",
            DistBin::SlightlyFar => "slightly-far",
            DistBin::Far => "far",
            DistBin::VeryFar => "very-far",
        }
    }

    /// Squared-distance bounds `(lo, hi]` of the bin (`same` is `[0, 0]`).
    pub fn sq_bounds(self) -> (i64, i64) {
        match self {
            DistBin::Same => (-1, 0),
            DistBin::Near => (0, 4),
            DistBin::Mid => (4, 16),
            DistBin::SlightlyFar => (16, 64),
            DistBin::Far => (64, 256),
            DistBin::VeryFar => (256, 1024),
        }
    }

    pub fn contains_sq(self, d2: i64) -> bool {
        let (lo, hi) = self.sq_bounds();
        d2 > lo && d2 <= hi
    }
}

impl fmt::Display for DistBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistBin {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        let t = s.trim();
        DistBin::ALL.iter().copied().find(|b| b.as_str() == t).ok_or(())
    }
}

fn wrap360(deg: f64) -> f64 {
    let r = libm::fmod(deg, 360.0);
    if r < 0.0 {
        r + 360.0
    } else {
        r
    }
}

/// Clockwise-from-North bearing of `to - from` in [0, 360).
pub fn bearing_deg(from: Cell, to: Cell) -> Result<f64, SpatialError> {
    if from == to {
        return Err(SpatialError::CoincidentPoints);
    }
    let d = to - from;
    Ok(wrap360(libm::atan2(d.x as f64, d.y as f64).to_degrees()))
}

/// Bearing of `target` relative to the pose heading, in (-180, 180].
pub fn relative_bearing_deg(pose: Pose, target: Cell) -> Result<f64, SpatialError> {
    let b = bearing_deg(pose.position, target)? - pose.heading.bearing_deg();
    let r = wrap360(b);
    Ok(if r > 180.0 { r - 360.0 } else { r })
}

pub fn allocentric_bin(from: Cell, to: Cell) -> Result<AllocBin, SpatialError> {
    bearing_deg(from, to).map(AllocBin::from_bearing)
}

pub fn distance_bin(d: f64) -> Result<DistBin, SpatialError> {
    if !(0.0..=32.0).contains(&d) {
        return Err(SpatialError::OutOfRange(d));
    }
    let i = DistBin::UPPER.iter().position(|&u| d <= u).expect("d <= 32");
    Ok(DistBin::ALL[i])
}

/// Exact distance bin from a squared integer distance.
pub fn distance_bin_sq(d2: i64) -> Result<DistBin, SpatialError> {
    DistBin::ALL
        .iter()
        .copied()
        .find(|b| b.contains_sq(d2))
        .ok_or_else(|| SpatialError::OutOfRange(libm::sqrt(d2 as f64)))
}

/// Forward and rightward components of `target - pose.position`.
fn ego_components(pose: Pose, target: Cell) -> (i64, i64) {
    let d = target - pose.position;
    (d.dot(pose.heading.unit()), d.dot(pose.heading.right()))
}

/// Egocentric bin of `target`, or `None` when outside the 90 deg FOV.
pub fn egocentric_bin(pose: Pose, target: Cell) -> Result<Option<EgoBin>, SpatialError> {
    if pose.position == target {
        return Err(SpatialError::CoincidentPoints);
    }
    let (f, r) = ego_components(pose, target);
    if f <= 0 || r.abs() > f {
        return Ok(None);
    }
    if r == 0 {
        return Ok(Some(EgoBin::Front));
    }
    // |atan(r/f)| < 22.5 deg  <=>  |r| < (sqrt 2 - 1) f  <=>  (|r| + f)^2 < 2 f^2
    let slight = (r.abs() + f) * (r.abs() + f) < 2 * f * f;
    Ok(Some(match (r < 0, slight) {
        (true, true) => EgoBin::FrontSlightLeft,
        (true, false) => EgoBin::FrontLeft,
        (false, true) => EgoBin::FrontSlightRight,
        (false, false) => EgoBin::FrontRight,
    }))
}

pub fn in_fov(pose: Pose, target: Cell) -> bool {
    matches!(egocentric_bin(pose, target), Ok(Some(_)))
}

/// The single sweep heading that owns `target` from `position`: the heading
/// whose FOV contains it, with a target on a +/-45 deg edge attributed to the
/// counterclockwise one of the two candidate headings.
pub fn owning_heading(position: Cell, target: Cell) -> Option<Cardinal> {
    if position == target {
        return None;
    }
    Cardinal::ALL.into_iter().find(|&h| {
        let (f, r) = ego_components(Pose::new(position, h), target);
        f > 0 && -f < r && r <= f
    })
}

/// A visible thing: an object by name, or a doorway by id.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entity {
    Object(String),
    Doorway(u32),
}

impl Entity {
    pub fn object_name(&self) -> Option<&str> {
        match self {
            Entity::Object(n) => Some(n),
            Entity::Doorway(_) => None,
        }
    }

    /// Parse the textual form used in actions: an object name or `doorway <id>`.
    pub fn parse(s: &str) -> Entity {
        let t = s.trim();
        if let Some(rest) = t.strip_prefix("doorway") {
            if let Ok(id) = rest.trim().parse::<u32>() {
                return Entity::Doorway(id);
            }
        }
        Entity::Object(String::from(t))
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Object(n) => f.write_str(n),
            Entity::Doorway(id) => write!(f, "doorway {id}"),
        }
    }
}

/// One entity inside the current field of view.
///
/// `raw_bearing` and `raw_distance` stay on the harness side: they are not
/// serialized and do not take part in equality.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sighting {
    pub entity: Entity,
    pub ego_dir: EgoBin,
    pub dist_bin: DistBin,
    pub facing: Option<Cardinal>,
    /// For doorways: the room on the far side as seen from the observer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leads_to: Option<u32>,
    #[serde(skip)]
    pub raw_bearing: f64,
    #[serde(skip)]
    pub raw_distance: f64,
}

impl PartialEq for Sighting {
    fn eq(&self, o: &Sighting) -> bool {
        self.entity == o.entity
            && self.ego_dir == o.ego_dir
            && self.dist_bin == o.dist_bin
            && self.facing == o.facing
            && self.leads_to == o.leads_to
    }
}

impl Sighting {
    pub fn render(&self) -> String {
        match &self.entity {
            Entity::Object(name) => match self.facing {
                Some(c) => format!("{name} is {}, {}, facing {c}", self.ego_dir, self.dist_bin),
                None => format!("{name} is {}, {}", self.ego_dir, self.dist_bin),
            },
            Entity::Doorway(id) => match self.leads_to {
                Some(k) => format!("doorway {id} to room {k} is {}, {}", self.ego_dir, self.dist_bin),
                None => format!("doorway {id} is {}, {}", self.ego_dir, self.dist_bin),
            },
        }
    }
}

pub fn render_sightings(s: &[Sighting]) -> String {
    if s.is_empty() {
        return String::from("nothing in view");
    }
    s.iter().map(Sighting::render).collect::<Vec<_>>().join("\n")
}

/// A visibility candidate before FOV filtering.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub entity: Entity,
    pub position: Cell,
    pub facing: Option<Cardinal>,
    pub leads_to: Option<u32>,
}

/// Everything that could be seen from `position` given room-bounded
/// visibility, ignoring heading. Excludes a doorway the observer stands on.
pub fn visibility_candidates(scene: &Scene, position: Cell) -> Result<Vec<Candidate>, SpatialError> {
    let rooms = scene.rooms_visible_from(position);
    if rooms.is_empty() {
        return Err(SpatialError::PoseOutsideScene);
    }
    let mut out = Vec::new();
    for o in &scene.objects {
        if rooms.contains(&o.room_id) && o.position != position {
            out.push(Candidate {
                entity: Entity::Object(o.name.clone()),
                position: o.position,
                facing: o.facing,
                leads_to: None,
            });
        }
    }
    for d in &scene.doorways {
        if d.cell == position {
            continue;
        }
        if let Some(&near) = rooms.iter().find(|r| d.touches(**r)) {
            out.push(Candidate {
                entity: Entity::Doorway(d.id),
                position: d.cell,
                facing: None,
                leads_to: d.other(near),
            });
        }
    }
    Ok(out)
}

fn sighting_for(pose: Pose, c: &Candidate) -> Option<Sighting> {
    let ego = egocentric_bin(pose, c.position).ok()??;
    let d2 = pose.position.dist_sq(c.position);
    Some(Sighting {
        entity: c.entity.clone(),
        ego_dir: ego,
        dist_bin: distance_bin_sq(d2).ok()?,
        facing: c.facing,
        leads_to: c.leads_to,
        raw_bearing: relative_bearing_deg(pose, c.position).unwrap_or(0.0),
        raw_distance: libm::sqrt(d2 as f64),
    })
}

/// Sightings at `pose`, sorted by distance then entity.
pub fn visible_entities(scene: &Scene, pose: Pose) -> Result<Vec<Sighting>, SpatialError> {
    let mut cands = visibility_candidates(scene, pose.position)?;
    cands.sort_by(|a, b| cmp_candidates(pose.position, a, b));
    Ok(cands.iter().filter_map(|c| sighting_for(pose, c)).collect())
}

fn cmp_candidates(from: Cell, a: &Candidate, b: &Candidate) -> Ordering {
    from.dist_sq(a.position).cmp(&from.dist_sq(b.position)).then_with(|| a.entity.cmp(&b.entity))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alloc_examples() {
        assert_eq!(allocentric_bin(Cell::new(0, 0), Cell::new(0, 5)), Ok(AllocBin::N));
        assert_eq!(allocentric_bin(Cell::new(0, 0), Cell::new(3, 3)), Ok(AllocBin::NE));
        assert_eq!(allocentric_bin(Cell::new(2, 2), Cell::new(5, 1)), Ok(AllocBin::E));
        assert_eq!(allocentric_bin(Cell::new(0, 0), Cell::new(-1, 1)), Ok(AllocBin::NW));
        assert_eq!(allocentric_bin(Cell::new(1, 1), Cell::new(1, 1)), Err(SpatialError::CoincidentPoints));
        assert_eq!(AllocBin::from_bearing(22.5), AllocBin::NE);
        assert_eq!(AllocBin::from_bearing(-22.5), AllocBin::N);
        assert_eq!(AllocBin::from_bearing(337.4), AllocBin::NW);
    }

    #[test]
    fn distance_edges() {
        assert_eq!(distance_bin(0.0), Ok(DistBin::Same));
        assert_eq!(distance_bin(2.0), Ok(DistBin::Near));
        assert_eq!(distance_bin(2.0001), Ok(DistBin::Mid));
        assert_eq!(distance_bin(libm::sqrt(8.0)), Ok(DistBin::Mid));
        assert!(distance_bin(32.5).is_err());
        for d2 in 0..=1024i64 {
            assert_eq!(distance_bin_sq(d2).unwrap(), distance_bin(libm::sqrt(d2 as f64)).unwrap(), "{d2}");
        }
    }

    #[test]
    fn ego_examples() {
        let p = Pose::new(Cell::new(0, 0), Cardinal::N);
        assert_eq!(egocentric_bin(p, Cell::new(0, 3)), Ok(Some(EgoBin::Front)));
        // atan(1/2) ~ 26.6 deg to the left
        assert_eq!(egocentric_bin(p, Cell::new(-1, 2)), Ok(Some(EgoBin::FrontLeft)));
        assert_eq!(egocentric_bin(p, Cell::new(-2, 2)), Ok(Some(EgoBin::FrontLeft)));
        assert_eq!(egocentric_bin(p, Cell::new(1, 3)), Ok(Some(EgoBin::FrontSlightRight)));
        let east = Pose::new(Cell::new(0, 0), Cardinal::E);
        assert_eq!(egocentric_bin(east, Cell::new(0, 4)), Ok(None));
        assert_eq!(egocentric_bin(east, Cell::new(3, -1)), Ok(Some(EgoBin::FrontSlightRight)));
    }

    #[test]
    fn entity_text_round_trip() {
        assert_eq!(Entity::parse("doorway 3"), Entity::Doorway(3));
        assert_eq!(Entity::parse(" lamp "), Entity::Object("lamp".into()));
        assert_eq!(Entity::parse("doormat"), Entity::Object("doormat".into()));
    }
}
