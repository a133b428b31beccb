//! The nine downstream tasks: generation, answer parsing, grading and
//! ground-truth answers.
//!
//! Everything an agent reads or writes is in its own frame: the spawn cell is
//! `(0, 0)`, the spawn heading is `N` (+y) and its right is `E` (+x). Views
//! list objects only, in the observation order (distance, then name).

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{goto_landing, Action, DEFAULT_MAX_MOVES};
use crate::geom::{Cardinal, Cell, Frame, Pose};
use crate::scenegen::Scene;
use crate::spatial::{self, AllocBin, DistBin, EgoBin, Entity};

pub const DEFAULT_PER_TASK: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "direction")]
    Direction,
    #[serde(rename = "persp.take")]
    PerspTake,
    #[serde(rename = "perc.dec")]
    PercDec,
    #[serde(rename = "act2view")]
    Act2View,
    #[serde(rename = "view2act")]
    View2Act,
    #[serde(rename = "alloc.map")]
    AllocMap,
    #[serde(rename = "ment.rot")]
    MentRot,
    #[serde(rename = "loc2view")]
    Loc2View,
    #[serde(rename = "view2loc")]
    View2Loc,
}

impl TaskKind {
    pub const ALL: [TaskKind; 9] = [
        TaskKind::Direction,
        TaskKind::PerspTake,
        TaskKind::PercDec,
        TaskKind::Act2View,
        TaskKind::View2Act,
        TaskKind::AllocMap,
        TaskKind::MentRot,
        TaskKind::Loc2View,
        TaskKind::View2Loc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Direction => "direction",
            TaskKind::PerspTake => "persp.take",
            TaskKind::PercDec => "perc.dec",
            TaskKind::Act2View => "act2view",
            TaskKind::View2Act => "view2act",
            TaskKind::AllocMap => "alloc.map",
            TaskKind::MentRot => "ment.rot",
            TaskKind::Loc2View => "loc2view",
            TaskKind::View2Loc => "view2loc",
        }
    }

    pub fn index(self) -> usize {
        TaskKind::ALL.iter().position(|&k| k == self).expect("listed")
    }

    /// The answer template published with every question of this kind.
    pub fn answer_schema(self) -> &'static str {
        match self {
            TaskKind::Direction => "<direction: N|NE|E|SE|S|SW|W|NW>, <distance bin>",
            TaskKind::PerspTake => {
                "one line per object: <name> is <egocentric direction>, <distance bin>; or: nothing in view"
            }
            TaskKind::PercDec => "<object name>",
            TaskKind::Act2View | TaskKind::Loc2View => "<name> is <egocentric direction>, <distance bin>",
            TaskKind::View2Act => "one action per line: Goto(<object name> | doorway <id>) or Rotate(90|180|270)",
            TaskKind::AllocMap => "one line per object: <name>: (<x>, <y>), facing <N|E|S|W|none>",
            TaskKind::MentRot => "<name>, <name>, ...",
            TaskKind::View2Loc => "(<x>, <y>), facing <N|E|S|W>   (omit the facing part when no heading is asked)",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        TaskKind::ALL.iter().copied().find(|k| k.as_str() == s.trim()).ok_or(())
    }
}

/// One object in a view: what an observation line says about it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewLine {
    pub name: String,
    pub ego: EgoBin,
    pub dist: DistBin,
}

impl ViewLine {
    pub fn render(&self) -> String {
        format!("{} is {}, {}", self.name, self.ego, self.dist)
    }
}

fn render_view(view: &[ViewLine]) -> String {
    if view.is_empty() {
        return String::from("nothing in view");
    }
    view.iter().map(ViewLine::render).collect::<Vec<_>>().join("\n")
}

/// Task parameters. Poses are in the agent frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Direction { from: String, to: String },
    PerspTake { anchor: String },
    PercDec { view: Vec<ViewLine> },
    Act2View { start: Pose, actions: Vec<Action> },
    View2Act { start: Pose, view: Vec<ViewLine> },
    AllocMap { names: Vec<String> },
    MentRot { pose: Pose },
    Loc2View { pose: Pose },
    View2Loc { view: Vec<ViewLine>, with_heading: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub task_kind: TaskKind,
    pub payload: Payload,
    pub answer_schema: String,
    pub scene_seed: u64,
}

fn pose_text(p: Pose) -> String {
    format!("{} facing {}", p.position, p.heading)
}

impl Question {
    /// Question text shown to the agent, ending with the answer format.
    pub fn prompt(&self) -> String {
        let body = match &self.payload {
            Payload::Direction { from, to } => format!(
                "What is the direction and distance from {from} to {to}? Use your coordinate frame (N is +y)."
            ),
            Payload::PerspTake { anchor } => format!(
                "Imagine standing at {anchor} and looking where it faces. List every object you would see in the 90-degree field of view."
            ),
            Payload::PercDec { view } => format!(
                "From which object's position and facing is this the view?\n{}",
                render_view(view)
            ),
            Payload::Act2View { start, actions } => format!(
                "You stand at {}. After {}, exactly one object is in view. Which object, and where?",
                pose_text(*start),
                join_actions(actions)
            ),
            Payload::View2Act { start, view } => format!(
                "You stand at {}. Give Goto/Rotate actions after which you see exactly:\n{}",
                pose_text(*start),
                render_view(view)
            ),
            Payload::AllocMap { names } => format!(
                "Give the coordinates and facing of each of: {}.",
                names.join(", ")
            ),
            Payload::MentRot { pose } => format!(
                "You stand at {} and turn clockwise through a full circle. In which order do objects come directly in front of you?",
                pose_text(*pose)
            ),
            Payload::Loc2View { pose } => format!(
                "If you stood at {}, exactly one object would be in view. Which object, and where?",
                pose_text(*pose)
            ),
            Payload::View2Loc { view, with_heading } => format!(
                "Where would you have to stand{} to see exactly this?\n{}",
                if *with_heading { ", and facing which way," } else { "" },
                render_view(view)
            ),
        };
        format!("{body}\nAnswer format: {}", self.answer_schema)
    }
}

fn join_actions(a: &[Action]) -> String {
    a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaskError {
    #[error("scene too small for {0} questions")]
    SceneTooSmall(TaskKind),
    #[error("per_task must be at least 1")]
    NoQuestions,
}

/// A step of a Goto/Rotate sequence that cannot be carried out.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("only Goto and Rotate are allowed, got {0}")]
    NotAMove(String),
    #[error("{0} cannot be reached from here")]
    Unreachable(String),
    #[error("invalid rotation {0}")]
    InvalidRotation(u16),
}

/// Carry out a Goto/Rotate sequence in world coordinates. A Goto target must
/// belong to a room visible from the current cell.
pub fn execute_moves(scene: &Scene, start: Pose, actions: &[Action]) -> Result<Pose, ExecError> {
    let mut pose = start;
    for a in actions {
        pose = match a {
            Action::Rotate { degrees } => match degrees {
                90 => pose.rotated(1),
                180 => pose.rotated(2),
                270 => pose.rotated(3),
                d => return Err(ExecError::InvalidRotation(*d)),
            },
            Action::Goto { target } => {
                if !reachable_from(scene, pose.position, target) {
                    return Err(ExecError::Unreachable(target.to_string()));
                }
                goto_landing(scene, pose, target).map_err(|_| ExecError::Unreachable(target.to_string()))?
            }
            other => return Err(ExecError::NotAMove(other.to_string())),
        };
    }
    Ok(pose)
}

fn reachable_from(scene: &Scene, at: Cell, target: &Entity) -> bool {
    let rooms = scene.rooms_visible_from(at);
    match target {
        Entity::Object(n) => scene.object(n).is_some_and(|o| rooms.contains(&o.room_id)),
        Entity::Doorway(id) => scene.doorway(*id).is_some_and(|d| d.cell != at && rooms.iter().any(|&r| d.touches(r))),
    }
}

/// Objects in view at a world pose.
pub fn object_view(scene: &Scene, pose: Pose) -> Vec<ViewLine> {
    spatial::visible_entities(scene, pose)
        .unwrap_or_default()
        .into_iter()
        .filter_map(|s| match s.entity {
            Entity::Object(name) => Some(ViewLine { name, ego: s.ego_dir, dist: s.dist_bin }),
            Entity::Doorway(_) => None,
        })
        .collect()
}

fn anchor_pose(scene: &Scene, name: &str) -> Option<Pose> {
    let o = scene.object(name)?;
    Some(Pose::new(o.position, o.facing?))
}

/// Cells an agent can stand on, rooms first then doorways, in scan order.
fn standable_cells(scene: &Scene) -> Vec<Cell> {
    let mut out: Vec<Cell> = Vec::new();
    for r in &scene.rooms {
        out.extend(r.cells().filter(|&c| scene.is_free(c)));
    }
    for d in &scene.doorways {
        if scene.is_free(d.cell) {
            out.push(d.cell);
        }
    }
    out
}

fn room_poses(scene: &Scene) -> Vec<Pose> {
    let mut out = Vec::new();
    for r in &scene.rooms {
        for c in r.cells().filter(|&c| scene.is_free(c)) {
            for h in Cardinal::ALL {
                out.push(Pose::new(c, h));
            }
        }
    }
    out
}

/// World poses from which exactly `view` is seen.
pub fn consistent_poses(scene: &Scene, view: &[ViewLine]) -> Vec<Pose> {
    let mut want = view.to_vec();
    want.sort();
    let mut out = Vec::new();
    for c in standable_cells(scene) {
        for h in Cardinal::ALL {
            let p = Pose::new(c, h);
            let mut got = object_view(scene, p);
            got.sort();
            if got == want {
                out.push(p);
            }
        }
    }
    out
}

/// Order in which objects pass straight ahead while turning clockwise from
/// `pose`, starting with anything already dead ahead. `None` when two
/// objects lie on the same ray.
pub fn rotation_sequence(scene: &Scene, pose: Pose) -> Option<Vec<String>> {
    let fwd = pose.heading.unit();
    let right = pose.heading.right();
    let mut items: Vec<(i64, i64, String)> = spatial::visibility_candidates(scene, pose.position)
        .ok()?
        .into_iter()
        .filter_map(|c| {
            let name = c.entity.object_name()?.to_string();
            let d = c.position - pose.position;
            Some((d.dot(fwd), d.dot(right), name))
        })
        .collect();
    let half = |f: i64, r: i64| if r > 0 || (r == 0 && f > 0) { 0 } else { 1 };
    // Within a half-plane a comes first when its clockwise angle is smaller,
    // i.e. when the cross product f_a*r_b - r_a*f_b is positive.
    let cmp = |a: &(i64, i64, String), b: &(i64, i64, String)| {
        let h = half(a.0, a.1).cmp(&half(b.0, b.1));
        if h != Ordering::Equal {
            return h;
        }
        (a.0 * b.1 - a.1 * b.0).cmp(&0).reverse()
    };
    items.sort_by(cmp);
    for w in items.windows(2) {
        if cmp(&w[0], &w[1]) == Ordering::Equal {
            return None;
        }
    }
    Some(items.into_iter().map(|t| t.2).collect())
}

fn kind_rng(seed: u64, kind: TaskKind) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (kind.index() as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// `per_task` questions of every kind, deterministic in `(scene, seed)`.
pub fn generate_questions(scene: &Scene, per_task: usize, seed: u64) -> Result<Vec<Question>, TaskError> {
    if per_task == 0 {
        return Err(TaskError::NoQuestions);
    }
    let mut out = Vec::with_capacity(per_task * 9);
    for kind in TaskKind::ALL {
        let mut rng = kind_rng(seed, kind);
        let payloads = payloads_for(scene, kind, per_task, &mut rng)?;
        for (i, payload) in payloads.into_iter().enumerate() {
            out.push(Question {
                id: format!("{}-{}-{}", scene.config.seed, kind, i),
                task_kind: kind,
                payload,
                answer_schema: kind.answer_schema().to_string(),
                scene_seed: scene.config.seed,
            });
        }
    }
    Ok(out)
}

fn take<T>(mut v: Vec<T>, n: usize, kind: TaskKind, rng: &mut ChaCha8Rng) -> Result<Vec<T>, TaskError> {
    if v.len() < n {
        return Err(TaskError::SceneTooSmall(kind));
    }
    v.shuffle(rng);
    v.truncate(n);
    Ok(v)
}

fn take_in_order<T>(mut v: Vec<T>, n: usize, kind: TaskKind) -> Result<Vec<T>, TaskError> {
    if v.len() < n {
        return Err(TaskError::SceneTooSmall(kind));
    }
    v.truncate(n);
    Ok(v)
}

/// Goto/Rotate sequences from `start` ending with exactly one object in view.
fn single_view_sequences(scene: &Scene, start: Pose) -> Vec<(Vec<Action>, Pose)> {
    let mut entities: Vec<Entity> = scene.objects.iter().map(|o| Entity::Object(o.name.clone())).collect();
    entities.extend(scene.doorways.iter().map(|d| Entity::Doorway(d.id)));
    let rotations = [None, Some(90u16), Some(180), Some(270)];
    let mut prefixes: Vec<Vec<Action>> = Vec::new();
    for a in &entities {
        let first = alloc::vec![Action::Goto { target: a.clone() }];
        let Ok(p1) = execute_moves(scene, start, &first) else { continue };
        prefixes.push(first.clone());
        for b in &entities {
            if b == a {
                continue;
            }
            let mut two = first.clone();
            two.push(Action::Goto { target: b.clone() });
            if execute_moves(scene, p1, &two[1..]).is_ok() {
                prefixes.push(two);
            }
        }
    }
    let mut out = Vec::new();
    for prefix in prefixes {
        for r in rotations {
            let mut seq = prefix.clone();
            if let Some(degrees) = r {
                seq.push(Action::Rotate { degrees });
            }
            let Ok(end) = execute_moves(scene, start, &seq) else { continue };
            if object_view(scene, end).len() == 1 {
                out.push((seq, end));
            }
        }
    }
    out
}

fn payloads_for(scene: &Scene, kind: TaskKind, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Payload>, TaskError> {
    let fr = Frame::of(scene.spawn);
    let names: Vec<String> = scene.objects.iter().map(|o| o.name.clone()).collect();
    let local_start = fr.pose_to_local(scene.spawn);
    Ok(match kind {
        TaskKind::Direction => {
            let mut pairs = Vec::new();
            for a in &names {
                for b in &names {
                    if a != b {
                        pairs.push(Payload::Direction { from: a.clone(), to: b.clone() });
                    }
                }
            }
            take(pairs, n, kind, rng)?
        }
        TaskKind::PerspTake => {
            // Anchors that see something come first; empty views only fill up.
            let (mut seeing, mut blind): (Vec<Payload>, Vec<Payload>) = (Vec::new(), Vec::new());
            for a in &names {
                let Some(p) = anchor_pose(scene, a) else { continue };
                let q = Payload::PerspTake { anchor: a.clone() };
                if object_view(scene, p).is_empty() {
                    blind.push(q);
                } else {
                    seeing.push(q);
                }
            }
            seeing.shuffle(rng);
            blind.shuffle(rng);
            seeing.extend(blind);
            take_in_order(seeing, n, kind)?
        }
        TaskKind::PercDec => {
            let views: Vec<(String, Vec<ViewLine>)> =
                names.iter().filter_map(|a| Some((a.clone(), object_view(scene, anchor_pose(scene, a)?)))).collect();
            // Distinct views ranked: unique and non-empty, then shared, then
            // empty. Any anchor producing the view is graded correct.
            let mut ranked: Vec<(u8, Vec<ViewLine>)> = Vec::new();
            for (_, v) in &views {
                if ranked.iter().any(|(_, w)| w == v) {
                    continue;
                }
                let shared = views.iter().filter(|(_, w)| w == v).count() > 1;
                ranked.push((if v.is_empty() { 2 } else { u8::from(shared) }, v.clone()));
            }
            ranked.shuffle(rng);
            ranked.sort_by_key(|r| r.0);
            take_in_order(ranked, n, kind)?.into_iter().map(|(_, view)| Payload::PercDec { view }).collect()
        }
        TaskKind::Act2View => {
            let seqs = single_view_sequences(scene, scene.spawn);
            take(seqs, n, kind, rng)?
                .into_iter()
                .map(|(actions, _)| Payload::Act2View { start: local_start, actions })
                .collect()
        }
        TaskKind::View2Act => {
            let mut seen = BTreeSet::new();
            let mut views = Vec::new();
            for (_, end) in single_view_sequences(scene, scene.spawn) {
                let v = object_view(scene, end);
                if seen.insert(v.clone()) {
                    views.push(Payload::View2Act { start: local_start, view: v });
                }
            }
            take(views, n, kind, rng)?
        }
        TaskKind::AllocMap => {
            let mut out = Vec::with_capacity(n);
            out.push(Payload::AllocMap { names: names.clone() });
            let half = names.len().div_ceil(2).max(2).min(names.len());
            while out.len() < n {
                let mut sub = names.clone();
                sub.shuffle(rng);
                sub.truncate(half);
                sub.sort_by_key(|s| names.iter().position(|x| x == s));
                out.push(Payload::AllocMap { names: sub });
            }
            if names.len() < 2 {
                return Err(TaskError::SceneTooSmall(kind));
            }
            out
        }
        TaskKind::MentRot => {
            let poses: Vec<Payload> = room_poses(scene)
                .into_iter()
                .filter(|&p| rotation_sequence(scene, p).is_some_and(|s| s.len() >= 3))
                .map(|p| Payload::MentRot { pose: fr.pose_to_local(p) })
                .collect();
            take(poses, n, kind, rng)?
        }
        TaskKind::Loc2View => {
            let poses: Vec<Payload> = room_poses(scene)
                .into_iter()
                .filter(|&p| object_view(scene, p).len() == 1)
                .map(|p| Payload::Loc2View { pose: fr.pose_to_local(p) })
                .collect();
            take(poses, n, kind, rng)?
        }
        TaskKind::View2Loc => {
            let mut seen = BTreeSet::new();
            let mut views = Vec::new();
            for p in room_poses(scene) {
                let v = object_view(scene, p);
                if v.len() >= 2 && seen.insert(v.clone()) {
                    views.push(v);
                }
            }
            take(views, n, kind, rng)?
                .into_iter()
                .enumerate()
                .map(|(i, view)| Payload::View2Loc { view, with_heading: i % 2 == 0 })
                .collect()
        }
    })
}

/// A parsed answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Answer {
    Relation { direction: AllocBin, distance: DistBin },
    View { lines: Vec<ViewLine> },
    Name { name: String },
    Actions { actions: Vec<Action> },
    Map { entries: Vec<MapEntry> },
    Sequence { names: Vec<String> },
    Location { position: Cell, heading: Option<Cardinal> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEntry {
    pub name: String,
    pub position: Cell,
    pub facing: Option<Cardinal>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("answer does not match the {kind} format: {detail}")]
pub struct FormatError {
    pub kind: TaskKind,
    pub detail: String,
}

fn lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty())
}

fn parse_view_line(l: &str) -> Option<ViewLine> {
    let (name, rest) = l.split_once(" is ")?;
    let mut parts = rest.split(',').map(str::trim);
    let ego = parts.next()?.parse().ok()?;
    let dist = parts.next()?.parse().ok()?;
    // An observation-style trailing facing is tolerated and ignored.
    if let Some(extra) = parts.next() {
        extra.strip_prefix("facing ")?;
    }
    if parts.next().is_some() {
        return None;
    }
    Some(ViewLine { name: name.trim().to_string(), ego, dist })
}

/// `(x, y)` followed by the unparsed remainder.
fn parse_cell_prefix(s: &str) -> Option<(Cell, &str)> {
    let s = s.trim_start().strip_prefix('(')?;
    let close = s.find(')')?;
    let (x, y) = s[..close].split_once(',')?;
    Some((Cell::new(x.trim().parse().ok()?, y.trim().parse().ok()?), &s[close + 1..]))
}

/// `, facing X` (or nothing) after a coordinate.
fn parse_facing_suffix(rest: &str) -> Option<Option<Cardinal>> {
    let rest = rest.trim();
    if rest.is_empty() {
        return Some(None);
    }
    let f = rest.strip_prefix(',')?.trim().strip_prefix("facing")?.trim();
    if f.eq_ignore_ascii_case("none") {
        return Some(None);
    }
    f.parse().ok().map(Some)
}

pub fn parse_answer(kind: TaskKind, text: &str) -> Result<Answer, FormatError> {
    let fail = |detail: &str| FormatError { kind, detail: detail.to_string() };
    let all: Vec<&str> = lines(text).collect();
    match kind {
        TaskKind::Direction => {
            let [l] = all.as_slice() else { return Err(fail("expected one line")) };
            let (d, b) = l.split_once(',').ok_or_else(|| fail("expected '<direction>, <distance>'"))?;
            Ok(Answer::Relation {
                direction: d.parse().map_err(|_| fail("unknown direction"))?,
                distance: b.parse().map_err(|_| fail("unknown distance bin"))?,
            })
        }
        TaskKind::PerspTake | TaskKind::Act2View | TaskKind::Loc2View => {
            if kind == TaskKind::PerspTake && all.len() == 1 && all[0].eq_ignore_ascii_case("nothing in view") {
                return Ok(Answer::View { lines: Vec::new() });
            }
            if all.is_empty() {
                return Err(fail("empty answer"));
            }
            let parsed: Option<Vec<ViewLine>> = all.iter().map(|l| parse_view_line(l)).collect();
            Ok(Answer::View { lines: parsed.ok_or_else(|| fail("expected '<name> is <direction>, <distance>'"))? })
        }
        TaskKind::PercDec => {
            let [l] = all.as_slice() else { return Err(fail("expected one object name")) };
            Ok(Answer::Name { name: l.to_string() })
        }
        TaskKind::View2Act => {
            if all.len() > DEFAULT_MAX_MOVES as usize {
                return Err(fail("too many actions"));
            }
            let mut actions = Vec::with_capacity(all.len());
            for l in &all {
                let a: Action = l.parse().map_err(|_| fail("unparseable action"))?;
                if !a.is_move() {
                    return Err(fail("only Goto and Rotate are allowed"));
                }
                actions.push(a);
            }
            Ok(Answer::Actions { actions })
        }
        TaskKind::AllocMap => {
            let mut entries = Vec::with_capacity(all.len());
            for l in &all {
                let (name, rest) = l.split_once(':').ok_or_else(|| fail("expected '<name>: (x, y), facing F'"))?;
                let (position, rest) = parse_cell_prefix(rest).ok_or_else(|| fail("bad coordinates"))?;
                let facing = parse_facing_suffix(rest).ok_or_else(|| fail("bad facing"))?;
                entries.push(MapEntry { name: name.trim().to_string(), position, facing });
            }
            Ok(Answer::Map { entries })
        }
        TaskKind::MentRot => {
            let [l] = all.as_slice() else { return Err(fail("expected one comma-separated line")) };
            let names: Vec<String> = l.split(',').map(|s| s.trim().to_string()).collect();
            if names.iter().any(String::is_empty) {
                return Err(fail("empty name"));
            }
            Ok(Answer::Sequence { names })
        }
        TaskKind::View2Loc => {
            let [l] = all.as_slice() else { return Err(fail("expected one line")) };
            let (position, rest) = parse_cell_prefix(l).ok_or_else(|| fail("bad coordinates"))?;
            let heading = parse_facing_suffix(rest).ok_or_else(|| fail("bad facing"))?;
            Ok(Answer::Location { position, heading })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub value: f64,
}

/// Grade of one answer; `value` is the mean of `components`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub components: Vec<Component>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_error: Option<String>,
}

impl Score {
    fn of(parts: &[(&str, f64)]) -> Score {
        let value = if parts.is_empty() { 0.0 } else { parts.iter().map(|p| p.1).sum::<f64>() / parts.len() as f64 };
        Score {
            value,
            components: parts.iter().map(|(n, v)| Component { name: n.to_string(), value: *v }).collect(),
            format_error: None,
        }
    }

    pub fn format_error(detail: String) -> Score {
        Score { value: 0.0, components: Vec::new(), format_error: Some(detail) }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeOptions {
    /// Mental rotation scores 1 only for the exact sequence.
    pub strict_rotation: bool,
}

/// Parse and grade a free-text answer.
pub fn grade(q: &Question, text: &str, scene: &Scene) -> Score {
    grade_with(q, text, scene, GradeOptions::default())
}

pub fn grade_with(q: &Question, text: &str, scene: &Scene, opts: GradeOptions) -> Score {
    match parse_answer(q.task_kind, text) {
        Ok(a) => grade_answer(q, &a, scene, opts),
        Err(e) => Score::format_error(e.to_string()),
    }
}

fn bool_f(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Per-object direction and distance agreement over every object named by
/// either side; a missing or extra object scores 0 on both.
fn grade_view(truth: &[ViewLine], answer: &[ViewLine]) -> Score {
    let mut names: BTreeSet<&str> = truth.iter().map(|l| l.name.as_str()).collect();
    names.extend(answer.iter().map(|l| l.name.as_str()));
    if names.is_empty() {
        return Score::of(&[("direction", 1.0), ("distance", 1.0)]);
    }
    let (mut dir, mut dist) = (0.0, 0.0);
    for n in &names {
        let t = truth.iter().find(|l| l.name == *n);
        let a: Vec<&ViewLine> = answer.iter().filter(|l| l.name == *n).collect();
        if let (Some(t), [a]) = (t, a.as_slice()) {
            dir += bool_f(t.ego == a.ego);
            dist += bool_f(t.dist == a.dist);
        }
    }
    let k = names.len() as f64;
    Score::of(&[("direction", dir / k), ("distance", dist / k)])
}

/// Grade a parsed answer against the scene.
pub fn grade_answer(q: &Question, a: &Answer, scene: &Scene, opts: GradeOptions) -> Score {
    let fr = Frame::of(scene.spawn);
    let mismatch = || Score::format_error(format!("answer shape does not fit {}", q.task_kind));
    match (&q.payload, a) {
        (Payload::Direction { .. }, Answer::Relation { direction, distance }) => {
            let Some((d, b)) = truth_relation(scene, &q.payload) else { return mismatch() };
            Score::of(&[("direction", bool_f(d == *direction)), ("distance", bool_f(b == *distance))])
        }
        (Payload::PerspTake { .. } | Payload::Act2View { .. } | Payload::Loc2View { .. }, Answer::View { lines }) => {
            match truth_view(scene, &q.payload) {
                Some(t) => grade_view(&t, lines),
                None => mismatch(),
            }
        }
        (Payload::PercDec { view }, Answer::Name { name }) => {
            let ok = anchor_pose(scene, name).is_some_and(|p| object_view(scene, p) == *view);
            Score::of(&[("object", bool_f(ok))])
        }
        (Payload::View2Act { start, view }, Answer::Actions { actions }) => {
            let ok = execute_moves(scene, fr.pose_to_world(*start), actions)
                .is_ok_and(|end| object_view(scene, end) == *view);
            Score::of(&[("view", bool_f(ok))])
        }
        (Payload::AllocMap { names }, Answer::Map { entries }) => {
            let gt: Vec<(f64, f64)> = names.iter().map(|n| local_xy(scene, &fr, n)).collect();
            let pred: Vec<Option<(f64, f64)>> = names
                .iter()
                .map(|n| {
                    single(entries.iter().filter(|e| &e.name == n)).map(|e| (e.position.x as f64, e.position.y as f64))
                })
                .collect();
            let mut facing = 0.0;
            for n in names {
                let truth = scene.object(n).and_then(|o| o.facing).map(|c| fr.cardinal_to_local(c));
                if let Some(e) = single(entries.iter().filter(|e| &e.name == n)) {
                    facing += bool_f(e.facing == truth);
                }
            }
            let facing = if names.is_empty() { 0.0 } else { facing / names.len() as f64 };
            Score::of(&[("position", coordinate_similarity(&pred, &gt)), ("facing", facing)])
        }
        (Payload::MentRot { pose }, Answer::Sequence { names }) => {
            let Some(truth) = rotation_sequence(scene, fr.pose_to_world(*pose)) else { return mismatch() };
            let v = if opts.strict_rotation {
                bool_f(&truth == names)
            } else if truth.is_empty() {
                bool_f(names.is_empty())
            } else {
                lcs_len(&truth, names) as f64 / truth.len() as f64
            };
            Score::of(&[("sequence", v)])
        }
        (Payload::View2Loc { view, with_heading }, Answer::Location { position, heading }) => {
            grade_location(scene, &fr, view, *with_heading, *position, *heading)
        }
        _ => mismatch(),
    }
}

fn single<'a, T>(mut it: impl Iterator<Item = &'a T>) -> Option<&'a T> {
    let first = it.next()?;
    if it.next().is_some() {
        None
    } else {
        Some(first)
    }
}

fn local_xy(scene: &Scene, fr: &Frame, name: &str) -> (f64, f64) {
    let c = fr.to_local(scene.object(name).map(|o| o.position).unwrap_or(fr.origin));
    (c.x as f64, c.y as f64)
}

/// RMS distance of all object positions from the spawn cell.
fn map_scale(scene: &Scene) -> f64 {
    if scene.objects.is_empty() {
        return 0.0;
    }
    let s: i64 = scene.objects.iter().map(|o| o.position.dist_sq(scene.spawn.position)).sum();
    libm::sqrt(s as f64 / scene.objects.len() as f64)
}

fn grade_location(
    scene: &Scene,
    fr: &Frame,
    view: &[ViewLine],
    with_heading: bool,
    position: Cell,
    heading: Option<Cardinal>,
) -> Score {
    let poses: Vec<Pose> = consistent_poses(scene, view).into_iter().map(|p| fr.pose_to_local(p)).collect();
    // Nearest consistent pose, preferring one whose heading agrees.
    let Some(best) = poses.iter().min_by_key(|p| (p.position.dist_sq(position), Some(p.heading) != heading)) else {
        return Score::of(&[("position", 0.0)]);
    };
    let pos = coordinate_similarity_scaled(
        &[Some((position.x as f64, position.y as f64))],
        &[(best.position.x as f64, best.position.y as f64)],
        map_scale(scene),
    );
    if with_heading {
        Score::of(&[("position", pos), ("heading", bool_f(heading == Some(best.heading)))])
    } else {
        Score::of(&[("position", pos)])
    }
}

fn truth_relation(scene: &Scene, p: &Payload) -> Option<(AllocBin, DistBin)> {
    let Payload::Direction { from, to } = p else { return None };
    let a = scene.object(from)?.position;
    let b = scene.object(to)?.position;
    let fr = Frame::of(scene.spawn);
    let dir = spatial::allocentric_bin(fr.to_local(a), fr.to_local(b)).ok()?;
    let dist = spatial::distance_bin_sq(a.dist_sq(b)).ok()?;
    Some((dir, dist))
}

fn truth_view(scene: &Scene, p: &Payload) -> Option<Vec<ViewLine>> {
    let fr = Frame::of(scene.spawn);
    match p {
        Payload::PerspTake { anchor } => Some(object_view(scene, anchor_pose(scene, anchor)?)),
        Payload::Act2View { start, actions } => {
            let end = execute_moves(scene, fr.pose_to_world(*start), actions).ok()?;
            Some(object_view(scene, end))
        }
        Payload::Loc2View { pose } => Some(object_view(scene, fr.pose_to_world(*pose))),
        _ => None,
    }
}

/// The ground-truth answer text for a question.
pub fn oracle_answer(q: &Question, scene: &Scene) -> String {
    let fr = Frame::of(scene.spawn);
    match &q.payload {
        Payload::Direction { .. } => match truth_relation(scene, &q.payload) {
            Some((d, b)) => format!("{d}, {b}"),
            None => String::new(),
        },
        Payload::PerspTake { .. } | Payload::Act2View { .. } | Payload::Loc2View { .. } => {
            render_view(&truth_view(scene, &q.payload).unwrap_or_default())
        }
        Payload::PercDec { view } => scene
            .objects
            .iter()
            .find(|o| anchor_pose(scene, &o.name).is_some_and(|p| object_view(scene, p) == *view))
            .map(|o| o.name.clone())
            .unwrap_or_default(),
        Payload::View2Act { start, view } => single_view_sequences(scene, fr.pose_to_world(*start))
            .into_iter()
            .find(|(_, end)| object_view(scene, *end) == *view)
            .map(|(seq, _)| seq.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("\n"))
            .unwrap_or_default(),
        Payload::AllocMap { names } => names
            .iter()
            .filter_map(|n| {
                let o = scene.object(n)?;
                let facing = o.facing.map(|c| fr.cardinal_to_local(c).as_str()).unwrap_or("none");
                Some(format!("{n}: {}, facing {facing}", fr.to_local(o.position)))
            })
            .collect::<Vec<_>>()
            .join("\n"),
        Payload::MentRot { pose } => rotation_sequence(scene, fr.pose_to_world(*pose)).unwrap_or_default().join(", "),
        Payload::View2Loc { view, with_heading } => match consistent_poses(scene, view).first() {
            Some(&p) => {
                let l = fr.pose_to_local(p);
                if *with_heading {
                    format!("{}, facing {}", l.position, l.heading)
                } else {
                    l.position.to_string()
                }
            }
            None => String::new(),
        },
    }
}

/// `(K/N)·exp(−RMSE/L)` with `L` the RMS norm of the ground-truth points.
///
/// `pred[i]` is the prediction for `gt[i]`, `None` when missing.
pub fn coordinate_similarity(pred: &[Option<(f64, f64)>], gt: &[(f64, f64)]) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let l = libm::sqrt(gt.iter().map(|(x, y)| x * x + y * y).sum::<f64>() / gt.len() as f64);
    coordinate_similarity_scaled(pred, gt, l)
}

/// As [`coordinate_similarity`] with an explicit length scale.
pub fn coordinate_similarity_scaled(pred: &[Option<(f64, f64)>], gt: &[(f64, f64)], scale: f64) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let mut k = 0usize;
    let mut se = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        if let Some(p) = p {
            k += 1;
            se += (p.0 - g.0) * (p.0 - g.0) + (p.1 - g.1) * (p.1 - g.1);
        }
    }
    if k == 0 {
        return 0.0;
    }
    let rmse = libm::sqrt(se / k as f64);
    let decay = if scale > 0.0 {
        libm::exp(-rmse / scale)
    } else if rmse == 0.0 {
        1.0
    } else {
        0.0
    };
    (k as f64 / gt.len() as f64) * decay
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = alloc::vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, SceneConfig};

    fn scene(seed: u64) -> Scene {
        generate_scene(&SceneConfig::default().with_seed(seed)).unwrap()
    }

    #[test]
    fn twenty_seven_per_scene_and_deterministic() {
        let s = scene(3);
        let a = generate_questions(&s, 3, 11).unwrap();
        assert_eq!(a.len(), 27);
        assert_eq!(a, generate_questions(&s, 3, 11).unwrap());
        for k in TaskKind::ALL {
            assert_eq!(a.iter().filter(|q| q.task_kind == k).count(), 3);
        }
    }

    #[test]
    fn oracle_scores_one() {
        let s = scene(5);
        for q in generate_questions(&s, 3, 1).unwrap() {
            let sc = grade(&q, &oracle_answer(&q, &s), &s);
            assert_eq!(sc.value, 1.0, "{} {:?} {:?}", q.id, q.payload, sc);
        }
    }

    #[test]
    fn direction_half_credit() {
        let s = scene(2);
        let q = generate_questions(&s, 1, 0).unwrap().remove(0);
        let (d, b) = truth_relation(&s, &q.payload).unwrap();
        let wrong = DistBin::ALL.iter().copied().find(|&x| x != b).unwrap();
        assert_eq!(grade(&q, &format!("{d}, {wrong}"), &s).value, 0.5);
    }

    #[test]
    fn format_errors_score_zero() {
        let s = scene(2);
        for q in generate_questions(&s, 1, 0).unwrap() {
            let sc = grade(&q, "???", &s);
            assert_eq!(sc.value, 0.0);
            let free_text = matches!(q.task_kind, TaskKind::PercDec | TaskKind::MentRot);
            assert!(sc.format_error.is_some() || free_text, "{}", q.task_kind);
        }
    }

    #[test]
    fn lcs_basic() {
        assert_eq!(lcs_len(&["a", "b", "c", "d"], &["a", "c", "d"]), 3);
        assert_eq!(lcs_len::<u8>(&[], &[1]), 0);
        assert_eq!(lcs_len(&[1, 2, 3], &[3, 2, 1]), 1);
    }

    #[test]
    fn coordinate_similarity_cases() {
        let gt = [(0.0, 0.0), (4.0, 0.0)];
        assert_eq!(coordinate_similarity(&[Some(gt[0]), Some(gt[1])], &gt), 1.0);
        assert_eq!(coordinate_similarity(&[Some(gt[0]), None], &gt), 0.5);
        let v = coordinate_similarity(&[Some((0.0, 0.0)), Some((4.0, 3.0))], &gt);
        assert!((v - libm::exp(-0.75)).abs() < 1e-12);
    }

    #[test]
    fn answer_parsing() {
        assert!(parse_answer(TaskKind::Direction, "NE, mid").is_ok());
        assert!(parse_answer(TaskKind::Direction, "north-east, mid").is_err());
        let a = parse_answer(TaskKind::AllocMap, "lamp: (1, -2), facing W\nsofa: (0, 3), facing none").unwrap();
        let Answer::Map { entries } = a else { panic!() };
        assert_eq!(entries[0].position, Cell::new(1, -2));
        assert_eq!(entries[1].facing, None);
        assert_eq!(
            parse_answer(TaskKind::View2Loc, "(2, 3), facing S").unwrap(),
            Answer::Location { position: Cell::new(2, 3), heading: Some(Cardinal::S) }
        );
        assert!(parse_answer(TaskKind::View2Act, "Observe").is_err());
        assert!(parse_answer(TaskKind::Act2View, "lamp is front, near, facing N").is_ok());
    }
}
