//! The episode state machine: actions, observations, costs and budgets.
//!
//! Perception actions (`Observe`, `Query`) each consume one turn of the
//! exploration budget. Movement (`Goto`, `Rotate`) is free but limited to a
//! fixed number of moves between two perception actions.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geom::{Cardinal, Cell, Frame, Pose};
use crate::scenegen::{Scene, SceneConfig};
use crate::spatial::{self, Entity, Sighting};

pub const DEFAULT_BUDGET: u32 = 20;
pub const DEFAULT_MAX_MOVES: u32 = 8;

/// Default exploration budget for a room count.
pub fn default_budget(room_count: u32) -> u32 {
    if room_count >= 4 {
        40
    } else {
        DEFAULT_BUDGET
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Goto { target: Entity },
    Rotate { degrees: u16 },
    Observe,
    Query { target: String },
    Terminate,
}

impl Action {
    pub fn goto_object(name: &str) -> Action {
        Action::Goto { target: Entity::Object(name.to_string()) }
    }

    pub fn is_perception(&self) -> bool {
        matches!(self, Action::Observe | Action::Query { .. })
    }

    pub fn is_move(&self) -> bool {
        matches!(self, Action::Goto { .. } | Action::Rotate { .. })
    }

    pub fn cost(&self) -> u32 {
        match self {
            Action::Observe => 1,
            Action::Query { .. } => 2,
            _ => 0,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Goto { target } => write!(f, "Goto({target})"),
            Action::Rotate { degrees } => write!(f, "Rotate({degrees})"),
            Action::Observe => f.write_str("Observe"),
            Action::Query { target } => write!(f, "Query({target})"),
            Action::Terminate => f.write_str("Terminate"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse action: {0}")]
pub struct ParseActionError(pub String);

impl FromStr for Action {
    type Err = ParseActionError;

    /// Accepts `Goto(x)`, `Rotate(90)`, `Observe`, `Query(x)`, `Terminate`.
    fn from_str(s: &str) -> Result<Action, ParseActionError> {
        let t = s.trim();
        let err = || ParseActionError(t.to_string());
        let (head, arg) = match t.find('(') {
            Some(i) if t.ends_with(')') => (t[..i].trim(), Some(t[i + 1..t.len() - 1].trim())),
            Some(_) => return Err(err()),
            None => (t, None),
        };
        match (head, arg) {
            ("Observe", None) | ("Observe", Some("")) => Ok(Action::Observe),
            ("Terminate", None) | ("Terminate", Some("")) => Ok(Action::Terminate),
            ("Goto", Some(a)) if !a.is_empty() => Ok(Action::Goto { target: Entity::parse(a) }),
            ("Query", Some(a)) if !a.is_empty() => Ok(Action::Query { target: a.to_string() }),
            ("Rotate", Some(a)) => a.parse().map(|degrees| Action::Rotate { degrees }).map_err(|_| err()),
            _ => Err(err()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outcome {
    /// Acknowledgement of a movement action.
    Moved,
    Observation {
        sightings: Vec<Sighting>,
    },
    /// Query reply, in the agent frame (origin at the spawn cell, +y along
    /// the spawn heading).
    Located {
        target: String,
        position: Cell,
    },
    Terminated,
}

impl Outcome {
    pub fn sightings(&self) -> Option<&[Sighting]> {
        match self {
            Outcome::Observation { sightings } => Some(sightings),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Outcome::Moved => "ok".to_string(),
            Outcome::Observation { sightings } => spatial::render_sightings(sightings),
            Outcome::Located { target, position } => format!("{target} is at {position}"),
            Outcome::Terminated => "episode terminated".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub outcome: Outcome,
    pub cost_delta: u32,
    /// Actions taken so far in this phase, this one included.
    pub step_index: u32,
    /// Perception turns consumed so far in this phase.
    pub turn: u32,
    pub terminated: bool,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("target not visible: {0}")]
    TargetNotVisible(String),
    #[error("unknown target: {0}")]
    UnknownTarget(String),
    #[error("rotation must be 90, 180 or 270 degrees, got {0}")]
    InvalidRotation(u16),
    #[error("at most {0} moves are allowed between perception actions")]
    MoveLimit(u32),
    #[error("no free cell next to {0}")]
    NoFreeCell(String),
    #[error("episode is over")]
    EpisodeOver,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Exploration,
    Revision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub budget: u32,
    pub max_moves_per_turn: u32,
}

impl EnvConfig {
    pub fn for_scene(scene: &Scene) -> EnvConfig {
        EnvConfig { budget: default_budget(scene.config.room_count), max_moves_per_turn: DEFAULT_MAX_MOVES }
    }
}

/// What the agent is told at reset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Briefing {
    pub room_count: u32,
    pub object_names: Vec<String>,
    pub grid: (i32, i32),
    pub budget: u32,
    pub max_moves_per_turn: u32,
    pub legend: String,
}

pub const ACTION_LEGEND: &str = "Actions: Goto(<object name> | doorway <id>) moves next to a visible object or onto a visible doorway; \
Rotate(90|180|270) turns clockwise; Observe lists what is in your 90-degree field of view (cost 1); \
Query(<object name>) returns a visible object's coordinates in your starting frame (cost 2); Terminate ends exploration. \
Each Observe or Query uses one turn; moves are free but limited between turns. \
Coordinates: your starting cell is (0, 0), your starting heading is +y and is called N, your right is +x and is called E.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub phase: Phase,
    pub pose_before: Pose,
    pub action: Action,
    pub result: StepResult,
    pub pose_after: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub config: SceneConfig,
    pub env: EnvConfig,
    pub entries: Vec<LogEntry>,
}

impl EpisodeLog {
    pub fn phase_entries(&self, phase: Phase) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(move |e| e.phase == phase)
    }

    /// Total cost, `#Observe + 2 #Query`.
    pub fn total_cost(&self) -> u32 {
        self.entries.iter().map(|e| e.result.cost_delta).sum()
    }
}

/// Where `Goto(target)` from `from` lands, ignoring visibility.
///
/// Objects: the free 4-neighbour inside the object's room closest to the
/// previous position (ties N, E, S, W), facing the object. Doorways: the
/// doorway cell, facing across the wall away from the previous position
/// (towards `connects.1` when the previous position touches neither side).
pub fn goto_landing(scene: &Scene, from: Pose, target: &Entity) -> Result<Pose, EnvError> {
    match target {
        Entity::Object(name) => {
            let obj = scene.object(name).ok_or_else(|| EnvError::UnknownTarget(name.clone()))?;
            let room = scene.room(obj.room_id).ok_or_else(|| EnvError::UnknownTarget(name.clone()))?;
            let mut best: Option<(i64, Cell)> = None;
            for n in obj.position.neighbors4() {
                if !room.contains(n) || scene.object_at(n).is_some() {
                    continue;
                }
                let d = n.dist_sq(from.position);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, n));
                }
            }
            let (_, cell) = best.ok_or_else(|| EnvError::NoFreeCell(name.clone()))?;
            let heading = Cardinal::toward(cell, obj.position).expect("4-neighbour");
            Ok(Pose::new(cell, heading))
        }
        Entity::Doorway(id) => {
            let d = scene.doorway(*id).ok_or_else(|| EnvError::UnknownTarget(target.to_string()))?;
            let (a, b) = d.connects;
            let toward = |room: u32| {
                let r = scene.room(room)?;
                Cardinal::ALL.into_iter().find(|&c| r.contains(d.cell.step(c)))
            };
            // From a doorway cell the previous side is the shared room.
            let prev_rooms = scene.rooms_visible_from(from.position);
            let heading = if prev_rooms.contains(&b) && !prev_rooms.contains(&a) { toward(a) } else { toward(b) };
            let heading = heading.ok_or_else(|| EnvError::UnknownTarget(target.to_string()))?;
            Ok(Pose::new(d.cell, heading))
        }
    }
}

/// One episode over a scene.
#[derive(Clone, Debug)]
pub struct Env {
    scene: Scene,
    cfg: EnvConfig,
    frame: Frame,
    pose: Pose,
    phase: Phase,
    step_index: u32,
    turn: u32,
    moves_since_turn: u32,
    terminated: bool,
    last_observed: BTreeSet<Entity>,
    log: EpisodeLog,
}

impl Env {
    pub fn new(scene: Scene, cfg: EnvConfig) -> Env {
        let log =
            EpisodeLog { seed: scene.config.seed, config: scene.config.clone(), env: cfg.clone(), entries: Vec::new() };
        Env {
            frame: Frame::of(scene.spawn),
            pose: scene.spawn,
            scene,
            cfg,
            phase: Phase::Exploration,
            step_index: 0,
            turn: 0,
            moves_since_turn: 0,
            terminated: false,
            last_observed: BTreeSet::new(),
            log,
        }
    }

    /// Return to the spawn pose with a fresh log and counters.
    pub fn reset(&mut self) -> Briefing {
        *self = Env::new(self.scene.clone(), self.cfg.clone());
        self.briefing()
    }

    pub fn briefing(&self) -> Briefing {
        Briefing {
            room_count: self.scene.room_count_public,
            object_names: self.scene.object_names.clone(),
            grid: self.scene.config.global_grid,
            budget: self.cfg.budget,
            max_moves_per_turn: self.cfg.max_moves_per_turn,
            legend: ACTION_LEGEND.to_string(),
        }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    /// The agent frame: spawn cell at the origin, spawn heading along +y.
    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn turn(&self) -> u32 {
        self.turn
    }

    pub fn step_index(&self) -> u32 {
        self.step_index
    }

    pub fn is_over(&self) -> bool {
        self.terminated || self.turn >= self.cfg.budget
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn into_log(self) -> EpisodeLog {
        self.log
    }

    /// Swap in a perturbed scene and start a revision phase from the current
    /// pose with fresh counters. The transcript is kept.
    pub fn begin_revision(&mut self, scene: Scene, budget: u32) {
        self.scene = scene;
        self.cfg.budget = budget;
        self.phase = Phase::Revision;
        self.step_index = 0;
        self.turn = 0;
        self.moves_since_turn = 0;
        self.terminated = false;
        self.last_observed.clear();
    }

    /// Entities a `Goto`/`Query` may target right now.
    pub fn visible_now(&self) -> BTreeSet<Entity> {
        let mut out = self.last_observed.clone();
        if let Ok(s) = spatial::visible_entities(&self.scene, self.pose) {
            out.extend(s.into_iter().map(|s| s.entity));
        }
        out
    }

    fn check_visible(&self, e: &Entity) -> Result<(), EnvError> {
        if self.last_observed.contains(e) {
            return Ok(());
        }
        let live =
            spatial::visible_entities(&self.scene, self.pose).map_err(|_| EnvError::TargetNotVisible(e.to_string()))?;
        if live.iter().any(|s| &s.entity == e) {
            Ok(())
        } else {
            Err(EnvError::TargetNotVisible(e.to_string()))
        }
    }

    /// Apply one action. On error the state is unchanged.
    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.is_over() {
            return Err(EnvError::EpisodeOver);
        }
        if action.is_move() && self.moves_since_turn >= self.cfg.max_moves_per_turn {
            return Err(EnvError::MoveLimit(self.cfg.max_moves_per_turn));
        }
        let before = self.pose;
        let outcome = match &action {
            Action::Goto { target } => {
                let exists = match target {
                    Entity::Object(n) => self.scene.object(n).is_some(),
                    Entity::Doorway(id) => self.scene.doorway(*id).is_some(),
                };
                if !exists {
                    return Err(EnvError::UnknownTarget(target.to_string()));
                }
                self.check_visible(target)?;
                self.pose = goto_landing(&self.scene, self.pose, target)?;
                Outcome::Moved
            }
            Action::Rotate { degrees } => {
                let q = match degrees {
                    90 => 1,
                    180 => 2,
                    270 => 3,
                    d => return Err(EnvError::InvalidRotation(*d)),
                };
                self.pose = self.pose.rotated(q);
                Outcome::Moved
            }
            Action::Observe => {
                let mut sightings = spatial::visible_entities(&self.scene, self.pose).expect("pose stays legal");
                for s in &mut sightings {
                    s.facing = s.facing.map(|c| self.frame.cardinal_to_local(c));
                }
                self.last_observed = sightings.iter().map(|s| s.entity.clone()).collect();
                Outcome::Observation { sightings }
            }
            Action::Query { target } => {
                let obj = self.scene.object(target).ok_or_else(|| EnvError::UnknownTarget(target.clone()))?;
                self.check_visible(&Entity::Object(target.clone()))?;
                Outcome::Located { target: target.clone(), position: self.frame.to_local(obj.position) }
            }
            Action::Terminate => {
                self.terminated = true;
                Outcome::Terminated
            }
        };
        self.step_index += 1;
        if action.is_perception() {
            self.turn += 1;
            self.moves_since_turn = 0;
        } else if action.is_move() {
            self.moves_since_turn += 1;
        }
        let result = StepResult {
            outcome,
            cost_delta: action.cost(),
            step_index: self.step_index,
            turn: self.turn,
            terminated: self.terminated,
            budget_exhausted: self.turn >= self.cfg.budget,
        };
        self.log.entries.push(LogEntry {
            phase: self.phase,
            pose_before: before,
            action,
            result: result.clone(),
            pose_after: self.pose,
        });
        Ok(result)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("log was recorded on a different scene")]
    SceneMismatch,
    #[error("replay diverges at entry {index}: {detail}")]
    Divergence { index: usize, detail: String },
}

/// Re-execute a log's actions on `scene` and check every result.
///
/// Revision-phase entries need the perturbed scene, so pass the scene each
/// phase ran on: `revision_scene` is used from the first revision entry on.
pub fn replay(log: &EpisodeLog, scene: &Scene, revision_scene: Option<&Scene>) -> Result<EpisodeLog, ReplayError> {
    if log.config != scene.config || log.seed != scene.config.seed {
        return Err(ReplayError::SceneMismatch);
    }
    let mut env = Env::new(scene.clone(), log.env.clone());
    for (index, e) in log.entries.iter().enumerate() {
        if e.phase == Phase::Revision && env.phase() == Phase::Exploration {
            let rs = revision_scene.ok_or(ReplayError::SceneMismatch)?;
            let budget = env.config().budget;
            env.begin_revision(rs.clone(), budget);
        }
        if env.pose() != e.pose_before {
            return Err(ReplayError::Divergence { index, detail: "pose before differs".to_string() });
        }
        let r = env.step(e.action.clone()).map_err(|err| ReplayError::Divergence { index, detail: err.to_string() })?;
        if r != e.result {
            return Err(ReplayError::Divergence { index, detail: "result differs".to_string() });
        }
        if env.pose() != e.pose_after {
            return Err(ReplayError::Divergence { index, detail: "pose after differs".to_string() });
        }
    }
    Ok(env.into_log())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, SceneConfig};

    fn env(seed: u64) -> Env {
        let s = generate_scene(&SceneConfig::default().with_seed(seed)).unwrap();
        let cfg = EnvConfig::for_scene(&s);
        Env::new(s, cfg)
    }

    #[test]
    fn action_text() {
        for a in [
            Action::Observe,
            Action::Terminate,
            Action::Rotate { degrees: 270 },
            Action::goto_object("lamp"),
            Action::Goto { target: Entity::Doorway(1) },
            Action::Query { target: "sofa".into() },
        ] {
            assert_eq!(a.to_string().parse::<Action>().unwrap(), a);
        }
        assert!("Rotate(45x)".parse::<Action>().is_err());
        assert!("Jump".parse::<Action>().is_err());
    }

    #[test]
    fn rotate_costs_nothing() {
        let mut e = env(7);
        let h = e.pose().heading;
        let r = e.step(Action::Rotate { degrees: 90 }).unwrap();
        assert_eq!(e.pose().heading, h.rotate_cw(1));
        assert_eq!((r.cost_delta, r.turn, r.step_index), (0, 0, 1));
        assert_eq!(e.step(Action::Rotate { degrees: 45 }), Err(EnvError::InvalidRotation(45)));
    }

    #[test]
    fn goto_unseen_is_rejected_without_state_change() {
        let mut e = env(7);
        let hidden = e
            .scene()
            .objects
            .iter()
            .find(|o| !e.visible_now().contains(&Entity::Object(o.name.clone())))
            .unwrap()
            .name
            .clone();
        let before = (e.pose(), e.step_index());
        assert!(matches!(e.step(Action::goto_object(&hidden)), Err(EnvError::TargetNotVisible(_))));
        assert_eq!((e.pose(), e.step_index()), before);
    }

    #[test]
    fn budget_closes_episode() {
        let mut e = env(3);
        for _ in 0..DEFAULT_BUDGET {
            e.step(Action::Observe).unwrap();
        }
        assert!(e.is_over());
        assert_eq!(e.step(Action::Observe), Err(EnvError::EpisodeOver));
        assert_eq!(e.log().total_cost(), DEFAULT_BUDGET);
    }

    #[test]
    fn move_limit() {
        let mut e = env(3);
        for _ in 0..DEFAULT_MAX_MOVES {
            e.step(Action::Rotate { degrees: 90 }).unwrap();
        }
        assert_eq!(e.step(Action::Rotate { degrees: 90 }), Err(EnvError::MoveLimit(DEFAULT_MAX_MOVES)));
        e.step(Action::Observe).unwrap();
        e.step(Action::Rotate { degrees: 90 }).unwrap();
    }
}
