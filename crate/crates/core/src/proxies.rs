//! Scripted reference explorers.
//!
//! `Scout` sweeps each location with four quarter-turn views and advances
//! through doorways in discovery order. `Strategist` keeps a belief and picks
//! viewpoints that split the largest unresolved domain.
//!
//! Both are driven one action at a time: `next_action` reads the environment
//! and `record` is called with every result. The Strategist reads true poses
//! and geometry from the environment to plan; the Scout only uses its own
//! observations and rotation count.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefError, BeliefState, CellSet};
use crate::env::{self, Action, Env, EnvConfig, EnvError, EpisodeLog, Outcome, StepResult};
use crate::geom::{Cardinal, Cell, Frame, Pose};
use crate::scenegen::Scene;
use crate::spatial::{self, DistBin, EgoBin, Entity};

/// Turn budget for the Strategist when run as a reference explorer.
pub const STRATEGIST_BUDGET: u32 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyKind {
    Scout,
    Strategist,
}

impl ProxyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProxyKind::Scout => "scout",
            ProxyKind::Strategist => "strategist",
        }
    }

    pub fn parse(s: &str) -> Option<ProxyKind> {
        match s.trim() {
            "scout" => Some(ProxyKind::Scout),
            "strategist" => Some(ProxyKind::Strategist),
            _ => None,
        }
    }

    /// Environment settings used when the proxy produces a reference log.
    pub fn env_config(self, scene: &Scene) -> EnvConfig {
        let mut cfg = EnvConfig::for_scene(scene);
        if self == ProxyKind::Strategist {
            cfg.budget = cfg.budget.max(STRATEGIST_BUDGET);
        }
        cfg
    }
}

pub trait Proxy: Send {
    fn kind(&self) -> ProxyKind;
    fn next_action(&mut self, env: &Env) -> Action;
    fn record(&mut self, env: &Env, action: &Action, result: &StepResult);
}

pub fn make_proxy(kind: ProxyKind, scene: &Scene) -> Box<dyn Proxy> {
    match kind {
        ProxyKind::Scout => Box::new(Scout::new(&scene.object_names)),
        ProxyKind::Strategist => Box::new(Strategist::new(scene)),
    }
}

fn quarters(q: u8) -> Option<Action> {
    match q % 4 {
        0 => None,
        q => Some(Action::Rotate { degrees: q as u16 * 90 }),
    }
}

/// Visit, sweep, advance.
#[derive(Clone, Debug)]
pub struct Scout {
    names: BTreeSet<String>,
    sighted: BTreeSet<String>,
    pending: VecDeque<u32>,
    known_doors: BTreeSet<u32>,
    visited_doors: BTreeSet<u32>,
    /// Quarter turns clockwise from the heading at arrival.
    q: u8,
    views_done: BTreeSet<u8>,
    seen_at: BTreeMap<u32, u8>,
    at_doorway: bool,
    queue: VecDeque<Action>,
}

impl Scout {
    pub fn new(names: &[String]) -> Scout {
        Scout {
            names: names.iter().cloned().collect(),
            sighted: BTreeSet::new(),
            pending: VecDeque::new(),
            known_doors: BTreeSet::new(),
            visited_doors: BTreeSet::new(),
            q: 0,
            views_done: BTreeSet::new(),
            seen_at: BTreeMap::new(),
            at_doorway: false,
            queue: VecDeque::new(),
        }
    }

    /// Views to take at the current location. On a doorway the view back
    /// into the room just left is skipped: it only shows what was swept.
    fn planned_views(&self) -> &'static [u8] {
        if self.at_doorway {
            &[0, 1, 3]
        } else {
            &[0, 1, 2, 3]
        }
    }

    fn look(&mut self, view: u8) {
        if let Some(r) = quarters((view + 4 - self.q) % 4) {
            self.queue.push_back(r);
        }
        self.queue.push_back(Action::Observe);
    }

    fn plan(&mut self) -> Action {
        if self.sighted.is_superset(&self.names) {
            return Action::Terminate;
        }
        if let Some(&v) = self.planned_views().iter().find(|v| !self.views_done.contains(v)) {
            self.look(v);
            return self.queue.pop_front().expect("planned");
        }
        self.pending.retain(|d| !self.visited_doors.contains(d));
        if self.pending.is_empty() {
            return Action::Terminate;
        }
        let target = self.pending.iter().copied().find(|d| self.seen_at.contains_key(d));
        match target {
            Some(d) => {
                if let Some(r) = quarters((self.seen_at[&d] + 4 - self.q) % 4) {
                    self.queue.push_back(r);
                }
                self.queue.push_back(Action::Goto { target: Entity::Doorway(d) });
                self.queue.pop_front().expect("planned")
            }
            None if !self.views_done.contains(&2) => {
                self.look(2);
                self.queue.pop_front().expect("planned")
            }
            None => Action::Terminate,
        }
    }
}

impl Proxy for Scout {
    fn kind(&self) -> ProxyKind {
        ProxyKind::Scout
    }

    fn next_action(&mut self, _env: &Env) -> Action {
        match self.queue.pop_front() {
            Some(a) => a,
            None => self.plan(),
        }
    }

    fn record(&mut self, _env: &Env, action: &Action, result: &StepResult) {
        match (action, &result.outcome) {
            (Action::Rotate { degrees }, _) => self.q = (self.q + (degrees / 90) as u8) % 4,
            (Action::Goto { target }, _) => {
                if let Entity::Doorway(d) = target {
                    self.visited_doors.insert(*d);
                }
                self.at_doorway = matches!(target, Entity::Doorway(_));
                self.q = 0;
                self.views_done.clear();
                self.seen_at.clear();
            }
            (Action::Observe, Outcome::Observation { sightings }) => {
                self.views_done.insert(self.q);
                for s in sightings {
                    match &s.entity {
                        Entity::Object(n) => {
                            self.sighted.insert(n.clone());
                        }
                        Entity::Doorway(d) => {
                            self.seen_at.insert(*d, self.q);
                            if self.known_doors.insert(*d) && !self.visited_doors.contains(d) {
                                self.pending.push_back(*d);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
}

/// What a hypothetical object at some cell would produce from a viewpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Signature {
    Absent,
    Unseen,
    Seen(EgoBin, DistBin),
}

/// Cells of the rooms visible from a position, for fast signature lookup.
fn view_mask(scene: &Scene, at: Cell) -> CellSet {
    let (w, h) = scene.config.global_grid;
    let rooms = scene.rooms_visible_from(at);
    CellSet::from_cells(w, h, scene.rooms.iter().filter(|r| rooms.contains(&r.id)).flat_map(|r| r.cells()))
}

fn signature(vp: Pose, mask: &CellSet, v: Cell) -> Signature {
    if v == vp.position {
        return Signature::Absent;
    }
    if !mask.contains(v) {
        return Signature::Unseen;
    }
    match (spatial::egocentric_bin(vp, v), spatial::distance_bin_sq(vp.position.dist_sq(v))) {
        (Ok(Some(ego)), Ok(d)) => Signature::Seen(ego, d),
        _ => Signature::Unseen,
    }
}

/// `sum n_k^2` over signature classes of `d` seen from `vp` (that is, `N`
/// times the expected domain size after observing) and the class count.
/// Only cells inside `mask` can be seen; the rest form the unseen class.
fn split_score(vp: Pose, mask: &CellSet, d: &CellSet) -> (u64, usize) {
    let mut inside = d.clone();
    inside.intersect(mask);
    let mut classes: BTreeMap<Signature, u64> = BTreeMap::new();
    for v in inside.iter() {
        *classes.entry(signature(vp, mask, v)).or_default() += 1;
    }
    let rest = (d.len() - inside.len()) as u64;
    if rest > 0 {
        let absent = d.contains(vp.position) && !mask.contains(vp.position);
        let unseen = rest - absent as u64;
        if unseen > 0 {
            *classes.entry(Signature::Unseen).or_default() += unseen;
        }
        if absent {
            *classes.entry(Signature::Absent).or_default() += 1;
        }
    }
    (classes.values().map(|n| n * n).sum(), classes.len())
}

/// A short sequence of `Goto`s followed by a heading to observe in.
#[derive(Clone, Debug)]
struct Plan {
    hops: Vec<Entity>,
    pose: Pose,
}

/// Reachable positions within `depth` Gotos. Each entry keeps the first
/// path found; expansion order is deterministic.
fn reachable(scene: &Scene, start: Pose, depth: usize) -> Vec<Plan> {
    let mut out = vec![Plan { hops: Vec::new(), pose: start }];
    let mut seen: BTreeSet<Cell> = BTreeSet::new();
    seen.insert(start.position);
    let mut frontier = 0;
    for _ in 0..depth {
        let end = out.len();
        for i in frontier..end {
            let from = out[i].clone();
            let Ok(mut cands) = spatial::visibility_candidates(scene, from.pose.position) else { continue };
            cands.sort_by(|a, b| a.entity.cmp(&b.entity));
            for c in cands {
                if let Ok(landing) = env::goto_landing(scene, from.pose, &c.entity) {
                    if seen.insert(landing.position) {
                        let mut hops = from.hops.clone();
                        hops.push(c.entity.clone());
                        out.push(Plan { hops, pose: landing });
                    }
                }
            }
        }
        frontier = end;
    }
    out
}

/// Actions that execute `hops` from `start`, turning first whenever the next
/// target is outside the live view. Returns the actions and the final pose.
fn hop_actions(scene: &Scene, start: Pose, hops: &[Entity]) -> (Vec<Action>, Pose) {
    let mut pose = start;
    let mut acts = Vec::new();
    for e in hops {
        let pos = match e {
            Entity::Object(n) => scene.object(n).map(|o| o.position),
            Entity::Doorway(d) => scene.doorway(*d).map(|d| d.cell),
        }
        .expect("planned over scene entities");
        if !spatial::in_fov(pose, pos) {
            let h = spatial::owning_heading(pose.position, pos).expect("distinct cells");
            acts.extend(quarters(pose.heading.quarters_to(h)));
            pose.heading = h;
        }
        acts.push(Action::Goto { target: e.clone() });
        pose = env::goto_landing(scene, pose, e).expect("planned landing");
    }
    (acts, pose)
}

/// Belief-driven explorer.
#[derive(Clone, Debug)]
pub struct Strategist {
    belief: BeliefState,
    known_doors: BTreeSet<u32>,
    pending: VecDeque<u32>,
    visited_doors: BTreeSet<u32>,
    stuck: BTreeSet<String>,
    abandoned: BTreeSet<String>,
    sweep_left: u8,
    arriving: Option<u32>,
    queue: VecDeque<Action>,
    failed: Option<BeliefError>,
}

/// Viewpoint ranking: squared class sizes, spill-over onto other domains, hops.
type ViewKey = (u64, u64, usize);

impl Strategist {
    pub fn new(scene: &Scene) -> Strategist {
        Strategist {
            belief: BeliefState::for_scene(scene),
            known_doors: BTreeSet::new(),
            pending: VecDeque::new(),
            visited_doors: BTreeSet::new(),
            stuck: BTreeSet::new(),
            abandoned: BTreeSet::new(),
            sweep_left: 4,
            arriving: None,
            queue: VecDeque::new(),
            failed: None,
        }
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    fn all_resolved(&self) -> bool {
        self.belief.domains().all(|(_, d)| d.len() == 1)
    }

    /// Unresolved objects whose domain touches the rooms visible from here,
    /// largest domain first, then by name.
    fn in_room_targets(&self, scene: &Scene, pose: Pose) -> Vec<String> {
        let rooms = scene.rooms_visible_from(pose.position);
        let mut t: Vec<(usize, &str)> = self
            .belief
            .domains()
            .filter(|(n, d)| d.len() > 1 && !self.stuck.contains(*n))
            .filter(|(_, d)| d.iter().any(|c| scene.room_at(c).is_some_and(|r| rooms.contains(&r))))
            .map(|(n, d)| (d.len(), n))
            .collect();
        t.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        t.into_iter().map(|(_, n)| n.to_string()).collect()
    }

    /// Best viewpoint for `target`, if any splits its domain. Otherwise a
    /// viewpoint that sees every cell of the domain, to `Query` from.
    fn best_view(&self, scene: &Scene, pose: Pose, target: &str) -> Option<(Vec<Action>, bool)> {
        self.best_view_within(scene, pose, target, 2)
    }

    fn best_view_within(&self, scene: &Scene, pose: Pose, target: &str, depth: usize) -> Option<(Vec<Action>, bool)> {
        let d = self.belief.domain(target)?;
        let others: Vec<&CellSet> =
            self.belief.domains().filter(|(n, dd)| *n != target && dd.len() > 1).map(|(_, dd)| dd).collect();
        let mut best: Option<(ViewKey, Vec<Entity>, Cardinal)> = None;
        let mut query_from: Option<(Vec<Entity>, Cardinal)> = None;
        for plan in reachable(scene, pose, depth) {
            let mask = view_mask(scene, plan.pose.position);
            for h in Cardinal::ALL {
                let vp = Pose::new(plan.pose.position, h);
                let (score, classes) = split_score(vp, &mask, d);
                if classes < 2 {
                    if query_from.is_none() && d.iter().all(|v| matches!(signature(vp, &mask, v), Signature::Seen(..)))
                    {
                        query_from = Some((plan.hops.clone(), h));
                    }
                    continue;
                }
                // Secondary: expected leftover over the other unresolved
                // domains, scaled to an integer so ties are exact.
                let rest: u64 =
                    others.iter().map(|od| split_score(vp, &mask, od).0 * 1_000_000 / od.len() as u64).sum();
                let key = (score, rest, plan.hops.len());
                if best.as_ref().is_none_or(|(k, _, _)| key < *k) {
                    best = Some((key, plan.hops.clone(), h));
                }
            }
        }
        let (hops, h, query) = match (best, query_from) {
            (Some((_, hops, h)), _) => (hops, h, false),
            (None, Some((hops, h))) => (hops, h, true),
            (None, None) => return None,
        };
        let (mut acts, at) = hop_actions(scene, pose, &hops);
        acts.extend(quarters(at.heading.quarters_to(h)));
        acts.push(if query { Action::Query { target: target.to_string() } } else { Action::Observe });
        Some((acts, query))
    }

    /// Shortest Goto path to doorway `door`, split into batches that respect
    /// the per-turn move limit.
    fn route_to(&self, scene: &Scene, pose: Pose, door: u32, max_moves: u32) -> Option<Vec<Action>> {
        let target = scene.doorway(door)?.cell;
        let plan = reachable(scene, pose, 6).into_iter().find(|p| p.pose.position == target)?;
        let (acts, _) = hop_actions(scene, pose, &plan.hops);
        let mut out = Vec::new();
        let mut moves = 0;
        for a in acts {
            if moves + 1 > max_moves {
                out.push(Action::Observe);
                moves = 0;
            }
            out.push(a);
            moves += 1;
        }
        Some(out)
    }

    fn plan(&mut self, env: &Env) -> Action {
        if self.failed.is_some() || self.all_resolved() {
            return Action::Terminate;
        }
        let scene = env.scene();
        let pose = env.pose();
        if self.sweep_left > 0 {
            if self.sweep_left < 4 {
                self.queue.push_back(Action::Rotate { degrees: 90 });
            }
            self.queue.push_back(Action::Observe);
            return self.queue.pop_front().expect("planned");
        }
        for target in self.in_room_targets(scene, pose) {
            match self.best_view(scene, pose, &target) {
                Some((acts, _)) => {
                    self.queue.extend(acts);
                    return self.queue.pop_front().expect("planned");
                }
                None => {
                    self.stuck.insert(target);
                }
            }
        }
        self.pending.retain(|d| !self.visited_doors.contains(d));
        while let Some(d) = self.pending.pop_front() {
            self.visited_doors.insert(d);
            match self.route_to(scene, pose, d, env.config().max_moves_per_turn) {
                Some(acts) if !acts.is_empty() => {
                    self.arriving = Some(d);
                    self.queue.extend(acts);
                    return self.queue.pop_front().expect("planned");
                }
                _ => {}
            }
        }
        // Every room is swept: chase what is left from wherever it can be
        // split, however far away.
        let mut left: Vec<(usize, String)> = self
            .belief
            .domains()
            .filter(|(n, d)| d.len() > 1 && !self.abandoned.contains(*n))
            .map(|(n, d)| (d.len(), n.to_string()))
            .collect();
        left.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        for (_, target) in left {
            if let Some((acts, _)) = self.best_view_within(scene, pose, &target, 5) {
                let mut moves = 0;
                for a in acts {
                    if a.is_move() {
                        if moves == env.config().max_moves_per_turn {
                            self.queue.push_back(Action::Observe);
                            moves = 0;
                        }
                        moves += 1;
                    }
                    self.queue.push_back(a);
                }
                return self.queue.pop_front().expect("planned");
            }
            self.abandoned.insert(target);
        }
        Action::Terminate
    }
}

impl Proxy for Strategist {
    fn kind(&self) -> ProxyKind {
        ProxyKind::Strategist
    }

    fn next_action(&mut self, env: &Env) -> Action {
        match self.queue.pop_front() {
            Some(a) => a,
            None => self.plan(env),
        }
    }

    fn record(&mut self, env: &Env, action: &Action, result: &StepResult) {
        match (action, &result.outcome) {
            (Action::Goto { .. }, _) => {
                let arrived =
                    self.arriving.and_then(|d| env.scene().doorway(d)).is_some_and(|d| d.cell == env.pose().position);
                if arrived {
                    self.arriving = None;
                    self.sweep_left = 4;
                    self.stuck.clear();
                }
            }
            (Action::Observe, Outcome::Observation { sightings }) => {
                self.sweep_left = self.sweep_left.saturating_sub(1);
                for s in sightings {
                    if let Entity::Doorway(d) = s.entity {
                        if self.known_doors.insert(d) && !self.visited_doors.contains(&d) {
                            self.pending.push_back(d);
                        }
                    }
                }
                match self.belief.assert_observation(&env.scene().layout(), env.pose(), sightings) {
                    Ok(b) => self.belief = b,
                    Err(e) => self.failed = Some(e),
                }
            }
            (Action::Query { target }, Outcome::Located { position, .. }) => {
                let world = Frame::of(env.scene().spawn).to_world(*position);
                match self.belief.assert_position(target, world) {
                    Ok(b) => self.belief = b,
                    Err(e) => self.failed = Some(e),
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProxyError {
    #[error("proxy issued an illegal action at step {step}: {error}")]
    IllegalAction { step: usize, error: EnvError },
    #[error("belief became inconsistent at step {step}: {error}")]
    Belief { step: usize, error: BeliefError },
}

/// A finished proxy episode with the harness-side belief trace.
#[derive(Clone, Debug)]
pub struct ProxyRun {
    pub kind: ProxyKind,
    pub log: EpisodeLog,
    /// Information gain after every action.
    pub gains: Vec<f64>,
    pub belief: BeliefState,
    /// Exploration turns used (perception actions).
    pub turns: u32,
    /// `(step, object)` pairs where the true position left a domain.
    pub soundness_violations: Vec<(usize, String)>,
}

impl ProxyRun {
    pub fn final_gain(&self) -> f64 {
        self.gains.last().copied().unwrap_or(0.0)
    }
}

/// Drive a proxy on `scene` until it terminates or the budget runs out.
pub fn run_proxy(kind: ProxyKind, scene: &Scene) -> Result<ProxyRun, ProxyError> {
    run_proxy_with(kind, scene, kind.env_config(scene))
}

pub fn run_proxy_with(kind: ProxyKind, scene: &Scene, cfg: EnvConfig) -> Result<ProxyRun, ProxyError> {
    let mut env = Env::new(scene.clone(), cfg);
    let mut proxy = make_proxy(kind, scene);
    let layout = scene.layout();
    let frame = Frame::of(scene.spawn);
    let mut belief = BeliefState::for_scene(scene);
    let mut gains = Vec::new();
    let mut violations = Vec::new();
    while !env.is_over() {
        let action = proxy.next_action(&env);
        let step = env.log().entries.len();
        let result = env.step(action.clone()).map_err(|error| ProxyError::IllegalAction { step, error })?;
        match &result.outcome {
            Outcome::Observation { sightings } => {
                belief = belief
                    .assert_observation(&layout, env.pose(), sightings)
                    .map_err(|error| ProxyError::Belief { step, error })?;
            }
            Outcome::Located { target, position } => {
                belief = belief
                    .assert_position(target, frame.to_world(*position))
                    .map_err(|error| ProxyError::Belief { step, error })?;
            }
            _ => {}
        }
        for n in belief.unsound_objects(scene) {
            violations.push((step, n));
        }
        gains.push(belief.information_gain());
        proxy.record(&env, &action, &result);
    }
    Ok(ProxyRun { kind, turns: env.turn(), log: env.into_log(), gains, belief, soundness_violations: violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, SceneConfig};

    #[test]
    fn scout_starts_with_observe_and_sees_everything() {
        for seed in 0..10 {
            let scene = generate_scene(&SceneConfig::default().with_seed(seed)).unwrap();
            let run = run_proxy(ProxyKind::Scout, &scene).unwrap();
            assert_eq!(run.log.entries[0].action, Action::Observe);
            let seen: BTreeSet<String> = run
                .log
                .entries
                .iter()
                .filter_map(|e| e.result.outcome.sightings())
                .flatten()
                .filter_map(|s| s.entity.object_name().map(|n| n.to_string()))
                .collect();
            assert_eq!(seen.len(), scene.objects.len(), "seed {seed}");
        }
    }

    #[test]
    fn strategist_resolves_a_scene() {
        let scene = generate_scene(&SceneConfig::default().with_seed(7)).unwrap();
        let run = run_proxy(ProxyKind::Strategist, &scene).unwrap();
        assert!(run.soundness_violations.is_empty());
        assert_eq!(run.final_gain(), 1.0, "turns {}", run.turns);
    }
}
