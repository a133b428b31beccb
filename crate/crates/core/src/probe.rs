//! Cognitive-map probes and the metrics computed from them.
//!
//! A probe asks the agent for its map: a `global` layout in the agent frame
//! (spawn cell at the origin, spawn heading called `N`), a `local` layout of
//! what is in view right now in the ego frame of the current pose (`+y`
//! ahead, `+x` to the right, `N` meaning "same way I face"), and optionally
//! its own pose. Scores compare against ground truth expressed in the same
//! frames.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::CellSet;
use crate::geom::{Cardinal, Cell, Frame, Pose};
use crate::scenegen::Scene;
use crate::spatial;
use crate::tasks::coordinate_similarity;

/// One object in a map: integer coordinates and facing (`null` when the
/// object has none or the agent does not know).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapItem {
    pub position: (i32, i32),
    #[serde(default)]
    pub facing: Option<Cardinal>,
}

impl MapItem {
    pub fn cell(&self) -> Cell {
        Cell::new(self.position.0, self.position.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoseClaim {
    pub position: (i32, i32),
    pub facing: Cardinal,
}

impl PoseClaim {
    pub fn pose(&self) -> Pose {
        Pose::new(Cell::new(self.position.0, self.position.1), self.facing)
    }

    pub fn from_pose(p: Pose) -> PoseClaim {
        PoseClaim { position: (p.position.x, p.position.y), facing: p.heading }
    }
}

/// The probed map.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CognitiveMap {
    #[serde(default)]
    pub global: BTreeMap<String, MapItem>,
    #[serde(default)]
    pub local: BTreeMap<String, MapItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<PoseClaim>,
}

/// Schema text published with every map probe.
pub const MAP_SCHEMA: &str = r#"{"global": {"<name>": {"position": [x, y], "facing": "N|E|S|W|null"}}, "local": {"<name>": {"position": [x, y], "facing": "N|E|S|W|null"}}, "agent": {"position": [x, y], "facing": "N|E|S|W"}}"#;

/// Ground truth of every object in the agent frame.
pub fn truth_global(scene: &Scene) -> BTreeMap<String, MapItem> {
    let fr = Frame::of(scene.spawn);
    scene
        .objects
        .iter()
        .map(|o| {
            let c = fr.to_local(o.position);
            (o.name.clone(), MapItem { position: (c.x, c.y), facing: o.facing.map(|f| fr.cardinal_to_local(f)) })
        })
        .collect()
}

/// Ground truth of the objects in view at `pose` (world), in its ego frame.
pub fn truth_local(scene: &Scene, pose: Pose) -> BTreeMap<String, MapItem> {
    let fr = Frame::of(pose);
    visible_objects(scene, pose)
        .into_iter()
        .filter_map(|n| {
            let o = scene.object(&n)?;
            let c = fr.to_local(o.position);
            Some((n, MapItem { position: (c.x, c.y), facing: o.facing.map(|f| fr.cardinal_to_local(f)) }))
        })
        .collect()
}

/// Names of the objects in view at a world pose.
pub fn visible_objects(scene: &Scene, pose: Pose) -> BTreeSet<String> {
    spatial::visible_entities(scene, pose)
        .unwrap_or_default()
        .into_iter()
        .filter_map(|s| s.entity.object_name().map(String::from))
        .collect()
}

/// A map that is exactly right about `known` objects at world pose `pose`.
pub fn oracle_map(scene: &Scene, pose: Pose, known: &BTreeSet<String>) -> CognitiveMap {
    let fr = Frame::of(scene.spawn);
    CognitiveMap {
        global: truth_global(scene).into_iter().filter(|(n, _)| known.contains(n)).collect(),
        local: truth_local(scene, pose),
        agent: Some(PoseClaim::from_pose(fr.pose_to_local(pose))),
    }
}

/// `(K/N)·exp(−RMSE/L)` over all objects of the scene.
pub fn positional_accuracy(pred: &BTreeMap<String, MapItem>, scene: &Scene) -> f64 {
    positional_accuracy_over(pred, &truth_global(scene))
}

/// Positional accuracy against an explicit ground truth (agent frame).
pub fn positional_accuracy_over(pred: &BTreeMap<String, MapItem>, gt: &BTreeMap<String, MapItem>) -> f64 {
    let g: Vec<(f64, f64)> = gt.values().map(|m| (m.position.0 as f64, m.position.1 as f64)).collect();
    let p: Vec<Option<(f64, f64)>> =
        gt.keys().map(|n| pred.get(n).map(|m| (m.position.0 as f64, m.position.1 as f64))).collect();
    coordinate_similarity(&p, &g)
}

/// Fraction of pairs of predicted objects whose allocentric bin matches the
/// truth; 0 with fewer than two predictions.
pub fn directional_accuracy(pred: &BTreeMap<String, MapItem>, scene: &Scene) -> f64 {
    let gt = truth_global(scene);
    let items: Vec<(&MapItem, &MapItem)> = pred.iter().filter_map(|(n, p)| Some((p, gt.get(n)?))).collect();
    let mut pairs = 0usize;
    let mut good = 0usize;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            pairs += 1;
            let want = spatial::allocentric_bin(items[i].1.cell(), items[j].1.cell());
            let got = spatial::allocentric_bin(items[i].0.cell(), items[j].0.cell());
            if want.is_ok() && want == got {
                good += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        good as f64 / pairs as f64
    }
}

/// Fraction of scene objects whose predicted facing is right; a missing
/// object counts as wrong.
pub fn facing_accuracy(pred: &BTreeMap<String, MapItem>, scene: &Scene) -> f64 {
    facing_accuracy_over(pred, &truth_global(scene))
}

pub fn facing_accuracy_over(pred: &BTreeMap<String, MapItem>, gt: &BTreeMap<String, MapItem>) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let good = gt.iter().filter(|(n, g)| pred.get(*n).is_some_and(|p| p.facing == g.facing)).count();
    good as f64 / gt.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correctness {
    pub positional: f64,
    pub directional: f64,
    pub facing: f64,
    pub overall: f64,
}

impl Correctness {
    pub fn from_parts(positional: f64, directional: f64, facing: f64) -> Correctness {
        Correctness { positional, directional, facing, overall: (positional + directional + facing) / 3.0 }
    }
}

pub fn correctness(pred: &BTreeMap<String, MapItem>, scene: &Scene) -> Correctness {
    Correctness::from_parts(
        positional_accuracy(pred, scene),
        directional_accuracy(pred, scene),
        facing_accuracy(pred, scene),
    )
}

/// An orientation and a position component, each in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OriPos {
    pub ori: f64,
    pub pos: f64,
}

/// Local-map accuracy over objects seen for the first time this turn.
/// `None` when nothing new came into view.
pub fn perception(
    local: &BTreeMap<String, MapItem>,
    scene: &Scene,
    pose: Pose,
    first_seen: &BTreeSet<String>,
) -> Option<OriPos> {
    let truth = truth_local(scene, pose);
    let names: Vec<&String> = first_seen.iter().filter(|n| truth.contains_key(*n)).collect();
    if names.is_empty() {
        return None;
    }
    let (mut ori, mut pos) = (0usize, 0usize);
    for n in &names {
        let t = &truth[*n];
        if let Some(p) = local.get(*n) {
            ori += usize::from(p.facing == t.facing);
            pos += usize::from(p.position == t.position);
        }
    }
    let k = names.len() as f64;
    Some(OriPos { ori: ori as f64 / k, pos: pos as f64 / k })
}

/// Self-tracking against the true pose (agent frame). `derived` is set when
/// the claim was reconstructed from the local and global maps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfTracking {
    pub ori: f64,
    pub pos: f64,
    pub derived: bool,
    /// No pose could be claimed or derived; scored (0, 0).
    pub flagged: bool,
}

/// The pose under which every shared local entry lands exactly on its
/// global entry, facing included, if there is exactly one.
pub fn derive_pose(map: &CognitiveMap) -> Option<Pose> {
    let shared: Vec<(&MapItem, &MapItem)> =
        map.local.iter().filter_map(|(n, l)| Some((l, map.global.get(n)?))).collect();
    let (l0, g0) = shared.first()?;
    let mut found: Option<Pose> = None;
    for h in Cardinal::ALL {
        let probe = Frame { origin: Cell::new(0, 0), heading: h };
        let origin = g0.cell() - probe.to_world(l0.cell());
        let fr = Frame { origin, heading: h };
        let fits = |(l, g): &(&MapItem, &MapItem)| {
            fr.to_world(l.cell()) == g.cell() && l.facing.map(|f| fr.cardinal_to_world(f)) == g.facing
        };
        if shared.iter().all(fits) {
            if found.is_some() {
                return None;
            }
            found = Some(Pose::new(origin, h));
        }
    }
    found
}

pub fn self_tracking(map: &CognitiveMap, truth: Pose) -> SelfTracking {
    let (claim, derived) = match map.agent {
        Some(c) => (Some(c.pose()), false),
        None => (derive_pose(map), true),
    };
    match claim {
        Some(p) => SelfTracking {
            ori: if p.heading == truth.heading { 1.0 } else { 0.0 },
            pos: libm::exp(-p.position.dist(truth.position)).clamp(0.0, 1.0),
            derived,
            flagged: false,
        },
        None => SelfTracking { ori: 0.0, pos: 0.0, derived, flagged: true },
    }
}

/// Agreement between the local map carried into the global frame through
/// the pose claim and the global map, over objects in both. `None` when
/// they share nothing or no pose is available.
pub fn local_global_consistency(map: &CognitiveMap) -> Option<OriPos> {
    let pose = map.agent.map(|c| c.pose()).or_else(|| derive_pose(map))?;
    let fr = Frame::of(pose);
    let shared: Vec<(&MapItem, &MapItem)> =
        map.local.iter().filter_map(|(n, l)| Some((l, map.global.get(n)?))).collect();
    if shared.is_empty() {
        return None;
    }
    let (mut ori, mut pos) = (0usize, 0usize);
    for (l, g) in &shared {
        pos += usize::from(fr.to_world(l.cell()) == g.cell());
        ori += usize::from(l.facing.map(|f| fr.cardinal_to_world(f)) == g.facing);
    }
    let k = shared.len() as f64;
    Some(OriPos { ori: ori as f64 / k, pos: pos as f64 / k })
}

/// One turn of a probe history for stability: the global map and every
/// object observed up to and including this turn.
#[derive(Clone, Debug)]
pub struct StabilityTurn<'a> {
    pub global: &'a BTreeMap<String, MapItem>,
    pub observed: &'a BTreeSet<String>,
}

/// Share of (object, turn) checks where an already-observed object's error
/// did not grow since the previous turn. `None` without any check.
pub fn stability(history: &[StabilityTurn<'_>], scene: &Scene) -> Option<OriPos> {
    let gt = truth_global(scene);
    let pos_err = |m: &BTreeMap<String, MapItem>, n: &str| -> i64 {
        match (m.get(n), gt.get(n)) {
            (Some(p), Some(g)) => p.cell().dist_sq(g.cell()),
            _ => i64::MAX,
        }
    };
    let ori_err = |m: &BTreeMap<String, MapItem>, n: &str| -> u8 {
        match (m.get(n), gt.get(n)) {
            (Some(p), Some(g)) => u8::from(p.facing != g.facing),
            _ => 1,
        }
    };
    let (mut checks, mut ori, mut pos) = (0usize, 0usize, 0usize);
    for w in history.windows(2) {
        for n in w[0].observed {
            checks += 1;
            pos += usize::from(pos_err(w[1].global, n) <= pos_err(w[0].global, n));
            ori += usize::from(ori_err(w[1].global, n) <= ori_err(w[0].global, n));
        }
    }
    if checks == 0 {
        return None;
    }
    Some(OriPos { ori: ori as f64 / checks as f64, pos: pos as f64 / checks as f64 })
}

/// Cells seen from a world pose: the wedge of the FOV inside the visible
/// rooms (and doorway cells), plus the cell stood on.
pub fn fov_cells(scene: &Scene, pose: Pose) -> Vec<Cell> {
    let rooms = scene.rooms_visible_from(pose.position);
    let mut out = alloc::vec![pose.position];
    for r in scene.rooms.iter().filter(|r| rooms.contains(&r.id)) {
        out.extend(r.cells().filter(|&c| spatial::in_fov(pose, c)));
    }
    for d in &scene.doorways {
        if rooms.iter().any(|&r| d.touches(r)) && spatial::in_fov(pose, d.cell) {
            out.push(d.cell);
        }
    }
    out
}

/// Union of FOV wedges over the poses at which the agent observed.
pub fn observed_cells(scene: &Scene, poses: &[Pose]) -> CellSet {
    let (w, h) = scene.config.global_grid;
    let mut s = CellSet::empty(w, h);
    for &p in poses {
        for c in fov_cells(scene, p) {
            s.insert(c);
        }
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePoint {
    pub id: u32,
    /// Agent frame.
    pub position: (i32, i32),
    pub observed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub points: Vec<CandidatePoint>,
    /// One class could not supply its quota.
    pub unbalanced: bool,
}

impl CandidateSet {
    pub fn unobserved_ids(&self) -> BTreeSet<u32> {
        self.points.iter().filter(|p| !p.observed).map(|p| p.id).collect()
    }
}

/// `n` free room cells with at least `ceil(n/4)` observed and unobserved
/// ones each when available; ids run from 1 in random order.
pub fn sample_candidates(scene: &Scene, observed: &CellSet, n: usize, seed: u64) -> CandidateSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fr = Frame::of(scene.spawn);
    let mut pool: Vec<Cell> = Vec::new();
    for r in &scene.rooms {
        pool.extend(r.cells().filter(|&c| scene.object_at(c).is_none() && c != scene.spawn.position));
    }
    let (mut seen, mut unseen): (Vec<Cell>, Vec<Cell>) = pool.into_iter().partition(|&c| observed.contains(c));
    seen.shuffle(&mut rng);
    unseen.shuffle(&mut rng);
    let quota = n.div_ceil(4);
    let unbalanced = seen.len() < quota || unseen.len() < quota;
    let mut picked: Vec<(Cell, bool)> = Vec::with_capacity(n);
    picked.extend(seen.drain(..quota.min(seen.len())).map(|c| (c, true)));
    picked.extend(unseen.drain(..quota.min(unseen.len())).map(|c| (c, false)));
    let mut rest: Vec<(Cell, bool)> =
        seen.into_iter().map(|c| (c, true)).chain(unseen.into_iter().map(|c| (c, false))).collect();
    while picked.len() < n && !rest.is_empty() {
        let i = (0..rest.len()).collect::<Vec<_>>().choose(&mut rng).copied().unwrap_or(0);
        picked.push(rest.swap_remove(i));
    }
    picked.shuffle(&mut rng);
    let points = picked
        .into_iter()
        .enumerate()
        .map(|(i, (c, observed))| {
            let l = fr.to_local(c);
            CandidatePoint { id: i as u32 + 1, position: (l.x, l.y), observed }
        })
        .collect();
    CandidateSet { points, unbalanced }
}

/// F1 of the selected ids against the unobserved candidates. Both empty
/// counts as a perfect answer.
pub fn uncertainty_f1(selected: &BTreeSet<u32>, cs: &CandidateSet) -> f64 {
    f1(selected, &cs.unobserved_ids())
}

pub fn f1<T: Ord>(claimed: &BTreeSet<T>, truth: &BTreeSet<T>) -> f64 {
    if claimed.is_empty() && truth.is_empty() {
        return 1.0;
    }
    let tp = claimed.intersection(truth).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let p = tp / claimed.len() as f64;
    let r = tp / truth.len() as f64;
    2.0 * p * r / (p + r)
}

fn candidate_symbol(id: u32) -> char {
    match id {
        1..=9 => char::from(b'0' + id as u8),
        10..=35 => char::from(b'a' + (id - 10) as u8),
        _ => '?',
    }
}

/// Top-down grid of the known layout in the agent frame, north up. The
/// agent is an arrow, doorways `D`, floor `.`, outside `#`, candidates by id.
pub fn render_grid(scene: &Scene, pose: Pose, cs: &CandidateSet) -> String {
    let fr = Frame::of(scene.spawn);
    let mut cells: BTreeMap<(i32, i32), char> = BTreeMap::new();
    for r in &scene.rooms {
        for c in r.cells() {
            let l = fr.to_local(c);
            cells.insert((l.x, l.y), '.');
        }
    }
    for d in &scene.doorways {
        let l = fr.to_local(d.cell);
        cells.insert((l.x, l.y), 'D');
    }
    for p in &cs.points {
        cells.insert(p.position, candidate_symbol(p.id));
    }
    let a = fr.pose_to_local(pose);
    let arrow = match a.heading {
        Cardinal::N => '^',
        Cardinal::E => '>',
        Cardinal::S => 'v',
        Cardinal::W => '<',
    };
    cells.insert((a.position.x, a.position.y), arrow);
    let xs = cells.keys().map(|k| k.0);
    let (x0, x1) = (xs.clone().min().unwrap_or(0) - 1, xs.max().unwrap_or(0) + 1);
    let ys = cells.keys().map(|k| k.1);
    let (y0, y1) = (ys.clone().min().unwrap_or(0) - 1, ys.max().unwrap_or(0) + 1);
    let mut out = format!("x from {x0} to {x1} (left to right), y from {y1} to {y0} (top to bottom)\n");
    for y in (y0..=y1).rev() {
        for x in x0..=x1 {
            out.push(*cells.get(&(x, y)).unwrap_or(&'#'));
        }
        out.push('\n');
    }
    out.push_str("legend: ^>v< you, D doorway, . floor, # wall or outside, 1-9 a-z candidate points");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, SceneConfig};

    fn scene() -> Scene {
        generate_scene(&SceneConfig::default().with_seed(4)).unwrap()
    }

    #[test]
    fn oracle_map_is_perfect() {
        let s = scene();
        let all: BTreeSet<String> = s.object_names.iter().cloned().collect();
        let m = oracle_map(&s, s.spawn, &all);
        assert_eq!(correctness(&m.global, &s).overall, 1.0);
        let t = self_tracking(&m, Frame::of(s.spawn).pose_to_local(s.spawn));
        assert_eq!((t.ori, t.pos, t.flagged), (1.0, 1.0, false));
        if !m.local.is_empty() {
            assert_eq!(local_global_consistency(&m), Some(OriPos { ori: 1.0, pos: 1.0 }));
        }
    }

    #[test]
    fn empty_map_scores_zero() {
        let s = scene();
        let m = BTreeMap::new();
        assert_eq!(positional_accuracy(&m, &s), 0.0);
        assert_eq!(directional_accuracy(&m, &s), 0.0);
        assert_eq!(facing_accuracy(&m, &s), 0.0);
    }

    #[test]
    fn f1_cases() {
        let t: BTreeSet<u32> = [1, 2, 3].into();
        assert_eq!(f1(&t, &t), 1.0);
        assert_eq!(f1(&BTreeSet::new(), &t), 0.0);
        let c: BTreeSet<u32> = [1, 2, 9].into();
        assert!((f1(&c, &t) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn candidates_deterministic_and_balanced() {
        let s = scene();
        let obs = observed_cells(&s, &[s.spawn]);
        let a = sample_candidates(&s, &obs, 10, 3);
        assert_eq!(a, sample_candidates(&s, &obs, 10, 3));
        assert_eq!(a.points.len(), 10);
        assert!(a.points.iter().filter(|p| p.observed).count() >= 3);
        assert!(a.points.iter().filter(|p| !p.observed).count() >= 3);
        let g = render_grid(&s, s.spawn, &a);
        assert!(g.contains('^'));
    }

    #[test]
    fn derive_pose_recovers_truth() {
        let s = scene();
        let all: BTreeSet<String> = s.object_names.iter().cloned().collect();
        let fr = Frame::of(s.spawn);
        for o in &s.objects {
            for h in Cardinal::ALL {
                let Ok(p) = crate::env::goto_landing(&s, s.spawn, &crate::spatial::Entity::Object(o.name.clone()))
                else {
                    continue;
                };
                let p = p.rotated(h.index());
                let mut m = oracle_map(&s, p, &all);
                m.agent = None;
                if m.local.is_empty() {
                    continue;
                }
                assert_eq!(derive_pose(&m), Some(fr.pose_to_local(p)));
            }
        }
    }
}
