//! Covert scene changes after exploration and the scores for revising a map
//! afterwards.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EpisodeLog, Outcome, Phase};
use crate::geom::{Cardinal, Cell};
use crate::probe::{self, MapItem, OriPos};
use crate::scenegen::{validate_scene, Scene};

pub const DEFAULT_K: usize = 4;
pub const INERTIA_EPS: f64 = 1e-9;
pub const SIGMA_FLOOR: f64 = 0.5;

/// What the agent is told before the revision phase.
pub const REVISION_NOTICE: &str = "Some objects may have moved or turned. Explore again and report which ones changed.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Relocate,
    Reorient,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub name: String,
    pub kind: ChangeKind,
    pub old_position: Cell,
    pub new_position: Cell,
    pub old_facing: Option<Cardinal>,
    pub new_facing: Option<Cardinal>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    pub changes: Vec<Change>,
    pub k: usize,
}

impl Perturbation {
    pub fn changed_names(&self) -> BTreeSet<&str> {
        self.changes.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn claims(&self) -> Vec<(String, ChangeKind)> {
        self.changes.iter().map(|c| (c.name.clone(), c.kind)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbConfig {
    /// Relocations may land in any room instead of the object's own.
    pub cross_room: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PerturbError {
    #[error("cannot change {k} of {n} objects")]
    TooMany { k: usize, n: usize },
    #[error("no free cell to relocate {0}")]
    NoFreeCells(String),
}

/// Change exactly `k` objects. Relocations avoid `keep_clear` (typically the
/// agent's cell) and leave every object a free neighbour in its room.
pub fn perturb(
    scene: &Scene,
    k: usize,
    seed: u64,
    keep_clear: &[Cell],
    cfg: PerturbConfig,
) -> Result<(Scene, Perturbation), PerturbError> {
    if k > scene.objects.len() {
        return Err(PerturbError::TooMany { k, n: scene.objects.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.shuffle(&mut rng);
    let mut out = scene.clone();
    let mut changes = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let old = out.objects[i].clone();
        let reorient = old.facing.is_some() && rng.random_bool(0.5);
        if reorient {
            let from = old.facing.expect("checked");
            let others: Vec<Cardinal> = Cardinal::ALL.into_iter().filter(|&c| c != from).collect();
            let to = *others.choose(&mut rng).expect("three others");
            out.objects[i].facing = Some(to);
            changes.push(Change {
                name: old.name.clone(),
                kind: ChangeKind::Reorient,
                old_position: old.position,
                new_position: old.position,
                old_facing: Some(from),
                new_facing: Some(to),
            });
            continue;
        }
        let rooms: Vec<u32> =
            if cfg.cross_room { out.rooms.iter().map(|r| r.id).collect() } else { alloc::vec![old.room_id] };
        let mut cells: Vec<(u32, Cell)> = Vec::new();
        for &rid in &rooms {
            let room = out.room(rid).expect("room exists");
            cells.extend(room.cells().map(|c| (rid, c)));
        }
        cells.shuffle(&mut rng);
        let mut placed = false;
        for (rid, c) in cells {
            if c == old.position || keep_clear.contains(&c) || out.object_at(c).is_some() || c == out.spawn.position {
                continue;
            }
            let mut trial = out.clone();
            trial.objects[i].position = c;
            trial.objects[i].room_id = rid;
            if validate_scene(&trial).is_empty() && every_object_approachable(&trial) {
                out = trial;
                placed = true;
                changes.push(Change {
                    name: old.name.clone(),
                    kind: ChangeKind::Relocate,
                    old_position: old.position,
                    new_position: c,
                    old_facing: old.facing,
                    new_facing: old.facing,
                });
                break;
            }
        }
        if !placed {
            return Err(PerturbError::NoFreeCells(old.name));
        }
    }
    Ok((out, Perturbation { changes, k }))
}

fn every_object_approachable(scene: &Scene) -> bool {
    scene.objects.iter().all(|o| {
        let room = scene.room(o.room_id).expect("room exists");
        o.position.neighbors4().into_iter().any(|n| room.contains(n) && scene.object_at(n).is_none())
    })
}

/// F1 of claimed reorientations and claimed relocations, matched on
/// `(object, kind)`: `(ori, pos)`.
pub fn identification_f1(claimed: &[(String, ChangeKind)], actual: &Perturbation) -> (f64, f64) {
    let pick = |kind: ChangeKind, items: &mut dyn Iterator<Item = (&String, ChangeKind)>| -> BTreeSet<String> {
        items.filter(|(_, k)| *k == kind).map(|(n, _)| n.clone()).collect()
    };
    let truth = |kind| pick(kind, &mut actual.changes.iter().map(|c| (&c.name, c.kind)));
    let claim = |kind| pick(kind, &mut claimed.iter().map(|(n, k)| (n, *k)));
    (
        probe::f1(&claim(ChangeKind::Reorient), &truth(ChangeKind::Reorient)),
        probe::f1(&claim(ChangeKind::Relocate), &truth(ChangeKind::Relocate)),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redundancy {
    /// Revision-phase actions other than Terminate.
    pub steps_total: u32,
    pub redundant: u32,
    /// Every changed object was seen during revision; otherwise `redundant`
    /// equals `steps_total`.
    pub all_observed: bool,
}

/// Steps taken after the last changed object first came into view.
pub fn redundancy_steps(log: &EpisodeLog, p: &Perturbation) -> Redundancy {
    let changed = p.changed_names();
    let mut first_seen: BTreeMap<&str, u32> = BTreeMap::new();
    let mut steps = 0u32;
    for e in log.phase_entries(Phase::Revision) {
        if matches!(e.action, Action::Terminate) {
            continue;
        }
        steps += 1;
        if let Outcome::Observation { sightings } = &e.result.outcome {
            for s in sightings {
                if let Some(n) = s.entity.object_name() {
                    if let Some(&c) = changed.get(n) {
                        first_seen.entry(c).or_insert(steps);
                    }
                }
            }
        }
    }
    if first_seen.len() < changed.len() {
        return Redundancy { steps_total: steps, redundant: steps, all_observed: false };
    }
    let last = first_seen.values().copied().max().unwrap_or(0);
    Redundancy { steps_total: steps, redundant: steps - last, all_observed: true }
}

/// Turn (as counted by the environment) at which each object was first
/// observed during revision.
pub fn first_reobservation_turns(log: &EpisodeLog) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    for e in log.phase_entries(Phase::Revision) {
        if let Outcome::Observation { sightings } = &e.result.outcome {
            for s in sightings {
                if let Some(n) = s.entity.object_name() {
                    out.entry(String::from(n)).or_insert(e.result.turn);
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sigma {
    pub value: f64,
    /// No unchanged object was re-observed; `value` is the floor.
    pub flagged: bool,
}

/// RMS of the errors, floored at [`SIGMA_FLOOR`].
pub fn sigma_from_errors(errors: &[f64]) -> Sigma {
    if errors.is_empty() {
        return Sigma { value: SIGMA_FLOOR, flagged: true };
    }
    let rms = libm::sqrt(errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64);
    Sigma { value: rms.max(SIGMA_FLOOR), flagged: false }
}

/// Localization noise of the agent: position error of unchanged objects in
/// the map probed at the turn each was first re-observed (`maps` by turn),
/// falling back to `final_map` for turns without a probe.
pub fn estimate_sigma(
    log: &EpisodeLog,
    maps: &BTreeMap<u32, BTreeMap<String, MapItem>>,
    final_map: &BTreeMap<String, MapItem>,
    p: &Perturbation,
    revised: &Scene,
) -> Sigma {
    let gt = probe::truth_global(revised);
    let changed = p.changed_names();
    let mut errors = Vec::new();
    for (name, turn) in first_reobservation_turns(log) {
        if changed.contains(name.as_str()) {
            continue;
        }
        let map = maps.get(&turn).unwrap_or(final_map);
        if let (Some(pred), Some(truth)) = (map.get(&name), gt.get(&name)) {
            let d = Cell::new(pred.position.0, pred.position.1).dist(Cell::new(truth.position.0, truth.position.1));
            errors.push(d);
        }
    }
    sigma_from_errors(&errors)
}

/// Pull of the revised belief `b_new` toward the obsolete belief `b_old`,
/// relative to the new truth `g_new`, in [-1, 1].
pub fn positional_inertia(b_old: (f64, f64), b_new: (f64, f64), g_new: (f64, f64), sigma: f64) -> f64 {
    let v = (b_old.0 - g_new.0, b_old.1 - g_new.1);
    let e = (b_new.0 - g_new.0, b_new.1 - g_new.1);
    let nv = libm::sqrt(v.0 * v.0 + v.1 * v.1);
    let ne = libm::sqrt(e.0 * e.0 + e.1 * e.1);
    let cos = (e.0 * v.0 + e.1 * v.1) / (ne * nv + INERTIA_EPS);
    let dx = b_new.0 - b_old.0;
    let dy = b_new.1 - b_old.1;
    let w = libm::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    cos * w
}

/// 1 when the revised facing is still the obsolete one.
pub fn orientation_inertia(phi_new: Option<Cardinal>, phi_old: Cardinal) -> u8 {
    u8::from(phi_new == Some(phi_old))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InertiaScore {
    pub s_pos: Vec<(String, f64)>,
    pub s_ori: Vec<(String, u8)>,
    pub sigma: f64,
}

impl InertiaScore {
    pub fn mean_pos(&self) -> Option<f64> {
        mean(self.s_pos.iter().map(|x| x.1))
    }

    pub fn mean_ori(&self) -> Option<f64> {
        mean(self.s_ori.iter().map(|x| f64::from(x.1)))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = it.collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Inertia over changed objects. Positions and facings are in the agent
/// frame; `old_map` is the belief before revision and `new_map` after.
/// Objects missing from either map are skipped.
pub fn inertia(
    old_map: &BTreeMap<String, MapItem>,
    new_map: &BTreeMap<String, MapItem>,
    revised: &Scene,
    p: &Perturbation,
    sigma: f64,
) -> InertiaScore {
    let gt = probe::truth_global(revised);
    let xy = |m: &MapItem| (m.position.0 as f64, m.position.1 as f64);
    let mut s_pos = Vec::new();
    let mut s_ori = Vec::new();
    for c in &p.changes {
        let (Some(old), Some(new), Some(truth)) = (old_map.get(&c.name), new_map.get(&c.name), gt.get(&c.name)) else {
            continue;
        };
        match c.kind {
            ChangeKind::Relocate => {
                s_pos.push((c.name.clone(), positional_inertia(xy(old), xy(new), xy(truth), sigma)))
            }
            ChangeKind::Reorient => {
                if let Some(phi_old) = old.facing {
                    s_ori.push((c.name.clone(), orientation_inertia(new.facing, phi_old)));
                }
            }
        }
    }
    InertiaScore { s_pos, s_ori, sigma }
}

/// Facing and positional accuracy restricted to the changed objects.
pub fn changed_subset_correctness(updated: &BTreeMap<String, MapItem>, revised: &Scene, p: &Perturbation) -> OriPos {
    let changed = p.changed_names();
    let gt: BTreeMap<String, MapItem> =
        probe::truth_global(revised).into_iter().filter(|(n, _)| changed.contains(n.as_str())).collect();
    OriPos { ori: probe::facing_accuracy_over(updated, &gt), pos: probe::positional_accuracy_over(updated, &gt) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, SceneConfig};

    #[test]
    fn perturb_changes_exactly_k() {
        let s = generate_scene(&SceneConfig::default().with_seed(9)).unwrap();
        let (t, p) = perturb(&s, 4, 1, &[], PerturbConfig::default()).unwrap();
        assert_eq!(p.changes.len(), 4);
        assert!(validate_scene(&t).is_empty());
        let differing = s.objects.iter().zip(&t.objects).filter(|(a, b)| a != b).count();
        assert_eq!(differing, 4);
        for c in &p.changes {
            match c.kind {
                ChangeKind::Reorient => assert_ne!(c.old_facing, c.new_facing),
                ChangeKind::Relocate => {
                    assert_ne!(c.old_position, c.new_position);
                    assert_eq!(s.object(&c.name).unwrap().room_id, t.object(&c.name).unwrap().room_id);
                }
            }
        }
        assert_eq!(perturb(&s, 4, 1, &[], PerturbConfig::default()).unwrap().0, t);
    }

    #[test]
    fn worked_inertia_values() {
        assert!((positional_inertia((0.0, 0.0), (0.0, 0.0), (4.0, 0.0), 2.0) - 1.0).abs() < 1e-6);
        assert!(positional_inertia((0.0, 0.0), (4.0, 0.0), (4.0, 0.0), 2.0).abs() < 1e-6);
        let s = positional_inertia((0.0, 0.0), (2.0, 2.0), (4.0, 0.0), 2.0);
        assert!((s - core::f64::consts::FRAC_1_SQRT_2 * libm::exp(-1.0)).abs() < 1e-6);
    }

    #[test]
    fn f1_examples() {
        let p = Perturbation {
            changes: ["a", "b", "c", "d"]
                .iter()
                .map(|n| Change {
                    name: String::from(*n),
                    kind: ChangeKind::Relocate,
                    old_position: Cell::new(0, 0),
                    new_position: Cell::new(1, 0),
                    old_facing: None,
                    new_facing: None,
                })
                .collect(),
            k: 4,
        };
        let mut claims = p.claims();
        claims.push((String::from("e"), ChangeKind::Relocate));
        claims.push((String::from("f"), ChangeKind::Relocate));
        let (_, pos) = identification_f1(&claims, &p);
        assert!((pos - 0.8).abs() < 1e-12);
    }
}
