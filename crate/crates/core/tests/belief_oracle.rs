//! Belief domains against exhaustive enumeration.

use std::collections::{BTreeMap, BTreeSet};

use gridmind_core::belief::{information_gain, BeliefState, Constraint};
use gridmind_core::env::{Action, Env, EnvConfig, Outcome};
use gridmind_core::scenegen::{generate_scene, Scene, SceneConfig};
use gridmind_core::spatial::{self, DistBin, EgoBin, Entity};
use gridmind_core::{Cardinal, Cell, Pose};

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Cells of a 20x20 grid that a float reading of "front, near" from `pose` admits.
fn front_near_cells(pose: Pose) -> BTreeSet<Cell> {
    let mut out = BTreeSet::new();
    for x in 0..20 {
        for y in 0..20 {
            let c = Cell::new(x, y);
            let d = c - pose.position;
            let dist = ((d.x * d.x + d.y * d.y) as f64).sqrt();
            let bearing = (d.x as f64).atan2(d.y as f64).to_degrees();
            let rel = (bearing - pose.heading.bearing_deg()).rem_euclid(360.0);
            if dist > 0.0 && dist <= 2.0 && rel.abs() < 1e-9 {
                out.insert(c);
            }
        }
    }
    out
}

fn sighting_constraints(object: &str, pose: Pose) -> Vec<Constraint> {
    vec![
        Constraint::UnaryEgoDir { object: object.into(), pose, bin: EgoBin::Front },
        Constraint::UnaryDistBin { object: object.into(), pose, bin: DistBin::Near },
    ]
}

#[test]
fn front_near_sighting_matches_enumeration() {
    let pose = Pose::new(Cell::new(3, 3), Cardinal::N);
    let b = BeliefState::new(&names(&["lamp"]), (20, 20)).with_constraints(sighting_constraints("lamp", pose)).unwrap();
    let got: BTreeSet<Cell> = b.domain("lamp").unwrap().iter().collect();
    let want = front_near_cells(pose);
    assert_eq!(want, [Cell::new(3, 4), Cell::new(3, 5)].into());
    assert_eq!(got, want);
}

#[test]
fn orthogonal_second_sighting_pins_the_object() {
    let a = Pose::new(Cell::new(3, 3), Cardinal::N);
    let b = Pose::new(Cell::new(1, 4), Cardinal::E);
    let mut cs = sighting_constraints("lamp", a);
    cs.extend(sighting_constraints("lamp", b));
    let belief = BeliefState::new(&names(&["lamp"]), (20, 20)).with_constraints(cs).unwrap();
    let want: BTreeSet<Cell> = front_near_cells(a).intersection(&front_near_cells(b)).copied().collect();
    assert_eq!(want.len(), 1);
    assert_eq!(belief.domain("lamp").unwrap().iter().collect::<BTreeSet<_>>(), want);
}

#[test]
fn gain_fixtures() {
    let g = information_gain(&[1, 20], 400);
    assert!((g - 0.75).abs() < 1e-9);
    assert_eq!(information_gain(&[400, 400], 400), 0.0);
    assert_eq!(information_gain(&[1, 1, 1], 400), 1.0);
    let b = BeliefState::new(&names(&["a", "b"]), (20, 20));
    assert_eq!(b.information_gain(), 0.0);
}

fn micro_scene(seed: u64) -> Scene {
    let cfg = SceneConfig {
        room_count: 1,
        room_width: 6,
        room_height: 6,
        objects_per_room: 3 + (seed % 4) as u32,
        global_grid: (8, 8),
        seed,
        ..SceneConfig::default()
    };
    generate_scene(&cfg).expect("single-room scene")
}

/// Sweep at spawn, then visit and sweep beside up to two objects.
fn explore(scene: &Scene) -> BeliefState {
    let mut env = Env::new(scene.clone(), EnvConfig { budget: 64, max_moves_per_turn: 8 });
    let layout = scene.layout();
    let mut belief = BeliefState::for_scene(scene);
    let sweep = |env: &mut Env, belief: &mut BeliefState| {
        for _ in 0..4 {
            let pose = env.pose();
            let r = env.step(Action::Observe).unwrap();
            if let Outcome::Observation { sightings } = &r.outcome {
                *belief = belief.assert_observation(&layout, pose, sightings).unwrap();
            }
            env.step(Action::Rotate { degrees: 90 }).unwrap();
        }
    };
    sweep(&mut env, &mut belief);
    let targets: Vec<String> = scene.objects.iter().take(2).map(|o| o.name.clone()).collect();
    for t in targets {
        if (env.visible_now().contains(&Entity::Object(t.clone())) || env.step(Action::Observe).is_ok())
            && env.step(Action::goto_object(&t)).is_ok()
        {
            sweep(&mut env, &mut belief);
        }
    }
    // A couple of true pairwise relations exercise the binary arcs.
    for w in scene.objects.windows(2).take(2) {
        let bin = spatial::allocentric_bin(w[0].position, w[1].position).unwrap();
        belief = belief.assert_relation(&w[0].name, &w[1].name, bin).unwrap();
    }
    belief
}

fn unary_target(c: &Constraint) -> Option<&str> {
    match c {
        Constraint::UnaryEgoDir { object, .. }
        | Constraint::UnaryDistBin { object, .. }
        | Constraint::UnaryRoomVisibility { object, .. }
        | Constraint::UnaryNotSeen { object, .. }
        | Constraint::UnaryAt { object, .. }
        | Constraint::UnaryNotAt { object, .. } => Some(object),
        _ => None,
    }
}

/// Per-object projections of every complete assignment satisfying all
/// constraints, found by backtracking over unary-filtered grids.
fn brute_force(belief: &BeliefState) -> BTreeMap<String, BTreeSet<Cell>> {
    let (w, h) = belief.grid();
    let names = belief.names().to_vec();
    let cands: Vec<Vec<Cell>> = names
        .iter()
        .map(|n| {
            let mut v = Vec::new();
            for x in 0..w {
                for y in 0..h {
                    let c = Cell::new(x, y);
                    if belief.constraints().iter().filter(|k| unary_target(k) == Some(n)).all(|k| k.admits(c)) {
                        v.push(c);
                    }
                }
            }
            v
        })
        .collect();
    let rel: Vec<(usize, usize, spatial::AllocBin)> = belief
        .constraints()
        .iter()
        .filter_map(|c| match c {
            Constraint::BinaryRelative { a, b, bin } => {
                Some((names.iter().position(|n| n == a)?, names.iter().position(|n| n == b)?, *bin))
            }
            _ => None,
        })
        .collect();
    let mut proj: Vec<BTreeSet<Cell>> = vec![BTreeSet::new(); names.len()];
    let mut assign: Vec<Cell> = Vec::new();
    fn rec(
        i: usize,
        cands: &[Vec<Cell>],
        rel: &[(usize, usize, spatial::AllocBin)],
        assign: &mut Vec<Cell>,
        proj: &mut [BTreeSet<Cell>],
    ) {
        if i == cands.len() {
            for (k, c) in assign.iter().enumerate() {
                proj[k].insert(*c);
            }
            return;
        }
        for &c in &cands[i] {
            if assign.contains(&c) {
                continue;
            }
            let ok = rel.iter().all(|&(a, b, bin)| {
                let pos = |j: usize| if j == i { Some(c) } else { assign.get(j).copied() };
                match (pos(a), pos(b)) {
                    (Some(pa), Some(pb)) if a <= i && b <= i => spatial::allocentric_bin(pa, pb) == Ok(bin),
                    _ => true,
                }
            });
            if ok {
                assign.push(c);
                rec(i + 1, cands, rel, assign, proj);
                assign.pop();
            }
        }
    }
    rec(0, &cands, &rel, &mut assign, &mut proj);
    names.into_iter().zip(proj).collect()
}

#[test]
fn micro_scene_projections_are_within_ac3_domains() {
    for seed in 0..50 {
        let scene = micro_scene(seed);
        let belief = explore(&scene);
        let proj = brute_force(&belief);
        for o in &scene.objects {
            let p = &proj[&o.name];
            let d: BTreeSet<Cell> = belief.domain(&o.name).unwrap().iter().collect();
            assert!(p.contains(&o.position), "seed {seed}: truth missing from projection of {}", o.name);
            assert!(p.is_subset(&d), "seed {seed}: projection of {} escapes its domain", o.name);
            assert!(d.contains(&o.position));
        }
    }
}
