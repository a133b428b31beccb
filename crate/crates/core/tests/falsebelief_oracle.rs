//! Belief-revision scoring against hand evaluation and simulation.

use std::collections::{BTreeMap, BTreeSet};

use gridmind_core::env::{Action, Env, EnvConfig, Phase};
use gridmind_core::falsebelief::{
    changed_subset_correctness, estimate_sigma, identification_f1, inertia, orientation_inertia, perturb,
    positional_inertia, redundancy_steps, sigma_from_errors, Change, ChangeKind, PerturbConfig, Perturbation,
    SIGMA_FLOOR,
};
use gridmind_core::probe::{truth_global, visible_objects, MapItem};
use gridmind_core::proxies::{make_proxy, ProxyKind};
use gridmind_core::scenegen::{generate_scene, validate_scene, Scene, SceneConfig};
use gridmind_core::{Cardinal, Cell};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn scene(seed: u64) -> Scene {
    generate_scene(&SceneConfig::default().with_seed(seed)).unwrap()
}

#[test]
fn inertia_worked_examples() {
    assert!((positional_inertia((0.0, 0.0), (0.0, 0.0), (4.0, 0.0), 2.0) - 1.0).abs() < 1e-6);
    assert!(positional_inertia((0.0, 0.0), (4.0, 0.0), (4.0, 0.0), 2.0).abs() < 1e-6);
    let cos = 8.0 / (8f64.sqrt() * 4.0);
    let want = cos * (-1.0f64).exp();
    let got = positional_inertia((0.0, 0.0), (2.0, 2.0), (4.0, 0.0), 2.0);
    assert!((got - want).abs() < 1e-6);
    assert!((got - 0.260).abs() < 1e-3);
}

#[test]
fn orientation_inertia_is_equality_with_old_facing() {
    assert_eq!(orientation_inertia(Some(Cardinal::N), Cardinal::N), 1);
    assert_eq!(orientation_inertia(Some(Cardinal::E), Cardinal::N), 0);
    assert_eq!(orientation_inertia(Some(Cardinal::S), Cardinal::N), 0);
    assert_eq!(orientation_inertia(None, Cardinal::N), 0);
}

#[test]
fn unbiased_updates_average_to_zero_inertia() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let sigma = 1.0;
    let noise = Normal::new(0.0, sigma).unwrap();
    let trials = 2000;
    let mut sum = 0.0;
    for _ in 0..trials {
        let b_old = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let g_new = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let b_new = (g_new.0 + noise.sample(&mut rng), g_new.1 + noise.sample(&mut rng));
        let s = positional_inertia(b_old, b_new, g_new, sigma);
        assert!((-1.0..=1.0).contains(&s));
        sum += s;
    }
    let mean = sum / trials as f64;
    assert!(mean.abs() < 0.1, "{mean}");
}

#[test]
fn inertia_weight_decreases_with_distance_from_old_belief() {
    // e points from the new truth toward the old belief; walking b_new away
    // from b_old along that ray lowers the score.
    let (b_old, g_new) = ((0.0, 0.0), (8.0, 0.0));
    let mut last = f64::INFINITY;
    for step in 0..8 {
        let s = positional_inertia(b_old, (step as f64, 0.0), g_new, 2.0);
        assert!(s <= last);
        last = s;
    }
}

#[test]
fn sigma_fixtures() {
    assert!((sigma_from_errors(&[1.0, 1.0]).value - 1.0).abs() < 1e-12);
    assert!((sigma_from_errors(&[0.0, 2.0]).value - 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(sigma_from_errors(&[0.0, 0.0]).value, SIGMA_FLOOR);
    let none = sigma_from_errors(&[]);
    assert!(none.flagged && none.value == SIGMA_FLOOR);
}

fn change(name: &str, kind: ChangeKind) -> Change {
    Change {
        name: name.into(),
        kind,
        old_position: Cell::new(0, 0),
        new_position: Cell::new(1, 0),
        old_facing: Some(Cardinal::N),
        new_facing: Some(Cardinal::N),
    }
}

#[test]
fn identification_f1_fixtures() {
    let p =
        Perturbation { changes: ["a", "b", "c", "d"].iter().map(|n| change(n, ChangeKind::Relocate)).collect(), k: 4 };
    let mut claims: Vec<(String, ChangeKind)> =
        ["a", "b", "c", "d", "e", "f"].iter().map(|n| (n.to_string(), ChangeKind::Relocate)).collect();
    let (_, pos) = identification_f1(&claims, &p);
    assert!((pos - 0.8).abs() < 1e-12);
    claims.truncate(4);
    assert_eq!(identification_f1(&claims, &p), (1.0, 1.0));
    assert_eq!(identification_f1(&[], &p).1, 0.0);
    // Right object, wrong kind is not a match.
    let wrong = vec![("a".to_string(), ChangeKind::Reorient)];
    assert_eq!(identification_f1(&wrong, &p), (0.0, 0.0));
}

#[test]
fn perturb_changes_four_and_keeps_eight() {
    for seed in 0..30 {
        let s = scene(seed);
        let (t, p) = perturb(&s, 4, seed, &[s.spawn.position], PerturbConfig::default()).unwrap();
        assert!(validate_scene(&t).is_empty());
        let changed = s.objects.iter().zip(&t.objects).filter(|(a, b)| a != b).count();
        assert_eq!((changed, s.objects.len() - changed), (4, 8));
        for c in &p.changes {
            let before = s.object(&c.name).unwrap();
            let after = t.object(&c.name).unwrap();
            match c.kind {
                ChangeKind::Relocate => {
                    assert_ne!(before.position, after.position);
                    assert_eq!(before.room_id, after.room_id);
                    assert_eq!(before.facing, after.facing);
                }
                ChangeKind::Reorient => {
                    assert_ne!(before.facing, after.facing);
                    assert_eq!(before.position, after.position);
                }
            }
        }
        assert_eq!(perturb(&s, 4, seed, &[s.spawn.position], PerturbConfig::default()).unwrap().0, t);
    }
    assert!(perturb(&scene(0), 13, 0, &[], PerturbConfig::default()).is_err());
}

#[test]
fn stale_changed_subset_scores_by_formula() {
    let s = scene(13);
    let (t, p) = perturb(&s, 4, 5, &[], PerturbConfig::default()).unwrap();
    let old = truth_global(&s);
    let new = truth_global(&t);
    let changed: BTreeSet<&str> = p.changed_names();
    // Positional part by hand: K = N, RMSE over stale entries, L over new truth.
    let (mut se, mut norm) = (0.0, 0.0);
    let mut facing_ok = 0;
    for n in &changed {
        let (o, g) = (old[*n], new[*n]);
        let dx = (o.position.0 - g.position.0) as f64;
        let dy = (o.position.1 - g.position.1) as f64;
        se += dx * dx + dy * dy;
        norm += (g.position.0 * g.position.0 + g.position.1 * g.position.1) as f64;
        facing_ok += usize::from(o.facing == g.facing);
    }
    let k = changed.len() as f64;
    let want = (-(se / k).sqrt() / (norm / k).sqrt()).exp();
    let got = changed_subset_correctness(&old, &t, &p);
    assert!((got.pos - want).abs() < 1e-12);
    assert!((got.ori - facing_ok as f64 / k).abs() < 1e-12);
    let exact = changed_subset_correctness(&new, &t, &p);
    assert_eq!((exact.ori, exact.pos), (1.0, 1.0));
    // Unchanged objects do not enter the subset metric.
    let mut noisy = new.clone();
    for (name, item) in noisy.iter_mut() {
        if !changed.contains(name.as_str()) {
            item.position.0 += 5;
            item.facing = None;
        }
    }
    assert_eq!(changed_subset_correctness(&noisy, &t, &p), exact);
}

/// Scout explores, the scene is perturbed, and a fresh Scout re-explores.
fn revision_episode(seed: u64) -> (Scene, Scene, Perturbation, Env) {
    let s = scene(seed);
    let mut env = Env::new(s.clone(), EnvConfig::for_scene(&s));
    let mut scout = make_proxy(ProxyKind::Scout, &s);
    while !env.is_over() {
        let a = scout.next_action(&env);
        let r = env.step(a.clone()).unwrap();
        scout.record(&env, &a, &r);
    }
    let (t, p) = perturb(&s, 4, seed, &[env.pose().position], PerturbConfig::default()).unwrap();
    env.begin_revision(t.clone(), EnvConfig::for_scene(&t).budget);
    let mut scout = make_proxy(ProxyKind::Scout, &t);
    while !env.is_over() {
        let a = scout.next_action(&env);
        let r = env.step(a.clone()).unwrap();
        scout.record(&env, &a, &r);
    }
    (s, t, p, env)
}

#[test]
fn scout_revision_redundancy_matches_hand_count() {
    let (s, t, p, env) = revision_episode(7);
    let log = gridmind_core::env::replay(env.log(), &s, Some(&t)).unwrap();
    // Count from poses alone: which changed objects each Observe could see.
    let changed: BTreeSet<String> = p.changed_names().into_iter().map(String::from).collect();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut steps = 0u32;
    let mut done_at = None;
    for e in log.entries.iter().filter(|e| e.phase == Phase::Revision) {
        if matches!(e.action, Action::Terminate) {
            continue;
        }
        steps += 1;
        if matches!(e.action, Action::Observe) {
            seen.extend(visible_objects(&t, e.pose_before).into_iter().filter(|n| changed.contains(n)));
            if done_at.is_none() && seen == changed {
                done_at = Some(steps);
            }
        }
    }
    let r = redundancy_steps(&log, &p);
    assert_eq!(r.steps_total, steps);
    match done_at {
        Some(d) => {
            assert!(r.all_observed);
            assert_eq!(r.redundant, steps - d);
        }
        None => assert!(!r.all_observed && r.redundant == steps),
    }
    assert!(r.redundant <= r.steps_total);
}

#[test]
fn sigma_from_scripted_reobservation_errors() {
    let (_, t, p, env) = revision_episode(7);
    let changed = p.changed_names();
    let truth = truth_global(&t);
    let reobserved = gridmind_core::falsebelief::first_reobservation_turns(env.log());
    let unchanged: Vec<&String> = reobserved.keys().filter(|n| !changed.contains(n.as_str())).take(2).collect();
    assert_eq!(unchanged.len(), 2);
    let mut map: BTreeMap<String, MapItem> = BTreeMap::new();
    map.insert(unchanged[0].clone(), truth[unchanged[0]]);
    let mut off = truth[unchanged[1]];
    off.position.0 += 2;
    map.insert(unchanged[1].clone(), off);
    let sigma = estimate_sigma(env.log(), &BTreeMap::new(), &map, &p, &t);
    assert!(!sigma.flagged);
    assert!((sigma.value - 2f64.sqrt()).abs() < 1e-12);
    let none = estimate_sigma(env.log(), &BTreeMap::new(), &BTreeMap::new(), &p, &t);
    assert!(none.flagged);
}

#[test]
fn unrevised_map_shows_full_inertia() {
    let (s, t, p, _) = revision_episode(7);
    let old = truth_global(&s);
    let stale = inertia(&old, &old, &t, &p, 1.0);
    assert!(stale.s_pos.iter().all(|(_, v)| (v - 1.0).abs() < 1e-6));
    assert!(stale.s_ori.iter().all(|(_, v)| *v == 1));
    let fixed = inertia(&old, &truth_global(&t), &t, &p, 1.0);
    assert!(fixed.s_ori.iter().all(|(_, v)| *v == 0));
    assert_eq!(stale.s_pos.len() + stale.s_ori.len(), 4);
}
