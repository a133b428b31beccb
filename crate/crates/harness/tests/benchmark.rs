use std::fs;
use std::path::Path;

use gridmind::agents::AgentSpec;
use gridmind::benchmark::{
    episode_path, gains_csv, load_records, read_record, run_benchmark, Averages, BenchmarkConfig, ResultsTable,
};
use gridmind::episode::{EpisodeConfig, Mode};
use gridmind_core::proxies::ProxyKind;
use gridmind_core::scenegen::SceneConfig;

fn config(mode: Mode, seeds: std::ops::Range<u64>) -> BenchmarkConfig {
    BenchmarkConfig {
        scene: SceneConfig::default(),
        seeds,
        episode: EpisodeConfig { mode, ..EpisodeConfig::default() },
        agent: AgentSpec::Proxy { proxy: ProxyKind::Scout },
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("episodes")] {
        let mut names: Vec<_> =
            fs::read_dir(&sub).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
        names.sort();
        for p in names {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn runs_are_byte_identical_across_worker_counts() {
    let cfg = config(Mode::FalseBelief, 0..6);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_benchmark(&cfg, a.path(), 1).unwrap();
    run_benchmark(&cfg, b.path(), 4).unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.len(), 2 + 6);
    assert_eq!(sa, sb);
}

#[test]
fn resume_is_idempotent() {
    let cfg = config(Mode::Active, 0..4);
    let dir = tempfile::tempdir().unwrap();
    let first = run_benchmark(&cfg, dir.path(), 2).unwrap();
    let before = snapshot(dir.path());

    // Drop one episode and truncate another; only those are rerun.
    fs::remove_file(episode_path(dir.path(), 1)).unwrap();
    let p2 = episode_path(dir.path(), 2);
    let text = fs::read_to_string(&p2).unwrap();
    fs::write(&p2, &text[..text.len() / 2]).unwrap();
    let second = run_benchmark(&cfg, dir.path(), 2).unwrap();
    assert_eq!(first, second);
    assert_eq!(snapshot(dir.path()), before);

    let third = run_benchmark(&cfg, dir.path(), 3).unwrap();
    assert_eq!(third, first);
    assert_eq!(snapshot(dir.path()), before);
}

#[test]
fn changed_config_reruns_under_a_new_hash() {
    let dir = tempfile::tempdir().unwrap();
    let a = config(Mode::Active, 0..2);
    let b = BenchmarkConfig { episode: EpisodeConfig { per_task: 1, ..a.episode.clone() }, ..a.clone() };
    assert_ne!(a.hash(), b.hash());
    run_benchmark(&a, dir.path(), 1).unwrap();
    let t = run_benchmark(&b, dir.path(), 1).unwrap();
    assert_eq!(t.averages.questions, 2 * 9);
    for rec in load_records(dir.path()).unwrap() {
        assert_eq!(rec.config_hash, b.hash());
    }
}

#[test]
fn every_file_carries_the_config_hash() {
    let cfg = config(Mode::PassiveScout, 0..3);
    let dir = tempfile::tempdir().unwrap();
    run_benchmark(&cfg, dir.path(), 2).unwrap();
    let h = cfg.hash();
    for (name, bytes) in snapshot(dir.path()) {
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains(&h), "{name}");
    }
    let rec = read_record(&episode_path(dir.path(), 0)).unwrap();
    assert_eq!(rec.config_hash, h);
    assert_eq!(rec.summary.agent_actions, 0);
}

#[test]
fn averages_are_recomputable_from_rows() {
    let cfg = config(Mode::FalseBelief, 0..5);
    let dir = tempfile::tempdir().unwrap();
    let t = run_benchmark(&cfg, dir.path(), 2).unwrap();
    let stored: ResultsTable = serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(stored, t);
    assert_eq!(Averages::of(&stored.rows), stored.averages);
    let steps: f64 = t.rows.iter().map(|r| r.steps as f64).sum::<f64>() / t.rows.len() as f64;
    assert!((t.averages.avg_steps.unwrap() - steps).abs() < 1e-12);
    assert_eq!(t.averages.questions, 5 * 27);
    assert!(t.rows.iter().all(|r| r.revision_f1_pos.is_some()));

    let csv = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 + 1);
    assert!(csv.lines().last().unwrap().contains(",mean,"));

    let gains = gains_csv(&load_records(dir.path()).unwrap()).unwrap();
    let expected: usize = t
        .rows
        .iter()
        .map(|r| r.seed)
        .map(|s| read_record(&episode_path(dir.path(), s)).unwrap().summary.gains.len())
        .sum();
    assert_eq!(gains.lines().count(), 1 + expected);
}

#[test]
fn failing_seeds_become_error_rows() {
    let mut cfg = config(Mode::Active, 0..3);
    cfg.agent = AgentSpec::External { command: vec!["/nonexistent/agent".into()], timeout_secs: 1 };
    let dir = tempfile::tempdir().unwrap();
    let t = run_benchmark(&cfg, dir.path(), 2).unwrap();
    assert_eq!(t.averages.failed, 3);
    assert!(t.rows.iter().all(|r| r.error.is_some()));
    assert!(run_benchmark(&config(Mode::Active, 0..0), dir.path(), 1).is_err());
}
