//! Batch runs over a seed range, persistence and result tables.
//!
//! A run directory holds `episodes/seed-NNNNNN.jsonl` (one file per episode)
//! and `summary.json` plus `table.csv`. Every file carries the config hash;
//! episodes already on disk under the same hash are loaded, not rerun.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use anyhow::{bail, Context, Result};
use gridmind_core::env::{EpisodeLog, LogEntry};
use gridmind_core::scenegen::{generate_scene, SceneConfig};
use gridmind_core::tasks::TaskKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::AgentSpec;
use crate::episode::{
    mean, run_episode, AnswerRecord, EpisodeConfig, EpisodeRecord, EpisodeSummary, Mode, ProbeRecord,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    /// Scene parameters; the seed is replaced per episode.
    pub scene: SceneConfig,
    pub seeds: Range<u64>,
    pub episode: EpisodeConfig,
    pub agent: AgentSpec,
}

impl BenchmarkConfig {
    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// One line of an episode file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordLine {
    Header { seed: u64, mode: Mode, agent: String, config_hash: String, log: Box<EpisodeLog> },
    Step { entry: Box<LogEntry> },
    Probe { probe: Box<ProbeRecord> },
    Answer { answer: Box<AnswerRecord> },
    Summary { summary: Box<EpisodeSummary> },
}

pub fn write_record(path: &Path, rec: &EpisodeRecord) -> Result<()> {
    let mut lines = Vec::new();
    let header = EpisodeLog { entries: Vec::new(), ..rec.log.clone() };
    lines.push(RecordLine::Header {
        seed: rec.seed,
        mode: rec.mode,
        agent: rec.agent.clone(),
        config_hash: rec.config_hash.clone(),
        log: Box::new(header),
    });
    lines.extend(rec.log.entries.iter().map(|e| RecordLine::Step { entry: Box::new(e.clone()) }));
    lines.extend(rec.probes.iter().map(|p| RecordLine::Probe { probe: Box::new(p.clone()) }));
    lines.extend(rec.answers.iter().map(|a| RecordLine::Answer { answer: Box::new(a.clone()) }));
    lines.push(RecordLine::Summary { summary: Box::new(rec.summary.clone()) });
    let mut buf = Vec::new();
    for l in &lines {
        serde_json::to_writer(&mut buf, l)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Write through a temporary sibling and rename, so a crash never leaves a
/// half-written file that looks complete.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if fs::read(path).ok().as_deref() == Some(bytes) {
        return Ok(());
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_record(path: &Path) -> Result<EpisodeRecord> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rec: Option<EpisodeRecord> = None;
    let mut done = false;
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(&line).with_context(|| format!("in {}", path.display()))?;
        match (parsed, rec.as_mut()) {
            (RecordLine::Header { seed, mode, agent, config_hash, log }, None) => {
                rec = Some(EpisodeRecord {
                    seed,
                    mode,
                    agent,
                    config_hash,
                    log: *log,
                    probes: Vec::new(),
                    answers: Vec::new(),
                    summary: empty_summary(),
                });
            }
            (RecordLine::Step { entry }, Some(r)) => r.log.entries.push(*entry),
            (RecordLine::Probe { probe }, Some(r)) => r.probes.push(*probe),
            (RecordLine::Answer { answer }, Some(r)) => r.answers.push(*answer),
            (RecordLine::Summary { summary }, Some(r)) => {
                r.summary = *summary;
                done = true;
            }
            _ => bail!("{}: malformed episode file", path.display()),
        }
    }
    match rec {
        Some(r) if done => Ok(r),
        _ => bail!("{}: incomplete episode file", path.display()),
    }
}

fn empty_summary() -> EpisodeSummary {
    EpisodeSummary {
        steps: 0,
        agent_actions: 0,
        gains: Vec::new(),
        final_correctness: None,
        stability: None,
        uncertainty: None,
        revision: None,
        task_means: BTreeMap::new(),
        overall: None,
        timeouts: 0,
        rejections: 0,
        question_error: None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub seed: u64,
    pub steps: u32,
    pub final_gain: f64,
    pub correctness: Option<f64>,
    pub uncertainty_f1: Option<f64>,
    pub tasks: BTreeMap<TaskKind, f64>,
    pub overall: Option<f64>,
    pub questions: usize,
    pub revision_f1_ori: Option<f64>,
    pub revision_f1_pos: Option<f64>,
    pub redundancy: Option<u32>,
    pub inertia_pos: Option<f64>,
    pub inertia_ori: Option<f64>,
    pub error: Option<String>,
}

impl Row {
    fn from_record(r: &EpisodeRecord) -> Row {
        let s = &r.summary;
        let rev = s.revision.as_ref();
        Row {
            seed: r.seed,
            steps: s.steps,
            final_gain: s.gains.last().copied().unwrap_or(0.0),
            correctness: s.final_correctness.map(|c| c.overall),
            uncertainty_f1: s.uncertainty.as_ref().map(|u| u.f1),
            tasks: s.task_means.clone(),
            overall: s.overall,
            questions: r.answers.len(),
            revision_f1_ori: rev.map(|v| v.f1_ori),
            revision_f1_pos: rev.map(|v| v.f1_pos),
            redundancy: rev.map(|v| v.redundancy.redundant),
            inertia_pos: rev.and_then(|v| v.inertia.mean_pos()),
            inertia_ori: rev.and_then(|v| v.inertia.mean_ori()),
            error: s.question_error.clone(),
        }
    }

    fn failed(seed: u64, error: String) -> Row {
        Row {
            seed,
            steps: 0,
            final_gain: 0.0,
            correctness: None,
            uncertainty_f1: None,
            tasks: BTreeMap::new(),
            overall: None,
            questions: 0,
            revision_f1_ori: None,
            revision_f1_pos: None,
            redundancy: None,
            inertia_pos: None,
            inertia_ori: None,
            error: Some(error),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub episodes: usize,
    pub failed: usize,
    pub questions: usize,
    pub avg_steps: Option<f64>,
    pub final_gain: Option<f64>,
    pub correctness: Option<f64>,
    pub uncertainty_f1: Option<f64>,
    pub tasks: BTreeMap<TaskKind, f64>,
    pub overall: Option<f64>,
}

impl Averages {
    pub fn of(rows: &[Row]) -> Averages {
        let ok: Vec<&Row> = rows.iter().filter(|r| r.error.is_none()).collect();
        let mut tasks = BTreeMap::new();
        for k in TaskKind::ALL {
            if let Some(m) = mean(ok.iter().filter_map(|r| r.tasks.get(&k).copied())) {
                tasks.insert(k, m);
            }
        }
        Averages {
            episodes: rows.len(),
            failed: rows.len() - ok.len(),
            questions: rows.iter().map(|r| r.questions).sum(),
            avg_steps: mean(ok.iter().map(|r| r.steps as f64)),
            final_gain: mean(ok.iter().map(|r| r.final_gain)),
            correctness: mean(ok.iter().filter_map(|r| r.correctness)),
            uncertainty_f1: mean(ok.iter().filter_map(|r| r.uncertainty_f1)),
            tasks,
            overall: mean(ok.iter().filter_map(|r| r.overall)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub config_hash: String,
    pub config: BenchmarkConfig,
    pub rows: Vec<Row>,
    pub averages: Averages,
}

impl ResultsTable {
    pub fn new(config: &BenchmarkConfig, rows: Vec<Row>) -> ResultsTable {
        let averages = Averages::of(&rows);
        ResultsTable { config_hash: config.hash(), config: config.clone(), rows, averages }
    }

    /// One line per seed, then a mean line.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["config_hash".to_string(), "seed".into(), "steps".into(), "final_gain".into()];
        header.extend(["correctness", "uncertainty_f1"].map(String::from));
        header.extend(TaskKind::ALL.iter().map(|k| k.as_str().to_string()));
        header.extend(
            ["overall", "questions", "f1_ori", "f1_pos", "redundancy", "inertia_pos", "inertia_ori", "error"]
                .map(String::from),
        );
        w.write_record(&header)?;
        let f = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.rows {
            let mut rec =
                vec![self.config_hash.clone(), r.seed.to_string(), r.steps.to_string(), f(Some(r.final_gain))];
            rec.extend([f(r.correctness), f(r.uncertainty_f1)]);
            rec.extend(TaskKind::ALL.iter().map(|k| f(r.tasks.get(k).copied())));
            rec.extend([
                f(r.overall),
                r.questions.to_string(),
                f(r.revision_f1_ori),
                f(r.revision_f1_pos),
                r.redundancy.map(|v| v.to_string()).unwrap_or_default(),
                f(r.inertia_pos),
                f(r.inertia_ori),
                r.error.clone().unwrap_or_default(),
            ]);
            w.write_record(&rec)?;
        }
        let a = &self.averages;
        let mut rec = vec![self.config_hash.clone(), "mean".into(), f(a.avg_steps), f(a.final_gain)];
        rec.extend([f(a.correctness), f(a.uncertainty_f1)]);
        rec.extend(TaskKind::ALL.iter().map(|k| f(a.tasks.get(k).copied())));
        rec.extend([f(a.overall), a.questions.to_string()]);
        rec.extend(std::iter::repeat_n(String::new(), 6));
        w.write_record(&rec)?;
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

pub fn episode_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join("episodes").join(format!("seed-{seed:06}.jsonl"))
}

fn run_one(cfg: &BenchmarkConfig, seed: u64, dir: &Path, hash: &str) -> Result<EpisodeRecord> {
    let path = episode_path(dir, seed);
    if let Ok(rec) = read_record(&path) {
        if rec.config_hash == hash {
            return Ok(rec);
        }
    }
    let scene = generate_scene(&SceneConfig { seed, ..cfg.scene.clone() })?;
    let env = cfg.episode.env_config(&scene);
    let mut agent = cfg.agent.build(&scene, env, cfg.episode.per_task)?;
    let rec = run_episode(agent.as_mut(), &cfg.episode, &scene, hash)?;
    write_record(&path, &rec)?;
    Ok(rec)
}

/// Run (or resume) every seed with `workers` threads. Per-seed failures
/// become error rows; the batch carries on.
pub fn run_benchmark(cfg: &BenchmarkConfig, dir: &Path, workers: usize) -> Result<ResultsTable> {
    if cfg.seeds.is_empty() {
        bail!("empty seed range");
    }
    fs::create_dir_all(dir.join("episodes"))?;
    let hash = cfg.hash();
    let seeds: Vec<u64> = cfg.seeds.clone().collect();
    let next = AtomicUsize::new(0);
    let rows: Mutex<BTreeMap<u64, Row>> = Mutex::new(BTreeMap::new());
    thread::scope(|s| {
        for _ in 0..workers.clamp(1, seeds.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let row = match run_one(cfg, seed, dir, &hash) {
                    Ok(rec) => Row::from_record(&rec),
                    Err(e) => Row::failed(seed, format!("{e:#}")),
                };
                rows.lock().expect("no panics while holding the lock").insert(seed, row);
            });
        }
    });
    let rows = rows.into_inner().expect("workers joined").into_values().collect();
    let table = ResultsTable::new(cfg, rows);
    write_atomic(&dir.join("summary.json"), &serde_json::to_vec_pretty(&table)?)?;
    write_atomic(&dir.join("table.csv"), table.to_csv()?.as_bytes())?;
    Ok(table)
}

/// Load every episode of a run directory, in seed order.
pub fn load_records(dir: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.join("episodes"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_record(p)).collect()
}

/// `seed,step,gain` for every episode of a run.
pub fn gains_csv(records: &[EpisodeRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "step", "gain"])?;
    for r in records {
        for (i, g) in r.summary.gains.iter().enumerate() {
            w.write_record([r.seed.to_string(), (i + 1).to_string(), format!("{g:.6}")])?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
