//! One episode: exploration with per-turn probes, optional belief revision,
//! then the question phase.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use gridmind_core::env::{Action, Env, EnvConfig, EpisodeLog, Outcome, Phase, StepResult};
use gridmind_core::falsebelief::{
    self, changed_subset_correctness, estimate_sigma, identification_f1, inertia, perturb, redundancy_steps,
    ChangeKind, InertiaScore, PerturbConfig, Perturbation, Redundancy, Sigma, DEFAULT_K, REVISION_NOTICE,
};
use gridmind_core::probe::{
    self, correctness, local_global_consistency, perception, sample_candidates, self_tracking, stability, CandidateSet,
    CognitiveMap, Correctness, MapItem, OriPos, SelfTracking, StabilityTurn, MAP_SCHEMA,
};
use gridmind_core::proxies::{run_proxy, ProxyError, ProxyKind};
use gridmind_core::tasks::{generate_questions, grade, Score, TaskError, TaskKind, DEFAULT_PER_TASK};
use gridmind_core::{Frame, Pose, Scene};
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentError};
use crate::analysis::gain_curve;
use crate::protocol::{CandidateView, Feedback, FromAgent, QuestionView, ReplyKind, StreamEntry, ToAgent};

/// Candidate points shown in the uncertainty probe.
pub const CANDIDATES: usize = 10;
/// Rejected actions in a row before the driver substitutes an Observe.
pub const MAX_REJECTIONS: u32 = 3;

const CANDIDATE_SALT: u64 = 0xC0FF_EE00_D15E_A5E5;
const PERTURB_SALT: u64 = 0x005E_ED0F_B311_EF00;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Active,
    PassiveScout,
    PassiveStrategist,
    FalseBelief,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Active => "active",
            Mode::PassiveScout => "passive-scout",
            Mode::PassiveStrategist => "passive-strategist",
            Mode::FalseBelief => "false-belief",
        }
    }

    pub fn passive_proxy(self) -> Option<ProxyKind> {
        match self {
            Mode::PassiveScout => Some(ProxyKind::Scout),
            Mode::PassiveStrategist => Some(ProxyKind::Strategist),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "active" => Ok(Mode::Active),
            "passive-scout" | "passive" => Ok(Mode::PassiveScout),
            "passive-strategist" => Ok(Mode::PassiveStrategist),
            "false-belief" => Ok(Mode::FalseBelief),
            _ => Err(format!("unknown mode {s}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub mode: Mode,
    pub per_task: usize,
    /// Probe the map every this many turns; 0 probes only at phase ends.
    pub probe_every: u32,
    /// Exploration budget; the room-count default when unset.
    pub budget: Option<u32>,
    /// Objects changed in false-belief mode.
    pub k: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { mode: Mode::Active, per_task: DEFAULT_PER_TASK, probe_every: 1, budget: None, k: DEFAULT_K }
    }
}

impl EpisodeConfig {
    pub fn env_config(&self, scene: &Scene) -> EnvConfig {
        if let Some(kind) = self.mode.passive_proxy() {
            return kind.env_config(scene);
        }
        let mut cfg = EnvConfig::for_scene(scene);
        if let Some(b) = self.budget {
            cfg.budget = b;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnMetrics {
    pub correctness: Correctness,
    pub perception: Option<OriPos>,
    pub self_tracking: SelfTracking,
    pub consistency: Option<OriPos>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub phase: Phase,
    pub turn: u32,
    pub map: Option<CognitiveMap>,
    /// Why `map` is missing; such turns score 0.
    pub error: Option<String>,
    pub metrics: TurnMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub candidates: CandidateSet,
    pub selected: Vec<u32>,
    pub f1: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    pub task_kind: TaskKind,
    pub answer: String,
    pub score: Score,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisionRecord {
    pub perturbation: Perturbation,
    pub claims: Vec<(String, ChangeKind)>,
    pub f1_ori: f64,
    pub f1_pos: f64,
    pub redundancy: Redundancy,
    pub sigma: Sigma,
    pub inertia: InertiaScore,
    pub changed: OriPos,
}

/// Aggregates of an episode, everything but the transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    /// Perception turns in the exploration phase.
    pub steps: u32,
    /// Actions the agent chose itself; 0 in passive modes.
    pub agent_actions: u32,
    /// Information gain after every exploration action.
    pub gains: Vec<f64>,
    pub final_correctness: Option<Correctness>,
    pub stability: Option<OriPos>,
    pub uncertainty: Option<UncertaintyRecord>,
    pub revision: Option<RevisionRecord>,
    pub task_means: BTreeMap<TaskKind, f64>,
    pub overall: Option<f64>,
    pub timeouts: u32,
    pub rejections: u32,
    pub question_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub mode: Mode,
    pub agent: String,
    pub config_hash: String,
    pub log: EpisodeLog,
    pub probes: Vec<ProbeRecord>,
    pub answers: Vec<AnswerRecord>,
    pub summary: EpisodeSummary,
}

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error("protocol violation: expected {expected:?}, got {got:?}")]
    Protocol { expected: ReplyKind, got: ReplyKind },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error("cannot perturb scene: {0}")]
    Perturb(#[from] falsebelief::PerturbError),
}

struct Driver<'a> {
    agent: &'a mut dyn Agent,
    timeouts: u32,
    rejections: u32,
}

impl Driver<'_> {
    /// `Ok(None)` when the agent timed out.
    fn ask(&mut self, msg: ToAgent) -> Result<Option<FromAgent>, EpisodeError> {
        match self.agent.respond(&msg) {
            Ok(reply) if reply.kind() == msg.expects() => Ok(Some(reply)),
            Ok(reply) => Err(EpisodeError::Protocol { expected: msg.expects(), got: reply.kind() }),
            Err(AgentError::Timeout(_)) => {
                self.timeouts += 1;
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    }
}

fn feedback(action: &Action, r: &StepResult, budget: u32) -> Feedback {
    Feedback { action: action.to_string(), outcome: r.outcome.clone(), text: r.outcome.render(), turn: r.turn, budget }
}

fn empty_metrics() -> TurnMetrics {
    TurnMetrics {
        correctness: Correctness::from_parts(0.0, 0.0, 0.0),
        perception: None,
        self_tracking: SelfTracking { ori: 0.0, pos: 0.0, derived: false, flagged: true },
        consistency: None,
    }
}

/// Map probing state for one phase.
struct Prober {
    phase: Phase,
    seen: BTreeSet<String>,
    records: Vec<ProbeRecord>,
    /// Global maps and the objects seen so far, per probe, for stability.
    history: Vec<(BTreeMap<String, MapItem>, BTreeSet<String>)>,
    new_since_probe: BTreeSet<String>,
}

impl Prober {
    fn new(phase: Phase) -> Prober {
        Prober {
            phase,
            seen: BTreeSet::new(),
            records: Vec::new(),
            history: Vec::new(),
            new_since_probe: BTreeSet::new(),
        }
    }

    fn note(&mut self, outcome: &Outcome) {
        if let Outcome::Observation { sightings } = outcome {
            for s in sightings {
                if let Some(n) = s.entity.object_name() {
                    if self.seen.insert(n.to_string()) {
                        self.new_since_probe.insert(n.to_string());
                    }
                }
            }
        }
    }

    fn probe(&mut self, d: &mut Driver<'_>, scene: &Scene, pose: Pose, turn: u32) -> Result<(), EpisodeError> {
        let reply = d.ask(ToAgent::ProbeMap { turn, schema: MAP_SCHEMA.to_string() })?;
        let first_seen = std::mem::take(&mut self.new_since_probe);
        let record = match reply {
            Some(FromAgent::Map { map }) => {
                let truth = Frame::of(scene.spawn).pose_to_local(pose);
                let metrics = TurnMetrics {
                    correctness: correctness(&map.global, scene),
                    perception: perception(&map.local, scene, pose, &first_seen),
                    self_tracking: self_tracking(&map, truth),
                    consistency: local_global_consistency(&map),
                };
                self.history.push((map.global.clone(), self.seen.clone()));
                ProbeRecord { phase: self.phase, turn, map: Some(map), error: None, metrics }
            }
            _ => {
                self.history.push((BTreeMap::new(), self.seen.clone()));
                ProbeRecord {
                    phase: self.phase,
                    turn,
                    map: None,
                    error: Some("no map".into()),
                    metrics: empty_metrics(),
                }
            }
        };
        self.records.push(record);
        Ok(())
    }

    fn last_global(&self) -> BTreeMap<String, MapItem> {
        self.history.last().map(|h| h.0.clone()).unwrap_or_default()
    }

    fn stability(&self, scene: &Scene) -> Option<OriPos> {
        let turns: Vec<StabilityTurn<'_>> =
            self.history.iter().map(|(g, o)| StabilityTurn { global: g, observed: o }).collect();
        stability(&turns, scene)
    }
}

/// The action loop of one phase, with probes after every `probe_every`
/// turns and always once at the end.
fn explore(d: &mut Driver<'_>, env: &mut Env, cfg: &EpisodeConfig, prober: &mut Prober) -> Result<u32, EpisodeError> {
    let budget = env.config().budget;
    let mut last: Option<Feedback> = None;
    let mut error: Option<String> = None;
    let mut streak = 0u32;
    let mut probed_turn = None;
    let mut chosen = 0u32;
    while !env.is_over() {
        let reply = d.ask(ToAgent::Step { last: last.take(), error: error.take(), turn: env.turn(), budget })?;
        let action = match reply {
            Some(FromAgent::Action { action }) => action.parse::<Action>().map_err(|e| e.to_string()),
            _ => Ok(Action::Observe),
        };
        let action = match action {
            Ok(a) => a,
            Err(e) => {
                d.rejections += 1;
                streak += 1;
                if streak < MAX_REJECTIONS {
                    error = Some(e);
                    continue;
                }
                Action::Observe
            }
        };
        let action = match env.step(action.clone()) {
            Ok(r) => {
                chosen += 1;
                last = Some(feedback(&action, &r, budget));
                streak = 0;
                Some((action, r))
            }
            Err(e) => {
                d.rejections += 1;
                streak += 1;
                if streak < MAX_REJECTIONS {
                    error = Some(e.to_string());
                    None
                } else {
                    streak = 0;
                    let r = env.step(Action::Observe).expect("observe is always legal while the phase runs");
                    last = Some(feedback(&Action::Observe, &r, budget));
                    Some((Action::Observe, r))
                }
            }
        };
        if let Some((a, r)) = action {
            prober.note(&r.outcome);
            if a.is_perception() && cfg.probe_every > 0 && r.turn % cfg.probe_every == 0 {
                prober.probe(d, env.scene(), env.pose(), r.turn)?;
                probed_turn = Some(r.turn);
            }
        }
    }
    if probed_turn != Some(env.turn()) || prober.records.is_empty() {
        prober.probe(d, env.scene(), env.pose(), env.turn())?;
    }
    Ok(chosen)
}

fn uncertainty(
    d: &mut Driver<'_>,
    scene: &Scene,
    log: &EpisodeLog,
    phase: Phase,
    pose: Pose,
) -> Result<UncertaintyRecord, EpisodeError> {
    let poses: Vec<Pose> =
        log.phase_entries(phase).filter(|e| matches!(e.action, Action::Observe)).map(|e| e.pose_before).collect();
    let observed = probe::observed_cells(scene, &poses);
    let cs = sample_candidates(scene, &observed, CANDIDATES, scene.config.seed ^ CANDIDATE_SALT);
    let grid = probe::render_grid(scene, pose, &cs);
    let candidates = cs.points.iter().map(|p| CandidateView { id: p.id, position: p.position }).collect();
    let reply = d.ask(ToAgent::ProbeUncertainty { grid, candidates })?;
    let (selected, error) = match reply {
        Some(FromAgent::Uncertainty { selected }) => (selected, None),
        _ => (Vec::new(), Some("no selection".to_string())),
    };
    let ids: BTreeSet<u32> = selected.iter().copied().collect();
    let valid: BTreeSet<u32> = cs.points.iter().map(|p| p.id).collect();
    let (f1, error) = if ids.is_subset(&valid) {
        (probe::uncertainty_f1(&ids, &cs), error)
    } else {
        (0.0, Some("selection names unknown candidates".to_string()))
    };
    Ok(UncertaintyRecord { candidates: cs, selected, f1, error })
}

/// Run one episode of `cfg.mode` on `scene`.
pub fn run_episode(
    agent: &mut dyn Agent,
    cfg: &EpisodeConfig,
    scene: &Scene,
    config_hash: &str,
) -> Result<EpisodeRecord, EpisodeError> {
    let mut d = Driver { agent, timeouts: 0, rejections: 0 };
    let env_cfg = cfg.env_config(scene);
    let mut env = Env::new(scene.clone(), env_cfg.clone());
    let mut prober = Prober::new(Phase::Exploration);
    let (log, steps, agent_actions, pose) = match cfg.mode.passive_proxy() {
        Some(kind) => {
            let run = run_proxy(kind, scene)?;
            d.ask(ToAgent::Briefing { briefing: env.briefing() })?;
            let entries = run
                .log
                .entries
                .iter()
                .map(|e| StreamEntry {
                    action: e.action.to_string(),
                    outcome: e.result.outcome.clone(),
                    text: e.result.outcome.render(),
                })
                .collect();
            d.ask(ToAgent::Stream { entries })?;
            for e in &run.log.entries {
                prober.note(&e.result.outcome);
            }
            let pose = run.log.entries.last().map(|e| e.pose_after).unwrap_or(scene.spawn);
            prober.probe(&mut d, scene, pose, run.turns)?;
            (run.log, run.turns, 0, pose)
        }
        None => {
            d.ask(ToAgent::Briefing { briefing: env.briefing() })?;
            let chosen = explore(&mut d, &mut env, cfg, &mut prober)?;
            let turns = env.turn();
            let pose = env.pose();
            (env.log().clone(), turns, chosen, pose)
        }
    };
    let gains = gain_curve(scene, &log);
    let unc = uncertainty(&mut d, scene, &log, Phase::Exploration, pose)?;
    let mut probes = std::mem::take(&mut prober.records);
    let final_correctness = probes.last().map(|p| p.metrics.correctness);
    let stab = prober.stability(scene);
    let old_map = prober.last_global();

    let (log, question_scene, revision) = if cfg.mode == Mode::FalseBelief {
        let (revised, p) =
            perturb(scene, cfg.k, scene.config.seed ^ PERTURB_SALT, &[env.pose().position], PerturbConfig::default())?;
        let budget = env_cfg.budget;
        d.agent.privileged_revision(&revised, budget);
        env.begin_revision(revised.clone(), budget);
        d.ask(ToAgent::Revision { notice: REVISION_NOTICE.to_string(), budget })?;
        let mut rp = Prober::new(Phase::Revision);
        explore(&mut d, &mut env, cfg, &mut rp)?;
        let claims: Vec<(String, ChangeKind)> = match d.ask(ToAgent::IdentifyChanges)? {
            Some(FromAgent::Changes { claims }) => claims.into_iter().map(|c| (c.name, c.kind)).collect(),
            _ => Vec::new(),
        };
        let log = env.log().clone();
        let maps_by_turn: BTreeMap<u32, BTreeMap<String, MapItem>> =
            rp.records.iter().filter_map(|r| Some((r.turn, r.map.as_ref()?.global.clone()))).collect();
        let new_map = rp.last_global();
        let sigma = estimate_sigma(&log, &maps_by_turn, &new_map, &p, &revised);
        let (f1_ori, f1_pos) = identification_f1(&claims, &p);
        let record = RevisionRecord {
            redundancy: redundancy_steps(&log, &p),
            inertia: inertia(&old_map, &new_map, &revised, &p, sigma.value),
            changed: changed_subset_correctness(&new_map, &revised, &p),
            sigma,
            f1_ori,
            f1_pos,
            claims,
            perturbation: p,
        };
        probes.extend(rp.records);
        (log, revised, Some(record))
    } else {
        (log, scene.clone(), None)
    };

    let mut answers = Vec::new();
    let mut question_error = None;
    match generate_questions(&question_scene, cfg.per_task, question_scene.config.seed) {
        Ok(qs) => {
            for q in &qs {
                let text = match d.ask(ToAgent::Question { question: QuestionView::from(q) })? {
                    Some(FromAgent::Answer { text }) => text,
                    _ => String::new(),
                };
                let score = grade(q, &text, &question_scene);
                answers.push(AnswerRecord { question_id: q.id.clone(), task_kind: q.task_kind, answer: text, score });
            }
        }
        Err(e @ (TaskError::SceneTooSmall(_) | TaskError::NoQuestions)) => question_error = Some(e.to_string()),
    }
    d.agent.finish();

    let task_means = task_means(&answers);
    let overall = mean(answers.iter().map(|a| a.score.value));
    Ok(EpisodeRecord {
        seed: scene.config.seed,
        mode: cfg.mode,
        agent: d.agent.id(),
        config_hash: config_hash.to_string(),
        log,
        probes,
        answers,
        summary: EpisodeSummary {
            steps,
            agent_actions,
            gains,
            final_correctness,
            stability: stab,
            uncertainty: Some(unc),
            revision,
            task_means,
            overall,
            timeouts: d.timeouts,
            rejections: d.rejections,
            question_error,
        },
    })
}

pub fn task_means(answers: &[AnswerRecord]) -> BTreeMap<TaskKind, f64> {
    let mut acc: BTreeMap<TaskKind, (f64, usize)> = BTreeMap::new();
    for a in answers {
        let e = acc.entry(a.task_kind).or_default();
        e.0 += a.score.value;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

pub fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// The scene questions were asked on: the original, or the revised one
/// reconstructed from the logged perturbation.
pub fn question_scene(scene: &Scene, record: &EpisodeRecord) -> Scene {
    let mut out = scene.clone();
    if let Some(rev) = &record.summary.revision {
        for c in &rev.perturbation.changes {
            if let Some(o) = out.objects.iter_mut().find(|o| o.name == c.name) {
                o.position = c.new_position;
                o.facing = c.new_facing;
            }
        }
    }
    out
}

/// Grade the persisted answer texts again.
pub fn regrade(scene: &Scene, record: &EpisodeRecord, per_task: usize) -> Result<Vec<AnswerRecord>, TaskError> {
    let qs_scene = question_scene(scene, record);
    let qs = generate_questions(&qs_scene, per_task, qs_scene.config.seed)?;
    let texts: BTreeMap<&str, &str> =
        record.answers.iter().map(|a| (a.question_id.as_str(), a.answer.as_str())).collect();
    Ok(qs
        .iter()
        .map(|q| {
            let text = texts.get(q.id.as_str()).copied().unwrap_or("");
            AnswerRecord {
                question_id: q.id.clone(),
                task_kind: q.task_kind,
                answer: text.to_string(),
                score: grade(q, text, &qs_scene),
            }
        })
        .collect())
}
