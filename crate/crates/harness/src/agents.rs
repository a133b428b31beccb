//! Agents the episode driver can talk to.
//!
//! Scripted proxies and the oracle run in process and read the scene they
//! were built for; their shadow environment mirrors the driver's exactly, so
//! the actions they pick are legal. External agents get nothing but
//! protocol messages.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use gridmind_core::belief::BeliefState;
use gridmind_core::env::{Action, Env, EnvConfig, Outcome};
use gridmind_core::falsebelief::ChangeKind;
use gridmind_core::probe::{self, CognitiveMap, MapItem, PoseClaim};
use gridmind_core::proxies::{make_proxy, Proxy, ProxyKind};
use gridmind_core::tasks::{generate_questions, oracle_answer, Question};
use gridmind_core::{Cardinal, Frame, Scene};
use serde::{Deserialize, Serialize};

use crate::protocol::{read_frame, write_frame, ChangeClaim, FromAgent, ToAgent};

/// Seconds an external agent may take per message.
pub const DEFAULT_TIMEOUT_SECS: u64 = 120;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("agent did not reply within {0:?}")]
    Timeout(Duration),
    #[error("agent transport failed: {0}")]
    Transport(String),
    #[error("agent closed the connection")]
    Closed,
}

pub trait Agent: Send {
    fn id(&self) -> String;

    fn respond(&mut self, msg: &ToAgent) -> Result<FromAgent, AgentError>;

    /// In-process agents with ground-truth access learn the perturbed scene
    /// here. Everyone else ignores it.
    fn privileged_revision(&mut self, _revised: &Scene, _budget: u32) {}

    fn finish(&mut self) {}
}

/// How to build an agent for one episode.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    /// Strategist exploration, ground-truth maps and answers.
    Oracle,
    Proxy {
        proxy: ProxyKind,
    },
    External {
        command: Vec<String>,
        timeout_secs: u64,
    },
}

impl AgentSpec {
    pub fn id(&self) -> String {
        match self {
            AgentSpec::Oracle => "oracle".into(),
            AgentSpec::Proxy { proxy } => proxy.as_str().into(),
            AgentSpec::External { command, .. } => format!("external:{}", command.join(" ")),
        }
    }

    pub fn build(&self, scene: &Scene, env: EnvConfig, per_task: usize) -> Result<Box<dyn Agent>, AgentError> {
        Ok(match self {
            AgentSpec::Oracle => Box::new(ProxyAgent::oracle(scene, env, per_task)),
            AgentSpec::Proxy { proxy } => Box::new(ProxyAgent::new(*proxy, scene, env)),
            AgentSpec::External { command, timeout_secs } => {
                Box::new(ExternalAgent::spawn(command, Duration::from_secs(*timeout_secs))?)
            }
        })
    }
}

/// A scripted explorer. Maps come from its own constraint belief; as an
/// oracle it reports ground truth instead and answers every question.
pub struct ProxyAgent {
    kind: ProxyKind,
    oracle: Option<usize>,
    scene: Scene,
    old_scene: Option<Scene>,
    env: Env,
    proxy: Box<dyn Proxy>,
    belief: BeliefState,
    /// Last reported facing per object, agent frame.
    facings: BTreeMap<String, Option<Cardinal>>,
    observed_at: Vec<gridmind_core::Pose>,
    pre_revision: Option<BTreeMap<String, MapItem>>,
}

impl ProxyAgent {
    pub fn new(kind: ProxyKind, scene: &Scene, env: EnvConfig) -> ProxyAgent {
        ProxyAgent {
            kind,
            oracle: None,
            scene: scene.clone(),
            old_scene: None,
            env: Env::new(scene.clone(), env),
            proxy: make_proxy(kind, scene),
            belief: BeliefState::for_scene(scene),
            facings: BTreeMap::new(),
            observed_at: Vec::new(),
            pre_revision: None,
        }
    }

    pub fn oracle(scene: &Scene, env: EnvConfig, per_task: usize) -> ProxyAgent {
        ProxyAgent { oracle: Some(per_task), ..ProxyAgent::new(ProxyKind::Strategist, scene, env) }
    }

    fn frame(&self) -> Frame {
        Frame::of(self.scene.spawn)
    }

    fn step(&mut self) -> Action {
        let action = self.proxy.next_action(&self.env);
        self.apply(&action);
        action
    }

    fn apply(&mut self, action: &Action) {
        let pose = self.env.pose();
        // The driver's environment is identical, so this cannot fail unless
        // the driver has already ended the phase.
        if let Ok(r) = self.env.step(action.clone()) {
            match &r.outcome {
                Outcome::Observation { sightings } => {
                    self.observed_at.push(pose);
                    if let Ok(b) = self.belief.assert_observation(&self.scene.layout(), pose, sightings) {
                        self.belief = b;
                    }
                    for s in sightings {
                        if let Some(n) = s.entity.object_name() {
                            self.facings.insert(n.to_string(), s.facing);
                        }
                    }
                }
                Outcome::Located { target, position } => {
                    if let Ok(b) = self.belief.assert_position(target, self.frame().to_world(*position)) {
                        self.belief = b;
                    }
                }
                _ => {}
            }
            self.proxy.record(&self.env, action, &r);
        }
    }

    fn belief_global(&self) -> BTreeMap<String, MapItem> {
        let fr = self.frame();
        self.belief
            .domains()
            .filter_map(|(n, d)| {
                let c = fr.to_local(d.single()?);
                Some((n.to_string(), MapItem { position: (c.x, c.y), facing: self.facings.get(n).copied().flatten() }))
            })
            .collect()
    }

    fn map(&self) -> CognitiveMap {
        let pose = self.env.pose();
        let fr = self.frame();
        if self.oracle.is_some() {
            let all: BTreeSet<String> = self.scene.object_names.iter().cloned().collect();
            return probe::oracle_map(&self.scene, pose, &all);
        }
        let global = self.belief_global();
        let me = fr.pose_to_local(pose);
        let ego = Frame::of(me);
        let visible = probe::visible_objects(&self.scene, pose);
        let local = global
            .iter()
            .filter(|(n, _)| visible.contains(*n))
            .map(|(n, m)| {
                let c = ego.to_local(m.cell());
                (n.clone(), MapItem { position: (c.x, c.y), facing: m.facing.map(|f| ego.cardinal_to_local(f)) })
            })
            .collect();
        CognitiveMap { global, local, agent: Some(PoseClaim::from_pose(me)) }
    }

    fn unobserved(&self, candidates: &[crate::protocol::CandidateView]) -> Vec<u32> {
        let seen = probe::observed_cells(&self.scene, &self.observed_at);
        let fr = self.frame();
        candidates
            .iter()
            .filter(|c| !seen.contains(fr.to_world(gridmind_core::Cell::new(c.position.0, c.position.1))))
            .map(|c| c.id)
            .collect()
    }

    fn changes(&self) -> Vec<ChangeClaim> {
        let mut out = Vec::new();
        if let (Some(_), Some(old)) = (self.oracle, &self.old_scene) {
            for (a, b) in old.objects.iter().zip(&self.scene.objects) {
                if a.position != b.position {
                    out.push(ChangeClaim { name: a.name.clone(), kind: ChangeKind::Relocate });
                } else if a.facing != b.facing {
                    out.push(ChangeClaim { name: a.name.clone(), kind: ChangeKind::Reorient });
                }
            }
            return out;
        }
        let Some(before) = &self.pre_revision else { return out };
        for (n, now) in self.belief_global() {
            let Some(was) = before.get(&n) else { continue };
            if was.position != now.position {
                out.push(ChangeClaim { name: n, kind: ChangeKind::Relocate });
            } else if was.facing != now.facing {
                out.push(ChangeClaim { name: n, kind: ChangeKind::Reorient });
            }
        }
        out
    }

    fn answer(&self, id: &str) -> String {
        let Some(per_task) = self.oracle else { return String::new() };
        let qs: Vec<Question> = generate_questions(&self.scene, per_task, self.scene.config.seed).unwrap_or_default();
        qs.iter().find(|q| q.id == id).map(|q| oracle_answer(q, &self.scene)).unwrap_or_default()
    }
}

impl Agent for ProxyAgent {
    fn id(&self) -> String {
        if self.oracle.is_some() {
            "oracle".into()
        } else {
            self.kind.as_str().into()
        }
    }

    fn respond(&mut self, msg: &ToAgent) -> Result<FromAgent, AgentError> {
        Ok(match msg {
            ToAgent::Briefing { .. } | ToAgent::Revision { .. } => FromAgent::Ack,
            ToAgent::Stream { entries } => {
                // Follow the recorded walk so probes are answered from its end.
                for e in entries {
                    if let Ok(a) = e.action.parse::<Action>() {
                        self.apply(&a);
                    }
                }
                FromAgent::Ack
            }
            ToAgent::Step { .. } => FromAgent::Action { action: self.step().to_string() },
            ToAgent::ProbeMap { .. } => FromAgent::Map { map: self.map() },
            ToAgent::ProbeUncertainty { candidates, .. } => {
                FromAgent::Uncertainty { selected: self.unobserved(candidates) }
            }
            ToAgent::IdentifyChanges => FromAgent::Changes { claims: self.changes() },
            ToAgent::Question { question } => FromAgent::Answer { text: self.answer(&question.id) },
        })
    }

    fn privileged_revision(&mut self, revised: &Scene, budget: u32) {
        self.pre_revision = Some(self.belief_global());
        self.old_scene = Some(std::mem::replace(&mut self.scene, revised.clone()));
        self.env.begin_revision(revised.clone(), budget);
        self.proxy = make_proxy(self.kind, revised);
        self.belief = BeliefState::for_scene(revised);
        self.observed_at.clear();
    }
}

/// How long a finished agent may take to exit before it is killed.
pub const FINISH_GRACE: Duration = Duration::from_secs(2);

/// A child process speaking length-prefixed JSON on stdin/stdout.
pub struct ExternalAgent {
    id: String,
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    replies: Receiver<std::io::Result<Option<FromAgent>>>,
    timeout: Duration,
    /// Replies still owed for messages that timed out; they are discarded
    /// when they arrive.
    stale: usize,
}

impl ExternalAgent {
    pub fn spawn(command: &[String], timeout: Duration) -> Result<ExternalAgent, AgentError> {
        let (prog, args) = command.split_first().ok_or_else(|| AgentError::Transport("empty command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AgentError::Transport(format!("{prog}: {e}")))?;
        let stdout = child.stdout.take().expect("piped");
        let stdin = child.stdin.take().expect("piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || reader_loop(BufReader::new(stdout), tx));
        Ok(ExternalAgent {
            id: format!("external:{}", command.join(" ")),
            child,
            stdin: Some(BufWriter::new(stdin)),
            replies: rx,
            timeout,
            stale: 0,
        })
    }
}

fn reader_loop<R: Read>(mut r: R, tx: mpsc::Sender<std::io::Result<Option<FromAgent>>>) {
    loop {
        let msg = read_frame(&mut r);
        let done = !matches!(msg, Ok(Some(_)));
        if tx.send(msg).is_err() || done {
            return;
        }
    }
}

impl Agent for ExternalAgent {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn respond(&mut self, msg: &ToAgent) -> Result<FromAgent, AgentError> {
        let w = self.stdin.as_mut().ok_or(AgentError::Closed)?;
        write_frame(w, msg).map_err(|e| AgentError::Transport(e.to_string()))?;
        loop {
            match self.replies.recv_timeout(self.timeout) {
                Ok(Ok(Some(reply))) => {
                    if self.stale > 0 {
                        self.stale -= 1;
                        continue;
                    }
                    return Ok(reply);
                }
                Ok(Ok(None)) | Err(RecvTimeoutError::Disconnected) => return Err(AgentError::Closed),
                Ok(Err(e)) => return Err(AgentError::Transport(e.to_string())),
                Err(RecvTimeoutError::Timeout) => {
                    self.stale += 1;
                    return Err(AgentError::Timeout(self.timeout));
                }
            }
        }
    }

    fn finish(&mut self) {
        // Closing stdin tells the agent the session is over.
        if let Some(mut w) = self.stdin.take() {
            let _ = w.flush();
        }
        let deadline = Instant::now() + FINISH_GRACE;
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ExternalAgent {
    fn drop(&mut self) {
        if self.stdin.take().is_some() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// A minimal stdio agent: one full sweep of the starting room, then stop.
/// Maps list what it saw at the sweep, in its own frame; answers are blank.
/// It exists to exercise the transport end to end.
pub fn run_sweep_agent<R: Read, W: Write>(mut input: R, mut output: W) -> std::io::Result<()> {
    let mut sweep = 0u32;
    let mut seen: BTreeMap<String, Option<Cardinal>> = BTreeMap::new();
    while let Some(msg) = read_frame::<_, ToAgent>(&mut input)? {
        let reply = match &msg {
            ToAgent::Step { last, .. } => {
                if let Some(fb) = last {
                    if let Outcome::Observation { sightings } = &fb.outcome {
                        for s in sightings {
                            if let Some(n) = s.entity.object_name() {
                                seen.insert(n.to_string(), s.facing);
                            }
                        }
                    }
                }
                let action = match sweep {
                    n if n >= 8 => Action::Terminate,
                    n if n % 2 == 0 => Action::Observe,
                    _ => Action::Rotate { degrees: 90 },
                };
                sweep += 1;
                FromAgent::Action { action: action.to_string() }
            }
            ToAgent::ProbeMap { .. } => {
                let global = seen.iter().map(|(n, f)| (n.clone(), MapItem { position: (0, 0), facing: *f })).collect();
                FromAgent::Map { map: CognitiveMap { global, ..CognitiveMap::default() } }
            }
            ToAgent::ProbeUncertainty { .. } => FromAgent::Uncertainty { selected: Vec::new() },
            ToAgent::IdentifyChanges => FromAgent::Changes { claims: Vec::new() },
            ToAgent::Question { .. } => FromAgent::Answer { text: String::new() },
            ToAgent::Revision { .. } => {
                sweep = 0;
                FromAgent::Ack
            }
            ToAgent::Briefing { .. } | ToAgent::Stream { .. } => FromAgent::Ack,
        };
        write_frame(&mut output, &reply)?;
    }
    Ok(())
}
