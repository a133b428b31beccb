//! Messages exchanged with an agent, and their length-prefixed framing.
//!
//! Every [`ToAgent`] message expects exactly one [`FromAgent`] reply of the
//! kind named by [`ToAgent::expects`]. The same JSON bodies travel over the
//! stdio transport of external agents and over the session service.

use std::io::{self, Read, Write};

use gridmind_core::env::{Briefing, Outcome};
use gridmind_core::falsebelief::ChangeKind;
use gridmind_core::probe::CognitiveMap;
use gridmind_core::tasks::{Question, TaskKind};
use serde::{Deserialize, Serialize};

/// Frames larger than this are rejected.
pub const MAX_FRAME: usize = 16 << 20;

/// What the agent sees after an action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub action: String,
    pub outcome: Outcome,
    pub text: String,
    pub turn: u32,
    pub budget: u32,
}

/// One step of a proxy's exploration, replayed to a passive agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub action: String,
    pub outcome: Outcome,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub id: u32,
    /// Agent frame.
    pub position: (i32, i32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionView {
    pub id: String,
    pub task_kind: TaskKind,
    pub prompt: String,
    pub answer_schema: String,
}

impl From<&Question> for QuestionView {
    fn from(q: &Question) -> QuestionView {
        QuestionView {
            id: q.id.clone(),
            task_kind: q.task_kind,
            prompt: q.prompt(),
            answer_schema: q.answer_schema.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ToAgent {
    Briefing {
        briefing: Briefing,
    },
    /// Request for the next action. `last` is the result of the previous
    /// one; `error` is set when it was rejected.
    Step {
        last: Option<Feedback>,
        error: Option<String>,
        turn: u32,
        budget: u32,
    },
    /// A recorded exploration the agent did not steer.
    Stream {
        entries: Vec<StreamEntry>,
    },
    ProbeMap {
        turn: u32,
        schema: String,
    },
    ProbeUncertainty {
        grid: String,
        candidates: Vec<CandidateView>,
    },
    Revision {
        notice: String,
        budget: u32,
    },
    IdentifyChanges,
    Question {
        question: QuestionView,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    Ack,
    Action,
    Map,
    Uncertainty,
    Changes,
    Answer,
}

impl ToAgent {
    pub fn expects(&self) -> ReplyKind {
        match self {
            ToAgent::Briefing { .. } | ToAgent::Stream { .. } | ToAgent::Revision { .. } => ReplyKind::Ack,
            ToAgent::Step { .. } => ReplyKind::Action,
            ToAgent::ProbeMap { .. } => ReplyKind::Map,
            ToAgent::ProbeUncertainty { .. } => ReplyKind::Uncertainty,
            ToAgent::IdentifyChanges => ReplyKind::Changes,
            ToAgent::Question { .. } => ReplyKind::Answer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeClaim {
    pub name: String,
    pub kind: ChangeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FromAgent {
    Ack,
    /// Action text as accepted by `Action::from_str`.
    Action {
        action: String,
    },
    Map {
        map: CognitiveMap,
    },
    Uncertainty {
        selected: Vec<u32>,
    },
    Changes {
        claims: Vec<ChangeClaim>,
    },
    Answer {
        text: String,
    },
}

impl FromAgent {
    pub fn kind(&self) -> ReplyKind {
        match self {
            FromAgent::Ack => ReplyKind::Ack,
            FromAgent::Action { .. } => ReplyKind::Action,
            FromAgent::Map { .. } => ReplyKind::Map,
            FromAgent::Uncertainty { .. } => ReplyKind::Uncertainty,
            FromAgent::Changes { .. } => ReplyKind::Changes,
            FromAgent::Answer { .. } => ReplyKind::Answer,
        }
    }
}

/// Write one frame: a big-endian `u32` length, then the JSON body.
pub fn write_frame<W: Write, T: Serialize>(w: &mut W, msg: &T) -> io::Result<()> {
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    let len = u32::try_from(body.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

/// Read one frame. `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read, T: for<'de> Deserialize<'de>>(r: &mut R) -> io::Result<Option<T>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {n} bytes")));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        let msgs = vec![
            FromAgent::Action { action: "Rotate(90)".into() },
            FromAgent::Uncertainty { selected: vec![3, 1] },
            FromAgent::Ack,
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_frame(&mut buf, m).unwrap();
        }
        let mut r = &buf[..];
        let mut back = Vec::new();
        while let Some(m) = read_frame::<_, FromAgent>(&mut r).unwrap() {
            back.push(m);
        }
        assert_eq!(back, msgs);
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &FromAgent::Ack).unwrap();
        buf.pop();
        assert!(read_frame::<_, FromAgent>(&mut &buf[..]).is_err());
    }

    #[test]
    fn reply_kinds_pair_up() {
        let step = ToAgent::Step { last: None, error: None, turn: 0, budget: 20 };
        assert_eq!(step.expects(), FromAgent::Action { action: "Observe".into() }.kind());
        assert_eq!(ToAgent::IdentifyChanges.expects(), ReplyKind::Changes);
    }
}
