//! Synchronous round-based execution of node programs.
//!
//! In every round each running node consumes the messages delivered to it,
//! updates its state and emits an outbox; the outboxes are delivered at the
//! start of the next round. Nodes are stepped in id order unless a schedule
//! permutation is given, and inboxes are always ordered by sender id, so the
//! schedule never changes results.

mod audit;

pub use audit::{
    assert_locality, message_stats, CostReport, LocalityReport, LocalityViolation, PhaseCost,
};

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WeightedGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "COMP0")]
    Comp0,
    #[serde(rename = "COMP1")]
    Comp1,
    #[serde(rename = "FWD_U")]
    FwdU,
    #[serde(rename = "BWD_ETA")]
    BwdEta,
    #[serde(rename = "RICH_U1")]
    RichU1,
    #[serde(rename = "GATHER")]
    Gather,
}

impl Tag {
    pub const ALL: [Tag; 6] = [
        Tag::Comp0,
        Tag::Comp1,
        Tag::FwdU,
        Tag::BwdEta,
        Tag::RichU1,
        Tag::Gather,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn phase(self) -> Option<Phase> {
        match self {
            Tag::Comp0 | Tag::Comp1 => Some(Phase::Precompute),
            Tag::FwdU => Some(Phase::Forward),
            Tag::BwdEta => Some(Phase::Backward),
            Tag::RichU1 => Some(Phase::Richardson),
            Tag::Gather => None,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tag::Comp0 => "COMP0",
            Tag::Comp1 => "COMP1",
            Tag::FwdU => "FWD_U",
            Tag::BwdEta => "BWD_ETA",
            Tag::RichU1 => "RICH_U1",
            Tag::Gather => "GATHER",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Precompute,
    Forward,
    Backward,
    Richardson,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::Precompute,
        Phase::Forward,
        Phase::Backward,
        Phase::Richardson,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One wire record. `col` names the node a relayed value refers to (a
/// column of a power row, or the origin of a flooded value); it is absent
/// when the value belongs to the sender itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub round: usize,
    pub src: usize,
    pub dst: usize,
    pub tag: Tag,
    pub level: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col: Option<usize>,
    pub value: f64,
}

impl Message {
    /// The node whose information this message carries.
    pub fn origin(&self) -> usize {
        self.col.unwrap_or(self.src)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Did work this round (or is waiting on messages it has been promised).
    Running(Phase),
    /// Has nothing to do until a message arrives.
    Waiting(&'static str),
    Done,
}

/// What a node sees during one round.
pub struct RoundCtx<'a> {
    pub round: usize,
    pub node: usize,
    pub inbox: &'a [Message],
    outbox: &'a mut Vec<Message>,
}

impl RoundCtx<'_> {
    pub fn send(&mut self, dst: usize, tag: Tag, level: u32, col: Option<usize>, value: f64) {
        self.outbox.push(Message {
            round: self.round,
            src: self.node,
            dst,
            tag,
            level,
            col,
            value,
        });
    }
}

pub trait NodeProgram {
    fn step(&mut self, ctx: &mut RoundCtx<'_>) -> Result<Status>;
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep every message in the transcript (counts are always kept).
    pub log_messages: bool,
    /// Order in which nodes are stepped within a round.
    pub schedule: Option<Vec<usize>>,
    /// Abort after this many rounds in a single segment.
    pub max_rounds: Option<usize>,
}

impl RunOptions {
    pub fn logged() -> Self {
        Self {
            log_messages: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub rounds: usize,
    /// Full log in canonical order; empty unless logging was enabled.
    pub messages: Vec<Message>,
    pub logged: bool,
    /// Messages sent, indexed by [`Tag::index`].
    pub tag_counts: [usize; 6],
    /// Rounds attributed to each phase, indexed by [`Phase::index`].
    pub phase_rounds: [usize; 4],
    /// Rounds in which each node was stepped.
    pub steps: Vec<usize>,
    /// Values collected by the harness at the end of the last segment.
    pub gathered: Vec<f64>,
}

impl Transcript {
    pub fn message_count(&self) -> usize {
        self.tag_counts
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != Tag::Gather.index())
            .map(|(_, c)| c)
            .sum()
    }

    pub fn write_ndjson(&self, mut w: impl Write) -> Result<()> {
        for m in &self.messages {
            serde_json::to_writer(&mut w, m)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

/// Executor state that persists across segments of one protocol run.
pub struct Network<'g> {
    graph: &'g WeightedGraph,
    opts: RunOptions,
    transcript: Transcript,
    outboxes: Vec<Vec<Message>>,
    inboxes: Vec<Vec<Message>>,
    order: Vec<usize>,
    last_phase: Option<Phase>,
}

impl<'g> Network<'g> {
    pub fn new(graph: &'g WeightedGraph, opts: RunOptions) -> Result<Self> {
        let n = graph.node_count();
        let order = match &opts.schedule {
            Some(s) => {
                let mut sorted = s.clone();
                sorted.sort_unstable();
                if sorted != (0..n).collect::<Vec<_>>() {
                    return Err(Error::param(
                        "schedule must be a permutation of the node ids",
                    ));
                }
                s.clone()
            }
            None => (0..n).collect(),
        };
        Ok(Self {
            graph,
            transcript: Transcript {
                logged: opts.log_messages,
                steps: vec![0; n],
                ..Transcript::default()
            },
            opts,
            outboxes: vec![Vec::new(); n],
            inboxes: vec![Vec::new(); n],
            order,
            last_phase: None,
        })
    }

    pub fn graph(&self) -> &WeightedGraph {
        self.graph
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn rounds(&self) -> usize {
        self.transcript.rounds
    }

    /// Runs rounds until every node is done and nothing is in flight.
    pub fn run<P: NodeProgram>(&mut self, programs: &mut [P]) -> Result<()> {
        let n = self.graph.node_count();
        if programs.len() != n {
            return Err(Error::param(format!(
                "{} programs for {n} nodes",
                programs.len()
            )));
        }
        let mut done = vec![false; n];
        let start = self.transcript.rounds;
        loop {
            let round = self.transcript.rounds;
            if let Some(cap) = self.opts.max_rounds {
                if round - start >= cap {
                    return Err(Error::Protocol {
                        round,
                        reason: format!("segment exceeded {cap} rounds"),
                    });
                }
            }
            let mut sent = 0;
            let mut phase = None;
            let mut first_waiting: Option<(usize, &'static str)> = None;
            let mut any_running = false;
            for idx in 0..n {
                let k = self.order[idx];
                if done[k] {
                    continue;
                }
                let inbox = std::mem::take(&mut self.inboxes[k]);
                let mut ctx = RoundCtx {
                    round,
                    node: k,
                    inbox: &inbox,
                    outbox: &mut self.outboxes[k],
                };
                let status = programs[k].step(&mut ctx)?;
                self.transcript.steps[k] += 1;
                let mut inbox = inbox;
                inbox.clear();
                self.inboxes[k] = inbox;
                match status {
                    Status::Done => done[k] = true,
                    Status::Running(p) => {
                        any_running = true;
                        if phase.is_none() || k < phase.map(|(j, _)| j).unwrap() {
                            phase = Some((k, p));
                        }
                    }
                    Status::Waiting(label) => {
                        if first_waiting.is_none_or(|(j, _)| k < j) {
                            first_waiting = Some((k, label));
                        }
                    }
                }
            }
            // deliver in sender order so inboxes are schedule-independent
            for src in 0..n {
                let out = std::mem::take(&mut self.outboxes[src]);
                for m in &out {
                    if m.dst >= n {
                        return Err(Error::Protocol {
                            round,
                            reason: format!("node {src} addressed unknown node {}", m.dst),
                        });
                    }
                    if done[m.dst] {
                        return Err(Error::Protocol {
                            round,
                            reason: format!(
                                "node {src} sent {} to node {}, which has terminated",
                                m.tag, m.dst
                            ),
                        });
                    }
                    self.transcript.tag_counts[m.tag.index()] += 1;
                    self.inboxes[m.dst].push(*m);
                }
                sent += out.len();
                if self.opts.log_messages {
                    self.transcript.messages.extend_from_slice(&out);
                }
                let mut out = out;
                out.clear();
                self.outboxes[src] = out;
            }
            let phase = phase.map(|(_, p)| p).or(self.last_phase);
            if let Some(p) = phase {
                self.transcript.phase_rounds[p.index()] += 1;
                self.last_phase = Some(p);
            }
            self.transcript.rounds += 1;
            if done.iter().all(|&d| d) {
                return Ok(());
            }
            if sent == 0 && !any_running {
                let (node, label) = first_waiting.expect("some node is not done");
                return Err(Error::Deadlock {
                    round,
                    node,
                    phase: label.to_string(),
                });
            }
        }
    }

    /// Collects one scalar per node outside the message accounting.
    pub fn gather(&mut self, values: Vec<f64>) -> Vec<f64> {
        let round = self.transcript.rounds;
        self.transcript.tag_counts[Tag::Gather.index()] += values.len();
        if self.opts.log_messages {
            for (k, &v) in values.iter().enumerate() {
                self.transcript.messages.push(Message {
                    round,
                    src: k,
                    dst: k,
                    tag: Tag::Gather,
                    level: 0,
                    col: None,
                    value: v,
                });
            }
        }
        self.transcript.gathered = values.clone();
        values
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }
}

/// Runs one segment on a fresh network.
pub fn run<P: NodeProgram>(
    programs: &mut [P],
    graph: &WeightedGraph,
    opts: RunOptions,
) -> Result<Transcript> {
    let mut net = Network::new(graph, opts)?;
    net.run(programs)?;
    Ok(net.into_transcript())
}

/// Does nothing and finishes in the first round.
#[derive(Debug, Clone, Default)]
pub struct IdleProgram;

impl NodeProgram for IdleProgram {
    fn step(&mut self, _ctx: &mut RoundCtx<'_>) -> Result<Status> {
        Ok(Status::Done)
    }
}

/// Negative control for the locality audit: node 0 sends one message to
/// `target`, whether or not it is a neighbor.
#[derive(Debug, Clone)]
pub struct RogueProgram {
    pub target: usize,
    sent: bool,
}

impl RogueProgram {
    pub fn new(target: usize) -> Self {
        Self {
            target,
            sent: false,
        }
    }
}

impl NodeProgram for RogueProgram {
    fn step(&mut self, ctx: &mut RoundCtx<'_>) -> Result<Status> {
        if ctx.node == 0 && !self.sent {
            self.sent = true;
            ctx.send(self.target, Tag::FwdU, 0, None, 1.0);
            return Ok(Status::Running(Phase::Forward));
        }
        if ctx.node == self.target && !self.sent {
            if ctx.inbox.is_empty() {
                return Ok(Status::Waiting("awaiting rogue message"));
            }
            self.sent = true;
        }
        Ok(Status::Done)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> WeightedGraph {
        WeightedGraph::new(n, (0..n - 1).map(|i| (i, i + 1, 1.0)).collect()).unwrap()
    }

    /// Every node sends its id to its neighbors for `rounds` rounds and
    /// accumulates what it receives.
    struct Echo {
        neighbors: Vec<usize>,
        rounds: usize,
        acc: f64,
    }

    impl NodeProgram for Echo {
        fn step(&mut self, ctx: &mut RoundCtx<'_>) -> Result<Status> {
            self.acc += ctx.inbox.iter().map(|m| m.value).sum::<f64>();
            if ctx.round < self.rounds {
                for &j in &self.neighbors {
                    ctx.send(j, Tag::FwdU, ctx.round as u32, None, ctx.node as f64);
                }
                Ok(Status::Running(Phase::Forward))
            } else {
                Ok(Status::Done)
            }
        }
    }

    fn echoes(g: &WeightedGraph, rounds: usize) -> Vec<Echo> {
        (0..g.node_count())
            .map(|k| Echo {
                neighbors: g.neighbors(k).iter().map(|&(j, _)| j).collect(),
                rounds,
                acc: 0.0,
            })
            .collect()
    }

    #[test]
    fn single_node_idle() {
        let g = WeightedGraph::new(1, vec![]).unwrap();
        let t = run(&mut [IdleProgram], &g, RunOptions::logged()).unwrap();
        assert_eq!(t.rounds, 1);
        assert_eq!(t.message_count(), 0);
    }

    #[test]
    fn echo_counts_and_order() {
        let g = path(4);
        let mut progs = echoes(&g, 2);
        let t = run(&mut progs, &g, RunOptions::logged()).unwrap();
        assert_eq!(t.rounds, 3);
        assert_eq!(t.message_count(), 2 * 6);
        assert_eq!(t.phase_rounds[Phase::Forward.index()], 3);
        assert_eq!(progs[1].acc, 2.0 * (0.0 + 2.0));
        let keys: Vec<_> = t.messages.iter().map(|m| (m.round, m.src, m.dst)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn schedule_does_not_change_transcript() {
        let g = path(5);
        let a = run(&mut echoes(&g, 3), &g, RunOptions::logged()).unwrap();
        let opts = RunOptions {
            log_messages: true,
            schedule: Some(vec![4, 2, 0, 3, 1]),
            max_rounds: None,
        };
        let b = run(&mut echoes(&g, 3), &g, opts).unwrap();
        assert_eq!(a.to_ndjson(), b.to_ndjson());
        assert!(Network::new(
            &g,
            RunOptions {
                schedule: Some(vec![0, 0, 1, 2, 3]),
                ..RunOptions::default()
            }
        )
        .is_err());
    }

    struct Stuck;
    impl NodeProgram for Stuck {
        fn step(&mut self, _ctx: &mut RoundCtx<'_>) -> Result<Status> {
            Ok(Status::Waiting("forward level 1"))
        }
    }

    #[test]
    fn deadlock_is_reported() {
        let g = path(2);
        let err = run(&mut [Stuck, Stuck], &g, RunOptions::default()).unwrap_err();
        match err {
            Error::Deadlock { round, node, phase } => {
                assert_eq!((round, node), (0, 0));
                assert_eq!(phase, "forward level 1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ndjson_uses_wire_names() {
        let g = path(2);
        let t = run(&mut echoes(&g, 1), &g, RunOptions::logged()).unwrap();
        let line = t.to_ndjson().lines().next().unwrap().to_string();
        assert_eq!(
            line,
            r#"{"round":0,"src":0,"dst":1,"tag":"FWD_U","level":0,"value":0.0}"#
        );
    }

    #[test]
    fn rogue_message_is_delivered_and_logged() {
        let g = path(4);
        let mut progs: Vec<_> = (0..4).map(|_| RogueProgram::new(3)).collect();
        let t = run(&mut progs, &g, RunOptions::logged()).unwrap();
        assert_eq!(t.messages.len(), 1);
        assert_eq!((t.messages[0].src, t.messages[0].dst), (0, 3));
    }
}
