use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Message, Phase, Tag, Transcript};
use crate::graph::WeightedGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhaseCost {
    pub messages: usize,
    pub rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub total_messages: usize,
    pub total_rounds: usize,
    pub precompute: PhaseCost,
    pub forward: PhaseCost,
    pub backward: PhaseCost,
    pub richardson: PhaseCost,
}

impl CostReport {
    pub fn phase(&self, p: Phase) -> PhaseCost {
        match p {
            Phase::Precompute => self.precompute,
            Phase::Forward => self.forward,
            Phase::Backward => self.backward,
            Phase::Richardson => self.richardson,
        }
    }

    fn phase_mut(&mut self, p: Phase) -> &mut PhaseCost {
        match p {
            Phase::Precompute => &mut self.precompute,
            Phase::Forward => &mut self.forward,
            Phase::Backward => &mut self.backward,
            Phase::Richardson => &mut self.richardson,
        }
    }

    /// Component-wise sum.
    pub fn add(&mut self, other: &CostReport) {
        self.total_messages += other.total_messages;
        self.total_rounds += other.total_rounds;
        for p in Phase::ALL {
            let o = other.phase(p);
            let s = self.phase_mut(p);
            s.messages += o.messages;
            s.rounds += o.rounds;
        }
    }
}

/// Exact message and round counts, with `GATHER` excluded.
pub fn message_stats(t: &Transcript) -> CostReport {
    let mut report = CostReport {
        total_rounds: t.rounds,
        ..CostReport::default()
    };
    for tag in Tag::ALL {
        if let Some(p) = tag.phase() {
            report.phase_mut(p).messages += t.tag_counts[tag.index()];
        }
    }
    for p in Phase::ALL {
        report.phase_mut(p).rounds = t.phase_rounds[p.index()];
    }
    report.total_messages = Phase::ALL.iter().map(|&p| report.phase(p).messages).sum();
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LocalityViolation {
    /// Sender and receiver are not adjacent.
    NotAnEdge { index: usize, message: Message },
    /// The relayed value originates farther than `R` hops from the receiver.
    BeyondRadius {
        index: usize,
        message: Message,
        distance: Option<usize>,
    },
    /// Counts were kept but messages were not logged.
    NotLogged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub passed: bool,
    pub checked: usize,
    pub first_violation: Option<LocalityViolation>,
}

/// Checks every logged message: it must travel along an edge, and the node
/// its value refers to must lie within `radius` hops of the receiver.
pub fn assert_locality(t: &Transcript, graph: &WeightedGraph, radius: usize) -> LocalityReport {
    if !t.logged && t.message_count() > 0 {
        return LocalityReport {
            passed: false,
            checked: 0,
            first_violation: Some(LocalityViolation::NotLogged),
        };
    }
    let mut dist_cache: HashMap<usize, Vec<Option<usize>>> = HashMap::new();
    let mut checked = 0;
    for (index, m) in t.messages.iter().enumerate() {
        if m.tag == Tag::Gather {
            continue;
        }
        checked += 1;
        if m.src >= graph.node_count()
            || m.dst >= graph.node_count()
            || !graph.is_edge(m.src, m.dst)
        {
            return LocalityReport {
                passed: false,
                checked,
                first_violation: Some(LocalityViolation::NotAnEdge { index, message: *m }),
            };
        }
        let origin = m.origin();
        let dist = dist_cache
            .entry(origin)
            .or_insert_with(|| graph.bfs_distances(origin))[m.dst];
        if dist.is_none_or(|d| d > radius) {
            return LocalityReport {
                passed: false,
                checked,
                first_violation: Some(LocalityViolation::BeyondRadius {
                    index,
                    message: *m,
                    distance: dist,
                }),
            };
        }
    }
    LocalityReport {
        passed: true,
        checked,
        first_violation: None,
    }
}
