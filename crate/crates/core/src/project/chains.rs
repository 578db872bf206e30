//! Backward chain enumeration from a focal method to its entry points.

use serde::{Deserialize, Serialize};

use crate::prelude::*;
use crate::text::sha256_hex;

use super::graph::CallGraph;
use super::{find_entry_points, FunctionRef};

pub const DEFAULT_MAX_DEPTH: usize = 5;

/// Caller-to-callee path `⟨F_1, …, F_n⟩` ending at the focal method.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InvocationChain {
    pub steps: Vec<FunctionRef>,
}

impl InvocationChain {
    /// Panics on an empty step list; chains always contain the focal method.
    pub fn new(steps: Vec<FunctionRef>) -> Self {
        assert!(!steps.is_empty(), "an invocation chain has at least one step");
        InvocationChain { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entry(&self) -> &FunctionRef {
        &self.steps[0]
    }

    pub fn focal(&self) -> &FunctionRef {
        self.steps.last().expect("non-empty")
    }

    /// Short stable identifier derived from the step ids.
    pub fn id(&self) -> String {
        let joined: Vec<String> = self.steps.iter().map(FunctionRef::id).collect();
        let mut h = sha256_hex(joined.join(" -> ").as_bytes());
        h.truncate(12);
        h
    }

    /// `a -> b -> c` using qualified names.
    pub fn describe(&self) -> String {
        let names: Vec<&str> = self.steps.iter().map(|s| s.qualified_name.as_str()).collect();
        names.join(" -> ")
    }

    pub fn is_connected_in(&self, graph: &CallGraph) -> bool {
        self.steps.windows(2).all(|w| graph.has_edge(&w[0], &w[1]))
    }

    pub fn is_acyclic(&self) -> bool {
        let set: BTreeSet<&FunctionRef> = self.steps.iter().collect();
        set.len() == self.steps.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no invocation chains to sample from")]
pub struct NoChains;

/// Enumerates acyclic caller paths ending at `focal` whose head is an entry
/// point, up to `max_depth` steps. Falls back to the single-step chain
/// `⟨focal⟩` when no such path exists (no callers, or only callers that
/// are unreachable from an entry point within the bound).
///
/// Output is sorted by `(steps)` so repeated runs agree.
pub fn extract_chains(graph: &CallGraph, focal: &FunctionRef, max_depth: usize) -> Vec<InvocationChain> {
    let entries: BTreeSet<FunctionRef> = find_entry_points(graph).into_iter().collect();
    let max_depth = max_depth.max(1);
    let mut found: BTreeSet<Vec<FunctionRef>> = BTreeSet::new();
    // path is stored focal-first while walking backwards
    let mut path = vec![focal.clone()];
    walk(graph, &entries, max_depth, &mut path, &mut found);
    if found.is_empty() {
        return vec![InvocationChain::new(vec![focal.clone()])];
    }
    found.into_iter().map(InvocationChain::new).collect()
}

fn walk(
    graph: &CallGraph,
    entries: &BTreeSet<FunctionRef>,
    max_depth: usize,
    path: &mut Vec<FunctionRef>,
    found: &mut BTreeSet<Vec<FunctionRef>>,
) {
    let head = path.last().expect("non-empty").clone();
    if path.len() > 1 && entries.contains(&head) {
        found.insert(path.iter().rev().cloned().collect());
    }
    if path.len() == max_depth {
        return;
    }
    let callers: Vec<FunctionRef> = graph.callers_of(&head).cloned().collect();
    for caller in callers {
        if path.contains(&caller) {
            continue;
        }
        path.push(caller);
        walk(graph, entries, max_depth, path, found);
        path.pop();
    }
}

/// Longest chain first; ties broken by the entry's qualified name, then by
/// the full step list.
pub fn sample_representative_chain(chains: &[InvocationChain]) -> Result<&InvocationChain, NoChains> {
    chains
        .iter()
        .min_by(|a, b| {
            b.len()
                .cmp(&a.len())
                .then_with(|| a.entry().qualified_name.cmp(&b.entry().qualified_name))
                .then_with(|| a.steps.cmp(&b.steps))
        })
        .ok_or(NoChains)
}
