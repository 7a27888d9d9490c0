//! Untimed abstract probabilistic automata over an arbitrary label type.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::constraint::ProbConstraint;
use crate::guard::Modality;

/// Admissible valuations as sets of proposition names.
pub type Valuation = BTreeSet<BTreeSet<String>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApaState {
    pub name: String,
    pub valuation: Valuation,
}

/// A modal transition to a constrained distribution over `targets`. `tags[i]` is a bit set of
/// clocks reset on the way to `targets[i]`; untimed automata leave it zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition<L> {
    pub source: usize,
    pub label: L,
    pub modality: Modality,
    pub targets: Vec<usize>,
    pub tags: Vec<u64>,
    pub constraint: ProbConstraint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Apa<L> {
    pub states: Vec<ApaState>,
    pub initial: usize,
    pub transitions: Vec<Transition<L>>,
}

impl<L: Clone + Ord> Apa<L> {
    /// Transition indices grouped by source state.
    pub fn outgoing(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.states.len()];
        for (i, t) in self.transitions.iter().enumerate() {
            out[t.source].push(i);
        }
        out
    }

    pub fn labels(&self) -> BTreeSet<L> {
        self.transitions.iter().map(|t| t.label.clone()).collect()
    }

    /// States reachable from the initial state through possible targets.
    pub fn reachable(&self) -> Vec<bool> {
        let out = self.outgoing();
        let mut seen = vec![false; self.states.len()];
        if self.states.is_empty() {
            return seen;
        }
        seen[self.initial] = true;
        let mut stack = vec![self.initial];
        while let Some(s) = stack.pop() {
            for &t in &out[s] {
                let tr = &self.transitions[t];
                for (k, p) in tr.constraint.possible_support().into_iter().enumerate() {
                    let target = tr.targets[k];
                    if p && !seen[target] {
                        seen[target] = true;
                        stack.push(target);
                    }
                }
            }
        }
        seen
    }

    /// Keeps only the states flagged in `keep`, which must include the initial state, and the
    /// transitions between them. Transitions mentioning a dropped target are removed.
    pub fn restrict(&self, keep: &[bool]) -> Apa<L> {
        let mut index = vec![usize::MAX; self.states.len()];
        let mut states = Vec::new();
        for (i, s) in self.states.iter().enumerate() {
            if keep[i] {
                index[i] = states.len();
                states.push(s.clone());
            }
        }
        let transitions = self
            .transitions
            .iter()
            .filter(|t| keep[t.source] && t.targets.iter().all(|&x| keep[x]))
            .map(|t| Transition {
                source: index[t.source],
                label: t.label.clone(),
                modality: t.modality,
                targets: t.targets.iter().map(|&x| index[x]).collect(),
                tags: t.tags.clone(),
                constraint: t.constraint.clone(),
            })
            .collect();
        Apa { states, initial: index[self.initial], transitions }
    }
}
