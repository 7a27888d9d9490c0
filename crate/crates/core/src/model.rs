//! Timed specification models: locations, clocks, modal probabilistic edges and
//! admissible valuations.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use crate::constraint::ProbConstraint;
use crate::guard::{Guard, Modality};
use crate::num::{denominator_lcm, Q};

macro_rules! index_type {
    ($name:ident) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub usize);

        impl $name {
            pub fn index(self) -> usize {
                self.0
            }
        }
    };
}

index_type!(ClockId);
index_type!(ActionId);
index_type!(PropId);
index_type!(LocationId);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Pta,
    Apta,
    Peca,
    Apeca,
}

impl Kind {
    pub fn keyword(self) -> &'static str {
        match self {
            Kind::Pta => "pta",
            Kind::Apta => "apta",
            Kind::Peca => "peca",
            Kind::Apeca => "apeca",
        }
    }

    pub fn is_implementation(self) -> bool {
        matches!(self, Kind::Pta | Kind::Peca)
    }

    pub fn is_event_clock(self) -> bool {
        matches!(self, Kind::Peca | Kind::Apeca)
    }
}

/// A set of atomic propositions true in a state.
pub type PropSet = BTreeSet<PropId>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Location {
    pub name: String,
    pub valuation: BTreeSet<PropSet>,
}

/// One support element of an edge: reset these clocks and move to `target`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Branch {
    pub resets: BTreeSet<ClockId>,
    pub target: LocationId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub source: LocationId,
    pub guard: Guard,
    pub action: ActionId,
    pub modality: Modality,
    pub branches: Vec<Branch>,
    pub constraint: ProbConstraint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub subject: String,
    pub message: String,
}

impl core::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("model is invalid ({} problems)", .0.len())]
    Invalid(Vec<Diagnostic>),
    #[error("reset discipline violated on {location} --{action}->")]
    ResetDiscipline { location: String, action: String },
    #[error("edges for action {action} do not cover all clock values at {location}")]
    Incomplete { location: String, action: String },
    #[error("not an implementation: {0}")]
    NotImplementation(String),
}

/// An abstract probabilistic timed automaton. Implementations (PTAs) and the event-clock
/// subclasses share this representation and are distinguished by `kind` and by the checked
/// views [`Pta`] and [`Apeca`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Apta {
    pub name: String,
    pub kind: Kind,
    pub actions: Vec<String>,
    pub clocks: Vec<String>,
    pub props: Vec<String>,
    pub locations: Vec<Location>,
    pub initial: LocationId,
    pub edges: Vec<Edge>,
}

impl Apta {
    pub fn new(name: &str, kind: Kind) -> Apta {
        Apta {
            name: name.to_string(),
            kind,
            actions: Vec::new(),
            clocks: Vec::new(),
            props: Vec::new(),
            locations: Vec::new(),
            initial: LocationId(0),
            edges: Vec::new(),
        }
    }

    pub fn location_named(&self, name: &str) -> Option<LocationId> {
        self.locations.iter().position(|l| l.name == name).map(LocationId)
    }

    pub fn action_named(&self, name: &str) -> Option<ActionId> {
        self.actions.iter().position(|a| a == name).map(ActionId)
    }

    pub fn clock_named(&self, name: &str) -> Option<ClockId> {
        self.clocks.iter().position(|c| c == name).map(ClockId)
    }

    pub fn prop_named(&self, name: &str) -> Option<PropId> {
        self.props.iter().position(|p| p == name).map(PropId)
    }

    pub fn location(&self, id: LocationId) -> &Location {
        &self.locations[id.0]
    }

    pub fn edges_from(&self, l: LocationId) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(move |e| e.source == l)
    }

    /// Least common multiple of all guard constant denominators.
    pub fn scale(&self) -> BigInt {
        denominator_lcm(self.edges.iter().flat_map(|e| e.guard.constants()))
    }

    /// Largest guard constant after multiplying by `scale`.
    pub fn max_constant(&self, scale: &BigInt) -> u32 {
        let s = Q::from_integer(scale.clone());
        self.edges
            .iter()
            .flat_map(|e| e.guard.constants())
            .map(|c| crate::num::to_u32(&(c * &s)).unwrap_or(u32::MAX))
            .max()
            .unwrap_or(0)
    }

    /// The event clock `x_<action>` name used by APECAs.
    pub fn event_clock_name(action: &str) -> String {
        format!("x_{action}")
    }

    /// Adds missing event clocks so that clock `i` is `x_<actions[i]>`, remapping guards.
    pub fn with_event_clocks(&self) -> Apta {
        let mut m = self.clone();
        m.clocks = self.actions.iter().map(|a| Apta::event_clock_name(a)).collect();
        let map: Vec<usize> = self
            .clocks
            .iter()
            .map(|c| m.clocks.iter().position(|d| d == c).unwrap_or(usize::MAX))
            .collect();
        if map.iter().enumerate().all(|(i, &j)| i == j) {
            return m;
        }
        for e in m.edges.iter_mut() {
            e.guard = e.guard.remap_clocks(&map);
            for b in e.branches.iter_mut() {
                b.resets = b.resets.iter().filter(|c| map[c.0] != usize::MAX).map(|c| ClockId(map[c.0])).collect();
            }
        }
        m
    }

    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut push = |subject: String, message: &str| out.push(Diagnostic { subject, message: message.to_string() });
        if self.name.is_empty() {
            push("model".into(), "empty model name");
        }
        for (what, names) in [("action", &self.actions), ("clock", &self.clocks), ("proposition", &self.props)] {
            let mut seen = BTreeSet::new();
            for n in names {
                if n.is_empty() {
                    push(what.into(), "empty name");
                } else if !seen.insert(n) {
                    push(format!("{what} {n}"), "duplicate name");
                }
            }
        }
        let mut seen = BTreeSet::new();
        for l in &self.locations {
            if l.name.is_empty() {
                push("location".into(), "empty name");
            } else if !seen.insert(&l.name) {
                push(format!("location {}", l.name), "duplicate name");
            }
            if l.valuation.iter().flatten().any(|p| p.0 >= self.props.len()) {
                push(format!("location {}", l.name), "unknown proposition in valuation");
            }
            if self.kind.is_implementation() && l.valuation.len() != 1 {
                push(format!("location {}", l.name), "implementation valuation must be a single set");
            }
        }
        if self.initial.0 >= self.locations.len() {
            push("model".into(), "unknown initial location");
        }
        for (i, e) in self.edges.iter().enumerate() {
            let subject = self.edge_subject(i);
            if e.source.0 >= self.locations.len() {
                push(subject.clone(), "unknown source location");
            }
            if e.action.0 >= self.actions.len() {
                push(subject.clone(), "unknown action");
            }
            if e.guard.constrained_clocks().any(|c| c >= self.clocks.len()) {
                push(subject.clone(), "unknown clock in guard");
            }
            if e.modality == Modality::Bot {
                push(subject.clone(), "stored edge with bottom modality");
            }
            if e.branches.iter().any(|b| b.target.0 >= self.locations.len()) {
                push(subject.clone(), "dangling target");
            }
            if e.branches.iter().flat_map(|b| &b.resets).any(|c| c.0 >= self.clocks.len()) {
                push(subject.clone(), "unknown clock in reset");
            }
            if e.branches.iter().collect::<BTreeSet<_>>().len() != e.branches.len() {
                push(subject.clone(), "duplicate support element");
            }
            if e.constraint.dim != e.branches.len() {
                push(subject.clone(), "constraint dimension mismatch");
                continue;
            }
            if let Some(values) = e.constraint.pinned_values() {
                let total = values.iter().fold(Q::zero(), |a, x| a + x);
                if !total.is_one() || values.iter().any(Signed::is_negative) {
                    push(subject.clone(), "distribution not normalized");
                }
                if self.kind.is_implementation() && values.iter().any(Zero::is_zero) {
                    push(subject.clone(), "zero probability entry");
                }
            } else if self.kind.is_implementation() {
                push(subject.clone(), "implementation edge needs a concrete distribution");
            }
            if self.kind.is_implementation() && e.modality != Modality::Must {
                push(subject.clone(), "implementation edges must be must edges");
            }
            if self.kind.is_event_clock() && e.action.0 < self.actions.len() {
                let own = self.clock_named(&Apta::event_clock_name(&self.actions[e.action.0]));
                let ok = own.is_some_and(|c| e.branches.iter().all(|b| b.resets.len() == 1 && b.resets.contains(&c)));
                if !ok {
                    push(subject.clone(), "reset discipline violated");
                }
            }
        }
        out
    }

    fn edge_subject(&self, i: usize) -> String {
        let e = &self.edges[i];
        let src = self.locations.get(e.source.0).map(|l| l.name.as_str()).unwrap_or("?");
        let act = self.actions.get(e.action.0).map(String::as_str).unwrap_or("?");
        format!("edge #{i} {src} --{act}->")
    }

    /// Checks the event-clock reset discipline and edge completeness.
    pub fn as_apeca(&self) -> Result<Apeca, ModelError> {
        let diags = self.validate();
        if !diags.is_empty() {
            return Err(ModelError::Invalid(diags));
        }
        for e in &self.edges {
            let action = &self.actions[e.action.0];
            let own = self.clock_named(&Apta::event_clock_name(action));
            let ok = own.is_some_and(|c| e.branches.iter().all(|b| b.resets.len() == 1 && b.resets.contains(&c)));
            if !ok {
                return Err(ModelError::ResetDiscipline {
                    location: self.locations[e.source.0].name.clone(),
                    action: action.clone(),
                });
            }
        }
        for l in 0..self.locations.len() {
            for a in 0..self.actions.len() {
                if !self.uncovered(LocationId(l), ActionId(a)).is_empty() {
                    return Err(ModelError::Incomplete {
                        location: self.locations[l].name.clone(),
                        action: self.actions[a].clone(),
                    });
                }
            }
        }
        let mut m = self.clone();
        if m.kind == Kind::Apta {
            m.kind = Kind::Apeca;
        } else if m.kind == Kind::Pta {
            m.kind = Kind::Peca;
        }
        Ok(Apeca(m))
    }

    /// Disjoint guards covering the clock values where `l` has no `a`-edge.
    pub fn uncovered(&self, l: LocationId, a: ActionId) -> Vec<Guard> {
        let mut rest = vec![Guard::truth()];
        for e in self.edges.iter().filter(|e| e.source == l && e.action == a) {
            let neg = e.guard.negate();
            let mut next = Vec::new();
            for r in &rest {
                for n in &neg {
                    let g = r.and(n);
                    if !g.is_false() && !next.contains(&g) {
                        next.push(g);
                    }
                }
            }
            rest = next;
            if rest.is_empty() {
                break;
            }
        }
        rest
    }

    /// Adds a may edge with an unsatisfiable constraint on every uncovered part of the
    /// clock space, for every location and action.
    pub fn complete_edges(&self) -> Apta {
        let mut m = self.clone();
        for l in 0..self.locations.len() {
            for a in 0..self.actions.len() {
                for guard in self.uncovered(LocationId(l), ActionId(a)) {
                    m.edges.push(Edge {
                        source: LocationId(l),
                        guard,
                        action: ActionId(a),
                        modality: Modality::May,
                        branches: Vec::new(),
                        constraint: ProbConstraint::falsity(0),
                    });
                }
            }
        }
        m
    }

    /// Extends the action and proposition alphabets, keeping existing indices.
    pub fn extend_alphabet(&self, actions: &[String], props: &[String]) -> Apta {
        let mut m = self.clone();
        for a in actions {
            if !m.actions.contains(a) {
                m.actions.push(a.clone());
            }
        }
        for p in props {
            if !m.props.contains(p) {
                m.props.push(p.clone());
            }
        }
        if m.kind.is_event_clock() {
            m = m.with_event_clocks();
        }
        m
    }

    /// Locations reachable from the initial one through possible branches.
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.locations.len()];
        if self.initial.0 >= seen.len() {
            return seen;
        }
        let mut stack = vec![self.initial];
        seen[self.initial.0] = true;
        while let Some(l) = stack.pop() {
            for e in self.edges_from(l) {
                let possible = e.constraint.possible_support();
                for (b, p) in e.branches.iter().zip(possible) {
                    if p && !seen[b.target.0] {
                        seen[b.target.0] = true;
                        stack.push(b.target);
                    }
                }
            }
        }
        seen
    }
}

/// A checked implementation: all edges must, concrete distributions, single valuations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pta(Apta);

impl Pta {
    pub fn new(model: Apta) -> Result<Pta, ModelError> {
        let mut m = model;
        if !m.kind.is_implementation() {
            m.kind = if m.kind.is_event_clock() { Kind::Peca } else { Kind::Pta };
        }
        let diags = m.validate();
        if !diags.is_empty() {
            return Err(ModelError::Invalid(diags));
        }
        Ok(Pta(m))
    }

    pub fn model(&self) -> &Apta {
        &self.0
    }

    pub fn into_model(self) -> Apta {
        self.0
    }

    pub fn distribution(&self, edge: usize) -> Vec<Q> {
        self.0.edges[edge].constraint.pinned_values().unwrap_or_default()
    }
}

/// A checked event-clock specification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Apeca(Apta);

impl Apeca {
    pub fn model(&self) -> &Apta {
        &self.0
    }

    pub fn into_model(self) -> Apta {
        self.0
    }
}
