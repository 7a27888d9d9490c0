//! Conjunction and parallel composition of event-clock models and of region automata.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::abstraction::product_name;
use crate::apa::{Apa, ApaState, Transition, Valuation};
use crate::constraint::{ConstraintError, ProbConstraint};
use crate::guard::{Guard, Modality};
use crate::model::{ActionId, Apta, Branch, ClockId, Edge, Location, LocationId, PropSet};
use crate::num::qi;
use crate::relations::is_action_deterministic;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CompositionError {
    #[error("`{0}` is not an event-clock model")]
    NotEventClock(String),
    #[error("`{0}` is not action-deterministic")]
    NotActionDeterministic(String),
    #[error("propositions shared by both models: {0:?}")]
    ApOverlap(Vec<String>),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

/// A product model with the factor locations of each product location.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Product {
    pub model: Apta,
    pub pairs: Vec<(LocationId, LocationId)>,
}

fn union_names(a: &[String], b: &[String]) -> Vec<String> {
    let mut out = a.to_vec();
    for x in b {
        if !out.contains(x) {
            out.push(x.clone());
        }
    }
    out
}

fn require_event_clock(m: &Apta) -> Result<(), CompositionError> {
    if m.kind.is_event_clock() {
        Ok(())
    } else {
        Err(CompositionError::NotEventClock(m.name.clone()))
    }
}

/// Gives both models the union alphabet, completing every uncovered guard with an
/// unsatisfiable may edge.
pub fn equalize_for_conjunction(e1: &Apta, e2: &Apta) -> (Apta, Apta) {
    let actions = union_names(&e1.actions, &e2.actions);
    let props = union_names(&e1.props, &e2.props);
    (e1.extend_alphabet(&actions, &props).complete_edges(), e2.extend_alphabet(&actions, &props).complete_edges())
}

/// Gives both models the union alphabet; an action new to a model becomes a must self-loop
/// on every location.
pub fn equalize_for_parallel(e1: &Apta, e2: &Apta) -> (Apta, Apta) {
    let actions = union_names(&e1.actions, &e2.actions);
    let widen = |m: &Apta| {
        let mut w = m.extend_alphabet(&actions, &[]);
        for a in actions.iter().filter(|a| !m.actions.contains(a)) {
            let action = w.action_named(a).expect("added action");
            let clock = w.clock_named(&Apta::event_clock_name(a)).expect("event clock");
            for l in 0..w.locations.len() {
                w.edges.push(Edge {
                    source: LocationId(l),
                    guard: Guard::truth(),
                    action,
                    modality: Modality::Must,
                    branches: vec![Branch { resets: [clock].into_iter().collect(), target: LocationId(l) }],
                    constraint: ProbConstraint::point(&[qi(1)]),
                });
            }
        }
        w
    };
    (widen(e1), widen(e2))
}

fn named_valuation(m: &Apta, l: LocationId) -> Valuation {
    m.location(l).valuation.iter().map(|s| s.iter().map(|p| m.props[p.0].clone()).collect()).collect()
}

fn prop_set(m: &Apta, names: &BTreeSet<String>) -> PropSet {
    names.iter().map(|n| m.prop_named(n).expect("declared proposition")).collect()
}

/// Shared skeleton of both products over equalized models: `combine` builds the modality
/// and constraint of a product edge over `n1 * n2` branches, or skips the pair.
fn product<F>(e1: &Apta, e2: &Apta, props: Vec<String>, valuation: impl Fn(&Valuation, &Valuation) -> Valuation, mut combine: F) -> Result<Product, CompositionError>
where
    F: FnMut(&Edge, &Edge, usize, usize) -> Result<Option<(Modality, ProbConstraint)>, CompositionError>,
{
    let n2 = e2.locations.len();
    let mut out = Apta::new(&product_name(&e1.name, &e2.name), e1.kind);
    out.actions = e1.actions.clone();
    out.clocks = e1.clocks.clone();
    out.props = props;
    let clock_map: Vec<usize> = e2.clocks.iter().map(|c| e1.clock_named(c).expect("equalized clocks").0).collect();
    let mut pairs = Vec::new();
    for (i, l1) in e1.locations.iter().enumerate() {
        for (j, l2) in e2.locations.iter().enumerate() {
            let v = valuation(&named_valuation(e1, LocationId(i)), &named_valuation(e2, LocationId(j)));
            let v = v.iter().map(|s| prop_set(&out, s)).collect();
            out.locations.push(Location { name: product_name(&l1.name, &l2.name), valuation: v });
            pairs.push((LocationId(i), LocationId(j)));
        }
    }
    out.initial = LocationId(e1.initial.0 * n2 + e2.initial.0);
    for x in &e1.edges {
        let action = &e1.actions[x.action.0];
        for y in e2.edges.iter().filter(|y| e2.actions[y.action.0] == *action) {
            let guard = x.guard.and(&y.guard.remap_clocks(&clock_map));
            if guard.is_false() || x.modality == Modality::Bot || y.modality == Modality::Bot {
                continue;
            }
            let (k1, k2) = (x.branches.len(), y.branches.len());
            let Some((modality, constraint)) = combine(x, y, k1, k2)? else { continue };
            let clock = e1.clock_named(&Apta::event_clock_name(action)).expect("event clock");
            let mut branches = Vec::with_capacity(k1 * k2);
            for b1 in &x.branches {
                for b2 in &y.branches {
                    branches.push(Branch {
                        resets: [clock].into_iter().collect::<BTreeSet<ClockId>>(),
                        target: LocationId(b1.target.0 * n2 + b2.target.0),
                    });
                }
            }
            out.edges.push(Edge {
                source: LocationId(x.source.0 * n2 + y.source.0),
                guard,
                action: ActionId(x.action.0),
                modality,
                branches,
                constraint,
            });
        }
    }
    Ok(Product { model: out, pairs })
}

/// Variable `k` of a factor with `k1` branches, as blocks of the `k1 * k2` product cells.
fn marginal_blocks(k1: usize, k2: usize, left: bool) -> Vec<Vec<usize>> {
    if left {
        (0..k1).map(|i| (0..k2).map(|j| i * k2 + j).collect()).collect()
    } else {
        (0..k2).map(|j| (0..k1).map(|i| i * k2 + j).collect()).collect()
    }
}

pub fn conjoin(e1: &Apta, e2: &Apta) -> Result<Product, CompositionError> {
    require_event_clock(e1)?;
    require_event_clock(e2)?;
    let (a, b) = equalize_for_conjunction(e1, e2);
    for m in [&a, &b] {
        if !is_action_deterministic(m) {
            return Err(CompositionError::NotActionDeterministic(m.name.clone()));
        }
    }
    let props = a.props.clone();
    product(&a, &b, props, |v1, v2| v1.intersection(v2).cloned().collect(), |x, y, k1, k2| {
        let c1 = x.constraint.marginal_substitute(&marginal_blocks(k1, k2, true), k1 * k2)?;
        let c2 = y.constraint.marginal_substitute(&marginal_blocks(k1, k2, false), k1 * k2)?;
        Ok(Some((x.modality.join(y.modality), c1.intersect(&c2)?.simplified())))
    })
}

pub fn compose_parallel(e1: &Apta, e2: &Apta) -> Result<Product, CompositionError> {
    require_event_clock(e1)?;
    require_event_clock(e2)?;
    let shared: Vec<String> = e1.props.iter().filter(|p| e2.props.contains(p)).cloned().collect();
    if !shared.is_empty() {
        return Err(CompositionError::ApOverlap(shared));
    }
    let (a, b) = equalize_for_parallel(e1, e2);
    let props = union_names(&a.props, &b.props);
    let valuation = |v1: &Valuation, v2: &Valuation| -> Valuation {
        v1.iter().flat_map(|s1| v2.iter().map(move |s2| s1.union(s2).cloned().collect())).collect()
    };
    product(&a, &b, props, valuation, |x, y, k1, k2| {
        let modality = x.modality.meet(y.modality);
        if modality == Modality::Bot {
            return Ok(None);
        }
        let cells: Vec<Option<usize>> = (0..k1 * k2).map(Some).collect();
        Ok(Some((modality, ProbConstraint::product(&x.constraint, &y.constraint, &cells, k1 * k2))))
    })
}

/// Reachable synchronous product of two automata over the same labels.
fn apa_product<L, V, F>(a1: &Apa<L>, a2: &Apa<L>, valuation: V, mut combine: F) -> Result<Apa<L>, CompositionError>
where
    L: Clone + Ord,
    V: Fn(&Valuation, &Valuation) -> Valuation,
    F: FnMut(&Transition<L>, &Transition<L>) -> Result<Option<(Modality, ProbConstraint)>, CompositionError>,
{
    let out1 = a1.outgoing();
    let out2 = a2.outgoing();
    let mut index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut states = Vec::new();
    let mut queue = VecDeque::new();
    let mut transitions = Vec::new();
    let mut intern = |p: (usize, usize), states: &mut Vec<ApaState>, queue: &mut VecDeque<(usize, usize)>| -> usize {
        *index.entry(p).or_insert_with(|| {
            states.push(ApaState {
                name: product_name(&a1.states[p.0].name, &a2.states[p.1].name),
                valuation: valuation(&a1.states[p.0].valuation, &a2.states[p.1].valuation),
            });
            queue.push_back(p);
            states.len() - 1
        })
    };
    intern((a1.initial, a2.initial), &mut states, &mut queue);
    while let Some((s1, s2)) = queue.pop_front() {
        let source = intern((s1, s2), &mut states, &mut queue);
        for &i in &out1[s1] {
            for &j in &out2[s2] {
                let (t1, t2) = (&a1.transitions[i], &a2.transitions[j]);
                if t1.label != t2.label {
                    continue;
                }
                let Some((modality, constraint)) = combine(t1, t2)? else { continue };
                let mut targets = Vec::new();
                let mut tags = Vec::new();
                for (x, &g1) in t1.targets.iter().zip(&t1.tags) {
                    for (y, &g2) in t2.targets.iter().zip(&t2.tags) {
                        targets.push(intern((*x, *y), &mut states, &mut queue));
                        tags.push(g1 | g2);
                    }
                }
                transitions.push(Transition { source, label: t1.label.clone(), modality, targets, tags, constraint });
            }
        }
    }
    Ok(Apa { states, initial: 0, transitions })
}

pub fn conjoin_apa<L: Clone + Ord>(a1: &Apa<L>, a2: &Apa<L>) -> Result<Apa<L>, CompositionError> {
    apa_product(a1, a2, |v1, v2| v1.intersection(v2).cloned().collect(), |t1, t2| {
        let (k1, k2) = (t1.targets.len(), t2.targets.len());
        let c1 = t1.constraint.marginal_substitute(&marginal_blocks(k1, k2, true), k1 * k2)?;
        let c2 = t2.constraint.marginal_substitute(&marginal_blocks(k1, k2, false), k1 * k2)?;
        Ok(Some((t1.modality.join(t2.modality), c1.intersect(&c2)?.simplified())))
    })
}

pub fn compose_apa<L: Clone + Ord>(a1: &Apa<L>, a2: &Apa<L>) -> Result<Apa<L>, CompositionError> {
    let valuation = |v1: &Valuation, v2: &Valuation| -> Valuation {
        v1.iter().flat_map(|s1| v2.iter().map(move |s2| s1.union(s2).cloned().collect())).collect()
    };
    apa_product(a1, a2, valuation, |t1, t2| {
        let modality = t1.modality.meet(t2.modality);
        if modality == Modality::Bot {
            return Ok(None);
        }
        let (k1, k2) = (t1.targets.len(), t2.targets.len());
        let cells: Vec<Option<usize>> = (0..k1 * k2).map(Some).collect();
        Ok(Some((modality, ProbConstraint::product(&t1.constraint, &t2.constraint, &cells, k1 * k2))))
    })
}
