//! Location-partition abstraction of timed models and of region automata.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::apa::{Apa, ApaState, Transition};
use crate::constraint::ProbConstraint;
use crate::guard::{Guard, Modality};
use crate::model::{ActionId, Apta, Branch, ClockId, Edge, Location, LocationId};
use crate::region::RegionContext;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AbstractionError {
    #[error("unknown location `{0}` in abstraction map")]
    UnknownLocation(String),
    #[error("location `{location}` is mapped twice")]
    DuplicateLocation { location: String },
    #[error("abstraction map covers {found} locations, model has {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("model must be pre-processed first: block `{block}`, action `{action}`")]
    PreprocessRequired { block: String, action: String },
}

/// A surjective map from concrete locations onto named abstract locations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbstractionMap {
    pub forward: Vec<usize>,
    pub names: Vec<String>,
}

impl AbstractionMap {
    pub fn identity(m: &Apta) -> AbstractionMap {
        AbstractionMap { forward: (0..m.locations.len()).collect(), names: m.locations.iter().map(|l| l.name.clone()).collect() }
    }

    /// Builds the map from `concrete -> abstract` name pairs; unmapped locations keep their
    /// own name. Abstract locations are numbered by first concrete occurrence.
    pub fn from_pairs(m: &Apta, pairs: &[(String, String)]) -> Result<AbstractionMap, AbstractionError> {
        let mut target: BTreeMap<usize, String> = BTreeMap::new();
        for (c, a) in pairs {
            let l = m.location_named(c).ok_or_else(|| AbstractionError::UnknownLocation(c.clone()))?;
            if target.insert(l.0, a.clone()).is_some() {
                return Err(AbstractionError::DuplicateLocation { location: c.clone() });
            }
        }
        let mut names: Vec<String> = Vec::new();
        let forward = m
            .locations
            .iter()
            .enumerate()
            .map(|(i, loc)| {
                let name = target.get(&i).cloned().unwrap_or_else(|| loc.name.clone());
                match names.iter().position(|n| *n == name) {
                    Some(k) => k,
                    None => {
                        names.push(name);
                        names.len() - 1
                    }
                }
            })
            .collect();
        Ok(AbstractionMap { forward, names })
    }

    pub fn from_forward(forward: Vec<usize>, names: Vec<String>) -> AbstractionMap {
        AbstractionMap { forward, names }
    }

    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.names.len()];
        for (l, &b) in self.forward.iter().enumerate() {
            out[b].push(l);
        }
        out
    }

    /// The componentwise map on product locations numbered `l1 * n2 + l2`.
    pub fn product(a1: &AbstractionMap, a2: &AbstractionMap) -> AbstractionMap {
        let n2 = a2.forward.len();
        let m2 = a2.names.len();
        let forward = (0..a1.forward.len() * n2).map(|i| a1.forward[i / n2] * m2 + a2.forward[i % n2]).collect();
        let names = a1.names.iter().flat_map(|x| a2.names.iter().map(move |y| product_name(x, y))).collect();
        AbstractionMap { forward, names }
    }

    fn check(&self, m: &Apta) -> Result<(), AbstractionError> {
        if self.forward.len() != m.locations.len() {
            return Err(AbstractionError::SizeMismatch { expected: m.locations.len(), found: self.forward.len() });
        }
        Ok(())
    }
}

pub(crate) fn product_name(a: &str, b: &str) -> String {
    let mut s = a.to_string();
    s.push('|');
    s.push_str(b);
    s
}

fn cell_count(ctx: &RegionContext, cmap: &[usize], g: &Guard) -> usize {
    ctx.all_regions().iter().filter(|r| ctx.entails(r, g, cmap)).count()
}

/// Conjunction of one must guard per block member, or `false` when some member has no
/// must edge for `action`. Members with several must guards contribute the one giving the
/// largest conjunction, counted in clock regions.
pub fn common_guard(m: &Apta, alpha: &AbstractionMap, block: usize, action: ActionId) -> Guard {
    let members: Vec<usize> = (0..m.locations.len()).filter(|&l| alpha.forward[l] == block).collect();
    let mut choices: Vec<Vec<Guard>> = Vec::new();
    for &l in &members {
        let mut gs: Vec<Guard> = Vec::new();
        for e in m.edges_from(LocationId(l)) {
            if e.action == action && e.modality == Modality::Must && !e.guard.is_false() && !gs.contains(&e.guard) {
                gs.push(e.guard.clone());
            }
        }
        if gs.is_empty() {
            return Guard::falsity();
        }
        choices.push(gs);
    }
    if choices.iter().all(|c| c.len() == 1) {
        return choices.iter().fold(Guard::truth(), |acc, c| acc.and(&c[0]));
    }
    let ctx = RegionContext::of(&[m]);
    let cmap = ctx.clock_map(m);
    // (cells, uniform choice, guard); uniform choices win ties so that re-running on a
    // pre-processed model finds the same guard
    let mut best: Option<(usize, bool, Guard)> = None;
    let mut idx = vec![0usize; choices.len()];
    loop {
        let g = choices.iter().zip(&idx).fold(Guard::truth(), |acc, (c, &i)| acc.and(&c[i]));
        let uniform = choices.iter().zip(&idx).all(|(c, &i)| c[i] == g);
        let cells = if g.is_false() { 0 } else { cell_count(&ctx, &cmap, &g) };
        let better = match &best {
            None => true,
            Some((bc, bu, _)) => (cells, uniform) > (*bc, *bu),
        };
        if better {
            best = Some((cells, uniform, g));
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return best.map(|b| b.2).unwrap_or_else(Guard::falsity);
            }
            idx[k] += 1;
            if idx[k] < choices[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Disjoint guards covering exactly the complement of `g`.
pub fn negate_guard(g: &Guard) -> Vec<Guard> {
    g.negate()
}

/// Splits every must edge along the common guard of its block: one copy restricted to the
/// common guard and one per piece of its complement.
pub fn preprocess(m: &Apta, alpha: &AbstractionMap) -> Result<Apta, AbstractionError> {
    alpha.check(m)?;
    let mut guards: BTreeMap<(usize, usize), Guard> = BTreeMap::new();
    for b in 0..alpha.names.len() {
        for a in 0..m.actions.len() {
            guards.insert((b, a), common_guard(m, alpha, b, ActionId(a)));
        }
    }
    let mut out = m.clone();
    out.edges.clear();
    for e in &m.edges {
        let common = &guards[&(alpha.forward[e.source.0], e.action.0)];
        if e.modality != Modality::Must || common.is_false() {
            out.edges.push(e.clone());
            continue;
        }
        let mut pieces = vec![e.guard.and(common)];
        pieces.extend(common.negate().iter().map(|n| e.guard.and(n)));
        for g in pieces.into_iter().filter(|g| !g.is_false()) {
            out.edges.push(Edge { guard: g, ..e.clone() });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Abstracted {
    pub model: Apta,
    /// Set when a product constraint was replaced by the image of its hull.
    pub approximate: bool,
}

/// Merges member edges into one abstract edge over the distinct (reset set, abstract target)
/// pairs; the constraint is the image of the union.
fn merge_edges(edges: &[&Edge], alpha: &AbstractionMap) -> (Vec<Branch>, ProbConstraint, bool) {
    let support: BTreeSet<(BTreeSet<ClockId>, usize)> = edges
        .iter()
        .flat_map(|e| e.branches.iter().map(|b| (b.resets.clone(), alpha.forward[b.target.0])))
        .collect();
    let support: Vec<(BTreeSet<ClockId>, usize)> = support.into_iter().collect();
    let mut constraint = ProbConstraint::falsity(support.len());
    let mut approximate = false;
    for e in edges {
        let f: Vec<usize> = e
            .branches
            .iter()
            .map(|b| support.iter().position(|s| s.0 == b.resets && s.1 == alpha.forward[b.target.0]).unwrap())
            .collect();
        let (img, approx) = e.constraint.image(&f, support.len());
        approximate |= approx;
        constraint = constraint.union(&img).expect("same support");
    }
    let branches = support.into_iter().map(|(resets, t)| Branch { resets, target: LocationId(t) }).collect();
    (branches, constraint, approximate)
}

/// Quotient of a pre-processed model. Every block gets a must edge at its common guard and a
/// may edge for each other guard used by a member. A member may edge lying exactly on the
/// common guard also yields a may edge there, so that no member behavior is lost.
pub fn abstract_model(pre: &Apta, alpha: &AbstractionMap) -> Result<Abstracted, AbstractionError> {
    alpha.check(pre)?;
    let blocks = alpha.blocks();
    let mut out = Apta::new(&pre.name, pre.kind);
    out.actions = pre.actions.clone();
    out.clocks = pre.clocks.clone();
    out.props = pre.props.clone();
    out.initial = LocationId(alpha.forward[pre.initial.0]);
    for (b, members) in blocks.iter().enumerate() {
        let valuation = members.iter().flat_map(|&l| pre.locations[l].valuation.iter().cloned()).collect();
        out.locations.push(Location { name: alpha.names[b].clone(), valuation });
    }
    let mut approximate = false;
    for (b, members) in blocks.iter().enumerate() {
        for a in 0..pre.actions.len() {
            let action = ActionId(a);
            let common = common_guard(pre, alpha, b, action);
            let edges: Vec<&Edge> = pre
                .edges
                .iter()
                .filter(|e| alpha.forward[e.source.0] == b && e.action == action && e.modality != Modality::Bot && !e.guard.is_false())
                .collect();
            if !common.is_false() {
                for &l in members {
                    let ok = edges.iter().filter(|e| e.source.0 == l && e.modality == Modality::Must).all(|e| {
                        e.guard == common || e.guard.and(&common).is_false() || e.guard.and(&common) == e.guard
                    }) && edges.iter().any(|e| e.source.0 == l && e.modality == Modality::Must && e.guard == common);
                    if !ok {
                        return Err(AbstractionError::PreprocessRequired {
                            block: alpha.names[b].clone(),
                            action: pre.actions[a].clone(),
                        });
                    }
                }
                let musts: Vec<&Edge> = edges.iter().copied().filter(|e| e.modality == Modality::Must && e.guard == common).collect();
                let (branches, constraint, approx) = merge_edges(&musts, alpha);
                approximate |= approx;
                out.edges.push(Edge { source: LocationId(b), guard: common.clone(), action, modality: Modality::Must, branches, constraint });
            }
            let mut guards: Vec<&Guard> = Vec::new();
            for e in &edges {
                let extra_at_common = e.guard == common && e.modality == Modality::May;
                if (e.guard != common || extra_at_common) && !guards.contains(&&e.guard) {
                    guards.push(&e.guard);
                }
            }
            for g in guards {
                let group: Vec<&Edge> = edges.iter().copied().filter(|e| e.guard == *g).collect();
                let (branches, constraint, approx) = merge_edges(&group, alpha);
                approximate |= approx;
                out.edges.push(Edge { source: LocationId(b), guard: g.clone(), action, modality: Modality::May, branches, constraint });
            }
        }
    }
    Ok(Abstracted { model: out, approximate })
}

/// Pre-processing followed by abstraction.
pub fn abstraction(m: &Apta, alpha: &AbstractionMap) -> Result<Abstracted, AbstractionError> {
    abstract_model(&preprocess(m, alpha)?, alpha)
}

/// Quotient of an automaton under a state partition. A label is must in a block when every
/// member has a must transition with it; its constraint is the image of the members' must
/// constraints. Any non-must behavior for a label yields a may transition over the image of
/// all members' constraints. Targets are merged per abstract state, keeping the tag of least
/// (size, bit-reversed) order.
pub fn abstract_apa<L: Clone + Ord>(a: &Apa<L>, forward: &[usize], names: &[String]) -> Apa<L> {
    let blocks = names.len();
    let mut states: Vec<ApaState> = names.iter().map(|n| ApaState { name: n.clone(), valuation: BTreeSet::new() }).collect();
    for (s, st) in a.states.iter().enumerate() {
        states[forward[s]].valuation.extend(st.valuation.iter().cloned());
    }
    let out = a.outgoing();
    let mut transitions = Vec::new();
    for b in 0..blocks {
        let members: Vec<usize> = (0..a.states.len()).filter(|&s| forward[s] == b).collect();
        let labels: BTreeSet<L> = members.iter().flat_map(|&s| out[s].iter().map(|&t| a.transitions[t].label.clone())).collect();
        for label in labels {
            let ts: Vec<&Transition<L>> = members
                .iter()
                .flat_map(|&s| out[s].iter().map(|&t| &a.transitions[t]))
                .filter(|t| t.label == label && t.modality != Modality::Bot)
                .collect();
            let all_must =
                members.iter().all(|&s| out[s].iter().any(|&t| a.transitions[t].label == label && a.transitions[t].modality == Modality::Must));
            if all_must {
                let musts: Vec<&Transition<L>> = ts.iter().copied().filter(|t| t.modality == Modality::Must).collect();
                transitions.push(merge_transitions(b, &label, Modality::Must, &musts, forward));
            }
            if !all_must || ts.iter().any(|t| t.modality == Modality::May) {
                transitions.push(merge_transitions(b, &label, Modality::May, &ts, forward));
            }
        }
    }
    Apa { states, initial: forward[a.initial], transitions }
}

fn merge_transitions<L: Clone>(source: usize, label: &L, modality: Modality, ts: &[&Transition<L>], forward: &[usize]) -> Transition<L> {
    let targets: Vec<usize> =
        ts.iter().flat_map(|t| t.targets.iter().map(|&x| forward[x])).collect::<BTreeSet<_>>().into_iter().collect();
    let mut tags = vec![u64::MAX; targets.len()];
    let mut constraint = ProbConstraint::falsity(targets.len());
    for t in ts {
        let f: Vec<usize> = t.targets.iter().map(|&x| targets.iter().position(|&y| y == forward[x]).unwrap()).collect();
        for (k, &g) in f.iter().enumerate() {
            let key = |bits: u64| (bits.count_ones(), bits.reverse_bits());
            if tags[g] == u64::MAX || key(t.tags[k]) < key(tags[g]) {
                tags[g] = t.tags[k];
            }
        }
        constraint = constraint.union(&t.constraint.image(&f, targets.len()).0).expect("same support");
    }
    Transition { source, label: label.clone(), modality, targets, tags, constraint }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guard::{Atom, Comparator};
    use crate::model::Kind;
    use crate::num::{q, qi};
    use crate::relations::apta_weak_refine;
    use crate::relations::Verdict;

    fn loc(name: &str) -> Location {
        Location { name: name.into(), valuation: [BTreeSet::new()].into_iter().collect() }
    }

    fn edge(src: usize, guard: Guard, action: usize, modality: Modality, targets: &[usize], c: ProbConstraint) -> Edge {
        Edge {
            source: LocationId(src),
            guard,
            action: ActionId(action),
            modality,
            branches: targets.iter().map(|&t| Branch { resets: [ClockId(action)].into_iter().collect(), target: LocationId(t) }).collect(),
            constraint: c,
        }
    }

    /// Two locations sharing `extra`, with guards `x_extra >= 1` and `true`.
    fn pair() -> Apta {
        let mut m = Apta::new("m", Kind::Apeca);
        m.actions = vec!["extra".into(), "get".into()];
        m.clocks = vec!["x_extra".into(), "x_get".into()];
        m.locations = vec![loc("a"), loc("b"), loc("c")];
        let ge1 = Guard::atom(Atom::new(0, Comparator::Ge, qi(1)));
        m.edges.push(edge(0, ge1, 0, Modality::Must, &[0], ProbConstraint::point(&[qi(1)])));
        m.edges.push(edge(1, Guard::truth(), 0, Modality::Must, &[1], ProbConstraint::point(&[qi(1)])));
        m.edges.push(edge(1, Guard::truth(), 1, Modality::Must, &[2, 0], ProbConstraint::point(&[q(1, 2), q(1, 2)])));
        m
    }

    fn merge_ab(m: &Apta) -> AbstractionMap {
        AbstractionMap::from_pairs(m, &[("a".into(), "ab".into()), ("b".into(), "ab".into())]).unwrap()
    }

    #[test]
    fn common_guard_of_block() {
        let m = pair();
        let alpha = merge_ab(&m);
        assert_eq!(alpha.names, vec!["ab".to_string(), "c".to_string()]);
        assert_eq!(common_guard(&m, &alpha, 0, ActionId(0)), Guard::atom(Atom::new(0, Comparator::Ge, qi(1))));
        assert!(common_guard(&m, &alpha, 0, ActionId(1)).is_false());
        assert!(common_guard(&m, &alpha, 1, ActionId(0)).is_false());
    }

    #[test]
    fn preprocessing_splits_true_guard() {
        let m = pair();
        let alpha = merge_ab(&m);
        let p = preprocess(&m, &alpha).unwrap();
        let guards: Vec<Guard> = p.edges.iter().filter(|e| e.source == LocationId(1) && e.action == ActionId(0)).map(|e| e.guard.clone()).collect();
        assert_eq!(
            guards,
            vec![Guard::atom(Atom::new(0, Comparator::Ge, qi(1))), Guard::atom(Atom::new(0, Comparator::Lt, qi(1)))]
        );
        assert!(matches!(abstract_model(&m, &alpha), Err(AbstractionError::PreprocessRequired { .. })));
    }

    #[test]
    fn abstraction_is_weakly_refined() {
        let m = pair();
        let alpha = merge_ab(&m);
        let abs = abstraction(&m, &alpha).unwrap().model;
        assert_eq!(abs.locations.len(), 2);
        let musts = abs.edges.iter().filter(|e| e.modality == Modality::Must).count();
        assert_eq!(musts, 1);
        assert_eq!(apta_weak_refine(&m, &abs).verdict, Verdict::Holds);
    }

    #[test]
    fn identity_map_keeps_modalities() {
        let m = pair();
        let abs = abstraction(&m, &AbstractionMap::identity(&m)).unwrap().model;
        assert_eq!(abs.edges.len(), m.edges.len());
        for (x, y) in abs.edges.iter().zip(&m.edges) {
            assert_eq!(x.modality, y.modality);
            assert_eq!(x.guard, y.guard);
        }
    }

    #[test]
    fn product_map_names() {
        let m = pair();
        let p = AbstractionMap::product(&merge_ab(&m), &AbstractionMap::identity(&m));
        assert_eq!(p.forward.len(), 9);
        assert_eq!(p.names[0], "ab|a");
        assert_eq!(p.forward[3], 0);
        assert_eq!(p.forward[8], 5);
    }
}
