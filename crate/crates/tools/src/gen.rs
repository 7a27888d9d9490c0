//! Seeded random models for property suites.

use std::collections::BTreeSet;

use apta_core::abstraction::AbstractionMap;
use apta_core::constraint::{LinConstraint, Polytope, ProbConstraint, Rel};
use apta_core::consistency::{DivergenceGame, Move, Owner};
use apta_core::guard::{Atom, Comparator, Guard, Modality};
use apta_core::model::{ActionId, Apta, Branch, ClockId, Edge, Kind, Location, LocationId, PropSet};
use apta_core::num::{q, qi, Q};
use rand::seq::SliceRandom;
use rand::Rng;

/// Size limits of a generated model.
#[derive(Clone, Debug)]
pub struct Shape {
    pub kind: Kind,
    pub max_locations: usize,
    pub actions: Vec<String>,
    /// Ignored for event-clock kinds, whose clocks follow the actions.
    pub clocks: Vec<String>,
    pub props: Vec<String>,
    pub max_constant: u32,
    pub max_branches: usize,
    pub max_edges: usize,
    /// Chance that a location gets no admissible valuation.
    pub dead_location: f64,
    /// Chance that an edge is may rather than must.
    pub may: f64,
}

impl Shape {
    /// One clock, two actions, up to four locations and constants up to three.
    pub fn small_apta() -> Shape {
        Shape {
            kind: Kind::Apta,
            max_locations: 4,
            actions: vec!["a".into(), "b".into()],
            clocks: vec!["x".into()],
            props: vec!["p".into(), "q".into()],
            max_constant: 3,
            max_branches: 3,
            max_edges: 3,
            dead_location: 0.1,
            may: 0.4,
        }
    }

    pub fn small_apeca(props: &[&str]) -> Shape {
        Shape {
            kind: Kind::Apeca,
            max_locations: 3,
            actions: vec!["a".into(), "b".into()],
            clocks: Vec::new(),
            props: props.iter().map(|s| s.to_string()).collect(),
            max_constant: 2,
            max_branches: 2,
            max_edges: 2,
            dead_location: 0.0,
            may: 0.4,
        }
    }
}

const FRACTIONS: [(i64, i64); 7] = [(0, 1), (1, 4), (1, 3), (1, 2), (2, 3), (3, 4), (1, 1)];

fn fraction<R: Rng>(rng: &mut R) -> Q {
    let (n, d) = *FRACTIONS.choose(rng).unwrap();
    q(n, d)
}

/// A distribution with denominator at most `den` and full support.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize, den: i64) -> Vec<Q> {
    let den = den.max(n as i64);
    let mut cuts: Vec<i64> = (1..den).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<i64> = cuts.into_iter().take(n - 1).collect();
    cuts.sort();
    let mut out = Vec::with_capacity(n);
    let mut prev = 0;
    for c in cuts.into_iter().chain([den]) {
        out.push(q(c - prev, den));
        prev = c;
    }
    out
}

/// A point, a box of per-coordinate bounds, a box plus one linear row, or `true`.
pub fn random_constraint<R: Rng>(rng: &mut R, n: usize) -> ProbConstraint {
    match rng.gen_range(0..8) {
        0 | 1 => ProbConstraint::point(&random_distribution(rng, n, 4)),
        2 => ProbConstraint::truth(n),
        k => {
            let mut rows = Vec::new();
            for i in 0..n {
                let (mut lo, mut hi) = (fraction(rng), fraction(rng));
                if lo > hi {
                    std::mem::swap(&mut lo, &mut hi);
                }
                let unit = |s: i64| (0..n).map(|j| if j == i { qi(s) } else { qi(0) }).collect::<Vec<_>>();
                if hi < qi(1) && hi != lo {
                    rows.push(LinConstraint::new(unit(1), Rel::Le, hi));
                }
                if lo > qi(0) {
                    rows.push(LinConstraint::new(unit(-1), Rel::Le, -lo));
                }
            }
            if k == 7 && n >= 2 {
                let coeffs = (0..n).map(|_| qi(rng.gen_range(-1..=2))).collect();
                rows.push(LinConstraint::new(coeffs, Rel::Le, fraction(rng)));
            }
            ProbConstraint::from_polytope(Polytope { dim: n, rows })
        }
    }
}

/// `true`, one bound, or an interval on one clock.
pub fn random_guard<R: Rng>(rng: &mut R, clocks: usize, max: u32) -> Guard {
    if clocks == 0 || rng.gen_bool(0.3) {
        return Guard::truth();
    }
    let c = rng.gen_range(0..clocks);
    let cmp = *[Comparator::Lt, Comparator::Le, Comparator::Gt, Comparator::Ge].choose(rng).unwrap();
    let k = rng.gen_range(0..=max as i64);
    let first = Atom::new(c, cmp, qi(k));
    if rng.gen_bool(0.3) && matches!(cmp, Comparator::Gt | Comparator::Ge) && k < max as i64 {
        let hi = qi(rng.gen_range(k + 1..=max as i64));
        let up = *[Comparator::Lt, Comparator::Le].choose(rng).unwrap();
        return Guard::from_atoms([first, Atom::new(c, up, hi)]);
    }
    Guard::atom(first)
}

fn random_valuation<R: Rng>(rng: &mut R, shape: &Shape) -> BTreeSet<PropSet> {
    if rng.gen_bool(shape.dead_location) {
        return BTreeSet::new();
    }
    let n = shape.props.len();
    let mut out = BTreeSet::new();
    let count = rng.gen_range(1..=2usize.min(1 << n));
    while out.len() < count {
        let bits: u32 = rng.gen_range(0..1u32 << n);
        out.insert((0..n).filter(|i| bits >> i & 1 == 1).map(apta_core::model::PropId).collect());
    }
    out
}

fn skeleton<R: Rng>(rng: &mut R, shape: &Shape, name: &str) -> Apta {
    let mut m = Apta::new(name, shape.kind);
    m.actions = shape.actions.clone();
    m.props = shape.props.clone();
    m.clocks = if shape.kind.is_event_clock() { m.actions.iter().map(|a| Apta::event_clock_name(a)).collect() } else { shape.clocks.clone() };
    let n = rng.gen_range(1..=shape.max_locations);
    for i in 0..n {
        let valuation = random_valuation(rng, shape);
        m.locations.push(Location { name: format!("l{i}"), valuation });
    }
    m.initial = LocationId(0);
    if m.locations[0].valuation.is_empty() && rng.gen_bool(0.7) {
        m.locations[0].valuation.insert(PropSet::new());
    }
    m
}

fn random_branches<R: Rng>(rng: &mut R, m: &Apta, shape: &Shape, action: usize) -> Vec<Branch> {
    let k = rng.gen_range(1..=shape.max_branches);
    let mut out: Vec<Branch> = Vec::new();
    for _ in 0..k {
        let b = {
            let target = LocationId(rng.gen_range(0..m.locations.len()));
            let resets = if m.kind.is_event_clock() {
                [ClockId(action)].into_iter().collect()
            } else {
                (0..m.clocks.len()).filter(|_| rng.gen_bool(0.4)).map(ClockId).collect()
            };
            Branch { resets, target }
        };
        if !out.contains(&b) {
            out.push(b);
        }
    }
    out
}

fn modality<R: Rng>(rng: &mut R, shape: &Shape) -> Modality {
    if rng.gen_bool(shape.may) {
        Modality::May
    } else {
        Modality::Must
    }
}

fn random_edge<R: Rng>(rng: &mut R, m: &Apta, shape: &Shape, source: usize, action: usize, guard: Guard, modality: Modality) -> Edge {
    let branches = random_branches(rng, m, shape, action);
    let constraint = random_constraint(rng, branches.len());
    Edge { source: LocationId(source), guard, action: ActionId(action), modality, branches, constraint }
}

/// An unrestricted model: edges with arbitrary guards, possibly overlapping.
pub fn random_apta<R: Rng>(rng: &mut R, shape: &Shape) -> Apta {
    let mut m = skeleton(rng, shape, "gen");
    for l in 0..m.locations.len() {
        for _ in 0..rng.gen_range(0..=shape.max_edges) {
            let action = rng.gen_range(0..m.actions.len());
            let guard = random_guard(rng, m.clocks.len(), shape.max_constant);
            let md = modality(rng, shape);
            let e = random_edge(rng, &m, shape, l, action, guard, md);
            m.edges.push(e);
        }
    }
    m
}

/// A guard partition of the clock space: `[true]` or a split of one clock at a constant.
fn random_partition<R: Rng>(rng: &mut R, clocks: usize, max: u32) -> Vec<Guard> {
    if clocks == 0 || max == 0 || rng.gen_bool(0.5) {
        return vec![Guard::truth()];
    }
    let c = rng.gen_range(0..clocks);
    let k = qi(rng.gen_range(1..=max as i64));
    let (lo, hi) = if rng.gen_bool(0.5) { (Comparator::Lt, Comparator::Ge) } else { (Comparator::Le, Comparator::Gt) };
    vec![Guard::atom(Atom::new(c, lo, k.clone())), Guard::atom(Atom::new(c, hi, k))]
}

/// Edges of one action never overlap at one location, so the model is action-deterministic.
pub fn random_deterministic<R: Rng>(rng: &mut R, shape: &Shape) -> Apta {
    let mut m = skeleton(rng, shape, "gen");
    for l in 0..m.locations.len() {
        for a in 0..m.actions.len() {
            if rng.gen_bool(0.3) {
                continue;
            }
            for g in random_partition(rng, m.clocks.len(), shape.max_constant) {
                if rng.gen_bool(0.2) {
                    continue;
                }
                let md = modality(rng, shape);
                let e = random_edge(rng, &m, shape, l, a, g, md);
                m.edges.push(e);
            }
        }
    }
    m
}

/// Deterministic in actions and in propositions: every location has its own singleton
/// valuation and every edge targets distinct locations.
pub fn random_fully_deterministic<R: Rng>(rng: &mut R, shape: &Shape) -> Apta {
    let mut m = random_deterministic(rng, shape);
    m.props = (0..m.locations.len()).map(|i| format!("at{i}")).collect();
    for (i, l) in m.locations.iter_mut().enumerate() {
        l.valuation = [[apta_core::model::PropId(i)].into_iter().collect()].into_iter().collect();
    }
    for e in m.edges.iter_mut() {
        let mut seen = BTreeSet::new();
        let keep: Vec<bool> = e.branches.iter().map(|b| seen.insert(b.target)).collect();
        if keep.iter().all(|k| *k) {
            continue;
        }
        e.branches = e.branches.iter().zip(&keep).filter(|(_, k)| **k).map(|(b, _)| b.clone()).collect();
        e.constraint = random_constraint(rng, e.branches.len());
    }
    m
}

/// A model fit for abstraction together with a random location partition: every action has
/// one guard partition shared by all locations, and each location has at most one must edge
/// per action.
pub fn random_abstractable<R: Rng>(rng: &mut R, shape: &Shape) -> (Apta, AbstractionMap) {
    let mut m = skeleton(rng, shape, "gen");
    let partitions: Vec<Vec<Guard>> = (0..m.actions.len()).map(|_| random_partition(rng, m.clocks.len(), shape.max_constant)).collect();
    for l in 0..m.locations.len() {
        for (a, cells) in partitions.iter().enumerate() {
            let must_cell = if rng.gen_bool(0.6) { Some(rng.gen_range(0..cells.len())) } else { None };
            for (i, g) in cells.iter().enumerate() {
                let md = if must_cell == Some(i) {
                    Modality::Must
                } else if rng.gen_bool(0.5) {
                    Modality::May
                } else {
                    continue;
                };
                let e = random_edge(rng, &m, shape, l, a, g.clone(), md);
                m.edges.push(e);
            }
        }
    }
    let alpha = random_map(rng, &m);
    (m, alpha)
}

/// Groups locations into at most as many blocks, each named after its members.
pub fn random_map<R: Rng>(rng: &mut R, m: &Apta) -> AbstractionMap {
    let n = m.locations.len();
    let blocks = rng.gen_range(1..=n);
    let raw: Vec<usize> = (0..n).map(|i| if i < blocks { i } else { rng.gen_range(0..blocks) }).collect();
    let mut names = vec![String::new(); blocks];
    for (i, &b) in raw.iter().enumerate() {
        if !names[b].is_empty() {
            names[b].push('+');
        }
        names[b].push_str(&m.locations[i].name);
    }
    AbstractionMap::from_forward(raw, names)
}

/// A model that usually refines `m`: drops some may edges, promotes some to must, shrinks
/// constraints and valuations.
pub fn tighten<R: Rng>(rng: &mut R, m: &Apta) -> Apta {
    let mut out = m.clone();
    out.name = format!("{}_tight", m.name);
    let mut edges = Vec::new();
    for e in &m.edges {
        let mut e = e.clone();
        if e.modality == Modality::May {
            match rng.gen_range(0..4) {
                0 => continue,
                1 if e.constraint.sat_nonempty() => e.modality = Modality::Must,
                _ => {}
            }
        }
        if rng.gen_bool(0.5) && !e.branches.is_empty() {
            let cut = random_constraint(rng, e.branches.len());
            if let Ok(c) = e.constraint.intersect(&cut) {
                if c.sat_nonempty() {
                    e.constraint = c.simplified();
                }
            }
        }
        edges.push(e);
    }
    out.edges = edges;
    for l in out.locations.iter_mut() {
        if l.valuation.len() > 1 && rng.gen_bool(0.5) {
            let keep = l.valuation.iter().next().cloned().unwrap();
            l.valuation = [keep].into_iter().collect();
        }
    }
    out
}

/// A game with `n` nodes whose implementor nodes have at most `max_choices` moves.
pub fn random_game<R: Rng>(rng: &mut R, n: usize, max_choices: usize) -> DivergenceGame {
    let mut g = DivergenceGame::new();
    for i in 0..n {
        let owner = *[Owner::Implementor, Owner::Scheduler, Owner::Chance].choose(rng).unwrap();
        g.add_node(owner, format!("n{i}"), rng.gen_bool(0.3));
    }
    for v in 0..n {
        let cap = if g.nodes[v].owner == Owner::Implementor { max_choices } else { 3 };
        let k = rng.gen_range(1..=cap.max(1));
        let mut succ: Vec<usize> = (0..k).map(|_| rng.gen_range(0..n)).collect();
        succ.sort();
        succ.dedup();
        let share = q(1, succ.len() as i64);
        for to in succ {
            let probability = (g.nodes[v].owner == Owner::Chance).then(|| share.clone());
            g.moves[v].push(Move { to, tick: false, probability });
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use apta_core::relations::is_action_deterministic;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn distributions_sum_to_one() {
        let mut rng = StdRng::seed_from_u64(1);
        for n in 1..4 {
            let d = random_distribution(&mut rng, n, 4);
            assert_eq!(d.iter().sum::<Q>(), qi(1));
            assert!(d.iter().all(|x| *x > qi(0)));
        }
    }

    #[test]
    fn generated_models_validate() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..30 {
            let m = random_apta(&mut rng, &Shape::small_apta());
            assert!(m.validate().is_empty(), "{:?}", m.validate());
            let d = random_deterministic(&mut rng, &Shape::small_apeca(&["p"]));
            assert!(d.validate().is_empty(), "{:?}", d.validate());
            assert!(is_action_deterministic(&d));
        }
    }

    #[test]
    fn seeds_reproduce() {
        let a = random_apta(&mut StdRng::seed_from_u64(9), &Shape::small_apta());
        let b = random_apta(&mut StdRng::seed_from_u64(9), &Shape::small_apta());
        assert_eq!(a, b);
    }
}
