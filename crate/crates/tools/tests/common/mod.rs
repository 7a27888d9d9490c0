//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use apta_core::apa::Apa;
use apta_core::consistency::{DivergenceGame, Owner};
use apta_core::guard::Modality;
use apta_core::model::Apta;
use apta_core::num::Q;
use apta_tools::format::parse_model;
use num_traits::Zero;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture(name: &str) -> Apta {
    let text = std::fs::read_to_string(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    parse_model(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Whether mass `supply` can be moved onto `demand` along `allowed` edges: by the
/// supply-demand theorem, exactly when every set of sources fits into its neighbourhood.
pub fn transport_feasible(supply: &[Q], demand: &[Q], allowed: &[Vec<bool>]) -> bool {
    let total_s: Q = supply.iter().sum();
    let total_d: Q = demand.iter().sum();
    if total_s != total_d {
        return false;
    }
    let n = supply.len();
    for mask in 1u32..(1 << n) {
        let s: Q = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| supply[i].clone()).sum();
        let reach: Q = (0..demand.len())
            .filter(|&j| (0..n).any(|i| mask >> i & 1 == 1 && !supply[i].is_zero() && allowed[i][j]))
            .map(|j| demand[j].clone())
            .sum();
        if s > reach {
            return false;
        }
    }
    true
}

/// Transitive closure of a successor relation, paths of length at least one.
fn closure(succ: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = succ.len();
    let mut r = vec![vec![false; n]; n];
    for (u, s) in succ.iter().enumerate() {
        for &v in s {
            r[u][v] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    r
}

fn reach_from(succ: &[Vec<usize>], v: usize) -> Vec<bool> {
    let mut seen = vec![false; succ.len()];
    seen[v] = true;
    let mut stack = vec![v];
    while let Some(u) = stack.pop() {
        for &w in &succ[u] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

fn accepting(g: &DivergenceGame, v: usize) -> bool {
    g.nodes[v].accepting
}

/// Nodes on a cycle avoiding accepting nodes.
fn bad_cycles(g: &DivergenceGame, succ: &[Vec<usize>]) -> Vec<bool> {
    let restricted: Vec<Vec<usize>> = (0..succ.len())
        .map(|u| if accepting(g, u) { vec![] } else { succ[u].iter().copied().filter(|&w| !accepting(g, w)).collect() })
        .collect();
    let r = closure(&restricted);
    (0..succ.len()).map(|u| r[u][u]).collect()
}

/// Nodes of end components avoiding accepting nodes, where the scheduler picks moves and
/// chance nodes keep all of theirs.
fn bad_end_components(g: &DivergenceGame, succ: &[Vec<usize>]) -> Vec<bool> {
    let n = succ.len();
    let mut alive: Vec<bool> = (0..n).map(|u| !accepting(g, u)).collect();
    loop {
        let restricted: Vec<Vec<usize>> =
            (0..n).map(|u| if alive[u] { succ[u].iter().copied().filter(|&w| alive[w]).collect() } else { vec![] }).collect();
        let r = closure(&restricted);
        let mut next = alive.clone();
        for u in 0..n {
            if !alive[u] {
                continue;
            }
            let inside: Vec<bool> = succ[u].iter().map(|&w| alive[w] && r[u][w] && r[w][u]).collect();
            let ok = if g.nodes[u].owner == Owner::Scheduler { inside.iter().any(|b| *b) } else { inside.iter().all(|b| *b) };
            if !ok {
                next[u] = false;
            }
        }
        if next == alive {
            return alive;
        }
        alive = next;
    }
}

/// Winning nodes found by trying every memoryless implementor strategy.
pub fn game_oracle(g: &DivergenceGame, almost_sure: bool) -> Vec<bool> {
    let n = g.nodes.len();
    let imp: Vec<usize> = (0..n).filter(|&v| g.nodes[v].owner == Owner::Implementor).collect();
    let mut win = vec![false; n];
    let mut choice = vec![0usize; n];
    loop {
        let succ: Vec<Vec<usize>> = (0..n)
            .map(|v| {
                if g.nodes[v].owner == Owner::Implementor {
                    vec![g.moves[v][choice[v]].to]
                } else {
                    g.moves[v].iter().map(|m| m.to).collect()
                }
            })
            .collect();
        let bad = if almost_sure { bad_end_components(g, &succ) } else { bad_cycles(g, &succ) };
        for v in 0..n {
            if !win[v] && !reach_from(&succ, v).iter().zip(&bad).any(|(r, b)| *r && *b) {
                win[v] = true;
            }
        }
        let mut k = 0;
        loop {
            if k == imp.len() {
                return win;
            }
            let v = imp[k];
            choice[v] += 1;
            if choice[v] < g.moves[v].len() {
                break;
            }
            choice[v] = 0;
            k += 1;
        }
    }
}

pub fn strategy_count(g: &DivergenceGame) -> usize {
    (0..g.nodes.len()).filter(|&v| g.nodes[v].owner == Owner::Implementor).map(|v| g.moves[v].len().max(1)).product()
}

/// A transition whose constraint is a finite set of distributions.
#[derive(Clone, Debug)]
pub struct FiniteTransition {
    pub source: usize,
    pub label: u8,
    pub modality: Modality,
    pub targets: Vec<usize>,
    pub points: Vec<Vec<Q>>,
}

/// Lifting of every point on the left to some point on the right under `rel`.
fn lifts(t1: &FiniteTransition, t2: &FiniteTransition, rel: &[Vec<bool>]) -> bool {
    let allowed: Vec<Vec<bool>> = t1.targets.iter().map(|&s| t2.targets.iter().map(|&t| rel[s][t]).collect()).collect();
    t1.points.iter().all(|mu1| t2.points.iter().any(|mu2| transport_feasible(mu1, mu2, &allowed)))
}

fn is_weak_refinement(
    rel: &[Vec<bool>],
    left: &[FiniteTransition],
    right: &[FiniteTransition],
    vals: &dyn Fn(usize, usize) -> bool,
) -> bool {
    for (s, row) in rel.iter().enumerate() {
        for (t, &inside) in row.iter().enumerate() {
            if !inside {
                continue;
            }
            if !vals(s, t) {
                return false;
            }
            let must_ok = right.iter().filter(|t2| t2.source == t && t2.modality == Modality::Must).all(|t2| {
                left.iter().any(|t1| t1.source == s && t1.label == t2.label && t1.modality == Modality::Must && lifts(t1, t2, rel))
            });
            let may_ok = left
                .iter()
                .filter(|t1| t1.source == s)
                .all(|t1| right.iter().any(|t2| t2.source == t && t2.label == t1.label && lifts(t1, t2, rel)));
            if !(must_ok && may_ok) {
                return false;
            }
        }
    }
    true
}

/// Whether some weak refinement relation contains the initial pair, by enumerating every
/// relation between the two state sets.
pub fn weak_refinement_oracle(
    n1: usize,
    n2: usize,
    left: &[FiniteTransition],
    right: &[FiniteTransition],
    vals: &dyn Fn(usize, usize) -> bool,
    initial: (usize, usize),
) -> bool {
    let cells = n1 * n2;
    assert!(cells <= 16, "relation space too large");
    for mask in 0u32..(1 << cells) {
        if mask >> (initial.0 * n2 + initial.1) & 1 == 0 {
            continue;
        }
        let rel: Vec<Vec<bool>> = (0..n1).map(|s| (0..n2).map(|t| mask >> (s * n2 + t) & 1 == 1).collect()).collect();
        if is_weak_refinement(&rel, left, right, vals) {
            return true;
        }
    }
    false
}

/// The same automaton with constraints as unions of point pieces.
pub fn finite_apa(transitions: &[FiniteTransition]) -> Vec<apta_core::apa::Transition<u8>> {
    use apta_core::constraint::ProbConstraint;
    transitions
        .iter()
        .map(|t| {
            let mut c = ProbConstraint::falsity(t.targets.len());
            for p in &t.points {
                c = c.union(&ProbConstraint::point(p)).expect("same dimension");
            }
            apta_core::apa::Transition {
                source: t.source,
                label: t.label,
                modality: t.modality,
                targets: t.targets.clone(),
                tags: vec![0; t.targets.len()],
                constraint: c,
            }
        })
        .collect()
}

pub fn state_names<L>(a: &Apa<L>) -> BTreeMap<String, usize> {
    a.states.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect()
}
