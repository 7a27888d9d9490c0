//! Location consistency, pruning, implementation extraction, and time-divergence checks via
//! Büchi games on the region automaton.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::{One, Zero};

use crate::apa::{Apa, ApaState, Transition};
use crate::constraint::ProbConstraint;
use crate::guard::Modality;
use crate::model::{Apta, Branch, ClockId, Edge, Kind, Location, LocationId};
use crate::num::Q;
use crate::region::{build_region, RegionContext, RegionLabel};

pub fn location_consistent(a: &Apta, l: LocationId) -> bool {
    !a.location(l).valuation.is_empty()
        && a.edges_from(l).all(|e| e.modality != Modality::Must || e.constraint.sat_nonempty())
}

/// The canonical specification without implementations.
pub fn empty_specification(a: &Apta) -> Apta {
    let mut out = Apta::new(&a.name, a.kind);
    out.actions = a.actions.clone();
    out.clocks = a.clocks.clone();
    out.props = a.props.clone();
    out.locations = vec![Location { name: "empty".into(), valuation: BTreeSet::new() }];
    out
}

pub fn is_empty_specification(a: &Apta) -> bool {
    !location_consistent(a, a.initial)
}

/// One pruning step: removes inconsistent locations and forces zero mass towards them.
pub fn prune(a: &Apta) -> Apta {
    let bad: Vec<bool> = (0..a.locations.len()).map(|l| !location_consistent(a, LocationId(l))).collect();
    if bad[a.initial.0] {
        return empty_specification(a);
    }
    let mut index = vec![usize::MAX; a.locations.len()];
    let mut out = Apta::new(&a.name, a.kind);
    out.actions = a.actions.clone();
    out.clocks = a.clocks.clone();
    out.props = a.props.clone();
    for (l, loc) in a.locations.iter().enumerate() {
        if !bad[l] {
            index[l] = out.locations.len();
            out.locations.push(loc.clone());
        }
    }
    out.initial = LocationId(index[a.initial.0]);
    for e in a.edges.iter().filter(|e| !bad[e.source.0]) {
        let dead: BTreeSet<usize> = (0..e.branches.len()).filter(|&k| bad[e.branches[k].target.0]).collect();
        let (branches, constraint) = if dead.is_empty() {
            (e.branches.clone(), e.constraint.clone())
        } else {
            let keep: Vec<bool> = (0..e.branches.len()).map(|k| !dead.contains(&k)).collect();
            let c = e.constraint.restrict_zero(&dead);
            let c = if c.sat_nonempty() { c.retain(&keep) } else { ProbConstraint::falsity(keep.iter().filter(|k| **k).count()) };
            let b = e.branches.iter().zip(&keep).filter(|(_, k)| **k).map(|(b, _)| b.clone()).collect();
            (b, c)
        };
        if e.modality == Modality::May && !constraint.sat_nonempty() && !dead.is_empty() {
            continue;
        }
        out.edges.push(Edge {
            source: LocationId(index[e.source.0]),
            guard: e.guard.clone(),
            action: e.action,
            modality: e.modality,
            branches: branches
                .into_iter()
                .map(|b: Branch| Branch { resets: b.resets, target: LocationId(index[b.target.0]) })
                .collect(),
            constraint,
        });
    }
    out
}

/// Pruning iterated to a fixpoint.
pub fn prune_star(a: &Apta) -> Apta {
    let mut cur = a.clone();
    loop {
        if is_empty_specification(&cur) {
            return empty_specification(&cur);
        }
        let next = prune(&cur);
        if next.locations.len() == cur.locations.len() && next.edges.len() == cur.edges.len() && next == cur {
            return cur;
        }
        cur = next;
    }
}

fn apa_state_consistent<L>(a: &Apa<L>, out: &[Vec<usize>], s: usize) -> bool {
    !a.states[s].valuation.is_empty()
        && out[s].iter().all(|&t| a.transitions[t].modality != Modality::Must || a.transitions[t].constraint.sat_nonempty())
}

/// Pruning iterated to a fixpoint on an automaton; `None` when the initial state is lost.
pub fn prune_apa<L: Clone + Ord>(a: &Apa<L>) -> Option<Apa<L>> {
    let mut cur = a.clone();
    loop {
        let out = cur.outgoing();
        let bad: Vec<bool> = (0..cur.states.len()).map(|s| !apa_state_consistent(&cur, &out, s)).collect();
        if bad[cur.initial] {
            return None;
        }
        if !bad.iter().any(|b| *b) {
            return Some(cur);
        }
        let mut transitions = Vec::new();
        for t in &cur.transitions {
            if bad[t.source] {
                continue;
            }
            let dead: BTreeSet<usize> = (0..t.targets.len()).filter(|&k| bad[t.targets[k]]).collect();
            if dead.is_empty() {
                transitions.push(t.clone());
                continue;
            }
            let keep: Vec<bool> = (0..t.targets.len()).map(|k| !dead.contains(&k)).collect();
            let c = t.constraint.restrict_zero(&dead);
            if !c.sat_nonempty() && t.modality == Modality::May {
                continue;
            }
            let c = if c.sat_nonempty() { c.retain(&keep) } else { ProbConstraint::falsity(keep.iter().filter(|k| **k).count()) };
            transitions.push(Transition {
                source: t.source,
                label: t.label.clone(),
                modality: t.modality,
                targets: t.targets.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect(),
                tags: t.tags.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect(),
                constraint: c,
            });
        }
        let pruned = Apa { states: cur.states.clone(), initial: cur.initial, transitions };
        let keep: Vec<bool> = bad.iter().map(|b| !b).collect();
        cur = pruned.restrict(&keep);
    }
}

/// Derives an implementation: every must transition of the pruned region automaton is
/// realized by the lexicographically least vertex of its constraint, may transitions are
/// dropped, and each state takes its least admissible valuation.
pub fn extract_implementation(a: &Apta) -> Option<Apta> {
    let pruned = prune_star(a);
    if is_empty_specification(&pruned) {
        return None;
    }
    let ctx = RegionContext::of(&[&pruned]);
    let build = build_region(&pruned, &ctx);
    let apa = prune_apa(&build.apa)?;
    let mut chosen: Vec<(usize, &Transition<RegionLabel>, Vec<Q>)> = Vec::new();
    for (i, t) in apa.transitions.iter().enumerate() {
        if t.modality == Modality::Must {
            chosen.push((i, t, t.constraint.lex_min_vertex()?));
        }
    }
    let mut reach = vec![false; apa.states.len()];
    reach[apa.initial] = true;
    let mut stack = vec![apa.initial];
    while let Some(s) = stack.pop() {
        for (_, t, mu) in chosen.iter().filter(|(_, t, _)| t.source == s) {
            for (k, p) in mu.iter().enumerate() {
                if !p.is_zero() && !reach[t.targets[k]] {
                    reach[t.targets[k]] = true;
                    stack.push(t.targets[k]);
                }
            }
        }
    }
    let mut index = vec![usize::MAX; apa.states.len()];
    let mut out = Apta::new(&a.name, if a.kind.is_event_clock() { Kind::Peca } else { Kind::Pta });
    out.actions = ctx.actions.clone();
    out.clocks = ctx.clocks.clone();
    out.props = pruned.props.clone();
    for (s, st) in apa.states.iter().enumerate() {
        if !reach[s] {
            continue;
        }
        index[s] = out.locations.len();
        let least = st.valuation.iter().next().cloned().unwrap_or_default();
        let set = least.iter().filter_map(|p| pruned.prop_named(p)).collect();
        out.locations.push(Location { name: st.name.clone(), valuation: [set].into_iter().collect() });
    }
    out.initial = LocationId(index[apa.initial]);
    for (_, t, mu) in chosen.iter().filter(|(_, t, _)| reach[t.source]) {
        let mut branches = Vec::new();
        let mut probs = Vec::new();
        for (k, p) in mu.iter().enumerate() {
            if p.is_zero() {
                continue;
            }
            let bits = t.tags[k];
            branches.push(Branch {
                resets: (0..ctx.clocks.len()).filter(|c| bits >> c & 1 == 1).map(ClockId).collect(),
                target: LocationId(index[t.targets[k]]),
            });
            probs.push(p.clone());
        }
        out.edges.push(Edge {
            source: LocationId(index[t.source]),
            guard: ctx.box_guard(&t.label.window),
            action: crate::model::ActionId(t.label.action),
            modality: Modality::Must,
            branches,
            constraint: ProbConstraint::point(&probs),
        });
    }
    Some(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Owner {
    /// Chooses how the specification is implemented.
    Implementor,
    /// Schedules which implemented behavior happens.
    Scheduler,
    Chance,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GameNode {
    pub owner: Owner,
    pub label: String,
    pub accepting: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Move {
    pub to: usize,
    pub tick: bool,
    pub probability: Option<Q>,
}

/// A stochastic game with a Büchi objective on accepting nodes. Tick moves pass through an
/// accepting intermediate node, so visiting accepting nodes infinitely often is the same as
/// taking infinitely many tick moves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DivergenceGame {
    pub nodes: Vec<GameNode>,
    pub moves: Vec<Vec<Move>>,
    pub initial: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ConsistencyError {
    #[error("specification is inconsistent")]
    InconsistentInput,
}

impl DivergenceGame {
    pub fn new() -> DivergenceGame {
        DivergenceGame { nodes: Vec::new(), moves: Vec::new(), initial: 0 }
    }

    pub fn add_node(&mut self, owner: Owner, label: String, accepting: bool) -> usize {
        self.nodes.push(GameNode { owner, label, accepting });
        self.moves.push(Vec::new());
        self.nodes.len() - 1
    }

    pub fn add_move(&mut self, from: usize, to: usize, tick: bool) {
        if tick {
            let mid = self.add_node(Owner::Implementor, format!("tick {from}->{to}"), true);
            self.moves[from].push(Move { to: mid, tick: true, probability: None });
            self.moves[mid].push(Move { to, tick: false, probability: None });
        } else {
            self.moves[from].push(Move { to, tick: false, probability: None });
        }
    }

    fn successors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.moves[v].iter().map(|m| m.to)
    }

    /// Nodes from which `player` can force a visit to `target` within `region`, where a chance
    /// node counts as the player's when `chance_helps` holds. Also returns the attracting move
    /// of each player node.
    fn attractor(&self, target: &[bool], region: &[bool], player: Owner, chance_helps: bool) -> (Vec<bool>, Vec<Option<usize>>) {
        let n = self.nodes.len();
        let mut inside: Vec<bool> = (0..n).map(|v| region[v] && target[v]).collect();
        let mut choice = vec![None; n];
        let mut changed = true;
        while changed {
            changed = false;
            for v in 0..n {
                if !region[v] || inside[v] {
                    continue;
                }
                let controls = self.nodes[v].owner == player || (self.nodes[v].owner == Owner::Chance && chance_helps);
                let succ: Vec<usize> = self.successors(v).filter(|&w| region[w]).collect();
                let hit = if controls {
                    let pick = succ.iter().copied().find(|&w| inside[w]);
                    if pick.is_some() {
                        choice[v] = pick;
                    }
                    pick.is_some()
                } else {
                    !succ.is_empty() && succ.iter().all(|&w| inside[w])
                };
                if hit {
                    inside[v] = true;
                    changed = true;
                }
            }
        }
        (inside, choice)
    }
}

impl Default for DivergenceGame {
    fn default() -> Self {
        DivergenceGame::new()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GameSolution {
    pub winning: Vec<bool>,
    /// A memoryless winning choice for implementor nodes in the winning region.
    pub strategy: BTreeMap<usize, usize>,
}

/// Sure Büchi winning region, with chance resolved adversarially.
pub fn solve_buchi_sure(g: &DivergenceGame) -> GameSolution {
    let n = g.nodes.len();
    let all = vec![true; n];
    let accepting: Vec<bool> = g.nodes.iter().map(|x| x.accepting).collect();
    let mut z = all.clone();
    loop {
        // accepting nodes that can force a step back into z
        let cpre: Vec<bool> = (0..n).map(|v| cpre(g, v, &z)).collect();
        let target: Vec<bool> = (0..n).map(|v| accepting[v] && cpre[v]).collect();
        let (reach, _) = g.attractor(&target, &all, Owner::Implementor, false);
        let mut next = reach.clone();
        for v in 0..n {
            next[v] = next[v] && z[v];
        }
        if next == z {
            break;
        }
        z = next;
    }
    let cpre_z: Vec<bool> = (0..n).map(|v| cpre(g, v, &z)).collect();
    let target: Vec<bool> = (0..n).map(|v| accepting[v] && cpre_z[v] && z[v]).collect();
    let (_, choice) = g.attractor(&target, &all, Owner::Implementor, false);
    let mut strategy = BTreeMap::new();
    for v in 0..n {
        if !z[v] || g.nodes[v].owner != Owner::Implementor {
            continue;
        }
        let pick = if target[v] { g.successors(v).find(|&w| z[w]) } else { choice[v] };
        if let Some(w) = pick {
            strategy.insert(v, w);
        }
    }
    GameSolution { winning: z, strategy }
}

fn cpre(g: &DivergenceGame, v: usize, set: &[bool]) -> bool {
    let mut succ = g.successors(v).peekable();
    if succ.peek().is_none() {
        return false;
    }
    match g.nodes[v].owner {
        Owner::Implementor => g.successors(v).any(|w| set[w]),
        _ => g.successors(v).all(|w| set[w]),
    }
}

/// Almost-sure Büchi winning region.
pub fn solve_buchi_almost_sure(g: &DivergenceGame) -> GameSolution {
    let n = g.nodes.len();
    let accepting: Vec<bool> = g.nodes.iter().map(|x| x.accepting).collect();
    let mut region = vec![true; n];
    loop {
        let (reach, _) = g.attractor(&accepting, &region, Owner::Implementor, true);
        let trap: Vec<bool> = (0..n).map(|v| region[v] && !reach[v]).collect();
        if !trap.iter().any(|b| *b) {
            break;
        }
        let (lost, _) = g.attractor(&trap, &region, Owner::Scheduler, true);
        for v in 0..n {
            if lost[v] {
                region[v] = false;
            }
        }
    }
    let (_, choice) = g.attractor(&accepting, &region, Owner::Implementor, true);
    let mut strategy = BTreeMap::new();
    for v in 0..n {
        if !region[v] || g.nodes[v].owner != Owner::Implementor {
            continue;
        }
        let pick = if accepting[v] { g.successors(v).find(|&w| region[w]) } else { choice[v] };
        if let Some(w) = pick {
            strategy.insert(v, w);
        }
    }
    GameSolution { winning: region, strategy }
}

/// Builds the divergence game of a consistent specification.
///
/// At a state, the implementor fixes which transitions exist: all must transitions together
/// with may transitions of the same actions, or, without must transitions, nothing or the
/// may transitions of one action. The scheduler then picks an action, the implementor picks
/// the transition (and with it the moment of firing) and a support of its distribution, and
/// chance picks the target. A move ticks when the firing moment lies in a later region than
/// the state, or when every clock is already above the maximal constant.
pub fn build_divergence_game(a: &Apta) -> Result<DivergenceGame, ConsistencyError> {
    let pruned = prune_star(a);
    if is_empty_specification(&pruned) {
        return Err(ConsistencyError::InconsistentInput);
    }
    let ctx = RegionContext::of(&[&pruned]);
    let build = build_region(&pruned, &ctx);
    let apa = prune_apa(&build.apa).ok_or(ConsistencyError::InconsistentInput)?;
    let out = apa.outgoing();
    let regions: Vec<_> = {
        // states keep their build order through pruning only when nothing was removed; recover
        // regions from the state names' origin table instead
        let by_name: BTreeMap<&str, usize> =
            build.apa.states.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
        apa.states.iter().map(|s| build.origins[by_name[s.name.as_str()]].1.clone()).collect()
    };
    let mut g = DivergenceGame::new();
    let states: Vec<usize> = apa
        .states
        .iter()
        .map(|s: &ApaState| g.add_node(Owner::Implementor, s.name.clone(), false))
        .collect();
    g.initial = states[apa.initial];
    let mut chance_nodes: BTreeMap<(usize, Vec<bool>), usize> = BTreeMap::new();
    for s in 0..apa.states.len() {
        let ts: Vec<usize> = out[s].iter().copied().filter(|&t| apa.transitions[t].constraint.sat_nonempty()).collect();
        let must_actions: BTreeSet<usize> = ts
            .iter()
            .filter(|&&t| apa.transitions[t].modality == Modality::Must)
            .map(|&t| apa.transitions[t].label.action)
            .collect();
        let mut options: Vec<Vec<usize>> = Vec::new();
        if must_actions.is_empty() {
            options.push(Vec::new());
            let actions: BTreeSet<usize> = ts.iter().map(|&t| apa.transitions[t].label.action).collect();
            for act in actions {
                options.push(ts.iter().copied().filter(|&t| apa.transitions[t].label.action == act).collect());
            }
        } else {
            options.push(ts.iter().copied().filter(|&t| must_actions.contains(&apa.transitions[t].label.action)).collect());
        }
        for (oi, option) in options.iter().enumerate() {
            let o = g.add_node(Owner::Scheduler, format!("{} option {oi}", apa.states[s].name), false);
            g.add_move(states[s], o, false);
            if option.is_empty() {
                g.add_move(o, o, false);
                continue;
            }
            let actions: BTreeSet<usize> = option.iter().map(|&t| apa.transitions[t].label.action).collect();
            for act in actions {
                let c = g.add_node(Owner::Implementor, format!("{} option {oi} action {}", apa.states[s].name, ctx.actions[act]), false);
                g.add_move(o, c, false);
                for &t in option.iter().filter(|&&t| apa.transitions[t].label.action == act) {
                    let tr = &apa.transitions[t];
                    let tick = tr.label.window != regions[s] || ctx.is_absorbing(&tr.label.window);
                    for support in tr.constraint.achievable_supports() {
                        let key = (t, support.clone());
                        let h = match chance_nodes.get(&key) {
                            Some(&h) => h,
                            None => {
                                let h = g.add_node(Owner::Chance, format!("transition {t} support {support:?}"), false);
                                let targets: Vec<usize> = (0..support.len()).filter(|&k| support[k]).collect();
                                let p = Q::one() / Q::from_integer(targets.len().into());
                                for k in targets {
                                    g.moves[h].push(Move { to: states[tr.targets[k]], tick: false, probability: Some(p.clone()) });
                                }
                                chance_nodes.insert(key, h);
                                h
                            }
                        };
                        g.add_move(c, h, tick);
                    }
                }
            }
        }
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DivergenceVerdict {
    pub sure: bool,
    pub almost_sure: bool,
    pub game: DivergenceGame,
    pub sure_solution: GameSolution,
    pub almost_sure_solution: GameSolution,
}

pub fn divergence(a: &Apta) -> Result<DivergenceVerdict, ConsistencyError> {
    let game = build_divergence_game(a)?;
    let sure_solution = solve_buchi_sure(&game);
    let almost_sure_solution = solve_buchi_almost_sure(&game);
    Ok(DivergenceVerdict {
        sure: sure_solution.winning[game.initial],
        almost_sure: almost_sure_solution.winning[game.initial],
        game,
        sure_solution,
        almost_sure_solution,
    })
}

pub fn sd_consistent(a: &Apta) -> Result<bool, ConsistencyError> {
    Ok(divergence(a)?.sure)
}

pub fn pd_consistent(a: &Apta) -> Result<bool, ConsistencyError> {
    Ok(divergence(a)?.almost_sure)
}
