//! Clock regions, the region automaton of a timed model, and its translation back into a
//! timed model.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::apa::{Apa, ApaState, Transition};
use crate::constraint::ProbConstraint;
use crate::guard::{Atom, Comparator, Guard};
use crate::model::{Apta, Branch, ClockId, Edge, Location, LocationId};
use crate::num::Q;

/// A clock region. Clock `c` has integer part `ints[c]`, where `max + 1` marks a value above
/// the maximal constant. `fracs[c]` is zero for a zero fractional part (and for unbounded
/// clocks), otherwise the rank of the fractional part among the bounded clocks.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Region {
    pub ints: Vec<u32>,
    pub fracs: Vec<u8>,
}

impl Region {
    pub fn zero(clocks: usize) -> Region {
        Region { ints: vec![0; clocks], fracs: vec![0; clocks] }
    }

    fn densify(&mut self) {
        let ranks: BTreeSet<u8> = self.fracs.iter().copied().filter(|&f| f > 0).collect();
        let map: BTreeMap<u8, u8> = ranks.into_iter().zip(1u8..).collect();
        for f in self.fracs.iter_mut() {
            if *f > 0 {
                *f = map[f];
            }
        }
    }
}

/// Region label of a transition: the time-successor region in which the edge fires, and the
/// action index in the shared alphabet.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionLabel {
    pub window: Region,
    pub action: usize,
}

/// Shared clock and action alphabets, guard scaling and maximal constant for one or more
/// models whose region automata are compared.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionContext {
    pub clocks: Vec<String>,
    pub actions: Vec<String>,
    pub scale: BigInt,
    pub max: u32,
}

impl RegionContext {
    pub fn new(clocks: Vec<String>, actions: Vec<String>, scale: BigInt, max: u32) -> RegionContext {
        RegionContext { clocks, actions, scale, max }
    }

    pub fn of(models: &[&Apta]) -> RegionContext {
        let mut clocks: Vec<String> = Vec::new();
        let mut actions: Vec<String> = Vec::new();
        let mut scale = BigInt::one();
        for m in models {
            for c in &m.clocks {
                if !clocks.contains(c) {
                    clocks.push(c.clone());
                }
            }
            for a in &m.actions {
                if !actions.contains(a) {
                    actions.push(a.clone());
                }
            }
            scale = scale.lcm(&m.scale());
        }
        let max = models.iter().map(|m| m.max_constant(&scale)).max().unwrap_or(0);
        RegionContext { clocks, actions, scale, max }
    }

    pub fn initial(&self) -> Region {
        Region::zero(self.clocks.len())
    }

    fn unbounded(&self) -> u32 {
        self.max + 1
    }

    pub fn is_unbounded(&self, r: &Region, c: usize) -> bool {
        r.ints[c] > self.max
    }

    /// Every clock is above the maximal constant, so time elapse stays in this region.
    pub fn is_absorbing(&self, r: &Region) -> bool {
        (0..r.ints.len()).all(|c| self.is_unbounded(r, c))
    }

    pub fn clock_map(&self, m: &Apta) -> Vec<usize> {
        m.clocks.iter().map(|c| self.clocks.iter().position(|d| d == c).expect("clock in context")).collect()
    }

    pub fn action_map(&self, m: &Apta) -> Vec<usize> {
        m.actions.iter().map(|a| self.actions.iter().position(|d| d == a).expect("action in context")).collect()
    }

    /// The least region strictly later than `r` along time elapse.
    pub fn successor(&self, r: &Region) -> Option<Region> {
        let n = r.ints.len();
        let bounded: Vec<usize> = (0..n).filter(|&c| !self.is_unbounded(r, c)).collect();
        if bounded.is_empty() {
            return None;
        }
        let mut next = r.clone();
        let zeros: Vec<usize> = bounded.iter().copied().filter(|&c| r.fracs[c] == 0).collect();
        if !zeros.is_empty() {
            for f in next.fracs.iter_mut() {
                if *f > 0 {
                    *f += 1;
                }
            }
            for c in zeros {
                if r.ints[c] == self.max {
                    next.ints[c] = self.unbounded();
                } else {
                    next.fracs[c] = 1;
                }
            }
        } else {
            let top = bounded.iter().map(|&c| r.fracs[c]).max().unwrap_or(0);
            for &c in &bounded {
                if r.fracs[c] == top {
                    next.ints[c] += 1;
                    next.fracs[c] = 0;
                }
            }
        }
        next.densify();
        Some(next)
    }

    /// `r` followed by all its time successors, in elapse order.
    pub fn succ(&self, r: &Region) -> Vec<Region> {
        let mut out = vec![r.clone()];
        while let Some(n) = self.successor(out.last().unwrap()) {
            out.push(n);
        }
        out
    }

    pub fn reset(&self, r: &Region, clocks: u64) -> Region {
        let mut out = r.clone();
        for c in 0..r.ints.len() {
            if clocks >> c & 1 == 1 {
                out.ints[c] = 0;
                out.fracs[c] = 0;
            }
        }
        out.densify();
        out
    }

    fn scaled(&self, q: &Q) -> BigInt {
        let v = q * Q::from_integer(self.scale.clone());
        debug_assert!(v.is_integer());
        v.to_integer()
    }

    /// Whether every valuation in `r` satisfies the atom `x ~ bound` on context clock `c`.
    pub fn entails_atom(&self, r: &Region, c: usize, cmp: Comparator, bound: &Q) -> bool {
        let k = self.scaled(bound);
        if self.is_unbounded(r, c) {
            return matches!(cmp, Comparator::Gt | Comparator::Ge);
        }
        let i = BigInt::from(r.ints[c]);
        if r.fracs[c] == 0 {
            return match cmp {
                Comparator::Lt => i < k,
                Comparator::Le => i <= k,
                Comparator::Gt => i > k,
                Comparator::Ge => i >= k,
            };
        }
        match cmp {
            Comparator::Lt | Comparator::Le => i < k,
            Comparator::Gt | Comparator::Ge => i >= k,
        }
    }

    /// Region entailment for a guard over model clocks mapped by `clock_map`.
    pub fn entails(&self, r: &Region, g: &Guard, clock_map: &[usize]) -> bool {
        !g.is_false() && g.atoms().iter().all(|a| self.entails_atom(r, clock_map[a.clock], a.cmp, &a.bound))
    }

    /// The region containing a clock valuation (in unscaled units).
    pub fn region_of(&self, valuation: &[Q]) -> Region {
        let s = Q::from_integer(self.scale.clone());
        let n = valuation.len();
        let mut r = Region::zero(n);
        let mut fracs: Vec<(usize, Q)> = Vec::new();
        for (c, v) in valuation.iter().enumerate() {
            let w = v * &s;
            let i = w.floor();
            if w > Q::from_integer(BigInt::from(self.max)) {
                r.ints[c] = self.unbounded();
                continue;
            }
            r.ints[c] = i.to_integer().to_u32().unwrap_or(0);
            let f = &w - &i;
            if f.is_positive() {
                fracs.push((c, f));
            }
        }
        let distinct: BTreeSet<Q> = fracs.iter().map(|(_, f)| f.clone()).collect();
        for (c, f) in fracs {
            r.fracs[c] = distinct.iter().position(|d| *d == f).unwrap() as u8 + 1;
        }
        r
    }

    /// All regions over the context clocks.
    pub fn all_regions(&self) -> Vec<Region> {
        let n = self.clocks.len();
        // Per clock: Some((int, positive frac)) or None for unbounded.
        let mut statuses: Vec<Vec<Option<(u32, bool)>>> = vec![Vec::new()];
        for _ in 0..n {
            let mut next = Vec::new();
            for s in &statuses {
                for i in 0..=self.max {
                    for pos in [false, true] {
                        if pos && i == self.max {
                            continue;
                        }
                        let mut t = s.clone();
                        t.push(Some((i, pos)));
                        next.push(t);
                    }
                }
                let mut t = s.clone();
                t.push(None);
                next.push(t);
            }
            statuses = next;
        }
        let mut out = BTreeSet::new();
        for s in statuses {
            let positive: Vec<usize> = (0..n).filter(|&c| matches!(s[c], Some((_, true)))).collect();
            for ranks in weak_orders(positive.len()) {
                let mut r = Region::zero(n);
                for c in 0..n {
                    r.ints[c] = match s[c] {
                        Some((i, _)) => i,
                        None => self.unbounded(),
                    };
                }
                for (k, &c) in positive.iter().enumerate() {
                    r.fracs[c] = ranks[k];
                }
                out.insert(r);
            }
        }
        out.into_iter().collect()
    }

    fn unscaled(&self, i: u32) -> Q {
        Q::new(BigInt::from(i), self.scale.clone())
    }

    /// The guard of integer bounds around `r`; it equals `r` for a single clock and
    /// separates the regions of one successor chain in general.
    pub fn box_guard(&self, r: &Region) -> Guard {
        let mut atoms = Vec::new();
        for c in 0..r.ints.len() {
            if self.is_unbounded(r, c) {
                atoms.push(Atom::new(c, Comparator::Gt, self.unscaled(self.max)));
            } else if r.fracs[c] == 0 {
                atoms.push(Atom::new(c, Comparator::Ge, self.unscaled(r.ints[c])));
                atoms.push(Atom::new(c, Comparator::Le, self.unscaled(r.ints[c])));
            } else {
                atoms.push(Atom::new(c, Comparator::Gt, self.unscaled(r.ints[c])));
                atoms.push(Atom::new(c, Comparator::Lt, self.unscaled(r.ints[c] + 1)));
            }
        }
        Guard::from_atoms(atoms)
    }

    /// Renders a region, e.g. `{0<x<1, y=2, frac(x)<frac(z)}`.
    pub fn describe(&self, r: &Region) -> String {
        let mut parts: Vec<String> = Vec::new();
        for (c, name) in self.clocks.iter().enumerate() {
            if self.is_unbounded(r, c) {
                parts.push(format!("{name}>{}", self.unscaled(self.max)));
            } else if r.fracs[c] == 0 {
                parts.push(format!("{name}={}", self.unscaled(r.ints[c])));
            } else {
                parts.push(format!("{}<{name}<{}", self.unscaled(r.ints[c]), self.unscaled(r.ints[c] + 1)));
            }
        }
        let mut ranked: Vec<(u8, &String)> =
            self.clocks.iter().enumerate().filter(|(c, _)| r.fracs[*c] > 0).map(|(c, n)| (r.fracs[c], n)).collect();
        ranked.sort();
        if ranked.len() > 1 {
            let mut s = format!("frac({})", ranked[0].1);
            for w in ranked.windows(2) {
                let op = if w[0].0 == w[1].0 { "=" } else { "<" };
                s.push_str(&format!("{op}frac({})", w[1].1));
            }
            parts.push(s);
        }
        format!("{{{}}}", parts.join(", "))
    }

    /// Context-clock bit set of a set of model clocks.
    pub fn clock_bits(&self, clock_map: &[usize], resets: &BTreeSet<ClockId>) -> u64 {
        resets.iter().fold(0u64, |acc, c| acc | 1 << clock_map[c.0])
    }

    /// The interval spanned by a set of regions on clock `c`, e.g. `(0,2]`.
    pub fn hull_string(&self, regions: &[&Region], c: usize) -> String {
        let lower = regions
            .iter()
            .map(|r| {
                if self.is_unbounded(r, c) {
                    (2 * self.max + 1, self.max)
                } else {
                    (2 * r.ints[c] + u32::from(r.fracs[c] > 0), r.ints[c])
                }
            })
            .min()
            .unwrap();
        let upper = regions
            .iter()
            .map(|r| {
                if self.is_unbounded(r, c) {
                    (u32::MAX, 0)
                } else if r.fracs[c] == 0 {
                    (2 * r.ints[c], r.ints[c])
                } else {
                    (2 * r.ints[c] + 1, r.ints[c] + 1)
                }
            })
            .max()
            .unwrap();
        let open = if lower.0 % 2 == 1 { "(" } else { "[" };
        let (hi, close) = if upper.0 == u32::MAX {
            ("inf".to_string(), ")")
        } else if upper.0 % 2 == 1 {
            (self.unscaled(upper.1).to_string(), ")")
        } else {
            (self.unscaled(upper.1).to_string(), "]")
        };
        format!("{open}{},{hi}{close}", self.unscaled(lower.1))
    }
}

/// All rank vectors of `k` items onto `1..=m` that are surjective for some `m`.
fn weak_orders(k: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut cur = vec![0u8; k];
    fn go(i: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if i == cur.len() {
            let used: BTreeSet<u8> = cur.iter().copied().collect();
            if used.iter().copied().eq(1..=used.len() as u8) {
                out.push(cur.clone());
            }
            return;
        }
        for r in 1..=cur.len() as u8 {
            cur[i] = r;
            go(i + 1, cur, out);
        }
    }
    go(0, &mut cur, &mut out);
    out
}

/// Two branches of one edge led to the same target state with different reset sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Collision {
    pub transition: usize,
    pub target: usize,
    pub reset_sets: Vec<u64>,
    pub chosen: u64,
}

/// The region automaton of a timed model together with bookkeeping about its origin.
#[derive(Clone, Debug)]
pub struct RegionBuild {
    pub apa: Apa<RegionLabel>,
    pub origins: Vec<(LocationId, Region)>,
    /// Model edge behind each transition.
    pub edge_of: Vec<usize>,
    /// Model edges through which each state is entered.
    pub incoming: Vec<BTreeSet<usize>>,
    pub collisions: Vec<Collision>,
    /// Some constraint image was replaced by its convex hull.
    pub approximate: bool,
}

fn bits_key(bits: u64) -> (u32, u64) {
    (bits.count_ones(), bits.reverse_bits())
}

/// Builds the reachable region automaton of `m` over the alphabet of `ctx`.
pub fn build_region(m: &Apta, ctx: &RegionContext) -> RegionBuild {
    build_seeded(m, ctx, &[])
}

/// Region automaton containing every location paired with every region, reachable or not.
/// State 0 is still the initial state.
pub fn build_region_full(m: &Apta, ctx: &RegionContext) -> RegionBuild {
    let regions = ctx.all_regions();
    let seeds: Vec<(LocationId, Region)> = (0..m.locations.len())
        .flat_map(|l| regions.iter().map(move |r| (LocationId(l), r.clone())))
        .collect();
    build_seeded(m, ctx, &seeds)
}

fn build_seeded(m: &Apta, ctx: &RegionContext, seeds: &[(LocationId, Region)]) -> RegionBuild {
    let cmap = ctx.clock_map(m);
    let amap = ctx.action_map(m);
    let mut index: BTreeMap<(LocationId, Region), usize> = BTreeMap::new();
    let mut origins = Vec::new();
    let mut incoming: Vec<BTreeSet<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    let props = |l: &Location| -> BTreeSet<BTreeSet<String>> {
        l.valuation.iter().map(|s| s.iter().map(|p| m.props[p.0].clone()).collect()).collect()
    };
    let mut states = Vec::new();
    let start = (m.initial, ctx.initial());
    index.insert(start.clone(), 0);
    origins.push(start.clone());
    incoming.push(BTreeSet::new());
    states.push(ApaState { name: state_name(m, ctx, &start), valuation: props(m.location(m.initial)) });
    queue.push_back(0usize);
    for seed in seeds {
        if !index.contains_key(seed) {
            index.insert(seed.clone(), states.len());
            origins.push(seed.clone());
            incoming.push(BTreeSet::new());
            queue.push_back(states.len());
            states.push(ApaState { name: state_name(m, ctx, seed), valuation: props(m.location(seed.0)) });
        }
    }
    let mut transitions = Vec::new();
    let mut edge_of = Vec::new();
    let mut collisions = Vec::new();
    let mut approximate = false;
    type Image = (ProbConstraint, Vec<bool>, bool);
    let mut cache: BTreeMap<(usize, Vec<usize>), Image> = BTreeMap::new();
    let edges: Vec<(usize, &Edge)> = m.edges.iter().enumerate().collect();
    while let Some(s) = queue.pop_front() {
        let (loc, region) = origins[s].clone();
        let chain = ctx.succ(&region);
        for &(ei, e) in edges.iter().filter(|(_, e)| e.source == loc) {
            let reset_bits: Vec<u64> = e.branches.iter().map(|b| ctx.clock_bits(&cmap, &b.resets)).collect();
            for window in chain.iter().filter(|w| ctx.entails(w, &e.guard, &cmap)) {
                let mut keys: Vec<(LocationId, Region)> = Vec::new();
                let mut f = Vec::with_capacity(e.branches.len());
                for (b, bits) in e.branches.iter().zip(&reset_bits) {
                    let key = (b.target, ctx.reset(window, *bits));
                    let pos = keys.iter().position(|k| *k == key).unwrap_or_else(|| {
                        keys.push(key);
                        keys.len() - 1
                    });
                    f.push(pos);
                }
                let (constraint, keep, approx) = cache
                    .entry((ei, f.clone()))
                    .or_insert_with(|| image_and_trim(&e.constraint, &f, keys.len()))
                    .clone();
                approximate |= approx;
                let t_index = transitions.len();
                let mut targets = Vec::new();
                let mut tags = Vec::new();
                for (g, key) in keys.iter().enumerate() {
                    if !keep[g] {
                        continue;
                    }
                    let members: Vec<u64> = (0..f.len()).filter(|&k| f[k] == g).map(|k| reset_bits[k]).collect();
                    let distinct: BTreeSet<u64> = members.iter().copied().collect();
                    let chosen = *distinct.iter().min_by_key(|&&b| bits_key(b)).unwrap();
                    let id = match index.get(key) {
                        Some(&id) => id,
                        None => {
                            let id = states.len();
                            index.insert(key.clone(), id);
                            origins.push(key.clone());
                            incoming.push(BTreeSet::new());
                            states.push(ApaState { name: state_name(m, ctx, key), valuation: props(m.location(key.0)) });
                            queue.push_back(id);
                            id
                        }
                    };
                    incoming[id].insert(ei);
                    if distinct.len() > 1 {
                        collisions.push(Collision {
                            transition: t_index,
                            target: id,
                            reset_sets: distinct.into_iter().collect(),
                            chosen,
                        });
                    }
                    targets.push(id);
                    tags.push(chosen);
                }
                transitions.push(Transition {
                    source: s,
                    label: RegionLabel { window: window.clone(), action: amap[e.action.0] },
                    modality: e.modality,
                    targets,
                    tags,
                    constraint,
                });
                edge_of.push(ei);
            }
        }
    }
    RegionBuild { apa: Apa { states, initial: 0, transitions }, origins, edge_of, incoming, collisions, approximate }
}

fn state_name(m: &Apta, ctx: &RegionContext, key: &(LocationId, Region)) -> String {
    format!("{}@{}", m.location(key.0).name, ctx.describe(&key.1))
}

/// Image of a constraint under the branch grouping `f`, with never-used groups removed.
pub(crate) fn image_and_trim(c: &ProbConstraint, f: &[usize], groups: usize) -> (ProbConstraint, Vec<bool>, bool) {
    if let Some(values) = c.pinned_values() {
        let mut pushed = vec![Q::zero(); groups];
        for (k, v) in values.iter().enumerate() {
            pushed[f[k]] += v;
        }
        let keep: Vec<bool> = pushed.iter().map(|v| !v.is_zero()).collect();
        let kept: Vec<Q> = pushed.into_iter().filter(|v| !v.is_zero()).collect();
        return (ProbConstraint::point(&kept), keep, false);
    }
    let (img, approx) = c.image(f, groups);
    let keep = img.possible_support();
    let dead: BTreeSet<usize> = (0..groups).filter(|&g| !keep[g]).collect();
    let trimmed = img.restrict_zero(&dead).retain(&keep);
    let trimmed = if trimmed.sat_nonempty() { trimmed } else { ProbConstraint::falsity(trimmed.dim) };
    (trimmed, keep, approx)
}

/// Reads a region automaton as a timed model: states become locations and every window
/// becomes the guard of its integer box.
pub fn translate_back(build: &RegionBuild, ctx: &RegionContext, m: &Apta) -> Apta {
    let locations = build
        .origins
        .iter()
        .zip(&build.apa.states)
        .map(|((l, _), s)| Location { name: s.name.clone(), valuation: m.location(*l).valuation.clone() })
        .collect();
    let mut out = Apta::new(&m.name, m.kind);
    out.actions = ctx.actions.clone();
    out.clocks = ctx.clocks.clone();
    out.props = m.props.clone();
    out.locations = locations;
    out.initial = LocationId(build.apa.initial);
    out.edges = build
        .apa
        .transitions
        .iter()
        .map(|t| Edge {
            source: LocationId(t.source),
            guard: ctx.box_guard(&t.label.window),
            action: crate::model::ActionId(t.label.action),
            modality: t.modality,
            branches: t
                .targets
                .iter()
                .zip(&t.tags)
                .map(|(&x, &bits)| Branch {
                    resets: (0..ctx.clocks.len()).filter(|c| bits >> c & 1 == 1).map(ClockId).collect(),
                    target: LocationId(x),
                })
                .collect(),
            constraint: t.constraint.clone(),
        })
        .collect();
    out
}

/// The reachable part of the region automaton read back as a timed model.
pub fn normalize(m: &Apta) -> Apta {
    let ctx = RegionContext::of(&[m]);
    translate_back(&build_region(m, &ctx), &ctx, m)
}

/// How normalization split one model location: region hulls grouped by entering edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocationSplit {
    pub location: String,
    /// `(entering edge, hull per clock)`; `None` is the initial state.
    pub groups: Vec<(Option<usize>, Vec<String>)>,
}

pub fn normalization_report(build: &RegionBuild, ctx: &RegionContext, m: &Apta) -> Vec<LocationSplit> {
    let mut out = Vec::new();
    for (l, loc) in m.locations.iter().enumerate() {
        let copies: Vec<usize> = (0..build.origins.len()).filter(|&s| build.origins[s].0 == LocationId(l)).collect();
        if copies.len() < 2 {
            continue;
        }
        let mut by_edge: BTreeMap<Option<usize>, Vec<&Region>> = BTreeMap::new();
        for &s in &copies {
            if s == build.apa.initial {
                by_edge.entry(None).or_default().push(&build.origins[s].1);
            }
            for &e in &build.incoming[s] {
                by_edge.entry(Some(e)).or_default().push(&build.origins[s].1);
            }
        }
        let groups = by_edge
            .into_iter()
            .map(|(e, regions)| (e, (0..ctx.clocks.len()).map(|c| ctx.hull_string(&regions, c)).collect()))
            .collect();
        out.push(LocationSplit { location: loc.name.clone(), groups });
    }
    out
}
