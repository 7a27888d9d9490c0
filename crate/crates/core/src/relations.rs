//! Distribution lifting, weak and strong refinement of abstract probabilistic automata,
//! satisfaction of timed specifications, and determinism checks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::{One, Signed, Zero};

use crate::apa::{Apa, Transition};
use crate::constraint::{Piece, Polytope, ProbConstraint, ProductPiece, Rel};
use crate::guard::Modality;
use crate::lp::{Cmp, LinearProgram, Outcome};
use crate::model::{Apta, Edge};
use crate::num::Q;
use crate::region::{build_region, normalization_report, translate_back, LocationSplit, RegionBuild, RegionContext, RegionLabel};

/// Three-valued answer of a check that may be undecidable by the available procedures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tri {
    Yes,
    No,
    Unknown,
}

impl Tri {
    fn and(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::No, _) | (_, Tri::No) => Tri::No,
            (Tri::Yes, Tri::Yes) => Tri::Yes,
            _ => Tri::Unknown,
        }
    }

    fn or(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::Yes, _) | (_, Tri::Yes) => Tri::Yes,
            (Tri::No, Tri::No) => Tri::No,
            _ => Tri::Unknown,
        }
    }
}

/// Weight function witnessing `mu1 ⋐ mu2` on pairs where `allowed[i][j]` holds.
pub fn lift_check(mu1: &[Q], mu2: &[Q], allowed: &[Vec<bool>]) -> Option<Vec<Vec<Q>>> {
    let pairs: Vec<(usize, usize)> = (0..mu1.len())
        .flat_map(|i| (0..mu2.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| allowed[i][j] && mu1[i].is_positive() && mu2[j].is_positive())
        .collect();
    let mut lp = LinearProgram::new(pairs.len());
    for (i, m) in mu1.iter().enumerate() {
        lp.push(pairs.iter().enumerate().filter(|(_, p)| p.0 == i).map(|(v, _)| (v, Q::one())).collect(), Cmp::Eq, m.clone());
    }
    for (j, m) in mu2.iter().enumerate() {
        lp.push(pairs.iter().enumerate().filter(|(_, p)| p.1 == j).map(|(v, _)| (v, Q::one())).collect(), Cmp::Eq, m.clone());
    }
    let point = lp.feasible_point()?;
    let mut w = vec![vec![Q::zero(); mu2.len()]; mu1.len()];
    for (v, &(i, j)) in pairs.iter().enumerate() {
        w[i][j] = point[v].clone();
    }
    Some(w)
}

/// Variables of a transportation problem from a fixed left distribution.
struct Transport {
    pairs: Vec<(usize, usize)>,
}

impl Transport {
    /// Left-marginal rows; `None` if some positive left element has no allowed partner.
    fn new(mu1: &[Q], allowed: &[Vec<bool>], lp: &mut LinearProgram, offset: usize) -> Option<Transport> {
        let cols = allowed.first().map_or(0, Vec::len);
        let pairs: Vec<(usize, usize)> = (0..mu1.len())
            .filter(|&i| mu1[i].is_positive())
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .filter(|&(i, j)| allowed[i][j])
            .collect();
        lp.vars = lp.vars.max(offset + pairs.len());
        for (i, m) in mu1.iter().enumerate().filter(|(_, m)| m.is_positive()) {
            let terms: Vec<(usize, Q)> =
                pairs.iter().enumerate().filter(|(_, p)| p.0 == i).map(|(v, _)| (offset + v, Q::one())).collect();
            if terms.is_empty() {
                return None;
            }
            lp.push(terms, Cmp::Eq, m.clone());
        }
        Some(Transport { pairs })
    }

    /// Terms for the mass received by right element `j`.
    fn column(&self, j: usize, offset: usize) -> Vec<(usize, Q)> {
        self.pairs.iter().enumerate().filter(|(_, p)| p.1 == j).map(|(v, _)| (offset + v, Q::one())).collect()
    }
}

/// Whether some member of `right` receives `mu1` through allowed pairs.
fn exists_in_polytope(mu1: &[Q], right: &Polytope, allowed: &[Vec<bool>]) -> bool {
    let mut lp = LinearProgram::new(0);
    let Some(tr) = Transport::new(mu1, allowed, &mut lp, 0) else {
        return false;
    };
    for r in &right.rows {
        let mut terms = Vec::new();
        for (j, c) in r.coeffs.iter().enumerate() {
            if !c.is_zero() {
                terms.extend(tr.column(j, 0).into_iter().map(|(v, _)| (v, c.clone())));
            }
        }
        let cmp = if r.rel == Rel::Eq { Cmp::Eq } else { Cmp::Le };
        lp.push(terms, cmp, r.rhs.clone());
    }
    lp.is_feasible()
}

/// Whether some convex combination of `points` receives `mu1` through allowed pairs.
fn exists_in_hull(mu1: &[Q], points: &[Vec<Q>], allowed: &[Vec<bool>]) -> bool {
    let mut lp = LinearProgram::new(points.len());
    lp.push((0..points.len()).map(|v| (v, Q::one())).collect(), Cmp::Eq, Q::one());
    let off = points.len();
    let Some(tr) = Transport::new(mu1, allowed, &mut lp, off) else {
        return false;
    };
    let cols = allowed.first().map_or(0, Vec::len);
    for j in 0..cols {
        let mut terms = tr.column(j, off);
        for (v, p) in points.iter().enumerate() {
            if !p[j].is_zero() {
                terms.push((v, -p[j].clone()));
            }
        }
        lp.push(terms, Cmp::Eq, Q::zero());
    }
    lp.is_feasible()
}

/// Searches a witness inside a product piece by alternately fixing one factor and
/// minimizing the violation of the product equations over the other.
fn exists_in_product(mu1: &[Q], right: &ProductPiece, allowed: &[Vec<bool>]) -> bool {
    let (Piece::Poly(pa), Piece::Poly(pb)) = (&right.left, &right.right) else {
        return false;
    };
    let starts: Vec<Vec<Q>> = pb.vertices();
    for start in starts {
        let mut fixed_b = start;
        let mut best: Option<Q> = None;
        for _ in 0..6 {
            let Some((na, slack)) = solve_factor(mu1, right, allowed, pa, &fixed_b, true) else {
                break;
            };
            if slack.is_zero() {
                return true;
            }
            let Some((nb, slack_b)) = solve_factor(mu1, right, allowed, pb, &na, false) else {
                break;
            };
            if slack_b.is_zero() {
                return true;
            }
            if best.as_ref().is_some_and(|b| slack_b >= *b) {
                break;
            }
            best = Some(slack_b);
            fixed_b = nb;
        }
    }
    false
}

/// With one factor fixed to `fixed`, finds the other factor in `free` and a transport plan
/// minimizing the total deviation from the product cells. Returns the factor and deviation.
fn solve_factor(
    mu1: &[Q],
    piece: &ProductPiece,
    allowed: &[Vec<bool>],
    free: &Polytope,
    fixed: &[Q],
    free_is_left: bool,
) -> Option<(Vec<Q>, Q)> {
    let fd = free.dim;
    let cols = piece.dim;
    let rd = piece.right.dim();
    let mut lp = LinearProgram::new(fd);
    lp.push((0..fd).map(|v| (v, Q::one())).collect(), Cmp::Eq, Q::one());
    for r in &free.rows {
        let terms = r.coeffs.iter().enumerate().filter(|(_, c)| !c.is_zero()).map(|(v, c)| (v, c.clone())).collect();
        lp.push(terms, if r.rel == Rel::Eq { Cmp::Eq } else { Cmp::Le }, r.rhs.clone());
    }
    let tr = Transport::new(mu1, allowed, &mut lp, fd)?;
    let slack_start = fd + tr.pairs.len();
    lp.vars = slack_start + 2 * cols;
    // column j receives sum over cells mapped to j of free[k] * fixed[l]
    let mut receives: Vec<Vec<(usize, Q)>> = vec![Vec::new(); cols];
    for (cell, c) in piece.cells.iter().enumerate() {
        let Some(c) = c else { continue };
        let (i, j) = (cell / rd, cell % rd);
        let (k, w) = if free_is_left { (i, &fixed[j]) } else { (j, &fixed[i]) };
        if !w.is_zero() {
            receives[*c].push((k, w.clone()));
        }
    }
    let mut cost = Vec::new();
    for (j, rec) in receives.iter().enumerate() {
        let mut terms = tr.column(j, fd);
        terms.extend(rec.iter().map(|(k, w)| (*k, -w.clone())));
        terms.push((slack_start + 2 * j, -Q::one()));
        terms.push((slack_start + 2 * j + 1, Q::one()));
        lp.push(terms, Cmp::Eq, Q::zero());
        cost.push((slack_start + 2 * j, Q::one()));
        cost.push((slack_start + 2 * j + 1, Q::one()));
    }
    match lp.minimize(&cost) {
        Outcome::Optimal { point, value } => Some((point[..fd].to_vec(), value)),
        _ => None,
    }
}

/// Whether every member of `left` is lifted into some member of `right` through allowed
/// pairs (rows index left elements, columns right elements).
pub fn forall_exists(left: &ProbConstraint, right: &ProbConstraint, allowed: &[Vec<bool>]) -> Tri {
    let mut out = Tri::Yes;
    for lp in left.pieces.iter().filter(|p| p.is_nonempty()) {
        let mut piece_result = Tri::No;
        for rp in &right.pieces {
            piece_result = piece_result.or(piece_forall_exists(lp, rp, allowed));
            if piece_result == Tri::Yes {
                break;
            }
        }
        if piece_result != Tri::Yes && right.pieces.len() > 1 {
            // every vertex admitted by some piece, but no single piece covering them all
            let verts = lp.vertices();
            let some_vertex_lost = verts.iter().any(|v| right.pieces.iter().all(|rp| vertex_exists(v, rp, allowed) == Tri::No));
            piece_result = if some_vertex_lost { Tri::No } else { Tri::Unknown };
        }
        out = out.and(piece_result);
        if out == Tri::No {
            return out;
        }
    }
    out
}

fn vertex_exists(v: &[Q], right: &Piece, allowed: &[Vec<bool>]) -> Tri {
    match right {
        Piece::Poly(p) => {
            if exists_in_polytope(v, p, allowed) {
                Tri::Yes
            } else {
                Tri::No
            }
        }
        Piece::Product(pp) => {
            if !exists_in_hull(v, &right.vertices(), allowed) {
                Tri::No
            } else if exists_in_product(v, pp, allowed) {
                Tri::Yes
            } else {
                Tri::Unknown
            }
        }
    }
}

fn piece_forall_exists(left: &Piece, right: &Piece, allowed: &[Vec<bool>]) -> Tri {
    if !right.is_nonempty() {
        return if left.is_nonempty() { Tri::No } else { Tri::Yes };
    }
    match right {
        Piece::Poly(p) => {
            if left.vertices().iter().all(|v| exists_in_polytope(v, p, allowed)) {
                Tri::Yes
            } else {
                Tri::No
            }
        }
        Piece::Product(rp) => {
            if let Piece::Product(lp) = left {
                if rectangles(lp, rp, allowed) {
                    return Tri::Yes;
                }
            }
            let verts = left.vertices();
            let mut out = Tri::Yes;
            for v in &verts {
                let r = vertex_exists(v, right, allowed);
                if r == Tri::No {
                    return Tri::No;
                }
                out = out.and(r);
            }
            if verts.len() == 1 {
                out
            } else {
                Tri::Unknown
            }
        }
    }
}

/// Looks for relations on the factor supports whose product is allowed and under which each
/// left factor refines the matching right factor.
fn rectangles(left: &ProductPiece, right: &ProductPiece, allowed: &[Vec<bool>]) -> bool {
    let (la, lb) = (left.left.dim(), left.right.dim());
    let (ra, rb) = (right.left.dim(), right.right.dim());
    let ok = |i: usize, j: usize, k: usize, l: usize| -> bool {
        match (left.cells[i * lb + j], right.cells[k * rb + l]) {
            (Some(x), Some(y)) => allowed[x][y],
            _ => true,
        }
    };
    // compat[(j,l)] = set of (i,k) allowed together with (j,l)
    let mut compat: Vec<((usize, usize), Vec<Vec<bool>>)> = Vec::new();
    for j in 0..lb {
        for l in 0..rb {
            let m: Vec<Vec<bool>> = (0..la).map(|i| (0..ra).map(|k| ok(i, j, k, l)).collect()).collect();
            compat.push(((j, l), m));
        }
    }
    let full = vec![vec![true; ra]; la];
    let mut closed: BTreeSet<Vec<Vec<bool>>> = BTreeSet::new();
    closed.insert(full);
    for (_, m) in &compat {
        let current: Vec<Vec<Vec<bool>>> = closed.iter().cloned().collect();
        for c in current {
            let meet: Vec<Vec<bool>> = c.iter().zip(m).map(|(x, y)| x.iter().zip(y).map(|(a, b)| *a && *b).collect()).collect();
            closed.insert(meet);
        }
    }
    for rel_a in closed {
        let rel_b: Vec<Vec<bool>> = (0..lb)
            .map(|j| {
                (0..rb)
                    .map(|l| {
                        let m = &compat[j * rb + l].1;
                        (0..la).all(|i| (0..ra).all(|k| !rel_a[i][k] || m[i][k]))
                    })
                    .collect()
            })
            .collect();
        let lhs_a = ProbConstraint { dim: la, pieces: vec![left.left.clone()] };
        let rhs_a = ProbConstraint { dim: ra, pieces: vec![right.left.clone()] };
        let lhs_b = ProbConstraint { dim: lb, pieces: vec![left.right.clone()] };
        let rhs_b = ProbConstraint { dim: rb, pieces: vec![right.right.clone()] };
        if forall_exists(&lhs_a, &rhs_a, &rel_a) == Tri::Yes && forall_exists(&lhs_b, &rhs_b, &rel_b) == Tri::Yes {
            return true;
        }
    }
    false
}

/// Whether one correspondence maps every member of `left` into `right`.
pub fn strong_match(left: &ProbConstraint, right: &ProbConstraint, allowed: &[Vec<bool>]) -> Tri {
    if !left.sat_nonempty() {
        return Tri::Yes;
    }
    let verts = left.vertices();
    if verts.len() == 1 {
        return forall_exists(left, right, allowed);
    }
    let possible = left.possible_support();
    let mut unknown = false;
    for rp in &right.pieces {
        match rp {
            Piece::Poly(p) => {
                if correspondence_exists(&verts, &possible, p, allowed) {
                    return Tri::Yes;
                }
            }
            Piece::Product(_) => unknown = true,
        }
    }
    if verts.iter().any(|v| right.pieces.iter().all(|rp| vertex_exists(v, rp, allowed) == Tri::No)) {
        return Tri::No;
    }
    if unknown {
        Tri::Unknown
    } else {
        Tri::No
    }
}

fn correspondence_exists(verts: &[Vec<Q>], possible: &[bool], right: &Polytope, allowed: &[Vec<bool>]) -> bool {
    let cols = right.dim;
    let pairs: Vec<(usize, usize)> = (0..possible.len())
        .filter(|&i| possible[i])
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .filter(|&(i, j)| allowed[i][j])
        .collect();
    let mut lp = LinearProgram::new(pairs.len());
    for i in (0..possible.len()).filter(|&i| possible[i]) {
        let terms: Vec<(usize, Q)> = pairs.iter().enumerate().filter(|(_, p)| p.0 == i).map(|(v, _)| (v, Q::one())).collect();
        if terms.is_empty() {
            return false;
        }
        lp.push(terms, Cmp::Eq, Q::one());
    }
    for v in verts {
        // image of v: column j receives sum_i v_i * delta_ij
        for r in &right.rows {
            let mut terms = Vec::new();
            for (idx, &(i, j)) in pairs.iter().enumerate() {
                let c = &r.coeffs[j] * &v[i];
                if !c.is_zero() {
                    terms.push((idx, c));
                }
            }
            lp.push(terms, if r.rel == Rel::Eq { Cmp::Eq } else { Cmp::Le }, r.rhs.clone());
        }
    }
    lp.is_feasible()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RefinementKind {
    Weak,
    Strong,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Verdict {
    Holds,
    Fails,
    Inconclusive,
}

/// The defining condition a pair violated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    /// A must transition on the right is not matched on the left.
    MustMatched,
    /// A transition on the left is not allowed on the right.
    Allowed,
    /// Left valuations are not included in right valuations.
    Valuation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Deletion {
    pub pair: (usize, usize),
    pub condition: Condition,
    /// Offending transition: in the right automaton for `MustMatched`, the left one for `Allowed`.
    pub transition: Option<usize>,
}

/// A matched transition pair inside the final relation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMatch {
    pub pair: (usize, usize),
    pub left: usize,
    pub right: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefinementResult {
    pub kind: RefinementKind,
    pub verdict: Verdict,
    pub relation: Vec<(usize, usize)>,
    pub matches: Vec<EdgeMatch>,
    /// Deletions leading to the removal of the initial pair, last one first.
    pub counterexample: Vec<Deletion>,
    pub unknown_checks: usize,
}

struct Fixpoint {
    rel: Vec<Vec<bool>>,
    log: Vec<Deletion>,
    unknown: usize,
}

struct Checker<'a, L> {
    a1: &'a Apa<L>,
    a2: &'a Apa<L>,
    kind: RefinementKind,
    out1: Vec<Vec<usize>>,
    out2: Vec<Vec<usize>>,
    cache: BTreeMap<(usize, usize), (Tri, u64)>,
    removed_at: Vec<Vec<u64>>,
    clock: u64,
    unknown: usize,
}

impl<'a, L: Clone + Ord> Checker<'a, L> {
    fn new(a1: &'a Apa<L>, a2: &'a Apa<L>, kind: RefinementKind) -> Checker<'a, L> {
        Checker {
            a1,
            a2,
            kind,
            out1: a1.outgoing(),
            out2: a2.outgoing(),
            cache: BTreeMap::new(),
            removed_at: vec![vec![0; a2.states.len()]; a1.states.len()],
            clock: 1,
            unknown: 0,
        }
    }

    fn allowed(&self, t1: &Transition<L>, t2: &Transition<L>, rel: &[Vec<bool>]) -> Vec<Vec<bool>> {
        t1.targets.iter().map(|&x| t2.targets.iter().map(|&y| rel[x][y]).collect()).collect()
    }

    fn matches(&mut self, i1: usize, i2: usize, rel: &[Vec<bool>]) -> Tri {
        let (t1, t2) = (&self.a1.transitions[i1], &self.a2.transitions[i2]);
        if t1.label != t2.label {
            return Tri::No;
        }
        if let Some(&(r, at)) = self.cache.get(&(i1, i2)) {
            let stale = r == Tri::Yes
                && t1.targets.iter().any(|&x| t2.targets.iter().any(|&y| self.removed_at[x][y] > at));
            if !stale {
                return r;
            }
        }
        let allowed = self.allowed(t1, t2, rel);
        let r = match self.kind {
            RefinementKind::Weak => forall_exists(&t1.constraint, &t2.constraint, &allowed),
            RefinementKind::Strong => strong_match(&t1.constraint, &t2.constraint, &allowed),
        };
        if r == Tri::Unknown {
            self.unknown += 1;
        }
        self.cache.insert((i1, i2), (r, self.clock));
        r
    }

    /// First violated condition for `(s, t)`, with the offending transition.
    fn violation(&mut self, s: usize, t: usize, rel: &[Vec<bool>], optimistic: bool) -> Option<(Condition, usize)> {
        let pass = |r: Tri| r == Tri::Yes || (optimistic && r == Tri::Unknown);
        for k in 0..self.out2[t].len() {
            let i2 = self.out2[t][k];
            if self.a2.transitions[i2].modality != Modality::Must {
                continue;
            }
            let mut found = false;
            for j in 0..self.out1[s].len() {
                let i1 = self.out1[s][j];
                if self.a1.transitions[i1].modality == Modality::Must && pass(self.matches(i1, i2, rel)) {
                    found = true;
                    break;
                }
            }
            if !found {
                return Some((Condition::MustMatched, i2));
            }
        }
        for j in 0..self.out1[s].len() {
            let i1 = self.out1[s][j];
            let t1 = &self.a1.transitions[i1];
            if t1.modality == Modality::Bot || !t1.constraint.sat_nonempty() {
                continue;
            }
            let mut found = false;
            for k in 0..self.out2[t].len() {
                let i2 = self.out2[t][k];
                if self.a2.transitions[i2].modality != Modality::Bot && pass(self.matches(i1, i2, rel)) {
                    found = true;
                    break;
                }
            }
            if !found {
                return Some((Condition::Allowed, i1));
            }
        }
        None
    }

    fn run(&mut self, optimistic: bool) -> Fixpoint {
        let (n1, n2) = (self.a1.states.len(), self.a2.states.len());
        let mut log = Vec::new();
        let mut rel = vec![vec![false; n2]; n1];
        for s in 0..n1 {
            for t in 0..n2 {
                rel[s][t] = self.a1.states[s].valuation.is_subset(&self.a2.states[t].valuation);
                if !rel[s][t] {
                    log.push(Deletion { pair: (s, t), condition: Condition::Valuation, transition: None });
                }
            }
        }
        self.cache.clear();
        for row in self.removed_at.iter_mut() {
            row.iter_mut().for_each(|x| *x = 0);
        }
        self.clock = 1;
        let mut changed = true;
        while changed {
            changed = false;
            for s in 0..n1 {
                for t in 0..n2 {
                    if !rel[s][t] {
                        continue;
                    }
                    if let Some((condition, tr)) = self.violation(s, t, &rel, optimistic) {
                        rel[s][t] = false;
                        self.clock += 1;
                        self.removed_at[s][t] = self.clock;
                        log.push(Deletion { pair: (s, t), condition, transition: Some(tr) });
                        changed = true;
                    }
                }
            }
        }
        Fixpoint { rel, log, unknown: self.unknown }
    }
}

/// Traces the deletions that led to removing `pair`, most recent first.
fn deletion_chain<L>(a1: &Apa<L>, a2: &Apa<L>, log: &[Deletion], pair: (usize, usize)) -> Vec<Deletion> {
    let position: BTreeMap<(usize, usize), usize> = log.iter().enumerate().map(|(i, d)| (d.pair, i)).collect();
    let mut chain = Vec::new();
    let mut seen = BTreeSet::new();
    let mut cur = position.get(&pair).copied();
    while let Some(i) = cur {
        if !seen.insert(i) {
            break;
        }
        let d = log[i].clone();
        cur = None;
        if let Some(tr) = d.transition {
            let targets: Vec<(usize, usize)> = match d.condition {
                Condition::MustMatched => {
                    let t2 = &a2.transitions[tr];
                    let lefts: Vec<usize> = a1
                        .transitions
                        .iter()
                        .filter(|t| t.source == d.pair.0)
                        .flat_map(|t| t.targets.iter().copied())
                        .collect();
                    lefts.iter().flat_map(|&x| t2.targets.iter().map(move |&y| (x, y))).collect()
                }
                Condition::Allowed => {
                    let t1 = &a1.transitions[tr];
                    let rights: Vec<usize> = a2
                        .transitions
                        .iter()
                        .filter(|t| t.source == d.pair.1)
                        .flat_map(|t| t.targets.iter().copied())
                        .collect();
                    t1.targets.iter().flat_map(|&x| rights.iter().map(move |&y| (x, y))).collect()
                }
                Condition::Valuation => Vec::new(),
            };
            cur = targets.iter().filter_map(|p| position.get(p).copied()).filter(|&j| j < i).max();
        }
        chain.push(d);
    }
    chain
}

/// Weak or strong refinement of `a1` by `a2` as a greatest fixpoint.
pub fn refine<L: Clone + Ord>(a1: &Apa<L>, a2: &Apa<L>, kind: RefinementKind) -> RefinementResult {
    let mut checker = Checker::new(a1, a2, kind);
    let init = (a1.initial, a2.initial);
    if a1.states.is_empty() || a2.states.is_empty() {
        return RefinementResult {
            kind,
            verdict: if a1.states.is_empty() { Verdict::Holds } else { Verdict::Fails },
            relation: Vec::new(),
            matches: Vec::new(),
            counterexample: Vec::new(),
            unknown_checks: 0,
        };
    }
    let strict = checker.run(false);
    let unknown_strict = strict.unknown;
    if strict.rel[init.0][init.1] {
        let relation = pairs_of(&strict.rel);
        let matches = collect_matches(&mut checker, &strict.rel);
        return RefinementResult { kind, verdict: Verdict::Holds, relation, matches, counterexample: Vec::new(), unknown_checks: unknown_strict };
    }
    if unknown_strict == 0 {
        return RefinementResult {
            kind,
            verdict: Verdict::Fails,
            relation: pairs_of(&strict.rel),
            matches: Vec::new(),
            counterexample: deletion_chain(a1, a2, &strict.log, init),
            unknown_checks: 0,
        };
    }
    checker.unknown = 0;
    let loose = checker.run(true);
    let verdict = if loose.rel[init.0][init.1] { Verdict::Inconclusive } else { Verdict::Fails };
    let counterexample = if verdict == Verdict::Fails { deletion_chain(a1, a2, &loose.log, init) } else { Vec::new() };
    RefinementResult {
        kind,
        verdict,
        relation: pairs_of(&strict.rel),
        matches: Vec::new(),
        counterexample,
        unknown_checks: unknown_strict + loose.unknown,
    }
}

pub fn weak_refine<L: Clone + Ord>(a1: &Apa<L>, a2: &Apa<L>) -> RefinementResult {
    refine(a1, a2, RefinementKind::Weak)
}

pub fn strong_refine<L: Clone + Ord>(a1: &Apa<L>, a2: &Apa<L>) -> RefinementResult {
    refine(a1, a2, RefinementKind::Strong)
}

fn pairs_of(rel: &[Vec<bool>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (s, row) in rel.iter().enumerate() {
        for (t, &b) in row.iter().enumerate() {
            if b {
                out.push((s, t));
            }
        }
    }
    out
}

fn collect_matches<L: Clone + Ord>(c: &mut Checker<'_, L>, rel: &[Vec<bool>]) -> Vec<EdgeMatch> {
    let mut out = Vec::new();
    for (s, t) in pairs_of(rel) {
        for &i1 in &c.out1[s].clone() {
            if c.a1.transitions[i1].modality == Modality::Bot {
                continue;
            }
            for &i2 in &c.out2[t].clone() {
                if c.matches(i1, i2, rel) == Tri::Yes {
                    out.push(EdgeMatch { pair: (s, t), left: i1, right: i2 });
                    break;
                }
            }
        }
    }
    out
}

/// Region automata of two timed models over their common alphabet.
pub fn common_regions(a1: &Apta, a2: &Apta) -> (RegionContext, RegionBuild, RegionBuild) {
    let ctx = RegionContext::of(&[a1, a2]);
    let b1 = build_region(a1, &ctx);
    let b2 = build_region(a2, &ctx);
    (ctx, b1, b2)
}

/// Refinement of timed models on their region automata. The pruned-away specification (a
/// single location without valuations or edges) has no implementations and is treated like
/// an automaton without states, which refines everything.
pub fn apta_refine(a1: &Apta, a2: &Apta, kind: RefinementKind) -> RefinementResult {
    let (_, b1, b2) = common_regions(a1, a2);
    if is_pruned_empty(a1) {
        let nothing = Apa { states: Vec::new(), initial: 0, transitions: Vec::new() };
        return refine(&nothing, &b2.apa, kind);
    }
    refine(&b1.apa, &b2.apa, kind)
}

fn is_pruned_empty(a: &Apta) -> bool {
    a.locations.len() == 1 && a.edges.is_empty() && a.locations[0].valuation.is_empty()
}

pub fn apta_weak_refine(a1: &Apta, a2: &Apta) -> RefinementResult {
    apta_refine(a1, a2, RefinementKind::Weak)
}

pub fn apta_strong_refine(a1: &Apta, a2: &Apta) -> RefinementResult {
    apta_refine(a1, a2, RefinementKind::Strong)
}

#[derive(Clone, Debug)]
pub struct Satisfaction {
    pub result: RefinementResult,
    /// The implementation in normal form, on which the check ran.
    pub normalized: Apta,
    pub splits: Vec<LocationSplit>,
    pub implementation_regions: RegionBuild,
    pub specification_regions: RegionBuild,
}

/// Whether the implementation `m` satisfies `spec`, decided on region automata after
/// bringing `m` into normal form.
pub fn satisfies(m: &Apta, spec: &Apta) -> Satisfaction {
    let own = RegionContext::of(&[m]);
    let build = build_region(m, &own);
    let splits = normalization_report(&build, &own, m);
    let normalized = translate_back(&build, &own, m);
    let (_, b1, b2) = common_regions(&normalized, spec);
    let result = weak_refine(&b1.apa, &b2.apa);
    Satisfaction { result, normalized, splits, implementation_regions: b1, specification_regions: b2 }
}

/// Two transitions with the same action and window from one state behave differently.
pub fn is_action_deterministic(a: &Apta) -> bool {
    let ctx = RegionContext::of(&[a]);
    let b = build_region(a, &ctx);
    region_action_deterministic(&b.apa)
}

pub fn region_action_deterministic(apa: &Apa<RegionLabel>) -> bool {
    let out = apa.outgoing();
    for ts in &out {
        for (x, &i) in ts.iter().enumerate() {
            for &j in &ts[x + 1..] {
                let (t, u) = (&apa.transitions[i], &apa.transitions[j]);
                if t.label == u.label && !(t.targets == u.targets && t.tags == u.tags && t.constraint.equivalent(&u.constraint)) {
                    return false;
                }
            }
        }
    }
    true
}

/// Possible targets of every edge carry pairwise disjoint valuation sets.
pub fn is_ap_deterministic(a: &Apta) -> bool {
    a.edges.iter().all(|e: &Edge| {
        let possible = e.constraint.possible_support();
        let targets: BTreeSet<usize> = e.branches.iter().zip(&possible).filter(|(_, p)| **p).map(|(b, _)| b.target.0).collect();
        let targets: Vec<usize> = targets.into_iter().collect();
        targets.iter().enumerate().all(|(i, &x)| {
            targets[i + 1..].iter().all(|&y| a.locations[x].valuation.is_disjoint(&a.locations[y].valuation))
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apa::ApaState;
    use crate::constraint::LinConstraint;
    use crate::num::{q, qi};
    use alloc::string::String;

    fn state(name: &str, props: &[&[&str]]) -> ApaState {
        ApaState {
            name: name.into(),
            valuation: props.iter().map(|s| s.iter().map(|p| String::from(*p)).collect()).collect(),
        }
    }

    fn tr(source: usize, label: u8, modality: Modality, targets: &[usize], c: ProbConstraint) -> Transition<u8> {
        Transition { source, label, modality, targets: targets.to_vec(), tags: vec![0; targets.len()], constraint: c }
    }

    #[test]
    fn lifting_basics() {
        let all = vec![vec![true, false], vec![false, true]];
        let w = lift_check(&[q(1, 2), q(1, 2)], &[q(1, 2), q(1, 2)], &all).unwrap();
        assert_eq!(w[0][0], q(1, 2));
        assert_eq!(w[1][1], q(1, 2));
        assert!(lift_check(&[qi(1)], &[qi(1)], &[vec![false]]).is_none());
        assert!(lift_check(&[qi(1)], &[qi(1)], &[vec![true]]).is_some());
    }

    fn interval(dim: usize, k: usize, lo: Q, hi: Q) -> Vec<LinConstraint> {
        let mut neg = vec![Q::zero(); dim];
        neg[k] = -Q::one();
        let mut pos = vec![Q::zero(); dim];
        pos[k] = Q::one();
        vec![LinConstraint::new(neg, Rel::Le, -lo), LinConstraint::new(pos, Rel::Le, hi)]
    }

    /// Left: three targets a, c, b with p(c) = 1/2. Right: two targets {a,c}, {b,c} with
    /// q(first) = 1/2. Each left distribution can be matched, but no fixed correspondence
    /// works for both extremes.
    fn weak_not_strong() -> (Apa<u8>, Apa<u8>) {
        let left_c = ProbConstraint::from_polytope(Polytope { dim: 3, rows: interval(3, 1, q(1, 2), q(1, 2)) });
        let a1 = Apa {
            states: vec![state("s", &[&[]]), state("a", &[&["a"]]), state("c", &[&["c"]]), state("b", &[&["b"]])],
            initial: 0,
            transitions: vec![tr(0, 0, Modality::Must, &[1, 2, 3], left_c)],
        };
        let right_c = ProbConstraint::from_polytope(Polytope { dim: 2, rows: interval(2, 0, q(1, 2), q(1, 2)) });
        let a2 = Apa {
            states: vec![state("t", &[&[]]), state("ac", &[&["a"], &["c"]]), state("bc", &[&["b"], &["c"]])],
            initial: 0,
            transitions: vec![tr(0, 0, Modality::Must, &[1, 2], right_c)],
        };
        (a1, a2)
    }

    #[test]
    fn weak_holds_where_strong_fails() {
        let (a1, a2) = weak_not_strong();
        assert_eq!(weak_refine(&a1, &a2).verdict, Verdict::Holds);
        assert_eq!(strong_refine(&a1, &a2).verdict, Verdict::Fails);
    }

    #[test]
    fn reflexive() {
        let (a1, a2) = weak_not_strong();
        for a in [&a1, &a2] {
            assert_eq!(weak_refine(a, a).verdict, Verdict::Holds);
            assert_eq!(strong_refine(a, a).verdict, Verdict::Holds);
        }
    }

    #[test]
    fn missing_must_fails_with_counterexample() {
        let (a1, mut a2) = weak_not_strong();
        a2.transitions.push(tr(0, 1, Modality::Must, &[0], ProbConstraint::point(&[qi(1)])));
        let r = weak_refine(&a1, &a2);
        assert_eq!(r.verdict, Verdict::Fails);
        assert_eq!(r.counterexample[0].pair, (0, 0));
        assert_eq!(r.counterexample[0].condition, Condition::MustMatched);
    }

    #[test]
    fn reset_tags_do_not_restrict_lifting() {
        let states = vec![state("s", &[&[]]), state("t", &[&[]])];
        let mut left = tr(0, 0, Modality::Must, &[1], ProbConstraint::point(&[qi(1)]));
        left.tags = vec![1];
        let right = tr(0, 0, Modality::Must, &[1], ProbConstraint::point(&[qi(1)]));
        let a1 = Apa { states: states.clone(), initial: 0, transitions: vec![left] };
        let a2 = Apa { states, initial: 0, transitions: vec![right] };
        assert_eq!(weak_refine(&a1, &a2).verdict, Verdict::Holds);
        assert_eq!(strong_refine(&a1, &a2).verdict, Verdict::Holds);
    }

    #[test]
    fn pruned_empty_specification_refines_everything() {
        use crate::consistency::empty_specification;
        use crate::guard::Guard;
        use crate::model::{ActionId, Branch, Kind, Location, LocationId};
        let mut m = Apta::new("m", Kind::Apta);
        m.actions = vec!["a".into()];
        m.locations.push(Location { name: "l".into(), valuation: [BTreeSet::new()].into_iter().collect() });
        m.edges.push(Edge {
            source: LocationId(0),
            guard: Guard::truth(),
            action: ActionId(0),
            modality: Modality::Must,
            branches: vec![Branch { resets: BTreeSet::new(), target: LocationId(0) }],
            constraint: ProbConstraint::point(&[qi(1)]),
        });
        let empty = empty_specification(&m);
        assert_eq!(apta_weak_refine(&empty, &m).verdict, Verdict::Holds);
        assert_eq!(apta_weak_refine(&m, &empty).verdict, Verdict::Fails);
    }

    #[test]
    fn product_rectangles() {
        let half = ProbConstraint::from_polytope(Polytope { dim: 2, rows: interval(2, 0, qi(0), q(1, 2)) });
        let cells: Vec<Option<usize>> = (0..4).map(Some).collect();
        let prod = ProbConstraint::product(&half, &half, &cells, 4);
        let diag: Vec<Vec<bool>> = (0..4).map(|i| (0..4).map(|j| i == j).collect()).collect();
        assert_eq!(forall_exists(&prod, &prod, &diag), Tri::Yes);
        let wide = ProbConstraint::product(&ProbConstraint::truth(2), &half, &cells, 4);
        assert_eq!(forall_exists(&wide, &prod, &diag), Tri::No);
        assert_eq!(forall_exists(&prod, &wide, &diag), Tri::Yes);
    }

    #[test]
    fn product_point_against_product() {
        let half = ProbConstraint::from_polytope(Polytope { dim: 2, rows: interval(2, 0, qi(0), q(1, 2)) });
        let cells: Vec<Option<usize>> = (0..4).map(Some).collect();
        let prod = ProbConstraint::product(&half, &half, &cells, 4);
        let diag: Vec<Vec<bool>> = (0..4).map(|i| (0..4).map(|j| i == j).collect()).collect();
        let inside = ProbConstraint::point(&[q(1, 8), q(1, 8), q(3, 8), q(3, 8)]);
        assert_eq!(forall_exists(&inside, &prod, &diag), Tri::Yes);
        let correlated = ProbConstraint::point(&[q(1, 4), qi(0), qi(0), q(3, 4)]);
        assert_ne!(forall_exists(&correlated, &prod, &diag), Tri::Yes);
    }
}
