//! Probability constraints: finite unions of convex polytopes inside the
//! probability simplex, plus symbolic product pieces.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::{One, Signed, Zero};

use crate::lp::{Cmp, LinearProgram, Outcome};
use crate::num::Q;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ConstraintError {
    #[error("support mismatch: expected {expected} elements, found {found}")]
    SupportMismatch { expected: usize, found: usize },
    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rel {
    Le,
    Eq,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinConstraint {
    pub coeffs: Vec<Q>,
    pub rel: Rel,
    pub rhs: Q,
}

impl LinConstraint {
    pub fn new(coeffs: Vec<Q>, rel: Rel, rhs: Q) -> LinConstraint {
        LinConstraint { coeffs, rel, rhs }
    }

    pub fn holds(&self, point: &[Q]) -> bool {
        let terms = self.coeffs.iter().zip(point).filter(|(c, x)| !c.is_zero() && !x.is_zero());
        if let Some(ord) = crate::num::small_dot_cmp(terms, &self.rhs) {
            return match self.rel {
                Rel::Le => ord.is_le(),
                Rel::Eq => ord.is_eq(),
            };
        }
        let lhs = self.lhs(point);
        match self.rel {
            Rel::Le => lhs <= self.rhs,
            Rel::Eq => lhs == self.rhs,
        }
    }

    fn lhs(&self, point: &[Q]) -> Q {
        self.coeffs
            .iter()
            .zip(point)
            .filter(|(c, x)| !c.is_zero() && !x.is_zero())
            .fold(Q::zero(), |mut acc, (c, x)| {
                acc += c * x;
                acc
            })
    }

    fn terms(&self) -> Vec<(usize, Q)> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| (i, c.clone()))
            .collect()
    }

    fn is_trivial(&self) -> bool {
        self.coeffs.iter().all(Zero::is_zero)
    }

    /// Scales to a canonical representative so that duplicates compare equal.
    fn normalized(mut self) -> LinConstraint {
        let pivot = match self.rel {
            Rel::Le => self.coeffs.iter().map(|c| c.abs()).max(),
            Rel::Eq => self.coeffs.iter().find(|c| !c.is_zero()).cloned(),
        };
        if let Some(p) = pivot.filter(|p| !p.is_zero()) {
            for c in self.coeffs.iter_mut() {
                *c /= &p;
            }
            self.rhs /= &p;
        }
        self
    }
}

/// A convex polytope intersected with the probability simplex of dimension `dim`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Polytope {
    pub dim: usize,
    pub rows: Vec<LinConstraint>,
}

impl Polytope {
    pub fn full(dim: usize) -> Polytope {
        Polytope { dim, rows: Vec::new() }
    }

    pub fn point(values: &[Q]) -> Polytope {
        let dim = values.len();
        let rows = values
            .iter()
            .enumerate()
            .map(|(i, v)| LinConstraint::new(unit(dim, i), Rel::Eq, v.clone()))
            .collect();
        Polytope { dim, rows }
    }

    pub fn lp(&self) -> LinearProgram {
        let mut lp = LinearProgram::new(self.dim);
        lp.push((0..self.dim).map(|v| (v, Q::one())).collect(), Cmp::Eq, Q::one());
        for r in &self.rows {
            let cmp = match r.rel {
                Rel::Le => Cmp::Le,
                Rel::Eq => Cmp::Eq,
            };
            lp.push(r.terms(), cmp, r.rhs.clone());
        }
        lp
    }

    pub fn contains(&self, point: &[Q]) -> bool {
        point.len() == self.dim
            && point.iter().all(|x| !x.is_negative())
            && crate::num::sums_to_one(point.iter().filter(|x| !x.is_zero()))
            && self.rows.iter().all(|r| r.holds(point))
    }

    pub fn is_nonempty(&self) -> bool {
        self.dim > 0 && self.lp().is_feasible()
    }

    pub fn vertices(&self) -> Vec<Vec<Q>> {
        if self.dim == 0 {
            return Vec::new();
        }
        self.lp().vertices()
    }

    pub fn lex_min(&self) -> Option<Vec<Q>> {
        if self.dim == 0 {
            return None;
        }
        self.lp().lex_min()
    }

    pub fn with_zeros(&self, dead: &BTreeSet<usize>) -> Polytope {
        let mut p = self.clone();
        for &k in dead {
            p.rows.push(LinConstraint::new(unit(self.dim, k), Rel::Eq, Q::zero()));
        }
        p
    }

    /// Coordinates that are positive for some member.
    pub fn possible_support(&self) -> Vec<bool> {
        let mut out = vec![false; self.dim];
        let lp = self.lp();
        let Some(first) = lp.feasible_point() else {
            return out;
        };
        for (k, x) in first.iter().enumerate() {
            out[k] = x.is_positive();
        }
        for k in 0..self.dim {
            if out[k] {
                continue;
            }
            if let Outcome::Optimal { point, value } = lp.maximize(&[(k, Q::one())]) {
                if value.is_positive() {
                    for (j, x) in point.iter().enumerate() {
                        out[j] |= x.is_positive();
                    }
                }
            }
        }
        out
    }

    /// Every support set realized by some member.
    pub fn achievable_supports(&self) -> BTreeSet<Vec<bool>> {
        let mut out = BTreeSet::new();
        let top = self.possible_support();
        if !top.iter().any(|b| *b) {
            return out;
        }
        let mut stack = vec![top];
        while let Some(s) = stack.pop() {
            if !out.insert(s.clone()) {
                continue;
            }
            for k in 0..self.dim {
                if !s[k] {
                    continue;
                }
                let dead: BTreeSet<usize> = (0..self.dim).filter(|&j| !s[j] || j == k).collect();
                let sub = self.with_zeros(&dead).possible_support();
                if sub.iter().any(|b| *b) && !out.contains(&sub) {
                    stack.push(sub);
                }
            }
        }
        out
    }

    /// Whether every member of `other` belongs to `self`.
    pub fn includes(&self, other: &Polytope) -> bool {
        if self.dim != other.dim {
            return false;
        }
        let lp = other.lp();
        if !lp.is_feasible() {
            return true;
        }
        self.rows.iter().all(|r| {
            let terms = r.terms();
            let upper_ok = match lp.maximize(&terms) {
                Outcome::Optimal { value, .. } => value <= r.rhs,
                _ => false,
            };
            let lower_ok = r.rel == Rel::Le
                || match lp.minimize(&terms) {
                    Outcome::Optimal { value, .. } => value >= r.rhs,
                    _ => false,
                };
            upper_ok && lower_ok
        })
    }

    /// Injective renaming of coordinates into a space of size `dim`; unmapped coordinates are zero.
    pub fn remap(&self, map: &[usize], dim: usize) -> Polytope {
        let mut rows: Vec<LinConstraint> = self
            .rows
            .iter()
            .map(|r| {
                let mut coeffs = vec![Q::zero(); dim];
                for (k, c) in r.coeffs.iter().enumerate() {
                    coeffs[map[k]] = c.clone();
                }
                LinConstraint::new(coeffs, r.rel, r.rhs.clone())
            })
            .collect();
        let used: BTreeSet<usize> = map.iter().copied().collect();
        for k in (0..dim).filter(|k| !used.contains(k)) {
            rows.push(LinConstraint::new(unit(dim, k), Rel::Eq, Q::zero()));
        }
        Polytope { dim, rows }
    }

    /// Deletes coordinates not in `keep`; only sound when they are forced to zero.
    pub fn retain(&self, keep: &[bool]) -> Polytope {
        let dim = keep.iter().filter(|k| **k).count();
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let coeffs = r
                    .coeffs
                    .iter()
                    .zip(keep)
                    .filter(|(_, k)| **k)
                    .map(|(c, _)| c.clone())
                    .collect();
                LinConstraint::new(coeffs, r.rel, r.rhs.clone())
            })
            .filter(|r| !(r.is_trivial() && r.rhs.is_zero()))
            .collect();
        Polytope { dim, rows }
    }

    /// Replaces each coordinate by the sum of its block in a space of size `dim`.
    pub fn substitute(&self, blocks: &[Vec<usize>], dim: usize) -> Polytope {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut coeffs = vec![Q::zero(); dim];
                for (k, c) in r.coeffs.iter().enumerate() {
                    for &j in &blocks[k] {
                        coeffs[j] += c;
                    }
                }
                LinConstraint::new(coeffs, r.rel, r.rhs.clone())
            })
            .collect();
        Polytope { dim, rows }
    }

    pub fn intersect(&self, other: &Polytope) -> Polytope {
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Polytope { dim: self.dim, rows }
    }

    /// Exact image under the coordinate-summing map `f` into a space of size `dim`.
    pub fn image(&self, f: &[usize], dim: usize) -> Option<Polytope> {
        if !self.is_nonempty() {
            return None;
        }
        let injective = f.iter().collect::<BTreeSet<_>>().len() == f.len();
        if injective {
            return Some(self.remap(f, dim));
        }
        let mut rep = vec![usize::MAX; dim];
        for (k, &b) in f.iter().enumerate() {
            if rep[b] == usize::MAX {
                rep[b] = k;
            }
        }
        // Non-representative coordinates become eliminated variables.
        let extra: Vec<usize> = (0..self.dim).filter(|&k| rep[f[k]] != k).collect();
        let zpos: BTreeMap<usize, usize> = extra.iter().enumerate().map(|(i, &k)| (k, dim + i)).collect();
        let width = dim + extra.len();
        let mut rows = Vec::new();
        for r in &self.rows {
            let mut coeffs = vec![Q::zero(); width];
            for (k, c) in r.coeffs.iter().enumerate() {
                if c.is_zero() {
                    continue;
                }
                if let Some(&z) = zpos.get(&k) {
                    coeffs[z] += c;
                } else {
                    coeffs[f[k]] += c;
                }
            }
            // x_rep = y_b - sum of the block's other coordinates
            for (k, c) in r.coeffs.iter().enumerate() {
                if c.is_zero() || zpos.contains_key(&k) {
                    continue;
                }
                for (&other, &z) in &zpos {
                    if f[other] == f[k] {
                        coeffs[z] -= c;
                    }
                }
            }
            rows.push(LinConstraint::new(coeffs, r.rel, r.rhs.clone()));
        }
        for &z in zpos.values() {
            let mut coeffs = vec![Q::zero(); width];
            coeffs[z] = -Q::one();
            rows.push(LinConstraint::new(coeffs, Rel::Le, Q::zero()));
        }
        for (b, &r0) in rep.iter().enumerate() {
            if r0 == usize::MAX {
                continue;
            }
            let mut coeffs = vec![Q::zero(); width];
            coeffs[b] = -Q::one();
            for (&other, &z) in &zpos {
                if f[other] == b {
                    coeffs[z] = Q::one();
                }
            }
            rows.push(LinConstraint::new(coeffs, Rel::Le, Q::zero()));
        }
        let mut projected = project(dim, width, rows)?;
        for (b, &r0) in rep.iter().enumerate() {
            if r0 == usize::MAX {
                projected.push(LinConstraint::new(unit(dim, b), Rel::Eq, Q::zero()));
            }
        }
        Some(Polytope { dim, rows: projected }.without_redundancy())
    }

    /// Convex hull of `points` (all of dimension `dim`) in half-space form.
    pub fn hull(points: &[Vec<Q>], dim: usize) -> Option<Polytope> {
        if points.is_empty() {
            return None;
        }
        if points.len() == 1 {
            return Some(Polytope::point(&points[0]));
        }
        let width = dim + points.len();
        let mut rows = Vec::new();
        for b in 0..dim {
            let mut coeffs = vec![Q::zero(); width];
            coeffs[b] = Q::one();
            for (i, p) in points.iter().enumerate() {
                coeffs[dim + i] = -p[b].clone();
            }
            rows.push(LinConstraint::new(coeffs, Rel::Eq, Q::zero()));
        }
        for i in 0..points.len() {
            let mut coeffs = vec![Q::zero(); width];
            coeffs[dim + i] = -Q::one();
            rows.push(LinConstraint::new(coeffs, Rel::Le, Q::zero()));
        }
        let mut coeffs = vec![Q::zero(); width];
        for c in coeffs.iter_mut().skip(dim) {
            *c = Q::one();
        }
        rows.push(LinConstraint::new(coeffs, Rel::Eq, Q::one()));
        let projected = project(dim, width, rows)?;
        Some(Polytope { dim, rows: projected }.without_redundancy())
    }

    /// Drops rows implied by the others together with the simplex.
    pub fn without_redundancy(self) -> Polytope {
        let mut rows: Vec<LinConstraint> = Vec::new();
        for r in self.rows.into_iter().map(LinConstraint::normalized) {
            if r.is_trivial() {
                continue;
            }
            if !rows.contains(&r) {
                rows.push(r);
            }
        }
        let mut i = 0;
        while i < rows.len() {
            if rows[i].rel == Rel::Eq {
                i += 1;
                continue;
            }
            let mut rest = rows.clone();
            let r = rest.remove(i);
            let p = Polytope { dim: self.dim, rows: rest };
            let redundant = match p.lp().maximize(&r.terms()) {
                Outcome::Optimal { value, .. } => value <= r.rhs,
                Outcome::Infeasible => true,
                Outcome::Unbounded => false,
            };
            if redundant {
                rows.remove(i);
            } else {
                i += 1;
            }
        }
        rows.sort();
        Polytope { dim: self.dim, rows }
    }
}

/// Fourier-Motzkin elimination of columns `keep..width`; returns rows over the first `keep`
/// columns, or `None` if the system is found infeasible.
fn project(keep: usize, width: usize, rows: Vec<LinConstraint>) -> Option<Vec<LinConstraint>> {
    let mut eqs: Vec<LinConstraint> = Vec::new();
    let mut les: Vec<LinConstraint> = Vec::new();
    for r in rows {
        match r.rel {
            Rel::Eq => eqs.push(r),
            Rel::Le => les.push(r),
        }
    }
    for v in keep..width {
        if let Some(pos) = eqs.iter().position(|r| !r.coeffs[v].is_zero()) {
            let pivot = eqs.remove(pos);
            let pc = pivot.coeffs[v].clone();
            let eliminate = |r: &mut LinConstraint| {
                let c = r.coeffs[v].clone();
                if c.is_zero() {
                    return;
                }
                let f = &c / &pc;
                for (x, y) in r.coeffs.iter_mut().zip(&pivot.coeffs) {
                    if !y.is_zero() {
                        *x -= &f * y;
                    }
                }
                r.rhs -= &f * &pivot.rhs;
            };
            eqs.iter_mut().for_each(eliminate);
            les.iter_mut().for_each(eliminate);
        } else {
            let (mut pos, mut neg, mut rest) = (Vec::new(), Vec::new(), Vec::new());
            for r in les.drain(..) {
                if r.coeffs[v].is_positive() {
                    pos.push(r);
                } else if r.coeffs[v].is_negative() {
                    neg.push(r);
                } else {
                    rest.push(r);
                }
            }
            for p in &pos {
                for n in &neg {
                    let a = p.coeffs[v].clone();
                    let b = -n.coeffs[v].clone();
                    let coeffs: Vec<Q> = p
                        .coeffs
                        .iter()
                        .zip(&n.coeffs)
                        .map(|(x, y)| &b * x + &a * y)
                        .collect();
                    let rhs = &b * &p.rhs + &a * &n.rhs;
                    rest.push(LinConstraint::new(coeffs, Rel::Le, rhs).normalized());
                }
            }
            les = dedup_rows(rest);
        }
        for r in eqs.iter().chain(&les) {
            if r.coeffs.iter().all(Zero::is_zero) {
                let ok = match r.rel {
                    Rel::Le => !r.rhs.is_negative(),
                    Rel::Eq => r.rhs.is_zero(),
                };
                if !ok {
                    return None;
                }
            }
        }
        eqs.retain(|r| !r.coeffs.iter().all(Zero::is_zero));
        les.retain(|r| !r.coeffs.iter().all(Zero::is_zero));
    }
    let out = eqs
        .into_iter()
        .chain(les)
        .map(|mut r| {
            r.coeffs.truncate(keep);
            r
        })
        .collect();
    Some(out)
}

fn dedup_rows(rows: Vec<LinConstraint>) -> Vec<LinConstraint> {
    let set: BTreeSet<LinConstraint> = rows.into_iter().map(LinConstraint::normalized).collect();
    set.into_iter().collect()
}

pub(crate) fn unit(dim: usize, k: usize) -> Vec<Q> {
    let mut v = vec![Q::zero(); dim];
    v[k] = Q::one();
    v
}

/// Symbolic tensor product of two factor pieces. Cell `i * right_dim + j` holds the
/// product `left[i] * right[j]` and sits at coordinate `cells[..]`, or is forced to zero
/// when unmapped.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProductPiece {
    pub dim: usize,
    pub left: Piece,
    pub right: Piece,
    pub cells: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Piece {
    Poly(Polytope),
    Product(Box<ProductPiece>),
}

impl Piece {
    pub fn dim(&self) -> usize {
        match self {
            Piece::Poly(p) => p.dim,
            Piece::Product(p) => p.dim,
        }
    }

    /// Builds a product piece, collapsing it to a polytope when a factor is a single point.
    pub fn product(left: Piece, right: Piece, cells: Vec<Option<usize>>, dim: usize) -> Option<Piece> {
        let lv = left.point();
        let rv = right.point();
        if !left.is_nonempty() || !right.is_nonempty() {
            return None;
        }
        let rd = right.dim();
        match (&left, lv, &right, rv) {
            (_, Some(a), _, Some(b)) => {
                let mut pt = vec![Q::zero(); dim];
                for (i, x) in a.iter().enumerate() {
                    for (j, y) in b.iter().enumerate() {
                        if let Some(c) = cells[i * rd + j] {
                            pt[c] += x * y;
                        }
                    }
                }
                Some(Piece::Poly(Polytope::point(&pt)))
            }
            (Piece::Poly(poly), None, _, Some(b)) => {
                let slots: Vec<Vec<(Option<usize>, Q)>> = (0..poly.dim)
                    .map(|i| (0..rd).map(|j| (cells[i * rd + j], b[j].clone())).collect())
                    .collect();
                Some(Piece::Poly(scaled_embedding(poly, &slots, dim)))
            }
            (_, Some(a), Piece::Poly(poly), None) => {
                let slots: Vec<Vec<(Option<usize>, Q)>> = (0..poly.dim)
                    .map(|j| (0..a.len()).map(|i| (cells[i * rd + j], a[i].clone())).collect())
                    .collect();
                Some(Piece::Poly(scaled_embedding(poly, &slots, dim)))
            }
            _ => Some(Piece::Product(Box::new(ProductPiece { dim, left, right, cells }))),
        }
    }

    pub fn is_nonempty(&self) -> bool {
        match self {
            Piece::Poly(p) => p.is_nonempty(),
            Piece::Product(p) => p.left.is_nonempty() && p.right.is_nonempty(),
        }
    }

    pub fn contains(&self, mu: &[Q]) -> bool {
        match self {
            Piece::Poly(p) => p.contains(mu),
            Piece::Product(p) => {
                if mu.len() != p.dim || mu.iter().any(Signed::is_negative) {
                    return false;
                }
                let (ld, rd) = (p.left.dim(), p.right.dim());
                let mapped: BTreeSet<usize> = p.cells.iter().flatten().copied().collect();
                if (0..p.dim).any(|k| !mapped.contains(&k) && !mu[k].is_zero()) {
                    return false;
                }
                let at = |i: usize, j: usize| p.cells[i * rd + j].map(|c| mu[c].clone()).unwrap_or_default();
                let ml: Vec<Q> = (0..ld).map(|i| (0..rd).fold(Q::zero(), |a, j| a + at(i, j))).collect();
                let mr: Vec<Q> = (0..rd).map(|j| (0..ld).fold(Q::zero(), |a, i| a + at(i, j))).collect();
                if !p.left.contains(&ml) || !p.right.contains(&mr) {
                    return false;
                }
                (0..ld).all(|i| (0..rd).all(|j| at(i, j) == &ml[i] * &mr[j]))
            }
        }
    }

    /// Extreme points of the convex hull.
    pub fn vertices(&self) -> Vec<Vec<Q>> {
        match self {
            Piece::Poly(p) => p.vertices(),
            Piece::Product(p) => {
                let rd = p.right.dim();
                let lv = p.left.vertices();
                let rv = p.right.vertices();
                let mut out = BTreeSet::new();
                for a in &lv {
                    for b in &rv {
                        let mut pt = vec![Q::zero(); p.dim];
                        for (i, x) in a.iter().enumerate() {
                            for (j, y) in b.iter().enumerate() {
                                if let Some(c) = p.cells[i * rd + j] {
                                    pt[c] += x * y;
                                }
                            }
                        }
                        out.insert(pt);
                    }
                }
                out.into_iter().collect()
            }
        }
    }

    /// The unique member, if the piece is a single point.
    pub fn point(&self) -> Option<Vec<Q>> {
        if let Piece::Poly(p) = self {
            if let Some(pt) = explicit_point(p) {
                return Some(pt);
            }
        }
        let v = self.vertices();
        if v.len() == 1 {
            v.into_iter().next()
        } else {
            None
        }
    }

    pub fn possible_support(&self) -> Vec<bool> {
        match self {
            Piece::Poly(p) => p.possible_support(),
            Piece::Product(p) => {
                let rd = p.right.dim();
                let (ls, rs) = (p.left.possible_support(), p.right.possible_support());
                let mut out = vec![false; p.dim];
                for (i, a) in ls.iter().enumerate() {
                    for (j, b) in rs.iter().enumerate() {
                        if let (true, true, Some(c)) = (a, b, p.cells[i * rd + j]) {
                            out[c] = true;
                        }
                    }
                }
                out
            }
        }
    }

    pub fn achievable_supports(&self) -> BTreeSet<Vec<bool>> {
        match self {
            Piece::Poly(p) => p.achievable_supports(),
            Piece::Product(p) => {
                let rd = p.right.dim();
                let mut out = BTreeSet::new();
                for a in p.left.achievable_supports() {
                    for b in p.right.achievable_supports() {
                        let mut s = vec![false; p.dim];
                        for (i, x) in a.iter().enumerate() {
                            for (j, y) in b.iter().enumerate() {
                                if let (true, true, Some(c)) = (x, y, p.cells[i * rd + j]) {
                                    s[c] = true;
                                }
                            }
                        }
                        out.insert(s);
                    }
                }
                out
            }
        }
    }

    pub fn lex_min(&self) -> Option<Vec<Q>> {
        match self {
            Piece::Poly(p) => p.lex_min(),
            Piece::Product(_) => self.vertices().into_iter().min(),
        }
    }

    pub fn restrict_zero(&self, dead: &BTreeSet<usize>) -> Vec<Piece> {
        match self {
            Piece::Poly(p) => {
                let q = p.with_zeros(dead);
                if q.is_nonempty() {
                    vec![Piece::Poly(q)]
                } else {
                    Vec::new()
                }
            }
            Piece::Product(p) => {
                let (ld, rd) = (p.left.dim(), p.right.dim());
                let dead_cells: Vec<(usize, usize)> = (0..ld)
                    .flat_map(|i| (0..rd).map(move |j| (i, j)))
                    .filter(|&(i, j)| p.cells[i * rd + j].is_some_and(|c| dead.contains(&c)))
                    .collect();
                if dead_cells.is_empty() {
                    return vec![self.clone()];
                }
                let rows: Vec<usize> = dead_cells.iter().map(|c| c.0).collect::<BTreeSet<_>>().into_iter().collect();
                let mut out = BTreeSet::new();
                for mask in 0u32..(1 << rows.len()) {
                    let z1: BTreeSet<usize> =
                        rows.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &i)| i).collect();
                    let z2: BTreeSet<usize> =
                        dead_cells.iter().filter(|(i, _)| !z1.contains(i)).map(|&(_, j)| j).collect();
                    for l in p.left.restrict_zero(&z1) {
                        for r in p.right.restrict_zero(&z2) {
                            if let Some(piece) = Piece::product(l.clone(), r, p.cells.clone(), p.dim) {
                                out.insert(piece);
                            }
                        }
                    }
                }
                out.into_iter().collect()
            }
        }
    }

    pub fn retain(&self, keep: &[bool]) -> Piece {
        let index = kept_index(keep);
        match self {
            Piece::Poly(p) => Piece::Poly(p.retain(keep)),
            Piece::Product(p) => Piece::Product(Box::new(ProductPiece {
                dim: index.1,
                left: p.left.clone(),
                right: p.right.clone(),
                cells: p.cells.iter().map(|c| c.and_then(|c| index.0[c])).collect(),
            })),
        }
    }

    pub fn remap(&self, map: &[usize], dim: usize) -> Piece {
        match self {
            Piece::Poly(p) => Piece::Poly(p.remap(map, dim)),
            Piece::Product(p) => Piece::Product(Box::new(ProductPiece {
                dim,
                left: p.left.clone(),
                right: p.right.clone(),
                cells: p.cells.iter().map(|c| c.map(|c| map[c])).collect(),
            })),
        }
    }

    /// Image under the coordinate-summing map `f`; the flag reports a hull approximation.
    pub fn image(&self, f: &[usize], dim: usize) -> (Vec<Piece>, bool) {
        match self {
            Piece::Poly(p) => (p.image(f, dim).map(Piece::Poly).into_iter().collect(), false),
            Piece::Product(p) => {
                if let Some((f1, d1, f2, d2, cells)) = decompose(p, f) {
                    let (ls, a1) = p.left.image(&f1, d1);
                    let (rs, a2) = p.right.image(&f2, d2);
                    let mut out = BTreeSet::new();
                    for l in &ls {
                        for r in &rs {
                            if let Some(piece) = Piece::product(l.clone(), r.clone(), cells.clone(), dim) {
                                out.insert(piece);
                            }
                        }
                    }
                    (out.into_iter().collect(), a1 || a2)
                } else {
                    let pts: Vec<Vec<Q>> = self
                        .vertices()
                        .into_iter()
                        .map(|v| {
                            let mut w = vec![Q::zero(); dim];
                            for (k, x) in v.iter().enumerate() {
                                w[f[k]] += x;
                            }
                            w
                        })
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    (Polytope::hull(&pts, dim).map(Piece::Poly).into_iter().collect(), true)
                }
            }
        }
    }

    /// Whether every member of `other` belongs to `self`. Exact except when `self` is a
    /// product and `other` is a non-degenerate polytope, where `false` may be a miss.
    pub fn includes(&self, other: &Piece) -> bool {
        match (self, other) {
            (Piece::Poly(a), Piece::Poly(b)) => a.includes(b),
            (Piece::Poly(a), Piece::Product(_)) => other.vertices().iter().all(|v| a.contains(v)),
            (Piece::Product(_), Piece::Poly(b)) => match other.point() {
                Some(pt) => self.contains(&pt),
                None => !b.is_nonempty(),
            },
            (Piece::Product(a), Piece::Product(b)) => {
                if !other.is_nonempty() {
                    return true;
                }
                a.cells == b.cells
                    && a.dim == b.dim
                    && a.left.includes(&b.left)
                    && a.right.includes(&b.right)
            }
        }
    }
}

fn kept_index(keep: &[bool]) -> (Vec<Option<usize>>, usize) {
    let mut next = 0;
    let idx = keep
        .iter()
        .map(|k| {
            if *k {
                next += 1;
                Some(next - 1)
            } else {
                None
            }
        })
        .collect();
    (idx, next)
}

/// The values of a polytope whose rows pin every coordinate by a unit equality.
fn pinned(p: &Polytope) -> Option<Vec<Q>> {
    let mut pt: Vec<Option<Q>> = vec![None; p.dim];
    for r in &p.rows {
        let nz: Vec<usize> = (0..p.dim).filter(|&k| !r.coeffs[k].is_zero()).collect();
        if r.rel != Rel::Eq || nz.len() != 1 {
            return None;
        }
        let v = &r.rhs / &r.coeffs[nz[0]];
        match &pt[nz[0]] {
            Some(old) if *old != v => return None,
            _ => pt[nz[0]] = Some(v),
        }
    }
    pt.into_iter().collect()
}

fn explicit_point(p: &Polytope) -> Option<Vec<Q>> {
    let pt = pinned(p)?;
    let total = pt.iter().fold(Q::zero(), |a, x| a + x);
    (total.is_one() && pt.iter().all(|x| !x.is_negative())).then_some(pt)
}

/// Embeds `poly` where coordinate `i` is spread over `slots[i]` with fixed weights summing to 1.
fn scaled_embedding(poly: &Polytope, slots: &[Vec<(Option<usize>, Q)>], dim: usize) -> Polytope {
    let mut rows = Vec::new();
    let mut covered = BTreeSet::new();
    let mut lead: Vec<Option<(usize, Q)>> = Vec::new();
    for slot in slots {
        let mut first: Option<(usize, Q)> = None;
        for (c, w) in slot {
            let Some(c) = *c else { continue };
            covered.insert(c);
            if w.is_zero() {
                rows.push(LinConstraint::new(unit(dim, c), Rel::Eq, Q::zero()));
                continue;
            }
            match &first {
                None => first = Some((c, w.clone())),
                Some((c0, w0)) => {
                    // w0 * y_c - w * y_c0 = 0
                    let mut coeffs = vec![Q::zero(); dim];
                    coeffs[c] = w0.clone();
                    coeffs[*c0] -= w.clone();
                    rows.push(LinConstraint::new(coeffs, Rel::Eq, Q::zero()));
                }
            }
        }
        lead.push(first);
    }
    for r in &poly.rows {
        let mut coeffs = vec![Q::zero(); dim];
        for (i, c) in r.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            // x_i = y_lead / w_lead
            if let Some((c0, w0)) = &lead[i] {
                coeffs[*c0] += c / w0;
            }
        }
        rows.push(LinConstraint::new(coeffs, r.rel, r.rhs.clone()));
    }
    // An input spread only over zero-weight or unmapped cells carries no mass in the
    // embedding, so the factor must give it none.
    let dead: BTreeSet<usize> = (0..lead.len()).filter(|&i| lead[i].is_none()).collect();
    if !dead.is_empty() && !poly.with_zeros(&dead).is_nonempty() {
        rows.push(LinConstraint::new(vec![Q::zero(); dim], Rel::Le, -Q::one()));
    }
    for k in (0..dim).filter(|k| !covered.contains(k)) {
        rows.push(LinConstraint::new(unit(dim, k), Rel::Eq, Q::zero()));
    }
    Polytope { dim, rows }
}

type Decomposition = (Vec<usize>, usize, Vec<usize>, usize, Vec<Option<usize>>);

/// Splits `f` on a product piece into factor maps when it acts block-wise on rows and columns.
fn decompose(p: &ProductPiece, f: &[usize]) -> Option<Decomposition> {
    let (ld, rd) = (p.left.dim(), p.right.dim());
    let img = |i: usize, j: usize| p.cells[i * rd + j].map(|c| f[c]);
    if p.cells.iter().any(Option::is_none) {
        return None;
    }
    let mut f1 = vec![0; ld];
    let mut firsts: Vec<usize> = Vec::new();
    for i in 0..ld {
        match firsts.iter().position(|&i0| img(i0, 0) == img(i, 0)) {
            Some(b) => f1[i] = b,
            None => {
                f1[i] = firsts.len();
                firsts.push(i);
            }
        }
    }
    let mut f2 = vec![0; rd];
    let mut seconds: Vec<usize> = Vec::new();
    for j in 0..rd {
        match seconds.iter().position(|&j0| img(0, j0) == img(0, j)) {
            Some(b) => f2[j] = b,
            None => {
                f2[j] = seconds.len();
                seconds.push(j);
            }
        }
    }
    let (d1, d2) = (firsts.len(), seconds.len());
    let mut cells = vec![None; d1 * d2];
    for i in 0..ld {
        for j in 0..rd {
            let slot = &mut cells[f1[i] * d2 + f2[j]];
            match slot {
                None => *slot = img(i, j),
                Some(c) if Some(*c) == img(i, j) => {}
                Some(_) => return None,
            }
        }
    }
    let distinct: BTreeSet<_> = cells.iter().collect();
    if distinct.len() != cells.len() {
        return None;
    }
    Some((f1, d1, f2, d2, cells))
}

/// A probability constraint over a support of `dim` elements.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProbConstraint {
    pub dim: usize,
    pub pieces: Vec<Piece>,
}

impl ProbConstraint {
    pub fn truth(dim: usize) -> ProbConstraint {
        ProbConstraint { dim, pieces: vec![Piece::Poly(Polytope::full(dim))] }
    }

    pub fn falsity(dim: usize) -> ProbConstraint {
        ProbConstraint { dim, pieces: Vec::new() }
    }

    pub fn point(values: &[Q]) -> ProbConstraint {
        ProbConstraint { dim: values.len(), pieces: vec![Piece::Poly(Polytope::point(values))] }
    }

    pub fn from_polytope(p: Polytope) -> ProbConstraint {
        ProbConstraint { dim: p.dim, pieces: vec![Piece::Poly(p)] }
    }

    /// Product of two constraints with cell `i * b.dim + j` at coordinate `cells[..]`.
    pub fn product(a: &ProbConstraint, b: &ProbConstraint, cells: &[Option<usize>], dim: usize) -> ProbConstraint {
        let mut pieces = BTreeSet::new();
        for l in &a.pieces {
            for r in &b.pieces {
                if let Some(p) = Piece::product(l.clone(), r.clone(), cells.to_vec(), dim) {
                    pieces.insert(p);
                }
            }
        }
        ProbConstraint { dim, pieces: pieces.into_iter().collect() }
    }

    pub fn sat_nonempty(&self) -> bool {
        self.pieces.iter().any(Piece::is_nonempty)
    }

    pub fn member(&self, mu: &[Q]) -> Result<bool, ConstraintError> {
        if mu.len() != self.dim {
            return Err(ConstraintError::SupportMismatch { expected: self.dim, found: mu.len() });
        }
        Ok(self.pieces.iter().any(|p| p.contains(mu)))
    }

    pub fn vertices(&self) -> Vec<Vec<Q>> {
        let set: BTreeSet<Vec<Q>> = self.pieces.iter().flat_map(Piece::vertices).collect();
        set.into_iter().collect()
    }

    pub fn as_point(&self) -> Option<Vec<Q>> {
        let mut found: Option<Vec<Q>> = None;
        for p in &self.pieces {
            if !p.is_nonempty() {
                continue;
            }
            let pt = p.point()?;
            match &found {
                Some(f) if *f != pt => return None,
                _ => found = Some(pt),
            }
        }
        found
    }

    /// Literal probabilities of a constraint written as a single distribution, whether or
    /// not they form a valid distribution.
    pub fn pinned_values(&self) -> Option<Vec<Q>> {
        match self.pieces.as_slice() {
            [Piece::Poly(p)] if self.dim > 0 => pinned(p),
            _ => None,
        }
    }

    pub fn is_product_form(&self) -> bool {
        self.pieces.iter().any(|p| matches!(p, Piece::Product(_)))
    }

    pub fn union(&self, other: &ProbConstraint) -> Result<ProbConstraint, ConstraintError> {
        if self.dim != other.dim {
            return Err(ConstraintError::SupportMismatch { expected: self.dim, found: other.dim });
        }
        let mut pieces = self.pieces.clone();
        for p in &other.pieces {
            if !pieces.contains(p) {
                pieces.push(p.clone());
            }
        }
        Ok(ProbConstraint { dim: self.dim, pieces })
    }

    pub fn intersect(&self, other: &ProbConstraint) -> Result<ProbConstraint, ConstraintError> {
        if self.dim != other.dim {
            return Err(ConstraintError::SupportMismatch { expected: self.dim, found: other.dim });
        }
        let mut pieces = BTreeSet::new();
        for a in &self.pieces {
            for b in &other.pieces {
                match (a, b) {
                    (Piece::Poly(x), Piece::Poly(y)) => {
                        let z = x.intersect(y);
                        if z.is_nonempty() {
                            pieces.insert(Piece::Poly(z));
                        }
                    }
                    _ => return Err(ConstraintError::Unsupported("intersection with a product constraint")),
                }
            }
        }
        Ok(ProbConstraint { dim: self.dim, pieces: pieces.into_iter().collect() })
    }

    /// Rewrites over a product support where variable `k` becomes the sum over `blocks[k]`.
    pub fn marginal_substitute(&self, blocks: &[Vec<usize>], dim: usize) -> Result<ProbConstraint, ConstraintError> {
        if blocks.len() != self.dim {
            return Err(ConstraintError::SupportMismatch { expected: self.dim, found: blocks.len() });
        }
        let pieces = self
            .pieces
            .iter()
            .map(|p| match p {
                Piece::Poly(poly) => Ok(Piece::Poly(poly.substitute(blocks, dim))),
                Piece::Product(_) => Err(ConstraintError::Unsupported("marginal substitution of a product constraint")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ProbConstraint { dim, pieces })
    }

    pub fn restrict_zero(&self, dead: &BTreeSet<usize>) -> ProbConstraint {
        if dead.is_empty() {
            return self.clone();
        }
        let mut pieces = BTreeSet::new();
        for p in &self.pieces {
            pieces.extend(p.restrict_zero(dead));
        }
        ProbConstraint { dim: self.dim, pieces: pieces.into_iter().collect() }
    }

    /// Drops coordinates outside `keep`; callers zero them first.
    pub fn retain(&self, keep: &[bool]) -> ProbConstraint {
        let dim = keep.iter().filter(|k| **k).count();
        ProbConstraint { dim, pieces: self.pieces.iter().map(|p| p.retain(keep)).collect() }
    }

    pub fn remap(&self, map: &[usize], dim: usize) -> ProbConstraint {
        ProbConstraint { dim, pieces: self.pieces.iter().map(|p| p.remap(map, dim)).collect() }
    }

    /// Image under the coordinate-summing map `f` onto a support of size `dim`. The flag is
    /// set when a product piece had to be replaced by the image of its hull.
    pub fn image(&self, f: &[usize], dim: usize) -> (ProbConstraint, bool) {
        let mut pieces = BTreeSet::new();
        let mut approx = false;
        for p in &self.pieces {
            let (img, a) = p.image(f, dim);
            approx |= a;
            pieces.extend(img);
        }
        (ProbConstraint { dim, pieces: pieces.into_iter().collect() }, approx)
    }

    pub fn possible_support(&self) -> Vec<bool> {
        let mut out = vec![false; self.dim];
        for p in &self.pieces {
            for (o, s) in out.iter_mut().zip(p.possible_support()) {
                *o |= s;
            }
        }
        out
    }

    pub fn achievable_supports(&self) -> BTreeSet<Vec<bool>> {
        self.pieces.iter().flat_map(Piece::achievable_supports).collect()
    }

    pub fn lex_min_vertex(&self) -> Option<Vec<Q>> {
        self.pieces.iter().filter_map(Piece::lex_min).min()
    }

    /// Removes empty pieces and pieces contained in another piece.
    pub fn simplified(&self) -> ProbConstraint {
        let live: Vec<Piece> = self.pieces.iter().filter(|p| p.is_nonempty()).cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let mut keep = vec![true; live.len()];
        for i in 0..live.len() {
            for j in 0..live.len() {
                if i != j && keep[j] && keep[i] && live[j].includes(&live[i]) {
                    keep[i] = false;
                }
            }
        }
        let pieces = live.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect();
        ProbConstraint { dim: self.dim, pieces }
    }

    /// Mutual containment, piece by piece.
    pub fn equivalent(&self, other: &ProbConstraint) -> bool {
        if self.dim != other.dim {
            return false;
        }
        let covered = |a: &ProbConstraint, b: &ProbConstraint| {
            a.pieces.iter().filter(|p| p.is_nonempty()).all(|p| b.pieces.iter().any(|q| q.includes(p)))
        };
        covered(self, other) && covered(other, self)
    }
}
