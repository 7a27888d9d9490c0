//! Exact two-phase simplex over nonnegative variables.
//!
//! Every variable is implicitly bounded below by zero. Pivoting follows
//! Bland's rule, so the method terminates on degenerate problems.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::{One, Signed, Zero};

use crate::num::Q;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cmp {
    Le,
    Eq,
    Ge,
}

impl Cmp {
    fn flipped(self) -> Cmp {
        match self {
            Cmp::Le => Cmp::Ge,
            Cmp::Ge => Cmp::Le,
            Cmp::Eq => Cmp::Eq,
        }
    }
}

/// One linear row `sum(coef * x[var]) cmp rhs`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Row {
    pub terms: Vec<(usize, Q)>,
    pub cmp: Cmp,
    pub rhs: Q,
}

impl Row {
    pub fn new(terms: Vec<(usize, Q)>, cmp: Cmp, rhs: Q) -> Row {
        Row { terms, cmp, rhs }
    }

    pub fn holds(&self, point: &[Q]) -> bool {
        let lhs = self
            .terms
            .iter()
            .fold(Q::zero(), |acc, (v, c)| acc + c * &point[*v]);
        match self.cmp {
            Cmp::Le => lhs <= self.rhs,
            Cmp::Eq => lhs == self.rhs,
            Cmp::Ge => lhs >= self.rhs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Infeasible,
    Unbounded,
    Optimal { point: Vec<Q>, value: Q },
}

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    pub vars: usize,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new(vars: usize) -> LinearProgram {
        LinearProgram { vars, rows: Vec::new() }
    }

    pub fn push(&mut self, terms: Vec<(usize, Q)>, cmp: Cmp, rhs: Q) {
        self.rows.push(Row::new(terms, cmp, rhs));
    }

    pub fn feasible_point(&self) -> Option<Vec<Q>> {
        let t = Tableau::phase_one(self)?;
        Some(t.point())
    }

    pub fn is_feasible(&self) -> bool {
        Tableau::phase_one(self).is_some()
    }

    pub fn minimize(&self, cost: &[(usize, Q)]) -> Outcome {
        let Some(mut t) = Tableau::phase_one(self) else {
            return Outcome::Infeasible;
        };
        let mut dense = vec![Q::zero(); t.ncols()];
        for (v, c) in cost {
            dense[*v] += c;
        }
        t.set_cost(&dense);
        if !t.optimize() {
            return Outcome::Unbounded;
        }
        Outcome::Optimal { point: t.point(), value: t.value.clone() }
    }

    pub fn maximize(&self, cost: &[(usize, Q)]) -> Outcome {
        let negated: Vec<(usize, Q)> = cost.iter().map(|(v, c)| (*v, -c.clone())).collect();
        match self.minimize(&negated) {
            Outcome::Optimal { point, value } => Outcome::Optimal { point, value: -value },
            other => other,
        }
    }

    /// Lexicographically least feasible point, assuming the feasible set is bounded.
    pub fn lex_min(&self) -> Option<Vec<Q>> {
        let mut lp = self.clone();
        let mut point = None;
        for v in 0..self.vars {
            match lp.minimize(&[(v, Q::one())]) {
                Outcome::Optimal { point: p, value } => {
                    lp.push(vec![(v, Q::one())], Cmp::Eq, value);
                    point = Some(p);
                }
                Outcome::Infeasible => return None,
                Outcome::Unbounded => return point,
            }
        }
        if self.vars == 0 {
            return self.feasible_point();
        }
        point
    }

    /// All basic feasible solutions of a bounded feasible region, deduplicated and sorted.
    ///
    /// Walks the graph of feasible bases from the phase-one basis, following every
    /// minimum-ratio pivot, which reaches each basis of a nonempty polytope.
    pub fn vertices(&self) -> Vec<Vec<Q>> {
        let Some(start) = Tableau::phase_one(self) else {
            return Vec::new();
        };
        let mut seen_bases: BTreeSet<Vec<usize>> = BTreeSet::new();
        let mut points: BTreeSet<Vec<Q>> = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen_bases.insert(start.basis_key());
        queue.push_back(start);
        while let Some(t) = queue.pop_front() {
            points.insert(t.point());
            let in_basis: BTreeSet<usize> = t.basis.iter().copied().collect();
            for col in 0..t.ncols() {
                if in_basis.contains(&col) {
                    continue;
                }
                for r in t.min_ratio_rows(col) {
                    let mut next = t.clone();
                    next.pivot(r, col);
                    if seen_bases.insert(next.basis_key()) {
                        queue.push_back(next);
                    }
                }
            }
        }
        points.into_iter().collect()
    }
}

#[derive(Clone, Debug)]
struct Tableau {
    nvars: usize,
    a: Vec<Vec<Q>>,
    b: Vec<Q>,
    basis: Vec<usize>,
    reduced: Vec<Q>,
    value: Q,
}

impl Tableau {
    fn ncols(&self) -> usize {
        self.reduced.len()
    }

    /// Builds a tableau in a feasible basis without artificial columns, or `None` if infeasible.
    fn phase_one(lp: &LinearProgram) -> Option<Tableau> {
        let n = lp.vars;
        let mut rows: Vec<(Vec<Q>, Cmp, Q)> = Vec::with_capacity(lp.rows.len());
        for row in &lp.rows {
            let mut dense = vec![Q::zero(); n];
            for (v, c) in &row.terms {
                dense[*v] += c;
            }
            let (dense, cmp, rhs) = if row.rhs.is_negative() {
                (dense.into_iter().map(|c| -c).collect(), row.cmp.flipped(), -row.rhs.clone())
            } else {
                (dense, row.cmp, row.rhs.clone())
            };
            if dense.iter().all(Zero::is_zero) {
                let ok = match cmp {
                    Cmp::Le => Q::zero() <= rhs,
                    Cmp::Ge => Q::zero() >= rhs,
                    Cmp::Eq => rhs.is_zero(),
                };
                if !ok {
                    return None;
                }
                continue;
            }
            rows.push((dense, cmp, rhs));
        }
        let slacks = rows.iter().filter(|r| r.1 != Cmp::Eq).count();
        let arts = rows.iter().filter(|r| r.1 != Cmp::Le).count();
        let art_start = n + slacks;
        let ncols = art_start + arts;
        let mut a = Vec::with_capacity(rows.len());
        let mut b = Vec::with_capacity(rows.len());
        let mut basis = Vec::with_capacity(rows.len());
        let (mut next_slack, mut next_art) = (n, art_start);
        for (dense, cmp, rhs) in rows {
            let mut line = dense;
            line.resize(ncols, Q::zero());
            match cmp {
                Cmp::Le => {
                    line[next_slack] = Q::one();
                    basis.push(next_slack);
                    next_slack += 1;
                }
                Cmp::Ge => {
                    line[next_slack] = -Q::one();
                    next_slack += 1;
                    line[next_art] = Q::one();
                    basis.push(next_art);
                    next_art += 1;
                }
                Cmp::Eq => {
                    line[next_art] = Q::one();
                    basis.push(next_art);
                    next_art += 1;
                }
            }
            a.push(line);
            b.push(rhs);
        }
        let mut t = Tableau {
            nvars: n,
            a,
            b,
            basis,
            reduced: vec![Q::zero(); ncols],
            value: Q::zero(),
        };
        if arts > 0 {
            let mut cost = vec![Q::zero(); ncols];
            for c in cost.iter_mut().skip(art_start) {
                *c = Q::one();
            }
            t.set_cost(&cost);
            t.optimize();
            if t.value.is_positive() {
                return None;
            }
            let mut r = 0;
            while r < t.a.len() {
                if t.basis[r] >= art_start {
                    if let Some(col) = (0..art_start).find(|&c| !t.a[r][c].is_zero()) {
                        t.pivot(r, col);
                        r += 1;
                    } else {
                        t.a.remove(r);
                        t.b.remove(r);
                        t.basis.remove(r);
                    }
                } else {
                    r += 1;
                }
            }
            for line in t.a.iter_mut() {
                line.truncate(art_start);
            }
            t.reduced = vec![Q::zero(); art_start];
            t.value = Q::zero();
        }
        Some(t)
    }

    fn set_cost(&mut self, cost: &[Q]) {
        self.reduced = cost.to_vec();
        self.value = Q::zero();
        for (r, &bv) in self.basis.iter().enumerate() {
            let cb = cost[bv].clone();
            if cb.is_zero() {
                continue;
            }
            for (d, x) in self.reduced.iter_mut().zip(&self.a[r]) {
                if !x.is_zero() {
                    *d -= &cb * x;
                }
            }
            self.value += &cb * &self.b[r];
        }
    }

    /// Minimizes the current cost. Returns `false` when unbounded.
    fn optimize(&mut self) -> bool {
        loop {
            let Some(col) = (0..self.ncols()).find(|&c| self.reduced[c].is_negative()) else {
                return true;
            };
            let rows = self.min_ratio_rows(col);
            let Some(&r) = rows.iter().min_by_key(|&&r| self.basis[r]) else {
                return false;
            };
            self.pivot(r, col);
        }
    }

    fn min_ratio_rows(&self, col: usize) -> Vec<usize> {
        let mut best: Option<Q> = None;
        let mut rows = Vec::new();
        for r in 0..self.a.len() {
            let x = &self.a[r][col];
            if !x.is_positive() {
                continue;
            }
            let ratio = &self.b[r] / x;
            match &best {
                Some(bst) if ratio > *bst => {}
                Some(bst) if ratio == *bst => rows.push(r),
                _ => {
                    best = Some(ratio);
                    rows.clear();
                    rows.push(r);
                }
            }
        }
        rows
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.a[r][col].clone();
        if !p.is_one() {
            for x in self.a[r].iter_mut() {
                if !x.is_zero() {
                    *x /= &p;
                }
            }
            self.b[r] /= &p;
        }
        let prow = self.a[r].clone();
        let pb = self.b[r].clone();
        let nz: Vec<usize> = (0..prow.len()).filter(|&j| !prow[j].is_zero()).collect();
        for i in 0..self.a.len() {
            if i == r || self.a[i][col].is_zero() {
                continue;
            }
            let f = self.a[i][col].clone();
            for &j in &nz {
                let delta = &f * &prow[j];
                self.a[i][j] -= delta;
            }
            self.b[i] -= &f * &pb;
        }
        let f = self.reduced[col].clone();
        if !f.is_zero() {
            for &j in &nz {
                let delta = &f * &prow[j];
                self.reduced[j] -= delta;
            }
            self.value += &f * &pb;
        }
        self.basis[r] = col;
    }

    fn point(&self) -> Vec<Q> {
        let mut x = vec![Q::zero(); self.nvars];
        for (r, &bv) in self.basis.iter().enumerate() {
            if bv < self.nvars {
                x[bv] = self.b[r].clone();
            }
        }
        x
    }

    fn basis_key(&self) -> Vec<usize> {
        let mut k = self.basis.clone();
        k.sort_unstable();
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{q, qi};

    fn simplex_lp(n: usize) -> LinearProgram {
        let mut lp = LinearProgram::new(n);
        lp.push((0..n).map(|v| (v, qi(1))).collect(), Cmp::Eq, qi(1));
        lp
    }

    #[test]
    fn simple_optimum() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6
        let mut lp = LinearProgram::new(2);
        lp.push(vec![(0, qi(1)), (1, qi(2))], Cmp::Le, qi(4));
        lp.push(vec![(0, qi(3)), (1, qi(1))], Cmp::Le, qi(6));
        match lp.maximize(&[(0, qi(1)), (1, qi(1))]) {
            Outcome::Optimal { point, value } => {
                assert_eq!(value, q(14, 5));
                assert_eq!(point, vec![q(8, 5), q(6, 5)]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = simplex_lp(2);
        lp.push(vec![(0, qi(1))], Cmp::Ge, q(3, 5));
        lp.push(vec![(1, qi(1))], Cmp::Ge, q(3, 5));
        assert_eq!(lp.minimize(&[]), Outcome::Infeasible);
        let mut lp = LinearProgram::new(1);
        lp.push(vec![(0, qi(1))], Cmp::Ge, qi(1));
        assert_eq!(lp.maximize(&[(0, qi(1))]), Outcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = simplex_lp(3);
        lp.push(vec![(0, qi(2)), (1, qi(2)), (2, qi(2))], Cmp::Eq, qi(2));
        lp.push(vec![(0, qi(1))], Cmp::Eq, q(1, 2));
        assert_eq!(lp.vertices(), vec![vec![q(1, 2), qi(0), q(1, 2)], vec![q(1, 2), q(1, 2), qi(0)]]);
    }

    #[test]
    fn simplex_vertices() {
        let lp = simplex_lp(3);
        let v = lp.vertices();
        assert_eq!(v.len(), 3);
        for p in &v {
            assert_eq!(p.iter().filter(|x| x.is_one()).count(), 1);
        }
    }

    #[test]
    fn interval_vertices() {
        let mut lp = simplex_lp(2);
        lp.push(vec![(0, qi(1))], Cmp::Ge, q(1, 4));
        lp.push(vec![(0, qi(1))], Cmp::Le, q(3, 4));
        lp.push(vec![(1, qi(1))], Cmp::Ge, q(1, 4));
        lp.push(vec![(1, qi(1))], Cmp::Le, q(3, 4));
        assert_eq!(lp.vertices(), vec![vec![q(1, 4), q(3, 4)], vec![q(3, 4), q(1, 4)]]);
    }

    #[test]
    fn lexicographic_minimum() {
        let mut lp = simplex_lp(3);
        lp.push(vec![(0, qi(1))], Cmp::Ge, q(1, 3));
        lp.push(vec![(1, qi(1)), (2, qi(-1))], Cmp::Ge, qi(0));
        assert_eq!(lp.lex_min(), Some(vec![q(1, 3), q(1, 3), q(1, 3)]));
    }

    #[test]
    fn empty_program() {
        let lp = LinearProgram::new(0);
        assert_eq!(lp.vertices(), vec![Vec::<Q>::new()]);
        assert!(lp.is_feasible());
    }
}
