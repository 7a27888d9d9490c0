//! Clock guards: conjunctions of `x ~ c` atoms kept in a canonical per-clock interval form.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use num_traits::{Signed, Zero};

use crate::num::Q;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }

    fn negated(self) -> Comparator {
        match self {
            Comparator::Lt => Comparator::Ge,
            Comparator::Le => Comparator::Gt,
            Comparator::Gt => Comparator::Le,
            Comparator::Ge => Comparator::Lt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub clock: usize,
    pub cmp: Comparator,
    pub bound: Q,
}

impl Atom {
    pub fn new(clock: usize, cmp: Comparator, bound: Q) -> Atom {
        Atom { clock, cmp, bound }
    }

    pub fn holds(&self, value: &Q) -> bool {
        match self.cmp {
            Comparator::Lt => *value < self.bound,
            Comparator::Le => *value <= self.bound,
            Comparator::Gt => *value > self.bound,
            Comparator::Ge => *value >= self.bound,
        }
    }
}

/// One side of a clock interval.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bound {
    pub value: Q,
    pub strict: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interval {
    pub lower: Option<Bound>,
    pub upper: Option<Bound>,
}

impl Interval {
    fn is_empty(&self) -> bool {
        match (&self.lower, &self.upper) {
            (Some(l), Some(u)) => l.value > u.value || (l.value == u.value && (l.strict || u.strict)),
            (None, Some(u)) => u.value.is_negative() || (u.value.is_zero() && u.strict),
            _ => false,
        }
    }

    fn tighten_lower(&mut self, b: Bound) {
        let replace = match &self.lower {
            None => true,
            Some(cur) => b.value > cur.value || (b.value == cur.value && b.strict && !cur.strict),
        };
        if replace {
            self.lower = Some(b);
        }
    }

    fn tighten_upper(&mut self, b: Bound) {
        let replace = match &self.upper {
            None => true,
            Some(cur) => b.value < cur.value || (b.value == cur.value && b.strict && !cur.strict),
        };
        if replace {
            self.upper = Some(b);
        }
    }

    pub fn contains(&self, v: &Q) -> bool {
        let lo = self.lower.as_ref().is_none_or(|b| if b.strict { *v > b.value } else { *v >= b.value });
        let hi = self.upper.as_ref().is_none_or(|b| if b.strict { *v < b.value } else { *v <= b.value });
        lo && hi && !v.is_negative()
    }
}

/// A conjunction of clock atoms. Two guards denoting the same set of valuations have the
/// same representation, except that every unsatisfiable guard is the single `false` value.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Guard {
    clocks: BTreeMap<usize, Interval>,
    unsat: bool,
}

impl Guard {
    pub fn truth() -> Guard {
        Guard::default()
    }

    pub fn falsity() -> Guard {
        Guard { clocks: BTreeMap::new(), unsat: true }
    }

    pub fn atom(atom: Atom) -> Guard {
        Guard::from_atoms([atom])
    }

    pub fn from_atoms(atoms: impl IntoIterator<Item = Atom>) -> Guard {
        let mut g = Guard::truth();
        for a in atoms {
            g.add(a);
        }
        g.canonical()
    }

    fn add(&mut self, a: Atom) {
        let iv = self.clocks.entry(a.clock).or_default();
        match a.cmp {
            Comparator::Lt => iv.tighten_upper(Bound { value: a.bound, strict: true }),
            Comparator::Le => iv.tighten_upper(Bound { value: a.bound, strict: false }),
            Comparator::Gt => iv.tighten_lower(Bound { value: a.bound, strict: true }),
            Comparator::Ge => iv.tighten_lower(Bound { value: a.bound, strict: false }),
        }
    }

    fn canonical(mut self) -> Guard {
        if self.unsat || self.clocks.values().any(Interval::is_empty) {
            return Guard::falsity();
        }
        for iv in self.clocks.values_mut() {
            if let Some(l) = &iv.lower {
                if l.value.is_negative() || (l.value.is_zero() && !l.strict) {
                    iv.lower = None;
                }
            }
        }
        self.clocks.retain(|_, iv| iv.lower.is_some() || iv.upper.is_some());
        self
    }

    pub fn is_true(&self) -> bool {
        !self.unsat && self.clocks.is_empty()
    }

    pub fn is_false(&self) -> bool {
        self.unsat
    }

    pub fn interval(&self, clock: usize) -> Option<&Interval> {
        self.clocks.get(&clock)
    }

    pub fn constrained_clocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.clocks.keys().copied()
    }

    /// Atoms in canonical order: by clock, lower bound before upper bound.
    pub fn atoms(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        for (&clock, iv) in &self.clocks {
            if let Some(l) = &iv.lower {
                let cmp = if l.strict { Comparator::Gt } else { Comparator::Ge };
                out.push(Atom::new(clock, cmp, l.value.clone()));
            }
            if let Some(u) = &iv.upper {
                let cmp = if u.strict { Comparator::Lt } else { Comparator::Le };
                out.push(Atom::new(clock, cmp, u.value.clone()));
            }
        }
        out
    }

    pub fn and(&self, other: &Guard) -> Guard {
        if self.unsat || other.unsat {
            return Guard::falsity();
        }
        let mut g = self.clone();
        for a in other.atoms() {
            g.add(a);
        }
        g.canonical()
    }

    /// Disjoint guards whose union is the complement of `self`.
    pub fn negate(&self) -> Vec<Guard> {
        if self.unsat {
            return alloc::vec![Guard::truth()];
        }
        let atoms = self.atoms();
        let mut out = Vec::new();
        for i in 0..atoms.len() {
            let mut g = Guard::from_atoms(atoms[..i].iter().cloned());
            let a = &atoms[i];
            g = g.and(&Guard::atom(Atom::new(a.clock, a.cmp.negated(), a.bound.clone())));
            if !g.is_false() {
                out.push(g);
            }
        }
        out
    }

    pub fn holds(&self, valuation: &[Q]) -> bool {
        !self.unsat && self.clocks.iter().all(|(&c, iv)| iv.contains(&valuation[c]))
    }

    pub fn constants(&self) -> impl Iterator<Item = &Q> + '_ {
        self.clocks
            .values()
            .flat_map(|iv| iv.lower.iter().chain(iv.upper.iter()).map(|b| &b.value))
    }

    pub fn remap_clocks(&self, map: &[usize]) -> Guard {
        let atoms = self.atoms().into_iter().map(|a| Atom::new(map[a.clock], a.cmp, a.bound));
        if self.unsat {
            return Guard::falsity();
        }
        Guard::from_atoms(atoms)
    }
}

/// Three-valued modality with order `Bot < May < Must`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Bot,
    May,
    Must,
}

impl Modality {
    pub fn meet(self, other: Modality) -> Modality {
        self.min(other)
    }

    pub fn join(self, other: Modality) -> Modality {
        self.max(other)
    }
}
