//! Isomorphism of timed models up to splitting of guards.
//!
//! Two edges are compared region by region: at every location and clock region, both models
//! must offer the same multiset of (action, modality, distribution constraint) over matching
//! targets. Constraints are compared semantically and their supports are normalized by
//! merging equal (reset set, target) pairs and dropping targets that can never carry mass.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::constraint::ProbConstraint;
use crate::guard::Modality;
use crate::model::{Apta, Edge, LocationId};
use crate::region::{image_and_trim, Region, RegionContext};

/// An edge enabled in one region, with its support still in source-model location indices.
#[derive(Clone, Debug)]
struct Offer {
    action: String,
    modality: Modality,
    support: Vec<(BTreeSet<String>, usize)>,
    constraint: ProbConstraint,
}

fn offer(m: &Apta, e: &Edge, target_map: &dyn Fn(usize) -> usize) -> Offer {
    let mut keys: Vec<(BTreeSet<String>, usize)> = e
        .branches
        .iter()
        .map(|b| (b.resets.iter().map(|c| m.clocks[c.0].clone()).collect(), target_map(b.target.0)))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let f: Vec<usize> = e
        .branches
        .iter()
        .map(|b| {
            let k = (b.resets.iter().map(|c| m.clocks[c.0].clone()).collect::<BTreeSet<String>>(), target_map(b.target.0));
            keys.iter().position(|x| *x == k).unwrap()
        })
        .collect();
    let (constraint, keep, _) = image_and_trim(&e.constraint, &f, keys.len());
    let mut k = 0;
    keys.retain(|_| {
        k += 1;
        keep[k - 1]
    });
    Offer { action: m.actions[e.action.0].clone(), modality: e.modality, support: keys, constraint }
}

fn same_offers(left: &[Offer], right: &[Offer]) -> bool {
    if left.len() != right.len() {
        return false;
    }
    let mut used = vec![false; right.len()];
    'outer: for o in left {
        for (i, r) in right.iter().enumerate() {
            if !used[i] && r.action == o.action && r.modality == o.modality && r.support == o.support && r.constraint.equivalent(&o.constraint) {
                used[i] = true;
                continue 'outer;
            }
        }
        return false;
    }
    true
}

struct Side<'a> {
    m: &'a Apta,
    cmap: Vec<usize>,
    order: Vec<usize>,
    reachable: Vec<bool>,
}

impl<'a> Side<'a> {
    fn new(m: &'a Apta, ctx: &RegionContext) -> Side<'a> {
        let reachable = m.reachable();
        let mut order = Vec::new();
        let mut seen = vec![false; m.locations.len()];
        let mut queue = VecDeque::from([m.initial.0]);
        seen[m.initial.0] = true;
        while let Some(l) = queue.pop_front() {
            order.push(l);
            for e in m.edges_from(LocationId(l)) {
                for b in &e.branches {
                    if reachable[b.target.0] && !seen[b.target.0] {
                        seen[b.target.0] = true;
                        queue.push_back(b.target.0);
                    }
                }
            }
        }
        Side { m, cmap: ctx.clock_map(m), order, reachable }
    }

    fn valuation(&self, l: usize) -> BTreeSet<BTreeSet<String>> {
        self.m.locations[l].valuation.iter().map(|s| s.iter().map(|p| self.m.props[p.0].clone()).collect()).collect()
    }

    fn offers(&self, ctx: &RegionContext, l: usize, r: &Region, target_map: &dyn Fn(usize) -> usize) -> Vec<Offer> {
        self.m
            .edges_from(LocationId(l))
            .filter(|e| ctx.entails(r, &e.guard, &self.cmap))
            .map(|e| offer(self.m, e, target_map))
            .collect()
    }

    /// Count of enabled edges per region, action and modality.
    fn signature(&self, ctx: &RegionContext, regions: &[Region], l: usize) -> Vec<(usize, String, Modality)> {
        let mut sig = Vec::new();
        for (i, r) in regions.iter().enumerate() {
            for e in self.m.edges_from(LocationId(l)).filter(|e| ctx.entails(r, &e.guard, &self.cmap)) {
                sig.push((i, self.m.actions[e.action.0].clone(), e.modality));
            }
        }
        sig.sort();
        sig
    }
}

/// A location bijection between the reachable parts of `a1` and `a2`, if one exists.
pub fn isomorphic(a1: &Apta, a2: &Apta) -> Option<Vec<(LocationId, LocationId)>> {
    let names = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>();
    if names(&a1.actions) != names(&a2.actions) || names(&a1.clocks) != names(&a2.clocks) {
        return None;
    }
    let ctx = RegionContext::of(&[a1, a2]);
    let regions = ctx.all_regions();
    let left = Side::new(a1, &ctx);
    let right = Side::new(a2, &ctx);
    if left.order.len() != right.order.len() {
        return None;
    }
    let sig_l: Vec<_> = (0..a1.locations.len()).map(|l| left.signature(&ctx, &regions, l)).collect();
    let sig_r: Vec<_> = (0..a2.locations.len()).map(|l| right.signature(&ctx, &regions, l)).collect();
    let mut search = Search {
        ctx: &ctx,
        regions: &regions,
        left: &left,
        right: &right,
        forward: vec![None; a1.locations.len()],
        backward: vec![None; a2.locations.len()],
        sig_l,
        sig_r,
    };
    if search.assign(0) {
        Some(left.order.iter().map(|&l| (LocationId(l), LocationId(search.forward[l].unwrap()))).collect())
    } else {
        None
    }
}

struct Search<'a> {
    ctx: &'a RegionContext,
    regions: &'a [Region],
    left: &'a Side<'a>,
    right: &'a Side<'a>,
    forward: Vec<Option<usize>>,
    backward: Vec<Option<usize>>,
    sig_l: Vec<Vec<(usize, String, Modality)>>,
    sig_r: Vec<Vec<(usize, String, Modality)>>,
}

impl Search<'_> {
    fn assign(&mut self, k: usize) -> bool {
        if k == self.left.order.len() {
            return true;
        }
        let l = self.left.order[k];
        let candidates: Vec<usize> = if k == 0 {
            vec![self.right.m.initial.0]
        } else {
            self.right.order.iter().copied().filter(|&r| self.backward[r].is_none() && r != self.right.m.initial.0).collect()
        };
        for r in candidates {
            if self.sig_l[l] != self.sig_r[r] || self.left.valuation(l) != self.right.valuation(r) {
                continue;
            }
            self.forward[l] = Some(r);
            self.backward[r] = Some(l);
            if self.locally_consistent() && self.assign(k + 1) {
                return true;
            }
            self.forward[l] = None;
            self.backward[r] = None;
        }
        false
    }

    /// Checks every assigned location whose possible targets are all assigned.
    fn locally_consistent(&self) -> bool {
        for &l in &self.left.order {
            let Some(r) = self.forward[l] else { continue };
            let ready = self.left.m.edges_from(LocationId(l)).all(|e| {
                let possible = e.constraint.possible_support();
                e.branches.iter().zip(possible).all(|(b, p)| !p || self.forward[b.target.0].is_some())
            });
            if !ready {
                continue;
            }
            let map_left = |t: usize| self.forward[t].unwrap_or(usize::MAX);
            let map_right = |t: usize| t;
            for region in self.regions {
                let lo = self.left.offers(self.ctx, l, region, &map_left);
                let ro = self.right.offers(self.ctx, r, region, &map_right);
                if lo.iter().chain(&ro).any(|o| o.support.iter().any(|(_, t)| *t == usize::MAX || !self.right.reachable[*t])) {
                    return false;
                }
                if !same_offers(&lo, &ro) {
                    return false;
                }
            }
        }
        true
    }
}
