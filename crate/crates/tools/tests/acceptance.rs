//! Acceptance suite: one line per criterion, run with `cargo test --test acceptance`.
//!
//! Criteria listed in `EXPECTED_FAILURES` are reported but do not fail the run; if one of
//! them starts passing the run fails, so the list has to be kept honest.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use apta_core::abstraction::{abstract_model, abstraction, preprocess, AbstractionMap};
use apta_core::apa::{Apa, ApaState};
use apta_core::composition::{
    compose_apa, compose_parallel, conjoin, conjoin_apa, equalize_for_conjunction, equalize_for_parallel,
};
use apta_core::consistency::{
    divergence, extract_implementation, is_empty_specification, prune, prune_star, solve_buchi_almost_sure,
    solve_buchi_sure,
};
use apta_core::constraint::{LinConstraint, Polytope, ProbConstraint, Rel};
use apta_core::guard::{Guard, Modality};
use apta_core::iso::isomorphic;
use apta_core::model::{Apta, Edge};
use apta_core::num::{q, qi, Q};
use apta_core::region::{build_region, RegionContext};
use apta_core::relations::{
    apta_strong_refine, apta_weak_refine, lift_check, satisfies, weak_refine, RefinementResult, Verdict,
};
use apta_tools::format::parse_abstraction_map;
use apta_tools::gen::{
    random_abstractable, random_apta, random_deterministic, random_distribution, random_fully_deterministic,
    random_game, random_guard, tighten, Shape,
};
use common::{fixture, fixture_path, game_oracle, strategy_count, transport_feasible, weak_refinement_oracle, FiniteTransition};
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Criteria known not to hold for this build; see the README.
const EXPECTED_FAILURES: &[usize] = &[1];
/// Share of checks a suite may leave undecided.
const MAX_UNVERIFIED_PERCENT: usize = 5;
const SCHEDULER_LIMIT: Duration = Duration::from_secs(10);
const CONJUNCTION_LIMIT: Duration = Duration::from_secs(30);
const DIVERGENCE_LIMIT: Duration = Duration::from_secs(60);
const GRID_MAX_DENOMINATOR: i64 = 30;
const MAX_ORACLE_STRATEGIES: usize = 5000;

type Outcome = Result<String, String>;

/// Verdict counts of a property suite.
#[derive(Default)]
struct Tally {
    checks: usize,
    unverified: usize,
    failures: Vec<String>,
}

impl Tally {
    fn expect_holds(&mut self, what: impl FnOnce() -> String, v: Verdict) {
        self.checks += 1;
        match v {
            Verdict::Holds => {}
            Verdict::Inconclusive => self.unverified += 1,
            Verdict::Fails => self.failures.push(what()),
        }
    }

    fn expect(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    fn finish(self, extra: &str) -> Outcome {
        let summary = format!("{} checks, {} unverified{}", self.checks, self.unverified, extra);
        if !self.failures.is_empty() {
            let shown: Vec<&str> = self.failures.iter().take(3).map(String::as_str).collect();
            return Err(format!("{summary}; {} failures: {}", self.failures.len(), shown.join("; ")));
        }
        if self.unverified * 100 > self.checks * MAX_UNVERIFIED_PERCENT {
            return Err(format!("{summary}; more than {MAX_UNVERIFIED_PERCENT}% unverified"));
        }
        Ok(summary)
    }
}

fn edge<'a>(m: &'a Apta, location: &str, action: &str) -> &'a Edge {
    let l = m.location_named(location).unwrap_or_else(|| panic!("no location {location}"));
    let a = m.action_named(action).unwrap_or_else(|| panic!("no action {action}"));
    m.edges
        .iter()
        .find(|e| e.source == l && e.action == a && e.modality != Modality::Bot && e.constraint.sat_nonempty())
        .unwrap_or_else(|| panic!("no {action} edge at {location}"))
}

/// Branch index of each named target, in the order given.
fn branch_order(m: &Apta, e: &Edge, targets: &[&str]) -> Vec<usize> {
    assert_eq!(e.branches.len(), targets.len(), "unexpected support size");
    targets
        .iter()
        .map(|t| {
            let l = m.location_named(t).unwrap_or_else(|| panic!("no location {t}"));
            e.branches.iter().position(|b| b.target == l).unwrap_or_else(|| panic!("no branch to {t}"))
        })
        .collect()
}

/// Reorders a vector over branches into the named order.
fn by_name(v: &[Q], order: &[usize]) -> Vec<Q> {
    order.iter().map(|&i| v[i].clone()).collect()
}

/// Places a vector in the named order onto branch positions.
fn by_branch(v: &[Q], order: &[usize]) -> Vec<Q> {
    let mut out = vec![Q::zero(); v.len()];
    for (k, &i) in order.iter().enumerate() {
        out[i] = v[k].clone();
    }
    out
}

fn member(c: &ProbConstraint, mu: &[Q]) -> bool {
    c.member(mu).expect("member of a matching dimension")
}

fn weak_both_ways(a: &Apa<apta_core::region::RegionLabel>, b: &Apa<apta_core::region::RegionLabel>, tally: &mut Tally, what: &str) {
    tally.expect_holds(|| format!("{what}: left to right"), weak_refine(a, b).verdict);
    tally.expect_holds(|| format!("{what}: right to left"), weak_refine(b, a).verdict);
}

fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

fn consistent(m: &Apta) -> bool {
    !is_empty_specification(&prune_star(m))
}

// ---------------------------------------------------------------------------------------

fn scheduler_satisfaction() -> Outcome {
    let start = Instant::now();
    let sat = satisfies(&fixture("scheduler_impl.pta"), &fixture("scheduler.apta"));
    let elapsed = start.elapsed();
    let hulls: BTreeSet<String> = sat
        .splits
        .iter()
        .filter(|s| s.location == "l0")
        .flat_map(|s| s.groups.iter().flat_map(|(_, h)| h.iter().cloned()))
        .collect();
    let missing: Vec<&str> = ["(0,2]", "(2,6]", "(6,10]"].into_iter().filter(|h| !hulls.contains(*h)).collect();
    let detail = format!("verdict {:?}, l0 groups {:?}, {:.2?}", sat.result.verdict, hulls, elapsed);
    if sat.result.verdict != Verdict::Holds {
        return Err(format!("{detail}; the implementation does not satisfy the scheduler"));
    }
    if !missing.is_empty() {
        return Err(format!("{detail}; missing {missing:?}"));
    }
    if elapsed > SCHEDULER_LIMIT {
        return Err(format!("{detail}; over {SCHEDULER_LIMIT:?}"));
    }
    Ok(detail)
}

fn start_constraint() -> Outcome {
    let spec = fixture("scheduler.apta");
    let e = edge(&spec, "l1", "start");
    let order = branch_order(&spec, e, &["l2", "l3"]);
    let vertices: BTreeSet<Vec<Q>> = e.constraint.vertices().iter().map(|v| by_name(v, &order)).collect();
    let expected: BTreeSet<Vec<Q>> = [vec![q(1, 4), q(3, 4)], vec![q(3, 4), q(1, 4)]].into_iter().collect();
    if vertices != expected {
        return Err(format!("vertices {vertices:?}"));
    }
    // the implementation moves to l2, l3 and l3' which both stand for l3
    let mu = vec![q(2, 5), q(3, 10), q(3, 10)];
    let image = by_branch(&[q(2, 5), q(3, 5)], &order);
    if !member(&e.constraint, &image) {
        return Err("marginal (0.4, 0.6) rejected".into());
    }
    let allowed: Vec<Vec<bool>> = [0usize, 1, 1].iter().map(|&k| (0..2).map(|j| j == order[k]).collect()).collect();
    if lift_check(&mu, &image, &allowed).is_none() {
        return Err("no weight function for (0.4, 0.3, 0.3)".into());
    }
    let mut blocks = vec![Vec::new(); 2];
    blocks[order[0]].push(0);
    blocks[order[1]].extend([1, 2]);
    let lifted = e.constraint.marginal_substitute(&blocks, 3).map_err(|x| x.to_string())?;
    if !member(&lifted, &mu) {
        return Err("(0.4, 0.3, 0.3) outside the lifted constraint".into());
    }
    if member(&lifted, &[q(1, 5), q(2, 5), q(2, 5)]) {
        return Err("(0.2, 0.4, 0.4) accepted by the lifted constraint".into());
    }
    Ok("vertices {(1/4, 3/4), (3/4, 1/4)}, (0.4, 0.3, 0.3) lifts".into())
}

/// Compositions of `total` into `parts` non-negative integers.
fn compositions(total: i64, parts: usize, f: &mut dyn FnMut(&[i64])) {
    fn go(left: i64, cur: &mut Vec<i64>, parts: usize, f: &mut dyn FnMut(&[i64])) {
        if cur.len() + 1 == parts {
            cur.push(left);
            f(cur);
            cur.pop();
            return;
        }
        for x in 0..=left {
            cur.push(x);
            go(left - x, cur, parts, f);
            cur.pop();
        }
    }
    go(total, &mut Vec::with_capacity(parts), parts, f);
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// The client constraint on `(0, 2)` and the second client's on `(0', 1', 2')`.
fn conjunction_system(r: &[i64], d: i64) -> bool {
    let p1 = r[0] + r[1] + r[2];
    let (q1, q2) = (r[0] + r[3], r[1] + r[4]);
    3 * p1 <= d && 5 * q1 <= d && 3 * q2 >= d
}

fn conjunction_marginals() -> Outcome {
    let start = Instant::now();
    let cl = fixture("cl.apeca");
    let cl2 = fixture("cl2.apeca");
    let conj = conjoin(&cl, &cl2).map_err(|e| e.to_string())?.model;
    let e = edge(&conj, "1|1''", "grant");
    let names = ["0|0'", "0|1'", "0|2'", "2|0'", "2|1'", "2|2'"];
    let order = branch_order(&conj, e, &names);
    let phi1 = edge(&cl, "1", "grant");
    let phi1_order = branch_order(&cl, phi1, &["0", "2"]);
    let phi4 = edge(&cl2, "1''", "grant");
    let phi4_order = branch_order(&cl2, phi4, &["0'", "1'", "2'"]);

    let vertices = e.constraint.vertices();
    if vertices.is_empty() {
        return Err("empty conjunction constraint".into());
    }
    for v in &vertices {
        let r = by_name(v, &order);
        let p = [&r[0] + &r[1] + &r[2], &r[3] + &r[4] + &r[5]];
        let qs = [&r[0] + &r[3], &r[1] + &r[4], &r[2] + &r[5]];
        let bounds = r.iter().all(|x| !x.is_negative())
            && r.iter().sum::<Q>() == Q::one()
            && p[0] <= q(1, 3)
            && qs[0] <= q(1, 5)
            && qs[1] >= q(1, 3);
        if !bounds || !member(&phi1.constraint, &by_branch(&p, &phi1_order)) || !member(&phi4.constraint, &by_branch(&qs, &phi4_order)) {
            return Err(format!("vertex {r:?} violates the marginal system"));
        }
    }

    // The same system written directly over r1..r6.
    let row = |coeffs: [i64; 6], rhs: Q| LinConstraint::new(coeffs.iter().map(|&c| qi(c)).collect(), Rel::Le, rhs);
    let direct = ProbConstraint::from_polytope(Polytope {
        dim: 6,
        rows: vec![row([1, 1, 1, 0, 0, 0], q(1, 3)), row([1, 0, 0, 1, 0, 0], q(1, 5)), row([0, -1, 0, 0, -1, 0], q(-1, 3))],
    });
    let mut points = 0usize;
    let mut disagreements = Vec::new();
    for d in 1..=GRID_MAX_DENOMINATOR {
        let values: Vec<Q> = (0..=d).map(|k| q(k, d)).collect();
        compositions(d, 6, &mut |r| {
            if r.iter().fold(d, |g, &x| gcd(g, x)) != 1 {
                return;
            }
            points += 1;
            let expected = conjunction_system(r, d);
            let named: Vec<Q> = r.iter().map(|&x| values[x as usize].clone()).collect();
            let computed = member(&e.constraint, &by_branch(&named, &order));
            let written = member(&direct, &named);
            if computed != expected || written != expected {
                disagreements.push(format!("{r:?}/{d}"));
            }
        });
    }
    let elapsed = start.elapsed();
    let detail = format!("{} vertices, {points} grid points up to denominator {GRID_MAX_DENOMINATOR}, {elapsed:.2?}", vertices.len());
    if !disagreements.is_empty() {
        return Err(format!("{detail}; {} disagreements, first {}", disagreements.len(), disagreements[0]));
    }
    if elapsed > CONJUNCTION_LIMIT {
        return Err(format!("{detail}; over {CONJUNCTION_LIMIT:?}"));
    }
    Ok(detail)
}

fn parallel_product() -> Outcome {
    let cl = fixture("cl.apeca");
    let acc = fixture("acc.apeca");
    let par = compose_parallel(&cl, &acc).map_err(|e| e.to_string())?.model;
    let e = edge(&par, "1|1'", "grant");
    let order = branch_order(&par, e, &["0|0'", "0|1'", "2|0'", "2|1'"]);
    let (p1, p3) = (q(1, 4), q(1, 2));
    let (p2, p4) = (Q::one() - &p1, Q::one() - &p3);
    let mu = vec![&p1 * &p3, &p1 * &p4, &p2 * &p3, &p2 * &p4];
    if mu != vec![q(1, 8), q(1, 8), q(3, 8), q(3, 8)] {
        return Err(format!("induced distribution {mu:?}"));
    }
    if !member(&e.constraint, &by_branch(&mu, &order)) {
        return Err("product distribution rejected".into());
    }
    if member(&e.constraint, &by_branch(&[q(1, 4), qi(0), q(1, 4), q(1, 2)], &order)) {
        return Err("non-product distribution with the same marginals accepted".into());
    }
    // Grid: accepted exactly when the distribution factors with admissible marginals.
    let mut points = 0;
    for d in 1..=12i64 {
        let mut bad = None;
        compositions(d, 4, &mut |r| {
            if r.iter().fold(d, |g, &x| gcd(g, x)) != 1 || bad.is_some() {
                return;
            }
            points += 1;
            let factors = r[0] * r[3] == r[1] * r[2];
            let expected = factors && 3 * (r[0] + r[1]) <= d && 2 * (r[0] + r[2]) <= d;
            let named: Vec<Q> = r.iter().map(|&x| q(x, d)).collect();
            if member(&e.constraint, &by_branch(&named, &order)) != expected {
                bad = Some(format!("{r:?}/{d}"));
            }
        });
        if let Some(b) = bad {
            return Err(format!("grid point {b} misclassified"));
        }
    }
    Ok(format!("(1/8, 1/8, 3/8, 3/8) accepted, (1/4, 0, 1/4, 1/2) rejected, {points} grid points agree"))
}

fn pruning_preserves_implementations() -> Outcome {
    let mut r = rng(5);
    let shape = Shape::small_apta();
    let mut tally = Tally::default();
    let (mut consistent_models, mut implementations) = (0, 0);
    for i in 0..200 {
        let a = random_apta(&mut r, &shape);
        let once = prune(&a);
        let star = prune_star(&a);
        let empty = is_empty_specification(&star);
        let extracted = extract_implementation(&a);
        tally.expect(extracted.is_some() != empty, || format!("model {i}: extraction and pruning disagree on consistency"));
        tally.expect(extract_implementation(&star).is_some() != empty, || format!("model {i}: pruned model extraction"));
        let mut candidates: Vec<Apta> = extracted.into_iter().collect();
        if let Some(x) = extract_implementation(&star) {
            candidates.push(x);
        }
        for _ in 0..2 {
            candidates.extend(extract_implementation(&tighten(&mut r, &a)));
        }
        if !empty {
            consistent_models += 1;
            for (k, m) in candidates.iter().take(2).enumerate() {
                tally.expect_holds(|| format!("model {i}: extracted implementation {k} does not satisfy it"), satisfies(m, &a).result.verdict);
            }
        }
        for (k, m) in candidates.iter().enumerate() {
            implementations += 1;
            let v: Vec<Verdict> = [&a, &once, &star].iter().map(|s| satisfies(m, s).result.verdict).collect();
            if v.contains(&Verdict::Inconclusive) {
                tally.checks += 1;
                tally.unverified += 1;
                continue;
            }
            tally.expect(v[0] == v[1] && v[1] == v[2], || format!("model {i}, implementation {k}: verdicts {v:?} across pruning"));
        }
    }
    tally.finish(&format!(", {consistent_models} consistent models, {implementations} implementations compared"))
}

fn region_of_pair(e1: &Apta, e2: &Apta, product: &Apta) -> (Apa<apta_core::region::RegionLabel>, Apa<apta_core::region::RegionLabel>, Apa<apta_core::region::RegionLabel>) {
    let ctx = RegionContext::of(&[e1, e2, product]);
    (build_region(e1, &ctx).apa, build_region(e2, &ctx).apa, build_region(product, &ctx).apa)
}

fn conjunction_regions(e1: &Apta, e2: &Apta, tally: &mut Tally, what: &str) {
    let conj = match conjoin(e1, e2) {
        Ok(p) => p.model,
        Err(x) => return tally.expect(false, || format!("{what}: {x}")),
    };
    let (q1, q2) = equalize_for_conjunction(e1, e2);
    let (r1, r2, rc) = region_of_pair(&q1, &q2, &conj);
    match conjoin_apa(&r1, &r2) {
        Ok(rhs) => weak_both_ways(&rc, &rhs, tally, what),
        Err(x) => tally.expect(false, || format!("{what}: {x}")),
    }
}

fn parallel_regions(e1: &Apta, e2: &Apta, tally: &mut Tally, what: &str) {
    let par = match compose_parallel(e1, e2) {
        Ok(p) => p.model,
        Err(x) => return tally.expect(false, || format!("{what}: {x}")),
    };
    let (q1, q2) = equalize_for_parallel(e1, e2);
    let (r1, r2, rp) = region_of_pair(&q1, &q2, &par);
    match compose_apa(&r1, &r2) {
        Ok(rhs) => weak_both_ways(&rp, &rhs, tally, what),
        Err(x) => tally.expect(false, || format!("{what}: {x}")),
    }
}

fn regions_commute() -> Outcome {
    let mut tally = Tally::default();
    conjunction_regions(&fixture("cl.apeca"), &fixture("cl2.apeca"), &mut tally, "client conjunction");
    parallel_regions(&fixture("cl.apeca"), &fixture("acc.apeca"), &mut tally, "client and controller");
    let mut r = rng(6);
    let shared = Shape::small_apeca(&["p", "q"]);
    for i in 0..100 {
        let e1 = random_deterministic(&mut r, &shared);
        let e2 = random_deterministic(&mut r, &shared);
        conjunction_regions(&e1, &e2, &mut tally, &format!("conjunction pair {i}"));
    }
    let (left, right) = (Shape::small_apeca(&["p"]), Shape::small_apeca(&["q"]));
    for i in 0..100 {
        let e1 = random_apta(&mut r, &left);
        let e2 = random_apta(&mut r, &right);
        parallel_regions(&e1, &e2, &mut tally, &format!("parallel pair {i}"));
    }
    tally.finish("")
}

fn consistent_deterministic(r: &mut StdRng, shape: &Shape) -> Apta {
    loop {
        let m = random_deterministic(r, shape);
        if consistent(&m) {
            return m;
        }
    }
}

fn conjunction_and_precongruence() -> Outcome {
    let mut r = rng(7);
    let mut tally = Tally::default();
    let shared = Shape::small_apeca(&["p", "q"]);
    let (mut vacuous, mut premises, mut implementations, mut congruence) = (0, 0, 0, 0);
    for i in 0..100 {
        let (e1, e2) = if i % 2 == 0 {
            (consistent_deterministic(&mut r, &shared), consistent_deterministic(&mut r, &shared))
        } else {
            // two tightenings of one model rarely contradict each other
            let base = consistent_deterministic(&mut r, &shared);
            loop {
                let (x, y) = (tighten(&mut r, &base), tighten(&mut r, &base));
                if consistent(&x) && consistent(&y) {
                    break (x, y);
                }
            }
        };
        let conj = match conjoin(&e1, &e2) {
            Ok(p) => p.model,
            Err(x) => {
                tally.expect(false, || format!("triple {i}: {x}"));
                continue;
            }
        };
        let (q1, q2) = equalize_for_conjunction(&e1, &e2);
        let glb = prune_star(&conj);
        if is_empty_specification(&glb) {
            vacuous += 1;
        }
        tally.expect_holds(|| format!("triple {i}: pruned conjunction does not refine the left"), apta_weak_refine(&glb, &q1).verdict);
        tally.expect_holds(|| format!("triple {i}: pruned conjunction does not refine the right"), apta_weak_refine(&glb, &q2).verdict);

        let mut lower: Vec<Apta> = Vec::new();
        lower.extend(extract_implementation(&q1));
        lower.extend(extract_implementation(&q2));
        lower.extend(extract_implementation(&glb));
        lower.push(tighten(&mut r, &q1));
        lower.push(tighten(&mut r, &q2));
        if !is_empty_specification(&glb) {
            lower.push(tighten(&mut r, &glb));
        }
        // Candidates are pruned first: a reachable inconsistent location behind a may edge
        // keeps that edge alive in E3 while the pruned conjunction drops it.
        let lower: Vec<Apta> = lower.iter().map(prune_star).filter(|e3| !is_empty_specification(e3)).collect();
        for (k, e3) in lower.iter().enumerate() {
            let below = [&q1, &q2].iter().map(|s| apta_weak_refine(e3, s).verdict).collect::<Vec<_>>();
            if below.iter().all(|v| *v == Verdict::Holds) {
                premises += 1;
                tally.expect_holds(|| format!("triple {i}, lower bound {k}: not below the pruned conjunction"), apta_weak_refine(e3, &glb).verdict);
            }
        }

        let mut models: Vec<Apta> = extract_implementation(&conj).into_iter().collect();
        models.extend(extract_implementation(&tighten(&mut r, &conj)));
        for m in &models {
            if satisfies(m, &conj).result.verdict != Verdict::Holds {
                continue;
            }
            implementations += 1;
            tally.expect_holds(|| format!("triple {i}: implementation of the conjunction misses the left"), satisfies(m, &q1).result.verdict);
            tally.expect_holds(|| format!("triple {i}: implementation of the conjunction misses the right"), satisfies(m, &q2).result.verdict);
        }
    }

    let (left, right) = (Shape::small_apeca(&["p"]), Shape::small_apeca(&["q"]));
    for i in 0..100 {
        let e2 = random_apta(&mut r, &left);
        let e1 = tighten(&mut r, &e2);
        let e3 = random_apta(&mut r, &right);
        if apta_weak_refine(&e1, &e2).verdict != Verdict::Holds {
            continue;
        }
        congruence += 1;
        let (Ok(p1), Ok(p2)) = (compose_parallel(&e1, &e3), compose_parallel(&e2, &e3)) else {
            tally.expect(false, || format!("triple {i}: composition failed"));
            continue;
        };
        tally.expect_holds(|| format!("triple {i}: composition breaks refinement"), apta_weak_refine(&p1.model, &p2.model).verdict);
    }
    if premises == 0 || implementations == 0 || congruence == 0 {
        return Err(format!("degenerate sample: {premises} lower bounds, {implementations} implementations, {congruence} refining pairs"));
    }
    tally.finish(&format!(
        ", {vacuous} empty conjunctions, {premises} common lower bounds, {implementations} conjunction implementations, {congruence} refining pairs composed"
    ))
}

fn abstraction_suites() -> Outcome {
    let mut tally = Tally::default();
    let cl1 = fixture("cl1.apeca");
    let pairs = parse_abstraction_map(&std::fs::read_to_string(fixture_path("cl1.map")).unwrap()).map_err(|e| e.to_string())?;
    let alpha = AbstractionMap::from_pairs(&cl1, &pairs).map_err(|e| e.to_string())?;
    let abs = abstraction(&cl1, &alpha).map_err(|e| e.to_string())?.model;
    tally.expect_holds(|| "client does not refine its abstraction".into(), apta_weak_refine(&cl1, &abs).verdict);
    tally.expect(isomorphic(&abs, &fixture("cl1_abstract.apeca")).is_some(), || "abstraction differs from the stored one".into());

    let mut r = rng(8);
    for i in 0..100 {
        let shape = if i % 2 == 0 { Shape::small_apta() } else { Shape::small_apeca(&["p", "q"]) };
        let (m, alpha) = random_abstractable(&mut r, &shape);
        match abstraction(&m, &alpha) {
            Ok(abs) => tally.expect_holds(|| format!("model {i} does not refine its abstraction"), apta_weak_refine(&m, &abs.model).verdict),
            Err(x) => tally.expect(false, || format!("model {i}: {x}")),
        }
    }

    let (left, right) = (Shape::small_apeca(&["p"]), Shape::small_apeca(&["q"]));
    for i in 0..50 {
        let (e1, a1) = random_abstractable(&mut r, &left);
        let (e2, a2) = random_abstractable(&mut r, &right);
        if let Err(x) = abstraction_equalities(&e1, &a1, &e2, &a2, &mut tally, i) {
            tally.expect(false, || format!("quadruple {i}: {x}"));
        }
    }
    tally.finish("")
}

fn abstraction_equalities(e1: &Apta, a1: &AbstractionMap, e2: &Apta, a2: &AbstractionMap, tally: &mut Tally, i: usize) -> Result<(), String> {
    let s = |x: &dyn std::fmt::Display| x.to_string();
    let both = AbstractionMap::product(a1, a2);
    let (p1, p2) = (preprocess(e1, a1).map_err(|x| s(&x))?, preprocess(e2, a2).map_err(|x| s(&x))?);
    let whole = compose_parallel(e1, e2).map_err(|x| s(&x))?.model;
    let pre_par = compose_parallel(&p1, &p2).map_err(|x| s(&x))?.model;
    let par_pre = preprocess(&whole, &both).map_err(|x| s(&x))?;
    tally.expect(isomorphic(&pre_par, &par_pre).is_some(), || format!("quadruple {i}: pre-processing does not commute with composition"));

    let abs1 = abstract_model(&p1, a1).map_err(|x| s(&x))?.model;
    let abs2 = abstract_model(&p2, a2).map_err(|x| s(&x))?.model;
    let abs_par = compose_parallel(&abs1, &abs2).map_err(|x| s(&x))?.model;
    let par_abs = abstract_model(&pre_par, &both).map_err(|x| s(&x))?.model;
    tally.expect(isomorphic(&abs_par, &par_abs).is_some(), || format!("quadruple {i}: quotient does not commute with composition"));
    let whole_abs = abstraction(&whole, &both).map_err(|x| s(&x))?.model;
    tally.expect(isomorphic(&abs_par, &whole_abs).is_some(), || format!("quadruple {i}: componentwise abstraction differs from abstracting the product"));
    Ok(())
}

fn refinement_hierarchy() -> Outcome {
    let mut tally = Tally::default();
    let (left, right) = (fixture("weak_not_strong_left.apta"), fixture("weak_not_strong_right.apta"));
    tally.expect_holds(|| "stored pair: weak refinement fails".into(), apta_weak_refine(&left, &right).verdict);
    tally.expect(apta_strong_refine(&left, &right).verdict == Verdict::Fails, || "stored pair: strong refinement does not fail".into());

    let mut r = rng(9);
    let mut implied = 0;
    let mut strong_implies_weak = |a: &Apta, b: &Apta, tally: &mut Tally, what: String| -> (RefinementResult, RefinementResult) {
        let (w, s) = (apta_weak_refine(a, b), apta_strong_refine(a, b));
        if s.verdict == Verdict::Holds {
            implied += 1;
            tally.expect_holds(|| format!("{what}: strong holds, weak does not"), w.verdict);
        }
        (w, s)
    };
    let shape = Shape::small_apta();
    for i in 0..100 {
        let b = random_apta(&mut r, &shape);
        let a = tighten(&mut r, &b);
        strong_implies_weak(&a, &b, &mut tally, format!("pair {i}"));
    }
    let mut coincide = 0;
    for i in 0..100 {
        let b = random_fully_deterministic(&mut r, &shape);
        let a = tighten(&mut r, &b);
        for (x, y, dir) in [(&a, &b, "down"), (&b, &a, "up")] {
            let (w, s) = strong_implies_weak(x, y, &mut tally, format!("deterministic pair {i} {dir}"));
            if w.verdict == Verdict::Inconclusive || s.verdict == Verdict::Inconclusive {
                tally.checks += 1;
                tally.unverified += 1;
                continue;
            }
            coincide += 1;
            tally.expect(w.verdict == s.verdict, || format!("deterministic pair {i} {dir}: weak {:?}, strong {:?}", w.verdict, s.verdict));
        }
    }
    tally.finish(&format!(", {implied} strong refinements, {coincide} deterministic comparisons"))
}

fn divergence_games() -> Outcome {
    let start = Instant::now();
    let mut tally = Tally::default();
    for (name, sd, pd) in [("zeno_trap.apta", false, false), ("reset_loop.apta", true, true), ("chance_escape.apta", false, true)] {
        match divergence(&fixture(name)) {
            Ok(v) => tally.expect(v.sure == sd && v.almost_sure == pd, || format!("{name}: sd {} pd {}", v.sure, v.almost_sure)),
            Err(x) => tally.expect(false, || format!("{name}: {x}")),
        }
    }
    let mut r = rng(10);
    let mut games = 0;
    while games < 50 {
        let n = r.gen_range(2..=12);
        let g = random_game(&mut r, n, 3);
        if strategy_count(&g) > MAX_ORACLE_STRATEGIES {
            continue;
        }
        games += 1;
        let sure = solve_buchi_sure(&g).winning;
        let almost = solve_buchi_almost_sure(&g).winning;
        tally.expect(sure == game_oracle(&g, false), || format!("game {games}: sure winning region {sure:?}"));
        tally.expect(almost == game_oracle(&g, true), || format!("game {games}: almost-sure winning region {almost:?}"));
    }
    let elapsed = start.elapsed();
    if elapsed > DIVERGENCE_LIMIT {
        tally.expect(false, || format!("over {DIVERGENCE_LIMIT:?}"));
    }
    tally.finish(&format!(", verdicts per reconstructed game, {elapsed:.2?}"))
}

fn small_distribution(r: &mut StdRng, n: usize) -> Vec<Q> {
    if r.gen_bool(0.3) {
        let k = r.gen_range(0..n);
        return (0..n).map(|i| if i == k { qi(1) } else { qi(0) }).collect();
    }
    let den = r.gen_range(n as i64..=4);
    random_distribution(r, n, den)
}

/// Region signature computed directly from a valuation: capped integer parts, zero
/// fractional parts, and the order of the remaining fractional parts.
fn signature(v: &[Q], max: i64) -> (Vec<Option<(BigInt, bool)>>, Vec<std::cmp::Ordering>) {
    let bound = qi(max);
    let cells: Vec<Option<(BigInt, bool)>> =
        v.iter().map(|x| if *x > bound { None } else { Some((x.floor().to_integer(), x.fract().is_zero())) }).collect();
    let mut order = Vec::new();
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            if matches!(cells[i], Some((_, false))) && matches!(cells[j], Some((_, false))) {
                order.push(v[i].fract().cmp(&v[j].fract()));
            }
        }
    }
    (cells, order)
}

fn tiny_apa(r: &mut StdRng) -> (usize, Vec<FiniteTransition>, Vec<BTreeSet<BTreeSet<String>>>) {
    let n = r.gen_range(1..=3);
    let options: [&[&[&str]]; 3] = [&[&[]], &[&["p"]], &[&[], &["p"]]];
    let vals = (0..n)
        .map(|_| options[r.gen_range(0..3)].iter().map(|s| s.iter().map(|x| x.to_string()).collect()).collect())
        .collect();
    let mut ts = Vec::new();
    for s in 0..n {
        for _ in 0..r.gen_range(0..=2) {
            let mut targets: Vec<usize> = (0..r.gen_range(1..=2)).map(|_| r.gen_range(0..n)).collect();
            targets.sort();
            targets.dedup();
            let points = (0..r.gen_range(1..=2)).map(|_| small_distribution(r, targets.len())).collect();
            let modality = if r.gen_bool(0.5) { Modality::Must } else { Modality::May };
            ts.push(FiniteTransition { source: s, label: r.gen_range(0..2), modality, targets, points });
        }
    }
    (n, ts, vals)
}

/// A loosened copy: extra points, musts turned may, larger valuations.
fn loosen(r: &mut StdRng, n: usize, ts: &[FiniteTransition], vals: &[BTreeSet<BTreeSet<String>>]) -> (Vec<FiniteTransition>, Vec<BTreeSet<BTreeSet<String>>>) {
    let mut out = ts.to_vec();
    for t in out.iter_mut() {
        if r.gen_bool(0.3) {
            let extra = small_distribution(r, t.targets.len());
            t.points.push(extra);
        }
        if r.gen_bool(0.3) {
            t.modality = Modality::May;
        }
    }
    if r.gen_bool(0.3) && n > 0 {
        let s = r.gen_range(0..n);
        out.push(FiniteTransition { source: s, label: r.gen_range(0..2), modality: Modality::May, targets: vec![s], points: vec![vec![qi(1)]] });
    }
    let mut vals = vals.to_vec();
    for v in vals.iter_mut() {
        if r.gen_bool(0.3) {
            v.insert(["p".to_string()].into_iter().collect());
        }
    }
    (out, vals)
}

fn to_apa(ts: &[FiniteTransition], vals: &[BTreeSet<BTreeSet<String>>]) -> Apa<u8> {
    Apa {
        states: vals.iter().enumerate().map(|(i, v)| ApaState { name: format!("s{i}"), valuation: v.clone() }).collect(),
        initial: 0,
        transitions: common::finite_apa(ts),
    }
}

fn oracle_suites() -> Outcome {
    let mut r = rng(11);
    let mut tally = Tally::default();
    for i in 0..200 {
        let (n1, n2) = (r.gen_range(1..=4), r.gen_range(1..=4));
        let mu1 = small_distribution(&mut r, n1);
        let mu2 = small_distribution(&mut r, n2);
        let density = r.gen_range(0.2..0.9);
        let allowed: Vec<Vec<bool>> = (0..n1).map(|_| (0..n2).map(|_| r.gen_bool(density)).collect()).collect();
        let witness = lift_check(&mu1, &mu2, &allowed);
        let expected = transport_feasible(&mu1, &mu2, &allowed);
        tally.expect(witness.is_some() == expected, || format!("lifting instance {i}: {mu1:?} onto {mu2:?}"));
        if let Some(w) = witness {
            let rows = w.iter().map(|row| row.iter().sum::<Q>()).collect::<Vec<_>>() == mu1;
            let cols = (0..n2).map(|j| w.iter().map(|row| row[j].clone()).sum::<Q>()).collect::<Vec<_>>() == mu2;
            let support = w.iter().enumerate().all(|(a, row)| row.iter().enumerate().all(|(b, x)| x.is_zero() || allowed[a][b]));
            let signs = w.iter().flatten().all(|x| !x.is_negative());
            tally.expect(rows && cols && support && signs, || format!("lifting instance {i}: witness is not a weight function"));
        }
    }

    let clocks = vec!["x".to_string(), "y".to_string()];
    for i in 0..100 {
        let max = r.gen_range(1..=3u32);
        let ctx = RegionContext::new(clocks.clone(), Vec::new(), BigInt::one(), max);
        let g: Guard = random_guard(&mut r, 2, max);
        let cmap = [0usize, 1];
        let steps = 4 * (max as i64 + 2);
        let mut seen: BTreeMap<_, apta_core::region::Region> = BTreeMap::new();
        let mut hit = BTreeSet::new();
        let mut ok = true;
        for a in 0..=steps {
            for b in 0..=steps {
                let v = [q(a, 4), q(b, 4)];
                let reg = ctx.region_of(&v);
                ok &= ctx.entails(&reg, &g, &cmap) == g.holds(&v);
                let sig = signature(&v, max as i64);
                ok &= seen.entry(sig).or_insert_with(|| reg.clone()) == &reg;
                hit.insert(reg);
            }
        }
        ok &= seen.len() == hit.len();
        ok &= ctx.all_regions().into_iter().collect::<BTreeSet<_>>() == hit;
        tally.expect(ok, || format!("region instance {i}: partition differs from the grid"));
    }

    for i in 0..100 {
        let (n1, left, vals1) = tiny_apa(&mut r);
        let (n2, right, vals2) = if i % 2 == 0 {
            let (t, v) = loosen(&mut r, n1, &left, &vals1);
            (n1, t, v)
        } else {
            tiny_apa(&mut r)
        };
        let expected = weak_refinement_oracle(n1, n2, &left, &right, &|s, t| vals1[s].is_subset(&vals2[t]), (0, 0));
        let got = weak_refine(&to_apa(&left, &vals1), &to_apa(&right, &vals2)).verdict;
        let want = if expected { Verdict::Holds } else { Verdict::Fails };
        tally.expect(got == want, || format!("refinement instance {i}: got {got:?}, oracle {want:?}"));
    }
    tally.finish("")
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "scheduler implementation satisfies its specification", scheduler_satisfaction),
        (2, "start constraint vertices and lifting", start_constraint),
        (3, "conjunction constraint matches the marginal system", conjunction_marginals),
        (4, "parallel constraint is the product", parallel_product),
        (5, "pruning preserves implementations", pruning_preserves_implementations),
        (6, "region construction commutes with conjunction and composition", regions_commute),
        (7, "conjunction bounds and precongruence", conjunction_and_precongruence),
        (8, "abstraction refinement and compositionality", abstraction_suites),
        (9, "refinement hierarchy", refinement_hierarchy),
        (10, "time divergence games", divergence_games),
        (11, "lifting, region and refinement oracles", oracle_suites),
    ];
    let mut unexpected = 0;
    for (id, title, run) in criteria {
        let outcome = std::thread::Builder::new()
            .stack_size(256 << 20)
            .spawn(run)
            .expect("spawn criterion")
            .join()
            .unwrap_or_else(|p| {
                let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
                Err(format!("panicked: {}", msg.unwrap_or_default()))
            });
        let expected_failure = EXPECTED_FAILURES.contains(&id);
        let (mark, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        let note = match (outcome.is_ok(), expected_failure) {
            (false, true) => " (expected)",
            (true, true) => " (unexpected pass, update EXPECTED_FAILURES)",
            _ => "",
        };
        if outcome.is_ok() == expected_failure {
            unexpected += 1;
        }
        println!("criterion {id:>2} {mark}{note}: {title}: {detail}");
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria deviate from the expected outcome");
        std::process::exit(1);
    }
}
