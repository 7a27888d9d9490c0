mod common;

use apta_core::relations::{satisfies, Condition, Verdict};
use common::fixture;

#[test]
fn corrected_implementation_satisfies_the_scheduler() {
    let sat = satisfies(&fixture("scheduler_impl_corrected.pta"), &fixture("scheduler.apta"));
    assert_eq!(sat.result.verdict, Verdict::Holds);
    assert!(sat.result.counterexample.is_empty());
}

#[test]
fn original_implementation_is_rejected_with_its_split() {
    let sat = satisfies(&fixture("scheduler_impl.pta"), &fixture("scheduler.apta"));
    assert_eq!(sat.result.verdict, Verdict::Fails);
    let chain = &sat.result.counterexample;
    assert!(!chain.is_empty());
    assert!(chain.iter().any(|d| d.condition == Condition::MustMatched), "{chain:?}");

    let l0 = sat.splits.iter().find(|s| s.location == "l0").expect("l0 is split");
    let hulls: Vec<&str> = l0.groups.iter().flat_map(|(_, h)| h.iter().map(String::as_str)).collect();
    for h in ["(0,2]", "(2,6]", "(6,10]"] {
        assert!(hulls.contains(&h), "{hulls:?}");
    }
    assert!(l0.groups.iter().any(|(edge, _)| edge.is_none()), "initial copy of l0 missing");
}
