mod common;

use std::process::{Command, Output};

use common::fixture_path;

fn apta(args: &[&str]) -> Output {
    let args: Vec<String> = args
        .iter()
        .map(|a| if a.contains('.') && !a.starts_with('-') { fixture_path(a).display().to_string() } else { a.to_string() })
        .collect();
    Command::new(env!("CARGO_BIN_EXE_apta")).args(&args).output().expect("run apta")
}

fn code(args: &[&str]) -> i32 {
    apta(args).status.code().expect("exit code")
}

#[test]
fn satisfaction_exit_codes() {
    assert_eq!(code(&["satisfy", "scheduler_impl_corrected.pta", "scheduler.apta"]), 0);
    assert_eq!(code(&["satisfy", "scheduler_impl.pta", "scheduler.apta"]), 1);
}

#[test]
fn refinement_exit_codes() {
    assert_eq!(code(&["refine", "scheduler.apta", "scheduler.apta"]), 0);
    assert_eq!(code(&["refine", "--kind", "weak", "weak_not_strong_left.apta", "weak_not_strong_right.apta"]), 0);
    assert_eq!(code(&["refine", "--kind", "strong", "weak_not_strong_left.apta", "weak_not_strong_right.apta"]), 1);
}

#[test]
fn divergence_exit_codes() {
    assert_eq!(code(&["consistent", "zeno_trap.apta"]), 0);
    assert_eq!(code(&["consistent", "--divergence", "sd", "zeno_trap.apta"]), 1);
    assert_eq!(code(&["consistent", "--divergence", "pd", "chance_escape.apta"]), 0);
    assert_eq!(code(&["consistent", "--divergence", "sd", "chance_escape.apta"]), 1);
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(code(&["refine", "scheduler.apta"]), 3);
    assert_eq!(code(&["frobnicate"]), 3);
    assert_eq!(code(&["satisfy", "scheduler.apta", "scheduler.apta"]), 3);
    assert_eq!(code(&["validate", "missing.apta"]), 3);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn json_report() {
    let out = apta(&["--json", "satisfy", "scheduler_impl.pta", "scheduler.apta"]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).expect("json on stdout");
    assert_eq!(v["command"], "satisfy");
    assert_eq!(v["verdict"], "fails");
    assert_eq!(v["refinement"]["kind"], "weak");
    let l0 = v["splits"].as_array().unwrap().iter().find(|s| s["location"] == "l0").expect("l0 split");
    let hulls: Vec<&str> = l0["groups"].as_array().unwrap().iter().flat_map(|g| g["hulls"].as_array().unwrap()).filter_map(|h| h.as_str()).collect();
    for h in ["(0,2]", "(2,6]", "(6,10]"] {
        assert!(hulls.contains(&h), "{hulls:?}");
    }
}

#[test]
fn divergence_note_in_json() {
    let out = apta(&["--json", "consistent", "--divergence", "pd", "reset_loop.apta"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["verdict"], "holds");
    let notes: Vec<&str> = v["notes"].as_array().unwrap().iter().filter_map(|n| n.as_str()).collect();
    assert!(notes.iter().any(|n| n.contains("per reconstructed game")), "{notes:?}");
}

#[test]
fn outputs_are_reproducible() {
    for args in [
        &["conjoin", "cl.apeca", "cl2.apeca"][..],
        &["compose", "cl.apeca", "acc.apeca"],
        &["--json", "refine", "scheduler.apta", "scheduler.apta"],
        &["region", "scheduler.apta"],
        &["extract", "scheduler.apta"],
    ] {
        let (a, b) = (apta(args), apta(args));
        assert_eq!(a.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn abstraction_matches_stored_quotient() {
    let abs = apta(&["abstract", "--map", "cl1.map", "cl1.apeca"]);
    assert_eq!(abs.status.code(), Some(0));
    let dir = std::env::temp_dir().join(format!("apta-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("abstract.apeca");
    std::fs::write(&path, &abs.stdout).unwrap();
    let iso = Command::new(env!("CARGO_BIN_EXE_apta"))
        .arg("iso")
        .arg(&path)
        .arg(fixture_path("cl1_abstract.apeca"))
        .output()
        .unwrap();
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(iso.status.code(), Some(0), "{}", String::from_utf8_lossy(&iso.stdout));
}

#[test]
fn generated_documents_parse_back() {
    for args in [&["conjoin", "--prune", "cl.apeca", "cl2.apeca"][..], &["normalize", "scheduler_impl.pta"], &["prune", "scheduler.apta"]] {
        let out = apta(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        let text = String::from_utf8(out.stdout).unwrap();
        apta_tools::format::parse_model(&text).unwrap_or_else(|e| panic!("{args:?}: {e}\n{text}"));
    }
}

#[test]
fn empty_conjunction_refines_both_operands() {
    let dir = std::env::temp_dir().join(format!("apta-cli-empty-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("glb.apeca");
    std::fs::write(&path, apta(&["conjoin", "--prune", "cl.apeca", "cl2.apeca"]).stdout).unwrap();
    let p = path.display().to_string();
    let refine = |right: &str| {
        Command::new(env!("CARGO_BIN_EXE_apta")).args(["refine", &p, &fixture_path(right).display().to_string()]).output().unwrap()
    };
    let (a, b) = (refine("cl.apeca"), refine("cl2.apeca"));
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(b.status.code(), Some(0));
}
