//! Command-line front end. `run` never exits the process so it can be driven from tests.
//!
//! Exit codes: 0 holds or success, 1 fails, 2 inconclusive, 3 usage or input error.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use apta_core::abstraction::{abstraction, AbstractionError, AbstractionMap};
use apta_core::apa::Apa;
use apta_core::composition::{compose_parallel, conjoin, CompositionError, Product};
use apta_core::consistency::{divergence, extract_implementation, is_empty_specification, prune_star, ConsistencyError};
use apta_core::iso::isomorphic;
use apta_core::model::{Apta, Branch, Diagnostic, Edge, Kind, Location, LocationId};
use apta_core::region::{build_region, normalization_report, translate_back, RegionContext, RegionLabel};
use apta_core::relations::{apta_refine, common_regions, satisfies, Condition, RefinementKind, RefinementResult, Verdict};
use apta_core::guard::Guard;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dot::{model_dot, region_dot};
use crate::format::{parse_abstraction_map, parse_model, serialize_model, ParseError};

pub const EXIT_HOLDS: i32 = 0;
pub const EXIT_FAILS: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_ERROR: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{path}: invalid model: {}", summary(.diagnostics))]
    Invalid { path: PathBuf, diagnostics: Vec<Diagnostic> },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Composition(#[from] CompositionError),
}

fn summary(d: &[Diagnostic]) -> String {
    d.iter().map(|d| format!("{}: {}", d.subject, d.message)).collect::<Vec<_>>().join("; ")
}

#[derive(Parser, Debug)]
#[command(name = "apta", version, about = "Check and transform abstract probabilistic timed automata")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a model and report validation diagnostics.
    Validate { model: PathBuf },
    /// Emit the region automaton, as a model document or as DOT.
    Region {
        model: PathBuf,
        #[arg(long)]
        dot: bool,
    },
    /// Emit the normal form of a model.
    Normalize { model: PathBuf },
    /// Check that an implementation satisfies a specification.
    Satisfy { implementation: PathBuf, specification: PathBuf },
    /// Check refinement between two specifications.
    Refine {
        #[arg(long, value_enum, default_value = "weak")]
        kind: KindArg,
        left: PathBuf,
        right: PathBuf,
    },
    /// Check consistency, optionally with time divergence.
    Consistent {
        #[arg(long, value_enum, default_value = "none")]
        divergence: DivergenceArg,
        model: PathBuf,
    },
    /// Remove inconsistent locations until none is left.
    Prune { model: PathBuf },
    /// Build one implementation of a consistent specification.
    Extract { model: PathBuf },
    /// Quotient a model by a location map.
    Abstract {
        #[arg(long)]
        map: PathBuf,
        model: PathBuf,
    },
    /// Conjunction of two event-clock specifications.
    Conjoin {
        left: PathBuf,
        right: PathBuf,
        #[arg(long)]
        prune: bool,
    },
    /// Parallel composition of two event-clock specifications.
    Compose { left: PathBuf, right: PathBuf },
    /// Check two models for isomorphism up to guard splitting.
    Iso { left: PathBuf, right: PathBuf },
    /// Render a model as DOT.
    Dot { model: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Weak,
    Strong,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum DivergenceArg {
    None,
    Sd,
    Pd,
}

#[derive(Serialize)]
struct Report {
    command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refinement: Option<RefinementReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    splits: Vec<SplitReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pairs: Vec<(String, String, String)>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    diagnostics: Vec<(String, String)>,
}

impl Report {
    fn new(command: &'static str) -> Report {
        Report { command, verdict: None, model: None, notes: Vec::new(), refinement: None, splits: Vec::new(), pairs: Vec::new(), diagnostics: Vec::new() }
    }
}

#[derive(Serialize)]
struct RefinementReport {
    kind: &'static str,
    relation_size: usize,
    unknown_checks: usize,
    counterexample: Vec<String>,
}

#[derive(Serialize)]
struct SplitReport {
    location: String,
    groups: Vec<SplitGroup>,
}

#[derive(Serialize)]
struct SplitGroup {
    entered_by: String,
    hulls: Vec<String>,
}

fn verdict_word(v: Verdict) -> &'static str {
    match v {
        Verdict::Holds => "holds",
        Verdict::Fails => "fails",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Holds => EXIT_HOLDS,
        Verdict::Fails => EXIT_FAILS,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn load_unchecked(path: &Path) -> Result<Apta, CliError> {
    parse_model(&read(path)?).map_err(|source| CliError::Parse { path: path.to_path_buf(), source })
}

fn load(path: &Path) -> Result<Apta, CliError> {
    let m = load_unchecked(path)?;
    let diagnostics = m.validate();
    if diagnostics.is_empty() {
        Ok(m)
    } else {
        Err(CliError::Invalid { path: path.to_path_buf(), diagnostics })
    }
}

fn refinement_report<L>(r: &RefinementResult, left: &Apa<L>, right: &Apa<L>) -> RefinementReport {
    let counterexample = r
        .counterexample
        .iter()
        .map(|d| {
            let why = match d.condition {
                Condition::MustMatched => "a required transition of the right side is not matched",
                Condition::Allowed => "a transition of the left side is not allowed",
                Condition::Valuation => "valuations are not included",
            };
            format!("({}, {}): {}", left.states[d.pair.0].name, right.states[d.pair.1].name, why)
        })
        .collect();
    RefinementReport {
        kind: match r.kind {
            RefinementKind::Weak => "weak",
            RefinementKind::Strong => "strong",
        },
        relation_size: r.relation.len(),
        unknown_checks: r.unknown_checks,
        counterexample,
    }
}

/// The region automaton as an untimed model whose actions name the firing window.
fn region_model(m: &Apta, apa: &Apa<RegionLabel>, ctx: &RegionContext) -> Apta {
    let kind = if m.kind.is_implementation() { Kind::Pta } else { Kind::Apta };
    let mut out = Apta::new(&format!("{}_regions", m.name), kind);
    let labels: BTreeSet<&RegionLabel> = apa.transitions.iter().map(|t| &t.label).collect();
    let labels: Vec<&RegionLabel> = labels.into_iter().collect();
    out.actions = labels.iter().map(|l| format!("{}@{}", ctx.actions[l.action], ctx.describe(&l.window))).collect();
    out.props = m.props.clone();
    out.locations = apa
        .states
        .iter()
        .map(|s| Location {
            name: s.name.clone(),
            valuation: s.valuation.iter().map(|set| set.iter().filter_map(|p| m.prop_named(p)).collect()).collect(),
        })
        .collect();
    out.initial = LocationId(apa.initial);
    out.edges = apa
        .transitions
        .iter()
        .map(|t| Edge {
            source: LocationId(t.source),
            guard: Guard::truth(),
            action: apta_core::model::ActionId(labels.iter().position(|l| **l == t.label).unwrap()),
            modality: t.modality,
            branches: t.targets.iter().map(|&s| Branch { resets: BTreeSet::new(), target: LocationId(s) }).collect(),
            constraint: t.constraint.clone(),
        })
        .collect();
    out
}

fn provenance(p: &Product, a: &Apta, b: &Apta) -> Vec<(String, String, String)> {
    p.pairs
        .iter()
        .enumerate()
        .map(|(i, (x, y))| (p.model.locations[i].name.clone(), a.locations[x.0].name.clone(), b.locations[y.0].name.clone()))
        .collect()
}

fn execute(cli: &Cli, report: &mut Report) -> Result<i32, CliError> {
    match &cli.command {
        Command::Validate { model } => {
            let m = load_unchecked(model)?;
            let d = m.validate();
            report.diagnostics = d.iter().map(|d| (d.subject.clone(), d.message.clone())).collect();
            report.verdict = Some(if d.is_empty() { "holds" } else { "fails" });
            Ok(if d.is_empty() { EXIT_HOLDS } else { EXIT_FAILS })
        }
        Command::Region { model, dot } => {
            let m = load(model)?;
            let ctx = RegionContext::of(&[&m]);
            let b = build_region(&m, &ctx);
            report.model = Some(if *dot { region_dot(&b.apa, &ctx) } else { serialize_model(&region_model(&m, &b.apa, &ctx)) });
            if b.approximate {
                report.notes.push("some merged constraints were over-approximated".into());
            }
            Ok(EXIT_HOLDS)
        }
        Command::Normalize { model } => {
            let m = load(model)?;
            let ctx = RegionContext::of(&[&m]);
            let b = build_region(&m, &ctx);
            report.splits = splits(&normalization_report(&b, &ctx, &m));
            report.model = Some(serialize_model(&translate_back(&b, &ctx, &m)));
            Ok(EXIT_HOLDS)
        }
        Command::Satisfy { implementation, specification } => {
            let m = load(implementation)?;
            if !m.kind.is_implementation() {
                return Err(CliError::Usage(format!("{}: `{}` is not an implementation kind", implementation.display(), m.kind.keyword())));
            }
            let spec = load(specification)?;
            let s = satisfies(&m, &spec);
            report.verdict = Some(verdict_word(s.result.verdict));
            report.refinement = Some(refinement_report(&s.result, &s.implementation_regions.apa, &s.specification_regions.apa));
            report.splits = splits(&s.splits);
            Ok(verdict_code(s.result.verdict))
        }
        Command::Refine { kind, left, right } => {
            let (a, b) = (load(left)?, load(right)?);
            let (_, b1, b2) = common_regions(&a, &b);
            let kind = match kind {
                KindArg::Weak => RefinementKind::Weak,
                KindArg::Strong => RefinementKind::Strong,
            };
            let r = apta_refine(&a, &b, kind);
            report.verdict = Some(verdict_word(r.verdict));
            report.refinement = Some(refinement_report(&r, &b1.apa, &b2.apa));
            Ok(verdict_code(r.verdict))
        }
        Command::Consistent { divergence: mode, model } => {
            let m = load(model)?;
            let consistent = !is_empty_specification(&prune_star(&m));
            let holds = match mode {
                DivergenceArg::None => consistent,
                _ => {
                    report.notes.push("time divergence decided per reconstructed game".into());
                    match divergence(&m) {
                        Ok(v) => {
                            report.notes.push(format!("game has {} nodes", v.game.nodes.len()));
                            if *mode == DivergenceArg::Sd {
                                v.sure
                            } else {
                                v.almost_sure
                            }
                        }
                        Err(ConsistencyError::InconsistentInput) => false,
                    }
                }
            };
            if !consistent {
                report.notes.push("no consistent initial location".into());
            }
            report.verdict = Some(if holds { "holds" } else { "fails" });
            Ok(if holds { EXIT_HOLDS } else { EXIT_FAILS })
        }
        Command::Prune { model } => {
            let p = prune_star(&load(model)?);
            report.model = Some(serialize_model(&p));
            Ok(EXIT_HOLDS)
        }
        Command::Extract { model } => match extract_implementation(&load(model)?) {
            Some(i) => {
                report.model = Some(serialize_model(&i));
                Ok(EXIT_HOLDS)
            }
            None => {
                report.verdict = Some("fails");
                report.notes.push("specification is inconsistent".into());
                Ok(EXIT_FAILS)
            }
        },
        Command::Abstract { map, model } => {
            let m = load(model)?;
            let pairs = parse_abstraction_map(&read(map)?).map_err(|source| CliError::Parse { path: map.clone(), source })?;
            let alpha = AbstractionMap::from_pairs(&m, &pairs)?;
            let a = abstraction(&m, &alpha)?;
            if a.approximate {
                report.notes.push("some merged constraints were over-approximated".into());
            }
            report.model = Some(serialize_model(&a.model));
            Ok(EXIT_HOLDS)
        }
        Command::Conjoin { left, right, prune } => {
            let (a, b) = (load(left)?, load(right)?);
            let p = conjoin(&a, &b)?;
            report.pairs = provenance(&p, &a, &b);
            let model = if *prune { prune_star(&p.model) } else { p.model };
            report.model = Some(serialize_model(&model));
            Ok(EXIT_HOLDS)
        }
        Command::Compose { left, right } => {
            let (a, b) = (load(left)?, load(right)?);
            let p = compose_parallel(&a, &b)?;
            report.pairs = provenance(&p, &a, &b);
            report.model = Some(serialize_model(&p.model));
            Ok(EXIT_HOLDS)
        }
        Command::Iso { left, right } => {
            let (a, b) = (load(left)?, load(right)?);
            match isomorphic(&a, &b) {
                Some(map) => {
                    report.pairs = map
                        .iter()
                        .map(|(x, y)| (a.locations[x.0].name.clone(), a.locations[x.0].name.clone(), b.locations[y.0].name.clone()))
                        .collect();
                    report.verdict = Some("holds");
                    Ok(EXIT_HOLDS)
                }
                None => {
                    report.verdict = Some("fails");
                    Ok(EXIT_FAILS)
                }
            }
        }
        Command::Dot { model } => {
            report.model = Some(model_dot(&load(model)?));
            Ok(EXIT_HOLDS)
        }
    }
}

fn splits(s: &[apta_core::region::LocationSplit]) -> Vec<SplitReport> {
    s.iter()
        .map(|s| SplitReport {
            location: s.location.clone(),
            groups: s
                .groups
                .iter()
                .map(|(e, hulls)| SplitGroup {
                    entered_by: e.map(|e| format!("edge #{e}")).unwrap_or_else(|| "initial".into()),
                    hulls: hulls.clone(),
                })
                .collect(),
        })
        .collect()
}

fn render_text(r: &Report, out: &mut dyn Write) -> std::io::Result<()> {
    if let Some(m) = &r.model {
        write!(out, "{m}")?;
    }
    if !r.pairs.is_empty() {
        let label = if r.command == "iso" { "# location map" } else { "# provenance" };
        writeln!(out, "{label}")?;
        for (p, a, b) in &r.pairs {
            if r.command == "iso" {
                writeln!(out, "#   {a} -> {b}")?;
            } else {
                writeln!(out, "#   {p} = ({a}, {b})")?;
            }
        }
    }
    for (s, m) in &r.diagnostics {
        writeln!(out, "{s}: {m}")?;
    }
    if let Some(v) = r.verdict {
        writeln!(out, "{}: {v}", r.command)?;
    }
    if let Some(f) = &r.refinement {
        writeln!(out, "{} refinement, relation of {} pairs, {} undecided checks", f.kind, f.relation_size, f.unknown_checks)?;
        for c in &f.counterexample {
            writeln!(out, "  removed {c}")?;
        }
    }
    let prefix = if r.model.is_some() { "# " } else { "" };
    for s in &r.splits {
        writeln!(out, "{prefix}split {}:", s.location)?;
        for g in &s.groups {
            writeln!(out, "{prefix}  entered by {}: {}", g.entered_by, g.hulls.join(" "))?;
        }
    }
    for n in &r.notes {
        writeln!(out, "{prefix}note: {n}")?;
    }
    Ok(())
}

/// Runs one invocation and returns its exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_HOLDS };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let mut report = Report::new(command_name(&cli.command));
    let code = match execute(&cli, &mut report) {
        Ok(code) => code,
        Err(e) => {
            if cli.json {
                let _ = writeln!(out, "{}", serde_json::json!({ "command": report.command, "error": e.to_string() }));
            } else {
                let _ = writeln!(err, "error: {e}");
            }
            return EXIT_ERROR;
        }
    };
    let written = if cli.json {
        serde_json::to_string_pretty(&report).map_err(std::io::Error::other).and_then(|s| writeln!(out, "{s}"))
    } else {
        render_text(&report, out)
    };
    match written {
        Ok(()) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Validate { .. } => "validate",
        Command::Region { .. } => "region",
        Command::Normalize { .. } => "normalize",
        Command::Satisfy { .. } => "satisfy",
        Command::Refine { .. } => "refine",
        Command::Consistent { .. } => "consistent",
        Command::Prune { .. } => "prune",
        Command::Extract { .. } => "extract",
        Command::Abstract { .. } => "abstract",
        Command::Conjoin { .. } => "conjoin",
        Command::Compose { .. } => "compose",
        Command::Iso { .. } => "iso",
        Command::Dot { .. } => "dot",
    }
}
