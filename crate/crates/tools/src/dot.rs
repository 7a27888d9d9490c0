//! Graphviz export. Must transitions are solid, may transitions dashed; a distribution with
//! more than one target gets a small intermediate node.

use std::fmt::Write as _;

use apta_core::apa::Apa;
use apta_core::guard::Modality;
use apta_core::model::Apta;
use apta_core::region::{RegionContext, RegionLabel};

use crate::format::{format_constraint, format_guard};

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn style(m: Modality) -> &'static str {
    if m == Modality::Must {
        "solid"
    } else {
        "dashed"
    }
}

fn valuation_label<'a>(sets: impl Iterator<Item = Vec<&'a str>>) -> String {
    let parts: Vec<String> = sets.map(|s| format!("{{{}}}", s.join(","))).collect();
    if parts.is_empty() {
        "∅".into()
    } else {
        parts.join(" ")
    }
}

struct Writer {
    out: String,
    hubs: usize,
}

impl Writer {
    fn transition(&mut self, source: &str, label: &str, modality: Modality, targets: &[(String, String)]) {
        let st = style(modality);
        if let [(target, branch)] = targets {
            let label = if branch.is_empty() { label.to_string() } else { format!("{label} {branch}") };
            let _ = writeln!(self.out, "  {} -> {} [label={}, style={}];", quote(source), quote(target), quote(&label), st);
            return;
        }
        self.hubs += 1;
        let hub = format!("hub{}", self.hubs);
        let _ = writeln!(self.out, "  {hub} [shape=point, label=\"\"];");
        let _ = writeln!(self.out, "  {} -> {hub} [label={}, style={}, arrowhead=none];", quote(source), quote(label), st);
        for (target, branch) in targets {
            let _ = writeln!(self.out, "  {hub} -> {} [label={}, style={}];", quote(target), quote(branch), st);
        }
    }
}

pub fn model_dot(m: &Apta) -> String {
    let mut w = Writer { out: String::new(), hubs: 0 };
    let _ = writeln!(w.out, "digraph {} {{", quote(&m.name));
    let _ = writeln!(w.out, "  rankdir=LR;");
    let _ = writeln!(w.out, "  init [shape=point];");
    for (i, l) in m.locations.iter().enumerate() {
        let vals = valuation_label(l.valuation.iter().map(|s| s.iter().map(|p| m.props[p.0].as_str()).collect()));
        let _ = writeln!(w.out, "  {} [shape=ellipse, label={}];", quote(&l.name), quote(&format!("{}\n{}", l.name, vals)));
        if i == m.initial.0 {
            let _ = writeln!(w.out, "  init -> {};", quote(&l.name));
        }
    }
    for e in &m.edges {
        let vars: Vec<String> = (1..=e.branches.len()).map(|i| format!("p{i}")).collect();
        let mut label = format!("{} [{}]", m.actions[e.action.0], format_guard(&e.guard, &m.clocks));
        if let Some(c) = format_constraint(&e.constraint, &vars) {
            if e.branches.len() > 1 || e.constraint.as_point().is_none() {
                label.push_str(&format!("\n{c}"));
            }
        }
        let targets: Vec<(String, String)> = e
            .branches
            .iter()
            .zip(&vars)
            .map(|(b, v)| {
                let resets: Vec<&str> = b.resets.iter().map(|c| m.clocks[c.0].as_str()).collect();
                let mut branch = if e.branches.len() > 1 { v.clone() } else { String::new() };
                if !resets.is_empty() {
                    if !branch.is_empty() {
                        branch.push(' ');
                    }
                    branch.push_str(&format!("reset {{{}}}", resets.join(",")));
                }
                (m.locations[b.target.0].name.clone(), branch)
            })
            .collect();
        w.transition(&m.locations[e.source.0].name, &label, e.modality, &targets);
    }
    w.out.push_str("}\n");
    w.out
}

pub fn region_dot(a: &Apa<RegionLabel>, ctx: &RegionContext) -> String {
    let mut w = Writer { out: String::new(), hubs: 0 };
    let _ = writeln!(w.out, "digraph region {{");
    let _ = writeln!(w.out, "  rankdir=LR;");
    let _ = writeln!(w.out, "  init [shape=point];");
    for (i, s) in a.states.iter().enumerate() {
        let vals = valuation_label(s.valuation.iter().map(|set| set.iter().map(String::as_str).collect()));
        let _ = writeln!(w.out, "  {} [shape=box, label={}];", quote(&s.name), quote(&format!("{}\n{}", s.name, vals)));
        if i == a.initial {
            let _ = writeln!(w.out, "  init -> {};", quote(&s.name));
        }
    }
    for t in &a.transitions {
        let vars: Vec<String> = (1..=t.targets.len()).map(|i| format!("p{i}")).collect();
        let mut label = format!("{} @ {}", ctx.actions[t.label.action], ctx.describe(&t.label.window));
        if let Some(c) = format_constraint(&t.constraint, &vars) {
            if t.targets.len() > 1 || t.constraint.as_point().is_none() {
                label.push_str(&format!("\n{c}"));
            }
        }
        let targets: Vec<(String, String)> = t
            .targets
            .iter()
            .zip(&vars)
            .map(|(&s, v)| (a.states[s].name.clone(), if t.targets.len() > 1 { v.clone() } else { String::new() }))
            .collect();
        w.transition(&a.states[t.source].name, &label, t.modality, &targets);
    }
    w.out.push_str("}\n");
    w.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::parse_model;
    use apta_core::region::build_region;

    const MODEL: &str = "apta m\nactions a\nclocks x\nlocation s {}\nlocation t {}\nmust s a [x < 1] -> p1: s, p2: t\n    where p1 <= 1/2\nmay t a [true] -> s reset {x}\n";

    #[test]
    fn model_graph_has_hub_and_styles() {
        let m = parse_model(MODEL).unwrap();
        let d = model_dot(&m);
        assert!(d.starts_with("digraph \"m\" {"));
        assert!(d.contains("hub1 [shape=point"));
        assert!(d.contains("style=dashed"));
        assert!(d.contains("reset {x}"));
        assert!(d.trim_end().ends_with('}'));
    }

    #[test]
    fn region_graph_names_states() {
        let m = parse_model(MODEL).unwrap();
        let ctx = RegionContext::of(&[&m]);
        let b = build_region(&m, &ctx);
        let d = region_dot(&b.apa, &ctx);
        for s in &b.apa.states {
            assert!(d.contains(&quote(&s.name)));
        }
    }
}
