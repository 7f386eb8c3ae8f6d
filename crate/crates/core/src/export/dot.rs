use std::fmt::Write;

use crate::hierarchy::ConceptHierarchy;

fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Graphviz digraph with edges pointing from superconcept to subconcept.
pub fn to_dot(h: &ConceptHierarchy) -> String {
    let seed = h.name_of(h.seed()).unwrap_or_default();
    let mut out = String::new();
    writeln!(out, "digraph {} {{", quote(seed)).unwrap();
    writeln!(out, "  node [shape=box];").unwrap();
    for c in h.concepts() {
        writeln!(out, "  n{} [label={}];", c.id.0, quote(&c.canonical_name)).unwrap();
    }
    let mut edges = h.edges();
    edges.sort_by_key(|&(child, parent)| (parent, child));
    for (child, parent) in edges {
        writeln!(out, "  n{} -> n{};", parent.0, child.0).unwrap();
    }
    out.push_str("}\n");
    out
}
