use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, BytesText, Event};
use quick_xml::{Reader, Writer};

use super::ExportError;
use crate::hierarchy::{ConceptHierarchy, ConceptId};

pub const DEFAULT_BASE_IRI: &str = "http://example.org/taxocrawl";

const RDF: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
const RDFS: &str = "http://www.w3.org/2000/01/rdf-schema#";
const OWL: &str = "http://www.w3.org/2002/07/owl#";

// Everything but RFC 3986 unreserved characters.
const FRAGMENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

pub fn class_iri(base: &str, name: &str) -> String {
    format!("{base}#{}", utf8_percent_encode(name, FRAGMENT))
}

fn xml_safe(text: &str) -> Result<&str, ExportError> {
    let legal = |c: char| matches!(c, '\t' | '\n' | '\r') || (c >= ' ' && c != '\u{FFFE}' && c != '\u{FFFF}');
    if text.chars().all(legal) {
        Ok(text)
    } else {
        Err(ExportError::Encoding(text.to_string()))
    }
}

type XmlWriter = Writer<Cursor<Vec<u8>>>;

fn io_err(e: std::io::Error) -> ExportError {
    ExportError::Parse(e.to_string())
}

fn text_element(w: &mut XmlWriter, tag: &str, text: &str) -> Result<(), ExportError> {
    w.write_event(Event::Start(BytesStart::new(tag))).map_err(io_err)?;
    w.write_event(Event::Text(BytesText::new(xml_safe(text)?))).map_err(io_err)?;
    w.write_event(Event::End(BytesEnd::new(tag))).map_err(io_err)
}

fn resource(w: &mut XmlWriter, tag: &str, iri: &str) -> Result<(), ExportError> {
    w.write_event(Event::Empty(BytesStart::new(tag).with_attributes([("rdf:resource", iri)]))).map_err(io_err)
}

/// OWL 2 RDF/XML: one class per concept name, `rdfs:subClassOf` per direct
/// edge, `owl:equivalentClass` from every synonym name to its concept, and
/// the description as `rdfs:comment`. Concepts appear in id order.
pub fn to_owl_rdfxml(h: &ConceptHierarchy, base: &str) -> Result<String, ExportError> {
    let mut w = Writer::new_with_indent(Cursor::new(Vec::new()), b' ', 2);
    w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None))).map_err(io_err)?;
    let root = BytesStart::new("rdf:RDF").with_attributes([
        ("xmlns:rdf", RDF),
        ("xmlns:rdfs", RDFS),
        ("xmlns:owl", OWL),
        ("xml:base", base),
    ]);
    w.write_event(Event::Start(root)).map_err(io_err)?;
    w.write_event(Event::Empty(BytesStart::new("owl:Ontology").with_attributes([("rdf:about", base)])))
        .map_err(io_err)?;

    for c in h.concepts() {
        let iri = class_iri(base, &c.canonical_name);
        w.write_event(Event::Start(BytesStart::new("owl:Class").with_attributes([("rdf:about", iri.as_str())])))
            .map_err(io_err)?;
        text_element(&mut w, "rdfs:label", &c.canonical_name)?;
        if let Some(desc) = &c.description {
            text_element(&mut w, "rdfs:comment", desc)?;
        }
        for &p in h.direct_parents(c.id)? {
            resource(&mut w, "rdfs:subClassOf", &class_iri(base, h.name_of(p)?))?;
        }
        w.write_event(Event::End(BytesEnd::new("owl:Class"))).map_err(io_err)?;

        for syn in &c.synonym_names {
            let syn_iri = class_iri(base, syn);
            w.write_event(Event::Start(BytesStart::new("owl:Class").with_attributes([("rdf:about", syn_iri.as_str())])))
                .map_err(io_err)?;
            text_element(&mut w, "rdfs:label", syn)?;
            resource(&mut w, "owl:equivalentClass", &iri)?;
            w.write_event(Event::End(BytesEnd::new("owl:Class"))).map_err(io_err)?;
        }
    }
    w.write_event(Event::End(BytesEnd::new("rdf:RDF"))).map_err(io_err)?;
    let mut out = String::from_utf8(w.into_inner().into_inner()).map_err(|e| ExportError::Parse(e.to_string()))?;
    out.push('\n');
    Ok(out)
}

#[derive(Debug, Default)]
struct ClassRecord {
    label: Option<String>,
    comment: Option<String>,
    parents: Vec<String>,
    equivalent: Option<String>,
}

fn parse_err(e: impl std::fmt::Display) -> ExportError {
    ExportError::Parse(e.to_string())
}

fn attr(e: &BytesStart<'_>, name: &str) -> Result<Option<String>, ExportError> {
    match e.try_get_attribute(name).map_err(parse_err)? {
        Some(a) => Ok(Some(a.unescape_value().map_err(parse_err)?.into_owned())),
        None => Ok(None),
    }
}

fn entity(name: &str) -> Option<char> {
    Some(match name {
        "lt" => '<',
        "gt" => '>',
        "amp" => '&',
        "apos" => '\'',
        "quot" => '"',
        _ => return None,
    })
}

fn name_from_iri(iri: &str) -> String {
    let fragment = iri.rsplit_once('#').map_or(iri, |(_, f)| f);
    percent_decode_str(fragment).decode_utf8_lossy().into_owned()
}

/// Reads a document written by [`to_owl_rdfxml`] back into a hierarchy.
/// Concept ids are assigned afresh; names, edges, synonyms and
/// descriptions are preserved.
pub fn from_owl_rdfxml(text: &str) -> Result<ConceptHierarchy, ExportError> {
    let mut reader = Reader::from_str(text);
    let mut classes: BTreeMap<String, ClassRecord> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    let mut field: Option<(&'static str, String)> = None;

    loop {
        match reader.read_event().map_err(parse_err)? {
            Event::Eof => break,
            Event::Start(e) | Event::Empty(e) if e.name().as_ref() == b"owl:Class" => {
                let iri = attr(&e, "rdf:about")?.ok_or_else(|| parse_err("owl:Class without rdf:about"))?;
                if !classes.contains_key(&iri) {
                    order.push(iri.clone());
                }
                classes.entry(iri.clone()).or_default();
                current = Some(iri);
            }
            Event::End(e) if e.name().as_ref() == b"owl:Class" => current = None,
            Event::Start(e) if matches!(e.name().as_ref(), b"rdfs:label" | b"rdfs:comment") => {
                let kind = if e.name().as_ref() == b"rdfs:label" { "label" } else { "comment" };
                field = Some((kind, String::new()));
            }
            Event::Text(t) => {
                if let Some((_, buf)) = field.as_mut() {
                    buf.push_str(&t.decode().map_err(parse_err)?);
                }
            }
            Event::GeneralRef(r) => {
                if let Some((_, buf)) = field.as_mut() {
                    let c = match r.resolve_char_ref().map_err(parse_err)? {
                        Some(c) => c,
                        None => {
                            let name = r.decode().map_err(parse_err)?;
                            entity(&name).ok_or_else(|| parse_err(format!("unknown entity &{name};")))?
                        }
                    };
                    buf.push(c);
                }
            }
            Event::End(e) if matches!(e.name().as_ref(), b"rdfs:label" | b"rdfs:comment") => {
                if let (Some(iri), Some((kind, buf))) = (&current, field.take()) {
                    let rec = classes.get_mut(iri).expect("class opened");
                    if kind == "label" {
                        rec.label = Some(buf);
                    } else {
                        rec.comment = Some(buf);
                    }
                }
            }
            Event::Empty(e) if matches!(e.name().as_ref(), b"rdfs:subClassOf" | b"owl:equivalentClass") => {
                let Some(iri) = &current else { continue };
                let target = attr(&e, "rdf:resource")?.ok_or_else(|| parse_err("axiom without rdf:resource"))?;
                let rec = classes.get_mut(iri).expect("class opened");
                if e.name().as_ref() == b"rdfs:subClassOf" {
                    rec.parents.push(target);
                } else {
                    rec.equivalent = Some(target);
                }
            }
            _ => {}
        }
    }

    let name = |iri: &str| -> String {
        classes.get(iri).and_then(|r| r.label.clone()).unwrap_or_else(|| name_from_iri(iri))
    };
    let primaries: Vec<&String> = order.iter().filter(|iri| classes[*iri].equivalent.is_none()).collect();
    let roots: Vec<&&String> = primaries.iter().filter(|iri| classes[**iri].parents.is_empty()).collect();
    let [seed_iri] = roots.as_slice() else {
        return Err(parse_err(format!("expected exactly one root class, found {}", roots.len())));
    };

    let mut h = ConceptHierarchy::new(&name(seed_iri))?;
    if let Some(c) = &classes[**seed_iri].comment {
        h.set_description(h.seed(), c.clone())?;
    }
    let mut ids: BTreeMap<&str, ConceptId> = BTreeMap::from([(seed_iri.as_str(), h.seed())]);
    let mut pending: Vec<&String> = primaries.iter().copied().filter(|iri| *iri != **seed_iri).collect();
    while !pending.is_empty() {
        let before = pending.len();
        let mut rest = Vec::new();
        for iri in pending {
            let rec = &classes[iri];
            let parents: Option<Vec<ConceptId>> = rec.parents.iter().map(|p| ids.get(p.as_str()).copied()).collect();
            match parents {
                Some(parents) => {
                    let id = h.add_concept(&name(iri), rec.comment.clone(), &parents)?;
                    ids.insert(iri.as_str(), id);
                }
                None => rest.push(iri),
            }
        }
        if rest.len() == before {
            return Err(parse_err("subclass axioms refer to unknown classes or form a cycle"));
        }
        pending = rest;
    }
    for iri in &order {
        if let Some(target) = &classes[iri].equivalent {
            let id = ids.get(target.as_str()).ok_or_else(|| parse_err(format!("equivalence to unknown class {target}")))?;
            h.add_synonym_name(*id, &name(iri))?;
        }
    }
    Ok(h)
}

/// `(child name, parent name)` pairs; handy for comparing hierarchies whose
/// ids differ.
pub fn named_edges(h: &ConceptHierarchy) -> BTreeSet<(String, String)> {
    h.edges()
        .into_iter()
        .map(|(c, p)| (h.name_of(c).unwrap_or_default().to_string(), h.name_of(p).unwrap_or_default().to_string()))
        .collect()
}
