//! UPPAAL 4.1-era XML serialisation of route models.
//!
//! The exporter emits one `Process` template: locations with
//! `exponentialrate` labels, `branchpoint` elements, transitions carrying
//! `probability` weights, `guard` lower bounds, and clock-reset
//! `assignment` labels, plus the embedded query list. Locations get
//! deterministic grid coordinates (chains run left to right, branches stack
//! vertically), so two exports of the same model are byte-identical.
//!
//! The importer reads the same element set back and rejects anything
//! outside it (synchronisation channels, invariants, multiple templates) by
//! name. Imported models are validated before being returned.

use std::collections::BTreeMap;

use quick_xml::events::Event;
use quick_xml::Reader;
use thiserror::Error;

use crate::pta::{ClockGuard, Edge, Location, Pta};
use crate::smc::Query;

#[derive(Debug, Error)]
pub enum XmlError {
    #[error("malformed XML: {0}")]
    Malformed(String),
    #[error("unsupported UPPAAL feature: {0}")]
    Unsupported(String),
    #[error("document is missing {0}")]
    Missing(String),
    #[error("imported model violates invariants:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

const COLUMN_SPACING: i64 = 150;
const ROW_SPACING: i64 = 120;

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(ch),
        }
    }
    out
}

/// Deterministic grid layout: column = longest path from the initial
/// location, row = branch position within the feeding branch point.
fn layout(pta: &Pta) -> BTreeMap<&str, (i64, i64)> {
    let mut cols: BTreeMap<&str, i64> = BTreeMap::new();
    let initial = pta
        .locations
        .iter()
        .find(|l| l.is_initial)
        .map(|l| l.id.as_str())
        .unwrap_or_default();
    // Longest-path columns via memoised depth-first search (the graph is
    // acyclic for valid models).
    fn depth<'a>(
        pta: &'a Pta,
        id: &'a str,
        cols: &mut BTreeMap<&'a str, i64>,
        guard: usize,
    ) -> i64 {
        if guard > pta.locations.len() + 1 {
            return 0;
        }
        if let Some(&c) = cols.get(id) {
            return c;
        }
        let c = pta
            .edges
            .iter()
            .filter(|e| e.to == id)
            .map(|e| depth(pta, &e.from, cols, guard + 1) + 1)
            .max()
            .unwrap_or(0);
        cols.insert(id, c);
        c
    }
    let _ = depth(pta, initial, &mut cols, 0);
    for l in &pta.locations {
        let _ = depth(pta, &l.id, &mut cols, 0);
    }

    let mut rows: BTreeMap<&str, i64> = BTreeMap::new();
    let indegree = |id: &str| pta.edges.iter().filter(|e| e.to == id).count();
    for l in pta.locations.iter().filter(|l| l.is_branch_point) {
        for (i, e) in pta.outgoing(&l.id).enumerate() {
            // Follow the branch chain until it merges again.
            let mut at = e.to.as_str();
            while indegree(at) == 1 {
                let loc = pta.location(at).expect("edge targets exist");
                if loc.is_branch_point || loc.is_end {
                    break;
                }
                rows.insert(at, i as i64);
                at = match pta.outgoing(at).next() {
                    Some(next) => next.to.as_str(),
                    None => break,
                };
            }
        }
    }

    pta.locations
        .iter()
        .map(|l| {
            let col = cols.get(l.id.as_str()).copied().unwrap_or(0);
            let row = rows.get(l.id.as_str()).copied().unwrap_or(0);
            (l.id.as_str(), (col * COLUMN_SPACING, row * ROW_SPACING))
        })
        .collect()
}

/// Serialise a validated model (plus its queries) as an UPPAAL XML
/// document. Deterministic: identical models yield identical bytes.
pub fn export_xml(pta: &Pta, queries: &[Query]) -> Result<String, XmlError> {
    let violations = pta.validate();
    if !violations.is_empty() {
        return Err(XmlError::Invalid(violations));
    }
    let positions = layout(pta);
    let xml_id: BTreeMap<&str, String> = pta
        .locations
        .iter()
        .enumerate()
        .map(|(i, l)| (l.id.as_str(), format!("id{i}")))
        .collect();

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n");
    out.push_str("<!DOCTYPE nta PUBLIC '-//Uppaal Team//DTD Flat System 1.1//EN' 'http://www.it.uu.se/research/group/darts/uppaal/flat-1_1.dtd'>\n");
    out.push_str("<nta>\n");
    let decls: Vec<String> = pta.clocks.iter().map(|c| format!("clock {c};")).collect();
    out.push_str(&format!(
        "  <declaration>{}</declaration>\n",
        escape(&decls.join("\n"))
    ));
    out.push_str("  <template>\n");
    out.push_str("    <name>Process</name>\n");

    for l in &pta.locations {
        let (x, y) = positions[l.id.as_str()];
        let id = &xml_id[l.id.as_str()];
        if l.is_branch_point {
            out.push_str(&format!(
                "    <branchpoint id=\"{id}\" x=\"{x}\" y=\"{y}\">\n"
            ));
            out.push_str(&format!(
                "      <name x=\"{}\" y=\"{}\">{}</name>\n",
                x - 10,
                y - 34,
                escape(&l.id)
            ));
            out.push_str("    </branchpoint>\n");
        } else {
            out.push_str(&format!("    <location id=\"{id}\" x=\"{x}\" y=\"{y}\">\n"));
            out.push_str(&format!(
                "      <name x=\"{}\" y=\"{}\">{}</name>\n",
                x - 10,
                y - 34,
                escape(&l.id)
            ));
            if let Some(rate) = l.rate {
                out.push_str(&format!(
                    "      <label kind=\"exponentialrate\" x=\"{}\" y=\"{}\">{}</label>\n",
                    x - 10,
                    y + 17,
                    rate
                ));
            }
            out.push_str("    </location>\n");
        }
    }

    let init = pta
        .locations
        .iter()
        .find(|l| l.is_initial)
        .expect("validated");
    out.push_str(&format!(
        "    <init ref=\"{}\"/>\n",
        xml_id[init.id.as_str()]
    ));

    for e in &pta.edges {
        let (x1, y1) = positions[e.from.as_str()];
        let (x2, y2) = positions[e.to.as_str()];
        let (mx, my) = ((x1 + x2) / 2, (y1 + y2) / 2);
        out.push_str("    <transition>\n");
        out.push_str(&format!(
            "      <source ref=\"{}\"/>\n",
            xml_id[e.from.as_str()]
        ));
        out.push_str(&format!(
            "      <target ref=\"{}\"/>\n",
            xml_id[e.to.as_str()]
        ));
        if let Some(g) = &e.guard {
            out.push_str(&format!(
                "      <label kind=\"guard\" x=\"{mx}\" y=\"{}\">{}</label>\n",
                my - 17,
                escape(&format!("{} >= {}", g.clock, g.min_seconds))
            ));
        }
        if let Some(c) = &e.reset {
            out.push_str(&format!(
                "      <label kind=\"assignment\" x=\"{mx}\" y=\"{}\">{}</label>\n",
                my + 17,
                escape(&format!("{c} = 0"))
            ));
        }
        if let Some(w) = e.weight {
            out.push_str(&format!(
                "      <label kind=\"probability\" x=\"{mx}\" y=\"{my}\">{w}</label>\n"
            ));
        }
        out.push_str("    </transition>\n");
    }

    out.push_str("  </template>\n");
    out.push_str("  <system>system Process;</system>\n");
    out.push_str("  <queries>\n");
    for q in queries {
        out.push_str("    <query>\n");
        out.push_str(&format!(
            "      <formula>{}</formula>\n",
            escape(&q.formula())
        ));
        out.push_str("      <comment></comment>\n");
        out.push_str("    </query>\n");
    }
    out.push_str("  </queries>\n");
    out.push_str("</nta>\n");
    Ok(out)
}

/// The companion `.q` file: one query formula per line.
pub fn render_query_file(queries: &[Query]) -> String {
    let mut out = String::new();
    for q in queries {
        out.push_str(&q.formula());
        out.push('\n');
    }
    out
}

#[derive(Default)]
struct PendingLocation {
    xml_id: String,
    name: Option<String>,
    rate: Option<f64>,
    is_branch_point: bool,
}

#[derive(Default)]
struct PendingTransition {
    source: Option<String>,
    target: Option<String>,
    guard: Option<ClockGuard>,
    reset: Option<String>,
    weight: Option<u64>,
}

/// Parse a document produced by [`export_xml`] (or structurally
/// equivalent). Unsupported UPPAAL features and invariant violations are
/// rejected with named errors.
pub fn import_xml(bytes: &[u8]) -> Result<Pta, XmlError> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().trim_text(true);

    let mut templates_seen = 0usize;
    let mut clocks: Vec<String> = Vec::new();
    let mut locations: Vec<Location> = Vec::new();
    let mut name_of: BTreeMap<String, String> = BTreeMap::new();
    let mut edges: Vec<Edge> = Vec::new();
    let mut init_ref: Option<String> = None;

    let mut element_stack: Vec<String> = Vec::new();
    let mut location: Option<PendingLocation> = None;
    let mut transition: Option<PendingTransition> = None;
    let mut label_kind: Option<String> = None;
    let mut buf = Vec::new();

    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| XmlError::Malformed(e.to_string()))?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let tag = String::from_utf8_lossy(e.name().as_ref()).to_string();
                let empty = matches!(event, Event::Empty(_));
                let attr = |name: &str| -> Option<String> {
                    e.attributes().filter_map(Result::ok).find_map(|a| {
                        (a.key.as_ref() == name.as_bytes())
                            .then(|| String::from_utf8_lossy(&a.value).to_string())
                    })
                };
                match tag.as_str() {
                    "template" => {
                        templates_seen += 1;
                        if templates_seen > 1 {
                            return Err(XmlError::Unsupported("multiple templates".to_string()));
                        }
                    }
                    "location" | "branchpoint" => {
                        location = Some(PendingLocation {
                            xml_id: attr("id")
                                .ok_or_else(|| XmlError::Missing(format!("{tag} id")))?,
                            is_branch_point: tag == "branchpoint",
                            ..PendingLocation::default()
                        });
                        if empty {
                            finish_location(
                                location.take().expect("just set"),
                                &mut locations,
                                &mut name_of,
                            )?;
                        }
                    }
                    "transition" => transition = Some(PendingTransition::default()),
                    "label" => {
                        let kind =
                            attr("kind").ok_or_else(|| XmlError::Missing("label kind".into()))?;
                        match kind.as_str() {
                            "exponentialrate" | "guard" | "assignment" | "probability" => {
                                label_kind = Some(kind);
                            }
                            "synchronisation" => {
                                return Err(XmlError::Unsupported(
                                    "synchronisation channel".to_string(),
                                ))
                            }
                            other => {
                                return Err(XmlError::Unsupported(format!("label kind {other}")))
                            }
                        }
                    }
                    "init" => {
                        init_ref = attr("ref");
                    }
                    "source" => {
                        if let Some(t) = transition.as_mut() {
                            t.source = attr("ref");
                        }
                    }
                    "target" => {
                        if let Some(t) = transition.as_mut() {
                            t.target = attr("ref");
                        }
                    }
                    "nta" | "declaration" | "name" | "system" | "queries" | "query" | "formula"
                    | "comment" => {}
                    other => return Err(XmlError::Unsupported(format!("element {other}"))),
                }
                if !empty {
                    element_stack.push(tag);
                }
            }
            Event::End(ref e) => {
                let tag = String::from_utf8_lossy(e.name().as_ref()).to_string();
                element_stack.pop();
                match tag.as_str() {
                    "location" | "branchpoint" => {
                        if let Some(pending) = location.take() {
                            finish_location(pending, &mut locations, &mut name_of)?;
                        }
                    }
                    "transition" => {
                        if let Some(t) = transition.take() {
                            edges.push(Edge {
                                from: t
                                    .source
                                    .ok_or_else(|| XmlError::Missing("transition source".into()))?,
                                to: t
                                    .target
                                    .ok_or_else(|| XmlError::Missing("transition target".into()))?,
                                weight: t.weight,
                                guard: t.guard,
                                reset: t.reset,
                            });
                        }
                    }
                    "label" => label_kind = None,
                    _ => {}
                }
            }
            Event::Text(t) => {
                let text = t
                    .unescape()
                    .map_err(|e| XmlError::Malformed(e.to_string()))?
                    .into_owned();
                let context = element_stack.last().map(String::as_str).unwrap_or("");
                match context {
                    "declaration" => parse_declarations(&text, &mut clocks)?,
                    "name" => {
                        if let Some(l) = location.as_mut() {
                            l.name = Some(text);
                        }
                    }
                    "label" => {
                        apply_label(label_kind.as_deref(), &text, &mut location, &mut transition)?;
                    }
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }

    if templates_seen == 0 {
        return Err(XmlError::Missing("template".to_string()));
    }
    let init_ref = init_ref.ok_or_else(|| XmlError::Missing("init reference".to_string()))?;

    // Resolve xml ids to names and flag the initial/end locations.
    let resolve = |xml_id: &str| -> Result<String, XmlError> {
        name_of
            .get(xml_id)
            .cloned()
            .ok_or_else(|| XmlError::Malformed(format!("unknown location ref `{xml_id}`")))
    };
    let init_name = resolve(&init_ref)?;
    for l in &mut locations {
        l.is_initial = l.id == init_name;
        l.is_end = l.id == "end";
    }
    for e in &mut edges {
        e.from = resolve(&e.from)?;
        e.to = resolve(&e.to)?;
    }

    let pta = Pta {
        locations,
        edges,
        clocks,
        end_location: "end".to_string(),
    };
    let violations = pta.validate();
    if !violations.is_empty() {
        return Err(XmlError::Invalid(violations));
    }
    Ok(pta)
}

fn finish_location(
    pending: PendingLocation,
    locations: &mut Vec<Location>,
    name_of: &mut BTreeMap<String, String>,
) -> Result<(), XmlError> {
    let name = pending
        .name
        .ok_or_else(|| XmlError::Missing(format!("name of location {}", pending.xml_id)))?;
    name_of.insert(pending.xml_id, name.clone());
    locations.push(Location {
        id: name,
        rate: pending.rate,
        is_initial: false,
        is_end: false,
        is_branch_point: pending.is_branch_point,
    });
    Ok(())
}

fn parse_declarations(text: &str, clocks: &mut Vec<String>) -> Result<(), XmlError> {
    for statement in text.split(';') {
        let statement = statement.trim();
        if statement.is_empty() {
            continue;
        }
        if let Some(rest) = statement.strip_prefix("clock ") {
            for clock in rest.split(',') {
                clocks.push(clock.trim().to_string());
            }
        } else if statement.starts_with("chan") || statement.starts_with("broadcast chan") {
            return Err(XmlError::Unsupported("channel".to_string()));
        } else {
            return Err(XmlError::Unsupported(format!("declaration `{statement}`")));
        }
    }
    Ok(())
}

fn apply_label(
    kind: Option<&str>,
    text: &str,
    location: &mut Option<PendingLocation>,
    transition: &mut Option<PendingTransition>,
) -> Result<(), XmlError> {
    match kind {
        Some("exponentialrate") => {
            let rate: f64 = text
                .trim()
                .parse()
                .map_err(|_| XmlError::Malformed(format!("bad exponential rate `{text}`")))?;
            if let Some(l) = location.as_mut() {
                l.rate = Some(rate);
            }
        }
        Some("guard") => {
            let (clock, bound) = text
                .split_once(">=")
                .ok_or_else(|| XmlError::Malformed(format!("unsupported guard `{text}`")))?;
            let min_seconds: f64 = bound
                .trim()
                .parse()
                .map_err(|_| XmlError::Malformed(format!("bad guard bound `{text}`")))?;
            if let Some(t) = transition.as_mut() {
                t.guard = Some(ClockGuard {
                    clock: clock.trim().to_string(),
                    min_seconds,
                });
            }
        }
        Some("assignment") => {
            let (clock, value) = text
                .split_once('=')
                .ok_or_else(|| XmlError::Malformed(format!("unsupported assignment `{text}`")))?;
            if value.trim() != "0" {
                return Err(XmlError::Unsupported(format!("assignment `{text}`")));
            }
            if let Some(t) = transition.as_mut() {
                t.reset = Some(clock.trim().to_string());
            }
        }
        Some("probability") => {
            let weight: u64 = text
                .trim()
                .parse()
                .map_err(|_| XmlError::Malformed(format!("bad probability weight `{text}`")))?;
            if let Some(t) = transition.as_mut() {
                t.weight = Some(weight);
            }
        }
        _ => {}
    }
    Ok(())
}
