//! Property graph built from person records: nodes keyed on (label, name),
//! first-writer-wins merging, Cypher and JSONL export.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{is_absent, FieldKey, PersonRecord, Relation, SchemaDefinition};
use crate::util::{normalize_name, sha256_hex};

/// Predicate used when a relation string has no mapping.
pub const FALLBACK_PREDICATE: &str = "relatedTo";
/// Edge property holding the relation string as written in the record.
pub const RAW_RELATION_PROPERTY: &str = "relation";
/// Person property holding the era; the attribute vocabulary has no entry for it.
pub const ERA_PROPERTY: &str = "era";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeLabel {
    Person,
    Achievement,
    Work,
    Position,
    Organization,
    Event,
}

impl NodeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeLabel::Person => "Person",
            NodeLabel::Achievement => "Achievement",
            NodeLabel::Work => "Work",
            NodeLabel::Position => "Position",
            NodeLabel::Organization => "Organization",
            NodeLabel::Event => "Event",
        }
    }
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Deterministic id of a node: hex SHA-256 of `label \0 normalized name`, first 16 digits.
pub fn node_id(label: NodeLabel, name: &str) -> String {
    let mut h = sha256_hex(format!("{}\0{}", label.as_str(), normalize_name(name)));
    h.truncate(16);
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub node_id: String,
    pub label: NodeLabel,
    pub canonical_name: String,
    #[serde(default)]
    pub properties: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from_id: String,
    pub to_id: String,
    pub predicate: String,
    #[serde(default)]
    pub properties: BTreeMap<String, String>,
}

/// A property value that lost to an earlier one during merging.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub node_id: String,
    pub property: String,
    pub kept: String,
    pub discarded: String,
    pub source_record: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDocument {
    /// Record the document was built from; names the source in conflict logs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub conflicts: Vec<Conflict>,
}

impl GraphDocument {
    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty()
    }

    /// Checks that node ids are unique and every edge endpoint exists.
    pub fn check(&self) -> Result<(), GraphError> {
        let mut ids = BTreeMap::new();
        for n in &self.nodes {
            if n.canonical_name.is_empty() {
                return Err(GraphError::EmptyName(n.node_id.clone()));
            }
            if ids.insert(n.node_id.as_str(), ()).is_some() {
                return Err(GraphError::DuplicateNode(n.node_id.clone()));
            }
        }
        for e in &self.edges {
            for end in [&e.from_id, &e.to_id] {
                if !ids.contains_key(end.as_str()) {
                    return Err(GraphError::DanglingEdge {
                        predicate: e.predicate.clone(),
                        node_id: end.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node id {0} appears twice")]
    DuplicateNode(String),
    #[error("node {0} has an empty name")]
    EmptyName(String),
    #[error("{predicate} edge points at missing node {node_id}")]
    DanglingEdge { predicate: String, node_id: String },
    #[error("line {line}: {message}")]
    Jsonl { line: usize, message: String },
}

/// Predicate for a relation string. With `reversed`, the edge runs from the
/// related person to the record's subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MappedRelation {
    pub predicate: &'static str,
    pub reversed: bool,
}

const RELATION_TABLE: &[(&str, &str, bool)] = &[
    ("配偶", "hasSpouse", false),
    ("妻", "hasSpouse", false),
    ("妻子", "hasSpouse", false),
    ("夫", "hasSpouse", false),
    ("丈夫", "hasSpouse", false),
    ("夫人", "hasSpouse", false),
    ("spouse", "hasSpouse", false),
    ("wife", "hasSpouse", false),
    ("husband", "hasSpouse", false),
    ("父亲", "hasParent", false),
    ("母亲", "hasParent", false),
    ("父", "hasParent", false),
    ("母", "hasParent", false),
    ("father", "hasParent", false),
    ("mother", "hasParent", false),
    ("儿子", "hasParent", true),
    ("女儿", "hasParent", true),
    ("长子", "hasParent", true),
    ("次子", "hasParent", true),
    ("son", "hasParent", true),
    ("daughter", "hasParent", true),
    ("学生", "hasStudent", false),
    ("弟子", "hasStudent", false),
    ("门生", "hasStudent", false),
    ("student", "hasStudent", false),
    ("导师", "hasStudent", true),
    ("老师", "hasStudent", true),
    ("teacher", "hasStudent", true),
    ("mentor", "hasStudent", true),
    ("同僚", "hasColleague", false),
    ("同事", "hasColleague", false),
    ("colleague", "hasColleague", false),
    ("上级", "hasSupervisor", false),
    ("上司", "hasSupervisor", false),
    ("superior", "hasSupervisor", false),
    ("supervisor", "hasSupervisor", false),
    ("下级", "hasSubordinate", false),
    ("下属", "hasSubordinate", false),
    ("幕僚", "hasSubordinate", false),
    ("subordinate", "hasSubordinate", false),
];

/// Maps a relation string (exact match after trimming, ASCII case-insensitive)
/// onto a relation predicate. Unmatched strings map to `relatedTo`.
pub fn map_relation_string(raw: &str) -> MappedRelation {
    let key = raw.trim().to_ascii_lowercase();
    RELATION_TABLE
        .iter()
        .find(|(k, _, _)| *k == key)
        .map(|&(_, predicate, reversed)| MappedRelation {
            predicate,
            reversed,
        })
        .unwrap_or(MappedRelation {
            predicate: FALLBACK_PREDICATE,
            reversed: false,
        })
}

/// Separators between titles in the works field.
const WORK_SEPARATORS: &[char] = &['、', '；', ';', '，', ','];

#[derive(Default)]
struct Builder {
    nodes: BTreeMap<String, GraphNode>,
    edges: BTreeMap<(String, String, String), GraphEdge>,
    conflicts: Vec<Conflict>,
}

impl Builder {
    fn add_node(&mut self, node: &GraphNode, source: &str) {
        let Some(existing) = self.nodes.get_mut(&node.node_id) else {
            self.nodes.insert(node.node_id.clone(), node.clone());
            return;
        };
        for (k, v) in &node.properties {
            match existing.properties.get(k) {
                None => {
                    existing.properties.insert(k.clone(), v.clone());
                }
                Some(kept) if kept != v => self.conflicts.push(Conflict {
                    node_id: node.node_id.clone(),
                    property: k.clone(),
                    kept: kept.clone(),
                    discarded: v.clone(),
                    source_record: source.to_string(),
                }),
                Some(_) => {}
            }
        }
    }

    /// Adds a node built from a label, name and properties; returns its id.
    fn node(
        &mut self,
        label: NodeLabel,
        name: &str,
        props: BTreeMap<String, String>,
        source: &str,
    ) -> String {
        let canonical_name = normalize_name(name);
        let node = GraphNode {
            node_id: node_id(label, &canonical_name),
            label,
            canonical_name,
            properties: props,
        };
        self.add_node(&node, source);
        node.node_id
    }

    fn add_edge(&mut self, edge: GraphEdge) {
        let key = (
            edge.from_id.clone(),
            edge.to_id.clone(),
            edge.predicate.clone(),
        );
        self.edges.entry(key).or_insert(edge);
    }

    fn edge(&mut self, from: &str, to: &str, predicate: &str, props: BTreeMap<String, String>) {
        self.add_edge(GraphEdge {
            from_id: from.into(),
            to_id: to.into(),
            predicate: predicate.into(),
            properties: props,
        });
    }

    fn finish(self, source: Option<String>) -> GraphDocument {
        let mut nodes: Vec<GraphNode> = self.nodes.into_values().collect();
        nodes.sort_by(|a, b| {
            (a.label, &a.canonical_name, &a.node_id).cmp(&(b.label, &b.canonical_name, &b.node_id))
        });
        let order: BTreeMap<&str, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.node_id.as_str(), i))
            .collect();
        let mut edges: Vec<GraphEdge> = self.edges.into_values().collect();
        edges.sort_by_key(|e| {
            (
                order[e.from_id.as_str()],
                e.predicate.clone(),
                order[e.to_id.as_str()],
            )
        });
        GraphDocument {
            source,
            nodes,
            edges,
            conflicts: self.conflicts,
        }
    }
}

fn props<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .filter(|(_, v)| !is_absent(v))
        .map(|(k, v)| (k.to_string(), v.trim().to_string()))
        .collect()
}

/// Attribute key for a scalar person field, spelled as in the vocabulary.
fn person_attribute(schema: &SchemaDefinition, key: FieldKey) -> Option<&str> {
    let name = match key {
        FieldKey::Name => "hasName",
        FieldKey::Alias => "hasAlias",
        FieldKey::Gender => "hasGender",
        FieldKey::Ethnicity => "hasEthnic",
        FieldKey::Birthplace => "hasBirthPlace",
        FieldKey::DateOfBirth => "hasBirthDate",
        FieldKey::DateOfDeath => "hasDeathDate",
        FieldKey::Domain => "hasField",
        FieldKey::Era => return Some(ERA_PROPERTY),
        _ => return None,
    };
    schema.resolve_attribute(name)
}

/// Builds the graph of one record. Absent values (empty or `未知`) produce
/// neither properties nor nodes.
pub fn record_to_graph(record: &PersonRecord, schema: &SchemaDefinition) -> GraphDocument {
    let mut b = Builder::default();
    let subject_name = normalize_name(&record.name);
    if subject_name.is_empty() {
        return GraphDocument::default();
    }
    let source = subject_name.clone();

    let attrs = FieldKey::ALL
        .iter()
        .filter_map(|k| Some((person_attribute(schema, *k)?, record.scalar(*k)?)));
    let person = b.node(NodeLabel::Person, &subject_name, props(attrs), &source);

    for a in &record.achievements {
        let name = [&a.influence, &a.location, &a.time]
            .into_iter()
            .find(|v| !is_absent(v));
        let Some(name) = name else { continue };
        let p = props([
            ("influence", a.influence.as_str()),
            ("location", &a.location),
            ("time", &a.time),
        ]);
        let id = b.node(NodeLabel::Achievement, name, p, &source);
        b.edge(&person, &id, "ParticipateIn", BTreeMap::new());
    }

    for title in record
        .works
        .split(WORK_SEPARATORS)
        .map(str::trim)
        .filter(|t| !is_absent(t))
    {
        let id = b.node(NodeLabel::Work, title, BTreeMap::new(), &source);
        b.edge(&person, &id, "Create", BTreeMap::new());
    }

    for pos in record.positions.iter().filter(|p| !is_absent(&p.title)) {
        let p = props([("start_time", pos.start_time.as_str())]);
        let id = b.node(NodeLabel::Position, &pos.title, p.clone(), &source);
        b.edge(&person, &id, "workFor", p);
    }

    for rel in record
        .social_relations
        .iter()
        .chain(&record.family_relations)
    {
        add_relation(&mut b, schema, &person, rel, &source);
    }
    b.finish(Some(source))
}

fn add_relation(
    b: &mut Builder,
    schema: &SchemaDefinition,
    subject: &str,
    rel: &Relation,
    source: &str,
) {
    if is_absent(&rel.person) {
        return;
    }
    let name_attr = schema.resolve_attribute("hasName").unwrap_or("hasName");
    let other = b.node(
        NodeLabel::Person,
        &rel.person,
        props([(name_attr, normalize_name(&rel.person).as_str())]),
        source,
    );
    if other == subject {
        return;
    }
    let mapped = map_relation_string(&rel.relation);
    let edge_props = props([(RAW_RELATION_PROPERTY, rel.relation.as_str())]);
    let (from, to) = if mapped.reversed {
        (&other, &subject.to_string())
    } else {
        (&subject.to_string(), &other)
    };
    b.edge(from, to, mapped.predicate, edge_props);
}

/// Merges documents in order. Nodes align on (label, normalized name); the
/// first value seen for a property is kept and later different values are
/// logged as conflicts. Edges are deduplicated on (from, to, predicate).
pub fn merge_graphs(docs: &[GraphDocument]) -> GraphDocument {
    if let [single] = docs {
        return single.clone();
    }
    let mut b = Builder::default();
    for (i, doc) in docs.iter().enumerate() {
        let source = doc
            .source
            .clone()
            .unwrap_or_else(|| format!("document {}", i + 1));
        b.conflicts.extend(doc.conflicts.iter().cloned());
        for n in &doc.nodes {
            b.add_node(n, &source);
        }
        for e in &doc.edges {
            b.add_edge(e.clone());
        }
    }
    b.finish(None)
}

fn cypher_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn cypher_ident(s: &str) -> String {
    let plain = s
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if plain {
        s.to_string()
    } else {
        format!("`{}`", s.replace('`', "``"))
    }
}

fn node_pattern(var: &str, n: &GraphNode) -> String {
    format!(
        "({var}:{} {{name: {}}})",
        n.label,
        cypher_string(&n.canonical_name)
    )
}

fn set_clause(var: &str, props: &BTreeMap<String, String>) -> String {
    props
        .iter()
        .map(|(k, v)| format!("{var}.{} = {}", cypher_ident(k), cypher_string(v)))
        .collect::<Vec<_>>()
        .join(", ")
}

/// One statement per node and per edge, in document order.
///
/// Nodes are `MERGE`d on (label, name) and their properties set in a
/// separate statement, so running the script twice changes nothing.
pub fn cypher_statements(graph: &GraphDocument) -> Vec<String> {
    let mut nodes: Vec<&GraphNode> = graph.nodes.iter().collect();
    nodes.sort_by(|a, b| (a.label, &a.canonical_name).cmp(&(b.label, &b.canonical_name)));
    let by_id: BTreeMap<&str, &GraphNode> = graph
        .nodes
        .iter()
        .map(|n| (n.node_id.as_str(), n))
        .collect();
    let mut out = Vec::new();
    for n in nodes {
        out.push(format!("MERGE {};", node_pattern("", n)));
        let mut props = n.properties.clone();
        props.insert("node_id".into(), n.node_id.clone());
        out.push(format!(
            "MATCH {} SET {};",
            node_pattern("n", n),
            set_clause("n", &props)
        ));
    }
    let mut edges: Vec<(&GraphNode, &GraphEdge, &GraphNode)> = graph
        .edges
        .iter()
        .map(|e| (by_id[e.from_id.as_str()], e, by_id[e.to_id.as_str()]))
        .collect();
    edges.sort_by(|x, y| {
        (
            x.0.label,
            &x.0.canonical_name,
            &x.1.predicate,
            x.2.label,
            &x.2.canonical_name,
        )
            .cmp(&(
                y.0.label,
                &y.0.canonical_name,
                &y.1.predicate,
                y.2.label,
                &y.2.canonical_name,
            ))
    });
    for (from, e, to) in edges {
        let mut s = format!(
            "MATCH {}, {} MERGE (a)-[r:{}]->(b)",
            node_pattern("a", from),
            node_pattern("b", to),
            cypher_ident(&e.predicate)
        );
        if !e.properties.is_empty() {
            let _ = write!(s, " SET {}", set_clause("r", &e.properties));
        }
        s.push(';');
        out.push(s);
    }
    out
}

/// Cypher import script: a header comment followed by [`cypher_statements`].
pub fn export_cypher(graph: &GraphDocument) -> String {
    let mut out = format!(
        "// person graph: {} nodes, {} relationships\n",
        graph.nodes.len(),
        graph.edges.len()
    );
    for s in cypher_statements(graph) {
        out.push_str(&s);
        out.push('\n');
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum JsonlLine {
    Source { source: String },
    Node(GraphNode),
    Edge(GraphEdge),
    Conflict(Conflict),
}

/// One JSON object per line: the source (if any), nodes, edges, then conflicts.
pub fn export_jsonl(graph: &GraphDocument) -> String {
    let mut out = String::new();
    let mut push = |line: JsonlLine| {
        out.push_str(&serde_json::to_string(&line).expect("graph serializes"));
        out.push('\n');
    };
    if let Some(source) = &graph.source {
        push(JsonlLine::Source {
            source: source.clone(),
        });
    }
    graph
        .nodes
        .iter()
        .cloned()
        .for_each(|n| push(JsonlLine::Node(n)));
    graph
        .edges
        .iter()
        .cloned()
        .for_each(|e| push(JsonlLine::Edge(e)));
    graph
        .conflicts
        .iter()
        .cloned()
        .for_each(|c| push(JsonlLine::Conflict(c)));
    out
}

pub fn import_jsonl(text: &str) -> Result<GraphDocument, GraphError> {
    let mut doc = GraphDocument::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonlLine = serde_json::from_str(line).map_err(|e| GraphError::Jsonl {
            line: i + 1,
            message: e.to_string(),
        })?;
        match parsed {
            JsonlLine::Source { source } => doc.source = Some(source),
            JsonlLine::Node(n) => doc.nodes.push(n),
            JsonlLine::Edge(e) => doc.edges.push(e),
            JsonlLine::Conflict(c) => doc.conflicts.push(c),
        }
    }
    doc.check()?;
    Ok(doc)
}
