#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use personkg_core::schema::{validate_record, PersonRecord, SchemaDefinition, ValidationMode};

pub const SAMPLE_RECORD: &str = include_str!("../fixtures/sample_record.json");

pub fn sample_record() -> PersonRecord {
    validate_record(
        SAMPLE_RECORD,
        &SchemaDefinition::builtin(),
        ValidationMode::Lenient,
    )
    .expect("sample record validates leniently")
    .record
}

/// Just enough of a property-graph store to replay the statements that
/// `export_cypher` emits: `MERGE (:L {name: s})`, `MATCH (n:L {name: s}) SET ...`
/// and `MATCH (a..), (b..) MERGE (a)-[r:T]->(b) [SET ...]`.
type NodeKey = (String, String);
type Props = BTreeMap<String, String>;

#[derive(Debug, Default, Clone, PartialEq)]
pub struct MiniStore {
    pub nodes: BTreeMap<NodeKey, Props>,
    pub rels: BTreeMap<(NodeKey, String, NodeKey), Props>,
}

struct Lexer<'a> {
    s: &'a [u8],
    i: usize,
}

impl<'a> Lexer<'a> {
    fn new(s: &'a str) -> Self {
        Lexer {
            s: s.as_bytes(),
            i: 0,
        }
    }

    fn ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.ws();
        if self.s[self.i..].starts_with(tok.as_bytes()) {
            self.i += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) {
        assert!(
            self.eat(tok),
            "expected {tok:?} at {:?}",
            String::from_utf8_lossy(&self.s[self.i..])
        );
    }

    fn ident(&mut self) -> String {
        self.ws();
        if self.eat("`") {
            let mut out = Vec::new();
            loop {
                if self.s[self.i..].starts_with(b"``") {
                    out.push(b'`');
                    self.i += 2;
                } else if self.s[self.i] == b'`' {
                    self.i += 1;
                    break;
                } else {
                    out.push(self.s[self.i]);
                    self.i += 1;
                }
            }
            return String::from_utf8(out).unwrap();
        }
        let start = self.i;
        while self.i < self.s.len()
            && (self.s[self.i].is_ascii_alphanumeric() || self.s[self.i] == b'_')
        {
            self.i += 1;
        }
        String::from_utf8(self.s[start..self.i].to_vec()).unwrap()
    }

    fn string(&mut self) -> String {
        self.expect("\"");
        let mut out = Vec::new();
        loop {
            let b = self.s[self.i];
            self.i += 1;
            match b {
                b'"' => break,
                b'\\' => {
                    let e = self.s[self.i];
                    self.i += 1;
                    out.push(match e {
                        b'n' => b'\n',
                        b'r' => b'\r',
                        b't' => b'\t',
                        other => other,
                    });
                }
                other => out.push(other),
            }
        }
        String::from_utf8(out).unwrap()
    }

    /// `(var:Label {name: "..."})`, returns (var, (label, name)).
    fn node(&mut self) -> (String, (String, String)) {
        self.expect("(");
        let var = self.ident();
        self.expect(":");
        let label = self.ident();
        self.expect("{");
        assert_eq!(self.ident(), "name");
        self.expect(":");
        let name = self.string();
        self.expect("}");
        self.expect(")");
        (var, (label, name))
    }

    fn sets(&mut self) -> Vec<(String, String, String)> {
        let mut out = Vec::new();
        if !self.eat("SET") {
            return out;
        }
        loop {
            let var = self.ident();
            self.expect(".");
            let key = self.ident();
            self.expect("=");
            out.push((var, key, self.string()));
            if !self.eat(",") {
                break;
            }
        }
        out
    }
}

impl MiniStore {
    pub fn run_script(&mut self, script: &str) {
        for line in script.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            self.run(line);
        }
    }

    pub fn run(&mut self, stmt: &str) {
        let mut lx = Lexer::new(stmt);
        if lx.eat("MERGE") {
            let (_, key) = lx.node();
            self.nodes.entry(key).or_default();
        } else {
            lx.expect("MATCH");
            let (v1, k1) = lx.node();
            if lx.eat(",") {
                let (_, k2) = lx.node();
                assert!(
                    self.nodes.contains_key(&k1) && self.nodes.contains_key(&k2),
                    "MATCH found nothing"
                );
                lx.expect("MERGE");
                lx.expect("(");
                lx.ident();
                lx.expect(")-[");
                lx.ident();
                lx.expect(":");
                let rel_type = lx.ident();
                lx.expect("]->(");
                lx.ident();
                lx.expect(")");
                let props = self.rels.entry((k1, rel_type, k2)).or_default();
                for (_, k, v) in lx.sets() {
                    props.insert(k, v);
                }
            } else {
                let props = self.nodes.get_mut(&k1).expect("MATCH found nothing");
                for (var, k, v) in lx.sets() {
                    assert_eq!(var, v1);
                    props.insert(k, v);
                }
            }
        }
        lx.expect(";");
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.nodes.keys().map(|(l, _)| l.as_str()).collect()
    }
}
