mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use common::MiniStore;
use personkg_core::corpus::{clean_text, dedupe, segment, CorpusDocument, SourceKind};
use personkg_core::dataset::{stratified_sample, InstructionSample, SampleMeta};
use personkg_core::eval::{aggregate, builtin_schemes, exact_match_score, similarity_score};
use personkg_core::gateway::{parse_model_output, MockEmbedder};
use personkg_core::graph::{export_cypher, merge_graphs, record_to_graph, GraphDocument};
use personkg_core::prompt::{Language, PromptTemplate};
use personkg_core::schema::{
    validate_record, Achievement, KeyLanguage, PersonRecord, Position, Relation, SchemaDefinition,
    ValidationMode,
};
use personkg_core::sensitivity::{scheme_sensitivity, variance, SensitivityInput, VarianceMode};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        ..ProptestConfig::default()
    }
}

fn text() -> impl Strategy<Value = String> {
    "\\PC{0,12}"
}

fn record_strategy() -> impl Strategy<Value = PersonRecord> {
    let scalars = proptest::collection::vec(text(), 10);
    let achievements = proptest::collection::vec((text(), text(), text()), 0..3);
    let relations = proptest::collection::vec((text(), text()), 0..3);
    let family = proptest::collection::vec((text(), text()), 0..3);
    let positions = proptest::collection::vec((text(), text()), 0..3);
    (
        "[\\p{Han}A-Za-z][\\PC]{0,8}",
        scalars,
        achievements,
        relations,
        family,
        positions,
    )
        .prop_map(|(name, s, ach, soc, fam, pos)| PersonRecord {
            name,
            alias: s[0].clone(),
            gender: s[1].clone(),
            ethnicity: s[2].clone(),
            era: s[3].clone(),
            birthplace: s[4].clone(),
            birth_date: s[5].clone(),
            death_date: s[6].clone(),
            works: s[7].clone(),
            field_domain: s[8].clone(),
            achievements: ach
                .into_iter()
                .map(|(influence, location, time)| Achievement {
                    influence,
                    location,
                    time,
                })
                .collect(),
            social_relations: soc
                .into_iter()
                .map(|(person, relation)| Relation { person, relation })
                .collect(),
            family_relations: fam
                .into_iter()
                .map(|(person, relation)| Relation { person, relation })
                .collect(),
            positions: pos
                .into_iter()
                .map(|(title, start_time)| Position { title, start_time })
                .collect(),
        })
}

/// Records over small value pools so that merging produces overlaps and conflicts.
fn overlapping_record() -> impl Strategy<Value = PersonRecord> {
    let names = prop::sample::select(vec!["曾国藩", "李鸿章", "左宗棠", "曾纪泽"]);
    let values = prop::sample::select(vec!["", "未知", "1811", "1811年", "湖南"]);
    let rels = prop::sample::select(vec!["父亲", "儿子", "学生", "同僚", "挚友", ""]);
    (
        names.clone(),
        values.clone(),
        values,
        proptest::collection::vec((names, rels), 0..3),
        prop::sample::select(vec!["", "《家书》", "《家书》、《日记》"]),
    )
        .prop_map(|(name, birth, gender, rels, works)| PersonRecord {
            name: name.into(),
            birth_date: birth.into(),
            gender: gender.into(),
            works: works.into(),
            family_relations: rels
                .into_iter()
                .map(|(p, r)| Relation {
                    person: p.into(),
                    relation: r.into(),
                })
                .collect(),
            ..Default::default()
        })
}

type NodeKey = (String, String);
type EdgeKey = (String, String, String);

fn shape(
    g: &GraphDocument,
) -> (
    BTreeSet<NodeKey>,
    BTreeSet<EdgeKey>,
    BTreeMap<String, BTreeSet<String>>,
) {
    let nodes = g
        .nodes
        .iter()
        .map(|n| (n.node_id.clone(), n.canonical_name.clone()))
        .collect();
    let edges = g
        .edges
        .iter()
        .map(|e| (e.from_id.clone(), e.to_id.clone(), e.predicate.clone()))
        .collect();
    let keys = g
        .nodes
        .iter()
        .map(|n| (n.node_id.clone(), n.properties.keys().cloned().collect()))
        .collect();
    (nodes, edges, keys)
}

fn sample_with(stratum: &str, i: usize) -> InstructionSample {
    InstructionSample {
        instruction: format!("prompt {i}"),
        input: String::new(),
        output: "{}".into(),
        meta: SampleMeta {
            person_name: format!("p{i}"),
            strata_labels: BTreeSet::from([stratum.to_string()]),
        },
    }
}

proptest! {
    #![proptest_config(cases(1000))]

    #[test]
    fn exact_match_is_binary_and_symmetric(a in text(), b in text()) {
        let s = exact_match_score(&a, &b);
        prop_assert!(s == 0.0 || s == 100.0);
        prop_assert_eq!(s, exact_match_score(&b, &a));
        prop_assert_eq!(exact_match_score(&a, &a), 100.0);
    }

    #[test]
    fn similarity_symmetric_bounded_reflexive(a in text(), b in text()) {
        let ab = similarity_score(&a, &b, &MockEmbedder).unwrap();
        let ba = similarity_score(&b, &a, &MockEmbedder).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=100.0).contains(&ab));
        prop_assert_eq!(similarity_score(&a, &a, &MockEmbedder).unwrap(), 100.0);
    }

    #[test]
    fn aggregate_of_constant_is_constant(c in 0.0f64..=100.0) {
        for scheme in builtin_schemes() {
            let v = aggregate(&[c; 14], &scheme).unwrap();
            prop_assert!((v - c).abs() < 1e-9, "{} gave {}", scheme.name, v);
        }
    }

    #[test]
    fn aggregate_is_monotone(
        scores in proptest::collection::vec(0.0f64..=100.0, 14),
        field in 0usize..14,
        bump in 0.0f64..=100.0,
    ) {
        let mut better = scores.clone();
        better[field] = (better[field] + bump).min(100.0);
        for scheme in builtin_schemes() {
            prop_assert!(scheme.weights.iter().all(|w| *w > 0.0));
            let before = aggregate(&scores, &scheme).unwrap();
            let after = aggregate(&better, &scheme).unwrap();
            prop_assert!(after >= before, "{}: {} -> {}", scheme.name, before, after);
            prop_assert!((0.0..=100.0 + 1e-9).contains(&after));
        }
    }

    #[test]
    fn average_scheme_is_plain_mean(scores in proptest::collection::vec(0.0f64..=100.0, 14)) {
        let avg = &builtin_schemes()[0];
        let mean = scores.iter().sum::<f64>() / 14.0;
        prop_assert!((aggregate(&scores, avg).unwrap() - mean).abs() < 3e-3);
    }
}

proptest! {
    #![proptest_config(cases(256))]

    #[test]
    fn clean_text_is_idempotent(raw in "[\\PC\\s\u{200b}\u{feff}\u{3000}]{0,80}") {
        let once = clean_text(&raw);
        prop_assert_eq!(clean_text(&once), once);
    }

    #[test]
    fn segments_reassemble(raw in "[a-z。！？；.!? 曾国藩湘军]{0,400}", max in 50usize..200) {
        let text = clean_text(&raw);
        let segs = segment(&text, max).unwrap();
        prop_assert_eq!(segs.concat(), text);
        for s in &segs {
            prop_assert!(!s.is_empty());
            prop_assert!(s.chars().count() <= max);
        }
    }

    #[test]
    fn dedupe_keeps_first_occurrences(picks in proptest::collection::vec(0usize..4, 0..12)) {
        let pool = ["曾国藩创建湘军。", "李鸿章办洋务。", "左宗棠收复新疆。", "曾纪泽出使欧洲。"];
        let docs: Vec<CorpusDocument> = picks
            .iter()
            .enumerate()
            .map(|(i, &p)| CorpusDocument {
                doc_id: format!("d{i}"),
                person_name: "x".into(),
                source_kind: SourceKind::Encyclopedia,
                raw_text: pool[p].into(),
                segments: vec![],
                tags: vec![],
            })
            .collect();
        let (kept, stats) = dedupe(docs.clone(), None).unwrap();
        let mut seen = BTreeSet::new();
        let expected: Vec<String> = docs
            .iter()
            .filter(|d| seen.insert(d.raw_text.clone()))
            .map(|d| d.doc_id.clone())
            .collect();
        prop_assert_eq!(kept.iter().map(|d| d.doc_id.clone()).collect::<Vec<_>>(), expected);
        prop_assert_eq!(stats.exact_removed, docs.len() - kept.len());
    }

    #[test]
    fn parse_is_idempotent(
        body in "\\{(\"[a-z]{1,4}\":\\[?\"[^\"\\\\]{0,6}\"\\]?,?){0,4}\\}",
        prefix in "[^{}<`]{0,10}",
        fence in any::<bool>(),
    ) {
        let raw = if fence { format!("{prefix}```json\n{body}\n```") } else { format!("{prefix}{body}") };
        if let Ok(once) = parse_model_output(&raw, true) {
            prop_assert_eq!(parse_model_output(&once, true).unwrap(), once);
        }
    }

    #[test]
    fn render_is_injective(a in "\\PC{0,40}", b in "\\PC{0,40}") {
        for lang in [Language::Zh, Language::En] {
            let t = PromptTemplate::builtin(lang);
            let (ra, rb) = (t.render(&a), t.render(&b));
            if let (Ok(ra), Ok(rb)) = (ra, rb) {
                prop_assert_eq!(t.framed_text(&ra), Some(a.as_str()));
                prop_assert_eq!(a == b, ra == rb);
            }
        }
    }

    #[test]
    fn validate_inverts_serialize(record in record_strategy()) {
        let s = SchemaDefinition::builtin();
        let zh = validate_record(&record.to_json_string(&s, KeyLanguage::Zh), &s, ValidationMode::Strict).unwrap();
        let en = validate_record(&record.to_json_string(&s, KeyLanguage::En), &s, ValidationMode::Strict).unwrap();
        prop_assert_eq!(&zh.record, &record);
        prop_assert_eq!(&en.record, &record);
    }

    #[test]
    fn sampler_stays_proportional(a in 1usize..120, b in 1usize..120, c in 0usize..60, seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let mut samples = Vec::new();
        for (label, size) in [("a", a), ("b", b), ("c", c)] {
            let start = samples.len();
            samples.extend((0..size).map(|i| sample_with(label, start + i)));
        }
        let total = samples.len();
        let n = ((total as f64) * frac).round() as usize;
        let chosen = stratified_sample(&samples, n, seed).unwrap();
        prop_assert_eq!(chosen.len(), n);
        for (label, size) in [("a", a), ("b", b), ("c", c)] {
            let got = chosen.iter().filter(|s| s.meta.strata_labels.contains(label)).count();
            let exact = n as f64 * size as f64 / total as f64;
            prop_assert!((got as f64 - exact).abs() < 1.0, "{label}: {got} vs {exact}");
        }
    }

    #[test]
    fn merge_is_order_insensitive(records in proptest::collection::vec(overlapping_record(), 1..6)) {
        let s = SchemaDefinition::builtin();
        let docs: Vec<GraphDocument> = records.iter().map(|r| record_to_graph(r, &s)).collect();
        let forward = merge_graphs(&docs);
        let mut rev = docs.clone();
        rev.reverse();
        let backward = merge_graphs(&rev);
        prop_assert_eq!(shape(&forward), shape(&backward));
        forward.check().unwrap();
        let twice = merge_graphs(&[forward.clone(), forward.clone()]);
        prop_assert_eq!(&twice.nodes, &forward.nodes);
        prop_assert_eq!(&twice.edges, &forward.edges);
    }

    #[test]
    fn cypher_replay_preserves_counts(records in proptest::collection::vec(overlapping_record(), 1..6)) {
        let s = SchemaDefinition::builtin();
        let docs: Vec<GraphDocument> = records.iter().map(|r| record_to_graph(r, &s)).collect();
        let g = merge_graphs(&docs);
        let script = export_cypher(&g);
        let mut store = MiniStore::default();
        store.run_script(&script);
        store.run_script(&script);
        prop_assert_eq!(store.nodes.len(), g.nodes.len());
        prop_assert_eq!(store.rels.len(), g.edges.len());
    }

    #[test]
    fn absent_values_emit_no_triples(gender in prop::sample::select(vec!["", " ", "未知", " 未知 "])) {
        let r = PersonRecord { name: "曾国藩".into(), gender: gender.into(), works: gender.into(), ..Default::default() };
        let g = record_to_graph(&r, &SchemaDefinition::builtin());
        prop_assert_eq!(g.nodes.len(), 1);
        prop_assert_eq!(g.nodes[0].properties.len(), 1);
        prop_assert!(g.edges.is_empty());
    }

    #[test]
    fn variance_translation_invariant(xs in proptest::collection::vec(0.0f64..100.0, 2..8), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        for mode in [VarianceMode::Population, VarianceMode::Sample] {
            let (v0, v1) = (variance(&xs, mode).unwrap(), variance(&shifted, mode).unwrap());
            prop_assert!((v0 - v1).abs() < 1e-6 * (1.0 + v0), "{v0} vs {v1}");
        }
    }

    #[test]
    fn selection_same_under_both_modes(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..100.0, 4), 1..10)) {
        let input = SensitivityInput {
            checkpoints: ["0", "10", "30", "50"].map(String::from).to_vec(),
            schemes: (0..rows.len()).map(|i| format!("s{i}")).collect(),
            scores: rows,
        };
        let p = scheme_sensitivity(&input, VarianceMode::Population).unwrap();
        let s = scheme_sensitivity(&input, VarianceMode::Sample).unwrap();
        prop_assert_eq!(p.selected_scheme, s.selected_scheme);
    }
}
