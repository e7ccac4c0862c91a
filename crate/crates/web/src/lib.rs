//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes and returns JSON text. The plain `*_json` functions
//! hold the logic and are usable (and tested) natively.

use personkg_core::eval::{aggregate, builtin_schemes, score_record};
use personkg_core::gateway::MockEmbedder;
use personkg_core::graph::{export_cypher, export_jsonl, record_to_graph};
use personkg_core::schema::{validate_record, PersonRecord, SchemaDefinition, ValidationMode};
use personkg_core::sensitivity::{parse_score_matrix, scheme_sensitivity, VarianceMode};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn parse_record(
    label: &str,
    text: &str,
    schema: &SchemaDefinition,
) -> Result<(PersonRecord, Vec<String>), String> {
    match validate_record(text, schema, ValidationMode::Lenient) {
        Ok(v) => Ok((
            v.record,
            v.warnings.iter().map(ToString::to_string).collect(),
        )),
        Err(issues) => {
            let msgs: Vec<String> = issues
                .iter()
                .filter(|i| i.is_error())
                .map(ToString::to_string)
                .collect();
            Err(format!("{label}: {}", msgs.join("; ")))
        }
    }
}

/// Field scores of `prediction` against `gold` (mock embedder) and the
/// weighted total under every builtin scheme.
pub fn score_records_json(prediction: &str, gold: &str) -> Result<String, String> {
    let schema = SchemaDefinition::builtin();
    let (pred, pred_warnings) = parse_record("prediction", prediction, &schema)?;
    let (gold, _) = parse_record("gold", gold, &schema)?;
    let fields =
        score_record(Some(&pred), &gold, &schema, &MockEmbedder).map_err(|e| e.to_string())?;
    let scores: Vec<f64> = fields.iter().map(|f| f.score).collect();
    let mut totals = Vec::new();
    for s in builtin_schemes() {
        totals.push(
            json!({"scheme": s.name, "total": aggregate(&scores, &s).map_err(|e| e.to_string())?}),
        );
    }
    let fields: Vec<Value> = fields
        .iter()
        .map(|f| json!({"field": f.field_key.as_str(), "method": f.method.to_string(), "score": f.score}))
        .collect();
    Ok(json!({"fields": fields, "totals": totals, "warnings": pred_warnings}).to_string())
}

/// Variance per scheme over a score matrix CSV; `mode` is `population` or `sample`.
pub fn analyze_matrix_json(csv: &str, mode: &str) -> Result<String, String> {
    let mode: VarianceMode = mode
        .parse()
        .map_err(|e: personkg_core::sensitivity::SensitivityError| e.to_string())?;
    let matrix = parse_score_matrix(csv).map_err(|e| e.to_string())?;
    let report = scheme_sensitivity(&matrix.input, mode).map_err(|e| e.to_string())?;
    Ok(report.to_json())
}

/// Validation findings plus Cypher and JSONL exports for one record.
pub fn record_graph_json(record: &str) -> Result<String, String> {
    let schema = SchemaDefinition::builtin();
    let (record, warnings) = parse_record("record", record, &schema)?;
    let g = record_to_graph(&record, &schema);
    Ok(json!({
        "warnings": warnings,
        "nodes": g.nodes.len(),
        "relationships": g.edges.len(),
        "cypher": export_cypher(&g),
        "jsonl": export_jsonl(&g),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn score_records(prediction: &str, gold: &str) -> Result<String, JsError> {
    score_records_json(prediction, gold).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn analyze_matrix(csv: &str, mode: &str) -> Result<String, JsError> {
    analyze_matrix_json(csv, mode).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn record_graph(record: &str) -> Result<String, JsError> {
    record_graph_json(record).map_err(|e| JsError::new(&e))
}

/// The bundled reference score matrix, used to prefill the page.
#[wasm_bindgen]
pub fn reference_matrix() -> String {
    personkg_core::sensitivity::reference_score_matrix().to_string()
}
