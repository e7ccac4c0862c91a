//! Person knowledge-graph extraction toolkit.
//!
//! The crate turns biographical text into schema-conformant person records via
//! an external chat model, scores extractions field by field against gold
//! annotations, analyses how sensitive run scores are to the weighting of
//! schema components, and exports the resulting property graph.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`schema`]: the 14-component person schema and record validation
//! - [`corpus`]: cleaning, deduplication, grouping and segmentation of source texts
//! - [`prompt`]: the extraction prompt templates
//! - [`dataset`]: Alpaca-format instruction samples and stratified subsets
//! - [`gateway`]: chat/embedding endpoints, output parsing, offline mocks
//! - [`eval`]: per-field scoring, weight schemes and run reports
//! - [`sensitivity`]: variance of weighted scores across checkpoints
//! - [`graph`]: property graph construction, merging, Cypher/JSONL export

pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod gateway;
pub mod graph;
pub mod prompt;
pub mod schema;
pub mod sensitivity;
mod util;

pub use schema::{
    canonicalize_field_text, load_schema, validate_record, FieldKey, PersonRecord,
    SchemaDefinition, SchemaSource, ValidationMode,
};
pub use util::{normalize_name, sha256_hex};
