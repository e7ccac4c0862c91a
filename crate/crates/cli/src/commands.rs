use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use personkg_core::corpus::{corpus_file_stem, load_manifest, run_pipeline, scan_directory};
use personkg_core::dataset::{
    build_samples, export_alpaca, meta_path, stratified_sample, BuildOptions, GoldPair,
};
use personkg_core::eval::{
    builtin_schemes, evaluate_run, find_scheme, load_weight_table, EvaluationReport, GoldEntry,
    PredictionEntry, WeightScheme,
};
use personkg_core::gateway::http::{push_cypher, HttpChatClient, HttpEmbedder};
use personkg_core::gateway::{
    extract_batch, parse_model_output, CachedEmbedder, ChatBackend, Embedder, FixedChat,
    MockEmbedder, ReplayChat,
};
use personkg_core::graph::{
    cypher_statements, export_cypher, export_jsonl, merge_graphs, record_to_graph,
};
use personkg_core::prompt::{find_template, list_templates, Language, PromptTemplate};
use personkg_core::schema::{
    load_schema, validate_value, KeyLanguage, SchemaDefinition, SchemaSource, ValidationMode,
};
use personkg_core::sensitivity::{
    load_score_matrix, parse_score_matrix, recompute_from_field_scores, reference_score_matrix,
    scheme_sensitivity, SensitivityInput, VarianceMode,
};

use crate::config::{ChatKind, EmbeddingKind, RunConfig};
use crate::files::{
    character_text, lookup_name, read_jsonl, records_from_lines, to_jsonl, CorpusIndex, GoldLine,
    PredictionLine, Status, TestLine,
};
use crate::run::{RunDir, RunManifest};
use crate::{
    usage, AnalyzeArgs, BuildDatasetArgs, CleanArgs, EvaluateArgs, ExportArgs, ExtractArgs,
};

/// Stratum for gold lines with no tags of their own or in the corpus.
const UNTAGGED: &str = "untagged";

fn existing(path: Option<PathBuf>, what: &str, flag: &str) -> Result<PathBuf> {
    let path =
        path.ok_or_else(|| usage(format!("no {what} given (use {flag} or the config file)")))?;
    if !path.exists() {
        return Err(usage(format!("{what} {} not found", path.display())));
    }
    Ok(path)
}

fn schema(cfg: &RunConfig) -> Result<SchemaDefinition> {
    load_schema(SchemaSource::parse(&cfg.schema)).map_err(|e| usage(format!("schema: {e}")))
}

fn template(cfg: &RunConfig, name: Option<&str>) -> Result<PromptTemplate> {
    let name = name.unwrap_or(&cfg.template);
    let t = find_template(name, cfg.templates_dir.as_deref()).map_err(|e| usage(e.to_string()))?;
    Ok(match &cfg.think_suffix {
        Some(s) => t.with_think_suffix(s.clone()),
        None => t,
    })
}

fn weight_schemes(
    cfg: &RunConfig,
    flag: Option<&Path>,
    schema: &SchemaDefinition,
) -> Result<Vec<WeightScheme>> {
    match flag.or(cfg.weights.as_deref()) {
        Some(p) => load_weight_table(p, schema).map_err(|e| usage(e.to_string())),
        None => Ok(builtin_schemes()),
    }
}

fn embedder(cfg: &RunConfig) -> Result<Box<dyn Embedder>> {
    let inner: Box<dyn Embedder> = match cfg.embedding.kind {
        EmbeddingKind::Mock => Box::new(MockEmbedder),
        EmbeddingKind::Openai => Box::new(HttpEmbedder::new(cfg.embedding.endpoint.clone())),
    };
    Ok(match &cfg.embedding.cache_dir {
        Some(dir) => Box::new(
            CachedEmbedder::with_dir(inner, dir)
                .with_context(|| format!("embedding cache {}", dir.display()))?,
        ),
        None => Box::new(CachedEmbedder::new(inner)),
    })
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

pub fn clean(cfg: &RunConfig, out: Option<&Path>, a: CleanArgs) -> Result<()> {
    let mut m = RunManifest::new("clean", cfg.seed);
    let entries = match a.input_dir {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(usage(format!(
                    "input directory {} not found",
                    dir.display()
                )));
            }
            scan_directory(&dir).map_err(|e| usage(e.to_string()))?
        }
        None => {
            let manifest = existing(
                a.manifest.or(cfg.paths.manifest.clone()),
                "manifest",
                "--manifest",
            )?;
            m.input(&manifest)?;
            load_manifest(&manifest).map_err(|e| usage(e.to_string()))?
        }
    };
    for e in &entries {
        if e.path.is_file() {
            m.input(&e.path)?;
        }
    }
    let pipeline = cfg.corpus.pipeline();
    m.setting("max_segment_chars", pipeline.max_segment_chars)
        .setting("min_chars", pipeline.min_chars)
        .setting(
            "near_duplicate_threshold",
            format!("{:?}", pipeline.near_duplicate_threshold),
        );

    let (groups, summary) = run_pipeline(&entries, &pipeline).map_err(|e| usage(e.to_string()))?;
    for u in &summary.unreadable {
        warn(format_args!("unreadable {u}"));
    }
    for w in &summary.warnings {
        warn(w);
    }
    if !entries.is_empty() && summary.unreadable.len() == entries.len() {
        bail!("none of the {} documents could be read", entries.len());
    }

    let mut rd = RunDir::create(m, &cfg.output_dir, out)?;
    let corpus_dir = rd.file("corpus");
    fs::create_dir_all(&corpus_dir)?;
    personkg_core::corpus::write_corpus(&groups, &corpus_dir)?;
    for person in groups.keys() {
        rd.record(&format!("corpus/{}.jsonl", corpus_file_stem(person)));
    }
    rd.write(
        "summary.json",
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    let dir = rd.finish()?;
    println!("{summary}");
    println!(
        "{} exact and {} near duplicates removed, {} too short, {} segments for {} persons",
        summary.exact_duplicates,
        summary.near_duplicates,
        summary.too_short,
        summary.segments,
        summary.persons.len()
    );
    println!("output: {}", dir.display());
    Ok(())
}

pub fn build_dataset(cfg: &RunConfig, out: Option<&Path>, a: BuildDatasetArgs) -> Result<()> {
    let golds_path = existing(
        a.golds.or(cfg.paths.golds.clone()),
        "gold annotations",
        "--golds",
    )?;
    let corpus_dir = a.corpus.or(cfg.paths.corpus_dir.clone());
    if let Some(d) = &corpus_dir {
        if !d.is_dir() {
            return Err(usage(format!("corpus directory {} not found", d.display())));
        }
    }
    let schema = schema(cfg)?;
    let template = template(cfg, a.template.as_deref())?;
    let seed = a.seed.unwrap_or(cfg.seed);
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }

    let golds: Vec<GoldLine> = read_jsonl(&golds_path)?;
    let corpus = corpus_dir.as_deref().map(CorpusIndex::load).transpose()?;
    let mut pairs = Vec::with_capacity(golds.len());
    for g in &golds {
        let name = lookup_name(g.person_name.as_deref(), Some(&g.record), &schema);
        let Some(text) = character_text(g.text.as_deref(), name.as_deref(), corpus.as_ref()) else {
            warn(format_args!("{}: no character text, skipped", g.record_id));
            continue;
        };
        let mut labels: BTreeSet<String> = g.tags.iter().cloned().collect();
        if labels.is_empty() {
            if let (Some(c), Some(n)) = (&corpus, &name) {
                labels.extend(c.tags.get(n).into_iter().flatten().cloned());
            }
        }
        if labels.is_empty() {
            labels.insert(UNTAGGED.to_string());
        }
        pairs.push(GoldPair {
            character_text: text,
            gold: g.record.clone(),
            person_name: name.unwrap_or_default(),
            strata_labels: labels,
        });
    }
    let outcome = build_samples(
        &pairs,
        &template,
        &schema,
        BuildOptions {
            split_input: a.split_input,
        },
    );
    for e in &outcome.errors {
        let what = match &e.prompt_error {
            Some(p) => p.clone(),
            None => e
                .issues
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        };
        warn(format_args!(
            "pair {} ({}) skipped: {what}",
            e.index, e.person_name
        ));
    }
    let available = outcome.samples.len();
    if a.n > available {
        bail!(
            "requested {} samples but only {available} valid pairs are available",
            a.n
        );
    }
    let subset = stratified_sample(&outcome.samples, a.n, seed)?;

    let mut m = RunManifest::new("build-dataset", seed);
    m.input(&golds_path)?;
    if let Some(d) = &corpus_dir {
        m.input(d)?;
    }
    m.setting("n", a.n)
        .setting("split_input", a.split_input)
        .setting("template", &template.name)
        .setting(
            "think_suffix",
            template.think_suffix.as_deref().unwrap_or(""),
        );
    let mut rd = RunDir::create(m, &cfg.output_dir, out)?;
    let name = format!("alpaca_n{}.json", a.n);
    let path = rd.file(&name);
    export_alpaca(&subset, &path)?;
    rd.record(&name);
    rd.record(&meta_path(Path::new(&name)).to_string_lossy());

    let mut strata: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &subset {
        let label = s
            .meta
            .strata_labels
            .iter()
            .next()
            .map(String::as_str)
            .unwrap_or(UNTAGGED);
        *strata.entry(label).or_default() += 1;
    }
    let dir = rd.finish()?;
    println!("{} samples from {available} pairs", subset.len());
    for (label, count) in strata {
        println!("  {label}: {count}");
    }
    println!("output: {}", dir.display());
    Ok(())
}

fn chat_backend(
    cfg: &RunConfig,
    a: &ExtractArgs,
    m: &mut RunManifest,
) -> Result<Box<dyn ChatBackend>> {
    let replay = |p: &Path, m: &mut RunManifest| -> Result<Box<dyn ChatBackend>> {
        m.input(p)?.setting("backend", "replay");
        Ok(Box::new(
            ReplayChat::from_jsonl(p).map_err(|e| usage(e.to_string()))?,
        ))
    };
    let fixed = |t: &str, m: &mut RunManifest| -> Box<dyn ChatBackend> {
        m.setting("backend", "fixed").setting("fixed_response", t);
        Box::new(FixedChat(t.to_string()))
    };
    if let Some(p) = &a.replay {
        return replay(p, m);
    }
    if let Some(t) = &a.fixed {
        return Ok(fixed(t, m));
    }
    match cfg.chat.kind {
        ChatKind::Openai => {
            let ep = &cfg.chat.endpoint;
            m.setting("backend", "openai")
                .setting("base_url", &ep.base_url)
                .setting("model", &ep.model_name)
                .setting("temperature", ep.temperature)
                .setting("max_output_tokens", ep.max_output_tokens);
            Ok(Box::new(
                HttpChatClient::new(ep.clone()).map_err(|e| usage(e.to_string()))?,
            ))
        }
        ChatKind::Replay => {
            let p = existing(
                cfg.chat.replay_file.clone(),
                "replay file",
                "chat.replay_file",
            )?;
            replay(&p, m)
        }
        ChatKind::Fixed => {
            let t = cfg
                .chat
                .fixed_response
                .as_deref()
                .ok_or_else(|| usage("chat.fixed_response is not set"))?;
            Ok(fixed(t, m))
        }
    }
}

pub fn extract(cfg: &RunConfig, out: Option<&Path>, a: ExtractArgs) -> Result<()> {
    let test_path = existing(
        a.test.clone().or(cfg.paths.test.clone()),
        "test records",
        "--test",
    )?;
    let corpus_dir = a.corpus.clone().or(cfg.paths.corpus_dir.clone());
    let schema = schema(cfg)?;
    let template = template(cfg, a.template.as_deref())?;
    cfg.chat
        .endpoint
        .validate()
        .map_err(|e| usage(e.to_string()))?;

    let mut m = RunManifest::new("extract", cfg.seed);
    m.input(&test_path)?;
    if let Some(d) = &corpus_dir {
        m.input(d)?;
    }
    m.setting("template", &template.name)
        .setting(
            "think_suffix",
            template.think_suffix.as_deref().unwrap_or(""),
        )
        .setting("strip_think_blocks", cfg.chat.endpoint.strip_think_blocks);
    let backend = chat_backend(cfg, &a, &mut m)?;

    let lines: Vec<TestLine> = read_jsonl(&test_path)?;
    let mut seen = HashSet::new();
    for l in &lines {
        if !seen.insert(l.record_id.as_str()) {
            bail!(
                "duplicate record_id {:?} in {}",
                l.record_id,
                test_path.display()
            );
        }
    }
    let corpus = corpus_dir.as_deref().map(CorpusIndex::load).transpose()?;

    let mut prompts = Vec::new();
    let mut prompt_errors: BTreeMap<&str, String> = BTreeMap::new();
    for l in &lines {
        let text = character_text(l.text.as_deref(), l.person_name.as_deref(), corpus.as_ref());
        match text.map(|t| template.render(&t)) {
            Some(Ok(p)) => prompts.push((l.record_id.clone(), p)),
            Some(Err(e)) => {
                prompt_errors.insert(&l.record_id, e.to_string());
            }
            None => {
                prompt_errors.insert(&l.record_id, "no character text".to_string());
            }
        }
    }

    let slots = extract_batch(&*backend, &prompts, cfg.chat.endpoint.max_parallel)
        .map_err(|e| anyhow!("extraction aborted: {e}"))?;
    let mut by_id: BTreeMap<&str, _> = slots.iter().map(|s| (s.id.as_str(), &s.result)).collect();
    let strip = cfg.chat.endpoint.strip_think_blocks;

    let mut predictions = Vec::with_capacity(lines.len());
    for l in &lines {
        let mut p = PredictionLine {
            record_id: l.record_id.clone(),
            status: Status::Ok,
            person_record: None,
            warnings: Vec::new(),
            error: None,
            raw: None,
        };
        if let Some(e) = prompt_errors.get(l.record_id.as_str()) {
            p.status = Status::PromptError;
            p.error = Some(e.clone());
            predictions.push(p);
            continue;
        }
        match by_id
            .remove(l.record_id.as_str())
            .expect("one slot per prompt")
        {
            Err(e) => {
                p.status = Status::RequestError;
                p.error = Some(e.to_string());
            }
            Ok(resp) => match parse_model_output(&resp.text, strip) {
                Err(e) => {
                    p.status = Status::ParseError;
                    p.error = Some(e.to_string());
                    p.raw = Some(resp.text.clone());
                }
                Ok(json) => {
                    let value: serde_json::Value =
                        serde_json::from_str(&json).unwrap_or(serde_json::Value::Null);
                    match validate_value(&value, &schema, ValidationMode::Lenient) {
                        Ok(v) => {
                            p.person_record =
                                Some(v.record.to_json_value(&schema, KeyLanguage::Zh));
                            p.warnings = v.warnings.iter().map(ToString::to_string).collect();
                        }
                        Err(issues) => {
                            p.status = Status::Invalid;
                            p.error = Some(
                                issues
                                    .iter()
                                    .filter(|i| i.is_error())
                                    .map(ToString::to_string)
                                    .collect::<Vec<_>>()
                                    .join("; "),
                            );
                            p.raw = Some(resp.text.clone());
                        }
                    }
                }
            },
        }
        predictions.push(p);
    }

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for p in &predictions {
        let key = serde_json::to_value(p.status)?
            .as_str()
            .unwrap_or_default()
            .to_string();
        *counts.entry(key).or_default() += 1;
    }
    let mut rd = RunDir::create(m, &cfg.output_dir, out)?;
    rd.write("predictions.jsonl", to_jsonl(&predictions))?;
    let dir = rd.finish()?;
    let breakdown: Vec<String> = counts.iter().map(|(k, v)| format!("{v} {k}")).collect();
    println!("{} records: {}", predictions.len(), breakdown.join(", "));
    println!("output: {}", dir.display());
    Ok(())
}

fn load_golds(path: &Path, schema: &SchemaDefinition) -> Result<Vec<GoldEntry>> {
    let lines: Vec<GoldLine> = read_jsonl(path)?;
    lines
        .into_iter()
        .map(|g| {
            let v =
                validate_value(&g.record, schema, ValidationMode::Strict).map_err(|issues| {
                    let errs: Vec<String> = issues
                        .iter()
                        .filter(|i| i.is_error())
                        .map(ToString::to_string)
                        .collect();
                    anyhow!("gold {}: {}", g.record_id, errs.join("; "))
                })?;
            Ok(GoldEntry {
                record_id: g.record_id,
                record: v.record,
            })
        })
        .collect()
}

fn load_predictions(path: &Path, schema: &SchemaDefinition) -> Result<Vec<PredictionEntry>> {
    let lines: Vec<PredictionLine> = read_jsonl(path)?;
    Ok(lines
        .into_iter()
        .map(|p| {
            let record = match (&p.status, &p.person_record) {
                (Status::Ok, Some(v)) => match validate_value(v, schema, ValidationMode::Lenient) {
                    Ok(v) => Some(v.record),
                    Err(_) => {
                        warn(format_args!(
                            "{}: prediction does not validate, scored as missing",
                            p.record_id
                        ));
                        None
                    }
                },
                _ => None,
            };
            PredictionEntry {
                record_id: p.record_id,
                record,
            }
        })
        .collect())
}

pub fn evaluate(cfg: &RunConfig, out: Option<&Path>, a: EvaluateArgs) -> Result<()> {
    let preds_path = existing(Some(a.predictions), "predictions", "--predictions")?;
    let golds_path = existing(
        a.golds.or(cfg.paths.golds.clone()),
        "gold annotations",
        "--golds",
    )?;
    let schema = schema(cfg)?;
    let schemes = weight_schemes(cfg, a.weights.as_deref(), &schema)?;
    let scheme_name = a.scheme.as_deref().unwrap_or(&cfg.scheme);
    let scheme = find_scheme(&schemes, scheme_name).map_err(|e| usage(e.to_string()))?;
    let embedder = embedder(cfg)?;

    let golds = load_golds(&golds_path, &schema)?;
    let preds = load_predictions(&preds_path, &schema)?;
    let report = evaluate_run(&preds, &golds, &schema, scheme, &*embedder)?;

    let mut m = RunManifest::new("evaluate", cfg.seed);
    m.input(&preds_path)?.input(&golds_path)?;
    m.setting("scheme", &scheme.name)
        .setting("embedder", embedder.namespace());
    if let Some(w) = a.weights.as_deref().or(cfg.weights.as_deref()) {
        m.input(w)?;
    }
    let mut rd = RunDir::create(m, &cfg.output_dir, out)?;
    rd.write("report.json", report.to_json() + "\n")?;
    rd.write("report.txt", report.render_table())?;
    let dir = rd.finish()?;
    let failed = report
        .per_record
        .iter()
        .filter(|r| !r.errors.is_empty())
        .count();
    if failed > 0 {
        warn(format_args!(
            "{failed} records had scoring errors; affected fields scored 0"
        ));
    }
    println!(
        "run_mean: {:.4} ({}, {} records)",
        report.run_mean,
        report.scheme_name,
        report.per_record.len()
    );
    println!("output: {}", dir.display());
    Ok(())
}

/// Reports under `dir`: `<label>.json` files and `<label>/report.json`, sorted by label.
fn read_reports(dir: &Path) -> Result<Vec<(String, EvaluationReport)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| dir.display().to_string())? {
        let path = entry?.path();
        let (label, file) = if path.is_dir() {
            (
                path.file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
                path.join("report.json"),
            )
        } else if path.extension().is_some_and(|e| e == "json") {
            (
                path.file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
                path.clone(),
            )
        } else {
            continue;
        };
        if file.is_file() {
            found.push((label, file));
        }
    }
    found.sort();
    found
        .into_iter()
        .map(|(label, file)| {
            let text = fs::read_to_string(&file).with_context(|| file.display().to_string())?;
            let report: EvaluationReport = serde_json::from_str(&text)
                .with_context(|| format!("{} is not an evaluation report", file.display()))?;
            Ok((label, report))
        })
        .collect()
}

pub fn analyze_weights(cfg: &RunConfig, out: Option<&Path>, a: AnalyzeArgs) -> Result<()> {
    let mode: VarianceMode = match &a.mode {
        Some(s) => s
            .parse()
            .map_err(|e: personkg_core::sensitivity::SensitivityError| usage(e.to_string()))?,
        None => cfg.variance_mode,
    };
    let mut m = RunManifest::new("analyze-weights", cfg.seed);
    m.setting("variance_mode", mode);
    let input: SensitivityInput = if let Some(p) = &a.matrix {
        let p = existing(Some(p.clone()), "score matrix", "--matrix")?;
        m.input(&p)?;
        load_score_matrix(&p)
            .map_err(|e| usage(e.to_string()))?
            .input
    } else if let Some(d) = &a.reports {
        let d = existing(Some(d.clone()), "report directory", "--reports")?;
        m.input(&d)?;
        let schema = schema(cfg)?;
        let schemes = weight_schemes(cfg, a.weights.as_deref(), &schema)?;
        let reports = read_reports(&d)?;
        recompute_from_field_scores(&reports, &schemes)?
    } else if a.reference {
        m.setting("matrix", "reference");
        parse_score_matrix(reference_score_matrix())
            .expect("reference matrix parses")
            .input
    } else {
        return Err(usage("give one of --matrix, --reports or --reference"));
    };
    let report = scheme_sensitivity(&input, mode).map_err(|e| anyhow!("{e}"))?;

    let mut rd = RunDir::create(m, &cfg.output_dir, out)?;
    rd.write("sensitivity.json", report.to_json() + "\n")?;
    rd.write("sensitivity.txt", report.render_table())?;
    let dir = rd.finish()?;
    print!("{}", report.render_table());
    println!("selected: {}", report.selected_scheme);
    println!("output: {}", dir.display());
    Ok(())
}

pub fn export_graph(cfg: &RunConfig, out: Option<&Path>, a: ExportArgs) -> Result<()> {
    let path = existing(Some(a.records), "records", "--records")?;
    let schema = schema(cfg)?;
    let text = fs::read_to_string(&path).with_context(|| path.display().to_string())?;
    let (records, warnings) = records_from_lines(&text, &schema)?;
    for w in &warnings {
        warn(w);
    }
    let docs: Vec<_> = records
        .iter()
        .map(|r| record_to_graph(r, &schema))
        .collect();
    let graph = merge_graphs(&docs);

    let mut m = RunManifest::new("export-graph", cfg.seed);
    m.input(&path)?;
    let mut rd = RunDir::create(m, &cfg.output_dir, out)?;
    rd.write("graph.cypher", export_cypher(&graph))?;
    rd.write("graph.jsonl", export_jsonl(&graph))?;
    let dir = rd.finish()?;
    println!(
        "{} records: {} nodes, {} relationships, {} conflicts",
        records.len(),
        graph.nodes.len(),
        graph.edges.len(),
        graph.conflicts.len()
    );
    if a.push {
        let statements = cypher_statements(&graph);
        let n = push_cypher(&cfg.graph_db, &statements)?;
        println!("pushed {n} statements to {}", cfg.graph_db.base_url);
    }
    println!("output: {}", dir.display());
    Ok(())
}

pub fn templates(cfg: &RunConfig) -> Result<()> {
    let listing = list_templates(cfg.templates_dir.as_deref());
    for w in &listing.warnings {
        warn(w);
    }
    for t in &listing.templates {
        let lang = match t.language {
            Language::Zh => "zh",
            Language::En => "en",
        };
        let origin = t
            .path
            .as_ref()
            .map_or_else(|| "builtin".to_string(), |p| p.display().to_string());
        println!("{}\t{lang}\t{origin}", t.name);
    }
    Ok(())
}
