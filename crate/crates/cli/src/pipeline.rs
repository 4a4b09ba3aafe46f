//! The subcommands as library functions.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{SecondsFormat, Utc};
use fairaudit_client::llm_client::read_cached;
use fairaudit_client::{execute, ResponseStatus};
use fairaudit_core::corpus::{load_corpus, load_label_specs, sample_cases, CaseSet, LabelCatalog};
use fairaudit_core::metrics::{case_facts, evaluate_model, LabelOutcomeTable, ModelEvaluation, OutcomeRow};
use fairaudit_core::outcome_parser::{parse_response, SentencingOutcome};
use fairaudit_core::promptgen::{build_query_set, write_query_dump, PromptError, PromptTemplate, QuerySpec};
use fairaudit_core::report::{file_stem, render_reports, write_files};
use fairaudit_core::synth_judge::{simulate_outputs, SynthConfig};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{Judge, LoadedConfig, SCHEMA_VERSION};
use crate::CliError;

pub const QUERY_DUMP: &str = "queries.jsonl";
pub const MANIFEST: &str = "run_manifest.json";
pub const EVALUATION_DUMP: &str = "evaluation.json";
pub const OUTCOME_DUMP: &str = "outcomes.jsonl";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Loaded and sampled inputs with digests of the files they came from.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub cases: CaseSet,
    pub catalog: LabelCatalog,
    pub template: PromptTemplate,
    /// Path and SHA-256 per input file, keyed by role.
    pub files: BTreeMap<String, (String, String)>,
}

pub fn load_inputs(cfg: &LoadedConfig) -> Result<Inputs, CliError> {
    let c = &cfg.config;
    let mut files = BTreeMap::new();
    let mut record = |role: &str, path: &Path| -> Result<(), CliError> {
        let digest = sha256_hex(&read_bytes(path)?);
        files.insert(role.to_string(), (path.display().to_string(), digest));
        Ok(())
    };
    let corpus_path = cfg.resolve(&c.corpus_path);
    let catalog_path = cfg.resolve(&c.catalog_path);
    record("corpus", &corpus_path)?;
    record("catalog", &catalog_path)?;
    let corpus = load_corpus(&corpus_path).map_err(|e| CliError::Config(e.to_string()))?;
    let catalog = load_label_specs(&catalog_path).map_err(|e| CliError::Config(e.to_string()))?;
    let template = match &c.template_path {
        Some(p) => {
            let p = cfg.resolve(p);
            record("template", &p)?;
            PromptTemplate::load(&p).map_err(|e| CliError::Config(e.to_string()))?
        }
        None => PromptTemplate::default(),
    };
    Ok(Inputs {
        cases: sample_cases(&corpus, c.sample_n, c.seed),
        catalog,
        template,
        files,
    })
}

/// Query counts for one label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LabelCount {
    pub label: String,
    pub cases: usize,
    pub queries: usize,
    pub excluded: usize,
    /// Cases without enough admissible ages.
    pub skipped: usize,
}

/// Every query for the sampled cases, label-major in catalog order.
pub fn generate_queries(inputs: &Inputs) -> Result<(Vec<QuerySpec>, Vec<LabelCount>), CliError> {
    let mut queries = Vec::new();
    let mut counts = Vec::new();
    for label in inputs.catalog.iter() {
        let mut n = LabelCount { label: label.name.clone(), ..Default::default() };
        for case in &inputs.cases.cases {
            match build_query_set(case, label, &inputs.template) {
                Ok(qs) => {
                    n.cases += 1;
                    n.queries += qs.len();
                    queries.extend(qs);
                }
                Err(PromptError::Excluded { .. }) => n.excluded += 1,
                Err(PromptError::AgeRangeExhausted { .. }) => n.skipped += 1,
                Err(e) => return Err(CliError::Config(e.to_string())),
            }
        }
        counts.push(n);
    }
    Ok((queries, counts))
}

fn write_query_file(cfg: &LoadedConfig, queries: &[QuerySpec]) -> anyhow::Result<PathBuf> {
    let dir = cfg.resolve(&cfg.config.output_dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(QUERY_DUMP);
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_query_dump(BufWriter::new(file), queries).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenSummary {
    pub path: PathBuf,
    pub total: usize,
    pub labels: Vec<LabelCount>,
}

pub fn cmd_gen(cfg: &LoadedConfig) -> Result<GenSummary, CliError> {
    let inputs = load_inputs(cfg)?;
    let (queries, labels) = generate_queries(&inputs)?;
    let path = write_query_file(cfg, &queries)?;
    Ok(GenSummary { path, total: queries.len(), labels })
}

/// Per-judge response tally.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct JudgeTally {
    pub judge: String,
    pub ok: usize,
    pub from_cache: usize,
    pub failed: BTreeMap<String, usize>,
}

impl JudgeTally {
    pub fn failures(&self) -> usize {
        self.failed.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub queries: usize,
    pub judges: Vec<JudgeTally>,
}

impl RunSummary {
    pub fn failures(&self) -> usize {
        self.judges.iter().map(JudgeTally::failures).sum()
    }
}

/// Queries every judge; per-query failures are tallied, not raised.
pub fn cmd_run(cfg: &LoadedConfig) -> Result<RunSummary, CliError> {
    let inputs = load_inputs(cfg)?;
    let (queries, _) = generate_queries(&inputs)?;
    write_query_file(cfg, &queries)?;
    let cache_dir = cfg.resolve(&cfg.config.cache_dir);
    let dump_dir = cfg.resolve(&cfg.config.output_dir).join("responses");
    fs::create_dir_all(&dump_dir).with_context(|| format!("creating {}", dump_dir.display()))?;
    let mut judges = Vec::new();
    for judge in cfg.config.judges() {
        let responses = execute(&queries, &judge.model, &cache_dir).map_err(|e| CliError::Config(e.to_string()))?;
        let mut tally = JudgeTally { judge: judge.name.clone(), ..Default::default() };
        let mut dump = Vec::new();
        for r in &responses {
            match r.status {
                ResponseStatus::Ok => {
                    tally.ok += 1;
                    tally.from_cache += usize::from(r.from_cache);
                }
                status => {
                    let key = serde_json::to_value(status)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default();
                    *tally.failed.entry(key).or_default() += 1;
                }
            }
            serde_json::to_writer(&mut dump, r).context("serializing response")?;
            dump.push(b'\n');
        }
        let path = dump_dir.join(format!("{}.jsonl", file_stem(&judge.name)));
        fs::write(&path, dump).with_context(|| format!("writing {}", path.display()))?;
        judges.push(tally);
    }
    Ok(RunSummary { queries: queries.len(), judges })
}

/// One parsed model answer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeRecord<'a> {
    pub judge: &'a str,
    pub label: &'a str,
    pub case_id: &'a str,
    pub value: &'a str,
    pub outcome: &'a SentencingOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub report_dir: PathBuf,
    pub judges: usize,
    pub missing: usize,
    pub files: Vec<String>,
}

/// Row tables built from the response cache, plus the queries with no cached answer.
fn tables_from_cache(
    cfg: &LoadedConfig,
    inputs: &Inputs,
    queries: &[QuerySpec],
    judge: &Judge,
) -> Result<(Vec<LabelOutcomeTable>, Vec<String>), CliError> {
    let cache_dir = cfg.resolve(&cfg.config.cache_dir);
    let facts = case_facts(&inputs.cases);
    let mut rows: BTreeMap<&str, Vec<OutcomeRow>> = BTreeMap::new();
    let mut missing = Vec::new();
    for q in queries {
        match read_cached(&cache_dir, &judge.model, q) {
            Some(entry) => rows.entry(q.label_name.as_str()).or_default().push(OutcomeRow {
                case_id: q.case_id.clone(),
                value: q.value_name.clone(),
                outcome: parse_response(&entry.body),
            }),
            None => missing.push(format!("{} {}/{}/{}", judge.name, q.case_id, q.label_name, q.value_name)),
        }
    }
    let tables = inputs
        .catalog
        .iter()
        .map(|spec| {
            let r = rows.remove(spec.name.as_str()).unwrap_or_default();
            LabelOutcomeTable::from_rows(spec.name.clone(), r, facts.clone())
                .map_err(|e| CliError::Internal(anyhow::anyhow!("{}: {e}", spec.name)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((tables, missing))
}

/// Parses cached responses for every judge and writes the report directory.
///
/// Missing responses are an error listing them unless `allow_missing`.
pub fn cmd_eval(cfg: &LoadedConfig, allow_missing: bool) -> Result<EvalSummary, CliError> {
    let inputs = load_inputs(cfg)?;
    let (queries, _) = generate_queries(&inputs)?;
    let judges = cfg.config.judges();
    let mut per_judge = Vec::new();
    let mut missing = Vec::new();
    for judge in &judges {
        let (tables, miss) = tables_from_cache(cfg, &inputs, &queries, judge)?;
        missing.extend(miss);
        per_judge.push(tables);
    }
    if !missing.is_empty() && !allow_missing {
        const SHOWN: usize = 20;
        let mut msg = format!("{} of {} responses are missing from the cache:", missing.len(), queries.len() * judges.len());
        for m in missing.iter().take(SHOWN) {
            msg.push_str("\n  ");
            msg.push_str(m);
        }
        if missing.len() > SHOWN {
            msg.push_str(&format!("\n  ... and {} more", missing.len() - SHOWN));
        }
        return Err(CliError::Partial(msg));
    }
    finish(cfg, &inputs, "eval", &judges, per_judge, missing.len(), None)
}

/// Full pipeline with synthetic judges instead of network calls.
pub fn cmd_simulate(cfg: &LoadedConfig, synth: Option<&Path>) -> Result<EvalSummary, CliError> {
    let inputs = load_inputs(cfg)?;
    let path = match synth {
        Some(p) => p.to_path_buf(),
        None => cfg
            .config
            .synth_config_path
            .as_ref()
            .map(|p| cfg.resolve(p))
            .ok_or_else(|| CliError::Config("simulate needs `synth_config_path` or --synth".into()))?,
    };
    let bytes = read_bytes(&path)?;
    let synth_cfg = SynthConfig::from_json(&String::from_utf8_lossy(&bytes)).map_err(|e| CliError::Config(e.to_string()))?;
    let judges = cfg.config.judges();
    let per_judge = judges
        .iter()
        .map(|j| simulate_outputs(&inputs.cases, &inputs.catalog, &j.model.model_id, &synth_cfg))
        .collect();
    let synth_info = json!({
        "path": path.display().to_string(),
        "sha256": sha256_hex(&bytes),
        "config": synth_cfg,
    });
    finish(cfg, &inputs, "simulate", &judges, per_judge, 0, Some(synth_info))
}

fn evaluate_all(cfg: &LoadedConfig, inputs: &Inputs, judges: &[Judge], per_judge: &[Vec<LabelOutcomeTable>]) -> Vec<ModelEvaluation> {
    let opts = cfg.config.evaluation_options();
    std::thread::scope(|s| {
        let handles: Vec<_> = judges
            .iter()
            .zip(per_judge)
            .map(|(j, tables)| {
                let opts = &opts;
                s.spawn(move || evaluate_model(&j.name, &j.model.model_id, j.model.temperature, tables, &inputs.catalog, opts))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread")).collect()
    })
}

fn outcome_dump(judges: &[Judge], per_judge: &[Vec<LabelOutcomeTable>]) -> anyhow::Result<Vec<u8>> {
    let mut out = Vec::new();
    for (j, tables) in judges.iter().zip(per_judge) {
        for t in tables {
            for r in &t.rows {
                let rec = OutcomeRecord { judge: &j.name, label: &t.label, case_id: &r.case_id, value: &r.value, outcome: &r.outcome };
                serde_json::to_writer(&mut out, &rec)?;
                out.push(b'\n');
            }
        }
    }
    Ok(out)
}

/// Clears a previous report directory; refuses directories this tool did not write.
fn prepare_report_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        let ours = dir.join(MANIFEST).is_file();
        let empty = fs::read_dir(dir).map(|mut d| d.next().is_none()).unwrap_or(false);
        if !ours && !empty {
            return Err(CliError::Config(format!(
                "{} exists and is not a report directory; refusing to overwrite",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn manifest(
    cfg: &LoadedConfig,
    inputs: &Inputs,
    command: &str,
    judges: &[Judge],
    missing: usize,
    synth: Option<serde_json::Value>,
    files: &BTreeMap<String, Vec<u8>>,
) -> serde_json::Value {
    let c = &cfg.config;
    let case_ids = inputs.cases.ids().join("\n");
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "run_id": c.run_id(),
        "config": c,
        "config_sha256": c.digest(),
        "inputs": inputs.files.iter().map(|(role, (path, sha))| (role.clone(), json!({"path": path, "sha256": sha}))).collect::<BTreeMap<_, _>>(),
        "seeds": {
            "sample": c.seed,
            "synth": synth.as_ref().and_then(|s| s["config"]["seed"].as_u64()),
        },
        "sample": {
            "requested": c.sample_n,
            "drawn": inputs.cases.len(),
            "provenance": inputs.cases.provenance,
            "case_ids_sha256": sha256_hex(case_ids.as_bytes()),
        },
        "judges": judges.iter().map(|j| json!({
            "name": j.name,
            "model_id": j.model.model_id,
            "temperature": j.model.temperature,
            "run_index": j.model.run_index,
        })).collect::<Vec<_>>(),
        "synth": synth,
        "missing_responses": missing,
        "files": files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect::<BTreeMap<_, _>>(),
        "generated_at": Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
    })
}

fn finish(
    cfg: &LoadedConfig,
    inputs: &Inputs,
    command: &str,
    judges: &[Judge],
    per_judge: Vec<Vec<LabelOutcomeTable>>,
    missing: usize,
    synth: Option<serde_json::Value>,
) -> Result<EvalSummary, CliError> {
    let evals = evaluate_all(cfg, inputs, judges, &per_judge);
    let mut files = render_reports(&evals, &cfg.config.report_options()).context("rendering reports")?;
    files.insert(EVALUATION_DUMP.into(), serde_json::to_vec_pretty(&evals).context("serializing evaluation")?);
    files.insert(OUTCOME_DUMP.into(), outcome_dump(judges, &per_judge)?);
    let m = manifest(cfg, inputs, command, judges, missing, synth, &files);
    files.insert(MANIFEST.into(), serde_json::to_vec_pretty(&m).context("serializing manifest")?);

    let dir = cfg.report_dir();
    prepare_report_dir(&dir)?;
    write_files(&dir, &files).context("writing reports")?;
    Ok(EvalSummary { report_dir: dir, judges: judges.len(), missing, files: files.into_keys().collect() })
}

/// Re-renders report tables from the evaluation dump in the report directory.
pub fn cmd_report(cfg: &LoadedConfig) -> Result<EvalSummary, CliError> {
    let dir = cfg.report_dir();
    let dump = dir.join(EVALUATION_DUMP);
    let text = fs::read_to_string(&dump)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}; run eval or simulate first", dump.display())))?;
    let evals: Vec<ModelEvaluation> = serde_json::from_str(&text).with_context(|| format!("parsing {}", dump.display()))?;
    let files = render_reports(&evals, &cfg.config.report_options()).context("rendering reports")?;
    write_files(&dir, &files).context("writing reports")?;
    Ok(EvalSummary { report_dir: dir, judges: evals.len(), missing: 0, files: files.into_keys().collect() })
}
