use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::Value;

use btforge::eval::{
    evaluate, mutate_corpus, outcomes_to_jsonl, sample_id, Candidates, EvalOptions, MutationKind,
};
use btforge::metrics::tree_metrics;
use btforge::model::{lower, parse_document, serialize_minified, SystemSpecification};
use btforge::oracle::{
    build_dataset, dataset_to_jsonl, load_dataset_jsonl, DatasetConfig, DatasetRecord,
    SceneConfigDefaulted,
};
use btforge::render::render_schematic;
use btforge::scene::Scene;
use btforge::sim::{run, FinalStatus, Perturbation, RunOptions, SimParams};
use btforge::validate::{validate_with, Severity, ValidateOptions};

use crate::config::{self, FileConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUN_FAILURE: u8 = 1;
pub const EXIT_VIOLATIONS: u8 = 2;
pub const EXIT_KEY_ERRORS: u8 = 3;
pub const EXIT_INVALID_JSON: u8 = 4;
pub const EXIT_TIMEOUT: u8 = 5;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "btforge", version, about = "Behavior-tree policy toolkit")]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset of scene / instruction / tree / goal records.
    Generate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output JSONL path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Statically validate a JSON-BT document against a specification.
    Validate {
        file: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        strict_offsets: bool,
    },
    /// Structure metrics (depth, leaf count, node density) of a document.
    Metrics {
        file: PathBuf,
        /// Specification used for lowering; a bare standard library is
        /// assumed when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Execute one dataset sample in the simulator.
    Execute {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        id: usize,
        /// JSON file with a list of scripted perturbations.
        #[arg(long)]
        perturb: Option<PathBuf>,
        #[arg(long)]
        stale_metadata: bool,
        /// Where to write the tick trace as JSONL.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long)]
        max_ticks: Option<usize>,
    },
    /// Score candidate documents (or the dataset's own trees) end to end.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// `self`, a candidates JSONL file, or a directory of `<id>.json`
        /// documents.
        #[arg(long)]
        candidates: String,
        #[arg(long)]
        strict_offsets: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Produce a damaged candidate corpus targeting one metric.
    Mutate {
        #[arg(long)]
        dataset: PathBuf,
        /// One of: truncate-json, drop-key, name-on-composite,
        /// nest-same-kind, unknown-primitive, remove-offset.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a scene (or a dataset record's scene) as an SVG schematic.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// Record index when `--scene` points at a dataset JSONL.
        #[arg(long)]
        id: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn dispatch(cli: Cli) -> Result<u8, String> {
    let file_config = config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate { n, seed, out } => cmd_generate(n, seed, out, &file_config),
        Command::Validate {
            file,
            spec,
            strict_offsets,
        } => cmd_validate(&file, &spec, strict_offsets, &file_config),
        Command::Metrics { file, spec } => cmd_metrics(&file, spec.as_deref()),
        Command::Execute {
            dataset,
            id,
            perturb,
            stale_metadata,
            trace_out,
            max_ticks,
        } => cmd_execute(
            &dataset,
            id,
            perturb.as_deref(),
            stale_metadata,
            trace_out.as_deref(),
            max_ticks,
            &file_config,
        ),
        Command::Evaluate {
            dataset,
            candidates,
            strict_offsets,
            out_dir,
        } => cmd_evaluate(&dataset, &candidates, strict_offsets, &out_dir, &file_config),
        Command::Mutate {
            dataset,
            kind,
            rate,
            seed,
            out,
        } => cmd_mutate(&dataset, &kind, rate, seed, &out, &file_config),
        Command::Render { scene, id, out } => cmd_render(&scene, id, &out),
    }
}

/// Writes through a temp file in the same directory so failures never
/// leave partial output behind.
fn write_atomic(path: &Path, contents: &str) -> Result<(), String> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    let mut file =
        fs::File::create(&tmp).map_err(|e| format!("cannot create {}: {e}", tmp.display()))?;
    file.write_all(contents.as_bytes())
        .map_err(|e| format!("cannot write {}: {e}", tmp.display()))?;
    file.sync_all().ok();
    drop(file);
    fs::rename(&tmp, path).map_err(|e| format!("cannot move into place {}: {e}", path.display()))
}

fn read_file(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn load_records(path: &Path) -> Result<Vec<DatasetRecord>, String> {
    load_dataset_jsonl(&read_file(path)?).map_err(|e| e.to_string())
}

fn load_spec(path: &Path) -> Result<SystemSpecification, String> {
    serde_json::from_str(&read_file(path)?)
        .map_err(|e| format!("bad specification {}: {e}", path.display()))
}

fn sim_params(file_config: &FileConfig, max_ticks: Option<usize>) -> SimParams {
    let mut params = file_config.sim.unwrap_or_default();
    if let Some(ticks) = max_ticks {
        params.max_ticks = ticks;
    }
    params
}

fn cmd_generate(
    n: Option<usize>,
    seed: Option<u64>,
    out: PathBuf,
    file_config: &FileConfig,
) -> Result<u8, String> {
    let n = n.or(file_config.n).unwrap_or(100);
    let seed = seed.or(file_config.seed).unwrap_or(0);
    let cfg = DatasetConfig {
        scene: SceneConfigDefaulted(file_config.scene.clone().unwrap_or_default()),
        oracle: file_config.oracle.clone().unwrap_or_default(),
    };
    let samples = build_dataset(n, seed, &cfg).map_err(|e| e.to_string())?;
    write_atomic(&out, &dataset_to_jsonl(&samples))?;
    log::info!("wrote {} records to {}", samples.len(), out.display());
    Ok(EXIT_OK)
}

fn cmd_validate(
    file: &Path,
    spec_path: &Path,
    strict_offsets: bool,
    file_config: &FileConfig,
) -> Result<u8, String> {
    let spec = load_spec(spec_path)?;
    let text = read_file(file)?;
    let raw = match parse_document(&text) {
        Ok(raw) => raw,
        Err(e) => {
            eprintln!("{e}");
            return Ok(EXIT_INVALID_JSON);
        }
    };
    let bt = match lower(&raw, &spec) {
        Ok(bt) => bt,
        Err(report) => {
            for entry in &report.entries {
                println!("{}", serde_json::to_string(entry).unwrap());
            }
            eprintln!("{report}");
            return Ok(EXIT_KEY_ERRORS);
        }
    };
    let strict = strict_offsets || file_config.strict_offsets.unwrap_or(false);
    let opts = ValidateOptions {
        offset_severity: if strict {
            Severity::Error
        } else {
            Severity::Warning
        },
    };
    let report = validate_with(&bt, &spec, opts);
    for violation in &report.violations {
        println!("{}", serde_json::to_string(violation).unwrap());
    }
    for warning in &report.warnings {
        eprintln!("warning: {}", serde_json::to_string(warning).unwrap());
    }
    if report.schema_compliant() {
        eprintln!("compliant");
        Ok(EXIT_OK)
    } else {
        eprintln!("{} violation(s)", report.violations.len());
        Ok(EXIT_VIOLATIONS)
    }
}

fn cmd_metrics(file: &Path, spec_path: Option<&Path>) -> Result<u8, String> {
    let spec = match spec_path {
        Some(path) => load_spec(path)?,
        None => bare_spec(),
    };
    let text = read_file(file)?;
    let raw = match parse_document(&text) {
        Ok(raw) => raw,
        Err(e) => {
            eprintln!("{e}");
            return Ok(EXIT_INVALID_JSON);
        }
    };
    let bt = match lower(&raw, &spec) {
        Ok(bt) => bt,
        Err(report) => {
            eprintln!("{report}");
            return Ok(EXIT_KEY_ERRORS);
        }
    };
    let m = tree_metrics(&bt);
    println!("{}", serde_json::to_string(&m).unwrap());
    Ok(EXIT_OK)
}

/// Standard library over empty scene metadata, for metrics-only lowering.
fn bare_spec() -> SystemSpecification {
    let metadata = std::collections::BTreeMap::from([
        ("home".to_string(), btforge::model::Pose::at(0.0, 0.0, 0.0)),
        (
            "temp_pose".to_string(),
            btforge::model::Pose::at(0.0, 0.0, 0.0),
        ),
    ]);
    SystemSpecification::standard_library(metadata, 0.0).expect("bare spec is valid")
}

#[derive(Deserialize)]
struct PerturbationScript(Vec<Perturbation>);

fn cmd_execute(
    dataset: &Path,
    id: usize,
    perturb: Option<&Path>,
    stale_metadata: bool,
    trace_out: Option<&Path>,
    max_ticks: Option<usize>,
    file_config: &FileConfig,
) -> Result<u8, String> {
    let records = load_records(dataset)?;
    let record = records
        .iter()
        .find(|r| r.index == id)
        .ok_or_else(|| format!("no record with id {id}"))?;
    let bt = lower(&record.bt, &record.spec).map_err(|e| format!("stored tree is invalid: {e}"))?;
    let perturbations: Vec<Perturbation> = match perturb {
        None => Vec::new(),
        Some(path) => {
            let script: PerturbationScript = serde_json::from_str(&read_file(path)?)
                .map_err(|e| format!("bad perturbation script {}: {e}", path.display()))?;
            script.0
        }
    };
    let params = sim_params(file_config, max_ticks);
    let opts = RunOptions { stale_metadata };
    let result = run(
        &bt,
        &record.scene,
        &record.spec,
        &record.goals,
        &params,
        &perturbations,
        &opts,
    );
    if let Some(path) = trace_out {
        let mut text = String::new();
        for entry in &result.trace {
            text.push_str(&serde_json::to_string(entry).unwrap());
            text.push('\n');
        }
        write_atomic(path, &text)?;
    }
    let summary = serde_json::json!({
        "id": id,
        "final_status": result.final_status,
        "ticks_used": result.ticks_used,
        "goals_met": result.goals_met,
    });
    println!("{}", serde_json::to_string(&summary).unwrap());
    Ok(match result.final_status {
        FinalStatus::Success => EXIT_OK,
        FinalStatus::Failure => EXIT_RUN_FAILURE,
        FinalStatus::Timeout => EXIT_TIMEOUT,
    })
}

fn load_candidates(arg: &str, records: &[DatasetRecord]) -> Result<Candidates, String> {
    if arg == "self" {
        return Ok(Candidates::SelfTargets);
    }
    let path = Path::new(arg);
    if path.is_dir() {
        let mut docs = Vec::new();
        for record in records {
            let id = sample_id(record.index);
            let file = path.join(format!("{id}.json"));
            if file.is_file() {
                docs.push((id, read_file(&file)?));
            }
        }
        return Ok(Candidates::Documents(docs));
    }
    let mut docs = Vec::new();
    for (line_no, line) in read_file(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| format!("{}:{}: invalid JSON: {e}", path.display(), line_no + 1))?;
        let id = value
            .get("id")
            .and_then(Value::as_str)
            .ok_or_else(|| format!("{}:{}: missing id", path.display(), line_no + 1))?
            .to_string();
        let doc = value
            .get("doc")
            .and_then(Value::as_str)
            .ok_or_else(|| format!("{}:{}: missing doc", path.display(), line_no + 1))?
            .to_string();
        docs.push((id, doc));
    }
    Ok(Candidates::Documents(docs))
}

fn cmd_evaluate(
    dataset: &Path,
    candidates_arg: &str,
    strict_offsets: bool,
    out_dir: &Path,
    file_config: &FileConfig,
) -> Result<u8, String> {
    let records = load_records(dataset)?;
    let candidates = load_candidates(candidates_arg, &records)?;
    let opts = EvalOptions {
        strict_offsets: strict_offsets || file_config.strict_offsets.unwrap_or(false),
        params: sim_params(file_config, None),
        stale_metadata: false,
    };
    let output = evaluate(&records, &candidates, &opts).map_err(|e| e.to_string())?;

    fs::create_dir_all(out_dir).map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    let label = if candidates_arg == "self" {
        "self".to_string()
    } else {
        Path::new(candidates_arg)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("candidates")
            .to_string()
    };
    let csv = format!(
        "{}\n{}\n",
        btforge::metrics::MetricsReport::csv_header(),
        output.report.csv_row(&label)
    );
    write_atomic(&out_dir.join("report.csv"), &csv)?;
    let table = output.report.text_table(&label);
    write_atomic(&out_dir.join("report.txt"), &table)?;
    write_atomic(
        &out_dir.join("outcomes.jsonl"),
        &outcomes_to_jsonl(&output.outcomes),
    )?;
    print!("{table}");
    Ok(EXIT_OK)
}

fn cmd_mutate(
    dataset: &Path,
    kind: &str,
    rate: f64,
    seed: Option<u64>,
    out: &Path,
    file_config: &FileConfig,
) -> Result<u8, String> {
    let kind = MutationKind::from_name(kind).ok_or_else(|| {
        format!(
            "unknown mutation kind {kind:?}; expected one of {}",
            MutationKind::ALL
                .iter()
                .map(|k| k.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )
    })?;
    let records = load_records(dataset)?;
    let seed = seed.or(file_config.seed).unwrap_or(0);
    let docs = mutate_corpus(&records, kind, rate, seed);
    let mut text = String::new();
    for (id, doc) in &docs {
        text.push_str(&serde_json::to_string(&serde_json::json!({"id": id, "doc": doc})).unwrap());
        text.push('\n');
    }
    write_atomic(out, &text)?;
    Ok(EXIT_OK)
}

fn cmd_render(scene_path: &Path, id: Option<usize>, out: &Path) -> Result<u8, String> {
    let text = read_file(scene_path)?;
    let scene: Scene = match id {
        Some(id) => {
            let records = load_dataset_jsonl(&text).map_err(|e| e.to_string())?;
            records
                .into_iter()
                .find(|r| r.index == id)
                .map(|r| r.scene)
                .ok_or_else(|| format!("no record with id {id}"))?
        }
        None => match serde_json::from_str(&text) {
            Ok(scene) => scene,
            Err(_) => {
                // Fall back to the first record of a dataset file.
                let records = load_dataset_jsonl(&text).map_err(|e| e.to_string())?;
                records
                    .into_iter()
                    .next()
                    .map(|r| r.scene)
                    .ok_or_else(|| "empty dataset".to_string())?
            }
        },
    };
    write_atomic(out, &render_schematic(&scene))?;
    Ok(EXIT_OK)
}
