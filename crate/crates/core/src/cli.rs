//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 explorer error,
//! 4 parse error, 5 schema/validation error, 6 store error. Errors are
//! written to standard error as one JSON object per line with the fields
//! `stage`, `path` and `message`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::explorer::Collection;
use crate::exporter::{to_canonical_string, to_compact_string};
use crate::formatter::StructuringSchema;
use crate::model::{Map, Value};
use crate::pipeline::{Pipeline, PipelineError, Stage};
use crate::store::{record_to_value, FileStore, Predicate, RecordStore, StoreError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_EXPLORE: i32 = 3;
pub const EXIT_PARSE: i32 = 4;
pub const EXIT_VALIDATION: i32 = 5;
pub const EXIT_STORE: i32 = 6;

pub const STORE_ENV: &str = "ARCHIVIST_STORE";

#[derive(Debug, Parser)]
#[command(name = "archivist", version, about = "Structure raw simulation metadata and annotate data with it")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutputFormat {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the pipeline over one raw metadata collection.
    Run {
        /// Pipeline configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Collection: a directory or a .tgz/.tar.gz archive.
        #[arg(long)]
        input: PathBuf,
        /// Where to write the exported metadata.
        #[arg(long)]
        out: PathBuf,
        /// Record store to annotate into (defaults to $ARCHIVIST_STORE when --data is given).
        #[arg(long)]
        store: Option<PathBuf>,
        /// Data blob to annotate with the structured metadata.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fail when a file matches more than one rule.
        #[arg(long)]
        strict: bool,
    },
    /// Print records matching all --where predicates.
    Query {
        #[arg(long, env = STORE_ENV)]
        store: PathBuf,
        /// `path OP value`, OP one of == != < <= > >=; repeatable.
        #[arg(long = "where")]
        predicates: Vec<String>,
        /// `table` output is for humans and may change.
        #[arg(long, value_enum, default_value = "json")]
        format: OutputFormat,
    },
    /// Per-group count, mean and sample standard deviation of a target field.
    Aggregate {
        #[arg(long, env = STORE_ENV)]
        store: PathBuf,
        #[arg(long = "where")]
        predicates: Vec<String>,
        #[arg(long)]
        group_by: String,
        #[arg(long)]
        target: String,
    },
    /// Check a structuring schema and list every violation.
    ValidateSchema {
        #[arg(long)]
        schema: PathBuf,
    },
}

struct Failure {
    code: i32,
    stage: &'static str,
    path: Option<String>,
    message: String,
}

impl Failure {
    fn new(code: i32, stage: &'static str, path: Option<String>, message: impl ToString) -> Self {
        Self {
            code,
            stage,
            path,
            message: message.to_string(),
        }
    }
}

fn diagnostic(stage: &str, path: Option<&str>, message: &str) -> String {
    let mut m = Map::new();
    m.insert("stage".into(), Value::Text(stage.into()));
    m.insert("path".into(), path.map_or(Value::Null, Value::from));
    m.insert("message".into(), Value::Text(message.into()));
    to_compact_string(&Value::Map(m))
}

/// Runs the CLI with explicit arguments and output streams; returns the
/// process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let message = e.kind().as_str().map_or_else(|| e.to_string(), str::to_string);
            let _ = writeln!(stderr, "{}", diagnostic("cli", None, &message));
            return EXIT_CONFIG;
        }
    };
    let result = match cli.command {
        Command::Run { config, input, out, store, data, strict } => {
            cmd_run(config, input, out, store, data, strict, stdout)
        }
        Command::Query { store, predicates, format } => cmd_query(store, &predicates, format, stdout, stderr),
        Command::Aggregate { store, predicates, group_by, target } => {
            cmd_aggregate(store, &predicates, &group_by, &target, stdout, stderr)
        }
        Command::ValidateSchema { schema } => cmd_validate_schema(schema, stdout, stderr),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "{}", diagnostic(f.stage, f.path.as_deref(), &f.message));
            f.code
        }
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    let code = match e.stage() {
        Stage::Config | Stage::Export => EXIT_CONFIG,
        Stage::Explore => EXIT_EXPLORE,
        Stage::Parse => EXIT_PARSE,
        Stage::Format => EXIT_VALIDATION,
        Stage::Store => EXIT_STORE,
    };
    Failure::new(code, e.stage().as_str(), e.path(), &e)
}

fn cmd_run(
    config: PathBuf,
    input: PathBuf,
    out: PathBuf,
    store: Option<PathBuf>,
    data: Option<PathBuf>,
    strict: bool,
    stdout: &mut dyn Write,
) -> Result<(), Failure> {
    let pipeline = Pipeline::new();
    let mut cfg = pipeline
        .load_config(&config)
        .map_err(|e| pipeline_failure(PipelineError::Config(e)))?;
    cfg.strict |= strict;
    cfg.output_path = Some(out.clone());
    let store = store.or_else(|| data.as_ref().and_then(|_| std::env::var_os(STORE_ENV).map(PathBuf::from)));
    match (store, data) {
        (Some(s), Some(d)) => {
            cfg.store_path = Some(s);
            cfg.data_blob_path = Some(d);
        }
        (None, None) => {}
        (Some(_), None) => return Err(Failure::new(EXIT_CONFIG, "config", None, "--store requires --data")),
        (None, Some(_)) => {
            return Err(Failure::new(EXIT_CONFIG, "config", None, format!("--data requires --store or ${STORE_ENV}")))
        }
    }
    let collection = Collection::detect(&input).map_err(|e| pipeline_failure(PipelineError::Explore(e)))?;
    let report = pipeline.run(&cfg, &collection).map_err(pipeline_failure)?;

    let mut summary = Map::new();
    summary.insert("out".into(), Value::Text(out.display().to_string()));
    summary.insert("fragments_parsed".into(), Value::Integer(report.fragments_parsed as i64));
    summary.insert("files_skipped".into(), Value::Integer(report.files_skipped as i64));
    summary.insert("record_uid".into(), report.record_uid.map_or(Value::Null, Value::Text));
    let _ = writeln!(stdout, "{}", to_compact_string(&Value::Map(summary)));
    Ok(())
}

fn open_store(path: &Path, stderr: &mut dyn Write) -> Result<FileStore, Failure> {
    let store = FileStore::open(path).map_err(|e| store_failure(path, e))?;
    if let Some(n) = store.recovered_tail() {
        let _ = writeln!(
            stderr,
            "{}",
            diagnostic("store", Some(&path.display().to_string()), &format!("ignoring {n}-byte partial trailing record"))
        );
    }
    Ok(store)
}

fn store_failure(path: &Path, e: StoreError) -> Failure {
    let code = match e {
        StoreError::Predicate(_) => EXIT_CONFIG,
        StoreError::AggregationType { .. } => EXIT_VALIDATION,
        _ => EXIT_STORE,
    };
    Failure::new(code, "store", Some(path.display().to_string()), e)
}

fn parse_predicates(texts: &[String]) -> Result<Vec<Predicate>, Failure> {
    texts
        .iter()
        .map(|t| Predicate::parse(t).map_err(|e| Failure::new(EXIT_CONFIG, "query", None, e)))
        .collect()
}

fn cmd_query(
    store: PathBuf,
    predicates: &[String],
    format: OutputFormat,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), Failure> {
    let predicates = parse_predicates(predicates)?;
    let records = open_store(&store, stderr)?
        .query(&predicates)
        .map_err(|e| store_failure(&store, e))?;
    if records.is_empty() {
        return Ok(());
    }
    match format {
        OutputFormat::Json => {
            let list = Value::List(records.iter().map(record_to_value).collect());
            let _ = write!(stdout, "{}", to_canonical_string(&list));
        }
        OutputFormat::Table => {
            for r in &records {
                let _ = writeln!(stdout, "{}\t{}", r.uid, to_compact_string(&r.metadata.body));
            }
        }
    }
    Ok(())
}

fn cmd_aggregate(
    store: PathBuf,
    predicates: &[String],
    group_by: &str,
    target: &str,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), Failure> {
    let predicates = parse_predicates(predicates)?;
    let groups = open_store(&store, stderr)?
        .aggregate(&predicates, group_by, target)
        .map_err(|e| store_failure(&store, e))?;
    let out: Map = groups.into_iter().map(|(k, s)| (k, s.to_value())).collect();
    let _ = write!(stdout, "{}", to_canonical_string(&Value::Map(out)));
    Ok(())
}

fn cmd_validate_schema(schema: PathBuf, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    let at = schema.display().to_string();
    let bytes = std::fs::read(&schema).map_err(|e| Failure::new(EXIT_CONFIG, "schema", Some(at.clone()), e))?;
    match StructuringSchema::from_json(&bytes) {
        Ok(s) => {
            let mut m = Map::new();
            m.insert("valid".into(), Value::Boolean(true));
            m.insert("schema_id".into(), Value::Text(s.id().to_string()));
            let _ = writeln!(stdout, "{}", to_compact_string(&Value::Map(m)));
            Ok(())
        }
        Err(err) => {
            let count = err.0.len();
            for d in &err.0 {
                let path = if d.path.is_empty() { "/" } else { &d.path };
                let _ = writeln!(stderr, "{}", diagnostic("schema", Some(path), &d.message));
            }
            Err(Failure::new(
                EXIT_VALIDATION,
                "schema",
                Some(at),
                format!("{count} violation(s)"),
            ))
        }
    }
}
