//! Explore → parse → assemble → export → annotate, driven by one
//! configuration document.
//!
//! Annotation is the last step: any earlier failure leaves the store
//! untouched.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::explorer::{self, Collection, ExploreError};
use crate::exporter::{ExportError, ExporterRegistry};
use crate::formatter::{self, FormatError, FragmentNamespace, SchemaError, StructuringSchema};
use crate::model::{Fragment, FileDescriptionRule, RuleError, RuleKind, RuleSet, StructuredMetadata};
use crate::parsers::{from_serde, ParserError, ParserRegistry, ParserSpec};
use crate::store::{FileStore, RecordStore, StoreError};

/// Schema id recorded for documents produced without a schema.
pub const PASSTHROUGH_SCHEMA_ID: &str = "passthrough";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed configuration: {0}")]
    Syntax(String),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("rule {rule:?}: {source}")]
    Parser {
        rule: String,
        #[source]
        source: ParserError,
    },
    #[error("schema {path}: {source}")]
    Schema {
        path: String,
        #[source]
        source: SchemaError,
    },
    #[error("schema {at}: reference to undeclared rule {rule:?}")]
    UnknownRule { at: String, rule: String },
    #[error("unknown export format {0:?}")]
    UnknownExportFormat(String),
    #[error("store_path is set but data_blob_path is not")]
    MissingDataBlob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Explore,
    Parse,
    Format,
    Export,
    Store,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Explore => "explore",
            Stage::Parse => "parse",
            Stage::Format => "format",
            Stage::Export => "export",
            Stage::Store => "store",
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error("{path} (rule {rule}): {source}")]
    Parse {
        path: String,
        rule: String,
        #[source]
        source: ParserError,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("{path}: {message}")]
    Output { path: String, message: String },
    #[error("{}{source}", path.as_ref().map(|p| format!("{p}: ")).unwrap_or_default())]
    Store {
        path: Option<String>,
        #[source]
        source: StoreError,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::Config(_) => Stage::Config,
            PipelineError::Explore(_) => Stage::Explore,
            PipelineError::Parse { .. } => Stage::Parse,
            PipelineError::Format(_) => Stage::Format,
            PipelineError::Export(_) | PipelineError::Output { .. } => Stage::Export,
            PipelineError::Store { .. } => Stage::Store,
        }
    }

    /// File or document path the error concerns, when there is one.
    pub fn path(&self) -> Option<String> {
        match self {
            PipelineError::Config(ConfigError::Io { path, .. })
            | PipelineError::Config(ConfigError::Schema { path, .. }) => Some(path.clone()),
            PipelineError::Config(ConfigError::UnknownRule { at, .. }) => Some(at.clone()),
            PipelineError::Config(_) => None,
            PipelineError::Explore(ExploreError::CollectionIo { path, .. }) => Some(path.clone()),
            PipelineError::Explore(ExploreError::AmbiguousMatch { file, .. }) => Some(file.clone()),
            PipelineError::Explore(ExploreError::RuleUnmatched(_)) => None,
            PipelineError::Parse { path, .. } | PipelineError::Output { path, .. } => Some(path.clone()),
            PipelineError::Format(FormatError::MissingSource { field, .. })
            | PipelineError::Format(FormatError::Compute { field, .. }) => Some(field.clone()),
            PipelineError::Format(FormatError::SchemaValidation { path, .. }) => Some(path.clone()),
            PipelineError::Export(_) => None,
            PipelineError::Store { path, .. } => path.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    rules: Vec<RawRule>,
    #[serde(default)]
    schema_path: Option<String>,
    #[serde(default = "default_format")]
    export_format: String,
    #[serde(default)]
    strict: bool,
    #[serde(default)]
    output_path: Option<String>,
    #[serde(default)]
    store_path: Option<String>,
    #[serde(default)]
    data_blob_path: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    name: String,
    pattern: String,
    #[serde(default)]
    kind: RawKind,
    parser: String,
    #[serde(default)]
    options: serde_json::Map<String, serde_json::Value>,
    #[serde(default = "yes")]
    required: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawKind {
    #[default]
    Exact,
    Regex,
}

fn default_format() -> String {
    "json".into()
}

fn yes() -> bool {
    true
}

/// A validated pipeline configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub rules: RuleSet,
    pub parsers: HashMap<String, ParserSpec>,
    pub schema: Option<StructuringSchema>,
    pub export_format: String,
    pub strict: bool,
    pub output_path: Option<PathBuf>,
    pub store_path: Option<PathBuf>,
    pub data_blob_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub metadata: StructuredMetadata,
    pub metadata_bytes: Vec<u8>,
    pub record_uid: Option<String>,
    pub fragments_parsed: usize,
    pub files_skipped: usize,
}

/// Parser and exporter registries; frozen once runs begin.
#[derive(Clone, Default)]
pub struct Pipeline {
    pub parsers: ParserRegistry,
    pub exporters: ExporterRegistry,
}

impl Pipeline {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a configuration file. Relative paths inside it resolve against
    /// the file's directory.
    pub fn load_config(&self, path: &Path) -> Result<PipelineConfig, ConfigError> {
        let bytes = fs::read(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        self.parse_config(&bytes, base)
    }

    pub fn parse_config(&self, bytes: &[u8], base: &Path) -> Result<PipelineConfig, ConfigError> {
        let raw: RawConfig =
            serde_json::from_slice(bytes).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let resolve = |p: Option<String>| p.map(|p| base.join(p));

        let mut rules = Vec::new();
        let mut parsers = HashMap::new();
        for r in raw.rules {
            let kind = match r.kind {
                RawKind::Exact => RuleKind::ExactName,
                RawKind::Regex => RuleKind::Regex,
            };
            rules.push(FileDescriptionRule::new(&r.name, &r.pattern, kind, &r.parser, r.required)?);
            let spec = ParserSpec {
                id: r.parser,
                options: r.options.into_iter().map(|(k, v)| (k, from_serde(v))).collect(),
            };
            parsers.insert(r.name, spec);
        }
        let rules = RuleSet::new(rules)?;

        let schema = match resolve(raw.schema_path) {
            None => None,
            Some(path) => {
                let at = path.display().to_string();
                let bytes = fs::read(&path).map_err(|e| ConfigError::Io {
                    path: at.clone(),
                    message: e.to_string(),
                })?;
                let schema = StructuringSchema::from_json(&bytes)
                    .map_err(|source| ConfigError::Schema { path: at, source })?;
                Some(schema)
            }
        };

        let config = PipelineConfig {
            rules,
            parsers,
            schema,
            export_format: raw.export_format,
            strict: raw.strict,
            output_path: resolve(raw.output_path),
            store_path: resolve(raw.store_path),
            data_blob_path: resolve(raw.data_blob_path),
        };
        self.check_config(&config)?;
        Ok(config)
    }

    /// Cross-checks a configuration against the registries.
    pub fn check_config(&self, config: &PipelineConfig) -> Result<(), ConfigError> {
        for rule in config.rules.rules() {
            let spec = config.parsers.get(&rule.name).cloned().unwrap_or_else(|| ParserSpec::new(&rule.parser));
            self.parsers.check(&spec).map_err(|source| ConfigError::Parser {
                rule: rule.name.clone(),
                source,
            })?;
        }
        if let Some(schema) = &config.schema {
            for (at, path) in schema.references() {
                if !config.rules.contains(&path.rule) {
                    return Err(ConfigError::UnknownRule {
                        at,
                        rule: path.rule.clone(),
                    });
                }
            }
        }
        if !self.exporters.contains(&config.export_format) {
            return Err(ConfigError::UnknownExportFormat(config.export_format.clone()));
        }
        if config.store_path.is_some() && config.data_blob_path.is_none() {
            return Err(ConfigError::MissingDataBlob);
        }
        Ok(())
    }

    pub fn run(&self, config: &PipelineConfig, collection: &Collection) -> Result<RunReport, PipelineError> {
        self.check_config(config)?;
        let exploration = explorer::explore_with_report(collection, &config.rules, config.strict)?;
        let contents = explorer::read_items(collection, &exploration.items)?;

        let fragments: Vec<Fragment> = exploration
            .items
            .par_iter()
            .zip(contents.par_iter())
            .map(|(item, bytes)| {
                let spec = match config.parsers.get(&item.rule) {
                    Some(spec) => spec.clone(),
                    None => ParserSpec::new(config.rules.get(&item.rule).map_or("", |r| &r.parser)),
                };
                let body = self.parsers.parse(&spec, bytes).map_err(|source| PipelineError::Parse {
                    path: item.relative_path.clone(),
                    rule: item.rule.clone(),
                    source,
                })?;
                Ok(Fragment {
                    rule: item.rule.clone(),
                    path: item.relative_path.clone(),
                    body,
                })
            })
            .collect::<Result<_, PipelineError>>()?;
        let fragments_parsed = fragments.len();
        let ns = FragmentNamespace::from_fragments(fragments);

        let metadata = match &config.schema {
            Some(schema) => formatter::assemble(&ns, schema)?,
            None => StructuredMetadata::new(ns.to_value(), PASSTHROUGH_SCHEMA_ID),
        };
        let metadata_bytes = self.exporters.export(&config.export_format, &metadata)?;

        if let Some(out) = &config.output_path {
            write_atomically(out, &metadata_bytes).map_err(|e| PipelineError::Output {
                path: out.display().to_string(),
                message: e.to_string(),
            })?;
        }

        let record_uid = match (&config.store_path, &config.data_blob_path) {
            (Some(store_path), Some(blob_path)) => {
                let blob = fs::read(blob_path).map_err(|e| PipelineError::Store {
                    path: Some(blob_path.display().to_string()),
                    source: StoreError::Io {
                        path: blob_path.display().to_string(),
                        source: e,
                    },
                })?;
                let store_err = |source| PipelineError::Store {
                    path: Some(store_path.display().to_string()),
                    source,
                };
                let store = FileStore::open_or_create(store_path).map_err(store_err)?;
                Some(store.annotate(&blob, &metadata).map_err(store_err)?.uid)
            }
            _ => None,
        };

        Ok(RunReport {
            metadata,
            metadata_bytes,
            record_uid,
            fragments_parsed,
            files_skipped: exploration.unmatched.len(),
        })
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
