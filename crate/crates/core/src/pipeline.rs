//! Loaded dataset in, finished report out.

use crate::embedding_store::{preprocess, EmbeddingMatrix, Metric};
use crate::exclusion::ExclusionSpec;
use crate::matcher::{match_all, specs_without_references, MatchError, MatchOptions, MatchRecord};
use crate::metrics_report::{error_curves, top_errors, Report, RunInfo};
use crate::view_model::{Manifest, NUM_CVTS};

pub const TOOL_NAME: &str = "shapey";
pub const DEFAULT_EXEMPLARS: usize = 100;

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub metric: Metric,
    pub specs: Vec<ExclusionSpec>,
    pub options: MatchOptions,
    /// Exemplars kept in the report.
    pub exemplars: usize,
    /// Input labels recorded in the report (usually file paths).
    pub embeddings_label: String,
    pub names_label: String,
}

impl BenchmarkConfig {
    pub fn new(specs: Vec<ExclusionSpec>) -> Self {
        Self {
            metric: Metric::default(),
            specs,
            options: MatchOptions::default(),
            exemplars: DEFAULT_EXEMPLARS,
            embeddings_label: String::new(),
            names_label: String::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub records: Vec<MatchRecord>,
    pub report: Report,
}

pub fn run_benchmark(
    matrix: &EmbeddingMatrix,
    manifest: &Manifest,
    config: &BenchmarkConfig,
) -> Result<BenchmarkOutput, MatchError> {
    let normalized = preprocess(matrix, config.metric);
    let records = match_all(&normalized, manifest, &config.specs, config.options)?;

    let mut notes = vec![format!(
        "dedup-origin: the origin frame is stored once per series ({NUM_CVTS} rows per object and contrast); matching treats these rows as distinct views"
    )];
    for spec in specs_without_references(manifest, &config.specs) {
        notes.push(format!(
            "empty-reference-set: {spec} has no qualified references"
        ));
    }
    let degenerate_rows = normalized.degenerate_rows();
    if !degenerate_rows.is_empty() {
        notes.push(format!(
            "degenerate-rows: {} rows have zero variance or norm and score 0 against everything",
            degenerate_rows.len()
        ));
    }

    let report = Report {
        run: RunInfo {
            tool: TOOL_NAME.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            metric: config.metric,
            specs: config.specs.iter().map(ToString::to_string).collect(),
            embeddings: config.embeddings_label.clone(),
            names: config.names_label.clone(),
            dim: matrix.dim(),
            dataset: manifest.shape().clone(),
            degenerate_rows,
        },
        notes,
        curves: error_curves(&records, &config.specs),
        exemplars: top_errors(&records, manifest, config.exemplars),
    };
    Ok(BenchmarkOutput { records, report })
}
