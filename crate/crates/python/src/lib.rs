//! Python bindings: `import shapey_py`.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use shapey::embedding_store::{self, EmbeddingError, EmbeddingMatrix, Metric};
use shapey::exclusion::{
    parse_dims_list, parse_modes, parse_radii, spec_grid as grid, ExclusionSpec,
};
use shapey::matcher::{match_all, MatchOptions, MatchRecord};
use shapey::pipeline::{run_benchmark, BenchmarkConfig, DEFAULT_EXEMPLARS};
use shapey::synth::{self, SynthParams};
use shapey::view_model::{self, Manifest};

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn embedding_error(e: EmbeddingError) -> PyErr {
    match e {
        EmbeddingError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => value_error(other),
    }
}

fn parse_specs(specs: Vec<String>) -> PyResult<Vec<ExclusionSpec>> {
    specs
        .iter()
        .map(|s| s.parse().map_err(value_error))
        .collect()
}

/// A parsed view name.
#[derive(Debug)]
#[pyclass(frozen, module = "shapey_py")]
struct ViewId {
    inner: view_model::ViewId,
}

#[pymethods]
impl ViewId {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        view_model::parse_view_name(name)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    #[getter]
    fn category(&self) -> &str {
        &self.inner.object.category
    }

    #[getter]
    fn instance(&self) -> u8 {
        self.inner.object.instance
    }

    #[getter]
    fn cvt(&self) -> String {
        self.inner.cvt.to_string()
    }

    #[getter]
    fn frame(&self) -> u8 {
        self.inner.frame
    }

    #[getter]
    fn contrast(&self) -> char {
        self.inner.contrast.code()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("ViewId('{}')", self.inner)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// An embedding matrix with its validated view manifest.
#[derive(Debug)]
#[pyclass(frozen, module = "shapey_py")]
struct Dataset {
    matrix: EmbeddingMatrix,
    manifest: Manifest,
}

#[pymethods]
impl Dataset {
    /// Builds a dataset from view names and one row of floats per name.
    #[new]
    #[pyo3(signature = (names, rows, partial = false))]
    fn new(names: Vec<String>, rows: Vec<Vec<f32>>, partial: bool) -> PyResult<Self> {
        if names.len() != rows.len() {
            return Err(value_error(format!(
                "{} names but {} rows",
                names.len(),
                rows.len()
            )));
        }
        let manifest = if partial {
            view_model::validate_partial_manifest(&names)
        } else {
            view_model::validate_manifest(&names)
        }
        .map_err(value_error)?;
        let matrix = EmbeddingMatrix::from_rows(&rows).map_err(embedding_error)?;
        Ok(Self { matrix, manifest })
    }

    /// Reads `embeddings` (.emb) and its names sidecar (default: same stem, .names).
    #[staticmethod]
    #[pyo3(signature = (embeddings, names = None))]
    fn read(py: Python<'_>, embeddings: PathBuf, names: Option<PathBuf>) -> PyResult<Self> {
        let names = names.unwrap_or_else(|| embeddings.with_extension("names"));
        let (matrix, manifest) = py
            .detach(|| embedding_store::read_embeddings(&embeddings, &names))
            .map_err(embedding_error)?;
        Ok(Self { matrix, manifest })
    }

    /// Generates a synthetic grid dataset.
    #[staticmethod]
    #[pyo3(signature = (
        categories = 4, instances = 2, dim = 64, seed = 0, step_scale = 0.15, noise = 0.05,
        tangle = 0.0, contrasts = 1, contrast_shift = 0.5, orthogonal = false,
        twin_pairs = 0, twin_offset = 0.5
    ))]
    #[allow(clippy::too_many_arguments)]
    fn synth(
        categories: usize,
        instances: usize,
        dim: usize,
        seed: u64,
        step_scale: f64,
        noise: f64,
        tangle: f64,
        contrasts: usize,
        contrast_shift: f64,
        orthogonal: bool,
        twin_pairs: usize,
        twin_offset: f64,
    ) -> PyResult<Self> {
        let params = SynthParams {
            n_categories: categories,
            instances_per_category: instances,
            dim,
            seed,
            step_scale,
            noise,
            tangle,
            contrasts,
            contrast_shift,
            orthogonal_anchors: orthogonal,
            twin_pairs,
            twin_offset,
        };
        let (matrix, manifest) = synth::generate(&params).map_err(value_error)?;
        Ok(Self { matrix, manifest })
    }

    /// Writes BASE.emb and BASE.names; returns both paths.
    fn write(&self, base: PathBuf) -> PyResult<(PathBuf, PathBuf)> {
        let (emb, names) = embedding_store::dataset_paths(&base);
        embedding_store::write_embeddings(&self.matrix, &self.manifest, &emb, &names)
            .map_err(embedding_error)?;
        Ok((emb, names))
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.matrix.n_rows()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn __len__(&self) -> usize {
        self.matrix.n_rows()
    }

    fn names(&self) -> Vec<String> {
        self.manifest.names().collect()
    }

    fn row(&self, index: usize) -> PyResult<Vec<f32>> {
        if index >= self.matrix.n_rows() {
            return Err(value_error(format!("row {index} out of range")));
        }
        Ok(self.matrix.row(index).to_vec())
    }

    fn shape(&self) -> String {
        self.manifest.shape().to_string()
    }

    /// Matches every qualified reference under each spec. Returns tuples
    /// `(spec, reference_row, outcome, top1_row, top1_score, pmc_row, pmc_score)`;
    /// absent candidates are None.
    #[pyo3(signature = (specs, metric = "correlation", workers = 0, tile = 0))]
    fn match_views(
        &self,
        py: Python<'_>,
        specs: Vec<String>,
        metric: &str,
        workers: usize,
        tile: usize,
    ) -> PyResult<Vec<RecordTuple>> {
        let specs = parse_specs(specs)?;
        let metric: Metric = metric.parse().map_err(value_error)?;
        let options = MatchOptions {
            workers,
            tile_size: tile,
        };
        let records = py
            .detach(|| {
                let normalized = embedding_store::preprocess(&self.matrix, metric);
                match_all(&normalized, &self.manifest, &specs, options)
            })
            .map_err(value_error)?;
        Ok(records.iter().map(record_tuple).collect())
    }

    /// Exhaustive reference matcher, same output format as `match_views`.
    #[pyo3(signature = (specs, metric = "correlation"))]
    fn oracle_match(
        &self,
        py: Python<'_>,
        specs: Vec<String>,
        metric: &str,
    ) -> PyResult<Vec<RecordTuple>> {
        let specs = parse_specs(specs)?;
        let metric: Metric = metric.parse().map_err(value_error)?;
        let records =
            py.detach(|| synth::oracle_match_grid(&self.matrix, &self.manifest, &specs, metric));
        Ok(records.iter().map(record_tuple).collect())
    }

    /// Runs the benchmark and returns the report as a dict.
    #[pyo3(signature = (specs, metric = "correlation", workers = 0, tile = 0, exemplars = DEFAULT_EXEMPLARS))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        specs: Vec<String>,
        metric: &str,
        workers: usize,
        tile: usize,
        exemplars: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut config = BenchmarkConfig::new(parse_specs(specs)?);
        config.metric = metric.parse().map_err(value_error)?;
        config.options = MatchOptions {
            workers,
            tile_size: tile,
        };
        config.exemplars = exemplars;
        let output = py
            .detach(|| run_benchmark(&self.matrix, &self.manifest, &config))
            .map_err(value_error)?;
        py.import("json")?
            .call_method1("loads", (output.report.to_json(),))
    }
}

type RecordTuple = (
    String,
    u32,
    &'static str,
    Option<u32>,
    Option<f64>,
    Option<u32>,
    Option<f64>,
);

fn record_tuple(r: &MatchRecord) -> RecordTuple {
    (
        r.spec.to_string(),
        r.reference,
        match r.outcome {
            shapey::Outcome::Correct => "correct",
            shapey::Outcome::CategoryCorrect => "category_correct",
            shapey::Outcome::Incorrect => "incorrect",
            shapey::Outcome::Skipped => "skipped",
        },
        r.top1.map(|s| s.row),
        r.top1.map(|s| s.score),
        r.best_pmc.map(|s| s.row),
        r.best_pmc.map(|s| s.score),
    )
}

/// Parses a view name such as `cat0.01.pw.03.d`.
#[pyfunction]
fn parse_view_name(name: &str) -> PyResult<ViewId> {
    ViewId::new(name)
}

/// The 31 transformation sets, ordered by size then axis order.
#[pyfunction]
fn enumerate_cvts() -> Vec<String> {
    view_model::enumerate_cvts()
        .iter()
        .map(ToString::to_string)
        .collect()
}

/// Expands dims, radii and mode lists into spec strings, e.g.
/// `spec_grid("p,pw", "none,0..2", "none")`.
#[pyfunction]
#[pyo3(signature = (dims = "all31", radii = "none,0..10", modes = "none"))]
fn spec_grid(dims: &str, radii: &str, modes: &str) -> PyResult<Vec<String>> {
    let dims = parse_dims_list(dims).map_err(value_error)?;
    let radii = parse_radii(radii).map_err(value_error)?;
    let modes = parse_modes(modes).map_err(value_error)?;
    Ok(grid(&dims, &radii, &modes)
        .iter()
        .map(ToString::to_string)
        .collect())
}

/// Similarity between two vectors under a metric.
#[pyfunction]
#[pyo3(signature = (a, b, metric = "correlation"))]
fn similarity(a: Vec<f32>, b: Vec<f32>, metric: &str) -> PyResult<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(value_error("vectors must be nonempty and of equal length"));
    }
    let metric: Metric = metric.parse().map_err(value_error)?;
    let m = EmbeddingMatrix::from_rows(&[a, b]).map_err(embedding_error)?;
    Ok(embedding_store::preprocess(&m, metric).similarity(0, 1))
}

#[pymodule]
fn shapey_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<ViewId>()?;
    m.add_class::<Dataset>()?;
    m.add_function(wrap_pyfunction!(parse_view_name, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_cvts, m)?)?;
    m.add_function(wrap_pyfunction!(spec_grid, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::types::PyDict;

    #[test]
    fn module_round_trip() {
        Python::initialize();
        Python::attach(|py| {
            let module = PyModule::new(py, "shapey_py").unwrap();
            shapey_py(&module).unwrap();
            let cvts: Vec<String> = module
                .getattr("enumerate_cvts")
                .unwrap()
                .call0()
                .unwrap()
                .extract()
                .unwrap();
            assert_eq!(cvts.len(), 31);

            let ds = Dataset::synth(2, 1, 8, 0, 0.15, 0.05, 0.0, 1, 0.5, false, 0, 0.5).unwrap();
            let specs = vec!["pw:2:none".to_string()];
            let fast = ds
                .match_views(py, specs.clone(), "correlation", 1, 5)
                .unwrap();
            let slow = ds.oracle_match(py, specs.clone(), "correlation").unwrap();
            assert_eq!(fast, slow);
            let report = ds.run(py, specs, "correlation", 0, 0, 5).unwrap();
            let report = report.cast_into::<PyDict>().unwrap();
            assert!(report.contains("curves").unwrap());
        });
    }

    #[test]
    fn errors_become_python_exceptions() {
        Python::initialize();
        Python::attach(|py| {
            assert!(parse_view_name("cat0.01.wp.03.d")
                .unwrap_err()
                .is_instance_of::<PyValueError>(py));
            assert!(Dataset::read(py, "/nonexistent.emb".into(), None)
                .unwrap_err()
                .is_instance_of::<PyOSError>(py));
            assert!(spec_grid("p", "11", "none").is_err());
        });
    }
}
