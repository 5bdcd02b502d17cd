//! Nearest-neighbour view matching for shape embeddings.
//!
//! A dataset is a grid of rendered views (objects x 31 viewpoint series x 11
//! frames, optionally doubled with contrast-reversed copies) plus one embedding
//! row per view. For every reference view the benchmark asks whether its
//! single closest match, after removing same-object views near it in viewpoint
//! space, is another view of the same object.
//!
//! - [`view_model`]: view identities, naming and manifest validation.
//! - [`embedding_store`]: the `.emb` format and metric preprocessing.
//! - [`exclusion`]: reference / candidate / distractor rules.
//! - [`matcher`]: the exact, tiled, parallel matcher.
//! - [`metrics_report`]: error curves, exemplars, CSV and JSON reports.
//! - [`synth`]: synthetic datasets and the brute-force oracle.
//! - [`pipeline`]: one call from loaded data to a finished report.
//!
//! ```
//! use shapey::{error_curves, generate, match_all, preprocess, ExclusionSpec, MatchOptions, Metric, SynthParams};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let (emb, manifest) = generate(&SynthParams::default())?;
//! let specs: Vec<ExclusionSpec> = vec!["p:2:none".parse()?, "pw:2:none".parse()?];
//! let records = match_all(&preprocess(&emb, Metric::Correlation), &manifest, &specs, MatchOptions::default())?;
//! for curve in error_curves(&records, &specs) {
//!     println!("{} {:?}", curve.dims, curve.points[0].object_error);
//! }
//! # Ok(())
//! # }
//! ```

pub mod embedding_store;
pub mod exclusion;
pub mod matcher;
pub mod metrics_report;
pub mod pipeline;
pub mod synth;
pub mod view_model;

pub use embedding_store::{
    preprocess, read_embeddings, write_embeddings, EmbeddingMatrix, Metric, NormalizedMatrix,
};
pub use exclusion::{ContrastMode, ExclusionSpec, Radius};
pub use matcher::{match_all, MatchOptions, MatchRecord, Outcome};
pub use metrics_report::{error_curves, top_errors, ErrorCurve, Report};
pub use synth::{generate, oracle_match, SynthParams};
pub use view_model::{parse_view_name, Contrast, Cvt, Manifest, ViewId};
