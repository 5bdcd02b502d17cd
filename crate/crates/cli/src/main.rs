//! `shapey` command-line front end.
//!
//! Exit codes: 0 success, 1 validation or benchmark-domain failure, 2 I/O or
//! format failure (clap usage errors also exit with 2).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shapey::embedding_store::{
    self, read_embeddings, read_names, write_embeddings, EmbeddingError, Metric,
};
use shapey::exclusion::{parse_dims_list, parse_modes, parse_radii, spec_grid, ExclusionSpec};
use shapey::matcher::{MatchError, MatchOptions};
use shapey::metrics_report::{
    curves_to_csv, emit_report, format_exemplars, read_report, ReportError,
};
use shapey::pipeline::{run_benchmark, BenchmarkConfig, DEFAULT_EXEMPLARS};
use shapey::synth::{generate, SynthParams};
use shapey::view_model::validate_partial_manifest;
use shapey::view_model::{validate_manifest, ManifestError};

const SPEC_GRAMMAR: &str = "\
Exclusion specs are written <dims>:<radius>:<mode>, e.g. pw:2:none or pr:none:soft.
  dims    nonempty subset of x,y,p,r,w in canonical order (x y p r w), or all31 for --dims
  radius  none (no viewpoint exclusion) or an integer 0..10; --radii also takes
          comma lists and inclusive ranges, e.g. none,0..5
  mode    none (dark views only), hard (same-object candidates light, distractors dark)
          or soft (all candidates light)";

#[derive(Parser)]
#[command(name = "shapey", version, about = "Nearest-neighbour view-matching benchmark for shape embeddings", after_help = SPEC_GRAMMAR)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a .names manifest and print the dataset shape.
    Validate {
        names: PathBuf,
        /// Accept grids with missing cells.
        #[arg(long)]
        partial: bool,
    },
    /// Run an exclusion grid and write CSV curves plus a JSON report.
    #[command(after_help = SPEC_GRAMMAR)]
    Run(RunArgs),
    /// Print the curves stored in a JSON report, optionally re-emitting the CSV.
    Report {
        report: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// List the largest-margin matching errors stored in a JSON report.
    Errors {
        report: PathBuf,
        #[arg(short, long, default_value_t = 10)]
        n: usize,
    },
    /// Generate a synthetic dataset (BASE.emb + BASE.names).
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Embedding file (.emb).
    #[arg(long)]
    embeddings: PathBuf,
    /// Names sidecar; defaults to the embedding path with a .names extension.
    #[arg(long)]
    names: Option<PathBuf>,
    /// Exclusion sets: comma list such as p,pw,xpw, or all31.
    #[arg(long, default_value = "all31")]
    dims: String,
    /// Radii: none, integers 0..10, comma lists and a..b ranges.
    #[arg(long, default_value = "none,0..10")]
    radii: String,
    /// Contrast modes: comma list of none, hard, soft.
    #[arg(long, default_value = "none")]
    mode: String,
    /// Explicit specs (<dims>:<radius>:<mode>); replaces --dims/--radii/--mode.
    #[arg(long = "spec")]
    specs: Vec<String>,
    /// correlation, cosine or neg-euclidean.
    #[arg(long, default_value = "correlation")]
    metric: Metric,
    #[arg(long, default_value = "shapey.csv")]
    csv: PathBuf,
    #[arg(long, default_value = "shapey.report.json")]
    report: PathBuf,
    /// Worker threads, 0 = all cores.
    #[arg(long, env = "SHAPEY_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Rows per tile, 0 = sized from a 64 MiB per-worker budget.
    #[arg(long, default_value_t = 0)]
    tile: usize,
    /// Error exemplars kept in the report.
    #[arg(long, default_value_t = DEFAULT_EXEMPLARS)]
    exemplars: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Output base path; writes BASE.emb and BASE.names.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    categories: usize,
    #[arg(long, default_value_t = 2)]
    instances: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Manifold displacement per frame step.
    #[arg(long, default_value_t = 0.15)]
    step_scale: f64,
    /// Per-view Gaussian noise.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Weight of another object's anchor mixed into each view, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    tangle: f64,
    /// 1 (dark only) or 2 (dark and light).
    #[arg(long, default_value_t = 1)]
    contrasts: usize,
    /// Length of the shift applied to light views.
    #[arg(long, default_value_t = 0.5)]
    contrast_shift: f64,
    /// Use orthonormal object anchors.
    #[arg(long)]
    orthogonal: bool,
    /// Twin instance k of category 1 with instance k of category 0 for k < N.
    #[arg(long, default_value_t = 0)]
    twin_pairs: usize,
    #[arg(long, default_value_t = 0.5)]
    twin_offset: f64,
}

enum Failure {
    Domain(String),
    Format(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Domain(_) => 1,
            Self::Format(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Domain(m) | Self::Format(m) => m,
        }
    }
}

impl From<EmbeddingError> for Failure {
    fn from(e: EmbeddingError) -> Self {
        match &e {
            EmbeddingError::Manifest(m) if !m.has_parse_errors() => Self::Domain(e.to_string()),
            _ => Self::Format(e.to_string()),
        }
    }
}

impl From<ManifestError> for Failure {
    fn from(e: ManifestError) -> Self {
        if e.has_parse_errors() {
            Self::Format(e.to_string())
        } else {
            Self::Domain(e.to_string())
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        Self::Format(e.to_string())
    }
}

impl From<MatchError> for Failure {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::MissingLightViews(_) | MatchError::RowMismatch { .. } => {
                Self::Domain(e.to_string())
            }
            MatchError::NoSpecs | MatchError::Pool(_) => Self::Format(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { names, partial } => cmd_validate(&names, partial),
        Command::Run(args) => cmd_run(&args),
        Command::Report { report, csv } => cmd_report(&report, csv.as_deref()),
        Command::Errors { report, n } => cmd_errors(&report, n),
        Command::Synth(args) => cmd_synth(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

fn cmd_validate(names_path: &Path, partial: bool) -> Result<(), Failure> {
    let names = read_names(names_path)?;
    let manifest = if partial {
        validate_partial_manifest(&names)?
    } else {
        validate_manifest(&names)?
    };
    println!("{}: ok", names_path.display());
    println!("{}", manifest.shape());
    for (category, instances) in &manifest.shape().categories {
        println!("  {category}: {} instances", instances.len());
    }
    Ok(())
}

fn build_specs(args: &RunArgs) -> Result<Vec<ExclusionSpec>, Failure> {
    let bad = |e: shapey::exclusion::ExclusionError| Failure::Format(e.to_string());
    if !args.specs.is_empty() {
        return args.specs.iter().map(|s| s.parse().map_err(bad)).collect();
    }
    let dims = parse_dims_list(&args.dims).map_err(bad)?;
    let radii = parse_radii(&args.radii).map_err(bad)?;
    let modes = parse_modes(&args.mode).map_err(bad)?;
    Ok(spec_grid(&dims, &radii, &modes))
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let names_path = args
        .names
        .clone()
        .unwrap_or_else(|| args.embeddings.with_extension("names"));
    let paths = [&args.embeddings, &names_path, &args.csv, &args.report];
    for (i, a) in paths.iter().enumerate() {
        if paths[i + 1..].contains(a) {
            return Err(Failure::Format(format!(
                "path {} is used twice",
                a.display()
            )));
        }
    }
    let specs = build_specs(args)?;
    let (matrix, manifest) = read_embeddings(&args.embeddings, &names_path)?;

    let config = BenchmarkConfig {
        metric: args.metric,
        specs,
        options: MatchOptions {
            workers: args.workers,
            tile_size: args.tile,
        },
        exemplars: args.exemplars,
        embeddings_label: args.embeddings.display().to_string(),
        names_label: names_path.display().to_string(),
    };
    let output = run_benchmark(&matrix, &manifest, &config)?;
    for note in &output.report.notes {
        eprintln!("note: {note}");
    }
    for curve in &output.report.curves {
        for p in &curve.points {
            println!(
                "{}:{}:{}  qualified={} skipped={} object_error={} category_error={}",
                curve.dims,
                p.radius,
                curve.contrast_mode,
                p.n_qualified,
                p.n_skipped,
                fmt_rate(p.object_error),
                fmt_rate(p.category_error)
            );
        }
    }
    emit_report(&output.report, &args.csv, &args.report)?;
    eprintln!("wrote {} and {}", args.csv.display(), args.report.display());
    Ok(())
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "null".into(), |r| format!("{r:.6}"))
}

fn cmd_report(report_path: &Path, csv: Option<&Path>) -> Result<(), Failure> {
    let report = read_report(report_path)?;
    println!(
        "{} {} | metric {} | {}",
        report.run.tool, report.run.version, report.run.metric, report.run.dataset
    );
    print!("{}", curves_to_csv(&report.curves));
    if let Some(path) = csv {
        std::fs::write(path, curves_to_csv(&report.curves))
            .map_err(|e| Failure::Format(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_errors(report_path: &Path, n: usize) -> Result<(), Failure> {
    let report = read_report(report_path)?;
    let shown = &report.exemplars[..n.min(report.exemplars.len())];
    print!("{}", format_exemplars(shown));
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Failure> {
    let params = SynthParams {
        n_categories: args.categories,
        instances_per_category: args.instances,
        dim: args.dim,
        seed: args.seed,
        step_scale: args.step_scale,
        noise: args.noise,
        tangle: args.tangle,
        contrasts: args.contrasts,
        contrast_shift: args.contrast_shift,
        orthogonal_anchors: args.orthogonal,
        twin_pairs: args.twin_pairs,
        twin_offset: args.twin_offset,
    };
    let (matrix, manifest) = generate(&params).map_err(|e| Failure::Domain(e.to_string()))?;
    let (emb, names) = embedding_store::dataset_paths(&args.out);
    write_embeddings(&matrix, &manifest, &emb, &names)?;
    println!(
        "wrote {} and {} ({} rows x {} dims)",
        emb.display(),
        names.display(),
        matrix.n_rows(),
        matrix.dim()
    );
    Ok(())
}
