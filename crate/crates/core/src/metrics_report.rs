//! Error curves, failure exemplars and report files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_store::Metric;
use crate::exclusion::{ContrastMode, ExclusionSpec, Radius};
use crate::matcher::{MatchRecord, Outcome};
use crate::view_model::{Cvt, DatasetShape, Manifest};

pub const CSV_HEADER: &str = "dims,mode,radius,n_qualified,n_skipped,object_error,category_error";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed report: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub radius: Radius,
    /// Qualified references, skipped ones included.
    pub n_qualified: usize,
    pub n_skipped: usize,
    pub n_correct: usize,
    pub n_category_correct: usize,
    pub n_incorrect: usize,
    /// Fraction of non-skipped references whose top match is another object.
    pub object_error: Option<f64>,
    /// Fraction of non-skipped references whose top match is another category.
    pub category_error: Option<f64>,
}

impl CurvePoint {
    fn empty(radius: Radius) -> Self {
        Self {
            radius,
            n_qualified: 0,
            n_skipped: 0,
            n_correct: 0,
            n_category_correct: 0,
            n_incorrect: 0,
            object_error: None,
            category_error: None,
        }
    }

    fn count(&mut self, outcome: Outcome) {
        self.n_qualified += 1;
        match outcome {
            Outcome::Correct => self.n_correct += 1,
            Outcome::CategoryCorrect => self.n_category_correct += 1,
            Outcome::Incorrect => self.n_incorrect += 1,
            Outcome::Skipped => self.n_skipped += 1,
        }
    }

    fn finish(&mut self) {
        let n = self.n_qualified - self.n_skipped;
        if n > 0 {
            self.object_error =
                Some((self.n_category_correct + self.n_incorrect) as f64 / n as f64);
            self.category_error = Some(self.n_incorrect as f64 / n as f64);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub dims: Cvt,
    pub contrast_mode: ContrastMode,
    /// Ascending radius, no-exclusion first.
    pub points: Vec<CurvePoint>,
}

/// Groups records into one curve per (dims, mode), in the order the groups
/// first appear in `specs`. Specs with no records yield empty points.
pub fn error_curves(records: &[MatchRecord], specs: &[ExclusionSpec]) -> Vec<ErrorCurve> {
    let mut curves: Vec<ErrorCurve> = Vec::new();
    let mut group_of: HashMap<(Cvt, ContrastMode), usize> = HashMap::new();
    for spec in specs {
        let g = *group_of
            .entry((spec.dims, spec.contrast_mode))
            .or_insert_with(|| {
                curves.push(ErrorCurve {
                    dims: spec.dims,
                    contrast_mode: spec.contrast_mode,
                    points: Vec::new(),
                });
                curves.len() - 1
            });
        let points = &mut curves[g].points;
        if !points.iter().any(|p| p.radius == spec.radius) {
            points.push(CurvePoint::empty(spec.radius));
        }
    }
    for curve in &mut curves {
        curve.points.sort_by_key(|p| p.radius);
    }

    let mut slot: HashMap<ExclusionSpec, (usize, usize)> = HashMap::new();
    for (g, curve) in curves.iter().enumerate() {
        for (i, p) in curve.points.iter().enumerate() {
            slot.insert(
                ExclusionSpec::new(curve.dims, p.radius, curve.contrast_mode),
                (g, i),
            );
        }
    }
    for record in records {
        if let Some(&(g, i)) = slot.get(&record.spec) {
            curves[g].points[i].count(record.outcome);
        }
    }
    for curve in &mut curves {
        curve.points.iter_mut().for_each(CurvePoint::finish);
    }
    curves
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMatch {
    pub view: String,
    pub row: usize,
    pub similarity: f64,
}

/// A failed match: the wrong winner next to the best same-object candidate it beat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorExemplar {
    pub spec: ExclusionSpec,
    pub reference: String,
    pub reference_row: usize,
    pub outcome: Outcome,
    pub top1: ViewMatch,
    pub rejected: ViewMatch,
    /// `top1.similarity - rejected.similarity`; zero means a lost tie.
    pub margin: f64,
}

/// The `n` failures with the largest margin; ties go to the lower reference row.
pub fn top_errors(records: &[MatchRecord], manifest: &Manifest, n: usize) -> Vec<ErrorExemplar> {
    let mut errors: Vec<(&MatchRecord, f64)> = records
        .iter()
        .filter(|r| r.is_error())
        .filter_map(|r| {
            let (top, pmc) = (r.top1?, r.best_pmc?);
            Some((r, top.score - pmc.score))
        })
        .collect();
    errors.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.reference.cmp(&b.0.reference)));
    errors
        .into_iter()
        .take(n)
        .map(|(r, margin)| {
            let view_match = |s: crate::matcher::Scored| ViewMatch {
                view: manifest.view(s.row as usize).to_string(),
                row: s.row as usize,
                similarity: s.score,
            };
            ErrorExemplar {
                spec: r.spec,
                reference: manifest.view(r.reference as usize).to_string(),
                reference_row: r.reference as usize,
                outcome: r.outcome,
                top1: view_match(r.top1.expect("filtered")),
                rejected: view_match(r.best_pmc.expect("filtered")),
                margin,
            }
        })
        .collect()
}

fn format_rate(rate: Option<f64>) -> String {
    rate.map_or_else(|| "null".to_string(), |r| format!("{r:.6}"))
}

pub fn curves_to_csv(curves: &[ErrorCurve]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for curve in curves {
        for p in &curve.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                curve.dims,
                curve.contrast_mode,
                p.radius,
                p.n_qualified,
                p.n_skipped,
                format_rate(p.object_error),
                format_rate(p.category_error)
            )
            .unwrap();
        }
    }
    out
}

/// One parsed CSV data line.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub spec: ExclusionSpec,
    pub n_qualified: usize,
    pub n_skipped: usize,
    pub object_error: Option<f64>,
    pub category_error: Option<f64>,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, ReportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, CSV_HEADER)) => {}
        _ => {
            return Err(ReportError::Csv {
                line: 1,
                message: format!("expected header {CSV_HEADER:?}"),
            })
        }
    }
    lines
        .map(|(i, line)| {
            let err = |message: String| ReportError::Csv {
                line: i + 1,
                message,
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(err(format!("expected 7 fields, found {}", f.len())));
            }
            let spec: ExclusionSpec = format!("{}:{}:{}", f[0], f[2], f[1])
                .parse()
                .map_err(|e: crate::exclusion::ExclusionError| err(e.to_string()))?;
            let count = |s: &str| s.parse::<usize>().map_err(|e| err(e.to_string()));
            let rate = |s: &str| -> Result<Option<f64>, ReportError> {
                if s == "null" {
                    Ok(None)
                } else {
                    s.parse::<f64>().map(Some).map_err(|e| err(e.to_string()))
                }
            };
            Ok(CsvRow {
                spec,
                n_qualified: count(f[3])?,
                n_skipped: count(f[4])?,
                object_error: rate(f[5])?,
                category_error: rate(f[6])?,
            })
        })
        .collect()
}

/// Everything needed to attribute a run, minus execution details (workers,
/// tiles) that never change results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub tool: String,
    pub version: String,
    pub metric: Metric,
    pub specs: Vec<String>,
    pub embeddings: String,
    pub names: String,
    pub dim: usize,
    pub dataset: DatasetShape,
    pub degenerate_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run: RunInfo,
    pub notes: Vec<String>,
    pub curves: Vec<ErrorCurve>,
    pub exemplars: Vec<ErrorExemplar>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the CSV curves and the structured JSON report.
pub fn emit_report(
    report: &Report,
    csv_path: &Path,
    report_path: &Path,
) -> Result<(), ReportError> {
    std::fs::write(csv_path, curves_to_csv(&report.curves)).map_err(io_err(csv_path))?;
    std::fs::write(report_path, report.to_json()).map_err(io_err(report_path))
}

pub fn read_report(path: &Path) -> Result<Report, ReportError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Plain-text table of exemplars.
pub fn format_exemplars(exemplars: &[ErrorExemplar]) -> String {
    if exemplars.is_empty() {
        return "no errors\n".to_string();
    }
    let mut out = String::new();
    writeln!(
        out,
        "{:<4} {:<16} {:<24} {:<24} {:>9} {:<24} {:>9} {:>9}",
        "#", "spec", "reference", "wrong match", "sim", "rejected match", "sim", "margin"
    )
    .unwrap();
    for (i, e) in exemplars.iter().enumerate() {
        writeln!(
            out,
            "{:<4} {:<16} {:<24} {:<24} {:>9.6} {:<24} {:>9.6} {:>9.6}",
            i + 1,
            e.spec.to_string(),
            e.reference,
            e.top1.view,
            e.top1.similarity,
            e.rejected.view,
            e.rejected.similarity,
            e.margin
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::Scored;
    use crate::view_model::{grid_views, synthetic_objects, Contrast};

    fn spec(s: &str) -> ExclusionSpec {
        s.parse().unwrap()
    }

    fn record(
        reference: u32,
        spec: ExclusionSpec,
        outcome: Outcome,
        top: f64,
        pmc: f64,
    ) -> MatchRecord {
        MatchRecord {
            reference,
            spec,
            top1: Some(Scored::new(
                if outcome == Outcome::Correct { 1 } else { 400 },
                top,
            )),
            best_pmc: (outcome != Outcome::Skipped).then(|| Scored::new(1, pmc)),
            outcome,
        }
    }

    #[test]
    fn counting_rates() {
        let s = spec("pw:2:none");
        let mut records = Vec::new();
        for i in 0..5 {
            records.push(record(i, s, Outcome::Correct, 0.9, 0.9));
        }
        for i in 5..8 {
            records.push(record(i, s, Outcome::CategoryCorrect, 0.9, 0.8));
        }
        for i in 8..10 {
            records.push(record(i, s, Outcome::Incorrect, 0.9, 0.8));
        }
        records.push(record(10, s, Outcome::Skipped, 0.9, 0.0));
        let curves = error_curves(&records, &[s]);
        let p = &curves[0].points[0];
        assert_eq!((p.n_qualified, p.n_skipped), (11, 1));
        assert_eq!(p.object_error, Some(0.5));
        assert_eq!(p.category_error, Some(0.2));
    }

    #[test]
    fn all_correct_and_empty_points() {
        let specs = [spec("p:3:none"), spec("p:none:none"), spec("p:1:none")];
        let records = vec![record(0, specs[0], Outcome::Correct, 1.0, 1.0)];
        let curves = error_curves(&records, &specs);
        assert_eq!(curves.len(), 1);
        let radii: Vec<Radius> = curves[0].points.iter().map(|p| p.radius).collect();
        assert_eq!(
            radii,
            vec![Radius::NoExclusion, Radius::Steps(1), Radius::Steps(3)]
        );
        assert_eq!(curves[0].points[2].object_error, Some(0.0));
        assert_eq!(curves[0].points[2].category_error, Some(0.0));
        assert_eq!(curves[0].points[0].n_qualified, 0);
        assert_eq!(curves[0].points[0].object_error, None);
    }

    #[test]
    fn csv_format_contract() {
        let curve = ErrorCurve {
            dims: "pw".parse().unwrap(),
            contrast_mode: ContrastMode::None,
            points: vec![
                CurvePoint {
                    object_error: None,
                    category_error: None,
                    ..CurvePoint::empty(Radius::NoExclusion)
                },
                CurvePoint {
                    radius: Radius::Steps(2),
                    n_qualified: 1000,
                    n_skipped: 0,
                    n_correct: 400,
                    n_category_correct: 250,
                    n_incorrect: 350,
                    object_error: Some(0.6),
                    category_error: Some(0.35),
                },
            ],
        };
        let csv = curves_to_csv(&[curve]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "pw,none,none,0,0,null,null");
        assert_eq!(lines[2], "pw,none,2,1000,0,0.600000,0.350000");

        let parsed = parse_csv(&csv).unwrap();
        assert_eq!(parsed[1].spec, spec("pw:2:none"));
        assert_eq!(parsed[1].object_error, Some(0.6));
        assert_eq!(parsed[0].category_error, None);
        assert!(parse_csv("bogus\n").is_err());
    }

    #[test]
    fn exemplar_ranking() {
        let manifest =
            Manifest::new(grid_views(&synthetic_objects(2, 1), &[Contrast::Dark])).unwrap();
        let s = spec("p:1:none");
        assert!(top_errors(&[record(0, s, Outcome::Correct, 1.0, 1.0)], &manifest, 5).is_empty());

        let records = vec![
            record(9, s, Outcome::Incorrect, 0.97, 0.90),
            record(3, s, Outcome::CategoryCorrect, 0.95, 0.90),
            record(2, s, Outcome::Incorrect, 0.99, 0.94),
            record(1, s, Outcome::Correct, 0.99, 0.99),
        ];
        let top = top_errors(&records, &manifest, 10);
        assert_eq!(top.len(), 3);
        assert_eq!(top[0].reference_row, 9);
        assert!((top[0].margin - 0.07).abs() < 1e-12);
        assert_eq!(top[0].top1.similarity, 0.97);
        assert_eq!(top[0].rejected.similarity, 0.90);
        // 0.95-0.90 and 0.99-0.94 tie only approximately in binary; check ordering by margin.
        assert!(top[1].margin >= top[2].margin);

        let tied = vec![
            record(7, s, Outcome::Incorrect, 0.5, 0.25),
            record(4, s, Outcome::Incorrect, 0.75, 0.5),
        ];
        let top = top_errors(&tied, &manifest, 2);
        assert_eq!(top[0].reference_row, 4);
        assert_eq!(top_errors(&records, &manifest, 1).len(), 1);
    }

    #[test]
    fn report_round_trip() {
        let manifest =
            Manifest::new(grid_views(&synthetic_objects(2, 1), &[Contrast::Dark])).unwrap();
        let s = spec("p:1:none");
        let records = vec![record(0, s, Outcome::Incorrect, 0.5, 0.25)];
        let report = Report {
            run: RunInfo {
                tool: "shapey".into(),
                version: "0".into(),
                metric: Metric::Correlation,
                specs: vec![s.to_string()],
                embeddings: "a.emb".into(),
                names: "a.names".into(),
                dim: 4,
                dataset: manifest.shape().clone(),
                degenerate_rows: vec![],
            },
            notes: vec![],
            curves: error_curves(&records, &[s]),
            exemplars: top_errors(&records, &manifest, 3),
        };
        let dir = tempfile::tempdir().unwrap();
        let (csv, json) = (dir.path().join("r.csv"), dir.path().join("r.json"));
        emit_report(&report, &csv, &json).unwrap();
        let back = read_report(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.curves, report.curves);
    }
}
