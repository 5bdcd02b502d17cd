//! Exact masked nearest-neighbour matching over a whole grid of exclusion specs.
//!
//! One similarity sweep builds, for every reference, a [`ReferenceAggregate`]:
//! the best same-object candidate in every (polarity, series, frame distance)
//! bucket plus the best distractor per polarity. Every exclusion spec is then
//! answered from those tables without touching the embeddings again.
//!
//! All maxima break score ties toward the lower manifest row, which makes the
//! result independent of scan order, tile size and worker count.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_store::NormalizedMatrix;
use crate::exclusion::{ContrastMode, ExclusionSpec, Radius};
use crate::view_model::{Contrast, Manifest, RowInfo, FRAMES_PER_SERIES, NUM_CVTS};

const BUCKETS_PER_POLARITY: usize = NUM_CVTS * FRAMES_PER_SERIES;
const BUCKETS: usize = 2 * BUCKETS_PER_POLARITY;

/// Default per-worker working-set budget used to pick a tile size.
pub const DEFAULT_TILE_BUDGET_BYTES: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("no exclusion specs given")]
    NoSpecs,
    #[error("embedding matrix has {matrix} rows but manifest has {manifest}")]
    RowMismatch { matrix: usize, manifest: usize },
    #[error("contrast mode {0} needs light views, but the manifest has none")]
    MissingLightViews(ContrastMode),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

/// A candidate row with its similarity to the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub row: u32,
    pub score: f64,
}

impl Scored {
    pub fn new(row: usize, score: f64) -> Self {
        Self {
            row: row as u32,
            score,
        }
    }

    /// Strictly better: higher score, or equal score and lower row.
    pub fn beats(&self, other: &Scored) -> bool {
        self.score > other.score || (self.score == other.score && self.row < other.row)
    }
}

/// The better of two optional candidates under the row tie-break.
pub fn best_of(a: Option<Scored>, b: Option<Scored>) -> Option<Scored> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.beats(&x) { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

fn offer(slot: &mut Option<Scored>, cand: Scored) {
    if slot.as_ref().is_none_or(|cur| cand.beats(cur)) {
        *slot = Some(cand);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    /// Top match is another view of the same object.
    Correct,
    /// Top match is a different object of the same category.
    CategoryCorrect,
    /// Top match is from a different category.
    Incorrect,
    /// No positive match candidate survived the exclusion.
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub reference: u32,
    pub spec: ExclusionSpec,
    /// Winner over PMCs and allowed distractors; absent only if both are empty.
    pub top1: Option<Scored>,
    pub best_pmc: Option<Scored>,
    pub outcome: Outcome,
}

impl MatchRecord {
    pub fn is_error(&self) -> bool {
        matches!(self.outcome, Outcome::CategoryCorrect | Outcome::Incorrect)
    }
}

/// Result of evaluating one spec against one aggregate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub top1: Option<Scored>,
    pub best_pmc: Option<Scored>,
    pub outcome: Outcome,
}

/// Per-reference running maxima over every candidate seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceAggregate {
    reference: u32,
    info: RowInfo,
    /// Indexed by `polarity * 341 + cvt * 11 + frame distance`.
    same_object: Vec<Option<Scored>>,
    best_distractor: [Option<Scored>; 2],
    best_same_category: [Option<Scored>; 2],
}

impl ReferenceAggregate {
    pub fn new(reference: usize, info: RowInfo) -> Self {
        Self {
            reference: reference as u32,
            info,
            same_object: vec![None; BUCKETS],
            best_distractor: [None; 2],
            best_same_category: [None; 2],
        }
    }

    pub fn reference(&self) -> usize {
        self.reference as usize
    }

    fn bucket(polarity: Contrast, cvt_index: usize, distance: u8) -> usize {
        polarity.index() * BUCKETS_PER_POLARITY + cvt_index * FRAMES_PER_SERIES + distance as usize
    }

    /// Best same-object candidate in one bucket.
    pub fn same_object_best(
        &self,
        polarity: Contrast,
        cvt_index: usize,
        distance: u8,
    ) -> Option<Scored> {
        self.same_object[Self::bucket(polarity, cvt_index, distance)]
    }

    pub fn best_distractor(&self, polarity: Contrast) -> Option<Scored> {
        self.best_distractor[polarity.index()]
    }

    pub fn best_same_category_distractor(&self, polarity: Contrast) -> Option<Scored> {
        self.best_same_category[polarity.index()]
    }

    /// Folds one candidate into the tables. The reference itself is ignored.
    pub fn observe(&mut self, row: usize, info: &RowInfo, score: f64) {
        if row == self.reference as usize {
            return;
        }
        let cand = Scored::new(row, score);
        if info.object == self.info.object {
            let b = Self::bucket(
                info.contrast,
                info.cvt.index(),
                info.frame.abs_diff(self.info.frame),
            );
            offer(&mut self.same_object[b], cand);
        } else {
            let p = info.contrast.index();
            offer(&mut self.best_distractor[p], cand);
            if info.category == self.info.category {
                offer(&mut self.best_same_category[p], cand);
            }
        }
    }

    /// Combines two aggregates of the same reference built over disjoint candidate ranges.
    pub fn merge(&mut self, other: &ReferenceAggregate) {
        assert_eq!(
            self.reference, other.reference,
            "merging aggregates of different references"
        );
        for (a, b) in self.same_object.iter_mut().zip(&other.same_object) {
            *a = best_of(*a, *b);
        }
        for p in 0..2 {
            self.best_distractor[p] = best_of(self.best_distractor[p], other.best_distractor[p]);
            self.best_same_category[p] =
                best_of(self.best_same_category[p], other.best_same_category[p]);
        }
    }

    /// Precomputes suffix maxima so each spec costs O(number of series).
    pub fn summarize(&self) -> AggregateSummary {
        let mut suffix = vec![None; 2 * NUM_CVTS * (FRAMES_PER_SERIES + 1)];
        for p in Contrast::ALL {
            for c in 0..NUM_CVTS {
                let base = (p.index() * NUM_CVTS + c) * (FRAMES_PER_SERIES + 1);
                for d in (0..FRAMES_PER_SERIES).rev() {
                    suffix[base + d] =
                        best_of(suffix[base + d + 1], self.same_object_best(p, c, d as u8));
                }
            }
        }
        AggregateSummary {
            reference_category_distractor: self.best_same_category,
            best_distractor: self.best_distractor,
            suffix,
        }
    }
}

/// Read-only view of an aggregate prepared for answering many specs.
#[derive(Debug, Clone)]
pub struct AggregateSummary {
    /// `suffix[(p * 31 + c) * 12 + d]` is the best bucket entry at distance `>= d`.
    suffix: Vec<Option<Scored>>,
    best_distractor: [Option<Scored>; 2],
    reference_category_distractor: [Option<Scored>; 2],
}

impl AggregateSummary {
    fn at_least(&self, p: Contrast, cvt_index: usize, min_distance: usize) -> Option<Scored> {
        if min_distance > FRAMES_PER_SERIES {
            return None;
        }
        self.suffix[(p.index() * NUM_CVTS + cvt_index) * (FRAMES_PER_SERIES + 1) + min_distance]
    }

    pub fn evaluate(&self, spec: &ExclusionSpec) -> Evaluation {
        let p = spec.contrast_mode.pmc_polarity();
        let min_distance = match spec.radius {
            Radius::NoExclusion => 0,
            Radius::Steps(r) => r as usize + 1,
        };
        let mut best_pmc = None;
        for c in 0..NUM_CVTS {
            let mask = (c + 1) as u8;
            let admitted = match spec.radius {
                Radius::NoExclusion => true,
                Radius::Steps(_) => mask & spec.dims.mask() == spec.dims.mask(),
            };
            if admitted {
                best_pmc = best_of(best_pmc, self.at_least(p, c, min_distance));
            }
        }

        let dp = spec.contrast_mode.distractor_polarity().index();
        let distractor = self.best_distractor[dp];
        let top1 = best_of(best_pmc, distractor);
        let outcome = match (best_pmc, top1) {
            (None, _) => Outcome::Skipped,
            (Some(pmc), Some(top)) if pmc.row == top.row => Outcome::Correct,
            (_, Some(top))
                if self.reference_category_distractor[dp].is_some_and(|s| s.row == top.row) =>
            {
                Outcome::CategoryCorrect
            }
            _ => Outcome::Incorrect,
        };
        Evaluation {
            top1,
            best_pmc,
            outcome,
        }
    }
}

/// Answers one spec from a completed aggregate.
pub fn outcome_of(aggregate: &ReferenceAggregate, spec: &ExclusionSpec) -> Evaluation {
    aggregate.summarize().evaluate(spec)
}

/// Folds the candidate rows `candidates` into every aggregate of a reference block.
/// `scratch` must hold at least `candidates.len()` entries.
pub fn similarity_row_pass(
    normalized: &NormalizedMatrix,
    rows: &[RowInfo],
    aggregates: &mut [ReferenceAggregate],
    candidates: Range<usize>,
    scratch: &mut [f64],
) {
    let scores = &mut scratch[..candidates.len()];
    for agg in aggregates.iter_mut() {
        normalized.similarities_into(agg.reference(), candidates.start, scores);
        for (k, score) in scores.iter().enumerate() {
            let row = candidates.start + k;
            agg.observe(row, &rows[row], *score);
        }
    }
}

/// True if `info` may serve as reference for `spec` (see [`crate::exclusion::is_reference`]).
fn qualifies(info: &RowInfo, spec: &ExclusionSpec) -> bool {
    info.contrast == Contrast::Dark
        && match spec.radius {
            Radius::NoExclusion => true,
            Radius::Steps(_) => info.cvt.is_superset_of(spec.dims),
        }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchOptions {
    /// Worker threads; 0 picks the rayon default.
    pub workers: usize,
    /// Rows per reference block and per candidate block; 0 picks from the
    /// working-set budget.
    pub tile_size: usize,
}

/// Tile size keeping one worker's candidate block and aggregates within `budget` bytes.
pub fn auto_tile_size(dim: usize, budget: usize) -> usize {
    let per_row = dim * std::mem::size_of::<f32>()
        + BUCKETS * std::mem::size_of::<Option<Scored>>()
        + std::mem::size_of::<f64>();
    (budget / per_row).clamp(1, 4096)
}

/// Specs whose qualified reference set is empty for this manifest.
pub fn specs_without_references(
    manifest: &Manifest,
    specs: &[ExclusionSpec],
) -> Vec<ExclusionSpec> {
    specs
        .iter()
        .filter(|s| !manifest.row_info().iter().any(|info| qualifies(info, s)))
        .copied()
        .collect()
}

/// Matches every qualified reference under every spec. Records come out
/// spec-major in the order of `specs`, references ascending within a spec.
pub fn match_all(
    normalized: &NormalizedMatrix,
    manifest: &Manifest,
    specs: &[ExclusionSpec],
    options: MatchOptions,
) -> Result<Vec<MatchRecord>, MatchError> {
    if specs.is_empty() {
        return Err(MatchError::NoSpecs);
    }
    if normalized.n_rows() != manifest.len() {
        return Err(MatchError::RowMismatch {
            matrix: normalized.n_rows(),
            manifest: manifest.len(),
        });
    }
    if let Some(spec) = specs.iter().find(|s| s.contrast_mode != ContrastMode::None) {
        if !manifest.has_contrast(Contrast::Light) {
            return Err(MatchError::MissingLightViews(spec.contrast_mode));
        }
    }

    let rows = manifest.row_info();
    let references: Vec<usize> = (0..rows.len())
        .filter(|&r| specs.iter().any(|s| qualifies(&rows[r], s)))
        .collect();
    let tile = match options.tile_size {
        0 => auto_tile_size(normalized.dim(), DEFAULT_TILE_BUDGET_BYTES),
        t => t,
    };

    let run = || -> Vec<Vec<Vec<MatchRecord>>> {
        references
            .par_chunks(tile)
            .map(|block| match_block(normalized, rows, block, specs, tile))
            .collect()
    };
    let per_block = if options.workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| MatchError::Pool(e.to_string()))?
            .install(run)
    };

    let total = per_block.iter().flatten().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    for s in 0..specs.len() {
        for block in &per_block {
            out.extend_from_slice(&block[s]);
        }
    }
    Ok(out)
}

fn match_block(
    normalized: &NormalizedMatrix,
    rows: &[RowInfo],
    block: &[usize],
    specs: &[ExclusionSpec],
    tile: usize,
) -> Vec<Vec<MatchRecord>> {
    let mut aggregates: Vec<ReferenceAggregate> = block
        .iter()
        .map(|&r| ReferenceAggregate::new(r, rows[r]))
        .collect();
    let mut scratch = vec![0.0; tile];
    let n = rows.len();
    let mut start = 0;
    while start < n {
        let end = (start + tile).min(n);
        similarity_row_pass(normalized, rows, &mut aggregates, start..end, &mut scratch);
        start = end;
    }

    let mut out: Vec<Vec<MatchRecord>> = vec![Vec::new(); specs.len()];
    for agg in &aggregates {
        let summary = agg.summarize();
        let info = &rows[agg.reference()];
        for (s, spec) in specs.iter().enumerate() {
            if !qualifies(info, spec) {
                continue;
            }
            let e = summary.evaluate(spec);
            out[s].push(MatchRecord {
                reference: agg.reference,
                spec: *spec,
                top1: e.top1,
                best_pmc: e.best_pmc,
                outcome: e.outcome,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_store::{preprocess, EmbeddingMatrix, Metric};
    use crate::view_model::{grid_views, synthetic_objects, Cvt};

    fn info(object: u32, category: u32, cvt: &str, frame: u8, contrast: Contrast) -> RowInfo {
        RowInfo {
            object,
            category,
            cvt: cvt.parse().unwrap(),
            frame,
            contrast,
        }
    }

    fn spec(s: &str) -> ExclusionSpec {
        s.parse().unwrap()
    }

    fn aggregate_with(
        pmc: f64,
        same_cat: Option<f64>,
        other_cat: Option<f64>,
    ) -> ReferenceAggregate {
        let mut agg = ReferenceAggregate::new(0, info(0, 0, "p", 5, Contrast::Dark));
        agg.observe(1, &info(0, 0, "p", 0, Contrast::Dark), pmc);
        if let Some(s) = same_cat {
            agg.observe(2, &info(1, 0, "x", 3, Contrast::Dark), s);
        }
        if let Some(s) = other_cat {
            agg.observe(3, &info(2, 1, "y", 3, Contrast::Dark), s);
        }
        agg
    }

    #[test]
    fn outcome_examples() {
        let s = spec("p:2:none");
        let e = outcome_of(&aggregate_with(0.93, None, Some(0.91)), &s);
        assert_eq!(e.outcome, Outcome::Correct);
        assert_eq!(e.top1.unwrap().row, 1);

        let e = outcome_of(&aggregate_with(0.90, Some(0.95), Some(0.94)), &s);
        assert_eq!(e.outcome, Outcome::CategoryCorrect);
        assert_eq!(e.top1.unwrap().row, 2);
        assert_eq!(e.best_pmc.unwrap().score, 0.90);

        let e = outcome_of(&aggregate_with(0.90, Some(0.94), Some(0.95)), &s);
        assert_eq!(e.outcome, Outcome::Incorrect);

        // Exact tie: lower row (the PMC at row 1) wins.
        let e = outcome_of(&aggregate_with(0.9, None, Some(0.9)), &s);
        assert_eq!(e.outcome, Outcome::Correct);
        let mut agg = ReferenceAggregate::new(5, info(0, 0, "p", 5, Contrast::Dark));
        agg.observe(9, &info(0, 0, "p", 0, Contrast::Dark), 0.5);
        agg.observe(4, &info(2, 1, "p", 0, Contrast::Dark), 0.5);
        let e = outcome_of(&agg, &s);
        assert_eq!(e.outcome, Outcome::Incorrect);
        assert_eq!(e.top1.unwrap().row, 4);
    }

    #[test]
    fn skipped_when_no_pmc_survives() {
        let agg = aggregate_with(0.99, None, Some(0.1));
        // The only PMC is 5 frames away.
        let e = outcome_of(&agg, &spec("p:5:none"));
        assert_eq!(e.outcome, Outcome::Skipped);
        assert_eq!(e.best_pmc, None);
        assert_eq!(e.top1.unwrap().row, 3);
        assert_eq!(
            outcome_of(&agg, &spec("p:4:none")).outcome,
            Outcome::Correct
        );
    }

    #[test]
    fn self_row_is_ignored() {
        let mut agg = ReferenceAggregate::new(0, info(0, 0, "p", 5, Contrast::Dark));
        agg.observe(0, &info(0, 0, "p", 5, Contrast::Dark), 1.0);
        assert_eq!(
            outcome_of(&agg, &spec("p:none:none")).outcome,
            Outcome::Skipped
        );
    }

    #[test]
    fn merge_equals_single_pass() {
        let mut whole = ReferenceAggregate::new(0, info(0, 0, "pw", 7, Contrast::Dark));
        let mut left = whole.clone();
        let mut right = whole.clone();
        let cands = [
            (1, info(0, 0, "xpw", 3, Contrast::Dark), 0.4),
            (2, info(0, 0, "xpw", 3, Contrast::Light), 0.6),
            (3, info(1, 0, "x", 1, Contrast::Dark), 0.7),
            (4, info(2, 1, "x", 1, Contrast::Dark), 0.7),
            (5, info(0, 0, "xpw", 3, Contrast::Dark), 0.4),
        ];
        for (i, (row, inf, s)) in cands.iter().enumerate() {
            whole.observe(*row, inf, *s);
            if i < 3 {
                left.observe(*row, inf, *s)
            } else {
                right.observe(*row, inf, *s)
            }
        }
        right.merge(&left);
        assert_eq!(right, whole);
        assert_eq!(whole.best_distractor(Contrast::Dark).unwrap().row, 3);
        assert_eq!(
            whole
                .same_object_best(Contrast::Dark, "xpw".parse::<Cvt>().unwrap().index(), 4)
                .unwrap()
                .row,
            1
        );
    }

    #[test]
    fn single_object_is_always_correct() {
        let manifest =
            Manifest::new(grid_views(&synthetic_objects(1, 1), &[Contrast::Dark])).unwrap();
        let data: Vec<f32> = (0..manifest.len() * 8)
            .map(|i| ((i * 7919) % 113) as f32)
            .collect();
        let m = preprocess(
            &EmbeddingMatrix::new(manifest.len(), 8, data).unwrap(),
            Metric::Correlation,
        );
        let specs = [spec("pw:2:none"), spec("x:0:none"), spec("p:none:none")];
        let records = match_all(&m, &manifest, &specs, MatchOptions::default()).unwrap();
        assert!(!records.is_empty());
        assert!(records.iter().all(|r| r.outcome == Outcome::Correct));
    }

    #[test]
    fn orthogonal_objects_never_fail() {
        let manifest =
            Manifest::new(grid_views(&synthetic_objects(2, 1), &[Contrast::Dark])).unwrap();
        let half = manifest.len() / 2;
        let rows: Vec<Vec<f32>> = (0..manifest.len())
            .map(|r| {
                if r < half {
                    vec![1.0, 0.0]
                } else {
                    vec![0.0, 1.0]
                }
            })
            .collect();
        let m = preprocess(&EmbeddingMatrix::from_rows(&rows).unwrap(), Metric::Cosine);
        let specs: Vec<ExclusionSpec> = (0..=10).map(|r| spec(&format!("p:{r}:none"))).collect();
        let records = match_all(&m, &manifest, &specs, MatchOptions::default()).unwrap();
        assert!(records
            .iter()
            .all(|r| r.outcome != Outcome::Incorrect && r.outcome != Outcome::CategoryCorrect));
        assert!(records.iter().any(|r| r.outcome == Outcome::Correct));
    }

    #[test]
    fn contrast_modes_need_light_views() {
        let manifest =
            Manifest::new(grid_views(&synthetic_objects(1, 1), &[Contrast::Dark])).unwrap();
        let m = preprocess(
            &EmbeddingMatrix::new(manifest.len(), 2, vec![1.0; manifest.len() * 2]).unwrap(),
            Metric::Cosine,
        );
        assert_eq!(
            match_all(
                &m,
                &manifest,
                &[spec("pr:none:soft")],
                MatchOptions::default()
            ),
            Err(MatchError::MissingLightViews(ContrastMode::Soft))
        );
        assert_eq!(
            match_all(&m, &manifest, &[], MatchOptions::default()),
            Err(MatchError::NoSpecs)
        );
    }

    #[test]
    fn auto_tile_respects_budget() {
        let t = auto_tile_size(2048, DEFAULT_TILE_BUDGET_BYTES);
        assert!(t >= 1 && t * (2048 * 4) <= DEFAULT_TILE_BUDGET_BYTES);
        assert_eq!(auto_tile_size(1 << 30, 1024), 1);
    }
}
