//! Synthetic view grids with known structure, and the brute-force oracle used
//! to check the matcher.
//!
//! Each object gets a random anchor and one random tangent per axis. The
//! embedding of a view is
//!
//! ```text
//! unit( anchor[o] + sum_{d in cvt} (frame - 5) * step_scale * tangent[o][d]
//!       + tangle * anchor[(o + 1) % n] + contrast_shift * contrast_dir * [light]
//!       + noise * gaussian )
//! ```
//!
//! "Twin" objects copy another object's tangents and place their anchor at a
//! fixed offset from it, planting a known confusion between categories.
//!
//! Randomness comes from ChaCha8 seeded with `seed`; the crate pins the exact
//! generator and distribution versions so a seed always yields the same bytes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_store::{preprocess, EmbeddingMatrix, Metric};
use crate::exclusion::{classify, is_reference, CandidateClass, ExclusionSpec};
use crate::matcher::{MatchRecord, Outcome, Scored};
use crate::view_model::{
    grid_views, synthetic_objects, Contrast, Manifest, TransformDim, ORIGIN_FRAME,
};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid synthetic parameters: {0}")]
pub struct SynthError(String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_categories: usize,
    pub instances_per_category: usize,
    pub dim: usize,
    pub seed: u64,
    /// Displacement along each tangent per frame step.
    pub step_scale: f64,
    /// Standard deviation of per-view Gaussian noise.
    pub noise: f64,
    /// Weight of the next object's anchor mixed into every view.
    pub tangle: f64,
    /// 1 for dark views only, 2 to add light copies.
    pub contrasts: usize,
    /// Length of the shared shift applied to light views.
    pub contrast_shift: f64,
    /// Orthonormal anchors (requires `dim >= n_objects`).
    pub orthogonal_anchors: bool,
    /// Instance `k` of category 1 becomes a twin of instance `k` of category 0
    /// for `k < twin_pairs`.
    pub twin_pairs: usize,
    /// Distance of a twin's anchor from its original, before renormalization.
    pub twin_offset: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_categories: 4,
            instances_per_category: 2,
            dim: 64,
            seed: 0,
            step_scale: 0.15,
            noise: 0.05,
            tangle: 0.0,
            contrasts: 1,
            contrast_shift: 0.5,
            orthogonal_anchors: false,
            twin_pairs: 0,
            twin_offset: 0.5,
        }
    }
}

impl SynthParams {
    pub fn n_objects(&self) -> usize {
        self.n_categories * self.instances_per_category
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError(m));
        if self.n_categories == 0 || self.instances_per_category == 0 {
            return fail("need at least one category and one instance".into());
        }
        if self.instances_per_category > 100 {
            return fail("at most 100 instances per category".into());
        }
        if self.dim < 8 {
            return fail(format!("dim must be at least 8, got {}", self.dim));
        }
        for (name, v) in [
            ("step_scale", self.step_scale),
            ("noise", self.noise),
            ("contrast_shift", self.contrast_shift),
            ("twin_offset", self.twin_offset),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.tangle) {
            return fail(format!("tangle must lie in [0, 1], got {}", self.tangle));
        }
        if !matches!(self.contrasts, 1 | 2) {
            return fail(format!("contrasts must be 1 or 2, got {}", self.contrasts));
        }
        if self.orthogonal_anchors && self.dim < self.n_objects() {
            return fail(format!(
                "orthogonal anchors need dim >= {} objects",
                self.n_objects()
            ));
        }
        if self.twin_pairs > 0
            && (self.n_categories < 2 || self.twin_pairs > self.instances_per_category)
        {
            return fail("twin pairs need two categories and enough instances".into());
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Generates a complete grid dataset.
pub fn generate(params: &SynthParams) -> Result<(EmbeddingMatrix, Manifest), SynthError> {
    params.validate()?;
    let dim = params.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let contrast_dir = normalized(gaussian(&mut rng, dim));

    let n_objects = params.n_objects();
    let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(n_objects);
    let mut tangents: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let mut anchor = gaussian(&mut rng, dim);
        if params.orthogonal_anchors {
            for prev in &anchors {
                let p = dot(&anchor, prev);
                anchor.iter_mut().zip(prev).for_each(|(a, b)| *a -= p * b);
            }
        }
        anchors.push(normalized(anchor));
        tangents.push(
            TransformDim::ALL
                .iter()
                .map(|_| normalized(gaussian(&mut rng, dim)))
                .collect(),
        );
    }
    for k in 0..params.twin_pairs {
        let original = k;
        let twin = params.instances_per_category + k;
        let offset = normalized(gaussian(&mut rng, dim));
        anchors[twin] = normalized(
            anchors[original]
                .iter()
                .zip(&offset)
                .map(|(a, u)| a + params.twin_offset * u)
                .collect(),
        );
        tangents[twin] = tangents[original].clone();
    }

    let objects = synthetic_objects(params.n_categories, params.instances_per_category);
    let contrasts: &[Contrast] = if params.contrasts == 2 {
        &Contrast::ALL
    } else {
        &[Contrast::Dark]
    };
    let views = grid_views(&objects, contrasts);
    let views_per_object = views.len() / n_objects;

    let mut data = Vec::with_capacity(views.len() * dim);
    for (row, view) in views.iter().enumerate() {
        let o = row / views_per_object;
        let mut v = anchors[o].clone();
        let offset = f64::from(view.frame) - f64::from(ORIGIN_FRAME);
        for d in view.cvt.dims() {
            let t = &tangents[o][d.index()];
            v.iter_mut()
                .zip(t)
                .for_each(|(x, t)| *x += offset * params.step_scale * t);
        }
        if params.tangle > 0.0 {
            let other = &anchors[(o + 1) % n_objects];
            v.iter_mut()
                .zip(other)
                .for_each(|(x, a)| *x += params.tangle * a);
        }
        if view.contrast == Contrast::Light {
            v.iter_mut()
                .zip(&contrast_dir)
                .for_each(|(x, c)| *x += params.contrast_shift * c);
        }
        if params.noise > 0.0 {
            let noise = gaussian(&mut rng, dim);
            v.iter_mut()
                .zip(noise)
                .for_each(|(x, e)| *x += params.noise * e);
        }
        data.extend(normalized(v).into_iter().map(|x| x as f32));
    }

    let manifest = Manifest::new(views).expect("generated grids are complete");
    let matrix =
        EmbeddingMatrix::new(manifest.len(), dim, data).expect("generated values are finite");
    Ok((matrix, manifest))
}

fn better(candidate: (usize, f64), current: Option<(usize, f64)>) -> bool {
    match current {
        None => true,
        Some((row, score)) => candidate.1 > score || (candidate.1 == score && candidate.0 < row),
    }
}

/// Exhaustive reference implementation of the matcher for one spec.
pub fn oracle_match(
    embeddings: &EmbeddingMatrix,
    manifest: &Manifest,
    spec: &ExclusionSpec,
    metric: Metric,
) -> Vec<MatchRecord> {
    oracle_match_grid(embeddings, manifest, std::slice::from_ref(spec), metric)
}

/// Exhaustive reference implementation over several specs, in the same
/// spec-major order as [`crate::matcher::match_all`]. Quadratic in rows and
/// linear in specs; intended for datasets of at most ~10k rows.
pub fn oracle_match_grid(
    embeddings: &EmbeddingMatrix,
    manifest: &Manifest,
    specs: &[ExclusionSpec],
    metric: Metric,
) -> Vec<MatchRecord> {
    let normalized = preprocess(embeddings, metric);
    let views = manifest.views();
    let mut per_spec: Vec<Vec<MatchRecord>> = vec![Vec::new(); specs.len()];
    let mut scores = vec![0.0f64; views.len()];

    for (r, reference) in views.iter().enumerate() {
        if !specs.iter().any(|s| is_reference(reference, s)) {
            continue;
        }
        for (c, score) in scores.iter_mut().enumerate() {
            *score = normalized.similarity(r, c);
        }
        for (s, spec) in specs.iter().enumerate() {
            if !is_reference(reference, spec) {
                continue;
            }
            let mut best_pmc: Option<(usize, f64)> = None;
            let mut best_distractor: Option<(usize, f64)> = None;
            for (c, candidate) in views.iter().enumerate() {
                let class = classify(reference, candidate, spec).expect("reference is qualified");
                let slot = match class {
                    CandidateClass::Pmc => &mut best_pmc,
                    CandidateClass::SameCategoryDistractor
                    | CandidateClass::OtherCategoryDistractor => &mut best_distractor,
                    _ => continue,
                };
                if better((c, scores[c]), *slot) {
                    *slot = Some((c, scores[c]));
                }
            }
            let top1 = match (best_pmc, best_distractor) {
                (Some(p), Some(d)) => Some(if better(d, Some(p)) { d } else { p }),
                (p, d) => p.or(d),
            };
            let outcome = match (best_pmc, top1) {
                (None, _) => Outcome::Skipped,
                (Some(p), Some(t)) if p.0 == t.0 => Outcome::Correct,
                (_, Some(t)) if views[t.0].object.category == reference.object.category => {
                    Outcome::CategoryCorrect
                }
                _ => Outcome::Incorrect,
            };
            per_spec[s].push(MatchRecord {
                reference: r as u32,
                spec: *spec,
                top1: top1.map(|(row, score)| Scored::new(row, score)),
                best_pmc: best_pmc.map(|(row, score)| Scored::new(row, score)),
                outcome,
            });
        }
    }
    per_spec.into_iter().flatten().collect()
}
