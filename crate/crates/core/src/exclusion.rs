//! Which views may serve as references, positive match candidates (PMCs) or
//! distractors under a given exclusion.
//!
//! A reference is always an original (dark) view. With a numeric radius `r`
//! and exclusion set `E`, the reference must lie in a series containing `E`,
//! and a same-object view is a PMC only if its series also contains `E` and it
//! sits at least `r + 1` frames away. Views of other objects are never subject
//! to viewpoint exclusion; the contrast mode alone decides their polarity.
//!
//! Text form: `<dims>:<radius|none>:<none|hard|soft>`, e.g. `pw:2:none`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::view_model::{Contrast, Cvt, Manifest, ViewId, MAX_FRAME_DISTANCE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExclusionError {
    #[error("invalid exclusion spec {0:?}: expected <dims>:<radius|none>:<none|hard|soft>")]
    Syntax(String),
    #[error("invalid exclusion dims {0:?}: {1}")]
    Dims(String, String),
    #[error("invalid radius {0:?}: expected none or an integer in 0..=10")]
    Radius(String),
    #[error("invalid contrast mode {0:?}: expected none, hard or soft")]
    Mode(String),
    #[error("view {reference} is not a qualified reference for {spec}")]
    UnqualifiedReference {
        reference: String,
        spec: ExclusionSpec,
    },
}

/// Exclusion radius in frame steps, or no viewpoint exclusion at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Radius {
    NoExclusion,
    Steps(u8),
}

impl Radius {
    pub fn steps(r: u8) -> Option<Self> {
        (r <= MAX_FRAME_DISTANCE).then_some(Self::Steps(r))
    }

    pub fn as_steps(self) -> Option<u8> {
        match self {
            Self::Steps(r) => Some(r),
            Self::NoExclusion => None,
        }
    }
}

impl fmt::Display for Radius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoExclusion => f.write_str("none"),
            Self::Steps(r) => write!(f, "{r}"),
        }
    }
}

impl FromStr for Radius {
    type Err = ExclusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "none" {
            return Ok(Self::NoExclusion);
        }
        s.parse::<u8>()
            .ok()
            .and_then(Self::steps)
            .ok_or_else(|| ExclusionError::Radius(s.to_string()))
    }
}

impl Serialize for Radius {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::NoExclusion => serializer.serialize_str("none"),
            Self::Steps(r) => serializer.serialize_u8(*r),
        }
    }
}

impl<'de> Deserialize<'de> for Radius {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Steps(u8),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Steps(r) => {
                Radius::steps(r).ok_or_else(|| serde::de::Error::custom("radius out of range"))
            }
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum ContrastMode {
    /// Everything matched in the original dark rendering.
    #[default]
    None,
    /// Same-object candidates must be light; distractors stay dark.
    Hard,
    /// Every candidate must be light.
    Soft,
}

impl ContrastMode {
    pub const ALL: [ContrastMode; 3] = [Self::None, Self::Hard, Self::Soft];

    /// Polarity a same-object candidate needs to be a PMC.
    pub fn pmc_polarity(self) -> Contrast {
        match self {
            Self::None => Contrast::Dark,
            Self::Hard | Self::Soft => Contrast::Light,
        }
    }

    /// Polarity a different-object candidate needs to be an eligible distractor.
    pub fn distractor_polarity(self) -> Contrast {
        match self {
            Self::None | Self::Hard => Contrast::Dark,
            Self::Soft => Contrast::Light,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Hard => "hard",
            Self::Soft => "soft",
        }
    }
}

impl fmt::Display for ContrastMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContrastMode {
    type Err = ExclusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "hard" => Ok(Self::Hard),
            "soft" => Ok(Self::Soft),
            other => Err(ExclusionError::Mode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExclusionSpec {
    pub dims: Cvt,
    pub radius: Radius,
    pub contrast_mode: ContrastMode,
}

impl ExclusionSpec {
    pub fn new(dims: Cvt, radius: Radius, contrast_mode: ContrastMode) -> Self {
        Self {
            dims,
            radius,
            contrast_mode,
        }
    }
}

impl fmt::Display for ExclusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.dims, self.radius, self.contrast_mode)
    }
}

impl FromStr for ExclusionSpec {
    type Err = ExclusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [dims, radius, mode] = parts[..] else {
            return Err(ExclusionError::Syntax(s.to_string()));
        };
        let dims = dims
            .parse::<Cvt>()
            .map_err(|e| ExclusionError::Dims(dims.to_string(), e.to_string()))?;
        Ok(Self::new(dims, radius.parse()?, mode.parse()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CandidateClass {
    SelfView,
    /// Same object, removed by the viewpoint exclusion.
    ExcludedPmc,
    Pmc,
    SameCategoryDistractor,
    OtherCategoryDistractor,
    /// Wrong polarity for its role under the contrast mode.
    ContrastExcluded,
}

impl CandidateClass {
    pub fn is_distractor(self) -> bool {
        matches!(
            self,
            Self::SameCategoryDistractor | Self::OtherCategoryDistractor
        )
    }

    /// True for classes that take part in the top-1 competition.
    pub fn is_eligible(self) -> bool {
        self == Self::Pmc || self.is_distractor()
    }
}

pub fn is_reference(view: &ViewId, spec: &ExclusionSpec) -> bool {
    view.contrast == Contrast::Dark
        && match spec.radius {
            Radius::NoExclusion => true,
            Radius::Steps(_) => view.cvt.is_superset_of(spec.dims),
        }
}

pub fn classify(
    reference: &ViewId,
    candidate: &ViewId,
    spec: &ExclusionSpec,
) -> Result<CandidateClass, ExclusionError> {
    if !is_reference(reference, spec) {
        return Err(ExclusionError::UnqualifiedReference {
            reference: reference.to_string(),
            spec: *spec,
        });
    }
    Ok(classify_qualified(reference, candidate, spec))
}

fn classify_qualified(
    reference: &ViewId,
    candidate: &ViewId,
    spec: &ExclusionSpec,
) -> CandidateClass {
    if candidate.object != reference.object {
        if candidate.contrast != spec.contrast_mode.distractor_polarity() {
            CandidateClass::ContrastExcluded
        } else if candidate.object.category == reference.object.category {
            CandidateClass::SameCategoryDistractor
        } else {
            CandidateClass::OtherCategoryDistractor
        }
    } else if candidate == reference {
        CandidateClass::SelfView
    } else if candidate.contrast != spec.contrast_mode.pmc_polarity() {
        CandidateClass::ContrastExcluded
    } else {
        match spec.radius {
            Radius::NoExclusion => CandidateClass::Pmc,
            Radius::Steps(r) => {
                if candidate.cvt.is_superset_of(spec.dims)
                    && reference.frame_distance(candidate) > r
                {
                    CandidateClass::Pmc
                } else {
                    CandidateClass::ExcludedPmc
                }
            }
        }
    }
}

/// Rows classified [`CandidateClass::Pmc`], ascending.
pub fn pmc_row_set(
    reference: &ViewId,
    manifest: &Manifest,
    spec: &ExclusionSpec,
) -> Result<Vec<usize>, ExclusionError> {
    rows_where(reference, manifest, spec, |c| c == CandidateClass::Pmc)
}

/// Rows classified as either kind of distractor, ascending.
pub fn distractor_row_set(
    reference: &ViewId,
    manifest: &Manifest,
    spec: &ExclusionSpec,
) -> Result<Vec<usize>, ExclusionError> {
    rows_where(reference, manifest, spec, CandidateClass::is_distractor)
}

fn rows_where(
    reference: &ViewId,
    manifest: &Manifest,
    spec: &ExclusionSpec,
    keep: impl Fn(CandidateClass) -> bool,
) -> Result<Vec<usize>, ExclusionError> {
    let mut rows = Vec::new();
    for (row, candidate) in manifest.views().iter().enumerate() {
        if keep(classify(reference, candidate, spec)?) {
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Every spec over the given dims, radii and modes, in dims-major order.
pub fn spec_grid(dims: &[Cvt], radii: &[Radius], modes: &[ContrastMode]) -> Vec<ExclusionSpec> {
    let mut out = Vec::with_capacity(dims.len() * radii.len() * modes.len());
    for &d in dims {
        for &m in modes {
            for &r in radii {
                out.push(ExclusionSpec::new(d, r, m));
            }
        }
    }
    out
}

/// Parses a dims list: `all31`, or comma-separated sets such as `p,pw,xpw`.
pub fn parse_dims_list(s: &str) -> Result<Vec<Cvt>, ExclusionError> {
    if s == "all31" {
        return Ok(crate::view_model::enumerate_cvts());
    }
    s.split(',')
        .map(|d| {
            d.parse::<Cvt>()
                .map_err(|e| ExclusionError::Dims(d.to_string(), e.to_string()))
        })
        .collect()
}

/// Parses radii: comma-separated `none`, integers and inclusive `a..b` ranges,
/// e.g. `none,0..5`. Duplicates are dropped, first occurrence kept.
pub fn parse_radii(s: &str) -> Result<Vec<Radius>, ExclusionError> {
    let mut out = Vec::new();
    for item in s.split(',') {
        let expanded: Vec<Radius> = match item.split_once("..") {
            Some((a, b)) => {
                let lo = a.parse::<Radius>()?.as_steps();
                let hi = b.parse::<Radius>()?.as_steps();
                match (lo, hi) {
                    (Some(lo), Some(hi)) if lo <= hi => (lo..=hi).map(Radius::Steps).collect(),
                    _ => return Err(ExclusionError::Radius(item.to_string())),
                }
            }
            None => vec![item.parse()?],
        };
        for r in expanded {
            if !out.contains(&r) {
                out.push(r);
            }
        }
    }
    Ok(out)
}

/// Parses comma-separated contrast modes.
pub fn parse_modes(s: &str) -> Result<Vec<ContrastMode>, ExclusionError> {
    let mut out = Vec::new();
    for m in s.split(',') {
        let m = m.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}
