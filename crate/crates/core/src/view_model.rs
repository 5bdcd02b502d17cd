//! Geometry of the view grid.
//!
//! Every object is rendered along 31 series, one per nonempty combination of
//! the five rigid transformation axes (a [`Cvt`]). Each series has 11 frames
//! (`0..=10`) centred on the origin frame 5; every step moves the object
//! simultaneously along all axes of the series.
//!
//! Views are named `<category>.<instance>.<cvt>.<frame>.<d|l>`, for example
//! `chair.03.xpw.07.d`. Instances and frames are always two digits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of frames in one series.
pub const FRAMES_PER_SERIES: usize = 11;
/// Index of the untransformed view inside every series.
pub const ORIGIN_FRAME: u8 = 5;
/// Number of distinct nonempty axis combinations.
pub const NUM_CVTS: usize = 31;
/// Largest frame-index distance between two views of one series.
pub const MAX_FRAME_DISTANCE: u8 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ViewNameError {
    #[error("expected 5 dot-separated segments, found {0}")]
    SegmentCount(usize),
    #[error("invalid category {0:?} (expected [a-z0-9_]+)")]
    Category(String),
    #[error("invalid instance {0:?} (expected two digits)")]
    Instance(String),
    #[error("instance {instance} exceeds the maximum of {max}")]
    InstanceOutOfBounds { instance: u8, max: u8 },
    #[error("empty transformation set")]
    EmptyCvt,
    #[error("unknown transformation axis {0:?}")]
    UnknownDim(char),
    #[error("transformation set {0:?} is not in canonical x,y,p,r,w order")]
    NonCanonicalCvt(String),
    #[error("invalid frame {0:?} (expected 00..10)")]
    Frame(String),
    #[error("unknown contrast code {0:?} (expected d or l)")]
    Contrast(String),
}

/// One rigid transformation axis. The declaration order is the canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransformDim {
    /// Horizontal shift.
    X,
    /// Vertical shift.
    Y,
    /// Pitch (depth rotation about the horizontal axis).
    P,
    /// Roll (image-plane rotation).
    R,
    /// Yaw (depth rotation about the vertical axis).
    W,
}

impl TransformDim {
    pub const ALL: [TransformDim; 5] = [Self::X, Self::Y, Self::P, Self::R, Self::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> char {
        match self {
            Self::X => 'x',
            Self::Y => 'y',
            Self::P => 'p',
            Self::R => 'r',
            Self::W => 'w',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        Some(match c {
            'x' => Self::X,
            'y' => Self::Y,
            'p' => Self::P,
            'r' => Self::R,
            'w' => Self::W,
            _ => return None,
        })
    }

    /// Shift axes are measured in image-width fractions, rotations in degrees.
    pub fn is_shift(self) -> bool {
        matches!(self, Self::X | Self::Y)
    }

    fn bit(self) -> u8 {
        1 << self.index()
    }
}

/// A nonempty set of transformation axes, stored as a 5-bit mask in `1..=31`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cvt(u8);

impl Cvt {
    pub fn from_mask(mask: u8) -> Option<Self> {
        (1..=31).contains(&mask).then_some(Self(mask))
    }

    pub fn from_dims(dims: impl IntoIterator<Item = TransformDim>) -> Option<Self> {
        Self::from_mask(dims.into_iter().fold(0, |m, d| m | d.bit()))
    }

    /// The full five-axis set `xyprw`.
    pub fn all_dims() -> Self {
        Self(31)
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    /// Dense index in `0..31`, used for per-series tables.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Option<Self> {
        u8::try_from(index + 1).ok().and_then(Self::from_mask)
    }

    pub fn contains(self, dim: TransformDim) -> bool {
        self.0 & dim.bit() != 0
    }

    pub fn is_superset_of(self, other: Cvt) -> bool {
        self.0 & other.0 == other.0
    }

    // never empty, so no is_empty
    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn dims(self) -> impl Iterator<Item = TransformDim> {
        TransformDim::ALL
            .into_iter()
            .filter(move |d| self.contains(*d))
    }

    fn sort_key(self) -> (usize, Vec<TransformDim>) {
        (self.len(), self.dims().collect())
    }
}

impl fmt::Display for Cvt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.dims() {
            write!(f, "{}", d.code())?;
        }
        Ok(())
    }
}

impl fmt::Debug for Cvt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cvt({self})")
    }
}

impl FromStr for Cvt {
    type Err = ViewNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(ViewNameError::EmptyCvt);
        }
        let mut mask = 0u8;
        let mut last: Option<TransformDim> = None;
        for c in s.chars() {
            let dim = TransformDim::from_code(c).ok_or(ViewNameError::UnknownDim(c))?;
            if last.is_some_and(|prev| prev >= dim) {
                return Err(ViewNameError::NonCanonicalCvt(s.to_string()));
            }
            last = Some(dim);
            mask |= dim.bit();
        }
        Ok(Self(mask))
    }
}

impl Serialize for Cvt {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cvt {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All 31 series, ordered by cardinality and then lexicographically in
/// canonical axis order (`x, y, p, r, w, xy, xp, ...`).
pub fn enumerate_cvts() -> Vec<Cvt> {
    let mut cvts: Vec<Cvt> = (1..=31).map(Cvt).collect();
    cvts.sort_by_key(|c| c.sort_key());
    cvts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Contrast {
    /// Original rendering: grey object on a black background.
    Dark,
    /// Contrast-reversed copy on a light background.
    Light,
}

impl Contrast {
    pub const ALL: [Contrast; 2] = [Contrast::Dark, Contrast::Light];

    pub fn code(self) -> char {
        match self {
            Self::Dark => 'd',
            Self::Light => 'l',
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectId {
    pub category: String,
    pub instance: u8,
}

impl ObjectId {
    pub fn new(category: impl Into<String>, instance: u8) -> Result<Self, ViewNameError> {
        let category = category.into();
        if !is_valid_category(&category) {
            return Err(ViewNameError::Category(category));
        }
        if instance > 99 {
            return Err(ViewNameError::InstanceOutOfBounds { instance, max: 99 });
        }
        Ok(Self { category, instance })
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.category, self.instance)
    }
}

fn is_valid_category(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

fn parse_two_digits(s: &str) -> Option<u8> {
    (s.len() == 2 && s.bytes().all(|b| b.is_ascii_digit()))
        .then(|| s.parse().ok())
        .flatten()
}

/// Identity of a single rendered view.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViewId {
    pub object: ObjectId,
    pub cvt: Cvt,
    pub frame: u8,
    pub contrast: Contrast,
}

impl ViewId {
    pub fn new(object: ObjectId, cvt: Cvt, frame: u8, contrast: Contrast) -> Self {
        assert!(frame <= MAX_FRAME_DISTANCE, "frame {frame} outside 0..=10");
        Self {
            object,
            cvt,
            frame,
            contrast,
        }
    }

    pub fn frame_distance(&self, other: &ViewId) -> u8 {
        self.frame.abs_diff(other.frame)
    }

    /// Same object, series and frame with the other polarity.
    pub fn contrast_twin(&self) -> ViewId {
        let contrast = match self.contrast {
            Contrast::Dark => Contrast::Light,
            Contrast::Light => Contrast::Dark,
        };
        ViewId {
            contrast,
            ..self.clone()
        }
    }
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{}.{:02}.{}",
            self.object,
            self.cvt,
            self.frame,
            self.contrast.code()
        )
    }
}

impl FromStr for ViewId {
    type Err = ViewNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_view_name(s)
    }
}

/// Parses a canonical view name. Formatting the result reproduces `name` exactly.
pub fn parse_view_name(name: &str) -> Result<ViewId, ViewNameError> {
    let parts: Vec<&str> = name.split('.').collect();
    let [category, instance, cvt, frame, contrast] = parts[..] else {
        return Err(ViewNameError::SegmentCount(parts.len()));
    };
    if !is_valid_category(category) {
        return Err(ViewNameError::Category(category.to_string()));
    }
    let instance =
        parse_two_digits(instance).ok_or_else(|| ViewNameError::Instance(instance.to_string()))?;
    let cvt: Cvt = cvt.parse()?;
    let frame = parse_two_digits(frame)
        .filter(|f| *f <= MAX_FRAME_DISTANCE)
        .ok_or_else(|| ViewNameError::Frame(frame.to_string()))?;
    let contrast = match contrast {
        "d" => Contrast::Dark,
        "l" => Contrast::Light,
        other => return Err(ViewNameError::Contrast(other.to_string())),
    };
    Ok(ViewId {
        object: ObjectId {
            category: category.to_string(),
            instance,
        },
        cvt,
        frame,
        contrast,
    })
}

/// Physical size of one viewpoint step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    /// Fraction of the image width per shift step.
    pub shift_step: f64,
    /// Degrees per rotation step.
    pub rotation_step: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        Self {
            shift_step: 1.0 / 30.0,
            rotation_step: 9.0,
        }
    }
}

impl StepSizes {
    pub fn new(shift_step: f64, rotation_step: f64) -> Option<Self> {
        (shift_step > 0.0 && rotation_step > 0.0).then_some(Self {
            shift_step,
            rotation_step,
        })
    }

    pub fn step_for(&self, dim: TransformDim) -> f64 {
        if dim.is_shift() {
            self.shift_step
        } else {
            self.rotation_step
        }
    }
}

/// Displacement of a view from the origin, indexed by [`TransformDim::index`].
/// Shift components are image-width fractions, rotation components degrees.
pub fn displacement(view: &ViewId, steps: &StepSizes) -> [f64; 5] {
    let offset = f64::from(view.frame) - f64::from(ORIGIN_FRAME);
    let mut out = [0.0; 5];
    for dim in view.cvt.dims() {
        out[dim.index()] = offset * steps.step_for(dim);
    }
    out
}

/// Dataset shape inferred from a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetShape {
    /// Category name to the sorted instance indices present.
    pub categories: BTreeMap<String, Vec<u8>>,
    pub contrasts: Vec<Contrast>,
    pub n_objects: usize,
    pub n_rows: usize,
}

impl fmt::Display for DatasetShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let contrasts: Vec<String> = self
            .contrasts
            .iter()
            .map(|c| c.code().to_string())
            .collect();
        write!(
            f,
            "{} rows: {} categories, {} objects, {} series x {} frames, contrasts [{}]",
            self.n_rows,
            self.categories.len(),
            self.n_objects,
            NUM_CVTS,
            FRAMES_PER_SERIES,
            contrasts.join(",")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManifestIssue {
    Parse {
        row: usize,
        name: String,
        error: ViewNameError,
    },
    Duplicate {
        view: ViewId,
        first_row: usize,
        second_row: usize,
    },
    Missing(ViewId),
}

impl fmt::Display for ManifestIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Parse { row, name, error } => {
                write!(f, "row {row}: cannot parse {name:?}: {error}")
            }
            Self::Duplicate {
                view,
                first_row,
                second_row,
            } => write!(
                f,
                "duplicate view {view} at rows {first_row} and {second_row}"
            ),
            Self::Missing(view) => write!(f, "missing view {view}"),
        }
    }
}

/// Every problem found in a names list, not just the first.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ManifestError {
    pub issues: Vec<ManifestIssue>,
}

impl ManifestError {
    /// True if any row failed to parse, as opposed to a well-formed but
    /// inconsistent grid.
    pub fn has_parse_errors(&self) -> bool {
        self.issues
            .iter()
            .any(|i| matches!(i, ManifestIssue::Parse { .. }))
    }

    pub fn missing(&self) -> impl Iterator<Item = &ViewId> {
        self.issues.iter().filter_map(|i| match i {
            ManifestIssue::Missing(v) => Some(v),
            _ => None,
        })
    }
}

impl fmt::Display for ManifestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} manifest issue(s)", self.issues.len())?;
        for issue in &self.issues {
            write!(f, "\n  {issue}")?;
        }
        Ok(())
    }
}

/// Compact per-row attributes used by the matching kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowInfo {
    pub object: u32,
    pub category: u32,
    pub cvt: Cvt,
    pub frame: u8,
    pub contrast: Contrast,
}

/// Ordered bijection between view identities and embedding rows.
#[derive(Debug, Clone)]
pub struct Manifest {
    views: Vec<ViewId>,
    index: HashMap<ViewId, usize>,
    rows: Vec<RowInfo>,
    objects: Vec<ObjectId>,
    shape: DatasetShape,
    partial: bool,
}

impl Manifest {
    /// Builds a manifest from view identities and requires grid completeness:
    /// every object present has all 31 x 11 views for every contrast present.
    pub fn new(views: Vec<ViewId>) -> Result<Self, ManifestError> {
        Self::build(views, false)
    }

    /// Like [`Manifest::new`] but tolerates missing grid cells.
    pub fn new_partial(views: Vec<ViewId>) -> Result<Self, ManifestError> {
        Self::build(views, true)
    }

    fn build(views: Vec<ViewId>, partial: bool) -> Result<Self, ManifestError> {
        let mut issues = Vec::new();
        let mut index = HashMap::with_capacity(views.len());
        for (row, view) in views.iter().enumerate() {
            if let Some(&first_row) = index.get(view) {
                issues.push(ManifestIssue::Duplicate {
                    view: view.clone(),
                    first_row,
                    second_row: row,
                });
            } else {
                index.insert(view.clone(), row);
            }
        }

        let objects: Vec<ObjectId> = views
            .iter()
            .map(|v| v.object.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let contrasts: Vec<Contrast> = views
            .iter()
            .map(|v| v.contrast)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        if !partial {
            let cvts = enumerate_cvts();
            for object in &objects {
                for &cvt in &cvts {
                    for frame in 0..=MAX_FRAME_DISTANCE {
                        for &contrast in &contrasts {
                            let view = ViewId {
                                object: object.clone(),
                                cvt,
                                frame,
                                contrast,
                            };
                            if !index.contains_key(&view) {
                                issues.push(ManifestIssue::Missing(view));
                            }
                        }
                    }
                }
            }
        }
        if !issues.is_empty() {
            return Err(ManifestError { issues });
        }

        let mut categories: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for object in &objects {
            categories
                .entry(object.category.clone())
                .or_default()
                .push(object.instance);
        }
        let category_index: HashMap<&str, u32> = categories
            .keys()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i as u32))
            .collect();
        let object_index: HashMap<&ObjectId, u32> = objects
            .iter()
            .enumerate()
            .map(|(i, o)| (o, i as u32))
            .collect();
        let rows = views
            .iter()
            .map(|v| RowInfo {
                object: object_index[&v.object],
                category: category_index[v.object.category.as_str()],
                cvt: v.cvt,
                frame: v.frame,
                contrast: v.contrast,
            })
            .collect();
        let shape = DatasetShape {
            n_objects: objects.len(),
            n_rows: views.len(),
            categories,
            contrasts,
        };
        Ok(Self {
            views,
            index,
            rows,
            objects,
            shape,
            partial,
        })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn is_partial(&self) -> bool {
        self.partial
    }

    pub fn views(&self) -> &[ViewId] {
        &self.views
    }

    pub fn view(&self, row: usize) -> &ViewId {
        &self.views[row]
    }

    pub fn row_of(&self, view: &ViewId) -> Option<usize> {
        self.index.get(view).copied()
    }

    pub fn row_info(&self) -> &[RowInfo] {
        &self.rows
    }

    pub fn objects(&self) -> &[ObjectId] {
        &self.objects
    }

    pub fn shape(&self) -> &DatasetShape {
        &self.shape
    }

    pub fn has_contrast(&self, contrast: Contrast) -> bool {
        self.shape.contrasts.contains(&contrast)
    }

    /// Canonical names, one per row.
    pub fn names(&self) -> impl Iterator<Item = String> + '_ {
        self.views.iter().map(|v| v.to_string())
    }
}

/// Parses and validates a names list, reporting every problem found.
pub fn validate_manifest<S: AsRef<str>>(names: &[S]) -> Result<Manifest, ManifestError> {
    let (views, issues) = parse_names(names);
    if !issues.is_empty() {
        return Err(ManifestError { issues });
    }
    Manifest::new(views)
}

/// [`validate_manifest`] without the grid-completeness requirement.
pub fn validate_partial_manifest<S: AsRef<str>>(names: &[S]) -> Result<Manifest, ManifestError> {
    let (views, issues) = parse_names(names);
    if !issues.is_empty() {
        return Err(ManifestError { issues });
    }
    Manifest::new_partial(views)
}

fn parse_names<S: AsRef<str>>(names: &[S]) -> (Vec<ViewId>, Vec<ManifestIssue>) {
    let mut views = Vec::with_capacity(names.len());
    let mut issues = Vec::new();
    for (row, name) in names.iter().enumerate() {
        match parse_view_name(name.as_ref()) {
            Ok(v) => views.push(v),
            Err(error) => issues.push(ManifestIssue::Parse {
                row,
                name: name.as_ref().to_string(),
                error,
            }),
        }
    }
    (views, issues)
}

/// Complete grid names for the given objects, in object, series, frame,
/// contrast order.
pub fn grid_views(objects: &[ObjectId], contrasts: &[Contrast]) -> Vec<ViewId> {
    let cvts = enumerate_cvts();
    let mut out =
        Vec::with_capacity(objects.len() * cvts.len() * FRAMES_PER_SERIES * contrasts.len());
    for object in objects {
        for &cvt in &cvts {
            for frame in 0..=MAX_FRAME_DISTANCE {
                for &contrast in contrasts {
                    out.push(ViewId {
                        object: object.clone(),
                        cvt,
                        frame,
                        contrast,
                    });
                }
            }
        }
    }
    out
}

/// Objects `cat0..catN` with instances `00..M`.
pub fn synthetic_objects(n_categories: usize, instances_per_category: usize) -> Vec<ObjectId> {
    (0..n_categories)
        .flat_map(|c| {
            (0..instances_per_category).map(move |i| ObjectId {
                category: format!("cat{c}"),
                instance: i as u8,
            })
        })
        .collect()
}
