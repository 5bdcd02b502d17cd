//! Embedding matrices on disk and in memory.
//!
//! File layout (`.emb`, all integers little-endian):
//!
//! | bytes  | content                          |
//! |--------|----------------------------------|
//! | 0..8   | magic `SHPYEMB1`                 |
//! | 8..12  | version, u32 = 1                 |
//! | 12..16 | dtype, u32 = 0 (f32 LE)          |
//! | 16..24 | n_rows, u64                      |
//! | 24..32 | dim, u64                         |
//! | 32..   | n_rows * dim f32 LE, row-major   |
//!
//! Row order is bound to a `.names` sidecar holding one canonical view name
//! per line.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::view_model::{validate_manifest, Manifest, ManifestError};

pub const MAGIC: &[u8; 8] = b"SHPYEMB1";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("header truncated at byte offset {len}: header needs {HEADER_LEN} bytes")]
    HeaderTruncated { len: u64 },
    #[error("bad magic at byte offset 0: found {found:?}, expected \"SHPYEMB1\"")]
    BadMagic { found: String },
    #[error("unsupported version {version} at byte offset 8")]
    UnsupportedVersion { version: u32 },
    #[error("unsupported dtype code {code} at byte offset 12")]
    UnsupportedDtype { code: u32 },
    #[error("dim must be at least 1 (byte offset 24)")]
    ZeroDim,
    #[error(
        "payload size mismatch: header declares {n_rows} x {dim} rows ending at byte offset {expected}, file ends at byte offset {actual}"
    )]
    SizeMismatch {
        n_rows: u64,
        dim: u64,
        expected: u64,
        actual: u64,
    },
    #[error(
        "row count mismatch: embeddings have {rows} rows, names file has {names} lines (row {} is unmatched)",
        rows.min(names)
    )]
    RowCountMismatch { rows: usize, names: usize },
    #[error("non-finite value {value} at row {row}, column {col} (byte offset {offset})")]
    NonFinite {
        row: usize,
        col: usize,
        offset: u64,
        value: f32,
    },
    #[error("data length {len} is not n_rows {n_rows} x dim {dim}")]
    Shape {
        n_rows: usize,
        dim: usize,
        len: usize,
    },
    #[error("names file line {line} is blank")]
    BlankName { line: usize },
    #[error("names file is not valid UTF-8")]
    NamesEncoding,
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

impl EmbeddingError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Row-major `n_rows x dim` matrix of finite f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n_rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n_rows: usize, dim: usize, data: Vec<f32>) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        if data.len() != n_rows * dim {
            return Err(EmbeddingError::Shape {
                n_rows,
                dim,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite {
                row: pos / dim,
                col: pos % dim,
                offset: (HEADER_LEN + pos * 4) as u64,
                value: data[pos],
            });
        }
        Ok(Self { n_rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map_or(1, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(EmbeddingError::Shape {
                    n_rows: rows.len(),
                    dim,
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Exact file bytes for this matrix.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        write_header(&mut out, self.n_rows as u64, self.dim as u64);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a complete `.emb` image.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let header = parse_header(bytes, bytes.len() as u64)?;
        let payload = &bytes[HEADER_LEN..];
        decode_payload(payload, header.n_rows, header.dim, 0)
    }
}

fn write_header(out: &mut Vec<u8>, n_rows: u64, dim: u64) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    out.extend_from_slice(&n_rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
}

struct Header {
    n_rows: usize,
    dim: usize,
}

fn parse_header(bytes: &[u8], file_len: u64) -> Result<Header, EmbeddingError> {
    if bytes.len() < HEADER_LEN {
        return Err(EmbeddingError::HeaderTruncated { len: file_len });
    }
    if &bytes[0..8] != MAGIC {
        return Err(EmbeddingError::BadMagic {
            found: String::from_utf8_lossy(&bytes[0..8]).into_owned(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != FORMAT_VERSION {
        return Err(EmbeddingError::UnsupportedVersion { version });
    }
    let code = u32_at(12);
    if code != DTYPE_F32 {
        return Err(EmbeddingError::UnsupportedDtype { code });
    }
    let n_rows = u64_at(16);
    let dim = u64_at(24);
    if dim == 0 {
        return Err(EmbeddingError::ZeroDim);
    }
    let expected = n_rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN as u64));
    match expected {
        Some(expected) if expected == file_len => Ok(Header {
            n_rows: n_rows as usize,
            dim: dim as usize,
        }),
        _ => Err(EmbeddingError::SizeMismatch {
            n_rows,
            dim,
            expected: expected.unwrap_or(u64::MAX),
            actual: file_len,
        }),
    }
}

fn decode_payload(
    payload: &[u8],
    n_rows: usize,
    dim: usize,
    first_row: usize,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    let mut data = Vec::with_capacity(n_rows * dim);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            let idx = first_row * dim + i;
            return Err(EmbeddingError::NonFinite {
                row: idx / dim,
                col: idx % dim,
                offset: (HEADER_LEN + idx * 4) as u64,
                value: v,
            });
        }
        data.push(v);
    }
    EmbeddingMatrix::new(n_rows, dim, data)
}

/// Reads a `.emb` file on its own.
pub fn read_matrix(path: &Path) -> Result<EmbeddingMatrix, EmbeddingError> {
    let file = File::open(path).map_err(|e| EmbeddingError::io(path, e))?;
    let file_len = file
        .metadata()
        .map_err(|e| EmbeddingError::io(path, e))?
        .len();
    let mut reader = BufReader::new(file);
    let mut header = [0u8; HEADER_LEN];
    let got = read_up_to(&mut reader, &mut header).map_err(|e| EmbeddingError::io(path, e))?;
    let header = parse_header(&header[..got], file_len)?;

    let mut data = Vec::with_capacity(header.n_rows * header.dim);
    let mut row_bytes = vec![0u8; header.dim * 4];
    for row in 0..header.n_rows {
        reader
            .read_exact(&mut row_bytes)
            .map_err(|e| EmbeddingError::io(path, e))?;
        let decoded = decode_payload(&row_bytes, 1, header.dim, row)?;
        data.extend_from_slice(decoded.as_slice());
    }
    EmbeddingMatrix::new(header.n_rows, header.dim, data)
}

fn read_up_to(reader: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

/// Reads a names sidecar: one name per line, optional final newline, no blank lines.
pub fn read_names(path: &Path) -> Result<Vec<String>, EmbeddingError> {
    let bytes = std::fs::read(path).map_err(|e| EmbeddingError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| EmbeddingError::NamesEncoding)?;
    parse_names_text(&text)
}

pub fn parse_names_text(text: &str) -> Result<Vec<String>, EmbeddingError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                Err(EmbeddingError::BlankName { line: i + 1 })
            } else {
                Ok(line.to_string())
            }
        })
        .collect()
}

/// Reads an embedding file and its names sidecar, validating both.
pub fn read_embeddings(
    data_path: &Path,
    names_path: &Path,
) -> Result<(EmbeddingMatrix, Manifest), EmbeddingError> {
    let matrix = read_matrix(data_path)?;
    let names = read_names(names_path)?;
    if names.len() != matrix.n_rows() {
        return Err(EmbeddingError::RowCountMismatch {
            rows: matrix.n_rows(),
            names: names.len(),
        });
    }
    let manifest = validate_manifest(&names)?;
    Ok((matrix, manifest))
}

/// Writes the `.emb` file and `.names` sidecar.
pub fn write_embeddings(
    matrix: &EmbeddingMatrix,
    manifest: &Manifest,
    data_path: &Path,
    names_path: &Path,
) -> Result<(), EmbeddingError> {
    if manifest.len() != matrix.n_rows() {
        return Err(EmbeddingError::RowCountMismatch {
            rows: matrix.n_rows(),
            names: manifest.len(),
        });
    }
    let mut out =
        BufWriter::new(File::create(data_path).map_err(|e| EmbeddingError::io(data_path, e))?);
    out.write_all(&matrix.to_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| EmbeddingError::io(data_path, e))?;

    let mut names = String::new();
    for name in manifest.names() {
        names.push_str(&name);
        names.push('\n');
    }
    std::fs::write(names_path, names).map_err(|e| EmbeddingError::io(names_path, e))
}

/// `base.emb` and `base.names`.
pub fn dataset_paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("emb"), base.with_extension("names"))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Pearson correlation: mean-centre each row, then cosine.
    #[default]
    Correlation,
    Cosine,
    /// Negated Euclidean distance.
    NegEuclidean,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Self::Correlation => "correlation",
            Self::Cosine => "cosine",
            Self::NegEuclidean => "neg-euclidean",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "correlation" => Ok(Self::Correlation),
            "cosine" => Ok(Self::Cosine),
            "neg-euclidean" | "negeuclidean" => Ok(Self::NegEuclidean),
            other => Err(format!(
                "unknown metric {other:?} (expected correlation, cosine or neg-euclidean)"
            )),
        }
    }
}

/// Rows transformed so that similarity reduces to a fixed-order inner
/// product (or, for [`Metric::NegEuclidean`], a fixed-order distance).
#[derive(Debug, Clone)]
pub struct NormalizedMatrix {
    metric: Metric,
    n_rows: usize,
    dim: usize,
    data: Vec<f32>,
    degenerate: Vec<bool>,
}

/// Applies the metric's row transform. Degenerate rows (constant rows under
/// correlation, zero rows under cosine) become the zero vector.
pub fn preprocess(matrix: &EmbeddingMatrix, metric: Metric) -> NormalizedMatrix {
    let dim = matrix.dim();
    let mut data = Vec::with_capacity(matrix.as_slice().len());
    let mut degenerate = Vec::with_capacity(matrix.n_rows());
    for i in 0..matrix.n_rows() {
        let row = matrix.row(i);
        match metric {
            Metric::NegEuclidean => {
                data.extend_from_slice(row);
                degenerate.push(false);
            }
            Metric::Cosine | Metric::Correlation => {
                let is_degenerate = match metric {
                    Metric::Correlation => row.iter().all(|v| *v == row[0]),
                    _ => row.iter().all(|v| *v == 0.0),
                };
                degenerate.push(is_degenerate);
                if is_degenerate {
                    data.extend(std::iter::repeat_n(0.0, dim));
                    continue;
                }
                let mean = if metric == Metric::Correlation {
                    row.iter().map(|v| f64::from(*v)).sum::<f64>() / dim as f64
                } else {
                    0.0
                };
                let norm = row
                    .iter()
                    .map(|v| {
                        let c = f64::from(*v) - mean;
                        c * c
                    })
                    .sum::<f64>()
                    .sqrt();
                data.extend(row.iter().map(|v| ((f64::from(*v) - mean) / norm) as f32));
            }
        }
    }
    NormalizedMatrix {
        metric,
        n_rows: matrix.n_rows(),
        dim,
        data,
        degenerate,
    }
}

impl NormalizedMatrix {
    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_degenerate(&self, i: usize) -> bool {
        self.degenerate[i]
    }

    pub fn degenerate_rows(&self) -> Vec<usize> {
        (0..self.n_rows).filter(|i| self.degenerate[*i]).collect()
    }

    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        similarity(self.row(a), self.row(b), self.metric)
    }

    /// Scores row `reference` against the contiguous rows `first..first + out.len()`.
    /// Each entry is bit-identical to [`NormalizedMatrix::similarity`].
    pub fn similarities_into(&self, reference: usize, first: usize, out: &mut [f64]) {
        let a = self.row(reference);
        let cands = &self.data[first * self.dim..(first + out.len()) * self.dim];
        match self.metric {
            Metric::Correlation | Metric::Cosine => {
                batch_scores(a, cands, out, |x, y| x * y, |s| s)
            }
            Metric::NegEuclidean => batch_scores(
                a,
                cands,
                out,
                |x, y| {
                    let d = x - y;
                    d * d
                },
                |s| -s.sqrt(),
            ),
        }
    }
}

/// Similarity of two preprocessed rows; higher is more similar. Sums run
/// sequentially over the dimension axis in f64.
pub fn similarity(a: &[f32], b: &[f32], metric: Metric) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    match metric {
        Metric::Correlation | Metric::Cosine => {
            let mut acc = 0.0f64;
            for (x, y) in a.iter().zip(b) {
                acc += f64::from(*x) * f64::from(*y);
            }
            acc
        }
        Metric::NegEuclidean => {
            let mut acc = 0.0f64;
            for (x, y) in a.iter().zip(b) {
                let d = f64::from(*x) - f64::from(*y);
                acc += d * d;
            }
            -acc.sqrt()
        }
    }
}

const LANES: usize = 8;

/// Scores `a` against consecutive rows of `cands`. Runs LANES independent
/// accumulators side by side; each one still sums strictly in dimension order.
#[inline]
fn batch_scores(
    a: &[f32],
    cands: &[f32],
    out: &mut [f64],
    term: impl Fn(f64, f64) -> f64,
    finish: impl Fn(f64) -> f64,
) {
    let dim = a.len();
    let mut out_chunks = out.chunks_exact_mut(LANES);
    let mut cand_chunks = cands.chunks_exact(LANES * dim);
    for (o, block) in (&mut out_chunks).zip(&mut cand_chunks) {
        let rows: [&[f32]; LANES] = std::array::from_fn(|l| &block[l * dim..(l + 1) * dim]);
        let mut acc = [0.0f64; LANES];
        for k in 0..dim {
            let x = f64::from(a[k]);
            for l in 0..LANES {
                acc[l] += term(x, f64::from(rows[l][k]));
            }
        }
        for l in 0..LANES {
            o[l] = finish(acc[l]);
        }
    }
    let rest = cand_chunks.remainder();
    for (o, b) in out_chunks
        .into_remainder()
        .iter_mut()
        .zip(rest.chunks_exact(dim))
    {
        let mut acc = 0.0f64;
        for k in 0..dim {
            acc += term(f64::from(a[k]), f64::from(b[k]));
        }
        *o = finish(acc);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view_model::{grid_views, synthetic_objects, Contrast};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corr(a: &[f32], b: &[f32], metric: Metric) -> f64 {
        let m = EmbeddingMatrix::from_rows(&[a.to_vec(), b.to_vec()]).unwrap();
        preprocess(&m, metric).similarity(0, 1)
    }

    /// Textbook Pearson correlation, computed without the normalized path.
    fn pearson(a: &[f32], b: &[f32]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|v| *v as f64).sum::<f64>() / n;
        let mb = b.iter().map(|v| *v as f64).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (x, y) in a.iter().zip(b) {
            let dx = *x as f64 - ma;
            let dy = *y as f64 - mb;
            cov += dx * dy;
            va += dx * dx;
            vb += dy * dy;
        }
        cov / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn header_layout() {
        let m = EmbeddingMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 56);
        assert_eq!(&bytes[0..8], b"SHPYEMB1");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &0u32.to_le_bytes());
        assert_eq!(&bytes[16..24], &2u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &3u64.to_le_bytes());
        assert_eq!(&bytes[32..36], &1.0f32.to_le_bytes());
        assert_eq!(EmbeddingMatrix::from_bytes(&bytes).unwrap(), m);

        let empty = EmbeddingMatrix::new(0, 4, vec![]).unwrap();
        let bytes = empty.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(EmbeddingMatrix::from_bytes(&bytes).unwrap(), empty);
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        let err = EmbeddingMatrix::new(2, 2, vec![0.0, 1.0, f32::NAN, 0.0]).unwrap_err();
        assert!(matches!(
            err,
            EmbeddingError::NonFinite {
                row: 1,
                col: 0,
                offset: 40,
                ..
            }
        ));
        assert!(matches!(
            EmbeddingMatrix::new(1, 0, vec![]),
            Err(EmbeddingError::ZeroDim)
        ));
        assert!(matches!(
            EmbeddingMatrix::new(2, 2, vec![0.0; 3]),
            Err(EmbeddingError::Shape { .. })
        ));
    }

    #[test]
    fn corrupted_images_are_rejected() {
        let m = EmbeddingMatrix::new(2, 3, vec![1.0; 6]).unwrap();
        let good = m.to_bytes();

        let truncated = &good[..good.len() - 4];
        match EmbeddingMatrix::from_bytes(truncated) {
            Err(EmbeddingError::SizeMismatch {
                expected: 56,
                actual: 52,
                ..
            }) => {}
            other => panic!("{other:?}"),
        }

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bad),
            Err(EmbeddingError::BadMagic { .. })
        ));

        let mut bad = good.clone();
        bad[8] = 2;
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bad),
            Err(EmbeddingError::UnsupportedVersion { version: 2 })
        ));

        let mut bad = good.clone();
        bad[12] = 1;
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bad),
            Err(EmbeddingError::UnsupportedDtype { code: 1 })
        ));

        assert!(matches!(
            EmbeddingMatrix::from_bytes(&good[..20]),
            Err(EmbeddingError::HeaderTruncated { len: 20 })
        ));

        let mut bad = good.clone();
        bad[32 + 4 * 4..32 + 5 * 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        match EmbeddingMatrix::from_bytes(&bad) {
            Err(EmbeddingError::NonFinite {
                row: 1,
                col: 1,
                offset: 48,
                ..
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn names_text_rules() {
        assert_eq!(parse_names_text("a\nb\n").unwrap(), vec!["a", "b"]);
        assert_eq!(parse_names_text("a\nb").unwrap(), vec!["a", "b"]);
        assert!(parse_names_text("").unwrap().is_empty());
        assert!(matches!(
            parse_names_text("a\n\nb"),
            Err(EmbeddingError::BlankName { line: 2 })
        ));
        assert!(matches!(
            parse_names_text("a\nb\n\n"),
            Err(EmbeddingError::BlankName { line: 3 })
        ));
    }

    #[test]
    fn file_round_trip_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = crate::view_model::Manifest::new(grid_views(
            &synthetic_objects(1, 1),
            &[Contrast::Dark],
        ))
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..manifest.len() * 5)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let m = EmbeddingMatrix::new(manifest.len(), 5, data).unwrap();
        let (emb, names) = dataset_paths(&dir.path().join("set"));
        write_embeddings(&m, &manifest, &emb, &names).unwrap();
        let bytes = std::fs::read(&emb).unwrap();
        assert_eq!(bytes, m.to_bytes());

        let (m2, manifest2) = read_embeddings(&emb, &names).unwrap();
        assert_eq!(m2, m);
        assert_eq!(manifest2.views(), manifest.views());

        write_embeddings(&m2, &manifest2, &emb, &names).unwrap();
        assert_eq!(std::fs::read(&emb).unwrap(), bytes);

        let text = std::fs::read_to_string(&names).unwrap();
        let short: Vec<&str> = text.lines().skip(1).collect();
        std::fs::write(&names, short.join("\n")).unwrap();
        match read_embeddings(&emb, &names) {
            Err(EmbeddingError::RowCountMismatch {
                rows: 341,
                names: 340,
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn similarity_examples() {
        assert!((corr(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], Metric::Correlation) - 1.0).abs() < 1e-6);
        assert_eq!(corr(&[1.0, 0.0], &[0.0, 1.0], Metric::Cosine), 0.0);
        let r = corr(
            &[1.0, 2.0, 3.0, 4.0],
            &[4.0, 3.0, 2.0, 1.0],
            Metric::Correlation,
        );
        // Hand evaluation: deviations (-1.5,-0.5,0.5,1.5) vs (1.5,0.5,-0.5,-1.5),
        // covariance -5, both variances 5.
        assert!((r + 1.0).abs() < 1e-7, "{r}");
        assert_eq!(
            corr(&[5.0, 5.0, 5.0], &[1.0, 2.0, 4.0], Metric::Correlation),
            0.0
        );
        assert_eq!(
            corr(&[0.3, -2.0, 7.5], &[0.3, -2.0, 7.5], Metric::NegEuclidean),
            0.0
        );
        assert!(corr(&[0.0, 0.0], &[3.0, 4.0], Metric::NegEuclidean) == -5.0);
    }

    #[test]
    fn degenerate_rows_are_flagged() {
        let m = EmbeddingMatrix::from_rows(&[
            vec![5.0, 5.0, 5.0],
            vec![0.0, 0.0, 0.0],
            vec![1.0, 2.0, 3.0],
        ])
        .unwrap();
        let n = preprocess(&m, Metric::Correlation);
        assert_eq!(n.degenerate_rows(), vec![0, 1]);
        assert_eq!(n.row(0), &[0.0; 3]);
        let n = preprocess(&m, Metric::Cosine);
        assert_eq!(n.degenerate_rows(), vec![1]);
    }

    #[test]
    fn batched_scores_match_pairwise_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for metric in [Metric::Correlation, Metric::Cosine, Metric::NegEuclidean] {
            let data: Vec<f32> = (0..37 * 13).map(|_| rng.random_range(-2.0..2.0)).collect();
            let n = preprocess(&EmbeddingMatrix::new(37, 13, data).unwrap(), metric);
            for first in [0, 3, 20] {
                let mut out = vec![0.0; 37 - first];
                n.similarities_into(5, first, &mut out);
                for (k, s) in out.iter().enumerate() {
                    assert_eq!(s.to_bits(), n.similarity(5, first + k).to_bits());
                }
            }
        }
    }

    fn row_strategy(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-10.0f32..10.0, dim)
    }

    proptest! {
        #[test]
        fn similarity_is_symmetric_and_bounded(a in row_strategy(9), b in row_strategy(9)) {
            for metric in [Metric::Correlation, Metric::Cosine, Metric::NegEuclidean] {
                let m = EmbeddingMatrix::from_rows(&[a.clone(), b.clone()]).unwrap();
                let n = preprocess(&m, metric);
                prop_assert_eq!(n.similarity(0, 1).to_bits(), n.similarity(1, 0).to_bits());
                if metric == Metric::NegEuclidean {
                    prop_assert!(n.similarity(0, 1) <= 0.0);
                    prop_assert_eq!(n.similarity(0, 0), 0.0);
                } else {
                    prop_assert!(n.similarity(0, 1).abs() <= 1.0 + 1e-6);
                    if !n.is_degenerate(0) {
                        prop_assert!((n.similarity(0, 0) - 1.0).abs() <= 1e-6);
                    }
                }
            }
        }

        #[test]
        fn inner_product_matches_textbook_pearson(a in row_strategy(16), b in row_strategy(16)) {
            let fast = corr(&a, &b, Metric::Correlation);
            let slow = pearson(&a, &b);
            prop_assert!((fast - slow).abs() <= 1e-5 * slow.abs().max(1.0), "{} vs {}", fast, slow);
        }

        #[test]
        fn correlation_ignores_positive_affine_maps(a in row_strategy(12), b in row_strategy(12), scale in 0.1f32..10.0, shift in -5.0f32..5.0) {
            let moved: Vec<f32> = a.iter().map(|v| v * scale + shift).collect();
            let s1 = corr(&a, &b, Metric::Correlation);
            let s2 = corr(&moved, &b, Metric::Correlation);
            prop_assert!((s1 - s2).abs() < 1e-5);
        }
    }
}
