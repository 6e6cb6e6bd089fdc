//! IDX ingestion, binarization, stratified subsets and checkpoints.
//!
//! IDX files are big-endian: a 4-byte magic (`0x00000803` for images,
//! `0x00000801` for labels), the item count, and for images the row and
//! column counts, followed by unsigned bytes. Gzip-compressed files are
//! detected by their header and decompressed transparently.
//!
//! Checkpoints are little-endian regardless of host:
//!
//! ```text
//! "SLRBMCK1"            8 bytes
//! m, n                  u32 each
//! W (n x m, row-major), b (m), c (n)   f64 each
//! config length         u32
//! config                UTF-8 TOML, `key = value` per line
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::RbmParams;
use crate::rng::{stream_rng, Stream};
use crate::trainer::TrainConfig;
use crate::Label;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SLRBMCK1";
pub const DEFAULT_THRESHOLD: u8 = 127;

/// Undecoded image bytes, one row per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Array2<u8>,
}

impl RawImages {
    pub fn len(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.nrows() == 0
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes)?;
        fs::write(path, enc.finish()?)?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::UnexpectedEof)
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImages> {
    if bytes.len() < 4 || be_u32(bytes, 0)? != IDX_IMAGES_MAGIC {
        return Err(Error::NotIdxImages);
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = count
        .checked_mul(rows)
        .and_then(|x| x.checked_mul(cols))
        .ok_or(Error::UnexpectedEof)?;
    let payload = bytes.get(16..16 + size).ok_or(Error::UnexpectedEof)?;
    let pixels = Array2::from_shape_vec((count, rows * cols), payload.to_vec())
        .map_err(|e| Error::Dimension(e.to_string()))?;
    Ok(RawImages { rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<Label>> {
    if bytes.len() < 4 || be_u32(bytes, 0)? != IDX_LABELS_MAGIC {
        return Err(Error::NotIdxLabels);
    }
    let count = be_u32(bytes, 4)? as usize;
    let payload = bytes.get(8..8 + count).ok_or(Error::UnexpectedEof)?;
    if let Some(&bad) = payload.iter().find(|&&b| b > 9) {
        return Err(Error::InvalidLabel(bad));
    }
    Ok(payload.to_vec())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<RawImages> {
    parse_idx_images(&read_maybe_gz(path.as_ref())?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<Label>> {
    parse_idx_labels(&read_maybe_gz(path.as_ref())?)
}

pub fn encode_idx_images(raw: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + raw.pixels.len());
    for x in [
        IDX_IMAGES_MAGIC,
        raw.len() as u32,
        raw.rows as u32,
        raw.cols as u32,
    ] {
        out.extend_from_slice(&x.to_be_bytes());
    }
    out.extend(raw.pixels.iter());
    out
}

pub fn encode_idx_labels(labels: &[Label]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes an IDX image file, gzip-compressed when the path ends in `.gz`.
pub fn write_idx_images(path: impl AsRef<Path>, raw: &RawImages) -> Result<()> {
    write_maybe_gz(path.as_ref(), &encode_idx_images(raw))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[Label]) -> Result<()> {
    write_maybe_gz(path.as_ref(), &encode_idx_labels(labels))
}

/// Pixel becomes 1 iff its byte is strictly greater than `threshold`.
pub fn binarize(raw: &RawImages, threshold: u8) -> Array2<f64> {
    raw.pixels.mapv(|p| if p > threshold { 1.0 } else { 0.0 })
}

/// Binarized images with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// N x m, entries in {0, 1}.
    pub images: Array2<f64>,
    pub labels: Vec<Label>,
    pub source: Vec<PathBuf>,
    pub threshold: Option<u8>,
    pub subset_seed: Option<u64>,
}

impl Dataset {
    pub fn from_parts(images: Array2<f64>, labels: Vec<Label>) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} images but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        if let Some(&x) = images.iter().find(|&&x| x != 0.0 && x != 1.0) {
            return Err(Error::InvalidArgument(format!(
                "image entry {x} is not binary"
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::InvalidLabel(l));
        }
        Ok(Self {
            images,
            labels,
            source: Vec::new(),
            threshold: None,
            subset_seed: None,
        })
    }

    pub fn load(
        images_path: impl AsRef<Path>,
        labels_path: impl AsRef<Path>,
        threshold: u8,
    ) -> Result<Self> {
        let raw = load_idx_images(images_path.as_ref())?;
        let labels = load_idx_labels(labels_path.as_ref())?;
        if raw.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} images but {} labels",
                raw.len(),
                labels.len()
            )));
        }
        Ok(Self {
            images: binarize(&raw, threshold),
            labels,
            source: vec![
                images_path.as_ref().to_path_buf(),
                labels_path.as_ref().to_path_buf(),
            ],
            threshold: Some(threshold),
            subset_seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_visible(&self) -> usize {
        self.images.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    /// Rows whose label is in `classes`, original order kept.
    pub fn filter_classes(&self, classes: &[Label]) -> Self {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        self.select(&keep)
    }

    /// Count per label value 0..=9.
    pub fn class_counts(&self) -> [usize; 10] {
        let mut counts = [0; 10];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    fn clone_meta(&self) -> Self {
        Self {
            images: Array2::zeros((0, self.n_visible())),
            labels: Vec::new(),
            source: self.source.clone(),
            threshold: self.threshold,
            subset_seed: self.subset_seed,
        }
    }
}

/// Per class present, the indices of that class shuffled by `seed`.
fn shuffled_by_class(labels: &[Label], seed: u64) -> Vec<(Label, Vec<usize>)> {
    let mut groups: Vec<(Label, Vec<usize>)> = Vec::new();
    for class in 0..=9u8 {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if !idx.is_empty() {
            groups.push((class, idx));
        }
    }
    for (class, idx) in &mut groups {
        idx.shuffle(&mut stream_rng(seed, Stream::Subset, *class as u64, 0));
    }
    groups
}

/// `per_class` examples of every class present, in seeded random order.
pub fn subset(dataset: &Dataset, per_class: usize, seed: u64) -> Result<Dataset> {
    Ok(stratified_split(dataset, per_class, 0, seed)?.0)
}

/// Disjoint stratified subsets: `train_per_class` and `test_per_class`
/// examples of every class present.
pub fn stratified_split(
    dataset: &Dataset,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(&dataset.labels, train_per_class, test_per_class, seed)?;
    let mut a = dataset.select(&train);
    let mut b = dataset.select(&test);
    a.subset_seed = Some(seed);
    b.subset_seed = Some(seed);
    Ok((a, b))
}

/// Row indices behind [`stratified_split`].
pub fn split_indices(
    labels: &[Label],
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let need = train_per_class + test_per_class;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, idx) in shuffled_by_class(labels, seed) {
        if idx.len() < need {
            return Err(Error::Insufficient {
                class,
                need,
                have: idx.len(),
            });
        }
        train.extend_from_slice(&idx[..train_per_class]);
        test.extend_from_slice(&idx[train_per_class..need]);
    }
    train.shuffle(&mut stream_rng(seed, Stream::Subset, 100, 0));
    test.shuffle(&mut stream_rng(seed, Stream::Subset, 101, 0));
    Ok((train, test))
}

/// Parsed checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub params: RbmParams,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }
}

pub fn encode_checkpoint(params: &RbmParams, config: &TrainConfig) -> Result<Vec<u8>> {
    let (m, n) = (params.n_visible(), params.n_hidden());
    let config_text = config.to_toml()?;
    let mut out = Vec::with_capacity(16 + 8 * (n * m + m + n) + 4 + config_text.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for x in params
        .weights
        .iter()
        .chain(params.visible_bias.iter())
        .chain(params.hidden_bias.iter())
    {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::NotCheckpoint);
    }
    let truncated = || Error::CorruptCheckpoint("truncated".into());
    let le_u32 = |at: usize| -> Result<usize> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
            .ok_or_else(truncated)
    };
    let m = le_u32(8)?;
    let n = le_u32(12)?;
    let count = n
        .checked_mul(m)
        .and_then(|x| x.checked_add(m + n))
        .ok_or_else(truncated)?;
    let floats_end = 16 + count.checked_mul(8).ok_or_else(truncated)?;
    let body = bytes.get(16..floats_end).ok_or_else(truncated)?;
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let config_len = le_u32(floats_end)?;
    let config_start = floats_end + 4;
    let config_bytes = bytes
        .get(config_start..config_start + config_len)
        .ok_or_else(truncated)?;
    if bytes.len() != config_start + config_len {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    let text = std::str::from_utf8(config_bytes)
        .map_err(|_| Error::CorruptCheckpoint("config is not UTF-8".into()))?;
    let config =
        TrainConfig::from_toml(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let weights = Array2::from_shape_vec((n, m), values[..n * m].to_vec())
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let params = RbmParams {
        weights,
        visible_bias: Array1::from(values[n * m..n * m + m].to_vec()),
        hidden_bias: Array1::from(values[n * m + m..].to_vec()),
    };
    Ok(Checkpoint {
        version: 1,
        params,
        config,
    })
}

pub fn save_checkpoint(
    params: &RbmParams,
    config: &TrainConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, encode_checkpoint(params, config)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

/// Formats a real with 17 significant digits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes one CSV row per matrix row, optionally preceded by a header.
pub fn write_matrix_csv(
    path: impl AsRef<Path>,
    matrix: &Array2<f64>,
    header: Option<&str>,
) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(h);
        out.push('\n');
    }
    for row in matrix.rows() {
        let cells: Vec<String> = row.iter().map(|&x| format_real(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
