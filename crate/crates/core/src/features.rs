//! Pooled attention features and their on-disk container.
//!
//! Layout: `OMNIFEAT`, u32 LE version, u64 LE header length, a JSON
//! header, then `samples × layers × heads` little-endian f32 values,
//! row-major with layer-major, head-minor columns. A tab-separated
//! `<file>.idx.tsv` sidecar lists one row per sample.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView4, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"OMNIFEAT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("attention value {value} at {index:?} is not finite and non-negative")]
    InvalidValue { index: [usize; 4], value: f32 },
    #[error("not a feature file (bad magic)")]
    BadMagic,
    #[error("unsupported feature file version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt feature file: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Mean over fact tokens (axis 0) and generated tokens (axis 3) of an
/// `N × L × H × O` block.
pub fn pool(block: ArrayView4<'_, f32>) -> Result<Array2<f64>, FeatureError> {
    let (n, l, h, o) = block.dim();
    if n == 0 || o == 0 || l == 0 || h == 0 {
        return Err(FeatureError::ShapeMismatch(format!("empty axis in {n}x{l}x{h}x{o}")));
    }
    let mut out = Array2::<f64>::zeros((l, h));
    for ((i, li, hi, oi), &v) in block.indexed_iter() {
        if !v.is_finite() || v < 0.0 {
            return Err(FeatureError::InvalidValue {
                index: [i, li, hi, oi],
                value: v,
            });
        }
        out[[li, hi]] += f64::from(v);
    }
    out /= (n * o) as f64;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub layers: usize,
    pub heads: usize,
    /// Row-major `samples × (layers·heads)`.
    pub values: Vec<f32>,
    pub groups: Vec<String>,
    /// target name → label names.
    pub label_tables: BTreeMap<String, Vec<String>>,
    /// target name → per-row index into its label table.
    pub labels: BTreeMap<String, Vec<u32>>,
}

impl FeatureMatrix {
    pub fn new(layers: usize, heads: usize, label_tables: BTreeMap<String, Vec<String>>) -> Self {
        let labels = label_tables.keys().map(|k| (k.clone(), Vec::new())).collect();
        Self {
            layers,
            heads,
            values: Vec::new(),
            groups: Vec::new(),
            label_tables,
            labels,
        }
    }

    pub fn width(&self) -> usize {
        self.layers * self.heads
    }

    pub fn rows(&self) -> usize {
        self.groups.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    /// Appends one pooled `L × H` sample; `labels` maps target → label name.
    pub fn push(&mut self, pooled: &Array2<f64>, group: &str, labels: &BTreeMap<String, String>) -> Result<(), FeatureError> {
        if pooled.dim() != (self.layers, self.heads) {
            return Err(FeatureError::ShapeMismatch(format!(
                "pooled {:?}, matrix expects {}x{}",
                pooled.dim(),
                self.layers,
                self.heads
            )));
        }
        let mut idx = BTreeMap::new();
        for (target, table) in &self.label_tables {
            let name = labels
                .get(target)
                .ok_or_else(|| FeatureError::ShapeMismatch(format!("no `{target}` label")))?;
            let pos = table
                .iter()
                .position(|t| t == name)
                .ok_or_else(|| FeatureError::ShapeMismatch(format!("unknown `{target}` label `{name}`")))?;
            idx.insert(target.clone(), pos as u32);
        }
        for (target, pos) in idx {
            self.labels.get_mut(&target).expect("table key").push(pos);
        }
        self.values.extend(pooled.iter().map(|&v| v as f32));
        self.groups.push(group.to_string());
        Ok(())
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows(), self.width()), |(r, c)| f64::from(self.values[r * self.width() + c]))
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let n = self.rows();
        if self.values.len() != n * self.width() {
            return Err(FeatureError::Corrupt(format!(
                "{} values for {n} rows of width {}",
                self.values.len(),
                self.width()
            )));
        }
        for (target, ls) in &self.labels {
            let table = self
                .label_tables
                .get(target)
                .ok_or_else(|| FeatureError::Corrupt(format!("labels for unknown target `{target}`")))?;
            if ls.len() != n || ls.iter().any(|&l| l as usize >= table.len()) {
                return Err(FeatureError::Corrupt(format!("bad `{target}` label column")));
            }
        }
        Ok(())
    }
}

/// Pools every block and stacks the rows.
pub fn pool_all<'a>(
    blocks: impl IntoIterator<Item = (ArrayView4<'a, f32>, &'a str, BTreeMap<String, String>)>,
    layers: usize,
    heads: usize,
    label_tables: BTreeMap<String, Vec<String>>,
) -> Result<FeatureMatrix, FeatureError> {
    let mut m = FeatureMatrix::new(layers, heads, label_tables);
    for (block, group, labels) in blocks {
        if block.len_of(Axis(1)) != layers || block.len_of(Axis(2)) != heads {
            return Err(FeatureError::ShapeMismatch(format!(
                "block has {}x{} layers x heads, dump has {layers}x{heads}",
                block.len_of(Axis(1)),
                block.len_of(Axis(2))
            )));
        }
        m.push(&pool(block)?, group, &labels)?;
    }
    Ok(m)
}

#[derive(Serialize, Deserialize)]
struct Header {
    layers: usize,
    heads: usize,
    samples: usize,
    label_tables: BTreeMap<String, Vec<String>>,
    groups: Vec<String>,
    /// per row: group index
    row_groups: Vec<u32>,
    labels: BTreeMap<String, Vec<u32>>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".idx.tsv");
    PathBuf::from(s)
}

pub fn write_features(path: &Path, m: &FeatureMatrix) -> Result<(), FeatureError> {
    m.validate()?;
    let mut groups: Vec<String> = Vec::new();
    let mut index: BTreeMap<&str, u32> = BTreeMap::new();
    let row_groups = m
        .groups
        .iter()
        .map(|g| {
            *index.entry(g.as_str()).or_insert_with(|| {
                groups.push(g.clone());
                (groups.len() - 1) as u32
            })
        })
        .collect();
    let header = Header {
        layers: m.layers,
        heads: m.heads,
        samples: m.rows(),
        label_tables: m.label_tables.clone(),
        groups,
        row_groups,
        labels: m.labels.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for v in &m.values {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;

    let mut idx = std::io::BufWriter::new(std::fs::File::create(sidecar_path(path))?);
    let targets: Vec<&String> = m.label_tables.keys().collect();
    write!(idx, "row\tgroup")?;
    for t in &targets {
        write!(idx, "\t{t}")?;
    }
    writeln!(idx)?;
    for r in 0..m.rows() {
        write!(idx, "{r}\t{}", m.groups[r])?;
        for t in &targets {
            write!(idx, "\t{}", m.label_tables[*t][m.labels[*t][r] as usize])?;
        }
        writeln!(idx)?;
    }
    idx.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix, FeatureError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(|_| FeatureError::BadMagic)?;
    if &magic != MAGIC {
        return Err(FeatureError::BadMagic);
    }
    let mut u32b = [0u8; 4];
    f.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(FeatureError::UnsupportedVersion(version));
    }
    let mut u64b = [0u8; 8];
    f.read_exact(&mut u64b)?;
    let len = usize::try_from(u64::from_le_bytes(u64b)).map_err(|_| FeatureError::Corrupt("header too large".into()))?;
    let mut json = vec![0u8; len];
    f.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| FeatureError::Corrupt(e.to_string()))?;
    let count = header.samples * header.layers * header.heads;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    if payload.len() != count * 4 {
        return Err(FeatureError::Corrupt(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            count * 4
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if header.row_groups.len() != header.samples {
        return Err(FeatureError::Corrupt("row group count".into()));
    }
    let groups = header
        .row_groups
        .iter()
        .map(|&g| {
            header
                .groups
                .get(g as usize)
                .cloned()
                .ok_or_else(|| FeatureError::Corrupt(format!("group index {g}")))
        })
        .collect::<Result<_, _>>()?;
    let m = FeatureMatrix {
        layers: header.layers,
        heads: header.heads,
        values,
        groups,
        label_tables: header.label_tables,
        labels: header.labels,
    };
    m.validate()?;
    Ok(m)
}
