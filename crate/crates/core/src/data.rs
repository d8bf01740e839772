//! Dataset ingestion, split generation, and synthetic fixtures.
//!
//! Supported inputs: IDX image/label pairs (big-endian, bit-exact header
//! offsets), headerless numeric CSV feature/label tables, and seeded
//! Gaussian-blob test fixtures.

use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::{shuffle, stream, Stream};

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Fixed seed for the per-class image subset draw, so a reduced dataset
/// regenerates bit-for-bit from the full files.
pub const SUBSET_SEED: u64 = 20230;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: Mat,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    fn validate(self) -> Result<Self> {
        if self.n() == 0 || self.dim() == 0 {
            return Err(Error::config(format!(
                "dataset `{}` is empty ({}x{})",
                self.name,
                self.n(),
                self.dim()
            )));
        }
        if self.labels.len() != self.n() {
            return Err(Error::config(format!(
                "dataset `{}`: {} labels for {} samples",
                self.name,
                self.labels.len(),
                self.n()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::config(format!(
                "dataset `{}`: label {bad} outside 0..{}",
                self.name, self.classes
            )));
        }
        if !self.features.all_finite() {
            return Err(Error::config(format!(
                "dataset `{}` contains non-finite features",
                self.name
            )));
        }
        Ok(self)
    }
}

/// Disjoint index sets; anything not in train or val is test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in set {
                if i >= n {
                    return Err(Error::config(format!("{name} index {i} out of range {n}")));
                }
                if seen[i] {
                    return Err(Error::config(format!(
                        "index {i} appears in more than one split set"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            out.push_str(name);
            out.push(':');
            for &i in set {
                out.push(' ');
                out.push_str(&i.to_string());
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn idx_error(path: &Path, offset: u64, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset,
        detail: detail.into(),
    }
}

struct IdxReader<'a> {
    cur: std::io::Cursor<Vec<u8>>,
    path: &'a Path,
}

impl<'a> IdxReader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Ok(IdxReader {
            cur: std::io::Cursor::new(bytes),
            path,
        })
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let offset = self.cur.position();
        self.cur
            .read_u32::<BigEndian>()
            .map_err(|_| idx_error(self.path, offset, format!("truncated while reading {what}")))
    }

    fn bytes(&mut self, count: usize, what: &str) -> Result<Vec<u8>> {
        let offset = self.cur.position();
        let mut buf = vec![0u8; count];
        self.cur
            .read_exact(&mut buf)
            .map_err(|_| idx_error(self.path, offset, format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    fn expect_eof(&mut self) -> Result<()> {
        let offset = self.cur.position();
        let mut probe = [0u8; 1];
        if self.cur.read(&mut probe)? != 0 {
            return Err(idx_error(self.path, offset, "trailing bytes after payload"));
        }
        Ok(())
    }
}

/// Load an IDX image file plus its IDX label file: pixels scale to [0,1],
/// images flatten row-major.
pub fn load_idx_images(image_path: &Path, label_path: &Path) -> Result<Dataset> {
    let mut img = IdxReader::open(image_path)?;
    let magic = img.u32("magic")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(idx_error(
            image_path,
            0,
            format!("bad image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"),
        ));
    }
    let count = img.u32("image count")? as usize;
    let rows = img.u32("row count")? as usize;
    let cols = img.u32("column count")? as usize;
    let dim = rows * cols;
    let pixels = img.bytes(count * dim, "pixel data")?;
    img.expect_eof()?;

    let mut lab = IdxReader::open(label_path)?;
    let lmagic = lab.u32("magic")?;
    if lmagic != IDX_LABEL_MAGIC {
        return Err(idx_error(
            label_path,
            0,
            format!("bad label magic {lmagic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"),
        ));
    }
    let lcount = lab.u32("label count")? as usize;
    if lcount != count {
        return Err(idx_error(
            label_path,
            4,
            format!("{lcount} labels for {count} images"),
        ));
    }
    let raw_labels = lab.bytes(count, "label data")?;
    lab.expect_eof()?;

    let features = Mat::from_vec(
        count,
        dim,
        pixels.iter().map(|&b| b as f64 / 255.0).collect(),
    )?;
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    Dataset {
        features,
        labels,
        classes,
        name: "idx".to_string(),
    }
    .validate()
}

/// Headerless numeric CSV features plus one integer label per line.
pub fn load_table(features_csv: &Path, labels_csv: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(features_csv)?;
    let mut data = Vec::new();
    let mut dim = None;
    let mut n = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?; // ragged rows surface here
        match dim {
            None => dim = Some(record.len()),
            Some(d) if d != record.len() => {
                return Err(Error::Format {
                    path: features_csv.display().to_string(),
                    offset: (row + 1) as u64,
                    detail: format!("row has {} fields, expected {d}", record.len()),
                });
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|e| Error::Format {
                path: features_csv.display().to_string(),
                offset: (row + 1) as u64,
                detail: format!("non-numeric field `{field}`: {e}"),
            })?;
            data.push(v);
        }
        n += 1;
    }
    let dim = dim.unwrap_or(0);
    if n == 0 || dim == 0 {
        return Err(Error::Format {
            path: features_csv.display().to_string(),
            offset: 0,
            detail: "empty feature table".to_string(),
        });
    }

    let label_text = std::fs::read_to_string(labels_csv)?;
    let mut labels = Vec::with_capacity(n);
    for (row, line) in label_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: i64 = line.parse().map_err(|e| Error::Format {
            path: labels_csv.display().to_string(),
            offset: (row + 1) as u64,
            detail: format!("bad label `{line}`: {e}"),
        })?;
        if v < 0 {
            return Err(Error::Format {
                path: labels_csv.display().to_string(),
                offset: (row + 1) as u64,
                detail: format!("negative label {v}"),
            });
        }
        labels.push(v as usize);
    }
    if labels.len() != n {
        return Err(Error::Format {
            path: labels_csv.display().to_string(),
            offset: 0,
            detail: format!("{} labels for {n} feature rows", labels.len()),
        });
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    Dataset {
        features: Mat::from_vec(n, dim, data)?,
        labels,
        classes,
        name: "table".to_string(),
    }
    .validate()
}

/// Write a dataset back out in the same table format; values render with
/// full round-trip precision.
pub fn save_table(ds: &Dataset, features_csv: &Path, labels_csv: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(features_csv)?;
    for r in 0..ds.n() {
        let fields: Vec<String> = ds.features.row(r).iter().map(|v| v.to_string()).collect();
        w.write_record(&fields)?;
    }
    w.flush()?;
    let labels: String = ds.labels.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(labels_csv, labels)?;
    Ok(())
}

/// Draw disjoint train/val index sets (stratified by class unless disabled);
/// every remaining index is test.
pub fn make_splits(
    ds: &Dataset,
    train_count: usize,
    val_count: usize,
    seed: u64,
    stratified: bool,
) -> Result<Split> {
    let n = ds.n();
    if train_count + val_count > n {
        return Err(Error::config(format!(
            "train ({train_count}) + val ({val_count}) exceeds dataset size {n}"
        )));
    }
    let mut rng = stream(seed, Stream::Splits);
    let (train, val) = if stratified {
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
        for (i, &l) in ds.labels.iter().enumerate() {
            per_class[l].push(i);
        }
        for list in per_class.iter_mut() {
            shuffle(&mut rng, list);
        }
        let train = allocate_stratified(&per_class, train_count, 0, "train")?;
        // continue drawing past the indices train consumed
        let train_used = counts_per_class(&train, &ds.labels, ds.classes);
        let val = allocate_stratified_offset(&per_class, val_count, &train_used, "val")?;
        (train, val)
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        shuffle(&mut rng, &mut all);
        let train = all[..train_count].to_vec();
        let val = all[train_count..train_count + val_count].to_vec();
        (train, val)
    };
    let mut taken = vec![false; n];
    for &i in train.iter().chain(val.iter()) {
        taken[i] = true;
    }
    let test: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
    let split = Split { train, val, test };
    split.validate(n)?;
    Ok(split)
}

fn counts_per_class(indices: &[usize], labels: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &i in indices {
        counts[labels[i]] += 1;
    }
    counts
}

fn class_quotas(per_class: &[Vec<usize>], want: usize, label: &str) -> Result<Vec<usize>> {
    let classes = per_class.len();
    let mut quota = vec![want / classes; classes];
    for q in quota.iter_mut().take(want % classes) {
        *q += 1;
    }
    for (c, q) in quota.iter().enumerate() {
        if *q > per_class[c].len() {
            return Err(Error::config(format!(
                "stratified {label} needs {q} samples of class {c}, only {} available",
                per_class[c].len()
            )));
        }
    }
    Ok(quota)
}

fn allocate_stratified(
    per_class: &[Vec<usize>],
    want: usize,
    skip: usize,
    label: &str,
) -> Result<Vec<usize>> {
    let quota = class_quotas(per_class, want, label)?;
    let mut out = Vec::with_capacity(want);
    for (c, q) in quota.iter().enumerate() {
        out.extend_from_slice(&per_class[c][skip..skip + q]);
    }
    Ok(out)
}

fn allocate_stratified_offset(
    per_class: &[Vec<usize>],
    want: usize,
    used: &[usize],
    label: &str,
) -> Result<Vec<usize>> {
    let classes = per_class.len();
    let mut quota = vec![want / classes; classes];
    for q in quota.iter_mut().take(want % classes) {
        *q += 1;
    }
    let mut out = Vec::with_capacity(want);
    for (c, q) in quota.iter().enumerate() {
        if used[c] + q > per_class[c].len() {
            return Err(Error::config(format!(
                "stratified {label} needs {q} more samples of class {c}, only {} left",
                per_class[c].len() - used[c]
            )));
        }
        out.extend_from_slice(&per_class[c][used[c]..used[c] + q]);
    }
    Ok(out)
}

/// Keep `per_class` samples of each class, drawn with the fixed
/// [`SUBSET_SEED`] so the subset is reproducible from the full dataset.
pub fn subset_per_class(ds: &Dataset, per_class: usize) -> Result<Dataset> {
    let mut rng = stream(SUBSET_SEED, Stream::MnistSubset);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        buckets[l].push(i);
    }
    let mut keep = Vec::with_capacity(per_class * ds.classes);
    for (c, bucket) in buckets.iter_mut().enumerate() {
        if bucket.len() < per_class {
            return Err(Error::config(format!(
                "class {c} has only {} samples, need {per_class}",
                bucket.len()
            )));
        }
        shuffle(&mut rng, bucket);
        keep.extend_from_slice(&bucket[..per_class]);
    }
    keep.sort_unstable();
    take_rows(ds, &keep)
}

fn take_rows(ds: &Dataset, rows: &[usize]) -> Result<Dataset> {
    let mut features = Mat::zeros(rows.len(), ds.dim());
    let mut labels = Vec::with_capacity(rows.len());
    for (out_r, &r) in rows.iter().enumerate() {
        features.row_mut(out_r).copy_from_slice(ds.features.row(r));
        labels.push(ds.labels[r]);
    }
    Dataset {
        features,
        labels,
        classes: ds.classes,
        name: format!("{}-subset", ds.name),
    }
    .validate()
}

/// Gaussian blob fixture: class c is centered on a distinct axis-aligned
/// unit point, with `spread`-scaled isotropic noise. Deterministic per seed.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::config("synth_blobs: classes, per_class, dim must be positive"));
    }
    let mut rng = stream(seed, Stream::Synth);
    let n = classes * per_class;
    let mut features = Mat::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let axis = c % dim;
        let magnitude = 1.0 + (c / dim) as f64;
        for s in 0..per_class {
            let r = c * per_class + s;
            let row = features.row_mut(r);
            for v in row.iter_mut() {
                // Box-Muller from two uniform draws
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                *v = spread * z;
            }
            row[axis] += magnitude;
            labels.push(c);
        }
    }
    Dataset {
        features,
        labels,
        classes,
        name: "synth".to_string(),
    }
    .validate()
}

/// Nearest-centroid classification accuracy, used to pre-verify that a
/// synthetic fixture is separable before asking a model to learn it.
pub fn nearest_centroid_accuracy(ds: &Dataset) -> f64 {
    let mut centroids = Mat::zeros(ds.classes, ds.dim());
    let mut counts = vec![0usize; ds.classes];
    for r in 0..ds.n() {
        let c = ds.labels[r];
        counts[c] += 1;
        for (acc, &v) in centroids.row_mut(c).iter_mut().zip(ds.features.row(r)) {
            *acc += v;
        }
    }
    for c in 0..ds.classes {
        if counts[c] > 0 {
            for v in centroids.row_mut(c) {
                *v /= counts[c] as f64;
            }
        }
    }
    let mut correct = 0;
    for r in 0..ds.n() {
        let mut best = (f64::INFINITY, 0usize);
        for c in 0..ds.classes {
            let mut d2 = 0.0;
            for (a, b) in ds.features.row(r).iter().zip(centroids.row(c)) {
                d2 += (a - b) * (a - b);
            }
            if d2 < best.0 {
                best = (d2, c);
            }
        }
        if best.1 == ds.labels[r] {
            correct += 1;
        }
    }
    correct as f64 / ds.n() as f64
}
