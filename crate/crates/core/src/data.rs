//! Datasets, IDX files, synthetic blobs and labeled/unlabeled/validation splits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::graph;
use crate::matrix::Matrix;
use crate::rng::Rng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];
const PARTITION_STREAM: u64 = 0x5eed_0001;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Option<Vec<usize>>,
    pub n_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(x: Matrix, y: Option<Vec<usize>>, n_classes: usize, name: impl Into<String>) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::Config("dataset features must be finite".into()));
        }
        if let Some(y) = &y {
            if y.len() != x.rows() {
                return Err(Error::Consistency(format!(
                    "{} labels for {} examples",
                    y.len(),
                    x.rows()
                )));
            }
            if let Some((row, &label)) = y.iter().enumerate().find(|(_, &l)| l >= n_classes) {
                return Err(Error::Label {
                    row,
                    label,
                    n_classes,
                });
            }
        }
        Ok(Dataset {
            x,
            y,
            n_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.y
            .as_deref()
            .ok_or_else(|| Error::Config(format!("dataset {} has no labels", self.name)))
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
            n_classes: self.n_classes,
            name: self.name.clone(),
        }
    }

    /// Number of examples per class; requires labels.
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.n_classes];
        for &l in self.labels()? {
            counts[l] += 1;
        }
        Ok(counts)
    }

    /// Writes features (and labels if present) in the embedding CSV layout.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        graph::export_embedding(&self.x, self.y.as_deref(), path)
    }

    pub fn read_csv(path: impl AsRef<Path>, n_classes: usize, name: impl Into<String>) -> Result<Self> {
        let (x, y) = graph::read_embedding(path)?;
        Dataset::new(x, y, n_classes, name)
    }
}

/// Subtracts each row's mean from that row.
pub fn center_samples(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    let cols = x.cols().max(1) as f64;
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / cols;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    out
}

/// A parsed unsigned-byte IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

impl IdxFile {
    pub fn magic(&self) -> u32 {
        0x0800 | self.dims.len() as u32
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&self.magic().to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        MultiGzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("bad gzip stream: {e}")))?;
        return Ok(out);
    }
    Ok(raw)
}

/// Parses an unsigned-byte IDX buffer, checking the magic against `expected`.
pub fn parse_idx(buf: &[u8], expected: u32, path: &Path) -> Result<IdxFile> {
    if buf.len() < 4 {
        return Err(Error::format(path, format!("truncated: {} bytes, no magic", buf.len())));
    }
    let magic = u32::from_be_bytes(buf[..4].try_into().unwrap());
    if magic != expected {
        return Err(Error::format(
            path,
            format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    if buf.len() < header {
        return Err(Error::format(
            path,
            format!("truncated header: {} bytes, need {header}", buf.len()),
        ));
    }
    let dims: Vec<u32> = buf[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()))
        .collect();
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::format(path, "dimension product overflows"))?;
    let body = &buf[header..];
    if body.len() != len {
        return Err(Error::format(
            path,
            format!(
                "length mismatch: header {dims:?} implies {len} data bytes, found {}",
                body.len()
            ),
        ));
    }
    Ok(IdxFile {
        dims,
        data: body.to_vec(),
    })
}

pub fn read_idx(path: impl AsRef<Path>, expected: u32) -> Result<IdxFile> {
    let path = path.as_ref();
    parse_idx(&read_maybe_gz(path)?, expected, path)
}

pub fn write_idx(idx: &IdxFile, path: impl AsRef<Path>, gzip: bool) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let bytes = idx.to_bytes();
    let res = if gzip {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(&bytes)
            .and_then(|_| enc.finish())
            .and_then(|mut w| w.flush())
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(&bytes).and_then(|_| w.flush())
    };
    res.map_err(|e| Error::io(path, e))
}

/// Loads an MNIST image/label pair; features are bytes divided by 255.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let img = read_idx(images, IDX_IMAGES_MAGIC)?;
    let lab = read_idx(labels, IDX_LABELS_MAGIC)?;
    let m = img.dims[0] as usize;
    if lab.dims[0] as usize != m {
        return Err(Error::Consistency(format!(
            "{} has {m} images but {} has {} labels",
            images.display(),
            labels.display(),
            lab.dims[0]
        )));
    }
    let d = (img.dims[1] * img.dims[2]) as usize;
    let data = img.data.iter().map(|&b| b as f64 / 255.0).collect();
    let x = Matrix::new(m, d, data)?;
    let y = lab.data.iter().map(|&b| b as usize).collect();
    let name = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mnist".into());
    Dataset::new(x, Some(y), 10, name)
}

fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf> {
    for candidate in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&candidate);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found (plain or .gz)"),
    ))
}

/// Loads `(train, test)` from a directory holding the four standard MNIST files.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = load_mnist_idx(
        find_idx(dir, "train-images-idx3-ubyte")?,
        find_idx(dir, "train-labels-idx1-ubyte")?,
    )?;
    let test = load_mnist_idx(
        find_idx(dir, "t10k-images-idx3-ubyte")?,
        find_idx(dir, "t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test))
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Unit directions scaled by `separation`, one row per class.
///
/// The first `min(n_classes, dim)` directions are Gram-Schmidt orthonormalized
/// Gaussian draws. Beyond that, each extra direction is the best of 64 random
/// candidates by largest minimum angle to those already chosen.
pub fn blob_centers(n_classes: usize, dim: usize, separation: f64, rng: &mut Rng) -> Matrix {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    while dirs.len() < n_classes.min(dim) {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for d in &dirs {
            let dot: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(d).for_each(|(a, b)| *a -= dot * b);
        }
        if normalize(&mut v) {
            dirs.push(v);
        }
    }
    while dirs.len() < n_classes {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..64 {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            if !normalize(&mut v) {
                continue;
            }
            let max_cos = dirs
                .iter()
                .map(|d| v.iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            if best.as_ref().is_none_or(|(c, _)| max_cos < *c) {
                best = Some((max_cos, v));
            }
        }
        dirs.push(best.expect("64 gaussian draws are never all zero").1);
    }
    Matrix::from_fn(n_classes, dim, |c, j| separation * dirs[c][j])
}

/// `per_class` points around each center, class-major order.
pub fn sample_blobs(centers: &Matrix, per_class: usize, noise: f64, rng: &mut Rng, name: &str) -> Result<Dataset> {
    let (n_classes, dim) = centers.shape();
    let m = n_classes * per_class;
    let mut x = Matrix::zeros(m, dim);
    let mut y = Vec::with_capacity(m);
    for c in 0..n_classes {
        for k in 0..per_class {
            let row = x.row_mut(c * per_class + k);
            for (v, &mu) in row.iter_mut().zip(centers.row(c)) {
                *v = mu + noise * rng.normal();
            }
            y.push(c);
        }
    }
    Dataset::new(x, Some(y), n_classes, name)
}

pub fn make_blobs(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    noise: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    if n_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::Config(format!(
            "blobs need positive counts, got n_classes={n_classes} per_class={per_class} dim={dim}"
        )));
    }
    let centers = blob_centers(n_classes, dim, separation, rng);
    sample_blobs(&centers, per_class, noise, rng, "blobs")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub m_l: usize,
    pub validation_size: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self, n_classes: usize, m: usize) -> Result<()> {
        if n_classes == 0 || self.m_l == 0 || !self.m_l.is_multiple_of(n_classes) {
            return Err(Error::Config(format!(
                "m_L={} must be a positive multiple of n_classes={n_classes}",
                self.m_l
            )));
        }
        if self.m_l + self.validation_size > m {
            return Err(Error::Config(format!(
                "m_L + validation_size = {} exceeds {m} examples",
                self.m_l + self.validation_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub x_l: Matrix,
    pub t_l: Vec<usize>,
    /// Every non-validation row, labeled rows included, without labels.
    pub x_u: Matrix,
    pub x_val: Matrix,
    pub t_val: Vec<usize>,
    pub idx_l: Vec<usize>,
    pub idx_u: Vec<usize>,
    pub idx_val: Vec<usize>,
}

/// Largest-remainder apportionment of `total` proportional to `weights`;
/// remainder ties go to the lower index.
fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut out: Vec<usize> = weights.iter().map(|&w| total * w / sum).collect();
    let mut rest: Vec<(usize, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| (total * w % sum, i))
        .collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - out.iter().sum::<usize>();
    for &(_, i) in rest.iter().take(short) {
        out[i] += 1;
    }
    out
}

/// Stratified seeded split: `m_L / n_classes` labeled rows per class, then a
/// validation set drawn proportionally from what is left of each class.
pub fn partition(ds: &Dataset, spec: &SplitSpec) -> Result<Partition> {
    let labels = ds.labels()?;
    let n = ds.n_classes;
    spec.validate(n, ds.len())?;
    let per_class = spec.m_l / n;
    let mut rng = Rng::new(spec.seed, PARTITION_STREAM);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(Error::Config(format!(
                "class {c} has {} examples, {per_class} labeled ones requested",
                members.len()
            )));
        }
        rng.shuffle(members);
    }
    let remaining: Vec<usize> = by_class.iter().map(|m| m.len() - per_class).collect();
    let quotas = apportion(spec.validation_size, &remaining);

    let mut idx_l = Vec::with_capacity(spec.m_l);
    let mut idx_val = Vec::with_capacity(spec.validation_size);
    for (members, &q) in by_class.iter().zip(&quotas) {
        idx_l.extend_from_slice(&members[..per_class]);
        idx_val.extend_from_slice(&members[per_class..per_class + q]);
    }
    idx_l.sort_unstable();
    idx_val.sort_unstable();
    let mut in_val = vec![false; ds.len()];
    idx_val.iter().for_each(|&i| in_val[i] = true);
    let idx_u: Vec<usize> = (0..ds.len()).filter(|&i| !in_val[i]).collect();

    Ok(Partition {
        x_l: ds.x.select_rows(&idx_l),
        t_l: idx_l.iter().map(|&i| labels[i]).collect(),
        x_u: ds.x.select_rows(&idx_u),
        x_val: ds.x.select_rows(&idx_val),
        t_val: idx_val.iter().map(|&i| labels[i]).collect(),
        idx_l,
        idx_u,
        idx_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn tiny_idx() -> IdxFile {
        IdxFile {
            dims: vec![3, 2, 2],
            data: vec![0, 255, 128, 1, 2, 3, 4, 5, 250, 251, 252, 253],
        }
    }

    fn labels_idx(labels: &[u8]) -> IdxFile {
        IdxFile {
            dims: vec![labels.len() as u32],
            data: labels.to_vec(),
        }
    }

    #[test]
    fn idx_round_trip_plain_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        for gzip in [false, true] {
            let p = dir.path().join(format!("img{gzip}"));
            write_idx(&tiny_idx(), &p, gzip).unwrap();
            let back = read_idx(&p, IDX_IMAGES_MAGIC).unwrap();
            assert_eq!(back, tiny_idx());
            assert_eq!(back.to_bytes(), tiny_idx().to_bytes());
        }
        let plain = std::fs::read(dir.path().join("imgfalse")).unwrap();
        assert_eq!(&plain[..8], &[0, 0, 8, 3, 0, 0, 0, 3]);
    }

    #[test]
    fn mnist_pair_normalizes_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&tiny_idx(), &ip, false).unwrap();
        write_idx(&labels_idx(&[7, 0, 9]), &lp, true).unwrap();
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.n_classes), (3, 4, 10));
        assert_eq!(ds.x.get(0, 0), 0.0);
        assert_eq!(ds.x.get(0, 1), 1.0);
        assert_eq!(ds.x.get(0, 2), 128.0 / 255.0);
        assert_eq!(ds.y.as_deref(), Some(&[7, 0, 9][..]));
    }

    #[test]
    fn mnist_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&tiny_idx(), &ip, false).unwrap();
        write_idx(&labels_idx(&[1, 2]), &lp, false).unwrap();
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(Error::Consistency(_))));

        let err = load_mnist_idx(&ip, &ip).unwrap_err().to_string();
        assert!(err.contains("0x00000803"), "{err}");

        let mut bytes = tiny_idx().to_bytes();
        bytes.pop();
        std::fs::write(&ip, &bytes).unwrap();
        let err = read_idx(&ip, IDX_IMAGES_MAGIC).unwrap_err().to_string();
        assert!(err.contains("length mismatch"), "{err}");
        std::fs::write(&ip, [0u8, 0, 8]).unwrap();
        assert!(read_idx(&ip, IDX_IMAGES_MAGIC).is_err());
        std::fs::write(&ip, [0u8, 0, 8, 3, 0, 0]).unwrap();
        assert!(read_idx(&ip, IDX_IMAGES_MAGIC).unwrap_err().to_string().contains("truncated"));
        assert!(matches!(load_mnist_dir(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn dataset_validation() {
        let x = Matrix::zeros(2, 2);
        assert!(Dataset::new(x.clone(), Some(vec![0, 3]), 3, "d").is_err());
        assert!(Dataset::new(x.clone(), Some(vec![0]), 3, "d").is_err());
        assert!(Dataset::new(Matrix::filled(1, 1, f64::NAN), None, 1, "d").is_err());
        let ds = Dataset::new(x, None, 2, "d").unwrap();
        assert!(ds.labels().is_err());
    }

    #[test]
    fn centering_zeroes_row_means() {
        let c = center_samples(&Matrix::from_rows(&[[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]]));
        assert_eq!(c, Matrix::from_rows(&[[-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]]));
    }

    #[test]
    fn blobs_without_noise_sit_on_centers() {
        let mut rng = Rng::new(4, 0);
        let ds = make_blobs(3, 5, 4, 2.0, 0.0, &mut rng).unwrap();
        assert_eq!(ds.len(), 15);
        let y = ds.labels().unwrap();
        for i in 0..15 {
            let first = ds.x.row(y[i] * 5);
            assert_eq!(ds.x.row(i), first);
        }
        let norm: f64 = ds.x.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 2.0).abs() < 1e-12);
        assert!(make_blobs(0, 5, 4, 2.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn blobs_are_seeded() {
        let a = make_blobs(4, 10, 3, 5.0, 1.0, &mut Rng::new(8, 0)).unwrap();
        let b = make_blobs(4, 10, 3, 5.0, 1.0, &mut Rng::new(8, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nearest_centroid_separates_wide_blobs() {
        let mut rng = Rng::new(11, 0);
        let ds = make_blobs(4, 250, 2, 10.0, 1.0, &mut rng).unwrap();
        let y = ds.labels().unwrap();
        let mut centroids = Matrix::zeros(4, 2);
        for (row, &c) in ds.x.row_iter().zip(y) {
            for j in 0..2 {
                centroids.set(c, j, centroids.get(c, j) + row[j] / 250.0);
            }
        }
        let correct = ds
            .x
            .row_iter()
            .zip(y)
            .filter(|(row, &c)| {
                let d = |k: usize| (0..2).map(|j| (row[j] - centroids.get(k, j)).powi(2)).sum::<f64>();
                (0..4).min_by(|&a, &b| d(a).total_cmp(&d(b))) == Some(c)
            })
            .count();
        assert!(correct as f64 / 1000.0 > 0.99, "accuracy {}", correct as f64 / 1000.0);
    }

    #[test]
    fn apportion_examples() {
        assert_eq!(apportion(10, &[1, 1, 1]), vec![4, 3, 3]);
        assert_eq!(apportion(5, &[10, 0, 30]), vec![1, 0, 4]);
        assert_eq!(apportion(0, &[3, 4]), vec![0, 0]);
    }

    fn labelled(per_class: &[usize]) -> Dataset {
        let y: Vec<usize> = per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
            .collect();
        let x = Matrix::from_fn(y.len(), 2, |i, j| (i * 2 + j) as f64);
        Dataset::new(x, Some(y), per_class.len(), "t").unwrap()
    }

    #[test]
    fn partition_examples() {
        let ds = labelled(&[30; 10]);
        let spec = SplitSpec {
            m_l: 100,
            validation_size: 50,
            seed: 3,
        };
        let p = partition(&ds, &spec).unwrap();
        let mut counts = vec![0; 10];
        p.t_l.iter().for_each(|&c| counts[c] += 1);
        assert_eq!(counts, vec![10; 10]);
        assert_eq!(p.idx_val.len(), 50);
        assert_eq!(p.idx_u.len(), 250);
        assert!(p.idx_l.iter().all(|i| p.idx_u.contains(i)));
        assert!(p.idx_val.iter().all(|i| !p.idx_u.contains(i) && !p.idx_l.contains(i)));
        assert_eq!(p, partition(&ds, &spec).unwrap());
        assert_eq!(p.x_l.row(0), ds.x.row(p.idx_l[0]));
        assert_ne!(p.idx_l, partition(&ds, &SplitSpec { seed: 4, ..spec }).unwrap().idx_l);
    }

    #[test]
    fn partition_errors() {
        let ds = labelled(&[5, 2]);
        let spec = |m_l, v| SplitSpec {
            m_l,
            validation_size: v,
            seed: 0,
        };
        assert!(partition(&ds, &spec(3, 0)).is_err());
        assert!(partition(&ds, &spec(6, 0)).is_err());
        assert!(partition(&ds, &spec(4, 4)).is_err());
        let unlabeled = Dataset::new(Matrix::zeros(4, 1), None, 2, "u").unwrap();
        assert!(partition(&unlabeled, &spec(2, 0)).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = make_blobs(2, 3, 2, 1.0, 0.5, &mut Rng::new(1, 1)).unwrap();
        let p = dir.path().join("blobs.csv");
        ds.write_csv(&p).unwrap();
        assert_eq!(Dataset::read_csv(&p, 2, "blobs").unwrap(), ds);
    }

    proptest! {
        #[test]
        fn partition_is_stratified_and_disjoint(
            seed in any::<u64>(),
            sizes in proptest::collection::vec(8usize..20, 2..5),
            per in 1usize..5,
            val in 0usize..10,
        ) {
            let ds = labelled(&sizes);
            let n = sizes.len();
            let spec = SplitSpec { m_l: per * n, validation_size: val, seed };
            let p = partition(&ds, &spec).unwrap();
            let mut counts = vec![0; n];
            p.t_l.iter().for_each(|&c| counts[c] += 1);
            prop_assert!(counts.iter().all(|&c| c == per));
            prop_assert_eq!(p.idx_val.len(), val);
            prop_assert_eq!(p.idx_u.len() + val, ds.len());
            let mut seen = vec![0u8; ds.len()];
            p.idx_val.iter().chain(&p.idx_u).for_each(|&i| seen[i] += 1);
            prop_assert!(seen.iter().all(|&s| s == 1));
        }

        #[test]
        fn idx_bytes_round_trip(dims in proptest::collection::vec(1u32..5, 1..4), seed in any::<u64>()) {
            let mut rng = Rng::new(seed, 0);
            let len = dims.iter().product::<u32>() as usize;
            let idx = IdxFile { dims, data: (0..len).map(|_| rng.below(256) as u8).collect() };
            let bytes = idx.to_bytes();
            let back = parse_idx(&bytes, idx.magic(), Path::new("mem")).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
