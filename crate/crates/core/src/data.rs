//! Datasets: seeded Gaussian blobs, MNIST-style IDX files, and the random
//! known/unknown class split.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{SplitMix64, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n x d`
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.rows() != labels.len() && !(inputs.is_empty() && labels.is_empty()) {
            return Err(Error::dim(
                "Dataset::new",
                format!("{} input rows, {} labels", inputs.rows(), labels.len()),
            ));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range for {class_count} classes"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Splits each class into its first `per_class` samples and the rest,
    /// preserving order within each part.
    pub fn partition_per_class(&self, per_class: usize) -> (Dataset, Dataset) {
        let mut seen = vec![0; self.class_count];
        let (mut first, mut rest) = (Vec::new(), Vec::new());
        for (i, &l) in self.labels.iter().enumerate() {
            if seen[l] < per_class {
                first.push(i);
            } else {
                rest.push(i);
            }
            seen[l] += 1;
        }
        (self.subset(&first), self.subset(&rest))
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }
}

/// Parameters for [`gen_blobs`].
#[derive(Clone, Debug, PartialEq)]
pub struct BlobParams {
    pub classes: usize,
    pub dims: usize,
    pub n_per_class: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

/// Minimum pairwise angle between class-mean directions.
const MIN_MEAN_ANGLE_DEG: f64 = 15.0;

/// Class means on the sphere of radius `separation`, rejection-sampled so
/// every pair of directions is more than 15 degrees apart.
pub fn blob_means(params: &BlobParams) -> Result<Vec<Vec<f64>>> {
    if params.classes < 2 || params.dims < 2 {
        return Err(Error::InvalidArgument(format!(
            "blobs need >= 2 classes and >= 2 dims, got {} and {}",
            params.classes, params.dims
        )));
    }
    let mut rng = SplitMix64::stream(params.seed, Stream::Data);
    let max_cos = MIN_MEAN_ANGLE_DEG.to_radians().cos();
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(params.classes);
    let mut attempts = 0;
    while dirs.len() < params.classes {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::InvalidArgument(format!(
                "cannot place {} well-separated means in {} dims",
                params.classes, params.dims
            )));
        }
        let v: Vec<f64> = (0..params.dims).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        let v: Vec<f64> = v.iter().map(|x| x / norm).collect();
        let ok = dirs
            .iter()
            .all(|d| d.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() < max_cos);
        if ok {
            dirs.push(v);
        }
    }
    Ok(dirs
        .into_iter()
        .map(|d| d.into_iter().map(|x| x * params.separation).collect())
        .collect())
}

/// Isotropic Gaussian blobs around seeded class means, class-major order.
pub fn gen_blobs(params: &BlobParams) -> Result<Dataset> {
    let means = blob_means(params)?;
    // Samples draw from their own stream so the means do not depend on n.
    let mut rng = SplitMix64::stream(params.seed.wrapping_add(0x5EED), Stream::Data);
    let (k, d, m) = (params.classes, params.dims, params.n_per_class);
    let mut data = Vec::with_capacity(k * m * d);
    let mut labels = Vec::with_capacity(k * m);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..m {
            for &mu in mean {
                data.push(mu + params.noise * rng.normal());
            }
            labels.push(c);
        }
    }
    Dataset::new(Tensor::matrix(k * m, d, data)?, labels, k)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl Reader<'_> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            source_name: self.name.to_string(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let end = self.pos + 4;
        let Some(chunk) = self.bytes.get(self.pos..end) else {
            return Err(self.err(self.pos, format!("truncated before {field}")));
        };
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.err(
                self.bytes.len(),
                format!(
                    "truncated {what}: need {len} bytes from offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            ));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let got = self.u32("magic number")?;
        if got != expected {
            return Err(self.err(0, format!("bad magic 0x{got:08x}, expected 0x{expected:08x}")));
        }
        Ok(())
    }
}

/// Raw IDX image payload: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], name: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = Reader { bytes, pos: 0, name };
    r.magic(IDX_IMAGES_MAGIC)?;
    let n = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let len = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| r.err(4, "image dimensions overflow"))?;
    let pixels = r.take(len, "pixel data")?.to_vec();
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8], name: &str) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, pos: 0, name };
    r.magic(IDX_LABELS_MAGIC)?;
    let n = r.u32("label count")? as usize;
    Ok(r.take(n, "label data")?.to_vec())
}

/// Loads an IDX image/label file pair; pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();
    let (n, rows, cols, pixels) = parse_idx_images(&img_bytes, &img_name)?;
    let labels = parse_idx_labels(&lbl_bytes, &lbl_name)?;
    if labels.len() != n {
        return Err(Error::Format {
            source_name: lbl_name,
            offset: 4,
            reason: format!(
                "label count {} does not match image count {n} in {img_name}",
                labels.len()
            ),
        });
    }
    let d = rows * cols;
    let inputs = Tensor::matrix(n, d, pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(inputs, labels, class_count)
}

pub fn encode_idx_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [images.len(), rows, cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for img in images {
        assert_eq!(img.len(), rows * cols, "image size");
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// File names written by [`write_fixtures`].
pub mod fixtures {
    pub const IMAGES: &str = "fixture-images-idx3-ubyte";
    pub const LABELS: &str = "fixture-labels-idx1-ubyte";
    pub const BAD_MAGIC_IMAGES: &str = "fixture-badmagic-idx3-ubyte";

    pub const PIXELS: [[u8; 4]; 2] = [[0, 255, 128, 0], [1, 2, 3, 4]];
    pub const LABEL_VALUES: [u8; 2] = [3, 7];
}

/// Writes the hand-built 2-image 2x2 IDX pair and a copy of the image file
/// whose magic number is corrupted to `0x00000802`.
pub fn write_fixtures(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let images: Vec<Vec<u8>> = fixtures::PIXELS.iter().map(|p| p.to_vec()).collect();
    let img = encode_idx_images(2, 2, &images);
    fs::write(dir.join(fixtures::IMAGES), &img)?;
    fs::write(dir.join(fixtures::LABELS), encode_idx_labels(&fixtures::LABEL_VALUES))?;
    let mut bad = img;
    bad[..4].copy_from_slice(&0x0000_0802u32.to_be_bytes());
    fs::write(dir.join(fixtures::BAD_MAGIC_IMAGES), bad)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub known_classes: Vec<usize>,
    pub unknown_classes: Vec<usize>,
    pub seed: u64,
}

/// Seeded shuffle of `0..classes`; the first `n_known` become known.
pub fn make_split(classes: usize, n_known: usize, seed: u64) -> Result<SplitSpec> {
    if n_known == 0 || n_known >= classes {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= n_known < classes, got n_known={n_known}, classes={classes}"
        )));
    }
    let mut order: Vec<usize> = (0..classes).collect();
    SplitMix64::stream(seed, Stream::Split).shuffle(&mut order);
    let unknown = order.split_off(n_known);
    Ok(SplitSpec {
        known_classes: order,
        unknown_classes: unknown,
        seed,
    })
}

/// Known classes remapped to `0..N`; unknown test samples carry no label.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDatasets {
    pub train_known: Dataset,
    pub test_known: Dataset,
    pub test_unknown: Tensor,
}

/// Filters and relabels train/test data according to `spec`. Samples of
/// classes in neither list are dropped; unknown-class training samples are
/// never kept.
pub fn apply_split(train: &Dataset, test: &Dataset, spec: &SplitSpec) -> Result<SplitDatasets> {
    let max_class = train.class_count.max(test.class_count);
    if let Some(&c) = spec
        .known_classes
        .iter()
        .chain(&spec.unknown_classes)
        .find(|&&c| c >= max_class)
    {
        return Err(Error::InvalidArgument(format!(
            "split references class {c}, dataset has {max_class}"
        )));
    }
    let mut remap = vec![None; max_class];
    for (new, &old) in spec.known_classes.iter().enumerate() {
        remap[old] = Some(new);
    }
    let n_known = spec.known_classes.len();

    let known_part = |d: &Dataset| -> Result<Dataset> {
        let idx: Vec<usize> = (0..d.len()).filter(|&i| remap[d.labels[i]].is_some()).collect();
        let mut sub = d.subset(&idx);
        sub.labels = idx.iter().map(|&i| remap[d.labels[i]].expect("filtered")).collect();
        sub.class_count = n_known;
        if sub.is_empty() {
            sub.inputs = Tensor::zeros(0, d.dim());
        }
        Ok(sub)
    };
    let unknown_idx: Vec<usize> = (0..test.len())
        .filter(|&i| spec.unknown_classes.contains(&test.labels[i]))
        .collect();
    let mut test_unknown = test.inputs.select_rows(&unknown_idx);
    if unknown_idx.is_empty() {
        test_unknown = Tensor::zeros(0, test.dim());
    }
    Ok(SplitDatasets {
        train_known: known_part(train)?,
        test_known: known_part(test)?,
        test_unknown,
    })
}
