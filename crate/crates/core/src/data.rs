//! Datasets: synthetic covariate-shifted domain generation, rotated-domain
//! construction, and IDX/CSV ingestion.
//!
//! File formats accepted here:
//! * IDX (big-endian): magic `0x00000803` + count + rows + cols + u8 pixels
//!   for images, magic `0x00000801` + count + u8 labels for labels. Pixels
//!   are scaled to `[0,1]`.
//! * CSV: one sample per line, `label,f0,f1,...`, constant arity, UTF-8.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One observation: features (vector `[d]` or image `[1,h,w]`), class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Tensor,
    pub label: usize,
}

/// An immutable collection of samples from one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub class_count: usize,
    pub domain: String,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, class_count: usize, domain: &str) -> Result<Self> {
        if let Some(bad) = samples.iter().find(|s| s.label >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {} exceeds class count {class_count}",
                bad.label
            )));
        }
        if let Some(first) = samples.first() {
            if let Some(bad) = samples.iter().find(|s| s.features.shape() != first.features.shape())
            {
                return Err(Error::ShapeMismatch {
                    op: "dataset",
                    lhs: first.features.shape().to_vec(),
                    rhs: bad.features.shape().to_vec(),
                });
            }
        }
        Ok(Dataset {
            samples,
            class_count,
            domain: domain.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_shape(&self) -> &[usize] {
        self.samples
            .first()
            .map(|s| s.features.shape())
            .unwrap_or(&[])
    }

    /// Batch tensor `[k, ...feature_shape]` for the given sample indices.
    pub fn stack(&self, indices: &[usize]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = indices
            .iter()
            .map(|&i| &self.samples[i].features)
            .collect();
        Tensor::stack(&refs)
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].label).collect()
    }

    pub fn stack_all(&self) -> Result<Tensor> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.stack(&all)
    }

    pub fn all_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Sample indices per class.
    pub fn by_class(&self) -> Vec<Vec<usize>> {
        let mut buckets = vec![Vec::new(); self.class_count];
        for (i, s) in self.samples.iter().enumerate() {
            buckets[s.label].push(i);
        }
        buckets
    }

    pub fn with_domain(mut self, domain: &str) -> Self {
        self.domain = domain.to_string();
        self
    }
}

// ── synthetic gaussian domains ───────────────────────────────────────

/// Seeded class centers in `[-4,4]^dim`, re-drawn until pairwise distances
/// are at least 3 so the classification task is well posed.
pub fn gaussian_cluster_centers(classes: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect())
            .collect();
        let mut min_dist = f64::INFINITY;
        for i in 0..classes {
            for j in i + 1..classes {
                let d: f64 = centers[i]
                    .iter()
                    .zip(&centers[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                min_dist = min_dist.min(d);
            }
        }
        if classes < 2 || min_dist >= 3.0 {
            return centers;
        }
    }
}

/// Rotates a point in the plane of the first two coordinates.
pub fn rotate_in_plane(point: &[f64], angle_deg: f64) -> Vec<f64> {
    let rad = angle_deg.to_radians();
    let (sin, cos) = rad.sin_cos();
    let mut out = point.to_vec();
    if point.len() >= 2 {
        out[0] = cos * point[0] - sin * point[1];
        out[1] = sin * point[0] + cos * point[1];
    }
    out
}

fn gaussian_domain(
    centers: &[Vec<f64>],
    per_class: usize,
    domain: &str,
    rng: &mut ChaCha8Rng,
) -> Dataset {
    let dim = centers[0].len();
    let mut samples = Vec::with_capacity(centers.len() * per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let data: Vec<f64> = center
                .iter()
                .map(|&c| c + rng.sample::<f64, _>(StandardNormal))
                .collect();
            samples.push(LabeledSample {
                features: Tensor::from_vec(vec![dim], data).expect("shape"),
                label,
            });
        }
    }
    Dataset::new(samples, centers.len(), domain).expect("valid by construction")
}

/// Source: unit-spread isotropic Gaussian clusters at seeded centers.
/// Target: fresh draws from the same clusters rotated by `rotation_deg`
/// about the origin (in the first two coordinates) and translated by a
/// seeded random direction of magnitude `shift`.
pub fn gen_gaussian_domains(
    classes: usize,
    dim: usize,
    per_class: usize,
    shift: f64,
    rotation_deg: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if per_class < 1 {
        return Err(Error::InvalidArgument("need at least 1 sample per class".into()));
    }
    if dim < 2 && rotation_deg != 0.0 {
        return Err(Error::InvalidArgument(
            "rotation requires at least 2 dimensions".into(),
        ));
    }
    let centers = gaussian_cluster_centers(classes, dim, seed);

    let mut dir_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5113_97a3);
    let direction: Vec<f64> = {
        let raw: Vec<f64> = (0..dim)
            .map(|_| dir_rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        raw.iter().map(|v| v / norm).collect()
    };
    let target_centers: Vec<Vec<f64>> = centers
        .iter()
        .map(|c| {
            rotate_in_plane(c, rotation_deg)
                .iter()
                .zip(&direction)
                .map(|(v, d)| v + shift * d)
                .collect()
        })
        .collect();

    let mut src_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0bad_5eed);
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ea1_c0de);
    let source = gaussian_domain(&centers, per_class, "source", &mut src_rng);
    let target = gaussian_domain(&target_centers, per_class, "target", &mut tgt_rng);
    Ok((source, target))
}

/// One Gaussian domain per angle, all sharing the same seeded class
/// centers rotated in the plane of the first two coordinates.
pub fn gen_rotated_gaussian_domains(
    classes: usize,
    dim: usize,
    per_class: usize,
    angles_deg: &[f64],
    seed: u64,
) -> Result<Vec<Dataset>> {
    if classes < 2 || per_class < 1 {
        return Err(Error::InvalidArgument(
            "need at least 2 classes and 1 sample per class".into(),
        ));
    }
    if dim < 2 {
        return Err(Error::InvalidArgument(
            "rotation requires at least 2 dimensions".into(),
        ));
    }
    let centers = gaussian_cluster_centers(classes, dim, seed);
    angles_deg
        .iter()
        .enumerate()
        .map(|(i, &angle)| {
            let rotated: Vec<Vec<f64>> =
                centers.iter().map(|c| rotate_in_plane(c, angle)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x00d0_17e5 + i as u64));
            Ok(gaussian_domain(&rotated, per_class, &format!("rot{angle}"), &mut rng))
        })
        .collect()
}

// ── image rotation ───────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    Nearest,
}

/// Rotates a `[1,h,w]` image counterclockwise about its center, filling
/// with zeros outside the frame.
pub fn rotate_image(image: &Tensor, angle_deg: f64, interp: Interp) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::ShapeMismatch {
            op: "rotate_image",
            lhs: image.shape().to_vec(),
            rhs: vec![1, 0, 0],
        });
    };
    let rad = angle_deg.to_radians();
    let (sin, cos) = rad.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = image.data();
    let mut out = vec![0.0; image.len()];
    for ch in 0..c {
        let plane = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                // Inverse mapping: rotate the output pixel back by -angle.
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let sy = cy + sin.mul_add(dx, cos * dy);
                let sx = cx + cos.mul_add(dx, -(sin * dy));
                let value = match interp {
                    Interp::Nearest => {
                        let (ry, rx) = (sy.round(), sx.round());
                        if ry >= 0.0 && rx >= 0.0 && ry < h as f64 && rx < w as f64 {
                            src[plane + ry as usize * w + rx as usize]
                        } else {
                            0.0
                        }
                    }
                    Interp::Bilinear => {
                        let (fy, fx) = (sy.floor(), sx.floor());
                        let (ty, tx) = (sy - fy, sx - fx);
                        let mut acc = 0.0;
                        for (oy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
                            for (ox, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
                                let (py, px) = (fy + oy, fx + ox);
                                if wy * wx != 0.0
                                    && py >= 0.0
                                    && px >= 0.0
                                    && py < h as f64
                                    && px < w as f64
                                {
                                    acc += wy * wx * src[plane + py as usize * w + px as usize];
                                }
                            }
                        }
                        acc
                    }
                };
                out[plane + y * w + x] = value;
            }
        }
    }
    Tensor::from_vec(image.shape().to_vec(), out)
}

/// One dataset per angle, each image rotated about its center with
/// bilinear interpolation; labels preserved, distinct domain ids.
pub fn gen_rotated_domains(base: &Dataset, angles_deg: &[f64]) -> Result<Vec<Dataset>> {
    if base.feature_shape().len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "rotated domains need image features, got shape {:?}",
            base.feature_shape()
        )));
    }
    angles_deg
        .iter()
        .map(|&angle| {
            let samples = base
                .samples
                .iter()
                .map(|s| {
                    Ok(LabeledSample {
                        features: rotate_image(&s.features, angle, Interp::Bilinear)?,
                        label: s.label,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Dataset::new(
                samples,
                base.class_count,
                &format!("{}_rot{}", base.domain, angle),
            )
        })
        .collect()
}

// ── IDX ingestion ────────────────────────────────────────────────────

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        Ok(IdxReader {
            path,
            bytes: fs::read(path)?,
            pos: 0,
        })
    }

    fn err(&self, detail: String) -> Error {
        Error::Idx {
            path: self.path.display().to_string(),
            detail,
        }
    }

    fn read_u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(self.err("truncated header".into()));
        }
        let value = u32::from_be_bytes(self.bytes[self.pos..end].try_into().expect("4 bytes"));
        self.pos = end;
        Ok(value)
    }

    fn read_body(&mut self, len: usize) -> Result<&[u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(self.err(format!(
                "truncated body: expected {len} bytes, found {}",
                self.bytes.len() - self.pos
            )));
        }
        Ok(&self.bytes[self.pos..end])
    }
}

/// Loads an IDX image/label file pair. Pixels are scaled to `[0,1]` and
/// stored as `[1,rows,cols]` features.
pub fn load_idx(images_path: &Path, labels_path: &Path, domain: &str) -> Result<Dataset> {
    let mut images = IdxReader::open(images_path)?;
    let magic = images.read_u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(images.err(format!(
            "bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = images.read_u32()? as usize;
    let rows = images.read_u32()? as usize;
    let cols = images.read_u32()? as usize;
    let pixels = images.read_body(count * rows * cols)?.to_vec();

    let mut labels = IdxReader::open(labels_path)?;
    let magic = labels.read_u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(labels.err(format!(
            "bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let label_count = labels.read_u32()? as usize;
    if label_count != count {
        return Err(labels.err(format!(
            "label count {label_count} does not match image count {count}"
        )));
    }
    let label_bytes = labels.read_body(count)?.to_vec();

    let samples: Vec<LabeledSample> = (0..count)
        .map(|i| {
            let data: Vec<f64> = pixels[i * rows * cols..(i + 1) * rows * cols]
                .iter()
                .map(|&b| f64::from(b) / 255.0)
                .collect();
            LabeledSample {
                features: Tensor::from_vec(vec![1, rows, cols], data).expect("shape"),
                label: label_bytes[i] as usize,
            }
        })
        .collect();
    let class_count = samples.iter().map(|s| s.label).max().map_or(0, |m| m + 1);
    Dataset::new(samples, class_count, domain)
}

// ── CSV ingestion ────────────────────────────────────────────────────

/// Loads a `label,f0,f1,...` CSV file. The class count is the maximum
/// label plus one, so label gaps leave empty classes.
pub fn load_csv(path: &Path, domain: &str) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, detail: String| Error::CsvData {
        path: path.display().to_string(),
        line,
        detail,
    };
    let mut samples = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().expect("split yields at least one field");
        let label: usize = label_field
            .trim()
            .parse()
            .map_err(|_| err(line_no, format!("label `{label_field}` is not a non-negative integer")))?;
        let features: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| err(line_no, format!("field `{f}` is not numeric")))
            })
            .collect::<Result<_>>()?;
        if features.is_empty() {
            return Err(err(line_no, "no feature fields".into()));
        }
        match width {
            None => width = Some(features.len()),
            Some(w) if w != features.len() => {
                return Err(err(
                    line_no,
                    format!("ragged row: {} fields, expected {w}", features.len()),
                ))
            }
            _ => {}
        }
        samples.push(LabeledSample {
            features: Tensor::from_vec(vec![features.len()], features)?,
            label,
        });
    }
    if samples.is_empty() {
        return Err(err(0, "no samples".into()));
    }
    let class_count = samples.iter().map(|s| s.label).max().expect("nonempty") + 1;
    Dataset::new(samples, class_count, domain)
}

/// Writes a dataset of vector features in the CSV format accepted by
/// [`load_csv`].
pub fn save_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = String::new();
    for s in &dataset.samples {
        out.push_str(&s.label.to_string());
        for v in s.features.data() {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ── subsampling and preprocessing ────────────────────────────────────

/// Seeded choice of `min(n_per_class, available)` samples per class into a
/// labeled subset; the remainder is the evaluation holdout. The two parts
/// partition the dataset.
pub fn subsample_target(
    dataset: &Dataset,
    n_per_class: usize,
    seed: u64,
) -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; dataset.len()];
    for bucket in dataset.by_class() {
        let mut indices = bucket;
        indices.shuffle(&mut rng);
        for &i in indices.iter().take(n_per_class) {
            chosen[i] = true;
        }
    }
    let split = |keep: bool| -> Vec<LabeledSample> {
        dataset
            .samples
            .iter()
            .zip(&chosen)
            .filter(|(_, &c)| c == keep)
            .map(|(s, _)| s.clone())
            .collect()
    };
    let subset = Dataset {
        samples: split(true),
        class_count: dataset.class_count,
        domain: dataset.domain.clone(),
    };
    let holdout = Dataset {
        samples: split(false),
        class_count: dataset.class_count,
        domain: dataset.domain.clone(),
    };
    (subset, holdout)
}

/// Nearest-neighbor resize of every image to a `side x side` square.
pub fn resize_square_nearest(dataset: &Dataset, side: usize) -> Result<Dataset> {
    let &[c, h, w] = dataset.feature_shape() else {
        return Err(Error::InvalidArgument(
            "resize needs image features".into(),
        ));
    };
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            let src = s.features.data();
            let mut out = vec![0.0; c * side * side];
            for ch in 0..c {
                for y in 0..side {
                    for x in 0..side {
                        let sy = (y * h) / side;
                        let sx = (x * w) / side;
                        out[(ch * side + y) * side + x] = src[(ch * h + sy) * w + sx];
                    }
                }
            }
            Ok(LabeledSample {
                features: Tensor::from_vec(vec![c, side, side], out)?,
                label: s.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, dataset.class_count, &dataset.domain)
}

/// Per-feature mean and standard deviation over a dataset.
pub fn feature_stats(dataset: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let dim = dataset.feature_shape().iter().product();
    let n = dataset.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for s in &dataset.samples {
        for (m, v) in mean.iter_mut().zip(s.features.data()) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for s in &dataset.samples {
        for ((v, m), x) in var.iter_mut().zip(&mean).zip(s.features.data()) {
            *v += (x - m) * (x - m) / n;
        }
    }
    (mean, var.iter().map(|v| v.sqrt()).collect())
}

/// Applies `(x - mean) / max(std, 1e-12)` featurewise, keeping shapes.
pub fn standardize(dataset: &Dataset, mean: &[f64], std: &[f64]) -> Result<Dataset> {
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            let data: Vec<f64> = s
                .features
                .data()
                .iter()
                .zip(mean)
                .zip(std)
                .map(|((&x, &m), &sd)| (x - m) / sd.max(1e-12))
                .collect();
            Ok(LabeledSample {
                features: Tensor::from_vec(s.features.shape().to_vec(), data)?,
                label: s.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, dataset.class_count, &dataset.domain)
}
