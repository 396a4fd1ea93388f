//! Datasets and batching.
//!
//! Two sources feed the trainer: a synthetic classification problem
//! generated from class prototypes (what the tests and the demo
//! train on), and a directory of tensor files listed by a
//! `manifest.tsv` (one `relative-path<TAB>label` line per sample).
//! Every image in a dataset shares one `(channels, height, width)`
//! shape and labels are dense in `0..classes`.
//!
//! Batching shuffles sample order with a stream seeded by `(seed,
//! epoch)`, so a run is reproducible end to end while each epoch
//! still sees a fresh permutation. The trailing partial batch is
//! kept: every sample contributes to every epoch.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::standard_normal;
use crate::tensor::{io::load_tensor, Shape, Tensor};

/// One labeled image, stored with a batch extent of 1.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: usize,
}

/// An in-memory dataset of identically shaped samples.
#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<Sample>,
    classes: usize,
    image_shape: Shape,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, classes: usize) -> Result<Dataset> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Dataset("a dataset needs at least one sample".into()))?;
        let image_shape = first.image.shape();
        if image_shape.n != 1 {
            return Err(Error::Dataset(format!(
                "samples carry a batch extent of 1, got {}",
                image_shape
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.image.shape() != image_shape {
                return Err(Error::Dataset(format!(
                    "sample {i} has shape {}, expected {}",
                    s.image.shape(),
                    image_shape
                )));
            }
            if s.label >= classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes,
                });
            }
        }
        Ok(Dataset {
            samples,
            classes,
            image_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Shape of one sample (batch extent 1).
    pub fn image_shape(&self) -> Shape {
        self.image_shape
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
}

/// Draws a linearly separable-ish classification problem: each class
/// gets a Gaussian prototype image, and each sample is its class
/// prototype plus `noise` times fresh Gaussian noise. Small networks
/// must be able to overfit this; if they cannot, the trainer is
/// broken.
pub fn synthetic_dataset(
    classes: usize,
    per_class: usize,
    channels: usize,
    height: usize,
    width: usize,
    noise: f32,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || per_class == 0 {
        return Err(Error::Dataset(
            "need at least two classes and one sample per class".into(),
        ));
    }
    let shape = Shape::new(1, channels, height, width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f32>> = (0..classes)
        .map(|_| {
            (0..shape.len())
                .map(|_| standard_normal(&mut rng) as f32)
                .collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(classes * per_class);
    for label in 0..classes {
        for _ in 0..per_class {
            let data: Vec<f32> = prototypes[label]
                .iter()
                .map(|p| p + noise * standard_normal(&mut rng) as f32)
                .collect();
            samples.push(Sample {
                image: Tensor::from_vec(shape, data)?,
                label,
            });
        }
    }
    Dataset::new(samples, classes)
}

/// Loads a dataset from `dir/manifest.tsv`. Each line is
/// `relative-path<TAB>label`; blank lines and lines starting with
/// `#` are skipped. Labels must cover `0..classes` densely enough
/// that the maximum seen label defines the class count.
pub fn load_manifest_dir(dir: &Path) -> Result<Dataset> {
    let manifest = dir.join("manifest.tsv");
    let text = std::fs::read_to_string(&manifest)
        .map_err(|e| Error::Dataset(format!("{}: {e}", manifest.display())))?;
    let mut samples = Vec::new();
    let mut max_label = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (rel, label) = line.split_once('\t').ok_or_else(|| {
            Error::Dataset(format!(
                "{}:{}: expected `path<TAB>label`",
                manifest.display(),
                lineno + 1
            ))
        })?;
        let label: usize = label.trim().parse().map_err(|_| {
            Error::Dataset(format!(
                "{}:{}: label `{label}` is not a non-negative integer",
                manifest.display(),
                lineno + 1
            ))
        })?;
        let image: Tensor<f32> = load_tensor(&dir.join(rel))?;
        max_label = max_label.max(label);
        samples.push(Sample { image, label });
    }
    Dataset::new(samples, max_label + 1)
}

/// Square crop of a random area fraction in `[min_area, 1]`,
/// resized back to the source extent with nearest-neighbor lookups.
/// This is the only augmentation in the crate; it exists to make the
/// training loop's hook-up honest rather than to chase accuracy.
pub fn random_resized_crop(
    image: &Tensor<f32>,
    min_area: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<f32>> {
    if !(0.0 < min_area && min_area <= 1.0) {
        return Err(Error::Dataset(format!(
            "crop area fraction must lie in (0, 1], got {min_area}"
        )));
    }
    let s = image.shape();
    let area = rng.gen_range(min_area..=1.0);
    let frac = area.sqrt();
    let ch = ((s.h as f64 * frac).round() as usize).clamp(1, s.h);
    let cw = ((s.w as f64 * frac).round() as usize).clamp(1, s.w);
    let y0 = rng.gen_range(0..=s.h - ch);
    let x0 = rng.gen_range(0..=s.w - cw);
    let mut out = Tensor::zeros(s)?;
    let src = image.data();
    let dst = out.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                // Nearest source row within the crop window.
                let sy = y0 + (y * ch) / s.h;
                for x in 0..s.w {
                    let sx = x0 + (x * cw) / s.w;
                    dst[s.index(n, c, y, x)] = src[s.index(n, c, sy, sx)];
                }
            }
        }
    }
    Ok(out)
}

/// One training batch: stacked images and their labels.
pub type Batch = (Tensor<f32>, Vec<usize>);

/// Assembles the shuffled batches for one epoch. The permutation
/// depends only on `(seed, epoch)`.
pub fn make_batches(data: &Dataset, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Dataset("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    order.shuffle(&mut rng);
    let s = data.image_shape();
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let shape = Shape::new(chunk.len(), s.c, s.h, s.w);
        let mut images = Tensor::zeros(shape)?;
        let mut labels = Vec::with_capacity(chunk.len());
        let plane = s.c * s.h * s.w;
        for (bi, &si) in chunk.iter().enumerate() {
            let sample = &data.samples()[si];
            images.data_mut()[bi * plane..(bi + 1) * plane].copy_from_slice(sample.image.data());
            labels.push(sample.label);
        }
        batches.push((images, labels));
    }
    Ok(batches)
}
