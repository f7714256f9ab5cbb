//! Datasets: IDX and PPM/PGM ingestion, black-image datasets, random resized
//! crops, shift application, and the two-domain mix used for DA training.

mod crop;
mod idx;
mod pnm;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};
use crate::shifts::ShiftSpec;

pub use crop::{random_resized_crop, resized_crop, sample_crop, CropBox, CROP_RATIO, CROP_SCALE};
pub use idx::{read_idx_images, read_idx_labels, to_byte, write_idx_images, write_idx_labels};
pub use pnm::{read_pnm, write_pnm};

/// Images with integer class labels. All images share one `[H, W, C]` shape
/// and hold values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Tensor>,
    labels: Vec<usize>,
    name: String,
    applied_shift: ShiftSpec,
}

impl LabeledDataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if images.len() != labels.len() {
            return Err(Error::input(format!(
                "{name}: {} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            if first.shape().len() != 3 {
                return Err(Error::input(format!(
                    "{name}: images must be [H, W, C], got {:?}",
                    first.shape()
                )));
            }
            for (i, im) in images.iter().enumerate() {
                if im.shape() != first.shape() {
                    return Err(Error::input(format!(
                        "{name}: image {i} has shape {:?}, expected {:?}",
                        im.shape(),
                        first.shape()
                    )));
                }
                if im.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::input(format!(
                        "{name}: image {i} has values outside [0, 1]"
                    )));
                }
            }
        }
        Ok(LabeledDataset {
            images,
            labels,
            name,
            applied_shift: ShiftSpec::None,
        })
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn applied_shift(&self) -> &ShiftSpec {
        &self.applied_shift
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `[H, W, C]`, or `None` for an empty dataset.
    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(Tensor::shape)
    }

    pub fn channels(&self) -> usize {
        self.image_shape().map_or(0, |s| s[2])
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Consecutive slice `[offset, offset + count)`.
    pub fn slice(&self, offset: usize, count: usize) -> Result<LabeledDataset> {
        if offset + count > self.len() {
            return Err(Error::input(format!(
                "{}: slice {offset}..{} exceeds {} samples",
                self.name,
                offset + count,
                self.len()
            )));
        }
        Ok(LabeledDataset {
            images: self.images[offset..offset + count].to_vec(),
            labels: self.labels[offset..offset + count].to_vec(),
            name: self.name.clone(),
            applied_shift: self.applied_shift.clone(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Mean pixel value over the whole dataset.
    pub fn mean_pixel(&self) -> f64 {
        let (sum, n) = self.images.iter().fold((0.0f64, 0usize), |(s, n), im| {
            (s + im.data().iter().map(|&v| v as f64).sum::<f64>(), n + im.len())
        });
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Per-channel mean and population standard deviation of pixel values.
    pub fn channel_stats(&self) -> Vec<(f64, f64)> {
        let c = self.channels();
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        let mut n = 0usize;
        for im in &self.images {
            for px in im.data().chunks(c) {
                for ch in 0..c {
                    sum[ch] += px[ch] as f64;
                    sq[ch] += (px[ch] as f64).powi(2);
                }
                n += 1;
            }
        }
        (0..c)
            .map(|ch| {
                let mean = sum[ch] / n.max(1) as f64;
                let var = (sq[ch] / n.max(1) as f64 - mean * mean).max(0.0);
                (mean, var.sqrt())
            })
            .collect()
    }
}

/// Where the fetched MNIST-family files live: `$DANNLAB_DATA` if set,
/// otherwise `data/` at the workspace root.
pub fn default_data_dir() -> PathBuf {
    match std::env::var_os("DANNLAB_DATA") {
        Some(d) => PathBuf::from(d),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}

/// Loads an IDX image/label pair. Pixels are scaled by `1 / 255`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 4,
            message: format!(
                "label count {} does not match image count {} in {}",
                labels.len(),
                images.len(),
                images_path.display()
            ),
        });
    }
    let name = images_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(images, labels, name)
}

/// Writes a dataset as an IDX image/label pair (pixels rounded to bytes).
pub fn write_idx(ds: &LabeledDataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    write_idx_images(images_path, ds.images())?;
    write_idx_labels(labels_path, ds.labels())
}

fn parse_manifest(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut offset = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line_offset = offset;
        offset += line.len() + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(f, l)| Some((f.trim().to_string(), l.trim().parse::<usize>().ok()?)));
        match parsed {
            Some((file, label)) if !file.is_empty() => rows.push((file, label)),
            _ => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: line_offset as u64,
                    message: format!("line {}: expected `filename,label`", lineno + 1),
                })
            }
        }
    }
    Ok(rows)
}

fn is_pnm(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.ends_with(".ppm") || lower.ends_with(".pgm") || lower.ends_with(".pnm")
}

/// Loads a directory of P5/P6 images listed in a `filename,label` manifest,
/// in manifest order. Every image file in the directory must have a row.
pub fn load_image_dir(dir: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<LabeledDataset> {
    let dir = dir.as_ref();
    let rows = parse_manifest(manifest.as_ref())?;
    let listed: HashSet<&str> = rows.iter().map(|(f, _)| f.as_str()).collect();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut unlisted = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if is_pnm(&name) && !listed.contains(name.as_str()) {
            unlisted.push(name);
        }
    }
    if !unlisted.is_empty() {
        unlisted.sort();
        return Err(Error::input(format!(
            "{}: image(s) without a manifest row: {}",
            dir.display(),
            unlisted.join(", ")
        )));
    }
    let mut images = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (file, label) in &rows {
        let path = dir.join(file);
        if !path.is_file() {
            return Err(Error::input(format!(
                "manifest lists `{file}` but {} does not exist",
                path.display()
            )));
        }
        let im = read_pnm(&path)?;
        if let Some(first) = images.first().map(Tensor::shape) {
            if im.shape() != first {
                return Err(Error::input(format!(
                    "`{file}` has shape {:?}, expected {first:?}",
                    im.shape()
                )));
            }
        }
        images.push(im);
        labels.push(*label);
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(images, labels, name)
}

/// Writes `ds` as `img_00000.ppm`/`.pgm` files plus `manifest.csv` into `dir`.
pub fn write_image_dir(ds: &LabeledDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = if ds.channels() == 1 { "pgm" } else { "ppm" };
    let mut manifest = String::new();
    for (i, (im, label)) in ds.images().iter().zip(ds.labels()).enumerate() {
        let file = format!("img_{i:05}.{ext}");
        write_pnm(dir.join(&file), im)?;
        manifest.push_str(&format!("{file},{label}\n"));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// `n` all-zero images of `shape`, all labelled 0.
pub fn make_black_dataset(n: usize, shape: [usize; 3]) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::input("black dataset needs at least one image"));
    }
    let images = vec![Tensor::zeros(shape.to_vec()); n];
    LabeledDataset::new(images, vec![0; n], "black")
}

/// A small learnable dataset: each class has a random binary prototype and
/// every image is its class prototype with uniform jitter of amplitude 0.3,
/// clipped to `[0, 1]`. Labels cycle through the classes.
pub fn make_synthetic_dataset(
    count: usize,
    shape: [usize; 3],
    classes: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if count == 0 || classes < 2 {
        return Err(Error::input(format!(
            "synthetic dataset needs count >= 1 and classes >= 2, got {count} and {classes}"
        )));
    }
    let size: usize = shape.iter().product();
    let mut rng = Rng::stream(seed, 0);
    let prototypes: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..size).map(|_| if rng.uniform() < 0.5 { 0.85 } else { 0.15 }).collect())
        .collect();
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % classes;
        let data = prototypes[label]
            .iter()
            .map(|&p| (p + 0.3 * (rng.uniform() - 0.5)).clamp(0.0, 1.0))
            .collect();
        images.push(Tensor::new(shape.to_vec(), data)?);
        labels.push(label);
    }
    LabeledDataset::new(images, labels, "synthetic")
}

/// Applies `spec` to every image. Labels, count and order are preserved.
///
/// Image `i` draws its noise from `Rng::stream(base, i)` where `base` is one
/// draw from `rng`, so the result does not depend on scheduling.
pub fn apply_shift(ds: &LabeledDataset, spec: &ShiftSpec, rng: &mut Rng) -> Result<LabeledDataset> {
    spec.validate(ds.channels())?;
    let base = rng.next_u64();
    if matches!(spec, ShiftSpec::None) {
        return Ok(LabeledDataset {
            applied_shift: ShiftSpec::None,
            ..ds.clone()
        });
    }
    let images = ds
        .images
        .par_iter()
        .enumerate()
        .map(|(i, im)| spec.apply(im, &mut Rng::stream(base, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledDataset {
        images,
        labels: ds.labels.clone(),
        name: ds.name.clone(),
        applied_shift: spec.clone(),
    })
}

/// Random resized crop of every image to `out_h x out_w`.
pub fn crop_dataset(ds: &LabeledDataset, out_h: usize, out_w: usize, rng: &mut Rng) -> Result<LabeledDataset> {
    let base = rng.next_u64();
    let images = ds
        .images
        .par_iter()
        .enumerate()
        .map(|(i, im)| random_resized_crop(im, out_h, out_w, &mut Rng::stream(base, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledDataset {
        images,
        labels: ds.labels.clone(),
        name: ds.name.clone(),
        applied_shift: ds.applied_shift.clone(),
    })
}

/// One DA training sample: an image and the index of its source domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSample {
    pub image: Tensor,
    pub domain: usize,
}

/// Unlabelled images from two domains, shuffled together. Domain 0 comes
/// from the first source, domain 1 from the second; class labels are
/// dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    samples: Vec<DomainSample>,
    provenance: [String; 2],
}

impl DomainPair {
    pub fn samples(&self) -> &[DomainSample] {
        &self.samples
    }

    pub fn provenance(&self) -> &[String; 2] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.image.shape())
    }

    pub fn domain_counts(&self) -> [usize; 2] {
        let ones = self.samples.iter().filter(|s| s.domain == 1).count();
        [self.samples.len() - ones, ones]
    }
}

/// Mixes `c` (domain 0) and `d` (domain 1), truncating both to the shorter
/// length, and shuffles.
pub fn build_domain_pair(c: &LabeledDataset, d: &LabeledDataset, rng: &mut Rng) -> Result<DomainPair> {
    if c.image_shape() != d.image_shape() {
        return Err(Error::input(format!(
            "domain datasets differ in image shape: {:?} vs {:?}",
            c.image_shape(),
            d.image_shape()
        )));
    }
    let n = c.len().min(d.len());
    if n == 0 {
        return Err(Error::input("domain datasets must both be nonempty"));
    }
    let mut samples: Vec<DomainSample> = c.images[..n]
        .iter()
        .map(|im| DomainSample {
            image: im.clone(),
            domain: 0,
        })
        .chain(d.images[..n].iter().map(|im| DomainSample {
            image: im.clone(),
            domain: 1,
        }))
        .collect();
    rng.shuffle(&mut samples);
    Ok(DomainPair {
        samples,
        provenance: [describe(c), describe(d)],
    })
}

fn describe(ds: &LabeledDataset) -> String {
    match ds.applied_shift() {
        ShiftSpec::None => ds.name().to_string(),
        shift => format!(
            "{} ({})",
            ds.name(),
            serde_json::to_string(shift).unwrap_or_default()
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shifts::apply_blur;

    fn ramp_dataset(n: usize) -> LabeledDataset {
        let images = (0..n)
            .map(|i| {
                let data = (0..16).map(|p| ((p + i) % 16) as f32 / 15.0).collect();
                Tensor::new(vec![4, 4, 1], data).unwrap()
            })
            .collect();
        LabeledDataset::new(images, (0..n).map(|i| i % 3).collect(), "ramp").unwrap()
    }

    #[test]
    fn black_dataset() {
        let ds = make_black_dataset(5, [28, 28, 1]).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.mean_pixel(), 0.0);
        assert!(ds.labels().iter().all(|&l| l == 0));
        assert!(make_black_dataset(0, [2, 2, 1]).is_err());
    }

    #[test]
    fn noise_on_black_is_the_draw() {
        let ds = make_black_dataset(1, [3, 3, 1]).unwrap();
        let spec = ShiftSpec::noise(1.0).unwrap();
        let mut rng = Rng::seed(4);
        let shifted = apply_shift(&ds, &spec, &mut rng).unwrap();
        let base = Rng::seed(4).next_u64();
        let mut stream = Rng::stream(base, 0);
        for &v in shifted.images()[0].data() {
            assert_eq!(v, stream.uniform().clamp(0.0, 1.0));
        }
    }

    #[test]
    fn none_and_zero_noise_leave_data_unchanged() {
        let ds = ramp_dataset(6);
        let mut rng = Rng::seed(1);
        let same = apply_shift(&ds, &ShiftSpec::None, &mut rng).unwrap();
        assert_eq!(same, ds);
        let zero = apply_shift(&ds, &ShiftSpec::noise(0.0).unwrap(), &mut rng).unwrap();
        assert_eq!(zero.images(), ds.images());
        assert_eq!(zero.applied_shift(), &ShiftSpec::Noise { intensity: 0.0 });
    }

    #[test]
    fn blur_shift_matches_direct_calls() {
        let ds = ramp_dataset(5);
        let mut rng = Rng::seed(1);
        let blurred = apply_shift(&ds, &ShiftSpec::blur(3).unwrap(), &mut rng).unwrap();
        for (a, b) in blurred.images().iter().zip(ds.images()) {
            assert_eq!(a, &apply_blur(b, 3).unwrap());
        }
        assert_eq!(blurred.labels(), ds.labels());
    }

    #[test]
    fn domain_pair_is_balanced_and_deterministic() {
        let c = ramp_dataset(100);
        let d = ramp_dataset(120);
        let pair = build_domain_pair(&c, &d, &mut Rng::seed(3)).unwrap();
        assert_eq!(pair.len(), 200);
        assert_eq!(pair.domain_counts(), [100, 100]);
        let again = build_domain_pair(&c, &d, &mut Rng::seed(3)).unwrap();
        assert_eq!(pair, again);
    }

    #[test]
    fn domain_pair_shape_mismatch() {
        let c = ramp_dataset(3);
        let d = make_black_dataset(3, [5, 5, 1]).unwrap();
        assert!(build_domain_pair(&c, &d, &mut Rng::seed(0)).is_err());
    }

    #[test]
    fn dataset_rejects_mixed_shapes() {
        let images = vec![Tensor::zeros(vec![2, 2, 1]), Tensor::zeros(vec![3, 2, 1])];
        assert!(LabeledDataset::new(images, vec![0, 0], "x").is_err());
        assert!(LabeledDataset::new(vec![Tensor::zeros(vec![2, 2, 1])], vec![], "x").is_err());
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::full(vec![2, 2, 3], 0.5);
        write_pnm(dir.path().join("a.ppm"), &img).unwrap();
        let manifest = dir.path().join("labels.csv");
        fs::write(&manifest, "a.ppm,1\nmissing.ppm,0\n").unwrap();
        let err = load_image_dir(dir.path(), &manifest).unwrap_err();
        assert!(err.to_string().contains("missing.ppm"), "{err}");

        fs::write(&manifest, "").unwrap();
        let err = load_image_dir(dir.path(), &manifest).unwrap_err();
        assert!(err.to_string().contains("a.ppm"), "{err}");

        fs::write(&manifest, "a.ppm;1\n").unwrap();
        assert!(matches!(
            load_image_dir(dir.path(), &manifest).unwrap_err(),
            Error::Format { .. }
        ));
    }
}
