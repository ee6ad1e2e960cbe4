//! Datasets: class-per-directory image trees, a synthetic generator and
//! stratified splitting.
//!
//! Images are preprocessed once (decoded, replicated to three channels,
//! bilinearly resized, scaled to `[0, 1]`) and stored as 8-bit pixels;
//! [`Dataset::batch`] expands them to floats on demand.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::resize::bilinear_resize;
use crate::tensor::{Float, Shape, Tensor};

pub const CHANNELS: usize = 3;
const EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "tif", "tiff"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pixels: Vec<u8>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub split: Split,
}

fn quantize(x: f32) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Dataset {
    /// From float images in `[0, 1]`, each `(1, height, width, 3)`.
    pub fn from_images(
        images: &[Tensor<f32>],
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Dataset("dataset has no images".into()))?
            .shape();
        if images.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let mut pixels = Vec::with_capacity(images.len() * first.numel());
        for img in images {
            let s = img.shape();
            if s.n != 1 || s.c != CHANNELS || (s.h, s.w) != (first.h, first.w) {
                return Err(Error::Dataset(format!("image {s} does not match {first}")));
            }
            pixels.extend(img.data().iter().map(|&x| quantize(x)));
        }
        let ds = Dataset {
            height: first.h,
            width: first.w,
            pixels,
            labels,
            class_names,
            split: Split::Train,
        };
        if let Some(&bad) = ds.labels.iter().find(|&&l| l >= ds.k()) {
            return Err(Error::Dataset(format!(
                "label {bad} outside {} classes",
                ds.k()
            )));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.class_names.len()
    }

    fn per_image(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    pub fn image_shape(&self) -> Shape {
        Shape::new(1, self.height, self.width, CHANNELS)
    }

    pub fn pixels(&self, i: usize) -> &[u8] {
        let per = self.per_image();
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn image<T: Float>(&self, i: usize) -> Tensor<T> {
        let data = self
            .pixels(i)
            .iter()
            .map(|&p| T::of(p as f64 / 255.0))
            .collect();
        Tensor::from_vec(self.image_shape(), data).expect("stored pixel count")
    }

    /// Stacks samples `idx` into one `(n, h, w, 3)` batch.
    pub fn batch<T: Float>(&self, idx: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let mut data = Vec::with_capacity(idx.len() * self.per_image());
        for &i in idx {
            data.extend(self.pixels(i).iter().map(|&p| T::of(p as f64 / 255.0)));
        }
        let shape = Shape::new(idx.len(), self.height, self.width, CHANNELS);
        (
            Tensor::from_vec(shape, data).expect("stored pixel count"),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut pixels = Vec::with_capacity(idx.len() * self.per_image());
        for &i in idx {
            pixels.extend_from_slice(self.pixels(i));
        }
        Dataset {
            height: self.height,
            width: self.width,
            pixels,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            split: self.split,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Dataset error naming the first class without samples.
    pub fn require_all_classes(&self) -> Result<()> {
        if self.k() < 2 {
            return Err(Error::Dataset(format!(
                "need at least 2 classes, found {}",
                self.k()
            )));
        }
        match self.class_counts().iter().position(|&c| c == 0) {
            Some(i) => Err(Error::Dataset(format!(
                "class `{}` has no samples",
                self.class_names[i]
            ))),
            None => Ok(()),
        }
    }

    /// Writes `<root>/<class>/<index>.png`, one grayscale PNG per sample
    /// (first channel).
    pub fn write_image_tree(&self, root: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.len());
        for name in &self.class_names {
            fs::create_dir_all(root.join(name))?;
        }
        for i in 0..self.len() {
            let px = self.pixels(i);
            let gray: Vec<u8> = px.chunks_exact(CHANNELS).map(|p| p[0]).collect();
            let img = GrayImage::from_raw(self.width as u32, self.height as u32, gray)
                .expect("pixel count");
            let path = root
                .join(&self.class_names[self.labels[i]])
                .join(format!("{i:05}.png"));
            img.save(&path).map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Files skipped while loading an image tree.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub skipped: Vec<PathBuf>,
}

/// Decodes and preprocesses one image to `(1, h, w, 3)` on the 8-bit grid
/// the dataset stores.
pub fn load_image(path: &Path, h: usize, w: usize) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (sw, sh) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = if img.color().has_color() {
        img.to_rgb32f().into_raw()
    } else {
        DynamicImage::ImageLuma16(img.to_luma16())
            .to_luma32f()
            .into_raw()
            .into_iter()
            .flat_map(|v| [v; CHANNELS])
            .collect()
    };
    let src = Tensor::from_vec(Shape::new(1, sh, sw, CHANNELS), data)?;
    let out = if (sh, sw) == (h, w) {
        src
    } else {
        bilinear_resize(&src, h, w)?
    };
    Ok(out.map(|v| quantize(v) as f32 / 255.0))
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Loads `<root>/<CLASS>/<files>`. Classes are ordered by directory name,
/// samples by path within a class.
pub fn load_image_tree(root: &Path, height: usize, width: usize) -> Result<(Dataset, LoadReport)> {
    if height == 0 || width == 0 {
        return Err(Error::contract("target size must be positive"));
    }
    if !root.is_dir() {
        return Err(Error::Dataset(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let mut classes: Vec<(String, PathBuf)> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    classes.sort();
    if classes.len() < 2 {
        return Err(Error::Dataset(format!(
            "{} has {} class directories, need at least 2",
            root.display(),
            classes.len()
        )));
    }
    let mut files = Vec::new();
    for (label, (name, dir)) in classes.iter().enumerate() {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        if paths.is_empty() {
            return Err(Error::Dataset(format!(
                "class directory `{name}` has no images"
            )));
        }
        paths.sort();
        files.extend(paths.into_iter().map(|p| (p, label)));
    }
    let decoded: Vec<(PathBuf, usize, Result<Tensor<f32>>)> = files
        .into_par_iter()
        .map(|(p, l)| (p.clone(), l, load_image(&p, height, width)))
        .collect();
    let mut images = Vec::with_capacity(decoded.len());
    let mut labels = Vec::with_capacity(decoded.len());
    let mut report = LoadReport::default();
    for (path, label, img) in decoded {
        match img {
            Ok(t) => {
                images.push(t);
                labels.push(label);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.skipped.push(path);
            }
        }
    }
    let names: Vec<String> = classes.into_iter().map(|(n, _)| n).collect();
    if images.is_empty() {
        return Err(Error::Dataset(format!(
            "no decodable images under {}",
            root.display()
        )));
    }
    let ds = Dataset::from_images(&images, labels, names)?;
    ds.require_all_classes()?;
    Ok((ds, report))
}

pub fn synthetic_class_name(class: usize) -> String {
    format!("class_{class:02}")
}

/// Class `c` is a sinusoidal band pattern at angle `c·π/K` with a small
/// random phase and contrast, plus Gaussian pixel noise.
pub fn make_synthetic(
    classes: usize,
    per_class: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || per_class == 0 || height == 0 || width == 0 {
        return Err(Error::contract(
            "synthetic dataset needs K >= 2, n >= 1 and a positive size",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f64, 0.08).expect("finite std");
    let period = (height.min(width) as f64 / 4.0).max(2.0);
    let mut images = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let theta = c as f64 * std::f64::consts::PI / classes as f64;
        let (ct, st) = (theta.cos(), theta.sin());
        for _ in 0..per_class {
            let phase = rng.random_range(-0.6..0.6);
            let contrast = rng.random_range(0.25..0.4);
            let img = Tensor::from_fn(Shape::new(1, height, width, 1), |_, y, x, _| {
                let t = (x as f64 * ct + y as f64 * st) / period;
                let v = 0.5
                    + contrast * (std::f64::consts::TAU * t + phase).sin()
                    + noise.sample(&mut rng);
                v.clamp(0.0, 1.0) as f32
            });
            let rgb = Tensor::from_fn(Shape::new(1, height, width, CHANNELS), |_, y, x, _| {
                img.at(0, y, x, 0)
            });
            images.push(rgb);
            labels.push(c);
        }
    }
    Dataset::from_images(
        &images,
        labels,
        (0..classes).map(synthetic_class_name).collect(),
    )
}

/// Stratified split: each class contributes `round(frac·n_c)` samples to
/// the first part, in seeded shuffled order.
pub fn split_stratified(
    ds: &Dataset,
    first_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&first_fraction) {
        return Err(Error::contract(format!(
            "split fraction {first_fraction} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for c in 0..ds.k() {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let take = (first_fraction * idx.len() as f64).round() as usize;
        if take == 0 && !idx.is_empty() {
            return Err(Error::Dataset(format!(
                "fraction {first_fraction} leaves class `{}` empty in the first split",
                ds.class_names[c]
            )));
        }
        a.extend_from_slice(&idx[..take]);
        b.extend_from_slice(&idx[take..]);
    }
    a.sort_unstable();
    b.sort_unstable();
    let (mut first, mut second) = (ds.subset(&a), ds.subset(&b));
    first.split = Split::Train;
    second.split = Split::Test;
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_counts_and_determinism() {
        let a = make_synthetic(4, 16, 64, 64, 3).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a.class_counts(), vec![16; 4]);
        assert_eq!(a, make_synthetic(4, 16, 64, 64, 3).unwrap());
        assert_ne!(a, make_synthetic(4, 16, 64, 64, 4).unwrap());
        assert_eq!(a.class_names[3], "class_03");
    }

    #[test]
    fn channels_are_replicated() {
        let ds = make_synthetic(2, 1, 8, 8, 0).unwrap();
        assert!(ds
            .pixels(0)
            .chunks_exact(3)
            .all(|p| p[0] == p[1] && p[1] == p[2]));
    }

    #[test]
    fn split_is_disjoint_and_stratified() {
        let ds = make_synthetic(4, 25, 8, 8, 1).unwrap();
        let (a, b) = split_stratified(&ds, 0.8, 9).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        assert_eq!(a.class_counts(), vec![20; 4]);
        assert!(split_stratified(&ds, 0.01, 9).is_err());
    }

    #[test]
    fn empty_class_is_a_dataset_error() {
        let ds = make_synthetic(3, 2, 4, 4, 0).unwrap();
        let sub = ds.subset(&[0, 1, 2, 3]);
        assert!(matches!(sub.require_all_classes(), Err(Error::Dataset(_))));
    }
}
