//! PNG image IO and paired `hazy/` + `GT/` datasets.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Image(format!("{}: {other}", path.display())),
    }
}

/// Loads an image as a (3, H, W) tensor in [0, 1].
pub fn load_rgb(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    Ok(rgb_to_tensor(&img))
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        img.get_pixel((p % w) as u32, (p / w) as u32)[c] as f32 / 255.0
    })
}

/// Quantizes a (3, H, W) or (1, 3, H, W) tensor to 8-bit RGB, clamping to [0, 1].
pub fn tensor_to_rgb(t: &Tensor<f32>) -> Result<RgbImage> {
    let (h, w) = match *t.shape() {
        [3, h, w] | [1, 3, h, w] => (h, w),
        ref s => return Err(Error::Dimension(format!("expected a single RGB image, got {s:?}"))),
    };
    let d = t.data();
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        Rgb([q(d[p]), q(d[h * w + p]), q(d[2 * h * w + p])])
    }))
}

pub fn save_rgb(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    tensor_to_rgb(t)?.save(path).map_err(|e| image_err(path, e))
}

/// Matching hazy/clean image pairs: `root/hazy/<name>` with `root/GT/<name>`.
#[derive(Clone, Debug)]
pub struct PairedDataset {
    pub root: PathBuf,
    pub names: Vec<String>,
    pairs: Vec<(Tensor<f32>, Tensor<f32>)>,
}

impl PairedDataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let mut names = Vec::new();
        for entry in std::fs::read_dir(root.join("hazy"))? {
            let path = entry?.path();
            let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if path.is_file() && is_png {
                names.push(path.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
        names.sort();
        if names.is_empty() {
            return Err(Error::Config(format!("no PNG images under {}", root.join("hazy").display())));
        }
        let mut pairs = Vec::with_capacity(names.len());
        for name in &names {
            let gt_path = root.join("GT").join(name);
            if !gt_path.is_file() {
                return Err(Error::Config(format!("{name} has no ground truth at {}", gt_path.display())));
            }
            let hazy = load_rgb(root.join("hazy").join(name))?;
            let gt = load_rgb(&gt_path)?;
            if hazy.shape() != gt.shape() {
                return Err(Error::Dimension(format!(
                    "{name}: hazy {:?} and GT {:?} differ in size",
                    hazy.shape(),
                    gt.shape()
                )));
            }
            pairs.push((hazy, gt));
        }
        Ok(Self { root, names, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair(&self, i: usize) -> &(Tensor<f32>, Tensor<f32>) {
        &self.pairs[i]
    }

    /// Aligned `size`×`size` crops of pair `i`, at a random offset or centred.
    pub fn crop(&self, i: usize, size: usize, rng: Option<&mut dyn rand::RngCore>) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let (hazy, gt) = &self.pairs[i];
        let (_, h, w) = hazy.dims3()?;
        if h < size || w < size {
            return Err(Error::Config(format!("{}: {h}x{w} is smaller than the {size}x{size} crop", self.names[i])));
        }
        let (y0, x0) = match rng {
            Some(r) => (r.random_range(0..=h - size), r.random_range(0..=w - size)),
            None => ((h - size) / 2, (w - size) / 2),
        };
        Ok((crop_at(hazy, y0, x0, size)?, crop_at(gt, y0, x0, size)?))
    }
}

/// (3, size, size) window of a (3, H, W) image at (`y0`, `x0`).
pub fn crop_at(t: &Tensor<f32>, y0: usize, x0: usize, size: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = t.dims3()?;
    if y0 + size > h || x0 + size > w {
        return Err(Error::Dimension(format!("crop {size} at ({y0},{x0}) exceeds {h}x{w}")));
    }
    Ok(Tensor::from_fn(&[c, size, size], |i| {
        let (ch, p) = (i / (size * size), i % (size * size));
        t.data()[(ch * h + y0 + p / size) * w + x0 + p % size]
    }))
}
