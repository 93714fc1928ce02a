use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Network input height.
    pub height: u32,
    /// Network input width.
    pub width: u32,
    pub enabled: bool,
    /// Zero padding added on every side before the random crop.
    pub crop_padding: u32,
    pub flip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            height: 288,
            width: 144,
            enabled: true,
            crop_padding: 10,
            flip_probability: 0.5,
        }
    }
}

/// Per-channel normalization applied when an image becomes a network input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        // ImageNet statistics.
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl Normalization {
    /// CHW float buffer of `(x / 255 - mean) / std`.
    pub fn apply(&self, img: &RgbImage) -> Vec<f32> {
        let (w, h) = img.dimensions();
        let plane = (w * h) as usize;
        let mut out = vec![0f32; 3 * plane];
        for (i, p) in img.pixels().enumerate() {
            for c in 0..3 {
                out[c * plane + i] = (p[c] as f32 / 255.0 - self.mean[c]) / self.std[c];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Augmenter {
    cfg: AugmentConfig,
}

impl Augmenter {
    pub fn new(cfg: AugmentConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.cfg
    }

    /// Resizes to the network input size. Images already at that size are
    /// returned unchanged.
    pub fn resize(&self, img: &RgbImage) -> RgbImage {
        if img.dimensions() == (self.cfg.width, self.cfg.height) {
            img.clone()
        } else {
            imageops::resize(img, self.cfg.width, self.cfg.height, FilterType::Triangle)
        }
    }

    /// Train-time transform: resize, then (when enabled) pad-and-crop and a
    /// random horizontal flip.
    pub fn augment<R: Rng + ?Sized>(&self, img: &RgbImage, rng: &mut R) -> RgbImage {
        let resized = self.resize(img);
        if !self.cfg.enabled {
            return resized;
        }
        let cropped = random_crop(&resized, self.cfg.crop_padding, rng);
        if rng.random_bool(self.cfg.flip_probability) {
            flip_horizontal(&cropped)
        } else {
            cropped
        }
    }
}

pub fn flip_horizontal(img: &RgbImage) -> RgbImage {
    imageops::flip_horizontal(img)
}

/// Zero-pads by `pad` on each side and cuts a random window of the original size.
pub fn random_crop<R: Rng + ?Sized>(img: &RgbImage, pad: u32, rng: &mut R) -> RgbImage {
    if pad == 0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let ox = rng.random_range(0..=2 * pad) as i64 - pad as i64;
    let oy = rng.random_range(0..=2 * pad) as i64 - pad as i64;
    RgbImage::from_fn(w, h, |x, y| {
        let sx = x as i64 + ox;
        let sy = y as i64 + oy;
        if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
            image::Rgb([0, 0, 0])
        } else {
            *img.get_pixel(sx as u32, sy as u32)
        }
    })
}
