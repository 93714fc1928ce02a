//! Deterministic paired-modality image generator.
//!
//! Each identity is a figure built from a small vocabulary of parts (head,
//! torso, legs), each part carrying a fill pattern and two gray levels. The
//! figure layout is fixed per identity and jittered per image index; the
//! j-th visible image and the j-th infrared image of an identity share the
//! same jitter, so they differ only in color.
//!
//! Visible images are colored by adding chroma that leaves the luminance
//! `(5r + 9g + 2b) / 16` unchanged; infrared images carry that luminance in
//! all three channels. Without noise the two modalities therefore have
//! bit-identical luminance and edge maps.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sysu::{SYSU_IR_CAMERAS, SYSU_RGB_CAMERAS};
use super::{ImageRecord, Modality, Split};
use crate::{Error, Result};

/// Chroma directions with zero luminance under the (5, 9, 2)/16 weights.
const CHROMA_A: [i32; 3] = [1, -1, 2];
const CHROMA_B: [i32; 3] = [3, -1, -3];
// Part intensities; the margin keeps `level ± 5 * chroma` inside 0..=255.
const LEVEL_MIN: i32 = 70;
const LEVEL_MAX: i32 = 190;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDatasetConfig {
    pub num_identities: usize,
    pub images_per_id_per_modality: usize,
    /// Identities `0..num_train_identities` form the training split; the
    /// rest are held out (IR → query, RGB → gallery).
    pub num_train_identities: usize,
    pub height: u32,
    pub width: u32,
    /// Standard deviation of additive Gaussian noise, as a fraction of 255.
    pub noise_level: f64,
    /// Maximum identity-specific chroma coefficient for visible images.
    pub identity_chroma: i32,
    /// Maximum per-image chroma jitter for visible images.
    pub image_chroma: i32,
    /// Maximum per-image translation in pixels.
    pub max_shift: i32,
    pub seed: u64,
}

impl Default for SyntheticDatasetConfig {
    fn default() -> Self {
        Self {
            num_identities: 32,
            images_per_id_per_modality: 8,
            num_train_identities: 16,
            height: 64,
            width: 32,
            noise_level: 0.02,
            identity_chroma: 10,
            image_chroma: 3,
            max_shift: 2,
            seed: 0,
        }
    }
}

impl SyntheticDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(Error::Config(format!(
                "dataset.synthetic.num_identities must be at least 2, got {}",
                self.num_identities
            )));
        }
        if self.num_train_identities > self.num_identities {
            return Err(Error::Config("dataset.synthetic.num_train_identities exceeds num_identities".into()));
        }
        if self.images_per_id_per_modality == 0 {
            return Err(Error::Config("dataset.synthetic.images_per_id_per_modality must be positive".into()));
        }
        if self.height < 16 || self.width < 8 {
            return Err(Error::Config("dataset.synthetic height and width must be at least 16 and 8".into()));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::Config("dataset.synthetic.noise_level must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Pattern {
    Solid,
    HStripes(u32),
    VStripes(u32),
    Checker(u32),
}

#[derive(Debug, Clone, Copy)]
enum PartShape {
    Ellipse,
    Rect,
}

#[derive(Debug, Clone)]
struct Part {
    shape: PartShape,
    // Fractions of the canvas.
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
    pattern: Pattern,
    levels: [i32; 2],
    chroma: [i32; 2],
}

fn identity_parts(rng: &mut ChaCha8Rng, identity_chroma: i32) -> Vec<Part> {
    let pattern = |rng: &mut ChaCha8Rng| match rng.random_range(0..4) {
        0 => Pattern::Solid,
        1 => Pattern::HStripes(rng.random_range(2..5)),
        2 => Pattern::VStripes(rng.random_range(2..4)),
        _ => Pattern::Checker(rng.random_range(2..5)),
    };
    let level = |rng: &mut ChaCha8Rng| rng.random_range(LEVEL_MIN..=LEVEL_MAX);
    let chroma = |rng: &mut ChaCha8Rng| {
        [
            rng.random_range(-identity_chroma..=identity_chroma),
            rng.random_range(-identity_chroma..=identity_chroma),
        ]
    };
    let torso_w = rng.random_range(0.22..0.38);
    let legs_w = rng.random_range(0.16..0.32);
    let head = Part {
        shape: PartShape::Ellipse,
        cx: 0.5 + rng.random_range(-0.05..0.05),
        cy: rng.random_range(0.11..0.16),
        half_w: rng.random_range(0.12..0.2),
        half_h: rng.random_range(0.07..0.1),
        pattern: Pattern::Solid,
        levels: [level(rng), 0],
        chroma: chroma(rng),
    };
    let torso = Part {
        shape: PartShape::Rect,
        cx: 0.5,
        cy: rng.random_range(0.38..0.44),
        half_w: torso_w,
        half_h: rng.random_range(0.14..0.2),
        pattern: pattern(rng),
        levels: [level(rng), level(rng)],
        chroma: chroma(rng),
    };
    let legs = Part {
        shape: PartShape::Rect,
        cx: 0.5,
        cy: rng.random_range(0.74..0.8),
        half_w: legs_w,
        half_h: rng.random_range(0.14..0.18),
        pattern: pattern(rng),
        levels: [level(rng), level(rng)],
        chroma: chroma(rng),
    };
    let mut parts = vec![legs, torso, head];
    if rng.random_bool(0.5) {
        // Bag or accessory on one side.
        let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        parts.push(Part {
            shape: if rng.random_bool(0.5) { PartShape::Rect } else { PartShape::Ellipse },
            cx: 0.5 + side * rng.random_range(0.28..0.36),
            cy: rng.random_range(0.4..0.6),
            half_w: rng.random_range(0.08..0.13),
            half_h: rng.random_range(0.06..0.12),
            pattern: pattern(rng),
            levels: [level(rng), level(rng)],
            chroma: chroma(rng),
        });
    }
    parts
}

fn pattern_index(pattern: Pattern, x: i32, y: i32) -> usize {
    let sel = match pattern {
        Pattern::Solid => 0,
        Pattern::HStripes(p) => y.div_euclid(p as i32),
        Pattern::VStripes(p) => x.div_euclid(p as i32),
        Pattern::Checker(p) => x.div_euclid(p as i32) + y.div_euclid(p as i32),
    };
    sel.rem_euclid(2) as usize
}

fn stream_seed(seed: u64, identity: usize, index: usize, stream: u64) -> u64 {
    // SplitMix64 style mixing of the coordinates.
    let mut z = seed
        ^ (identity as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ stream.wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn colorize(level: i32, chroma: [i32; 2]) -> [i32; 3] {
    let mut c = [0; 3];
    for ch in 0..3 {
        c[ch] = level + chroma[0] * CHROMA_A[ch] + chroma[1] * CHROMA_B[ch];
    }
    c
}

/// Renders one paired view. Returns the visible and infrared rasters as
/// signed integer triples before noise and clamping.
fn render_pair(
    cfg: &SyntheticDatasetConfig,
    parts: &[Part],
    rng: &mut ChaCha8Rng,
) -> (Vec<[i32; 3]>, Vec<i32>) {
    let (w, h) = (cfg.width as i32, cfg.height as i32);
    let dx = rng.random_range(-cfg.max_shift..=cfg.max_shift);
    let dy = rng.random_range(-cfg.max_shift..=cfg.max_shift);
    let bg_level = rng.random_range(80..=120);
    let jitter = cfg.image_chroma;
    let jit = |rng: &mut ChaCha8Rng| [rng.random_range(-jitter..=jitter), rng.random_range(-jitter..=jitter)];
    let bg_chroma = jit(rng);
    let part_jitter: Vec<[i32; 2]> = parts.iter().map(|_| jit(rng)).collect();

    let mut lum = vec![bg_level; (w * h) as usize];
    let mut rgb = vec![colorize(bg_level, bg_chroma); (w * h) as usize];
    for (part, pj) in parts.iter().zip(&part_jitter) {
        let cx = part.cx * w as f64 + dx as f64;
        let cy = part.cy * h as f64 + dy as f64;
        let hw = part.half_w * w as f64;
        let hh = part.half_h * h as f64;
        let chroma = [part.chroma[0] + pj[0], part.chroma[1] + pj[1]];
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = match part.shape {
                    PartShape::Rect => px.abs() <= hw && py.abs() <= hh,
                    PartShape::Ellipse => (px / hw).powi(2) + (py / hh).powi(2) <= 1.0,
                };
                if inside {
                    let level = part.levels[pattern_index(part.pattern, x - dx, y - dy)];
                    let i = (y * w + x) as usize;
                    lum[i] = level;
                    rgb[i] = colorize(level, chroma);
                }
            }
        }
    }
    (rgb, lum)
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Generates the full record list: for every identity, `images_per_id_per_modality`
/// visible images followed by the same number of infrared images.
pub fn generate_synthetic(cfg: &SyntheticDatasetConfig) -> Result<Vec<ImageRecord>> {
    cfg.validate()?;
    let noise = Normal::new(0.0, cfg.noise_level * 255.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut records = Vec::with_capacity(cfg.num_identities * cfg.images_per_id_per_modality * 2);
    for identity in 0..cfg.num_identities {
        let mut id_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, identity, 0, 1));
        let parts = identity_parts(&mut id_rng, cfg.identity_chroma);
        let split_of = |m: Modality| {
            if identity < cfg.num_train_identities {
                Split::Train
            } else if m == Modality::Ir {
                Split::Query
            } else {
                Split::Gallery
            }
        };
        let mut visible = Vec::new();
        let mut infrared = Vec::new();
        for j in 0..cfg.images_per_id_per_modality {
            let mut view_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, identity, j, 2));
            let (rgb, lum) = render_pair(cfg, &parts, &mut view_rng);
            let mut noise_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, identity, j, 3));
            let sample = |rng: &mut ChaCha8Rng| {
                if cfg.noise_level > 0.0 {
                    noise.sample(rng)
                } else {
                    0.0
                }
            };
            let vis = RgbImage::from_fn(cfg.width, cfg.height, |x, y| {
                let c = rgb[(y * cfg.width + x) as usize];
                Rgb([
                    to_u8(c[0] as f64 + sample(&mut noise_rng)),
                    to_u8(c[1] as f64 + sample(&mut noise_rng)),
                    to_u8(c[2] as f64 + sample(&mut noise_rng)),
                ])
            });
            let ir = RgbImage::from_fn(cfg.width, cfg.height, |x, y| {
                let v = to_u8(lum[(y * cfg.width + x) as usize] as f64 + sample(&mut noise_rng));
                Rgb([v, v, v])
            });
            visible.push(ImageRecord {
                image: vis,
                identity,
                modality: Modality::Rgb,
                camera: SYSU_RGB_CAMERAS[j % SYSU_RGB_CAMERAS.len()],
                split: split_of(Modality::Rgb),
                rel_path: None,
            });
            infrared.push(ImageRecord {
                image: ir,
                identity,
                modality: Modality::Ir,
                camera: SYSU_IR_CAMERAS[j % SYSU_IR_CAMERAS.len()],
                split: split_of(Modality::Ir),
                rel_path: None,
            });
        }
        records.extend(visible);
        records.extend(infrared);
    }
    Ok(records)
}
