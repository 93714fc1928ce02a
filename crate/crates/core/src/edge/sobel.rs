use image::RgbImage;

use crate::{Error, Result};

/// Luminance weights `(5, 9, 2) / 16`: close to BT.601 and exact in binary
/// floating point, so integer-valued pixels reduce without rounding.
pub const LUMA_WEIGHTS: [f64; 3] = [5.0 / 16.0, 9.0 / 16.0, 2.0 / 16.0];

/// Single-channel float raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "raster {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Reads with coordinates clamped to the border.
    #[inline]
    fn get_clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x)
    }

    pub fn mirror_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    pub fn scale_add(&self, a: f64, other: &Raster, b: f64) -> Self {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect(),
        }
    }
}

/// The four fixed 3x3 directional kernels, applied as cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SobelKernelBank {
    pub kernels: [[[i32; 3]; 3]; 4],
}

impl SobelKernelBank {
    pub const HORIZONTAL: [[i32; 3]; 3] = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
    pub const VERTICAL: [[i32; 3]; 3] = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]];
    /// Horizontal kernel rotated by 45 degrees.
    pub const DIAGONAL_45: [[i32; 3]; 3] = [[0, 1, 2], [-1, 0, 1], [-2, -1, 0]];
    /// Horizontal kernel rotated by 135 degrees.
    pub const DIAGONAL_135: [[i32; 3]; 3] = [[-2, -1, 0], [-1, 0, 1], [0, 1, 2]];

    pub const fn classic() -> Self {
        Self {
            kernels: [Self::HORIZONTAL, Self::VERTICAL, Self::DIAGONAL_45, Self::DIAGONAL_135],
        }
    }

    /// Cross-correlation with replicated borders. Positive and negative
    /// taps are accumulated separately, each in order of increasing
    /// weight, so a constant window cancels exactly.
    fn correlate(kernel: &[[i32; 3]; 3], img: &Raster) -> Raster {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (dy, row) in kernel.iter().enumerate() {
            for (dx, &k) in row.iter().enumerate() {
                let tap = (dy as isize - 1, dx as isize - 1, k.abs() as f64);
                match k.signum() {
                    1 => pos.push(tap),
                    -1 => neg.push(tap),
                    _ => {}
                }
            }
        }
        pos.sort_by(|a, b| a.2.total_cmp(&b.2));
        neg.sort_by(|a, b| a.2.total_cmp(&b.2));
        let mut out = Raster::zeros(img.height, img.width);
        for y in 0..img.height {
            for x in 0..img.width {
                let sum = |taps: &[(isize, isize, f64)]| {
                    taps.iter()
                        .map(|&(dy, dx, w)| w * img.get_clamped(y as isize + dy, x as isize + dx))
                        .fold(0.0, |acc, v| acc + v)
                };
                out.data[y * img.width + x] = sum(&pos) - sum(&neg);
            }
        }
        out
    }
}

impl Default for SobelKernelBank {
    fn default() -> Self {
        Self::classic()
    }
}

/// Sum of the four directional responses, at the input's spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap(pub Raster);

impl EdgeMap {
    pub fn raster(&self) -> &Raster {
        &self.0
    }
}

fn check_size(img: &Raster) -> Result<()> {
    if img.height < 3 || img.width < 3 {
        return Err(Error::Shape(format!(
            "sobel needs at least 3x3 input, got {}x{}",
            img.height, img.width
        )));
    }
    Ok(())
}

/// The four directional responses (horizontal, vertical, 45°, 135°) with
/// replicated borders.
pub fn sobel_directional(img: &Raster) -> Result<[Raster; 4]> {
    check_size(img)?;
    let bank = SobelKernelBank::classic();
    Ok(bank.kernels.map(|k| SobelKernelBank::correlate(&k, img)))
}

pub fn sobel_edges(img: &Raster) -> Result<EdgeMap> {
    let [a, b, c, d] = sobel_directional(img)?;
    let data = (0..a.data.len())
        .map(|i| a.data[i] + b.data[i] + c.data[i] + d.data[i])
        .collect();
    Ok(EdgeMap(Raster {
        height: img.height,
        width: img.width,
        data,
    }))
}

/// Luminance of an 8-bit image scaled to `[0, 1]`. The weighted sum is formed
/// in integers first, so equal integer luminance gives bit-equal output.
pub fn luminance_u8(img: &RgbImage) -> Raster {
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| (5 * p[0] as u32 + 9 * p[1] as u32 + 2 * p[2] as u32) as f64 / (16.0 * 255.0))
        .collect();
    Raster {
        height: h as usize,
        width: w as usize,
        data,
    }
}

/// Fixed-weight channel reduction of a three-channel float image.
pub fn to_single_channel(channels: [&Raster; 3]) -> Result<Raster> {
    let [r, g, b] = channels;
    if (r.height, r.width) != (g.height, g.width) || (r.height, r.width) != (b.height, b.width) {
        return Err(Error::Shape("channel rasters differ in size".into()));
    }
    let data = (0..r.data.len())
        .map(|i| LUMA_WEIGHTS[0] * r.data[i] + LUMA_WEIGHTS[1] * g.data[i] + LUMA_WEIGHTS[2] * b.data[i])
        .collect();
    Ok(Raster {
        height: r.height,
        width: r.width,
        data,
    })
}

/// Bilinear resampling with half-pixel centers (the `align_corners = false`
/// convention).
pub fn resize_bilinear(img: &Raster, height: usize, width: usize) -> Raster {
    if (img.height, img.width) == (height, width) {
        return img.clone();
    }
    let sy = img.height as f64 / height as f64;
    let sx = img.width as f64 / width as f64;
    let coord = |o: usize, scale: f64, n: usize| {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    Raster::from_fn(height, width, |y, x| {
        let (y0, y1, fy) = coord(y, sy, img.height);
        let (x0, x1, fx) = coord(x, sx, img.width);
        let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
        let bottom = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raster(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Raster {
        Raster::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn kernels_are_zero_sum() {
        let bank = SobelKernelBank::classic();
        assert_eq!(bank.kernels.len(), 4);
        for k in bank.kernels {
            assert_eq!(k.iter().flatten().sum::<i32>(), 0);
        }
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = Raster::from_fn(6, 5, |_, _| 0.37);
        let e = sobel_edges(&img).unwrap();
        assert!(e.0.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_edge_hand_convolution() {
        // Columns (0, 0, 1, 1); pixel (1, 1) sits left of the step.
        let img = Raster::from_fn(4, 4, |_, x| if x >= 2 { 1.0 } else { 0.0 });
        let [horizontal, ..] = sobel_directional(&img).unwrap();
        assert_eq!(horizontal.get(1, 1), 4.0);
        assert_eq!(horizontal.get(1, 2), 4.0);
        assert_eq!(horizontal.get(1, 0), 0.0);
    }

    #[test]
    fn too_small_input() {
        assert!(sobel_edges(&Raster::zeros(2, 5)).is_err());
        assert!(sobel_edges(&Raster::zeros(3, 3)).is_ok());
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let x = random_raster(&mut rng, 7, 9);
            let y = random_raster(&mut rng, 7, 9);
            let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let lhs = sobel_edges(&x.scale_add(a, &y, b)).unwrap();
            let ex = sobel_edges(&x).unwrap();
            let ey = sobel_edges(&y).unwrap();
            let rhs = ex.0.scale_add(a, &ey.0, b);
            for (l, r) in lhs.0.data.iter().zip(&rhs.data) {
                assert!((l - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mirror_covariance_brute_force() {
        // Mirroring maps horizontal -> -horizontal, vertical -> vertical and
        // swaps the diagonals with a sign flip. The magnitude sum is therefore
        // mirror covariant.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let img = random_raster(&mut rng, 8, 8);
            let m = img.mirror_horizontal();
            let d = sobel_directional(&img).unwrap();
            let dm = sobel_directional(&m).unwrap();
            let pairs = [(0, 0, -1.0), (1, 1, 1.0), (2, 3, -1.0), (3, 2, -1.0)];
            for (k_m, k, sign) in pairs {
                let expected = d[k].mirror_horizontal();
                for (a, b) in dm[k_m].data.iter().zip(&expected.data) {
                    assert!((a - sign * b).abs() < 1e-12);
                }
            }
            let mag = |dirs: &[Raster; 4]| {
                Raster::from_fn(8, 8, |y, x| dirs.iter().map(|r| r.get(y, x).abs()).sum())
            };
            let lhs = mag(&dm);
            let rhs = mag(&d).mirror_horizontal();
            for (a, b) in lhs.data.iter().zip(&rhs.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn luminance_properties() {
        assert_eq!(LUMA_WEIGHTS.iter().sum::<f64>(), 1.0);
        let red = RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0]));
        let blue = RgbImage::from_pixel(2, 2, image::Rgb([0, 0, 255]));
        assert_ne!(luminance_u8(&red).data[0], luminance_u8(&blue).data[0]);
        let gray = RgbImage::from_pixel(2, 2, image::Rgb([91, 91, 91]));
        assert_eq!(luminance_u8(&gray).data[0], 91.0 / 255.0);

        let c = Raster::from_fn(3, 3, |_, _| 0.25);
        let single = to_single_channel([&c, &c, &c]).unwrap();
        assert!(single.data.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_raster(&mut rng, 8, 4);
        assert_eq!(resize_bilinear(&img, 8, 4), img);
        let c = Raster::from_fn(16, 8, |_, _| 2.5);
        assert!(resize_bilinear(&c, 4, 2).data.iter().all(|&v| (v - 2.5).abs() < 1e-15));
        // Downsampling by two averages 2x2 blocks.
        let r = Raster::from_fn(4, 4, |y, x| (y * 4 + x) as f64);
        let d = resize_bilinear(&r, 2, 2);
        assert!((d.get(0, 0) - (0.0 + 1.0 + 4.0 + 5.0) / 4.0).abs() < 1e-12);
    }
}
