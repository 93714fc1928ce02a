use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use image::{GrayImage, Luma, Rgb, RgbImage};

use super::canvas::{identity_color, Canvas};
use crate::data::Modality;
use crate::edge::Raster;
use crate::losses::LossReport;
use crate::{Error, Result};

/// One item's `C x h x w` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSet {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMapSet {
    /// Item `index` of a `(B, C, h, w)` tensor.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Self> {
        let (_, c, h, w) = t.dims4()?;
        let data = t.get(index)?.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        Ok(Self {
            channels: c,
            height: h,
            width: w,
            data,
        })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    fn max_value(&self) -> f64 {
        self.data.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max)
    }
}

/// Channel tiles laid out `cols` wide, each pixel enlarged `scale` times.
/// Values are mapped linearly from `[0, max]` to black..white, so a channel
/// of zeros is a black tile. `max` defaults to the set's largest value.
pub fn feature_map_grid(set: &FeatureMapSet, cols: usize, scale: u32, max: Option<f64>) -> RgbImage {
    let cols = cols.max(1).min(set.channels.max(1));
    let rows = set.channels.div_ceil(cols);
    let scale = scale.max(1);
    let (tw, th) = (set.width as u32 * scale, set.height as u32 * scale);
    let gap = 1;
    let mut img = RgbImage::from_pixel(
        cols as u32 * (tw + gap) + gap,
        rows as u32 * (th + gap) + gap,
        Rgb([128, 128, 128]),
    );
    let max = max.unwrap_or_else(|| set.max_value());
    for c in 0..set.channels {
        let (ox, oy) = ((c % cols) as u32 * (tw + gap) + gap, (c / cols) as u32 * (th + gap) + gap);
        let values = set.channel(c);
        for y in 0..th {
            for x in 0..tw {
                let v = values[(y / scale) as usize * set.width + (x / scale) as usize];
                let g = if max > 0.0 { (v / max).clamp(0.0, 1.0) * 255.0 } else { 0.0 };
                img.put_pixel(ox + x, oy + y, Rgb([g.round() as u8; 3]));
            }
        }
    }
    img
}

/// RGB and IR grids side by side on a common intensity scale.
pub fn feature_map_pair(rgb: &FeatureMapSet, ir: &FeatureMapSet, cols: usize, scale: u32) -> RgbImage {
    let max = rgb.max_value().max(ir.max_value());
    let a = feature_map_grid(rgb, cols, scale, Some(max));
    let b = feature_map_grid(ir, cols, scale, Some(max));
    let sep = 8;
    let mut out = RgbImage::from_pixel(a.width() + sep + b.width(), a.height().max(b.height()), Rgb([255; 3]));
    image::imageops::replace(&mut out, &a, 0, 0);
    image::imageops::replace(&mut out, &b, (a.width() + sep) as i64, 0);
    out
}

/// Edge map as a grayscale image of `|value| / max|value|`.
pub fn edge_map_image(edges: &Raster) -> GrayImage {
    let max = edges.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    GrayImage::from_fn(edges.width as u32, edges.height as u32, |x, y| {
        let v = edges.get(y as usize, x as usize).abs();
        Luma([if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 }])
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projection onto the two leading principal components, found by power
/// iteration with deflation.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = rows.len();
    let dim = rows.first().map_or(0, Vec::len);
    if n < 2 || dim < 2 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape("PCA needs at least two rows of equal length >= 2".into()));
    }
    let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
    let cov_apply = |v: &[f64], found: &[Vec<f64>]| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for row in &x {
            let s = dot(row, v);
            for (o, r) in out.iter_mut().zip(row) {
                *o += s * r;
            }
        }
        for u in found {
            let s = dot(u, &out);
            for (o, uu) in out.iter_mut().zip(u) {
                *o -= s * uu;
            }
        }
        out
    };
    let mut comps: Vec<Vec<f64>> = Vec::new();
    for k in 0..2 {
        let mut v: Vec<f64> = (0..dim).map(|j| 1.0 + ((j * 7 + k * 3) % 11) as f64 / 11.0).collect();
        for _ in 0..500 {
            let w = cov_apply(&v, &comps);
            let norm = dot(&w, &w).sqrt();
            if norm < 1e-300 {
                break;
            }
            let next: Vec<f64> = w.iter().map(|a| a / norm).collect();
            let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if delta < 1e-12 {
                break;
            }
        }
        // Gram-Schmidt against earlier components for numerical safety
        for u in &comps {
            let s = dot(u, &v);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= s * b);
        }
        let norm = dot(&v, &v).sqrt().max(1e-300);
        v.iter_mut().for_each(|a| *a /= norm);
        comps.push(v);
    }
    Ok(x.iter().map(|r| [dot(r, &comps[0]), dot(r, &comps[1])]).collect())
}

/// Mean silhouette coefficient under Euclidean distance. Points in a
/// singleton cluster contribute 0.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() || points.is_empty() {
        return Err(Error::Shape("silhouette needs one label per point".into()));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(Error::Eval("silhouette needs at least two clusters".into()));
    }
    let d = |a: usize, b: usize| ((points[a][0] - points[b][0]).powi(2) + (points[a][1] - points[b][1]).powi(2)).sqrt();
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let own = &members[&l];
        if own.len() == 1 {
            continue;
        }
        let a = own.iter().filter(|&&j| j != i).map(|&j| d(i, j)).sum::<f64>() / (own.len() - 1) as f64;
        let b = members
            .iter()
            .filter(|(&k, _)| k != l)
            .map(|(_, m)| m.iter().map(|&j| d(i, j)).sum::<f64>() / m.len() as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / points.len() as f64)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// 2-D points colored by identity; RGB items are filled squares, IR items
/// are rings.
pub fn scatter_plot(points: &[[f64; 2]], labels: &[usize], modalities: &[Modality], size: u32) -> Result<RgbImage> {
    if points.len() != labels.len() || points.len() != modalities.len() {
        return Err(Error::Shape("scatter needs one label and modality per point".into()));
    }
    let mut canvas = Canvas::new(size, size);
    let margin = 12.0;
    let span = size as f64 - 2.0 * margin;
    let (x0, x1) = bounds(points.iter().map(|p| p[0]));
    let (y0, y1) = bounds(points.iter().map(|p| p[1]));
    for ((p, &l), &m) in points.iter().zip(labels).zip(modalities) {
        let px = (margin + (p[0] - x0) / (x1 - x0) * span).round() as i64;
        let py = (margin + (1.0 - (p[1] - y0) / (y1 - y0)) * span).round() as i64;
        match m {
            Modality::Rgb => canvas.fill_square(px, py, 3, identity_color(l)),
            Modality::Ir => canvas.ring(px, py, 4, identity_color(l)),
        }
    }
    Ok(canvas.image)
}

const CURVE_COLORS: [Rgb<u8>; 5] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([0, 0, 0]),
];

/// One polyline per loss field (pef, id, wrt, cmcc, total) over steps,
/// with a color key in the top-left corner in the same order.
pub fn training_curves(reports: &[LossReport], width: u32, height: u32) -> Result<RgbImage> {
    if reports.len() < 2 {
        return Err(Error::Eval("training curves need at least two points".into()));
    }
    let mut canvas = Canvas::new(width, height);
    let (left, right, top, bottom) = (30.0, 10.0, 24.0, 20.0);
    let (w, h) = (width as f64 - left - right, height as f64 - top - bottom);
    let (lo, hi) = bounds(reports.iter().flat_map(|r| r.values()));
    let axis = Rgb([90, 90, 90]);
    let origin = (left as i64, (top + h) as i64);
    canvas.line(origin, ((left + w) as i64, origin.1), axis);
    canvas.line(origin, (origin.0, top as i64), axis);
    let n = reports.len() - 1;
    for (field, color) in CURVE_COLORS.iter().enumerate() {
        let pt = |i: usize| -> (i64, i64) {
            let v = reports[i].values()[field];
            let v = if v.is_finite() { v } else { lo };
            (
                (left + i as f64 / n as f64 * w).round() as i64,
                (top + (1.0 - (v - lo) / (hi - lo)) * h).round() as i64,
            )
        };
        for i in 0..n {
            canvas.line(pt(i), pt(i + 1), *color);
        }
        canvas.fill_square(8 + field as i64 * 14, 8, 4, *color);
    }
    Ok(canvas.image)
}

/// The data behind [`training_curves`].
pub fn training_curves_csv(reports: &[LossReport]) -> String {
    let mut s = format!("step,{}\n", LossReport::FIELDS.join(","));
    for (i, r) in reports.iter().enumerate() {
        let v = r.values();
        s.push_str(&format!("{i},{},{},{},{},{}\n", v[0], v[1], v[2], v[3], v[4]));
    }
    s
}
