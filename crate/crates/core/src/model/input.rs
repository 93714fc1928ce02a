use candle_core::{DType, Device, Tensor};
use image::RgbImage;

use super::config::ModelConfig;
use super::network::{NetInput, TwoStreamNet};
use crate::data::{Augmenter, ImageRecord, Modality, Normalization};
use crate::edge::{luminance_u8, resize_bilinear, sobel_edges};
use crate::{Error, Result};

/// Turns already-resized images into network inputs, computing the edge
/// maps the model's fusion strategy needs.
#[derive(Debug, Clone)]
pub struct InputBuilder {
    pub normalization: Normalization,
    pub stem_edges: bool,
    pub edge_images: bool,
    pub dtype: DType,
}

impl InputBuilder {
    pub fn for_model(net: &TwoStreamNet, normalization: Normalization) -> Self {
        Self {
            normalization,
            stem_edges: net.needs_stem_edges(),
            edge_images: net.needs_edge_images(),
            dtype: net.dtype(),
        }
    }

    pub fn build(&self, images: &[&RgbImage], modalities: Vec<Modality>) -> Result<NetInput> {
        let Some(first) = images.first() else {
            return Err(Error::Shape("empty batch".into()));
        };
        let (w, h) = first.dimensions();
        if images.iter().any(|i| i.dimensions() != (w, h)) {
            return Err(Error::Shape("batch images differ in size".into()));
        }
        let (w, h) = (w as usize, h as usize);
        let b = images.len();
        let mut pixels = Vec::with_capacity(b * 3 * h * w);
        for img in images {
            pixels.extend(self.normalization.apply(img));
        }
        let to_tensor = |data: Vec<f32>, shape: (usize, usize, usize, usize)| -> Result<Tensor> {
            Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(self.dtype)?)
        };
        let images_t = to_tensor(pixels, (b, 3, h, w))?;

        let mut stem_edges = None;
        let mut edge_images = None;
        if self.stem_edges || self.edge_images {
            let (sh, sw) = ModelConfig::stem_output_size(h, w);
            let mut stem_buf = Vec::new();
            let mut full_buf = Vec::new();
            for img in images {
                let edges = sobel_edges(&luminance_u8(img))?;
                if self.stem_edges {
                    stem_buf.extend(resize_bilinear(&edges.0, sh, sw).data.iter().map(|&v| v as f32));
                }
                if self.edge_images {
                    for _ in 0..3 {
                        full_buf.extend(edges.0.data.iter().map(|&v| v as f32));
                    }
                }
            }
            if self.stem_edges {
                stem_edges = Some(to_tensor(stem_buf, (b, 1, sh, sw))?);
            }
            if self.edge_images {
                edge_images = Some(to_tensor(full_buf, (b, 3, h, w))?);
            }
        }
        Ok(NetInput {
            images: images_t,
            modalities,
            stem_edges,
            edge_images,
        })
    }
}

/// Dense row-major matrix of extracted features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("feature rows differ in length".into()));
        }
        Ok(Self {
            rows: rows.len(),
            dim,
            data: rows.concat(),
        })
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            dim: self.dim,
            data,
        }
    }
}

/// Eval-mode post-BN features for `records`, in record order.
pub fn extract_features(
    net: &TwoStreamNet,
    records: &[&ImageRecord],
    builder: &InputBuilder,
    resizer: &Augmenter,
    batch_size: usize,
) -> Result<FeatureMatrix> {
    let dim = net.config().embedding_dim;
    let mut data = Vec::with_capacity(records.len() * dim);
    for chunk in records.chunks(batch_size.max(1)) {
        let resized: Vec<RgbImage> = chunk.iter().map(|r| resizer.resize(&r.image)).collect();
        let refs: Vec<&RgbImage> = resized.iter().collect();
        let input = builder.build(&refs, chunk.iter().map(|r| r.modality).collect())?;
        let taps = net.forward(&input, false)?;
        data.extend(taps.post_bn.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?);
    }
    Ok(FeatureMatrix {
        rows: records.len(),
        dim,
        data,
    })
}
