use candle_core::{DType, Tensor, Var, D};

use super::params::{ParamInit, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        store: &ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.param(
            &format!("{name}.weight"),
            &[out_c, in_c, kernel, kernel],
            ParamInit::KaimingNormal { fan_in: in_c * kernel * kernel },
        )?;
        let bias = if bias {
            Some(store.param(&format!("{name}.bias"), &[out_c], ParamInit::Const(0.0))?)
        } else {
            None
        };
        Ok(Self { weight, bias, stride, padding })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Batch normalization over the channel axis of `(B, C)` or `(B, C, H, W)`
/// inputs, with running statistics kept as buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new(store: &ParamStore, name: &str, channels: usize) -> Result<Self> {
        Self::with_init(store, name, channels, 1.0, true)
    }

    /// `weight_init` sets the initial scale; `bias = false` fixes the shift at zero.
    pub fn with_init(store: &ParamStore, name: &str, channels: usize, weight_init: f64, bias: bool) -> Result<Self> {
        let weight = store.param(&format!("{name}.weight"), &[channels], ParamInit::Const(weight_init))?;
        let bias = if bias {
            Some(store.param(&format!("{name}.bias"), &[channels], ParamInit::Const(0.0))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[channels], ParamInit::Const(0.0))?,
            running_var: store.buffer(&format!("{name}.running_var"), &[channels], ParamInit::Const(1.0))?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn running_mean(&self) -> &Tensor {
        self.running_mean.as_tensor()
    }

    pub fn running_var(&self) -> &Tensor {
        self.running_var.as_tensor()
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = self.weight.dim(0)?;
        let rank = x.rank();
        let view: Vec<usize> = match rank {
            2 => vec![1, c],
            4 => vec![1, c, 1, 1],
            r => return Err(Error::Shape(format!("batch norm expects rank 2 or 4, got {r}"))),
        };
        if x.dim(1)? != c {
            return Err(Error::Shape(format!("batch norm over {c} channels got {:?}", x.dims())));
        }
        let (mean, var) = if train {
            // Move channels first and flatten the rest.
            let flat = if rank == 4 {
                x.transpose(0, 1)?.flatten_from(1)?
            } else {
                x.t()?
            };
            let n = flat.dim(1)?;
            let mean = flat.mean_keepdim(1)?;
            let centered = flat.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(1)?;
            let mean = mean.flatten_all()?;
            let var = var.flatten_all()?;
            let unbiased = if n > 1 {
                (var.detach() * (n as f64 / (n as f64 - 1.0)))?
            } else {
                var.detach()
            };
            let m = self.momentum;
            self.running_mean
                .set(&((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach() * m)?)?)?;
            self.running_var
                .set(&((self.running_var.as_tensor() * (1.0 - m))? + (unbiased * m)?)?)?;
            (mean, var)
        } else {
            (self.running_mean.as_tensor().clone(), self.running_var.as_tensor().clone())
        };
        let inv = (var + self.eps)?.sqrt()?.recip()?;
        let scale = (&self.weight * inv)?;
        let mut y = x
            .broadcast_sub(&mean.reshape(view.as_slice())?)?
            .broadcast_mul(&scale.reshape(view.as_slice())?)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(&b.reshape(view.as_slice())?)?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

#[derive(Debug, Clone)]
struct Shortcut {
    conv: Conv2d,
    bn: BatchNorm,
}

/// Residual block: basic (two 3x3 convs) or bottleneck (1x1, 3x3, 1x1 with a
/// four-fold narrower middle).
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    convs: Vec<(Conv2d, BatchNorm)>,
    shortcut: Option<Shortcut>,
}

impl ResidualBlock {
    pub fn new(
        store: &ParamStore,
        name: &str,
        kind: BlockKind,
        in_c: usize,
        out_c: usize,
        stride: usize,
    ) -> Result<Self> {
        let mut convs = Vec::new();
        match kind {
            BlockKind::Basic => {
                convs.push((
                    Conv2d::new(store, &format!("{name}.conv1"), in_c, out_c, 3, stride, 1, false)?,
                    BatchNorm::new(store, &format!("{name}.bn1"), out_c)?,
                ));
                convs.push((
                    Conv2d::new(store, &format!("{name}.conv2"), out_c, out_c, 3, 1, 1, false)?,
                    BatchNorm::new(store, &format!("{name}.bn2"), out_c)?,
                ));
            }
            BlockKind::Bottleneck => {
                let mid = (out_c / 4).max(1);
                convs.push((
                    Conv2d::new(store, &format!("{name}.conv1"), in_c, mid, 1, 1, 0, false)?,
                    BatchNorm::new(store, &format!("{name}.bn1"), mid)?,
                ));
                convs.push((
                    Conv2d::new(store, &format!("{name}.conv2"), mid, mid, 3, stride, 1, false)?,
                    BatchNorm::new(store, &format!("{name}.bn2"), mid)?,
                ));
                convs.push((
                    Conv2d::new(store, &format!("{name}.conv3"), mid, out_c, 1, 1, 0, false)?,
                    BatchNorm::new(store, &format!("{name}.bn3"), out_c)?,
                ));
            }
        }
        let shortcut = if stride != 1 || in_c != out_c {
            Some(Shortcut {
                conv: Conv2d::new(store, &format!("{name}.downsample.conv"), in_c, out_c, 1, stride, 0, false)?,
                bn: BatchNorm::new(store, &format!("{name}.downsample.bn"), out_c)?,
            })
        } else {
            None
        };
        Ok(Self { convs, shortcut })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.convs.len() - 1;
        for (i, (conv, bn)) in self.convs.iter().enumerate() {
            h = bn.forward(&conv.forward(&h)?, train)?;
            if i != last {
                h = h.relu()?;
            }
        }
        let identity = match &self.shortcut {
            Some(s) => s.bn.forward(&s.conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((h + identity)?.relu()?)
    }
}

/// Dot-product non-local block with a residual connection. The output
/// projection's batch norm starts at zero scale, so a fresh block is the
/// identity map.
#[derive(Debug, Clone)]
pub struct NonLocalBlock {
    g: Conv2d,
    theta: Conv2d,
    phi: Conv2d,
    out: Conv2d,
    out_bn: BatchNorm,
}

impl NonLocalBlock {
    pub fn new(store: &ParamStore, name: &str, channels: usize) -> Result<Self> {
        let inter = (channels / 2).max(1);
        Ok(Self {
            g: Conv2d::new(store, &format!("{name}.g"), channels, inter, 1, 1, 0, true)?,
            theta: Conv2d::new(store, &format!("{name}.theta"), channels, inter, 1, 1, 0, true)?,
            phi: Conv2d::new(store, &format!("{name}.phi"), channels, inter, 1, 1, 0, true)?,
            out: Conv2d::new(store, &format!("{name}.out"), inter, channels, 1, 1, 0, true)?,
            out_bn: BatchNorm::with_init(store, &format!("{name}.out_bn"), channels, 0.0, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (b, _c, h, w) = x.dims4()?;
        let n = h * w;
        let g = self.g.forward(x)?;
        let inter = g.dim(1)?;
        let g = g.reshape((b, inter, n))?.transpose(1, 2)?.contiguous()?;
        let theta = self.theta.forward(x)?.reshape((b, inter, n))?.transpose(1, 2)?.contiguous()?;
        let phi = self.phi.forward(x)?.reshape((b, inter, n))?.contiguous()?;
        let affinity = (theta.matmul(&phi)? / n as f64)?;
        let y = affinity.matmul(&g)?.transpose(1, 2)?.contiguous()?.reshape((b, inter, h, w))?;
        let z = self.out_bn.forward(&self.out.forward(&y)?, train)?;
        Ok((z + x)?)
    }
}

/// Generalized-mean pooling `(mean_hw x^p)^(1/p)` with a learnable exponent.
#[derive(Debug, Clone)]
pub struct GeM {
    pub p: Tensor,
    eps: f64,
}

impl GeM {
    /// Lower bound applied to `p` in the forward pass and after each update.
    pub const MIN_P: f64 = 1.0;

    pub fn new(store: &ParamStore, name: &str, p_init: f64) -> Result<Self> {
        if !(p_init >= Self::MIN_P) {
            return Err(Error::Config(format!("GeM p must be at least {}, got {p_init}", Self::MIN_P)));
        }
        Ok(Self {
            p: store.param(&format!("{name}.p"), &[1], ParamInit::Const(p_init))?,
            eps: 1e-6,
        })
    }

    pub fn from_tensor(p: Tensor) -> Self {
        Self { p, eps: 1e-6 }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        gem_pool(x, &self.p, self.eps)
    }

    pub fn current_p(&self) -> Result<f64> {
        Ok(self.p.to_dtype(DType::F64)?.to_vec1::<f64>()?[0])
    }
}

/// GeM over the spatial axes of `(B, C, H, W)`, returning `(B, C)`.
pub fn gem_pool(x: &Tensor, p: &Tensor, eps: f64) -> Result<Tensor> {
    let p = p.maximum(GeM::MIN_P)?.reshape((1, 1, 1, 1))?;
    let powered = x.clamp(eps, f64::MAX)?.log()?.broadcast_mul(&p)?.exp()?;
    let pooled = powered.mean(D::Minus1)?.mean(D::Minus1)?;
    Ok(pooled.log()?.broadcast_div(&p.reshape((1, 1))?)?.exp()?)
}
