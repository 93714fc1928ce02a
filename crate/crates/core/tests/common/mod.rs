//! Straight-line reference implementations and small helpers shared by the
//! integration tests. Nothing here calls into the library's loss or metric
//! code; every value is recomputed from first principles on plain `f64`
//! slices.

#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use msoreid::data::Modality;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn tensor(rows: &[Vec<f64>]) -> Tensor {
    let d = rows[0].len();
    Tensor::from_vec(rows.concat(), (rows.len(), d), &Device::Cpu).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

/// A random P x K x 2 batch: `p` identities with `k` items per modality, rows
/// shuffled so neither identities nor modalities are contiguous.
pub struct PkBatch {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub modalities: Vec<Modality>,
}

pub fn random_pk_batch(rng: &mut ChaCha8Rng, p: usize, k: usize, dim: usize, normalize: bool) -> PkBatch {
    let mut items = Vec::new();
    // Non-contiguous label values.
    let ids: Vec<usize> = (0..p).map(|i| 3 * i + rng.random_range(0..3)).collect();
    for &id in &ids {
        for m in Modality::ALL {
            for _ in 0..k {
                let v = normal_vec(rng, dim);
                items.push((if normalize { unit(&v) } else { v }, id, m));
            }
        }
    }
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
    PkBatch {
        rows: items.iter().map(|t| t.0.clone()).collect(),
        labels: items.iter().map(|t| t.1).collect(),
        modalities: items.iter().map(|t| t.2).collect(),
    }
}

/// Mean over identities of `softplus(||c_rgb - c_ir|| - min_j ||c_k - c_j||)`,
/// where `c_k` is the midpoint of identity `k`'s modality centers.
pub fn cmcc_oracle(rows: &[Vec<f64>], labels: &[usize], modalities: &[Modality]) -> f64 {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let dim = rows[0].len();
    let center = |id: usize, m: Modality| {
        let mut c = vec![0.0; dim];
        let mut n = 0.0;
        for i in 0..rows.len() {
            if labels[i] == id && modalities[i] == m {
                for d in 0..dim {
                    c[d] += rows[i][d];
                }
                n += 1.0;
            }
        }
        c.iter().map(|v| v / n).collect::<Vec<f64>>()
    };
    let mut intra = Vec::new();
    let mut mid = Vec::new();
    for &id in &ids {
        let r = center(id, Modality::Rgb);
        let t = center(id, Modality::Ir);
        intra.push(euclid(&r, &t));
        mid.push(r.iter().zip(&t).map(|(a, b)| 0.5 * (a + b)).collect::<Vec<f64>>());
    }
    let mut total = 0.0;
    for k in 0..ids.len() {
        let mut nearest = f64::INFINITY;
        for j in 0..ids.len() {
            if j != k {
                nearest = nearest.min(euclid(&mid[k], &mid[j]));
            }
        }
        total += softplus(intra[k] - nearest);
    }
    total / ids.len() as f64
}

/// Weighted-regularization triplet loss written out anchor by anchor.
pub fn wrt_oracle(rows: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = rows.len();
    let mut total = 0.0;
    for a in 0..n {
        let (mut pz, mut pw) = (0.0, 0.0);
        let (mut nz, mut nw) = (0.0, 0.0);
        // Reference values keep the exponentials in range.
        let dmax = (0..n).map(|j| euclid(&rows[a], &rows[j])).fold(0.0, f64::max);
        for j in 0..n {
            let d = euclid(&rows[a], &rows[j]);
            if j != a && labels[j] == labels[a] {
                let w = (d - dmax).exp();
                pz += w;
                pw += w * d;
            } else if labels[j] != labels[a] {
                let w = (-d).exp();
                nz += w;
                nw += w * d;
            }
        }
        total += softplus(pw / pz - nw / nz);
    }
    total / n as f64
}

/// Mean negative log-likelihood of the labelled class.
pub fn id_oracle(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / logits.len() as f64
}

/// A dense `(C, H, W)` map.
#[derive(Clone, Debug)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Map { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }
}

/// One frozen conv layer as flat `f64`: `weight[o][i][ky][kx]`, `bias[o]`.
pub struct RefConv {
    pub out_c: usize,
    pub in_c: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn reference_blocks(net: &msoreid::losses::PerceptualNet) -> Vec<Vec<RefConv>> {
    net.block_convs()
        .into_iter()
        .map(|block| {
            block
                .into_iter()
                .map(|(w, b)| {
                    let (o, i, _, _) = w.dims4().unwrap();
                    RefConv {
                        out_c: o,
                        in_c: i,
                        weight: w.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap(),
                        bias: b.to_dtype(DType::F64).unwrap().to_vec1().unwrap(),
                    }
                })
                .collect()
        })
        .collect()
}

/// 3x3 convolution, zero padding 1, then ReLU.
fn conv_relu(x: &Map, conv: &RefConv) -> Map {
    let mut out = Map::zeros(conv.out_c, x.h, x.w);
    for o in 0..conv.out_c {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut s = conv.bias[o];
                for i in 0..conv.in_c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            let sx = xx as isize + kx as isize - 1;
                            if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                continue;
                            }
                            s += conv.weight[((o * conv.in_c + i) * 3 + ky) * 3 + kx]
                                * x.at(i, sy as usize, sx as usize);
                        }
                    }
                }
                out.set(o, y, xx, s.max(0.0));
            }
        }
    }
    out
}

fn max_pool_2(x: &Map) -> Map {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Map::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                let v = x
                    .at(c, 2 * y, 2 * xx)
                    .max(x.at(c, 2 * y, 2 * xx + 1))
                    .max(x.at(c, 2 * y + 1, 2 * xx))
                    .max(x.at(c, 2 * y + 1, 2 * xx + 1));
                out.set(c, y, xx, v);
            }
        }
    }
    out
}

pub fn reference_taps(blocks: &[Vec<RefConv>], x: &Map) -> Vec<Map> {
    let mut taps = Vec::new();
    let mut cur = x.clone();
    for (t, block) in blocks.iter().enumerate() {
        if t > 0 {
            cur = max_pool_2(&cur);
        }
        for conv in block {
            cur = conv_relu(&cur, conv);
        }
        taps.push(cur.clone());
    }
    taps
}

/// Channel mean of `f`, replicated to three channels.
fn channel_mean3(f: &Map) -> Map {
    let mut out = Map::zeros(3, f.h, f.w);
    for y in 0..f.h {
        for x in 0..f.w {
            let m = (0..f.c).map(|c| f.at(c, y, x)).sum::<f64>() / f.c as f64;
            for c in 0..3 {
                out.set(c, y, x, m);
            }
        }
    }
    out
}

/// Perceptual edge loss: per item the sum over blocks of the mean squared
/// tap difference, averaged within each modality, modality means summed.
/// Edge maps must already be at the feature size.
pub fn pef_oracle(blocks: &[Vec<RefConv>], f: &[Map], e: &[Map], modalities: &[Modality]) -> f64 {
    let per_item: Vec<f64> = f
        .iter()
        .zip(e)
        .map(|(fi, ei)| {
            let tx = reference_taps(blocks, &channel_mean3(fi));
            let ty = reference_taps(blocks, &channel_mean3(ei));
            tx.iter()
                .zip(&ty)
                .map(|(a, b)| {
                    a.data.iter().zip(&b.data).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.data.len() as f64
                })
                .sum()
        })
        .collect();
    let mut total = 0.0;
    for m in Modality::ALL {
        let vals: Vec<f64> = per_item.iter().zip(modalities).filter(|(_, &mm)| mm == m).map(|(v, _)| *v).collect();
        if !vals.is_empty() {
            total += vals.iter().sum::<f64>() / vals.len() as f64;
        }
    }
    total
}

pub fn maps_to_tensor(maps: &[Map]) -> Tensor {
    let (c, h, w) = (maps[0].c, maps[0].h, maps[0].w);
    let data: Vec<f64> = maps.iter().flat_map(|m| m.data.iter().copied()).collect();
    Tensor::from_vec(data, (maps.len(), c, h, w), &Device::Cpu).unwrap()
}

pub fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Map {
    Map { c, h, w, data: normal_vec(rng, c * h * w) }
}

/// Outcome of a gradient check: relative error `||a - n|| / max(||a||, ||n||)`
/// over the compared coordinates, and how many were set aside because the
/// step straddles a kink.
pub struct GradCheck {
    pub rel_error: f64,
    pub compared: usize,
    pub straddled: usize,
}

/// Autograd gradient of `f` at `x0` against central differences with step
/// `h`. With `piecewise` set, coordinates whose central difference at `h`
/// and at `h / 10` disagree by more than `1e-6` are treated as straddling a
/// ReLU or max kink and left out.
pub fn gradient_check(x0: &Tensor, h: f64, piecewise: bool, f: impl Fn(&Tensor) -> Tensor) -> GradCheck {
    let var = Var::from_tensor(x0).unwrap();
    let loss = f(var.as_tensor());
    let grads = loss.backward().unwrap();
    let analytic: Vec<f64> = grads
        .get(var.as_tensor())
        .map(|g| g.flatten_all().unwrap().to_vec1().unwrap())
        .unwrap_or_else(|| vec![0.0; x0.elem_count()]);
    let base: Vec<f64> = x0.flatten_all().unwrap().to_vec1().unwrap();
    let shape = x0.shape().clone();
    let eval = |v: Vec<f64>| scalar(&f(&Tensor::from_vec(v, shape.clone(), &Device::Cpu).unwrap()));
    let central = |i: usize, h: f64| {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        (eval(plus) - eval(minus)) / (2.0 * h)
    };
    let (mut a, mut n) = (Vec::new(), Vec::new());
    let mut straddled = 0;
    for i in 0..base.len() {
        let d = central(i, h);
        if piecewise && (d - central(i, h / 10.0)).abs() > 1e-6 {
            straddled += 1;
            continue;
        }
        a.push(analytic[i]);
        n.push(d);
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = a.iter().zip(&n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(&a).max(norm(&n));
    GradCheck {
        rel_error: if scale == 0.0 { 0.0 } else { diff / scale },
        compared: a.len(),
        straddled,
    }
}

pub fn gradient_rel_error(x0: &Tensor, h: f64, f: impl Fn(&Tensor) -> Tensor) -> f64 {
    gradient_check(x0, h, false, f).rel_error
}

/// Ranking metrics for one query from its ranked match mask, computed by
/// walking the list and recording precision at each hit.
pub struct QueryOracle {
    pub cmc: Vec<f64>,
    pub ap: f64,
    pub inp: f64,
}

pub fn query_oracle(mask: &[bool]) -> Option<QueryOracle> {
    let total = mask.iter().filter(|&&m| m).count();
    if total == 0 {
        return None;
    }
    let mut seen = 0;
    let mut precisions = Vec::new();
    let mut last_hit = 0;
    let mut cmc = Vec::new();
    for (r, &m) in mask.iter().enumerate() {
        if m {
            seen += 1;
            precisions.push(seen as f64 / (r + 1) as f64);
            last_hit = r + 1;
        }
        cmc.push(if seen > 0 { 1.0 } else { 0.0 });
    }
    Some(QueryOracle {
        cmc,
        ap: precisions.iter().sum::<f64>() / total as f64,
        inp: total as f64 / last_hit as f64,
    })
}

/// Gallery order by repeated selection of the smallest remaining cosine
/// distance, lowest index first among equals.
pub fn selection_rank(query: &[f64], gallery: &[Vec<f64>]) -> Vec<usize> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dist: Vec<f64> = gallery
        .iter()
        .map(|g| 1.0 - query.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / (norm(query) * norm(g)))
        .collect();
    let mut left: Vec<usize> = (0..gallery.len()).collect();
    let mut order = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            if dist[left[k]] < dist[left[best]] {
                best = k;
            }
        }
        order.push(left.remove(best));
    }
    order
}
