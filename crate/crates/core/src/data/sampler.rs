use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ImageRecord, Modality, Split};
use crate::{Error, Result};

/// Identity-balanced batch shape: `p` identities, each with `k` visible and
/// `k` infrared images, so a batch holds `p * 2k` images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSpec {
    pub p: usize,
    pub k: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self { p: 8, k: 4 }
    }
}

impl BatchSpec {
    pub fn batch_size(&self) -> usize {
        self.p * 2 * self.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.k == 0 {
            return Err(Error::Config(format!("batch spec needs positive P and K, got {self:?}")));
        }
        Ok(())
    }
}

/// What to do when an identity has fewer than `k` images of a modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortfallPolicy {
    #[default]
    WithReplacement,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    /// Index into the record slice the batch was sampled from.
    pub record: usize,
    pub identity: usize,
    pub modality: Modality,
}

/// A sampled batch, grouped by identity: for each identity its `k` visible
/// items followed by its `k` infrared items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBatch {
    pub items: Vec<BatchItem>,
}

impl ImageBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.identity).collect()
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.items.iter().map(|i| i.modality).collect()
    }

    /// Per-identity `(rgb, ir)` counts.
    pub fn histogram(&self) -> BTreeMap<usize, (usize, usize)> {
        let mut h = BTreeMap::new();
        for item in &self.items {
            let e: &mut (usize, usize) = h.entry(item.identity).or_default();
            match item.modality {
                Modality::Rgb => e.0 += 1,
                Modality::Ir => e.1 += 1,
            }
        }
        h
    }
}

/// Training records grouped by identity and modality.
#[derive(Debug, Clone)]
pub struct IdentityIndex {
    /// identity -> (rgb record indices, ir record indices); only identities
    /// with at least one image in each modality are kept.
    groups: Vec<(usize, Vec<usize>, Vec<usize>)>,
}

impl IdentityIndex {
    pub fn new(records: &[ImageRecord]) -> Self {
        let mut map: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for (i, r) in records.iter().enumerate().filter(|(_, r)| r.split == Split::Train) {
            let e = map.entry(r.identity).or_default();
            match r.modality {
                Modality::Rgb => e.0.push(i),
                Modality::Ir => e.1.push(i),
            }
        }
        let groups = map
            .into_iter()
            .filter(|(id, (rgb, ir))| {
                let ok = !rgb.is_empty() && !ir.is_empty();
                if !ok {
                    log::warn!("identity {id} lacks one modality; excluded from sampling");
                }
                ok
            })
            .map(|(id, (rgb, ir))| (id, rgb, ir))
            .collect();
        Self { groups }
    }

    pub fn num_identities(&self) -> usize {
        self.groups.len()
    }
}

fn pick<R: Rng + ?Sized>(
    pool: &[usize],
    k: usize,
    policy: ShortfallPolicy,
    identity: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if pool.len() >= k {
        Ok(index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
    } else {
        match policy {
            ShortfallPolicy::WithReplacement => {
                Ok((0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect())
            }
            ShortfallPolicy::Error => Err(Error::Config(format!(
                "identity {identity} has {} images in a modality, need {k}",
                pool.len()
            ))),
        }
    }
}

pub fn sample_batch<R: Rng + ?Sized>(
    index: &IdentityIndex,
    spec: BatchSpec,
    policy: ShortfallPolicy,
    rng: &mut R,
) -> Result<ImageBatch> {
    spec.validate()?;
    if index.groups.len() < spec.p {
        return Err(Error::Config(format!(
            "batch needs {} identities but only {} are available",
            spec.p,
            index.groups.len()
        )));
    }
    let mut chosen = index::sample(rng, index.groups.len(), spec.p).into_vec();
    chosen.sort_unstable();
    let mut items = Vec::with_capacity(spec.batch_size());
    for g in chosen {
        let (identity, rgb, ir) = &index.groups[g];
        for (pool, modality) in [(rgb, Modality::Rgb), (ir, Modality::Ir)] {
            for record in pick(pool, spec.k, policy, *identity, rng)? {
                items.push(BatchItem {
                    record,
                    identity: *identity,
                    modality,
                });
            }
        }
    }
    Ok(ImageBatch { items })
}
