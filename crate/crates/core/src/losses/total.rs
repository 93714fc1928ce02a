use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossFlags {
    pub pef: bool,
    pub id: bool,
    pub wrt: bool,
    pub cmcc: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        Self::FULL
    }
}

impl LossFlags {
    /// Identity and triplet terms only.
    pub const BASELINE: Self = Self {
        pef: false,
        id: true,
        wrt: true,
        cmcc: false,
    };
    pub const BASELINE_PEF: Self = Self {
        pef: true,
        ..Self::BASELINE
    };
    pub const BASELINE_CMCC: Self = Self {
        cmcc: true,
        ..Self::BASELINE
    };
    pub const FULL: Self = Self {
        pef: true,
        id: true,
        wrt: true,
        cmcc: true,
    };

    /// The four rows of the loss ablation, in order.
    pub const MATRIX: [Self; 4] = [Self::BASELINE, Self::BASELINE_PEF, Self::BASELINE_CMCC, Self::FULL];

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.id && self.wrt {
            parts.push("B".to_string());
        } else {
            if self.id {
                parts.push("ID".into());
            }
            if self.wrt {
                parts.push("WRT".into());
            }
        }
        if self.pef {
            parts.push("PEF".into());
        }
        if self.cmcc {
            parts.push("CMCC".into());
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

impl fmt::Display for LossFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for LossFlags {
    type Err = Error;

    /// Parses labels such as `B`, `B+PEF`, `B+PEF+CMCC` or `ID+CMCC`.
    fn from_str(s: &str) -> Result<Self> {
        let mut flags = Self {
            pef: false,
            id: false,
            wrt: false,
            cmcc: false,
        };
        for part in s.split('+').map(str::trim) {
            match part.to_ascii_uppercase().as_str() {
                "B" => {
                    flags.id = true;
                    flags.wrt = true;
                }
                "ID" => flags.id = true,
                "WRT" => flags.wrt = true,
                "PEF" => flags.pef = true,
                "CMCC" => flags.cmcc = true,
                other => return Err(Error::Config(format!("unknown loss term `{other}` in `{s}`"))),
            }
        }
        Ok(flags)
    }
}

/// Scalar loss tensors for one batch; `None` for disabled terms.
#[derive(Debug, Clone, Default)]
pub struct LossTerms {
    pub pef: Option<Tensor>,
    pub id: Option<Tensor>,
    pub wrt: Option<Tensor>,
    pub cmcc: Option<Tensor>,
}

/// Per-term values of one step. Disabled terms are reported as zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub pef: f64,
    pub id: f64,
    pub wrt: f64,
    pub cmcc: f64,
    pub total: f64,
}

impl LossReport {
    pub const FIELDS: [&'static str; 5] = ["pef", "id", "wrt", "cmcc", "total"];

    pub fn values(&self) -> [f64; 5] {
        [self.pef, self.id, self.wrt, self.cmcc, self.total]
    }

    /// Element-wise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut acc = [0.0; 5];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        LossReport {
            pef: acc[0] / n,
            id: acc[1] / n,
            wrt: acc[2] / n,
            cmcc: acc[3] / n,
            total: acc[4] / n,
        }
    }
}

/// Unweighted sum of the active terms, plus their values for logging.
/// A non-finite term is an error naming that term.
pub fn total_loss(terms: &LossTerms) -> Result<(Tensor, LossReport)> {
    let named: [(&'static str, &Option<Tensor>); 4] =
        [("pef", &terms.pef), ("id", &terms.id), ("wrt", &terms.wrt), ("cmcc", &terms.cmcc)];
    let mut values = [0.0f64; 4];
    let mut sum: Option<Tensor> = None;
    for (slot, (name, term)) in named.iter().enumerate() {
        let Some(t) = term else { continue };
        let v = t.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name, value: v });
        }
        values[slot] = v;
        sum = Some(match sum {
            None => t.clone(),
            Some(acc) => (acc + t)?,
        });
    }
    let sum = sum.ok_or_else(|| Error::Loss("no loss term is enabled".into()))?;
    let report = LossReport {
        pef: values[0],
        id: values[1],
        wrt: values[2],
        cmcc: values[3],
        total: sum.to_dtype(DType::F64)?.to_scalar::<f64>()?,
    };
    Ok((sum, report))
}
