//! Cross-modality retrieval evaluation: query/gallery protocols, cosine
//! ranking and CMC / mAP / mINP metrics averaged over repeated gallery
//! draws.

mod metrics;
mod protocol;
mod report;

pub use metrics::{cmc_map_minp, rank, RankingResult, TrialMetrics};
pub use protocol::{query_and_candidates, sample_gallery, EvalMode, EvalProtocol, Shot};
pub use report::{evaluate, evaluate_model, evaluate_trial, MetricsReport};
