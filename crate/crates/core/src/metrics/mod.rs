//! Gaze and caption evaluation.

pub mod language;
pub mod protocol;
pub mod report;
pub mod saliency;

pub use language::{bleu, cider, corpus_bleu, rouge_l, CiderScores};
pub use protocol::{eval_protocol, CopyGroundTruth, EvalClip, GridPredictions, Prediction, ProtocolConfig, ProtocolReport, SaliencySource};
pub use report::{format_report, parse_report, write_report};
pub use saliency::{auc_judd, cc, sauc, sauc_pool, sim, PixelPool};
