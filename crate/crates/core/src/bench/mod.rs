//! Multiple-choice benchmark over the synthetic clips and the evaluation
//! harness around it.

pub mod attention;
pub mod eval;
pub mod mcq;
pub mod plot;
pub mod sweep;

pub use attention::{attention_rollout, ego_token_localization, mask_patches, AttnTrace, FrameLocalization};
pub use eval::{
    check_view_contract, evaluate_mcq, evaluate_on_features, kl_divergence, localization, perplexity, summarize,
    teacher_metrics, CategoryRow, EvalReport, LocalizationSummary, TeacherMetrics,
};
pub use mcq::{filter_mcqs, generate_from_scripts, generate_mcqs, FilterReport, GenerationLog, McqItem, RejectReason};
pub use sweep::{sweep_token_count, SweepResult};
