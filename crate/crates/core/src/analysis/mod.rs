//! Post-hoc analyses: token distribution shift and paired significance tests.

mod stats;
mod tds;

pub use stats::{
    bonferroni, ln_gamma, paired_t_test, regularized_incomplete_beta, student_t_sf, PairedTTest, Tail,
    TestResult, DEFAULT_ALPHA,
};
pub use tds::{classify_token, rank_tokens, tds_analyze, PositionBin, ShiftCategory, TdsReport, DECILES};
