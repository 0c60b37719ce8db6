//! Agreement between objective metrics and reconstructed JND values.

mod correlation;
mod logistic;
mod mrr;
mod report;

pub use correlation::{average_ranks, plcc, srcc};
pub use logistic::{fit_logistic4, Logistic4, LogisticFit};
pub use mrr::{mrr_matrix, mrr_test, MrrInputs, MrrMatrix, MrrResult};
pub use report::{evaluate, EvalConfig, GroupCorrelation, Grouping, MetricReport, SchemeSummary};
