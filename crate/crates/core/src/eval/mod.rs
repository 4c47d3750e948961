//! Corpus ingestion, metrics, targeted-word accuracy and reports.

mod corpus;
pub mod metric;
pub mod report;
pub mod targeted;

pub use corpus::{Corpus, Document, IngestError, Segment};
pub use metric::{score, MetricError, MetricHandle};
pub use report::{emit_report, Report, SystemRow};
pub use targeted::{targeted_accuracy, AccuracyTable, PhenomenonAccuracy, TargetedOptions};
