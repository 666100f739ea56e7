//! Corpus construction: target lists, reachability, acquisition, annotations
//! and the banner taxonomy.

pub mod acquire;
pub mod annotations;
pub mod probe;
pub mod targets;
pub mod taxonomy;

pub use acquire::{acquire, acquire_all, Acquisition, AcquireResult, FetchAttempt, FetchError, Fetcher, Protocol};
pub use annotations::{emit, ingest_annotations, ingest_str, BannerAnnotation, IngestReport, Locale};
pub use probe::{probe, ProbeConfig, ProbeError, ProbeReport};
pub use targets::{build_targets, eu_cctld_filter, CctldSet, TargetConfig, TargetGroup, TargetList};
pub use taxonomy::{classify_compliance, classify_label, Category, ComplianceClass};
