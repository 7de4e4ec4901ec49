//! Daily peer sets from monitor logs: M (all gossip), A (small unsolicited
//! gossip), P (connected reachable peers), R = A ∩ P and U = A \ P, plus
//! the two-monitor overlap, inbound-connection validation and subnet
//! concentration reports.

mod pipeline;
mod report;
mod sets;

pub use pipeline::{analyze_file, analyze_reader, read_events, Analysis, Analyzer};
pub use report::{
    overlap_by_day, run_analysis, write_daily_csv, write_incoming_csv, write_overlap_csv, write_subnet_csv,
    AnalyzeOptions, AnalyzeSummary,
};
pub use sets::{
    bucket_events, carryover_sessions, compute_a, compute_m, compute_p, day_of, day_start_ms, estimate,
    incoming_validation, overlap, reachable_coverage, subnet_bucket, subnet_concentration, AnalysisConfig,
    DailyEstimate, DayKey, IncomingValidationReport, Identity, OverlapReport, PeerKey, PeerSet, SubnetReport,
    SUBNET_FLAG_THRESHOLD,
};
pub(crate) use sets::ratio as ratio_of;
