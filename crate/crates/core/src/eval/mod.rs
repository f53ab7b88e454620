//! Attack-versus-scheme benchmarking: success rates, statistic summaries,
//! Fréchet distances between embedding sets and report files.

pub mod bench;
pub mod frechet;
pub mod report;
pub mod stats;

pub use bench::{detect_image, run_benchmark, BenchConfig, Providers};
pub use frechet::{frechet_distance, frechet_from_moments, matrix_sqrt_psd};
pub use report::{read_report, write_report, EvaluationReport, FrechetEntry, ReportRow};
pub use stats::{asr, detection_stats, summarize, DetectionStats, TrialRecord};
