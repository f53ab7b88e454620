use serde::{Deserialize, Serialize};

use crate::attack::AttackKind;
use crate::error::{Error, Result};
use crate::watermark::outcome::{DetectionOutcome, Direction, Scheme};

/// One attacked (or unattacked) image evaluated against one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scheme: Scheme,
    pub attack: AttackKind,
    pub image_id: usize,
    /// Absent when the attack produced no image.
    pub detection: Option<DetectionOutcome>,
    /// Target attribute present in the attacked image's caption.
    pub injection_success: bool,
    pub seed: u64,
}

impl TrialRecord {
    pub fn detected(&self) -> bool {
        self.detection.as_ref().is_some_and(|d| d.detected)
    }
}

/// Fraction of records whose image is still detected as watermarked.
pub fn asr(records: &[TrialRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("trial records"));
    }
    Ok(records.iter().filter(|r| r.detected()).count() as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub threshold: f64,
    /// Distance from the threshold to the worst statistic, positive on the detecting side.
    pub margin: f64,
}

pub fn summarize(stats: &[f64], threshold: f64, direction: Direction) -> Result<DetectionStats> {
    if stats.is_empty() {
        return Err(Error::Empty("statistics"));
    }
    let mean = stats.iter().sum::<f64>() / stats.len() as f64;
    let min = stats.iter().copied().fold(f64::INFINITY, f64::min);
    let max = stats.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst = match direction {
        Direction::Below => max,
        Direction::AtLeast => min,
    };
    Ok(DetectionStats {
        mean,
        min,
        max,
        threshold,
        margin: direction.margin(worst, threshold),
    })
}

/// Summary over records of one scheme that carry a detection.
pub fn detection_stats(records: &[TrialRecord]) -> Result<DetectionStats> {
    let outcomes: Vec<&DetectionOutcome> = records.iter().filter_map(|r| r.detection.as_ref()).collect();
    let first = outcomes.first().ok_or(Error::Empty("detections"))?;
    if let Some(o) = outcomes.iter().find(|o| o.scheme != first.scheme) {
        return Err(Error::config(format!("records mix schemes {} and {}", first.scheme, o.scheme)));
    }
    if outcomes.iter().any(|o| o.threshold != first.threshold) {
        return Err(Error::config("records carry different thresholds"));
    }
    let stats: Vec<f64> = outcomes.iter().map(|o| o.statistic).collect();
    summarize(&stats, first.threshold, first.scheme.direction())
}
