use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Trw,
    Gsw,
    Wind,
    Seal,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Trw, Scheme::Gsw, Scheme::Wind, Scheme::Seal];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Trw => "trw",
            Scheme::Gsw => "gsw",
            Scheme::Wind => "wind",
            Scheme::Seal => "seal",
        }
    }

    /// Which side of the threshold means "watermark present".
    pub fn direction(self) -> Direction {
        match self {
            Scheme::Trw => Direction::Below,
            Scheme::Gsw | Scheme::Wind | Scheme::Seal => Direction::AtLeast,
        }
    }

    /// Content-aware schemes bind the watermark to image semantics.
    pub fn is_content_aware(self) -> bool {
        self == Scheme::Seal
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "trw" | "tree-ring" => Ok(Scheme::Trw),
            "gsw" | "gaussian-shading" => Ok(Scheme::Gsw),
            "wind" => Ok(Scheme::Wind),
            "seal" => Ok(Scheme::Seal),
            other => Err(Error::config(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Detected when `statistic < threshold`.
    Below,
    /// Detected when `statistic >= threshold`.
    AtLeast,
}

impl Direction {
    pub fn accepts(self, statistic: f64, threshold: f64) -> bool {
        match self {
            Direction::Below => statistic < threshold,
            Direction::AtLeast => statistic >= threshold,
        }
    }

    /// Signed distance from the threshold, positive on the detecting side.
    pub fn margin(self, statistic: f64, threshold: f64) -> f64 {
        match self {
            Direction::Below => threshold - statistic,
            Direction::AtLeast => statistic - threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub scheme: Scheme,
    pub statistic: f64,
    pub threshold: f64,
    pub detected: bool,
    pub margin: f64,
    /// Best-matching bank entry (WIND only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_index: Option<usize>,
}

impl DetectionOutcome {
    pub fn decide(scheme: Scheme, statistic: f64, threshold: f64) -> Self {
        let dir = scheme.direction();
        Self {
            scheme,
            statistic,
            threshold,
            detected: dir.accepts(statistic, threshold),
            margin: dir.margin(statistic, threshold),
            matched_index: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn margin_sign_agrees_with_decision(stat in -100.0f64..100.0, thr in -100.0f64..100.0, s in 0usize..4) {
            let o = DetectionOutcome::decide(Scheme::ALL[s], stat, thr);
            if o.margin > 0.0 { prop_assert!(o.detected); }
            if o.margin < 0.0 { prop_assert!(!o.detected); }
        }
    }

    #[test]
    fn parse_scheme_tags() {
        assert_eq!("GSW".parse::<Scheme>().unwrap(), Scheme::Gsw);
        assert!("xyz".parse::<Scheme>().is_err());
    }
}
