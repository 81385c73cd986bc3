use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const HISTORY_HEADER: &str = "iter,loss_d,loss_g,mode_coverage,high_quality_ratio";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iter: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub mode_coverage: usize,
    pub high_quality_ratio: f64,
}

/// Periodic snapshots of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&HistoryRecord> {
        self.records.last()
    }

    /// CSV with a header row and LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.iter, r.loss_d, r.loss_g, r.mode_coverage, r.high_quality_ratio
            )
            .expect("write to string");
        }
        out
    }
}
