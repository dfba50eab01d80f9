use std::io::Write;

use crate::error::Result;
use crate::metrics::Estimate;

/// Exact CSV header of trajectory files.
pub const CSV_HEADER: &str = "step,time,l1_mean,l1_stderr,centroid_norm,centroid_norm_stderr,liouvillian_loss,liouvillian_loss_stderr,n1_mean,n1_stderr,residual,clamp_count";

/// Metrics evaluated at one time point; absent ones stay empty in the CSV.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricValues {
    pub l1: Option<Estimate>,
    pub centroid_norm: Option<Estimate>,
    pub liouvillian_loss: Option<Estimate>,
    pub n1: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub time: f64,
    pub metrics: MetricValues,
    /// Final-epoch objective of the step (KL estimate or TDVP fit error).
    pub residual: Option<Estimate>,
    pub clamp_count: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub rows: Vec<TrajectoryRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:e}")).unwrap_or_default()
}

fn est(e: Option<Estimate>) -> String {
    format!("{},{}", opt(e.map(|e| e.mean)), opt(e.map(|e| e.stderr)))
}

impl TrajectoryRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.time,
            est(self.metrics.l1),
            est(self.metrics.centroid_norm),
            est(self.metrics.liouvillian_loss),
            est(self.metrics.n1),
            opt(self.residual.map(|r| r.mean)),
            self.clamp_count.map(|c| c.to_string()).unwrap_or_default()
        )
    }
}

impl TrajectoryRecord {
    pub fn push(&mut self, row: TrajectoryRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.time < row.time));
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{}", r.csv_line())?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut v = Vec::new();
        self.write_csv(&mut v).expect("writing to a Vec cannot fail");
        String::from_utf8(v).expect("CSV is ASCII")
    }

    /// Row closest to time `t`.
    pub fn at_time(&self, t: f64) -> Option<&TrajectoryRow> {
        self.rows
            .iter()
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
    }
}
