use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_iou,val_f1,lr";

/// One row of the metrics CSV. Epoch 0 is the evaluation before training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_iou: f64,
    pub val_f1: f64,
    pub lr: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.train_loss, self.val_loss, self.val_iou, self.val_f1, self.lr
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("malformed metrics row {line:?}"));
        let fields: Vec<&str> = line.trim().split(',').collect();
        let [epoch, rest @ ..] = fields.as_slice() else { return Err(bad()) };
        if rest.len() != 5 {
            return Err(bad());
        }
        let v: Vec<f64> = rest
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        Ok(MetricsRow {
            epoch: epoch.parse().map_err(|_| bad())?,
            train_loss: v[0],
            val_loss: v[1],
            val_iou: v[2],
            val_f1: v[3],
            lr: v[4],
        })
    }
}

pub fn render_metrics(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}

pub fn write_metrics(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_metrics(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Validation(format!(
            "{} does not start with the metrics header",
            path.display()
        )));
    }
    lines.filter(|l| !l.trim().is_empty()).map(MetricsRow::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_decimals_and_round_trip() {
        let row = MetricsRow {
            epoch: 3,
            train_loss: 0.123456789,
            val_loss: 0.5,
            val_iou: 0.9,
            val_f1: 0.95,
            lr: 1e-5,
        };
        let line = row.to_csv();
        assert_eq!(line, "3,0.123457,0.500000,0.900000,0.950000,0.000010");
        let back = MetricsRow::parse(&line).unwrap();
        assert_eq!(back.epoch, 3);
        assert!((back.train_loss - 0.123457).abs() < 1e-12);
    }
}
