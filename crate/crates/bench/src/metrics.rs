//! CSV records written by the commands.
//!
//! Floats use Rust's shortest round-trip formatting, so a rerun with the same
//! inputs produces the same bytes.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{io_err, Result};

/// One row of `metrics.csv`, logged at the end of each epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    /// Generator updates so far.
    pub step: usize,
    pub epoch: usize,
    /// Epoch means of the weighted objective and its unweighted terms.
    pub loss_total: f64,
    pub loss_p: f64,
    pub loss_ssim: f64,
    pub loss_adv: f64,
    pub loss_ot: f64,
    pub test_mse: f64,
    /// Moving averages (decay 0.9) of each logged layer's gradient spectral norm.
    pub grad_norms: Vec<f64>,
    pub wall_ms: u64,
}

pub fn metrics_header(layers: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "step",
        "epoch",
        "loss_total",
        "loss_p",
        "loss_ssim",
        "loss_adv",
        "loss_ot",
        "test_mse",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..layers).map(|i| format!("grad_norm_layer_{i}")));
    h.push("wall_ms".into());
    h
}

impl MetricsRecord {
    fn fields(&self) -> Vec<String> {
        let mut f = vec![self.step.to_string(), self.epoch.to_string()];
        f.extend(
            [
                self.loss_total,
                self.loss_p,
                self.loss_ssim,
                self.loss_adv,
                self.loss_ot,
                self.test_mse,
            ]
            .iter()
            .map(f64::to_string),
        );
        f.extend(self.grad_norms.iter().map(f64::to_string));
        f.push(self.wall_ms.to_string());
        f
    }
}

/// A header and rows of already formatted fields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: ToString>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(w.into_inner()
            .map_err(|e| csv::Error::from(e.into_error()))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = File::create(path).map_err(io_err(path))?;
        f.write_all(&bytes).map_err(io_err(path))
    }
}

pub fn metrics_table(rows: &[MetricsRecord], layers: usize) -> Table {
    let mut t = Table::new(&metrics_header(layers));
    for r in rows {
        t.push(r.fields());
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_row_layout() {
        let row = MetricsRecord {
            step: 32,
            epoch: 1,
            loss_total: 1.5,
            loss_p: 0.01,
            loss_ssim: 0.25,
            loss_adv: 0.75,
            loss_ot: 0.0,
            test_mse: 0.0375,
            grad_norms: vec![0.5, 2.0],
            wall_ms: 0,
        };
        let text = String::from_utf8(metrics_table(&[row], 2).to_bytes().unwrap()).unwrap();
        assert_eq!(
            text,
            "step,epoch,loss_total,loss_p,loss_ssim,loss_adv,loss_ot,test_mse,grad_norm_layer_0,grad_norm_layer_1,wall_ms\n\
             32,1,1.5,0.01,0.25,0.75,0,0.0375,0.5,2,0\n"
        );
    }

    #[test]
    fn write_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]);
        t.write(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,\"x,y\"\n");
    }
}
