//! JSON matrix encoding and CSV exports.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::AutocovStack;
use crate::error::{Error, Result};
use crate::filter::FilterRun;
use crate::linalg;
use crate::simulation::Trajectory;

/// Row-major matrix with explicit dimensions, so empty shapes survive a
/// round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Vec<f64>>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: linalg::to_rows(m),
        }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        self.try_to_matrix()
            .expect("MatrixJson built from a matrix")
    }

    pub fn try_to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows {
            return Err(Error::Parse(format!(
                "matrix declares {} rows but has {}",
                self.rows,
                self.data.len()
            )));
        }
        linalg::from_rows(&self.data, Some(self.cols))
            .ok_or_else(|| Error::Parse(format!("matrix rows are not all of length {}", self.cols)))
    }
}

/// Parse a bare JSON array of rows.
pub fn matrix_from_json(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text)?;
    linalg::from_rows(&rows, None).ok_or_else(|| Error::Parse("ragged matrix rows".into()))
}

fn header(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}

fn push_vec(record: &mut Vec<String>, v: &DVector<f64>) {
    record.extend(v.iter().map(|x| format!("{x:e}")));
}

/// Columns `k, x1..xn, y1..yp, d1..dq`, one row per output sample.
pub fn write_trajectory_csv<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let n = traj.states.first().map_or(0, |x| x.len());
    let p = traj.outputs.first().map_or(0, |y| y.len());
    let q = traj.inputs.first().map_or(0, |d| d.len());
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["k".to_string()];
    head.extend(header("x", n));
    head.extend(header("y", p));
    head.extend(header("d", q));
    w.write_record(&head)?;
    for k in 0..traj.len() {
        let mut rec = vec![k.to_string()];
        push_vec(&mut rec, &traj.states[k]);
        push_vec(&mut rec, &traj.outputs[k]);
        push_vec(&mut rec, &traj.inputs[k]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `k, Y1..Yn`.
pub fn write_innovations_csv<W: Write>(out: W, innovations: &[DVector<f64>]) -> Result<()> {
    let n = innovations.first().map_or(0, |y| y.len());
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["k".to_string()];
    head.extend(header("Y", n));
    w.write_record(&head)?;
    for (k, y) in innovations.iter().enumerate() {
        let mut rec = vec![k.to_string()];
        push_vec(&mut rec, y);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns for the predicted and filtered states, input estimate, raw
/// innovation and transformed innovation at each step.
pub fn write_filter_run_csv<W: Write>(out: W, run: &FilterRun) -> Result<()> {
    let n = run.predicted.first().map_or(0, |x| x.len());
    let q = run.input_estimates.first().map_or(0, |d| d.len());
    let p = run.innovations.first().map_or(0, |e| e.len());
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["k".to_string()];
    head.extend(header("xpred", n));
    head.extend(header("xfilt", n));
    head.extend(header("dhat", q));
    head.extend(header("innov", p));
    head.extend(header("Y", n));
    w.write_record(&head)?;
    for k in 0..run.len() {
        let mut rec = vec![k.to_string()];
        push_vec(&mut rec, &run.predicted[k]);
        push_vec(&mut rec, &run.filtered[k]);
        push_vec(&mut rec, &run.input_estimates[k]);
        push_vec(&mut rec, &run.innovations[k]);
        push_vec(&mut rec, &run.transformed[k]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// The stacked `(N n) x n` autocovariance, one matrix row per CSV row.
pub fn write_autocov_csv<W: Write>(out: W, stack: &AutocovStack) -> Result<()> {
    let m = stack.stacked();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header("c", m.ncols()))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|x| format!("{x:e}")))?;
    }
    w.flush()?;
    Ok(())
}
