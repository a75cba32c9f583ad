//! CSV serialization for trajectories, matrices, and fit traces.
//!
//! Floats are written with 17 significant digits so every file round-trips
//! to the exact same bits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::em::FitTrace;
use crate::error::{Error, Result};
use crate::model::Trajectory;

/// Formats a float with 17 significant digits (round-trip exact for f64).
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_float(field: &str, context: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("{context}: {e} (field {field:?})")))
}

/// Writes a trajectory as one row per time step: `k, x_1..x_n, y_1..y_m`,
/// with the `k = 0` row carrying empty observation fields.
pub fn write_trajectory_csv(path: &Path, trajectory: &Trajectory) -> Result<()> {
    let n_x = trajectory.states[0].len();
    let n_y = trajectory
        .observations
        .first()
        .map(|y| y.len())
        .unwrap_or(0);

    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["k".to_string()];
    header.extend((1..=n_x).map(|i| format!("x_{i}")));
    header.extend((1..=n_y).map(|i| format!("y_{i}")));
    writer.write_record(&header)?;

    for (k, state) in trajectory.states.iter().enumerate() {
        let mut record = vec![k.to_string()];
        record.extend(state.iter().map(|v| format_float(*v)));
        if k == 0 {
            record.extend(std::iter::repeat_n(String::new(), n_y));
        } else {
            record.extend(trajectory.observations[k - 1].iter().map(|v| format_float(*v)));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory_csv`].
pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(File::open(path)?));

    let header = reader.headers()?.clone();
    let n_x = header.iter().filter(|h| h.starts_with("x_")).count();
    let n_y = header.iter().filter(|h| h.starts_with("y_")).count();
    if n_x == 0 {
        return Err(Error::Parse("trajectory header has no state columns".into()));
    }

    let mut states = Vec::new();
    let mut observations = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 1 + n_x + n_y {
            return Err(Error::Parse(format!(
                "trajectory row {row} has {} fields, expected {}",
                record.len(),
                1 + n_x + n_y
            )));
        }
        let mut state = DVector::zeros(n_x);
        for i in 0..n_x {
            state[i] = parse_float(&record[1 + i], "trajectory state")?;
        }
        states.push(state);

        let obs_fields: Vec<&str> = (0..n_y).map(|i| &record[1 + n_x + i]).collect();
        let empty = obs_fields.iter().all(|f| f.trim().is_empty());
        if !empty {
            let mut y = DVector::zeros(n_y);
            for (i, field) in obs_fields.iter().enumerate() {
                y[i] = parse_float(field, "trajectory observation")?;
            }
            observations.push(y);
        }
    }

    if states.len() != observations.len() + 1 {
        return Err(Error::Parse(format!(
            "trajectory has {} states and {} observations; expected exactly one more state",
            states.len(),
            observations.len()
        )));
    }
    Ok(Trajectory { states, observations })
}

/// Writes a matrix as plain rows of comma-separated values, no header.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_float(m[(i, j)])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(BufReader::new(File::open(path)?));
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| parse_float(f, "matrix entry"))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse("matrix rows have inconsistent lengths".into()));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("matrix file is empty".into()));
    }
    let nrows = rows.len();
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Writes a fit trace as `iteration, objective, inner_iters, elapsed`.
pub fn write_trace_csv(path: &Path, trace: &FitTrace) -> Result<()> {
    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    writer.write_record(["iteration", "objective", "inner_iters", "elapsed_secs"])?;
    for i in 0..trace.len() {
        writer.write_record(&[
            i.to_string(),
            format_float(trace.objectives[i]),
            trace.inner_iters[i].to_string(),
            format_float(trace.elapsed[i]),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
