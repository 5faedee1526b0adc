//! Nonlinear least-squares engine and the per-experiment fit drivers.

mod drivers;
mod lm;

pub use drivers::*;
pub use lm::{
    format_value_error, jacobian_discrepancy, lm_fit, FitProblem, FitResult, Jacobian, LmOptions,
    Model, ParamSpec, Termination, Transform,
};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::interferometer::csv_error;

/// A measured series `(t, y ± σ)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SeriesRow {
    t: f64,
    y: f64,
    sigma: f64,
}

impl Series {
    pub fn new(t: Vec<f64>, y: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let s = Series { t, y, sigma };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, len) in [("y", self.y.len()), ("sigma", self.sigma.len())] {
            if len != self.t.len() {
                return Err(Error::LengthMismatch {
                    left: "t",
                    left_len: self.t.len(),
                    right: name,
                    right_len: len,
                });
            }
        }
        ensure(
            self.sigma.iter().all(|s| *s > 0.0 && s.is_finite()),
            "sigma",
            || "all uncertainties must be positive".into(),
        )?;
        ensure(
            self.t.iter().chain(&self.y).all(|v| v.is_finite()),
            "series",
            || "contains non-finite values".into(),
        )
    }

    /// Points with `lo <= t <= hi`.
    pub fn window(&self, lo: f64, hi: f64) -> Series {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.t[i] >= lo && self.t[i] <= hi)
            .collect();
        Series {
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            sigma: idx.iter().map(|&i| self.sigma[i]).collect(),
        }
    }

    /// Writes `t,y,sigma` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for i in 0..self.len() {
            w.serialize(SeriesRow {
                t: self.t[i],
                y: self.y[i],
                sigma: self.sigma[i],
            })
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `t,y,sigma` rows (header required).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut s = Series::default();
        for row in csv::Reader::from_reader(reader).deserialize::<SeriesRow>() {
            let row = row.map_err(csv_error)?;
            s.t.push(row.t);
            s.y.push(row.y);
            s.sigma.push(row.sigma);
        }
        s.validate()?;
        Ok(s)
    }
}
