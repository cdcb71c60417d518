//! Bundled example data.

use nalgebra::{DMatrix, DVector};

use crate::models::Dataset;

/// Salinity data (28 rows): `lagged_salinity, trend, discharge, salinity`.
/// See `data/PROVENANCE.md`.
pub const SALINITY_CSV: &str = include_str!("../data/salinity.csv");

/// Salinity regression with an intercept column and the three covariates.
pub fn salinity() -> Dataset {
    let rows: Vec<Vec<f64>> = SALINITY_CSV
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|v| v.trim().parse().expect("bundled file is numeric")).collect())
        .collect();
    let n = rows.len();
    let x = DMatrix::from_fn(n, 4, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let y = DVector::from_fn(n, |i, _| rows[i][3]);
    Dataset::new(x, y).expect("bundled file is valid")
}
