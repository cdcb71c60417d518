//! CSV ingestion and argument parsing helpers.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dpd_core::data::SALINITY_CSV;
use dpd_core::Dataset;
use nalgebra::{DMatrix, DVector};

/// Input problem reported with exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table<R: std::io::Read>(reader: R, source: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| input_error(format!("{source}: cannot read header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| input_error(format!("{source}: line {line}: {e}")))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    input_error(format!(
                        "{source}: line {line}, column {} ('{}'): cannot parse '{cell}' as a finite number",
                        j + 1,
                        headers.get(j).map_or("", String::as_str)
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!(input_error(format!("{source}: no data rows")));
    }
    Ok(Table { headers, rows })
}

/// Loads the response column and the remaining columns as covariates.
pub fn load_dataset(path: Option<&Path>, salinity: bool, response: Option<&str>, intercept: bool, drop: &[usize]) -> Result<Dataset> {
    let table = match (path, salinity) {
        (Some(_), true) => bail!(input_error("give either --data or --salinity, not both")),
        (Some(p), false) => {
            let f = std::fs::File::open(p).map_err(|e| input_error(format!("{}: {e}", p.display())))?;
            read_table(f, &p.display().to_string())?
        }
        (None, true) => read_table(SALINITY_CSV.as_bytes(), "salinity")?,
        (None, false) => bail!(input_error("no data: give --data <csv> or --salinity")),
    };
    let yc = match response {
        Some(name) => table
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| input_error(format!("response column '{name}' not found")))?,
        None => table.headers.len() - 1,
    };
    let covariates: Vec<usize> = (0..table.headers.len()).filter(|&j| j != yc).collect();
    let n = table.rows.len();
    let off = usize::from(intercept);
    let x = DMatrix::from_fn(n, covariates.len() + off, |i, j| {
        if j < off {
            1.0
        } else {
            table.rows[i][covariates[j - off]]
        }
    });
    let y = DVector::from_fn(n, |i, _| table.rows[i][yc]);
    let data = Dataset::new(x, y).map_err(|e| input_error(e.to_string()))?;
    if drop.is_empty() {
        return Ok(data);
    }
    let zero_based: Vec<usize> = drop.iter().map(|r| r - 1).collect();
    data.drop_rows(&zero_based).map_err(|e| input_error(e.to_string()))
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| anyhow!("'{v}' is not a number")))
        .collect()
}

/// Rows separated by `;`, entries by `,`.
pub fn parse_matrix(s: &str) -> Result<Vec<Vec<f64>>> {
    s.split(';').map(parse_list).collect()
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .with_context(|| format!("{}", path.display()))
        .map_err(|e| input_error(format!("{e:#}")))
}
