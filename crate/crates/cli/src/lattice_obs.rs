//! Plain-text lattice observation grids.

use std::path::Path;

use crate::error::{CliError, Result};

/// Parses `m·m` whitespace-separated numbers in row-major order.
pub fn parse_grid(text: &str, m: usize) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(m * m);
    for (i, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| CliError::MalformedRow {
                line: i as u64 + 1,
                reason: format!("`{tok}` is not a number"),
            })?;
            values.push(v);
        }
    }
    if values.len() != m * m {
        return Err(CliError::InvalidConfig(format!("grid has {} values, expected {}", values.len(), m * m)));
    }
    Ok(values)
}

pub fn read_grid(path: &Path, m: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    parse_grid(&text, m)
}

/// Writes values `m` per line.
pub fn format_grid(values: &[f64], m: usize) -> String {
    values
        .chunks(m.max(1))
        .map(|row| row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ") + "\n")
        .collect()
}
