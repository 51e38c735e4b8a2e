//! Plain-text `.field` snapshots.
//!
//! ```text
//! nx ny nz hx hy hz
//! time=<t>            (states only)
//! v_0
//! v_1
//! ...
//! ```
//!
//! Values are listed x-fastest, then y, then z.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::discretization::StateVector;
use crate::error::{Error, Result};
use crate::grid::{CoefficientField, Grid3D};

/// Parsed contents of a `.field` file.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldData {
    pub grid: Grid3D,
    pub values: Vec<f64>,
    pub time: Option<f64>,
}

impl FieldData {
    pub fn into_state(self) -> Result<StateVector> {
        let time = self
            .time
            .ok_or_else(|| Error::Format("state file has no time line".into()))?;
        StateVector::from_values(self.grid, self.values, time)
    }
}

pub fn format_field(grid: &Grid3D, values: &[f64], time: Option<f64>) -> String {
    let [nx, ny, nz] = grid.dims();
    let [hx, hy, hz] = grid.spacing();
    let mut s = String::with_capacity(values.len() * 24 + 64);
    let _ = writeln!(s, "{nx} {ny} {nz} {hx:e} {hy:e} {hz:e}");
    if let Some(t) = time {
        let _ = writeln!(s, "time={t:e}");
    }
    for v in values {
        // shortest representation that round-trips exactly
        let _ = writeln!(s, "{v:e}");
    }
    s
}

pub fn parse_field(text: &str) -> Result<FieldData> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Format("empty file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 6 {
        return Err(Error::Format(format!(
            "line 1: expected 'nx ny nz hx hy hz', got {header:?}"
        )));
    }
    let mut dims = [0usize; 3];
    for (d, p) in dims.iter_mut().zip(&parts[..3]) {
        *d = p
            .parse()
            .map_err(|_| Error::Format(format!("line 1: bad cell count {p:?}")))?;
    }
    let mut spacing = [0f64; 3];
    for (h, p) in spacing.iter_mut().zip(&parts[3..]) {
        *h = p
            .parse()
            .map_err(|_| Error::Format(format!("line 1: bad spacing {p:?}")))?;
    }
    let grid = Grid3D::new(dims, spacing).map_err(|e| Error::Format(format!("line 1: {e}")))?;

    let mut time = None;
    let mut values = Vec::with_capacity(grid.len());
    for (line, l) in lines {
        if let Some(t) = l.strip_prefix("time=") {
            if time.is_some() || !values.is_empty() {
                return Err(Error::Format(format!("line {line}: unexpected time line")));
            }
            time = Some(
                t.trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("line {line}: bad time {t:?}")))?,
            );
            continue;
        }
        let v: f64 = l
            .parse()
            .map_err(|_| Error::Format(format!("line {line}: bad value {l:?}")))?;
        if !v.is_finite() {
            return Err(Error::Format(format!("line {line}: non-finite value")));
        }
        values.push(v);
    }
    if values.len() != grid.len() {
        return Err(Error::Format(format!(
            "expected {} values, found {}",
            grid.len(),
            values.len()
        )));
    }
    Ok(FieldData { grid, values, time })
}

pub fn write_state(path: &Path, state: &StateVector) -> Result<()> {
    fs::write(path, format_field(state.grid(), state.values(), Some(state.time())))?;
    Ok(())
}

pub fn write_coefficients(path: &Path, field: &CoefficientField) -> Result<()> {
    fs::write(path, format_field(field.grid(), field.values(), None))?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<FieldData> {
    parse_field(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let g = Grid3D::new([2, 3, 2], [0.5, 1.0, 0.25]).unwrap();
        let values: Vec<f64> = (0..12).map(|i| (i as f64 * 0.1).exp() / 3.0).collect();
        let s = StateVector::from_values(g, values, 0.125).unwrap();
        let text = format_field(s.grid(), s.values(), Some(s.time()));
        assert!(text.starts_with("2 3 2 5e-1 1e0 2.5e-1\ntime=1.25e-1\n"));
        assert_eq!(parse_field(&text).unwrap().into_state().unwrap(), s);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(matches!(parse_field(""), Err(Error::Format(_))));
        assert!(matches!(parse_field("2 2 2 1 1"), Err(Error::Format(_))));
        assert!(matches!(parse_field("2 2 2 1 1 1\n1\n2"), Err(Error::Format(_))));
        let bad = "2 2 2 1 1 1\n".to_string() + &"x\n".repeat(8);
        assert!(matches!(parse_field(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn coefficient_files_have_no_time() {
        let g = Grid3D::new([2, 2, 2], [1.0; 3]).unwrap();
        let text = format_field(&g, &[1.0; 8], None);
        let data = parse_field(&text).unwrap();
        assert_eq!(data.time, None);
        assert!(data.into_state().is_err());
    }
}
