//! Grid-function files: raw little-endian `f64` samples in row-major lattice
//! order (`name.f64`) with a JSON sidecar (`name.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FlagError, Result};
use crate::lattice::{GridFunction, LatticeSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "N")]
    pub points_per_axis: usize,
    #[serde(rename = "L")]
    pub period: f64,
    pub order: String,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

impl GridSidecar {
    pub fn for_lattice(lattice: &LatticeSpec, kind: Option<&str>) -> Self {
        Self {
            n: lattice.n,
            m: lattice.m,
            points_per_axis: lattice.points_per_axis,
            period: lattice.period,
            order: "row-major".into(),
            dtype: "f64le".into(),
            kind: kind.map(str::to_owned),
        }
    }

    pub fn lattice(&self) -> Result<LatticeSpec> {
        if self.order != "row-major" || self.dtype != "f64le" {
            return Err(FlagError::Format(format!(
                "unsupported layout {}/{}",
                self.order, self.dtype
            )));
        }
        LatticeSpec::new(self.n, self.m, self.points_per_axis, self.period)
    }
}

/// Sidecar path belonging to a data path.
pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

pub fn encode(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes `data` (conventionally ending in `.f64`) and its sidecar.
pub fn write_grid(data: &Path, f: &GridFunction, kind: Option<&str>) -> Result<()> {
    fs::write(data, encode(f.values()))?;
    let sidecar = GridSidecar::for_lattice(f.lattice(), kind);
    fs::write(
        sidecar_path(data),
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;
    Ok(())
}

pub fn read_grid(data: &Path) -> Result<(GridFunction, GridSidecar)> {
    let sidecar: GridSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(data))?)?;
    let lattice = sidecar.lattice()?;
    let bytes = fs::read(data)?;
    if bytes.len() != lattice.len() * 8 {
        return Err(FlagError::ShapeMismatch {
            expected: lattice.len(),
            actual: bytes.len() / 8,
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
        .collect();
    Ok((GridFunction::new(lattice, values)?, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let lat = LatticeSpec::new(1, 1, 8, 3.0).unwrap();
        let f = GridFunction::from_fn(lat, |p| (p[0] * 1.1).sin() - p[1] / 7.0).unwrap();
        let path = dir.path().join("f.f64");
        write_grid(&path, &f, Some("test")).unwrap();
        let (g, side) = read_grid(&path).unwrap();
        assert_eq!(g, f);
        assert_eq!(side.kind.as_deref(), Some("test"));
        assert_eq!(fs::metadata(&path).unwrap().len(), 64 * 8);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let lat = LatticeSpec::new(1, 1, 8, 3.0).unwrap();
        let path = dir.path().join("f.f64");
        write_grid(&path, &GridFunction::zeros(lat), None).unwrap();
        fs::write(&path, vec![0u8; 100]).unwrap();
        assert!(matches!(
            read_grid(&path),
            Err(FlagError::ShapeMismatch { .. })
        ));
    }
}
