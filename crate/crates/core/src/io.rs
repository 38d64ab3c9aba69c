//! On-disk formats: raw little-endian f32 arrays, JSON sidecars, geometry
//! and spline files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ProjectionMatrix;
use crate::motion_model::MotionSpline;

pub fn write_f32_le(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32_le(path: &Path, expected_len: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::format(
            path,
            format!("expected {} bytes, found {}", expected_len * 4, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

/// One array of 12 row-major numbers per projection.
pub fn write_geometry(path: &Path, ps: &[ProjectionMatrix]) -> Result<()> {
    let mut text = String::from("[\n");
    for (i, p) in ps.iter().enumerate() {
        text.push_str("  ");
        text.push_str(&serde_json::to_string(p).expect("matrix serializes"));
        text.push_str(if i + 1 < ps.len() { ",\n" } else { "\n" });
    }
    text.push_str("]\n");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_geometry(path: &Path) -> Result<Vec<ProjectionMatrix>> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineUnits {
    pub translation: String,
    pub rotation: String,
}

/// Spline file as stored: translations in µm, rotations in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFile {
    pub n_projections: usize,
    pub node_indices: Vec<f64>,
    pub node_values: [Vec<f64>; 6],
    pub units: SplineUnits,
}

impl SplineFile {
    pub fn from_spline(spline: &MotionSpline, n_projections: usize) -> Self {
        let mut node_values = spline.node_values.clone();
        for row in node_values.iter_mut().take(3) {
            row.iter_mut().for_each(|v| *v *= 1000.0);
        }
        Self {
            n_projections,
            node_indices: spline.node_indices.clone(),
            node_values,
            units: SplineUnits {
                translation: "um".into(),
                rotation: "deg".into(),
            },
        }
    }

    /// Converts to internal units (mm, degrees).
    pub fn to_spline(&self) -> Result<MotionSpline> {
        let t_scale = match self.units.translation.as_str() {
            "um" => 1e-3,
            "mm" => 1.0,
            other => return Err(Error::Config(format!("unsupported translation unit `{other}`"))),
        };
        let r_scale = match self.units.rotation.as_str() {
            "deg" => 1.0,
            "rad" => 1f64.to_degrees(),
            other => return Err(Error::Config(format!("unsupported rotation unit `{other}`"))),
        };
        let mut node_values = self.node_values.clone();
        for (k, row) in node_values.iter_mut().enumerate() {
            let s = if k < 3 { t_scale } else { r_scale };
            if s != 1.0 {
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        let spline = MotionSpline {
            node_indices: self.node_indices.clone(),
            node_values,
        };
        spline.validate(self.n_projections)?;
        Ok(spline)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn raw_length_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.raw");
        write_f32_le(&p, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(read_f32_le(&p, 3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(matches!(read_f32_le(&p, 4), Err(Error::Format { .. })));
    }

    #[test]
    fn spline_file_converts_micrometers() {
        let mut s = MotionSpline::uniform(10, 3).unwrap();
        s.node_values[2] = vec![0.05, -0.025, 0.0];
        s.node_values[4] = vec![1.0, -0.5, 0.25];
        let f = SplineFile::from_spline(&s, 10);
        assert_eq!(f.node_values[2], vec![50.0, -25.0, 0.0]);
        assert_eq!(f.node_values[4], s.node_values[4]);
        let back = f.to_spline().unwrap();
        for (a, b) in back.node_values[2].iter().zip(&s.node_values[2]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn geometry_file_round_trips_exactly(vals in proptest::collection::vec(-1e4f64..1e4, 24)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("geometry.json");
            let ps: Vec<ProjectionMatrix> = vals
                .chunks_exact(12)
                .map(|c| ProjectionMatrix::from_row_slice(c.try_into().unwrap()))
                .collect();
            write_geometry(&path, &ps).unwrap();
            let back = read_geometry(&path).unwrap();
            prop_assert_eq!(&back, &ps);
            let bytes = fs::read(&path).unwrap();
            write_geometry(&path, &back).unwrap();
            prop_assert_eq!(fs::read(&path).unwrap(), bytes);
        }

        #[test]
        fn raw_file_round_trips_exactly(vals in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("v.raw");
            write_f32_le(&path, &vals).unwrap();
            let bytes = fs::read(&path).unwrap();
            let back = read_f32_le(&path, vals.len()).unwrap();
            write_f32_le(&path, &back).unwrap();
            prop_assert_eq!(fs::read(&path).unwrap(), bytes);
        }
    }
}
