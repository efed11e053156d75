//! File formats: point tables, grid specifications, estimate tables and the
//! binary sample cube with its JSON sidecar.
//!
//! Numbers are written in shortest round-trip decimal form, so reading and
//! rewriting a file reproduces it byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::engine::EsiConfig;
use crate::error::{EsiError, Result};
use crate::geometry::{ConditioningData, GridSpec, LocationSet};

fn parse_f64(field: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| EsiError::Format(format!("line {line}: `{field}` is not a number")))
}

/// Reads `x0,…,x{d-1},value` rows.
pub fn read_points<R: Read>(reader: R) -> Result<ConditioningData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let d = headers.len().checked_sub(1).filter(|d| *d > 0).ok_or_else(|| {
        EsiError::Format("points table needs coordinate columns and a value column".into())
    })?;
    for (i, h) in headers.iter().enumerate() {
        let expected = if i < d { format!("x{i}") } else { "value".to_string() };
        if h != expected {
            return Err(EsiError::Format(format!("column {i} is `{h}`, expected `{expected}`")));
        }
    }
    let mut coords = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        for (i, field) in rec.iter().enumerate() {
            let v = parse_f64(field, line)?;
            if i < d {
                coords.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let n = values.len();
    if n == 0 {
        return Err(EsiError::Empty("points table"));
    }
    let coords = Array2::from_shape_vec((n, d), coords).map_err(|e| EsiError::Format(e.to_string()))?;
    ConditioningData::new(LocationSet::new(coords)?, Array1::from(values))
}

pub fn read_points_file(path: impl AsRef<Path>) -> Result<ConditioningData> {
    read_points(BufReader::new(File::open(path)?))
}

/// Reads a table of locations with header `x0,…,x{d-1}`.
pub fn read_locations<R: Read>(reader: R) -> Result<LocationSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let d = headers.len();
    for (i, h) in headers.iter().enumerate() {
        if h != format!("x{i}") {
            return Err(EsiError::Format(format!("column {i} is `{h}`, expected `x{i}`")));
        }
    }
    let mut coords = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        for field in rec.iter() {
            coords.push(parse_f64(field, line)?);
        }
    }
    if coords.is_empty() {
        return Err(EsiError::Empty("locations table"));
    }
    let coords = Array2::from_shape_vec((coords.len() / d, d), coords).map_err(|e| EsiError::Format(e.to_string()))?;
    LocationSet::new(coords)
}

pub fn read_locations_file(path: impl AsRef<Path>) -> Result<LocationSet> {
    read_locations(BufReader::new(File::open(path)?))
}

fn coordinate_header(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

pub fn write_points<W: Write>(writer: W, data: &ConditioningData) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = coordinate_header(data.dim());
    header.push("value".into());
    w.write_record(&header)?;
    for (row, v) in data.points().coords().rows().into_iter().zip(data.values()) {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(v.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_points_file(path: impl AsRef<Path>, data: &ConditioningData) -> Result<()> {
    write_points(BufWriter::new(File::create(path)?), data)
}

/// Long-format table `x0,…,x{d-1},estimate[,precision]` in target order.
pub fn write_estimates<W: Write>(
    writer: W,
    targets: &LocationSet,
    estimate: ArrayView1<'_, f64>,
    precision: Option<ArrayView1<'_, f64>>,
) -> Result<()> {
    if estimate.len() != targets.len() {
        return Err(EsiError::DimensionMismatch { expected: targets.len(), got: estimate.len() });
    }
    if let Some(p) = &precision {
        if p.len() != targets.len() {
            return Err(EsiError::DimensionMismatch { expected: targets.len(), got: p.len() });
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = coordinate_header(targets.dim());
    header.push("estimate".into());
    if precision.is_some() {
        header.push("precision".into());
    }
    w.write_record(&header)?;
    for (j, row) in targets.coords().rows().into_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(estimate[j].to_string());
        if let Some(p) = &precision {
            rec.push(p[j].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Table `row,estimate[,precision]` for results without coordinates.
pub fn write_estimate_rows<W: Write>(
    writer: W,
    estimate: ArrayView1<'_, f64>,
    precision: Option<ArrayView1<'_, f64>>,
) -> Result<()> {
    if let Some(p) = &precision {
        if p.len() != estimate.len() {
            return Err(EsiError::DimensionMismatch { expected: estimate.len(), got: p.len() });
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["row", "estimate"];
    if precision.is_some() {
        header.push("precision");
    }
    w.write_record(&header)?;
    for (j, e) in estimate.iter().enumerate() {
        let mut rec = vec![j.to_string(), e.to_string()];
        if let Some(p) = &precision {
            rec.push(p[j].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Regular grid described by origin, step and node count per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularGrid {
    pub origin: Vec<f64>,
    pub step: Vec<f64>,
    pub count: Vec<usize>,
}

impl RegularGrid {
    pub fn to_grid(&self) -> Result<GridSpec> {
        let d = self.origin.len();
        if self.step.len() != d {
            return Err(EsiError::DimensionMismatch { expected: d, got: self.step.len() });
        }
        if self.count.len() != d {
            return Err(EsiError::DimensionMismatch { expected: d, got: self.count.len() });
        }
        if let Some(s) = self.step.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(EsiError::InvalidInput(format!("grid step {s} must be > 0")));
        }
        let axes = (0..d)
            .map(|a| (0..self.count[a]).map(|i| self.origin[a] + i as f64 * self.step[a]).collect())
            .collect();
        GridSpec::new(axes)
    }
}

pub fn read_grid_file(path: impl AsRef<Path>) -> Result<GridSpec> {
    let spec: RegularGrid = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    spec.to_grid()
}

pub fn write_grid_file(path: impl AsRef<Path>, grid: &RegularGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, grid)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Metadata stored next to a binary cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeSidecar {
    pub n_targets: usize,
    pub m: usize,
    pub grid_shape: Option<Vec<usize>>,
    pub grid: Option<GridSpec>,
    pub config: EsiConfig,
    pub seed: u64,
}

/// Path of the sidecar belonging to a cube file (`<file>.json`).
pub fn sidecar_path(cube_path: &Path) -> PathBuf {
    let mut s = cube_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Raw little-endian `f64` values in row-major order.
pub fn write_cube_bytes<W: Write>(mut writer: W, cube: ArrayView2<'_, f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(cube.len() * 8);
    for row in cube.rows() {
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    writer.write_all(&buf)?;
    Ok(())
}

pub fn read_cube_bytes<R: Read>(mut reader: R, n_targets: usize, m: usize) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let expected = n_targets
        .checked_mul(m)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| EsiError::Format("cube dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(EsiError::Format(format!("cube holds {} bytes, expected {expected}", bytes.len())));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
        .collect();
    Array2::from_shape_vec((n_targets, m), values).map_err(|e| EsiError::Format(e.to_string()))
}

/// Writes the cube and its sidecar.
pub fn write_cube(path: impl AsRef<Path>, cube: ArrayView2<'_, f64>, sidecar: &CubeSidecar) -> Result<()> {
    let path = path.as_ref();
    if cube.dim() != (sidecar.n_targets, sidecar.m) {
        return Err(EsiError::Format("sidecar dimensions do not match the cube".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_cube_bytes(&mut w, cube)?;
    w.flush()?;
    let mut s = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(&mut s, sidecar)?;
    s.write_all(b"\n")?;
    s.flush()?;
    Ok(())
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<(Array2<f64>, CubeSidecar)> {
    let path = path.as_ref();
    let sidecar: CubeSidecar = serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
    if let (Some(shape), Some(grid)) = (&sidecar.grid_shape, &sidecar.grid) {
        if *shape != grid.shape() {
            return Err(EsiError::Format("sidecar grid shape does not match its grid".into()));
        }
    }
    let cube = read_cube_bytes(BufReader::new(File::open(path)?), sidecar.n_targets, sidecar.m)?;
    Ok((cube, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn points_round_trip_bytes() {
        let text = "x0,x1,value\n0.1,0.2,3\n1e-7,0.30000000000000004,-0.5\n";
        let d = read_points(text.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_points(&mut out, &d).unwrap();
        let again = read_points(out.as_slice()).unwrap();
        assert_eq!(again, d);
        let mut out2 = Vec::new();
        write_points(&mut out2, &again).unwrap();
        assert_eq!(out, out2);
        assert_eq!(d.values()[1], -0.5);
        assert_eq!(d.points().row(1)[1], 0.30000000000000004);
    }

    #[test]
    fn points_header_is_checked() {
        assert!(read_points("a,b,value\n1,2,3\n".as_bytes()).is_err());
        assert!(read_points("x0,x1,value\n1,zz,3\n".as_bytes()).is_err());
        assert!(read_points("x0,x1,value\n".as_bytes()).is_err());
        assert!(read_points("value\n1\n".as_bytes()).is_err());
    }

    #[test]
    fn cube_bytes_round_trip() {
        let cube = array![[1.0, f64::NAN, -0.0], [f64::INFINITY, 2.5e-300, 7.0]];
        let mut buf = Vec::new();
        write_cube_bytes(&mut buf, cube.view()).unwrap();
        assert_eq!(buf.len(), 48);
        let back = read_cube_bytes(buf.as_slice(), 2, 3).unwrap();
        let mut buf2 = Vec::new();
        write_cube_bytes(&mut buf2, back.view()).unwrap();
        assert_eq!(buf, buf2);
        assert!(read_cube_bytes(buf.as_slice(), 3, 3).is_err());
    }

    #[test]
    fn regular_grid_nodes() {
        let g = RegularGrid { origin: vec![0.0, 10.0], step: vec![0.5, 2.0], count: vec![3, 2] }.to_grid().unwrap();
        assert_eq!(g.axes()[0], vec![0.0, 0.5, 1.0]);
        assert_eq!(g.axes()[1], vec![10.0, 12.0]);
        assert!(RegularGrid { origin: vec![0.0], step: vec![0.0], count: vec![3] }.to_grid().is_err());
        assert!(RegularGrid { origin: vec![0.0], step: vec![1.0, 1.0], count: vec![3] }.to_grid().is_err());
    }

    #[test]
    fn locations_table() {
        let t = read_locations("x0,x1\n0.5,1\n2,3\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.row(1).to_vec(), vec![2.0, 3.0]);
        assert!(read_locations("x0,y\n1,2\n".as_bytes()).is_err());
        assert!(read_locations("x0,x1\n1,2,3\n".as_bytes()).is_err());
    }

    #[test]
    fn estimate_table_layout() {
        let t = LocationSet::from_rows(&[vec![0.0, 1.0], vec![0.5, 0.25]]).unwrap();
        let mut out = Vec::new();
        write_estimates(&mut out, &t, array![1.5, f64::NAN].view(), Some(array![0.0, 2.0].view())).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x0,x1,estimate,precision\n0,1,1.5,0\n0.5,0.25,NaN,2\n");
    }
}
