//! Spatial domain, quadrature lattice and the `NCG1` binary grid format.
//!
//! Scalar fields are stored as flat vectors over the lattice cells in
//! row-major order: the first axis varies slowest.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point in the domain. Unused trailing coordinates are zero.
pub type Point = [f64; 3];

/// Magic bytes opening every grid file.
pub const GRID_MAGIC: &[u8; 4] = b"NCG1";
/// Size of the fixed grid-file header in bytes.
pub const GRID_HEADER_LEN: usize = 16;

/// Axis-aligned box carrying a uniform midpoint-quadrature lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialDomain {
    pub dimension: usize,
    pub lower: Point,
    pub upper: Point,
    /// Cells per axis. Axes beyond `dimension` are fixed to 1.
    pub resolution: [usize; 3],
}

impl SpatialDomain {
    pub fn new(lower: &[f64], upper: &[f64], resolution: &[usize]) -> Self {
        let dimension = lower.len();
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        let mut res = [1; 3];
        for axis in 0..dimension.min(3) {
            lo[axis] = lower[axis];
            hi[axis] = upper.get(axis).copied().unwrap_or(f64::NAN);
            res[axis] = resolution.get(axis).copied().unwrap_or(0);
        }
        SpatialDomain {
            dimension,
            lower: lo,
            upper: hi,
            resolution: res,
        }
    }

    /// Square (or cubic) domain `[0, side]^dimension` with `cells` cells per axis.
    pub fn cube(dimension: usize, side: f64, cells: usize) -> Self {
        let lower = vec![0.0; dimension];
        let upper = vec![side; dimension];
        let resolution = vec![cells; dimension];
        Self::new(&lower, &upper, &resolution)
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        self.extent(axis) / self.resolution[axis] as f64
    }

    pub fn cell_count(&self) -> usize {
        self.resolution[..self.dimension].iter().product()
    }

    /// Volume (area in 2-D) of one lattice cell: the quadrature weight.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dimension).map(|a| self.cell_width(a)).product()
    }

    pub fn axis_sizes(&self) -> Vec<usize> {
        self.resolution[..self.dimension].to_vec()
    }

    /// Multi-index of a flat cell index.
    pub fn unflatten(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for axis in (0..self.dimension).rev() {
            idx[axis] = flat % self.resolution[axis];
            flat /= self.resolution[axis];
        }
        idx
    }

    pub fn flatten(&self, idx: [usize; 3]) -> usize {
        (0..self.dimension).fold(0, |acc, a| acc * self.resolution[a] + idx[a])
    }

    /// Lower corner of a cell.
    pub fn cell_origin(&self, flat: usize) -> Point {
        let idx = self.unflatten(flat);
        let mut p = [0.0; 3];
        for a in 0..self.dimension {
            p[a] = self.lower[a] + idx[a] as f64 * self.cell_width(a);
        }
        p
    }

    pub fn cell_center(&self, flat: usize) -> Point {
        let mut p = self.cell_origin(flat);
        for (a, coord) in p.iter_mut().enumerate().take(self.dimension) {
            *coord += 0.5 * self.cell_width(a);
        }
        p
    }

    /// Cell containing `p`, or `None` outside the box. The upper faces belong
    /// to the last cell on each axis.
    pub fn cell_of(&self, p: &Point) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        let mut idx = [0; 3];
        for a in 0..self.dimension {
            let rel = (p[a] - self.lower[a]) / self.cell_width(a);
            idx[a] = (rel.floor() as usize).min(self.resolution[a] - 1);
        }
        Some(self.flatten(idx))
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..self.dimension).all(|a| p[a] >= self.lower[a] && p[a] <= self.upper[a])
    }

    pub fn center(&self) -> Point {
        let mut p = [0.0; 3];
        for a in 0..self.dimension {
            p[a] = 0.5 * (self.lower[a] + self.upper[a]);
        }
        p
    }

    /// Field with value `1 / |Ω|` everywhere: a uniform density with unit integral.
    pub fn uniform_density(&self) -> Vec<f64> {
        let total = self.cell_volume() * self.cell_count() as f64;
        vec![1.0 / total; self.cell_count()]
    }

    /// Midpoint-rule integral of a lattice field.
    pub fn integrate(&self, field: &[f64]) -> f64 {
        field.iter().sum::<f64>() * self.cell_volume()
    }
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid file does not start with the NCG1 magic")]
    BadMagic,
    #[error("grid header declares no axes")]
    NoAxes,
    #[error("grid payload holds {found} values, header declares {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("grid has {0} axes, at most 3 are supported")]
    TooManyAxes(usize),
    #[error("axis size {0} does not fit the 32-bit header field")]
    AxisTooLarge(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Encode the 16-byte header: magic followed by three little-endian `u32`
/// axis sizes. Unused trailing axes are written as 0, so the number of axes
/// is the count of leading nonzero sizes.
pub fn grid_header(sizes: &[usize]) -> Result<[u8; GRID_HEADER_LEN], GridError> {
    if sizes.is_empty() {
        return Err(GridError::NoAxes);
    }
    if sizes.len() > 3 {
        return Err(GridError::TooManyAxes(sizes.len()));
    }
    let mut header = [0u8; GRID_HEADER_LEN];
    header[..4].copy_from_slice(GRID_MAGIC);
    for (axis, &size) in sizes.iter().enumerate() {
        let size = u32::try_from(size).map_err(|_| GridError::AxisTooLarge(size))?;
        if size == 0 {
            return Err(GridError::NoAxes);
        }
        header[4 + 4 * axis..8 + 4 * axis].copy_from_slice(&size.to_le_bytes());
    }
    Ok(header)
}

pub fn parse_grid_header(header: &[u8; GRID_HEADER_LEN]) -> Result<Vec<usize>, GridError> {
    if &header[..4] != GRID_MAGIC {
        return Err(GridError::BadMagic);
    }
    let mut sizes = Vec::with_capacity(3);
    for axis in 0..3 {
        let raw = u32::from_le_bytes(header[4 + 4 * axis..8 + 4 * axis].try_into().unwrap());
        if raw == 0 {
            break;
        }
        sizes.push(raw as usize);
    }
    if sizes.is_empty() {
        return Err(GridError::NoAxes);
    }
    Ok(sizes)
}

pub fn write_grid<W: Write>(mut w: W, sizes: &[usize], values: &[f64]) -> Result<(), GridError> {
    let expected: usize = sizes.iter().product();
    if expected != values.len() {
        return Err(GridError::SizeMismatch {
            expected,
            found: values.len(),
        });
    }
    w.write_all(&grid_header(sizes)?)?;
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_grid<R: Read>(mut r: R) -> Result<(Vec<usize>, Vec<f64>), GridError> {
    let mut header = [0u8; GRID_HEADER_LEN];
    r.read_exact(&mut header)?;
    let sizes = parse_grid_header(&header)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected: usize = sizes.iter().product();
    if payload.len() != expected * 8 {
        return Err(GridError::SizeMismatch {
            expected,
            found: payload.len() / 8,
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((sizes, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_index_round_trip_3d() {
        let d = SpatialDomain::new(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0], &[3, 4, 5]);
        for flat in 0..d.cell_count() {
            assert_eq!(d.flatten(d.unflatten(flat)), flat);
            assert_eq!(d.cell_of(&d.cell_center(flat)), Some(flat));
        }
        assert!((d.cell_volume() - (1.0 / 3.0) * 0.5 * 0.6).abs() < 1e-15);
    }

    #[test]
    fn upper_face_maps_to_last_cell() {
        let d = SpatialDomain::cube(2, 4.0, 4);
        assert_eq!(d.cell_of(&[4.0, 4.0, 0.0]), Some(15));
        assert_eq!(d.cell_of(&[4.0001, 0.0, 0.0]), None);
    }

    #[test]
    fn uniform_density_integrates_to_one() {
        let d = SpatialDomain::new(&[-1.0, 2.0], &[3.0, 5.0], &[7, 9]);
        assert!((d.integrate(&d.uniform_density()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_round_trip_and_header_layout() {
        let values: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        let mut buf = Vec::new();
        write_grid(&mut buf, &[3, 4], &values).unwrap();
        assert_eq!(&buf[..4], b"NCG1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 4);
        assert_eq!(&buf[12..16], &[0, 0, 0, 0]);
        assert_eq!(buf.len(), 16 + 12 * 8);
        let (sizes, back) = read_grid(buf.as_slice()).unwrap();
        assert_eq!(sizes, vec![3, 4]);
        assert_eq!(back, values);
    }

    #[test]
    fn grid_rejects_bad_magic_and_truncation() {
        let mut buf = Vec::new();
        write_grid(&mut buf, &[2], &[1.0, 2.0]).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_grid(bad.as_slice()), Err(GridError::BadMagic)));
        buf.pop();
        assert!(matches!(
            read_grid(buf.as_slice()),
            Err(GridError::SizeMismatch { .. })
        ));
    }
}
