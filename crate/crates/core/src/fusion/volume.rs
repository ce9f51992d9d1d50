use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point3};

/// Index coordinates closer than this to an integer are snapped onto it, so
/// samples at voxel centres return stored values bit-exactly.
const SNAP: f64 = 1e-9;

/// Scalar image volume on a regular grid, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarVolume {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

/// JSON header stored next to a raw `u16` volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub data_file: String,
}

impl ScalarVolume {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "volume has {} values for {} voxels",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarVolume { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Result<Self> {
        let n = grid.len();
        ScalarVolume::new(grid, vec![value; n])
    }

    /// Fills the grid from a function of the voxel centre.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&Point3) -> f64) -> Result<Self> {
        grid.validate()?;
        let values = (0..grid.len()).map(|i| f(&grid.center_of(i))).collect();
        ScalarVolume::new(grid, values)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    /// Trilinear interpolation; `fill` outside the box of voxel centres.
    pub fn sample(&self, p: &Point3, fill: f64) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let mut t = (p[a] - self.grid.origin[a]) / self.grid.spacing[a];
            let r = t.round();
            if (t - r).abs() <= SNAP {
                t = r;
            }
            let n = self.grid.dims[a];
            if !(t >= 0.0 && t <= (n - 1) as f64) {
                return fill;
            }
            let i = (t.floor() as usize).min(n.saturating_sub(2));
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut ijk = [0usize; 3];
            for a in 0..3 {
                let hi = (corner >> a) & 1 == 1;
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
                ijk[a] = base[a] + usize::from(hi);
            }
            if w != 0.0 {
                acc += w * self.get(ijk[0], ijk[1], ijk[2]);
            }
        }
        acc
    }

    /// Writes `<stem>.raw` (little-endian u16, rounded and clamped) and `<stem>.json`.
    pub fn write_raw(&self, dir: &Path, stem: &str) -> Result<()> {
        let raw_name = format!("{stem}.raw");
        let raw_path = dir.join(&raw_name);
        let mut bytes = Vec::with_capacity(2 * self.values.len());
        for v in &self.values {
            bytes.extend_from_slice(&to_u16(*v).to_le_bytes());
        }
        std::fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
        let header = VolumeHeader {
            dims: self.grid.dims,
            spacing: self.grid.spacing,
            origin: self.grid.origin,
            data_file: raw_name,
        };
        let json_path = dir.join(format!("{stem}.json"));
        let text =
            serde_json::to_string_pretty(&header).map_err(|e| Error::json("volume header", e))?;
        std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }

    /// Reads a volume from its JSON header; the data file is resolved next to it.
    pub fn read_raw(header_path: impl AsRef<Path>) -> Result<Self> {
        let header_path = header_path.as_ref();
        let text = std::fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
        let header: VolumeHeader = serde_json::from_str(&text)
            .map_err(|e| Error::json(header_path.display().to_string(), e))?;
        let grid = GridSpec::new(header.dims, header.spacing, header.origin)?;
        let raw_path = header_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&header.data_file);
        let bytes = std::fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
        if bytes.len() != 2 * grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} holds {} bytes, header needs {}",
                raw_path.display(),
                bytes.len(),
                2 * grid.len()
            )));
        }
        let values = bytes
            .chunks_exact(2)
            .map(|b| f64::from(u16::from_le_bytes([b[0], b[1]])))
            .collect();
        ScalarVolume::new(grid, values)
    }
}

pub(crate) fn to_u16(v: f64) -> u16 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 65535.0) as u16
    }
}

/// `v.sample(p, 0.0)`.
pub fn trilinear_sample(v: &ScalarVolume, p: &Point3) -> f64 {
    v.sample(p, 0.0)
}
