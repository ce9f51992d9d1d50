use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ContourStack, GridSpec, Structure};
use crate::error::{Error, Result};

/// Binary voxel support of a structure.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureMask {
    pub grid: GridSpec,
    pub inside: Vec<bool>,
}

/// JSON header written next to a raw `u8` mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskHeader {
    pub structure: Structure,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub voxel_count: usize,
    pub data_file: String,
}

impl StructureMask {
    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn volume_cc(&self) -> f64 {
        self.count() as f64 * self.grid.voxel_volume_cc()
    }

    /// Writes `<stem>.raw` (one byte per voxel, 0/1, x-fastest) and `<stem>.json`.
    pub fn write_raw(&self, dir: &Path, stem: &str, structure: &Structure) -> Result<()> {
        let raw_name = format!("{stem}.raw");
        let bytes: Vec<u8> = self.inside.iter().map(|&b| u8::from(b)).collect();
        let raw_path = dir.join(&raw_name);
        std::fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
        let header = MaskHeader {
            structure: structure.clone(),
            dims: self.grid.dims,
            spacing: self.grid.spacing,
            origin: self.grid.origin,
            voxel_count: self.count(),
            data_file: raw_name,
        };
        let json_path = dir.join(format!("{stem}.json"));
        let text =
            serde_json::to_string_pretty(&header).map_err(|e| Error::json("mask header", e))?;
        std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }
}

/// Staircase voxelization: a voxel is inside when its centre lies inside
/// the contour of the nearest slice plane (within half a slice spacing).
pub fn voxelize(stack: &ContourStack, grid: &GridSpec) -> Result<StructureMask> {
    grid.validate()?;
    let (lo, hi) = stack.bounds();
    let (glo, ghi) = (grid.outer_min(), grid.outer_max());
    let eps = 1e-9;
    for a in 0..3 {
        if lo[a] < glo[a] - eps || hi[a] > ghi[a] + eps {
            return Err(Error::OutOfBounds(format!(
                "grid [{:.3}, {:.3}] does not cover {} extent [{:.3}, {:.3}] on axis {a}",
                glo[a], ghi[a], stack.structure, lo[a], hi[a]
            )));
        }
    }

    let sp = stack.slice_spacing_mm;
    let z0 = stack.contours[0].z_mm;
    let by_lattice: HashMap<i64, usize> = stack
        .contours
        .iter()
        .enumerate()
        .map(|(i, c)| (((c.z_mm - z0) / sp).round() as i64, i))
        .collect();

    let [nx, ny, nz] = grid.dims;
    let layers: Vec<Vec<bool>> = (0..nz)
        .into_par_iter()
        .map(|k| {
            let z = grid.origin[2] + k as f64 * grid.spacing[2];
            let slot = ((z - z0) / sp + 0.5).floor() as i64;
            let Some(&ci) = by_lattice.get(&slot) else {
                return vec![false; nx * ny];
            };
            let contour = &stack.contours[ci];
            let mut layer = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                let v = grid.origin[1] + j as f64 * grid.spacing[1];
                for i in 0..nx {
                    let u = grid.origin[0] + i as f64 * grid.spacing[0];
                    layer.push(contour.contains(u, v));
                }
            }
            layer
        })
        .collect();

    Ok(StructureMask {
        grid: grid.clone(),
        inside: layers.concat(),
    })
}
