use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::volume::{to_u16, ScalarVolume};
use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point3};
use crate::registration::TransferFunction;

/// Row-major 2-D image; pixel `(u, v)` sits at `v * width + u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Image2D {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image2D {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.pixels[v * self.width + u]
    }
}

/// Pixel grid of the TRUS sweep: pixel `(u, v)` of slice `n` lies at
/// `origin + (u·du, v·dv, n·slice_step)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceGeometry {
    pub du: f64,
    pub dv: f64,
    pub width: usize,
    pub height: usize,
    pub origin: [f64; 3],
    pub slice_step: f64,
}

impl SliceGeometry {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("du", self.du),
            ("dv", self.dv),
            ("slice_step", self.slice_step),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "slice geometry {name} must be positive"
                )));
            }
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter(
                "slice geometry has an empty image".into(),
            ));
        }
        Ok(())
    }

    pub fn point(&self, u: f64, v: f64, n: f64) -> Point3 {
        Point3::new(
            self.origin[0] + u * self.du,
            self.origin[1] + v * self.dv,
            self.origin[2] + n * self.slice_step,
        )
    }

    pub fn slice_z(&self, n: i64) -> f64 {
        self.origin[2] + n as f64 * self.slice_step
    }

    /// Index of the slice plane nearest to `z`.
    pub fn nearest_slice(&self, z: f64) -> i64 {
        ((z - self.origin[2]) / self.slice_step).round() as i64
    }

    /// Voxel grid whose centres are the pixels of `slices` consecutive slices.
    pub fn volume_grid(&self, slices: usize) -> Result<GridSpec> {
        GridSpec::new(
            [self.width, self.height, slices],
            [self.du, self.dv, self.slice_step],
            self.origin,
        )
    }
}

/// Which two diagonal quadrants show TRUS.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadrantLayout {
    /// Top-left and bottom-right.
    #[default]
    TrusMainDiagonal,
    /// Top-right and bottom-left.
    TrusAntiDiagonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Trus,
    Mri,
}

impl QuadrantLayout {
    /// Modality of pixel `(u, v)`; left is `u < cu`, top is `v < cv`.
    pub fn modality(self, u: usize, v: usize, cursor: [usize; 2]) -> Modality {
        let left = u < cursor[0];
        let top = v < cursor[1];
        let main_diagonal = left == top;
        match (self, main_diagonal) {
            (QuadrantLayout::TrusMainDiagonal, true)
            | (QuadrantLayout::TrusAntiDiagonal, false) => Modality::Trus,
            _ => Modality::Mri,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeImage {
    pub image: Image2D,
    pub cursor: [usize; 2],
    pub layout: QuadrantLayout,
    pub slice: i64,
    /// MRI-quadrant pixels whose mapped position fell outside the volume.
    pub out_of_bounds: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompositeOptions {
    pub layout: QuadrantLayout,
    pub fill: f64,
}

impl Default for CompositeOptions {
    fn default() -> Self {
        CompositeOptions {
            layout: QuadrantLayout::default(),
            fill: 0.0,
        }
    }
}

/// JSON sidecar of a composite PGM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeSidecar {
    pub width: usize,
    pub height: usize,
    pub slice: i64,
    pub cursor: [usize; 2],
    pub layout: QuadrantLayout,
    pub out_of_bounds: usize,
}

/// MRI intensity at TRUS pixel `(u, v)` of slice `n`, or `None` outside the volume.
fn mri_pixel(
    geom: &SliceGeometry,
    n: i64,
    u: usize,
    v: usize,
    mri: &ScalarVolume,
    f: &TransferFunction,
) -> Option<f64> {
    let q = f.apply(&geom.point(u as f64, v as f64, n as f64));
    let s = mri.sample(&q, f64::NAN);
    (!s.is_nan()).then_some(s)
}

/// Four-quadrant fusion of TRUS slice `n` with the MRI volume seen through `f`.
pub fn composite_slice(
    trus: &Image2D,
    geom: &SliceGeometry,
    n: i64,
    mri: &ScalarVolume,
    f: &TransferFunction,
    cursor: [usize; 2],
    opts: &CompositeOptions,
) -> Result<CompositeImage> {
    geom.validate()?;
    if trus.width != geom.width || trus.height != geom.height {
        return Err(Error::DimensionMismatch(format!(
            "TRUS slice is {}x{}, geometry expects {}x{}",
            trus.width, trus.height, geom.width, geom.height
        )));
    }
    let rows: Vec<(Vec<f64>, usize)> = (0..trus.height)
        .into_par_iter()
        .map(|v| {
            let mut row = Vec::with_capacity(trus.width);
            let mut oob = 0;
            for u in 0..trus.width {
                let px = match opts.layout.modality(u, v, cursor) {
                    Modality::Trus => trus.get(u, v),
                    Modality::Mri => mri_pixel(geom, n, u, v, mri, f).unwrap_or_else(|| {
                        oob += 1;
                        opts.fill
                    }),
                };
                row.push(px);
            }
            (row, oob)
        })
        .collect();
    let out_of_bounds = rows.iter().map(|r| r.1).sum();
    let pixels = rows.into_iter().flat_map(|r| r.0).collect();
    Ok(CompositeImage {
        image: Image2D {
            width: trus.width,
            height: trus.height,
            pixels,
        },
        cursor,
        layout: opts.layout,
        slice: n,
        out_of_bounds,
    })
}

/// Full-frame MRI rendering of slice `n` (every pixel through `f`).
pub fn resample_mri_slice(
    geom: &SliceGeometry,
    n: i64,
    mri: &ScalarVolume,
    f: &TransferFunction,
    fill: f64,
) -> Result<Image2D> {
    geom.validate()?;
    let pixels = (0..geom.height)
        .into_par_iter()
        .flat_map_iter(|v| (0..geom.width).map(move |u| (u, v)))
        .map(|(u, v)| mri_pixel(geom, n, u, v, mri, f).unwrap_or(fill))
        .collect();
    Image2D::new(geom.width, geom.height, pixels)
}

/// Writes a 16-bit binary PGM (big-endian samples, rounded and clamped).
pub fn write_pgm(path: impl AsRef<Path>, image: &Image2D) -> Result<()> {
    let path = path.as_ref();
    let mut buf = format!("P5\n{} {}\n65535\n", image.width, image.height).into_bytes();
    for v in &image.pixels {
        buf.extend_from_slice(&to_u16(*v).to_be_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a 16-bit binary PGM written by [`write_pgm`].
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse(format!(
                "{}: truncated PGM header",
                path.display()
            )));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let bad = || Error::Parse(format!("{}: not a 16-bit P5 image", path.display()));
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(bad());
    }
    let width: usize = fields[1].parse().map_err(|_| bad())?;
    let height: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(pos..).ok_or_else(bad)?;
    if data.len() != 2 * width * height {
        return Err(bad());
    }
    let pixels = data
        .chunks_exact(2)
        .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])))
        .collect();
    Image2D::new(width, height, pixels)
}

impl CompositeImage {
    pub fn sidecar(&self) -> CompositeSidecar {
        CompositeSidecar {
            width: self.image.width,
            height: self.image.height,
            slice: self.slice,
            cursor: self.cursor,
            layout: self.layout,
            out_of_bounds: self.out_of_bounds,
        }
    }

    /// Writes `<stem>.pgm` and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        write_pgm(dir.join(format!("{stem}.pgm")), &self.image)?;
        let json_path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&self.sidecar())
            .map_err(|e| Error::json("composite sidecar", e))?;
        std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vector3;
    use crate::registration::RigidTransform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom() -> SliceGeometry {
        SliceGeometry {
            du: 0.3,
            dv: 0.3,
            width: 40,
            height: 30,
            origin: [-6.0, -4.5, -3.0],
            slice_step: 1.5,
        }
    }

    fn random_stack(seed: u64, n: usize) -> Vec<Image2D> {
        let g = geom();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let px = (0..g.width * g.height)
                    .map(|_| rng.random_range(0..4096) as f64)
                    .collect();
                Image2D::new(g.width, g.height, px).unwrap()
            })
            .collect()
    }

    fn stack_volume(slices: &[Image2D]) -> ScalarVolume {
        let g = geom();
        let values = slices
            .iter()
            .flat_map(|s| s.pixels.iter().copied())
            .collect();
        ScalarVolume::new(g.volume_grid(slices.len()).unwrap(), values).unwrap()
    }

    #[test]
    fn four_equal_quadrants() {
        let g = geom();
        let trus = Image2D::filled(g.width, g.height, 50.0);
        let mri = ScalarVolume::constant(g.volume_grid(5).unwrap(), 100.0).unwrap();
        let c = composite_slice(
            &trus,
            &g,
            2,
            &mri,
            &TransferFunction::identity(),
            [20, 15],
            &CompositeOptions::default(),
        )
        .unwrap();
        assert_eq!(c.image.get(0, 0), 50.0);
        assert_eq!(c.image.get(39, 0), 100.0);
        assert_eq!(c.image.get(0, 29), 100.0);
        assert_eq!(c.image.get(39, 29), 50.0);
        let trus_count = c.image.pixels.iter().filter(|&&p| p == 50.0).count();
        assert_eq!(trus_count, 2 * 20 * 15);
        assert_eq!(c.out_of_bounds, 0);

        let anti = CompositeOptions {
            layout: QuadrantLayout::TrusAntiDiagonal,
            ..Default::default()
        };
        let c = composite_slice(
            &trus,
            &g,
            2,
            &mri,
            &TransferFunction::identity(),
            [20, 15],
            &anti,
        )
        .unwrap();
        assert_eq!(c.image.get(0, 0), 100.0);
        assert_eq!(c.image.get(39, 0), 50.0);
    }

    #[test]
    fn degenerate_cursor_is_all_bottom_right() {
        let g = geom();
        let trus = Image2D::filled(g.width, g.height, 50.0);
        let mri = ScalarVolume::constant(g.volume_grid(5).unwrap(), 100.0).unwrap();
        let c = composite_slice(
            &trus,
            &g,
            1,
            &mri,
            &TransferFunction::identity(),
            [0, 0],
            &CompositeOptions::default(),
        )
        .unwrap();
        assert!(c.image.pixels.iter().all(|&p| p == 50.0));
    }

    #[test]
    fn self_fusion_is_bit_exact() {
        let g = geom();
        let slices = random_stack(3, 6);
        let mri = stack_volume(&slices);
        let f = TransferFunction::identity();
        for n in 0..6 {
            for cursor in [[0, 0], [13, 7], [20, 15], [40, 30], [39, 1]] {
                for layout in [
                    QuadrantLayout::TrusMainDiagonal,
                    QuadrantLayout::TrusAntiDiagonal,
                ] {
                    let opts = CompositeOptions { layout, fill: 0.0 };
                    let c =
                        composite_slice(&slices[n], &g, n as i64, &mri, &f, cursor, &opts).unwrap();
                    assert_eq!(c.image, slices[n]);
                    assert_eq!(c.out_of_bounds, 0);
                }
            }
        }
    }

    #[test]
    fn union_of_renders_is_cursor_independent() {
        let g = geom();
        let slices = random_stack(4, 4);
        let mri = stack_volume(&random_stack(5, 4));
        let f = TransferFunction::rigid_only(RigidTransform::from_translation(Vector3::new(
            0.4, -0.2, 0.7,
        )));
        let full_mri = resample_mri_slice(&g, 1, &mri, &f, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let cursor = [
                rng.random_range(0..=g.width),
                rng.random_range(0..=g.height),
            ];
            let c = composite_slice(
                &slices[1],
                &g,
                1,
                &mri,
                &f,
                cursor,
                &CompositeOptions::default(),
            )
            .unwrap();
            for v in 0..g.height {
                for u in 0..g.width {
                    let want = match QuadrantLayout::default().modality(u, v, cursor) {
                        Modality::Trus => slices[1].get(u, v),
                        Modality::Mri => full_mri.get(u, v),
                    };
                    assert_eq!(c.image.get(u, v).to_bits(), want.to_bits());
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_counted() {
        let g = geom();
        let trus = Image2D::filled(g.width, g.height, 1.0);
        let mri = ScalarVolume::constant(g.volume_grid(3).unwrap(), 9.0).unwrap();
        let f = TransferFunction::rigid_only(RigidTransform::from_translation(Vector3::new(
            100.0, 0.0, 0.0,
        )));
        let c = composite_slice(
            &trus,
            &g,
            0,
            &mri,
            &f,
            [20, 15],
            &CompositeOptions {
                fill: 3.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(c.out_of_bounds, 2 * 20 * 15);
        assert_eq!(c.image.get(39, 0), 3.0);
    }

    #[test]
    fn dimension_mismatch() {
        let g = geom();
        let trus = Image2D::filled(10, 10, 1.0);
        let mri = ScalarVolume::constant(g.volume_grid(3).unwrap(), 9.0).unwrap();
        assert!(matches!(
            composite_slice(
                &trus,
                &g,
                0,
                &mri,
                &TransferFunction::identity(),
                [0, 0],
                &CompositeOptions::default()
            ),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image2D::new(3, 2, vec![0.0, 1.0, 65535.0, 256.4, 70000.0, -3.0]).unwrap();
        write_pgm(dir.path().join("a.pgm"), &img).unwrap();
        let bytes = std::fs::read(dir.path().join("a.pgm")).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n65535\n"));
        assert_eq!(&bytes[13..17], &[0, 0, 0, 1]);
        let back = read_pgm(dir.path().join("a.pgm")).unwrap();
        assert_eq!(back.pixels, vec![0.0, 1.0, 65535.0, 256.0, 65535.0, 0.0]);
    }
}
