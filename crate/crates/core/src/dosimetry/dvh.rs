use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dose::DoseGrid;
use crate::error::{Error, Result};
use crate::geometry::StructureMask;

pub const DEFAULT_BIN_WIDTH_GY: f64 = 0.8;

/// Cumulative dose-volume histogram of one structure.
///
/// The curve is sampled at bin edges `k·bin_width`; the sorted voxel doses
/// are kept so exact queries do not depend on the binning.
#[derive(Clone, Debug, PartialEq)]
pub struct DvhCurve {
    pub structure: String,
    pub bin_width_gy: f64,
    pub voxel_volume_cc: f64,
    /// `(dose Gy, fraction %)` at every bin edge, ending at 0 %.
    pub samples: Vec<(f64, f64)>,
    sorted: Vec<f64>,
}

/// How `dose_at_volume` turns the curve into a single dose.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoseAtVolumeMode {
    /// Largest voxel dose `d` with fraction(d) ≥ q.
    #[default]
    Exact,
    /// Largest dose on the piecewise-linear bin curve with fraction ≥ q.
    Interpolated,
    /// Bin edge whose fraction is closest to q.
    NearestBin,
}

/// A dose together with the exact fraction receiving at least that dose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoseAtVolume {
    pub dose_gy: f64,
    pub achieved_pct: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeAtDose {
    pub fraction_pct: f64,
    pub cc: f64,
}

impl DvhCurve {
    /// Builds the curve from the doses of the voxels inside a structure.
    pub fn from_doses(
        structure: impl Into<String>,
        doses: &[f64],
        voxel_volume_cc: f64,
        bin_width_gy: f64,
    ) -> Result<Self> {
        if doses.is_empty() {
            return Err(Error::EmptyInput("DVH needs at least one voxel"));
        }
        if !(bin_width_gy > 0.0) || !bin_width_gy.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bin width must be positive, got {bin_width_gy}"
            )));
        }
        if doses.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidParameter(
                "doses must be finite and non-negative".into(),
            ));
        }
        let mut sorted = doses.to_vec();
        sorted.sort_by(f64::total_cmp);
        let max = sorted[sorted.len() - 1];
        let last = (max / bin_width_gy).floor() as usize + 1;
        let mut curve = DvhCurve {
            structure: structure.into(),
            bin_width_gy,
            voxel_volume_cc,
            samples: Vec::with_capacity(last + 1),
            sorted,
        };
        for k in 0..=last {
            let d = k as f64 * bin_width_gy;
            curve.samples.push((d, curve.fraction(d)));
        }
        Ok(curve)
    }

    pub fn voxel_count(&self) -> usize {
        self.sorted.len()
    }

    pub fn total_cc(&self) -> f64 {
        self.sorted.len() as f64 * self.voxel_volume_cc
    }

    /// Number of voxels receiving at least `d`.
    pub fn count_at_least(&self, d: f64) -> usize {
        self.sorted.len() - self.sorted.partition_point(|&x| x < d)
    }

    /// Exact percentage of voxels receiving at least `d`.
    pub fn fraction(&self, d: f64) -> f64 {
        100.0 * self.count_at_least(d) as f64 / self.sorted.len() as f64
    }

    /// Linear interpolation of the bin samples.
    pub fn fraction_interpolated(&self, d: f64) -> f64 {
        if d <= 0.0 {
            return 100.0;
        }
        let k = (d / self.bin_width_gy).floor() as usize;
        if k + 1 >= self.samples.len() {
            return self.samples[self.samples.len() - 1].1;
        }
        let (d0, f0) = self.samples[k];
        let (_, f1) = self.samples[k + 1];
        f0 + (f1 - f0) * (d - d0) / self.bin_width_gy
    }

    pub fn min_dose(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max_dose(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    /// Writes `dose_gy,fraction_pct,cc` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::Csv {
            context: path.display().to_string(),
            source: e,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["dose_gy", "fraction_pct", "cc"])
            .map_err(csv_err)?;
        let total = self.total_cc();
        for (d, f) in &self.samples {
            w.write_record([
                format!("{d:.4}"),
                format!("{f:.6}"),
                format!("{:.6}", f / 100.0 * total),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// DVH of the voxels of `mask` on the dose grid.
pub fn compute_dvh(
    dose: &DoseGrid,
    mask: &StructureMask,
    structure: &str,
    bin_width_gy: f64,
) -> Result<DvhCurve> {
    if dose.grid != mask.grid {
        return Err(Error::DimensionMismatch(
            "dose grid and structure mask use different grids".into(),
        ));
    }
    let doses: Vec<f64> = dose
        .dose_gy
        .iter()
        .zip(&mask.inside)
        .filter_map(|(d, &inside)| inside.then_some(*d))
        .collect();
    if doses.is_empty() {
        return Err(Error::EmptyInput("structure mask is empty"));
    }
    DvhCurve::from_doses(structure, &doses, mask.grid.voxel_volume_cc(), bin_width_gy)
}

/// Dose covering `q` % of the structure (D90 for q = 90).
pub fn dose_at_volume(dvh: &DvhCurve, q: f64, mode: DoseAtVolumeMode) -> Result<DoseAtVolume> {
    if !(q > 0.0 && q <= 100.0) {
        return Err(Error::InvalidParameter(format!(
            "volume fraction must be in (0, 100], got {q}"
        )));
    }
    let n = dvh.sorted.len();
    let dose = match mode {
        DoseAtVolumeMode::Exact => {
            // smallest voxel count m with 100·m ≥ q·n
            let need = q * n as f64 / 100.0;
            let mut m = need.ceil() as usize;
            if m > 0 && 100.0 * (m - 1) as f64 >= q * n as f64 {
                m -= 1;
            }
            dvh.sorted[n - m.clamp(1, n)]
        }
        DoseAtVolumeMode::Interpolated => {
            let s = &dvh.samples;
            let k = s.iter().rposition(|&(_, f)| f >= q).unwrap_or(0);
            if k + 1 < s.len() && s[k].1 > s[k + 1].1 {
                let (d0, f0) = s[k];
                let f1 = s[k + 1].1;
                d0 + (f0 - q) / (f0 - f1) * dvh.bin_width_gy
            } else {
                s[k].0
            }
        }
        DoseAtVolumeMode::NearestBin => {
            let s = &dvh.samples;
            let mut best = s[0];
            for &(d, f) in s {
                if (f - q).abs() < (best.1 - q).abs()
                    || ((f - q).abs() == (best.1 - q).abs() && f >= q)
                {
                    best = (d, f);
                }
            }
            best.0
        }
    };
    Ok(DoseAtVolume {
        dose_gy: dose,
        achieved_pct: dvh.fraction(dose),
    })
}

/// Exact fraction and absolute volume receiving at least `d`.
pub fn volume_at_dose(dvh: &DvhCurve, d: f64) -> VolumeAtDose {
    let fraction_pct = dvh.fraction(d);
    VolumeAtDose {
        fraction_pct,
        cc: dvh.count_at_least(d) as f64 * dvh.voxel_volume_cc,
    }
}

/// Decimal with a comma separator, at most `decimals` digits, trailing zeros trimmed.
pub fn format_decimal_comma(v: f64, decimals: usize) -> String {
    let mut s = format!("{v:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s.replace('.', ",")
}

/// `"172,8 (90,71)"`: dose with one decimal, achieved fraction with two.
pub fn format_dose_with_fraction(d: &DoseAtVolume) -> String {
    format!(
        "{} ({})",
        format_decimal_comma(d.dose_gy, 1),
        format_decimal_comma(d.achieved_pct, 2)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dvh(doses: &[f64]) -> DvhCurve {
        DvhCurve::from_doses("prostate", doses, 0.001, DEFAULT_BIN_WIDTH_GY).unwrap()
    }

    #[test]
    fn uniform_step() {
        let c = dvh(&[170.0; 50]);
        assert_eq!(c.fraction(0.0), 100.0);
        assert_eq!(c.fraction(170.0), 100.0);
        assert_eq!(c.fraction(170.0 + 1e-9), 0.0);
        for &(d, f) in &c.samples {
            assert_eq!(f, if d <= 170.0 { 100.0 } else { 0.0 });
        }
        assert_eq!(c.samples.last().unwrap().1, 0.0);
        let d90 = dose_at_volume(&c, 90.0, DoseAtVolumeMode::Exact).unwrap();
        assert_eq!(d90.dose_gy, 170.0);
        assert_eq!(d90.achieved_pct, 100.0);
        assert_eq!(volume_at_dose(&c, 160.0).fraction_pct, 100.0);
        assert!((volume_at_dose(&c, 160.0).cc - 0.05).abs() < 1e-12);
    }

    #[test]
    fn two_voxels() {
        let c = dvh(&[200.0, 100.0]);
        assert_eq!(c.fraction(150.0), 50.0);
        assert_eq!(volume_at_dose(&c, 160.0).fraction_pct, 50.0);
        assert_eq!(
            dose_at_volume(&c, 90.0, DoseAtVolumeMode::Exact)
                .unwrap()
                .dose_gy,
            100.0
        );
        assert_eq!(
            dose_at_volume(&c, 50.0, DoseAtVolumeMode::Exact)
                .unwrap()
                .dose_gy,
            200.0
        );
    }

    #[test]
    fn matches_brute_force_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let doses: Vec<f64> = (0..500).map(|_| rng.random_range(50.0..300.0)).collect();
        let c = dvh(&doses);
        for &(d, f) in &c.samples {
            let count = doses.iter().filter(|&&x| x >= d).count();
            assert_eq!(f, 100.0 * count as f64 / 500.0);
        }
        for w in c.samples.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
        for _ in 0..200 {
            let d = rng.random_range(0.0..320.0);
            let brute = 100.0 * doses.iter().filter(|&&x| x >= d).count() as f64 / 500.0;
            assert_eq!(volume_at_dose(&c, d).fraction_pct, brute);
            // the binned curve is within one bin's worth of mass of the exact count
            let lo = c.fraction(((d / c.bin_width_gy).floor() + 1.0) * c.bin_width_gy);
            let hi = c.fraction((d / c.bin_width_gy).floor() * c.bin_width_gy);
            let interp = c.fraction_interpolated(d);
            assert!(interp >= lo - 1e-9 && interp <= hi + 1e-9);
        }
    }

    #[test]
    fn exact_d90_is_maximum_dose_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.random_range(1..300);
            let doses: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(100.0..250.0f64) * 4.0).round() / 4.0)
                .collect();
            let c = dvh(&doses);
            for q in [10.0, 50.0, 90.0, 99.0, 100.0] {
                let d = dose_at_volume(&c, q, DoseAtVolumeMode::Exact).unwrap();
                assert!(c.fraction(d.dose_gy) >= q);
                // every larger voxel dose falls short of q
                let above = doses
                    .iter()
                    .filter(|&&x| x > d.dose_gy)
                    .fold(f64::INFINITY, |a, &b| a.min(b));
                if above.is_finite() {
                    assert!(c.fraction(above) < q);
                }
            }
        }
    }

    #[test]
    fn consistency_with_volume_at_dose() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let doses: Vec<f64> = (0..800).map(|_| rng.random_range(60.0..260.0)).collect();
        let c = dvh(&doses);
        for _ in 0..300 {
            let q = rng.random_range(0.5..100.0);
            for mode in [DoseAtVolumeMode::Exact, DoseAtVolumeMode::Interpolated] {
                let d = dose_at_volume(&c, q, mode).unwrap();
                let bin_mass = c
                    .samples
                    .windows(2)
                    .map(|w| w[0].1 - w[1].1)
                    .fold(0.0, f64::max);
                assert!(volume_at_dose(&c, d.dose_gy).fraction_pct >= q - bin_mass);
            }
        }
    }

    #[test]
    fn interpolated_and_nearest_bin_modes() {
        let c = dvh(&[170.0; 10]);
        // bin edges 169.6 (100 %) and 170.4 (0 %)
        let d = dose_at_volume(&c, 90.0, DoseAtVolumeMode::Interpolated).unwrap();
        assert!((d.dose_gy - 169.68).abs() < 1e-9);
        let d = dose_at_volume(&c, 90.0, DoseAtVolumeMode::NearestBin).unwrap();
        assert!((d.dose_gy - 169.6).abs() < 1e-9);
        assert_eq!(d.achieved_pct, 100.0);
    }

    #[test]
    fn rejects_bad_fraction() {
        let c = dvh(&[1.0]);
        assert!(dose_at_volume(&c, 0.0, DoseAtVolumeMode::Exact).is_err());
        assert!(dose_at_volume(&c, 100.5, DoseAtVolumeMode::Exact).is_err());
        assert!(DvhCurve::from_doses("x", &[], 1.0, 0.8).is_err());
    }

    #[test]
    fn table_style_formatting() {
        let f = |d, p| {
            format_dose_with_fraction(&DoseAtVolume {
                dose_gy: d,
                achieved_pct: p,
            })
        };
        assert_eq!(f(172.8, 90.71), "172,8 (90,71)");
        assert_eq!(f(175.0, 89.58), "175 (89,58)");
        assert_eq!(f(179.2, 90.4), "179,2 (90,4)");
        assert_eq!(f(160.0, 90.5), "160 (90,5)");
        assert_eq!(format_decimal_comma(-0.001, 2), "0");
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let c = dvh(&[1.0, 2.0]);
        c.write_csv(dir.path().join("d.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("dose_gy,fraction_pct,cc"));
        assert_eq!(lines.next(), Some("0.0000,100.000000,0.002000"));
    }
}
