use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_RADIAL_DOSE: &str = include_str!("../../data/i125_radial_dose.csv");

pub const I125_HALF_LIFE_DAYS: f64 = 59.4;
/// Default dose-rate constant, cGy·h⁻¹·U⁻¹.
pub const DEFAULT_LAMBDA: f64 = 0.965;
pub const REFERENCE_DISTANCE_MM: f64 = 10.0;
pub const DEFAULT_R_MIN_MM: f64 = 0.5;

/// Piecewise-linear table `(r mm, value)`, clamped outside its range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RadialTable(pub Vec<[f64; 2]>);

impl RadialTable {
    pub fn constant(v: f64) -> Self {
        RadialTable(vec![[0.0, v]])
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::InvalidParameter(format!("{name} table is empty")));
        }
        if self
            .0
            .iter()
            .any(|e| !e[0].is_finite() || !e[1].is_finite() || e[1] < 0.0)
        {
            return Err(Error::InvalidParameter(format!(
                "{name} table has invalid entries"
            )));
        }
        if self.0.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::InvalidParameter(format!(
                "{name} table must be strictly increasing in r"
            )));
        }
        Ok(())
    }

    pub fn eval(&self, r: f64) -> f64 {
        let t = &self.0;
        let k = t.partition_point(|e| e[0] <= r);
        if k == 0 {
            return t[0][1];
        }
        if k == t.len() {
            return t[t.len() - 1][1];
        }
        let (a, b) = (t[k - 1], t[k]);
        a[1] + (b[1] - a[1]) * (r - a[0]) / (b[0] - a[0])
    }
}

/// Shipped I-125 radial dose function (r in mm).
pub fn default_radial_dose() -> RadialTable {
    let mut rdr = csv::Reader::from_reader(DEFAULT_RADIAL_DOSE.as_bytes());
    let rows = rdr
        .deserialize::<(f64, f64)>()
        .map(|r| r.map(|(a, b)| [a, b]))
        .collect::<std::result::Result<Vec<_>, _>>()
        .expect("bundled radial dose table parses");
    RadialTable(rows)
}

/// Point-source dose model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceModel {
    #[serde(default = "default_label")]
    pub label: String,
    /// Dose-rate constant Λ, cGy·h⁻¹·U⁻¹.
    pub lambda: f64,
    pub half_life_days: f64,
    pub g_table: RadialTable,
    pub phi_table: RadialTable,
    #[serde(default = "default_r0")]
    pub r0_mm: f64,
    #[serde(default = "default_r_min")]
    pub r_min_mm: f64,
}

fn default_label() -> String {
    "I-125".into()
}
fn default_r0() -> f64 {
    REFERENCE_DISTANCE_MM
}
fn default_r_min() -> f64 {
    DEFAULT_R_MIN_MM
}

impl Default for SourceModel {
    fn default() -> Self {
        SourceModel {
            label: default_label(),
            lambda: DEFAULT_LAMBDA,
            half_life_days: I125_HALF_LIFE_DAYS,
            g_table: default_radial_dose(),
            phi_table: RadialTable::constant(1.0),
            r0_mm: REFERENCE_DISTANCE_MM,
            r_min_mm: DEFAULT_R_MIN_MM,
        }
    }
}

impl SourceModel {
    /// Λ = 1, g ≡ 1, φ ≡ 1: a bare inverse-square kernel.
    pub fn unit() -> Self {
        SourceModel {
            lambda: 1.0,
            g_table: RadialTable::constant(1.0),
            phi_table: RadialTable::constant(1.0),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("half_life_days", self.half_life_days),
            ("r0_mm", self.r0_mm),
            ("r_min_mm", self.r_min_mm),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "source {name} must be positive, got {v}"
                )));
            }
        }
        self.g_table.validate("g")?;
        self.phi_table.validate("phi")?;
        if (self.g_table.eval(self.r0_mm) - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "g(r0) must be 1, got {}",
                self.g_table.eval(self.r0_mm)
            )));
        }
        Ok(())
    }

    /// Mean life τ = T½ / ln 2 in hours.
    pub fn mean_life_hours(&self) -> f64 {
        self.half_life_days * 24.0 / std::f64::consts::LN_2
    }

    /// Initial dose rate per unit air-kerma strength at distance `r` (cGy·h⁻¹·U⁻¹).
    pub fn rate_per_unit(&self, r_mm: f64) -> f64 {
        let r = r_mm.max(self.r_min_mm);
        let ratio = self.r0_mm / r;
        self.lambda * ratio * ratio * self.g_table.eval(r) * self.phi_table.eval(r)
    }
}
