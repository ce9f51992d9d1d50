use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::source::SourceModel;
use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Air-kerma strength S_K in U.
    pub sk: f64,
}

impl Seed {
    pub fn new(position: Point3, sk: f64) -> Self {
        Seed {
            x: position.x,
            y: position.y,
            z: position.z,
            sk,
        }
    }

    pub fn position(&self) -> Point3 {
        Point3::new(self.x, self.y, self.z)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub plan_id: String,
    pub source: SourceModel,
    pub seeds: Vec<Seed>,
}

impl SeedPlan {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::EmptyInput("seed plan has no seeds"));
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if ![s.x, s.y, s.z].iter().all(|c| c.is_finite()) || !(s.sk > 0.0) || !s.sk.is_finite()
            {
                return Err(Error::InvalidParameter(format!(
                    "seed {i} is invalid: {s:?}"
                )));
            }
        }
        Ok(())
    }

    /// Copy with every air-kerma strength multiplied by `k`.
    pub fn scaled(&self, k: f64) -> SeedPlan {
        let mut p = self.clone();
        for s in &mut p.seeds {
            s.sk *= k;
        }
        p
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: SeedPlan =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("seed plan", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Cumulative dose in Gy at every voxel centre.
#[derive(Clone, Debug, PartialEq)]
pub struct DoseGrid {
    pub grid: GridSpec,
    pub dose_gy: Vec<f64>,
}

impl DoseGrid {
    pub fn max(&self) -> f64 {
        self.dose_gy.iter().copied().fold(0.0, f64::max)
    }
}

/// Initial dose rate (cGy/h) at `p`, seeds summed in index order.
pub fn dose_rate_at(plan: &SeedPlan, p: &Point3) -> f64 {
    let mut rate = 0.0;
    for s in &plan.seeds {
        rate += s.sk * plan.source.rate_per_unit((p - s.position()).norm());
    }
    rate
}

/// Permanent-implant dose in Gy at `p`: initial rate × mean life.
pub fn dose_at(plan: &SeedPlan, p: &Point3) -> f64 {
    dose_rate_at(plan, p) * plan.source.mean_life_hours() / 100.0
}

pub fn compute_dose_grid(plan: &SeedPlan, grid: &GridSpec) -> Result<DoseGrid> {
    plan.validate()?;
    grid.validate()?;
    let dose_gy = (0..grid.len())
        .into_par_iter()
        .map(|i| dose_at(plan, &grid.center_of(i)))
        .collect();
    Ok(DoseGrid {
        grid: grid.clone(),
        dose_gy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vector3;
    use crate::registration::RigidTransform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_plan(seeds: Vec<Seed>) -> SeedPlan {
        SeedPlan {
            plan_id: "t".into(),
            source: SourceModel::unit(),
            seeds,
        }
    }

    fn random_plan(seed: u64, n: usize) -> SeedPlan {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SeedPlan {
            plan_id: format!("r{seed}"),
            source: SourceModel::default(),
            seeds: (0..n)
                .map(|_| {
                    Seed::new(
                        Point3::new(
                            rng.random_range(-15.0..15.0),
                            rng.random_range(-15.0..15.0),
                            rng.random_range(-15.0..15.0),
                        ),
                        rng.random_range(0.3..0.6),
                    )
                })
                .collect(),
        }
    }

    fn grid() -> GridSpec {
        GridSpec::new([16, 14, 12], [2.0, 2.0, 2.5], [-15.0, -13.0, -13.75]).unwrap()
    }

    #[test]
    fn inverse_square_and_mean_life() {
        let plan = unit_plan(vec![Seed::new(Point3::origin(), 1.0)]);
        assert_eq!(dose_rate_at(&plan, &Point3::new(10.0, 0.0, 0.0)), 1.0);
        assert_eq!(dose_rate_at(&plan, &Point3::new(0.0, 20.0, 0.0)), 0.25);
        let tau = 59.4 * 24.0 / std::f64::consts::LN_2;
        let d = dose_at(&plan, &Point3::new(0.0, 0.0, 10.0));
        assert!((d - tau / 100.0).abs() < 1e-12);
        assert!((d - 20.57).abs() < 0.005);
        assert!(dose_at(&plan, &Point3::origin()).is_finite());
    }

    #[test]
    fn coincident_seeds_double_exactly() {
        let g = grid();
        let p = Point3::new(1.3, -2.0, 0.7);
        let one = compute_dose_grid(&unit_plan(vec![Seed::new(p, 0.7)]), &g).unwrap();
        let two =
            compute_dose_grid(&unit_plan(vec![Seed::new(p, 0.7), Seed::new(p, 0.7)]), &g).unwrap();
        for (a, b) in one.dose_gy.iter().zip(&two.dose_gy) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn superposition() {
        let g = grid();
        let a = random_plan(1, 5);
        let b = random_plan(2, 7);
        let mut union = a.clone();
        union.seeds.extend(b.seeds.iter().copied());
        let da = compute_dose_grid(&a, &g).unwrap();
        let db = compute_dose_grid(&b, &g).unwrap();
        let du = compute_dose_grid(&union, &g).unwrap();
        for i in 0..g.len() {
            let sum = da.dose_gy[i] + db.dose_gy[i];
            assert!((du.dose_gy[i] - sum).abs() <= 1e-12 * sum);
        }
    }

    #[test]
    fn strength_scaling() {
        let g = grid();
        let p = random_plan(3, 6);
        let base = compute_dose_grid(&p, &g).unwrap();
        let doubled = compute_dose_grid(&p.scaled(2.0), &g).unwrap();
        for (a, b) in base.dose_gy.iter().zip(&doubled.dose_gy) {
            assert_eq!(2.0 * a, *b);
        }
        let k = 1.37;
        let scaled = compute_dose_grid(&p.scaled(k), &g).unwrap();
        for (a, b) in base.dose_gy.iter().zip(&scaled.dose_gy) {
            assert!((k * a - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn rigid_motion_invariance() {
        let plan = random_plan(4, 4);
        let t =
            RigidTransform::from_params(Vector3::new(0.3, -0.2, 0.5), Vector3::new(4.0, -7.0, 2.0));
        let mut moved = plan.clone();
        for s in &mut moved.seeds {
            *s = Seed::new(t.apply(&s.position()), s.sk);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = Point3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            );
            let (a, b) = (dose_at(&plan, &p), dose_at(&moved, &t.apply(&p)));
            assert!((a - b).abs() <= 1e-9 * a);
        }
    }

    #[test]
    fn plan_json_schema() {
        let plan = unit_plan(vec![Seed::new(Point3::new(1.0, 2.0, 3.0), 0.5)]);
        let v: serde_json::Value = serde_json::to_value(&plan).unwrap();
        assert_eq!(v["plan_id"], "t");
        assert_eq!(v["seeds"][0]["sk"], 0.5);
        assert_eq!(v["source"]["lambda"], 1.0);
        assert!(v["source"]["g_table"].is_array());
        let text = r#"{"plan_id":"p","source":{"lambda":0.965,"half_life_days":59.4,
            "g_table":[[5,1.07],[10,1.0],[20,0.81]],"phi_table":[[0,1.0]]},
            "seeds":[{"x":0,"y":0,"z":0,"sk":0.4}]}"#;
        let p: SeedPlan = serde_json::from_str(text).unwrap();
        p.validate().unwrap();
        assert_eq!(p.source.r_min_mm, 0.5);
        let empty = SeedPlan { seeds: vec![], ..p };
        assert!(empty.validate().is_err());
    }
}
