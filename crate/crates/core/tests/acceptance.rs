//! Acceptance gate. Prints one PASS/FAIL line per criterion.
//!
//! A criterion is a list of sub-checks; it passes when all of them do.
//! Sub-checks listed in `KNOWN_FAILURES` are reproducible discrepancies in
//! the published tables or pinned constants (see the README). The gate
//! requires every other sub-check to pass and those to keep failing, so a
//! silent change in either direction is caught.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trusfuse::dosimetry::{
    compute_dose_grid, compute_dvh, dose_at, dose_at_volume, dose_rate_at, volume_at_dose,
    DoseAtVolumeMode, DoseGrid, DvhCurve, PairedEvaluation, Seed, SeedPlan, SourceModel,
    PRINTED_TOLERANCE,
};
use trusfuse::fusion::{composite_slice, CompositeOptions, Image2D, ScalarVolume, SliceGeometry};
use trusfuse::geometry::{
    planimetric_volume, voxelize, Contour, ContourStack, Frame, GridSpec, Point3, Structure,
};
use trusfuse::registration::{
    generate_phantom, invert_point, register, residual_surface_distance, target_registration_error,
    PhantomSpec, RegistrationConfig, TransferFunction,
};
use trusfuse::stats::{spearman_rho, wilcoxon_from_diffs, PairedTable, ZeroMethod};

/// Printed-table cells that do not follow from their raw columns, and the
/// mean-life constant pinned 0.106 h below its exact value.
const KNOWN_FAILURES: &[&str] = &[
    "table2 row 2 percent",
    "table4 row 2 diff",
    "table4 row 2 percent",
    "table4 row 3 diff",
    "table4 row 3 percent",
    "table4 row 4 diff",
    "table4 row 4 percent",
    "table4 row 5 diff",
    "table4 row 5 percent",
    "table4 row 6 diff",
    "table4 row 6 percent",
    "table4 row 7 diff",
    "table4 row 7 percent",
    "table4 row 8 diff",
    "table4 row 8 percent",
    "mean life 2056.6 h",
];

struct Check {
    name: String,
    ok: bool,
    detail: String,
}

fn check(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        ok,
        detail: detail.into(),
    }
}

struct Criterion {
    id: u32,
    title: &'static str,
    budget: Duration,
    checks: Vec<Check>,
    elapsed: Duration,
}

impl Criterion {
    fn run(
        id: u32,
        title: &'static str,
        budget: Duration,
        body: impl FnOnce() -> Vec<Check>,
    ) -> Self {
        let start = Instant::now();
        let checks = body();
        Criterion {
            id,
            title,
            budget,
            checks,
            elapsed: start.elapsed(),
        }
    }

    fn passed(&self) -> bool {
        self.elapsed <= self.budget && self.checks.iter().all(|c| c.ok)
    }

    fn report(&self) {
        let failed: Vec<&Check> = self.checks.iter().filter(|c| !c.ok).collect();
        println!(
            "{} criterion {} {}: {}/{} checks, {:.2?} (budget {:?})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.checks.len() - failed.len(),
            self.checks.len(),
            self.elapsed,
            self.budget
        );
        for c in &failed {
            println!("    failed: {}: {}", c.name, c.detail);
        }
    }
}

fn table(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/tables")
        .join(name)
}

fn tables() -> [(String, PairedTable); 3] {
    ["table2", "table3", "table4"].map(|t| {
        (
            t.to_string(),
            PairedTable::read(table(&format!("{t}.csv"))).unwrap(),
        )
    })
}

fn criterion_tables() -> Vec<Check> {
    let mut out = Vec::new();
    for (name, t) in tables() {
        for r in &t.rows {
            let e = PairedEvaluation::new(r.patient.clone(), r.us, r.mri_us);
            let (d, p) = (r.diff.unwrap(), r.percent.unwrap());
            out.push(check(
                format!("{name} row {} diff", r.patient),
                (e.diff - d).abs() <= PRINTED_TOLERANCE,
                format!("computed {:.4}, printed {d}", e.diff),
            ));
            out.push(check(
                format!("{name} row {} percent", r.patient),
                (e.percent - p).abs() <= PRINTED_TOLERANCE,
                format!("computed {:.4}, printed {p}", e.percent),
            ));
        }
    }
    let e = PairedEvaluation::new("3", 44.21, 50.53);
    out.push(check(
        "worked example 44.21 -> 50.53",
        e.consistent_with(6.32, 14.29, PRINTED_TOLERANCE),
        format!("{:+.4} cc, {:+.4} %", e.diff, e.percent),
    ));
    out
}

/// Two-sided exact p by enumerating every sign vector.
fn enumerate_p(diffs: &[f64]) -> f64 {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = trusfuse::stats::average_ranks(&abs);
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = nz
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let w = w_plus.min(total - w_plus);
    let n = nz.len();
    let hits = (0u32..1 << n)
        .filter(|mask| {
            (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| ranks[i])
                .sum::<f64>()
                <= w + 1e-9
        })
        .count();
    (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0)
}

fn criterion_wilcoxon() -> Vec<Check> {
    let expected = [
        ("table2", 8, Some(3.0), 0.0391),
        ("table3", 8, None, 0.0156),
        ("table4", 7, None, 0.0156),
    ];
    let mut out = Vec::new();
    for ((name, t), (_, n_eff, w, p)) in tables().into_iter().zip(expected) {
        let diffs = t.column("diff").unwrap();
        let r = wilcoxon_from_diffs(&diffs, ZeroMethod::Drop).unwrap();
        out.push(check(
            format!("{name} n_eff"),
            r.n_effective == n_eff,
            format!("{}", r.n_effective),
        ));
        if let Some(w) = w {
            out.push(check(format!("{name} W"), r.w == w, format!("{}", r.w)));
        }
        out.push(check(
            format!("{name} p"),
            (r.p_value - p).abs() < 1e-4,
            format!("{:.6}", r.p_value),
        ));
        let oracle = enumerate_p(&diffs);
        out.push(check(
            format!("{name} p equals enumeration"),
            r.p_value == oracle,
            format!("{} vs {oracle}", r.p_value),
        ));
        out.push(check(
            format!("{name} significant at 0.05"),
            r.significant_at_0_05,
            format!("p {:.4}", r.p_value),
        ));
    }
    out
}

fn criterion_spearman() -> Vec<Check> {
    let [(_, t2), (_, t3), _] = tables();
    let r = spearman_rho(&t2.column("diff").unwrap(), &t3.column("percent").unwrap()).unwrap();
    let truncated = (r.rho.abs() * 1000.0).floor() / 1000.0;
    vec![
        check(
            "rho",
            (r.rho + 0.9048).abs() <= 0.001,
            format!("{:.5}", r.rho),
        ),
        check(
            "|rho| printed as 0.904",
            truncated == 0.904,
            format!("{truncated}"),
        ),
        check(
            "above 0.88 at n=8",
            r.significant_0_01 == Some(true),
            format!("{:?}", r.threshold_0_01),
        ),
    ]
}

fn criterion_registration() -> Vec<Check> {
    let cfg = RegistrationConfig::default();
    let mut out = Vec::new();
    let (mut res_sum, mut tre_sum) = (0.0, 0.0);
    let mut worse = Vec::new();
    for seed in 0..20 {
        let ph = generate_phantom(&PhantomSpec::new(seed, 3.0, 0.3)).unwrap();
        let (rigid, elastic) = register(&ph.source, &ph.target, &cfg).unwrap();
        let rigid_f = TransferFunction::rigid_only(rigid.transform);
        let r_rigid = residual_surface_distance(&rigid_f, &ph.source, &ph.target)
            .unwrap()
            .mean;
        let r = residual_surface_distance(&elastic.transfer, &ph.source, &ph.target)
            .unwrap()
            .mean;
        let tre = target_registration_error(
            &elastic.transfer,
            &ph.source_landmarks,
            &ph.target_landmarks,
        )
        .unwrap()
        .mean;
        res_sum += r;
        tre_sum += tre;
        if r > r_rigid {
            worse.push(seed);
        }
    }
    out.push(check(
        "mean residual <= 1.5 mm",
        res_sum / 20.0 <= 1.5,
        format!("{:.3} mm", res_sum / 20.0),
    ));
    out.push(check(
        "mean TRE <= 2.5 mm",
        tre_sum / 20.0 <= 2.5,
        format!("{:.3} mm", tre_sum / 20.0),
    ));
    out.push(check(
        "elastic <= rigid residual on every phantom",
        worse.is_empty(),
        format!("worse: {worse:?}"),
    ));

    let stiff = RegistrationConfig {
        lambda: 1e6,
        ..Default::default()
    };
    let mut max_dev: f64 = 0.0;
    for seed in 0..3 {
        let ph = generate_phantom(&PhantomSpec::new(seed, 3.0, 0.3)).unwrap();
        let (rigid, elastic) = register(&ph.source, &ph.target, &stiff).unwrap();
        let rigid_f = TransferFunction::rigid_only(rigid.transform);
        for p in &ph.source.points {
            max_dev = max_dev.max((elastic.transfer.apply(p) - rigid_f.apply(p)).norm());
        }
    }
    out.push(check(
        "lambda 1e6 stays within 0.05 mm of rigid",
        max_dev <= 0.05,
        format!("{max_dev:.2e} mm"),
    ));
    out
}

fn dvh_oracle(doses: &[f64], d: f64) -> f64 {
    100.0 * doses.iter().filter(|&&x| x >= d).count() as f64 / doses.len() as f64
}

fn criterion_dosimetry() -> Vec<Check> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let grid = GridSpec::new([12, 10, 8], [2.0, 2.0, 2.5], [-11.0, -9.0, -8.75]).unwrap();

    // superposition: the single-seed rates summed in seed order equal the plan rate
    let seeds: Vec<Seed> = (0..6)
        .map(|_| {
            Seed::new(
                Point3::new(
                    rng.random_range(-8.0..8.0),
                    rng.random_range(-8.0..8.0),
                    rng.random_range(-6.0..6.0),
                ),
                rng.random_range(0.3..0.9),
            )
        })
        .collect();
    let plan = SeedPlan {
        plan_id: "superposition".into(),
        source: SourceModel::default(),
        seeds: seeds.clone(),
    };
    let single = |s: &Seed| SeedPlan {
        seeds: vec![*s],
        ..plan.clone()
    };
    let mut exact = true;
    for i in 0..grid.len() {
        let p = grid.center_of(i);
        let summed = seeds
            .iter()
            .fold(0.0, |acc, s| acc + dose_rate_at(&single(s), &p));
        exact &= summed == dose_rate_at(&plan, &p);
    }
    out.push(check(
        "superposition exact",
        exact,
        "seed-order sum of single-seed rates",
    ));
    let whole = compute_dose_grid(&plan, &grid).unwrap();
    let mut summed = vec![0.0; grid.len()];
    for s in &seeds {
        for (acc, d) in summed
            .iter_mut()
            .zip(compute_dose_grid(&single(s), &grid).unwrap().dose_gy)
        {
            *acc += d;
        }
    }
    let worst = summed
        .iter()
        .zip(&whole.dose_gy)
        .map(|(a, b)| (a - b).abs() / b)
        .fold(0.0, f64::max);
    out.push(check(
        "superposition of dose grids",
        worst <= 1e-12,
        format!("worst relative {worst:.1e}"),
    ));

    // uniform dose
    let uniform = DoseGrid {
        grid: grid.clone(),
        dose_gy: vec![170.0; grid.len()],
    };
    let all = trusfuse::geometry::StructureMask {
        grid: grid.clone(),
        inside: vec![true; grid.len()],
    };
    let dvh = compute_dvh(&uniform, &all, "uniform", 0.8).unwrap();
    let step = dvh
        .samples
        .iter()
        .all(|&(d, f)| if d <= 170.0 { f == 100.0 } else { f == 0.0 });
    out.push(check(
        "uniform DVH is a step at 170 Gy",
        step,
        format!("{} samples", dvh.samples.len()),
    ));
    let d90 = dose_at_volume(&dvh, 90.0, DoseAtVolumeMode::Exact)
        .unwrap()
        .dose_gy;
    out.push(check(
        "D90 of uniform 170 Gy",
        d90 == 170.0,
        format!("{d90}"),
    ));

    // inverse square with g = phi = 1
    let unit = SeedPlan {
        plan_id: "unit".into(),
        source: SourceModel::unit(),
        seeds: vec![Seed::new(Point3::origin(), 1.0)],
    };
    let ratio =
        dose_at(&unit, &Point3::new(10.0, 0.0, 0.0)) / dose_at(&unit, &Point3::new(0.0, 20.0, 0.0));
    out.push(check(
        "inverse square 10/20 mm",
        (ratio - 4.0).abs() <= 1e-9,
        format!("{ratio:.12}"),
    ));

    // mean life against independent arithmetic
    let tau = SourceModel::default().mean_life_hours();
    let independent = 59.4 * 24.0 / 2f64.ln();
    out.push(check(
        "mean life matches arithmetic",
        (tau - independent).abs() < 1e-9,
        format!("{tau:.4} h"),
    ));
    out.push(check(
        "mean life 2056.6 h",
        (tau - 2056.6).abs() <= 0.1,
        format!("{tau:.4} h vs 2056.6 ± 0.1"),
    ));

    // DVH against counting on random grids
    let mut mismatches = 0;
    for g in 0..50 {
        let n = rng.random_range(20..400);
        let doses: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0.0..300.0f64).floor() * 0.5)
            .collect();
        let bw = [0.5, 0.8, 1.0, 2.5][g % 4];
        let dvh = DvhCurve::from_doses("random", &doses, 0.001, bw).unwrap();
        for &(d, f) in &dvh.samples {
            if f != dvh_oracle(&doses, d) {
                mismatches += 1;
            }
        }
        for _ in 0..20 {
            let d = rng.random_range(0.0..160.0);
            if dvh.fraction(d) != dvh_oracle(&doses, d)
                || volume_at_dose(&dvh, d).fraction_pct != dvh_oracle(&doses, d)
            {
                mismatches += 1;
            }
        }
    }
    out.push(check(
        "DVH equals counting on 50 grids",
        mismatches == 0,
        format!("{mismatches} mismatches"),
    ));
    out
}

fn disc(n: i64, z: f64, r: f64) -> Contour {
    let v = (0..48)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / 48.0;
            [r * t.cos(), r * t.sin()]
        })
        .collect();
    Contour::new(n, z, v).unwrap()
}

fn criterion_direction() -> Vec<Check> {
    let step = 2.5;
    let us_slices: Vec<i64> = (-4..=4).collect();
    let us = ContourStack::new(
        Structure::Prostate,
        Frame::Trus,
        step,
        us_slices
            .iter()
            .map(|&k| disc(k, k as f64 * step, 16.0))
            .collect(),
    )
    .unwrap();
    // seeds fill the US prostate only
    let mut seeds = Vec::new();
    for z in [-7.5, -2.5, 2.5, 7.5] {
        for (x, y) in [
            (0.0, 8.0),
            (0.0, -8.0),
            (8.0, 0.0),
            (-8.0, 0.0),
            (6.0, 6.0),
            (-6.0, -6.0),
            (6.0, -6.0),
            (-6.0, 6.0),
        ] {
            seeds.push(Seed::new(Point3::new(x, y, z), 1.0));
        }
    }
    let unit = SeedPlan {
        plan_id: "direction".into(),
        source: SourceModel::default(),
        seeds,
    };
    let grid = GridSpec::covering(
        Point3::new(-20.0, -20.0, -30.0),
        Point3::new(20.0, 20.0, 30.0),
        1.0,
    )
    .unwrap();
    let dose = compute_dose_grid(&unit, &grid).unwrap();
    let us_mask = voxelize(&us, &grid).unwrap();
    let us_d90 = dose_at_volume(
        &compute_dvh(&dose, &us_mask, "us", 0.8).unwrap(),
        90.0,
        DoseAtVolumeMode::Exact,
    )
    .unwrap()
    .dose_gy;
    let plan = unit.scaled(170.0 / us_d90);
    let dose = compute_dose_grid(&plan, &grid).unwrap();

    // apex and base slices well beyond the 160 Gy isodose
    let mut fused_contours: Vec<Contour> = us_slices
        .iter()
        .map(|&k| disc(k, k as f64 * step, 16.0))
        .collect();
    for k in [-11, -10, -9, 9, 10, 11] {
        fused_contours.push(disc(k, k as f64 * step, 10.0));
    }
    let fused = ContourStack::new(Structure::Prostate, Frame::Trus, step, fused_contours).unwrap();
    let fused_mask = voxelize(&fused, &grid).unwrap();
    let added_max = dose
        .dose_gy
        .iter()
        .zip(fused_mask.inside.iter().zip(&us_mask.inside))
        .filter(|(_, (f, u))| **f && !**u)
        .map(|(d, _)| *d)
        .fold(0.0, f64::max);

    let us_dvh = compute_dvh(&dose, &us_mask, "us", 0.8).unwrap();
    let fused_dvh = compute_dvh(&dose, &fused_mask, "fused", 0.8).unwrap();
    let (vu, vf) = (planimetric_volume(&us), planimetric_volume(&fused));
    let (fu, ff) = (
        volume_at_dose(&us_dvh, 160.0).fraction_pct,
        volume_at_dose(&fused_dvh, 160.0).fraction_pct,
    );
    vec![
        check(
            "added slices lie outside 160 Gy",
            added_max < 160.0,
            format!("max added dose {added_max:.1} Gy"),
        ),
        check(
            "MRI+US volume > US volume",
            vf > vu,
            format!("{vf:.2} vs {vu:.2} cc"),
        ),
        check(
            "MRI+US V160 < US V160",
            ff < fu,
            format!("{ff:.2} vs {fu:.2} %"),
        ),
    ]
}

fn criterion_fusion() -> Vec<Check> {
    let mut out = Vec::new();
    let geom = SliceGeometry {
        du: 0.5,
        dv: 0.5,
        width: 96,
        height: 80,
        origin: [-24.0, -20.0, -10.0],
        slice_step: 2.5,
    };
    let grid = geom.volume_grid(9).unwrap();
    let vol = ScalarVolume::from_fn(grid, |p| {
        (500.0 + 40.0 * p.x - 13.0 * p.y + 7.0 * p.z).round()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut exact = 0;
    for _ in 0..10 {
        let k = rng.random_range(0..9usize);
        let cursor = [
            rng.random_range(0..=geom.width),
            rng.random_range(0..=geom.height),
        ];
        let n = geom.width * geom.height;
        let slice = Image2D::new(
            geom.width,
            geom.height,
            vol.values[k * n..(k + 1) * n].to_vec(),
        )
        .unwrap();
        let img = composite_slice(
            &slice,
            &geom,
            k as i64,
            &vol,
            &TransferFunction::identity(),
            cursor,
            &CompositeOptions::default(),
        )
        .unwrap();
        if img
            .image
            .pixels
            .iter()
            .zip(&slice.pixels)
            .all(|(a, b)| a.to_bits() == b.to_bits())
        {
            exact += 1;
        }
    }
    out.push(check(
        "self-fusion bit-exact for 10 cursors",
        exact == 10,
        format!("{exact}/10"),
    ));

    let ph = generate_phantom(&PhantomSpec::new(5, 3.0, 0.3)).unwrap();
    let (_, res) = register(&ph.source, &ph.target, &RegistrationConfig::default()).unwrap();
    let f = res.transfer;
    let semi = ph.truth.semi_axes;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..1000 {
        let p = Point3::new(
            rng.random_range(-semi[0]..semi[0]),
            rng.random_range(-semi[1]..semi[1]),
            rng.random_range(-semi[2]..semi[2]),
        );
        let q = f.apply(&p);
        match invert_point(&f, &q, 0.01) {
            Ok(back) => worst = worst.max((f.apply(&back) - q).norm()),
            Err(_) => failures += 1,
        }
    }
    out.push(check(
        "inverse round trip <= 0.01 mm on 1000 points",
        failures == 0 && worst <= 0.01,
        format!("worst {worst:.2e} mm, {failures} failed"),
    ));
    out
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion::run(1, "table reproduction", secs(1), criterion_tables),
        Criterion::run(2, "Wilcoxon signed-rank", secs(1), criterion_wilcoxon),
        Criterion::run(3, "Spearman rank correlation", secs(1), criterion_spearman),
        Criterion::run(
            4,
            "registration on 20 phantoms",
            secs(300),
            criterion_registration,
        ),
        Criterion::run(5, "dosimetry properties", secs(30), criterion_dosimetry),
        Criterion::run(
            6,
            "fused volume and V160 direction",
            secs(60),
            criterion_direction,
        ),
        Criterion::run(
            7,
            "fusion identity and inversion",
            secs(30),
            criterion_fusion,
        ),
    ];
    for c in &criteria {
        c.report();
    }
    let mut unexpected = Vec::new();
    for c in &criteria {
        if c.elapsed > c.budget {
            unexpected.push(format!("criterion {} over budget", c.id));
        }
        for k in &c.checks {
            let known = KNOWN_FAILURES.contains(&k.name.as_str());
            if k.ok == known {
                unexpected.push(format!(
                    "criterion {}: {} {} ({})",
                    c.id,
                    k.name,
                    if k.ok { "now passes" } else { "fails" },
                    k.detail
                ));
            }
        }
    }
    let seen: Vec<&str> = criteria
        .iter()
        .flat_map(|c| c.checks.iter().map(|k| k.name.as_str()))
        .collect();
    for name in KNOWN_FAILURES {
        if !seen.contains(name) {
            unexpected.push(format!("known failure {name} is not checked"));
        }
    }
    assert!(
        unexpected.is_empty(),
        "unexpected outcomes:\n{}",
        unexpected.join("\n")
    );
}
