use super::*;
use crate::geometry::Structure;
use crate::registration::TransferFunction;

fn data_table(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/tables")
        .join(name)
}

#[test]
fn phantom_case_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let case =
        write_phantom_case(&dir.path().join("case"), 7, &PhantomCaseConfig::default()).unwrap();
    assert!((case.us_d90_gy - 170.0).abs() < 1e-9);
    let loaded = PatientCase::load(&case.manifest).unwrap();
    let out = OutputLayout::new(dir.path().join("out"));
    let cfg = PipelineConfig::default();

    let (f, reg) = cmd_register(&loaded, &cfg, &out).unwrap();
    eprintln!("{reg:#?}");
    assert!(reg.residual.mean <= 1.5, "{}", reg.residual.mean);
    assert!(reg.residual.mean <= reg.residual_rigid.mean);
    assert!(out.root.join(&reg.transfer_file).exists());
    let back = TransferFunction::read_json(out.root.join(&reg.transfer_file)).unwrap();
    assert_eq!(back, f);

    let report = cmd_evaluate(&loaded, &f, Some(reg), &cfg, &out).unwrap();
    eprintln!("{:#?}", report.comparison);
    eprintln!("{:#?}", report.checks);
    assert!(report.ok(), "{:?}", report.failures);
    let cmp = report.comparison.as_ref().unwrap();
    assert!((cmp.d90_gy.us - 170.0).abs() < 1e-9);
    assert_eq!(report.dvh_files.len(), 4);
    for f in &report.dvh_files {
        assert!(out.root.join(f).exists());
    }
    assert!(report.constraints_us.is_some() && report.constraints_mri_us.is_some());
    assert!(out.reports().join("phantom-7_evaluate.json").exists());
}

#[test]
fn identity_case_has_zero_diffs() {
    let dir = tempfile::tempdir().unwrap();
    let case =
        write_phantom_case(&dir.path().join("case"), 3, &PhantomCaseConfig::default()).unwrap();
    let mut loaded = PatientCase::load(&case.manifest).unwrap();
    // MRI prostate = US prostate relabelled
    let mut mri = loaded.us[&Structure::Prostate].clone();
    mri.frame = crate::geometry::Frame::Mri;
    loaded.mri_structures.insert(Structure::Prostate, mri);
    let out = OutputLayout::new(dir.path().join("out"));
    let cfg = PipelineConfig::default();
    let (_, reg) = cmd_register(&loaded, &cfg, &out).unwrap();
    assert!(reg.residual.mean < 0.05, "{}", reg.residual.mean);

    let report = cmd_evaluate(&loaded, &TransferFunction::identity(), None, &cfg, &out).unwrap();
    assert!(report.ok(), "{:?}", report.failures);
    let cmp = report.comparison.unwrap();
    // mapped vertices are re-ordered, so the shoelace sum may differ in the last bits
    assert!(cmp.volume_cc.diff.abs() < 1e-9);
    assert_eq!(cmp.v160_pct.diff, 0.0);
    assert_eq!(cmp.d90_gy.diff, 0.0);
    let a = std::fs::read(out.root.join("dvh/phantom-3_us_prostate.csv")).unwrap();
    let b = std::fs::read(out.root.join("dvh/phantom-3_mri_us_prostate.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fuse_writes_composites() {
    let dir = tempfile::tempdir().unwrap();
    let case =
        write_phantom_case(&dir.path().join("case"), 5, &PhantomCaseConfig::default()).unwrap();
    let loaded = PatientCase::load(&case.manifest).unwrap();
    let out = OutputLayout::new(dir.path().join("out"));
    let mut cfg = PipelineConfig::default();
    cfg.fusion.slices = vec![0, 5];
    cfg.fusion.cursors = vec![[10, 20], [96, 96]];
    let shifted =
        TransferFunction::rigid_only(crate::registration::RigidTransform::from_translation(
            crate::geometry::Vector3::new(0.0, 0.0, 200.0),
        ));
    let far = cmd_fuse(&loaded, &shifted, &cfg, &out).unwrap();
    assert_eq!(far.images.len(), 4);
    // every MRI-quadrant pixel leaves the volume
    let w = loaded.manifest.slice_geometry.width;
    let h = loaded.manifest.slice_geometry.height;
    let mri_px = |c: [usize; 2]| c[0] * (h - c[1]) + (w - c[0]) * c[1];
    for img in &far.images {
        assert_eq!(img.out_of_bounds, mri_px(img.cursor));
        assert!(out.root.join(&img.file).exists());
    }
    let near = cmd_fuse(&loaded, &TransferFunction::identity(), &cfg, &out).unwrap();
    assert!(near.out_of_bounds_total < far.out_of_bounds_total);
}

#[test]
fn missing_manifest_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let case =
        write_phantom_case(&dir.path().join("case"), 1, &PhantomCaseConfig::default()).unwrap();
    let text = std::fs::read_to_string(&case.manifest).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("plan");
    std::fs::write(&case.manifest, v.to_string()).unwrap();
    let err = PatientCase::load(&case.manifest).unwrap_err();
    assert!(err.to_string().contains("`plan`"), "{err}");
    assert!(!err.is_numerical());
}

#[test]
fn stats_on_shipped_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = OutputLayout::new(dir.path());
    let tables = ["table2.csv", "table3.csv", "table4.csv"].map(data_table);
    let r = cmd_stats(&tables, &PipelineConfig::default(), &out).unwrap();
    let p: Vec<f64> = r.tables.iter().map(|t| t.wilcoxon.p_value).collect();
    assert_eq!(p, vec![10.0 / 256.0, 4.0 / 256.0, 2.0 / 128.0]);
    assert!(r.tables.iter().all(|t| t.wilcoxon.significant_at_0_05));
    assert_eq!(r.tables[2].wilcoxon.n_effective, 7);
    let rho = r.spearman.unwrap().result.rho;
    assert!((rho + 0.9048).abs() < 1e-3);
    // Table 2 summary rows: mean diff 2.25, sd 2.45
    let t2 = &r.tables[0];
    for c in t2.summary_checks.iter().filter(|c| c.column == "diff") {
        assert!(c.ok, "{c:?}");
    }
    assert!(dir.path().join("reports/stats.json").exists());
}

#[test]
fn commands_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_phantom_case(&dir.path().join("a"), 11, &PhantomCaseConfig::default()).unwrap();
    let b = write_phantom_case(&dir.path().join("b"), 11, &PhantomCaseConfig::default()).unwrap();
    for name in [
        "case.json",
        "plan.json",
        "volumes/mri.raw",
        "contours/mri_prostate.json",
    ] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(name)).unwrap(),
            std::fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }
    let cfg = PipelineConfig::default();
    let la = PatientCase::load(&a.manifest).unwrap();
    let lb = PatientCase::load(&b.manifest).unwrap();
    let oa = OutputLayout::new(dir.path().join("oa"));
    let ob = OutputLayout::new(dir.path().join("ob"));
    let (fa, ra) = cmd_register(&la, &cfg, &oa).unwrap();
    let (fb, rb) = cmd_register(&lb, &cfg, &ob).unwrap();
    cmd_evaluate(&la, &fa, Some(ra), &cfg, &oa).unwrap();
    cmd_evaluate(&lb, &fb, Some(rb), &cfg, &ob).unwrap();
    for name in [
        "reports/phantom-11_register.json",
        "reports/phantom-11_transfer.json",
        "reports/phantom-11_evaluate.json",
        "dvh/phantom-11_mri_us_prostate.csv",
    ] {
        assert_eq!(
            std::fs::read(oa.root.join(name)).unwrap(),
            std::fs::read(ob.root.join(name)).unwrap(),
            "{name}"
        );
    }
}
