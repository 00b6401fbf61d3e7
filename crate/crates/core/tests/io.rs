use fusedreg::bootstrap::weighted_fit_pair;
use fusedreg::io::input::write_pooled_csv;
use fusedreg::io::{fit_command, load_csv, preprocess, simulate_command, PreprocessOptions, RunConfig, Stage};
use fusedreg::sim_engine::{generate, DgpSpec, Scenario, Simulation};

fn roles_config(dir: &std::path::Path) -> RunConfig {
    RunConfig {
        data: Some(dir.join("pooled.csv")),
        covariates: vec!["X1".into(), "X2".into()],
        cutoff: Some(0.0),
        propensity: "sim2-ratio".into(),
        bootstrap_b: 100,
        out_dir: Some(dir.join("out")),
        ..Default::default()
    }
}

fn write_sim2(dir: &std::path::Path, n: usize) -> fusedreg::FusedDataset {
    let mut spec = DgpSpec::new(Simulation::Sim2);
    spec.n_total = n;
    let d = generate(&spec, 8).unwrap();
    write_pooled_csv(&d, &dir.join("pooled.csv"), &RunConfig::default().roles()).unwrap();
    d
}

#[test]
fn csv_round_trip_gives_identical_fits() {
    let dir = tempfile::tempdir().unwrap();
    let d = write_sim2(dir.path(), 400);
    let cfg = roles_config(dir.path());
    let (back, _) = load_csv(&dir.path().join("pooled.csv"), &cfg.roles()).unwrap();
    assert_eq!(back, d);
    let spec = DgpSpec::new(Simulation::Sim2).fit_spec(Scenario::III);
    let a = weighted_fit_pair(&d, &spec, None).unwrap();
    let b = weighted_fit_pair(&back, &spec, None).unwrap();
    assert_eq!(a.ls, b.ls);
    assert_eq!(a.eff, b.eff);
}

#[test]
fn preprocessing_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let d = write_sim2(dir.path(), 500);
    let opts = PreprocessOptions { sd_threshold: None, ..Default::default() };
    let (once, _) = preprocess(&d, &opts).unwrap();
    let (twice, rep) = preprocess(&once, &opts).unwrap();
    for c in &rep.columns {
        assert!(c.mean.abs() < 1e-10 && (c.sd - 1.0).abs() < 1e-10, "{c:?}");
    }
    for (a, b) in once.rows().iter().zip(twice.rows()) {
        for (u, v) in a.x.iter().zip(&b.x) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}

#[test]
fn fit_command_writes_estimates() {
    let dir = tempfile::tempdir().unwrap();
    write_sim2(dir.path(), 400);
    let out = fit_command(&roles_config(dir.path())).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("out/estimates.csv")).unwrap();
    assert_eq!(csv, out.csv);
    assert_eq!(csv.lines().next().unwrap(), "estimator,coef,est,ese,lower95,upper95");
    assert_eq!(csv.lines().count(), 10);
    assert!(out.text.contains("beta_combined") && out.text.contains("LowerCI95"));
    assert!(out.warnings.is_empty());
}

#[test]
fn errors_carry_stage_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = roles_config(dir.path());
    let err = fit_command(&cfg).unwrap_err();
    assert_eq!((err.stage, err.exit_code()), (Stage::Load, 3));
    assert!(err.to_string().starts_with("[load]"));

    write_sim2(dir.path(), 200);
    cfg.model = "cauchy".into();
    let err = fit_command(&cfg).unwrap_err();
    assert_eq!((err.stage, err.exit_code()), (Stage::Config, 2));

    cfg.model = "normal".into();
    cfg.log_transform = vec!["X2".into()];
    let err = fit_command(&cfg).unwrap_err();
    assert_eq!((err.stage, err.exit_code()), (Stage::Preprocess, 3));
    assert!(err.to_string().contains("column 'X2'"));

    let sim = RunConfig { scenarios: vec!["IV".into()], ..Default::default() };
    assert_eq!(simulate_command(&sim).unwrap_err().exit_code(), 2);
}

#[test]
fn simulate_command_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        scenarios: vec!["II".into()],
        reps: 4,
        sim_bootstrap_b: Some(100),
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let out = simulate_command(&cfg).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv, out.csv);
    assert!(csv.starts_with("scenario,estimator,coef,bias,ssd,ese,cr95\n"));
    assert!(out.text.contains("Scenario II"));
}

#[test]
fn working_model_does_not_change_least_squares_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_sim2(dir.path(), 300);
    let mut cfg = roles_config(dir.path());
    cfg.model = "logistic".into();
    let a = fit_command(&cfg).unwrap();
    cfg.model = "normal".into();
    let b = fit_command(&cfg).unwrap();
    assert!((&a.inference.ls.beta - &b.inference.ls.beta).amax() < 1e-12);
    for j in 0..3 {
        assert!((a.inference.ls.ese[j] - b.inference.ls.ese[j]).abs() < 1e-12);
    }
    assert!((&a.inference.eff.beta - &b.inference.eff.beta).amax() > 1e-6);
}

#[test]
fn zero_external_rows_fall_back_to_least_squares() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = DgpSpec::new(Simulation::Sim2);
    spec.n_total = 400;
    let d = generate(&spec, 12).unwrap();
    let target = fusedreg::FusedDataset::new(d.names().to_vec(), d.target_rows().cloned().collect()).unwrap();
    write_pooled_csv(&target, &dir.path().join("pooled.csv"), &RunConfig::default().roles()).unwrap();
    let mut cfg = roles_config(dir.path());
    cfg.propensity = "constant".into();
    let out = fit_command(&cfg).unwrap();
    assert_eq!(out.warnings.len(), 1);
    let inf = &out.inference;
    assert!((&inf.eff.beta - &inf.ls.beta).amax() < 1e-8);
    assert!((&inf.combined.beta - &inf.ls.beta).amax() < 1e-8);
    assert!((&inf.combined.covariance - &inf.ls.covariance).amax() < 1e-12);
}

#[test]
fn paper_style_cleaning_counts() {
    // 2278 rows: one invalid activity code and 13 far outliers, the rest well inside 4 sd.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nhanes_like.csv");
    let mut text = String::from("r,y,z,age,paq,glu\n");
    for i in 0..2278usize {
        let target = i % 4 == 0;
        let paq = if i == 5 { 7 } else { (i % 2) + 1 };
        let glu = if (100..113).contains(&i) { 30.0 } else { ((i * 37) % 200) as f64 / 100.0 - 1.0 };
        let age = 20.0 + (i % 60) as f64;
        if target {
            text.push_str(&format!("1,{},,{age},{paq},{glu}\n", 25.0 + glu));
        } else {
            text.push_str(&format!("0,,{},{age},{paq},{glu}\n", (i % 3 == 0) as u8));
        }
    }
    std::fs::write(&path, text).unwrap();
    let mut cfg = RunConfig {
        data: Some(path.clone()),
        covariates: vec!["age".into(), "paq".into(), "glu".into()],
        cutoff: Some(25.0),
        standardize: true,
        log_transform: vec!["age".into()],
        ..Default::default()
    };
    cfg.categorical.insert("paq".into(), vec![1.0, 2.0]);
    let (raw, _) = load_csv(&path, &cfg.roles()).unwrap();
    assert_eq!(raw.len(), 2278);
    let (clean, rep) = preprocess(&raw, &cfg.preprocess_options()).unwrap();
    assert_eq!(rep.excluded.iter().map(|e| e.1).collect::<Vec<_>>(), vec![1, 13]);
    assert_eq!(clean.len(), 2264);
    assert_eq!(rep.rows_read, rep.final_rows + rep.total_excluded());
    assert!(rep.columns.iter().any(|c| c.name == "age" && c.log));
}

#[test]
fn pooled_file_of_paper_size_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pooled.csv");
    let mut text = String::from("r,y,z,a\n");
    for i in 0..2264 {
        if i < 574 {
            text.push_str(&format!("1,{},,{}\n", i as f64 * 0.01, i % 7));
        } else {
            text.push_str(&format!("0,,{},{}\n", i % 2, i % 7));
        }
    }
    std::fs::write(&path, text).unwrap();
    let roles = RunConfig { covariates: vec!["a".into()], ..Default::default() }.roles();
    let (d, _) = load_csv(&path, &roles).unwrap();
    assert_eq!((d.len(), d.n_target(), d.n_external()), (2264, 574, 1690));
}
