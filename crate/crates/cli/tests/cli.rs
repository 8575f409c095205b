use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use stratkit_cli::*;

fn table(text: &str) -> Table {
    Table::from_reader(text.as_bytes()).unwrap()
}

fn assign_args(k: usize, l: usize, covariates: &[&str]) -> AssignArgs {
    AssignArgs {
        k,
        l,
        covariates: covariates.iter().map(|c| c.to_string()).collect(),
        method: BlockMethod::Sorted,
        seed: 7,
        drop_remainder: false,
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stratkit"))
}

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/configs"))
}

#[test]
fn assign_four_units() {
    let t = table("unit_id,x\n1,0.3\n2,0.9\n3,0.1\n4,0.5\n");
    let out = assign_table(&t, &assign_args(2, 1, &["x"])).unwrap();
    let blocks: Vec<(&str, usize)> = out.rows.iter().map(|(id, b, _)| (id.as_str(), *b)).collect();
    assert_eq!(blocks, [("3", 1), ("1", 1), ("4", 2), ("2", 2)]);
    for b in [1, 2] {
        let treated: u8 = out.rows.iter().filter(|r| r.1 == b).map(|r| r.2).sum();
        assert_eq!(treated, 1);
    }
    assert!(out.dropped.is_empty());
}

#[test]
fn assign_rejects_bad_input() {
    let five = table("unit_id,x\n1,0.3\n2,0.9\n3,0.1\n4,0.5\n5,0.2\n");
    assert!(matches!(
        assign_table(&five, &assign_args(2, 1, &["x"])),
        Err(CliError::Core(stratkit::Error::NotDivisible { n: 5, k: 2 }))
    ));
    assert!(matches!(
        assign_table(&five, &assign_args(2, 1, &["z"])),
        Err(CliError::MissingColumn(c)) if c == "z"
    ));
    let bad = table("unit_id,x\n1,0.3\n2,abc\n");
    assert!(matches!(
        assign_table(&bad, &assign_args(2, 1, &["x"])),
        Err(CliError::NonNumericCovariate { row: 2, .. })
    ));
    let no_id = table("id,x\n1,0.3\n2,0.1\n");
    assert!(matches!(assign_table(&no_id, &assign_args(2, 1, &["x"])), Err(CliError::MissingColumn(_))));
    assert!(matches!(assign_table(&five, &assign_args(2, 2, &["x"])), Err(CliError::Usage(_))));
}

#[test]
fn drop_remainder_lists_largest_units() {
    let five = table("unit_id,x\na,0.3\nb,0.9\nc,0.1\nd,0.5\ne,0.2\n");
    let mut args = assign_args(2, 1, &["x"]);
    args.drop_remainder = true;
    let out = assign_table(&five, &args).unwrap();
    assert_eq!(out.dropped, ["b"]);
    assert_eq!(out.rows.len(), 4);
    assert_eq!(out.dropped_csv(), "unit_id\nb\n");
}

#[test]
fn assign_output_is_a_valid_design() {
    let mut g = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut text = String::from("unit_id,age,score\n");
    for i in 0..103 {
        text.push_str(&format!("u{i},{},{}\n", g.random_range(18..80), g.random::<f64>()));
    }
    let t = table(&text);
    for method in [BlockMethod::Sorted, BlockMethod::Greedy] {
        let mut args = assign_args(4, 2, &["age", "score"]);
        args.method = method;
        args.drop_remainder = true;
        let out = assign_table(&t, &args).unwrap();
        assert_eq!(out.rows.len() + out.dropped.len(), 103);
        assert_eq!(out.dropped.len(), 3);
        let mut ids: Vec<&String> = out.rows.iter().map(|r| &r.0).chain(&out.dropped).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 103);
        for b in 1..=25 {
            let block: Vec<_> = out.rows.iter().filter(|r| r.1 == b).collect();
            assert_eq!(block.len(), 4);
            assert_eq!(block.iter().map(|r| u32::from(r.2)).sum::<u32>(), 2);
        }
    }
}

#[test]
fn assign_binary_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("units.csv");
    std::fs::write(&input, "unit_id,x\n1,0.3\n2,0.9\n3,0.1\n4,0.5\n5,0.7\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = bin()
            .args(["assign", "--k", "2", "--l", "1", "--covariates", "x", "--seed", "7", "--drop-remainder"])
            .arg("--input")
            .arg(&input)
            .arg("--output")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(&out).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
    assert_eq!(std::fs::read_to_string(dir.path().join("a.dropped.csv")).unwrap(), "unit_id\n2\n");
    let missing_seed = bin()
        .args(["assign", "--k", "2", "--l", "1", "--covariates", "x"])
        .arg("--input")
        .arg(&input)
        .arg("--output")
        .arg(dir.path().join("c.csv"))
        .output()
        .unwrap();
    assert!(!missing_seed.status.success());
}

#[test]
fn estimate_toy_ate() {
    let t = table("y,a\n3,1\n1,0\n2,1\n0,0\n");
    let r = estimate_table(&t, &EstimateArgs::default()).unwrap();
    assert_eq!(r.theta, [2.0]);
    assert!(r.breakdown.is_none() && r.ci.is_none());
}

#[test]
fn estimate_matched_pairs_breakdown() {
    let t = table("y,a,pair\n3,1,1\n1,0,1\n2,0,2\n0,1,2\n");
    let args = EstimateArgs {
        block_col: Some("pair".into()),
        ..EstimateArgs::default()
    };
    let r = estimate_table(&t, &args).unwrap();
    let b = r.breakdown.clone().unwrap();
    assert_eq!(r.theta, [0.0]);
    assert_eq!((b.sigma1, b.varsigma01, b.varsigma00, b.sigma2, b.vhat), (5.0, -6.0, 8.0, 4.0, 9.0));
    assert_eq!(r.vhat, Some(9.0));
    assert_eq!(r.se, Some(1.5));
    let (lo, hi) = r.ci.unwrap();
    assert!((hi - 1.959_963_984_540_054 * 1.5).abs() < 1e-9 && lo == -hi);
    let csv = r.to_csv();
    assert!(csv.lines().next().unwrap().contains("varsigma01"));
    assert!(csv.contains(",9,1.5,"), "{csv}");
    // String labels keep first-appearance order.
    let named = table("y,a,pair\n3,1,p\n1,0,p\n2,0,q\n0,1,q\n");
    assert_eq!(estimate_table(&named, &args).unwrap().vhat, Some(9.0));
}

#[test]
fn estimate_scope_and_schema_errors() {
    let t = table("y,a,b,d\n3,1,1,1\n1,0,1,0\n2,0,2,1\n0,1,2,1\n");
    for param in ["qte", "logodds"] {
        let args = EstimateArgs {
            param: param.into(),
            tau: Some(0.5),
            block_col: Some("b".into()),
            ..EstimateArgs::default()
        };
        assert!(matches!(
            estimate_table(&t, &args),
            Err(CliError::Core(stratkit::Error::NonScalarParameter(_)))
        ));
    }
    let late = EstimateArgs {
        param: "late".into(),
        ..EstimateArgs::default()
    };
    assert!(matches!(estimate_table(&t, &late), Err(CliError::Usage(_))));
    let qte = EstimateArgs {
        param: "qte".into(),
        ..EstimateArgs::default()
    };
    assert!(matches!(estimate_table(&t, &qte), Err(CliError::Usage(_))));
    let wate = EstimateArgs {
        param: "wate".into(),
        ..EstimateArgs::default()
    };
    assert!(matches!(estimate_table(&t, &wate), Err(CliError::Usage(_))));
    let no_x = EstimateArgs {
        basis: "quad".into(),
        ..EstimateArgs::default()
    };
    assert!(matches!(estimate_table(&t, &no_x), Err(CliError::Usage(_))));
    let bad_a = table("y,a\n3,2\n1,0\n");
    assert!(matches!(
        estimate_table(&bad_a, &EstimateArgs::default()),
        Err(CliError::Core(stratkit::Error::NonBinaryTreatment { row: 1, value: 2 }))
    ));
    let zero_first_stage = EstimateArgs {
        param: "late".into(),
        d_col: Some("d".into()),
        ..EstimateArgs::default()
    };
    let flat = table("y,a,d\n3,1,1\n1,0,1\n2,0,1\n0,1,1\n");
    assert!(matches!(
        estimate_table(&flat, &zero_first_stage),
        Err(CliError::Core(stratkit::Error::ZeroFirstStage(_)))
    ));
}

#[test]
fn estimate_other_parameters() {
    let t = table("y,a,d,w,x\n3,1,1,1,0.1\n1,0,0,1,0.4\n2,1,0,1,-0.3\n0,0,0,1,0.8\n5,1,1,1,1.1\n1,0,1,1,-0.5\n");
    let base = EstimateArgs::default();
    let ate = estimate_table(&t, &base).unwrap().theta[0];
    let wate = EstimateArgs {
        param: "wate".into(),
        weight_col: Some("w".into()),
        ..base.clone()
    };
    assert!((estimate_table(&t, &wate).unwrap().theta[0] - ate).abs() < 1e-12);
    let late = EstimateArgs {
        param: "late".into(),
        d_col: Some("d".into()),
        ..base.clone()
    };
    // HT contrasts: Y 10/3 - 2/3 = 8/3, D 2/3 - 1/3 = 1/3.
    assert!((estimate_table(&t, &late).unwrap().theta[0] - 8.0).abs() < 1e-12);
    let qte = EstimateArgs {
        param: "qte".into(),
        tau: Some(0.5),
        ..base.clone()
    };
    let r = estimate_table(&t, &qte).unwrap();
    assert_eq!(r.theta.len(), 2);
    assert_eq!(r.transformed, Some(r.theta[0] - r.theta[1]));
    let adj = EstimateArgs {
        basis: "quad".into(),
        x_col: Some("x".into()),
        ..base
    };
    let r = estimate_table(&t, &adj).unwrap();
    assert_eq!(r.estimator, "adjusted_quad");
    assert!(r.theta[0].is_finite() && r.vhat.is_some());
}

#[test]
fn estimate_binary_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("exp.csv");
    std::fs::write(&input, "y,a\n3,1\n1,0\n2,1\n0,0\n").unwrap();
    let report = dir.path().join("report.csv");
    let out = bin()
        .args(["estimate", "--param", "ate", "--eta", "0.5"])
        .arg("--input")
        .arg(&input)
        .arg("--output")
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("theta      2\n"));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("ate,unadjusted,4,2,"));
}

#[test]
fn run_config_round_trips_and_rejects_unknown_keys() {
    for name in ["smoke", "table1_ate", "table1_ate_sigma1", "table1_late", "table1_late_sigma1"] {
        let text = std::fs::read_to_string(configs().join(format!("{name}.json"))).unwrap();
        let cfg = RunConfig::parse(&text).unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(cfg.schema_version, SCHEMA_VERSION);
    }
    let text = std::fs::read_to_string(configs().join("smoke.json")).unwrap();
    let unknown = text.replace("\"reps\"", "\"replications\"");
    assert!(matches!(RunConfig::parse(&unknown), Err(CliError::Config(_))));
    let future = text.replace("\"schema_version\": 1", "\"schema_version\": 2");
    assert!(matches!(RunConfig::parse(&future), Err(CliError::Config(_))));
    let bad_model = text.replace("\"sigma_override\": null", "\"sigma_override\": -1.0");
    assert!(RunConfig::parse(&bad_model).is_err());
}

#[test]
fn grid_configs_cover_the_reference_sizes() {
    let text = std::fs::read_to_string(configs().join("table1_ate.json")).unwrap();
    let cfg = RunConfig::parse(&text).unwrap();
    assert_eq!(cfg.reps, 2000);
    assert_eq!(cfg.n_grid, [200, 400, 1000, 2000]);
    assert_eq!(cfg.eta, 0.5);
    assert_eq!(cfg.sigma_override, None);
    let sigma1 = RunConfig::parse(&std::fs::read_to_string(configs().join("table1_ate_sigma1.json")).unwrap()).unwrap();
    assert_eq!(sigma1.sigma_override, Some(1.0));
}

#[test]
fn smoke_simulation_is_fast_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let a = cmd_simulate(&configs().join("smoke.json"), &dir.path().join("a")).unwrap();
    assert!(start.elapsed().as_secs_f64() < 5.0, "{:?}", start.elapsed());
    assert_eq!(a.failing_cells, 0);
    let b = cmd_simulate(&configs().join("smoke.json"), &dir.path().join("b")).unwrap();
    assert_eq!(std::fs::read(&a.csv_path).unwrap(), std::fs::read(&b.csv_path).unwrap());
    assert_eq!(std::fs::read(&a.markdown_path).unwrap(), std::fs::read(&b.markdown_path).unwrap());
    let header = std::fs::read_to_string(&a.csv_path).unwrap();
    assert!(header.starts_with("n,param,model,design,estimator,mse,ratio,bias,emp_var_n,mean_vhat,coverage,fail_rate"));
}

#[test]
fn thread_variable_is_validated() {
    let out = bin()
        .env("STRATKIT_THREADS", "zero")
        .args(["oracle", "--model", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("STRATKIT_THREADS"));
}

#[test]
fn oracle_prints_closed_form() {
    let out = bin().args(["oracle", "--model", "3"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3], "0.2");
    assert!((row[6].parse::<f64>().unwrap() - 48.0 / 66.04).abs() < 1e-12);
    assert_eq!(row[7], "closed_form");
    let sigma1 = cmd_oracle(&OracleArgs {
        model: 1,
        param: stratkit_sim::Param::Ate,
        eta: 0.5,
        sigma: Some(1.0),
        method: OracleChoice::ClosedForm,
        draws: None,
        seed: 0,
    })
    .unwrap();
    let ratio: f64 = sigma1.lines().nth(1).unwrap().split(',').nth(6).unwrap().parse().unwrap();
    assert!((ratio - 0.448).abs() < 1e-3);
}
