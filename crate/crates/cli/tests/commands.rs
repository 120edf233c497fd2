use std::path::{Path, PathBuf};

use cnma::mcmc::McmcConfig;
use cnma::sim::SimModel;
use cnma_cli::commands::*;
use cnma_cli::config::{ModelChoice, RunConfig, SimSettings};
use cnma_cli::CliError;

const ARMS: &str = "study,treatment,events,total
s1,Usual,20,100
s1,Edu,15,100
s2,Usual,30,120
s2,Beh,18,120
s3,Usual,25,110
s3,Edu+Beh,12,110
s3,Beh,16,105
s4,Edu,14,90
s4,Beh,12,95
s5,Usual,22,100
s5,Edu+Beh,10,100
";

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn quick(model: ModelChoice, out: PathBuf) -> RunConfig {
    RunConfig {
        model,
        out,
        mcmc: McmcConfig {
            burn_in: 1000,
            keep: 1000,
            ..McmcConfig::default()
        },
        ..RunConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "arms.csv", ARMS);
    for model in [ModelChoice::BayesArm, ModelChoice::FreqContrast] {
        let run = |name: &str| {
            let cfg = quick(model, dir.path().join(name));
            cmd_fit(&cfg, &data).unwrap().1
        };
        let a = run("one");
        let b = run("two");
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.file_name(), y.file_name());
            let (bx, by) = (std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
            if x.file_name().unwrap() == "run_config.toml" {
                // the output directory is part of the configuration
                continue;
            }
            assert_eq!(bx, by, "{} differs", x.display());
        }
    }
}

#[test]
fn fit_reports_components_against_the_comparator() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "arms.csv", ARMS);
    let cfg = RunConfig {
        anchor: Some("Usual".into()),
        ..quick(ModelChoice::AnchoredArm, dir.path().join("o"))
    };
    let (report, files) = cmd_fit(&cfg, &data).unwrap();
    assert_eq!(report.comparator, "Usual");
    let targets: Vec<&str> = report.estimates.iter().map(|e| e.target.as_str()).collect();
    assert_eq!(targets, ["Edu", "Beh"]);
    assert!(report.dic.is_some());
    assert!(report.diagnostics.as_ref().unwrap().max_rhat < 1.05);
    assert!(report.warnings.is_empty());
    let svg = std::fs::read_to_string(&files[2]).unwrap();
    let beh = report.estimate("Beh").unwrap();
    assert!(svg.contains(&format!("{:.3} [{:.3}, {:.3}]", beh.point, beh.lower, beh.upper)));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&files[0]).unwrap()).unwrap();
    assert_eq!(json["model"], "anchored-arm");
}

#[test]
fn contrast_data_feeds_contrast_models_only() {
    let dir = tempfile::tempdir().unwrap();
    let arms = write(dir.path(), "arms.csv", ARMS);
    let contrasts = dir.path().join("c.csv");
    cmd_convert(&RunConfig::default(), &arms, &contrasts).unwrap();
    let from_arms = run_fit(&quick(ModelChoice::FreqContrast, dir.path().into()), &load_data(&arms, "+").unwrap()).unwrap();
    let from_contrasts = run_fit(&quick(ModelChoice::FreqContrast, dir.path().into()), &load_data(&contrasts, "+").unwrap()).unwrap();
    for (a, b) in from_arms.estimates.iter().zip(&from_contrasts.estimates) {
        assert!((a.point - b.point).abs() < 1e-12);
        assert!((a.sd - b.sd).abs() < 1e-12);
    }
    let err = run_fit(&quick(ModelChoice::BayesArm, dir.path().into()), &load_data(&contrasts, "+").unwrap());
    assert!(matches!(err, Err(CliError::Config(_))));
}

#[test]
fn disconnected_network_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(
        dir.path(),
        "d.csv",
        "study,treatment,events,total\ns1,P,5,50\ns1,A,8,50\ns2,B,5,50\ns2,C,9,50\n",
    );
    for model in [ModelChoice::FreqContrast, ModelChoice::BayesArm] {
        let r = cmd_fit(&quick(model, dir.path().join("o")), &data);
        assert!(matches!(r, Err(CliError::Core(cnma::CnmaError::Disconnected(2)))), "{model:?}");
    }
}

#[test]
fn unconverged_chains_produce_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "arms.csv", ARMS);
    let cfg = RunConfig {
        mcmc: McmcConfig {
            burn_in: 2,
            keep: 40,
            adapt_window: 1,
            ..McmcConfig::default()
        },
        ..quick(ModelChoice::BayesArm, dir.path().join("o"))
    };
    let report = run_fit(&cfg, &load_data(&data, "+").unwrap()).unwrap();
    let rhat = report.diagnostics.as_ref().unwrap().max_rhat;
    assert!(rhat >= 1.05, "rhat {rhat}");
    assert!(report.warnings.iter().any(|w| w.contains("rhat")));
}

#[test]
fn ranking_orders_every_observed_treatment() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "arms.csv", ARMS);
    for model in [ModelChoice::FreqContrast, ModelChoice::BayesContrast] {
        let cfg = RunConfig {
            direction: cnma::effects::Direction::LowerBetter,
            ..quick(model, dir.path().join("r"))
        };
        let (report, files) = cmd_rank(&cfg, &data).unwrap();
        assert_eq!(report.ordering.len(), 4);
        // fewer events is better here, and the combination has the lowest rates
        assert_eq!(report.ordering[0], "Edu+Beh");
        assert_eq!(report.ordering[3], "Usual");
        let csv = std::fs::read_to_string(&files[1]).unwrap();
        assert!(csv.starts_with("treatment,score,position\nEdu+Beh,"));
    }
}

#[test]
fn simulation_smoke_run_covers_every_model_and_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out: dir.path().join("sim"),
        mcmc: McmcConfig {
            burn_in: 400,
            keep: 400,
            ..McmcConfig::default()
        },
        simulation: SimSettings {
            replicates: 5,
            workers: 1,
            raw_records: true,
            ..SimSettings::default()
        },
        ..RunConfig::default()
    };
    let (out, files) = cmd_simulate(&cfg).unwrap();
    assert_eq!(files.len(), 5);
    assert_eq!(out.report.replicates, 5);
    let monitored = out.truth.monitored().len();
    assert_eq!(monitored, 7);
    for m in SimModel::ALL {
        let n = out.report.parameters.iter().filter(|p| p.model == m).count();
        assert_eq!(n, monitored, "{m:?}");
    }
    let csv = std::fs::read_to_string(&files[1]).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * monitored);
    let bad = RunConfig {
        simulation: SimSettings {
            network: 7,
            ..cfg.simulation.clone()
        },
        ..cfg
    };
    assert!(cmd_simulate(&bad).is_err());
}
