use std::path::{Path, PathBuf};

use cnma::design::s_star;
use cnma::network::{ArmRecord, ComponentDict, ContrastBlock, Study, Treatment, ZeroCellPolicy};
use cnma::CnmaError;
use cnma_cli::config::RunConfig;
use cnma_cli::tables::*;
use cnma_cli::CliError;
use proptest::prelude::*;

fn file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn rows_group_into_studies_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let p = file(
        dir.path(),
        "a.csv",
        "study,treatment,events,total\ns1,Usual,10,50\ns1,Edu+Rel,4,99\ns1,Beh,7,60\ns2,Usual,3,20\ns2,Beh,2,21\n",
    );
    let t = read_arm_table(&p, "+").unwrap();
    assert_eq!(t.studies.len(), 2);
    let s1 = &t.studies[0];
    assert_eq!(s1.n_arms(), 3);
    assert_eq!(s1.arms[0].treatment.label, "Usual");
    let edu_rel = &s1.arms[1];
    assert_eq!(edu_rel.treatment.size(), 2);
    assert_eq!((edu_rel.events, edu_rel.total), (4, 99));
    assert_eq!(t.components.names(), ["Usual", "Edu", "Rel", "Beh"]);
}

#[test]
fn arm_table_errors() {
    let dir = tempfile::tempdir().unwrap();
    let head = "study,treatment,events,total\n";
    let p = file(dir.path(), "e.csv", &format!("{head}s1,Edu,10,5\ns1,Usual,1,5\n"));
    assert!(matches!(
        read_arm_table(&p, "+"),
        Err(CliError::Core(CnmaError::EventsExceedTotal { events: 10, total: 5, .. }))
    ));
    let p = file(dir.path(), "m.csv", &format!("{head}s1,Edu,1,5\ns1,Usual,x,5\n"));
    assert!(matches!(read_arm_table(&p, "+"), Err(CliError::MalformedRow { line: 3, .. })));
    let p = file(dir.path(), "n.csv", &format!("{head}s1,Edu,1,5\ns1,Usual,2\n"));
    assert!(matches!(read_arm_table(&p, "+"), Err(CliError::MalformedRow { .. })));
    let p = file(dir.path(), "d.csv", &format!("{head}s1,Edu,1,5\ns1,Edu,2,5\n"));
    assert!(matches!(read_arm_table(&p, "+"), Err(CliError::Core(CnmaError::DuplicateTreatment { .. }))));
    let p = file(dir.path(), "h.csv", "study,arm,events,total\ns1,Edu,1,5\n");
    assert!(matches!(read_arm_table(&p, "+"), Err(CliError::BadHeader { .. })));
    let p = file(dir.path(), "empty.csv", "");
    assert!(read_arm_table(&p, "+").is_err());
    let p = file(dir.path(), "header_only.csv", head);
    assert!(matches!(read_arm_table(&p, "+"), Err(CliError::EmptyTable(_))));
    assert!(matches!(read_arm_table(&dir.path().join("missing.csv"), "+"), Err(CliError::Csv { .. })));
}

#[test]
fn contrast_rows_sharing_a_baseline_form_one_block() {
    let dir = tempfile::tempdir().unwrap();
    let p = file(
        dir.path(),
        "c.csv",
        "study,baseline_treatment,treatment,y,se,se_baseline\ns1,Usual,Edu,0.5,0.4,0.2\ns1,Usual,Beh,-0.25,0.5,0.2\ns2,Usual,Edu,0.1,0.3,\n",
    );
    let t = read_contrast_table(&p, "+").unwrap();
    assert_eq!(t.blocks.len(), 2);
    let b = &t.blocks[0];
    assert_eq!(b.n_arms(), 3);
    let s = s_star(b);
    assert_eq!(s.shape(), (2, 2));
    let expected = [[0.16, 0.04], [0.04, 0.25]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((s[(i, j)] - expected[i][j]).abs() < 1e-15);
        }
    }
    // single-row study with no baseline standard error
    assert_eq!(t.blocks[1].se_baseline, 0.0);
    assert_eq!(t.blocks[1].n_contrasts(), 1);
}

#[test]
fn contrast_table_errors() {
    let dir = tempfile::tempdir().unwrap();
    let head = "study,baseline_treatment,treatment,y,se,se_baseline\n";
    let p = file(dir.path(), "pd.csv", &format!("{head}s1,Usual,Edu,0.5,0.4,0.4\ns1,Usual,Beh,0.5,0.5,0.4\n"));
    assert!(matches!(read_contrast_table(&p, "+"), Err(CliError::Core(CnmaError::NotPositiveDefinite))));
    let p = file(dir.path(), "ms.csv", &format!("{head}s1,Usual,Edu,0.5,0.4,\ns1,Usual,Beh,0.5,0.5,\n"));
    assert!(matches!(read_contrast_table(&p, "+"), Err(CliError::MissingBaselineSe(_))));
    let p = file(dir.path(), "se.csv", &format!("{head}s1,Usual,Edu,0.5,0,\n"));
    assert!(matches!(read_contrast_table(&p, "+"), Err(CliError::MalformedRow { .. })));
    let p = file(dir.path(), "neg.csv", &format!("{head}s1,Usual,Edu,0.5,-0.1,\n"));
    assert!(matches!(read_contrast_table(&p, "+"), Err(CliError::MalformedRow { .. })));
    let p = file(dir.path(), "mix.csv", &format!("{head}s1,Usual,Edu,0.5,0.4,0.1\ns1,Beh,Edu+Beh,0.5,0.5,0.1\n"));
    assert!(matches!(read_contrast_table(&p, "+"), Err(CliError::MixedBaseline { .. })));
    let p = file(dir.path(), "nan.csv", &format!("{head}s1,Usual,Edu,NaN,0.4,\n"));
    assert!(matches!(read_contrast_table(&p, "+"), Err(CliError::MalformedRow { .. })));
}

#[test]
fn conversion_of_a_two_arm_study() {
    let dir = tempfile::tempdir().unwrap();
    let arms = file(dir.path(), "a.csv", "study,treatment,events,total\ns1,P,10,50\ns1,A,20,50\n");
    let out = dir.path().join("c.csv");
    let cfg = RunConfig::default();
    let converted = cnma_cli::commands::cmd_convert(&cfg, &arms, &out).unwrap();
    // log(20/30) − log(10/40); sqrt(1/20 + 1/30 + 1/10 + 1/40); sqrt(1/10 + 1/40)
    let y = (20.0f64 / 30.0).ln() - (10.0f64 / 40.0).ln();
    let se = (1.0 / 20.0 + 1.0 / 30.0 + 1.0 / 10.0 + 1.0 / 40.0f64).sqrt();
    let seb = (1.0 / 10.0 + 1.0 / 40.0f64).sqrt();
    let b = &converted.blocks[0];
    assert!((b.y_star[0] - y).abs() < 1e-12 && (b.y_star[0] - 0.98083).abs() < 5e-6);
    assert!((b.se[0] - se).abs() < 1e-12 && (b.se[0] - 0.45644).abs() < 5e-6);
    assert!((b.se_baseline - seb).abs() < 1e-12 && (b.se_baseline - 0.35355).abs() < 5e-6);
    let back = read_contrast_table_with(&out, "+", converted.components.clone()).unwrap();
    assert_eq!(back, converted);
    let empty = file(dir.path(), "empty.csv", "");
    assert!(cnma_cli::commands::cmd_convert(&cfg, &empty, &out).is_err());
}

#[test]
fn conversion_respects_zero_cell_policy_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let arms = file(dir.path(), "z.csv", "study,treatment,events,total\ns1,A,0,50\ns1,B,5,50\ns1,C,7,50\n");
    let out = dir.path().join("c.csv");
    let cfg = RunConfig::default();
    assert!(matches!(
        cnma_cli::commands::cmd_convert(&cfg, &arms, &out),
        Err(CliError::Core(CnmaError::ZeroCell(_)))
    ));
    let cfg = RunConfig {
        zero_cell: ZeroCellPolicy::Continuity05,
        baseline: Some("B".into()),
        ..RunConfig::default()
    };
    let t = cnma_cli::commands::cmd_convert(&cfg, &arms, &out).unwrap();
    let b = &t.blocks[0];
    assert_eq!(b.baseline_arm, 0);
    assert_eq!(b.baseline_treatment().label, "B");
    let labels: Vec<&str> = b.contrast_treatments().map(|t| t.label.as_str()).collect();
    assert_eq!(labels, ["A", "C"]);
    // log(0.5/50.5) − log(5.5/45.5)
    let y = (0.5f64 / 50.5).ln() - (5.5f64 / 45.5).ln();
    assert!((b.y_star[0] - y).abs() < 1e-12);
    assert_eq!(read_contrast_table_with(&out, "+", t.components.clone()).unwrap(), t);
}

#[test]
fn case_study_shape_check() {
    let mut dict = ComponentDict::from_names(CASE_STUDY_COMPONENTS);
    let usual = dict.lookup("Usual", "+").unwrap();
    let studies: Vec<Study> = (0..CASE_STUDY_TRIALS)
        .map(|i| {
            let other = cnma::network::parse_treatment(CASE_STUDY_COMPONENTS[1 + i % 5], "+", &mut dict).unwrap();
            Study::new(format!("t{i}"), vec![ArmRecord::new(usual.clone(), 3, 40), ArmRecord::new(other, 2, 40)]).unwrap()
        })
        .collect();
    let good = ArmTable {
        components: dict.clone(),
        studies: studies.clone(),
    };
    assert!(case_study_shape_issues(&good).is_empty());
    let short = ArmTable {
        components: dict,
        studies: studies[..30].to_vec(),
    };
    assert_eq!(case_study_shape_issues(&short).len(), 1);
}

fn label_strategy() -> impl Strategy<Value = String> {
    prop::sample::subsequence(vec!["P", "A", "B", "C"], 1..=3).prop_map(|v| v.join("+"))
}

fn arm_table_strategy() -> impl Strategy<Value = ArmTable> {
    let study = prop::collection::vec((label_strategy(), 0u64..60, 60u64..200), 2..4);
    prop::collection::vec(study, 1..5).prop_filter_map("distinct treatments", |studies| {
        let mut dict = ComponentDict::new();
        let mut out = Vec::new();
        for (i, arms) in studies.into_iter().enumerate() {
            let arms: Vec<ArmRecord> = arms
                .into_iter()
                .map(|(l, r, n)| ArmRecord::new(cnma::network::parse_treatment(&l, "+", &mut dict).unwrap(), r, n))
                .collect();
            out.push(Study::new(format!("s{i}"), arms).ok()?);
        }
        Some(ArmTable {
            components: dict,
            studies: out,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn arm_table_round_trip(table in arm_table_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_arm_table(&p, &table, "+").unwrap();
        prop_assert_eq!(read_arm_table_with(&p, "+", table.components.clone()).unwrap(), table);
    }

    #[test]
    fn contrast_table_round_trip(table in arm_table_strategy(), ys in prop::collection::vec(-3.0f64..3.0, 12)) {
        let converted = arm_to_contrast_table(&table, None, ZeroCellPolicy::Continuity05).unwrap();
        // perturb y so values are not all from the conversion formula
        let blocks: Vec<ContrastBlock> = converted
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let y = b.y_star.iter().enumerate().map(|(j, v)| v + ys[(i * 3 + j) % ys.len()]).collect();
                let t: Vec<Treatment> = b.treatments.clone();
                ContrastBlock::new(b.study_id.clone(), 0, y, b.se.clone(), b.se_baseline, t).unwrap()
            })
            .collect();
        let table = ContrastTable::new(converted.components.clone(), blocks).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_contrast_table(&p, &table, "+").unwrap();
        prop_assert_eq!(read_contrast_table_with(&p, "+", table.components.clone()).unwrap(), table);
    }
}
