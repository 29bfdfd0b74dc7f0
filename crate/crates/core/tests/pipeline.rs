use std::path::{Path, PathBuf};

use stdrate::io::{load_counts, DataSchema};
use stdrate::pipeline::{run_pipeline, AnalysisConfig, Overrides, Stages};
use stdrate::Error;

fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy")
}

fn toy_config() -> AnalysisConfig {
    AnalysisConfig::load(&toy_dir().join("config.json")).unwrap()
}

#[test]
fn toy_registry_matches_golden_files() {
    let out = tempfile::tempdir().unwrap();
    let report = run_pipeline(toy_config(), out.path(), Overrides::default(), Stages::ANALYSES).unwrap();
    assert_eq!(report.artifacts.len(), 6);
    for name in ["by_sex", "by_age", "overall"] {
        for ext in ["csv", "json"] {
            let file = format!("series_{name}.{ext}");
            let got = std::fs::read(out.path().join(&file)).unwrap();
            let want = std::fs::read(toy_dir().join("golden").join(&file)).unwrap();
            assert!(got == want, "{file} differs:\n{}", String::from_utf8_lossy(&got));
        }
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(toy_config(), a.path(), Overrides::default(), Stages::ANALYSES).unwrap();
    run_pipeline(toy_config(), b.path(), Overrides::default(), Stages::ANALYSES).unwrap();
    for name in ["series_by_sex.csv", "series_by_sex.json", "series_overall.json"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn series_shapes() {
    let out = tempfile::tempdir().unwrap();
    let report = run_pipeline(toy_config(), out.path(), Overrides::default(), Stages::ANALYSES).unwrap();
    let by_sex = &report.series[0];
    assert_eq!(by_sex.rows.len(), 4);
    // One row per age level per period.
    let by_age = &report.series[1];
    assert_eq!(by_age.rows.len(), 3 * 2);
    assert!(by_age.rows.iter().all(|r| r.sca.is_none() && r.scc.is_some()));
    let periods: Vec<&str> = by_sex.rows.iter().map(|r| r.period.as_str()).collect();
    assert_eq!(periods, ["1990", "2000", "1990", "2000"]);
}

#[test]
fn ingest_round_trips_count_tables() {
    let out = tempfile::tempdir().unwrap();
    let stages = Stages { ingest: true, series: false, diagnostics: false, nesting: false };
    let report = run_pipeline(toy_config(), out.path(), Overrides::default(), stages).unwrap();
    assert_eq!(report.artifacts.len(), 2);
    let schema = DataSchema::load(&toy_dir().join("schema.json")).unwrap();
    let (counts, _) = load_counts(&out.path().join("counts_1990.csv"), &schema, &[], "1990").unwrap();
    let (micro, _) =
        stdrate::io::load_microdata(&toy_dir().join("registry_1990.csv"), &schema, &[], "1990").unwrap();
    assert_eq!(counts, micro);
}

fn write_config(dir: &Path, datasets: &str, data: &str) -> AnalysisConfig {
    std::fs::copy(toy_dir().join("schema.json"), dir.join("schema.json")).unwrap();
    std::fs::write(dir.join("data.csv"), data).unwrap();
    let text = format!(
        r#"{{"format_version":1,"schema":"schema.json","datasets":{datasets},"weight":{{"source":"uniform"}},"series":[{{"name":"s","e1":["sex"]}}]}}"#
    );
    std::fs::write(dir.join("config.json"), text).unwrap();
    AnalysisConfig::load(&dir.join("config.json")).unwrap()
}

#[test]
fn unknown_level_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"[{"period":"1","file":"data.csv","format":"microdata"}]"#,
        "sex,age,county,colon\nM,a00-39,north,0\nM,a99,north,1\n",
    );
    let err = run_pipeline(config, dir.path(), Overrides::default(), Stages::ANALYSES).unwrap_err();
    let message = err.to_string();
    assert!(message.contains("row 3"), "{message}");
    assert!(message.contains("a99"), "{message}");
    assert!(message.starts_with("ingest 1"), "{message}");
}

#[test]
fn empty_dataset_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[]", "");
    let err = run_pipeline(config, dir.path(), Overrides::default(), Stages::ANALYSES).unwrap_err();
    assert!(matches!(&err, Error::Stage { source, .. } if matches!(**source, Error::Config(_))), "{err}");
}

#[test]
fn strict_policy_fails_on_empty_weighted_stratum() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"[{"period":"1","file":"data.csv","format":"microdata"}]"#,
        "sex,age,county,colon\nM,a00-39,north,0\nM,a40-64,north,1\nF,a00-39,south,1\n",
    );
    let err = run_pipeline(config.clone(), dir.path(), Overrides::default(), Stages::ANALYSES).unwrap_err();
    assert!(err.to_string().contains("strict"), "{err}");
    let relaxed = Overrides { policy: Some(stdrate::EmptyStratumPolicy::Renormalize), tol: None };
    assert!(run_pipeline(config, dir.path(), relaxed, Stages::ANALYSES).is_ok());
}
