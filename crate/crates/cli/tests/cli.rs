use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(rel)
}

fn stdrate(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stdrate"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn rates_reproduce_goldens() {
    let out = tempfile::tempdir().unwrap();
    let config = data("toy/config.json");
    let o = stdrate(&["--config", path(&config), "rates"], out.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["by_sex", "by_age", "overall"] {
        for ext in ["csv", "json"] {
            let file = format!("series_{name}.{ext}");
            let golden = std::fs::read(data("toy/golden").join(&file)).unwrap();
            assert_eq!(std::fs::read(out.path().join(&file)).unwrap(), golden, "{file}");
        }
    }
}

#[test]
fn ingest_writes_reingestible_counts() {
    let out = tempfile::tempdir().unwrap();
    let o = stdrate(&["--config", path(&data("toy/config.json")), "ingest"], out.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let schema = stdrate::io::DataSchema::load(&data("toy/schema.json")).unwrap();
    let (from_micro, _) = stdrate::io::load_microdata(&data("toy/registry_1990.csv"), &schema, &[], "1990").unwrap();
    let (from_counts, _) = stdrate::io::load_counts(&out.path().join("counts_1990.csv"), &schema, &[], "1990").unwrap();
    assert_eq!(from_micro, from_counts);
}

#[test]
fn diagnose_prints_verdict_table_and_json() {
    let out = tempfile::tempdir().unwrap();
    let o = stdrate(&["--config", path(&data("confounding/config.json")), "diagnose"], out.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("EQ8_NO_E2_CONFOUNDING"));
    assert!(text.contains("EQ14_SCA_EQUALS_SCC"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("diagnostics.json")).unwrap()).unwrap();
    let first = &json["results"][0]["result"];
    for field in ["condition", "holds", "max_discrepancy", "witness"] {
        assert!(first.get(field).is_some(), "missing {field}");
    }
}

#[test]
fn compare_shows_sca_distortion() {
    let out = tempfile::tempdir().unwrap();
    let config = data("confounding/config.json");
    let o = stdrate(&["--config", path(&config), "compare", "--periods", "A", "B", "--e1", "sex"], out.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("-0.007619"), "{}", stdout(&o));
    assert!(out.path().join("compare.json").is_file());
}

#[test]
fn nest_check_from_seed_records_seed() {
    let out = tempfile::tempdir().unwrap();
    let o = stdrate(&["nest-check", "--seed", "11"], out.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("nest_check_seed_11.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 11);
    assert_eq!(report["passed"], true);
}

#[test]
fn nest_check_from_config() {
    let out = tempfile::tempdir().unwrap();
    let o = stdrate(&["--config", path(&data("confounding/config.json")), "nest-check"], out.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.path().join("nesting.json").is_file());
}

#[test]
fn fdp_gen_expected_then_falsify_models() {
    let out = tempfile::tempdir().unwrap();
    let model = data("fdp/cc_drift.json");
    let o = stdrate(&["fdp-gen", "--model", path(&model), "--period", "y1", "--per-cell", "1000"], out.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let counts = std::fs::read_to_string(out.path().join("counts_y1.csv")).unwrap();
    assert!(counts.contains("M,young,200,1000"), "{counts}");
    let expected = std::fs::read_to_string(out.path().join("expected_y1.csv")).unwrap();
    assert!(expected.contains("F,old,1150/3,1000"), "{expected}");

    let weight = data("fdp/weight.csv");
    let o = stdrate(
        &["fdp-falsify", "--model", path(&model), "--periods", "y1", "y2", "--weight", path(&weight)],
        out.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let verdict: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("falsify.json")).unwrap()).unwrap();
    assert_eq!(verdict["inference"], "IDP_OR_CC_FALSE");
    assert_eq!(verdict["cc_holds"], "FALSE");
    assert_eq!(verdict["idp_holds"], "TRUE");
}

#[test]
fn fdp_gen_sampled_is_reproducible() {
    let model = data("fdp/identical.json");
    let args = ["fdp-gen", "--model", path(&model), "--period", "y2", "--mode", "sampled", "--seed", "42", "--population", "5000"];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(stdrate(&args, a.path()).status.success());
    assert!(stdrate(&args, b.path()).status.success());
    let read = |d: &Path| std::fs::read(d.join("counts_y2.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let meta = std::fs::read_to_string(a.path().join("generation_y2.json")).unwrap();
    assert!(meta.contains("chacha8-v1") && meta.contains("42"), "{meta}");
}

#[test]
fn sampled_mode_needs_seed() {
    let out = tempfile::tempdir().unwrap();
    let o = stdrate(&["fdp-gen", "--model", path(&data("fdp/identical.json")), "--period", "y1", "--mode", "sampled"], out.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--seed"));
}

#[test]
fn data_mode_falsify_needs_tolerance() {
    let out = tempfile::tempdir().unwrap();
    let config = data("confounding/config.json");
    let o = stdrate(&["--config", path(&config), "fdp-falsify"], out.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--tol"));
    let o = stdrate(&["--config", path(&config), "--tol", "0.001", "fdp-falsify"], out.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("UNKNOWN"));
}

#[test]
fn unknown_level_exits_nonzero_naming_row() {
    let dir = tempfile::tempdir().unwrap();
    let toy = data("toy");
    for f in ["schema.json", "standard_population.csv", "registry_2000.csv", "config.json"] {
        std::fs::copy(toy.join(f), dir.path().join(f)).unwrap();
    }
    let bad = std::fs::read_to_string(toy.join("registry_1990.csv")).unwrap().replacen(",M,", ",X,", 1);
    std::fs::write(dir.path().join("registry_1990.csv"), bad).unwrap();
    let o = stdrate(&["--config", path(&dir.path().join("config.json")), "rates"], &dir.path().join("out"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));
}

#[test]
fn policy_override_applies() {
    let dir = tempfile::tempdir().unwrap();
    let toy = data("toy");
    for f in ["schema.json", "standard_population.csv", "registry_2000.csv", "config.json"] {
        std::fs::copy(toy.join(f), dir.path().join(f)).unwrap();
    }
    // Several weighted strata have no individuals in this period.
    let sparse = "person_id,sex,age,county,colon\n1,M,a00-39,north,0\n2,M,a40-64,north,1\n3,F,a00-39,south,1\n";
    std::fs::write(dir.path().join("registry_1990.csv"), sparse).unwrap();
    let config = dir.path().join("config.json");
    let strict = stdrate(&["--config", path(&config), "rates"], &dir.path().join("a"));
    assert!(!strict.status.success());
    assert!(stderr(&strict).contains("strict"), "{}", stderr(&strict));
    let renorm = stdrate(&["--config", path(&config), "--policy", "renormalize", "rates"], &dir.path().join("b"));
    assert!(renorm.status.success(), "{}", stderr(&renorm));
}

#[test]
fn missing_config_is_reported() {
    let out = tempfile::tempdir().unwrap();
    let o = stdrate(&["rates"], out.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--config"));
}
