use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_mobility-audit");

fn run(cwd: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env("SOURCE_DATE_EPOCH", "1541462400")
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = run(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn sorted_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(a.path(), &["synth", "--seed", "7", "--out", "w"]);
    ok(b.path(), &["synth", "--seed", "7", "--out", "w"]);
    let (wa, wb) = (a.path().join("w"), b.path().join("w"));
    let files = sorted_files(&wa);
    assert_eq!(files, sorted_files(&wb));
    for expected in [
        "traffic.csv",
        "admin_visits.csv",
        "crosswalk.csv",
        "poi_directory.csv",
        "ground_truth.csv",
        "manifest.json",
    ] {
        assert!(files.contains(&expected.to_string()), "missing {expected}");
    }
    for f in &files {
        assert_eq!(
            fs::read(wa.join(f)).unwrap(),
            fs::read(wb.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let traffic = fs::read_to_string(wa.join("traffic.csv")).unwrap();
    assert!(traffic.starts_with("poi_id,date,visits\n"));

    let other = tempfile::tempdir().unwrap();
    ok(other.path(), &["synth", "--seed", "8", "--out", "w"]);
    assert_ne!(
        fs::read(wa.join("traffic.csv")).unwrap(),
        fs::read(other.path().join("w/traffic.csv")).unwrap()
    );
}

#[test]
fn manifest_records_inputs_and_outputs() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["synth", "--seed", "3", "--n-pois", "80", "--out", "w"],
    );
    ok(d.path(), &["link", "--input", "w", "--out", "l"]);
    let m = json(&d.path().join("l/manifest.json"));
    assert_eq!(m["command"], "link");
    assert_eq!(m["started_at"], "2018-11-06T00:00:00Z");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 4);
    let outputs: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["path"].as_str().unwrap())
        .collect();
    assert!(outputs.contains(&"linkage_funnel.csv"));
    assert!(outputs.contains(&"resolved_crosswalk.csv"));
    let manifests = sorted_files(&d.path().join("l"))
        .into_iter()
        .filter(|f| f.ends_with(".json"))
        .count();
    assert_eq!(manifests, 1);
    for o in m["outputs"].as_array().unwrap() {
        let sha = o["sha256"].as_str().unwrap();
        assert_eq!(sha.len(), 64);
        assert!(sha.chars().all(|c| c.is_ascii_hexdigit()));
    }
    let funnel = fs::read_to_string(d.path().join("l/linkage_funnel.csv")).unwrap();
    assert!(funnel.starts_with("stage,count,rate\ncandidate,80,1.0\n"));
}

#[test]
fn impute_emits_one_row_per_window() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["synth", "--seed", "5", "--n-pois", "80", "--out", "w"],
    );
    let stdout = ok(
        d.path(),
        &[
            "impute",
            "--input",
            "w",
            "--election-date",
            "2018-11-06",
            "--methods",
            "mean:1,mean:2,mean:3,mean:4",
            "--out",
            "i",
        ],
    );
    let text = fs::read_to_string(d.path().join("i/imputation_eval.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,window,rmse,r2,mae");
    assert_eq!(lines.len(), 5);
    for (x, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("mean,{},", x + 1)), "{line}");
    }
    // human output rounds to three decimals
    let row = stdout.lines().nth(1).unwrap();
    let rmse = row.split_whitespace().nth(2).unwrap();
    assert_eq!(rmse.split('.').nth(1).unwrap().len(), 3);
}

#[test]
fn planted_disparate_audit_reaches_minimum_p() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--seed", "7", "--out", "w"]);
    ok(
        d.path(),
        &[
            "audit",
            "disparate",
            "--input",
            "w",
            "--election-date",
            "2018-11-06",
            "--baseline",
            "mean",
            "--window",
            "1",
            "--demographic",
            "age",
            "--out",
            "a",
        ],
    );
    let report = json(&d.path().join("a/audit_report.json"));
    let stat = &report["statistics"][0];
    assert_eq!(stat["statistic"], "disparate-age");
    assert_eq!(stat["n"], 41);
    assert!((stat["p_value"].as_f64().unwrap() - 1.0 / 41.0).abs() < 1e-12);
    assert!(stat["value"].as_f64().unwrap() < 0.0);
    let placebo = fs::read_to_string(d.path().join("a/placebo_distribution.csv")).unwrap();
    assert!(placebo.starts_with("day,value,is_focal\n"));
    assert_eq!(placebo.lines().count(), 42);
    assert_eq!(placebo.lines().filter(|l| l.ends_with(",true")).count(), 1);

    ok(
        d.path(),
        &[
            "audit",
            "joint",
            "--input",
            "w",
            "--election-date",
            "2018-11-06",
            "--out",
            "j",
        ],
    );
    assert!(d.path().join("j/placebo_distribution_age.csv").exists());
    assert!(d.path().join("j/placebo_distribution_race.csv").exists());

    ok(
        d.path(),
        &[
            "policy",
            "allocate",
            "--input",
            "w",
            "--election-date",
            "2018-11-06",
            "--bootstrap",
            "200",
            "--out",
            "p",
        ],
    );
    let alloc = fs::read_to_string(d.path().join("p/allocation.csv")).unwrap();
    assert!(alloc.starts_with("group,observed_share,optimal_share,observed_se,optimal_se,percent_difference,significant\n"));
    ok(
        d.path(),
        &[
            "report",
            "--input",
            "w",
            "--election-date",
            "2018-11-06",
            "--out",
            "r",
        ],
    );
    let bins = fs::read_to_string(d.path().join("r/figure_bins.csv")).unwrap();
    assert_eq!(bins.lines().count(), 1 + 20 + 20 + 16 + 40);
}

#[test]
fn config_file_matches_flags() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["synth", "--seed", "9", "--n-pois", "80", "--out", "w"],
    );
    fs::write(
        d.path().join("run.toml"),
        "election-date = 2018-11-06\nwindow = 2\ninput = \"w\"\n",
    )
    .unwrap();
    ok(
        d.path(),
        &[
            "audit",
            "measurement",
            "--config",
            "run.toml",
            "--out",
            "via_config",
        ],
    );
    ok(
        d.path(),
        &[
            "audit",
            "measurement",
            "--input",
            "w",
            "--election-date",
            "2018-11-06",
            "--window",
            "2",
            "--out",
            "via_flags",
        ],
    );
    assert_eq!(
        fs::read(d.path().join("via_config/audit_report.json")).unwrap(),
        fs::read(d.path().join("via_flags/audit_report.json")).unwrap()
    );
    let report = json(&d.path().join("via_config/audit_report.json"));
    assert_eq!(report["baseline"], "mean:2");
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let unknown = run(d.path(), &["audit", "disparate", "--no-such-flag"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));

    let missing_input = run(
        d.path(),
        &[
            "audit",
            "disparate",
            "--input",
            "nowhere",
            "--election-date",
            "2018-11-06",
        ],
    );
    assert_eq!(missing_input.status.code(), Some(1));

    let saturated = run(
        d.path(),
        &["synth", "--c0", "5", "--n-pois", "20", "--out", "s"],
    );
    assert_eq!(saturated.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&saturated.stderr).contains("capture model saturated"));

    let help = run(d.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
}
