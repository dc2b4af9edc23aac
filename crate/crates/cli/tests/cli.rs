use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use ordgam::data::load_frame;
use ordgam::inference::predict_category;
use ordgam_cli::{ModelArchive, EXIT_DATA, EXIT_USAGE};

const TRUTH: &str = r#"{
  "n": 1500, "theta": [-1, 0, 1], "stage_column": "iStage",
  "covariate": {"name": "doy", "from": 150, "to": 250, "integer": true},
  "eta": {"type": "sine", "amplitude": 2, "scale": 20}
}"#;

fn ordgam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ordgam"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ordgam(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Simulated data and one fitted model, shared by every test.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("truth.json"), TRUTH).unwrap();
        std::fs::write(root.join("new.csv"), "doy\n160\n213\n240.5\n").unwrap();
        let (truth, data, model) = (
            root.join("truth.json"),
            root.join("d.csv"),
            root.join("m.json"),
        );
        ok(&[
            "simulate",
            "--spec",
            s(&truth),
            "--seed",
            "4",
            "--out",
            s(&data),
        ]);
        ok(&[
            "fit",
            "--data",
            s(&data),
            "--formula",
            "iStage ~ s(doy, k=15)",
            "--K",
            "4",
            "--stages",
            "1,2,3,4",
            "--out",
            s(&model),
        ]);
        Fixture { _dir: dir, root }
    })
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (
        header,
        lines
            .map(|l| l.split(',').map(String::from).collect())
            .collect(),
    )
}

#[test]
fn simulate_is_byte_reproducible() {
    let f = fixture();
    let truth = f.path("truth.json");
    let a = ok(&["simulate", "--spec", s(&truth), "--seed", "9", "--n", "200"]);
    let b = ok(&["simulate", "--spec", s(&truth), "--seed", "9", "--n", "200"]);
    let c = ok(&[
        "simulate",
        "--spec",
        s(&truth),
        "--seed",
        "10",
        "--n",
        "200",
    ]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.starts_with("iStage,doy,eta_true\n"));
    assert_eq!(a.lines().count(), 201);
}

#[test]
fn predict_response_columns_and_reload_agreement() {
    let f = fixture();
    let text = ok(&[
        "predict",
        "--model",
        s(&f.path("m.json")),
        "--newdata",
        s(&f.path("new.csv")),
        "--type",
        "response",
    ]);
    let (header, rows) = csv_rows(&text);
    assert_eq!(
        header,
        ["doy", "p_1", "p_2", "p_3", "p_4", "se_1", "se_2", "se_3", "se_4"]
    );
    assert_eq!(rows.len(), 3);

    let archive = ModelArchive::load(f.path("m.json")).unwrap();
    let nd = load_frame(f.path("new.csv"), &["doy".to_string()], &[], b',').unwrap();
    let direct = predict_category(&archive.model, &nd).unwrap();
    for (i, row) in rows.iter().enumerate() {
        let p: Vec<f64> = row[1..].iter().map(|v| v.parse().unwrap()).collect();
        assert!((p[..4].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 0..4 {
            assert!((p[k] - direct.probs[(i, k)]).abs() <= 1e-12);
            assert!((p[4 + k] - direct.se[(i, k)]).abs() <= 1e-12);
        }
    }
}

#[test]
fn predict_other_scales() {
    let f = fixture();
    let (m, nd) = (f.path("m.json"), f.path("new.csv"));
    let leq = ok(&[
        "predict",
        "--model",
        s(&m),
        "--newdata",
        s(&nd),
        "--type",
        "cumulative-leq",
    ]);
    let (h, rows) = csv_rows(&leq);
    assert_eq!(h, ["doy", "leq_1", "leq_2", "leq_3", "leq_4"]);
    assert!(rows.iter().all(|r| r[4] == "1"));
    let geq = ok(&[
        "predict",
        "--model",
        s(&m),
        "--newdata",
        s(&nd),
        "--type",
        "cumulative-geq",
    ]);
    assert!(csv_rows(&geq).1.iter().all(|r| r[1] == "1"));
    let json = f.path("link.json");
    let link = ok(&[
        "predict",
        "--model",
        s(&m),
        "--newdata",
        s(&nd),
        "--type",
        "link",
        "--level",
        "0.9",
        "--draws",
        "300",
        "--seed",
        "2",
        "--json",
        s(&json),
    ]);
    let (h, rows) = csv_rows(&link);
    assert_eq!(
        h,
        [
            "doy",
            "eta",
            "se",
            "lower",
            "upper",
            "sim_lower",
            "sim_upper"
        ]
    );
    for r in rows {
        let v: Vec<f64> = r.iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[3] < v[1] && v[1] < v[4]);
        assert!(v[5] < v[1] && v[1] < v[6]);
    }
    let mirror: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(mirror["columns"][1], "eta");
    assert_eq!(mirror["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn transitions_outputs_and_thread_independence() {
    let f = fixture();
    let m = f.path("m.json");
    let run = |threads: &str, tag: &str| {
        let (out, dens, sum) = (
            f.path(&format!("ts_{tag}.csv")),
            f.path(&format!("dens_{tag}.csv")),
            f.path(&format!("sum_{tag}.csv")),
        );
        ok(&[
            "--threads",
            threads,
            "transitions",
            "--model",
            s(&m),
            "--draws",
            "200",
            "--seed",
            "7",
            "--out",
            s(&out),
            "--density",
            s(&dens),
            "--summary",
            s(&sum),
        ]);
        [out, dens, sum].map(|p| std::fs::read(p).unwrap())
    };
    let one = run("1", "a");
    let four = run("4", "b");
    assert_eq!(one, four);
    let text = String::from_utf8(one[0].clone()).unwrap();
    assert!(text.starts_with("threshold,from_stage,to_stage,doy,upward\n"));
    let summary = String::from_utf8(one[2].clone()).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn quantile_day_rate_and_residuals() {
    let f = fixture();
    let m = f.path("m.json");
    let q = ok(&[
        "quantile-day",
        "--model",
        s(&m),
        "--stage-k",
        "2",
        "--p",
        "0.5,0.9",
    ]);
    let (h, rows) = csv_rows(&q);
    assert_eq!(h, ["stage", "p", "doy", "achieved"]);
    assert_eq!(rows.len(), 2);

    let r = ok(&["rate", "--model", s(&m), "--grid", "160:170:2"]);
    let (h, rows) = csv_rows(&r);
    assert_eq!(h.len(), 9);
    assert_eq!(rows.len(), 6);

    let plot = f.path("plot.csv");
    let res = ok(&[
        "residuals",
        "--model",
        s(&m),
        "--data",
        s(&f.path("d.csv")),
        "--seed",
        "3",
        "--replicates",
        "2",
        "--against",
        "doy",
        "--plot",
        s(&plot),
    ]);
    let (h, rows) = csv_rows(&res);
    assert_eq!(h, ["obs", "replicate", "stage", "eta", "residual"]);
    assert_eq!(rows.len(), 3000);
    assert!(std::fs::read_to_string(plot)
        .unwrap()
        .starts_with("doy,residual,trend\n"));
}

#[test]
fn errors_map_to_exit_codes() {
    let f = fixture();
    let data = f.path("d.csv");
    let no_k = ordgam(&[
        "fit",
        "--data",
        s(&data),
        "--formula",
        "iStage ~ s(doy)",
        "--out",
        "x.json",
    ]);
    assert_eq!(no_k.status.code(), Some(EXIT_USAGE));

    let bad_col = ordgam(&[
        "fit",
        "--data",
        s(&data),
        "--formula",
        "iStage ~ s(day)",
        "--K",
        "4",
        "--out",
        s(&f.path("x.json")),
    ]);
    assert_eq!(bad_col.status.code(), Some(EXIT_DATA));
    assert!(String::from_utf8_lossy(&bad_col.stderr).contains("\"day\""));

    let text = std::fs::read_to_string(f.path("m.json")).unwrap();
    let old = f.path("old.json");
    std::fs::write(
        &old,
        text.replacen("\"format_version\": 1", "\"format_version\": 0", 1),
    )
    .unwrap();
    let mismatch = ordgam(&[
        "predict",
        "--model",
        s(&old),
        "--newdata",
        s(&f.path("new.csv")),
    ]);
    assert_eq!(mismatch.status.code(), Some(EXIT_DATA));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("version"));

    let bad_newdata = f.path("bad.csv");
    std::fs::write(&bad_newdata, "day\n1\n").unwrap();
    let incompatible = ordgam(&[
        "predict",
        "--model",
        s(&f.path("m.json")),
        "--newdata",
        s(&bad_newdata),
    ]);
    assert_eq!(incompatible.status.code(), Some(EXIT_DATA));

    let no_seed = ordgam(&[
        "transitions",
        "--model",
        s(&f.path("m.json")),
        "--draws",
        "10",
    ]);
    assert_eq!(no_seed.status.code(), Some(EXIT_USAGE));
}

#[test]
fn archive_records_provenance() {
    let f = fixture();
    let a = ModelArchive::load(f.path("m.json")).unwrap();
    assert_eq!(a.provenance.rows, 1500);
    assert_eq!(a.provenance.data_sha256.len(), 64);
    assert_eq!(a.model.coding.labels(), ["1", "2", "3", "4"]);
}
