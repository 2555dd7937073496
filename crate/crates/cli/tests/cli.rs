use std::path::Path;
use std::process::{Command, Output};

use pi0kit_core::epv::e_delta_t2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pi0kit(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pi0kit"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("PI0KIT_THREADS", t),
        None => cmd.env_remove("PI0KIT_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_null_matrix(path: &Path, m: usize, n: usize, seed: u64, shuffle: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<String> = (0..m)
        .map(|i| {
            let vals: Vec<String> = (0..n)
                .map(|_| {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    format!("{z}")
                })
                .collect();
            format!("g{i},{}", vals.join(","))
        })
        .collect();
    if shuffle {
        rows.reverse();
        let k = rows.len() / 3;
        rows.rotate_left(k);
    }
    let header: Vec<String> = (0..n).map(|j| format!("s{j}")).collect();
    let text = format!("gene,{}\n{}\n", header.join(","), rows.join("\n"));
    std::fs::write(path, text).unwrap();
}

#[test]
fn epv_table_shape_and_values() {
    let o = pi0kit(&["epv", "--family", "t2", "--n1", "47", "--n2", "25", "--delta", "0:1.2:0.05"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "delta,e_delta");
    assert_eq!(lines.len(), 26);
    for line in &lines[1..] {
        let (d, e) = line.split_once(',').unwrap();
        let d: f64 = d.parse().unwrap();
        let e: f64 = e.parse().unwrap();
        assert_eq!(e, e_delta_t2(d, 47, 25).unwrap());
    }
    let o = pi0kit(&["epv", "--family", "z", "--n", "10", "--delta", "0"], None);
    assert_eq!(stdout(&o), "delta,e_delta\n0,0.5\n");
}

#[test]
fn epv_validates_parameters() {
    let o = pi0kit(&["epv", "--family", "t2", "--n1", "5"], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--n2"));
    let o = pi0kit(&["epv", "--family", "t1", "--n", "1"], None);
    assert!(!o.status.success());
}

#[test]
fn estimate_on_null_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("null.csv");
    write_null_matrix(&input, 2000, 8, 1, false);
    let report = dir.path().join("report.json");
    let o = pi0kit(
        &["estimate", input.to_str().unwrap(), "--out", report.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("method\tpi0\tinitial\n"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["ingestion"]["m"], 2000);
    let results = json["results"].as_array().unwrap();
    assert_eq!(results.len(), 4);
    for r in results {
        let v = r["value"].as_f64().unwrap();
        assert!(v >= 0.9, "{}: {v}", r["method"]);
    }
}

#[test]
fn estimate_is_invariant_to_row_order() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_null_matrix(&a, 500, 6, 2, false);
    write_null_matrix(&b, 500, 6, 2, true);
    let oa = pi0kit(&["estimate", a.to_str().unwrap()], None);
    let ob = pi0kit(&["estimate", b.to_str().unwrap()], None);
    assert!(oa.status.success() && ob.status.success());
    assert_eq!(stdout(&oa), stdout(&ob));
}

#[test]
fn estimate_external_initial_is_labelled() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    write_null_matrix(&input, 300, 6, 3, false);
    let o = pi0kit(
        &["estimate", input.to_str().unwrap(), "--method", "E1", "--initial-pi0", "0.8", "--output", "json"],
        None,
    );
    assert!(o.status.success());
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let results = json["results"].as_array().unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(results[0]["method"], "E1");
    assert_eq!(results[0]["initial"], "external");
    assert_eq!(json["config"]["initial_estimator"]["external"], 0.8);
}

#[test]
fn estimate_two_sample_with_labels() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.tsv");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut text = String::from("id\tA_1\tA_2\tA_3\tB_1\tB_2\tB_3\n");
    for i in 0..400 {
        let shift = if i < 100 { 3.0 } else { 0.0 };
        let vals: Vec<String> = (0..6)
            .map(|j| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                format!("{}", z + if j >= 3 { shift } else { 0.0 })
            })
            .collect();
        text.push_str(&format!("g{i}\t{}\n", vals.join("\t")));
    }
    std::fs::write(&input, text).unwrap();
    let o = pi0kit(&["estimate", input.to_str().unwrap(), "--label-prefix", "_", "--output", "json"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(json["family"], "t_two_sample_two_sided");
    assert_eq!(json["ingestion"]["group_sizes"], serde_json::json!([3, 3]));
    for r in json["results"].as_array().unwrap() {
        let v = r["value"].as_f64().unwrap();
        assert!(v < 0.95, "{}: {v}", r["method"]);
    }
}

#[test]
fn estimate_reports_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "gene,a,b\ng1,1,2\ng2,x,3\n").unwrap();
    let o = pi0kit(&["estimate", input.to_str().unwrap()], None);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert!(o.stdout.is_empty());
}

#[test]
fn simulate_rejects_bad_config_before_running() {
    let o = pi0kit(&["simulate", "--m", "1001"], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("b × r"));
}

#[test]
fn simulate_writes_files_and_oracle_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = pi0kit(
        &[
            "simulate", "--m", "100", "--b", "10", "--r", "10", "--n", "10", "--rho", "0", "--pi0", "0.5,0.9",
            "--reps", "3", "--oracle", "--raw", "--out-dir", out.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let csv = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# {"));
    let header = lines.next().unwrap();
    assert!(header.contains("e_true_mean,e_tilde_mean,e_hat_mean"));
    assert_eq!(lines.count(), 2 * 4);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 0);
    assert_eq!(json["cells"].as_array().unwrap().len(), 8);
    let raw = std::fs::read_to_string(out.join("replications.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 2 * 3 * 4);
}
