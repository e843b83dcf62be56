//! End-to-end runs of the `tqnf` binary.

use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;
use tqnf::{AtomRecord, AtomicSymbol, Symbol};

fn run(dir: &Path, config: &str, command: &str, out: &str) -> i32 {
    let cfg = dir.join(format!("{out}.toml"));
    fs::write(&cfg, config).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_tqnf"))
        .args(["--config", cfg.to_str().unwrap(), "--out", dir.join(out).to_str().unwrap(), "--command", command])
        .status()
        .unwrap();
    status.code().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn verify_at_zero_epsilon_gives_zero_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), "epsilon = 0.0\nmode_box_M = 6\norder_K = 2\n", "verify", "v"), 0);
    for name in ["verify_qnf_0_0.csv", "verify_ebk_0_0.csv"] {
        let csv = fs::read_to_string(dir.path().join("v").join(name)).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "n_1,n_2,lambda_matrix,lambda_formula,abs_err");
        let mut rows = 0;
        for line in lines {
            assert_eq!(line.rsplit(',').next().unwrap(), "0", "{name}: {line}");
            rows += 1;
        }
        assert!(rows > 0);
    }
}

#[test]
fn resonant_frequency_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), "omega = [1.0, 1.0]\n", "diophantine", "d"), 3);
    let rec = read_json(&dir.path().join("d").join("error.json"));
    assert_eq!(rec["kind"], "ResonantFrequency");
    assert_eq!(rec["worst_q"], serde_json::json!([1, -1]));
    assert_eq!(rec["exit_code"], 3);
}

#[test]
fn validation_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), "order_K = 9\n", "qnf", "a"), 2);
    assert_eq!(read_json(&dir.path().join("a").join("error.json"))["kind"], "Validation");
    assert_eq!(run(dir.path(), "[[potential]]\nre = 1.0\nim = 0.0\np = 0.1234567\nq = [1, 0]\n", "qnf", "b"), 2);
    assert_eq!(read_json(&dir.path().join("b").join("error.json"))["kind"], "Parse");
}

#[test]
fn qnf_first_order_is_mean_part_of_potential() {
    let dir = tempfile::tempdir().unwrap();
    // Canonical V plus 0.3 cos t + 0.2 cos 2t, both x-independent.
    let mut records = AtomicSymbol::<f64>::canonical(2).to_records();
    for (p, a) in [(1.0, 0.15), (-1.0, 0.15), (2.0, 0.1), (-2.0, 0.1)] {
        records.push(AtomRecord { re: a, im: 0.0, p, q: vec![0, 0] });
    }
    let mut cfg = String::from("order_K = 2\n");
    for r in &records {
        cfg += &format!("[[potential]]\nre = {:?}\nim = {:?}\np = {:?}\nq = [{}, {}]\n", r.re, r.im, r.p, r.q[0], r.q[1]);
    }
    assert_eq!(run(dir.path(), &cfg, "qnf", "q"), 0);
    let rep = read_json(&dir.path().join("q").join("qnf.json"));
    let b1: Vec<AtomRecord> = serde_json::from_value(rep["result"]["quantum"][0]["normal_form"]["orders"][0]["b"].clone()).unwrap();
    let v: Symbol = AtomicSymbol::from_records(&records, 2).unwrap();
    assert_eq!(b1, v.mean_part().to_records());
    assert_eq!(b1.len(), 4);
}

#[test]
fn identical_configs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "epsilon = [1e-3, 5e-4]\nmode_box_M = 6\nkam_steps = 1\n";
    for command in ["verify", "kam", "qnf", "constants"] {
        assert_eq!(run(dir.path(), cfg, command, &format!("{command}_a")), 0);
        assert_eq!(run(dir.path(), cfg, command, &format!("{command}_b")), 0);
        let a = dir.path().join(format!("{command}_a"));
        let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            let x = fs::read(a.join(&name)).unwrap();
            let y = fs::read(dir.path().join(format!("{command}_b")).join(&name)).unwrap();
            assert_eq!(x, y, "{command}: {name:?} differs");
        }
    }
}
