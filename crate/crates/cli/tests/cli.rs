use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kinetic-layer"))
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(
        &path,
        format!("# small run\nr_minus = 1\nr_plus = 2\nepsilon_list = 0.2, 0.1\nn_phi = 16\nn_r = 21\nn_eta = 31\n{extra}"),
    )
    .unwrap();
    path
}

#[test]
fn every_subcommand_writes_its_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let cases = [
        ("milne", vec!["eta", "phi", "f", "q", "r"]),
        ("transport", vec!["r", "phi", "u", "u_bar"]),
        ("expand", vec!["epsilon", "sup_error", "fitted_order"]),
        ("counterexample", vec!["epsilon", "u_num", "U_num", "u_pred", "U_pred", "discrepancy"]),
        ("characteristics", vec!["family", "curve", "eta", "phi", "energy"]),
    ];
    for (cmd, header) in cases {
        let out = dir.path().join(format!("{cmd}.csv"));
        let status = bin()
            .args([cmd, "--config"])
            .arg(&cfg)
            .arg("--output")
            .arg(&out)
            .env("KINETIC_LAYER_THREADS", "1")
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0), "{cmd}");
        let (h, rows) = read_csv(&out);
        assert_eq!(h, header, "{cmd}");
        assert!(!rows.is_empty(), "{cmd}");
        for row in &rows {
            for v in row.iter().skip(if cmd == "characteristics" { 1 } else { 0 }) {
                assert!(v.parse::<f64>().map(|x| !x.is_nan()).unwrap_or(false) || cmd == "expand", "{cmd}: {v}");
            }
        }
    }
}

#[test]
fn output_key_and_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("chars.csv");
    let cfg = small_config(dir.path(), &format!("output = {}\n", target.display()));
    let status = bin().args(["characteristics", "--config"]).arg(&cfg).status().unwrap();
    assert!(status.success());
    assert!(target.exists());

    let out = bin().args(["characteristics", "--set", "n_phi=4", "--set", "n_eta=11"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("family,curve,eta,phi,energy\n"));
}

#[test]
fn bad_configuration_exits_with_one() {
    let out = bin().args(["milne", "--set", "n_grazing=0.9"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["transport", "--set", "nonsense=1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["no-such-command"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn property_failure_exits_with_two() {
    // a single coarse epsilon cannot show a discrepancy of 0.05 at n = 0.01
    let out = bin()
        .args(["counterexample", "--set", "n_grazing=0.01", "--set", "epsilon_list=0.1", "--output", "-"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
