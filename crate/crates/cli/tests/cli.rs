use std::path::Path;
use std::process::{Command, Output};

fn subdiff(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subdiff")).arg("--out").arg(out).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn column(csv_text: &str, name: &str) -> Vec<String> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let i = rdr.headers().unwrap().iter().position(|h| h == name).unwrap();
    rdr.records().map(|r| r.unwrap()[i].to_string()).collect()
}

#[test]
fn ladder_reaches_infinity() {
    let dir = tempfile::tempdir().unwrap();
    let o = subdiff(dir.path(), &["ladder", "--d", "1", "--alpha", "0.5", "--p", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("ladder.csv")).unwrap();
    assert_eq!(column(&text, "p1").last().unwrap(), "inf");
}

#[test]
fn energy_has_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let o = subdiff(dir.path(), &["--strict", "energy", "--trials", "10000", "--alpha", "0.3", "--n", "64"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("energy.csv")).unwrap();
    let v = column(&text, "violations");
    assert_eq!(v.len(), 10_000);
    assert!(v.iter().all(|x| x == "0"));
}

#[test]
fn fracderiv_order_for_t_squared() {
    let dir = tempfile::tempdir().unwrap();
    let o = subdiff(dir.path(), &["fracderiv", "--alpha", "0.5", "--fn", "t2", "--refine", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("fitted order")).unwrap().to_string();
    let k: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!((k - 1.5).abs() < 0.1, "{line}");
    assert!(dir.path().join("convergence.svg").exists());
}

#[test]
fn plot_of_empty_table_has_empty_axes() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("empty.csv");
    std::fs::write(&table, "level,n,h,error,order,config_hash\n").unwrap();
    let o = subdiff(dir.path(), &["plot", "--table", table.to_str().unwrap(), "--kind", "convergence"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(dir.path().join("empty.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(!svg.contains("class=\"series\""));
}

#[test]
fn plot_reports_slope_and_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("conv.csv");
    let mut text = String::from("level,n,h,error,order,config_hash\n");
    for i in 0..5 {
        let h = 0.1 / 2f64.powi(i);
        text.push_str(&format!("{i},{},{h},{},,abc\n", 10 << i, 2.0 * h * h));
    }
    std::fs::write(&table, text).unwrap();
    let render = |name: &str| {
        let target = dir.path().join(name);
        let o = subdiff(dir.path(), &["plot", "--table", table.to_str().unwrap(), "--kind", "convergence", "--output", target.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(target).unwrap()
    };
    let (a, b) = (render("a.svg"), render("b.svg"));
    assert_eq!(a, b);
    let svg = String::from_utf8(a).unwrap();
    assert_eq!(svg.matches("class=\"series\"").count(), 1);
    let note = svg.split("<text id=\"slope\"").nth(1).unwrap();
    let k: f64 = note.split("slope ").nth(1).unwrap().split('<').next().unwrap().parse().unwrap();
    assert!((k - 2.0).abs() < 1e-3);
}

#[test]
fn plot_rejects_wrong_schema() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.csv");
    std::fs::write(&table, "x,y\n1,2\n").unwrap();
    let o = subdiff(dir.path(), &["plot", "--table", table.to_str().unwrap(), "--kind", "levelset"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("schema mismatch"));
}

#[test]
fn same_seed_same_tables() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["--seed", "11", "apriori", "--seeds", "3", "--refine", "false"];
    assert!(subdiff(a.path(), &args).status.success());
    assert!(subdiff(b.path(), &args).status.success());
    let read = |d: &Path| std::fs::read(d.join("apriori.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));

    let c = tempfile::tempdir().unwrap();
    assert!(subdiff(c.path(), &["--seed", "12", "apriori", "--seeds", "3", "--refine", "false"]).status.success());
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn every_row_carries_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    assert!(subdiff(dir.path(), &["embed", "--id", "E-band", "--seeds", "4"]).status.success());
    let text = std::fs::read_to_string(dir.path().join("ratios.csv")).unwrap();
    let hashes = column(&text, "config_hash");
    assert_eq!(hashes.len(), 8);
    assert_eq!(hashes[0].len(), 16);
    assert!(hashes.iter().all(|h| h == &hashes[0]));

    // A different parameter gives a different hash.
    let other = tempfile::tempdir().unwrap();
    assert!(subdiff(other.path(), &["embed", "--id", "E-band", "--seeds", "5"]).status.success());
    let text = std::fs::read_to_string(other.path().join("ratios.csv")).unwrap();
    assert_ne!(column(&text, "config_hash")[0], hashes[0]);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[ladder]\nd = 3\nalpha = 0.5\n").unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["--config", cfg.to_str().unwrap(), "ladder"];
        args.extend_from_slice(extra);
        let o = subdiff(dir.path(), &args);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(dir.path().join("ladder.csv")).unwrap()
    };
    let from_file = run(&[]);
    let from_flag = run(&["--d", "1"]);
    assert_ne!(column(&from_file, "p1"), column(&from_flag, "p1"));

    std::fs::write(&cfg, "[ladder]\nbogus = 1\n").unwrap();
    let o = subdiff(dir.path(), &["--config", cfg.to_str().unwrap(), "ladder"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn hypothesis_violation_names_the_condition() {
    let dir = tempfile::tempdir().unwrap();
    let o = subdiff(dir.path(), &["embed", "--id", "E-low-p", "--d", "3", "--alpha", "0.5", "--p", "1.2", "--q", "1000"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("E-low-p") && err.contains("q"), "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = subdiff(dir.path(), &["ladder", "--nonsense", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = subdiff(&blocker.join("sub"), &["ladder"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("output directory"));
}

#[test]
fn strict_mode_exits_3_on_failed_check() {
    let dir = tempfile::tempdir().unwrap();
    // Eight cells per axis are too coarse for the 1e-2 error threshold.
    let args = ["convergence", "--n0", "4", "--levels", "2"];
    let lax = subdiff(dir.path(), &args);
    assert_eq!(lax.status.code(), Some(0), "{}", stderr(&lax));
    let mut strict = vec!["--strict"];
    strict.extend_from_slice(&args);
    let o = subdiff(dir.path(), &strict);
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains(": FAIL"));
}
