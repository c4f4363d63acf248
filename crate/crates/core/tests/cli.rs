use std::fs;
use std::path::Path;
use std::process::Command;

fn gsa() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gsa"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn generate(dir: &Path) {
    let status = gsa()
        .args([
            "generate",
            "--preset",
            "scenario4",
            "--seed",
            "5",
            "--n-per-class",
            "10",
            "-o",
        ])
        .arg(dir)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn run_writes_one_table_per_catalog() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let extra = write(
        dir.path(),
        "extra.gmt",
        "a\t\tg0001\tg0002\tg0003\nb\t\tg0500\tg0600\tnope\n",
    );
    let out = dir.path().join("out");
    let status = gsa()
        .args(["run", "--statistic", "mean", "-B", "50", "--json"])
        .arg("--expression")
        .arg(dir.path().join("expression.tsv"))
        .arg("--labels")
        .arg(dir.path().join("labels.tsv"))
        .arg("--gmt")
        .arg(dir.path().join("sets.gmt"))
        .args(["--gmt", &extra, "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for f in [
        "sets.results.tsv",
        "extra.results.tsv",
        "sets.results.json",
        "genes.tsv",
        "run.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let table = fs::read_to_string(out.join("extra.results.tsv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "name\tm\traw\tstandardized\tside\tp\tp_lo\tp_hi\tq\tq_lo\tq_hi"
    );
    assert_eq!(lines.len(), 3);
    let genes = fs::read_to_string(out.join("genes.tsv")).unwrap();
    assert_eq!(genes.lines().count(), 1001);

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["catalogs"][1]["dropped_members"], 1);
    assert_eq!(meta["catalogs"][0]["analyzed_sets"], 50);
}

#[test]
fn config_rerun_reproduces_tables() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let status = gsa()
        .args([
            "run",
            "--preset",
            "example1",
            "--preset-n-per-class",
            "10",
            "-B",
            "30",
            "--seed",
            "4",
            "-o",
        ])
        .arg(&first)
        .status()
        .unwrap();
    assert!(status.success());
    let status = gsa()
        .arg("run")
        .arg("--config")
        .arg(first.join("run.json"))
        .arg("-o")
        .arg(&second)
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["example1.results.tsv", "genes.tsv", "run.json"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn empty_catalog_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let gmt = write(dir.path(), "tiny.gmt", "a\t\tg0001\nb\t\tnope\tg0002\n");
    let out = gsa()
        .arg("run")
        .arg("--expression")
        .arg(dir.path().join("expression.tsv"))
        .arg("--labels")
        .arg(dir.path().join("labels.tsv"))
        .args(["--gmt", &gmt, "-o"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn all_zero_t_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let expr = write(
        dir.path(),
        "e.tsv",
        "gene\ta\tb\tc\td\n\
         g1\t0\t2\t2\t0\n\
         g2\t1\t3\t3\t1\n\
         g3\t5\t4\t4\t5\n\
         g4\t0\t1\t0\t1\n",
    );
    let labels = write(
        dir.path(),
        "l.tsv",
        "sample_id\tclass\na\t1\nb\t1\nc\t2\nd\t2\n",
    );
    let gmt = write(dir.path(), "s.gmt", "x\t\tg1\tg2\ny\t\tg3\tg4\n");
    let out = gsa()
        .args([
            "run",
            "--expression",
            &expr,
            "--labels",
            &labels,
            "--gmt",
            &gmt,
            "-B",
            "10",
            "-o",
        ])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn usage_errors_exit_one() {
    let out = gsa()
        .args(["run", "--statistic", "median"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = gsa().arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = gsa().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn simulate_is_deterministic() {
    let run = || {
        gsa()
            .args([
                "simulate",
                "--scenarios",
                "1,5",
                "--statistics",
                "mean,maxmean",
                "-B",
                "20",
                "--reps",
                "2",
                "--n-per-class",
                "10",
                "--seed",
                "3",
            ])
            .output()
            .unwrap()
    };
    let a = run();
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, run().stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scenario\tmean_p\tmean_se\tmaxmean_p\tmaxmean_se");
    assert_eq!(lines.len(), 3);
}

#[test]
fn power_table_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("power.tsv");
    let status = gsa()
        .args([
            "power",
            "--m",
            "10",
            "--b-grid",
            "0,0.5",
            "--g-grid",
            "1:1.5:0.5",
            "--null-draws",
            "2000",
            "--alt-draws",
            "1000",
            "--statistics",
            "maxmean,ks",
            "-o",
        ])
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "statistic\tb\tg\tpower\tmc_se");
    assert_eq!(lines.len(), 1 + 2 * 2 * 2);
    for line in &lines[1..] {
        let power: f64 = line.split('\t').nth(3).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&power));
    }
}
