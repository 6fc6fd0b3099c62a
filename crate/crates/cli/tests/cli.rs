use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use remeta::io::parse_results;

fn remeta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_remeta"))
        .args(args)
        .env_remove("REMETA_JOBS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_example(dir: &Path, name: &str) -> String {
    let path = dir.join(format!("{name}.csv"));
    let o = remeta(&[
        "--quiet",
        "example-data",
        name,
        "-o",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    path.to_str().unwrap().to_string()
}

#[test]
fn example_data_rows() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(write_example(dir.path(), "example1")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "study,y1,n1,y0,n0");
    assert_eq!(lines.len(), 19);
    let s15: Vec<&str> = lines[15].split(',').collect();
    assert_eq!((s15[1], s15[3]), ("0", "0"));

    let text = fs::read_to_string(write_example(dir.path(), "example2")).unwrap();
    assert_eq!(text.lines().count(), 17);
    let last: Vec<u64> = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(last[1] + last[3], 58050);

    let text = fs::read_to_string(write_example(dir.path(), "example4")).unwrap();
    assert_eq!(text.lines().next(), Some("study,y,n"));
    assert_eq!(text.lines().count(), 15);

    let o = remeta(&["example-data", "example9"]);
    assert_eq!(code(&o), 64);
}

#[test]
fn fit_writes_result_file_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_example(dir.path(), "example1");
    let out = dir.path().join("hn.csv");
    let o = remeta(&[
        "--json",
        "fit",
        &data,
        "--model",
        "hn",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = parse_results(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    let theta = rows[0].theta.unwrap();
    assert!((theta + 1.353).abs() < 0.01, "{theta}");
    assert!((rows[0].ci_lo.unwrap() + 2.041).abs() < 0.03);
    assert!((rows[0].ci_hi.unwrap() + 0.665).abs() < 0.03);
    assert_eq!(rows[0].rho, None);

    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json[0]["theta"].as_f64().unwrap(), theta);
    assert_eq!(json[0]["method"], "hn");
}

#[test]
fn one_arm_fits() {
    let dir = tempfile::tempdir().unwrap();
    for (name, theta) in [("example3", -4.812), ("example4", -1.377)] {
        let data = write_example(dir.path(), name);
        let out = dir.path().join(format!("{name}-fit.csv"));
        let o = remeta(&[
            "--quiet",
            "fit",
            &data,
            "--model",
            "1sbn",
            "-o",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let rows = parse_results(&fs::read_to_string(&out).unwrap()).unwrap();
        assert!((rows[0].theta.unwrap() - theta).abs() < 0.02, "{name}");
    }
}

#[test]
fn data_format_errors_exit_65() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "study,y1,n1,y0,n0\na,1,10,2,10\nb,1,ten,2,10\n").unwrap();
    let o = remeta(&["fit", bad.to_str().unwrap(), "--model", "hn"]);
    assert_eq!(code(&o), 65);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    fs::write(&bad, "study,y1,n1,y0,n0\na,1,10,2,10\na,1,10,2,10\n").unwrap();
    let o = remeta(&["fit", bad.to_str().unwrap(), "--model", "hn"]);
    assert_eq!(code(&o), 65);
    assert!(stderr(&o).contains("duplicate"), "{}", stderr(&o));
}

#[test]
fn uncorrectable_zero_names_policy_flag() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_example(dir.path(), "example1");
    let o = remeta(&["fit", &data, "--model", "nn", "--policy", "none"]);
    assert_eq!(code(&o), 65);
    assert!(stderr(&o).contains("--policy"), "{}", stderr(&o));
}

#[test]
fn glmm_warns_about_policy() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_example(dir.path(), "example4");
    let o = remeta(&[
        "--quiet", "fit", &data, "--model", "1sbn", "--policy", "all",
    ]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_example(dir.path(), "example1");
    let o = remeta(&["sens", &data, "--method", "proposed-hn", "--pmin", ""]);
    assert_eq!(code(&o), 64, "{}", stderr(&o));
    let o = remeta(&["sens", &data, "--method", "bogus"]);
    assert_eq!(code(&o), 64);
    let o = remeta(&["frobnicate"]);
    assert_eq!(code(&o), 64);
    let o = remeta(&["--help"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn sens_writes_plot_series() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_example(dir.path(), "example1");
    let out = dir.path().join("cs.csv");
    let plot = dir.path().join("cs-plot.csv");
    let o = remeta(&[
        "--quiet",
        "sens",
        &data,
        "--method",
        "copas-shi",
        "--policy",
        "all",
        "--pmin",
        "0.5,0.99,0.1",
        "-o",
        out.to_str().unwrap(),
        "--plot-data",
        plot.to_str().unwrap(),
    ]);
    assert!(matches!(code(&o), 0 | 2), "{}", stderr(&o));
    let rows = parse_results(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!((rows[0].theta.unwrap() + 0.857).abs() < 0.02);

    let series = fs::read_to_string(&plot).unwrap();
    let pmins: Vec<f64> = series
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(pmins, vec![0.99, 0.5, 0.1]);
    let m: Vec<f64> = series
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(m.windows(2).all(|w| w[0] <= w[1]));
}

const SMALL_SCENARIO: &str = "# one-arm design, kept small for speed\n\
dgp = 1sbn\nstudies = 12\ntau2 = 0.3\nn_min = 15\nn_max = 30\n";

#[test]
fn simulate_is_deterministic_across_runs_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("small.conf");
    fs::write(&sc, SMALL_SCENARIO).unwrap();
    let run = |jobs: &str, name: &str| {
        let out = dir.path().join(name);
        let o = remeta(&[
            "--quiet",
            "simulate",
            sc.to_str().unwrap(),
            "--reps",
            "6",
            "--seed",
            "42",
            "--jobs",
            jobs,
            "-o",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(out).unwrap()
    };
    let a = run("1", "a.csv");
    let b = run("1", "b.csv");
    let c = run("3", "c.csv");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("scenario,reps,"));
    assert_eq!(text.lines().count(), 1 + 7);
}

#[test]
fn simulate_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bad.conf");
    fs::write(&sc, format!("{SMALL_SCENARIO}colour = blue\nflavour = 3\n")).unwrap();
    let o = remeta(&["simulate", sc.to_str().unwrap(), "--reps", "2"]);
    assert_eq!(code(&o), 64);
    let err = stderr(&o);
    assert!(err.contains("colour") && err.contains("flavour"), "{err}");
}
