use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mchyp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mchyp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn bounds_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = mchyp(
        d,
        &[
            "bounds",
            "--out",
            "one.csv",
            "--set",
            "bounds.epsilon=0.01",
            "--set",
            "bounds.gamma=0.01",
            "--set",
            "bounds.delta=0.05",
            "--set",
            "xi=0.3",
        ],
    );
    ok(&out);
    let text = read(d.join("one.csv"));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let header: Vec<&str> = lines[0].split(',').collect();
    let row: Vec<&str> = lines[1].split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("n_fixed"), "184207");
    let m: f64 = col("m").parse().unwrap();
    assert!((m - 3597.7).abs() < 0.1);

    let out = mchyp(
        d,
        &["bounds", "--out", "eps1.csv", "--set", "bounds.epsilon=1", "--set", "bounds.delta=0.05", "--set", "bounds.gamma=0.2"],
    );
    ok(&out);
    let text = read(d.join("eps1.csv"));
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text.lines().nth(1).unwrap().split(',').nth(5), Some("0"));

    let out = mchyp(
        d,
        &["bounds", "--out", "grid", "--set", "bounds.gamma=0.1"],
    );
    ok(&out);
    assert_eq!(read(d.join("grid/bounds.csv")).lines().count(), 1 + 9);
    assert!(d.join("grid/manifest.txt").exists());
}

#[test]
fn case_study_rerun_from_manifest_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&mchyp(d, &["case-study", "--chains", "1", "--seed", "5", "--out", "a", "--set", "steps=5000"]));
    ok(&mchyp(d, &["case-study", "--config", "a/manifest.txt", "--out", "b"]));
    for name in ["decisions.csv", "error_rates.csv", "stopping_times.csv", "gap.csv", "gap_trace.csv"] {
        assert_eq!(read(d.join("a").join(name)), read(d.join("b").join(name)), "{name}");
    }
    // One chain: one decision row per cell.
    let decisions = read(d.join("a/decisions.csv"));
    let cells = 6 * (5 + 3);
    assert_eq!(decisions.lines().count(), 1 + cells);
    let manifest = read(d.join("a/manifest.txt"));
    assert!(manifest.starts_with("subcommand = case-study\n"));
    assert!(manifest.contains("\nseed = 5\n"));
    assert!(manifest.contains("\nchains = 1\n"));
}

#[test]
fn test_commands_on_oracle_and_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&mchyp(
        d,
        &["test-seq", "--input", "oracle:p=0.1,q=0.1", "--r", "0.3", "--delta", "0.05", "--eps", "0.01", "--chains", "3", "--out", "seq.csv"],
    ));
    let text = read(d.join("seq.csv"));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "chain_id,decision,stopping_time,final_sum,gamma_used");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1) == Some("H0")));

    let mut traj = String::from("step,f\n");
    for i in 0..20_000 {
        traj.push_str(&format!("{},{}\n", i + 1, u8::from(i % 4 == 0)));
    }
    fs::write(d.join("traj.csv"), traj).unwrap();
    ok(&mchyp(
        d,
        &["test-fixed", "--input", "traj.csv", "--r", "0.5", "--n", "1000", "--gamma", "0.5", "--out", "fixed"],
    ));
    let text = read(d.join("fixed/decisions.csv"));
    assert_eq!(text.lines().nth(1).unwrap(), "0,H1,1000,2.5000000000000000e2,5.0000000000000000e-1");
    let manifest = read(d.join("fixed/manifest.txt"));
    assert!(manifest.contains("\ninput = traj.csv\n"));
    assert!(manifest.contains("\nfixed_n = 1000\n"));

    ok(&mchyp(
        d,
        &["test-seq-ni", "--input", "traj.csv", "--r", "0.5", "--gamma", "0.5", "--out", "ni.csv"],
    ));
    assert!(read(d.join("ni.csv")).lines().nth(1).unwrap().starts_with("0,H1,"));
}

#[test]
fn gap_estimate_on_trajectory_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut text = String::from("step,a,b\n");
    let mut x = 0.3f64;
    for i in 0..5000 {
        // Deterministic AR(1)-like recursion with a driving term.
        x = 0.8 * x + 0.2 * (((i * 7919) % 1000) as f64 / 1000.0);
        text.push_str(&format!("{},{},{}\n", i + 1, x, 1.0 - x));
    }
    fs::write(d.join("traj.csv"), text).unwrap();
    ok(&mchyp(d, &["gap-estimate", "--input", "traj.csv", "--columns", "a,b", "--out", "gap.csv"]));
    let out = read(d.join("gap.csv"));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "chain_id,function,gamma_star_hat,eta_final,n_used,autocov_ratio,needs_more");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,all,"));
    assert!(lines[2].starts_with("0,a,"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.cfg"), "chains = 2\nno_such_key = 1\n").unwrap();
    let out = mchyp(d, &["case-study", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let out = mchyp(d, &["test-fixed", "--input", "missing.csv", "--r", "0.3"]);
    assert_eq!(out.status.code(), Some(2));

    let out = mchyp(d, &["test-seq", "--input", "oracle:p=0.1,z=3"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(d.join("short.csv"), "step,f\n1,0\n2,1\n").unwrap();
    let out = mchyp(d, &["gap-estimate", "--input", "short.csv", "--out", "g.csv"]);
    assert_eq!(out.status.code(), Some(2));

    // Burn-in of 30 / 0.01 samples cannot fit into max_samples.
    let out = mchyp(
        d,
        &["case-study", "--out", "fail", "--chains", "2", "--set", "steps=100", "--set", "max_samples=100", "--set", "gamma=0.01"],
    );
    assert_eq!(out.status.code(), Some(3));
    let left: Vec<String> = fs::read_dir(d.join("fail"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(left, vec!["manifest.txt".to_string()]);
}

#[test]
fn synth_data_feeds_a_model_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&mchyp(d, &["synth-data", "--out", "data.csv"]));
    let data = read(d.join("data.csv"));
    assert_eq!(data.lines().count(), 1 + 18);

    fs::write(
        d.join("model.cfg"),
        "data = data.csv\nsteps = 200\nburn_in = 20\ngamma = 0.2\nmax_samples = 3000\n",
    )
    .unwrap();
    ok(&mchyp(
        d,
        &["test-seq", "--input", "model.cfg", "--r", "0.3", "--delta", "0.1", "--eps", "0.1", "--chains", "2", "--out", "mh"],
    ));
    let text = read(d.join("mh/decisions.csv"));
    assert_eq!(text.lines().count(), 3);
    let manifest = read(d.join("mh/manifest.txt"));
    assert!(manifest.contains("\nsource = jakstat\n"));
}
