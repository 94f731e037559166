use std::path::Path;
use std::process::{Command, Output};

fn svgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svgp")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let out = dir.join("sim");
    let mut args = vec!["simulate", "--genes", "8", "--sv-genes", "3", "--side", "6", "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = svgp(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn simulate_run_diagnose_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--pattern", "spot"]);
    let truth = std::fs::read_to_string(sim.join("truth.tsv")).unwrap();
    assert_eq!(truth.lines().count(), 9);
    assert!(truth.lines().nth(1).unwrap().ends_with("\t1"));

    let run = dir.path().join("run");
    let o = svgp(&[
        "run", "--counts", s(&sim.join("counts.tsv")), "--coords", s(&sim.join("coords.tsv")),
        "--iters", "120", "--chains", "2", "--out", s(&run),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("of 8 genes"));
    let results = std::fs::read_to_string(run.join("results.tsv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(
        lines.next().unwrap(),
        "gene_id\tppi\tbayes_factor\tp_value\tp_adjusted\tselected\tposterior_mean_l\tposterior_mean_phi"
    );
    let ppi: Vec<f64> = lines.map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(ppi.len(), 8);
    assert!(ppi.windows(2).all(|w| w[0] >= w[1]));
    assert!(run.join("traces/chain0.trace").exists() && run.join("traces/chain1.trace").exists());

    let o = svgp(&["diagnose", "--run", s(&run), "--weights", "knn", "--knn", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let moran = std::fs::read_to_string(run.join("morans_i.tsv")).unwrap();
    assert_eq!(moran.lines().count(), 9);
    let health = std::fs::read_to_string(run.join("chain_health.tsv")).unwrap();
    assert!(health.starts_with("gene_id\tppi_chain0\tppi_chain1\tppi_sd\tflagged"));
    let acc = std::fs::read_to_string(run.join("acceptance.tsv")).unwrap();
    assert_eq!(acc.lines().count(), 1 + 2 * 6);

    let o = svgp(&["diagnose", "--run", s(&run), "--values", "raw", "--out", s(&dir.path().join("diag"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("diag/morans_i.tsv").exists());
}

#[test]
fn flags_override_config_and_manifest_records_settings() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--pattern", "linear", "--false-zero", "0.2"]);
    let run = dir.path().join("run");
    let conf = dir.path().join("c.conf");
    std::fs::write(
        &conf,
        format!(
            "# comment\ncounts = {}\ncoords = {}\nout = {}\niters = 5000\nchains = 1\nwrite-traces = false\n",
            sim.join("counts.tsv").display(),
            sim.join("coords.tsv").display(),
            run.display()
        ),
    )
    .unwrap();
    let o = svgp(&["run", "--config", s(&conf), "--iters", "60", "--l-prior", "gamma"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(run.join("manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l == "iters = 60"), "{manifest}");
    assert!(manifest.lines().any(|l| l == "l-prior = gamma"));
    assert!(manifest.lines().any(|l| l == "chains = 1"));
    assert!(!run.join("traces").exists());
}

#[test]
fn binary_mask_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let coords = dir.path().join("coords.csv");
    let mask = dir.path().join("mask.txt");
    let mut c = String::from("spot,x,y\n");
    let mut m = String::new();
    for k in 0..20 {
        c.push_str(&format!("s{k},{},{}\n", k % 5, k / 5));
        m.push_str(if k % 5 < 2 { "high\n" } else { "low\n" });
    }
    std::fs::write(&coords, c).unwrap();
    std::fs::write(&mask, m).unwrap();
    let out = dir.path().join("sim");
    let o = svgp(&["simulate", "--pattern", "binary-mask", "--coords", s(&coords), "--mask", s(&mask), "--genes", "5", "--sv-genes", "2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let counts = std::fs::read_to_string(out.join("counts.tsv")).unwrap();
    assert_eq!(counts.lines().count(), 21);
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let out = dir.path().join("o");
    let io = svgp(&["run", "--counts", s(&missing), "--coords", s(&missing), "--out", s(&out)]);
    assert_eq!(io.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&io.stderr).starts_with("error (io)"));

    let sim = simulate(dir.path(), &[]);
    let counts = sim.join("counts.tsv");
    let coords = sim.join("coords.tsv");
    let bad_number = svgp(&["run", "--counts", s(&counts), "--coords", s(&coords), "--out", s(&out), "--iters", "many"]);
    assert_eq!(bad_number.status.code(), Some(3));
    let bad_choice = svgp(&["run", "--counts", s(&counts), "--coords", s(&coords), "--out", s(&out), "--l-prior", "cauchy"]);
    assert_eq!(bad_choice.status.code(), Some(3));
    let missing_required = svgp(&["run", "--counts", s(&counts), "--out", s(&out)]);
    assert_eq!(missing_required.status.code(), Some(3));

    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "colour = blue\n").unwrap();
    assert_eq!(svgp(&["run", "--config", s(&conf)]).status.code(), Some(3));
    assert_eq!(svgp(&["run", "--no-such-flag"]).status.code(), Some(3));
    assert_eq!(svgp(&["diagnose", "--run", s(&dir.path().join("empty"))]).status.code(), Some(3));
    assert_eq!(svgp(&["--help"]).status.code(), Some(0));
}
