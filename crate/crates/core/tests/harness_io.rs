use std::fs;
use std::path::Path;
use std::process::Command;

use stochapprox::harness::{
    emit_csv, execute, metadata_path, read_csv, Experiment, ExperimentConfig, ProblemKind, Scheme,
    CSV_HEADER,
};
use stochapprox::steplength::rsa_next;

fn small(problem: ProblemKind, scheme: Scheme, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        problem,
        scheme,
        n: 4,
        iterations: 300,
        replications: 4,
        seed: 11,
        out: out.to_path_buf(),
        saa_samples: 2000,
        pieces: 5,
        pilot_samples: 500,
        ..ExperimentConfig::default()
    }
}

#[test]
fn two_replications_of_one_step_differ() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(ProblemKind::Bimatrix, Scheme::Rsa, &dir.path().join("t.csv"));
    cfg.replications = 2;
    cfg.iterations = 1;
    let runs = Experiment::prepare(cfg).unwrap().run_replications().unwrap();
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().all(|r| r.records.len() == 1));
    assert_ne!(runs[0].final_point, runs[1].final_point);
}

#[test]
fn identical_configs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    execute(small(ProblemKind::Utility, Scheme::Csa, &a)).unwrap();
    execute(small(ProblemKind::Utility, Scheme::Csa, &b)).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let strip = |p: &Path| {
        fs::read_to_string(metadata_path(p))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("out="))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn single_step_trajectory_is_two_lines() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(ProblemKind::Bimatrix, Scheme::Hsa, &dir.path().join("unused.csv"));
    cfg.iterations = 1;
    let run = Experiment::prepare(cfg).unwrap().run_one(0).unwrap();
    let path = dir.path().join("one.csv");
    emit_csv(&[run], &[], &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.ends_with('\n'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_HEADER);
}

#[test]
fn csv_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let summary = execute(small(ProblemKind::Bimatrix, Scheme::Rsa, &out)).unwrap();
    let back = read_csv(&out).unwrap();
    assert_eq!(back.len(), summary.rows.len());
    for (a, b) in summary.rows.iter().zip(&back) {
        assert_eq!(a.k, b.k);
        for (x, y) in [
            (a.gamma, b.gamma),
            (a.mean_sq_error, b.mean_sq_error),
            (a.ci_lo, b.ci_lo),
            (a.ci_hi, b.ci_hi),
            (a.theory_bound, b.theory_bound),
        ] {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn gamma_columns_follow_their_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let column = |scheme: Scheme| -> Vec<f64> {
        let mut cfg = small(ProblemKind::Bimatrix, scheme, &dir.path().join(format!("{scheme:?}.csv")));
        cfg.iterations = 2000;
        cfg.replications = 2;
        cfg.alpha = 0.7;
        execute(cfg).unwrap().rows.iter().map(|r| r.gamma).collect()
    };

    let hsa = column(Scheme::Hsa);
    assert_eq!(hsa[0], 0.7);
    for (k, g) in hsa.iter().enumerate().skip(1) {
        assert_eq!(*g, 0.7 / k as f64);
    }

    let csa = column(Scheme::Csa);
    let drops = csa.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(csa.windows(2).all(|w| w[1] <= w[0]));
    assert!(drops >= 1 && drops < 100, "{drops} drops");

    let dir_rsa = dir.path().join("rsa.csv");
    let mut cfg = small(ProblemKind::Bimatrix, Scheme::Rsa, &dir_rsa);
    cfg.iterations = 2000;
    cfg.replications = 2;
    let experiment = Experiment::prepare(cfg.clone()).unwrap();
    let c = experiment.constants.eta / 2.0;
    let rsa = column(Scheme::Rsa);
    for w in rsa.windows(2) {
        assert_eq!(w[1], rsa_next(w[0], c).unwrap());
    }
}

#[test]
fn cli_help_lists_defaults() {
    let out = Command::new(env!("CARGO_BIN_EXE_sa-harness")).arg("--help").output().unwrap();
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--problem", "--scheme", "--n", "--iters", "--eta", "--eps", "--theta", "--alpha",
        "--gamma0", "--replications", "--seed", "--out", "--config",
    ] {
        assert!(help.contains(flag), "missing {flag}");
    }
    assert!(help.contains("[default: 4000]"));
    assert!(help.contains("[default: 50]"));
}

#[test]
fn cli_flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("cli.csv");
    fs::write(
        &cfg,
        format!(
            "# small bimatrix run\nproblem=bimatrix\nscheme=csa\nn=4\niters=50\nreplications=3\n\
             saa-samples=2000\npilot-samples=200\nout={}\n",
            out.display()
        ),
    )
    .unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_sa-harness"))
        .args(["--config", cfg.to_str().unwrap(), "--iters", "20", "--scheme", "hsa"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(read_csv(&out).unwrap().len(), 20);
    let meta = fs::read_to_string(metadata_path(&out)).unwrap();
    for key in ["scheme=hsa", "iters=20", "lipschitz=", "nu2=", "subgradient_bound=", "reference_sample_size=2000"] {
        assert!(meta.contains(key), "metadata lacks {key}");
    }
}

#[test]
fn cli_rejects_a_single_replication() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sa-harness"))
        .args(["--replications", "1", "--out"])
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("replications"));
}

#[test]
fn log_interval_brackets_log_of_mean_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(ProblemKind::Utility, Scheme::Rsa, &dir.path().join("audit.csv"));
    cfg.n = 10;
    cfg.iterations = 200;
    cfg.replications = 50;
    let rows = execute(cfg).unwrap().rows;
    let outside: Vec<usize> = rows
        .iter()
        .filter(|r| !(r.ci_lo <= r.mean_sq_error.ln() && r.mean_sq_error.ln() <= r.ci_hi))
        .map(|r| r.k)
        .collect();
    assert!(
        outside.is_empty(),
        "ln(mean) outside the log interval at {} of {} iterations (first k = {})",
        outside.len(),
        rows.len(),
        outside[0]
    );
}
