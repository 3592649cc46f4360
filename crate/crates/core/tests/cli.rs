//! The binary: subcommands, exit codes and the output-root variable.

use std::process::Command;

fn qbpsh() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qbpsh"))
}

#[test]
fn list_prints_every_case() {
    let out = qbpsh().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for c in qbpsh::casebook::CASES {
        assert!(text.contains(c.name));
    }
}

#[test]
fn run_case_writes_reports_under_env_root() {
    let dir = tempfile::tempdir().unwrap();
    let status = qbpsh().args(["run", "--case", "ball_alpha_half", "--resolution", "17"]).env("QBPSH_OUT", dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(0));
    for f in ["ball_alpha_half_17.json", "summary.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn invalid_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let over_cap = qbpsh().args(["run", "--case", "nonuniqueness_uv", "--resolution", "65", "--output", out]).status().unwrap();
    assert_eq!(over_cap.code(), Some(2));
    let unknown = qbpsh().args(["run", "--case", "nope", "--output", out]).status().unwrap();
    assert_eq!(unknown.code(), Some(2));
    let short = qbpsh().args(["ladder", "--case", "ball_alpha_half", "--resolutions", "17,25", "--output", out]).status().unwrap();
    assert_eq!(short.code(), Some(2));
    let bad_toml = dir.path().join("bad.toml");
    std::fs::write(&bad_toml, "command = \"run-case\"\ncases = [\"ball_alpha_half\"]\ntol_lp = -1.0\n").unwrap();
    let negative = qbpsh().args(["run", "--config", bad_toml.to_str().unwrap()]).status().unwrap();
    assert_eq!(negative.code(), Some(2));
}

#[test]
fn config_file_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!("command = \"duality-sweep\"\ndomain = \"Disc1D\"\nresolutions = [7]\nsamples = 5\nseed = 1\noutput = {:?}\n", dir.path().join("out")),
    )
    .unwrap();
    let status = qbpsh().args(["run", "--config", cfg.to_str().unwrap()]).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("out/duality_disc1d_7_1.csv")).unwrap();
    assert!(csv.starts_with("case,z,S_value,I_value,gap\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn sweep_subcommand_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let status = qbpsh()
            .args(["duality-sweep", "--domain", "toric", "--resolution", "9", "--samples", "4", "--seed", "3", "--output"])
            .arg(d.path())
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    let name = "duality_toriclog2d_9_3.csv";
    assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
}
