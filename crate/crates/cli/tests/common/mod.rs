#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const WORKED_MODEL: &str = r#"{
  "states": ["Freshman", "Sophomore", "Junior", "Departed"],
  "enrolled": ["Freshman", "Sophomore", "Junior"],
  "absorbing": ["Departed"],
  "matrix": [[0.7, 0.2, 0.1, 0.0], [0.1, 0.6, 0.3, 0.0], [0.3, 0.3, 0.4, 0.0]],
  "inflow": {"Freshman": 0, "Sophomore": 0, "Junior": 0},
  "meta": {"latest_counts": {"Freshman": 100, "Sophomore": 100, "Junior": 100}}
}"#;

/// Three-stage world with 5% departure per term and 500 new Freshmen.
pub const WORLD_MODEL: &str = r#"{
  "states": ["Freshman", "Sophomore", "Junior", "Departed"],
  "enrolled": ["Freshman", "Sophomore", "Junior"],
  "absorbing": ["Departed"],
  "matrix": [[0.665, 0.19, 0.095, 0.05], [0.095, 0.57, 0.285, 0.05], [0.285, 0.285, 0.38, 0.05]],
  "inflow": {"Freshman": 500, "Sophomore": 0, "Junior": 0}
}"#;

pub const IDENTITY_MODEL: &str = r#"{
  "states": ["A", "B", "C", "Departed"],
  "enrolled": ["A", "B", "C"],
  "absorbing": ["Departed"],
  "matrix": [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]],
  "inflow": {"A": 0, "B": 0, "C": 0}
}"#;

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cohortflow"));
    cmd.env_remove("COHORTFLOW_PORT");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cohortflow")
}

pub fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}
