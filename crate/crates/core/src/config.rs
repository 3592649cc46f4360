//! Batch runs: a `RunConfig` (from TOML or the command line) names the jobs,
//! `run` executes them and writes one report file per job under the output
//! directory, plus `summary.json`.
//!
//! Defaults:
//!
//! | key         | default          |
//! |-------------|------------------|
//! | resolutions | case default     |
//! | seed        | 1                |
//! | samples     | 20               |
//! | workers     | 1                |
//! | tol_lp      | `jensen::TOL_LP` |
//! | output      | `$QBPSH_OUT`, else `qbpsh-out` |

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::casebook::{self, lookup_case};
use crate::error::{LabError, Result};
use crate::grid::DomainKind;
use crate::jensen::{duality_csv, duality_sweep_on, TOL_LP};

pub const OUTPUT_ENV: &str = "QBPSH_OUT";
pub const DEFAULT_OUTPUT: &str = "qbpsh-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    RunCase,
    Suite,
    Ladder,
    DualitySweep,
    List,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub cases: Vec<String>,
    /// Per-case resolutions for `run-case`; the ladder for `ladder`; one
    /// entry for `duality-sweep`.
    #[serde(default)]
    pub resolutions: Vec<usize>,
    #[serde(default)]
    pub suite: Option<String>,
    /// Domain kind for `duality-sweep`.
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub tol_lp: Option<f64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            cases: Vec::new(),
            resolutions: Vec::new(),
            suite: None,
            domain: None,
            samples: None,
            seed: None,
            workers: None,
            tol_lp: None,
            output: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    pub fn tol_lp(&self) -> f64 {
        self.tol_lp.unwrap_or(TOL_LP)
    }

    /// Explicit output, else `$QBPSH_OUT`, else `qbpsh-out`.
    pub fn output_dir(&self) -> PathBuf {
        self.output
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
    }

    /// Checks everything that can be checked before running: names, caps,
    /// positive tolerances, a writable output directory.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::InvalidConfig(m));
        if let Some(t) = self.tol_lp {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("tol_lp must be positive, got {t}"));
            }
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        match self.command {
            Command::List => return Ok(()),
            Command::RunCase => {
                if self.cases.is_empty() {
                    return bad("run-case needs at least one case".into());
                }
                if !self.resolutions.is_empty() && self.resolutions.len() != self.cases.len() {
                    return bad("give one resolution per case, or none".into());
                }
                for (k, name) in self.cases.iter().enumerate() {
                    let case = lookup_case(name).map_err(|e| LabError::InvalidConfig(e.to_string()))?;
                    let r = self.resolutions.get(k).copied().unwrap_or(case.default_resolution);
                    check_cap(name, r, case.max_resolution)?;
                }
            }
            Command::Ladder => {
                if self.cases.len() != 1 {
                    return bad("ladder takes exactly one case".into());
                }
                let case = lookup_case(&self.cases[0]).map_err(|e| LabError::InvalidConfig(e.to_string()))?;
                if self.resolutions.len() < 3 {
                    return bad("a ladder needs at least three resolutions".into());
                }
                if self.resolutions.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("ladder resolutions must increase".into());
                }
                for &r in &self.resolutions {
                    check_cap(&self.cases[0], r, case.max_resolution)?;
                }
            }
            Command::Suite => {
                let name = self.suite.as_deref().unwrap_or("");
                if !casebook::SUITES.contains(&name) {
                    return bad(format!("unknown suite `{name}`"));
                }
            }
            Command::DualitySweep => {
                let kind = DomainKind::parse(self.domain.as_deref().unwrap_or("")).map_err(|e| LabError::InvalidConfig(e.to_string()))?;
                if self.resolutions.len() != 1 {
                    return bad("duality-sweep takes one resolution".into());
                }
                if self.samples == Some(0) {
                    return bad("samples must be at least 1".into());
                }
                crate::grid::make_domain(kind, self.resolutions[0], None).map_err(|e| LabError::InvalidConfig(e.to_string()))?;
            }
        }
        let dir = self.output_dir();
        std::fs::create_dir_all(&dir).map_err(|e| LabError::InvalidConfig(format!("output {}: {e}", dir.display())))?;
        let probe = dir.join(".write-test");
        std::fs::write(&probe, b"").map_err(|e| LabError::InvalidConfig(format!("output {} not writable: {e}", dir.display())))?;
        let _ = std::fs::remove_file(probe);
        Ok(())
    }
}

fn check_cap(name: &str, r: usize, cap: usize) -> Result<()> {
    if r > cap {
        return Err(LabError::InvalidConfig(format!("{name}: resolution {r} exceeds the cap {cap}")));
    }
    if r < 5 || r % 2 == 0 {
        return Err(LabError::InvalidConfig(format!("{name}: resolution {r} must be odd and at least 5")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobSummary {
    pub job: String,
    pub passed: bool,
    /// Anchors of failed expectations, or the runtime error.
    pub failures: Vec<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub command: Command,
    pub passed: bool,
    pub jobs: Vec<JobSummary>,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    /// 0 when every expectation passed, 1 when some failed, 3 when a job
    /// errored.
    pub fn exit_code(&self) -> i32 {
        if self.jobs.iter().any(|j| j.failures.iter().any(|f| f.starts_with("error: "))) {
            3
        } else if self.passed {
            0
        } else {
            1
        }
    }
}

pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

struct Job {
    label: String,
    kind: JobKind,
}

enum JobKind {
    Case(String, usize),
    Ladder(String, Vec<usize>),
    Suite(String, u64),
    Sweep(DomainKind, usize, usize, u64, f64),
}

fn jobs_of(cfg: &RunConfig) -> Result<Vec<Job>> {
    Ok(match cfg.command {
        Command::List => Vec::new(),
        Command::RunCase => cfg
            .cases
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let r = cfg.resolutions.get(k).copied().unwrap_or_else(|| lookup_case(name).map(|c| c.default_resolution).unwrap_or(0));
                Job { label: format!("{name}_{r}"), kind: JobKind::Case(name.clone(), r) }
            })
            .collect(),
        Command::Ladder => vec![Job { label: format!("{}_ladder", cfg.cases[0]), kind: JobKind::Ladder(cfg.cases[0].clone(), cfg.resolutions.clone()) }],
        Command::Suite => {
            let name = cfg.suite.clone().expect("validated");
            vec![Job { label: format!("suite_{name}_{}", cfg.seed()), kind: JobKind::Suite(name, cfg.seed()) }]
        }
        Command::DualitySweep => {
            let kind = DomainKind::parse(cfg.domain.as_deref().expect("validated"))?;
            let (r, n) = (cfg.resolutions[0], cfg.samples.unwrap_or(20));
            vec![Job {
                label: format!("duality_{}_{r}_{}", format!("{kind:?}").to_lowercase(), cfg.seed()),
                kind: JobKind::Sweep(kind, r, n, cfg.seed(), cfg.tol_lp()),
            }]
        }
    })
}

/// Runs one job, returning the files it wants written and the failed anchors.
fn execute(job: &Job) -> Result<(Vec<(String, String)>, Vec<String>)> {
    let mut files = Vec::new();
    let mut failures = Vec::new();
    match &job.kind {
        JobKind::Case(name, r) => {
            let rep = casebook::run_case(name, *r)?;
            failures.extend(rep.failures().iter().map(|e| e.anchor.clone()));
            files.push((format!("{}.json", job.label), rep.to_json()));
            files.extend(rep.files);
        }
        JobKind::Ladder(name, rs) => {
            let lad = casebook::ladder(name, rs)?;
            files.push((format!("{}.csv", job.label), lad.to_csv()));
            // wall-clock times vary run to run, so they live apart
            files.push((format!("{}_timing.csv", job.label), lad.timing_csv()));
            for rep in lad.reports {
                failures.extend(rep.failures().iter().map(|e| format!("{}: {}", rep.resolution, e.anchor)));
                files.push((format!("{}_{}.json", rep.case, rep.resolution), rep.to_json()));
                files.extend(rep.files);
            }
        }
        JobKind::Suite(name, seed) => {
            let rep = casebook::property_suite(name, *seed)?;
            failures.extend(rep.expectations.iter().filter(|e| !e.pass).map(|e| e.anchor.clone()));
            files.push((format!("{}.json", job.label), rep.to_json()));
        }
        JobKind::Sweep(kind, r, n, seed, tol) => {
            let rows = duality_sweep_on(*kind, *r, *n, *seed)?;
            let max_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
            if max_gap > *tol {
                failures.push(format!("max duality gap {max_gap:.3e} exceeds {tol:.1e}"));
            }
            files.push((format!("{}.csv", job.label), duality_csv(&rows)));
        }
    }
    Ok((files, failures))
}

/// Registered case identifiers, one per line.
pub fn list_cases() -> String {
    casebook::CASES.iter().map(|c| format!("{}\t{}\n", c.name, c.summary)).collect()
}

/// Validates, runs every job (on `workers` threads), writes the reports and
/// `summary.json`. Errors only on an invalid config or an unwritable file;
/// job failures land in the summary.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    if cfg.command == Command::List {
        return Ok(RunSummary { command: Command::List, passed: true, jobs: Vec::new() });
    }
    let dir = cfg.output_dir();
    let jobs = jobs_of(cfg)?;
    let results: Mutex<Vec<Option<JobSummary>>> = Mutex::new(vec![None; jobs.len()]);
    let write_error: Mutex<Option<LabError>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let workers = cfg.workers.unwrap_or(1).min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(k) else { break };
                let summary = match execute(job) {
                    Ok((files, failures)) => {
                        let mut names = Vec::new();
                        for (name, contents) in files {
                            if let Err(e) = std::fs::write(dir.join(&name), contents) {
                                write_error.lock().expect("lock").get_or_insert(e.into());
                            }
                            names.push(name);
                        }
                        JobSummary { job: job.label.clone(), passed: failures.is_empty(), failures, files: names }
                    }
                    Err(e) => JobSummary { job: job.label.clone(), passed: false, failures: vec![format!("error: {e}")], files: Vec::new() },
                };
                results.lock().expect("lock")[k] = Some(summary);
            });
        }
    });
    if let Some(e) = write_error.into_inner().expect("lock") {
        return Err(e);
    }
    let jobs: Vec<JobSummary> = results.into_inner().expect("lock").into_iter().map(|s| s.expect("every job ran")).collect();
    let summary = RunSummary { command: cfg.command, passed: jobs.iter().all(|j| j.passed), jobs };
    std::fs::write(dir.join("summary.json"), summary.to_json())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::new(Command::Ladder);
        cfg.cases = vec!["ball_alpha_half".into()];
        cfg.resolutions = vec![17, 25, 33];
        cfg.seed = Some(3);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn parses_kebab_commands() {
        let cfg = RunConfig::from_toml("command = \"duality-sweep\"\ndomain = \"Disc1D\"\nresolutions = [7]\n").unwrap();
        assert_eq!(cfg.command, Command::DualitySweep);
        assert!(RunConfig::from_toml("command = \"explode\"").is_err());
        assert!(RunConfig::from_toml("command = \"list\"\nbogus = 1").is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let dir = tempfile::tempdir().unwrap();
        let base = |c: Command| {
            let mut cfg = RunConfig::new(c);
            cfg.output = Some(dir.path().to_path_buf());
            cfg
        };
        let mut c = base(Command::RunCase);
        c.cases = vec!["no_such_case".into()];
        assert!(matches!(c.validate(), Err(LabError::InvalidConfig(_))));
        c.cases = vec!["nonuniqueness_uv".into()];
        c.resolutions = vec![65];
        assert!(matches!(c.validate(), Err(LabError::InvalidConfig(_))));
        let mut l = base(Command::Ladder);
        l.cases = vec!["ball_alpha_half".into()];
        l.resolutions = vec![17];
        assert!(l.validate().is_err());
        let mut t = base(Command::DualitySweep);
        t.domain = Some("Disc1D".into());
        t.resolutions = vec![7];
        t.tol_lp = Some(-1.0);
        assert!(t.validate().is_err());
        t.tol_lp = None;
        assert!(t.validate().is_ok());
    }

    #[test]
    fn sweep_writes_csv_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(Command::DualitySweep);
        cfg.domain = Some("Disc1D".into());
        cfg.resolutions = vec![7];
        cfg.samples = Some(3);
        cfg.output = Some(dir.path().to_path_buf());
        let s = run(&cfg).unwrap();
        assert!(s.passed);
        assert_eq!(s.exit_code(), 0);
        let csv = std::fs::read_to_string(dir.path().join(&s.jobs[0].files[0])).unwrap();
        assert!(csv.starts_with("case,z,S_value,I_value,gap\n"));
        assert_eq!(csv.lines().count(), 4);
        assert!(dir.path().join("summary.json").exists());
    }

    #[test]
    fn list_names_the_examples() {
        let l = list_cases();
        for name in ["ex11_punctured_disc", "ex12_poisson", "nonuniqueness_uv"] {
            assert!(l.contains(name));
        }
    }
}
