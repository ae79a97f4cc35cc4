//! Config-driven experiment grids: (scenario x policy x seed) trials,
//! per-trial result files, and an aggregate summary table.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::experiment::{
    dyadic_checkpoints, run_experiment, BoundEvalSpec, BoundEvalSpecRef, ExperimentOptions,
    ExperimentResult, PolicyDescriptor,
};
use crate::harness::scenario::{NoiseLaw, ScenarioSpec, SignalLaw};

/// Scenario fields shared by every trial of a suite; the per-trial seed is
/// filled in from the seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    pub u_law: SignalLaw,
    pub noise: NoiseLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_scale: Option<f64>,
    #[serde(default = "default_true")]
    pub rescale_u: bool,
}

fn default_true() -> bool {
    true
}

fn default_horizon() -> u64 {
    1 << 12
}

impl ScenarioConfig {
    pub fn with_seed(&self, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            m: self.m,
            n: self.n,
            k: self.k,
            horizon: self.horizon,
            u_law: self.u_law.clone(),
            noise: self.noise,
            phi_scale: self.phi_scale,
            seed,
            rescale_u: self.rescale_u,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub parallel: bool,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub policies: Vec<PolicyDescriptor>,
    #[serde(default)]
    pub with_decomposition: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundEvalSpec>,
    /// Checkpoints for the aggregate table; defaults to the dyadic grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl SuiteConfig {
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn checkpoints(&self) -> Vec<u64> {
        self.checkpoints
            .clone()
            .unwrap_or_else(|| dyadic_checkpoints(self.scenario.horizon))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialFailure {
    pub policy: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug)]
pub struct SuiteOutput {
    pub result_files: Vec<PathBuf>,
    pub summary_file: PathBuf,
    pub failures: Vec<TrialFailure>,
}

/// Runs the full (policy x seed) grid, writing one line-delimited JSON
/// result file per trial plus `summary.csv` with the ensemble mean and
/// standard deviation of the regret rate per checkpoint. Trial failures are
/// recorded and do not stop the suite.
pub fn run_suite(config: &SuiteConfig, output_override: Option<&Path>) -> Result<SuiteOutput> {
    let out_dir = output_override.unwrap_or(&config.output_dir).to_path_buf();
    fs::create_dir_all(&out_dir)
        .map_err(|source| Error::Io { path: out_dir.clone(), source })?;

    let options = ExperimentOptions {
        with_decomposition: config.with_decomposition,
        bound: config.bound.as_ref().map(BoundEvalSpecRef::from),
    };
    let trials: Vec<(usize, u64)> = config
        .policies
        .iter()
        .enumerate()
        .flat_map(|(pi, _)| config.seeds.iter().map(move |&s| (pi, s)))
        .collect();

    let run_one = |&(pi, seed): &(usize, u64)| -> (usize, u64, Result<ExperimentResult>) {
        let spec = config.scenario.with_seed(seed);
        (pi, seed, run_experiment(&spec, &config.policies[pi], &options))
    };
    let outcomes: Vec<(usize, u64, Result<ExperimentResult>)> = if config.parallel {
        trials.par_iter().map(run_one).collect()
    } else {
        trials.iter().map(run_one).collect()
    };

    let mut result_files = Vec::new();
    let mut failures = Vec::new();
    let mut results: Vec<ExperimentResult> = Vec::new();
    for (pi, seed, outcome) in outcomes {
        let policy = config.policies[pi].name();
        match outcome {
            Ok(result) => {
                let file = out_dir.join(format!("{policy}__seed{seed}.jsonl"));
                write_result_file(&file, &result)?;
                result_files.push(file);
                results.push(result);
            }
            Err(e) => {
                log::warn!("trial {policy} seed {seed} failed: {e}");
                failures.push(TrialFailure { policy, seed, error: e.to_string() });
            }
        }
    }

    let summary_file = out_dir.join("summary.csv");
    write_summary(&summary_file, config, &results)?;

    if !failures.is_empty() {
        let log_path = out_dir.join("failures.log");
        let mut text = String::new();
        for f in &failures {
            text.push_str(&format!("{}\tseed={}\t{}\n", f.policy, f.seed, f.error));
        }
        fs::write(&log_path, text).map_err(|source| Error::Io { path: log_path, source })?;
    }

    Ok(SuiteOutput { result_files, summary_file, failures })
}

pub fn write_result_file(path: &Path, result: &ExperimentResult) -> Result<()> {
    let line = serde_json::to_string(result)
        .map_err(|e| Error::Config(format!("serializing result: {e}")))?;
    let mut file = fs::File::create(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    writeln!(file, "{line}").map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_result_file(path: &Path) -> Result<Vec<ExperimentResult>> {
    let text =
        fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let result: ExperimentResult = serde_json::from_str(line).map_err(|e| {
            Error::MalformedRow { path: path.to_path_buf(), row: i + 1, reason: e.to_string() }
        })?;
        out.push(result);
    }
    Ok(out)
}

/// Ensemble mean and standard deviation of `R_hat_t / t` per checkpoint,
/// one row per (policy, checkpoint), in config order.
fn write_summary(path: &Path, config: &SuiteConfig, results: &[ExperimentResult]) -> Result<()> {
    let checkpoints = config.checkpoints();
    let mut text = String::from("policy,t,mean_regret_rate,std_regret_rate,trials\n");
    for desc in &config.policies {
        let name = desc.name();
        let of_policy: Vec<&ExperimentResult> =
            results.iter().filter(|r| r.policy_name == name).collect();
        for &t in &checkpoints {
            let rates: Vec<f64> =
                of_policy.iter().filter_map(|r| r.regret_rate_at(t)).collect();
            if rates.is_empty() {
                continue;
            }
            let n = rates.len() as f64;
            let mean = rates.iter().sum::<f64>() / n;
            let std = if rates.len() > 1 {
                (rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            text.push_str(&format!("{name},{t},{mean},{std},{}\n", rates.len()));
        }
    }
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::{FtaslVariant, TauSchedule};
    use crate::solvers::SolverKind;

    fn small_config(dir: &Path) -> SuiteConfig {
        SuiteConfig {
            output_dir: dir.to_path_buf(),
            seeds: vec![1, 2, 3],
            parallel: false,
            scenario: ScenarioConfig {
                m: 8,
                n: 12,
                k: 2,
                horizon: 16,
                u_law: SignalLaw::Constant,
                noise: NoiseLaw::StandardGaussian,
                phi_scale: None,
                rescale_u: true,
            },
            policies: vec![
                PolicyDescriptor::Ftasl {
                    variant: FtaslVariant::Agile,
                    solver: SolverKind::Iht,
                    step: None,
                    tau_schedule: TauSchedule::Log2,
                    name: None,
                },
                PolicyDescriptor::Oist { mu: None, lambda: 0.01, name: None },
            ],
            with_decomposition: false,
            bound: None,
            checkpoints: None,
        }
    }

    #[test]
    fn suite_writes_per_trial_files_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config(dir.path());
        let out = run_suite(&config, None).unwrap();
        assert_eq!(out.result_files.len(), 6);
        assert!(out.failures.is_empty());
        let summary = fs::read_to_string(&out.summary_file).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        // header + 2 policies x 5 checkpoints {1,2,4,8,16}
        assert_eq!(lines.len(), 1 + 2 * 5);
        assert!(lines[0].starts_with("policy,t,"));

        let read = read_result_file(&out.result_files[0]).unwrap();
        assert_eq!(read.len(), 1);
        assert_eq!(read[0].trace.len(), 16);
    }

    #[test]
    fn empty_grid_is_a_successful_noop() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_config(dir.path());
        config.policies.clear();
        let out = run_suite(&config, None).unwrap();
        assert!(out.result_files.is_empty());
        let summary = fs::read_to_string(&out.summary_file).unwrap();
        assert_eq!(summary.lines().count(), 1);
    }

    #[test]
    fn rerun_summary_is_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let config = small_config(dir_a.path());
        let a = run_suite(&config, None).unwrap();
        let b = run_suite(&config, Some(dir_b.path())).unwrap();
        let sa = fs::read_to_string(&a.summary_file).unwrap();
        let sb = fs::read_to_string(&b.summary_file).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn parallel_suite_matches_sequential_numeric_output() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut config = small_config(dir_a.path());
        let seq = run_suite(&config, None).unwrap();
        config.parallel = true;
        let par = run_suite(&config, Some(dir_b.path())).unwrap();
        assert_eq!(
            fs::read_to_string(&seq.summary_file).unwrap(),
            fs::read_to_string(&par.summary_file).unwrap()
        );
    }

    #[test]
    fn output_override_redirects_everything() {
        let dir = tempfile::tempdir().unwrap();
        let override_dir = dir.path().join("elsewhere");
        let config = small_config(&dir.path().join("unused"));
        let out = run_suite(&config, Some(&override_dir)).unwrap();
        assert!(out.summary_file.starts_with(&override_dir));
        for f in &out.result_files {
            assert!(f.starts_with(&override_dir));
        }
    }
}
