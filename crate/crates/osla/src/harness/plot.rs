//! Tidy plot tables extracted from result files: one `(policy, t, value,
//! seed)` row per checkpoint, comma-separated with a one-line header.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::experiment::{dyadic_checkpoints, ExperimentResult};
use crate::harness::suite::read_result_file;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    /// `R_hat_t / t` at the dyadic checkpoints.
    RegretVsTime,
    /// Cumulative policy wall time (ns) at the same checkpoints.
    ExecTimeVsT,
}

/// Renders the tidy table for a set of results, sorted by (policy, seed, t).
pub fn emit_plot_data(results: &[ExperimentResult], kind: PlotKind) -> Result<String> {
    if results.is_empty() {
        return Err(Error::EmptyInput("emit_plot_data results"));
    }
    let mut rows: Vec<(String, u64, String, u64)> = Vec::new();
    for r in results {
        for t in dyadic_checkpoints(r.spec.horizon) {
            let value = match kind {
                PlotKind::RegretVsTime => r
                    .regret_rate_at(t)
                    .map(|v| format!("{v}"))
                    .ok_or(Error::EmptyInput("trace shorter than checkpoint"))?,
                PlotKind::ExecTimeVsT => r
                    .cumulative_wall_time_at(t)
                    .map(|v| format!("{v}"))
                    .ok_or(Error::EmptyInput("trace shorter than checkpoint"))?,
            };
            rows.push((r.policy_name.clone(), t, value, r.spec.seed));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.3.cmp(&b.3)).then(a.1.cmp(&b.1)));
    let mut out = String::from("policy,t,value,seed\n");
    for (policy, t, value, seed) in rows {
        out.push_str(&format!("{policy},{t},{value},{seed}\n"));
    }
    Ok(out)
}

/// Loads every `*.jsonl` result under a directory, in filename order.
pub fn load_results_dir(dir: impl AsRef<Path>) -> Result<Vec<ExperimentResult>> {
    let dir = dir.as_ref();
    let entries =
        fs::read_dir(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_result_file(&p)?);
    }
    Ok(out)
}
