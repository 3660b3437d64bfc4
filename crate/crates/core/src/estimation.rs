//! Transition counting, multi-period pooling, smoothing and model fitting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::{build_trajectories, Trajectory};
use crate::model::{EnrollmentSnapshot, ModelMeta, StateSpace, TermPair, TransitionModel};
use crate::parallel;

/// Observed moves between two consecutive terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    pub term_pair: TermPair,
    /// `counts[row][col]`: students in enrolled state `row` at the from-term
    /// and in state `col` at the to-term.
    pub counts: Vec<Vec<u64>>,
    /// New students first seen at the to-term, per enrolled state.
    pub inflow_counts: Vec<u64>,
    /// True when neither term contributed any observation.
    pub empty: bool,
}

impl TransitionCounts {
    pub fn row_total(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }
}

pub fn count_transitions(
    trajectories: &[Trajectory],
    term_pair: &TermPair,
    space: &StateSpace,
) -> Result<TransitionCounts> {
    let (from, to) = (term_pair.from.index, term_pair.to.index);
    if to != from + 1 {
        return Err(Error::Structure(format!("term pair ({from}, {to}) is not consecutive")));
    }
    let mut counts = vec![vec![0u64; space.n_states()]; space.n_enrolled()];
    let mut inflow_counts = vec![0u64; space.n_enrolled()];
    for t in trajectories {
        match (t.entry_at(from), t.entry_at(to)) {
            (Some(a), Some(b)) => {
                let row = space.row_of_column(a.state).ok_or_else(|| {
                    Error::Structure(format!(
                        "student '{}' continues past absorbing state in term {from}",
                        t.student_id
                    ))
                })?;
                counts[row][b.state] += 1;
            }
            (None, Some(b)) if t.first_term() == to => {
                // entrants recorded directly in an absorbing state are not inflow
                if let Some(row) = space.row_of_column(b.state) {
                    inflow_counts[row] += 1;
                }
            }
            _ => {}
        }
    }
    let empty = counts.iter().flatten().all(|&c| c == 0) && inflow_counts.iter().all(|&c| c == 0);
    Ok(TransitionCounts { term_pair: term_pair.clone(), counts, inflow_counts, empty })
}

/// Counts every pair independently; order of the output follows `pairs`.
pub fn count_all(trajectories: &[Trajectory], pairs: &[TermPair], space: &StateSpace) -> Result<Vec<TransitionCounts>> {
    parallel::map(pairs, |p| count_transitions(trajectories, p, space))
        .into_iter()
        .collect()
}

/// Weighted element-wise sum of per-pair count matrices.
pub fn pool_counts(per_pair: &[TransitionCounts], weights: &[f64]) -> Result<Vec<Vec<f64>>> {
    if per_pair.is_empty() {
        return Err(Error::InvalidArgument("no term pairs to pool".into()));
    }
    check_weights(weights, per_pair.len())?;
    let rows = per_pair[0].counts.len();
    let cols = per_pair[0].counts.first().map_or(0, Vec::len);
    let mut pooled = vec![vec![0.0; cols]; rows];
    for (c, &w) in per_pair.iter().zip(weights) {
        if c.counts.len() != rows || c.counts.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: c.counts.iter().map(Vec::len).sum() });
        }
        for (acc, row) in pooled.iter_mut().zip(&c.counts) {
            for (a, &n) in acc.iter_mut().zip(row) {
                *a += w * n as f64;
            }
        }
    }
    Ok(pooled)
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::InvalidArgument(format!("{} weights for {n} term pairs", weights.len())));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::InvalidArgument("at least one weight must be positive".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    pub row: usize,
    pub label: String,
    pub message: String,
}

impl fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row '{}': {}", self.label, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixEstimate {
    pub matrix: Vec<Vec<f64>>,
    pub diagnostics: Vec<RowDiagnostic>,
}

/// Normalizes pooled counts into a row-stochastic matrix with additive
/// (Laplace) smoothing `alpha`. With `alpha == 0` an unobserved row becomes
/// a self-loop and a diagnostic is recorded.
pub fn estimate_matrix(pooled: &[Vec<f64>], alpha: f64, space: &StateSpace) -> Result<MatrixEstimate> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    if pooled.len() != space.n_enrolled() {
        return Err(Error::DimensionMismatch { expected: space.n_enrolled(), got: pooled.len() });
    }
    let n = space.n_states();
    let mut matrix = Vec::with_capacity(pooled.len());
    let mut diagnostics = Vec::new();
    for (r, row) in pooled.iter().enumerate() {
        if row.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: row.len() });
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pooled count {v} in row '{}' is negative or not finite",
                space.enrolled()[r]
            )));
        }
        let total: f64 = row.iter().sum();
        let denom = total + alpha * n as f64;
        if denom == 0.0 {
            let mut p = vec![0.0; n];
            p[space.enrolled_column(r)] = 1.0;
            matrix.push(p);
            diagnostics.push(RowDiagnostic {
                row: r,
                label: space.enrolled()[r].clone(),
                message: "no observations; imputed as self-loop".into(),
            });
        } else {
            matrix.push(row.iter().map(|&x| (x + alpha) / denom).collect());
        }
    }
    Ok(MatrixEstimate { matrix, diagnostics })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InflowPolicy {
    #[default]
    Mean,
    WeightedMean,
    Last,
}

impl InflowPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            InflowPolicy::Mean => "mean",
            InflowPolicy::WeightedMean => "weighted-mean",
            InflowPolicy::Last => "last",
        }
    }
}

impl fmt::Display for InflowPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InflowPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "weighted-mean" => Ok(Self::WeightedMean),
            "last" => Ok(Self::Last),
            other => Err(Error::InvalidArgument(format!("unknown inflow policy '{other}'"))),
        }
    }
}

/// Combines per-pair entrant counts into one inflow vector. `weights` is
/// only consulted by [`InflowPolicy::WeightedMean`].
pub fn estimate_inflow(per_pair: &[Vec<f64>], policy: InflowPolicy, weights: &[f64]) -> Result<Vec<f64>> {
    let Some(last) = per_pair.last() else {
        return Err(Error::InvalidArgument("no term pairs to estimate inflow from".into()));
    };
    let n = last.len();
    if per_pair.iter().any(|v| v.len() != n) {
        return Err(Error::InvalidArgument("inflow vectors differ in length".into()));
    }
    let k = per_pair.len() as f64;
    Ok(match policy {
        InflowPolicy::Last => last.clone(),
        InflowPolicy::Mean => (0..n).map(|s| per_pair.iter().map(|v| v[s]).sum::<f64>() / k).collect(),
        InflowPolicy::WeightedMean => {
            check_weights(weights, per_pair.len())?;
            let wsum: f64 = weights.iter().sum();
            (0..n)
                .map(|s| per_pair.iter().zip(weights).map(|(v, w)| w * v[s]).sum::<f64>() / wsum)
                .collect()
        }
    })
}

/// How term pairs are weighted when pooled.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    #[default]
    Uniform,
    /// Weight `decay^age`, where age 0 is the most recent pair.
    Decay(f64),
    /// One weight per pair, oldest first.
    Explicit(Vec<f64>),
}

impl Pooling {
    pub fn weights(&self, n_pairs: usize) -> Result<Vec<f64>> {
        let w = match self {
            Pooling::Uniform => vec![1.0; n_pairs],
            Pooling::Decay(d) => {
                if !d.is_finite() || *d < 0.0 {
                    return Err(Error::InvalidArgument(format!("decay must be finite and >= 0, got {d}")));
                }
                (0..n_pairs).map(|k| d.powi((n_pairs - 1 - k) as i32)).collect()
            }
            Pooling::Explicit(w) => w.clone(),
        };
        check_weights(&w, n_pairs)?;
        Ok(w)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitConfig {
    pub alpha: f64,
    pub pooling: Pooling,
    pub inflow_policy: InflowPolicy,
    /// Only use pairs whose from-term carries this term type.
    pub term_type: Option<String>,
    pub created_at: Option<String>,
}

/// Full pipeline: trajectories, per-pair counts, pooling, smoothing, inflow.
pub fn fit(snapshots: &[EnrollmentSnapshot], space: &StateSpace, config: &FitConfig) -> Result<TransitionModel> {
    if snapshots.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "fitting needs at least 2 snapshots, got {}",
            snapshots.len()
        )));
    }
    let trajectories = build_trajectories(snapshots, space)?;
    let pairs: Vec<TermPair> = snapshots
        .windows(2)
        .filter(|w| config.term_type.is_none() || w[0].term.term_type == config.term_type)
        .map(|w| TermPair { from: w[0].term.clone(), to: w[1].term.clone() })
        .collect();
    if pairs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no term pairs start with term type {:?}",
            config.term_type.as_deref().unwrap_or_default()
        )));
    }

    let per_pair = count_all(&trajectories, &pairs, space)?;
    let weights = config.pooling.weights(pairs.len())?;
    let pooled = pool_counts(&per_pair, &weights)?;
    let estimate = estimate_matrix(&pooled, config.alpha, space)?;
    let inflows: Vec<Vec<f64>> = per_pair
        .iter()
        .map(|c| c.inflow_counts.iter().map(|&n| n as f64).collect())
        .collect();
    let inflow = estimate_inflow(&inflows, config.inflow_policy, &weights)?;

    let mut diagnostics: Vec<String> = estimate.diagnostics.iter().map(ToString::to_string).collect();
    diagnostics.extend(
        per_pair
            .iter()
            .filter(|c| c.empty)
            .map(|c| format!("term pair {} -> {} has no observations", c.term_pair.from.label, c.term_pair.to.label)),
    );
    let latest = snapshots.last().expect("checked length").enrolled_counts(space)?;
    let meta = ModelMeta {
        alpha: config.alpha,
        term_pairs: pairs,
        weights,
        inflow_policy: Some(config.inflow_policy.to_string()),
        term_type: config.term_type.clone(),
        created_at: config.created_at.clone(),
        diagnostics,
        latest_counts: Some(latest.to_labels(space)),
    };
    TransitionModel::new(space.clone(), estimate.matrix, inflow, meta)
}
