//! Core value types shared by every stage of the pipeline.
//!
//! A [`TransitionModel`] stores one matrix row per *enrolled* state and one
//! column per state (enrolled and absorbing). Absorbing states have no row:
//! mass that lands in their columns leaves the headcount for good.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of a matrix row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_STOP_OUT: &str = "StopOut";
pub const DEFAULT_DEPARTED: &str = "Departed";

/// Ordered set of state labels split into enrolled and absorbing states.
///
/// Two labels play special roles during trajectory reconstruction: the
/// stop-out state (an enrolled state used to fill attendance gaps) and the
/// departure state (an absorbing state assigned to students who vanish).
/// They are detected by the labels `StopOut` and `Departed` and can be
/// reassigned with [`StateSpace::with_stop_out`] / [`StateSpace::with_departed`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    states: Vec<String>,
    enrolled: Vec<String>,
    absorbing: Vec<String>,
    stop_out: Option<String>,
    departed: Option<String>,
    index: HashMap<String, usize>,
    enrolled_cols: Vec<usize>,
    absorbing_cols: Vec<usize>,
    row_of_col: Vec<Option<usize>>,
}

impl StateSpace {
    pub fn new<S: AsRef<str>>(states: &[S], enrolled: &[S], absorbing: &[S]) -> Result<Self> {
        let owned = |v: &[S]| v.iter().map(|s| s.as_ref().to_string()).collect::<Vec<_>>();
        let states = owned(states);
        let enrolled = owned(enrolled);
        let absorbing = owned(absorbing);

        if states.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidStateSpace("state labels must be non-empty".into()));
        }
        let mut index = HashMap::with_capacity(states.len());
        for (i, s) in states.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::InvalidStateSpace(format!("duplicate state '{s}'")));
            }
        }
        if enrolled.is_empty() {
            return Err(Error::InvalidStateSpace("at least one enrolled state is required".into()));
        }
        if absorbing.is_empty() {
            return Err(Error::InvalidStateSpace("at least one absorbing state is required".into()));
        }

        let mut seen = HashSet::new();
        for s in enrolled.iter().chain(absorbing.iter()) {
            if !index.contains_key(s) {
                return Err(Error::InvalidStateSpace(format!("'{s}' is not a listed state")));
            }
            if !seen.insert(s.as_str()) {
                return Err(Error::InvalidStateSpace(format!(
                    "'{s}' is classified more than once"
                )));
            }
        }
        if seen.len() != states.len() {
            let missing: Vec<_> = states.iter().filter(|s| !seen.contains(s.as_str())).collect();
            return Err(Error::InvalidStateSpace(format!(
                "states neither enrolled nor absorbing: {missing:?}"
            )));
        }

        let enrolled_cols: Vec<usize> = enrolled.iter().map(|s| index[s]).collect();
        let absorbing_cols: Vec<usize> = absorbing.iter().map(|s| index[s]).collect();
        let mut row_of_col = vec![None; states.len()];
        for (row, &col) in enrolled_cols.iter().enumerate() {
            row_of_col[col] = Some(row);
        }

        let stop_out = enrolled.iter().find(|s| *s == DEFAULT_STOP_OUT).cloned();
        let departed = absorbing.iter().find(|s| *s == DEFAULT_DEPARTED).cloned();

        Ok(Self {
            states,
            enrolled,
            absorbing,
            stop_out,
            departed,
            index,
            enrolled_cols,
            absorbing_cols,
            row_of_col,
        })
    }

    /// Builds a space whose state order is `enrolled` followed by `absorbing`.
    pub fn from_partition<S: AsRef<str>>(enrolled: &[S], absorbing: &[S]) -> Result<Self> {
        let states: Vec<&str> = enrolled
            .iter()
            .map(AsRef::as_ref)
            .chain(absorbing.iter().map(AsRef::as_ref))
            .collect();
        let enrolled: Vec<&str> = enrolled.iter().map(AsRef::as_ref).collect();
        let absorbing: Vec<&str> = absorbing.iter().map(AsRef::as_ref).collect();
        Self::new(&states, &enrolled, &absorbing)
    }

    pub fn with_stop_out(mut self, label: Option<&str>) -> Result<Self> {
        if let Some(l) = label {
            if !self.enrolled.iter().any(|s| s == l) {
                return Err(Error::InvalidStateSpace(format!(
                    "stop-out state '{l}' must be an enrolled state"
                )));
            }
        }
        self.stop_out = label.map(str::to_string);
        Ok(self)
    }

    pub fn with_departed(mut self, label: Option<&str>) -> Result<Self> {
        if let Some(l) = label {
            if !self.absorbing.iter().any(|s| s == l) {
                return Err(Error::InvalidStateSpace(format!(
                    "departure state '{l}' must be an absorbing state"
                )));
            }
        }
        self.departed = label.map(str::to_string);
        Ok(self)
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn enrolled(&self) -> &[String] {
        &self.enrolled
    }

    pub fn absorbing(&self) -> &[String] {
        &self.absorbing
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_enrolled(&self) -> usize {
        self.enrolled.len()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Matrix row of an enrolled label.
    pub fn enrolled_index(&self, label: &str) -> Option<usize> {
        self.state_index(label).and_then(|c| self.row_of_col[c])
    }

    /// Column holding the enrolled state of matrix row `row`.
    pub fn enrolled_column(&self, row: usize) -> usize {
        self.enrolled_cols[row]
    }

    pub fn enrolled_columns(&self) -> &[usize] {
        &self.enrolled_cols
    }

    pub fn absorbing_columns(&self) -> &[usize] {
        &self.absorbing_cols
    }

    pub fn row_of_column(&self, col: usize) -> Option<usize> {
        self.row_of_col.get(col).copied().flatten()
    }

    pub fn is_absorbing(&self, col: usize) -> bool {
        col < self.states.len() && self.row_of_col[col].is_none()
    }

    pub fn stop_out(&self) -> Option<&str> {
        self.stop_out.as_deref()
    }

    pub fn departed(&self) -> Option<&str> {
        self.departed.as_deref()
    }

    pub fn stop_out_row(&self) -> Option<usize> {
        self.stop_out.as_deref().and_then(|s| self.enrolled_index(s))
    }

    pub fn departed_column(&self) -> Option<usize> {
        self.departed.as_deref().and_then(|s| self.state_index(s))
    }
}

impl Default for StateSpace {
    /// Freshman, Sophomore, Junior, Senior and StopOut enrolled; Graduated
    /// and Departed absorbing.
    fn default() -> Self {
        Self::from_partition(
            &["Freshman", "Sophomore", "Junior", "Senior", "StopOut"],
            &["Graduated", "Departed"],
        )
        .expect("default state space is valid")
    }
}

/// Position of `label` in the ordered state list.
pub fn state_index(space: &StateSpace, label: &str) -> Option<usize> {
    space.state_index(label)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TermId {
    pub index: usize,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term_type: Option<String>,
}

impl TermId {
    pub fn new(index: usize, label: impl Into<String>) -> Self {
        Self { index, label: label.into(), term_type: None }
    }

    pub fn with_type(mut self, term_type: impl Into<String>) -> Self {
        self.term_type = Some(term_type.into());
        self
    }
}

impl fmt::Display for TermId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.label, self.index)
    }
}

/// One census: every individual observed at the start of a term, with their state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentSnapshot {
    pub term: TermId,
    pub roster: BTreeMap<String, String>,
}

impl EnrollmentSnapshot {
    pub fn new(term: TermId) -> Self {
        Self { term, roster: BTreeMap::new() }
    }

    /// Headcount per enrolled state. Roster entries in absorbing states are skipped.
    pub fn enrolled_counts(&self, space: &StateSpace) -> Result<StateVector> {
        let mut counts = vec![0.0; space.n_enrolled()];
        for state in self.roster.values() {
            let col = space
                .state_index(state)
                .ok_or_else(|| Error::UnknownState(state.clone()))?;
            if let Some(row) = space.row_of_column(col) {
                counts[row] += 1.0;
            }
        }
        StateVector::new(counts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermPair {
    pub from: TermId,
    pub to: TermId,
}

/// Provenance recorded alongside a fitted model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub term_pairs: Vec<TermPair>,
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflow_policy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
    /// Enrolled headcounts of the most recent snapshot used in fitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latest_counts: Option<BTreeMap<String, f64>>,
}

/// Row-stochastic transition matrix over a [`StateSpace`] plus per-term inflow.
///
/// `matrix[r][c]` is the probability that a student in enrolled state `r`
/// is in state `c` one term later. `inflow[r]` is the expected number of
/// new entrants arriving in enrolled state `r` each term.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub space: StateSpace,
    pub matrix: Vec<Vec<f64>>,
    pub inflow: Vec<f64>,
    pub meta: ModelMeta,
}

impl TransitionModel {
    /// Builds a model and rejects it unless [`validate_model`] passes.
    pub fn new(
        space: StateSpace,
        matrix: Vec<Vec<f64>>,
        inflow: Vec<f64>,
        meta: ModelMeta,
    ) -> Result<Self> {
        let m = Self { space, matrix, inflow, meta };
        validate_model(&m).into_result()?;
        Ok(m)
    }

    pub fn without_inflow(space: StateSpace, matrix: Vec<Vec<f64>>) -> Result<Self> {
        let n = space.n_enrolled();
        Self::new(space, matrix, vec![0.0; n], ModelMeta::default())
    }

    pub fn probability(&self, from: &str, to: &str) -> Option<f64> {
        let r = self.space.enrolled_index(from)?;
        let c = self.space.state_index(to)?;
        Some(self.matrix[r][c])
    }

    pub fn inflow_total(&self) -> f64 {
        self.inflow.iter().sum()
    }
}

/// A broken [`TransitionModel`] invariant, with coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    NonFinite { row: usize, col: usize },
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    RowSum { row: usize, label: String, sum: f64 },
    Inflow { row: usize, label: String, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(s) => f.write_str(s),
            Violation::NonFinite { row, col } => write!(f, "entry ({row}, {col}) is not finite"),
            Violation::EntryOutOfRange { row, col, value } => {
                write!(f, "entry ({row}, {col}) = {value} is outside [0, 1]")
            }
            Violation::RowSum { row, sum, .. } => write!(f, "row {row} sums to {}", fmt_sum(*sum)),
            Violation::Inflow { label, value, .. } => {
                write!(f, "inflow for '{label}' is {value}; must be finite and >= 0")
            }
        }
    }
}

/// Formats a row sum without accumulation noise (`0.8999999999999999` -> `0.9`).
pub(crate) fn fmt_sum(sum: f64) -> String {
    let s = format!("{sum:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Validation {
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidModel(self.violations))
        }
    }
}

/// Checks every [`TransitionModel`] invariant and reports all violations.
pub fn validate_model(model: &TransitionModel) -> Validation {
    let space = &model.space;
    let mut violations = Vec::new();

    if model.matrix.len() != space.n_enrolled() {
        violations.push(Violation::Shape(format!(
            "matrix has {} rows, expected {}",
            model.matrix.len(),
            space.n_enrolled()
        )));
    }
    for (r, row) in model.matrix.iter().enumerate() {
        if row.len() != space.n_states() {
            violations.push(Violation::Shape(format!(
                "row {r} has {} columns, expected {}",
                row.len(),
                space.n_states()
            )));
            continue;
        }
        let mut finite = true;
        for (c, &p) in row.iter().enumerate() {
            if !p.is_finite() {
                finite = false;
                violations.push(Violation::NonFinite { row: r, col: c });
            } else if !(0.0..=1.0).contains(&p) {
                violations.push(Violation::EntryOutOfRange { row: r, col: c, value: p });
            }
        }
        if finite {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                let label = space.enrolled().get(r).cloned().unwrap_or_default();
                violations.push(Violation::RowSum { row: r, label, sum });
            }
        }
    }

    if model.inflow.len() != space.n_enrolled() {
        violations.push(Violation::Shape(format!(
            "inflow has {} entries, expected {}",
            model.inflow.len(),
            space.n_enrolled()
        )));
    }
    for (r, &v) in model.inflow.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            let label = space.enrolled().get(r).cloned().unwrap_or_default();
            violations.push(Violation::Inflow { row: r, label, value: v });
        }
    }

    Validation { violations }
}

/// Expected headcount per enrolled state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector {
    counts: Vec<f64>,
}

impl StateVector {
    pub fn new(counts: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = counts.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "headcount {i} is {v}; must be finite and >= 0"
            )));
        }
        Ok(Self { counts })
    }

    pub fn zeros(n: usize) -> Self {
        Self { counts: vec![0.0; n] }
    }

    /// Builds a vector from a label → headcount map. Enrolled states missing
    /// from the map get zero.
    pub fn from_labels(space: &StateSpace, values: &BTreeMap<String, f64>) -> Result<Self> {
        let mut counts = vec![0.0; space.n_enrolled()];
        for (label, &v) in values {
            let row = match space.enrolled_index(label) {
                Some(r) => r,
                None if space.state_index(label).is_some() => {
                    return Err(Error::InvalidArgument(format!(
                        "'{label}' is absorbing and cannot hold headcount"
                    )))
                }
                None => return Err(Error::UnknownState(label.clone())),
            };
            counts[row] = v;
        }
        Self::new(counts)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.counts
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn to_labels(&self, space: &StateSpace) -> BTreeMap<String, f64> {
        space.enrolled().iter().cloned().zip(self.counts.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellOverride {
    pub from: String,
    pub to: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflowOverride {
    /// Scales every inflow entry.
    Multiplier(f64),
    /// Replaces the inflow of the listed states.
    Absolute(BTreeMap<String, f64>),
}

/// A what-if edit of a model: pinned transition probabilities and/or inflow.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub cell_overrides: Vec<CellOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflow: Option<InflowOverride>,
    /// Number of terms to project; callers may supply it separately.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

impl ScenarioSpec {
    pub fn is_empty(&self) -> bool {
        self.cell_overrides.is_empty() && self.inflow.is_none()
    }

    /// Checks the invariants that do not depend on a model.
    pub fn validate(&self) -> Result<()> {
        let mut row_sums: BTreeMap<&str, f64> = BTreeMap::new();
        let mut cells = HashSet::new();
        for o in &self.cell_overrides {
            if !o.probability.is_finite() || !(0.0..=1.0).contains(&o.probability) {
                return Err(Error::Scenario(format!(
                    "override {} -> {} has probability {} outside [0, 1]",
                    o.from, o.to, o.probability
                )));
            }
            if !cells.insert((o.from.as_str(), o.to.as_str())) {
                return Err(Error::Scenario(format!(
                    "duplicate override for {} -> {}",
                    o.from, o.to
                )));
            }
            *row_sums.entry(o.from.as_str()).or_default() += o.probability;
        }
        for (row, sum) in row_sums {
            if sum > 1.0 + ROW_SUM_TOLERANCE {
                return Err(Error::OverrideSum { row: row.to_string(), sum });
            }
        }
        match &self.inflow {
            Some(InflowOverride::Multiplier(m)) if !m.is_finite() || *m < 0.0 => {
                return Err(Error::Scenario(format!("inflow multiplier {m} must be finite and >= 0")))
            }
            Some(InflowOverride::Absolute(values)) => {
                if let Some((label, v)) = values.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
                    return Err(Error::Scenario(format!(
                        "inflow for '{label}' is {v}; must be finite and >= 0"
                    )));
                }
            }
            _ => {}
        }
        if self.horizon == Some(0) {
            return Err(Error::Scenario("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub period: String,
    pub projected: f64,
    pub actual: f64,
    /// `None` when the projected total is zero and the metric is undefined.
    pub difference_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateComparison {
    pub period: String,
    pub projected: BTreeMap<String, f64>,
    pub actual: BTreeMap<String, f64>,
}

/// Projected versus actual totals per held-out period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<EvaluationRow>,
    pub bias_pct: f64,
    pub mean_abs_difference_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_state: Option<Vec<StateComparison>>,
}
