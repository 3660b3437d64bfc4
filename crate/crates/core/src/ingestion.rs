//! Snapshot CSV and model JSON I/O, trajectory reconstruction, and the
//! seeded synthetic data generator.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    validate_model, EnrollmentSnapshot, ModelMeta, StateSpace, StateVector, TermId,
    TransitionModel, ROW_SUM_TOLERANCE,
};
use crate::parallel;

pub const SNAPSHOT_HEADER: [&str; 4] = ["term_index", "term_label", "student_id", "state"];

/// Parses snapshot CSV (`term_index,term_label,student_id,state`) into one
/// snapshot per distinct term, sorted by term index.
pub fn parse_snapshot_csv<R: Read>(input: R, space: &StateSpace) -> Result<Vec<EnrollmentSnapshot>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);

    let headers = reader.headers().map_err(|e| csv_parse_error(e, 1))?.clone();
    let names: Vec<&str> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| if i == 0 { h.trim_start_matches('\u{feff}') } else { h })
        .collect();
    if names.len() == 1 && names[0].is_empty() {
        return Err(Error::Parse { line: 1, message: "missing header".into() });
    }
    if names != SNAPSHOT_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header '{}', found '{}'", SNAPSHOT_HEADER.join(","), names.join(",")),
        });
    }

    let mut terms: BTreeMap<usize, EnrollmentSnapshot> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    let mut fallback_line = 1;
    loop {
        fallback_line += 1;
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_parse_error(e, fallback_line)),
        }
        let line = record.position().map(|p| p.line()).unwrap_or(fallback_line);
        if record.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let index: usize = record[0].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("term_index '{}' is not a non-negative integer", &record[0]),
        })?;
        let label = &record[1];
        let student = &record[2];
        let state = &record[3];
        if student.is_empty() {
            return Err(Error::Parse { line, message: "empty student_id".into() });
        }
        if space.state_index(state).is_none() {
            return Err(Error::UnknownStateAt { label: state.to_string(), line });
        }

        let snap = terms
            .entry(index)
            .or_insert_with(|| EnrollmentSnapshot::new(TermId::new(index, label)));
        if snap.term.label != label {
            return Err(Error::Parse {
                line,
                message: format!(
                    "term {index} labelled '{label}' but earlier rows use '{}'",
                    snap.term.label
                ),
            });
        }
        match snap.roster.get(student) {
            Some(prev) if prev != state => {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "student '{student}' has conflicting states '{prev}' and '{state}' in term {index}"
                    ),
                })
            }
            Some(_) => {}
            None => {
                snap.roster.insert(student.to_string(), state.to_string());
            }
        }
    }
    Ok(terms.into_values().collect())
}

fn csv_parse_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    Error::Parse { line, message: e.to_string() }
}

/// Writes snapshots as CSV, rows ordered by term then student id.
pub fn write_snapshot_csv<W: Write>(snapshots: &[EnrollmentSnapshot], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SNAPSHOT_HEADER)?;
    for snap in snapshots {
        let index = snap.term.index.to_string();
        for (student, state) in &snap.roster {
            w.write_record([index.as_str(), &snap.term.label, student, state])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn snapshots_to_csv(snapshots: &[EnrollmentSnapshot]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_snapshot_csv(snapshots, &mut buf)?;
    Ok(buf)
}

/// Tags each snapshot with `cycle[index % cycle.len()]` as its term type,
/// e.g. `["fall", "winter"]` for a two-term academic year starting in fall.
pub fn assign_term_types<S: AsRef<str>>(snapshots: &mut [EnrollmentSnapshot], cycle: &[S]) {
    if cycle.is_empty() {
        return;
    }
    for snap in snapshots {
        snap.term.term_type = Some(cycle[snap.term.index % cycle.len()].as_ref().to_string());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathEntry {
    pub term: usize,
    /// Column index into the state space.
    pub state: usize,
    /// False for entries synthesized by gap filling or departure assignment.
    pub observed: bool,
}

/// One student's consecutive state history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub student_id: String,
    pub path: Vec<PathEntry>,
}

impl Trajectory {
    pub fn first_term(&self) -> usize {
        self.path[0].term
    }

    pub fn last_term(&self) -> usize {
        self.path[self.path.len() - 1].term
    }

    pub fn entry_at(&self, term: usize) -> Option<&PathEntry> {
        term.checked_sub(self.first_term()).and_then(|i| self.path.get(i))
    }

    pub fn labels<'a>(&self, space: &'a StateSpace) -> Vec<&'a str> {
        self.path.iter().map(|e| space.states()[e.state].as_str()).collect()
    }
}

/// Reconstructs per-student paths from snapshots.
///
/// Observed cells are kept. A term missing between two observations becomes
/// the stop-out state. A student who disappears before the final snapshot
/// without an absorbing row gets the departure state one term after their
/// last observation. Students present in the final snapshot are right-censored.
pub fn build_trajectories(snapshots: &[EnrollmentSnapshot], space: &StateSpace) -> Result<Vec<Trajectory>> {
    check_consecutive(snapshots)?;
    let Some(final_term) = snapshots.last().map(|s| s.term.index) else {
        return Ok(Vec::new());
    };

    let mut observations: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for snap in snapshots {
        for (student, state) in &snap.roster {
            let col = space
                .state_index(state)
                .ok_or_else(|| Error::UnknownState(state.clone()))?;
            observations.entry(student.as_str()).or_default().push((snap.term.index, col));
        }
    }

    let stop_out_col = space.stop_out().and_then(|s| space.state_index(s));
    let departed_col = space.departed_column();

    let mut out = Vec::with_capacity(observations.len());
    for (student, obs) in observations {
        let mut path = Vec::with_capacity(obs.len() + 1);
        for &(term, state) in &obs {
            if let Some(prev) = path.last().copied() {
                let PathEntry { term: prev_term, state: prev_state, .. } = prev;
                if space.is_absorbing(prev_state) {
                    return Err(Error::Structure(format!(
                        "student '{student}' observed in term {term} after absorbing state '{}'",
                        space.states()[prev_state]
                    )));
                }
                for gap in prev_term + 1..term {
                    let fill = stop_out_col.ok_or_else(|| {
                        Error::Structure(format!(
                            "student '{student}' is absent in term {gap} but no stop-out state is configured"
                        ))
                    })?;
                    path.push(PathEntry { term: gap, state: fill, observed: false });
                }
            }
            path.push(PathEntry { term, state, observed: true });
        }

        let last = *path.last().expect("every student has an observation");
        if !space.is_absorbing(last.state) && last.term < final_term {
            let departed = departed_col.ok_or_else(|| {
                Error::Structure(format!(
                    "student '{student}' leaves after term {} but no departure state is configured",
                    last.term
                ))
            })?;
            path.push(PathEntry { term: last.term + 1, state: departed, observed: false });
        }
        out.push(Trajectory { student_id: student.to_string(), path });
    }
    Ok(out)
}

pub(crate) fn check_consecutive(snapshots: &[EnrollmentSnapshot]) -> Result<()> {
    for w in snapshots.windows(2) {
        if w[1].term.index != w[0].term.index + 1 {
            return Err(Error::Structure(format!(
                "term indices must be consecutive; {} is followed by {}",
                w[0].term.index, w[1].term.index
            )));
        }
    }
    Ok(())
}

/// Re-projects trajectories onto rosters, dropping synthesized entries.
pub fn trajectories_to_snapshots(
    trajectories: &[Trajectory],
    terms: &[TermId],
    space: &StateSpace,
) -> Vec<EnrollmentSnapshot> {
    let first = terms.first().map(|t| t.index).unwrap_or(0);
    let mut snaps: Vec<EnrollmentSnapshot> = terms.iter().cloned().map(EnrollmentSnapshot::new).collect();
    for t in trajectories {
        for e in t.path.iter().filter(|e| e.observed) {
            if let Some(snap) = e.term.checked_sub(first).and_then(|i| snaps.get_mut(i)) {
                snap.roster.insert(t.student_id.clone(), space.states()[e.state].clone());
            }
        }
    }
    snaps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InflowMode {
    /// Each term adds `round(inflow[e])` entrants to state `e`.
    #[default]
    FixedPerTerm,
    /// Each term adds `floor(inflow[e])` plus one more with probability
    /// equal to the fractional part, so the expectation is exact.
    StochasticRounding,
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub true_model: TransitionModel,
    pub initial_counts: StateVector,
    pub n_terms: usize,
    pub inflow_mode: InflowMode,
    pub seed: u64,
}

/// Simulates individual students under `true_model` and returns one
/// snapshot per term.
///
/// Every student draws from an independent ChaCha stream keyed by the seed
/// and the student's ordinal, so the output does not depend on thread count.
/// Absorbing states are written as explicit rows except the departure state,
/// which is represented by the student's absence.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<EnrollmentSnapshot>> {
    let model = &cfg.true_model;
    validate_model(model).into_result()?;
    let space = &model.space;
    if cfg.n_terms < 2 {
        return Err(Error::InvalidArgument(format!("n_terms must be >= 2, got {}", cfg.n_terms)));
    }
    if cfg.initial_counts.len() != space.n_enrolled() {
        return Err(Error::DimensionMismatch {
            expected: space.n_enrolled(),
            got: cfg.initial_counts.len(),
        });
    }

    // (entry term, entry row) per student, in ordinal order
    let mut cohort: Vec<(usize, usize)> = Vec::new();
    for (row, &n) in cfg.initial_counts.as_slice().iter().enumerate() {
        cohort.extend(std::iter::repeat_n((0, row), n.round() as usize));
    }
    let mut entrant_rng = stream_rng(cfg.seed, u64::MAX);
    for term in 1..cfg.n_terms {
        for (row, &expected) in model.inflow.iter().enumerate() {
            let n = match cfg.inflow_mode {
                InflowMode::FixedPerTerm => expected.round() as usize,
                InflowMode::StochasticRounding => {
                    let base = expected.floor();
                    base as usize + usize::from(entrant_rng.random::<f64>() < expected - base)
                }
            };
            cohort.extend(std::iter::repeat_n((term, row), n));
        }
    }

    let hidden = space.departed_column();
    let paths: Vec<Vec<usize>> = parallel::map_range(cohort.len(), |ordinal| {
        let (entry, row) = cohort[ordinal];
        let mut rng = stream_rng(cfg.seed, ordinal as u64);
        let mut state = space.enrolled_column(row);
        let mut path = vec![state];
        for _ in entry + 1..cfg.n_terms {
            let r = space.row_of_column(state).expect("walk stops at absorbing states");
            state = sample_row(&model.matrix[r], &mut rng);
            path.push(state);
            if space.is_absorbing(state) {
                break;
            }
        }
        path
    });

    let width = cfg.n_terms.saturating_sub(1).max(cohort.len().saturating_sub(1)).to_string().len().max(6);
    let mut snaps: Vec<EnrollmentSnapshot> = (0..cfg.n_terms)
        .map(|t| EnrollmentSnapshot::new(TermId::new(t, format!("T{t}"))))
        .collect();
    for (ordinal, path) in paths.iter().enumerate() {
        let id = format!("s{ordinal:0width$}");
        let entry = cohort[ordinal].0;
        for (offset, &state) in path.iter().enumerate() {
            if Some(state) == hidden {
                continue;
            }
            snaps[entry + offset].roster.insert(id.clone(), space.states()[state].clone());
        }
    }
    Ok(snaps)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_row<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (c, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = c;
            if u < acc {
                return c;
            }
        }
    }
    // rounding left u above the accumulated mass
    last_positive
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    states: Vec<String>,
    enrolled: Vec<String>,
    absorbing: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stop_out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    departed: Option<String>,
    matrix: Vec<Vec<f64>>,
    inflow: BTreeMap<String, f64>,
    #[serde(default)]
    meta: ModelMeta,
}

/// Serializes a validated model to JSON. Probabilities keep full precision.
pub fn write_model(model: &TransitionModel) -> Result<Vec<u8>> {
    validate_model(model).into_result()?;
    let space = &model.space;
    let doc = ModelDocument {
        states: space.states().to_vec(),
        enrolled: space.enrolled().to_vec(),
        absorbing: space.absorbing().to_vec(),
        stop_out: space.stop_out().map(str::to_string),
        departed: space.departed().map(str::to_string),
        matrix: model.matrix.clone(),
        inflow: space.enrolled().iter().cloned().zip(model.inflow.iter().copied()).collect(),
        meta: model.meta.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn read_model(bytes: &[u8]) -> Result<TransitionModel> {
    let doc: ModelDocument =
        serde_json::from_slice(bytes).map_err(|e| Error::Schema(e.to_string()))?;
    let space = StateSpace::new(&doc.states, &doc.enrolled, &doc.absorbing)?
        .with_stop_out(doc.stop_out.as_deref())?
        .with_departed(doc.departed.as_deref())?;

    if doc.matrix.len() != space.n_enrolled() {
        return Err(Error::Schema(format!(
            "matrix has {} rows, expected one per enrolled state ({})",
            doc.matrix.len(),
            space.n_enrolled()
        )));
    }
    for (label, row) in space.enrolled().iter().zip(&doc.matrix) {
        if row.len() != space.n_states() {
            return Err(Error::Schema(format!(
                "row '{label}' has {} entries, expected {}",
                row.len(),
                space.n_states()
            )));
        }
        let sum: f64 = row.iter().sum();
        // written so a NaN sum is rejected too
        let within = (sum - 1.0).abs() <= ROW_SUM_TOLERANCE;
        if !within {
            return Err(Error::RowSum { label: label.clone(), sum });
        }
    }
    if let Some(label) = doc.inflow.keys().find(|k| space.enrolled_index(k).is_none()) {
        return Err(Error::Schema(format!("inflow names '{label}', which is not an enrolled state")));
    }
    let inflow = space
        .enrolled()
        .iter()
        .map(|l| {
            doc.inflow
                .get(l)
                .copied()
                .ok_or_else(|| Error::Schema(format!("inflow is missing enrolled state '{l}'")))
        })
        .collect::<Result<Vec<_>>>()?;

    TransitionModel::new(space, doc.matrix, inflow, doc.meta)
}

#[derive(Debug, Deserialize)]
struct SpaceDocument {
    states: Vec<String>,
    enrolled: Vec<String>,
    absorbing: Vec<String>,
    #[serde(default)]
    stop_out: Option<String>,
    #[serde(default)]
    departed: Option<String>,
}

/// Reads a state space from JSON with `states`/`enrolled`/`absorbing` keys.
/// A model document is accepted too; its other keys are ignored.
pub fn read_state_space(bytes: &[u8]) -> Result<StateSpace> {
    let doc: SpaceDocument =
        serde_json::from_slice(bytes).map_err(|e| Error::Schema(e.to_string()))?;
    let mut space = StateSpace::new(&doc.states, &doc.enrolled, &doc.absorbing)?;
    if doc.stop_out.is_some() {
        space = space.with_stop_out(doc.stop_out.as_deref())?;
    }
    if doc.departed.is_some() {
        space = space.with_departed(doc.departed.as_deref())?;
    }
    Ok(space)
}
