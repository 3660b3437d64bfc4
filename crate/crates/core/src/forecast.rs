//! Expected-headcount projection with explicit inflow/outflow accounting,
//! plus scenario overrides and baseline comparison.
//!
//! Each step computes `next = v · P_enrolled + I`; the mass `v · P_absorbing`
//! is the step's outflow, so `Σnext = Σv + I_total − O_total` holds up to
//! rounding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InflowOverride, ScenarioSpec, StateVector, TransitionModel, ROW_SUM_TOLERANCE};
use crate::parallel;

pub const MAX_HORIZON: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFlows {
    pub inflow_total: f64,
    pub outflow_total: f64,
    /// Outflow into each absorbing state, in the space's absorbing order.
    pub per_absorbing: Vec<f64>,
}

impl StepFlows {
    fn zero(n_absorbing: usize) -> Self {
        Self { inflow_total: 0.0, outflow_total: 0.0, per_absorbing: vec![0.0; n_absorbing] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub step: usize,
    pub counts: StateVector,
    pub total: f64,
    pub flows: StepFlows,
}

/// A projected path. `points[0]` is the initial vector with zero flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// Labels of `counts`, in enrolled order.
    pub states: Vec<String>,
    /// Labels of `flows.per_absorbing`.
    pub absorbing: Vec<String>,
    pub horizon: usize,
    pub points: Vec<ForecastPoint>,
}

impl Projection {
    pub fn last(&self) -> &ForecastPoint {
        self.points.last().expect("projection has at least one point")
    }
}

/// Advances one term.
pub fn step(v: &StateVector, model: &TransitionModel) -> Result<(StateVector, StepFlows)> {
    let space = &model.space;
    if v.len() != space.n_enrolled() {
        return Err(Error::DimensionMismatch { expected: space.n_enrolled(), got: v.len() });
    }
    let mut per_absorbing = vec![0.0; space.absorbing().len()];
    let mut moved = vec![0.0; space.n_enrolled()];
    for (row, &mass) in model.matrix.iter().zip(v.as_slice()) {
        if mass == 0.0 {
            continue;
        }
        for (m, &col) in moved.iter_mut().zip(space.enrolled_columns()) {
            *m += mass * row[col];
        }
        for (o, &col) in per_absorbing.iter_mut().zip(space.absorbing_columns()) {
            *o += mass * row[col];
        }
    }
    // new entrants arrive after this term's transitions
    let next: Vec<f64> = moved.iter().zip(&model.inflow).map(|(m, i)| m + i).collect();
    let flows = StepFlows {
        inflow_total: model.inflow_total(),
        outflow_total: per_absorbing.iter().sum(),
        per_absorbing,
    };
    Ok((StateVector::new(next)?, flows))
}

pub fn project(v0: &StateVector, model: &TransitionModel, horizon: usize) -> Result<Projection> {
    check_horizon(horizon)?;
    let space = &model.space;
    if v0.len() != space.n_enrolled() {
        return Err(Error::DimensionMismatch { expected: space.n_enrolled(), got: v0.len() });
    }
    let mut points = Vec::with_capacity(horizon + 1);
    points.push(ForecastPoint {
        step: 0,
        total: v0.total(),
        counts: v0.clone(),
        flows: StepFlows::zero(space.absorbing().len()),
    });
    for k in 1..=horizon {
        let (counts, flows) = step(&points[k - 1].counts, model)?;
        points.push(ForecastPoint { step: k, total: counts.total(), counts, flows });
    }
    Ok(Projection {
        states: space.enrolled().to_vec(),
        absorbing: space.absorbing().to_vec(),
        horizon,
        points,
    })
}

pub fn check_horizon(horizon: usize) -> Result<()> {
    if horizon == 0 || horizon > MAX_HORIZON {
        return Err(Error::InvalidArgument(format!(
            "horizon must be between 1 and {MAX_HORIZON}, got {horizon}"
        )));
    }
    Ok(())
}

/// Projects several initial vectors under one model.
pub fn project_batch(initials: &[StateVector], model: &TransitionModel, horizon: usize) -> Result<Vec<Projection>> {
    parallel::map(initials, |v| project(v, model, horizon)).into_iter().collect()
}

/// Returns `model` with the scenario's overrides applied.
///
/// In each edited row the overridden cells take their new values and the
/// remaining cells are rescaled proportionally to fill `1 − Σoverrides`.
/// If the remaining cells held no mass, the residual is spread uniformly.
pub fn apply_scenario(model: &TransitionModel, spec: &ScenarioSpec) -> Result<TransitionModel> {
    spec.validate()?;
    let space = &model.space;

    let mut rows: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for o in &spec.cell_overrides {
        let row = match space.enrolled_index(&o.from) {
            Some(r) => r,
            None if space.state_index(&o.from).is_some() => {
                return Err(Error::Scenario(format!(
                    "'{}' is absorbing and has no transition row",
                    o.from
                )))
            }
            None => return Err(Error::UnknownState(o.from.clone())),
        };
        let col = space.state_index(&o.to).ok_or_else(|| Error::UnknownState(o.to.clone()))?;
        rows.entry(row).or_default().push((col, o.probability));
    }

    let mut matrix = model.matrix.clone();
    for (r, overrides) in rows {
        let label = &space.enrolled()[r];
        let row = &mut matrix[r];
        let mut fixed = vec![false; row.len()];
        let mut fixed_sum = 0.0;
        for &(c, p) in &overrides {
            fixed[c] = true;
            fixed_sum += p;
        }
        let target = (1.0 - fixed_sum).max(0.0);
        let remaining: f64 = row.iter().zip(&fixed).filter(|(_, f)| !**f).map(|(p, _)| p).sum();
        let free = fixed.iter().filter(|f| !**f).count();

        if remaining > 0.0 {
            let scale = target / remaining;
            for (p, f) in row.iter_mut().zip(&fixed) {
                if !f {
                    *p *= scale;
                }
            }
        } else if free > 0 {
            let share = target / free as f64;
            for (p, f) in row.iter_mut().zip(&fixed) {
                if !f {
                    *p = share;
                }
            }
        } else if target > ROW_SUM_TOLERANCE {
            return Err(Error::Scenario(format!(
                "row '{label}' overrides every cell but they sum to {fixed_sum}"
            )));
        }
        for (c, p) in overrides {
            row[c] = p;
        }
    }

    let mut inflow = model.inflow.clone();
    match &spec.inflow {
        None => {}
        Some(InflowOverride::Multiplier(m)) => inflow.iter_mut().for_each(|v| *v *= m),
        Some(InflowOverride::Absolute(values)) => {
            for (label, &v) in values {
                let r = match space.enrolled_index(label) {
                    Some(r) => r,
                    None if space.state_index(label).is_some() => {
                        return Err(Error::Scenario(format!("'{label}' is absorbing and has no inflow")))
                    }
                    None => return Err(Error::UnknownState(label.clone())),
                };
                inflow[r] = v;
            }
        }
    }

    TransitionModel::new(space.clone(), matrix, inflow, model.meta.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDelta {
    pub step: usize,
    pub per_state: Vec<f64>,
    pub total: f64,
}

/// Scenario minus baseline, per step.
pub fn compare(baseline: &Projection, scenario: &Projection) -> Result<Vec<StepDelta>> {
    if baseline.horizon != scenario.horizon || baseline.points.len() != scenario.points.len() {
        return Err(Error::InvalidArgument(format!(
            "horizons differ: baseline {}, scenario {}",
            baseline.horizon, scenario.horizon
        )));
    }
    if baseline.states != scenario.states {
        return Err(Error::InvalidArgument("projections use different state spaces".into()));
    }
    Ok(baseline
        .points
        .iter()
        .zip(&scenario.points)
        .map(|(b, s)| StepDelta {
            step: b.step,
            per_state: s.counts.as_slice().iter().zip(b.counts.as_slice()).map(|(x, y)| x - y).collect(),
            total: s.total - b.total,
        })
        .collect())
}

/// Baseline projection plus, when a scenario is given, its projection and deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub baseline: Projection,
    pub scenario: Option<Projection>,
    pub deltas: Option<Vec<StepDelta>>,
}

pub fn run_projection(
    model: &TransitionModel,
    initial: &StateVector,
    horizon: usize,
    scenario: Option<&ScenarioSpec>,
) -> Result<ScenarioRun> {
    let baseline = project(initial, model, horizon)?;
    let Some(spec) = scenario else {
        return Ok(ScenarioRun { baseline, scenario: None, deltas: None });
    };
    let edited = apply_scenario(model, spec)?;
    let projected = project(initial, &edited, horizon)?;
    let deltas = compare(&baseline, &projected)?;
    Ok(ScenarioRun { baseline, scenario: Some(projected), deltas: Some(deltas) })
}

/// Evaluates many scenarios against the same baseline.
pub fn run_scenarios(
    model: &TransitionModel,
    initial: &StateVector,
    horizon: usize,
    specs: &[ScenarioSpec],
) -> Result<Vec<ScenarioRun>> {
    parallel::map(specs, |s| run_projection(model, initial, horizon, Some(s)))
        .into_iter()
        .collect()
}
