//! Markov-chain cohort projection.
//!
//! The pipeline runs from longitudinal enrollment snapshots to a fitted
//! [`TransitionModel`] ([`estimation::fit`]), projects expected headcounts
//! with inflow/outflow accounting ([`forecast::project`]), explores
//! what-if edits ([`forecast::apply_scenario`]) and scores projections
//! against held-out terms ([`evaluation::backtest`]).
//!
//! ```
//! use cohortflow_core::{forecast, StateSpace, StateVector, TransitionModel};
//!
//! let space = StateSpace::from_partition(&["Freshman", "Sophomore", "Junior"], &["Departed"])?;
//! let model = TransitionModel::without_inflow(
//!     space,
//!     vec![
//!         vec![0.7, 0.2, 0.1, 0.0],
//!         vec![0.1, 0.6, 0.3, 0.0],
//!         vec![0.3, 0.3, 0.4, 0.0],
//!     ],
//! )?;
//! let v0 = StateVector::new(vec![100.0, 100.0, 100.0])?;
//! let path = forecast::project(&v0, &model, 2)?;
//! let last = path.last().counts.as_slice();
//! assert!((last[0] - 112.0).abs() < 1e-9);
//! # Ok::<(), cohortflow_core::Error>(())
//! ```

pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod forecast;
pub mod ingestion;
pub mod model;
pub mod parallel;

pub use error::{Error, Result};
pub use model::{
    state_index, validate_model, CellOverride, EnrollmentSnapshot, EvaluationReport, EvaluationRow,
    InflowOverride, ModelMeta, ScenarioSpec, StateComparison, StateSpace, StateVector, TermId,
    TermPair, TransitionModel, Validation, Violation, ROW_SUM_TOLERANCE,
};
