//! Backtesting and the Difference / Bias accuracy metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::estimation::{fit, FitConfig};
use crate::forecast::project;
use crate::ingestion::check_consecutive;
use crate::model::{EnrollmentSnapshot, EvaluationReport, EvaluationRow, StateComparison, StateSpace, TransitionModel};

/// `(actual − projected) / projected × 100`.
pub fn difference_pct(projected: f64, actual: f64) -> Result<f64> {
    if !projected.is_finite() || projected <= 0.0 {
        return Err(Error::InvalidArgument(format!("projected total must be > 0, got {projected}")));
    }
    if !actual.is_finite() || actual < 0.0 {
        return Err(Error::InvalidArgument(format!("actual total must be >= 0, got {actual}")));
    }
    Ok((actual - projected) / projected * 100.0)
}

/// Signed mean of per-period differences.
pub fn bias_pct(differences: &[f64]) -> Result<f64> {
    if differences.is_empty() {
        return Err(Error::InvalidArgument("bias of an empty list".into()));
    }
    Ok(differences.iter().sum::<f64>() / differences.len() as f64)
}

pub fn mean_abs_difference_pct(differences: &[f64]) -> Result<f64> {
    if differences.is_empty() {
        return Err(Error::InvalidArgument("mean absolute difference of an empty list".into()));
    }
    Ok(differences.iter().map(|d| d.abs()).sum::<f64>() / differences.len() as f64)
}

/// Two-decimal percentage, without a negative sign on zero.
pub fn format_pct(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub fit: FitConfig,
    pub horizon: usize,
    /// Count the stop-out state as enrolled headcount.
    pub include_stop_out: bool,
    /// Attach per-state projected/actual counts to the report.
    pub per_state: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self { fit: FitConfig::default(), horizon: 1, include_stop_out: false, per_state: false }
    }
}

/// Fits on snapshots up to and including term `train_through`, projects
/// `horizon` terms and scores the totals against the held-out snapshots.
pub fn backtest(
    snapshots: &[EnrollmentSnapshot],
    space: &StateSpace,
    train_through: usize,
    config: &BacktestConfig,
) -> Result<EvaluationReport> {
    let cut = split_point(snapshots, train_through, config.horizon)?;
    let model = fit(&snapshots[..=cut], space, &config.fit)?;
    backtest_with_model(snapshots, train_through, &model, config)
}

/// Like [`backtest`] but projects with a given model instead of fitting one.
pub fn backtest_with_model(
    snapshots: &[EnrollmentSnapshot],
    train_through: usize,
    model: &TransitionModel,
    config: &BacktestConfig,
) -> Result<EvaluationReport> {
    let cut = split_point(snapshots, train_through, config.horizon)?;
    let space = &model.space;
    let v0 = snapshots[cut].enrolled_counts(space)?;
    let projection = project(&v0, model, config.horizon)?;

    let counted: Vec<bool> = (0..space.n_enrolled())
        .map(|r| config.include_stop_out || Some(r) != space.stop_out_row())
        .collect();
    let headcount = |v: &[f64]| -> f64 { v.iter().zip(&counted).filter(|(_, c)| **c).map(|(x, _)| x).sum() };

    let mut rows = Vec::with_capacity(config.horizon);
    let mut per_state = Vec::new();
    for (point, snap) in projection.points[1..].iter().zip(&snapshots[cut + 1..]) {
        let actual = snap.enrolled_counts(space)?;
        let projected_total = headcount(point.counts.as_slice());
        let actual_total = headcount(actual.as_slice());
        let difference = if projected_total > 0.0 {
            Some(difference_pct(projected_total, actual_total)?)
        } else {
            None
        };
        rows.push(EvaluationRow {
            period: snap.term.label.clone(),
            projected: projected_total,
            actual: actual_total,
            difference_pct: difference,
        });
        if config.per_state {
            per_state.push(StateComparison {
                period: snap.term.label.clone(),
                projected: point.counts.to_labels(space),
                actual: actual.to_labels(space),
            });
        }
    }

    let diffs: Vec<f64> = rows.iter().filter_map(|r| r.difference_pct).collect();
    if diffs.is_empty() {
        return Err(Error::InsufficientData("no held-out period has a positive projected total".into()));
    }
    Ok(EvaluationReport {
        rows,
        bias_pct: bias_pct(&diffs)?,
        mean_abs_difference_pct: mean_abs_difference_pct(&diffs)?,
        per_state: config.per_state.then_some(per_state),
    })
}

fn split_point(snapshots: &[EnrollmentSnapshot], train_through: usize, horizon: usize) -> Result<usize> {
    check_consecutive(snapshots)?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let cut = snapshots
        .iter()
        .position(|s| s.term.index == train_through)
        .ok_or_else(|| Error::InsufficientData(format!("term {train_through} is outside the data range")))?;
    let held_out = snapshots.len() - cut - 1;
    if held_out < horizon {
        return Err(Error::InsufficientData(format!(
            "horizon {horizon} needs {horizon} held-out terms after term {train_through}, found {held_out}"
        )));
    }
    Ok(cut)
}

impl EvaluationReport {
    /// Plain-text table: Year, Projected Enrollment, Actual Enrollment,
    /// Difference (%), followed by the bias and mean absolute difference.
    pub fn to_table(&self) -> String {
        let header = ["Year", "Projected Enrollment", "Actual Enrollment", "Difference (%)"];
        let body: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.period.clone(),
                    group_thousands(r.projected),
                    group_thousands(r.actual),
                    r.difference_pct.map_or_else(|| "n/a".to_string(), format_pct),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }

        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
            header[0],
            header[1],
            header[2],
            header[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3]
        );
        let rule = widths.iter().sum::<usize>() + 6;
        let _ = writeln!(out, "{}", "-".repeat(rule));
        for r in &body {
            let _ = writeln!(
                out,
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                r[0],
                r[1],
                r[2],
                r[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
        }
        let _ = writeln!(out, "{}", "-".repeat(rule));
        let _ = writeln!(out, "Bias (%): {}", format_pct(self.bias_pct));
        let _ = writeln!(out, "Mean absolute difference (%): {}", format_pct(self.mean_abs_difference_pct));
        out
    }
}

/// Rounds to a whole number and inserts thousands separators.
fn group_thousands(x: f64) -> String {
    let n = x.round() as i64;
    let digits = n.unsigned_abs().to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3 + 1);
    if n < 0 {
        out.push('-');
    }
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TermId;

    #[test]
    fn published_rows() {
        let cases = [(10000.0, 9850.0, "-1.50"), (10500.0, 10480.0, "-0.19"), (11000.0, 10990.0, "-0.09"), (12000.0, 11950.0, "-0.42")];
        for (p, a, want) in cases {
            assert_eq!(format_pct(difference_pct(p, a).unwrap()), want);
        }
        assert_eq!(difference_pct(123.0, 123.0).unwrap(), 0.0);
    }

    #[test]
    fn difference_errors() {
        assert!(difference_pct(0.0, 1.0).is_err());
        assert!(difference_pct(-5.0, 1.0).is_err());
        assert!(difference_pct(5.0, f64::NAN).is_err());
    }

    #[test]
    fn summaries() {
        let d = [-1.50, -0.19, -0.09, -0.42];
        assert_eq!(format_pct(bias_pct(&d).unwrap()), "-0.55");
        assert_eq!(format_pct(mean_abs_difference_pct(&d).unwrap()), "0.55");
        assert_eq!(bias_pct(&[1.0, -1.0]).unwrap(), 0.0);
        assert_eq!(bias_pct(&[0.3]).unwrap(), 0.3);
        assert_eq!(mean_abs_difference_pct(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(mean_abs_difference_pct(&[2.0, -2.0]).unwrap(), 2.0);
        assert!(bias_pct(&[]).is_err());
        assert!(mean_abs_difference_pct(&[]).is_err());
    }

    #[test]
    fn thousands() {
        assert_eq!(group_thousands(10000.0), "10,000");
        assert_eq!(group_thousands(999.4), "999");
        assert_eq!(group_thousands(1234567.0), "1,234,567");
        assert_eq!(group_thousands(-1500.0), "-1,500");
        assert_eq!(format_pct(-0.001), "0.00");
    }

    #[test]
    fn table_layout() {
        let report = EvaluationReport {
            rows: vec![
                EvaluationRow { period: "2016".into(), projected: 10000.0, actual: 9850.0, difference_pct: Some(-1.5) },
                EvaluationRow { period: "2017".into(), projected: 10500.0, actual: 10480.0, difference_pct: Some(-0.190476) },
            ],
            bias_pct: -0.845238,
            mean_abs_difference_pct: 0.845238,
            per_state: None,
        };
        let table = report.to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("Year"));
        assert!(lines[0].contains("Projected Enrollment") && lines[0].contains("Actual Enrollment"));
        assert!(lines[0].ends_with("Difference (%)"));
        assert!(lines[2].starts_with("2016") && lines[2].contains("10,000") && lines[2].ends_with("-1.50"));
        assert!(lines[3].ends_with("-0.19"));
        assert!(table.contains("Bias (%): -0.85"));
    }

    fn snap(index: usize, rows: &[(&str, &str)]) -> EnrollmentSnapshot {
        let mut s = EnrollmentSnapshot::new(TermId::new(index, format!("T{index}")));
        for (id, st) in rows {
            s.roster.insert(id.to_string(), st.to_string());
        }
        s
    }

    #[test]
    fn split_errors() {
        let snaps = vec![snap(0, &[("a", "Junior")]), snap(1, &[("a", "Junior")]), snap(2, &[("a", "Junior")])];
        let cfg = BacktestConfig { horizon: 1, ..Default::default() };
        assert!(matches!(backtest(&snaps, &StateSpace::default(), 7, &cfg), Err(Error::InsufficientData(_))));
        let long = BacktestConfig { horizon: 2, ..Default::default() };
        assert!(matches!(backtest(&snaps, &StateSpace::default(), 1, &long), Err(Error::InsufficientData(_))));
        let r = backtest(&snaps, &StateSpace::default(), 1, &cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].difference_pct, Some(0.0));
    }

    #[test]
    fn stop_out_flag() {
        let snaps = vec![
            snap(0, &[("a", "Junior"), ("b", "StopOut")]),
            snap(1, &[("a", "Junior"), ("b", "StopOut")]),
            snap(2, &[("a", "Junior"), ("b", "StopOut")]),
        ];
        let mut cfg = BacktestConfig { horizon: 1, per_state: true, ..Default::default() };
        let r = backtest(&snaps, &StateSpace::default(), 1, &cfg).unwrap();
        assert_eq!(r.rows[0].actual, 1.0);
        assert_eq!(r.per_state.as_ref().unwrap()[0].actual["StopOut"], 1.0);
        cfg.include_stop_out = true;
        let r = backtest(&snaps, &StateSpace::default(), 1, &cfg).unwrap();
        assert_eq!(r.rows[0].actual, 2.0);
        assert_eq!(r.rows[0].projected, 2.0);
    }
}
