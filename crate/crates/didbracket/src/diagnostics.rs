//! Empirical checks of the two bracketing conditions, the decomposition of
//! the gap between the two counterfactual means, and the predicted-versus-
//! observed ordering of the estimates.

use serde::{Deserialize, Serialize};

use crate::data::{OutcomeKind, PanelDataset};
use crate::error::{Error, Result};
use crate::estimators::{discrete_support, fit_least_squares, group_means, EstimateResult};

/// How the stationarity condition was assessed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationarityMethod {
    RegressionSlope,
    DiscreteDifferences,
    BinaryAuto,
}

/// One local slope of the control conditional mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeStat {
    /// Upper endpoint of the difference for discrete data; absent for the
    /// global regression slope.
    pub location: Option<f64>,
    pub slope: f64,
}

/// Empirical check that the control conditional mean grows slower than the
/// identity, i.e. every local slope is below 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub method: StationarityMethod,
    pub statistics: Vec<SlopeStat>,
    pub satisfied: bool,
    /// 1 minus the largest slope.
    pub margin: f64,
    pub notes: Vec<String>,
}

/// Discrete conditional means of y_post given y_pre in the control group,
/// over the control support.
fn control_conditional_means(ds: &PanelDataset) -> Vec<(i64, f64)> {
    let mut acc: std::collections::BTreeMap<i64, (f64, usize)> = Default::default();
    for u in ds.control() {
        let e = acc.entry(u.y_pre.round() as i64).or_insert((0.0, 0));
        e.0 += u.y_post;
        e.1 += 1;
    }
    acc.into_iter().map(|(l, (s, c))| (l, s / c as f64)).collect()
}

pub fn check_stationarity(ds: &PanelDataset) -> Result<StationarityReport> {
    if ds.n_control() == 0 {
        return Err(Error::Estimation("control group empty".into()));
    }
    let mut notes = Vec::new();
    if let Some(k) = ds.top_code {
        notes.push(format!(
            "levels at {k} are top-coded ({k}+ materialized as {k}); conditional means at the top level reflect the truncated table"
        ));
    }
    match ds.outcome_kind {
        OutcomeKind::Binary => {
            // Conditional means are bounded in [0,1], so the condition holds.
            let means = control_conditional_means(ds);
            let mut statistics = Vec::new();
            for pair in means.windows(2) {
                let (y0, m0) = pair[0];
                let (y1, m1) = pair[1];
                statistics.push(SlopeStat {
                    location: Some(y1 as f64),
                    slope: (m1 - m0) / (y1 - y0) as f64,
                });
            }
            let margin = 1.0
                - statistics
                    .iter()
                    .map(|s| s.slope)
                    .fold(f64::NEG_INFINITY, f64::max)
                    .max(0.0);
            Ok(StationarityReport {
                method: StationarityMethod::BinaryAuto,
                statistics,
                satisfied: true,
                margin,
                notes,
            })
        }
        OutcomeKind::Count => {
            let means = control_conditional_means(ds);
            // Treated-only levels cannot be evaluated; flag and exclude them.
            let control_levels: std::collections::BTreeSet<i64> =
                means.iter().map(|(l, _)| *l).collect();
            let mut unevaluable: Vec<i64> = ds
                .treated()
                .map(|u| u.y_pre.round() as i64)
                .filter(|l| !control_levels.contains(l))
                .collect();
            unevaluable.sort_unstable();
            unevaluable.dedup();
            if !unevaluable.is_empty() {
                notes.push(format!(
                    "y_pre levels {unevaluable:?} have no control units; their differences are unevaluable and excluded"
                ));
            }
            let mut statistics = Vec::new();
            for pair in means.windows(2) {
                let (y0, m0) = pair[0];
                let (y1, m1) = pair[1];
                // Gap-scaled difference between consecutive control-supported levels.
                statistics.push(SlopeStat {
                    location: Some(y1 as f64),
                    slope: (m1 - m0) / (y1 - y0) as f64,
                });
            }
            let max_slope = statistics
                .iter()
                .map(|s| s.slope)
                .fold(f64::NEG_INFINITY, f64::max);
            let (satisfied, margin) = if statistics.is_empty() {
                (true, 1.0)
            } else {
                (max_slope < 1.0, 1.0 - max_slope)
            };
            Ok(StationarityReport {
                method: StationarityMethod::DiscreteDifferences,
                statistics,
                satisfied,
                margin,
                notes,
            })
        }
        OutcomeKind::Continuous => {
            let mut rows = Vec::new();
            let mut response = Vec::new();
            for u in ds.control() {
                rows.push(vec![1.0, u.y_pre]);
                response.push(u.y_post);
            }
            let names = vec!["intercept".to_string(), "beta".to_string()];
            let fit = fit_least_squares(&rows, &names, &response)?;
            let beta = fit.coefficients[1];
            notes.push(
                "continuous outcome: pointwise condition approximated by the linear control-regression slope".into(),
            );
            Ok(StationarityReport {
                method: StationarityMethod::RegressionSlope,
                statistics: vec![SlopeStat {
                    location: None,
                    slope: beta,
                }],
                satisfied: beta < 1.0,
                margin: 1.0 - beta,
                notes,
            })
        }
    }
}

/// Which group's lagged-outcome CDF dominates pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Treated CDF >= control CDF everywhere (treated stochastically smaller).
    A,
    /// Treated CDF <= control CDF everywhere (treated stochastically larger).
    B,
    None,
}

/// Pointwise comparison of the groups' lagged-outcome CDFs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub evaluation_points: Vec<f64>,
    pub cdf_treated: Vec<f64>,
    pub cdf_control: Vec<f64>,
    pub direction: Direction,
    pub max_violation: f64,
    pub degenerate_equality: bool,
}

pub fn check_monotonicity(ds: &PanelDataset, tolerance: f64) -> Result<MonotonicityReport> {
    let _ = group_means(ds)?; // both groups nonempty
    let mut points: Vec<f64> = ds.units.iter().map(|u| u.y_pre).collect();
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();

    let ecdf = |group: u8| -> Vec<f64> {
        let mut ys: Vec<f64> = ds
            .units
            .iter()
            .filter(|u| u.group == group)
            .map(|u| u.y_pre)
            .collect();
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = ys.len() as f64;
        points
            .iter()
            .map(|&p| ys.partition_point(|&y| y <= p) as f64 / n)
            .collect()
    };
    let cdf_treated = ecdf(1);
    let cdf_control = ecdf(0);

    // violation_a: amount by which treated fails to dominate from above.
    let mut violation_a = 0.0_f64;
    let mut violation_b = 0.0_f64;
    for (t, c) in cdf_treated.iter().zip(&cdf_control) {
        violation_a = violation_a.max(c - t);
        violation_b = violation_b.max(t - c);
    }

    let a_holds = violation_a <= tolerance;
    let b_holds = violation_b <= tolerance;
    let (direction, max_violation, degenerate_equality) = match (a_holds, b_holds) {
        (true, true) => (Direction::A, 0.0, true),
        (true, false) => (Direction::A, violation_a, false),
        (false, true) => (Direction::B, violation_b, false),
        (false, false) => (Direction::None, violation_a.min(violation_b), false),
    };

    Ok(MonotonicityReport {
        evaluation_points: points,
        cdf_treated,
        cdf_control,
        direction,
        max_violation,
        degenerate_equality,
    })
}

/// Expected outcome change in the control group conditional on the lagged
/// outcome, tabulated per level, and the gap it induces between the two
/// counterfactual means when averaged over each group's lagged distribution.
pub fn lemma1_gap(ds: &PanelDataset) -> Result<(Vec<(f64, f64)>, f64)> {
    match ds.outcome_kind {
        OutcomeKind::Binary | OutcomeKind::Count => {
            let support = discrete_support(ds)?;
            let delta_table: Vec<(f64, f64)> = support
                .control_means
                .iter()
                .map(|(&level, &(mean, _))| (level as f64, mean - level as f64))
                .collect();
            let mut gap = 0.0;
            for &(y, delta) in &delta_table {
                let level = y as i64;
                let p1 = *support.treated_counts.get(&level).unwrap_or(&0) as f64
                    / support.n_treated as f64;
                let p0 = support.control_means[&level].1 as f64 / support.n_control as f64;
                gap += delta * (p1 - p0);
            }
            Ok((delta_table, gap))
        }
        OutcomeKind::Continuous => {
            let m = group_means(ds)?;
            let mut rows = Vec::new();
            let mut response = Vec::new();
            for u in ds.control() {
                rows.push(vec![1.0, u.y_pre]);
                response.push(u.y_post);
            }
            let names = vec!["intercept".to_string(), "beta".to_string()];
            let fit = fit_least_squares(&rows, &names, &response)?;
            let (alpha, beta) = (fit.coefficients[0], fit.coefficients[1]);
            // Fitted Delta(y) = alpha + (beta - 1) y; its group-mean difference.
            let gap = (beta - 1.0) * (m.treated_pre - m.control_pre);
            let lo = ds
                .units
                .iter()
                .map(|u| u.y_pre)
                .fold(f64::INFINITY, f64::min);
            let hi = ds
                .units
                .iter()
                .map(|u| u.y_pre)
                .fold(f64::NEG_INFINITY, f64::max);
            let delta_table = vec![
                (lo, alpha + (beta - 1.0) * lo),
                (hi, alpha + (beta - 1.0) * hi),
            ];
            Ok((delta_table, gap))
        }
    }
}

/// Ordering of the two estimates implied by the conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictedOrder {
    DidGeLdv,
    DidLeLdv,
    Indeterminate,
}

/// Predicted versus observed ordering of the two effect estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketReport {
    pub delta_table: Vec<(f64, f64)>,
    pub lemma1_gap: f64,
    pub predicted_order: PredictedOrder,
    pub observed_tau_did: f64,
    pub observed_tau_ldv: f64,
    pub observed_order: PredictedOrder,
    /// Present only when the prediction is determinate.
    pub agreement: Option<bool>,
}

/// Combine the condition checks with the observed estimates. The prediction
/// never extrapolates beyond the conditions' premises: any failed check
/// yields an indeterminate prediction with the observed ordering attached.
pub fn predict_bracket(
    stationarity: &StationarityReport,
    monotonicity: &MonotonicityReport,
    did: &EstimateResult,
    ldv: &EstimateResult,
    delta_table: Vec<(f64, f64)>,
    gap: f64,
) -> BracketReport {
    let predicted = if stationarity.satisfied {
        match monotonicity.direction {
            Direction::A => PredictedOrder::DidGeLdv,
            Direction::B => PredictedOrder::DidLeLdv,
            Direction::None => PredictedOrder::Indeterminate,
        }
    } else {
        PredictedOrder::Indeterminate
    };

    let diff = did.tau - ldv.tau;
    let observed = if diff >= 0.0 {
        PredictedOrder::DidGeLdv
    } else {
        PredictedOrder::DidLeLdv
    };
    let agreement = match predicted {
        PredictedOrder::Indeterminate => None,
        PredictedOrder::DidGeLdv => Some(diff >= -1e-12),
        PredictedOrder::DidLeLdv => Some(diff <= 1e-12),
    };

    BracketReport {
        delta_table,
        lemma1_gap: gap,
        predicted_order: predicted,
        observed_tau_did: did.tau,
        observed_tau_ldv: ldv.tau,
        observed_order: observed,
        agreement,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{OutcomeKind, PanelDataset, PanelUnit};
    use crate::estimators::{did_moment, ldv_nonparametric};
    use crate::testutil::{crash_table_dataset, tiny_dataset};
    use approx::assert_abs_diff_eq;

    #[test]
    fn crash_table_conditional_means_and_stationarity() {
        let ds = crash_table_dataset();
        let means = control_conditional_means(&ds);
        let expected = [0.368, 0.571, 0.670, 0.660];
        for ((_, m), e) in means.iter().zip(expected) {
            assert_abs_diff_eq!(*m, e, epsilon = 5e-4);
        }
        let report = check_stationarity(&ds).unwrap();
        assert_eq!(report.method, StationarityMethod::DiscreteDifferences);
        assert!(report.satisfied);
        assert!(report.statistics.iter().all(|s| s.slope < 1.0));
        assert!(report.notes.iter().any(|n| n.contains("top-coded")));
    }

    #[test]
    fn binary_data_auto_satisfies_stationarity() {
        let ds = crash_table_dataset().dichotomized();
        let report = check_stationarity(&ds).unwrap();
        assert_eq!(report.method, StationarityMethod::BinaryAuto);
        assert!(report.satisfied);
    }

    #[test]
    fn tiny_set_violates_stationarity_with_margin() {
        let mut ds = tiny_dataset();
        ds.outcome_kind = OutcomeKind::Continuous;
        let report = check_stationarity(&ds).unwrap();
        assert_eq!(report.method, StationarityMethod::RegressionSlope);
        assert!(!report.satisfied);
        assert_abs_diff_eq!(report.margin, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn crash_table_cdfs_match_reported_values() {
        let ds = crash_table_dataset();
        let report = check_monotonicity(&ds, 0.0).unwrap();
        assert_eq!(report.direction, Direction::A);
        let expect_t = [0.700, 0.909, 0.973, 1.0];
        let expect_c = [0.666, 0.898, 0.968, 1.0];
        for i in 0..4 {
            assert_abs_diff_eq!(report.cdf_treated[i], expect_t[i], epsilon = 1e-3);
            assert_abs_diff_eq!(report.cdf_control[i], expect_c[i], epsilon = 1e-3);
        }
    }

    #[test]
    fn identical_groups_report_degenerate_equality() {
        let mut units = Vec::new();
        for (i, pre) in [0.0, 1.0, 2.0].iter().enumerate() {
            for g in [0u8, 1u8] {
                units.push(PanelUnit {
                    unit_id: format!("u{g}{i}"),
                    group: g,
                    y_pre: *pre,
                    y_post: *pre,
                    stratum: None,
                });
            }
        }
        let ds = PanelDataset {
            units,
            outcome_kind: OutcomeKind::Count,
            top_code: None,
        };
        let report = check_monotonicity(&ds, 0.0).unwrap();
        assert_eq!(report.direction, Direction::A);
        assert!(report.degenerate_equality);
        assert_eq!(report.max_violation, 0.0);
    }

    #[test]
    fn crossing_cdfs_yield_direction_none() {
        // Treated mass at {0, 10}, control at {5}: the CDFs cross at 0 and 5.
        let mk = |id: &str, g: u8, pre: f64| PanelUnit {
            unit_id: id.into(),
            group: g,
            y_pre: pre,
            y_post: 0.0,
            stratum: None,
        };
        let ds = PanelDataset {
            units: vec![mk("t1", 1, 0.0), mk("t2", 1, 10.0), mk("c1", 0, 5.0)],
            outcome_kind: OutcomeKind::Count,
            top_code: None,
        };
        let report = check_monotonicity(&ds, 0.0).unwrap();
        assert_eq!(report.direction, Direction::None);
        assert!(report.max_violation > 0.0);
    }

    #[test]
    fn gap_equals_estimator_difference_on_crash_table() {
        let ds = crash_table_dataset();
        let (_, gap) = lemma1_gap(&ds).unwrap();
        let expected = ldv_nonparametric(&ds).unwrap().mu0 - did_moment(&ds).unwrap().mu0;
        assert_abs_diff_eq!(gap, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(gap, 0.043, epsilon = 1e-3);

        let binary = ds.dichotomized();
        let (_, gap_b) = lemma1_gap(&binary).unwrap();
        let expected_b =
            ldv_nonparametric(&binary).unwrap().mu0 - did_moment(&binary).unwrap().mu0;
        assert_abs_diff_eq!(gap_b, expected_b, epsilon = 1e-12);
        assert_abs_diff_eq!(gap_b, 0.030, epsilon = 1e-3);
    }

    #[test]
    fn gap_is_zero_when_pre_distributions_match() {
        let mut units = Vec::new();
        for (i, pre) in [0.0, 1.0, 2.0].iter().enumerate() {
            units.push(PanelUnit {
                unit_id: format!("c{i}"),
                group: 0,
                y_pre: *pre,
                y_post: pre + 1.0,
                stratum: None,
            });
            units.push(PanelUnit {
                unit_id: format!("t{i}"),
                group: 1,
                y_pre: *pre,
                y_post: pre + 2.0,
                stratum: None,
            });
        }
        let ds = PanelDataset {
            units,
            outcome_kind: OutcomeKind::Count,
            top_code: None,
        };
        let (_, gap) = lemma1_gap(&ds).unwrap();
        assert_abs_diff_eq!(gap, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn crash_table_bracket_prediction_agrees() {
        let ds = crash_table_dataset();
        let st = check_stationarity(&ds).unwrap();
        let mono = check_monotonicity(&ds, 0.0).unwrap();
        let did = did_moment(&ds).unwrap();
        let ldv = ldv_nonparametric(&ds).unwrap();
        let (table, gap) = lemma1_gap(&ds).unwrap();
        let report = predict_bracket(&st, &mono, &did, &ldv, table, gap);
        assert_eq!(report.predicted_order, PredictedOrder::DidGeLdv);
        assert_abs_diff_eq!(report.observed_tau_did, -0.045, epsilon = 1e-3);
        assert_abs_diff_eq!(report.observed_tau_ldv, -0.087, epsilon = 1e-3);
        assert_eq!(report.agreement, Some(true));
    }

    #[test]
    fn violated_stationarity_is_indeterminate() {
        let mut ds = tiny_dataset();
        ds.outcome_kind = OutcomeKind::Continuous;
        let st = check_stationarity(&ds).unwrap();
        assert!(!st.satisfied);
        let mono = check_monotonicity(&ds, 0.0).unwrap();
        let did = did_moment(&ds).unwrap();
        let ldv = crate::estimators::ldv_regression(
            &ds,
            crate::estimators::LdvVariant::ControlOnly,
        )
        .unwrap();
        let (table, gap) = lemma1_gap(&ds).unwrap();
        let report = predict_bracket(&st, &mono, &did, &ldv, table, gap);
        assert_eq!(report.predicted_order, PredictedOrder::Indeterminate);
        assert!(report.agreement.is_none());
    }

    #[test]
    fn monotonicity_invariant_to_increasing_relabeling() {
        let ds = crash_table_dataset();
        let before = check_monotonicity(&ds, 0.0).unwrap();
        let mut relabeled = ds.clone();
        for u in &mut relabeled.units {
            u.y_pre = (u.y_pre + 1.0).powi(2); // strictly increasing map
        }
        let after = check_monotonicity(&relabeled, 0.0).unwrap();
        assert_eq!(before.direction, after.direction);
        assert_eq!(before.cdf_treated, after.cdf_treated);
        assert_eq!(before.cdf_control, after.cdf_control);
    }
}
