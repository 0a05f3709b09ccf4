//! Estimators of the treated-group counterfactual mean under each
//! identification strategy, and the derived effect estimates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{OutcomeKind, PanelDataset};
use crate::error::{Error, Result};

/// Which estimator produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DidMoment,
    LdvControlReg,
    LdvControlRegQuadratic,
    LdvPooledReg,
    LdvNonparametric,
    IpwDid,
    IpwLdv,
}

/// Point estimates from one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub method: Method,
    pub mu1: f64,
    pub mu0: f64,
    pub tau: f64,
    /// Ratio estimate mu1/mu0, reported only when mu0 > 0.
    pub gamma: Option<f64>,
    pub coefficients: Vec<(String, f64)>,
    pub n_treated: usize,
    pub n_control: usize,
}

impl EstimateResult {
    fn new(
        method: Method,
        mu1: f64,
        mu0: f64,
        coefficients: Vec<(String, f64)>,
        n_treated: usize,
        n_control: usize,
    ) -> Self {
        EstimateResult {
            method,
            mu1,
            mu0,
            tau: mu1 - mu0,
            gamma: if mu0 > 0.0 { Some(mu1 / mu0) } else { None },
            coefficients,
            n_treated,
            n_control,
        }
    }
}

/// Ordinary least squares solution of a small design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeastSquaresFit {
    pub coefficients: Vec<f64>,
    pub residual_sum_of_squares: f64,
    pub design: Vec<String>,
}

impl LeastSquaresFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.design
            .iter()
            .position(|d| d == name)
            .map(|i| self.coefficients[i])
    }
}

/// Relative pivot tolerance for rank-deficiency detection.
const PIVOT_TOL: f64 = 1e-12;

/// Solve the normal equations of `rows * beta ~ response` by a Cholesky
/// factorization. Errors name the column at which the pivot collapses.
pub fn fit_least_squares(
    rows: &[Vec<f64>],
    names: &[String],
    response: &[f64],
) -> Result<LeastSquaresFit> {
    let n = rows.len();
    if n != response.len() {
        return Err(Error::Estimation(format!(
            "design has {n} rows but response has {} entries",
            response.len()
        )));
    }
    let k = names.len();
    if n < k {
        return Err(Error::Singular(format!(
            "{n} rows cannot identify {k} coefficients"
        )));
    }
    // Normal equations: small k (<= 4 in practice).
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (row, &y) in rows.iter().zip(response) {
        debug_assert_eq!(row.len(), k);
        for i in 0..k {
            xty[i] += row[i] * y;
            for j in 0..=i {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            xtx[i][j] = xtx[j][i];
        }
    }

    let max_diag = (0..k).map(|i| xtx[i][i]).fold(0.0_f64, f64::max);
    let tol = PIVOT_TOL * max_diag.max(1.0);

    // Cholesky: xtx = L L^T.
    let mut l = vec![vec![0.0; k]; k];
    for j in 0..k {
        let mut d = xtx[j][j];
        for p in 0..j {
            d -= l[j][p] * l[j][p];
        }
        if d <= tol {
            return Err(Error::Singular(format!(
                "column {:?} is collinear with {:?}",
                names[j],
                &names[..j]
            )));
        }
        l[j][j] = d.sqrt();
        for i in (j + 1)..k {
            let mut s = xtx[i][j];
            for p in 0..j {
                s -= l[i][p] * l[j][p];
            }
            l[i][j] = s / l[j][j];
        }
    }

    // Forward then back substitution.
    let mut z = vec![0.0; k];
    for i in 0..k {
        let mut s = xty[i];
        for p in 0..i {
            s -= l[i][p] * z[p];
        }
        z[i] = s / l[i][i];
    }
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = z[i];
        for p in (i + 1)..k {
            s -= l[p][i] * beta[p];
        }
        beta[i] = s / l[i][i];
    }

    let rss = rows
        .iter()
        .zip(response)
        .map(|(row, &y)| {
            let fitted: f64 = row.iter().zip(&beta).map(|(x, b)| x * b).sum();
            (y - fitted) * (y - fitted)
        })
        .sum();

    Ok(LeastSquaresFit {
        coefficients: beta,
        residual_sum_of_squares: rss,
        design: names.to_vec(),
    })
}

/// Per-group per-period sample means.
#[derive(Debug, Clone, Copy)]
pub struct GroupMeans {
    pub n_treated: usize,
    pub n_control: usize,
    pub treated_pre: f64,
    pub treated_post: f64,
    pub control_pre: f64,
    pub control_post: f64,
}

pub fn group_means(ds: &PanelDataset) -> Result<GroupMeans> {
    let mut sums = [[0.0_f64; 2]; 2];
    let mut counts = [0usize; 2];
    for u in &ds.units {
        let g = u.group as usize;
        sums[g][0] += u.y_pre;
        sums[g][1] += u.y_post;
        counts[g] += 1;
    }
    if counts[0] == 0 {
        return Err(Error::Estimation("control group empty".into()));
    }
    if counts[1] == 0 {
        return Err(Error::Estimation("treatment group empty".into()));
    }
    Ok(GroupMeans {
        n_treated: counts[1],
        n_control: counts[0],
        treated_pre: sums[1][0] / counts[1] as f64,
        treated_post: sums[1][1] / counts[1] as f64,
        control_pre: sums[0][0] / counts[0] as f64,
        control_post: sums[0][1] / counts[0] as f64,
    })
}

/// Moment difference-in-differences estimator under parallel trends.
pub fn did_moment(ds: &PanelDataset) -> Result<EstimateResult> {
    let m = group_means(ds)?;
    let tau = (m.treated_post - m.treated_pre) - (m.control_post - m.control_pre);
    let mu1 = m.treated_post;
    Ok(EstimateResult::new(
        Method::DidMoment,
        mu1,
        mu1 - tau,
        vec![],
        m.n_treated,
        m.n_control,
    ))
}

/// Regression specification for the lagged-outcome adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LdvVariant {
    ControlOnly,
    ControlOnlyQuadratic,
    Pooled,
}

/// Lagged-dependent-variable adjustment via least squares.
///
/// Control-only variants fit the control conditional mean and average the
/// fitted curve over the treated lagged outcomes; the pooled variant reads
/// the effect off the group coefficient.
pub fn ldv_regression(ds: &PanelDataset, variant: LdvVariant) -> Result<EstimateResult> {
    let m = group_means(ds)?;
    match variant {
        LdvVariant::ControlOnly | LdvVariant::ControlOnlyQuadratic => {
            let quadratic = variant == LdvVariant::ControlOnlyQuadratic;
            let mut rows = Vec::with_capacity(m.n_control);
            let mut response = Vec::with_capacity(m.n_control);
            for u in ds.control() {
                let mut row = vec![1.0, u.y_pre];
                if quadratic {
                    row.push(u.y_pre * u.y_pre);
                }
                rows.push(row);
                response.push(u.y_post);
            }
            let mut names = vec!["intercept".to_string(), "beta".to_string()];
            if quadratic {
                names = vec![
                    "intercept".to_string(),
                    "beta1".to_string(),
                    "beta2".to_string(),
                ];
            }
            let fit = fit_least_squares(&rows, &names, &response)?;

            // Average the fitted conditional mean over treated lagged outcomes.
            let mut mu0 = 0.0;
            for u in ds.treated() {
                let mut fitted = fit.coefficients[0] + fit.coefficients[1] * u.y_pre;
                if quadratic {
                    fitted += fit.coefficients[2] * u.y_pre * u.y_pre;
                }
                mu0 += fitted;
            }
            mu0 /= m.n_treated as f64;

            let method = if quadratic {
                Method::LdvControlRegQuadratic
            } else {
                Method::LdvControlReg
            };
            let coefficients = names
                .iter()
                .cloned()
                .zip(fit.coefficients.iter().copied())
                .collect();
            Ok(EstimateResult::new(
                method,
                m.treated_post,
                mu0,
                coefficients,
                m.n_treated,
                m.n_control,
            ))
        }
        LdvVariant::Pooled => {
            let mut rows = Vec::with_capacity(ds.n());
            let mut response = Vec::with_capacity(ds.n());
            for u in &ds.units {
                rows.push(vec![1.0, u.group as f64, u.y_pre]);
                response.push(u.y_post);
            }
            let names = vec![
                "intercept".to_string(),
                "group".to_string(),
                "beta_prime".to_string(),
            ];
            let fit = fit_least_squares(&rows, &names, &response)?;
            let tau = fit.coefficients[1];
            let mu1 = m.treated_post;
            let coefficients = names
                .iter()
                .cloned()
                .zip(fit.coefficients.iter().copied())
                .collect();
            Ok(EstimateResult::new(
                Method::LdvPooledReg,
                mu1,
                mu1 - tau,
                coefficients,
                m.n_treated,
                m.n_control,
            ))
        }
    }
}

fn discrete_level(y: f64) -> i64 {
    y.round() as i64
}

/// Control conditional means of `y_post` and group frequencies per discrete
/// `y_pre` level.
pub(crate) struct DiscreteSupport {
    /// level -> (mean y_post among control, control count)
    pub control_means: BTreeMap<i64, (f64, usize)>,
    /// level -> treated count
    pub treated_counts: BTreeMap<i64, usize>,
    pub n_treated: usize,
    pub n_control: usize,
}

pub(crate) fn discrete_support(ds: &PanelDataset) -> Result<DiscreteSupport> {
    if ds.outcome_kind == OutcomeKind::Continuous {
        return Err(Error::Estimation(
            "discrete estimator requires binary or count outcomes".into(),
        ));
    }
    let mut sums: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    let mut treated_counts: BTreeMap<i64, usize> = BTreeMap::new();
    let mut n_treated = 0;
    let mut n_control = 0;
    for u in &ds.units {
        let level = discrete_level(u.y_pre);
        if u.group == 0 {
            let e = sums.entry(level).or_insert((0.0, 0));
            e.0 += u.y_post;
            e.1 += 1;
            n_control += 1;
        } else {
            *treated_counts.entry(level).or_insert(0) += 1;
            n_treated += 1;
        }
    }
    if n_control == 0 {
        return Err(Error::Estimation("control group empty".into()));
    }
    if n_treated == 0 {
        return Err(Error::Estimation("treatment group empty".into()));
    }
    let unsupported: Vec<i64> = treated_counts
        .keys()
        .filter(|l| !sums.contains_key(l))
        .copied()
        .collect();
    if !unsupported.is_empty() {
        return Err(Error::Overlap(unsupported));
    }
    let control_means = sums
        .into_iter()
        .map(|(l, (s, c))| (l, (s / c as f64, c)))
        .collect();
    Ok(DiscreteSupport {
        control_means,
        treated_counts,
        n_treated,
        n_control,
    })
}

/// Nonparametric plug-in under ignorability: control conditional means of the
/// after outcome, averaged over the treated lagged-outcome distribution.
pub fn ldv_nonparametric(ds: &PanelDataset) -> Result<EstimateResult> {
    let support = discrete_support(ds)?;
    let m = group_means(ds)?;
    let mut mu0 = 0.0;
    for (level, count) in &support.treated_counts {
        let (mean, _) = support.control_means[level];
        mu0 += mean * (*count as f64 / support.n_treated as f64);
    }
    Ok(EstimateResult::new(
        Method::LdvNonparametric,
        m.treated_post,
        mu0,
        vec![],
        support.n_treated,
        support.n_control,
    ))
}

/// Inverse probability weighting under parallel trends, with the marginal
/// propensity e = n1/n.
pub fn ipw_did(ds: &PanelDataset) -> Result<EstimateResult> {
    let m = group_means(ds)?;
    let n1 = m.n_treated as f64;
    let n = (m.n_treated + m.n_control) as f64;
    let e = n1 / n;
    let odds = e / (1.0 - e);
    let mut numer = 0.0;
    for u in &ds.units {
        if u.group == 1 {
            numer += u.y_pre;
        } else {
            numer += odds * (u.y_post - u.y_pre);
        }
    }
    let mu0 = numer / n1;
    Ok(EstimateResult::new(
        Method::IpwDid,
        m.treated_post,
        mu0,
        vec![],
        m.n_treated,
        m.n_control,
    ))
}

/// Propensity model for [`ipw_ldv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propensity {
    SaturatedDiscrete,
    Logistic,
}

/// Inverse probability weighting under ignorability, with a propensity score
/// conditional on the lagged outcome.
pub fn ipw_ldv(ds: &PanelDataset, propensity: Propensity) -> Result<EstimateResult> {
    let m = group_means(ds)?;
    let n1 = m.n_treated as f64;
    let mu0 = match propensity {
        Propensity::SaturatedDiscrete => {
            let support = discrete_support(ds)?;
            // Saturated e(y) = n1(y)/(n1(y)+n0(y)); odds reduce to n1(y)/n0(y).
            let mut numer = 0.0;
            for u in ds.control() {
                let level = discrete_level(u.y_pre);
                let n1_level = *support.treated_counts.get(&level).unwrap_or(&0) as f64;
                let n0_level = support.control_means[&level].1 as f64;
                numer += (n1_level / n0_level) * u.y_post;
            }
            numer / n1
        }
        Propensity::Logistic => {
            let fit = fit_logistic(ds)?;
            let mut numer = 0.0;
            for u in ds.control() {
                let e = logistic(fit[0] + fit[1] * u.y_pre);
                if e >= 1.0 - 1e-12 {
                    return Err(Error::Estimation(format!(
                        "positivity violated: propensity reaches 1 at y_pre = {}",
                        u.y_pre
                    )));
                }
                numer += e / (1.0 - e) * u.y_post;
            }
            numer / n1
        }
    };
    Ok(EstimateResult::new(
        Method::IpwLdv,
        m.treated_post,
        mu0,
        vec![],
        m.n_treated,
        m.n_control,
    ))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logistic regression of the group indicator on the lagged outcome by
/// iteratively reweighted least squares. Non-convergence is an error.
fn fit_logistic(ds: &PanelDataset) -> Result<[f64; 2]> {
    const MAX_ITER: usize = 100;
    const TOL: f64 = 1e-10;
    let mut beta = [0.0_f64; 2];
    for _ in 0..MAX_ITER {
        let mut xtwx = [[0.0_f64; 2]; 2];
        let mut xtz = [0.0_f64; 2];
        for u in &ds.units {
            let x = [1.0, u.y_pre];
            let eta = beta[0] * x[0] + beta[1] * x[1];
            let p = logistic(eta);
            let w = (p * (1.0 - p)).max(1e-12);
            let z = eta + (u.group as f64 - p) / w;
            for i in 0..2 {
                xtz[i] += w * x[i] * z;
                for j in 0..2 {
                    xtwx[i][j] += w * x[i] * x[j];
                }
            }
        }
        let det = xtwx[0][0] * xtwx[1][1] - xtwx[0][1] * xtwx[1][0];
        if det.abs() < 1e-300 {
            return Err(Error::Estimation(
                "logistic propensity fit is singular".into(),
            ));
        }
        let new = [
            (xtwx[1][1] * xtz[0] - xtwx[0][1] * xtz[1]) / det,
            (-xtwx[1][0] * xtz[0] + xtwx[0][0] * xtz[1]) / det,
        ];
        let change = (new[0] - beta[0]).abs().max((new[1] - beta[1]).abs());
        beta = new;
        if !beta[0].is_finite() || !beta[1].is_finite() {
            return Err(Error::Estimation(
                "logistic propensity fit diverged".into(),
            ));
        }
        if change < TOL {
            return Ok(beta);
        }
    }
    Err(Error::Estimation(format!(
        "logistic propensity fit did not converge in {MAX_ITER} iterations"
    )))
}

/// Estimator selector for dispatch, stratification, and resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    DidMoment,
    LdvControlReg,
    LdvControlRegQuadratic,
    LdvPooledReg,
    LdvNonparametric,
    IpwDid,
    IpwLdvSaturated,
    IpwLdvLogistic,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::DidMoment => "did_moment",
            EstimatorKind::LdvControlReg => "ldv_control_reg",
            EstimatorKind::LdvControlRegQuadratic => "ldv_control_reg_quadratic",
            EstimatorKind::LdvPooledReg => "ldv_pooled_reg",
            EstimatorKind::LdvNonparametric => "ldv_nonparametric",
            EstimatorKind::IpwDid => "ipw_did",
            EstimatorKind::IpwLdvSaturated => "ipw_ldv_saturated",
            EstimatorKind::IpwLdvLogistic => "ipw_ldv_logistic",
        }
    }
}

/// Run the selected estimator on a dataset.
pub fn estimate(ds: &PanelDataset, kind: EstimatorKind) -> Result<EstimateResult> {
    match kind {
        EstimatorKind::DidMoment => did_moment(ds),
        EstimatorKind::LdvControlReg => ldv_regression(ds, LdvVariant::ControlOnly),
        EstimatorKind::LdvControlRegQuadratic => {
            ldv_regression(ds, LdvVariant::ControlOnlyQuadratic)
        }
        EstimatorKind::LdvPooledReg => ldv_regression(ds, LdvVariant::Pooled),
        EstimatorKind::LdvNonparametric => ldv_nonparametric(ds),
        EstimatorKind::IpwDid => ipw_did(ds),
        EstimatorKind::IpwLdvSaturated => ipw_ldv(ds, Propensity::SaturatedDiscrete),
        EstimatorKind::IpwLdvLogistic => ipw_ldv(ds, Propensity::Logistic),
    }
}

/// Run the inner estimator within each stratum and aggregate by the treated
/// share of each stratum.
pub fn stratified(ds: &PanelDataset, inner: EstimatorKind) -> Result<EstimateResult> {
    let mut labels: Vec<Option<String>> = Vec::new();
    for u in &ds.units {
        if !labels.contains(&u.stratum) {
            labels.push(u.stratum.clone());
        }
    }

    let n_treated_total = ds.n_treated();
    if n_treated_total == 0 {
        return Err(Error::Estimation("treatment group empty".into()));
    }

    let mut mu1 = 0.0;
    let mut mu0 = 0.0;
    let mut n_control_total = 0;
    for label in &labels {
        let units: Vec<_> = ds
            .units
            .iter()
            .filter(|u| &u.stratum == label)
            .cloned()
            .collect();
        let n_treated_stratum = units.iter().filter(|u| u.group == 1).count();
        if n_treated_stratum == 0 {
            // Strata without treated units get zero weight.
            n_control_total += units.len();
            continue;
        }
        if !units.iter().any(|u| u.group == 0) {
            return Err(Error::Estimation(format!(
                "stratum {:?} has treated units but no control units",
                label.as_deref().unwrap_or("(none)")
            )));
        }
        let sub = PanelDataset {
            units,
            outcome_kind: ds.outcome_kind,
            top_code: ds.top_code,
        };
        let result = estimate(&sub, inner)?;
        let weight = n_treated_stratum as f64 / n_treated_total as f64;
        mu1 += weight * result.mu1;
        mu0 += weight * result.mu0;
        n_control_total += result.n_control;
    }

    Ok(EstimateResult::new(
        estimate_method(inner),
        mu1,
        mu0,
        vec![],
        n_treated_total,
        n_control_total,
    ))
}

fn estimate_method(kind: EstimatorKind) -> Method {
    match kind {
        EstimatorKind::DidMoment => Method::DidMoment,
        EstimatorKind::LdvControlReg => Method::LdvControlReg,
        EstimatorKind::LdvControlRegQuadratic => Method::LdvControlRegQuadratic,
        EstimatorKind::LdvPooledReg => Method::LdvPooledReg,
        EstimatorKind::LdvNonparametric => Method::LdvNonparametric,
        EstimatorKind::IpwDid => Method::IpwDid,
        EstimatorKind::IpwLdvSaturated | EstimatorKind::IpwLdvLogistic => Method::IpwLdv,
    }
}
