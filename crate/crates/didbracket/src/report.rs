//! Versioned report envelope emitted by the command-line frontend, with
//! JSON and markdown renderings. JSON carries full precision; markdown
//! rounds to 3 decimals for display.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{MonotonicityReport, StationarityReport};
use crate::inference::{ComparisonReport, EstimatorOutcome, IntervalEstimate};
use crate::simulate::{DgpSpec, MonteCarloSummary};

pub const SCHEMA_VERSION: u32 = 1;

/// Subcommand-specific report content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Payload {
    Estimate {
        estimate: crate::estimators::EstimateResult,
    },
    Diagnose {
        stationarity: StationarityReport,
        monotonicity: MonotonicityReport,
        delta_table: Vec<(f64, f64)>,
        lemma1_gap: f64,
    },
    Bracket {
        stationarity: StationarityReport,
        monotonicity: MonotonicityReport,
        comparison: ComparisonReport,
    },
    Bootstrap {
        intervals: Vec<IntervalEstimate>,
    },
    Simulate {
        spec: DgpSpec,
        summary: MonteCarloSummary,
    },
}

/// Machine-readable report wrapper. The input digest is a SHA-256 over the
/// exact input bytes, so identical inputs hash identically across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvelope {
    pub tool_version: String,
    pub schema_version: u32,
    pub input_digest: String,
    pub command: String,
    pub timestamp: String,
    pub payload: Payload,
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// RFC 3339 timestamp. Honors SOURCE_DATE_EPOCH so reports can be
/// byte-identical across reruns.
pub fn timestamp_now() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse::<i64>().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs() as i64)
                .unwrap_or(0)
        });
    chrono::DateTime::from_timestamp(secs, 0)
        .unwrap_or_default()
        .to_rfc3339()
}

impl ReportEnvelope {
    pub fn new(input_digest: String, command: String, payload: Payload) -> Self {
        ReportEnvelope {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: SCHEMA_VERSION,
            input_digest,
            command,
            timestamp: timestamp_now(),
            payload,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &str| {
            out.push_str(line);
            out.push('\n');
        };
        push(&format!(
            "# didbracket report (v{}, schema {})",
            self.tool_version, self.schema_version
        ));
        push("");
        push(&format!("- command: `{}`", self.command));
        push(&format!("- input digest: `{}`", self.input_digest));
        push(&format!("- timestamp: {}", self.timestamp));
        push("");
        match &self.payload {
            Payload::Estimate { estimate } => {
                push("## Estimate");
                push("");
                render_estimate(&mut out, estimate);
            }
            Payload::Diagnose {
                stationarity,
                monotonicity,
                delta_table,
                lemma1_gap,
            } => {
                render_diagnostics(&mut out, stationarity, monotonicity);
                render_delta(&mut out, delta_table, *lemma1_gap);
            }
            Payload::Bracket {
                stationarity,
                monotonicity,
                comparison,
            } => {
                render_diagnostics(&mut out, stationarity, monotonicity);
                render_comparison(&mut out, comparison);
            }
            Payload::Bootstrap { intervals } => {
                render_intervals(&mut out, intervals);
            }
            Payload::Simulate { spec, summary } => {
                render_simulation(&mut out, spec, summary);
            }
        }
        out
    }
}

fn f(x: f64) -> String {
    format!("{x:.3}")
}

fn render_estimate(out: &mut String, e: &crate::estimators::EstimateResult) {
    out.push_str(&format!("- method: {:?}\n", e.method));
    out.push_str(&format!("- mu1: {}\n", f(e.mu1)));
    out.push_str(&format!("- mu0: {}\n", f(e.mu0)));
    out.push_str(&format!("- tau: {}\n", f(e.tau)));
    match e.gamma {
        Some(g) => out.push_str(&format!("- gamma: {}\n", f(g))),
        None => out.push_str("- gamma: unavailable (mu0 not positive)\n"),
    }
    for (name, value) in &e.coefficients {
        out.push_str(&format!("- coefficient {name}: {}\n", f(*value)));
    }
    out.push_str(&format!(
        "- n_treated: {} / n_control: {}\n",
        e.n_treated, e.n_control
    ));
}

fn render_diagnostics(
    out: &mut String,
    st: &StationarityReport,
    mono: &MonotonicityReport,
) {
    out.push_str("## Stationarity\n\n");
    out.push_str(&format!(
        "- method: {:?}, satisfied: {}, margin: {}\n",
        st.method,
        st.satisfied,
        f(st.margin)
    ));
    for s in &st.statistics {
        match s.location {
            Some(y) => out.push_str(&format!("- slope at y = {}: {}\n", f(y), f(s.slope))),
            None => out.push_str(&format!("- regression slope: {}\n", f(s.slope))),
        }
    }
    for note in &st.notes {
        out.push_str(&format!("- note: {note}\n"));
    }
    out.push_str("\n## Stochastic monotonicity\n\n");
    out.push_str(&format!(
        "- direction: {:?}, max violation: {}{}\n",
        mono.direction,
        f(mono.max_violation),
        if mono.degenerate_equality {
            " (degenerate equality)"
        } else {
            ""
        }
    ));
    out.push_str("\n| y | cdf_treated | cdf_control |\n|---|---|---|\n");
    for i in 0..mono.evaluation_points.len() {
        out.push_str(&format!(
            "| {} | {} | {} |\n",
            f(mono.evaluation_points[i]),
            f(mono.cdf_treated[i]),
            f(mono.cdf_control[i])
        ));
    }
    out.push('\n');
}

fn render_delta(out: &mut String, delta_table: &[(f64, f64)], gap: f64) {
    out.push_str("## Outcome-change decomposition\n\n");
    out.push_str("| y | delta(y) |\n|---|---|\n");
    for (y, d) in delta_table {
        out.push_str(&format!("| {} | {} |\n", f(*y), f(*d)));
    }
    out.push_str(&format!("\n- gap (mu0_ldv - mu0_did): {}\n", f(gap)));
}

fn render_comparison(out: &mut String, cmp: &ComparisonReport) {
    out.push_str("## Estimates\n\n");
    out.push_str("| estimator | mu1 | mu0 | tau | gamma |\n|---|---|---|---|---|\n");
    for (name, outcome) in &cmp.estimates {
        match outcome {
            EstimatorOutcome::Ok { result } => {
                let gamma = result
                    .gamma
                    .map(|g| f(g))
                    .unwrap_or_else(|| "-".to_string());
                out.push_str(&format!(
                    "| {name} | {} | {} | {} | {gamma} |\n",
                    f(result.mu1),
                    f(result.mu0),
                    f(result.tau)
                ));
            }
            EstimatorOutcome::Unavailable { reason } => {
                out.push_str(&format!("| {name} | - | - | - | - |\n"));
                out.push_str(&format!("\n- {name} unavailable: {reason}\n"));
            }
        }
    }
    if let Some(bracket) = &cmp.bracket {
        out.push_str("\n## Bracket\n\n");
        out.push_str(&format!(
            "- predicted order: {:?}\n- observed: tau_did = {} vs tau_ldv = {} ({:?})\n",
            bracket.predicted_order,
            f(bracket.observed_tau_did),
            f(bracket.observed_tau_ldv),
            bracket.observed_order
        ));
        out.push_str(&format!("- lemma gap: {}\n", f(bracket.lemma1_gap)));
        match bracket.agreement {
            Some(a) => out.push_str(&format!("- agreement with prediction: {a}\n")),
            None => out.push_str("- agreement: not applicable (indeterminate prediction)\n"),
        }
    }
    if !cmp.differences.is_empty() {
        out.push('\n');
        render_intervals(out, &cmp.differences);
    }
    for w in &cmp.warnings {
        out.push_str(&format!("\n- warning: {w}\n"));
    }
}

fn render_intervals(out: &mut String, intervals: &[IntervalEstimate]) {
    out.push_str("## Bootstrap intervals\n\n");
    out.push_str(
        "| target | point | lower | upper | std error | significant | used | dropped |\n|---|---|---|---|---|---|---|---|\n",
    );
    for iv in intervals {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
            iv.target,
            f(iv.point),
            f(iv.lower),
            f(iv.upper),
            f(iv.std_error),
            iv.significant_at_level,
            iv.replicates_used,
            iv.replicates_dropped
        ));
    }
}

fn render_simulation(out: &mut String, spec: &DgpSpec, summary: &MonteCarloSummary) {
    out.push_str("## Simulation\n\n");
    out.push_str(&format!(
        "- family: {:?}, n = {}, tau_true = {}, beta = {}, selection = {}\n",
        spec.family,
        spec.n,
        f(spec.tau_true),
        f(spec.beta),
        f(spec.selection)
    ));
    out.push_str(&format!(
        "- replications: {} (failed: {})\n",
        summary.replications, summary.failed_replications
    ));
    out.push_str("\n| estimator | mean bias | empirical sd |\n|---|---|---|\n");
    for (name, s) in &summary.per_estimator {
        out.push_str(&format!(
            "| {name} | {} | {} |\n",
            f(s.mean_bias),
            f(s.empirical_sd)
        ));
    }
    out.push_str(&format!(
        "\n- did >= ldv frequency: {}\n- stationarity pass rate: {}\n- direction a rate: {}\n- direction b rate: {}\n",
        f(summary.did_ge_ldv_frequency),
        f(summary.stationarity_pass_rate),
        f(summary.monotonicity_direction_a_rate),
        f(summary.monotonicity_direction_b_rate)
    ));
}
