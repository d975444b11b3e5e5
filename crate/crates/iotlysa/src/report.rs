//! Machine-readable run reports.
//!
//! A [`Report`] collects everything one invocation produced: input digests,
//! estimate sizes, verdicts, and trace cross-check outcomes. Serialization is
//! stable, and wall-clock timing is included only on request so that repeated
//! runs with the same inputs and seed emit byte-identical reports.

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cfa::{CrossCheckViolation, Estimate};
use crate::security::Verdict;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Element counts of a solved estimate.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateSummary {
    pub nodes: usize,
    pub sigma_hat: usize,
    pub kappa: usize,
    pub theta: usize,
    pub alpha: usize,
    pub max_depth: usize,
}

impl EstimateSummary {
    pub fn of(e: &Estimate) -> Self {
        let (sigma_hat, kappa, theta, alpha) = e.counts();
        EstimateSummary {
            nodes: e.sigma_hat.len(),
            sigma_hat,
            kappa,
            theta,
            alpha,
            max_depth: e.max_depth(),
        }
    }
}

/// One simulated run inside a cross-check batch.
#[derive(Clone, Debug, Serialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub steps: usize,
    pub events: usize,
    pub violations: Vec<CrossCheckViolation>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossCheckSummary {
    pub runs: Vec<RunOutcome>,
    pub total_violations: usize,
}

impl CrossCheckSummary {
    pub fn of(runs: Vec<RunOutcome>) -> Self {
        let total_violations = runs.iter().map(|r| r.violations.len()).sum();
        CrossCheckSummary {
            runs,
            total_violations,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub version: String,
    /// Role (spec, config, estimate, trace) to sha256 of the file contents.
    pub inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateSummary>,
    pub verdicts: Vec<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_check: Option<CrossCheckSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u128>,
}

impl Report {
    pub fn new() -> Self {
        Report {
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: BTreeMap::new(),
            estimate: None,
            verdicts: Vec::new(),
            cross_check: None,
            elapsed_ms: None,
        }
    }

    pub fn record_input(&mut self, role: &str, contents: &[u8]) {
        self.inputs.insert(role.to_string(), sha256_hex(contents));
    }

    pub fn holds(&self) -> bool {
        self.verdicts.iter().all(|v| v.holds)
            && self
                .cross_check
                .as_ref()
                .is_none_or(|c| c.total_violations == 0)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("iotlysa {}\n", self.version));
        for (role, digest) in &self.inputs {
            out.push_str(&format!("input {role}: sha256:{digest}\n"));
        }
        if let Some(s) = &self.estimate {
            out.push_str(&format!(
                "estimate: {} nodes, |sigma_hat|={}, |kappa|={}, |theta|={}, |alpha|={}, depth<={}\n",
                s.nodes, s.sigma_hat, s.kappa, s.theta, s.alpha, s.max_depth
            ));
        }
        for v in &self.verdicts {
            let status = if v.holds { "PASS" } else { "FAIL" };
            out.push_str(&format!(
                "verdict {}: {status} ({} witnesses)\n",
                v.property,
                v.witnesses.len()
            ));
            for w in &v.witnesses {
                out.push_str(&format!("  - {w}\n"));
            }
        }
        if let Some(c) = &self.cross_check {
            let events: usize = c.runs.iter().map(|r| r.events).sum();
            out.push_str(&format!(
                "cross-check: {} runs, {} events, {} violations\n",
                c.runs.len(),
                events,
                c.total_violations
            ));
            for r in &c.runs {
                for v in &r.violations {
                    out.push_str(&format!("  - seed {}: {v}\n", r.seed));
                }
            }
        }
        if let Some(ms) = self.elapsed_ms {
            out.push_str(&format!("elapsed: {ms} ms\n"));
        }
        out
    }
}

impl Default for Report {
    fn default() -> Self {
        Report::new()
    }
}
