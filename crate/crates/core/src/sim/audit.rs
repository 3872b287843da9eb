//! Forward-invariance audit over a completed trace.

use std::fmt;

use crate::ecbf::OutputChannel;

use super::trace::SimTrace;

/// Invariance tolerance scaled with the hold interval: the zero-order hold
/// introduces first-order-in-dt constraint error.
pub fn default_tolerance(dt: f64) -> f64 {
    (1e-3 * dt).max(1e-6)
}

#[derive(Debug, Clone)]
pub struct ChannelAudit {
    pub name: String,
    /// Minimum over time of each lower psi level (level 0 is h_lower).
    pub min_psi_lower: Vec<f64>,
    pub min_psi_upper: Vec<f64>,
    pub min_slack_lower: f64,
    pub min_slack_upper: f64,
    pub max_lambda_lower: f64,
    pub max_lambda_upper: f64,
}

#[derive(Debug, Clone)]
pub struct InvarianceReport {
    pub tol: f64,
    pub steps: usize,
    pub channels: Vec<ChannelAudit>,
    pub min_psi: f64,
    pub min_slack: f64,
    /// Largest number of strictly positive multipliers at one step.
    pub max_active: usize,
    /// Steps where both sides of one channel had positive multipliers.
    pub both_sides_steps: usize,
    pub max_complementarity: f64,
    /// Set when the initial state was outside the safe set, in which case
    /// a failing audit is expected rather than a counterexample.
    pub x0_warning: bool,
    pub pass: bool,
}

impl fmt::Display for InvarianceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "invariance audit: {} (tol {:.1e}, {} steps)",
            if self.pass { "PASS" } else { "FAIL" },
            self.tol,
            self.steps
        )?;
        if self.x0_warning {
            writeln!(
                f,
                "  warning: initial state outside the safe set; invariance is not promised"
            )?;
        }
        writeln!(f, "  min psi over all channels and levels: {:.6e}", self.min_psi)?;
        writeln!(f, "  min constraint slack: {:.6e}", self.min_slack)?;
        writeln!(
            f,
            "  max simultaneously positive multipliers: {} (limit {})",
            self.max_active,
            self.channels.len()
        )?;
        writeln!(
            f,
            "  steps with both sides of a channel active: {}",
            self.both_sides_steps
        )?;
        writeln!(
            f,
            "  max multiplier-slack product: {:.6e}",
            self.max_complementarity
        )?;
        for ch in &self.channels {
            writeln!(
                f,
                "  channel {}: min psi_lower {:?}, min psi_upper {:?}, min slack (lo {:.3e}, up {:.3e}), max lambda (lo {:.3e}, up {:.3e})",
                ch.name,
                ch.min_psi_lower
                    .iter()
                    .map(|v| format!("{v:.3e}"))
                    .collect::<Vec<_>>(),
                ch.min_psi_upper
                    .iter()
                    .map(|v| format!("{v:.3e}"))
                    .collect::<Vec<_>>(),
                ch.min_slack_lower,
                ch.min_slack_upper,
                ch.max_lambda_lower,
                ch.max_lambda_upper,
            )?;
        }
        Ok(())
    }
}

/// Scans a trace for invariance violations: every psi level and every
/// constraint slack must stay above -tol, at most m multipliers may be
/// positive at once, and the two sides of a channel must never be active
/// together.
pub fn audit_invariance(
    trace: &SimTrace,
    channels: &[OutputChannel],
    tol: f64,
) -> InvarianceReport {
    let m = channels.len();
    debug_assert_eq!(m, trace.num_channels());

    let mut audits: Vec<ChannelAudit> = channels
        .iter()
        .map(|ch| ChannelAudit {
            name: ch.name.clone(),
            min_psi_lower: vec![f64::INFINITY; ch.evaluator.rel_degree],
            min_psi_upper: vec![f64::INFINITY; ch.evaluator.rel_degree],
            min_slack_lower: f64::INFINITY,
            min_slack_upper: f64::INFINITY,
            max_lambda_lower: f64::NEG_INFINITY,
            max_lambda_upper: f64::NEG_INFINITY,
        })
        .collect();

    let mut max_active = 0;
    let mut both_sides_steps = 0;
    let mut max_complementarity = 0.0_f64;

    for step in 0..trace.len() {
        let psi = &trace.psi[step];
        let slacks = &trace.slacks[step];
        let lambdas = &trace.lambdas[step];

        let mut positive = 0;
        let mut both_sides here = false;
        for (i, audit) in audits.iter_mut().enumerate() {
            let r = trace.rel_degrees[i];
            let base = trace.psi_offset(i);
            for j in 0..r {
                audit.min_psi_lower[j] = audit.min_psi_lower[j].min(psi[base + j]);
                audit.min_psi_upper[j] = audit.min_psi_upper[j].min(psi[base + r + j]);
            }
            let (slo, sup) = (slacks[2 * i], slacks[2 * i + 1]);
            audit.min_slack_lower = audit.min_slack_lower.min(slo);
            audit.min_slack_upper = audit.min_slack_upper.min(sup);
            let (llo, lup) = (lambdas[2 * i], lambdas[2 * i + 1]);
            audit.max_lambda_lower = audit.max_lambda_lower.max(llo);
            audit.max_lambda_upper = audit.max_lambda_upper.max(lup);
            if llo > 0.0 {
                positive += 1;
            }
            if lup > 0.0 {
                positive += 1;
            }
            if llo > 0.0 && lup > 0.0 {
                both_sides_here = true;
            }
            max_complementarity = max_complementarity
                .max((llo * slo).abs())
                .max((lup * sup).abs());
        }
        max_active = max_active.max(positive);
        if both_sides_here {
            both_sides_steps += 1;
        }
    }

    let min_psi = audits
        .iter()
        .flat_map(|a| a.min_psi_lower.iter().chain(a.min_psi_upper.iter()))
        .fold(f64::INFINITY, |acc, &v| acc.min(v));
    let min_slack = audits
        .iter()
        .flat_map(|a| [a.min_slack_lower, a.min_slack_upper])
        .fold(f64::INFINITY, f64::min);

    let pass = trace.len() > 0
        && min_psi >= -tol
        && min_slack >= -tol
        && max_active <= m
        && both_sides_steps == 0;

    InvarianceReport {
        tol,
        steps: trace.len(),
        channels: audits,
        min_psi,
        min_slack,
        max_active,
        both_sides_steps,
        max_complementarity,
        x0_warning: !trace.x0_in_safe_set,
        pass,
    }
}
