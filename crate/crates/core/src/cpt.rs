//! Cumulative Prospect Theory valuation.
//!
//! A prospect is a ranked list of outcomes with probabilities. Outcomes are
//! split at the reference point into losses (`z <= R`) and gains (`z > R`);
//! each side gets cumulative Prelec-distorted decision weights, and the
//! subjective value is the weighted sum of the value function over outcomes.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const PROBABILITY_SUM_TOL: f64 = 1e-12;

/// Behavioral parameters of a CPT decision maker.
///
/// `phi` is the logit sensitivity; it is not used by the valuation itself but
/// travels with the other behavioral parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CptParams {
    pub reference: f64,
    pub beta_plus: f64,
    pub beta_minus: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub phi: f64,
}

impl CptParams {
    pub fn new(
        reference: f64,
        beta_plus: f64,
        beta_minus: f64,
        lambda: f64,
        gamma: f64,
        phi: f64,
    ) -> Result<Self> {
        let params = Self {
            reference,
            beta_plus,
            beta_minus,
            lambda,
            gamma,
            phi,
        };
        let problems = params.violations();
        if problems.is_empty() {
            Ok(params)
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }

    /// Parameters under which CPT collapses to the expected value.
    ///
    /// `lambda = 1` sits on the boundary of the admissible range, so this is
    /// built directly rather than through [`CptParams::new`].
    pub fn risk_neutral() -> Self {
        Self {
            reference: 0.0,
            beta_plus: 1.0,
            beta_minus: 1.0,
            lambda: 1.0,
            gamma: 1.0,
            phi: 1.0,
        }
    }

    /// Every violated constraint, as `field: message`.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.reference.is_finite() {
            out.push("reference: must be finite".to_string());
        }
        if !(self.beta_plus > 0.0 && self.beta_plus <= 1.0) {
            out.push("beta_plus: must lie in (0,1]".to_string());
        }
        if !(self.beta_minus > 0.0 && self.beta_minus <= 1.0) {
            out.push("beta_minus: must lie in (0,1]".to_string());
        }
        if !(self.lambda > 1.0 && self.lambda.is_finite()) {
            out.push("lambda: must be > 1".to_string());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            out.push("gamma: must lie in (0,1]".to_string());
        }
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            out.push("phi: must be >= 0".to_string());
        }
        out
    }
}

/// Reference-dependent value function: concave over gains, convex and
/// steeper (by `lambda`) over losses. Outcomes at the reference score 0.
pub fn value_function(z: f64, params: &CptParams) -> f64 {
    if z > params.reference {
        (z - params.reference).powf(params.beta_plus)
    } else {
        -params.lambda * (params.reference - z).powf(params.beta_minus)
    }
}

/// Prelec weighting `w(p) = exp(-(-ln p)^gamma)`, with `w(0) = 0`.
pub fn prelec_weight(p: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0,1]")));
    }
    Ok(prelec_unchecked(p, gamma))
}

fn prelec_unchecked(p: f64, gamma: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else if p >= 1.0 {
        1.0
    } else {
        (-(-p.ln()).powf(gamma)).exp()
    }
}

/// A finite prospect: outcomes sorted by value, probabilities summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Prospect {
    outcomes: Vec<(f64, f64)>,
}

impl Prospect {
    /// Builds a prospect from `(value, probability)` pairs in any order.
    /// Ties keep their input order.
    pub fn new(mut outcomes: Vec<(f64, f64)>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidProspect("no outcomes".into()));
        }
        if let Some(&(z, p)) = outcomes
            .iter()
            .find(|(z, p)| !z.is_finite() || !(0.0..=1.0).contains(p))
        {
            return Err(Error::InvalidProspect(format!(
                "outcome ({z}, {p}) is not a finite value with probability in [0,1]"
            )));
        }
        let total: f64 = outcomes.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(Error::InvalidProspect(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        outcomes.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { outcomes })
    }

    /// Equally weighted prospect over the given samples.
    pub fn empirical(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidProspect("empty sample list".into()));
        }
        if samples.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidProspect("non-finite sample".into()));
        }
        let p = 1.0 / samples.len() as f64;
        let mut outcomes: Vec<(f64, f64)> = samples.iter().map(|&z| (z, p)).collect();
        outcomes.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { outcomes })
    }

    pub fn outcomes(&self) -> &[(f64, f64)] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Number of outcomes counted as losses (`z <= reference`).
    pub fn loss_count(&self, reference: f64) -> usize {
        self.outcomes.partition_point(|&(z, _)| z <= reference)
    }
}

/// Decision weights split into the loss side (outcomes `1..=g`) and the gain
/// side (outcomes `g+1..=N`), each in ascending outcome order.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionWeights {
    pub losses: Vec<f64>,
    pub gains: Vec<f64>,
}

pub fn decision_weights(prospect: &Prospect, reference: f64, gamma: f64) -> DecisionWeights {
    let g = prospect.loss_count(reference);
    let probs: Vec<f64> = prospect.outcomes.iter().map(|&(_, p)| p).collect();

    // Losses accumulate from the worst outcome upwards.
    // A cumulative probability that covers every outcome is pinned to 1:
    // the weight has infinite slope there, so rounding would otherwise leak.
    let n = probs.len();
    let mut losses = Vec::with_capacity(g);
    let mut cum = 0.0;
    let mut prev_w = 0.0;
    for (i, &p) in probs[..g].iter().enumerate() {
        cum += p;
        let c = if i + 1 == n { 1.0 } else { cum.min(1.0) };
        let w = prelec_unchecked(c, gamma);
        losses.push(w - prev_w);
        prev_w = w;
    }

    // Gains accumulate from the best outcome downwards.
    let n_gain = n - g;
    let mut gains = vec![0.0; n_gain];
    let mut cum = 0.0;
    let mut prev_w = 0.0;
    for (k, (slot, &p)) in gains.iter_mut().rev().zip(probs[g..].iter().rev()).enumerate() {
        cum += p;
        let c = if k + 1 == n { 1.0 } else { cum.min(1.0) };
        let w = prelec_unchecked(c, gamma);
        *slot = w - prev_w;
        prev_w = w;
    }

    DecisionWeights { losses, gains }
}

/// Subjective CPT value of a prospect.
pub fn cpt_value(prospect: &Prospect, params: &CptParams) -> f64 {
    let weights = decision_weights(prospect, params.reference, params.gamma);
    weights
        .losses
        .iter()
        .chain(weights.gains.iter())
        .zip(prospect.outcomes.iter())
        .map(|(w, &(z, _))| w * value_function(z, params))
        .sum()
}

/// CPT value of the empirical distribution of `samples`.
pub fn cpt_value_empirical(samples: &[f64], params: &CptParams) -> Result<f64> {
    let prospect = Prospect::empirical(samples)?;
    Ok(cpt_value(&prospect, params))
}
