//! Systematic-unfairness verdicts from per-coefficient p-values, and the
//! Pearson correlation used to compare metrics across models.
//!
//! Each tested coefficient is treated as a Bernoulli trial that succeeds when
//! its p-value is at most `tau`. Under the null of no bias the success count is
//! Binomial(N, tau), and the verdict is the right-tail probability of seeing at
//! least the observed count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::compensated_sum;
use crate::stats_fe::p_value_t;
use crate::{Fit, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregateError {
    #[error("successes {k} exceed trials {n}")]
    SuccessesExceedTrials { n: u64, k: u64 },
    #[error("tau must lie strictly between 0 and 1, got {0}")]
    TauOutOfRange(f64),
    #[error("pearson needs at least 3 paired observations, got {0}")]
    TooFewObservations(usize),
    #[error("pearson inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("pearson input has zero variance")]
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// One trial per estimated non-reference coefficient.
    #[default]
    PerValue,
    /// One trial per label; succeeds if any of its values is significant.
    PerLabel,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::PerValue => "per-value",
            Granularity::PerLabel => "per-label",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliVerdict {
    pub trials: u64,
    pub successes: u64,
    pub tau: f64,
    pub p_bernoulli: f64,
    pub granularity: Granularity,
}

/// `P(X ≥ k)` for `X ~ Binomial(n, tau)`.
pub fn binomial_tail(n: u64, k: u64, tau: f64) -> Result<f64, AggregateError> {
    if k > n {
        return Err(AggregateError::SuccessesExceedTrials { n, k });
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(AggregateError::TauOutOfRange(tau));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let ln_fact = ln_factorials(n);
    let (ln_tau, ln_comp) = (tau.ln(), (-tau).ln_1p());
    let log_terms: Vec<f64> = (k..=n)
        .map(|l| {
            let (l_, n_) = (l as usize, n as usize);
            ln_fact[n_] - ln_fact[l_] - ln_fact[n_ - l_] + l as f64 * ln_tau + (n - l) as f64 * ln_comp
        })
        .collect();
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled = compensated_sum(log_terms.iter().map(|t| (t - max).exp()));
    Ok((max + scaled.ln()).exp().clamp(0.0, 1.0))
}

/// `ln(i!)` for `i = 0..=n`.
fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    out.push(0.0);
    // running compensated sum of ln(i)
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for i in 1..=n {
        let x = (i as f64).ln();
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
        out.push(sum + comp);
    }
    out
}

fn verdict(trials: u64, successes: u64, tau: f64, granularity: Granularity) -> Result<BernoulliVerdict, AggregateError> {
    Ok(BernoulliVerdict {
        trials,
        successes,
        tau,
        p_bernoulli: binomial_tail(trials, successes, tau)?,
        granularity,
    })
}

/// Verdict for one model given one fit per label. Coefficients without a
/// defined p-value are not counted as trials.
pub fn model_unfairness_test<'a>(
    fits: impl IntoIterator<Item = &'a Fit>,
    tau: f64,
    granularity: Granularity,
) -> Result<BernoulliVerdict, AggregateError> {
    let (mut trials, mut successes) = (0u64, 0u64);
    for fit in fits {
        let ps: Vec<f64> = fit.coefficients.iter().filter_map(|c| c.p_value).collect();
        match granularity {
            Granularity::PerValue => {
                trials += ps.len() as u64;
                successes += ps.iter().filter(|&&p| p <= tau).count() as u64;
            }
            Granularity::PerLabel if !ps.is_empty() => {
                trials += 1;
                successes += u64::from(ps.iter().any(|&p| p <= tau));
            }
            Granularity::PerLabel => {}
        }
    }
    verdict(trials, successes, tau, granularity)
}

/// Pools trials and successes across models into a single verdict.
pub fn cross_model_test(verdicts: &[BernoulliVerdict], tau: f64) -> Result<BernoulliVerdict, AggregateError> {
    let trials = verdicts.iter().map(|v| v.trials).sum();
    let successes = verdicts.iter().map(|v| v.successes).sum();
    let granularity = verdicts.first().map(|v| v.granularity).unwrap_or_default();
    verdict(trials, successes, tau, granularity)
}

/// Sample correlation and its two-sided p-value.
pub fn pearson<T: Scalar>(xs: &[T], ys: &[T]) -> Result<(T, T), AggregateError> {
    if xs.len() != ys.len() {
        return Err(AggregateError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(AggregateError::TooFewObservations(n));
    }
    let mean = |v: &[T]| compensated_sum(v.iter().copied()) / T::count(n);
    let (mx, my) = (mean(xs), mean(ys));
    let sxx = compensated_sum(xs.iter().map(|&x| (x - mx) * (x - mx)));
    let syy = compensated_sum(ys.iter().map(|&y| (y - my) * (y - my)));
    if sxx <= T::zero() || syy <= T::zero() {
        return Err(AggregateError::ZeroVariance);
    }
    let sxy = compensated_sum(xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)));
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).max(-T::one()).min(T::one());
    let one_minus = T::one() - r * r;
    if one_minus <= T::zero() {
        return Ok((r, T::zero()));
    }
    let dof = T::count(n - 2);
    let t = r * (dof / one_minus).sqrt();
    Ok((r, p_value_t(t, dof)))
}
