//! Synthetic judge with planted effects, used as a validation oracle.
//!
//! For case `d`, label `l` and value `v` the judge draws
//! `y = base_d + effect(l, v) + eps` with `eps ~ Normal(0, noise_sd²)` and
//! answers `round(exp(y) − 1)` months, clamped at zero.
//!
//! Every row has its own ChaCha8 stream seeded from a hash of
//! `(seed, model_id, case_id, label, value)`, so any single row can be
//! reproduced without generating the others. Draws happen in a fixed order:
//! `eps`, the jitter uniform, the redraw noise, the failure uniform. The case
//! base, when not given explicitly, is uniform on `base_range` from a stream
//! keyed by `(seed, case_id)` alone.
//!
//! Hashing is FNV-1a (64-bit) over the UTF-8 fields, each followed by a zero
//! byte, finished with the splitmix64 mixer.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CaseSet, LabelCatalog};
use crate::metrics::{case_facts, LabelOutcomeTable, OutcomeRow};
use crate::outcome_parser::{ParseStatus, SentencingOutcome};
use crate::promptgen::generated_values;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{field} must lie in [0, 1], got {value}")]
    Probability { field: &'static str, value: f64 },
    #[error("noise_sd must be finite and non-negative, got {0}")]
    NoiseSd(f64),
    #[error("base_range must be finite with min <= max, got [{0}, {1}]")]
    BaseRange(f64, f64),
    #[error("cannot read synth config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid synth config: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub label: String,
    pub value: String,
    /// Shift in log-months.
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Explicit log-sentence per case; cases not listed draw from `base_range`.
    #[serde(default)]
    pub base_log_sentence: BTreeMap<String, f64>,
    #[serde(default = "default_base_range")]
    pub base_range: [f64; 2],
    #[serde(default)]
    pub planted_effects: Vec<PlantedEffect>,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub jitter_prob: f64,
    #[serde(default)]
    pub failure_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_base_range() -> [f64; 2] {
    [7f64.ln(), 240f64.ln()]
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            base_log_sentence: BTreeMap::new(),
            base_range: default_base_range(),
            planted_effects: Vec::new(),
            noise_sd: 0.0,
            jitter_prob: 0.0,
            failure_prob: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (field, value) in [("jitter_prob", self.jitter_prob), ("failure_prob", self.failure_prob)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::Probability { field, value });
            }
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(SynthError::NoiseSd(self.noise_sd));
        }
        let [lo, hi] = self.base_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(SynthError::BaseRange(lo, hi));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn effect(&self, label: &str, value: &str) -> f64 {
        self.planted_effects
            .iter()
            .filter(|p| p.label == label && p.value == value)
            .map(|p| p.effect)
            .sum()
    }

    /// Log-sentence base for a case.
    pub fn case_base(&self, case_id: &str) -> f64 {
        if let Some(&b) = self.base_log_sentence.get(case_id) {
            return b;
        }
        let [lo, hi] = self.base_range;
        if lo == hi {
            return lo;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, &["base", case_id]));
        rng.random_range(lo..hi)
    }

    /// The judge's answer for one row.
    pub fn outcome(&self, model_id: &str, case_id: &str, label: &str, value: &str) -> SentencingOutcome {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, &[model_id, case_id, label, value]));
        let noise = Normal::new(0.0, self.noise_sd).expect("validated noise_sd");
        let mean = self.case_base(case_id) + self.effect(label, value);
        let eps = noise.sample(&mut rng);
        let u_jitter: f64 = rng.random();
        let eps_redraw = noise.sample(&mut rng);
        let u_fail: f64 = rng.random();
        if u_fail < self.failure_prob {
            return SentencingOutcome::failed(ParseStatus::NoJson);
        }
        let y = if u_jitter < self.jitter_prob { mean + eps_redraw } else { mean + eps };
        SentencingOutcome::fixed_term(log_to_months(y))
    }
}

/// `round(exp(y) − 1)` clamped to `[0, u32::MAX]`.
pub fn log_to_months(y: f64) -> u32 {
    let m = y.exp_m1().round();
    if m.is_nan() || m <= 0.0 {
        0
    } else {
        m.min(f64::from(u32::MAX)) as u32
    }
}

/// Text a judge would return for `outcome`: schema JSON, or prose when the
/// outcome is a parse failure.
pub fn response_body(outcome: &SentencingOutcome) -> String {
    if !outcome.is_ok() {
        return "I am unable to reach a sentencing decision for this case based on the information provided."
            .to_string();
    }
    serde_json::json!({
        "guilty": outcome.guilty,
        "imprisonment_months": outcome.fixed_term_months.unwrap_or(0),
        "life_imprisonment": outcome.life_imprisonment,
        "death_penalty": outcome.death_penalty,
    })
    .to_string()
}

fn stream_seed(seed: u64, fields: &[&str]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for byte in seed.to_le_bytes().into_iter().chain(fields.iter().flat_map(|f| f.bytes().chain([0]))) {
        h ^= u64::from(byte);
        h = h.wrapping_mul(PRIME);
    }
    splitmix64(h)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One outcome table per catalog label for `model_id`. Excluded cases and
/// cases without admissible ages contribute no rows.
pub fn simulate_outputs(
    cases: &CaseSet,
    labels: &LabelCatalog,
    model_id: &str,
    cfg: &SynthConfig,
) -> Vec<LabelOutcomeTable> {
    let facts = case_facts(cases);
    labels
        .iter()
        .map(|label| {
            let rows = cases
                .cases
                .iter()
                .filter_map(|case| generated_values(case, label).ok().map(|vals| (case, vals)))
                .flat_map(|(case, vals)| {
                    vals.into_iter().map(move |(value, _)| OutcomeRow {
                        outcome: cfg.outcome(model_id, &case.id, &label.name, &value),
                        case_id: case.id.clone(),
                        value,
                    })
                })
                .collect();
            LabelOutcomeTable {
                label: label.name.clone(),
                rows,
                cases: facts.clone(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CaseDocument, LabelCategory, LabelSpec, NumericKind};
    use crate::metrics::{bias_fit, inconsistency_label, RobustnessVariant};
    use crate::outcome_parser::{parse_response, SentenceEncoding};
    use chrono::NaiveDate;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use std::collections::BTreeSet;

    fn cases(n: usize) -> CaseSet {
        let docs = (0..n)
            .map(|i| CaseDocument {
                id: format!("c{i:04}"),
                facts: format!("Facts of case {i}."),
                parties: "Defendant Zhang.".into(),
                crime_categories: ["theft".to_string()].into(),
                real_sentence_months: Some(12 + (i as u32 % 30)),
                filing_date: NaiveDate::from_ymd_opt(2015, 6, 1).unwrap(),
                original_triggers: BTreeMap::new(),
            })
            .collect();
        CaseSet::new(docs, "synthetic").unwrap()
    }

    fn catalog() -> LabelCatalog {
        let label = |name: &str, values: &[&str]| LabelSpec {
            name: name.into(),
            category: LabelCategory::SubstanceDemographic,
            values: values.iter().map(|v| v.to_string()).collect(),
            reference_value: values[0].into(),
            triggers: values.iter().map(|v| (v.to_string(), format!("Defendant is {v}."))).collect(),
            excluded_crime_categories: BTreeSet::new(),
            numeric_kind: NumericKind::Categorical,
            age_range: None,
        };
        LabelCatalog::new(vec![label("gender", &["male", "female"]), label("hue", &["red", "green", "blue"])]).unwrap()
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SynthConfig { noise_sd: 0.3, jitter_prob: 0.2, failure_prob: 0.1, seed: 9, ..Default::default() };
        let a = simulate_outputs(&cases(20), &catalog(), "m", &cfg);
        let b = simulate_outputs(&cases(20), &catalog(), "m", &cfg);
        assert_eq!(a, b);
        let c = simulate_outputs(&cases(20), &catalog(), "m", &SynthConfig { seed: 10, ..cfg });
        assert_ne!(a, c);
    }

    #[test]
    fn rows_cover_every_case_and_value() {
        let tables = simulate_outputs(&cases(7), &catalog(), "m", &SynthConfig::default());
        assert_eq!(tables.len(), 2);
        assert_eq!(tables[0].rows.len(), 14);
        assert_eq!(tables[1].rows.len(), 21);
    }

    #[test]
    fn noiseless_unplanted_judge_is_consistent_and_unbiased() {
        let cs = cases(40);
        let cat = catalog();
        for t in simulate_outputs(&cs, &cat, "m", &SynthConfig::default()) {
            assert_eq!(inconsistency_label(&t).p_l, 0.0);
            let fit = bias_fit(&t, cat.get(&t.label).unwrap(), RobustnessVariant::Main, &SentenceEncoding::default()).unwrap();
            assert!(fit.coefficients.iter().all(|c| c.estimate.abs() < 1e-12));
        }
    }

    #[test]
    fn planted_effect_recovered() {
        let cfg = SynthConfig {
            base_range: [24f64.ln(), 240f64.ln()],
            planted_effects: vec![PlantedEffect { label: "gender".into(), value: "female".into(), effect: 0.2 }],
            seed: 3,
            ..Default::default()
        };
        let cs = cases(200);
        let cat = catalog();
        let tables = simulate_outputs(&cs, &cat, "m", &cfg);
        let fit = bias_fit(&tables[0], cat.get("gender").unwrap(), RobustnessVariant::Main, &SentenceEncoding::default()).unwrap();
        let c = fit.coefficient("female").unwrap();
        assert!((c.estimate - 0.2).abs() < 0.02, "{}", c.estimate);
        assert!(c.p_value.unwrap() < 0.01);
    }

    #[test]
    fn failure_prob_one_fails_everything() {
        let cfg = SynthConfig { failure_prob: 1.0, ..Default::default() };
        for t in simulate_outputs(&cases(5), &catalog(), "m", &cfg) {
            assert!(t.rows.iter().all(|r| !r.outcome.is_ok()));
            assert!(t.rows.iter().all(|r| !parse_response(&response_body(&r.outcome)).is_ok()));
        }
    }

    #[test]
    fn jitter_matches_independent_monte_carlo() {
        // Oracle: simulate the generative model directly for each document and
        // count how often the two values' months differ.
        let (noise_sd, jitter) = (0.05, 0.3);
        let cfg = SynthConfig {
            base_range: [3.0, 3.0],
            noise_sd,
            jitter_prob: jitter,
            seed: 17,
            ..Default::default()
        };
        let cs = cases(1000);
        let cat = catalog();
        let tables = simulate_outputs(&cs, &cat, "m", &cfg);
        let measured = inconsistency_label(&tables[0]).p_l;

        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let normal = Normal::new(0.0, noise_sd).unwrap();
        let trials = 200_000;
        let mut differ = 0;
        for _ in 0..trials {
            let mut draw = || {
                let eps = normal.sample(&mut rng);
                let redraw = normal.sample(&mut rng);
                let y = if rng.random::<f64>() < jitter { 3.0 + redraw } else { 3.0 + eps };
                log_to_months(y)
            };
            if draw() != draw() {
                differ += 1;
            }
        }
        let expected = differ as f64 / trials as f64;
        assert!((measured - expected).abs() < 0.05, "measured {measured}, expected {expected}");
    }

    #[test]
    fn response_body_round_trips() {
        for months in [0, 1, 36, 480] {
            let o = SentencingOutcome::fixed_term(months);
            assert_eq!(parse_response(&response_body(&o)), o);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { jitter_prob: 1.5, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { noise_sd: -1.0, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { base_range: [5.0, 1.0], ..Default::default() }.validate().is_err());
        let cfg = SynthConfig::from_json(r#"{"seed": 4, "noise_sd": 0.1}"#).unwrap();
        assert_eq!(cfg.base_range, default_base_range());
    }

    #[test]
    fn explicit_base_used() {
        let cfg = SynthConfig {
            base_log_sentence: [("c0000".to_string(), 37f64.ln())].into(),
            ..Default::default()
        };
        assert_eq!(cfg.outcome("m", "c0000", "gender", "male"), SentencingOutcome::fixed_term(36));
    }

    proptest! {
        #[test]
        fn months_never_negative(y in -50.0f64..30.0) {
            let m = log_to_months(y);
            if y <= 0.0 { prop_assert_eq!(m, 0); }
        }

        #[test]
        fn bases_stay_in_range(seed: u64, id in "[a-z0-9]{1,12}") {
            let cfg = SynthConfig { seed, ..Default::default() };
            let b = cfg.case_base(&id);
            prop_assert!(b >= cfg.base_range[0] && b < cfg.base_range[1]);
        }
    }
}
