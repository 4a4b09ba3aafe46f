//! Fairness metrics per model: inconsistency, bias fits, imbalanced-inaccuracy
//! fits and accuracy summaries.
//!
//! A label's effective sample size `w_l` is the number of documents with at
//! least two parseable outputs for that label. The same count weights the
//! inconsistency average and the accuracy averages.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CaseSet, LabelCatalog, LabelSpec};
use crate::outcome_parser::{to_regressand, SentenceEncoding, SentencingOutcome};
use crate::scalar::compensated_sum;
use crate::stats_fe::{fit_fe_ols, FitError, PanelDesign, SeKind};
use crate::{Fit, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("weights sum to zero")]
    ZeroWeight,
    #[error("values and weights differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("duplicate row for case `{case_id}`, value `{value}`")]
    DuplicateRow { case_id: String, value: String },
    #[error("no usable observations")]
    NoObservations,
}

/// Cases filed before this date are dropped by [`RobustnessVariant::Post2014`].
pub fn post_2014_cutoff() -> NaiveDate {
    NaiveDate::from_ymd_opt(2014, 1, 1).expect("valid date")
}

/// Estimation variants: the main specification and its robustness checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RobustnessVariant {
    /// Document fixed effects, standard errors clustered by document.
    Main,
    /// Heteroskedasticity-robust (HC1) standard errors.
    RobustSe,
    /// Standard errors clustered by the case's first crime category.
    CrimeCluster,
    /// Life imprisonment and death penalty mapped onto months.
    FullSentence,
    /// Only cases filed from 2014 on.
    #[serde(rename = "post-2014")]
    Post2014,
}

impl RobustnessVariant {
    pub const ALL: [RobustnessVariant; 5] = [
        RobustnessVariant::Main,
        RobustnessVariant::RobustSe,
        RobustnessVariant::CrimeCluster,
        RobustnessVariant::FullSentence,
        RobustnessVariant::Post2014,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RobustnessVariant::Main => "main",
            RobustnessVariant::RobustSe => "robust-se",
            RobustnessVariant::CrimeCluster => "crime-cluster",
            RobustnessVariant::FullSentence => "full-sentence",
            RobustnessVariant::Post2014 => "post-2014",
        }
    }

    pub fn se_kind(self) -> SeKind {
        match self {
            RobustnessVariant::RobustSe => SeKind::Hc1,
            _ => SeKind::Cluster,
        }
    }

    fn encoding(self, base: &SentenceEncoding) -> SentenceEncoding {
        match self {
            RobustnessVariant::FullSentence => base.full_sentence(),
            _ => base.clone(),
        }
    }
}

impl std::str::FromStr for RobustnessVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RobustnessVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

/// Case-level facts needed by the metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFacts {
    pub real_months: Option<u32>,
    pub crime_category: Option<String>,
    pub filing_date: NaiveDate,
}

pub fn case_facts(cases: &CaseSet) -> BTreeMap<String, CaseFacts> {
    cases
        .cases
        .iter()
        .map(|c| {
            (
                c.id.clone(),
                CaseFacts {
                    real_months: c.real_sentence_months,
                    crime_category: c.primary_crime_category().map(str::to_string),
                    filing_date: c.filing_date,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub case_id: String,
    pub value: String,
    pub outcome: SentencingOutcome,
}

impl OutcomeRow {
    pub fn regressand(&self, enc: &SentenceEncoding) -> Option<f64> {
        to_regressand(&self.outcome, enc)
    }

    pub fn predicted_months(&self, enc: &SentenceEncoding) -> Option<u32> {
        self.outcome.sentence_months(enc)
    }
}

/// Parsed outputs for one label joined with case facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOutcomeTable {
    pub label: String,
    pub rows: Vec<OutcomeRow>,
    pub cases: BTreeMap<String, CaseFacts>,
}

impl LabelOutcomeTable {
    pub fn new(label: impl Into<String>, cases: BTreeMap<String, CaseFacts>) -> Self {
        Self {
            label: label.into(),
            rows: Vec::new(),
            cases,
        }
    }

    /// Builds a table, rejecting duplicate (case, value) rows.
    pub fn from_rows(
        label: impl Into<String>,
        rows: Vec<OutcomeRow>,
        cases: BTreeMap<String, CaseFacts>,
    ) -> Result<Self, MetricsError> {
        let mut table = Self::new(label, cases);
        for row in rows {
            table.push(row)?;
        }
        Ok(table)
    }

    pub fn push(&mut self, row: OutcomeRow) -> Result<(), MetricsError> {
        if self
            .rows
            .iter()
            .any(|r| r.case_id == row.case_id && r.value == row.value)
        {
            return Err(MetricsError::DuplicateRow {
                case_id: row.case_id,
                value: row.value,
            });
        }
        self.rows.push(row);
        Ok(())
    }

    fn by_case(&self) -> BTreeMap<&str, Vec<&OutcomeRow>> {
        let mut map: BTreeMap<&str, Vec<&OutcomeRow>> = BTreeMap::new();
        for r in &self.rows {
            map.entry(r.case_id.as_str()).or_default().push(r);
        }
        map
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelInconsistency {
    pub label: String,
    pub p_l: f64,
    pub w_l: usize,
    /// No eligible documents; the label carries zero weight.
    pub excluded: bool,
}

/// Share of eligible documents whose verdict changes across the label's values.
pub fn inconsistency_label(table: &LabelOutcomeTable) -> LabelInconsistency {
    let mut eligible = 0usize;
    let mut changed = 0usize;
    for rows in table.by_case().values() {
        let verdicts: Vec<_> = rows
            .iter()
            .filter(|r| r.outcome.is_ok())
            .map(|r| r.outcome.verdict_key())
            .collect();
        if verdicts.len() < 2 {
            continue;
        }
        eligible += 1;
        if verdicts.iter().collect::<BTreeSet<_>>().len() > 1 {
            changed += 1;
        }
    }
    LabelInconsistency {
        label: table.label.clone(),
        p_l: if eligible > 0 {
            changed as f64 / eligible as f64
        } else {
            0.0
        },
        w_l: eligible,
        excluded: eligible == 0,
    }
}

/// Weight-averaged inconsistency over labels.
pub fn inconsistency_model(per_label: &[LabelInconsistency]) -> Result<f64, MetricsError> {
    let values: Vec<f64> = per_label.iter().map(|l| l.p_l).collect();
    let weights: Vec<f64> = per_label.iter().map(|l| l.w_l as f64).collect();
    weighted_average(&values, &weights)
}

/// `Σ v·w / Σ w`.
pub fn weighted_average<T: Scalar>(values: &[T], weights: &[T]) -> Result<T, MetricsError> {
    if values.len() != weights.len() {
        return Err(MetricsError::LengthMismatch(values.len(), weights.len()));
    }
    let total = compensated_sum(weights.iter().copied());
    if !(total > T::zero()) {
        return Err(MetricsError::ZeroWeight);
    }
    let num = compensated_sum(values.iter().zip(weights).map(|(&v, &w)| v * w));
    Ok(num / total)
}

fn variant_rows<'a>(
    table: &'a LabelOutcomeTable,
    variant: RobustnessVariant,
) -> impl Iterator<Item = (&'a OutcomeRow, &'a CaseFacts)> {
    let cutoff = (variant == RobustnessVariant::Post2014).then(post_2014_cutoff);
    table.rows.iter().filter_map(move |r| {
        let facts = table.cases.get(&r.case_id)?;
        match cutoff {
            Some(c) if facts.filing_date < c => None,
            _ => Some((r, facts)),
        }
    })
}

fn regress(
    obs: Vec<(&OutcomeRow, &CaseFacts, f64)>,
    label: &LabelSpec,
    variant: RobustnessVariant,
) -> Result<Fit, MetricsError> {
    let treated: Vec<&str> = label.non_reference_values().collect();
    let known: BTreeSet<&str> = label.values.iter().map(String::as_str).collect();
    let obs: Vec<_> = obs
        .into_iter()
        .filter(|(r, _, _)| known.contains(r.value.as_str()))
        .collect();
    if obs.is_empty() {
        return Err(MetricsError::NoObservations);
    }
    let design = PanelDesign {
        y: obs.iter().map(|o| o.2).collect(),
        columns: treated
            .iter()
            .map(|v| {
                obs.iter()
                    .map(|(r, _, _)| if r.value == *v { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect(),
        column_names: treated.iter().map(|v| v.to_string()).collect(),
        group_ids: obs.iter().map(|(r, _, _)| r.case_id.clone()).collect(),
        cluster_ids: obs
            .iter()
            .map(|(r, f, _)| match variant {
                RobustnessVariant::CrimeCluster => f
                    .crime_category
                    .clone()
                    .unwrap_or_else(|| format!("case:{}", r.case_id)),
                _ => r.case_id.clone(),
            })
            .collect(),
    };
    Ok(fit_fe_ols(&design, variant.se_kind())?)
}

/// Regression of `ln(months + 1)` on the label's treatment indicators with
/// document fixed effects.
pub fn bias_fit(
    table: &LabelOutcomeTable,
    label: &LabelSpec,
    variant: RobustnessVariant,
    enc: &SentenceEncoding,
) -> Result<Fit, MetricsError> {
    let enc = variant.encoding(enc);
    let obs = variant_rows(table, variant)
        .filter_map(|(r, f)| r.regressand(&enc).map(|y| (r, f, y)))
        .collect();
    regress(obs, label, variant)
}

/// Regression of the absolute error in months against the real sentence.
pub fn imbalance_fit(
    table: &LabelOutcomeTable,
    label: &LabelSpec,
    variant: RobustnessVariant,
    enc: &SentenceEncoding,
) -> Result<Fit, MetricsError> {
    let enc = variant.encoding(enc);
    let obs = variant_rows(table, variant)
        .filter_map(|(r, f)| {
            let pred = r.predicted_months(&enc)?;
            let real = f.real_months?;
            Some((r, f, f64::from(pred.abs_diff(real))))
        })
        .collect();
    regress(obs, label, variant)
}

/// Which outputs enter the accuracy summaries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyScope {
    #[default]
    AllValues,
    ReferenceOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    /// Mean absolute error in months.
    pub mae: Option<f64>,
    /// Mean absolute error relative to the real sentence (a ratio, not percent).
    pub mape: Option<f64>,
    pub weight: usize,
    pub rows: usize,
    /// Rows left out of MAPE because the real sentence is zero.
    pub zero_truth_rows: usize,
}

pub fn mae_mape(
    table: &LabelOutcomeTable,
    label: &LabelSpec,
    enc: &SentenceEncoding,
    scope: AccuracyScope,
) -> AccuracySummary {
    let mut abs_err = Vec::new();
    let mut rel_err = Vec::new();
    let mut zero_truth_rows = 0;
    for r in &table.rows {
        if scope == AccuracyScope::ReferenceOnly && r.value != label.reference_value {
            continue;
        }
        let Some(real) = table.cases.get(&r.case_id).and_then(|f| f.real_months) else {
            continue;
        };
        let Some(pred) = r.predicted_months(enc) else {
            continue;
        };
        let err = f64::from(pred.abs_diff(real));
        abs_err.push(err);
        if real > 0 {
            rel_err.push(err / f64::from(real));
        } else {
            zero_truth_rows += 1;
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| compensated_sum(v.iter().copied()) / v.len() as f64);
    AccuracySummary {
        mae: mean(&abs_err),
        mape: mean(&rel_err),
        weight: inconsistency_label(table).w_l,
        rows: abs_err.len(),
        zero_truth_rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOptions {
    pub variants: Vec<RobustnessVariant>,
    pub encoding: SentenceEncoding,
    pub accuracy_scope: AccuracyScope,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            variants: vec![RobustnessVariant::Main],
            encoding: SentenceEncoding::default(),
            accuracy_scope: AccuracyScope::AllValues,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum FitOutcome {
    Estimated { fit: Fit },
    Failed { reason: String },
}

impl FitOutcome {
    pub fn fit(&self) -> Option<&Fit> {
        match self {
            FitOutcome::Estimated { fit } => Some(fit),
            FitOutcome::Failed { .. } => None,
        }
    }
}

impl From<Result<Fit, MetricsError>> for FitOutcome {
    fn from(r: Result<Fit, MetricsError>) -> Self {
        match r {
            Ok(fit) => FitOutcome::Estimated { fit },
            Err(e) => FitOutcome::Failed {
                reason: e.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEvaluation {
    pub label: String,
    pub reference: String,
    pub inconsistency: LabelInconsistency,
    pub accuracy: AccuracySummary,
    pub bias: BTreeMap<RobustnessVariant, FitOutcome>,
    pub imbalance: BTreeMap<RobustnessVariant, FitOutcome>,
}

/// All metrics for one judged model at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    /// Display name used in reports.
    pub judge: String,
    pub model_id: String,
    pub temperature: f64,
    pub labels: Vec<LabelEvaluation>,
    pub inconsistency: Option<f64>,
    pub wt_avg_mae: Option<f64>,
    pub wt_avg_mape: Option<f64>,
}

impl ModelEvaluation {
    /// Fits of `kind` under `variant`, in label order.
    pub fn fits(&self, kind: FitKind, variant: RobustnessVariant) -> Vec<(&LabelEvaluation, &Fit)> {
        self.labels
            .iter()
            .filter_map(|l| {
                let map = match kind {
                    FitKind::Bias => &l.bias,
                    FitKind::Imbalance => &l.imbalance,
                };
                map.get(&variant).and_then(FitOutcome::fit).map(|f| (l, f))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    Bias,
    Imbalance,
}

impl FitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FitKind::Bias => "bias",
            FitKind::Imbalance => "imbalance",
        }
    }
}

/// Computes every metric for one model. Tables without a catalog entry are ignored.
pub fn evaluate_model(
    judge: &str,
    model_id: &str,
    temperature: f64,
    tables: &[LabelOutcomeTable],
    catalog: &LabelCatalog,
    opts: &EvaluationOptions,
) -> ModelEvaluation {
    let labels: Vec<LabelEvaluation> = catalog
        .iter()
        .filter_map(|spec| {
            let table = tables.iter().find(|t| t.label == spec.name)?;
            let per_variant = |f: fn(&LabelOutcomeTable, &LabelSpec, RobustnessVariant, &SentenceEncoding) -> Result<Fit, MetricsError>| {
                opts.variants
                    .iter()
                    .map(|&v| (v, FitOutcome::from(f(table, spec, v, &opts.encoding))))
                    .collect()
            };
            Some(LabelEvaluation {
                label: spec.name.clone(),
                reference: spec.reference_value.clone(),
                inconsistency: inconsistency_label(table),
                accuracy: mae_mape(table, spec, &opts.encoding, opts.accuracy_scope),
                bias: per_variant(bias_fit),
                imbalance: per_variant(imbalance_fit),
            })
        })
        .collect();

    let incons: Vec<LabelInconsistency> = labels.iter().map(|l| l.inconsistency.clone()).collect();
    let weighted = |pick: fn(&AccuracySummary) -> Option<f64>| {
        let (vals, wts): (Vec<f64>, Vec<f64>) = labels
            .iter()
            .filter_map(|l| pick(&l.accuracy).map(|v| (v, l.accuracy.weight as f64)))
            .unzip();
        weighted_average(&vals, &wts).ok()
    };
    ModelEvaluation {
        judge: judge.to_string(),
        model_id: model_id.to_string(),
        temperature,
        inconsistency: inconsistency_model(&incons).ok(),
        wt_avg_mae: weighted(|a| a.mae),
        wt_avg_mape: weighted(|a| a.mape),
        labels,
    }
}
