//! Label catalog and case corpus: loading, validation, exclusions, sampling.
//!
//! Both inputs are JSON arrays. The catalog lists the auditable labels with
//! their values, reference value, trigger sentences and the crime categories
//! for which the label is legally relevant (and therefore excluded). The corpus
//! lists the annotated case documents.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder substituted with the generated age in age-label triggers.
pub const AGE_PLACEHOLDER: &str = "{age}";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("label `{label}`: invalid field `{field}`: {reason}")]
    InvalidLabel {
        label: String,
        field: &'static str,
        reason: String,
    },
    #[error("duplicate label name `{0}`")]
    DuplicateLabel(String),
    #[error("duplicate case id `{0}`")]
    DuplicateCase(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelCategory {
    SubstanceDemographic,
    SubstanceNondemographic,
    ProcedureDemographic,
    ProcedureNondemographic,
}

impl LabelCategory {
    pub fn is_substance(self) -> bool {
        matches!(
            self,
            LabelCategory::SubstanceDemographic | LabelCategory::SubstanceNondemographic
        )
    }

    pub fn is_demographic(self) -> bool {
        matches!(
            self,
            LabelCategory::SubstanceDemographic | LabelCategory::ProcedureDemographic
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NumericKind {
    #[default]
    Categorical,
    NumericAge,
}

fn default_exclusion_window() -> u32 {
    10
}

/// Admissible ages for a numeric-age label.
///
/// Generated ages lie in `[min, max]` and differ from the original age by more
/// than `exclusion_window` years.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeRange {
    pub min: u32,
    pub max: u32,
    #[serde(default = "default_exclusion_window")]
    pub exclusion_window: u32,
}

impl AgeRange {
    /// Ages admissible for a case whose original age is `original`.
    pub fn allowed(&self, original: Option<u32>) -> Vec<u32> {
        (self.min..=self.max)
            .filter(|&a| match original {
                Some(o) => a.abs_diff(o) > self.exclusion_window,
                None => true,
            })
            .collect()
    }

    /// `k` evenly spaced picks from the admissible set, ascending.
    ///
    /// Returns `None` when fewer than `k` distinct ages are admissible.
    pub fn draw(&self, original: Option<u32>, k: usize) -> Option<Vec<u32>> {
        let allowed = self.allowed(original);
        if k == 0 || allowed.len() < k {
            return None;
        }
        if k == 1 {
            return Some(vec![allowed[0]]);
        }
        let last = allowed.len() - 1;
        Some(
            (0..k)
                .map(|i| allowed[(i * last + (k - 1) / 2) / (k - 1)])
                .collect(),
        )
    }
}

/// One auditable factor.
///
/// For numeric-age labels `values` name the generated age slots (ascending
/// age order) and every trigger contains [`AGE_PLACEHOLDER`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub name: String,
    pub category: LabelCategory,
    pub values: Vec<String>,
    pub reference_value: String,
    pub triggers: BTreeMap<String, String>,
    #[serde(default)]
    pub excluded_crime_categories: BTreeSet<String>,
    #[serde(default)]
    pub numeric_kind: NumericKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_range: Option<AgeRange>,
}

impl LabelSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |field: &'static str, reason: String| CorpusError::InvalidLabel {
            label: self.name.clone(),
            field,
            reason,
        };
        if self.name.trim().is_empty() {
            return Err(bad("name", "empty".into()));
        }
        if self.values.len() < 2 {
            return Err(bad("values", format!("need at least 2 values, got {}", self.values.len())));
        }
        let mut seen = BTreeSet::new();
        for v in &self.values {
            if v.is_empty() {
                return Err(bad("values", "empty value name".into()));
            }
            if !seen.insert(v.as_str()) {
                return Err(bad("values", format!("duplicate value `{v}`")));
            }
        }
        if !seen.contains(self.reference_value.as_str()) {
            return Err(bad(
                "reference_value",
                format!("`{}` is not one of the values", self.reference_value),
            ));
        }
        for v in &self.values {
            match self.triggers.get(v) {
                Some(t) if !t.trim().is_empty() => {}
                _ => return Err(bad("triggers", format!("missing trigger for value `{v}`"))),
            }
        }
        if let Some(extra) = self.triggers.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(bad("triggers", format!("trigger for unknown value `{extra}`")));
        }
        match self.numeric_kind {
            NumericKind::Categorical => {
                if self.age_range.is_some() {
                    return Err(bad("age_range", "only allowed for numeric-age labels".into()));
                }
            }
            NumericKind::NumericAge => {
                let range = self
                    .age_range
                    .as_ref()
                    .ok_or_else(|| bad("age_range", "required for numeric-age labels".into()))?;
                if range.min > range.max {
                    return Err(bad("age_range", format!("min {} > max {}", range.min, range.max)));
                }
                if let Some(v) = self
                    .values
                    .iter()
                    .find(|v| !self.triggers[v.as_str()].contains(AGE_PLACEHOLDER))
                {
                    return Err(bad(
                        "triggers",
                        format!("trigger for `{v}` lacks the {AGE_PLACEHOLDER} placeholder"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn non_reference_values(&self) -> impl Iterator<Item = &str> {
        self.values
            .iter()
            .map(String::as_str)
            .filter(move |v| *v != self.reference_value)
    }

    pub fn is_excluded(&self, case: &CaseDocument) -> bool {
        !self.excluded_crime_categories.is_disjoint(&case.crime_categories)
    }
}

/// Validated list of labels, in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelCatalog {
    pub labels: Vec<LabelSpec>,
}

impl LabelCatalog {
    pub fn new(labels: Vec<LabelSpec>) -> Result<Self, CorpusError> {
        let mut names = BTreeSet::new();
        for label in &labels {
            label.validate()?;
            if !names.insert(label.name.clone()) {
                return Err(CorpusError::DuplicateLabel(label.name.clone()));
            }
        }
        Ok(Self { labels })
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, CorpusError> {
        let labels: Vec<LabelSpec> =
            serde_json::from_str(text).map_err(|source| CorpusError::Json {
                path: origin.to_string(),
                source,
            })?;
        Self::new(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.labels.iter().map(|l| l.values.len()).sum()
    }

    /// Number of estimable (non-reference) values.
    pub fn treated_value_count(&self) -> usize {
        self.labels.iter().map(|l| l.values.len() - 1).sum()
    }

    pub fn get(&self, name: &str) -> Option<&LabelSpec> {
        self.labels.iter().find(|l| l.name == name)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabelSpec> {
        self.labels.iter()
    }
}

/// Reads and validates a label catalog file.
pub fn load_label_specs(path: &Path) -> Result<LabelCatalog, CorpusError> {
    let text = read(path)?;
    LabelCatalog::from_json(&text, &path.display().to_string())
}

/// One judicial case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDocument {
    pub id: String,
    pub facts: String,
    pub parties: String,
    #[serde(default)]
    pub crime_categories: BTreeSet<String>,
    /// Real fixed-term sentence; absent documents are skipped by accuracy metrics.
    pub real_sentence_months: Option<u32>,
    pub filing_date: NaiveDate,
    #[serde(default)]
    pub original_triggers: BTreeMap<String, String>,
}

impl CaseDocument {
    /// Case text that prompts are built from.
    pub fn body(&self) -> String {
        format!("{}\n{}", self.facts, self.parties)
    }

    /// First crime category in lexicographic order, used for crime-level clustering.
    pub fn primary_crime_category(&self) -> Option<&str> {
        self.crime_categories.iter().next().map(String::as_str)
    }

    /// Original numeric value annotated for `label`: the first integer in its trigger sentence.
    pub fn original_number(&self, label: &str) -> Option<u32> {
        let text = self.original_triggers.get(label)?;
        let digits: String = text
            .chars()
            .skip_while(|c| !c.is_ascii_digit())
            .take_while(|c| c.is_ascii_digit())
            .collect();
        digits.parse().ok()
    }
}

/// Deterministically ordered collection of cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSet {
    pub cases: Vec<CaseDocument>,
    pub provenance: String,
}

impl CaseSet {
    /// Sorts by id and rejects duplicate ids.
    pub fn new(mut cases: Vec<CaseDocument>, provenance: impl Into<String>) -> Result<Self, CorpusError> {
        cases.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = cases.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(CorpusError::DuplicateCase(w[0].id.clone()));
        }
        Ok(Self {
            cases,
            provenance: provenance.into(),
        })
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, CorpusError> {
        let cases: Vec<CaseDocument> =
            serde_json::from_str(text).map_err(|source| CorpusError::Json {
                path: origin.to_string(),
                source,
            })?;
        Self::new(cases, format!("source={origin}"))
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.cases.iter().map(|c| c.id.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&CaseDocument> {
        self.cases
            .binary_search_by(|c| c.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.cases[i])
    }

    fn derive(&self, cases: Vec<CaseDocument>, note: String) -> CaseSet {
        CaseSet {
            cases,
            provenance: format!("{}; {note}", self.provenance),
        }
    }
}

pub fn load_corpus(path: &Path) -> Result<CaseSet, CorpusError> {
    let text = read(path)?;
    CaseSet::from_json(&text, &path.display().to_string())
}

/// Drops cases whose crime categories intersect the label's exclusion set.
pub fn apply_exclusions(cases: &CaseSet, label: &LabelSpec) -> CaseSet {
    if label.excluded_crime_categories.is_empty() {
        return cases.clone();
    }
    let kept = cases
        .cases
        .iter()
        .filter(|c| !label.is_excluded(c))
        .cloned()
        .collect();
    cases.derive(kept, format!("exclusions[{}]", label.name))
}

/// Uniform sample of `n` cases without replacement, sorted by id.
pub fn sample_cases(cases: &CaseSet, n: usize, seed: u64) -> CaseSet {
    if cases.len() <= n {
        return cases.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, cases.len(), n).into_vec();
    picked.sort_unstable();
    let kept = picked.into_iter().map(|i| cases.cases[i].clone()).collect();
    cases.derive(kept, format!("sample[n={n},seed={seed}]"))
}

/// Keeps cases filed on or after `cutoff`.
pub fn filter_by_date(cases: &CaseSet, cutoff: NaiveDate) -> CaseSet {
    let kept = cases
        .cases
        .iter()
        .filter(|c| c.filing_date >= cutoff)
        .cloned()
        .collect();
    cases.derive(kept, format!("filed>={cutoff}"))
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label(name: &str, values: &[&str], excluded: &[&str]) -> LabelSpec {
        LabelSpec {
            name: name.into(),
            category: LabelCategory::SubstanceDemographic,
            values: values.iter().map(|v| v.to_string()).collect(),
            reference_value: values[0].into(),
            triggers: values
                .iter()
                .map(|v| (v.to_string(), format!("The party is {v}.")))
                .collect(),
            excluded_crime_categories: excluded.iter().map(|c| c.to_string()).collect(),
            numeric_kind: NumericKind::Categorical,
            age_range: None,
        }
    }

    fn case(id: &str, crimes: &[&str], filed: &str) -> CaseDocument {
        CaseDocument {
            id: id.into(),
            facts: format!("Facts of {id}."),
            parties: "Defendant is male.".into(),
            crime_categories: crimes.iter().map(|c| c.to_string()).collect(),
            real_sentence_months: Some(12),
            filing_date: filed.parse().unwrap(),
            original_triggers: BTreeMap::new(),
        }
    }

    fn set(n: usize) -> CaseSet {
        let cases = (0..n)
            .map(|i| case(&format!("c{i:05}"), &[], "2015-06-01"))
            .collect();
        CaseSet::new(cases, "test").unwrap()
    }

    #[test]
    fn minimal_catalog_loads() {
        let json = r#"[{"name":"gender","category":"substance-demographic","values":["male","female"],
            "reference_value":"male","triggers":{"male":"Defendant is male.","female":"Defendant is female."},
            "excluded_crime_categories":[],"numeric_kind":"categorical"}]"#;
        let cat = LabelCatalog::from_json(json, "inline").unwrap();
        assert_eq!(cat.len(), 1);
        assert_eq!(cat.value_count(), 2);
    }

    #[test]
    fn reference_outside_values_rejected() {
        let mut l = label("gender", &["male", "female"], &[]);
        l.reference_value = "other".into();
        let err = LabelCatalog::new(vec![l]).unwrap_err();
        match err {
            CorpusError::InvalidLabel { label, field, .. } => {
                assert_eq!(label, "gender");
                assert_eq!(field, "reference_value");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_label_and_missing_trigger_rejected() {
        let l = label("gender", &["male", "female"], &[]);
        assert!(matches!(
            LabelCatalog::new(vec![l.clone(), l.clone()]),
            Err(CorpusError::DuplicateLabel(_))
        ));
        let mut m = l;
        m.triggers.remove("female");
        let msg = LabelCatalog::new(vec![m]).unwrap_err().to_string();
        assert!(msg.contains("gender") && msg.contains("triggers"), "{msg}");
    }

    #[test]
    fn malformed_record_names_field() {
        let json = r#"[{"name":"gender","category":"substance-demographic","values":"male"}]"#;
        let msg = LabelCatalog::from_json(json, "inline").unwrap_err().to_string();
        assert!(msg.contains("values") || msg.contains("invalid type"), "{msg}");
    }

    #[test]
    fn age_label_requires_placeholder_and_range() {
        let mut l = label("defendant_age", &["younger", "older"], &[]);
        l.numeric_kind = NumericKind::NumericAge;
        assert!(l.validate().is_err());
        l.age_range = Some(AgeRange { min: 18, max: 74, exclusion_window: 10 });
        assert!(l.validate().is_err());
        for t in l.triggers.values_mut() {
            *t = "Defendant is {age} years old.".into();
        }
        l.validate().unwrap();
    }

    #[test]
    fn age_draw_respects_window() {
        let r = AgeRange { min: 18, max: 74, exclusion_window: 10 };
        let allowed = r.allowed(Some(40));
        assert!(allowed.iter().all(|a| a.abs_diff(40) > 10));
        assert_eq!(r.draw(Some(40), 2).unwrap(), vec![18, 74]);
        assert_eq!(r.draw(Some(18), 2).unwrap(), vec![29, 74]);
        assert_eq!(r.draw(None, 3).unwrap(), vec![18, 46, 74]);
        let tight = AgeRange { min: 30, max: 35, exclusion_window: 10 };
        assert!(tight.draw(Some(32), 2).is_none());
    }

    #[test]
    fn bribery_case_excluded_for_occupation() {
        let occ = label("defendant_occupation", &["worker", "farmer", "unemployed"], &["bribery"]);
        let cases = CaseSet::new(
            vec![case("a", &["theft"], "2015-01-01"), case("b", &["bribery"], "2015-01-01")],
            "t",
        )
        .unwrap();
        assert_eq!(apply_exclusions(&cases, &occ).ids(), vec!["a"]);
    }

    #[test]
    fn empty_exclusion_set_is_identity() {
        let l = label("gender", &["male", "female"], &[]);
        let cases = CaseSet::new(vec![case("a", &["bribery"], "2015-01-01")], "t").unwrap();
        assert_eq!(apply_exclusions(&cases, &l), cases);
    }

    #[test]
    fn three_cases_two_excluded() {
        let l = label("x", &["a", "b"], &["fraud", "bribery"]);
        let cases = CaseSet::new(
            vec![
                case("c3", &["fraud"], "2015-01-01"),
                case("c1", &["theft"], "2015-01-01"),
                case("c2", &["bribery", "theft"], "2015-01-01"),
            ],
            "t",
        )
        .unwrap();
        assert_eq!(apply_exclusions(&cases, &l).ids(), vec!["c1"]);
    }

    #[test]
    fn duplicate_case_ids_rejected() {
        let err = CaseSet::new(vec![case("a", &[], "2015-01-01"), case("a", &[], "2015-01-01")], "t");
        assert!(matches!(err, Err(CorpusError::DuplicateCase(_))));
    }

    #[test]
    fn sampling_full_and_undersized() {
        let all = set(1100);
        assert_eq!(sample_cases(&all, 1100, 7).len(), 1100);
        let small = set(5);
        assert_eq!(sample_cases(&small, 10, 7).ids(), small.ids());
    }

    #[test]
    fn sampling_is_deterministic() {
        let all = set(200);
        let a = sample_cases(&all, 50, 42);
        let b = sample_cases(&all, 50, 42);
        assert_eq!(a.ids(), b.ids());
        assert_ne!(a.ids(), sample_cases(&all, 50, 43).ids());
    }

    #[test]
    fn date_filter() {
        let cutoff: NaiveDate = "2014-01-01".parse().unwrap();
        let cases = CaseSet::new(
            vec![
                case("a", &[], "2013-12-31"),
                case("b", &[], "2014-01-01"),
                case("c", &[], "2012-05-05"),
                case("d", &[], "2019-03-03"),
            ],
            "t",
        )
        .unwrap();
        assert_eq!(filter_by_date(&cases, cutoff).ids(), vec!["b", "d"]);
        let early: NaiveDate = "2000-01-01".parse().unwrap();
        assert_eq!(filter_by_date(&cases, early).ids(), cases.ids());
    }

    #[test]
    fn original_number_extraction() {
        let mut c = case("a", &[], "2015-01-01");
        c.original_triggers
            .insert("defendant_age".into(), "Defendant is 43 years old.".into());
        assert_eq!(c.original_number("defendant_age"), Some(43));
        assert_eq!(c.original_number("victim_age"), None);
    }

    proptest! {
        #[test]
        fn exclusions_idempotent(crimes in proptest::collection::vec(0usize..4, 0..20)) {
            let names = ["theft", "fraud", "bribery", "robbery"];
            let cases: Vec<_> = crimes.iter().enumerate()
                .map(|(i, &c)| case(&format!("c{i:03}"), &[names[c]], "2015-01-01"))
                .collect();
            let set = CaseSet::new(cases, "p").unwrap();
            let l = label("x", &["a", "b"], &["fraud", "bribery"]);
            let once = apply_exclusions(&set, &l);
            let twice = apply_exclusions(&once, &l);
            prop_assert_eq!(once.ids(), twice.ids());
        }

        #[test]
        fn sample_is_subset_of_expected_size(total in 0usize..300, n in 0usize..300, seed: u64) {
            let all = set(total);
            let s = sample_cases(&all, n, seed);
            prop_assert_eq!(s.len(), n.min(total));
            let ids: BTreeSet<_> = all.ids().into_iter().collect();
            prop_assert!(s.ids().iter().all(|id| ids.contains(id)));
            prop_assert!(s.ids().windows(2).all(|w| w[0] < w[1]));
            let again = sample_cases(&all, n, seed);
            prop_assert_eq!(s.ids(), again.ids());
        }

        #[test]
        fn catalog_round_trips(nvals in 2usize..5, nlabels in 1usize..6) {
            let labels: Vec<_> = (0..nlabels)
                .map(|i| {
                    let vals: Vec<String> = (0..nvals).map(|v| format!("v{v}")).collect();
                    let refs: Vec<&str> = vals.iter().map(String::as_str).collect();
                    label(&format!("l{i}"), &refs, &["fraud"])
                })
                .collect();
            let cat = LabelCatalog::new(labels).unwrap();
            let text = serde_json::to_string(&cat).unwrap();
            prop_assert_eq!(LabelCatalog::from_json(&text, "rt").unwrap(), cat);
        }
    }
}
