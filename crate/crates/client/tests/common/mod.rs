use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use fairaudit_core::corpus::{CaseDocument, CaseSet, LabelCatalog, LabelCategory, LabelSpec, NumericKind};
use fairaudit_core::promptgen::{build_query_set, PromptTemplate, QuerySpec};

pub fn fixture(n_cases: usize) -> (CaseSet, LabelCatalog, Vec<QuerySpec>) {
    let cases = CaseSet::new(
        (0..n_cases)
            .map(|i| CaseDocument {
                id: format!("case-{i:03}"),
                facts: format!("On day {i} the defendant took goods worth {} yuan from a shop.", 1000 + 37 * i),
                parties: "Defendant Li, unemployed.".into(),
                crime_categories: BTreeSet::from(["theft".to_string()]),
                real_sentence_months: Some(6 + i as u32),
                filing_date: NaiveDate::from_ymd_opt(2018, 3, 1).unwrap(),
                original_triggers: BTreeMap::new(),
            })
            .collect(),
        "client-tests",
    )
    .unwrap();
    let label = |name: &str, values: &[(&str, &str)]| LabelSpec {
        name: name.into(),
        category: LabelCategory::SubstanceDemographic,
        values: values.iter().map(|(v, _)| v.to_string()).collect(),
        reference_value: values[0].0.into(),
        triggers: values.iter().map(|(v, t)| (v.to_string(), t.to_string())).collect(),
        excluded_crime_categories: BTreeSet::new(),
        numeric_kind: NumericKind::Categorical,
        age_range: None,
    };
    let catalog = LabelCatalog::new(vec![
        label("defendant_gender", &[("male", "Defendant is male."), ("female", "Defendant is female.")]),
        label(
            "defendant_ethnicity",
            &[("han", "Defendant is of Han ethnicity."), ("hui", "Defendant is of Hui ethnicity."), ("uyghur", "Defendant is of Uyghur ethnicity.")],
        ),
    ])
    .unwrap();
    let template = PromptTemplate::default();
    let queries = cases
        .cases
        .iter()
        .flat_map(|c| catalog.iter().flat_map(|l| build_query_set(c, l, &template).unwrap()))
        .collect();
    (cases, catalog, queries)
}
