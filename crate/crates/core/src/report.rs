//! CSV tables and SVG heatmaps rendered from model evaluations.
//!
//! Every renderer is a pure function of its inputs and produces the same bytes
//! for the same inputs. Models are ordered by `(model_id, temperature)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{cross_model_test, model_unfairness_test, AggregateError, BernoulliVerdict, Granularity};
use crate::metrics::{FitKind, ModelEvaluation, RobustnessVariant};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub const SUMMARY_HEADER: [&str; 11] = [
    "model_id",
    "inconsistency",
    "bias_count",
    "bias_p_10",
    "bias_p_05",
    "wt_avg_mae",
    "wt_avg_mape",
    "imbalance_count",
    "imbalance_p_10",
    "imbalance_p_05",
    "temperature",
];
pub const DETAIL_HEADER: [&str; 6] = ["model", "label", "value", "reference", "coefficient", "p_value"];
pub const VERDICT_HEADER: [&str; 7] = ["model", "metric", "granularity", "trials", "successes", "tau", "p_bernoulli"];
pub const FIT_HEADER: [&str; 11] = [
    "model",
    "label",
    "value",
    "reference",
    "coefficient",
    "std_error",
    "t",
    "p",
    "n_obs",
    "n_clusters",
    "se_kind",
];
pub const METRIC_HEADER: [&str; 5] = ["label", "p_l", "w_l", "mae", "mape"];

/// Model name used in the pooled verdict rows.
pub const ALL_MODELS: &str = "ALL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummaryRow {
    pub model_id: String,
    pub inconsistency: Option<f64>,
    pub bias_count: u64,
    pub bias_p_10: f64,
    pub bias_p_05: f64,
    pub wt_avg_mae: Option<f64>,
    pub wt_avg_mape: Option<f64>,
    pub imbalance_count: u64,
    pub imbalance_p_10: f64,
    pub imbalance_p_05: f64,
    pub temperature: f64,
}

fn sorted(evals: &[ModelEvaluation]) -> Vec<&ModelEvaluation> {
    let mut out: Vec<_> = evals.iter().collect();
    out.sort_by(|a, b| a.model_id.cmp(&b.model_id).then(a.temperature.total_cmp(&b.temperature)));
    out
}

/// Summary row; counts are successes at the 10% level.
pub fn summary_row(
    eval: &ModelEvaluation,
    variant: RobustnessVariant,
    granularity: Granularity,
) -> Result<ModelSummaryRow, AggregateError> {
    let test = |kind, tau| {
        let fits = eval.fits(kind, variant);
        model_unfairness_test(fits.iter().map(|(_, f)| *f), tau, granularity)
    };
    let (b10, b05) = (test(FitKind::Bias, 0.1)?, test(FitKind::Bias, 0.05)?);
    let (i10, i05) = (test(FitKind::Imbalance, 0.1)?, test(FitKind::Imbalance, 0.05)?);
    Ok(ModelSummaryRow {
        model_id: eval.judge.clone(),
        inconsistency: eval.inconsistency,
        bias_count: b10.successes,
        bias_p_10: b10.p_bernoulli,
        bias_p_05: b05.p_bernoulli,
        wt_avg_mae: eval.wt_avg_mae,
        wt_avg_mape: eval.wt_avg_mape,
        imbalance_count: i10.successes,
        imbalance_p_10: i10.p_bernoulli,
        imbalance_p_05: i05.p_bernoulli,
        temperature: eval.temperature,
    })
}

/// Fixed three-decimal formatting; negative zero prints as zero.
pub fn fmt3(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

fn opt3(x: Option<f64>) -> String {
    x.map(fmt3).unwrap_or_default()
}

fn full(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, ReportError> {
    w.into_inner().map_err(|e| ReportError::Io {
        path: "<memory>".into(),
        source: e.into_error(),
    })
}

pub fn summary_table(rows: &[ModelSummaryRow]) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.model_id.clone(),
            opt3(r.inconsistency),
            r.bias_count.to_string(),
            fmt3(r.bias_p_10),
            fmt3(r.bias_p_05),
            opt3(r.wt_avg_mae),
            opt3(r.wt_avg_mape),
            r.imbalance_count.to_string(),
            fmt3(r.imbalance_p_10),
            fmt3(r.imbalance_p_05),
            fmt3(r.temperature),
        ])?;
    }
    finish(w)
}

/// One row per estimated bias coefficient, sorted by model, label and value.
pub fn label_detail_table(evals: &[ModelEvaluation], variant: RobustnessVariant) -> Result<Vec<u8>, ReportError> {
    let mut rows = Vec::new();
    for e in sorted(evals) {
        for (l, fit) in e.fits(FitKind::Bias, variant) {
            for c in &fit.coefficients {
                rows.push((e.judge.clone(), l.label.clone(), c.name.clone(), l.reference.clone(), c.estimate, c.p_value));
            }
        }
    }
    rows.sort_by(|a, b| (&a.0, &a.1, &a.2).cmp(&(&b.0, &b.1, &b.2)));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DETAIL_HEADER)?;
    for (m, l, v, r, est, p) in rows {
        w.write_record([m, l, v, r, est.to_string(), full(p)])?;
    }
    finish(w)
}

/// Full coefficient dump for one metric and variant.
pub fn fit_table(evals: &[ModelEvaluation], kind: FitKind, variant: RobustnessVariant) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FIT_HEADER)?;
    for e in sorted(evals) {
        for (l, fit) in e.fits(kind, variant) {
            for c in &fit.coefficients {
                w.write_record([
                    e.judge.clone(),
                    l.label.clone(),
                    c.name.clone(),
                    l.reference.clone(),
                    c.estimate.to_string(),
                    c.std_error.to_string(),
                    full(c.t_stat),
                    full(c.p_value),
                    fit.n_obs.to_string(),
                    fit.n_clusters.to_string(),
                    fit.se_kind.as_str().to_string(),
                ])?;
            }
        }
    }
    finish(w)
}

/// Per-label inconsistency and accuracy for one model.
pub fn metric_table(eval: &ModelEvaluation) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRIC_HEADER)?;
    for l in &eval.labels {
        w.write_record([
            l.label.clone(),
            l.inconsistency.p_l.to_string(),
            l.inconsistency.w_l.to_string(),
            full(l.accuracy.mae),
            full(l.accuracy.mape),
        ])?;
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub model: String,
    pub metric: FitKind,
    pub verdict: BernoulliVerdict,
}

/// Per-model verdicts for each metric and tau, followed by the pooled rows.
pub fn compute_verdicts(
    evals: &[ModelEvaluation],
    variant: RobustnessVariant,
    taus: &[f64],
    granularity: Granularity,
) -> Result<Vec<VerdictRow>, AggregateError> {
    let mut rows = Vec::new();
    let mut pooled = Vec::new();
    for kind in [FitKind::Bias, FitKind::Imbalance] {
        for &tau in taus {
            let mut per_model = Vec::new();
            for e in sorted(evals) {
                let fits = e.fits(kind, variant);
                let v = model_unfairness_test(fits.iter().map(|(_, f)| *f), tau, granularity)?;
                per_model.push(v.clone());
                rows.push(VerdictRow { model: e.judge.clone(), metric: kind, verdict: v });
            }
            if !per_model.is_empty() {
                pooled.push(VerdictRow {
                    model: ALL_MODELS.into(),
                    metric: kind,
                    verdict: cross_model_test(&per_model, tau)?,
                });
            }
        }
    }
    rows.sort_by(|a, b| a.model.cmp(&b.model).then(a.metric.cmp(&b.metric)));
    rows.extend(pooled);
    Ok(rows)
}

pub fn verdict_table(rows: &[VerdictRow]) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(VERDICT_HEADER)?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.metric.as_str().to_string(),
            r.verdict.granularity.as_str().to_string(),
            r.verdict.trials.to_string(),
            r.verdict.successes.to_string(),
            r.verdict.tau.to_string(),
            r.verdict.p_bernoulli.to_string(),
        ])?;
    }
    finish(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignificanceBucket {
    #[serde(rename = "p<0.01")]
    P01,
    #[serde(rename = "p<0.05")]
    P05,
    #[serde(rename = "p<0.1")]
    P10,
    #[serde(rename = "ns")]
    Ns,
    #[serde(rename = "not-estimated")]
    NotEstimated,
}

impl SignificanceBucket {
    pub fn from_p(p: Option<f64>) -> Self {
        match p {
            None => SignificanceBucket::NotEstimated,
            Some(p) if p < 0.01 => SignificanceBucket::P01,
            Some(p) if p < 0.05 => SignificanceBucket::P05,
            Some(p) if p < 0.1 => SignificanceBucket::P10,
            Some(_) => SignificanceBucket::Ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub model_id: String,
    pub label: String,
    pub best_value: Option<String>,
    pub coefficient: Option<f64>,
    pub p_value: Option<f64>,
    pub significance_bucket: SignificanceBucket,
}

/// Fill colors by bucket, as hex strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapPalette {
    pub p01: String,
    pub p05: String,
    pub p10: String,
    pub ns: String,
    pub not_estimated: String,
}

impl Default for HeatmapPalette {
    fn default() -> Self {
        Self {
            p01: "#08306b".into(),
            p05: "#2171b5".into(),
            p10: "#6baed6".into(),
            ns: "#f7fbff".into(),
            not_estimated: "#e0e0e0".into(),
        }
    }
}

impl HeatmapPalette {
    fn fill(&self, b: SignificanceBucket) -> &str {
        match b {
            SignificanceBucket::P01 => &self.p01,
            SignificanceBucket::P05 => &self.p05,
            SignificanceBucket::P10 => &self.p10,
            SignificanceBucket::Ns => &self.ns,
            SignificanceBucket::NotEstimated => &self.not_estimated,
        }
    }
}

/// One cell per (model, label): the value with the smallest p-value.
pub fn heatmap_cells(evals: &[ModelEvaluation], kind: FitKind, variant: RobustnessVariant) -> Vec<HeatmapCell> {
    let mut cells = Vec::new();
    for e in sorted(evals) {
        for l in &e.labels {
            let map = match kind {
                FitKind::Bias => &l.bias,
                FitKind::Imbalance => &l.imbalance,
            };
            let best = map.get(&variant).and_then(|o| o.fit()).and_then(|f| {
                f.coefficients
                    .iter()
                    .filter(|c| c.p_value.is_some())
                    .min_by(|a, b| a.p_value.unwrap().total_cmp(&b.p_value.unwrap()))
            });
            cells.push(HeatmapCell {
                model_id: e.judge.clone(),
                label: l.label.clone(),
                best_value: best.map(|c| c.name.clone()),
                coefficient: best.map(|c| c.estimate),
                p_value: best.and_then(|c| c.p_value),
                significance_bucket: SignificanceBucket::from_p(best.and_then(|c| c.p_value)),
            });
        }
    }
    cells
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const CELL_W: usize = 72;
const CELL_H: usize = 22;
const LEFT: usize = 240;
const TOP: usize = 140;

/// Labels as rows, models as columns; each cell shows the coefficient.
pub fn heatmap_svg(cells: &[HeatmapCell], models: &[String], labels: &[String], palette: &HeatmapPalette) -> Vec<u8> {
    let index: BTreeMap<(&str, &str), &HeatmapCell> =
        cells.iter().map(|c| ((c.model_id.as_str(), c.label.as_str()), c)).collect();
    let width = LEFT + CELL_W * models.len() + 10;
    let height = TOP + CELL_H * labels.len() + 10;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    for (j, m) in models.iter().enumerate() {
        let x = LEFT + CELL_W * j + CELL_W / 2;
        let y = TOP - 6;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" transform="rotate(-40 {x} {y})">{}</text>"#,
            xml_escape(m)
        );
    }
    for (i, l) in labels.iter().enumerate() {
        let y = TOP + CELL_H * i;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 6,
            y + CELL_H / 2 + 4,
            xml_escape(l)
        );
        for (j, m) in models.iter().enumerate() {
            let x = LEFT + CELL_W * j;
            let cell = index.get(&(m.as_str(), l.as_str()));
            let bucket = cell.map_or(SignificanceBucket::NotEstimated, |c| c.significance_bucket);
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{}" stroke="#ffffff"/>"##,
                xml_escape(palette.fill(bucket))
            );
            if let Some(coef) = cell.and_then(|c| c.coefficient) {
                let ink = if matches!(bucket, SignificanceBucket::P01 | SignificanceBucket::P05) {
                    "#ffffff"
                } else {
                    "#000000"
                };
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{}</text>"#,
                    x + CELL_W / 2,
                    y + CELL_H / 2 + 4,
                    fmt3(coef)
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s.into_bytes()
}

/// Rendering options for [`render_reports`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    /// Variant shown in the summary, detail, verdict and heatmap outputs.
    pub primary_variant: RobustnessVariant,
    /// Variants dumped under `fits/`.
    pub variants: Vec<RobustnessVariant>,
    pub taus: Vec<f64>,
    pub granularity: Granularity,
    pub palette: HeatmapPalette,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            primary_variant: RobustnessVariant::Main,
            variants: vec![RobustnessVariant::Main],
            taus: vec![0.1, 0.05],
            granularity: Granularity::PerValue,
            palette: HeatmapPalette::default(),
        }
    }
}

/// File name to make a model name safe as a path component.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Every report file keyed by its path relative to the report directory.
pub fn render_reports(
    evals: &[ModelEvaluation],
    opts: &ReportOptions,
) -> Result<BTreeMap<String, Vec<u8>>, ReportError> {
    let mut files = BTreeMap::new();
    let v = opts.primary_variant;
    let rows = sorted(evals)
        .into_iter()
        .map(|e| summary_row(e, v, opts.granularity))
        .collect::<Result<Vec<_>, _>>()?;
    files.insert("summary.csv".into(), summary_table(&rows)?);
    files.insert("detail.csv".into(), label_detail_table(evals, v)?);
    files.insert(
        "verdicts.csv".into(),
        verdict_table(&compute_verdicts(evals, v, &opts.taus, opts.granularity)?)?,
    );

    let models: Vec<String> = sorted(evals).iter().map(|e| e.judge.clone()).collect();
    let mut labels: Vec<String> = Vec::new();
    for e in sorted(evals) {
        for l in &e.labels {
            if !labels.contains(&l.label) {
                labels.push(l.label.clone());
            }
        }
    }
    for kind in [FitKind::Bias, FitKind::Imbalance] {
        let cells = heatmap_cells(evals, kind, v);
        files.insert(
            format!("heatmap_{}.svg", kind.as_str()),
            heatmap_svg(&cells, &models, &labels, &opts.palette),
        );
        for &variant in &opts.variants {
            files.insert(
                format!("fits/{}_{}.csv", kind.as_str(), variant.as_str()),
                fit_table(evals, kind, variant)?,
            );
        }
    }
    for e in sorted(evals) {
        files.insert(format!("metrics/{}.csv", file_stem(&e.judge)), metric_table(e)?);
    }
    Ok(files)
}

/// Writes rendered files beneath `dir`, creating subdirectories as needed.
pub fn write_files(dir: &Path, files: &BTreeMap<String, Vec<u8>>) -> Result<(), ReportError> {
    for (name, bytes) in files {
        let path = dir.join(name);
        let io = |source| ReportError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        std::fs::write(&path, bytes).map_err(io)?;
    }
    Ok(())
}
