//! Least squares with one absorbed fixed-effect dimension.
//!
//! The document fixed effects are removed by the within transformation
//! (group demeaning); the remaining few treatment columns are solved through a
//! column-pivoted QR so that collinear designs are reported rather than
//! silently regularized. Covariance is the sandwich estimator, either
//! clustered (CR1) or heteroskedasticity-robust (HC1), with the
//! small-sample factors below.
//!
//! | kind    | factor                              | K                                        | t dof |
//! |---------|-------------------------------------|------------------------------------------|-------|
//! | cluster | `(N-1)/(N-K) * G/(G-1)`             | `cols + 1` if groups nest in clusters, else `cols + G_fe` | `G-1` |
//! | hc1     | `N/(N-K)`                           | `cols + G_fe`                            | `N-K` |

mod dist;
mod qr;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;
pub use dist::{inc_beta, ln_gamma, p_value_t};
use qr::PivotedQr;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FitError {
    #[error("design vectors have mismatched lengths ({0})")]
    LengthMismatch(String),
    #[error("design has no treatment columns")]
    NoColumns,
    #[error("design is empty after dropping singleton and no-variation groups")]
    Empty,
    #[error("need at least 2 groups after dropping, have {0}")]
    InsufficientGroups(usize),
    #[error("need at least 2 clusters, have {0}")]
    InsufficientClusters(usize),
    #[error("column `{0}` is collinear with the other regressors")]
    RankDeficient(String),
    #[error("no residual degrees of freedom (N = {n}, K = {k})")]
    NoResidualDof { n: usize, k: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeKind {
    #[default]
    Cluster,
    Hc1,
}

impl SeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SeKind::Cluster => "cluster",
            SeKind::Hc1 => "hc1",
        }
    }
}

/// Regression input: one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDesign<T> {
    pub y: Vec<T>,
    /// Treatment columns, each of length `y.len()`.
    pub columns: Vec<Vec<T>>,
    pub column_names: Vec<String>,
    pub group_ids: Vec<String>,
    pub cluster_ids: Vec<String>,
}

impl<T: Scalar> PanelDesign<T> {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn check(&self) -> Result<(), FitError> {
        let n = self.y.len();
        if self.columns.is_empty() {
            return Err(FitError::NoColumns);
        }
        if self.column_names.len() != self.columns.len() {
            return Err(FitError::LengthMismatch(format!(
                "{} columns, {} names",
                self.columns.len(),
                self.column_names.len()
            )));
        }
        if let Some((i, c)) = self.columns.iter().enumerate().find(|(_, c)| c.len() != n) {
            return Err(FitError::LengthMismatch(format!(
                "column `{}` has {} rows, y has {n}",
                self.column_names[i],
                c.len()
            )));
        }
        if self.group_ids.len() != n || self.cluster_ids.len() != n {
            return Err(FitError::LengthMismatch(format!(
                "y has {n} rows, groups {}, clusters {}",
                self.group_ids.len(),
                self.cluster_ids.len()
            )));
        }
        Ok(())
    }

    /// Keeps the rows selected by `keep`.
    fn select(&self, keep: &[bool]) -> Self {
        let pick = |v: &[T]| v.iter().zip(keep).filter(|(_, &k)| k).map(|(&x, _)| x).collect();
        let pick_s = |v: &[String]| {
            v.iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(x, _)| x.clone())
                .collect()
        };
        Self {
            y: pick(&self.y),
            columns: self.columns.iter().map(|c| pick(c)).collect(),
            column_names: self.column_names.clone(),
            group_ids: pick_s(&self.group_ids),
            cluster_ids: pick_s(&self.cluster_ids),
        }
    }
}

/// Dense indices for ids, in order of first appearance.
fn index_ids<S: AsRef<str>>(ids: &[S]) -> (Vec<usize>, usize) {
    let mut map: HashMap<&str, usize> = HashMap::new();
    let idx = ids
        .iter()
        .map(|id| {
            let next = map.len();
            *map.entry(id.as_ref()).or_insert(next)
        })
        .collect();
    (idx, map.len())
}

/// Removes every observation whose group has exactly one observation.
pub fn drop_singletons<T: Scalar>(design: &PanelDesign<T>) -> PanelDesign<T> {
    let (idx, n_groups) = index_ids(&design.group_ids);
    let mut sizes = vec![0usize; n_groups];
    for &g in &idx {
        sizes[g] += 1;
    }
    let keep: Vec<bool> = idx.iter().map(|&g| sizes[g] > 1).collect();
    design.select(&keep)
}

/// Subtracts each group's mean from its members.
pub fn demean_within<T: Scalar, S: AsRef<str>>(values: &[T], group_ids: &[S]) -> Vec<T> {
    assert_eq!(values.len(), group_ids.len(), "values and group ids differ in length");
    let (idx, n_groups) = index_ids(group_ids);
    demean_indexed(values, &idx, n_groups)
}

/// Column-wise [`demean_within`].
pub fn demean_columns<T: Scalar, S: AsRef<str>>(columns: &[Vec<T>], group_ids: &[S]) -> Vec<Vec<T>> {
    let (idx, n_groups) = index_ids(group_ids);
    columns
        .iter()
        .map(|c| {
            assert_eq!(c.len(), idx.len(), "column and group ids differ in length");
            demean_indexed(c, &idx, n_groups)
        })
        .collect()
}

fn demean_indexed<T: Scalar>(values: &[T], idx: &[usize], n_groups: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&v, &g) in values.iter().zip(idx) {
        sums[g] = sums[g] + v;
        counts[g] += 1;
    }
    let means: Vec<T> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / T::count(c) } else { T::zero() })
        .collect();
    values.iter().zip(idx).map(|(&v, &g)| v - means[g]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient<T> {
    pub name: String,
    pub estimate: T,
    pub std_error: T,
    /// Undefined when the standard error is zero.
    pub t_stat: Option<T>,
    pub p_value: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit<T> {
    pub coefficients: Vec<Coefficient<T>>,
    pub n_obs: usize,
    pub n_groups: usize,
    pub n_clusters: usize,
    /// Degrees of freedom of the t reference distribution.
    pub dof: T,
    pub se_kind: SeKind,
    pub dropped_singletons: usize,
    /// Observations in groups whose demeaned regressors are identically zero.
    pub dropped_no_variation: usize,
    /// Whether every fixed-effect group sits inside a single cluster.
    pub nested_clusters: bool,
}

impl<T: Scalar> RegressionFit<T> {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient<T>> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    /// Coefficient with the smallest defined p-value.
    pub fn min_p(&self) -> Option<&Coefficient<T>> {
        self.coefficients
            .iter()
            .filter(|c| c.p_value.is_some())
            .min_by(|a, b| a.p_value.partial_cmp(&b.p_value).expect("p-values are not NaN"))
    }
}

/// Fixed-effects OLS on `design` with sandwich standard errors.
pub fn fit_fe_ols<T: Scalar>(design: &PanelDesign<T>, se_kind: SeKind) -> Result<RegressionFit<T>, FitError> {
    design.check()?;
    let n_raw = design.n_obs();
    let design = drop_singletons(design);
    let dropped_singletons = n_raw - design.n_obs();

    // groups whose demeaned regressors vanish carry no information on the slopes
    let (gidx, n_groups_all) = index_ids(&design.group_ids);
    let x_demeaned: Vec<Vec<T>> = design
        .columns
        .iter()
        .map(|c| demean_indexed(c, &gidx, n_groups_all))
        .collect();
    let scale = design
        .columns
        .iter()
        .flatten()
        .fold(T::one(), |m, &v| m.max(v.abs()));
    let zero_tol = T::lit(64.0) * T::epsilon() * scale;
    let mut varies = vec![false; n_groups_all];
    for col in &x_demeaned {
        for (&v, &g) in col.iter().zip(&gidx) {
            if v.abs() > zero_tol {
                varies[g] = true;
            }
        }
    }
    let keep: Vec<bool> = gidx.iter().map(|&g| varies[g]).collect();
    let dropped_no_variation = keep.iter().filter(|&&k| !k).count();
    let design = design.select(&keep);
    let n = design.n_obs();
    if n == 0 {
        return Err(FitError::Empty);
    }

    let (gidx, n_groups) = index_ids(&design.group_ids);
    if n_groups < 2 {
        return Err(FitError::InsufficientGroups(n_groups));
    }
    let (cidx, n_clusters) = index_ids(&design.cluster_ids);
    let nested_clusters = {
        let mut owner: Vec<Option<usize>> = vec![None; n_groups];
        gidx.iter().zip(&cidx).all(|(&g, &c)| match owner[g] {
            None => {
                owner[g] = Some(c);
                true
            }
            Some(o) => o == c,
        })
    };

    let y = demean_indexed(&design.y, &gidx, n_groups);
    let x: Vec<Vec<T>> = design
        .columns
        .iter()
        .map(|c| demean_indexed(c, &gidx, n_groups))
        .collect();
    let k_cols = x.len();

    let frob = x.iter().flatten().map(|&v| v * v).sum::<T>().sqrt();
    let qr = PivotedQr::new(&x, T::lit(1e-10) * frob);
    if qr.rank < k_cols {
        let culprit = qr.perm[qr.rank];
        return Err(FitError::RankDeficient(design.column_names[culprit].clone()));
    }
    let beta = qr.solve(&y);
    // residuals at round-off level count as an exact fit
    let y_scale = design.y.iter().fold(T::one(), |m, &v| m.max(v.abs()));
    let resid_tol = T::lit(64.0) * T::epsilon() * y_scale;
    let resid: Vec<T> = (0..n)
        .map(|i| y[i] - (0..k_cols).map(|j| x[j][i] * beta[j]).sum::<T>())
        .map(|e| if e.abs() <= resid_tol { T::zero() } else { e })
        .collect();
    let bread = qr.inverse_gram();

    let mut meat = vec![vec![T::zero(); k_cols]; k_cols];
    let (factor, dof) = match se_kind {
        SeKind::Cluster => {
            if n_clusters < 2 {
                return Err(FitError::InsufficientClusters(n_clusters));
            }
            let k = if nested_clusters { k_cols + 1 } else { k_cols + n_groups };
            if n <= k {
                return Err(FitError::NoResidualDof { n, k });
            }
            let mut scores = vec![vec![T::zero(); k_cols]; n_clusters];
            for i in 0..n {
                for j in 0..k_cols {
                    scores[cidx[i]][j] = scores[cidx[i]][j] + x[j][i] * resid[i];
                }
            }
            for s in &scores {
                for a in 0..k_cols {
                    for b in 0..k_cols {
                        meat[a][b] = meat[a][b] + s[a] * s[b];
                    }
                }
            }
            let (nn, kk, gg) = (T::count(n), T::count(k), T::count(n_clusters));
            let factor = (nn - T::one()) / (nn - kk) * gg / (gg - T::one());
            (factor, gg - T::one())
        }
        SeKind::Hc1 => {
            let k = k_cols + n_groups;
            if n <= k {
                return Err(FitError::NoResidualDof { n, k });
            }
            for i in 0..n {
                let e2 = resid[i] * resid[i];
                for a in 0..k_cols {
                    for b in 0..k_cols {
                        meat[a][b] = meat[a][b] + e2 * x[a][i] * x[b][i];
                    }
                }
            }
            let (nn, kk) = (T::count(n), T::count(k));
            (nn / (nn - kk), nn - kk)
        }
    };

    let cov = sandwich(&bread, &meat);
    let coefficients = (0..k_cols)
        .map(|j| {
            let se = (factor * cov[j][j]).max(T::zero()).sqrt();
            let (t_stat, p_value) = if se > T::zero() && se.is_finite() {
                let t = beta[j] / se;
                (Some(t), Some(p_value_t(t, dof)))
            } else {
                (None, None)
            };
            Coefficient {
                name: design.column_names[j].clone(),
                estimate: beta[j],
                std_error: se,
                t_stat,
                p_value,
            }
        })
        .collect();

    Ok(RegressionFit {
        coefficients,
        n_obs: n,
        n_groups,
        n_clusters,
        dof,
        se_kind,
        dropped_singletons,
        dropped_no_variation,
        nested_clusters,
    })
}

fn sandwich<T: Scalar>(bread: &[Vec<T>], meat: &[Vec<T>]) -> Vec<Vec<T>> {
    let k = bread.len();
    let mul = |a: &[Vec<T>], b: &[Vec<T>]| -> Vec<Vec<T>> {
        (0..k)
            .map(|i| (0..k).map(|j| (0..k).map(|m| a[i][m] * b[m][j]).sum()).collect())
            .collect()
    };
    mul(&mul(bread, meat), bread)
}
