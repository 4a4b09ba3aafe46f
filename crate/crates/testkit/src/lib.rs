//! Oracles for the fairaudit test suites.
//!
//! Everything here is deliberately computed along a different route from the
//! library: explicit dummy-variable regressions with dense linear algebra,
//! exact rational arithmetic for binomial tails, a streaming XML parser for
//! well-formedness.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Raw regression input for the dense oracle.
#[derive(Debug, Clone)]
pub struct DenseProblem {
    pub y: Vec<f64>,
    /// Row-major treatment regressors.
    pub x: Vec<Vec<f64>>,
    pub groups: Vec<String>,
    pub clusters: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DenseFit {
    pub coefficients: Vec<f64>,
    pub cluster_se: Vec<f64>,
    pub hc1_se: Vec<f64>,
    pub n_obs: usize,
    pub n_groups: usize,
    pub n_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenseOutcome {
    /// Nothing left to estimate after dropping singleton and no-variation groups.
    Degenerate,
    /// Explicit-dummy design is rank deficient in the treatment block.
    RankDeficient,
}

/// OLS of `y` on `[X, D]` with one dummy per document, computed densely.
///
/// Singleton groups and groups where every treatment column is constant are
/// removed first; this only changes the sample counts used by the
/// small-sample corrections, not the slope estimates.
pub fn dense_dummy_ols(p: &DenseProblem) -> Result<DenseFit, DenseOutcome> {
    let k = p.x.first().map_or(0, Vec::len);
    // group membership
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in p.groups.iter().enumerate() {
        members.entry(g.as_str()).or_default().push(i);
    }
    let mut rows = Vec::new();
    for idx in members.values() {
        if idx.len() < 2 {
            continue;
        }
        let first = &p.x[idx[0]];
        let constant = idx.iter().all(|&i| p.x[i] == *first);
        if constant {
            continue;
        }
        rows.extend(idx.iter().copied());
    }
    rows.sort_unstable();
    if rows.is_empty() {
        return Err(DenseOutcome::Degenerate);
    }
    let group_names: Vec<&str> = {
        let mut g: Vec<&str> = rows.iter().map(|&i| p.groups[i].as_str()).collect();
        g.sort_unstable();
        g.dedup();
        g
    };
    let cluster_names: Vec<&str> = {
        let mut c: Vec<&str> = rows.iter().map(|&i| p.clusters[i].as_str()).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let n = rows.len();
    let g = group_names.len();
    let width = k + g;
    let mut z = DMatrix::<f64>::zeros(n, width);
    let mut yv = DVector::<f64>::zeros(n);
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..k {
            z[(r, j)] = p.x[i][j];
        }
        let gi = group_names.binary_search(&p.groups[i].as_str()).unwrap();
        z[(r, k + gi)] = 1.0;
        yv[r] = p.y[i];
    }
    let ztz = z.transpose() * &z;
    let svd = ztz.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * smax {
        return Err(DenseOutcome::RankDeficient);
    }
    let inv = ztz.try_inverse().ok_or(DenseOutcome::RankDeficient)?;
    let beta = &inv * z.transpose() * &yv;
    let e = &yv - &z * &beta;

    // cluster meat
    let mut meat_c = DMatrix::<f64>::zeros(width, width);
    for c in &cluster_names {
        let mut s = DVector::<f64>::zeros(width);
        for (r, &i) in rows.iter().enumerate() {
            if p.clusters[i] == *c {
                s += z.row(r).transpose() * e[r];
            }
        }
        meat_c += &s * s.transpose();
    }
    let mut meat_h = DMatrix::<f64>::zeros(width, width);
    for r in 0..n {
        let zr = z.row(r).transpose();
        meat_h += &zr * zr.transpose() * (e[r] * e[r]);
    }
    let v_c = &inv * meat_c * &inv;
    let v_h = &inv * meat_h * &inv;

    let nested = {
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        rows.iter().all(|&i| {
            let o = owner.entry(p.groups[i].as_str()).or_insert(p.clusters[i].as_str());
            *o == p.clusters[i].as_str()
        })
    };
    let nf = n as f64;
    let gc = cluster_names.len() as f64;
    let k_cluster = if nested { k + 1 } else { k + g } as f64;
    let c_cluster = (nf - 1.0) / (nf - k_cluster) * gc / (gc - 1.0);
    let k_hc = (k + g) as f64;
    let c_hc = nf / (nf - k_hc);

    Ok(DenseFit {
        coefficients: (0..k).map(|j| beta[j]).collect(),
        cluster_se: (0..k).map(|j| (c_cluster * v_c[(j, j)].max(0.0)).sqrt()).collect(),
        hc1_se: (0..k).map(|j| (c_hc * v_h[(j, j)].max(0.0)).sqrt()).collect(),
        n_obs: n,
        n_groups: g,
        n_clusters: cluster_names.len(),
    })
}

/// Random panel with up to `max_docs` documents and `max_values` label values.
///
/// Each document observes a random subset of the values (missing cells), some
/// documents observe only one value (singletons), and clusters are either the
/// documents themselves or a coarser partition of them.
pub fn random_panel(seed: u64, max_docs: usize, max_values: usize) -> (DenseProblem, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = rng.random_range(2..=max_docs);
    let values = rng.random_range(2..=max_values);
    let coarse = rng.random_bool(0.3);
    let effects: Vec<f64> = (0..values).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut p = DenseProblem {
        y: vec![],
        x: vec![],
        groups: vec![],
        clusters: vec![],
    };
    for d in 0..docs {
        let base = rng.random_range(0.0..5.0);
        let doc = format!("doc{d:02}");
        let cluster = if coarse { format!("cl{}", d % 3) } else { doc.clone() };
        let singleton = rng.random_bool(0.15);
        for v in 0..values {
            let present = if singleton { v == 0 } else { rng.random_bool(0.8) };
            if !present {
                continue;
            }
            let noise: f64 = rng.random_range(-0.3..0.3);
            p.y.push(base + effects[v] + noise);
            p.x.push((1..values).map(|j| if j == v { 1.0 } else { 0.0 }).collect());
            p.groups.push(doc.clone());
            p.clusters.push(cluster.clone());
        }
    }
    let names = (1..values).map(|j| format!("v{j}")).collect();
    (p, names)
}

/// Exact `P(X >= k)` for `X ~ Binomial(n, num/den)`.
pub fn exact_binomial_tail(n: u64, k: u64, num: u64, den: u64) -> BigRational {
    let tau = BigRational::new(BigInt::from(num), BigInt::from(den));
    let q = BigRational::one() - &tau;
    let mut total = BigRational::zero();
    let mut choose = BigInt::one();
    for l in 0..=n {
        if l > 0 {
            choose = choose * BigInt::from(n - l + 1) / BigInt::from(l);
        }
        if l >= k {
            let term = BigRational::from_integer(choose.clone())
                * pow(&tau, l)
                * pow(&q, n - l);
            total += term;
        }
    }
    total
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("finite rational")
}

fn pow(base: &BigRational, e: u64) -> BigRational {
    let mut acc = BigRational::one();
    for _ in 0..e {
        acc *= base;
    }
    acc
}

/// Checks that `bytes` is a single well-formed XML document.
pub fn xml_well_formed(bytes: &[u8]) -> Result<usize, String> {
    use quick_xml::events::Event;
    let text = std::str::from_utf8(bytes).map_err(|e| e.to_string())?;
    let mut reader = quick_xml::Reader::from_str(text);
    reader.config_mut().check_end_names = true;
    let mut depth = 0i64;
    let mut elements = 0usize;
    let mut roots = 0usize;
    loop {
        match reader.read_event() {
            Ok(Event::Start(_)) => {
                if depth == 0 {
                    roots += 1;
                }
                depth += 1;
                elements += 1;
            }
            Ok(Event::Empty(_)) => {
                if depth == 0 {
                    roots += 1;
                }
                elements += 1;
            }
            Ok(Event::End(_)) => depth -= 1,
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(e) => return Err(e.to_string()),
        }
    }
    if depth != 0 || roots != 1 {
        return Err(format!("unbalanced document: depth {depth}, roots {roots}"));
    }
    Ok(elements)
}
