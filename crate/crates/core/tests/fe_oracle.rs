use fairaudit_core::stats_fe::{fit_fe_ols, FitError, PanelDesign, SeKind};
use fairaudit_core::{Design, Fit};
use fairaudit_testkit::{dense_dummy_ols, random_panel, DenseOutcome, DenseProblem};
use proptest::prelude::*;

fn design_of(p: &DenseProblem, names: &[String]) -> Design {
    let k = names.len();
    PanelDesign {
        y: p.y.clone(),
        columns: (0..k).map(|j| p.x.iter().map(|r| r[j]).collect()).collect(),
        column_names: names.to_vec(),
        group_ids: p.groups.clone(),
        cluster_ids: p.clusters.clone(),
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

/// Standard errors compared as variances against the fit's largest variance;
/// a zero true variance leaves both sides at sqrt of round-off.
fn se_close(a: f64, b: f64, all: &[f64], tol: f64) -> bool {
    let scale = all.iter().map(|s| s * s).fold(1.0, f64::max);
    (a * a - b * b).abs() <= tol * scale
}

/// Compares the library against the dense oracle; `Ok(true)` when estimates were compared.
fn agree(seed: u64) -> Result<bool, String> {
    let (p, names) = random_panel(seed, 12, 5);
    let design = design_of(&p, &names);
    let oracle = dense_dummy_ols(&p);
    let lib_c = fit_fe_ols(&design, SeKind::Cluster);
    let lib_h = fit_fe_ols(&design, SeKind::Hc1);
    match (&oracle, &lib_c) {
        (Ok(o), Ok(fit)) => {
            for (j, c) in fit.coefficients.iter().enumerate() {
                if !close(c.estimate, o.coefficients[j], 1e-8) {
                    return Err(format!("seed {seed}: beta[{j}] {} vs {}", c.estimate, o.coefficients[j]));
                }
                if !se_close(c.std_error, o.cluster_se[j], &o.cluster_se, 1e-8) {
                    return Err(format!("seed {seed}: cluster se[{j}] {} vs {}", c.std_error, o.cluster_se[j]));
                }
            }
            if (fit.n_obs, fit.n_groups, fit.n_clusters) != (o.n_obs, o.n_groups, o.n_clusters) {
                return Err(format!("seed {seed}: sample counts differ"));
            }
            if let Ok(h) = &lib_h {
                for (j, c) in h.coefficients.iter().enumerate() {
                    if !se_close(c.std_error, o.hc1_se[j], &o.hc1_se, 1e-8) {
                        return Err(format!("seed {seed}: hc1 se[{j}] {} vs {}", c.std_error, o.hc1_se[j]));
                    }
                }
            }
            Ok(true)
        }
        (Ok(_), Err(FitError::InsufficientClusters(_) | FitError::NoResidualDof { .. })) => Ok(false),
        (Ok(o), Err(FitError::InsufficientGroups(g))) if o.n_groups == *g => Ok(false),
        (Err(DenseOutcome::Degenerate), Err(FitError::Empty | FitError::InsufficientGroups(_))) => Ok(false),
        (Err(DenseOutcome::RankDeficient), Err(FitError::RankDeficient(_))) => Ok(false),
        (Err(DenseOutcome::RankDeficient), Err(FitError::InsufficientGroups(_))) => Ok(false),
        (o, l) => Err(format!("seed {seed}: oracle {o:?} vs library {l:?}")),
    }
}

#[test]
fn matches_dense_dummy_regression() {
    let mut compared = 0;
    for seed in 0..300 {
        if agree(seed).unwrap() {
            compared += 1;
        }
    }
    assert!(compared >= 200, "only {compared} designs were estimable");
}

fn coefficients(fit: &Fit) -> Vec<(f64, f64, Option<f64>)> {
    fit.coefficients.iter().map(|c| (c.estimate, c.std_error, c.p_value)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn oracle_agreement(seed in 1000u64..1_000_000) {
        prop_assert!(agree(seed).is_ok(), "{}", agree(seed).unwrap_err());
    }

    #[test]
    fn document_shifts_leave_fit_unchanged(seed in 0u64..10_000, shift in -3.0f64..3.0) {
        let (p, names) = random_panel(seed, 10, 4);
        let d = design_of(&p, &names);
        let Ok(base) = fit_fe_ols(&d, SeKind::Cluster) else { return Ok(()) };
        let mut shifted = d.clone();
        for (y, g) in shifted.y.iter_mut().zip(&d.group_ids) {
            *y += shift * (g.len() as f64 + g.bytes().map(f64::from).sum::<f64>() / 100.0);
        }
        let moved = fit_fe_ols(&shifted, SeKind::Cluster).unwrap();
        for (a, b) in coefficients(&base).iter().zip(coefficients(&moved)) {
            prop_assert!(close(a.0, b.0, 1e-8) && close(a.1, b.1, 1e-6));
        }
    }

    #[test]
    fn scaling_y_scales_estimates(seed in 0u64..10_000, a in prop_oneof![-20.0f64..-0.05, 0.05f64..20.0]) {
        let (p, names) = random_panel(seed, 10, 4);
        let d = design_of(&p, &names);
        let Ok(base) = fit_fe_ols(&d, SeKind::Cluster) else { return Ok(()) };
        let mut scaled = d.clone();
        scaled.y.iter_mut().for_each(|y| *y *= a);
        let s = fit_fe_ols(&scaled, SeKind::Cluster).unwrap();
        for (b, c) in base.coefficients.iter().zip(&s.coefficients) {
            prop_assert!(close(c.estimate, a * b.estimate, 1e-8));
            prop_assert!((c.std_error - a.abs() * b.std_error).abs() <= 1e-8 * a.abs() * (1.0 + b.std_error) + 1e-12);
            if let (Some(p1), Some(p2)) = (b.p_value, c.p_value) {
                prop_assert!((p1 - p2).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn row_order_irrelevant(seed in 0u64..10_000, rot in 0usize..50) {
        let (p, names) = random_panel(seed, 10, 4);
        let d = design_of(&p, &names);
        let n = d.n_obs();
        let order: Vec<usize> = (0..n).map(|i| (i * 7 + rot) % n).collect();
        let mut seen = order.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != n {
            return Ok(());
        }
        let permuted = PanelDesign {
            y: order.iter().map(|&i| d.y[i]).collect(),
            columns: d.columns.iter().map(|c| order.iter().map(|&i| c[i]).collect()).collect(),
            column_names: d.column_names.clone(),
            group_ids: order.iter().map(|&i| d.group_ids[i].clone()).collect(),
            cluster_ids: order.iter().map(|&i| d.cluster_ids[i].clone()).collect(),
        };
        match (fit_fe_ols(&d, SeKind::Cluster), fit_fe_ols(&permuted, SeKind::Cluster)) {
            (Ok(a), Ok(b)) => {
                let ses: Vec<f64> = a.coefficients.iter().map(|c| c.std_error).collect();
                for (x, y) in coefficients(&a).iter().zip(coefficients(&b)) {
                    prop_assert!(close(x.0, y.0, 1e-10));
                    prop_assert!(se_close(x.1, y.1, &ses, 1e-9), "se {} vs {}", x.1, y.1);
                }
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn single_precision_tracks_double(seed in 0u64..10_000) {
        let (p, names) = random_panel(seed, 10, 3);
        let d = design_of(&p, &names);
        let Ok(fit) = fit_fe_ols(&d, SeKind::Cluster) else { return Ok(()) };
        let d32 = PanelDesign {
            y: d.y.iter().map(|&v| v as f32).collect(),
            columns: d.columns.iter().map(|c| c.iter().map(|&v| v as f32).collect()).collect(),
            column_names: d.column_names.clone(),
            group_ids: d.group_ids.clone(),
            cluster_ids: d.cluster_ids.clone(),
        };
        let fit32 = fit_fe_ols(&d32, SeKind::Cluster).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&fit32.coefficients) {
            prop_assert!((a.estimate - f64::from(b.estimate)).abs() < 1e-3);
        }
    }
}
