//! Correlation-based feature subset selection with exhaustive search, and
//! the accuracy of a method's selection against the ground-truth dataset's.
//!
//! Correlations are Pearson (point-biserial against the defective flag) on
//! raw values rather than symmetric uncertainty over discretized values.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evalstats::ConfusionCounts;
use crate::features::Dataset;

pub const DEFAULT_CATALOG_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationProfile {
    pub names: Vec<String>,
    pub class_corr: Vec<f64>,
    pub feature_corr: Vec<Vec<f64>>,
}

/// Pearson correlation; zero if either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

pub fn correlations(dataset: &Dataset) -> Result<CorrelationProfile> {
    if dataset.rows.len() < 2 {
        return Err(Error::Invalid(format!(
            "{} R={}: correlations need at least two rows",
            dataset.method, dataset.r
        )));
    }
    let k = dataset.feature_names.len();
    // Canonical row order keeps floating-point sums independent of input order.
    let mut rows: Vec<_> = dataset.rows.iter().collect();
    rows.sort_by(|a, b| (a.version, &a.path).cmp(&(b.version, &b.path)));
    let columns: Vec<Vec<f64>> = (0..k).map(|j| rows.iter().map(|r| r.values[j]).collect()).collect();
    let label: Vec<f64> = rows.iter().map(|r| if r.defective { 1.0 } else { 0.0 }).collect();
    let class_corr = columns.iter().map(|c| pearson(c, &label)).collect();
    let mut feature_corr = vec![vec![0.0; k]; k];
    for i in 0..k {
        feature_corr[i][i] = 1.0;
        for j in i + 1..k {
            let r = pearson(&columns[i], &columns[j]);
            feature_corr[i][j] = r;
            feature_corr[j][i] = r;
        }
    }
    Ok(CorrelationProfile {
        names: dataset.feature_names.clone(),
        class_corr,
        feature_corr,
    })
}

/// CFS merit of the features whose bits are set in `mask`.
pub fn mask_merit(mask: u64, profile: &CorrelationProfile) -> f64 {
    let idx: Vec<usize> = (0..profile.names.len()).filter(|i| mask >> i & 1 == 1).collect();
    let k = idx.len();
    if k == 0 {
        return 0.0;
    }
    let rcf: f64 = idx.iter().map(|&i| profile.class_corr[i].abs()).sum();
    let mut rff = 0.0;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            rff += profile.feature_corr[i][j].abs();
        }
    }
    rcf / (k as f64 + 2.0 * rff).sqrt()
}

pub fn cfs_merit(subset: &BTreeSet<String>, profile: &CorrelationProfile) -> Result<f64> {
    let mut mask = 0u64;
    for name in subset {
        let i = profile
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Invalid(format!("unknown feature {name:?}")))?;
        mask |= 1 << i;
    }
    Ok(mask_merit(mask, profile))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub method: String,
    pub r: usize,
    /// Selected features in catalog order.
    pub selected: Vec<String>,
    pub merit: f64,
}

fn sorted_names(mask: u64, names: &[String]) -> Vec<&str> {
    let mut v: Vec<&str> = (0..names.len()).filter(|i| mask >> i & 1 == 1).map(|i| names[i].as_str()).collect();
    v.sort_unstable();
    v
}

/// Higher merit first, then fewer features, then lexicographically smaller names.
fn preference(a: (u64, f64), b: (u64, f64), names: &[String]) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| a.0.count_ones().cmp(&b.0.count_ones()))
        .then_with(|| sorted_names(a.0, names).cmp(&sorted_names(b.0, names)))
}

/// Best subset of a profile under the CFS merit; `None` if every merit is 0.
pub fn best_subset(profile: &CorrelationProfile, limit: usize) -> Result<Option<(u64, f64)>> {
    let k = profile.names.len();
    if k > limit || k >= 64 {
        return Err(Error::Config(format!(
            "{k} features exceed the exhaustive search limit of {limit}; heuristic search is not supported"
        )));
    }
    let best = (1..1u64 << k)
        .into_par_iter()
        .map(|m| (m, mask_merit(m, profile)))
        .min_by(|a, b| preference(*a, *b, &profile.names));
    Ok(best.filter(|(_, merit)| *merit > 0.0))
}

pub fn exhaustive_search(dataset: &Dataset, limit: usize) -> Result<SelectionResult> {
    let profile = correlations(dataset)?;
    let best = best_subset(&profile, limit)?;
    let (selected, merit) = match best {
        Some((mask, merit)) => (
            (0..profile.names.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| profile.names[i].clone())
                .collect(),
            merit,
        ),
        None => (Vec::new(), 0.0),
    };
    Ok(SelectionResult {
        method: dataset.method.clone(),
        r: dataset.r,
        selected,
        merit,
    })
}

pub fn selection_confusion(method_sel: &[String], actual_sel: &[String], catalog_size: usize) -> Result<ConfusionCounts> {
    let m: BTreeSet<&String> = method_sel.iter().collect();
    let a: BTreeSet<&String> = actual_sel.iter().collect();
    let tp = m.intersection(&a).count() as u64;
    let fp = m.difference(&a).count() as u64;
    let fn_ = a.difference(&m).count() as u64;
    let tn = (catalog_size as u64)
        .checked_sub(tp + fp + fn_)
        .ok_or_else(|| Error::Invalid("selected features exceed the catalog".into()))?;
    Ok(ConfusionCounts::new(tp, fp, fn_, tn))
}

/// Fraction of results selecting each catalog feature.
pub fn selection_frequency(results: &[SelectionResult], catalog: &[String]) -> BTreeMap<String, f64> {
    if results.is_empty() {
        return BTreeMap::new();
    }
    catalog
        .iter()
        .map(|f| {
            let hits = results.iter().filter(|r| r.selected.contains(f)).count();
            (f.clone(), hits as f64 / results.len() as f64)
        })
        .collect()
}

pub fn write_selections<W: Write>(out: W, project: &str, results: &[SelectionResult]) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["project", "method", "R", "selected_features", "merit"])?;
    for r in results {
        w.write_record([project, &r.method, &r.r.to_string(), &r.selected.join(";"), &r.merit.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("selections", e))?;
    Ok(results.len())
}

pub fn write_frequencies<W: Write>(out: W, project: &str, method: &str, freq: &BTreeMap<String, f64>) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["project", "method", "feature", "frequency"])?;
    for (f, v) in freq {
        w.write_record([project, method, f, &v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("frequencies", e))?;
    Ok(freq.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureRow;
    use proptest::prelude::*;

    fn dataset(columns: &[(&str, Vec<f64>)], label: &[bool]) -> Dataset {
        Dataset {
            method: "M".into(),
            r: 1,
            feature_names: columns.iter().map(|(n, _)| n.to_string()).collect(),
            rows: label
                .iter()
                .enumerate()
                .map(|(i, d)| FeatureRow {
                    version: 1,
                    path: format!("C{i:02}.java"),
                    values: columns.iter().map(|(_, c)| c[i]).collect(),
                    defective: *d,
                })
                .collect(),
        }
    }

    fn label20() -> Vec<bool> {
        (0..20).map(|i| (i * 7 + 3) % 5 < 2).collect()
    }

    fn direct_r(x: &[f64], y: &[f64]) -> f64 {
        // Single-pass raw-moment formula, independent of the centered one.
        let n = x.len() as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn correlation_conventions() {
        let label = label20();
        let as_num: Vec<f64> = label.iter().map(|d| if *d { 1.0 } else { 0.0 }).collect();
        let noisy: Vec<f64> = (0..20).map(|i| ((i * 37 % 11) as f64) * 0.5 + i as f64 * 0.1).collect();
        let ds = dataset(&[("same", as_num.clone()), ("flat", vec![3.0; 20]), ("noisy", noisy.clone())], &label);
        let p = correlations(&ds).unwrap();
        assert!((p.class_corr[0] - 1.0).abs() < 1e-12);
        assert_eq!(p.class_corr[1], 0.0);
        assert_eq!(p.feature_corr[1][2], 0.0);
        assert_eq!(p.feature_corr[1][1], 1.0);
        assert!((p.class_corr[2] - direct_r(&noisy, &as_num)).abs() < 1e-12);
        assert!((p.feature_corr[0][2] - direct_r(&as_num, &noisy)).abs() < 1e-12);
        assert!(correlations(&dataset(&[("a", vec![1.0])], &[true])).is_err());
    }

    fn profile(class_corr: &[f64], pairs: &[(usize, usize, f64)]) -> CorrelationProfile {
        let k = class_corr.len();
        let mut feature_corr = vec![vec![0.0; k]; k];
        for (i, row) in feature_corr.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for &(i, j, r) in pairs {
            feature_corr[i][j] = r;
            feature_corr[j][i] = r;
        }
        CorrelationProfile {
            names: (0..k).map(|i| format!("f{i}")).collect(),
            class_corr: class_corr.to_vec(),
            feature_corr,
        }
    }

    fn set(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn merit_hand_values() {
        let p = profile(&[0.5, -0.4, 0.3, 0.2], &[(0, 1, 0.2), (0, 2, -0.6), (1, 2, 0.1), (2, 3, 0.5)]);
        assert_eq!(cfs_merit(&set(&["f1"]), &p).unwrap(), 0.4);
        assert!((cfs_merit(&set(&["f0", "f1"]), &p).unwrap() - 0.9 / 2.4f64.sqrt()).abs() < 1e-15);
        assert!((cfs_merit(&set(&["f0", "f1", "f2"]), &p).unwrap() - 1.2 / 4.8f64.sqrt()).abs() < 1e-15);
        assert!((cfs_merit(&set(&["f0", "f1", "f2", "f3"]), &p).unwrap() - 1.4 / 6.8f64.sqrt()).abs() < 1e-15);
        assert_eq!(cfs_merit(&BTreeSet::new(), &p).unwrap(), 0.0);
        let twins = profile(&[0.7, 0.7], &[(0, 1, 1.0)]);
        assert_eq!(cfs_merit(&set(&["f0", "f1"]), &twins).unwrap(), 0.7);
    }

    #[test]
    fn dominant_feature_and_duplicate_tie() {
        let label = label20();
        let as_num: Vec<f64> = label.iter().map(|d| if *d { 1.0 } else { 0.0 }).collect();
        let noise: Vec<f64> = (0..20).map(|i| (i * 13 % 7) as f64).collect();
        let ds = dataset(&[("noise", noise.clone()), ("target", as_num.clone())], &label);
        assert_eq!(exhaustive_search(&ds, 20).unwrap().selected, vec!["target"]);
        let ds = dataset(&[("noise", noise), ("target", as_num.clone()), ("twin", as_num)], &label);
        assert_eq!(exhaustive_search(&ds, 20).unwrap().selected, vec!["target"]);
    }

    #[test]
    fn duplicate_can_enable_a_larger_subset() {
        // A alone beats {A, B}, but {A, A', B} beats A once A' exists.
        let p = profile(&[0.6, 0.6, 0.18], &[(0, 1, 1.0)]);
        let k2 = CorrelationProfile {
            names: vec!["f0".into(), "f2".into()],
            class_corr: vec![0.6, 0.18],
            feature_corr: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        assert_eq!(best_subset(&k2, 20).unwrap(), Some((0b01, 0.6)));
        let (mask, merit) = best_subset(&p, 20).unwrap().unwrap();
        assert_eq!(mask, 0b111);
        assert!((merit - 1.38 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn all_zero_merits_select_nothing() {
        let ds = dataset(&[("flat", vec![1.0; 20])], &label20());
        let r = exhaustive_search(&ds, 20).unwrap();
        assert!(r.selected.is_empty());
        assert_eq!(r.merit, 0.0);
    }

    #[test]
    fn limit_is_enforced() {
        let p = profile(&[0.1; 5], &[]);
        assert!(matches!(best_subset(&p, 4), Err(Error::Config(_))));
    }

    #[test]
    fn selection_confusion_example() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(
            selection_confusion(&s(&["size", "age_weeks"]), &s(&["size", "churn"]), 17).unwrap(),
            ConfusionCounts::new(1, 1, 1, 14)
        );
        assert_eq!(selection_confusion(&s(&["a"]), &s(&["a"]), 3).unwrap(), ConfusionCounts::new(1, 0, 0, 2));
    }

    #[test]
    fn frequency_tally() {
        let r = |sel: &[&str]| SelectionResult { method: "M".into(), r: 1, selected: sel.iter().map(|s| s.to_string()).collect(), merit: 0.5 };
        let results = vec![r(&["a", "b"]), r(&["a"]), r(&["a", "c"]), r(&["b"]), r(&["a"])];
        let catalog: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let f = selection_frequency(&results, &catalog);
        assert_eq!(f["a"], 0.8);
        assert_eq!(f["b"], 0.4);
        assert_eq!(f["c"], 0.2);
        assert_eq!(f["d"], 0.0);
        assert!(selection_frequency(&[], &catalog).is_empty());
    }

    fn brute_force(p: &CorrelationProfile) -> Option<(BTreeSet<String>, f64)> {
        let k = p.names.len();
        let mut best: Option<(BTreeSet<String>, f64)> = None;
        for mask in 1u64..1 << k {
            let subset: BTreeSet<String> = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| p.names[i].clone()).collect();
            let m = cfs_merit(&subset, p).unwrap();
            let better = match &best {
                None => true,
                Some((s, bm)) => m > *bm || (m == *bm && (subset.len() < s.len() || (subset.len() == s.len() && subset < *s))),
            };
            if better {
                best = Some((subset, m));
            }
        }
        best.filter(|(_, m)| *m > 0.0)
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..=6, 4usize..30).prop_flat_map(|(k, n)| {
            (
                prop::collection::vec(prop::collection::vec(0u8..4, n), k),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(cols, label)| {
                    let named: Vec<(String, Vec<f64>)> = cols
                        .into_iter()
                        .enumerate()
                        .map(|(i, c)| (format!("f{i}"), c.into_iter().map(f64::from).collect()))
                        .collect();
                    let refs: Vec<(&str, Vec<f64>)> = named.iter().map(|(n, c)| (n.as_str(), c.clone())).collect();
                    dataset(&refs, &label)
                })
        })
    }

    proptest! {
        #[test]
        fn search_equals_brute_force(ds in arb_dataset()) {
            let p = correlations(&ds).unwrap();
            let got = exhaustive_search(&ds, 20).unwrap();
            match brute_force(&p) {
                Some((s, m)) => {
                    prop_assert_eq!(got.selected.iter().cloned().collect::<BTreeSet<_>>(), s);
                    prop_assert_eq!(got.merit, m);
                }
                None => prop_assert!(got.selected.is_empty()),
            }
        }

        #[test]
        fn row_order_is_irrelevant(ds in arb_dataset(), seed in any::<u64>()) {
            let mut shuffled = ds.clone();
            let n = shuffled.rows.len();
            for i in (1..n).rev() {
                let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 33) as usize % (i + 1);
                shuffled.rows.swap(i, j);
            }
            let a = exhaustive_search(&ds, 20).unwrap();
            let b = exhaustive_search(&shuffled, 20).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn duplicating_a_selected_feature(ds in arb_dataset(), pick in any::<prop::sample::Index>()) {
            let a = exhaustive_search(&ds, 20).unwrap();
            prop_assume!(!a.selected.is_empty());
            let name = a.selected[pick.index(a.selected.len())].clone();
            let j = ds.feature_names.iter().position(|n| *n == name).unwrap();
            let mut dup = ds.clone();
            dup.feature_names.push("zz_dup".into());
            for row in &mut dup.rows {
                let v = row.values[j];
                row.values.push(v);
            }
            let b = exhaustive_search(&dup, 20).unwrap();
            prop_assert!(b.merit >= a.merit);
            // The original and its copy alone tie the singleton and lose on size.
            prop_assert!(b.selected != vec![name.clone(), "zz_dup".to_string()]);
            if a.selected.len() == 1 && ds.feature_names.len() == 1 {
                prop_assert_eq!(b.selected, a.selected);
            }
        }
    }
}
