//! Confusion-matrix accuracy metrics, Kruskal-Wallis with Dunn post-hoc
//! comparisons under Holm correction, and half-step rank tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::ops::{Add, AddAssign};

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts with the positive and negative classes exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionCounts::new(self.tn, self.fn_, self.fp, self.tp)
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

pub fn confusion(predicted: &[bool], actual: &[bool]) -> Result<ConfusionCounts> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (p, a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `None` marks a metric whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct AccuracyReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub kappa: Option<f64>,
    pub mcc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Precision,
    Recall,
    F1,
    Kappa,
    Mcc,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Precision, Metric::Recall, Metric::F1, Metric::Kappa, Metric::Mcc];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::Kappa => "kappa",
            Metric::Mcc => "mcc",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl AccuracyReport {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
            Metric::Kappa => self.kappa,
            Metric::Mcc => self.mcc,
        }
    }
}

fn div(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

/// Kappa and MCC use exact integer products so that swapping the classes
/// reproduces the same value bit for bit.
pub fn accuracy_metrics(c: &ConfusionCounts) -> AccuracyReport {
    let (tp, fp, fn_, tn) = (c.tp as u128, c.fp as u128, c.fn_ as u128, c.tn as u128);
    let n = tp + fp + fn_ + tn;
    let precision = div(tp as f64, (tp + fp) as f64);
    let recall = div(tp as f64, (tp + fn_) as f64);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => div(2.0 * p * r, p + r),
        _ => None,
    };

    let kappa = (n > 0)
        .then(|| {
            let n2 = n * n;
            let agree = (tp + tn) * n;
            let chance = (tp + fp) * (tp + fn_) + (tn + fp) * (tn + fn_);
            // (Observed - Expected) / (1 - Expected), scaled by N^2.
            let num = agree as i128 - chance as i128;
            let den = n2 as i128 - chance as i128;
            div(num as f64, den as f64)
        })
        .flatten();

    let mcc = {
        let num = (tp * tn) as i128 - (fp * fn_) as i128;
        // Each factor is unchanged when the positive class is swapped, so
        // the result is bit-identical under `swapped()`.
        let predicted = (tp + fp) * (tn + fn_);
        let observed = (tp + fn_) * (tn + fp);
        let den = (predicted as f64 * observed as f64).sqrt();
        div(num as f64, den)
    };

    AccuracyReport {
        precision,
        recall,
        f1,
        kappa,
        mcc,
    }
}

pub fn format_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |v| v.to_string())
}

/// Midranks of the pooled sample plus the tie groups' sizes.
fn pooled_ranks(groups: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut pooled: Vec<(f64, usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, xs)| xs.iter().enumerate().map(move |(i, x)| (*x, g, i)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks: Vec<Vec<f64>> = groups.iter().map(|g| vec![0.0; g.len()]).collect();
    let mut ties = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        for &(_, g, k) in &pooled[i..j] {
            ranks[g][k] = mid;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

fn tie_sum(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum()
}

fn check_groups(groups: &[Vec<f64>]) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::Invalid("rank tests need at least two groups".into()));
    }
    if groups.iter().any(Vec::is_empty) {
        return Err(Error::Invalid("rank tests need non-empty groups".into()));
    }
    if groups.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("rank tests need finite observations".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub p_value: f64,
    pub df: usize,
}

pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis> {
    check_groups(groups)?;
    let df = groups.len() - 1;
    let n = groups.iter().map(Vec::len).sum::<usize>() as f64;
    let (ranks, ties) = pooled_ranks(groups);
    let correction = 1.0 - tie_sum(&ties) / (n.powi(3) - n);
    if correction <= 0.0 {
        return Ok(KruskalWallis { h: 0.0, p_value: 1.0, df });
    }
    let sum: f64 = ranks
        .iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            s * s / r.len() as f64
        })
        .sum();
    let h = (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction;
    let h = h.max(0.0);
    let chi = ChiSquared::new(df as f64).expect("df >= 1");
    Ok(KruskalWallis {
        h,
        p_value: chi.sf(h),
        df,
    })
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let v = ((m - k) as f64 * p[i]).min(1.0);
        running = running.max(v);
        adjusted[i] = running;
    }
    adjusted
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DunnPair {
    pub i: usize,
    pub j: usize,
    pub z: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
}

/// Dunn's z for every pair `i < j` with the tie-corrected variance, two-sided
/// normal p-values and Holm adjustment over all pairs.
pub fn dunn_posthoc(groups: &[Vec<f64>]) -> Result<Vec<DunnPair>> {
    check_groups(groups)?;
    let n = groups.iter().map(Vec::len).sum::<usize>() as f64;
    let (ranks, ties) = pooled_ranks(groups);
    let means: Vec<f64> = ranks.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let base = n * (n + 1.0) / 12.0 - tie_sum(&ties) / (12.0 * (n - 1.0));
    let normal = Normal::new(0.0, 1.0).expect("standard normal");

    let mut pairs = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let se = (base * (1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64)).sqrt();
            let diff = means[i] - means[j];
            let z = if se > 0.0 { diff / se } else { 0.0 };
            let p_raw = (2.0 * normal.sf(z.abs())).min(1.0);
            pairs.push(DunnPair {
                i,
                j,
                z,
                p_raw,
                p_adjusted: 0.0,
            });
        }
    }
    let adjusted = holm_adjust(&pairs.iter().map(|p| p.p_raw).collect::<Vec<_>>());
    for (pair, adj) in pairs.iter_mut().zip(adjusted) {
        pair.p_adjusted = adj;
    }
    Ok(pairs)
}

/// Symmetric set of significantly different method pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Significance {
    pairs: BTreeSet<(String, String)>,
}

impl Significance {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: &str, b: &str) {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        self.pairs.insert((x.to_owned(), y.to_owned()));
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        self.pairs.contains(&(x.to_owned(), y.to_owned()))
    }

    /// Pairs whose adjusted p-value is below `alpha`; `names[k]` labels group `k`.
    pub fn from_dunn(names: &[String], pairs: &[DunnPair], alpha: f64) -> Self {
        let mut s = Significance::new();
        for p in pairs.iter().filter(|p| p.p_adjusted < alpha) {
            s.insert(&names[p.i], &names[p.j]);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub method: String,
    pub mean: f64,
    pub rank: f64,
    pub comment: String,
}

/// Walks methods by descending mean (input order breaks ties). A method
/// joins the current rank group when it differs from no member; differing
/// from exactly one member of a multi-member group earns a half step and a
/// comment; otherwise it opens the next integer rank.
pub fn rank_methods(means: &[(String, f64)], sig: &Significance) -> Vec<RankRow> {
    let mut order: Vec<&(String, f64)> = means.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut rows = Vec::with_capacity(order.len());
    let mut rank = 1.0;
    let mut group: Vec<&str> = Vec::new();
    for (method, mean) in order {
        let differs: Vec<&str> = group.iter().copied().filter(|g| sig.contains(g, method)).collect();
        let (r, comment) = if group.is_empty() || differs.is_empty() {
            group.push(method);
            (rank, String::new())
        } else if differs.len() == 1 && group.len() > 1 {
            (rank + 0.5, format!("Significantly lower than {}", differs[0]))
        } else {
            rank += 1.0;
            group = vec![method];
            (rank, String::new())
        };
        rows.push(RankRow {
            method: method.clone(),
            mean: *mean,
            rank: r,
            comment,
        });
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub project: String,
    pub method: String,
    pub granularity: String,
    pub counts: ConfusionCounts,
    pub report: AccuracyReport,
}

pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRow]) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "project", "method", "granularity", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "kappa", "mcc",
    ])?;
    for r in rows {
        let c = &r.counts;
        let mut rec = vec![
            r.project.clone(),
            r.method.clone(),
            r.granularity.clone(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
        ];
        rec.extend(Metric::ALL.iter().map(|m| format_metric(r.report.get(*m))));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("metrics", e))?;
    Ok(rows.len())
}

/// Cross-project comparison of methods on one (granularity, metric).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub granularity: String,
    pub metric: Metric,
    pub methods: Vec<String>,
    /// Undefined values dropped per method.
    pub excluded: Vec<usize>,
    pub kruskal: Option<KruskalWallis>,
    pub pairs: Vec<DunnPair>,
    pub ranks: Vec<RankRow>,
}

/// Groups defined per-project metric values by method, runs the tests and
/// ranks the methods. Methods without any defined value are left out.
pub fn compare_methods(rows: &[MetricsRow], granularity: &str, metric: Metric, method_order: &[String]) -> Result<Comparison> {
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut excluded: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.granularity == granularity) {
        match r.report.get(metric) {
            Some(v) => values.entry(r.method.as_str()).or_default().push(v),
            None => *excluded.entry(r.method.as_str()).or_default() += 1,
        }
    }
    let methods: Vec<String> = method_order.iter().filter(|m| values.contains_key(m.as_str())).cloned().collect();
    let groups: Vec<Vec<f64>> = methods.iter().map(|m| values[m.as_str()].clone()).collect();
    let excluded_counts = methods.iter().map(|m| excluded.get(m.as_str()).copied().unwrap_or(0)).collect();
    let means: Vec<(String, f64)> = methods
        .iter()
        .zip(&groups)
        .map(|(m, g)| (m.clone(), g.iter().sum::<f64>() / g.len() as f64))
        .collect();

    let (kruskal, pairs, sig) = if groups.len() >= 2 {
        let kw = kruskal_wallis(&groups)?;
        let pairs = dunn_posthoc(&groups)?;
        let sig = if kw.p_value < ALPHA {
            Significance::from_dunn(&methods, &pairs, ALPHA)
        } else {
            Significance::new()
        };
        (Some(kw), pairs, sig)
    } else {
        (None, Vec::new(), Significance::new())
    };
    Ok(Comparison {
        granularity: granularity.to_owned(),
        metric,
        methods,
        excluded: excluded_counts,
        kruskal,
        pairs,
        ranks: rank_methods(&means, &sig),
    })
}

pub fn write_pairwise<W: Write>(out: W, comparisons: &[Comparison]) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "granularity", "metric", "kw_h", "kw_p", "method_a", "method_b", "z", "p_raw", "p_holm", "significant",
    ])?;
    let mut rows = 0;
    for c in comparisons {
        let (h, p) = c
            .kruskal
            .map_or(("NA".to_owned(), "NA".to_owned()), |k| (k.h.to_string(), k.p_value.to_string()));
        let kw_sig = c.kruskal.is_some_and(|k| k.p_value < ALPHA);
        for d in &c.pairs {
            w.write_record([
                c.granularity.clone(),
                c.metric.to_string(),
                h.clone(),
                p.clone(),
                c.methods[d.i].clone(),
                c.methods[d.j].clone(),
                d.z.to_string(),
                d.p_raw.to_string(),
                d.p_adjusted.to_string(),
                (kw_sig && d.p_adjusted < ALPHA).to_string(),
            ])?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| Error::io("pairwise", e))?;
    Ok(rows)
}

pub fn write_rank_tables<W: Write>(out: W, comparisons: &[Comparison]) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["granularity", "metric", "method", "mean", "rank", "excluded", "comment"])?;
    let mut rows = 0;
    for c in comparisons {
        for r in &c.ranks {
            let k = c.methods.iter().position(|m| *m == r.method).expect("ranked method");
            w.write_record([
                c.granularity.clone(),
                c.metric.to_string(),
                r.method.clone(),
                r.mean.to_string(),
                r.rank.to_string(),
                c.excluded[k].to_string(),
                r.comment.clone(),
            ])?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| Error::io("rank tables", e))?;
    Ok(rows)
}
