//! Affected-version labeling: Simple, the three Proportion estimators, the
//! SZZ-derived methods, their unions with Simple, and the developer-provided
//! ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lifecycle::DefectLifecycle;
use crate::szz::SzzSource;

/// The cross-project median proportion used when no corpus is available.
pub const DEFAULT_COLDSTART_P: f64 = 1.8089;

/// Increment estimates averaging fewer defects fall back to ColdStart.
pub const MIN_INCREMENT_SUPPORT: usize = 5;

/// Share of a project's fixed defects averaged by MovingWindow.
pub const WINDOW_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Simple,
    ProportionColdStart,
    ProportionIncrement,
    ProportionMovingWindow,
    SzzB,
    SzzU,
    SzzRa,
    SzzBPlus,
    SzzUPlus,
    SzzRaPlus,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Simple,
        Method::ProportionColdStart,
        Method::ProportionIncrement,
        Method::ProportionMovingWindow,
        Method::SzzB,
        Method::SzzU,
        Method::SzzRa,
        Method::SzzBPlus,
        Method::SzzUPlus,
        Method::SzzRaPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Simple => "Simple",
            Method::ProportionColdStart => "Proportion_ColdStart",
            Method::ProportionIncrement => "Proportion_Increment",
            Method::ProportionMovingWindow => "Proportion_MovingWindow",
            Method::SzzB => "SZZ_B",
            Method::SzzU => "SZZ_U",
            Method::SzzRa => "SZZ_RA",
            Method::SzzBPlus => "SZZ_B+",
            Method::SzzUPlus => "SZZ_U+",
            Method::SzzRaPlus => "SZZ_RA+",
        }
    }

    /// The SZZ variant a method draws on, if any.
    pub fn szz_source(self) -> Option<SzzSource> {
        match self {
            Method::SzzB | Method::SzzBPlus => Some(SzzSource::Basic),
            Method::SzzU | Method::SzzUPlus => Some(SzzSource::ImportedU),
            Method::SzzRa | Method::SzzRaPlus => Some(SzzSource::ImportedRa),
            _ => None,
        }
    }

    pub fn is_plus(self) -> bool {
        matches!(self, Method::SzzBPlus | Method::SzzUPlus | Method::SzzRaPlus)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProportionSource {
    ColdStart,
    /// A fixed ColdStart value supplied by configuration instead of a corpus.
    ConfiguredColdStart,
    Increment,
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProportionEstimate {
    pub value: f64,
    pub source: ProportionSource,
    pub support: usize,
}

impl ProportionEstimate {
    pub fn configured(value: f64) -> Self {
        ProportionEstimate {
            value,
            source: ProportionSource::ConfiguredColdStart,
            support: 0,
        }
    }
}

/// `(FV - IV) / (FV - OV)` with the denominator clamped to at least one.
pub fn proportion_of_defect(defect: &DefectLifecycle) -> Result<f64> {
    let iv = defect
        .ground_truth_iv()
        .ok_or_else(|| Error::MissingGroundTruth(defect.issue_key.clone()))?;
    let num = defect.fv as f64 - iv as f64;
    let den = (defect.fv as f64 - defect.ov as f64).max(1.0);
    Ok(num / den)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Median of the per-project mean proportions of every project except `target`.
pub fn coldstart_p(per_project_means: &BTreeMap<String, f64>, target: &str) -> Result<ProportionEstimate> {
    let others: Vec<f64> = per_project_means
        .iter()
        .filter(|(p, _)| p.as_str() != target)
        .map(|(_, v)| *v)
        .collect();
    let value = median(&others).ok_or_else(|| Error::ColdStartUnavailable(target.to_owned()))?;
    Ok(ProportionEstimate {
        value,
        source: ProportionSource::ColdStart,
        support: others.len(),
    })
}

/// Mean proportion of the defects fixed before the current release, or
/// `fallback` when fewer than five are available.
pub fn increment_p(prior_proportions: &[f64], fallback: ProportionEstimate) -> ProportionEstimate {
    if prior_proportions.len() < MIN_INCREMENT_SUPPORT {
        return fallback;
    }
    ProportionEstimate {
        value: mean(prior_proportions).expect("non-empty"),
        source: ProportionSource::Increment,
        support: prior_proportions.len(),
    }
}

pub fn window_size(total_fixed: usize) -> usize {
    ((WINDOW_FRACTION * total_fixed as f64).ceil() as usize).max(1)
}

/// Mean proportion of the last `window_size(total_fixed)` defects of
/// `ordered_priors` (ascending fix date), or `fallback` if there are fewer.
pub fn window_p(ordered_priors: &[f64], total_fixed: usize, fallback: ProportionEstimate) -> ProportionEstimate {
    let w = window_size(total_fixed);
    if ordered_priors.len() < w {
        return fallback;
    }
    let tail = &ordered_priors[ordered_priors.len() - w..];
    ProportionEstimate {
        value: mean(tail).expect("window is non-empty"),
        source: ProportionSource::Window,
        support: w,
    }
}

/// `FV - max(FV - OV, 1) * P`; may be fractional and may fall below 1.
pub fn estimate_iv(fv: usize, ov: usize, p: f64) -> f64 {
    let span = (fv as f64 - ov as f64).max(1.0);
    fv as f64 - span * p
}

/// Affected flags for versions `1..=fv` (element `v - 1` is version `v`):
/// affected iff `iv <= v < fv`.
pub fn label_versions(iv: f64, fv: usize) -> Vec<bool> {
    (1..=fv).map(|v| v as f64 >= iv && v < fv).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffectedLabeling {
    pub issue_key: String,
    pub method: Option<Method>,
    /// IV the labeling was derived from; `None` for an empty SZZ set.
    pub iv: Option<f64>,
    pub affected: Vec<bool>,
}

impl AffectedLabeling {
    pub fn is_ground_truth(&self) -> bool {
        self.method.is_none()
    }

    pub fn method_name(&self) -> &'static str {
        self.method.map_or("Actual", Method::name)
    }

    pub fn affected_versions(&self) -> impl Iterator<Item = usize> + '_ {
        self.affected
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| i + 1)
    }
}

pub fn simple_labeling(defect: &DefectLifecycle) -> AffectedLabeling {
    AffectedLabeling {
        issue_key: defect.issue_key.clone(),
        method: Some(Method::Simple),
        iv: Some(defect.ov as f64),
        affected: label_versions(defect.ov as f64, defect.fv),
    }
}

pub fn proportion_labeling(defect: &DefectLifecycle, method: Method, p: f64) -> AffectedLabeling {
    let iv = estimate_iv(defect.fv, defect.ov, p);
    AffectedLabeling {
        issue_key: defect.issue_key.clone(),
        method: Some(method),
        iv: Some(iv),
        affected: label_versions(iv, defect.fv),
    }
}

/// `szz_iv == None` (nothing blamed) labels every version not affected.
pub fn szz_labeling(defect: &DefectLifecycle, method: Method, szz_iv: Option<usize>) -> AffectedLabeling {
    let affected = match szz_iv {
        Some(iv) => label_versions(iv as f64, defect.fv),
        None => vec![false; defect.fv],
    };
    AffectedLabeling {
        issue_key: defect.issue_key.clone(),
        method: Some(method),
        iv: szz_iv.map(|v| v as f64),
        affected,
    }
}

/// Element-wise OR of an SZZ labeling with Simple.
pub fn merge_plus(szz: &AffectedLabeling, simple: &AffectedLabeling) -> Result<AffectedLabeling> {
    if szz.affected.len() != simple.affected.len() {
        return Err(Error::LengthMismatch {
            left: szz.affected.len(),
            right: simple.affected.len(),
        });
    }
    let method = match szz.method {
        Some(Method::SzzB) => Some(Method::SzzBPlus),
        Some(Method::SzzU) => Some(Method::SzzUPlus),
        Some(Method::SzzRa) => Some(Method::SzzRaPlus),
        other => other,
    };
    Ok(AffectedLabeling {
        issue_key: szz.issue_key.clone(),
        method,
        iv: match (szz.iv, simple.iv) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        },
        affected: szz
            .affected
            .iter()
            .zip(&simple.affected)
            .map(|(a, b)| *a || *b)
            .collect(),
    })
}

pub fn ground_truth_labeling(defect: &DefectLifecycle) -> Result<AffectedLabeling> {
    let iv = defect
        .ground_truth_iv()
        .filter(|iv| *iv <= defect.ov)
        .ok_or_else(|| Error::MissingGroundTruth(defect.issue_key.clone()))?;
    Ok(AffectedLabeling {
        issue_key: defect.issue_key.clone(),
        method: None,
        iv: Some(iv as f64),
        affected: label_versions(iv as f64, defect.fv),
    })
}

/// Per-defect proportion estimates of one project.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectEstimates {
    pub coldstart: ProportionEstimate,
    pub increment: BTreeMap<String, ProportionEstimate>,
    pub window: BTreeMap<String, ProportionEstimate>,
}

/// Orders defects by fix date (ties by key).
pub fn fix_order(defects: &[DefectLifecycle]) -> Vec<&DefectLifecycle> {
    let mut ordered: Vec<&DefectLifecycle> = defects.iter().collect();
    ordered.sort_by(|a, b| a.fix_time.cmp(&b.fix_time).then_with(|| a.issue_key.cmp(&b.issue_key)));
    ordered
}

/// Runs the Increment and MovingWindow estimators over a project's
/// available-and-consistent defects. Only defects fixed strictly earlier
/// (by release for Increment, by fix time for MovingWindow) contribute.
pub fn estimate_project(defects: &[DefectLifecycle], coldstart: ProportionEstimate) -> Result<ProjectEstimates> {
    let ordered = fix_order(defects);
    let props: Vec<f64> = ordered
        .iter()
        .map(|d| proportion_of_defect(d))
        .collect::<Result<_>>()?;
    let total = ordered.len();

    let mut increment = BTreeMap::new();
    let mut window = BTreeMap::new();
    for (i, d) in ordered.iter().enumerate() {
        let before_release: Vec<f64> = ordered
            .iter()
            .zip(&props)
            .filter(|(o, _)| o.fv < d.fv)
            .map(|(_, p)| *p)
            .collect();
        increment.insert(d.issue_key.clone(), increment_p(&before_release, coldstart));

        let earlier = ordered[..i].iter().take_while(|o| o.fix_time < d.fix_time).count();
        window.insert(d.issue_key.clone(), window_p(&props[..earlier], total, coldstart));
    }
    Ok(ProjectEstimates {
        coldstart,
        increment,
        window,
    })
}

/// Mean proportion of a project's defects, the per-project input to ColdStart.
pub fn project_mean_p(defects: &[DefectLifecycle]) -> Result<Option<f64>> {
    let props: Vec<f64> = defects.iter().map(proportion_of_defect).collect::<Result<_>>()?;
    Ok(mean(&props))
}

/// Labels every defect with every requested method. `szz_ivs` maps each SZZ
/// source to the per-defect SZZ IV (`None` for an empty introducing set);
/// defects absent from a source's map are treated as empty sets.
pub fn label_defects(
    defects: &[DefectLifecycle],
    methods: &[Method],
    estimates: &ProjectEstimates,
    szz_ivs: &BTreeMap<SzzSource, BTreeMap<String, Option<usize>>>,
) -> Result<Vec<AffectedLabeling>> {
    let mut out = Vec::with_capacity(defects.len() * methods.len());
    for d in defects {
        let simple = simple_labeling(d);
        for &m in methods {
            let labeling = match m {
                Method::Simple => simple.clone(),
                Method::ProportionColdStart => proportion_labeling(d, m, estimates.coldstart.value),
                Method::ProportionIncrement => proportion_labeling(d, m, estimates.increment[&d.issue_key].value),
                Method::ProportionMovingWindow => proportion_labeling(d, m, estimates.window[&d.issue_key].value),
                Method::SzzB | Method::SzzU | Method::SzzRa | Method::SzzBPlus | Method::SzzUPlus | Method::SzzRaPlus => {
                    let source = m.szz_source().expect("szz method");
                    let iv = szz_ivs.get(&source).and_then(|s| s.get(&d.issue_key)).copied().flatten();
                    let base = match m {
                        Method::SzzBPlus => Method::SzzB,
                        Method::SzzUPlus => Method::SzzU,
                        Method::SzzRaPlus => Method::SzzRa,
                        other => other,
                    };
                    let szz = szz_labeling(d, base, iv);
                    if m.is_plus() {
                        merge_plus(&szz, &simple)?
                    } else {
                        szz
                    }
                }
            };
            out.push(labeling);
        }
    }
    Ok(out)
}
