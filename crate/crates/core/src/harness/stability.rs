//! Sample standard deviation of IV, OV, FV and P within each project and
//! pooled over every project's defects.

use std::io::Write;

use serde::Serialize;

use crate::avlabel::{median, proportion_of_defect};
use crate::error::{Error, Result};
use crate::lifecycle::DefectLifecycle;

pub const POOLED: &str = "ALL";

/// Sample (n - 1) standard deviation; `None` below two values.
pub fn sample_stdv(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Some((ss / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub project: String,
    pub defects: usize,
    pub iv: Option<f64>,
    pub ov: Option<f64>,
    pub fv: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub projects: Vec<StabilityRow>,
    pub pooled: StabilityRow,
    /// Median of the defined within-project STDV(P) values.
    pub median_within_p: Option<f64>,
}

fn row(project: &str, defects: &[&DefectLifecycle]) -> Result<StabilityRow> {
    let mut iv = Vec::new();
    let mut p = Vec::new();
    for d in defects {
        iv.push(d.ground_truth_iv().ok_or_else(|| Error::MissingGroundTruth(d.issue_key.clone()))? as f64);
        p.push(proportion_of_defect(d)?);
    }
    let ov: Vec<f64> = defects.iter().map(|d| d.ov as f64).collect();
    let fv: Vec<f64> = defects.iter().map(|d| d.fv as f64).collect();
    Ok(StabilityRow {
        project: project.to_owned(),
        defects: defects.len(),
        iv: sample_stdv(&iv),
        ov: sample_stdv(&ov),
        fv: sample_stdv(&fv),
        p: sample_stdv(&p),
    })
}

/// `projects` pairs each project id with its available-and-consistent defects.
pub fn stability_report(projects: &[(String, Vec<DefectLifecycle>)]) -> Result<StabilityReport> {
    if projects.iter().all(|(_, d)| d.is_empty()) {
        return Err(Error::Invalid("stability needs at least one project with consistent defects".into()));
    }
    let rows = projects
        .iter()
        .map(|(id, d)| row(id, &d.iter().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&DefectLifecycle> = projects.iter().flat_map(|(_, d)| d).collect();
    let within: Vec<f64> = rows.iter().filter_map(|r| r.p).collect();
    Ok(StabilityReport {
        median_within_p: median(&within),
        pooled: row(POOLED, &all)?,
        projects: rows,
    })
}

pub fn write_stability<W: Write>(out: W, report: &StabilityReport) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["project", "defects", "stdv_iv", "stdv_ov", "stdv_fv", "stdv_p"])?;
    let fmt = crate::evalstats::format_metric;
    for r in report.projects.iter().chain(std::iter::once(&report.pooled)) {
        w.write_record([r.project.clone(), r.defects.to_string(), fmt(r.iv), fmt(r.ov), fmt(r.fv), fmt(r.p)])?;
    }
    w.flush().map_err(|e| Error::io("stability", e))?;
    Ok(report.projects.len() + 1)
}
