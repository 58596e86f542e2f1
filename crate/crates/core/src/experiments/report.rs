//! Aggregates over replication records.

use std::io::{Read, Write};

use serde::Serialize;

use super::{ReplicationRecord, TRUTH_COVARIATES};
use crate::error::{Error, Result};
use crate::stats::mean_sd;

pub fn write_records_csv<W: Write>(records: &[ReplicationRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<records>", e))?;
    Ok(())
}

pub fn read_records_csv<R: Read>(r: R) -> Result<Vec<ReplicationRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HitTable {
    pub x1: usize,
    pub x2: usize,
    pub both: usize,
    pub reps: usize,
}

/// Replications whose accepted tree references x1, x2, or both.
pub fn hit_table(records: &[ReplicationRecord]) -> HitTable {
    let mut t = HitTable {
        x1: 0,
        x2: 0,
        both: 0,
        reps: records.len(),
    };
    for r in records.iter().filter(|r| r.is_accepted()) {
        let cov = r.covariate_list();
        let h1 = cov.contains(&TRUTH_COVARIATES[0]);
        let h2 = cov.contains(&TRUTH_COVARIATES[1]);
        t.x1 += usize::from(h1);
        t.x2 += usize::from(h2);
        t.both += usize::from(h1 && h2);
    }
    t
}

/// Counts of reported covariate-set sizes in bins 0, 1, 2, 3, 4 and 5+.
pub fn covariate_count_distribution(records: &[ReplicationRecord]) -> [usize; 6] {
    let mut bins = [0; 6];
    for r in records {
        bins[r.covariate_list().len().min(5)] += 1;
    }
    bins
}

/// Right-continuous empirical CDF at each distinct observed value.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = f,
            _ => out.push((x, f)),
        }
    }
    out
}

pub fn ecdf_at(values: &[f64], t: f64) -> f64 {
    values.iter().filter(|&&v| v <= t).count() as f64 / values.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdError {
    pub x1_mean: f64,
    pub x1_sd: f64,
    pub x2_mean: f64,
    pub x2_sd: f64,
}

/// Mean and SD of the squared lower threshold per truth covariate. A run
/// contributes 1 when it was not accepted, when its region has no lower
/// bound on the covariate, or when the bound exceeds 1 in magnitude.
pub fn threshold_error(records: &[ReplicationRecord]) -> ThresholdError {
    let sq = |t: Option<f64>, accepted: bool| match t {
        Some(t) if accepted && t.abs() <= 1.0 => t * t,
        _ => 1.0,
    };
    let e1: Vec<f64> = records.iter().map(|r| sq(r.lower_x1, r.is_accepted())).collect();
    let e2: Vec<f64> = records.iter().map(|r| sq(r.lower_x2, r.is_accepted())).collect();
    let (x1_mean, x1_sd) = mean_sd(&e1);
    let (x2_mean, x2_sd) = mean_sd(&e2);
    ThresholdError {
        x1_mean,
        x1_sd,
        x2_mean,
        x2_sd,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionStats {
    pub runs: usize,
    pub size_mean: f64,
    pub size_sd: f64,
    pub med_prop_mean: f64,
    pub med_prop_sd: f64,
}

fn region_stats(sizes: &[f64], props: &[f64]) -> Option<RegionStats> {
    if sizes.is_empty() {
        return None;
    }
    let (size_mean, size_sd) = mean_sd(sizes);
    let (med_prop_mean, med_prop_sd) = mean_sd(props);
    Some(RegionStats {
        runs: sizes.len(),
        size_mean,
        size_sd,
        med_prop_mean,
        med_prop_sd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionComparison {
    pub truth: Option<RegionStats>,
    /// Accepted runs only; `None` when every run was rejected.
    pub selected: Option<RegionStats>,
}

pub fn region_comparison(records: &[ReplicationRecord]) -> RegionComparison {
    let t_sizes: Vec<f64> = records.iter().map(|r| r.truth_size as f64).collect();
    let t_props: Vec<f64> = records.iter().filter_map(|r| r.truth_med_prop).collect();
    let acc: Vec<&ReplicationRecord> = records
        .iter()
        .filter(|r| r.is_accepted() && r.selected_size.is_some())
        .collect();
    let s_sizes: Vec<f64> = acc.iter().filter_map(|r| r.selected_size).map(|s| s as f64).collect();
    let s_props: Vec<f64> = acc.iter().filter_map(|r| r.selected_med_prop).collect();
    RegionComparison {
        truth: region_stats(&t_sizes, &t_props),
        selected: region_stats(&s_sizes, &s_props),
    }
}

/// Summary table as `metric,value` CSV rows.
pub fn write_summary_csv<W: Write>(records: &[ReplicationRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "value"])?;
    let mut row = |k: &str, v: String| out.write_record([k, v.as_str()]);
    let accepted = records.iter().filter(|r| r.is_accepted()).count();
    row("replications", records.len().to_string())?;
    row("accepted", accepted.to_string())?;
    let h = hit_table(records);
    row("hit_x1", h.x1.to_string())?;
    row("hit_x2", h.x2.to_string())?;
    row("hit_both", h.both.to_string())?;
    for (i, c) in covariate_count_distribution(records).iter().enumerate() {
        let key = if i == 5 { "covariates_5plus".to_string() } else { format!("covariates_{i}") };
        row(&key, c.to_string())?;
    }
    let te = threshold_error(records);
    row("threshold_error_x1_mean", te.x1_mean.to_string())?;
    row("threshold_error_x1_sd", te.x1_sd.to_string())?;
    row("threshold_error_x2_mean", te.x2_mean.to_string())?;
    row("threshold_error_x2_sd", te.x2_sd.to_string())?;
    let rc = region_comparison(records);
    for (name, stats) in [("truth", rc.truth), ("selected", rc.selected)] {
        if let Some(s) = stats {
            row(&format!("{name}_region_runs"), s.runs.to_string())?;
            row(&format!("{name}_region_size_mean"), s.size_mean.to_string())?;
            row(&format!("{name}_region_size_sd"), s.size_sd.to_string())?;
            if s.med_prop_mean.is_finite() {
                row(&format!("{name}_med_prop_mean"), s.med_prop_mean.to_string())?;
                row(&format!("{name}_med_prop_sd"), s.med_prop_sd.to_string())?;
            }
        }
    }
    out.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

pub fn write_ecdf_csv<W: Write>(values: &[f64], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["p_leaf", "ecdf"])?;
    for (p, f) in ecdf(values) {
        out.write_record([p.to_string(), f.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<ecdf>", e))?;
    Ok(())
}
