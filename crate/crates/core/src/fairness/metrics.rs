use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GroupLabel, GroupLabeling};
use crate::error::{Error, Result};
use crate::ingest::{DemandTensor, DemographicField};

fn check_len(means: &[f64], field: &DemographicField) -> Result<()> {
    if means.len() != field.n_cells() {
        return Err(Error::invalid(format!(
            "prediction has {} cells, field {}",
            means.len(),
            field.n_cells()
        )));
    }
    Ok(())
}

/// Region-based gap from per-cell period means: per-capita demand of the
/// advantaged regions minus that of the disadvantaged regions. Signed.
pub fn rfg_from_means(
    means: &[f64],
    labels: &GroupLabeling,
    field: &DemographicField,
) -> Result<f64> {
    check_len(means, field)?;
    if labels.labels.len() != means.len() {
        return Err(Error::invalid("labeling does not match grid"));
    }
    let (mut dp, mut pp, mut dm, mut pm) = (0.0, 0.0, 0.0, 0.0);
    let (mut np, mut nm) = (0usize, 0usize);
    for ((&y, &p), l) in means
        .iter()
        .zip(&field.population_share)
        .zip(&labels.labels)
    {
        match l {
            GroupLabel::Advantaged => {
                dp += y;
                pp += p;
                np += 1;
            }
            GroupLabel::Disadvantaged => {
                dm += y;
                pm += p;
                nm += 1;
            }
            GroupLabel::Excluded => {}
        }
    }
    if np == 0 || nm == 0 || !(pp > 0.0) || !(pm > 0.0) {
        return Err(Error::degenerate(format!(
            "attribute '{}': {np} advantaged and {nm} disadvantaged cells",
            labels.attribute
        )));
    }
    Ok(dp / pp - dm / pm)
}

/// Region-based fairness gap of predictions over their whole period.
pub fn rfg(pred: &DemandTensor, labels: &GroupLabeling, field: &DemographicField) -> Result<f64> {
    rfg_from_means(&pred.mean_frame(), labels, field)
}

/// Individual-based gap from per-cell period means: each cell's demand is
/// split between groups by its demographic fractions. Signed.
pub fn ifg_from_means(
    means: &[f64],
    field: &DemographicField,
    attribute: &str,
    p_min: f64,
) -> Result<f64> {
    check_len(means, field)?;
    let w = field.w_plus(attribute)?;
    let (mut dp, mut ap, mut dm, mut am) = (0.0, 0.0, 0.0, 0.0);
    for ((&y, &p), &wp) in means.iter().zip(&field.population_share).zip(w) {
        if p < p_min {
            continue;
        }
        let wm = 1.0 - wp;
        dp += y * wp;
        ap += p * wp;
        dm += y * wm;
        am += p * wm;
    }
    if !(ap > 0.0) || !(am > 0.0) {
        return Err(Error::degenerate(format!(
            "attribute '{attribute}' has no advantaged or no disadvantaged population"
        )));
    }
    Ok(dp / ap - dm / am)
}

/// Individual-based fairness gap of predictions over their whole period.
pub fn ifg(
    pred: &DemandTensor,
    field: &DemographicField,
    attribute: &str,
    p_min: f64,
) -> Result<f64> {
    ifg_from_means(&pred.mean_frame(), field, attribute, p_min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub attribute: String,
    /// `rfg` or `ifg`.
    pub metric: String,
    pub value: f64,
}

/// Signed gaps per attribute over one evaluation period.
///
/// CSV layout: header `attribute,metric,value`, one row per (attribute,
/// metric), attributes in configuration order, `rfg` before `ifg`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
}

impl GapReport {
    pub fn push(&mut self, attribute: &str, rfg: f64, ifg: f64) {
        for (metric, value) in [("rfg", rfg), ("ifg", ifg)] {
            self.rows.push(GapRow {
                attribute: attribute.to_string(),
                metric: metric.to_string(),
                value,
            });
        }
    }

    pub fn get(&self, attribute: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.attribute == attribute && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("attribute,metric,value\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.attribute, r.metric, r.value));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("attribute,metric,value") {
            return Err(Error::invalid("gap report: bad header"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split(',').collect();
            let [attribute, metric, value] = parts[..] else {
                return Err(Error::invalid(format!(
                    "gap report line {}: expected 3 fields",
                    i + 2
                )));
            };
            let value = value
                .parse()
                .map_err(|_| Error::invalid(format!("gap report line {}: bad value", i + 2)))?;
            rows.push(GapRow {
                attribute: attribute.into(),
                metric: metric.into(),
                value,
            });
        }
        Ok(Self { rows })
    }
}

pub fn read_gap_report_csv(path: &Path) -> Result<GapReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GapReport::from_csv(&text)
}
