//! Test-period evaluation: MAE, fairness gaps, Spearman's rho against the
//! advantaged fraction, and heatmap export.

mod heatmap;
mod spearman;

pub use heatmap::{export_heatmap, gray_levels, heatmap_csv, heatmap_pgm, parse_heatmap_csv};
pub use spearman::{average_ranks, spearman, EXACT_MAX_N};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::{ifg, rfg, FairnessConfig, GroupLabeling};
use crate::ingest::{DemandTensor, DemographicField};

/// Mean absolute error over every (t, row, col).
pub fn mae(pred: &DemandTensor, truth: &DemandTensor) -> Result<f64> {
    if pred.rows != truth.rows || pred.cols != truth.cols || pred.values.len() != truth.values.len()
    {
        return Err(Error::invalid(format!(
            "mae: shapes {}x{}x{} and {}x{}x{} differ",
            pred.t_len(),
            pred.rows,
            pred.cols,
            truth.t_len(),
            truth.rows,
            truth.cols
        )));
    }
    if pred.values.is_empty() {
        return Err(Error::invalid("mae: empty period"));
    }
    let s: f64 = pred
        .values
        .iter()
        .zip(&truth.values)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(s / pred.values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportSource {
    Prediction,
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeResult {
    pub attribute: String,
    pub rfg: f64,
    pub ifg: f64,
    /// `None` when the correlation is undefined (a constant input).
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
}

/// Evaluation of one demand tensor over the test period.
///
/// CSV layout: header `metric,attribute,value,p_value`; first row
/// `mae,,<v>,`, then per attribute in configuration order `rfg`, `ifg` and
/// `rho` rows. Only `rho` carries a p-value; an undefined rho leaves both
/// fields empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub source: ReportSource,
    pub mae: f64,
    pub attributes: Vec<AttributeResult>,
}

const HEADER: &str = "metric,attribute,value,p_value";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn attribute(&self, name: &str) -> Option<&AttributeResult> {
        self.attributes.iter().find(|a| a.attribute == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{HEADER}\nmae,,{},\n", self.mae);
        for a in &self.attributes {
            s.push_str(&format!("rfg,{},{},\n", a.attribute, a.rfg));
            s.push_str(&format!("ifg,{},{},\n", a.attribute, a.ifg));
            s.push_str(&format!(
                "rho,{},{},{}\n",
                a.attribute,
                opt(a.rho),
                opt(a.p_value)
            ));
        }
        s
    }

    /// Parses [`EvalReport::to_csv`] output; `source` is not stored in the file.
    pub fn from_csv(text: &str, source: ReportSource) -> Result<Self> {
        let bad =
            |line: usize, what: &str| Error::invalid(format!("eval report line {line}: {what}"));
        let num = |line: usize, v: &str| -> Result<Option<f64>> {
            if v.is_empty() {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|_| bad(line, "bad number"))
            }
        };
        let mut lines = text.lines().enumerate();
        if lines.next().map(|l| l.1) != Some(HEADER) {
            return Err(bad(1, "bad header"));
        }
        let mut mae = None;
        let mut attributes: Vec<AttributeResult> = Vec::new();
        for (i, line) in lines {
            let ln = i + 1;
            let f: Vec<&str> = line.split(',').collect();
            let [metric, attr, value, p] = f[..] else {
                return Err(bad(ln, "expected 4 fields"));
            };
            if metric == "mae" {
                mae = num(ln, value)?;
                continue;
            }
            if attributes.last().map(|a| a.attribute.as_str()) != Some(attr) {
                attributes.push(AttributeResult {
                    attribute: attr.to_string(),
                    rfg: f64::NAN,
                    ifg: f64::NAN,
                    rho: None,
                    p_value: None,
                });
            }
            let a = attributes.last_mut().expect("just pushed");
            match metric {
                "rfg" => a.rfg = num(ln, value)?.ok_or_else(|| bad(ln, "missing value"))?,
                "ifg" => a.ifg = num(ln, value)?.ok_or_else(|| bad(ln, "missing value"))?,
                "rho" => {
                    a.rho = num(ln, value)?;
                    a.p_value = num(ln, p)?;
                }
                other => return Err(bad(ln, &format!("unknown metric '{other}'"))),
            }
        }
        Ok(Self {
            source,
            mae: mae.ok_or_else(|| bad(1, "no mae row"))?,
            attributes,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Per-cell mean per-capita demand paired with the advantaged fraction,
/// skipping cells whose population share is below `p_min`.
pub fn per_capita_pairs(
    means: &[f64],
    field: &DemographicField,
    attribute: &str,
    p_min: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = field.w_plus(attribute)?;
    let mut z = Vec::new();
    let mut wp = Vec::new();
    for ((&m, &p), &wi) in means.iter().zip(&field.population_share).zip(w) {
        if p >= p_min {
            z.push(m / p);
            wp.push(wi);
        }
    }
    Ok((z, wp))
}

fn report_for(
    demand: &DemandTensor,
    truth: &DemandTensor,
    field: &DemographicField,
    labelings: &BTreeMap<String, GroupLabeling>,
    config: &FairnessConfig,
    source: ReportSource,
) -> Result<EvalReport> {
    let means = demand.mean_frame();
    let mut attributes = Vec::with_capacity(config.attributes.len());
    for a in &config.attributes {
        let labels = labelings.get(&a.name).ok_or_else(|| {
            Error::invalid(format!("no group labeling for attribute '{}'", a.name))
        })?;
        let (z, wp) = per_capita_pairs(&means, field, &a.name, config.p_min)?;
        let (rho, p_value) = match spearman(&z, &wp) {
            Ok((r, p)) => (Some(r), Some(p)),
            Err(Error::UndefinedCorrelation(_)) => (None, None),
            Err(e) => return Err(e),
        };
        attributes.push(AttributeResult {
            attribute: a.name.clone(),
            rfg: rfg(demand, labels, field)?,
            ifg: ifg(demand, field, &a.name, config.p_min)?,
            rho,
            p_value,
        });
    }
    Ok(EvalReport {
        source,
        mae: mae(demand, truth)?,
        attributes,
    })
}

/// Report on `pred`, plus the same report on `truth` when `with_truth`.
pub fn evaluate(
    pred: &DemandTensor,
    truth: &DemandTensor,
    field: &DemographicField,
    labelings: &BTreeMap<String, GroupLabeling>,
    config: &FairnessConfig,
    with_truth: bool,
) -> Result<(EvalReport, Option<EvalReport>)> {
    let main = report_for(
        pred,
        truth,
        field,
        labelings,
        config,
        ReportSource::Prediction,
    )?;
    let gt = if with_truth {
        Some(report_for(
            truth,
            truth,
            field,
            labelings,
            config,
            ReportSource::Truth,
        )?)
    } else {
        None
    };
    Ok((main, gt))
}
