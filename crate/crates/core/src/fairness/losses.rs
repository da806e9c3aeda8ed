use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{FairnessConfig, GroupLabel, GroupLabeling};
use crate::error::{Error, Result};
use crate::ingest::DemographicField;
use crate::tensor::ScalarObjective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    /// Region-based fairness.
    Rf,
    /// Individual-based fairness.
    If,
    /// Equal means of per-capita predictions.
    Em,
    /// Similarity-weighted cross-pair penalty.
    Pw,
    None,
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rf" => Ok(Self::Rf),
            "if" => Ok(Self::If),
            "em" => Ok(Self::Em),
            "pw" | "pairwise" => Ok(Self::Pw),
            "none" => Ok(Self::None),
            other => Err(Error::invalid(format!("unknown regularizer '{other}'"))),
        }
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rf => "rf",
            Self::If => "if",
            Self::Em => "em",
            Self::Pw => "pw",
            Self::None => "none",
        })
    }
}

/// One frame's fairness loss, fixed by the truth frame and the groups.
///
/// Every regularizer here is a function of a gap that is linear in the
/// prediction, `gap = coeffs . pred`, so the loss is either
/// `|gap| / norm` or `(gap / norm)^2` with `norm = max(sum(truth), y_min)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLoss {
    pub coeffs: Vec<f64>,
    pub norm: f64,
    pub squared: bool,
}

impl FrameLoss {
    fn new(coeffs: Vec<f64>, truth: &[f64], y_min: f64, squared: bool) -> Self {
        let total: f64 = truth.iter().sum();
        Self {
            coeffs,
            norm: total.max(y_min),
            squared,
        }
    }

    /// Region-based loss: per-capita demand gap between the two groups.
    pub fn rf(
        truth: &[f64],
        labels: &GroupLabeling,
        field: &DemographicField,
        y_min: f64,
    ) -> Result<Self> {
        check_frame(truth, field, y_min)?;
        let (pp, pm) = group_mass(labels, field)?;
        let coeffs = labels
            .labels
            .iter()
            .map(|l| match l {
                GroupLabel::Advantaged => 1.0 / pp,
                GroupLabel::Disadvantaged => -1.0 / pm,
                GroupLabel::Excluded => 0.0,
            })
            .collect();
        Ok(Self::new(coeffs, truth, y_min, false))
    }

    /// Individual-based loss: demand split by demographic fractions.
    pub fn if_(
        truth: &[f64],
        field: &DemographicField,
        attribute: &str,
        p_min: f64,
        y_min: f64,
    ) -> Result<Self> {
        check_frame(truth, field, y_min)?;
        let w = field.w_plus(attribute)?;
        let included = |p: f64| p >= p_min;
        let (mut ap, mut am) = (0.0, 0.0);
        for (&p, &wp) in field.population_share.iter().zip(w) {
            if included(p) {
                ap += p * wp;
                am += p * (1.0 - wp);
            }
        }
        if !(ap > 0.0) || !(am > 0.0) {
            return Err(Error::degenerate(format!(
                "attribute '{attribute}' has no advantaged or no disadvantaged population"
            )));
        }
        let coeffs = field
            .population_share
            .iter()
            .zip(w)
            .map(|(&p, &wp)| {
                if included(p) {
                    wp / ap - (1.0 - wp) / am
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self::new(coeffs, truth, y_min, false))
    }

    /// Equal means of per-capita predictions `pred_i / p_i`.
    pub fn em(
        truth: &[f64],
        labels: &GroupLabeling,
        field: &DemographicField,
        y_min: f64,
    ) -> Result<Self> {
        check_frame(truth, field, y_min)?;
        group_mass(labels, field)?;
        let np = labels.count(GroupLabel::Advantaged) as f64;
        let nm = labels.count(GroupLabel::Disadvantaged) as f64;
        let coeffs = labels
            .labels
            .iter()
            .zip(&field.population_share)
            .map(|(l, &p)| match l {
                GroupLabel::Advantaged => 1.0 / (np * p),
                GroupLabel::Disadvantaged => -1.0 / (nm * p),
                GroupLabel::Excluded => 0.0,
            })
            .collect();
        Ok(Self::new(coeffs, truth, y_min, false))
    }

    /// Cross-pair penalty: mean over advantaged/disadvantaged pairs of
    /// `exp(-(z_i - z_j)^2) * (zhat_i - zhat_j)`, normalized then squared.
    /// The similarity uses true per-capita demand, so the gap stays linear.
    pub fn pairwise(
        truth: &[f64],
        labels: &GroupLabeling,
        field: &DemographicField,
        y_min: f64,
    ) -> Result<Self> {
        check_frame(truth, field, y_min)?;
        group_mass(labels, field)?;
        let p = &field.population_share;
        let idx = |want: GroupLabel| -> Vec<usize> {
            (0..labels.labels.len())
                .filter(|&i| labels.labels[i] == want)
                .collect()
        };
        let plus = idx(GroupLabel::Advantaged);
        let minus = idx(GroupLabel::Disadvantaged);
        let pairs = (plus.len() * minus.len()) as f64;
        let z: Vec<f64> = truth.iter().zip(p).map(|(&y, &pi)| y / pi).collect();
        let mut coeffs = vec![0.0; truth.len()];
        for &i in &plus {
            for &j in &minus {
                let d = (-(z[i] - z[j]).powi(2)).exp() / pairs;
                coeffs[i] += d / p[i];
                coeffs[j] -= d / p[j];
            }
        }
        Ok(Self::new(coeffs, truth, y_min, true))
    }

    /// Signed gap before normalization.
    pub fn signed_gap(&self, pred: &[f64]) -> f64 {
        self.coeffs.iter().zip(pred).map(|(c, y)| c * y).sum()
    }

    pub fn value(&self, pred: &[f64]) -> f64 {
        let g = self.signed_gap(pred) / self.norm;
        if self.squared {
            g * g
        } else {
            g.abs()
        }
    }

    /// Value and gradient; the absolute value has subgradient 0 at 0.
    pub fn value_and_grad(&self, pred: &[f64]) -> (f64, Vec<f64>) {
        let g = self.signed_gap(pred) / self.norm;
        let (value, dg) = if self.squared {
            (g * g, 2.0 * g)
        } else {
            let s = if g > 0.0 {
                1.0
            } else if g < 0.0 {
                -1.0
            } else {
                0.0
            };
            (g.abs(), s)
        };
        let k = dg / self.norm;
        (value, self.coeffs.iter().map(|c| c * k).collect())
    }
}

fn check_frame(truth: &[f64], field: &DemographicField, y_min: f64) -> Result<()> {
    if truth.len() != field.n_cells() {
        return Err(Error::invalid(format!(
            "frame has {} cells, field {}",
            truth.len(),
            field.n_cells()
        )));
    }
    if !(y_min > 0.0) {
        return Err(Error::invalid("y_min must be positive"));
    }
    Ok(())
}

/// Population mass of (advantaged, disadvantaged); errors on an empty group.
fn group_mass(labels: &GroupLabeling, field: &DemographicField) -> Result<(f64, f64)> {
    if labels.labels.len() != field.n_cells() {
        return Err(Error::invalid("labeling does not match grid"));
    }
    let (mut pp, mut pm) = (0.0, 0.0);
    for (l, &p) in labels.labels.iter().zip(&field.population_share) {
        match l {
            GroupLabel::Advantaged => pp += p,
            GroupLabel::Disadvantaged => pm += p,
            GroupLabel::Excluded => {}
        }
    }
    if !(pp > 0.0) || !(pm > 0.0) {
        return Err(Error::degenerate(format!(
            "attribute '{}': {} advantaged and {} disadvantaged cells",
            labels.attribute,
            labels.count(GroupLabel::Advantaged),
            labels.count(GroupLabel::Disadvantaged)
        )));
    }
    Ok((pp, pm))
}

pub fn rf_loss(
    pred: &[f64],
    truth: &[f64],
    labels: &GroupLabeling,
    field: &DemographicField,
    y_min: f64,
) -> Result<f64> {
    Ok(FrameLoss::rf(truth, labels, field, y_min)?.value(pred))
}

pub fn if_loss(
    pred: &[f64],
    truth: &[f64],
    field: &DemographicField,
    attribute: &str,
    p_min: f64,
    y_min: f64,
) -> Result<f64> {
    Ok(FrameLoss::if_(truth, field, attribute, p_min, y_min)?.value(pred))
}

pub fn em_loss(
    pred: &[f64],
    truth: &[f64],
    labels: &GroupLabeling,
    field: &DemographicField,
    y_min: f64,
) -> Result<f64> {
    Ok(FrameLoss::em(truth, labels, field, y_min)?.value(pred))
}

pub fn pairwise_loss(
    pred: &[f64],
    truth: &[f64],
    labels: &GroupLabeling,
    field: &DemographicField,
    y_min: f64,
) -> Result<f64> {
    Ok(FrameLoss::pairwise(truth, labels, field, y_min)?.value(pred))
}

/// Weighted sum of per-attribute frame losses for one truth frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompositeLoss {
    pub terms: Vec<(String, f64, FrameLoss)>,
}

impl CompositeLoss {
    pub fn new(
        truth: &[f64],
        config: &FairnessConfig,
        field: &DemographicField,
        labelings: &BTreeMap<String, GroupLabeling>,
    ) -> Result<Self> {
        if config.kind == RegularizerKind::None {
            return Ok(Self::default());
        }
        if config.attributes.is_empty() {
            return Err(Error::invalid(
                "fairness regularizer needs at least one attribute",
            ));
        }
        let labeling = |name: &str| {
            labelings
                .get(name)
                .ok_or_else(|| Error::invalid(format!("no group labeling for attribute '{name}'")))
        };
        let mut terms = Vec::with_capacity(config.attributes.len());
        for a in &config.attributes {
            let loss = match config.kind {
                RegularizerKind::Rf => {
                    FrameLoss::rf(truth, labeling(&a.name)?, field, config.y_min)?
                }
                RegularizerKind::If => {
                    FrameLoss::if_(truth, field, &a.name, config.p_min, config.y_min)?
                }
                RegularizerKind::Em => {
                    FrameLoss::em(truth, labeling(&a.name)?, field, config.y_min)?
                }
                RegularizerKind::Pw => {
                    FrameLoss::pairwise(truth, labeling(&a.name)?, field, config.y_min)?
                }
                RegularizerKind::None => unreachable!(),
            };
            terms.push((a.name.clone(), a.weight, loss));
        }
        Ok(Self { terms })
    }

    pub fn value(&self, pred: &[f64]) -> f64 {
        self.terms.iter().map(|(_, w, l)| w * l.value(pred)).sum()
    }
}

impl ScalarObjective for CompositeLoss {
    fn value_and_grad(&self, pred: &[f64]) -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut grad = vec![0.0; pred.len()];
        for (_, w, l) in &self.terms {
            if *w == 0.0 {
                continue;
            }
            let (v, g) = l.value_and_grad(pred);
            value += w * v;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += w * b;
            }
        }
        (value, grad)
    }
}

/// `sum_a weight_a * loss_a` for one frame, loss kind per `config`.
pub fn composite_loss(
    pred: &[f64],
    truth: &[f64],
    config: &FairnessConfig,
    field: &DemographicField,
    labelings: &BTreeMap<String, GroupLabeling>,
) -> Result<f64> {
    Ok(CompositeLoss::new(truth, config, field, labelings)?.value(pred))
}
