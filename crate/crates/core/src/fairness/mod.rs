//! Group construction, per-capita fairness gaps and fairness losses.
//!
//! Conventions shared by everything here:
//!
//! - cells whose population share is below `p_min` are excluded from every
//!   sum (per-capita demand is undefined there);
//! - a cell is advantaged iff its advantaged fraction is strictly above the
//!   threshold, so ties are labeled disadvantaged;
//! - per-frame losses divide by `max(sum of true demand, y_min)`.

mod losses;
mod metrics;

pub use losses::{
    composite_loss, em_loss, if_loss, pairwise_loss, rf_loss, CompositeLoss, FrameLoss,
    RegularizerKind,
};
pub use metrics::{
    ifg, ifg_from_means, read_gap_report_csv, rfg, rfg_from_means, GapReport, GapRow,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DemographicField;

pub const DEFAULT_P_MIN: f64 = 1e-9;
pub const DEFAULT_Y_MIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupLabel {
    Advantaged,
    Disadvantaged,
    Excluded,
}

/// Binary partition of the grid cells for one sensitive attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLabeling {
    pub attribute: String,
    pub threshold: f64,
    pub labels: Vec<GroupLabel>,
}

impl GroupLabeling {
    pub fn count(&self, label: GroupLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Same cells with advantaged and disadvantaged swapped.
    pub fn swapped(&self) -> Self {
        let labels = self
            .labels
            .iter()
            .map(|l| match l {
                GroupLabel::Advantaged => GroupLabel::Disadvantaged,
                GroupLabel::Disadvantaged => GroupLabel::Advantaged,
                GroupLabel::Excluded => GroupLabel::Excluded,
            })
            .collect();
        Self {
            attribute: self.attribute.clone(),
            threshold: self.threshold,
            labels,
        }
    }
}

/// Labels each cell advantaged iff `w_plus > threshold`; cells with
/// population share below `p_min` are excluded.
pub fn discretize_groups(
    field: &DemographicField,
    attribute: &str,
    threshold: f64,
    p_min: f64,
) -> Result<GroupLabeling> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    if !(p_min > 0.0) {
        return Err(Error::invalid(format!(
            "p_min must be positive, got {p_min}"
        )));
    }
    let w = field.w_plus(attribute)?;
    let labels = w
        .iter()
        .zip(&field.population_share)
        .map(|(&wi, &pi)| {
            if pi < p_min {
                GroupLabel::Excluded
            } else if wi > threshold {
                GroupLabel::Advantaged
            } else {
                GroupLabel::Disadvantaged
            }
        })
        .collect();
    Ok(GroupLabeling {
        attribute: attribute.to_string(),
        threshold,
        labels,
    })
}

/// One sensitive attribute inside a [`FairnessConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeConfig {
    pub name: String,
    /// Per-attribute weight in the composite loss.
    #[serde(default = "one")]
    pub weight: f64,
    /// Discretization threshold on the advantaged fraction.
    pub threshold: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessConfig {
    pub kind: RegularizerKind,
    /// Global weight of the fairness term.
    pub lambda: f64,
    pub attributes: Vec<AttributeConfig>,
    pub p_min: f64,
    pub y_min: f64,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        Self {
            kind: RegularizerKind::None,
            lambda: 0.0,
            attributes: Vec::new(),
            p_min: DEFAULT_P_MIN,
            y_min: DEFAULT_Y_MIN,
        }
    }
}

impl FairnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || self.attributes.iter().any(|a| !(a.weight >= 0.0)) {
            return Err(Error::invalid("fairness weights must be nonnegative"));
        }
        if !(self.p_min > 0.0) {
            return Err(Error::invalid("p_min must be positive"));
        }
        if !(self.y_min > 0.0) {
            return Err(Error::invalid("y_min must be positive"));
        }
        Ok(())
    }

    /// Discretizes every configured attribute.
    pub fn labelings(&self, field: &DemographicField) -> Result<BTreeMap<String, GroupLabeling>> {
        self.attributes
            .iter()
            .map(|a| {
                Ok((
                    a.name.clone(),
                    discretize_groups(field, &a.name, a.threshold, self.p_min)?,
                ))
            })
            .collect()
    }
}
