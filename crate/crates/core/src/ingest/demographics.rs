use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::grid::GridSpec;
use super::polygon::{polygon_cell_fractions, project_ring, signed_area, Ring};
use crate::error::{Error, Result};

/// Property suffix marking an advantaged-fraction column in GeoJSON input.
pub const ADV_FRAC_SUFFIX: &str = "_adv_frac";

/// A census-style areal unit: one or more outer rings, a head count and the
/// advantaged fraction per sensitive attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct DemographicUnit {
    pub parts: Vec<Ring>,
    pub population: f64,
    pub adv_fraction: BTreeMap<String, f64>,
}

/// Per-cell population share and advantaged fractions.
///
/// The disadvantaged fraction of a cell is `1 - w_plus` and is not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicField {
    pub rows: usize,
    pub cols: usize,
    pub population_share: Vec<f64>,
    pub attributes: BTreeMap<String, Vec<f64>>,
}

impl DemographicField {
    /// Validates shapes and ranges, then renormalizes shares to sum to one.
    pub fn new(
        rows: usize,
        cols: usize,
        population: Vec<f64>,
        attributes: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let n = rows * cols;
        if population.len() != n {
            return Err(Error::invalid(format!(
                "population has {} cells, grid {}",
                population.len(),
                n
            )));
        }
        if population.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("population must be finite and nonnegative"));
        }
        let total: f64 = population.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("total population is zero"));
        }
        for (name, w) in &attributes {
            if w.len() != n {
                return Err(Error::invalid(format!(
                    "attribute '{name}' has {} cells, grid {}",
                    w.len(),
                    n
                )));
            }
            if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!(
                    "attribute '{name}' fraction outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            population_share: population.iter().map(|p| p / total).collect(),
            attributes,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn w_plus(&self, attribute: &str) -> Result<&[f64]> {
        self.attributes
            .get(attribute)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("unknown attribute '{attribute}'")))
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.attributes.keys().map(String::as_str)
    }
}

fn unit_fractions(unit: &DemographicUnit, grid: &GridSpec) -> Result<Vec<(usize, f64)>> {
    if unit.parts.len() == 1 {
        return polygon_cell_fractions(&unit.parts[0], grid);
    }
    let mut areas = Vec::with_capacity(unit.parts.len());
    for part in &unit.parts {
        areas.push(signed_area(&project_ring(part, grid)?).abs());
    }
    let total: f64 = areas.iter().sum();
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for (part, area) in unit.parts.iter().zip(&areas) {
        for (cell, f) in polygon_cell_fractions(part, grid)? {
            *acc.entry(cell).or_default() += f * area / total;
        }
    }
    Ok(acc.into_iter().collect())
}

fn check_unit(i: usize, unit: &DemographicUnit) -> Result<()> {
    if unit.parts.is_empty() {
        return Err(Error::invalid(format!("unit {i} has no polygon")));
    }
    if !unit.population.is_finite() || unit.population < 0.0 {
        return Err(Error::invalid(format!(
            "unit {i} has invalid population {}",
            unit.population
        )));
    }
    for (a, f) in &unit.adv_fraction {
        if !(0.0..=1.0).contains(f) {
            return Err(Error::invalid(format!(
                "unit {i} attribute '{a}' fraction {f} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Unnormalized per-cell population and population-weighted advantaged
/// fractions, by area-proportional allocation of each unit.
pub fn cell_populations(
    units: &[DemographicUnit],
    grid: &GridSpec,
) -> Result<(Vec<f64>, BTreeMap<String, Vec<f64>>)> {
    let n = grid.n_cells();
    let mut pop = vec![0.0; n];
    let mut weighted: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for unit in units {
        for a in unit.adv_fraction.keys() {
            weighted.entry(a.clone()).or_insert_with(|| vec![0.0; n]);
        }
    }
    for (i, unit) in units.iter().enumerate() {
        check_unit(i, unit)?;
        for (cell, frac) in unit_fractions(unit, grid)? {
            let share = unit.population * frac;
            pop[cell] += share;
            for (a, w) in weighted.iter_mut() {
                // units lacking the attribute contribute as fully disadvantaged
                let f = unit.adv_fraction.get(a).copied().unwrap_or(0.0);
                w[cell] += share * f;
            }
        }
    }
    for w in weighted.values_mut() {
        for (wi, &p) in w.iter_mut().zip(&pop) {
            *wi = if p > 0.0 {
                (*wi / p).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    Ok((pop, weighted))
}

/// Allocates unit populations onto the grid by area and normalizes shares.
pub fn allocate_demographics(
    units: &[DemographicUnit],
    grid: &GridSpec,
) -> Result<DemographicField> {
    let (pop, attrs) = cell_populations(units, grid)?;
    if !(pop.iter().sum::<f64>() > 0.0) {
        return Err(Error::invalid("total allocated population is zero"));
    }
    DemographicField::new(grid.rows, grid.cols, pop, attrs)
}

fn ring_from_json(v: &Value) -> Option<Ring> {
    v.as_array()?
        .iter()
        .map(|p| {
            let p = p.as_array()?;
            Some((p.get(1)?.as_f64()?, p.first()?.as_f64()?))
        })
        .collect()
}

fn polygon_outer(v: &Value, ctx: &str) -> Result<Ring> {
    let rings = v
        .as_array()
        .ok_or_else(|| Error::invalid(format!("{ctx}: polygon coordinates must be an array")))?;
    if rings.len() != 1 {
        return Err(Error::invalid(format!(
            "{ctx}: polygons with holes are not supported ({} rings)",
            rings.len()
        )));
    }
    ring_from_json(&rings[0]).ok_or_else(|| Error::invalid(format!("{ctx}: malformed ring")))
}

/// Parses a GeoJSON FeatureCollection of demographic units.
///
/// Each feature needs a `Polygon` or `MultiPolygon` geometry, a numeric
/// `population` property, and one `<attr>_adv_frac` property per attribute.
pub fn parse_demographics_geojson(text: &str) -> Result<Vec<DemographicUnit>> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("GeoJSON: {e}")))?;
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::invalid("GeoJSON: expected a FeatureCollection with 'features'"))?;
    let mut units = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let ctx = format!("feature {i}");
        let geom = f
            .get("geometry")
            .ok_or_else(|| Error::invalid(format!("{ctx}: no geometry")))?;
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        let parts = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![polygon_outer(coords, &ctx)?],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| Error::invalid(format!("{ctx}: malformed MultiPolygon")))?
                .iter()
                .map(|p| polygon_outer(p, &ctx))
                .collect::<Result<_>>()?,
            other => {
                return Err(Error::invalid(format!(
                    "{ctx}: unsupported geometry {other:?}"
                )))
            }
        };
        let props = f
            .get("properties")
            .and_then(Value::as_object)
            .ok_or_else(|| Error::invalid(format!("{ctx}: no properties")))?;
        let population = props
            .get("population")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::invalid(format!("{ctx}: missing numeric 'population'")))?;
        let mut adv_fraction = BTreeMap::new();
        for (k, v) in props {
            if let Some(name) = k.strip_suffix(ADV_FRAC_SUFFIX) {
                let f = v
                    .as_f64()
                    .ok_or_else(|| Error::invalid(format!("{ctx}: '{k}' is not numeric")))?;
                adv_fraction.insert(name.to_string(), f);
            }
        }
        let unit = DemographicUnit {
            parts,
            population,
            adv_fraction,
        };
        check_unit(i, &unit)?;
        units.push(unit);
    }
    Ok(units)
}

pub fn read_demographics(path: &Path) -> Result<Vec<DemographicUnit>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_demographics_geojson(&text).map_err(|e| match e {
        Error::InvalidInput(m) => Error::parse(path, 0, m),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::grid::{build_grid, BBox};

    fn grid() -> GridSpec {
        build_grid(BBox::from_extent_m(30.2, -97.75, 2000.0, 2000.0), 1000.0).unwrap()
    }

    fn square(g: &GridSpec, x0: f64, y0: f64, x1: f64, y1: f64) -> Ring {
        [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
            .iter()
            .map(|&(x, y)| g.unproject(x, y))
            .collect()
    }

    fn unit(parts: Vec<Ring>, pop: f64, frac: f64) -> DemographicUnit {
        DemographicUnit {
            parts,
            population: pop,
            adv_fraction: BTreeMap::from([("race".to_string(), frac)]),
        }
    }

    #[test]
    fn single_unit_in_one_cell() {
        let g = grid();
        let u = unit(vec![square(&g, 100.0, 100.0, 900.0, 900.0)], 100.0, 0.7);
        let f = allocate_demographics(&[u], &g).unwrap();
        assert!((f.population_share[0] - 1.0).abs() < 1e-12);
        assert!((f.w_plus("race").unwrap()[0] - 0.7).abs() < 1e-12);
        assert_eq!(f.population_share[1..].iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn split_unit() {
        let g = grid();
        let u = unit(vec![square(&g, 500.0, 100.0, 1500.0, 900.0)], 100.0, 0.3);
        let f = allocate_demographics(&[u], &g).unwrap();
        assert!((f.population_share[0] - 0.5).abs() < 1e-9);
        assert!((f.population_share[1] - 0.5).abs() < 1e-9);
        let w = f.w_plus("race").unwrap();
        assert!((w[0] - 0.3).abs() < 1e-12 && (w[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn overlapping_units_match_direct_summation() {
        let g = grid();
        let units = vec![
            unit(vec![square(&g, 200.0, 200.0, 1400.0, 800.0)], 120.0, 0.9),
            unit(vec![square(&g, 700.0, 300.0, 1900.0, 1700.0)], 80.0, 0.2),
        ];
        let f = allocate_demographics(&units, &g).unwrap();
        // oracle: rectangle overlap areas computed directly
        let overlap = |r: [f64; 4], c: [f64; 4]| {
            let w = (r[2].min(c[2]) - r[0].max(c[0])).max(0.0);
            let h = (r[3].min(c[3]) - r[1].max(c[1])).max(0.0);
            w * h
        };
        let rects = [
            [200.0, 200.0, 1400.0, 800.0],
            [700.0, 300.0, 1900.0, 1700.0],
        ];
        let pops = [120.0, 80.0];
        let fracs = [0.9, 0.2];
        let mut pop = [0.0; 4];
        let mut adv = [0.0; 4];
        for k in 0..2 {
            let area = (rects[k][2] - rects[k][0]) * (rects[k][3] - rects[k][1]);
            for idx in 0..4 {
                let c = g.cell_rect(g.cell_of(idx));
                let share = pops[k] * overlap(rects[k], c) / area;
                pop[idx] += share;
                adv[idx] += share * fracs[k];
            }
        }
        let total: f64 = pop.iter().sum();
        for idx in 0..4 {
            assert!((f.population_share[idx] - pop[idx] / total).abs() < 1e-9);
            let w = if pop[idx] > 0.0 {
                adv[idx] / pop[idx]
            } else {
                0.0
            };
            assert!((f.w_plus("race").unwrap()[idx] - w).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_population_rejected() {
        let g = grid();
        let u = unit(vec![square(&g, 100.0, 100.0, 900.0, 900.0)], 0.0, 0.7);
        assert!(matches!(
            allocate_demographics(&[u], &g),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn geojson_parsing() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","geometry":{"type":"Polygon","coordinates":[[[-97.75,30.2],[-97.74,30.2],[-97.74,30.21],[-97.75,30.2]]]},
             "properties":{"population":50,"race_adv_frac":0.4,"age_adv_frac":0.8,"name":"x"}}]}"#;
        let units = parse_demographics_geojson(text).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].population, 50.0);
        assert_eq!(units[0].adv_fraction.len(), 2);
        assert_eq!(units[0].parts[0][1], (30.2, -97.74));
        let bad = r#"{"type":"FeatureCollection","features":[{"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1]]]},"properties":{"race_adv_frac":0.4}}]}"#;
        assert!(parse_demographics_geojson(bad).is_err());
    }
}
