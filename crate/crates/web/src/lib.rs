//! Browser demo: generate a synthetic biased city, show its demand and
//! demographics as heatmaps, and trace how the fairness gaps and losses move
//! as a prediction is blended toward population-proportional demand.
//!
//! Every export takes and returns JSON strings; the plain functions are
//! usable (and tested) without a browser.

use fairst::eval::{gray_levels, mae, spearman};
use fairst::fairness::{
    discretize_groups, em_loss, if_loss, ifg, pairwise_loss, rf_loss, rfg, DEFAULT_P_MIN,
    DEFAULT_Y_MIN,
};
use fairst::ingest::DemandTensor;
use fairst::synth::{generate, SynthConfig, BIASED_ATTRIBUTE};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Layer {
    pub name: String,
    pub values: Vec<f64>,
    pub gray: Vec<u8>,
}

#[derive(Debug, Serialize)]
pub struct CityView {
    pub rows: usize,
    pub cols: usize,
    pub hours: usize,
    pub threshold: f64,
    pub rfg: f64,
    pub ifg: f64,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub mae: f64,
    pub rfg: f64,
    pub ifg: f64,
    pub rf_loss: f64,
    pub if_loss: f64,
    pub em_loss: f64,
    pub pw_loss: f64,
}

#[derive(Debug, Serialize)]
pub struct RankResult {
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub error: Option<String>,
}

fn parse_config(json: &str) -> Result<SynthConfig, String> {
    let cfg: SynthConfig = if json.trim().is_empty() {
        SynthConfig::default()
    } else {
        serde_json::from_str(json).map_err(|e| e.to_string())?
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn layer(name: &str, values: Vec<f64>) -> Layer {
    Layer {
        name: name.into(),
        gray: gray_levels(&values),
        values,
    }
}

/// Mean demand, population and advantaged fraction maps plus the truth gaps.
pub fn city_view(json: &str) -> Result<CityView, String> {
    let cfg = parse_config(json)?;
    let city = generate(&cfg).map_err(|e| e.to_string())?;
    let field = city.field().map_err(|e| e.to_string())?;
    let threshold = city
        .threshold(BIASED_ATTRIBUTE)
        .map_err(|e| e.to_string())?;
    let labels = discretize_groups(&field, BIASED_ATTRIBUTE, threshold, DEFAULT_P_MIN)
        .map_err(|e| e.to_string())?;
    let w = field
        .w_plus(BIASED_ATTRIBUTE)
        .map_err(|e| e.to_string())?
        .to_vec();
    Ok(CityView {
        rows: cfg.rows,
        cols: cfg.cols,
        hours: cfg.hours,
        threshold,
        rfg: rfg(&city.demand, &labels, &field).map_err(|e| e.to_string())?,
        ifg: ifg(&city.demand, &field, BIASED_ATTRIBUTE, DEFAULT_P_MIN)
            .map_err(|e| e.to_string())?,
        layers: vec![
            layer("mean demand", city.demand.mean_frame()),
            layer("population share", field.population_share.clone()),
            layer("advantaged fraction", w),
        ],
    })
}

/// Blends the true mean frame toward the population-proportional frame with
/// the same total, `alpha` from 0 to 1 in `steps` steps, and reports
/// accuracy, gaps and every regularizer along the way.
pub fn fairness_curve(json: &str, steps: usize) -> Result<Vec<CurvePoint>, String> {
    let cfg = parse_config(json)?;
    let city = generate(&cfg).map_err(|e| e.to_string())?;
    let field = city.field().map_err(|e| e.to_string())?;
    let threshold = city
        .threshold(BIASED_ATTRIBUTE)
        .map_err(|e| e.to_string())?;
    let labels = discretize_groups(&field, BIASED_ATTRIBUTE, threshold, DEFAULT_P_MIN)
        .map_err(|e| e.to_string())?;
    let truth = city.demand.mean_frame();
    let total: f64 = truth.iter().sum();
    let fair: Vec<f64> = field.population_share.iter().map(|p| p * total).collect();
    let truth_t = DemandTensor::from_frames(cfg.rows, cfg.cols, 0, truth.clone())
        .map_err(|e| e.to_string())?;
    let steps = steps.max(1);
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let alpha = k as f64 / steps as f64;
        let pred: Vec<f64> = truth
            .iter()
            .zip(&fair)
            .map(|(t, f)| (1.0 - alpha) * t + alpha * f)
            .collect();
        let pred_t = DemandTensor::from_frames(cfg.rows, cfg.cols, 0, pred.clone())
            .map_err(|e| e.to_string())?;
        let err = |e: fairst::Error| e.to_string();
        out.push(CurvePoint {
            alpha,
            mae: mae(&pred_t, &truth_t).map_err(err)?,
            rfg: rfg(&pred_t, &labels, &field).map_err(err)?,
            ifg: ifg(&pred_t, &field, BIASED_ATTRIBUTE, DEFAULT_P_MIN).map_err(err)?,
            rf_loss: rf_loss(&pred, &truth, &labels, &field, DEFAULT_Y_MIN).map_err(err)?,
            if_loss: if_loss(
                &pred,
                &truth,
                &field,
                BIASED_ATTRIBUTE,
                DEFAULT_P_MIN,
                DEFAULT_Y_MIN,
            )
            .map_err(err)?,
            em_loss: em_loss(&pred, &truth, &labels, &field, DEFAULT_Y_MIN).map_err(err)?,
            pw_loss: pairwise_loss(&pred, &truth, &labels, &field, DEFAULT_Y_MIN).map_err(err)?,
        });
    }
    Ok(out)
}

fn parse_numbers(s: &str) -> Result<Vec<f64>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: '{t}'")))
        .collect()
}

/// Spearman rho and p-value of two comma- or space-separated lists.
pub fn rank_correlation(x: &str, y: &str) -> RankResult {
    let r = parse_numbers(x)
        .and_then(|x| parse_numbers(y).map(|y| (x, y)))
        .and_then(|(x, y)| spearman(&x, &y).map_err(|e| e.to_string()));
    match r {
        Ok((rho, p)) => RankResult {
            rho: Some(rho),
            p_value: Some(p),
            error: None,
        },
        Err(e) => RankResult {
            rho: None,
            p_value: None,
            error: Some(e),
        },
    }
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[wasm_bindgen(js_name = cityView)]
pub fn city_view_js(config_json: &str) -> String {
    to_json(city_view(config_json))
}

#[wasm_bindgen(js_name = fairnessCurve)]
pub fn fairness_curve_js(config_json: &str, steps: usize) -> String {
    to_json(fairness_curve(config_json, steps))
}

#[wasm_bindgen(js_name = rankCorrelation)]
pub fn rank_correlation_js(x: &str, y: &str) -> String {
    to_json(Ok(rank_correlation(x, y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn city_layers_have_grid_size() {
        let v = city_view(r#"{"rows": 4, "cols": 5, "hours": 48}"#).unwrap();
        assert_eq!(v.layers.len(), 3);
        assert!(v
            .layers
            .iter()
            .all(|l| l.values.len() == 20 && l.gray.len() == 20));
        assert!(v.rfg > 0.0);
        assert!(city_view(r#"{"rows": 0}"#).is_err());
    }

    #[test]
    fn curve_ends_fair() {
        let pts = fairness_curve(r#"{"hours": 48}"#, 4).unwrap();
        assert_eq!(pts.len(), 5);
        assert_eq!(pts[0].mae, 0.0);
        let last = &pts[4];
        assert!(last.ifg.abs() < 1e-9 && last.rfg.abs() < 1e-9);
        assert!(last.if_loss < 1e-9 && last.rf_loss < 1e-9);
        assert!(pts[0].ifg.abs() > pts[2].ifg.abs());
    }

    #[test]
    fn ranks_and_errors() {
        let r = rank_correlation("1 2 3 4", "10, 20, 30, 40");
        assert_eq!(r.rho, Some(1.0));
        let e = rank_correlation("1 1 1", "1 2 3");
        assert!(e.error.is_some());
        assert!(rank_correlation("1 x", "1 2")
            .error
            .unwrap()
            .contains("'x'"));
        assert!(city_view_js("{").contains("\"error\""));
    }
}
