use crate::error::{Error, Result};
use crate::ingest::DemandTensor;

pub const WEEK: i64 = 7 * 24 * 3600;

/// Historical average: per-cell mean of every frame in `history` that
/// precedes `target_time` and shares its hour of day and day of week.
pub fn ha_predict(history: &DemandTensor, target_time: i64) -> Result<Vec<f64>> {
    let n = history.frame_len();
    let mut acc = vec![0.0; n];
    let mut count = 0usize;
    for t in 0..history.t_len() {
        let ft = history.time_of(t);
        if ft < target_time && (target_time - ft) % WEEK == 0 {
            count += 1;
            // running mean: exact whenever every matching frame is equal
            for (a, v) in acc.iter_mut().zip(history.frame(t)) {
                *a += (v - *a) / count as f64;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid(format!(
            "no prior frame shares hour-of-day and weekday with t={target_time}"
        )));
    }
    Ok(acc)
}

/// HA predictions for frames `[from, to)` of `demand`, using only frames
/// before `history_end` as history.
pub fn ha_predict_series(
    demand: &DemandTensor,
    history_end: usize,
    from: usize,
    to: usize,
) -> Result<DemandTensor> {
    let history = demand.slice_time(0, history_end.min(demand.t_len()));
    let mut values = Vec::with_capacity((to - from) * demand.frame_len());
    for t in from..to {
        values.extend(ha_predict(&history, demand.time_of(t))?);
    }
    DemandTensor::from_frames(demand.rows, demand.cols, demand.time_of(from), values)
}
