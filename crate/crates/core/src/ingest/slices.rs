use super::series::SeriesStack1D;
use super::trips::DemandTensor;
use crate::error::{Error, Result};

/// One training/prediction example: `window` past frames and the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSlice {
    /// `(window, rows, cols)` row-major.
    pub history: Vec<f64>,
    /// `(rows, cols)`.
    pub target: Vec<f64>,
    /// `(M, window)` row-major.
    pub history_1d: Vec<f64>,
    /// Frame index of `target` in the source tensor.
    pub target_index: usize,
}

fn check(demand: &DemandTensor, series: &SeriesStack1D, window: usize) -> Result<()> {
    if window == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    let t = demand.t_len();
    if t < window + 1 {
        return Err(Error::invalid(format!(
            "demand has {t} frames, window {window} needs at least {}",
            window + 1
        )));
    }
    if !series.is_empty() && series.hours != t {
        return Err(Error::invalid(format!(
            "series cover {} hours, demand {t}",
            series.hours
        )));
    }
    Ok(())
}

fn build(
    demand: &DemandTensor,
    series: &SeriesStack1D,
    window: usize,
    target_index: usize,
) -> TemporalSlice {
    let n = demand.frame_len();
    let k = target_index - window;
    let mut history_1d = Vec::with_capacity(series.len() * window);
    for m in 0..series.len() {
        history_1d.extend_from_slice(&series.row(m)[k..target_index]);
    }
    TemporalSlice {
        history: demand.values[k * n..target_index * n].to_vec(),
        target: demand.frame(target_index).to_vec(),
        history_1d,
        target_index,
    }
}

/// All `T - window` slices; slice `k` has history frames `[k, k + window)`
/// and target frame `k + window`.
pub fn make_slices(
    demand: &DemandTensor,
    series: &SeriesStack1D,
    window: usize,
) -> Result<Vec<TemporalSlice>> {
    check(demand, series, window)?;
    Ok((window..demand.t_len())
        .map(|t| build(demand, series, window, t))
        .collect())
}

/// Slices whose target index lies in `[from, to)` (clipped to the valid range).
pub fn make_slices_for_targets(
    demand: &DemandTensor,
    series: &SeriesStack1D,
    window: usize,
    from: usize,
    to: usize,
) -> Result<Vec<TemporalSlice>> {
    check(demand, series, window)?;
    let lo = from.max(window);
    let hi = to.min(demand.t_len());
    Ok((lo..hi.max(lo))
        .map(|t| build(demand, series, window, t))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demand(t: usize) -> DemandTensor {
        DemandTensor::from_frames(2, 3, 0, (0..t * 6).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn slice_counts() {
        let s = SeriesStack1D::empty(0, 170);
        assert_eq!(make_slices(&demand(170), &s, 168).unwrap().len(), 2);
        let s = SeriesStack1D::empty(0, 169);
        let sl = make_slices(&demand(169), &s, 168).unwrap();
        assert_eq!(sl.len(), 1);
        assert_eq!(sl[0].target_index, 168);
        assert_eq!(sl[0].target, demand(169).frame(168));
    }

    #[test]
    fn too_short_rejected() {
        let s = SeriesStack1D::empty(0, 168);
        assert!(matches!(
            make_slices(&demand(168), &s, 168),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn index_arithmetic_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (t, rows, cols, w) = (200usize, 3usize, 2usize, 24usize);
        let values: Vec<f64> = (0..t * rows * cols)
            .map(|_| rng.random_range(0..10) as f64)
            .collect();
        let d = DemandTensor::from_frames(rows, cols, 0, values.clone()).unwrap();
        let sv: Vec<f64> = (0..2 * t).map(|_| rng.random::<f64>()).collect();
        let s = SeriesStack1D::new(vec!["a".into(), "b".into()], 0, t, sv.clone()).unwrap();
        let slices = make_slices(&d, &s, w).unwrap();
        assert_eq!(slices.len(), t - w);
        for (k, sl) in slices.iter().enumerate() {
            for h in 0..w {
                for r in 0..rows {
                    for c in 0..cols {
                        assert_eq!(
                            sl.history[(h * rows + r) * cols + c],
                            values[((k + h) * rows + r) * cols + c]
                        );
                    }
                }
            }
            for r in 0..rows * cols {
                assert_eq!(sl.target[r], values[(k + w) * rows * cols + r]);
            }
            for m in 0..2 {
                for h in 0..w {
                    assert_eq!(sl.history_1d[m * w + h], sv[m * t + k + h]);
                }
            }
        }
    }

    #[test]
    fn target_range_selection() {
        let s = SeriesStack1D::empty(0, 30);
        let sl = make_slices_for_targets(&demand(30), &s, 5, 0, 12).unwrap();
        assert_eq!(
            sl.iter().map(|x| x.target_index).collect::<Vec<_>>(),
            (5..12).collect::<Vec<_>>()
        );
    }
}
