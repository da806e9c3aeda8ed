use itertools::Itertools;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Largest sample size that gets an exact permutation p-value.
pub const EXACT_MAX_N: usize = 8;

/// Fractional ranks starting at 1; tied values share their mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's rho and its two-sided p-value.
///
/// rho is the Pearson correlation of average ranks, which handles ties.
/// For `n <= 8` the p-value is exact: the share of all `n!` orderings of
/// the second rank vector whose |rho| reaches the observed one. Above that
/// it uses Student's t with `n - 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "spearman: lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "spearman needs at least 3 points, got {n}"
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("spearman: non-finite input"));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::UndefinedCorrelation("constant input vector".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let rho = pearson(&rx, &ry);
    let p = if n <= EXACT_MAX_N {
        exact_p(&rx, &ry, rho)
    } else {
        t_p(rho, n)
    };
    Ok((rho, p))
}

fn exact_p(rx: &[f64], ry: &[f64], rho: f64) -> f64 {
    // tolerance absorbs round-off between equal rho values reached by
    // different orderings
    let target = rho.abs() - 1e-12;
    let mut hits = 0usize;
    let mut total = 0usize;
    for perm in ry.iter().copied().permutations(ry.len()) {
        total += 1;
        if pearson(rx, &perm).abs() >= target {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

fn t_p(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}
