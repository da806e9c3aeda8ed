//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Nested-loop same-padding cross-correlation over three spatial axes.
///
/// `input` is `(cin, d, h, w)`, `kernels` `(cout, cin, kd, kh, kw)`; lower
/// ranks pass unit extents for the leading axes.
pub fn direct_conv3(
    input: &[f64],
    cin: usize,
    dims: [usize; 3],
    kernels: &[f64],
    cout: usize,
    k: [usize; 3],
    bias: &[f64],
) -> Vec<f64> {
    let [d, h, w] = dims;
    let [kd, kh, kw] = k;
    let (pd, ph, pw) = ((kd / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0.0; cout * d * h * w];
    for o in 0..cout {
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        for a in 0..kd {
                            for b in 0..kh {
                                for e in 0..kw {
                                    let zz = z as isize + a as isize - pd;
                                    let yy = y as isize + b as isize - ph;
                                    let xx = x as isize + e as isize - pw;
                                    if zz < 0
                                        || yy < 0
                                        || xx < 0
                                        || zz >= d as isize
                                        || yy >= h as isize
                                        || xx >= w as isize
                                    {
                                        continue;
                                    }
                                    let iv = input[((c * d + zz as usize) * h + yy as usize) * w
                                        + xx as usize];
                                    let kv = kernels[(((o * cin + c) * kd + a) * kh + b) * kw + e];
                                    acc += iv * kv;
                                }
                            }
                        }
                    }
                    out[((o * d + z) * h + y) * w + x] = acc;
                }
            }
        }
    }
    out
}

/// Relative error with the larger magnitude as scale, 0 when both are 0.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Even-odd ray casting.
pub fn point_in_polygon(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > p.1) != (yj > p.1) && p.0 < (xj - xi) * (p.1 - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Spearman rho from the textbook definition: Pearson correlation of
/// average ranks computed by counting.
pub fn rho_by_counting(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&a| {
                let less = v.iter().filter(|&&b| b < a).count() as f64;
                let equal = v.iter().filter(|&&b| b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Heap's algorithm: every permutation of `v`, in place.
pub fn for_each_permutation(v: &mut [f64], f: &mut dyn FnMut(&[f64])) {
    fn rec(k: usize, v: &mut [f64], f: &mut dyn FnMut(&[f64])) {
        if k <= 1 {
            f(v);
            return;
        }
        rec(k - 1, v, f);
        for i in 0..k - 1 {
            if k % 2 == 0 {
                v.swap(i, k - 1);
            } else {
                v.swap(0, k - 1);
            }
            rec(k - 1, v, f);
        }
    }
    let n = v.len();
    rec(n, v, f);
}
