//! Same-padding cross-correlation for 1, 2 and 3 convolved axes.
//!
//! All ranks are lowered to a 3D problem with unit extents on the unused
//! leading axes, unfolded with im2col and handed to a dense gemm.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvRank {
    One,
    Two,
    Three,
}

impl ConvRank {
    pub fn axes(self) -> usize {
        match self {
            ConvRank::One => 1,
            ConvRank::Two => 2,
            ConvRank::Three => 3,
        }
    }

    pub fn from_axes(n: usize) -> Result<Self> {
        match n {
            1 => Ok(ConvRank::One),
            2 => Ok(ConvRank::Two),
            3 => Ok(ConvRank::Three),
            _ => Err(Error::invalid(format!("convolution rank {n} not in 1..=3"))),
        }
    }
}

/// Shapes of one convolution, normalized to three spatial axes.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvGeom {
    pub batch: Option<usize>,
    pub cin: usize,
    pub cout: usize,
    pub dims: [usize; 3],
    pub kernel: [usize; 3],
}

impl ConvGeom {
    pub fn new(input: &[usize], kernels: &[usize], bias: &[usize], rank: ConvRank) -> Result<Self> {
        let r = rank.axes();
        let (batch, rest) = if input.len() == r + 1 {
            (None, input)
        } else if input.len() == r + 2 {
            (Some(input[0]), &input[1..])
        } else {
            return Err(Error::invalid(format!(
                "rank-{r} convolution needs input with {} or {} axes, got {:?}",
                r + 1,
                r + 2,
                input
            )));
        };
        if kernels.len() != r + 2 {
            return Err(Error::invalid(format!(
                "rank-{r} kernels need {} axes, got {:?}",
                r + 2,
                kernels
            )));
        }
        let cin = rest[0];
        if kernels[1] != cin {
            return Err(Error::invalid(format!(
                "kernel expects {} input channels, input has {}",
                kernels[1], cin
            )));
        }
        let cout = kernels[0];
        if bias != [cout] {
            return Err(Error::invalid(format!(
                "bias shape {:?} does not match {} output channels",
                bias, cout
            )));
        }
        let mut dims = [1usize; 3];
        let mut kernel = [1usize; 3];
        for a in 0..r {
            dims[3 - r + a] = rest[1 + a];
            kernel[3 - r + a] = kernels[2 + a];
        }
        if kernel.iter().any(|k| k % 2 == 0) {
            return Err(Error::invalid(format!(
                "kernel extents must be odd, got {:?}",
                &kernels[2..]
            )));
        }
        Ok(Self {
            batch,
            cin,
            cout,
            dims,
            kernel,
        })
    }

    pub fn volume(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Rows of the unfolded matrix.
    pub fn k(&self) -> usize {
        self.cin * self.taps()
    }

    pub fn batches(&self) -> usize {
        self.batch.unwrap_or(1)
    }

    pub fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        let mut s = input.to_vec();
        let c_axis = usize::from(self.batch.is_some());
        s[c_axis] = self.cout;
        s
    }
}

/// Cross-correlation with zero padding; the output keeps the input's
/// spatial extent and has one channel per kernel.
///
/// `input` is `(C_in, spatial...)` or `(B, C_in, spatial...)`, `kernels` is
/// `(C_out, C_in, k...)` and `bias` is `(C_out)`.
pub fn conv_same(
    input: &Tensor,
    kernels: &Tensor,
    rank: ConvRank,
    bias: &Tensor,
) -> Result<Tensor> {
    let geom = ConvGeom::new(input.shape(), kernels.shape(), bias.shape(), rank)?;
    let out = forward(&geom, input.data(), kernels.data(), bias.data());
    Tensor::new(geom.output_shape(input.shape()), out)
}

pub(crate) fn forward(geom: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let v = geom.volume();
    let k = geom.k();
    let in_stride = geom.cin * v;
    let out_stride = geom.cout * v;
    let mut out = vec![0.0; geom.batches() * out_stride];
    let mut cols = vec![0.0; k * v];
    for bi in 0..geom.batches() {
        im2col(geom, &x[bi * in_stride..(bi + 1) * in_stride], &mut cols);
        let o = &mut out[bi * out_stride..(bi + 1) * out_stride];
        for (co, row) in o.chunks_mut(v).enumerate() {
            row.fill(b[co]);
        }
        gemm(geom.cout, k, v, w, false, &cols, false, o, 1.0);
    }
    out
}

/// Accumulates input, kernel and bias gradients for upstream gradient `gy`.
pub(crate) fn backward(
    geom: &ConvGeom,
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    gx: Option<&mut [f64]>,
    gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    let v = geom.volume();
    let k = geom.k();
    let in_stride = geom.cin * v;
    let out_stride = geom.cout * v;
    let mut cols = vec![0.0; k * v];
    let mut gx = gx;
    let mut gw = gw;
    if let Some(gb) = gb {
        for bi in 0..geom.batches() {
            let g = &gy[bi * out_stride..(bi + 1) * out_stride];
            for (co, row) in g.chunks(v).enumerate() {
                gb[co] += row.iter().sum::<f64>();
            }
        }
    }
    for bi in 0..geom.batches() {
        let g = &gy[bi * out_stride..(bi + 1) * out_stride];
        if let Some(gw) = gw.as_deref_mut() {
            im2col(geom, &x[bi * in_stride..(bi + 1) * in_stride], &mut cols);
            // gw (cout x k) += gy (cout x v) * cols^T (v x k)
            gemm(geom.cout, v, k, g, false, &cols, true, gw, 1.0);
        }
        if let Some(gx) = gx.as_deref_mut() {
            // dcols (k x v) = w^T (k x cout) * gy (cout x v)
            cols.fill(0.0);
            gemm(k, geom.cout, v, w, true, g, false, &mut cols, 0.0);
            col2im(geom, &cols, &mut gx[bi * in_stride..(bi + 1) * in_stride]);
        }
    }
}

/// `c (m x n) = a (m x k) * b (k x n) + beta * c`, row-major, with optional
/// transposition of the stored operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds asserted above; strides describe the row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one batch element into a `(C_in * taps) x volume` matrix.
fn im2col(geom: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let [d, h, w] = geom.dims;
    let [kd, kh, kw] = geom.kernel;
    let (pd, ph, pw) = (kd / 2, kh / 2, kw / 2);
    let v = geom.volume();
    let mut row = 0;
    for ci in 0..geom.cin {
        let xc = &x[ci * v..(ci + 1) * v];
        for dz in 0..kd {
            for dy in 0..kh {
                for dx in 0..kw {
                    let dst = &mut cols[row * v..(row + 1) * v];
                    row += 1;
                    let ox = dx as isize - pw as isize;
                    let x_lo = (-ox).max(0) as usize;
                    let x_hi = ((w as isize - ox).min(w as isize)).max(0) as usize;
                    for z in 0..d {
                        let sz = z as isize + dz as isize - pd as isize;
                        for y in 0..h {
                            let sy = y as isize + dy as isize - ph as isize;
                            let out_row = &mut dst[(z * h + y) * w..(z * h + y + 1) * w];
                            if sz < 0
                                || sz >= d as isize
                                || sy < 0
                                || sy >= h as isize
                                || x_lo >= x_hi
                            {
                                out_row.fill(0.0);
                                continue;
                            }
                            let src = ((sz as usize) * h + sy as usize) * w;
                            out_row[..x_lo].fill(0.0);
                            let s0 = (src as isize + x_lo as isize + ox) as usize;
                            out_row[x_lo..x_hi].copy_from_slice(&xc[s0..s0 + (x_hi - x_lo)]);
                            out_row[x_hi..].fill(0.0);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds an unfolded matrix into `gx`.
fn col2im(geom: &ConvGeom, cols: &[f64], gx: &mut [f64]) {
    let [d, h, w] = geom.dims;
    let [kd, kh, kw] = geom.kernel;
    let (pd, ph, pw) = (kd / 2, kh / 2, kw / 2);
    let v = geom.volume();
    let mut row = 0;
    for ci in 0..geom.cin {
        let gc = &mut gx[ci * v..(ci + 1) * v];
        for dz in 0..kd {
            for dy in 0..kh {
                for dx in 0..kw {
                    let src = &cols[row * v..(row + 1) * v];
                    row += 1;
                    let ox = dx as isize - pw as isize;
                    let x_lo = (-ox).max(0) as usize;
                    let x_hi = ((w as isize - ox).min(w as isize)).max(0) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    for z in 0..d {
                        let sz = z as isize + dz as isize - pd as isize;
                        if sz < 0 || sz >= d as isize {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + dy as isize - ph as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let base = ((sz as usize) * h + sy as usize) * w;
                            let s0 = (base as isize + x_lo as isize + ox) as usize;
                            let seg = &src[(z * h + y) * w + x_lo..(z * h + y) * w + x_hi];
                            for (g, s) in gc[s0..s0 + seg.len()].iter_mut().zip(seg) {
                                *g += s;
                            }
                        }
                    }
                }
            }
        }
    }
}
