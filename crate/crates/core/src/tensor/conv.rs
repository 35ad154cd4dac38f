//! 2-D cross-correlation via im2col, batched over independent samples.

use super::linalg::gemm;
use crate::error::{dim_err, Result};
use rayon::prelude::*;

/// Output extent of a strided, zero-padded window sweep.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return dim_err("stride must be positive");
    }
    let padded = input + 2 * padding;
    if kernel == 0 || kernel > padded {
        return dim_err(format!("kernel {kernel} does not fit padded input {padded}"));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x_shape: &[usize], w_shape: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if x_shape.len() != 4 || w_shape.len() != 4 {
            return dim_err(format!("conv2d expects 4-D input and kernel, got {x_shape:?} and {w_shape:?}"));
        }
        if x_shape[1] != w_shape[1] {
            return dim_err(format!("conv2d channel mismatch: input {} vs kernel {}", x_shape[1], w_shape[1]));
        }
        let ho = conv_output_size(x_shape[2], w_shape[2], stride, padding)?;
        let wo = conv_output_size(x_shape[3], w_shape[3], stride, padding)?;
        Ok(ConvGeom {
            batch: x_shape[0],
            in_ch: x_shape[1],
            h: x_shape[2],
            w: x_shape[3],
            out_ch: w_shape[0],
            kh: w_shape[2],
            kw: w_shape[3],
            stride,
            padding,
            ho,
            wo,
        })
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    fn sample_in(&self) -> usize {
        self.in_ch * self.h * self.w
    }

    fn sample_out(&self) -> usize {
        self.out_ch * self.ho * self.wo
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_ch, self.ho, self.wo]
    }

    /// Input coordinate touched by output `o` and kernel offset `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.in_ch {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oi in 0..self.ho {
                        let si = self.src(oi, ki, self.h);
                        for oj in 0..self.wo {
                            dst[oi * self.wo + oj] = match (si, self.src(oj, kj, self.w)) {
                                (Some(i), Some(j)) => x[(c * self.h + i) * self.w + j],
                                _ => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.in_ch {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oi in 0..self.ho {
                        let Some(i) = self.src(oi, ki, self.h) else { continue };
                        for oj in 0..self.wo {
                            if let Some(j) = self.src(oj, kj, self.w) {
                                dx[(c * self.h + i) * self.w + j] += src[oi * self.wo + oj];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward(g: &ConvGeom, x: &[f64], weight: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.sample_out()];
    out.par_chunks_mut(g.sample_out().max(1)).enumerate().for_each(|(b, y)| {
        let mut cols = vec![0.0; g.patch() * g.positions()];
        g.im2col(&x[b * g.sample_in()..(b + 1) * g.sample_in()], &mut cols);
        gemm(g.out_ch, g.patch(), g.positions(), 1.0, weight, false, &cols, false, 0.0, y);
    });
    out
}

/// Returns (dx, dw). Per-sample weight gradients are reduced in sample order
/// so the result does not depend on the thread count.
pub(crate) fn backward(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..g.batch)
        .into_par_iter()
        .map(|b| {
            let dyb = &dy[b * g.sample_out()..(b + 1) * g.sample_out()];
            let mut dw = Vec::new();
            if need_dw {
                let mut cols = vec![0.0; g.patch() * g.positions()];
                g.im2col(&x[b * g.sample_in()..(b + 1) * g.sample_in()], &mut cols);
                dw = vec![0.0; g.out_ch * g.patch()];
                gemm(g.out_ch, g.positions(), g.patch(), 1.0, dyb, false, &cols, true, 0.0, &mut dw);
            }
            let mut dx = Vec::new();
            if need_dx {
                let mut dcols = vec![0.0; g.patch() * g.positions()];
                gemm(g.patch(), g.out_ch, g.positions(), 1.0, weight, true, dyb, false, 0.0, &mut dcols);
                dx = vec![0.0; g.sample_in()];
                g.col2im(&dcols, &mut dx);
            }
            (dx, dw)
        })
        .collect();

    let dx = need_dx.then(|| per_sample.iter().flat_map(|(dx, _)| dx.iter().copied()).collect());
    let dw = need_dw.then(|| {
        let mut acc = vec![0.0; g.out_ch * g.patch()];
        for (_, dw) in &per_sample {
            for (a, v) in acc.iter_mut().zip(dw) {
                *a += v;
            }
        }
        acc
    });
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_floor() {
        assert_eq!(conv_output_size(5, 3, 2, 1).unwrap(), 3);
        assert_eq!(conv_output_size(8, 3, 1, 1).unwrap(), 8);
        assert_eq!(conv_output_size(427, 3, 1, 1).unwrap(), 427);
        assert!(conv_output_size(2, 3, 1, 0).is_err());
    }

    #[test]
    fn ones_kernel_sums_window() {
        let g = ConvGeom::new(&[1, 1, 3, 3], &[1, 1, 3, 3], 1, 0).unwrap();
        let y = forward(&g, &[1.0; 9], &[1.0; 9]);
        assert_eq!(y, vec![9.0]);
    }
}
