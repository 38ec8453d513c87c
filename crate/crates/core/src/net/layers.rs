//! 3×3 convolution, depth-to-space and pointwise activations with their
//! reverse-mode derivatives.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Weights `[out_ch, in_ch, 3, 3]` (row-major) and per-output bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, stride: usize, padding: usize) -> Self {
        ConvParams {
            in_channels,
            out_channels,
            stride,
            padding,
            weight: vec![T::zero(); out_channels * in_channels * KERNEL * KERNEL],
            bias: vec![T::zero(); out_channels],
        }
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> T {
        self.weight[((o * self.in_channels + i) * KERNEL + ky) * KERNEL + kx]
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - KERNEL) / self.stride + 1,
            (w + 2 * self.padding - KERNEL) / self.stride + 1,
        )
    }

    /// Output positions `o` along one axis whose tap `k` lands inside `[0, n)`,
    /// as a half-open range.
    #[inline]
    fn valid_range(&self, k: usize, n_in: usize, n_out: usize) -> (usize, usize) {
        // in = o*s + k - p  ∈ [0, n_in)
        let (s, p) = (self.stride, self.padding);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if n_in + p > k { (n_in + p - k - 1) / s + 1 } else { 0 };
        (lo, hi.min(n_out))
    }

    pub fn forward(&self, input: &Tensor<T>) -> Tensor<T> {
        assert_eq!(input.channels(), self.in_channels, "conv input channels");
        let (h, w) = (input.height(), input.width());
        let (ho, wo) = self.output_size(h, w);
        let (s, p) = (self.stride, self.padding);
        let mut out = Tensor::zeros(self.out_channels, ho, wo);
        for o in 0..self.out_channels {
            let plane = out.channel_mut(o);
            plane.iter_mut().for_each(|v| *v = self.bias[o]);
            for ic in 0..self.in_channels {
                let src = input.channel(ic);
                for ky in 0..KERNEL {
                    let (y0, y1) = self.valid_range(ky, h, ho);
                    for kx in 0..KERNEL {
                        let wt = self.w(o, ic, ky, kx);
                        let (x0, x1) = self.valid_range(kx, w, wo);
                        for oy in y0..y1 {
                            let iy = oy * s + ky - p;
                            let row_in = &src[iy * w..(iy + 1) * w];
                            let row_out = &mut plane[oy * wo..(oy + 1) * wo];
                            if s == 1 {
                                let off = x0 + kx - p;
                                for (o_v, &i_v) in row_out[x0..x1].iter_mut().zip(&row_in[off..]) {
                                    *o_v += wt * i_v;
                                }
                            } else {
                                for ox in x0..x1 {
                                    row_out[ox] += wt * row_in[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight and bias gradients into `grads` and returns the input gradient.
    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>, grads: &mut ConvParams<T>) -> Tensor<T> {
        let (h, w) = (input.height(), input.width());
        let (ho, wo) = (grad_out.height(), grad_out.width());
        let (s, p) = (self.stride, self.padding);
        let mut grad_in = Tensor::zeros(self.in_channels, h, w);
        for o in 0..self.out_channels {
            let g = grad_out.channel(o);
            grads.bias[o] += g.iter().copied().sum::<T>();
            for ic in 0..self.in_channels {
                let src = input.channel(ic);
                for ky in 0..KERNEL {
                    let (y0, y1) = self.valid_range(ky, h, ho);
                    for kx in 0..KERNEL {
                        let wt = self.w(o, ic, ky, kx);
                        let (x0, x1) = self.valid_range(kx, w, wo);
                        let mut gw = T::zero();
                        let dst = grad_in.channel_mut(ic);
                        for oy in y0..y1 {
                            let iy = oy * s + ky - p;
                            let g_row = &g[oy * wo..(oy + 1) * wo];
                            if s == 1 {
                                let off = x0 + kx - p;
                                let n = x1.saturating_sub(x0);
                                let in_row = &src[iy * w + off..iy * w + off + n];
                                let d_row = &mut dst[iy * w + off..iy * w + off + n];
                                for ((d, &iv), &gv) in d_row.iter_mut().zip(in_row).zip(&g_row[x0..x1]) {
                                    gw += gv * iv;
                                    *d += wt * gv;
                                }
                            } else {
                                for ox in x0..x1 {
                                    let ix = ox * s + kx - p;
                                    let gv = g_row[ox];
                                    gw += gv * src[iy * w + ix];
                                    dst[iy * w + ix] += wt * gv;
                                }
                            }
                        }
                        grads.weight[((o * self.in_channels + ic) * KERNEL + ky) * KERNEL + kx] += gw;
                    }
                }
            }
        }
        grad_in
    }
}

/// `(4C, H, W) → (C, 2H, 2W)` with `out[c, 2i+di, 2j+dj] = in[4c + 2di + dj, i, j]`.
pub fn depth_to_space<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    assert_eq!(input.channels() % 4, 0, "depth_to_space needs a multiple of 4 channels");
    let (c, h, w) = (input.channels() / 4, input.height(), input.width());
    let mut out = Tensor::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for di in 0..2 {
            for dj in 0..2 {
                let src = input.channel(4 * ch + 2 * di + dj);
                for i in 0..h {
                    for j in 0..w {
                        out.set(ch, 2 * i + di, 2 * j + dj, src[i * w + j]);
                    }
                }
            }
        }
    }
    out
}

/// Inverse permutation of [`depth_to_space`]; also its gradient.
pub fn space_to_depth<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    assert!(input.height() % 2 == 0 && input.width() % 2 == 0, "space_to_depth needs even dims");
    let (c, h, w) = (input.channels(), input.height() / 2, input.width() / 2);
    let mut out = Tensor::zeros(4 * c, h, w);
    for ch in 0..c {
        for di in 0..2 {
            for dj in 0..2 {
                let k = 4 * ch + 2 * di + dj;
                for i in 0..h {
                    for j in 0..w {
                        out.set(k, i, j, input.get(ch, 2 * i + di, 2 * j + dj));
                    }
                }
            }
        }
    }
    out
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let slope = T::lit(LEAKY_SLOPE);
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

/// Gradient through LeakyReLU given the pre-activation.
pub fn leaky_relu_backward<T: Scalar>(pre: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let slope = T::lit(LEAKY_SLOPE);
    pre.zip_map(grad, |p, g| if p > T::zero() { g } else { slope * g })
}
