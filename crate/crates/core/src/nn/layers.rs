//! Layers with explicit forward/backward passes over batch-major buffers.
//! Feature maps are laid out `[batch, channel, height, width]`.

use rand::Rng;

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use super::param::Param;
use crate::scalar::Scalar;

pub const LEAK: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl<F: Scalar> Linear<F> {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let std = gain / (fan_in as f64).sqrt();
        Linear {
            weight: Param::normal(format!("{name}.weight"), &[fan_out, fan_in], std, rng),
            bias: Param::zeros(format!("{name}.bias"), &[fan_out]),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, x: &[F], batch: usize) -> Vec<F> {
        debug_assert_eq!(x.len(), batch * self.fan_in);
        let mut y = Vec::with_capacity(batch * self.fan_out);
        for _ in 0..batch {
            y.extend_from_slice(&self.bias.value);
        }
        gemm_nt(
            batch,
            self.fan_in,
            self.fan_out,
            x,
            &self.weight.value,
            &mut y,
        );
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &[F], dy: &[F], batch: usize) -> Vec<F> {
        gemm_tn(
            self.fan_out,
            batch,
            self.fan_in,
            dy,
            x,
            &mut self.weight.grad,
        );
        for row in dy.chunks_exact(self.fan_out) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![F::zero(); batch * self.fan_in];
        gemm_nn(
            batch,
            self.fan_out,
            self.fan_in,
            dy,
            &self.weight.value,
            &mut dx,
        );
        dx
    }

    pub fn params(&self) -> [&Param<F>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<F>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Square-kernel convolution via im2col.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Saved im2col matrices of one forward call.
#[derive(Debug, Clone)]
pub struct ConvCache<F> {
    cols: Vec<F>,
    h: usize,
    w: usize,
}

impl<F: Scalar> Conv2d<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let std = gain / (fan_in as f64).sqrt();
        Conv2d {
            weight: Param::normal(format!("{name}.weight"), &[out_channels, fan_in], std, rng),
            bias: Param::zeros(format!("{name}.bias"), &[out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn im2col(&self, x: &[F], h: usize, w: usize, cols: &mut [F]) {
        let (oh, ow) = self.output_hw(h, w);
        let k = self.kernel;
        let p = oh * ow;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let out = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            out[oy * ow + ox] =
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    plane[iy as usize * w + ix as usize]
                                } else {
                                    F::zero()
                                };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[F], h: usize, w: usize, dx: &mut [F]) {
        let (oh, ow) = self.output_hw(h, w);
        let k = self.kernel;
        let p = oh * ow;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && (ix as usize) < w {
                                plane[iy as usize * w + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &[F], batch: usize, h: usize, w: usize) -> (Vec<F>, ConvCache<F>) {
        let (oh, ow) = self.output_hw(h, w);
        let p = oh * ow;
        let rows = self.in_channels * self.kernel * self.kernel;
        let in_len = self.in_channels * h * w;
        let out_len = self.out_channels * p;
        debug_assert_eq!(x.len(), batch * in_len);
        let mut cols = vec![F::zero(); batch * rows * p];
        let mut y = vec![F::zero(); batch * out_len];
        for b in 0..batch {
            let col = &mut cols[b * rows * p..(b + 1) * rows * p];
            self.im2col(&x[b * in_len..(b + 1) * in_len], h, w, col);
            let out = &mut y[b * out_len..(b + 1) * out_len];
            for (o, plane) in out.chunks_exact_mut(p).enumerate() {
                plane.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            gemm_nn(self.out_channels, rows, p, &self.weight.value, col, out);
        }
        (y, ConvCache { cols, h, w })
    }

    pub fn backward(&mut self, cache: &ConvCache<F>, dy: &[F], batch: usize) -> Vec<F> {
        let (h, w) = (cache.h, cache.w);
        let (oh, ow) = self.output_hw(h, w);
        let p = oh * ow;
        let rows = self.in_channels * self.kernel * self.kernel;
        let in_len = self.in_channels * h * w;
        let out_len = self.out_channels * p;
        let mut dx = vec![F::zero(); batch * in_len];
        let mut dcol = vec![F::zero(); rows * p];
        for b in 0..batch {
            let d = &dy[b * out_len..(b + 1) * out_len];
            let col = &cache.cols[b * rows * p..(b + 1) * rows * p];
            gemm_nt(self.out_channels, p, rows, d, col, &mut self.weight.grad);
            for (o, plane) in d.chunks_exact(p).enumerate() {
                self.bias.grad[o] += plane.iter().copied().sum::<F>();
            }
            dcol.iter_mut().for_each(|v| *v = F::zero());
            gemm_tn(rows, self.out_channels, p, &self.weight.value, d, &mut dcol);
            self.col2im(&dcol, h, w, &mut dx[b * in_len..(b + 1) * in_len]);
        }
        dx
    }

    /// Parameter gradients only, for layers whose input needs no gradient.
    pub fn backward_params(&mut self, cache: &ConvCache<F>, dy: &[F], batch: usize) {
        let (oh, ow) = self.output_hw(cache.h, cache.w);
        let p = oh * ow;
        let rows = self.in_channels * self.kernel * self.kernel;
        let out_len = self.out_channels * p;
        for b in 0..batch {
            let d = &dy[b * out_len..(b + 1) * out_len];
            let col = &cache.cols[b * rows * p..(b + 1) * rows * p];
            gemm_nt(self.out_channels, p, rows, d, col, &mut self.weight.grad);
            for (o, plane) in d.chunks_exact(p).enumerate() {
                self.bias.grad[o] += plane.iter().copied().sum::<F>();
            }
        }
    }

    pub fn params(&self) -> [&Param<F>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<F>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Nearest-neighbour 2× upsampling of `[batch·channels, h, w]` planes.
pub fn upsample2x<F: Scalar>(x: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = vec![F::zero(); planes * oh * ow];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        let dst = &mut y[pl * oh * ow..(pl + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[oy * ow + ox] = src[(oy / 2) * w + ox / 2];
            }
        }
    }
    y
}

pub fn upsample2x_backward<F: Scalar>(dy: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![F::zero(); planes * h * w];
    for pl in 0..planes {
        let src = &dy[pl * oh * ow..(pl + 1) * oh * ow];
        let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[(oy / 2) * w + ox / 2] += src[oy * ow + ox];
            }
        }
    }
    dx
}

pub fn leaky_relu<F: Scalar>(x: &mut [F]) {
    let a = F::lit(LEAK);
    for v in x.iter_mut() {
        if *v < F::zero() {
            *v *= a;
        }
    }
}

/// `y` is the activation output; its sign equals the input's sign.
pub fn leaky_relu_backward<F: Scalar>(y: &[F], dy: &mut [F]) {
    let a = F::lit(LEAK);
    for (d, &v) in dy.iter_mut().zip(y) {
        if v < F::zero() {
            *d *= a;
        }
    }
}

pub fn tanh_inplace<F: Scalar>(x: &mut [F]) {
    x.iter_mut().for_each(|v| *v = v.tanh());
}

pub fn tanh_backward<F: Scalar>(y: &[F], dy: &mut [F]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        *d *= F::one() - v * v;
    }
}
