//! Stride-1 2-D convolution lowered to GEMM via im2col.

use crate::autodiff::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output extent of a stride-1 convolution, if positive.
pub fn conv2d_output_size(input: usize, kernel: usize, padding: usize) -> Option<usize> {
    (input + 2 * padding + 1)
        .checked_sub(kernel)
        .filter(|&n| n > 0)
}

struct Geometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1 unpadded kernels read the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0
    }

    fn from_shapes(x: &[usize], w: &[usize], b: &[usize], pad: usize) -> Result<Self> {
        let &[batch, c_in, h, wd] = x else {
            return Err(Error::shape(
                "conv2d",
                format!("input must be [B, Cin, H, W], got {x:?}"),
            ));
        };
        let &[c_out, w_cin, kh, kw] = w else {
            return Err(Error::shape(
                "conv2d",
                format!("weight must be [Cout, Cin, kH, kW], got {w:?}"),
            ));
        };
        if w_cin != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c_in} channels but weight expects {w_cin}"),
            ));
        }
        if b != [c_out] {
            return Err(Error::shape(
                "conv2d",
                format!("bias must be [{c_out}], got {b:?}"),
            ));
        }
        let (Some(oh), Some(ow)) = (
            conv2d_output_size(h, kh, pad),
            conv2d_output_size(wd, kw, pad),
        ) else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} with padding {pad} does not fit a {h}x{wd} input"),
            ));
        };
        Ok(Self {
            batch,
            c_in,
            h,
            w: wd,
            c_out,
            kh,
            kw,
            pad,
            oh,
            ow,
        })
    }
}

/// Unfolds one `[C, H, W]` image into a `[C*kH*kW, OH*OW]` column matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    image: &[T],
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    cols: &mut [T],
) {
    let oh = conv2d_output_size(h, kh, pad).expect("kernel fits");
    let ow = conv2d_output_size(w, kw, pad).expect("kernel fits");
    let plane = oh * ow;
    for c in 0..channels {
        let src = &image[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy + ki) as isize - pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    // ix = ox + kj - pad must land in [0, w).
                    let lo = pad.saturating_sub(kj).min(ow);
                    let hi = (w + pad).saturating_sub(kj).min(ow).max(lo);
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if hi > lo {
                        let start = lo + kj - pad;
                        line[lo..hi].copy_from_slice(&src_row[start..start + (hi - lo)]);
                    }
                }
            }
        }
    }
}

/// Adds a column matrix back onto a `[C, H, W]` image (adjoint of im2col).
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    image: &mut [T],
) {
    let oh = conv2d_output_size(h, kh, pad).expect("kernel fits");
    let ow = conv2d_output_size(w, kw, pad).expect("kernel fits");
    let plane = oh * ow;
    for c in 0..channels {
        let dst = &mut image[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let lo = pad.saturating_sub(kj).min(ow);
                    let hi = (w + pad).saturating_sub(kj).min(ow).max(lo);
                    if hi == lo {
                        continue;
                    }
                    let start = lo + kj - pad;
                    let dst_row =
                        &mut dst[iy as usize * w + start..iy as usize * w + start + (hi - lo)];
                    for (d, &s) in dst_row.iter_mut().zip(&src[oy * ow + lo..oy * ow + hi]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Stride-1 convolution of `[B, Cin, H, W]` with `[Cout, Cin, kH, kW]`
    /// weights, zero padding on every side.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: usize) -> Result<Var> {
        let x = self.value(input);
        let wt = self.value(weight);
        let b = self.value(bias);
        let g = Geometry::from_shapes(x.shape(), wt.shape(), b.shape(), padding)?;

        let in_sample = g.c_in * g.h * g.w;
        let out_sample = g.c_out * g.out_plane();
        let mut out = vec![T::zero(); g.batch * out_sample];
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); g.col_rows() * g.out_plane()]
        };
        for n in 0..g.batch {
            let image = &x.data()[n * in_sample..(n + 1) * in_sample];
            let col_matrix = if g.is_pointwise() {
                image
            } else {
                im2col(image, g.c_in, g.h, g.w, g.kh, g.kw, g.pad, &mut cols);
                &cols[..]
            };
            let dst = &mut out[n * out_sample..(n + 1) * out_sample];
            for (row, &bias) in dst.chunks_exact_mut(g.out_plane()).zip(b.data()) {
                row.fill(bias);
            }
            T::gemm(
                g.c_out,
                g.col_rows(),
                g.out_plane(),
                wt.data(),
                false,
                col_matrix,
                false,
                dst,
                T::one(),
            );
        }
        let value = Tensor::new([g.batch, g.c_out, g.oh, g.ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
            },
        ))
    }
}

pub(crate) fn backward<T: Scalar>(
    input: Var,
    weight: Var,
    bias: Var,
    padding: usize,
    grad: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let x = sink.value(input);
    let wt = sink.value(weight);
    let g = Geometry::from_shapes(x.shape(), wt.shape(), sink.value(bias).shape(), padding)
        .expect("shapes validated in forward");
    let in_sample = g.c_in * g.h * g.w;
    let out_sample = g.c_out * g.out_plane();
    let k = g.col_rows();
    let plane = g.out_plane();

    let want_x = sink.wants(input);
    let want_w = sink.wants(weight);
    let want_b = sink.wants(bias);

    let mut dw = vec![T::zero(); if want_w { g.c_out * k } else { 0 }];
    let mut db = vec![T::zero(); g.c_out];
    let mut dx = vec![T::zero(); if want_x { x.numel() } else { 0 }];
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { k * plane }];
    let mut dcols = vec![
        T::zero();
        if want_x && !g.is_pointwise() {
            k * plane
        } else {
            0
        }
    ];

    for n in 0..g.batch {
        let dy = &grad.data()[n * out_sample..(n + 1) * out_sample];
        if want_b {
            for (acc, row) in db.iter_mut().zip(dy.chunks_exact(plane)) {
                *acc = *acc + row.iter().copied().sum::<T>();
            }
        }
        if want_w {
            let image = &x.data()[n * in_sample..(n + 1) * in_sample];
            let col_matrix = if g.is_pointwise() {
                image
            } else {
                im2col(image, g.c_in, g.h, g.w, g.kh, g.kw, g.pad, &mut cols);
                &cols[..]
            };
            T::gemm(
                g.c_out,
                plane,
                k,
                dy,
                false,
                col_matrix,
                true,
                &mut dw,
                T::one(),
            );
        }
        if want_x {
            let dst = &mut dx[n * in_sample..(n + 1) * in_sample];
            if g.is_pointwise() {
                T::gemm(
                    k,
                    g.c_out,
                    plane,
                    wt.data(),
                    true,
                    dy,
                    false,
                    dst,
                    T::zero(),
                );
            } else {
                T::gemm(
                    k,
                    g.c_out,
                    plane,
                    wt.data(),
                    true,
                    dy,
                    false,
                    &mut dcols,
                    T::zero(),
                );
                col2im(&dcols, g.c_in, g.h, g.w, g.kh, g.kw, g.pad, dst);
            }
        }
    }

    if want_x {
        sink.add(input, Tensor::new(x.shape(), dx).expect("input shape"));
    }
    if want_w {
        let shape = wt.shape().to_vec();
        sink.add(weight, Tensor::new(shape, dw).expect("weight shape"));
    }
    if want_b {
        sink.add(bias, Tensor::new([g.c_out], db).expect("bias shape"));
    }
}
