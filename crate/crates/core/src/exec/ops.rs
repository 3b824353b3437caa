//! Per-sample convolution kernels (im2col + GEMM) and batch-norm math.

use ndarray::{s, Array1, Array2, Array4, ArrayView2, ArrayView3, Axis};

use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;

/// Geometry of a convolution mapping a `(h, w)` map to `(oh, ow)`.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        let span_h = (h + 2 * pad).checked_sub(k)?;
        let span_w = (w + 2 * pad).checked_sub(k)?;
        Some(ConvGeom { channels, h, w, k, stride, pad, oh: span_h / stride + 1, ow: span_w / stride + 1 })
    }

    fn identity(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    /// For kernel offset `kk` and output index `o`, the input index, if any.
    #[inline]
    fn src(o: usize, kk: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let i = (o * stride + kk).checked_sub(pad)?;
        (i < len).then_some(i)
    }
}

/// `(c, h, w)` -> `(c*k*k, oh*ow)`.
pub fn im2col<T: Scalar>(x: ArrayView3<T>, g: &ConvGeom) -> Array2<T> {
    if g.identity() {
        return x.to_owned().into_shape_with_order((g.channels, g.h * g.w)).expect("contiguous");
    }
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let mut cols = Array2::<T>::zeros((g.rows(), g.oh * g.ow));
    let cs = cols.as_slice_mut().expect("fresh array");
    let plane = g.h * g.w;
    let ncol = g.oh * g.ow;
    for c in 0..g.channels {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cs[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let Some(iy) = ConvGeom::src(oy, ki, g.stride, g.pad, g.h) else { continue };
                    let src = &xs[c * plane + iy * g.w..c * plane + (iy + 1) * g.w];
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        if let Some(ix) = ConvGeom::src(ox, kj, g.stride, g.pad, g.w) {
                            *d = src[ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into a `(c, h, w)` map.
pub fn col2im<T: Scalar>(cols: ArrayView2<T>, g: &ConvGeom) -> ndarray::Array3<T> {
    if g.identity() {
        return cols.to_owned().into_shape_with_order((g.channels, g.h, g.w)).expect("contiguous");
    }
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let mut x = ndarray::Array3::<T>::zeros((g.channels, g.h, g.w));
    let xs = x.as_slice_mut().expect("fresh array");
    let plane = g.h * g.w;
    let ncol = g.oh * g.ow;
    for c in 0..g.channels {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cs[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let Some(iy) = ConvGeom::src(oy, ki, g.stride, g.pad, g.h) else { continue };
                    let dst = &mut xs[c * plane + iy * g.w..c * plane + (iy + 1) * g.w];
                    let srow = &src[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, &v) in srow.iter().enumerate() {
                        if let Some(ix) = ConvGeom::src(ox, kj, g.stride, g.pad, g.w) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Conv forward. `weight` is `(out, in*k*k)`.
pub fn conv_forward<T: Scalar>(
    x: &Array4<T>,
    weight: ArrayView2<T>,
    bias: Option<&Array1<T>>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    let g = ConvGeom::new(c, h, w, k, stride, pad).expect("validated geometry");
    let out_c = weight.nrows();
    let mut y = Array4::<T>::zeros((n, out_c, g.oh, g.ow));
    for b in 0..n {
        let cols = im2col(x.index_axis(Axis(0), b), &g);
        let mut out = weight.dot(&cols);
        if let Some(bias) = bias {
            for (mut row, &bv) in out.rows_mut().into_iter().zip(bias.iter()) {
                row.mapv_inplace(|v| v + bv);
            }
        }
        y.index_axis_mut(Axis(0), b)
            .assign(&out.into_shape_with_order((out_c, g.oh, g.ow)).expect("contiguous"));
    }
    y
}

/// Returns `(dx, dweight, dbias)` for [`conv_forward`].
pub fn conv_backward<T: Scalar>(
    x: &Array4<T>,
    weight: ArrayView2<T>,
    dy: &Array4<T>,
    k: usize,
    stride: usize,
    pad: usize,
    want_bias: bool,
) -> (Array4<T>, Array2<T>, Option<Array1<T>>) {
    let (n, c, h, w) = x.dim();
    let g = ConvGeom::new(c, h, w, k, stride, pad).expect("validated geometry");
    let out_c = weight.nrows();
    let mut dx = Array4::<T>::zeros((n, c, h, w));
    let mut dw = Array2::<T>::zeros(weight.dim());
    let wt = weight.t();
    for b in 0..n {
        let cols = im2col(x.index_axis(Axis(0), b), &g);
        let dyb = dy.index_axis(Axis(0), b);
        let dyb = dyb.as_standard_layout();
        let dyb = dyb.view().into_shape_with_order((out_c, g.oh * g.ow)).expect("contiguous");
        dw = dw + dyb.dot(&cols.t());
        let dcols = wt.dot(&dyb);
        dx.index_axis_mut(Axis(0), b).assign(&col2im(dcols.view(), &g));
    }
    let db = want_bias.then(|| dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0)));
    (dx, dw, db)
}

/// Transposed conv forward, output side = input side * stride. `weight` is
/// `(in, out*k*k)`.
pub fn tconv_forward<T: Scalar>(
    x: &Array4<T>,
    weight: ArrayView2<T>,
    bias: Option<&Array1<T>>,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    let g = ConvGeom::new(out_c, h * stride, w * stride, k, stride, pad).expect("validated geometry");
    debug_assert_eq!((g.oh, g.ow), (h, w));
    let wt = weight.t();
    let mut y = Array4::<T>::zeros((n, out_c, g.h, g.w));
    for b in 0..n {
        let xb = x.index_axis(Axis(0), b);
        let xb = xb.as_standard_layout();
        let xb = xb.view().into_shape_with_order((c, h * w)).expect("contiguous");
        let cols = wt.dot(&xb);
        let mut out = col2im(cols.view(), &g);
        if let Some(bias) = bias {
            for (mut plane, &bv) in out.outer_iter_mut().zip(bias.iter()) {
                plane.mapv_inplace(|v| v + bv);
            }
        }
        y.index_axis_mut(Axis(0), b).assign(&out);
    }
    y
}

pub fn tconv_backward<T: Scalar>(
    x: &Array4<T>,
    weight: ArrayView2<T>,
    dy: &Array4<T>,
    k: usize,
    stride: usize,
    pad: usize,
    want_bias: bool,
) -> (Array4<T>, Array2<T>, Option<Array1<T>>) {
    let (n, c, h, w) = x.dim();
    let out_c = dy.dim().1;
    let g = ConvGeom::new(out_c, h * stride, w * stride, k, stride, pad).expect("validated geometry");
    let mut dx = Array4::<T>::zeros((n, c, h, w));
    let mut dw = Array2::<T>::zeros(weight.dim());
    for b in 0..n {
        let dcols = im2col(dy.index_axis(Axis(0), b), &g);
        let xb = x.index_axis(Axis(0), b);
        let xb = xb.as_standard_layout();
        let xb = xb.view().into_shape_with_order((c, h * w)).expect("contiguous");
        dw = dw + xb.dot(&dcols.t());
        let dxb = weight.dot(&dcols);
        dx.index_axis_mut(Axis(0), b)
            .assign(&dxb.into_shape_with_order((c, h, w)).expect("contiguous"));
    }
    let db = want_bias.then(|| dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0)));
    (dx, dw, db)
}

/// Per-channel biased mean and variance over `(n, h, w)`.
pub fn channel_moments<T: Scalar>(x: &Array4<T>) -> (Array1<T>, Array1<T>) {
    let (n, c, h, w) = x.dim();
    let count = T::of((n * h * w) as f64);
    let mut mean = Array1::<T>::zeros(c);
    let mut var = Array1::<T>::zeros(c);
    for ch in 0..c {
        let view = x.slice(s![.., ch, .., ..]);
        let m = view.iter().copied().sum::<T>() / count;
        let v = view.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / count;
        mean[ch] = m;
        var[ch] = v;
    }
    (mean, var)
}

/// Normalizes with the given statistics; returns `(y, xhat, inv_std)`.
pub fn bn_apply<T: Scalar>(
    x: &Array4<T>,
    mean: &Array1<T>,
    var: &Array1<T>,
    gamma: &Array1<T>,
    beta: &Array1<T>,
) -> (Array4<T>, Array4<T>, Array1<T>) {
    let eps = T::of(BN_EPS);
    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
    let mut xhat = x.clone();
    let mut y = x.clone();
    for ch in 0..x.dim().1 {
        let (m, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
        xhat.slice_mut(s![.., ch, .., ..]).mapv_inplace(|v| (v - m) * is);
        y.slice_mut(s![.., ch, .., ..]).zip_mut_with(&xhat.slice(s![.., ch, .., ..]), |o, &xh| *o = g * xh + b);
    }
    (y, xhat, inv_std)
}

/// Batch-statistics backward; returns `(dx, dgamma, dbeta)`.
pub fn bn_backward<T: Scalar>(
    dy: &Array4<T>,
    xhat: &Array4<T>,
    inv_std: &Array1<T>,
    gamma: &Array1<T>,
) -> (Array4<T>, Array1<T>, Array1<T>) {
    let (n, c, h, w) = dy.dim();
    let count = T::of((n * h * w) as f64);
    let mut dx = Array4::<T>::zeros(dy.dim());
    let mut dgamma = Array1::<T>::zeros(c);
    let mut dbeta = Array1::<T>::zeros(c);
    for ch in 0..c {
        let dyc = dy.slice(s![.., ch, .., ..]);
        let xc = xhat.slice(s![.., ch, .., ..]);
        let sum_dy = dyc.iter().copied().sum::<T>();
        let sum_dy_xhat = dyc.iter().zip(xc.iter()).map(|(&a, &b)| a * b).sum::<T>();
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let scale = gamma[ch] * inv_std[ch] / count;
        let mut dxc = dx.slice_mut(s![.., ch, .., ..]);
        ndarray::Zip::from(&mut dxc).and(&dyc).and(&xc).for_each(|o, &d, &xh| {
            *o = scale * (count * d - sum_dy - xh * sum_dy_xhat);
        });
    }
    (dx, dgamma, dbeta)
}
