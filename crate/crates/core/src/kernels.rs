//! Raw forward/backward kernels over `Tensor` buffers.
//!
//! Every kernel here is a pure function. Work is split across rayon tasks
//! only along axes whose outputs are disjoint, and each output element is
//! accumulated in a fixed order, so results are bit-identical to a
//! sequential run.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{strides_of, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
        }
    }
}

impl Conv2dSpec {
    /// Stride-1 convolution whose output keeps the input size for a 3x3 kernel.
    pub fn same_3x3(dilation: (usize, usize)) -> Self {
        Conv2dSpec {
            stride: (1, 1),
            padding: (dilation.0, dilation.1),
            dilation,
        }
    }
}

/// `floor((n + 2p - d(k-1) - 1) / s) + 1`, or `None` when non-positive.
pub fn conv_output_len(n: usize, k: usize, stride: usize, pad: usize, dil: usize) -> Option<usize> {
    let span = dil * (k - 1) + 1;
    let padded = n + 2 * pad;
    if padded < span {
        None
    } else {
        Some((padded - span) / stride + 1)
    }
}

struct ConvGeom {
    b: usize,
    cin: usize,
    cout: usize,
    ti: usize,
    fi: usize,
    kt: usize,
    kf: usize,
    to: usize,
    fo: usize,
    spec: Conv2dSpec,
}

impl ConvGeom {
    fn new(x: &[usize], w: &[usize], spec: Conv2dSpec) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("expected rank-4 input and kernel, got {x:?} and {w:?}"),
            ));
        }
        if x[1] != w[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels, kernel expects {}", x[1], w[1]),
            ));
        }
        let Conv2dSpec {
            stride,
            padding,
            dilation,
        } = spec;
        if stride.0 == 0 || stride.1 == 0 || dilation.0 == 0 || dilation.1 == 0 {
            return Err(Error::invalid("conv2d", "stride and dilation must be >= 1"));
        }
        let to = conv_output_len(x[2], w[2], stride.0, padding.0, dilation.0);
        let fo = conv_output_len(x[3], w[3], stride.1, padding.1, dilation.1);
        match (to, fo) {
            (Some(to), Some(fo)) => Ok(ConvGeom {
                b: x[0],
                cin: x[1],
                cout: w[0],
                ti: x[2],
                fi: x[3],
                kt: w[2],
                kf: w[3],
                to,
                fo,
                spec,
            }),
            _ => Err(Error::shape(
                "conv2d",
                format!("dilated kernel {w:?} with {spec:?} does not fit input {x:?}"),
            )),
        }
    }

    /// Input row for output row `o` and tap `k`, if inside the unpadded input.
    #[inline]
    fn in_t(&self, o: usize, k: usize) -> Option<usize> {
        let pos = (o * self.spec.stride.0 + k * self.spec.dilation.0) as isize
            - self.spec.padding.0 as isize;
        (pos >= 0 && (pos as usize) < self.ti).then_some(pos as usize)
    }

    /// Half-open range of output columns whose tap `k` lands inside the input.
    #[inline]
    fn f_range(&self, k: usize) -> (usize, usize) {
        let s = self.spec.stride.1 as isize;
        let off = (k * self.spec.dilation.1) as isize - self.spec.padding.1 as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= fi - 1
        let hi_num = self.fi as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let hi = hi.min(self.fo as isize - 1);
        if hi < lo {
            (0, 0)
        } else {
            (lo as usize, (hi + 1) as usize)
        }
    }

    #[inline]
    fn in_f(&self, o: usize, k: usize) -> usize {
        o * self.spec.stride.1 + k * self.spec.dilation.1 - self.spec.padding.1
    }
}

pub fn conv2d_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: Conv2dSpec) -> Result<Tensor> {
    let g = ConvGeom::new(x.shape(), w.shape(), spec)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{}]", b.shape(), g.cout),
            ));
        }
    }
    if spec.stride == (1, 1) {
        return Ok(padded::forward(&g, x.data(), w.data(), bias.map(|b| b.data())));
    }
    let (xd, wd) = (x.data(), w.data());
    let plane_in = g.ti * g.fi;
    let plane_out = g.to * g.fo;
    let ksize = g.kt * g.kf;
    let mut out = vec![0.0; g.b * g.cout * plane_out];
    out.par_chunks_mut(plane_out)
        .enumerate()
        .for_each(|(bc, o_plane)| {
            let (bi, co) = (bc / g.cout, bc % g.cout);
            if let Some(b) = bias {
                o_plane.fill(b.data()[co]);
            }
            for ci in 0..g.cin {
                let x_plane = &xd[(bi * g.cin + ci) * plane_in..][..plane_in];
                let w_k = &wd[(co * g.cin + ci) * ksize..][..ksize];
                for kt in 0..g.kt {
                    for kf in 0..g.kf {
                        let wv = w_k[kt * g.kf + kf];
                        let (f_lo, f_hi) = g.f_range(kf);
                        for ot in 0..g.to {
                            let Some(it) = g.in_t(ot, kt) else { continue };
                            let x_row = &x_plane[it * g.fi..][..g.fi];
                            let o_row = &mut o_plane[ot * g.fo..][..g.fo];
                            if g.spec.stride.1 == 1 {
                                let start = g.in_f(f_lo, kf);
                                let n = f_hi - f_lo;
                                for (o, &xv) in o_row[f_lo..f_hi].iter_mut().zip(&x_row[start..start + n]) {
                                    *o += wv * xv;
                                }
                            } else {
                                for of in f_lo..f_hi {
                                    o_row[of] += wv * x_row[g.in_f(of, kf)];
                                }
                            }
                        }
                    }
                }
            }
        });
    Tensor::from_vec(&[g.b, g.cout, g.to, g.fo], out)
}

/// Gradients of a conv2d with respect to input, kernel and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    spec: Conv2dSpec,
    want: (bool, bool, bool),
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let g = ConvGeom::new(x.shape(), w.shape(), spec).expect("validated in forward");
    if spec.stride == (1, 1) {
        return padded::backward(&g, x, w, grad_out, want);
    }
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    let plane_in = g.ti * g.fi;
    let plane_out = g.to * g.fo;
    let ksize = g.kt * g.kf;

    let gx = want.0.then(|| {
        let mut gx = vec![0.0; g.b * g.cin * plane_in];
        gx.par_chunks_mut(g.cin * plane_in)
            .enumerate()
            .for_each(|(bi, gx_b)| {
                for co in 0..g.cout {
                    let g_plane = &gd[(bi * g.cout + co) * plane_out..][..plane_out];
                    for ci in 0..g.cin {
                        let gx_plane = &mut gx_b[ci * plane_in..][..plane_in];
                        let w_k = &wd[(co * g.cin + ci) * ksize..][..ksize];
                        for kt in 0..g.kt {
                            for kf in 0..g.kf {
                                let wv = w_k[kt * g.kf + kf];
                                let (f_lo, f_hi) = g.f_range(kf);
                                for ot in 0..g.to {
                                    let Some(it) = g.in_t(ot, kt) else { continue };
                                    let g_row = &g_plane[ot * g.fo..][..g.fo];
                                    let gx_row = &mut gx_plane[it * g.fi..][..g.fi];
                                    if g.spec.stride.1 == 1 {
                                        let start = g.in_f(f_lo, kf);
                                        let n = f_hi - f_lo;
                                        for (o, &gv) in gx_row[start..start + n].iter_mut().zip(&g_row[f_lo..f_hi]) {
                                            *o += wv * gv;
                                        }
                                    } else {
                                        for of in f_lo..f_hi {
                                            gx_row[g.in_f(of, kf)] += wv * g_row[of];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        Tensor::from_vec(x.shape(), gx).expect("shape")
    });

    let gw = want.1.then(|| {
        let mut gw = vec![0.0; g.cout * g.cin * ksize];
        gw.par_chunks_mut(g.cin * ksize)
            .enumerate()
            .for_each(|(co, gw_co)| {
                for bi in 0..g.b {
                    let g_plane = &gd[(bi * g.cout + co) * plane_out..][..plane_out];
                    for ci in 0..g.cin {
                        let x_plane = &xd[(bi * g.cin + ci) * plane_in..][..plane_in];
                        for kt in 0..g.kt {
                            for kf in 0..g.kf {
                                let (f_lo, f_hi) = g.f_range(kf);
                                let mut acc = 0.0;
                                for ot in 0..g.to {
                                    let Some(it) = g.in_t(ot, kt) else { continue };
                                    let g_row = &g_plane[ot * g.fo..][..g.fo];
                                    let x_row = &x_plane[it * g.fi..][..g.fi];
                                    if g.spec.stride.1 == 1 {
                                        let start = g.in_f(f_lo, kf);
                                        let n = f_hi - f_lo;
                                        acc += dot(&g_row[f_lo..f_hi], &x_row[start..start + n]);
                                    } else {
                                        for of in f_lo..f_hi {
                                            acc += g_row[of] * x_row[g.in_f(of, kf)];
                                        }
                                    }
                                }
                                gw_co[ci * ksize + kt * g.kf + kf] += acc;
                            }
                        }
                    }
                }
            });
        Tensor::from_vec(w.shape(), gw).expect("shape")
    });

    let gb = want.2.then(|| {
        let mut gb = vec![0.0; g.cout];
        for bi in 0..g.b {
            for (co, acc) in gb.iter_mut().enumerate() {
                *acc += gd[(bi * g.cout + co) * plane_out..][..plane_out].iter().sum::<f64>();
            }
        }
        Tensor::from_vec(&[g.cout], gb).expect("shape")
    });

    (gx, gw, gb)
}

/// Stride-1 convolution on zero-padded planes. With the output kept at the
/// padded row width, every kernel tap is a single contiguous run over the
/// whole plane.
mod padded {
    use super::{dot, ConvGeom};
    use crate::tensor::Tensor;
    use rayon::prelude::*;

    struct Layout {
        pt: usize,
        pf: usize,
        /// padded rows and row width
        rows: usize,
        width: usize,
        /// length of the run covering every valid output cell
        run: usize,
    }

    impl Layout {
        fn new(g: &ConvGeom) -> Self {
            let (pt, pf) = g.spec.padding;
            let width = g.fi + 2 * pf;
            Layout {
                pt,
                pf,
                rows: g.ti + 2 * pt,
                width,
                run: (g.to - 1) * width + g.fo,
            }
        }

        fn plane(&self) -> usize {
            self.rows * self.width
        }

        fn offset(&self, g: &ConvGeom, kt: usize, kf: usize) -> usize {
            kt * g.spec.dilation.0 * self.width + kf * g.spec.dilation.1
        }

        fn pad(&self, g: &ConvGeom, src: &[f64], dst: &mut [f64]) {
            for t in 0..g.ti {
                let row = (t + self.pt) * self.width + self.pf;
                dst[row..row + g.fi].copy_from_slice(&src[t * g.fi..(t + 1) * g.fi]);
            }
        }

        /// Output plane `[to, fo]` into padded-width rows.
        fn widen(&self, g: &ConvGeom, src: &[f64], dst: &mut [f64]) {
            for t in 0..g.to {
                dst[t * self.width..t * self.width + g.fo].copy_from_slice(&src[t * g.fo..(t + 1) * g.fo]);
            }
        }
    }

    fn padded_input(g: &ConvGeom, l: &Layout, xd: &[f64]) -> Vec<f64> {
        let (plane_in, plane) = (g.ti * g.fi, l.plane());
        let mut p = vec![0.0; g.b * g.cin * plane];
        p.par_chunks_mut(plane).enumerate().for_each(|(i, dst)| {
            l.pad(g, &xd[i * plane_in..(i + 1) * plane_in], dst);
        });
        p
    }

    pub(super) fn forward(g: &ConvGeom, xd: &[f64], wd: &[f64], bias: Option<&[f64]>) -> Tensor {
        let l = Layout::new(g);
        let plane = l.plane();
        let ksize = g.kt * g.kf;
        let p = padded_input(g, &l, xd);
        let plane_out = g.to * g.fo;
        let mut out = vec![0.0; g.b * g.cout * plane_out];
        out.par_chunks_mut(plane_out).enumerate().for_each(|(bc, o_plane)| {
            let (bi, co) = (bc / g.cout, bc % g.cout);
            let mut wide = vec![0.0; l.run];
            for ci in 0..g.cin {
                let src = &p[(bi * g.cin + ci) * plane..][..plane];
                let w_k = &wd[(co * g.cin + ci) * ksize..][..ksize];
                for kt in 0..g.kt {
                    for kf in 0..g.kf {
                        let wv = w_k[kt * g.kf + kf];
                        let off = l.offset(g, kt, kf);
                        for (o, &xv) in wide.iter_mut().zip(&src[off..off + l.run]) {
                            *o += wv * xv;
                        }
                    }
                }
            }
            let b0 = bias.map_or(0.0, |b| b[co]);
            for t in 0..g.to {
                for (o, &v) in o_plane[t * g.fo..(t + 1) * g.fo].iter_mut().zip(&wide[t * l.width..]) {
                    *o = b0 + v;
                }
            }
        });
        Tensor::from_vec(&[g.b, g.cout, g.to, g.fo], out).expect("shape")
    }

    pub(super) fn backward(
        g: &ConvGeom,
        x: &Tensor,
        w: &Tensor,
        grad_out: &Tensor,
        want: (bool, bool, bool),
    ) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
        let l = Layout::new(g);
        let plane = l.plane();
        let ksize = g.kt * g.kf;
        let plane_out = g.to * g.fo;
        let (wd, gd) = (w.data(), grad_out.data());
        let mut gwide = vec![0.0; g.b * g.cout * plane];
        gwide.par_chunks_mut(plane).enumerate().for_each(|(i, dst)| {
            l.widen(g, &gd[i * plane_out..(i + 1) * plane_out], dst);
        });

        let gx = want.0.then(|| {
            let plane_in = g.ti * g.fi;
            let mut gx = vec![0.0; g.b * g.cin * plane_in];
            gx.par_chunks_mut(plane_in).enumerate().for_each(|(bc, gx_plane)| {
                let (bi, ci) = (bc / g.cin, bc % g.cin);
                let mut acc = vec![0.0; plane];
                for co in 0..g.cout {
                    let gw_plane = &gwide[(bi * g.cout + co) * plane..][..l.run];
                    let w_k = &wd[(co * g.cin + ci) * ksize..][..ksize];
                    for kt in 0..g.kt {
                        for kf in 0..g.kf {
                            let wv = w_k[kt * g.kf + kf];
                            let off = l.offset(g, kt, kf);
                            for (a, &gv) in acc[off..off + l.run].iter_mut().zip(gw_plane) {
                                *a += wv * gv;
                            }
                        }
                    }
                }
                for t in 0..g.ti {
                    let row = (t + l.pt) * l.width + l.pf;
                    gx_plane[t * g.fi..(t + 1) * g.fi].copy_from_slice(&acc[row..row + g.fi]);
                }
            });
            Tensor::from_vec(x.shape(), gx).expect("shape")
        });

        let gw = want.1.then(|| {
            let p = padded_input(g, &l, x.data());
            let mut gw = vec![0.0; g.cout * g.cin * ksize];
            gw.par_chunks_mut(ksize).enumerate().for_each(|(oc, gw_k)| {
                let (co, ci) = (oc / g.cin, oc % g.cin);
                for bi in 0..g.b {
                    let gw_plane = &gwide[(bi * g.cout + co) * plane..][..l.run];
                    let src = &p[(bi * g.cin + ci) * plane..][..plane];
                    for kt in 0..g.kt {
                        for kf in 0..g.kf {
                            let off = l.offset(g, kt, kf);
                            gw_k[kt * g.kf + kf] += dot(gw_plane, &src[off..off + l.run]);
                        }
                    }
                }
            });
            Tensor::from_vec(w.shape(), gw).expect("shape")
        });

        let gb = want.2.then(|| {
            let mut gb = vec![0.0; g.cout];
            for bi in 0..g.b {
                for (co, acc) in gb.iter_mut().enumerate() {
                    *acc += gd[(bi * g.cout + co) * plane_out..][..plane_out].iter().sum::<f64>();
                }
            }
            Tensor::from_vec(&[g.cout], gb).expect("shape")
        });

        (gx, gw, gb)
    }
}

/// Four-lane dot product; the fixed lane split keeps the summation order
/// independent of the caller.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            lanes[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for i in 4 * chunks..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_forward(x: &Tensor, axis: usize, temperature: f64) -> Tensor {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| xd[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for k in 0..n {
                let e = ((xd[idx(k)] - max) / temperature).exp();
                out[idx(k)] = e;
                denom += e;
            }
            for k in 0..n {
                out[idx(k)] /= denom;
            }
        }
    }
    Tensor::from_vec(x.shape(), out).expect("shape")
}

pub fn softmax_backward(y: &Tensor, grad_out: &Tensor, axis: usize, temperature: f64) -> Tensor {
    let (outer, n, inner) = axis_split(y.shape(), axis);
    let (yd, gd) = (y.data(), grad_out.data());
    let mut gx = vec![0.0; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let dot: f64 = (0..n).map(|k| yd[idx(k)] * gd[idx(k)]).sum();
            for k in 0..n {
                gx[idx(k)] = yd[idx(k)] * (gd[idx(k)] - dot) / temperature;
            }
        }
    }
    Tensor::from_vec(y.shape(), gx).expect("shape")
}

pub fn sum_axis(x: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            let src = &xd[(o * n + k) * inner..][..inner];
            for (acc, v) in out[o * inner..][..inner].iter_mut().zip(src) {
                *acc += v;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    if shape.is_empty() {
        shape.push(1);
    }
    Tensor::from_vec(&shape, out).expect("shape")
}

/// Broadcasts a reduced tensor back along `axis` of `full_shape`, scaled.
pub fn expand_axis(g: &Tensor, full_shape: &[usize], axis: usize, scale: f64) -> Tensor {
    let (outer, n, inner) = axis_split(full_shape, axis);
    let gd = g.data();
    let mut out = vec![0.0; outer * n * inner];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                out[(o * n + k) * inner + i] = gd[o * inner + i] * scale;
            }
        }
    }
    Tensor::from_vec(full_shape, out).expect("shape")
}

pub fn avg_pool2d_forward(x: &Tensor, window: (usize, usize)) -> Tensor {
    let s = x.shape();
    let (bc, t, f) = (s[0] * s[1], s[2], s[3]);
    let (wt, wf) = window;
    let (to, fo) = (t / wt, f / wf);
    let xd = x.data();
    let scale = 1.0 / (wt * wf) as f64;
    let mut out = vec![0.0; bc * to * fo];
    for p in 0..bc {
        for ot in 0..to {
            for of in 0..fo {
                let mut acc = 0.0;
                for dt in 0..wt {
                    for df in 0..wf {
                        acc += xd[(p * t + ot * wt + dt) * f + of * wf + df];
                    }
                }
                out[(p * to + ot) * fo + of] = acc * scale;
            }
        }
    }
    Tensor::from_vec(&[s[0], s[1], to, fo], out).expect("shape")
}

pub fn avg_pool2d_backward(in_shape: &[usize], grad_out: &Tensor, window: (usize, usize)) -> Tensor {
    let (bc, t, f) = (in_shape[0] * in_shape[1], in_shape[2], in_shape[3]);
    let (wt, wf) = window;
    let (to, fo) = (t / wt, f / wf);
    let gd = grad_out.data();
    let scale = 1.0 / (wt * wf) as f64;
    let mut gx = vec![0.0; bc * t * f];
    for p in 0..bc {
        for it in 0..t {
            for jf in 0..f {
                gx[(p * t + it) * f + jf] = gd[(p * to + it / wt) * fo + jf / wf] * scale;
            }
        }
    }
    Tensor::from_vec(in_shape, gx).expect("shape")
}

pub fn permute(x: &Tensor, perm: &[usize]) -> Tensor {
    let in_shape = x.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = strides_of(in_shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let xd = x.data();
    let n = xd.len();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(xd[src]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::from_vec(&out_shape, out).expect("shape")
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `y[n, o] = sum_i x[n, i] * w[o, i] + b[o]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[0];
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; n * dout];
    out.par_chunks_mut(dout).enumerate().for_each(|(r, row)| {
        let xr = &xd[r * din..][..din];
        for (o, y) in row.iter_mut().enumerate() {
            let wr = &wd[o * din..][..din];
            let mut acc = b.map_or(0.0, |b| b.data()[o]);
            for (a, c) in xr.iter().zip(wr) {
                acc += a * c;
            }
            *y = acc;
        }
    });
    Tensor::from_vec(&[n, dout], out).expect("shape")
}

pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    want: (bool, bool, bool),
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[0];
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    let gx = want.0.then(|| {
        let mut gx = vec![0.0; n * din];
        gx.par_chunks_mut(din).enumerate().for_each(|(r, row)| {
            for o in 0..dout {
                let gv = gd[r * dout + o];
                for (acc, wv) in row.iter_mut().zip(&wd[o * din..][..din]) {
                    *acc += gv * wv;
                }
            }
        });
        Tensor::from_vec(&[n, din], gx).expect("shape")
    });
    let gw = want.1.then(|| {
        let mut gw = vec![0.0; dout * din];
        gw.par_chunks_mut(din).enumerate().for_each(|(o, row)| {
            for r in 0..n {
                let gv = gd[r * dout + o];
                for (acc, xv) in row.iter_mut().zip(&xd[r * din..][..din]) {
                    *acc += gv * xv;
                }
            }
        });
        Tensor::from_vec(&[dout, din], gw).expect("shape")
    });
    let gb = want.2.then(|| {
        let mut gb = vec![0.0; dout];
        for r in 0..n {
            for (o, acc) in gb.iter_mut().enumerate() {
                *acc += gd[r * dout + o];
            }
        }
        Tensor::from_vec(&[dout], gb).expect("shape")
    });
    (gx, gw, gb)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
