//! Forward and backward numerical kernels shared by the tape.
//!
//! Convolution runs through im2col + GEMM. [`conv2d_reference`] is the direct
//! loop implementation that the fast path is checked against.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{dim_err, Result};

/// `c = alpha * a·b + beta * c` over strided row/column views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |rows: usize, cols: usize, rs: usize, cs: usize| {
        (rows.saturating_sub(1)) * rs + (cols.saturating_sub(1)) * cs + 1
    };
    assert!(k == 0 || a.len() >= extent(m, k, rsa, csa), "gemm: lhs too short");
    assert!(k == 0 || b.len() >= extent(k, n, rsb, csb), "gemm: rhs too short");
    assert!(c.len() >= extent(m, n, rsc, csc), "gemm: output too short");
    // SAFETY: the assertions above bound every address dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Sigmoid,
    Tanh,
    Relu,
}

impl Elementwise {
    pub fn is_binary(self) -> bool {
        matches!(self, Elementwise::Add | Elementwise::Sub | Elementwise::Mul)
    }

    pub fn apply(self, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
        match (self, b) {
            (Elementwise::Add, Some(b)) => binary(a, b, "add", |x, y| x + y),
            (Elementwise::Sub, Some(b)) => binary(a, b, "sub", |x, y| x - y),
            (Elementwise::Mul, Some(b)) => binary(a, b, "mul", |x, y| x * y),
            (op, Some(_)) => Err(dim_err!("{op:?} is unary but two operands were given")),
            (op, None) if op.is_binary() => Err(dim_err!("{op:?} needs two operands, got one")),
            (Elementwise::Scale(s), None) => Ok(a.map(|x| s * x)),
            (Elementwise::Sigmoid, None) => Ok(a.map(sigmoid)),
            (Elementwise::Tanh, None) => Ok(a.map(f64::tanh)),
            (Elementwise::Relu, None) => Ok(a.map(|x| x.max(0.0))),
            _ => unreachable!(),
        }
    }
}

fn binary(a: &Tensor, b: &Tensor, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(dim_err!(
            "{name}: operand shapes differ, {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    a.zip_map(b, f)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits `x` into `(rows, d_in)` where rows is the product of all leading axes.
fn dense_rows(x: &Tensor, d_in: usize) -> Result<usize> {
    let last = *x.shape().last().unwrap();
    if last != d_in {
        return Err(dim_err!(
            "dense: input {:?} has inner dimension {last}, weight expects {d_in}",
            x.shape()
        ));
    }
    Ok(x.len() / d_in)
}

/// `out[.., j] = Σ_i x[.., i] w[i, j] + b[j]`; leading axes of `x` are batch axes.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.ndim() != 2 {
        return Err(dim_err!("dense: weight must be 2-D, got {:?}", w.shape()));
    }
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    if b.len() != d_out {
        return Err(dim_err!(
            "dense: bias {:?} does not match output width {d_out}",
            b.shape()
        ));
    }
    let rows = dense_rows(x, d_in)?;
    let mut out = Vec::with_capacity(rows * d_out);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    gemm(
        rows,
        d_in,
        d_out,
        1.0,
        x.data(),
        d_in,
        1,
        w.data(),
        d_out,
        1,
        1.0,
        &mut out,
        d_out,
        1,
    );
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Tensor::new(shape, out)
}

pub(crate) struct DenseGrads {
    pub x: Option<Vec<f64>>,
    pub w: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
}

pub(crate) fn dense_backward(x: &Tensor, w: &Tensor, dy: &[f64], need: [bool; 3]) -> DenseGrads {
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    let rows = x.len() / d_in;
    let dx = need[0].then(|| {
        let mut dx = vec![0.0; rows * d_in];
        gemm(
            rows,
            d_out,
            d_in,
            1.0,
            dy,
            d_out,
            1,
            w.data(),
            1,
            d_out,
            0.0,
            &mut dx,
            d_in,
            1,
        );
        dx
    });
    let dw = need[1].then(|| {
        let mut dw = vec![0.0; d_in * d_out];
        gemm(
            d_in,
            rows,
            d_out,
            1.0,
            x.data(),
            1,
            d_in,
            dy,
            d_out,
            1,
            0.0,
            &mut dw,
            d_out,
            1,
        );
        dw
    });
    let db = need[2].then(|| {
        let mut db = vec![0.0; d_out];
        for row in dy.chunks_exact(d_out) {
            for (acc, g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        db
    });
    DenseGrads { x: dx, w: dw, b: db }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dGeometry {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv2dGeometry {
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }

    /// Output spatial size for a `(h, w)` input and `(kh, kw)` kernel.
    pub fn output_size(&self, input: (usize, usize), kernel: (usize, usize)) -> Result<(usize, usize)> {
        let (h, w) = input;
        let (kh, kw) = kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        if sh == 0 || sw == 0 {
            return Err(dim_err!("conv2d: stride must be positive"));
        }
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(dim_err!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * ph,
                w + 2 * pw
            ));
        }
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }
}

/// Resolved sizes for one convolution plus the kernel taps that ever touch
/// real (non-padding) input. Inactive taps only multiply zeros, so the GEMM
/// skips them.
#[derive(Debug, Clone)]
pub(crate) struct ConvPlan {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    geom: Conv2dGeometry,
    taps_h: Vec<usize>,
    taps_w: Vec<usize>,
}

impl ConvPlan {
    pub fn new(x: &[usize], k: &[usize], b: &[usize], geom: Conv2dGeometry) -> Result<Self> {
        if x.len() != 4 || k.len() != 4 {
            return Err(dim_err!("conv2d: expected 4-D input and kernel, got {x:?} and {k:?}"));
        }
        if x[1] != k[1] {
            return Err(dim_err!(
                "conv2d: input {x:?} has {} channels, kernel {k:?} expects {}",
                x[1],
                k[1]
            ));
        }
        if b.iter().product::<usize>() != k[0] {
            return Err(dim_err!("conv2d: bias {b:?} does not match {} output channels", k[0]));
        }
        let (oh, ow) = geom.output_size((x[2], x[3]), (k[2], k[3]))?;
        let active = |ksize: usize, out: usize, stride: usize, pad: usize, input: usize| {
            (0..ksize)
                .filter(|&t| {
                    (0..out).any(|o| {
                        let i = (o * stride + t) as isize - pad as isize;
                        i >= 0 && (i as usize) < input
                    })
                })
                .collect::<Vec<_>>()
        };
        Ok(ConvPlan {
            n: x[0],
            c: x[1],
            h: x[2],
            w: x[3],
            o: k[0],
            kh: k[2],
            kw: k[3],
            oh,
            ow,
            geom,
            taps_h: active(k[2], oh, geom.stride.0, geom.padding.0, x[2]),
            taps_w: active(k[3], ow, geom.stride.1, geom.padding.1, x[3]),
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.o, self.oh, self.ow]
    }

    fn col_rows(&self) -> usize {
        self.c * self.taps_h.len() * self.taps_w.len()
    }

    fn col_cols(&self) -> usize {
        self.n * self.oh * self.ow
    }

    fn full_taps(&self) -> bool {
        self.taps_h.len() == self.kh && self.taps_w.len() == self.kw
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (rows, cols) = (self.col_rows(), self.col_cols());
        let mut out = vec![0.0; rows * cols];
        let (sh, sw) = self.geom.stride;
        let (ph, pw) = self.geom.padding;
        let ohw = self.oh * self.ow;
        let mut r = 0;
        for c in 0..self.c {
            for &th in &self.taps_h {
                for &tw in &self.taps_w {
                    let row = &mut out[r * cols..(r + 1) * cols];
                    for n in 0..self.n {
                        let plane = &x[(n * self.c + c) * self.h * self.w..][..self.h * self.w];
                        for oy in 0..self.oh {
                            let iy = (oy * sh + th) as isize - ph as isize;
                            if iy < 0 || iy as usize >= self.h {
                                continue;
                            }
                            let src = &plane[iy as usize * self.w..][..self.w];
                            let dst = &mut row[n * ohw + oy * self.ow..][..self.ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * sw + tw) as isize - pw as isize;
                                if ix >= 0 && (ix as usize) < self.w {
                                    *d = src[ix as usize];
                                }
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
        out
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let ncols = self.col_cols();
        let (sh, sw) = self.geom.stride;
        let (ph, pw) = self.geom.padding;
        let ohw = self.oh * self.ow;
        let mut r = 0;
        for c in 0..self.c {
            for &th in &self.taps_h {
                for &tw in &self.taps_w {
                    let row = &cols[r * ncols..(r + 1) * ncols];
                    for n in 0..self.n {
                        let base = (n * self.c + c) * self.h * self.w;
                        for oy in 0..self.oh {
                            let iy = (oy * sh + th) as isize - ph as isize;
                            if iy < 0 || iy as usize >= self.h {
                                continue;
                            }
                            let dst = &mut dx[base + iy as usize * self.w..][..self.w];
                            let src = &row[n * ohw + oy * self.ow..][..self.ow];
                            for (ox, s) in src.iter().enumerate() {
                                let ix = (ox * sw + tw) as isize - pw as isize;
                                if ix >= 0 && (ix as usize) < self.w {
                                    dst[ix as usize] += s;
                                }
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }

    /// Kernel restricted to active taps as a `[o, col_rows]` matrix.
    pub fn gather_kernel(&self, k: &[f64]) -> Vec<f64> {
        if self.full_taps() {
            return k.to_vec();
        }
        let mut g = Vec::with_capacity(self.o * self.col_rows());
        for o in 0..self.o {
            for c in 0..self.c {
                for &th in &self.taps_h {
                    for &tw in &self.taps_w {
                        g.push(k[((o * self.c + c) * self.kh + th) * self.kw + tw]);
                    }
                }
            }
        }
        g
    }

    /// Adds a `[o, col_rows]` gradient into a full-size kernel gradient.
    pub fn scatter_add_kernel(&self, g: &[f64], acc: &mut [f64]) {
        if self.full_taps() {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
            return;
        }
        let mut it = g.iter();
        for o in 0..self.o {
            for c in 0..self.c {
                for &th in &self.taps_h {
                    for &tw in &self.taps_w {
                        acc[((o * self.c + c) * self.kh + th) * self.kw + tw] += it.next().unwrap();
                    }
                }
            }
        }
    }

    /// Length of the kernel restricted to active taps.
    pub fn gathered_len(&self) -> usize {
        self.o * self.col_rows()
    }

    /// Identifies the kernel layout this plan gathers.
    pub fn kernel_key(&self) -> (Vec<usize>, Vec<usize>) {
        (self.taps_h.clone(), self.taps_w.clone())
    }

    pub fn kernel_len(&self) -> usize {
        self.o * self.c * self.kh * self.kw
    }
}

/// Saved forward state needed by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub(crate) struct ConvSaved {
    pub plan: ConvPlan,
    cols: Vec<f64>,
    kernel: Rc<Vec<f64>>,
}

/// Forward convolution with the kernel already restricted to the plan's
/// active taps.
pub(crate) fn conv2d_planned(
    plan: ConvPlan,
    x: &Tensor,
    kernel: Rc<Vec<f64>>,
    b: &Tensor,
) -> Result<(Tensor, ConvSaved)> {
    let cols = plan.im2col(x.data());
    let (kc, p) = (plan.col_rows(), plan.col_cols());
    let mut prod = vec![0.0; plan.o * p];
    gemm(plan.o, kc, p, 1.0, &kernel, kc, 1, &cols, p, 1, 0.0, &mut prod, p, 1);
    let ohw = plan.oh * plan.ow;
    let mut out = vec![0.0; plan.n * plan.o * ohw];
    for n in 0..plan.n {
        for o in 0..plan.o {
            let bias = b.data()[o];
            let src = &prod[o * p + n * ohw..][..ohw];
            let dst = &mut out[(n * plan.o + o) * ohw..][..ohw];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + bias;
            }
        }
    }
    let out = Tensor::new(plan.output_shape().to_vec(), out)?;
    Ok((out, ConvSaved { plan, cols, kernel }))
}

pub(crate) fn conv2d_forward(x: &Tensor, k: &Tensor, b: &Tensor, geom: Conv2dGeometry) -> Result<(Tensor, ConvSaved)> {
    let plan = ConvPlan::new(x.shape(), k.shape(), b.shape(), geom)?;
    let kernel = Rc::new(plan.gather_kernel(k.data()));
    conv2d_planned(plan, x, kernel, b)
}

/// Zero-padded 2-D cross-correlation (no kernel flip).
pub fn conv2d(x: &Tensor, k: &Tensor, b: &Tensor, geom: Conv2dGeometry) -> Result<Tensor> {
    conv2d_forward(x, k, b, geom).map(|(out, _)| out)
}

pub(crate) struct ConvGrads {
    pub x: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
}

/// Input and bias gradients are returned; the kernel gradient, restricted to
/// the plan's active taps, is added into `dk_gathered` when given.
pub(crate) fn conv2d_backward(
    saved: &ConvSaved,
    dout: &[f64],
    need_x: bool,
    need_b: bool,
    dk_gathered: Option<&mut [f64]>,
) -> ConvGrads {
    let plan = &saved.plan;
    let (kc, p) = (plan.col_rows(), plan.col_cols());
    let ohw = plan.oh * plan.ow;
    // [n, o, pos] -> [o, n * pos]
    let mut dt = vec![0.0; plan.o * p];
    for n in 0..plan.n {
        for o in 0..plan.o {
            dt[o * p + n * ohw..][..ohw].copy_from_slice(&dout[(n * plan.o + o) * ohw..][..ohw]);
        }
    }
    let db = need_b.then(|| dt.chunks_exact(p).map(|row| row.iter().sum()).collect());
    if let Some(acc) = dk_gathered {
        gemm(plan.o, p, kc, 1.0, &dt, p, 1, &saved.cols, 1, p, 1.0, acc, kc, 1);
    }
    let dx = need_x.then(|| {
        let mut dcols = vec![0.0; kc * p];
        gemm(
            kc,
            plan.o,
            p,
            1.0,
            &saved.kernel,
            1,
            kc,
            &dt,
            p,
            1,
            0.0,
            &mut dcols,
            p,
            1,
        );
        let mut dx = vec![0.0; plan.n * plan.c * plan.h * plan.w];
        plan.col2im(&dcols, &mut dx);
        dx
    });
    ConvGrads { x: dx, b: db }
}

/// Direct-loop convolution; the reference the GEMM path must agree with.
pub fn conv2d_reference(x: &Tensor, k: &Tensor, b: &Tensor, geom: Conv2dGeometry) -> Result<Tensor> {
    let plan = ConvPlan::new(x.shape(), k.shape(), b.shape(), geom)?;
    let [n_, o_, oh_, ow_] = plan.output_shape();
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let mut out = Tensor::zeros(&[n_, o_, oh_, ow_]);
    for n in 0..n_ {
        for o in 0..o_ {
            for oy in 0..oh_ {
                for ox in 0..ow_ {
                    let mut acc = b.data()[o];
                    for c in 0..plan.c {
                        for ky in 0..plan.kh {
                            for kx in 0..plan.kw {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy as usize >= plan.h || ix as usize >= plan.w {
                                    continue;
                                }
                                acc += x.get(&[n, c, iy as usize, ix as usize]) * k.get(&[o, c, ky, kx]);
                            }
                        }
                    }
                    out.set(&[n, o, oy, ox], acc);
                }
            }
        }
    }
    Ok(out)
}

/// `[N, C·r², H, W] -> [N, C, H·r, W·r]` with
/// `out[n, c, h·r + a, w·r + b] = x[n, c·r² + a·r + b, h, w]`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    if x.ndim() != 4 || r == 0 {
        return Err(dim_err!(
            "pixel_shuffle: expected 4-D input and r >= 1, got {:?}, r = {r}",
            x.shape()
        ));
    }
    let [n, cr, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    if cr % (r * r) != 0 {
        return Err(dim_err!(
            "pixel_shuffle: {cr} channels not divisible by r^2 = {}",
            r * r
        ));
    }
    let c = cr / (r * r);
    let mut out = vec![0.0; x.len()];
    shuffle_indices(n, c, h, w, r, |dst, src| out[dst] = x.data()[src]);
    Tensor::new(vec![n, c, h * r, w * r], out)
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    if x.ndim() != 4 || r == 0 {
        return Err(dim_err!(
            "pixel_unshuffle: expected 4-D input and r >= 1, got {:?}, r = {r}",
            x.shape()
        ));
    }
    let [n, c, hr, wr] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    if hr % r != 0 || wr % r != 0 {
        return Err(dim_err!(
            "pixel_unshuffle: spatial extents {hr}x{wr} not divisible by r = {r}"
        ));
    }
    let (h, w) = (hr / r, wr / r);
    let mut out = vec![0.0; x.len()];
    shuffle_indices(n, c, h, w, r, |dst, src| out[src] = x.data()[dst]);
    Tensor::new(vec![n, c * r * r, h, w], out)
}

/// Visits every (shuffled offset, unshuffled offset) pair.
fn shuffle_indices(n: usize, c: usize, h: usize, w: usize, r: usize, mut f: impl FnMut(usize, usize)) {
    let (hr, wr) = (h * r, w * r);
    for ni in 0..n {
        for ci in 0..c {
            for a in 0..r {
                for b in 0..r {
                    let src_c = ci * r * r + a * r + b;
                    for y in 0..h {
                        for xw in 0..w {
                            let src = ((ni * c * r * r + src_c) * h + y) * w + xw;
                            let dst = ((ni * c + ci) * hr + y * r + a) * wr + xw * r + b;
                            f(dst, src);
                        }
                    }
                }
            }
        }
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| dim_err!("concat: no operands"))?;
    let rank = first.ndim();
    if axis >= rank {
        return Err(dim_err!("concat: axis {axis} out of range for rank {rank}"));
    }
    for p in parts {
        let same_rest = p.ndim() == rank && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
        if !same_rest {
            return Err(dim_err!(
                "concat along axis {axis}: shape {:?} incompatible with {:?}",
                p.shape(),
                first.shape()
            ));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total_axis: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for p in parts {
            let block = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total_axis;
    Tensor::new(shape, data)
}

/// Slice `[start, start + len)` of `axis`.
pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    if axis >= x.ndim() || len == 0 || start + len > x.shape()[axis] {
        return Err(dim_err!(
            "narrow: range {start}..{} of axis {axis} invalid for {:?}",
            start + len,
            x.shape()
        ));
    }
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let full = x.shape()[axis] * inner;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        data.extend_from_slice(&x.data()[o * full + start * inner..][..len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(shape, data)
}

/// Adds `g` (shaped like a narrowed slice) into the matching window of `acc`.
pub(crate) fn narrow_backward(acc: &mut [f64], full_shape: &[usize], axis: usize, start: usize, g: &[f64]) {
    let outer: usize = full_shape[..axis].iter().product();
    let inner: usize = full_shape[axis + 1..].iter().product();
    let full = full_shape[axis] * inner;
    let len = g.len() / (outer * inner);
    for o in 0..outer {
        let dst = &mut acc[o * full + start * inner..][..len * inner];
        for (d, s) in dst.iter_mut().zip(&g[o * len * inner..][..len * inner]) {
            *d += s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let zero = Tensor::scalar(0.0);
        assert_eq!(Elementwise::Sigmoid.apply(&zero, None).unwrap().item(), 0.5);
        assert_eq!(Elementwise::Tanh.apply(&zero, None).unwrap().item(), 0.0);
        let neg = Tensor::scalar(-3.0);
        assert_eq!(Elementwise::Relu.apply(&neg, None).unwrap().item(), 0.0);
        let a = t(&[3], &[1.0, 2.0, 3.0]);
        let b = t(&[3], &[4.0, 5.0, 6.0]);
        let h = Elementwise::Mul.apply(&a, Some(&b)).unwrap();
        assert_eq!(h.data(), &[4.0, 10.0, 18.0]);
    }

    #[test]
    fn binary_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        let msg = Elementwise::Add.apply(&a, Some(&b)).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dense_examples() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let zero = Tensor::zeros(&[2]);
        assert_eq!(dense(&x, &eye, &zero).unwrap().data(), &[1.0, 2.0]);

        let x = t(&[1, 2], &[1.0, 1.0]);
        let w = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2], &[1.0, 1.0]);
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[5.0, 7.0]);
    }

    #[test]
    fn dense_keeps_leading_axes() {
        let x = Tensor::zeros(&[100, 1, 4]);
        let w = Tensor::zeros(&[4, 40]);
        let b = Tensor::zeros(&[40]);
        assert_eq!(dense(&x, &w, &b).unwrap().shape(), &[100, 1, 40]);
        assert!(dense(&x, &Tensor::zeros(&[5, 40]), &b).is_err());
    }

    #[test]
    fn conv_hand_example() {
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = Tensor::ones(&[1, 1, 2, 2]);
        let b = Tensor::zeros(&[1]);
        let g = Conv2dGeometry::new(1, 0);
        let out = conv2d(&x, &k, &b, g).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[12., 16., 24., 28.]);
        assert_eq!(conv2d_reference(&x, &k, &b, g).unwrap().data(), out.data());
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(&[2, 1, 5, 4], -2.0, 2.0, &mut rng);
        let out = conv2d(
            &x,
            &Tensor::ones(&[1, 1, 1, 1]),
            &Tensor::zeros(&[1]),
            Conv2dGeometry::new(1, 0),
        )
        .unwrap();
        assert!(out.bit_eq(&x));
    }

    #[test]
    fn conv_shape_arithmetic() {
        let g = Conv2dGeometry::new(2, 1);
        assert_eq!(g.output_size((60, 20), (4, 4)).unwrap(), (30, 10));
        let mut hw = (120, 40);
        let mut seen = vec![];
        for _ in 0..3 {
            hw = g.output_size(hw, (4, 4)).unwrap();
            seen.push(hw);
        }
        assert_eq!(seen, vec![(60, 20), (30, 10), (15, 5)]);
        assert!(Conv2dGeometry::new(1, 0).output_size((2, 2), (3, 3)).is_err());
    }

    #[test]
    fn conv_channel_mismatch_is_dimension_error() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(conv2d(&x, &k, &Tensor::zeros(&[1]), Conv2dGeometry::new(1, 1)).is_err());
    }

    #[test]
    fn sparse_taps_match_reference() {
        // 3x1 latent field with a 5x5 kernel: most taps fall into padding.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::uniform(&[2, 3, 3, 1], -2.0, 2.0, &mut rng);
        let k = Tensor::uniform(&[4, 3, 5, 5], -2.0, 2.0, &mut rng);
        let b = Tensor::uniform(&[4], -2.0, 2.0, &mut rng);
        let g = Conv2dGeometry::new(1, 2);
        let plan = ConvPlan::new(x.shape(), k.shape(), b.shape(), g).unwrap();
        assert_eq!(plan.taps_w, vec![2]);
        assert_eq!(plan.taps_h, vec![0, 1, 2, 3, 4]);
        let fast = conv2d(&x, &k, &b, g).unwrap();
        let slow = conv2d_reference(&x, &k, &b, g).unwrap();
        assert!(fast.max_abs_diff(&slow) <= 1e-12);
    }

    #[test]
    fn pixel_shuffle_hand_example() {
        let x = t(&[1, 4, 1, 1], &[1.0, 2.0, 3.0, 4.0]);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(pixel_unshuffle(&y, 2).unwrap().bit_eq(&x));
        assert!(pixel_shuffle(&x, 1).unwrap().bit_eq(&x));
        assert!(pixel_unshuffle(&x, 1).unwrap().bit_eq(&x));
    }

    #[test]
    fn pixel_shuffle_errors() {
        assert!(pixel_shuffle(&Tensor::zeros(&[1, 6, 2, 2]), 2).is_err());
        assert!(pixel_unshuffle(&Tensor::zeros(&[1, 1, 3, 4]), 2).is_err());
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let a = Tensor::from_fn(&[2, 1, 3], |i| i as f64);
        let b = Tensor::from_fn(&[2, 2, 3], |i| 100.0 + i as f64);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert!(narrow(&c, 1, 0, 1).unwrap().bit_eq(&a));
        assert!(narrow(&c, 1, 1, 2).unwrap().bit_eq(&b));
    }
}
