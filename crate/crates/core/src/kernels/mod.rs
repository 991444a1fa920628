//! Low-level numeric kernels shared by the pure geometry module and the
//! autodiff graph: GEMM-backed convolution, bilinear sampling/warping,
//! correlation volumes, convex upsampling and the soft census transform.
//!
//! Every kernel comes with an explicit backward counterpart; the autodiff
//! layer is a thin bookkeeping shell over these functions.

pub mod census;
pub mod sample;
pub mod volume;

use crate::{Scalar, Tensor};

/// Output spatial size of a convolution.
#[inline]
pub fn conv_out_dim(dim: usize, k: usize, stride: usize, pad: usize) -> usize {
    (dim + 2 * pad - k) / stride + 1
}

/// Lower a `[Cin, H, W]` tensor into the `[Cin*kh*kw, Ho*Wo]` patch matrix.
fn im2col<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
    col: &mut Vec<T>,
) -> (usize, usize) {
    let (cin, h, w) = x.dims3();
    let ho = conv_out_dim(h, k, stride, pad);
    let wo = conv_out_dim(w, k, stride, pad);
    let n = ho * wo;
    col.clear();
    col.resize(cin * k * k * n, T::zero());
    let xd = x.data();
    for ci in 0..cin {
        for dy in 0..k {
            for dx in 0..k {
                let row = ((ci * k + dy) * k + dx) * n;
                for oy in 0..ho {
                    let iy = (oy * stride + dy).wrapping_sub(pad);
                    if iy >= h {
                        continue;
                    }
                    let src_row = (ci * h + iy) * w;
                    let dst_row = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + dx).wrapping_sub(pad);
                        if ix < w {
                            col[dst_row + ox] = xd[src_row + ix];
                        }
                    }
                }
            }
        }
    }
    (ho, wo)
}

/// Scatter a `[Cin*kh*kw, Ho*Wo]` gradient matrix back onto the input grid.
fn col2im<T: Scalar>(
    gcol: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let ho = conv_out_dim(h, k, stride, pad);
    let wo = conv_out_dim(w, k, stride, pad);
    let n = ho * wo;
    let mut gx = Tensor::zeros(&[cin, h, w]);
    let gd = gx.data_mut();
    for ci in 0..cin {
        for dy in 0..k {
            for dx in 0..k {
                let row = ((ci * k + dy) * k + dx) * n;
                for oy in 0..ho {
                    let iy = (oy * stride + dy).wrapping_sub(pad);
                    if iy >= h {
                        continue;
                    }
                    let dst_row = (ci * h + iy) * w;
                    let src_row = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + dx).wrapping_sub(pad);
                        if ix < w {
                            gd[dst_row + ix] += gcol[src_row + ox];
                        }
                    }
                }
            }
        }
    }
    gx
}

/// `y = w * x + b` with square kernels; `x` is `[Cin, H, W]`, `w` is
/// `[Cout, Cin, k, k]`, `b` is `[Cout]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (cin, _, _) = x.dims3();
    let ws = w.shape();
    assert_eq!(ws.len(), 4);
    assert_eq!(ws[1], cin, "conv weight Cin mismatch");
    assert_eq!(ws[2], ws[3], "square kernels only");
    let (cout, k) = (ws[0], ws[2]);
    let mut col = Vec::new();
    let (ho, wo) = im2col(x, k, stride, pad, &mut col);
    let n = ho * wo;
    let kk = cin * k * k;
    let mut out = Tensor::zeros(&[cout, ho, wo]);
    T::gemm(
        cout,
        kk,
        n,
        T::one(),
        w.data(),
        kk as isize,
        1,
        &col,
        n as isize,
        1,
        T::zero(),
        out.data_mut(),
    );
    let od = out.data_mut();
    for oc in 0..cout {
        let bias = b.data()[oc];
        for v in &mut od[oc * n..(oc + 1) * n] {
            *v += bias;
        }
    }
    out
}

/// Gradients of [`conv2d`] w.r.t. input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (cin, h, wd) = x.dims3();
    let ws = w.shape();
    let (cout, k) = (ws[0], ws[2]);
    let kk = cin * k * k;
    let (gc, ho, wo) = gy.dims3();
    assert_eq!(gc, cout);
    let n = ho * wo;

    let mut gb = Tensor::zeros(&[cout]);
    for oc in 0..cout {
        let mut acc = T::zero();
        for &v in &gy.data()[oc * n..(oc + 1) * n] {
            acc += v;
        }
        gb.data_mut()[oc] = acc;
    }

    let mut col = Vec::new();
    im2col(x, k, stride, pad, &mut col);

    // gw[cout, kk] = gy[cout, n] @ col^T
    let mut gw = Tensor::zeros(&[cout, cin, k, k]);
    T::gemm(
        cout,
        n,
        kk,
        T::one(),
        gy.data(),
        n as isize,
        1,
        &col,
        1,
        n as isize,
        T::zero(),
        gw.data_mut(),
    );

    // gcol[kk, n] = w^T @ gy
    let mut gcol = vec![T::zero(); kk * n];
    T::gemm(
        kk,
        cout,
        n,
        T::one(),
        w.data(),
        1,
        kk as isize,
        gy.data(),
        n as isize,
        1,
        T::zero(),
        &mut gcol,
    );
    let gx = col2im(&gcol, cin, h, wd, k, stride, pad);
    (gx, gw, gb)
}

/// Rearrange `[C*r*r, H, W]` into `[C, r*H, r*W]` (sub-pixel upsampling).
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let (c_in, h, w) = x.dims3();
    assert_eq!(c_in % (r * r), 0);
    let c = c_in / (r * r);
    let mut out = Tensor::zeros(&[c, h * r, w * r]);
    for oc in 0..c {
        for ry in 0..r {
            for rx in 0..r {
                let ic = (oc * r + ry) * r + rx;
                for y in 0..h {
                    for x_ in 0..w {
                        let v = x.at3(ic, y, x_);
                        out.set3(oc, y * r + ry, x_ * r + rx, v);
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`pixel_shuffle`].
pub fn pixel_shuffle_backward<T: Scalar>(gy: &Tensor<T>, r: usize) -> Tensor<T> {
    let (c, hr, wr) = gy.dims3();
    let (h, w) = (hr / r, wr / r);
    let mut gx = Tensor::zeros(&[c * r * r, h, w]);
    for oc in 0..c {
        for ry in 0..r {
            for rx in 0..r {
                let ic = (oc * r + ry) * r + rx;
                for y in 0..h {
                    for x_ in 0..w {
                        gx.set3(ic, y, x_, gy.at3(oc, y * r + ry, x_ * r + rx));
                    }
                }
            }
        }
    }
    gx
}
