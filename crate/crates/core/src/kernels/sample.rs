//! Bilinear sampling kernels: grid resize and flow-driven backward warping.
//!
//! Resize uses an origin-anchored mapping `in = out * (in_dim / out_dim)` so
//! that integer-factor down/up chains land exactly on source samples:
//! downsampling by 2 reads every second sample and upsample-then-downsample
//! is the bit-exact identity. Out-of-range taps clamp to the border, which
//! keeps warping differentiable and avoids zero-padding halos.

use crate::{Scalar, Tensor};

#[inline]
fn clampf<T: Scalar>(v: T, lo: T, hi: T) -> T {
    v.max(lo).min(hi)
}

/// Bilinear tap at fractional coordinates (clamped to the border).
#[inline]
pub fn sample_bilinear<T: Scalar>(plane: &[T], h: usize, w: usize, cy: T, cx: T) -> T {
    let cy = clampf(cy, T::zero(), T::of((h - 1) as f64));
    let cx = clampf(cx, T::zero(), T::of((w - 1) as f64));
    let y0 = cy.floor();
    let x0 = cx.floor();
    let fy = cy - y0;
    let fx = cx - x0;
    let y0 = y0.as_f64() as usize;
    let x0 = x0.as_f64() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let v00 = plane[y0 * w + x0];
    let v01 = plane[y0 * w + x1];
    let v10 = plane[y1 * w + x0];
    let v11 = plane[y1 * w + x1];
    let one = T::one();
    v00 * (one - fx) * (one - fy) + v01 * fx * (one - fy) + v10 * (one - fx) * fy + v11 * fx * fy
}

/// Resize a `[C, H, W]` tensor to `[C, out_h, out_w]`.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (c, h, w) = x.dims3();
    let sy = T::of(h as f64 / out_h as f64);
    let sx = T::of(w as f64 / out_w as f64);
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    for ci in 0..c {
        let plane = &x.data()[ci * h * w..(ci + 1) * h * w];
        for oy in 0..out_h {
            let cy = T::of(oy as f64) * sy;
            for ox in 0..out_w {
                let cx = T::of(ox as f64) * sx;
                out.set3(ci, oy, ox, sample_bilinear(plane, h, w, cy, cx));
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`]: scatters output gradients onto input taps.
pub fn resize_bilinear_backward<T: Scalar>(
    gy: &Tensor<T>,
    in_h: usize,
    in_w: usize,
) -> Tensor<T> {
    let (c, out_h, out_w) = gy.dims3();
    let sy = T::of(in_h as f64 / out_h as f64);
    let sx = T::of(in_w as f64 / out_w as f64);
    let mut gx = Tensor::zeros(&[c, in_h, in_w]);
    let one = T::one();
    for ci in 0..c {
        let base = ci * in_h * in_w;
        for oy in 0..out_h {
            let cy = clampf(T::of(oy as f64) * sy, T::zero(), T::of((in_h - 1) as f64));
            let y0f = cy.floor();
            let fy = cy - y0f;
            let y0 = y0f.as_f64() as usize;
            let y1 = (y0 + 1).min(in_h - 1);
            for ox in 0..out_w {
                let cx = clampf(T::of(ox as f64) * sx, T::zero(), T::of((in_w - 1) as f64));
                let x0f = cx.floor();
                let fx = cx - x0f;
                let x0 = x0f.as_f64() as usize;
                let x1 = (x0 + 1).min(in_w - 1);
                let g = gy.at3(ci, oy, ox);
                let gd = gx.data_mut();
                gd[base + y0 * in_w + x0] += g * (one - fx) * (one - fy);
                gd[base + y0 * in_w + x1] += g * fx * (one - fy);
                gd[base + y1 * in_w + x0] += g * (one - fx) * fy;
                gd[base + y1 * in_w + x1] += g * fx * fy;
            }
        }
    }
    gx
}

/// Reflect-pad a `[C, H, W]` tensor on the bottom/right edges (boundary
/// sample not duplicated); pad amounts must be smaller than the image.
pub fn pad_reflect<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (c, h, w) = x.dims3();
    assert!(out_h >= h && out_w >= w);
    assert!(out_h - h < h && out_w - w < w, "reflection pad larger than image");
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    for ci in 0..c {
        for y in 0..out_h {
            let sy = if y < h { y } else { 2 * h - 2 - y };
            for xo in 0..out_w {
                let sx = if xo < w { xo } else { 2 * w - 2 - xo };
                out.set3(ci, y, xo, x.at3(ci, sy, sx));
            }
        }
    }
    out
}

/// 2x2 mean pooling for image pyramids; dimensions must be even.
pub fn downsample2_mean<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.dims3();
    assert!(h % 2 == 0 && w % 2 == 0, "downsample2_mean needs even dims");
    let quarter = T::of(0.25);
    let mut out = Tensor::zeros(&[c, h / 2, w / 2]);
    for ci in 0..c {
        for y in 0..h / 2 {
            for xo in 0..w / 2 {
                let s = x.at3(ci, 2 * y, 2 * xo)
                    + x.at3(ci, 2 * y, 2 * xo + 1)
                    + x.at3(ci, 2 * y + 1, 2 * xo)
                    + x.at3(ci, 2 * y + 1, 2 * xo + 1);
                out.set3(ci, y, xo, s * quarter);
            }
        }
    }
    out
}

/// Backward-warp `src` by `flow`: `out(x, y) = src(x + u, y + v)`.
///
/// `src` is `[C, H, W]`, `flow` is `[2, H, W]` with channel 0 = `u` and
/// channel 1 = `v` in pixels of this grid.
pub fn warp<T: Scalar>(src: &Tensor<T>, flow: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = src.dims3();
    let (fc, fh, fw) = flow.dims3();
    assert_eq!((fc, fh, fw), (2, h, w), "warp flow shape");
    let mut out = Tensor::zeros(&[c, h, w]);
    let fd = flow.data();
    let hw = h * w;
    for ci in 0..c {
        let plane = &src.data()[ci * hw..(ci + 1) * hw];
        for y in 0..h {
            for x in 0..w {
                let u = fd[y * w + x];
                let v = fd[hw + y * w + x];
                let cx = T::of(x as f64) + u;
                let cy = T::of(y as f64) + v;
                out.set3(ci, y, x, sample_bilinear(plane, h, w, cy, cx));
            }
        }
    }
    out
}

/// Gradients of [`warp`] w.r.t. source and flow.
pub fn warp_backward<T: Scalar>(
    src: &Tensor<T>,
    flow: &Tensor<T>,
    gy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (c, h, w) = src.dims3();
    let hw = h * w;
    let mut gsrc = Tensor::zeros(&[c, h, w]);
    let mut gflow = Tensor::zeros(&[2, h, w]);
    let fd = flow.data();
    let one = T::one();
    let max_y = T::of((h - 1) as f64);
    let max_x = T::of((w - 1) as f64);
    for y in 0..h {
        for x in 0..w {
            let u = fd[y * w + x];
            let v = fd[hw + y * w + x];
            let rx = T::of(x as f64) + u;
            let ry = T::of(y as f64) + v;
            // Saturated coordinates carry no gradient into the flow.
            let live_x = rx >= T::zero() && rx <= max_x;
            let live_y = ry >= T::zero() && ry <= max_y;
            let cx = clampf(rx, T::zero(), max_x);
            let cy = clampf(ry, T::zero(), max_y);
            let y0f = cy.floor();
            let x0f = cx.floor();
            let fy = cy - y0f;
            let fx = cx - x0f;
            let y0 = y0f.as_f64() as usize;
            let x0 = x0f.as_f64() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let mut gu = T::zero();
            let mut gv = T::zero();
            for ci in 0..c {
                let g = gy.at3(ci, y, x);
                if g == T::zero() {
                    continue;
                }
                let base = ci * hw;
                let sd = src.data();
                let v00 = sd[base + y0 * w + x0];
                let v01 = sd[base + y0 * w + x1];
                let v10 = sd[base + y1 * w + x0];
                let v11 = sd[base + y1 * w + x1];
                let gd = gsrc.data_mut();
                gd[base + y0 * w + x0] += g * (one - fx) * (one - fy);
                gd[base + y0 * w + x1] += g * fx * (one - fy);
                gd[base + y1 * w + x0] += g * (one - fx) * fy;
                gd[base + y1 * w + x1] += g * fx * fy;
                gu += g * ((v01 - v00) * (one - fy) + (v11 - v10) * fy);
                gv += g * ((v10 - v00) * (one - fx) + (v11 - v01) * fx);
            }
            let gfd = gflow.data_mut();
            if live_x {
                gfd[y * w + x] = gu;
            }
            if live_y {
                gfd[hw + y * w + x] = gv;
            }
        }
    }
    (gsrc, gflow)
}
