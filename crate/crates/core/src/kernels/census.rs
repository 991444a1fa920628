//! Soft census transform loss.
//!
//! Images are grayscale-converted and scaled to intensity units of 0..255.
//! Each pixel's census signature is the vector of neighbor-minus-center
//! differences squashed by `x / sqrt(0.81 + x^2)`; the per-pixel distance is
//! the soft Hamming distance `sum_i z_i^2 / (0.1 + z_i^2)` between the two
//! signatures, averaged over pixels whose full patch lies inside the frame.
//! Because signatures are built from local differences, the loss is exactly
//! invariant to an additive brightness offset on either image.

use crate::{Scalar, Tensor};

const SOFT_SIGN_C: f64 = 0.81;
const SOFT_THRESH_C: f64 = 0.1;
const INTENSITY_SCALE: f64 = 255.0;

fn grayscale<T: Scalar>(img: &Tensor<T>) -> Vec<T> {
    let (c, h, w) = img.dims3();
    let hw = h * w;
    let norm = T::of(INTENSITY_SCALE / c as f64);
    let mut g = vec![T::zero(); hw];
    for ci in 0..c {
        for i in 0..hw {
            g[i] += img.data()[ci * hw + i];
        }
    }
    for v in &mut g {
        *v = *v * norm;
    }
    g
}

#[inline]
fn soft_sign<T: Scalar>(u: T) -> T {
    u / (T::of(SOFT_SIGN_C) + u * u).sqrt()
}

#[inline]
fn soft_sign_deriv<T: Scalar>(u: T) -> T {
    let c = T::of(SOFT_SIGN_C);
    let d = c + u * u;
    c / (d * d.sqrt())
}

/// Mean soft census distance over valid (interior) pixels. `patch` must be odd.
pub fn census_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, patch: usize) -> T {
    assert_eq!(pred.shape(), target.shape());
    assert_eq!(patch % 2, 1, "census patch must be odd");
    let (_, h, w) = pred.dims3();
    let r = patch / 2;
    if h < patch || w < patch {
        return T::zero();
    }
    let g1 = grayscale(pred);
    let g2 = grayscale(target);
    let c2 = T::of(SOFT_THRESH_C);
    let mut acc = T::zero();
    let mut count = 0usize;
    for y in r..h - r {
        for x in r..w - r {
            let p1 = g1[y * w + x];
            let p2 = g2[y * w + x];
            let mut d = T::zero();
            for dy in 0..patch {
                for dx in 0..patch {
                    let ny = y + dy - r;
                    let nx = x + dx - r;
                    let z = soft_sign(g1[ny * w + nx] - p1) - soft_sign(g2[ny * w + nx] - p2);
                    let z2 = z * z;
                    d += z2 / (c2 + z2);
                }
            }
            acc += d;
            count += 1;
        }
    }
    acc / T::of(count as f64)
}

/// Gradients of [`census_loss`] w.r.t. both images, scaled by `gscale`.
pub fn census_loss_backward<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    patch: usize,
    gscale: T,
) -> (Tensor<T>, Tensor<T>) {
    let (c, h, w) = pred.dims3();
    let r = patch / 2;
    let mut gpred = Tensor::zeros(pred.shape());
    let mut gtarget = Tensor::zeros(target.shape());
    if h < patch || w < patch {
        return (gpred, gtarget);
    }
    let g1 = grayscale(pred);
    let g2 = grayscale(target);
    let c2 = T::of(SOFT_THRESH_C);
    let count = T::of(((h - 2 * r) * (w - 2 * r)) as f64);
    let scale = gscale / count;
    let mut gg1 = vec![T::zero(); h * w];
    let mut gg2 = vec![T::zero(); h * w];
    for y in r..h - r {
        for x in r..w - r {
            let p1 = g1[y * w + x];
            let p2 = g2[y * w + x];
            for dy in 0..patch {
                for dx in 0..patch {
                    let ny = y + dy - r;
                    let nx = x + dx - r;
                    let u1 = g1[ny * w + nx] - p1;
                    let u2 = g2[ny * w + nx] - p2;
                    let z = soft_sign(u1) - soft_sign(u2);
                    let z2 = z * z;
                    let denom = c2 + z2;
                    // d/dz of z^2 / (c2 + z^2)
                    let dq = (T::one() + T::one()) * c2 * z / (denom * denom);
                    let g1c = scale * dq * soft_sign_deriv(u1);
                    let g2c = -(scale * dq * soft_sign_deriv(u2));
                    gg1[ny * w + nx] += g1c;
                    gg1[y * w + x] -= g1c;
                    gg2[ny * w + nx] += g2c;
                    gg2[y * w + x] -= g2c;
                }
            }
        }
    }
    // Grayscale chain rule: each channel contributes 255 / C.
    let per_channel = T::of(INTENSITY_SCALE / c as f64);
    let hw = h * w;
    for ci in 0..c {
        for i in 0..hw {
            gpred.data_mut()[ci * hw + i] = gg1[i] * per_channel;
            gtarget.data_mut()[ci * hw + i] = gg2[i] * per_channel;
        }
    }
    (gpred, gtarget)
}
