//! Local correlation cost volumes and convex flow upsampling.

use crate::{Error, Result, Scalar, Tensor};

/// Local cost volume between two `[C, H, W]` feature maps.
///
/// Output channel `d = (dy + r) * (2r + 1) + (dx + r)` holds
/// `<fa(x, y), fb(x + dx, y + dy)> / sqrt(C)`; out-of-bounds correlations
/// are zero.
pub fn cost_volume<T: Scalar>(fa: &Tensor<T>, fb: &Tensor<T>, radius: usize) -> Tensor<T> {
    let (c, h, w) = fa.dims3();
    assert_eq!(fa.shape(), fb.shape(), "cost volume feature shapes");
    let side = 2 * radius + 1;
    let norm = T::one() / T::of((c as f64).sqrt());
    let mut out = Tensor::zeros(&[side * side, h, w]);
    let hw = h * w;
    let r = radius as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            let d = ((dy + r) * side as isize + (dx + r)) as usize;
            let od = d * hw;
            for y in 0..h {
                let by = y as isize + dy;
                if by < 0 || by >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let bx = x as isize + dx;
                    if bx < 0 || bx >= w as isize {
                        continue;
                    }
                    let mut acc = T::zero();
                    for ci in 0..c {
                        acc += fa.data()[ci * hw + y * w + x]
                            * fb.data()[ci * hw + by as usize * w + bx as usize];
                    }
                    out.data_mut()[od + y * w + x] = acc * norm;
                }
            }
        }
    }
    out
}

/// Gradients of [`cost_volume`] w.r.t. both feature maps.
pub fn cost_volume_backward<T: Scalar>(
    fa: &Tensor<T>,
    fb: &Tensor<T>,
    radius: usize,
    gy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (c, h, w) = fa.dims3();
    let side = 2 * radius + 1;
    let norm = T::one() / T::of((c as f64).sqrt());
    let mut gfa = Tensor::zeros(&[c, h, w]);
    let mut gfb = Tensor::zeros(&[c, h, w]);
    let hw = h * w;
    let r = radius as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            let d = ((dy + r) * side as isize + (dx + r)) as usize;
            let od = d * hw;
            for y in 0..h {
                let by = y as isize + dy;
                if by < 0 || by >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let bx = x as isize + dx;
                    if bx < 0 || bx >= w as isize {
                        continue;
                    }
                    let g = gy.data()[od + y * w + x] * norm;
                    if g == T::zero() {
                        continue;
                    }
                    let bi = by as usize * w + bx as usize;
                    for ci in 0..c {
                        gfa.data_mut()[ci * hw + y * w + x] += g * fb.data()[ci * hw + bi];
                        gfb.data_mut()[ci * hw + bi] += g * fa.data()[ci * hw + y * w + x];
                    }
                }
            }
        }
    }
    (gfa, gfb)
}

/// Check that every 9-tap kernel group is a convex combination.
pub fn check_kernel_groups<T: Scalar>(kernels: &Tensor<T>, factor: usize, tol: f64) -> Result<()> {
    let (kc, h, w) = kernels.dims3();
    let ff = factor * factor;
    if kc != 9 * ff {
        return Err(Error::invalid(format!(
            "kernel tensor has {kc} channels, expected {} for factor {factor}",
            9 * ff
        )));
    }
    let hw = h * w;
    for s in 0..ff {
        for i in 0..hw {
            let mut sum = T::zero();
            for tap in 0..9 {
                let v = kernels.data()[(tap * ff + s) * hw + i];
                if v < T::zero() {
                    return Err(Error::UnnormalizedKernels {
                        x: i % w,
                        y: i / w,
                        sum: v.as_f64(),
                    });
                }
                sum += v;
            }
            if (sum - T::one()).abs().as_f64() > tol {
                return Err(Error::UnnormalizedKernels {
                    x: i % w,
                    y: i / w,
                    sum: sum.as_f64(),
                });
            }
        }
    }
    Ok(())
}

/// Upsample a `[2, h, w]` flow by `factor` with per-pixel convex kernels.
///
/// `kernels` is `[9 * factor^2, h, w]`: tap `i` (3x3 neighborhood, row-major)
/// for sub-pixel `s = ry * factor + rx` lives in channel `i * factor^2 + s`.
/// Displacement values are multiplied by `factor` to convert units.
pub fn convex_upsample<T: Scalar>(
    flow: &Tensor<T>,
    kernels: &Tensor<T>,
    factor: usize,
) -> Tensor<T> {
    let (fc, h, w) = flow.dims3();
    assert_eq!(fc, 2);
    let ff = factor * factor;
    let hw = h * w;
    let scale = T::of(factor as f64);
    let mut out = Tensor::zeros(&[2, h * factor, w * factor]);
    for c in 0..2 {
        for oy in 0..h * factor {
            let y = oy / factor;
            let ry = oy % factor;
            for ox in 0..w * factor {
                let x = ox / factor;
                let rx = ox % factor;
                let s = ry * factor + rx;
                let mut acc = T::zero();
                for tap in 0..9 {
                    let dy = (tap / 3) as isize - 1;
                    let dx = (tap % 3) as isize - 1;
                    let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let k = kernels.data()[(tap * ff + s) * hw + y * w + x];
                    acc += k * flow.data()[c * hw + ny * w + nx];
                }
                out.set3(c, oy, ox, acc * scale);
            }
        }
    }
    out
}

/// Gradients of [`convex_upsample`] w.r.t. flow and kernels.
pub fn convex_upsample_backward<T: Scalar>(
    flow: &Tensor<T>,
    kernels: &Tensor<T>,
    factor: usize,
    gy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (_, h, w) = flow.dims3();
    let ff = factor * factor;
    let hw = h * w;
    let scale = T::of(factor as f64);
    let mut gflow = Tensor::zeros(&[2, h, w]);
    let mut gk = Tensor::zeros(kernels.shape());
    for c in 0..2 {
        for oy in 0..h * factor {
            let y = oy / factor;
            let ry = oy % factor;
            for ox in 0..w * factor {
                let x = ox / factor;
                let rx = ox % factor;
                let s = ry * factor + rx;
                let g = gy.at3(c, oy, ox) * scale;
                if g == T::zero() {
                    continue;
                }
                for tap in 0..9 {
                    let dy = (tap / 3) as isize - 1;
                    let dx = (tap % 3) as isize - 1;
                    let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let ki = (tap * ff + s) * hw + y * w + x;
                    gflow.data_mut()[c * hw + ny * w + nx] += g * kernels.data()[ki];
                    gk.data_mut()[ki] += g * flow.data()[c * hw + ny * w + nx];
                }
            }
        }
    }
    (gflow, gk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Normalize each pixel's feature vector to unit length so inner products
    /// are cosine similarities; only then is the exact-match displacement
    /// guaranteed maximal.
    fn unit_features(t: &mut Tensor<f64>) {
        let (c, h, w) = t.dims3();
        let hw = h * w;
        for i in 0..hw {
            let norm: f64 = (0..c).map(|ci| t.data()[ci * hw + i].powi(2)).sum::<f64>().sqrt();
            for ci in 0..c {
                t.data_mut()[ci * hw + i] /= norm;
            }
        }
    }

    #[test]
    fn self_correlation_center_is_maximal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut f = Tensor::<f64>::rand_uniform(&[4, 6, 6], -1.0, 1.0, &mut rng);
        unit_features(&mut f);
        let cv = cost_volume(&f, &f, 1);
        let center = 4; // d index for (0, 0) at radius 1
        for y in 1..5 {
            for x in 1..5 {
                let c = cv.at3(center, y, x);
                for d in 0..9 {
                    assert!(cv.at3(d, y, x) <= c + 1e-12);
                }
            }
        }
    }

    #[test]
    fn shifted_features_peak_at_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut fa = Tensor::<f64>::rand_uniform(&[4, 8, 8], -1.0, 1.0, &mut rng);
        unit_features(&mut fa);
        // fb(x) = fa(x - 1) horizontally, so fa(x) matches fb at dx = +1.
        let mut fb = Tensor::<f64>::zeros(&[4, 8, 8]);
        for c in 0..4 {
            for y in 0..8 {
                for x in 1..8 {
                    fb.set3(c, y, x, fa.at3(c, y, x - 1));
                }
            }
        }
        let cv = cost_volume(&fa, &fb, 2);
        let side = 5;
        for y in 2..6 {
            for x in 2..5 {
                let mut best = (0, f64::MIN);
                for d in 0..side * side {
                    let v = cv.at3(d, y, x);
                    if v > best.1 {
                        best = (d, v);
                    }
                }
                let dy = best.0 / side;
                let dx = best.0 % side;
                assert_eq!((dy, dx), (2, 3), "argmax displacement should be (0, +1)");
            }
        }
    }

    #[test]
    fn zero_features_give_zero_volume() {
        let z = Tensor::<f64>::zeros(&[3, 4, 4]);
        let cv = cost_volume(&z, &z, 2);
        assert!(cv.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cost_volume_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let fa = Tensor::<f64>::rand_uniform(&[3, 5, 5], -1.0, 1.0, &mut rng);
        let fb = Tensor::<f64>::rand_uniform(&[3, 5, 5], -1.0, 1.0, &mut rng);
        let gy = Tensor::<f64>::rand_uniform(&[9, 5, 5], -1.0, 1.0, &mut rng);
        let loss = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            cost_volume(a, b, 1)
                .data()
                .iter()
                .zip(gy.data())
                .map(|(v, g)| v * g)
                .sum()
        };
        let (gfa, gfb) = cost_volume_backward(&fa, &fb, 1, &gy);
        let eps = 1e-6;
        for i in 0..fa.numel() {
            let mut p = fa.clone();
            p.data_mut()[i] += eps;
            let mut m = fa.clone();
            m.data_mut()[i] -= eps;
            let fd = (loss(&p, &fb) - loss(&m, &fb)) / (2.0 * eps);
            assert!((fd - gfa.data()[i]).abs() < 1e-7);
        }
        for i in 0..fb.numel() {
            let mut p = fb.clone();
            p.data_mut()[i] += eps;
            let mut m = fb.clone();
            m.data_mut()[i] -= eps;
            let fd = (loss(&fa, &p) - loss(&fa, &m)) / (2.0 * eps);
            assert!((fd - gfb.data()[i]).abs() < 1e-7);
        }
    }

    fn normalized_random_kernels(h: usize, w: usize, factor: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ff = factor * factor;
        let mut k = Tensor::<f64>::rand_uniform(&[9 * ff, h, w], 0.01, 1.0, &mut rng);
        let hw = h * w;
        for s in 0..ff {
            for i in 0..hw {
                let sum: f64 = (0..9).map(|t| k.data()[(t * ff + s) * hw + i]).sum();
                for t in 0..9 {
                    k.data_mut()[(t * ff + s) * hw + i] /= sum;
                }
            }
        }
        k
    }

    #[test]
    fn convex_upsample_preserves_constants_times_factor() {
        for &factor in &[2usize, 4] {
            let k = normalized_random_kernels(4, 5, factor, 21 + factor as u64);
            let mut flow = Tensor::<f64>::zeros(&[2, 4, 5]);
            flow.data_mut().iter_mut().enumerate().for_each(|(i, v)| {
                *v = if i < 20 { 1.5 } else { -0.75 };
            });
            let up = convex_upsample(&flow, &k, factor);
            for y in 0..4 * factor {
                for x in 0..5 * factor {
                    assert!((up.at3(0, y, x) - 1.5 * factor as f64).abs() < 1e-12);
                    assert!((up.at3(1, y, x) + 0.75 * factor as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn one_hot_center_kernels_replicate() {
        let mut k = Tensor::<f64>::zeros(&[9 * 4, 3, 3]);
        let hw = 9;
        for s in 0..4 {
            for i in 0..hw {
                k.data_mut()[(4 * 4 + s) * hw + i] = 1.0; // tap 4 = center
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let flow = Tensor::<f64>::rand_uniform(&[2, 3, 3], -2.0, 2.0, &mut rng);
        let up = convex_upsample(&flow, &k, 2);
        for c in 0..2 {
            for y in 0..6 {
                for x in 0..6 {
                    assert_eq!(up.at3(c, y, x), 2.0 * flow.at3(c, y / 2, x / 2));
                }
            }
        }
    }

    #[test]
    fn kernel_group_check_rejects_unnormalized() {
        let k = Tensor::<f64>::full(&[36, 2, 2], 0.2);
        assert!(check_kernel_groups(&k, 2, 1e-4).is_err());
        let ok = normalized_random_kernels(2, 2, 2, 5);
        assert!(check_kernel_groups(&ok, 2, 1e-4).is_ok());
    }

    #[test]
    fn convex_upsample_backward_matches_fd() {
        let k = normalized_random_kernels(3, 3, 2, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let flow = Tensor::<f64>::rand_uniform(&[2, 3, 3], -1.0, 1.0, &mut rng);
        let gy = Tensor::<f64>::rand_uniform(&[2, 6, 6], -1.0, 1.0, &mut rng);
        let loss = |f: &Tensor<f64>, kk: &Tensor<f64>| -> f64 {
            convex_upsample(f, kk, 2)
                .data()
                .iter()
                .zip(gy.data())
                .map(|(v, g)| v * g)
                .sum()
        };
        let (gf, gk) = convex_upsample_backward(&flow, &k, 2, &gy);
        let eps = 1e-6;
        for i in 0..flow.numel() {
            let mut p = flow.clone();
            p.data_mut()[i] += eps;
            let mut m = flow.clone();
            m.data_mut()[i] -= eps;
            let fd = (loss(&p, &k) - loss(&m, &k)) / (2.0 * eps);
            assert!((fd - gf.data()[i]).abs() < 1e-7);
        }
        for i in (0..k.numel()).step_by(7) {
            let mut p = k.clone();
            p.data_mut()[i] += eps;
            let mut m = k.clone();
            m.data_mut()[i] -= eps;
            let fd = (loss(&flow, &p) - loss(&flow, &m)) / (2.0 * eps);
            assert!((fd - gk.data()[i]).abs() < 1e-7);
        }
    }
}
