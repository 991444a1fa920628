//! Pixel-centric evaluation metrics.

use crate::motionfield::FlowField;
use crate::{Error, Result, Scalar, Tensor};

/// PSNR cap reported for (near-)identical images so CSV outputs stay finite.
pub const PSNR_CAP_DB: f64 = 99.0;

/// `10 log10(1 / MSE)` on `[0, 1]`-ranged images, capped at 99 dB.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("psnr", a.shape(), b.shape()));
    }
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x.as_f64() - y.as_f64();
        acc += d * d;
    }
    let mse = acc / a.numel() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let mut w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// dynamic range 1; window means over valid positions, averaged over
/// channels.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("ssim", a.shape(), b.shape()));
    }
    let (c, h, w) = a.dims3();
    let win = 11usize;
    if h < win || w < win {
        return Err(Error::invalid(format!(
            "ssim needs at least {win}x{win} images, got {w}x{h}"
        )));
    }
    let g = gaussian_window(win, 1.5);
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ci in 0..c {
        for y in 0..=h - win {
            for x in 0..=w - win {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for dy in 0..win {
                    for dx in 0..win {
                        let wgt = g[dy] * g[dx];
                        let va = a.at3(ci, y + dy, x + dx).as_f64();
                        let vb = b.at3(ci, y + dy, x + dx).as_f64();
                        mu_a += wgt * va;
                        mu_b += wgt * vb;
                        aa += wgt * va * va;
                        bb += wgt * vb * vb;
                        ab += wgt * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                total += s;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Mean endpoint error in pixels, optionally restricted by a `[1, H, W]`
/// validity mask.
pub fn epe<T: Scalar>(
    estimate: &FlowField<T>,
    truth: &FlowField<T>,
    mask: Option<&Tensor<T>>,
) -> Result<f64> {
    Ok(estimate.endpoint_error(truth, mask)?.as_f64())
}
