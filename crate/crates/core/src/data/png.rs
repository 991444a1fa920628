//! 8-bit RGB PNG in/out, values mapped to `[0, 1]`.

use std::path::Path;

use crate::{Error, Result, Scalar, Tensor};

pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Tensor::zeros(&[3, h, w]);
    let scale = T::of(1.0 / 255.0);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out.set3(c, y as usize, x as usize, T::of(px.0[c] as f64) * scale);
        }
    }
    Ok(out)
}

/// Clamp to `[0, 1]`, quantize to 8 bits and write.
pub fn save_image<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let (c, h, w) = img.dims3();
    if c != 3 {
        return Err(Error::invalid(format!("save_image expects 3 channels, got {c}")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|ci| {
                let v = img.at3(ci, y, x).as_f64().clamp(0.0, 1.0);
                (v * 255.0).round() as u8
            });
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)?;
    Ok(())
}
