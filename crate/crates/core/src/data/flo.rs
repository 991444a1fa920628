//! Middlebury `.flo` flow files: little-endian, float magic 202021.25,
//! 32-bit width/height, then row-major interleaved `(u, v)` as `f32`.

use std::io::{Read, Write};
use std::path::Path;

use crate::motionfield::FlowField;
use crate::{Error, Result, Scalar, Tensor};

pub const FLO_MAGIC: f32 = 202021.25;

pub fn write_flo<T: Scalar>(path: &Path, flow: &FlowField<T>) -> Result<()> {
    let (w, h) = (flow.width(), flow.height());
    let mut buf = Vec::with_capacity(12 + 8 * w * h);
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(w as i32).to_le_bytes());
    buf.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(x, y);
            buf.extend_from_slice(&(u.as_f64() as f32).to_le_bytes());
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_flo<T: Scalar>(path: &Path) -> Result<FlowField<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(Error::FloFormat(format!(
            "file is {} bytes, too short for a header",
            bytes.len()
        )));
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::FloFormat(format!(
            "bad magic tag {magic}, expected {FLO_MAGIC}"
        )));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 {
        return Err(Error::FloFormat(format!("bad dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + 8 * w * h;
    if bytes.len() != expected {
        return Err(Error::FloFormat(format!(
            "truncated payload: {} bytes, expected {expected} for {w}x{h}",
            bytes.len()
        )));
    }
    let mut data = Tensor::zeros(&[2, h, w]);
    let hw = h * w;
    for i in 0..hw {
        let off = 12 + i * 8;
        let u = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let v = f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::FloFormat(format!(
                "non-finite flow value at pixel {i}"
            )));
        }
        data.data_mut()[i] = T::of(u as f64);
        data.data_mut()[hw + i] = T::of(v as f64);
    }
    FlowField::from_tensor(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let t = Tensor::<f32>::rand_uniform(&[2, 7, 9], -1e4, 1e4, &mut rng);
        let flow = FlowField::from_tensor(t).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        write_flo(&path, &flow).unwrap();
        let back = read_flo::<f32>(&path).unwrap();
        assert_eq!(back.tensor(), flow.tensor());
    }

    #[test]
    fn golden_bytes_for_a_two_by_one_field() {
        let flow = FlowField::<f32>::constant(2, 1, 1.0, -2.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.flo");
        write_flo(&path, &flow).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(
            hex,
            "5049454802000000010000000000803f000020c00000803f000020c0"
        );
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let flow = FlowField::<f32>::constant(3, 2, 0.5, 0.5);
        let path = dir.path().join("c.flo");
        write_flo(&path, &flow).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();

        // Wrong magic names the tag.
        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        let bad_path = dir.path().join("bad.flo");
        std::fs::write(&bad_path, &bad).unwrap();
        match read_flo::<f32>(&bad_path) {
            Err(Error::FloFormat(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected magic error, got {other:?}"),
        }

        // Truncated payload.
        bytes.truncate(bytes.len() - 3);
        let trunc_path = dir.path().join("trunc.flo");
        std::fs::write(&trunc_path, &bytes).unwrap();
        match read_flo::<f32>(&trunc_path) {
            Err(Error::FloFormat(msg)) => assert!(msg.contains("truncated")),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }
}
