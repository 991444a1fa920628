//! Folder-of-triplets ingestion and the synthetic dataset layout.
//!
//! Each triplet directory holds its frames as PNGs in filename order. Three
//! frames form one triplet at `t = 0.5`; longer sequences (septuplet-style)
//! yield one triplet per interior frame with `t = k / (N - 1)` inferred from
//! the frame index.
//!
//! Synthetic datasets add a line-oriented `manifest.txt` (directory name
//! plus `key=value` annotations such as the true timestep and case
//! parameters) and per-item ground truth: `flow_t0.flo`, `flow_t1.flo` and
//! a `valid.png` supervision mask.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::flo::{read_flo, write_flo};
use crate::data::png::{load_image, save_image};
use crate::data::synth::MotionSpec;
use crate::kdvcf::{GroundTruth, TripletBatch};
use crate::motionfield::bim_from_flows;
use crate::{Error, Result, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Deterministically ordered triplets from `root`. `pattern`, when set,
/// keeps only directories whose name contains it. A root without triplet
/// directories yields an empty list; unreadable frames are hard errors while
/// dimension mismatches skip the directory with a warning.
pub fn load_triplet_dataset<T: Scalar>(
    root: &Path,
    pattern: Option<&str>,
) -> Result<Vec<TripletBatch<T>>> {
    if !root.exists() {
        return Err(Error::Dataset(format!("{} does not exist", root.display())));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .filter(|p| {
            pattern.is_none_or(|pat| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.contains(pat))
            })
        })
        .collect();
    dirs.sort();

    let mut out = Vec::new();
    for dir in dirs {
        let mut frames: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
            })
            .collect();
        frames.sort();
        if frames.len() < 3 {
            continue;
        }
        let images: Vec<_> = frames
            .iter()
            .map(|p| load_image::<T>(p))
            .collect::<Result<_>>()?;
        let shape0 = images[0].shape().to_vec();
        if images.iter().any(|img| img.shape() != shape0) {
            log::warn!(
                "skipping {}: frames disagree on dimensions",
                dir.display()
            );
            continue;
        }
        let n = images.len();
        for k in 1..n - 1 {
            out.push(TripletBatch {
                i0: images[0].clone(),
                it: images[k].clone(),
                i1: images[n - 1].clone(),
                t: k as f64 / (n - 1) as f64,
                gt: None,
            });
        }
    }
    Ok(out)
}

/// One line of a synthetic-dataset manifest.
#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub dir: String,
    pub t: f64,
    pub d: f64,
    pub phi: f64,
    pub kind: String,
}

impl ManifestEntry {
    pub fn from_spec(dir: String, spec: &MotionSpec, kind: &str) -> Self {
        Self {
            dir,
            t: spec.t,
            d: spec.d,
            phi: spec.phi,
            kind: kind.to_string(),
        }
    }

    fn to_line(&self) -> String {
        format!(
            "{} t={} d={} phi={} kind={}",
            self.dir, self.t, self.d, self.phi, self.kind
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace();
        let dir = parts
            .next()
            .ok_or_else(|| Error::Dataset("empty manifest line".into()))?
            .to_string();
        let mut entry = Self {
            dir,
            t: 0.5,
            d: 0.5,
            phi: std::f64::consts::PI,
            kind: String::new(),
        };
        for kv in parts {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::Dataset(format!("bad manifest token `{kv}`")))?;
            match key {
                "t" => entry.t = value.parse().map_err(|_| bad_num(kv))?,
                "d" => entry.d = value.parse().map_err(|_| bad_num(kv))?,
                "phi" => entry.phi = value.parse().map_err(|_| bad_num(kv))?,
                "kind" => entry.kind = value.to_string(),
                _ => return Err(Error::Dataset(format!("unknown manifest key `{key}`"))),
            }
        }
        Ok(entry)
    }
}

fn bad_num(tok: &str) -> Error {
    Error::Dataset(format!("unparsable manifest number in `{tok}`"))
}

/// Write one synthetic triplet directory (frames, ground-truth flows,
/// validity mask) and return its manifest entry.
pub fn write_triplet_dir<T: Scalar>(
    root: &Path,
    name: &str,
    item: &TripletBatch<T>,
    spec: &MotionSpec,
    kind: &str,
) -> Result<ManifestEntry> {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir)?;
    save_image(&dir.join("im0.png"), &item.i0)?;
    save_image(&dir.join("im1.png"), &item.it)?;
    save_image(&dir.join("im2.png"), &item.i1)?;
    if let Some(gt) = &item.gt {
        write_flo(&dir.join("flow_t0.flo"), &gt.flow_t0)?;
        write_flo(&dir.join("flow_t1.flo"), &gt.flow_t1)?;
        let (_, h, w) = gt.valid.dims3();
        let mut rgb = Tensor::<T>::zeros(&[3, h, w]);
        for y in 0..h {
            for x in 0..w {
                let v = gt.valid.at3(0, y, x);
                for ci in 0..3 {
                    rgb.set3(ci, y, x, v);
                }
            }
        }
        save_image(&dir.join("valid.png"), &rgb)?;
    }
    Ok(ManifestEntry::from_spec(name.to_string(), spec, kind))
}

/// Write the manifest for a set of entries.
pub fn write_manifest(root: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        writeln!(&mut text, "{}", e.to_line()).expect("string write");
    }
    std::fs::write(root.join(MANIFEST_NAME), text)?;
    Ok(())
}

/// Load a manifest-described synthetic dataset, reattaching ground truth
/// (flows, descriptor rebuilt from the manifest parameters, validity mask).
pub fn load_manifest_dataset<T: Scalar>(root: &Path) -> Result<Vec<TripletBatch<T>>> {
    let text = std::fs::read_to_string(root.join(MANIFEST_NAME))
        .map_err(|e| Error::Dataset(format!("manifest: {e}")))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let entry = ManifestEntry::parse(line)?;
        let dir = root.join(&entry.dir);
        let i0 = load_image::<T>(&dir.join("im0.png"))?;
        let it = load_image::<T>(&dir.join("im1.png"))?;
        let i1 = load_image::<T>(&dir.join("im2.png"))?;
        let gt = if dir.join("flow_t0.flo").exists() {
            let flow_t0 = read_flo::<T>(&dir.join("flow_t0.flo"))?;
            let flow_t1 = read_flo::<T>(&dir.join("flow_t1.flo"))?;
            let valid_rgb = load_image::<T>(&dir.join("valid.png"))?;
            let (_, h, w) = valid_rgb.dims3();
            let mut valid = Tensor::<T>::zeros(&[1, h, w]);
            for y in 0..h {
                for x in 0..w {
                    let v = if valid_rgb.at3(0, y, x) > T::of(0.5) {
                        T::one()
                    } else {
                        T::zero()
                    };
                    valid.set3(0, y, x, v);
                }
            }
            // Descriptor per the manifest on moving pixels, degenerate fill
            // elsewhere; the randomized fill is irrelevant under the mask.
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let bim = bim_from_flows(
                &flow_t0,
                &flow_t1,
                T::of(crate::motionfield::DEFAULT_EPS),
                &mut rng,
            )?;
            Some(GroundTruth {
                flow_t0,
                flow_t1,
                bim,
                valid,
            })
        } else {
            None
        };
        out.push(TripletBatch {
            i0,
            it,
            i1,
            t: entry.t,
            gt,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::png::save_image;
    use crate::data::synth::{random_spec, synth_triplet, CaseKind};

    fn write_frames(dir: &Path, n: usize, size: usize, seed: u64) {
        std::fs::create_dir_all(dir).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..n {
            let img = Tensor::<f32>::rand_uniform(&[3, size, size], 0.0, 1.0, &mut rng);
            save_image(&dir.join(format!("im{i}.png")), &img).unwrap();
        }
    }

    #[test]
    fn three_frame_folder_gives_center_triplet() {
        let root = tempfile::tempdir().unwrap();
        write_frames(&root.path().join("clip0"), 3, 8, 1);
        let set = load_triplet_dataset::<f32>(root.path(), None).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set[0].t, 0.5);
    }

    #[test]
    fn septuplet_folder_infers_t_from_index() {
        let root = tempfile::tempdir().unwrap();
        write_frames(&root.path().join("seq"), 7, 8, 2);
        let set = load_triplet_dataset::<f32>(root.path(), None).unwrap();
        assert_eq!(set.len(), 5);
        assert!((set[1].t - 2.0 / 6.0).abs() < 1e-12, "target index 2 -> t = 2/6");
    }

    #[test]
    fn empty_root_is_not_an_error() {
        let root = tempfile::tempdir().unwrap();
        let set = load_triplet_dataset::<f32>(root.path(), None).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn mismatched_dimensions_skip_with_warning() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("bad");
        std::fs::create_dir_all(&dir).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        save_image(
            &dir.join("a.png"),
            &Tensor::<f32>::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut rng),
        )
        .unwrap();
        save_image(
            &dir.join("b.png"),
            &Tensor::<f32>::rand_uniform(&[3, 6, 8], 0.0, 1.0, &mut rng),
        )
        .unwrap();
        save_image(
            &dir.join("c.png"),
            &Tensor::<f32>::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut rng),
        )
        .unwrap();
        write_frames(&root.path().join("good"), 3, 8, 4);
        let set = load_triplet_dataset::<f32>(root.path(), None).unwrap();
        assert_eq!(set.len(), 1, "bad directory skipped, good one kept");
    }

    #[test]
    fn pattern_filters_directories() {
        let root = tempfile::tempdir().unwrap();
        write_frames(&root.path().join("train_000"), 3, 8, 5);
        write_frames(&root.path().join("val_000"), 3, 8, 6);
        let set = load_triplet_dataset::<f32>(root.path(), Some("train")).unwrap();
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn synthetic_dataset_roundtrips_through_disk() {
        let root = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let spec = random_spec(CaseKind::Case2 { d: 0.4 }, 48, 48, 0.5, &mut rng);
        let item = synth_triplet::<f32>(&spec, 48, 48).unwrap();
        let entry = write_triplet_dir(root.path(), "item_0000", &item, &spec, "case2").unwrap();
        assert_eq!(entry.d, 0.4);
        write_manifest(root.path(), &[entry]).unwrap();

        let back = load_manifest_dataset::<f32>(root.path()).unwrap();
        assert_eq!(back.len(), 1);
        let loaded = &back[0];
        assert_eq!(loaded.t, 0.5);
        let gt_orig = item.gt.as_ref().unwrap();
        let gt_back = loaded.gt.as_ref().unwrap();
        // Flow ground truth survives bit-exactly through .flo.
        assert_eq!(gt_back.flow_t0.tensor(), gt_orig.flow_t0.tensor());
        assert_eq!(gt_back.flow_t1.tensor(), gt_orig.flow_t1.tensor());
        // Frames within PNG quantization.
        let e = loaded.it.sub(&item.it).unwrap().abs_max();
        assert!(e <= 0.5 / 255.0 + 1e-6);
        // Validity mask preserved.
        assert_eq!(&gt_back.valid, &gt_orig.valid);
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let root = tempfile::tempdir().unwrap();
        std::fs::write(root.path().join(MANIFEST_NAME), "dir t=0.5 bogus=1\n").unwrap();
        assert!(load_manifest_dataset::<f32>(root.path()).is_err());
    }
}
