//! Command implementations over the library API.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bimvfi::config::{EvalConfig, InferConfig, RunConfig, SynthConfig};
use bimvfi::data::{
    dataset::{write_manifest, write_triplet_dir, ManifestEntry, MANIFEST_NAME},
    load_image, load_manifest_dataset, load_triplet_dataset, save_image, synth_triplet,
    uniform_spec, CaseKind,
};
use bimvfi::kdvcf::{interpolate_uniform, TrainConfig, Trainer, TripletBatch};
use bimvfi::metrics::{epe, psnr, ssim};
use bimvfi::motionfield::flow_to_color;
use bimvfi::net::{level_count_for_resolution, Checkpoint, Model};
use bimvfi::{Error, Result};

use crate::CommonArgs;

fn load_run_config(common: &CommonArgs) -> Result<RunConfig> {
    match &common.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn synth(common: &CommonArgs) -> Result<()> {
    let run = load_run_config(common)?;
    let mut cfg: SynthConfig = run.synth.unwrap_or_default();
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&common.out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries: Vec<ManifestEntry> = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let t = cfg.t_choices[rng.gen_range(0..cfg.t_choices.len())];
        let (spec, kind) = if cfg.cases.is_empty() {
            (uniform_spec(cfg.width, cfg.height, t, &mut rng), "uniform".to_string())
        } else {
            let case = cfg.cases[i % cfg.cases.len()];
            let label = match case {
                CaseKind::Case1 => "case1".to_string(),
                CaseKind::Case2 { .. } => "case2".to_string(),
                CaseKind::Case3 { .. } => "case3".to_string(),
            };
            (
                bimvfi::data::random_spec(case, cfg.width, cfg.height, t, &mut rng),
                label,
            )
        };
        let item = synth_triplet::<f32>(&spec, cfg.width, cfg.height)?;
        let name = format!("item_{i:04}");
        entries.push(write_triplet_dir(&common.out, &name, &item, &spec, &kind)?);
        log::info!("wrote {name} (t={}, d={}, phi={:.4})", spec.t, spec.d, spec.phi);
    }
    write_manifest(&common.out, &entries)?;
    log::info!("manifest with {} items at {}", entries.len(), common.out.join(MANIFEST_NAME).display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn load_training_data(data: &Path) -> Result<Vec<TripletBatch<f32>>> {
    let set = if data.join(MANIFEST_NAME).exists() {
        load_manifest_dataset::<f32>(data)?
    } else {
        load_triplet_dataset::<f32>(data, None)?
    };
    if set.is_empty() {
        return Err(Error::Dataset(format!(
            "no triplets found under {}",
            data.display()
        )));
    }
    Ok(set)
}

pub fn train(common: &CommonArgs, data: &Path, resume: Option<&Path>) -> Result<()> {
    let run = load_run_config(common)?;
    let mut cfg: TrainConfig = run
        .train
        .ok_or_else(|| Error::Config("missing [train] section".into()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&common.out)?;

    let dataset = load_training_data(data)?;
    let mut trainer = match resume {
        Some(path) => Trainer::<f32>::from_checkpoint(Checkpoint::load(path)?, cfg.clone())?,
        None => Trainer::<f32>::new(cfg.clone())?,
    };
    let total = cfg.total_steps(dataset.len());

    let mut csv = String::from("step,term,value\n");
    while trainer.step < total {
        let report = trainer.run_step(&dataset)?;
        let step = trainer.step - 1;
        for (term, value) in &report.terms {
            writeln!(&mut csv, "{step},{term},{value}").expect("string write");
        }
        if step % 50 == 0 || trainer.step == total {
            log::info!("step {step}/{total}: loss {:.5}", report.total);
        }
        if cfg.checkpoint_every > 0 && trainer.step % cfg.checkpoint_every == 0 {
            let path = common.out.join(format!("step_{:06}.ckpt", trainer.step));
            trainer.checkpoint().save(&path)?;
        }
    }
    trainer.checkpoint().save(&common.out.join("final.ckpt"))?;
    std::fs::write(common.out.join("loss.csv"), csv)?;
    log::info!("training finished at step {total}; wrote final.ckpt and loss.csv");
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

fn format_t(t: f64) -> String {
    format!("{t:.4}").replace('.', "_")
}

pub fn infer(
    common: &CommonArgs,
    times_override: &[f64],
    checkpoint: Option<PathBuf>,
    frame0: Option<PathBuf>,
    frame1: Option<PathBuf>,
) -> Result<()> {
    let run = load_run_config(common)?;
    let mut cfg: InferConfig = run.infer.unwrap_or_default();
    if let Some(c) = checkpoint {
        cfg.checkpoint = c;
    }
    if let Some(f) = frame0 {
        cfg.frame0 = f;
    }
    if let Some(f) = frame1 {
        cfg.frame1 = f;
    }
    if !times_override.is_empty() {
        cfg.times = times_override.to_vec();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&common.out)?;

    let ck = Checkpoint::<f32>::load(&cfg.checkpoint)?;
    let model = Model::from_parts(ck.config, ck.params)?;
    let i0 = load_image::<f32>(&cfg.frame0)?;
    let i1 = load_image::<f32>(&cfg.frame1)?;
    if i0.shape() != i1.shape() {
        return Err(Error::invalid(format!(
            "source frames disagree on size: {:?} vs {:?}",
            i0.shape(),
            i1.shape()
        )));
    }
    let (_, h, w) = i0.dims3();
    let levels = if cfg.levels > 0 {
        cfg.levels
    } else {
        level_count_for_resolution(h, w)
    };
    log::info!("interpolating {w}x{h} at {} timesteps with {levels} levels", cfg.times.len());

    for &t in &cfg.times {
        let out = interpolate_uniform(&model, &i0, &i1, t, levels)?;
        let tag = format_t(t);
        save_image(&common.out.join(format!("interp_t{tag}.png")), &out.image)?;
        let max_mag = 32.0f32.max(out.flow_t0.tensor().abs_max());
        save_image(
            &common.out.join(format!("flow_t0_t{tag}.png")),
            &flow_to_color(&out.flow_t0, max_mag)?,
        )?;
        save_image(
            &common.out.join(format!("flow_t1_t{tag}.png")),
            &flow_to_color(&out.flow_t1, max_mag)?,
        )?;
        log::info!("t = {t}: wrote interp_t{tag}.png");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn eval(common: &CommonArgs, checkpoint: Option<PathBuf>, data: Option<PathBuf>) -> Result<()> {
    let run = load_run_config(common)?;
    let mut cfg: EvalConfig = run.eval.unwrap_or_default();
    if let Some(c) = checkpoint {
        cfg.checkpoint = c;
    }
    if let Some(d) = data {
        cfg.dataset = d;
    }
    std::fs::create_dir_all(&common.out)?;

    let ck = Checkpoint::<f32>::load(&cfg.checkpoint)?;
    let model = Model::from_parts(ck.config, ck.params)?;
    let dataset: Vec<TripletBatch<f32>> = if cfg.dataset.join(MANIFEST_NAME).exists() {
        load_manifest_dataset(&cfg.dataset)?
    } else {
        load_triplet_dataset(&cfg.dataset, cfg.pattern.as_deref())?
    };

    let mut csv = String::from("item,t,psnr,ssim,epe\n");
    let mut sums = (0.0f64, 0.0f64, 0.0f64);
    let mut epe_count = 0usize;
    for (idx, item) in dataset.iter().enumerate() {
        let (_, h, w) = item.i0.dims3();
        let levels = if cfg.levels > 0 {
            cfg.levels
        } else {
            level_count_for_resolution(h, w)
        };
        let out = interpolate_uniform(&model, &item.i0, &item.i1, item.t, levels)?;
        let p = psnr(&out.image, &item.it)?;
        let s = ssim(&out.image, &item.it)?;
        let e = match &item.gt {
            Some(gt) => {
                let v = epe(&out.flow_t0, &gt.flow_t0, Some(&gt.valid))?;
                epe_count += 1;
                sums.2 += v;
                format!("{v}")
            }
            None => String::new(),
        };
        sums.0 += p;
        sums.1 += s;
        writeln!(&mut csv, "{idx},{},{p},{s},{e}", item.t).expect("string write");
        log::info!("item {idx}: psnr {p:.2} dB, ssim {s:.4}");
    }
    if !dataset.is_empty() {
        let n = dataset.len() as f64;
        let e = if epe_count > 0 {
            format!("{}", sums.2 / epe_count as f64)
        } else {
            String::new()
        };
        writeln!(&mut csv, "aggregate,,{},{},{e}", sums.0 / n, sums.1 / n).expect("string write");
    }
    std::fs::write(common.out.join("metrics.csv"), csv)?;
    log::info!("wrote {}", common.out.join("metrics.csv").display());
    Ok(())
}

/// Shared CSV loader for tests.
#[cfg(test)]
pub fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_formatting_is_filename_safe() {
        assert_eq!(format_t(0.5), "0_5000");
        assert_eq!(format_t(0.25), "0_2500");
    }
}
