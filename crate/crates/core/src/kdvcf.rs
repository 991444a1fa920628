//! Teacher/student distillation training.
//!
//! The teacher process sees the target frame: it runs the full pyramid twice,
//! on `(I0, It)` with ratio-1 descriptors and on `(It, I1)` with ratio-0
//! descriptors, then reconstructs the target per level from the cross-pair
//! flows `(V_t->0, V_t->1)` through an extra CAUN + synthesis pass. Those
//! teacher flows supply the student's descriptor (as constants) and the
//! distillation targets (behind a stop gradient). The student runs on
//! `(I0, I1)` only and is all that remains at inference.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::losses::{
    charbonnier_g, census_g, distillation_g, smoothness_g, total_loss_g, zero_flow_reg_g,
    LossWeights,
};
use crate::motionfield::{bim_from_flows, teacher_bim, BimField, FlowField, TeacherPair};
use crate::net::pyramid::{carry_from_level, coarsest_carry, run_level};
use crate::net::{
    caun_forward, feature_pyramid, pyramid_forward_cached, required_divisor, synthesis_forward,
    FeaturePyramid, FlowScales, LevelState, Model, ModelConfig, OptimState, ParamBind,
};
use crate::optim::AdamW;
use crate::{Error, Result, Scalar, Tensor};

// ---------------------------------------------------------------------------
// Config and batch types
// ---------------------------------------------------------------------------

/// Training hyperparameters.
///
/// The published regime (crop 256, batch 32, 400 epochs, lr 1e-4, 3 levels)
/// is far beyond desk scale; the defaults here are the toy regime the test
/// suite trains, and the faithful values are noted in the sample config.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Pass-count over the dataset when `steps` is zero.
    pub epochs: usize,
    /// Explicit optimizer-step budget; takes precedence over `epochs`.
    pub steps: usize,
    pub lr_init: f64,
    pub crop: usize,
    pub seed: u64,
    pub levels: usize,
    pub weights: LossWeights,
    pub model: ModelConfig,
    pub weight_decay: f64,
    /// Emit a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
    /// Keep the synthesis net at its zero-initialized state for this many
    /// steps. With the head at zero the reconstruction is the plain average
    /// of the two warped frames, so early photometric pressure lands
    /// entirely on the flows instead of being absorbed by the mask and
    /// residual-image paths.
    pub freeze_synthesis_steps: usize,
    /// Randomly crop/flip/rotate/reverse/permute each sampled triplet.
    /// Disable for small-set overfitting, where augmentation noise drowns
    /// the photometric signal.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 0,
            steps: 2000,
            lr_init: 2e-4,
            crop: 64,
            seed: 0,
            levels: 2,
            weights: LossWeights::default(),
            model: ModelConfig::default(),
            weight_decay: 1e-4,
            checkpoint_every: 0,
            freeze_synthesis_steps: 400,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.levels == 0 {
            return Err(Error::invalid("levels must be positive"));
        }
        let d = required_divisor(self.levels);
        if self.crop % d != 0 {
            return Err(Error::invalid(format!(
                "crop {} must be divisible by {d} for {} levels",
                self.crop, self.levels
            )));
        }
        if self.steps == 0 && self.epochs == 0 {
            return Err(Error::invalid("either steps or epochs must be positive"));
        }
        if !(self.lr_init > 0.0) {
            return Err(Error::invalid("lr_init must be positive"));
        }
        Ok(())
    }

    pub fn total_steps(&self, dataset_len: usize) -> usize {
        if self.steps > 0 {
            self.steps
        } else {
            self.epochs * dataset_len.div_ceil(self.batch_size)
        }
    }
}

/// Exact ground truth attached to synthetic triplets.
#[derive(Clone, Debug)]
pub struct GroundTruth<T> {
    pub flow_t0: FlowField<T>,
    pub flow_t1: FlowField<T>,
    pub bim: BimField<T>,
    /// `[1, H, W]` mask, 1 where flow/BiM supervision is trustworthy.
    pub valid: Tensor<T>,
}

/// One training triplet; frames are `[3, H, W]` in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct TripletBatch<T> {
    pub i0: Tensor<T>,
    pub it: Tensor<T>,
    pub i1: Tensor<T>,
    pub t: f64,
    pub gt: Option<GroundTruth<T>>,
}

impl<T: Scalar> TripletBatch<T> {
    pub fn validate(&self) -> Result<()> {
        if self.i0.shape() != self.it.shape() || self.i0.shape() != self.i1.shape() {
            return Err(Error::dim("triplet frames", self.i0.shape(), self.i1.shape()));
        }
        if !(self.t > 0.0 && self.t < 1.0) {
            return Err(Error::invalid(format!("triplet t = {} outside (0, 1)", self.t)));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.i0.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.i0.shape()[1]
    }
}

// ---------------------------------------------------------------------------
// Teacher / student passes
// ---------------------------------------------------------------------------

/// Cross-pair reconstruction at one level: CAUN + synthesis over
/// `(V_t->0, V_t->1)` taken from the two teacher chains.
pub struct CrossLevel {
    pub feat_flow0: Var,
    pub feat_flow1: Var,
    pub flow_half0: Var,
    pub flow_half1: Var,
    pub flow_full0: Var,
    pub flow_full1: Var,
    pub mask_logits: Var,
    pub interp: Var,
}

/// Everything the teacher produces for one triplet, finest level first.
pub struct TeacherOutputs<T> {
    /// Chain on `(I0, It)`: `flow0 = V_t->0`, `flow1` is the self flow.
    pub pair_first: Vec<LevelState>,
    /// Chain on `(It, I1)`: `flow0` is the self flow, `flow1 = V_t->1`.
    pub pair_second: Vec<LevelState>,
    pub cross: Vec<CrossLevel>,
    /// Feature pyramids of the source frames, reusable by the student pass.
    pub pyramid0: FeaturePyramid<T>,
    pub pyramid1: FeaturePyramid<T>,
    /// Downsampled target frames per level (loss targets).
    pub target_frames: Vec<Tensor<T>>,
}

/// Run the teacher process: both pair chains plus the per-level cross
/// reconstruction. One random descriptor angle is drawn per pair per level.
pub fn teacher_pass<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    i0: &Tensor<T>,
    it: &Tensor<T>,
    i1: &Tensor<T>,
    levels: usize,
    rng: &mut impl Rng,
) -> Result<TeacherOutputs<T>> {
    let p0 = feature_pyramid(model, g, bind, i0, levels)?;
    let pt = feature_pyramid(model, g, bind, it, levels)?;
    let p1 = feature_pyramid(model, g, bind, i1, levels)?;

    let mut pair_first: Vec<LevelState> = Vec::with_capacity(levels);
    let mut pair_second: Vec<LevelState> = Vec::with_capacity(levels);
    let mut cross: Vec<CrossLevel> = Vec::with_capacity(levels);

    let (_, fh, fw) = g.value(p0.motion[levels - 1]).dims3();
    let mut carry_a = coarsest_carry(g, fh, fw);
    let mut carry_b = coarsest_carry(g, fh, fw);

    for level in (0..levels).rev() {
        let (_, fh, fw) = g.value(p0.motion[level]).dims3();
        let bim_a = teacher_bim::<T>(TeacherPair::First, fw, fh, rng);
        let bim_b = teacher_bim::<T>(TeacherPair::Second, fw, fh, rng);

        let state_a = run_level(model, g, bind, &p0, &pt, level, &carry_a, &bim_a)?;
        let state_b = run_level(model, g, bind, &pt, &p1, level, &carry_b, &bim_b)?;

        // Cross reconstruction from (V_t->0, V_t->1) with source contexts.
        let caun = caun_forward(
            model,
            g,
            bind,
            state_a.feat_flow0,
            state_b.feat_flow1,
            &p0.context[level],
            &p1.context[level],
        )?;
        let scales = FlowScales {
            feat: (state_a.feat_flow0, state_b.feat_flow1),
            half: caun.flow_half,
            full: caun.flow_full,
        };
        let synth = synthesis_forward(
            model,
            g,
            bind,
            p0.frame_vars[level],
            p1.frame_vars[level],
            &scales,
            &p0.context[level],
            &p1.context[level],
        )?;
        cross.push(CrossLevel {
            feat_flow0: scales.feat.0,
            feat_flow1: scales.feat.1,
            flow_half0: scales.half.0,
            flow_half1: scales.half.1,
            flow_full0: scales.full.0,
            flow_full1: scales.full.1,
            mask_logits: synth.mask_logits,
            interp: synth.interp,
        });

        if level > 0 {
            carry_a = carry_from_level(g, &state_a);
            carry_b = carry_from_level(g, &state_b);
        }
        pair_first.push(state_a);
        pair_second.push(state_b);
    }
    pair_first.reverse();
    pair_second.reverse();
    cross.reverse();

    let target_frames = pt.frames.clone();
    Ok(TeacherOutputs {
        pair_first,
        pair_second,
        cross,
        pyramid0: p0,
        pyramid1: p1,
        target_frames,
    })
}

/// Build the student's per-level descriptor from the teacher's feature-level
/// flows. Values are read out of the graph, so no gradient can flow from the
/// student loss into the teacher through this path.
pub fn build_student_bim<T: Scalar>(
    g: &Graph<T>,
    teacher: &TeacherOutputs<T>,
    eps: T,
    rng: &mut impl Rng,
) -> Result<Vec<BimField<T>>> {
    let mut bims = Vec::with_capacity(teacher.cross.len());
    for level in 0..teacher.cross.len() {
        let v0 = FlowField::from_tensor(g.value(teacher.pair_first[level].feat_flow0).clone())?;
        let v1 = FlowField::from_tensor(g.value(teacher.pair_second[level].feat_flow1).clone())?;
        bims.push(bim_from_flows(&v0, &v1, eps, rng)?);
    }
    Ok(bims)
}

/// Student pass over already-extracted source pyramids with an explicit
/// per-level descriptor (finest first).
pub fn student_pass_cached<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    p0: &FeaturePyramid<T>,
    p1: &FeaturePyramid<T>,
    bims: &[BimField<T>],
) -> Result<Vec<LevelState>> {
    if bims.len() != p0.frames.len() {
        return Err(Error::invalid(format!(
            "student pass needs one descriptor per level ({} != {})",
            bims.len(),
            p0.frames.len()
        )));
    }
    pyramid_forward_cached(model, g, bind, p0, p1, |level, w, h| {
        let bim = &bims[level];
        if (bim.width(), bim.height()) != (w, h) {
            return Err(Error::DimensionMismatch {
                context: "student descriptor resolution",
                left: vec![bim.height(), bim.width()],
                right: vec![h, w],
            });
        }
        Ok(bim.clone())
    })
}

/// Student pass from raw frames (the inference path).
pub fn student_pass<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    i0: &Tensor<T>,
    i1: &Tensor<T>,
    bims: &[BimField<T>],
) -> Result<Vec<LevelState>> {
    let levels = bims.len();
    let p0 = feature_pyramid(model, g, bind, i0, levels)?;
    let p1 = feature_pyramid(model, g, bind, i1, levels)?;
    student_pass_cached(model, g, bind, &p0, &p1, bims)
}

// ---------------------------------------------------------------------------
// Loss assembly and the training step
// ---------------------------------------------------------------------------

/// Itemized scalar losses of one step.
#[derive(Clone, Debug)]
pub struct LossReport {
    pub total: f64,
    pub terms: Vec<(&'static str, f64)>,
}

impl LossReport {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

struct SampleLoss {
    total: Var,
    itemized: Vec<(&'static str, Var)>,
}

/// Build the full KDVCF loss graph for one triplet.
fn sample_loss_graph<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    item: &TripletBatch<T>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SampleLoss> {
    let w = &cfg.weights;
    let teacher = teacher_pass(model, g, bind, &item.i0, &item.it, &item.i1, cfg.levels, rng)?;

    let bims = match model.config.descriptor {
        crate::net::DescriptorMode::Bim => {
            build_student_bim(g, &teacher, T::of(crate::motionfield::DEFAULT_EPS), rng)?
        }
        // Time-index ablation: the ratio channel carries the constant
        // timestep; there is no angle channel.
        crate::net::DescriptorMode::TimeIndex => (0..cfg.levels)
            .map(|level| {
                let (_, fh, fw) = g.value(teacher.pyramid0.motion[level]).dims3();
                BimField::new(
                    Tensor::full(&[fh, fw], T::of(item.t)),
                    Tensor::zeros(&[fh, fw]),
                )
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let student = student_pass_cached(model, g, bind, &teacher.pyramid0, &teacher.pyramid1, &bims)?;

    let mut per_level = Vec::with_capacity(cfg.levels);
    let mut itemized: Vec<(&'static str, Var)> = Vec::new();
    for level in 0..cfg.levels {
        let target = g.constant(teacher.target_frames[level].clone());
        let target_plain = &teacher.target_frames[level];
        let cross = &teacher.cross[level];
        let stu = &student[level];

        let char_t = charbonnier_g(g, cross.interp, target, T::of(w.charbonnier_eps));
        let css_t = census_g(g, cross.interp, target, w.census_patch);
        let char_s = charbonnier_g(g, stu.interp, target, T::of(w.charbonnier_eps));
        let css_s = census_g(g, stu.interp, target, w.census_patch);
        let pho_t = {
            let a = g.scale(char_t, T::of(w.lambda_char_teacher));
            let b = g.scale(css_t, T::of(w.lambda_census_teacher));
            g.add(a, b)
        };
        let pho_s = {
            let a = g.scale(char_s, T::of(w.lambda_char_student));
            let b = g.scale(css_s, T::of(w.lambda_census_student));
            g.add(a, b)
        };

        // Smoothness on the teacher's upsampled cross flows, edges from the
        // target frame the flows are anchored at.
        let s1_a = smoothness_g(g, cross.flow_full0, target_plain, T::of(w.edge_lambda));
        let s1_b = smoothness_g(g, cross.flow_full1, target_plain, T::of(w.edge_lambda));
        let smooth = {
            let s = g.add(s1_a, s1_b);
            g.scale(s, T::of(w.lambda_smooth))
        };
        // Self flows (t -> t) of both chains regularized to zero, at their
        // upsampled resolution.
        let reg_a = zero_flow_reg_g(g, teacher.pair_first[level].flow_full1);
        let reg_b = zero_flow_reg_g(g, teacher.pair_second[level].flow_full0);
        let reg = {
            let s = g.add(reg_a, reg_b);
            g.scale(s, T::of(w.lambda_reg))
        };
        let flo_t = g.add(smooth, reg);

        let distill = distillation_g(
            g,
            (stu.flow_full0, stu.flow_full1),
            (cross.flow_full0, cross.flow_full1),
        );
        let flo_s = g.scale(distill, T::of(w.lambda_distill));

        per_level.push((pho_t, pho_s, flo_t, flo_s));
        if level == 0 {
            itemized.extend([
                ("char_teacher", char_t),
                ("census_teacher", css_t),
                ("char_student", char_s),
                ("census_student", css_s),
                ("smooth", smooth),
                ("reg", reg),
                ("distill", distill),
            ]);
        }
    }
    let total = total_loss_g(g, &per_level, T::of(w.gamma_photo), T::of(w.gamma_flow));
    Ok(SampleLoss { total, itemized })
}

/// Deterministic per-(seed, step, lane) random stream.
pub fn stream_rng(seed: u64, step: usize, lane: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ lane.wrapping_mul(0xD1B5_4A32_D192_ED03),
    )
}

/// One optimizer update over a batch of triplets.
///
/// The teacher and student read the same parameter binding within each
/// sample graph, so any update is visible to both processes; samples are
/// processed in order and gradients accumulate in a fixed sequence, which
/// keeps training bit-reproducible.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    optim: &AdamW,
    optim_state: &mut OptimState<T>,
    batch: &[TripletBatch<T>],
    cfg: &TrainConfig,
    step: usize,
    lr: f64,
) -> Result<LossReport> {
    assert!(!batch.is_empty());
    let mut grad_acc: IndexMap<String, Tensor<T>> = IndexMap::new();
    let mut term_acc: IndexMap<&'static str, f64> = IndexMap::new();
    let mut total_acc = 0.0f64;

    for (lane, item) in batch.iter().enumerate() {
        item.validate()?;
        let mut rng = stream_rng(cfg.seed, step, lane as u64 + 1);
        let mut g = Graph::new();
        let bind = model.params.bind(&mut g);
        let before = model.params.checksum();
        let loss = sample_loss_graph(model, &mut g, &bind, item, cfg, &mut rng)?;

        let total = g.value(loss.total).data()[0].as_f64();
        if !total.is_finite() {
            // Name the first offending itemized term.
            for (name, v) in &loss.itemized {
                if !g.value(*v).data()[0].as_f64().is_finite() {
                    return Err(Error::NonFiniteLoss { term: name });
                }
            }
            return Err(Error::NonFiniteLoss { term: "total" });
        }
        total_acc += total;
        for (name, v) in &loss.itemized {
            *term_acc.entry(name).or_insert(0.0) += g.value(*v).data()[0].as_f64();
        }

        let mut grads = g.backward(loss.total);
        for (name, var) in bind.iter() {
            if let Some(grad) = grads.take(var) {
                match grad_acc.get_mut(name) {
                    Some(acc) => acc.add_assign(&grad),
                    None => {
                        grad_acc.insert(name.to_string(), grad);
                    }
                }
            }
        }
        debug_assert_eq!(before, model.params.checksum(), "forward must not mutate weights");
    }

    let scale = T::of(1.0 / batch.len() as f64);
    for (_, gt) in grad_acc.iter_mut() {
        *gt = gt.scale(scale);
    }
    if step < cfg.freeze_synthesis_steps {
        grad_acc.retain(|name, _| !name.starts_with("sn."));
    }
    optim.apply(&mut model.params, optim_state, &grad_acc, T::of(lr));

    let n = batch.len() as f64;
    let mut terms: Vec<(&'static str, f64)> = term_acc.into_iter().map(|(k, v)| (k, v / n)).collect();
    terms.insert(0, ("total", total_acc / n));
    Ok(LossReport {
        total: total_acc / n,
        terms,
    })
}

/// Cosine annealing: `lr_init * 0.5 * (1 + cos(pi * step / total))`.
pub fn lr_schedule(step: usize, total_steps: usize, lr_init: f64) -> f64 {
    let ratio = if total_steps == 0 {
        0.0
    } else {
        step as f64 / total_steps as f64
    };
    lr_init * 0.5 * (1.0 + (std::f64::consts::PI * ratio).cos())
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Finished interpolation at one timestep.
pub struct Interpolation<T> {
    /// Synthesized frame, clamped to `[0, 1]`, input-sized.
    pub image: Tensor<T>,
    /// Finest-level flows towards each source, input-sized.
    pub flow_t0: FlowField<T>,
    pub flow_t1: FlowField<T>,
}

/// Interpolate `(i0, i1)` at time `t` with the uniform-motion descriptor.
///
/// Frames of arbitrary size are reflect-padded to the pyramid's divisor and
/// the outputs cropped back, so the result always matches the input size.
pub fn interpolate_uniform<T: Scalar>(
    model: &Model<T>,
    i0: &Tensor<T>,
    i1: &Tensor<T>,
    t: f64,
    levels: usize,
) -> Result<Interpolation<T>> {
    if i0.shape() != i1.shape() {
        return Err(Error::dim("interpolate_uniform", i0.shape(), i1.shape()));
    }
    let (_, h, w) = i0.dims3();
    let d = required_divisor(levels);
    let ph = h.div_ceil(d) * d;
    let pw = w.div_ceil(d) * d;
    let (p0, p1) = if (ph, pw) == (h, w) {
        (i0.clone(), i1.clone())
    } else {
        (
            crate::kernels::sample::pad_reflect(i0, ph, pw),
            crate::kernels::sample::pad_reflect(i1, ph, pw),
        )
    };
    let mut g = Graph::new();
    let bind = model.params.bind(&mut g);
    let states = crate::net::pyramid_forward(
        model,
        &mut g,
        &bind,
        &p0,
        &p1,
        |_, fw, fh| crate::motionfield::uniform_bim(T::of(t), fw, fh),
        levels,
    )?;
    let finest = &states[0];
    let image = g
        .value(finest.interp)
        .crop_spatial(0, 0, h, w)
        .map(|v| v.max(T::zero()).min(T::one()));
    let flow_t0 = FlowField::from_tensor(g.value(finest.flow_full0).crop_spatial(0, 0, h, w))?;
    let flow_t1 = FlowField::from_tensor(g.value(finest.flow_full1).crop_spatial(0, 0, h, w))?;
    Ok(Interpolation {
        image,
        flow_t0,
        flow_t1,
    })
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

fn flip_tensor_h<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = t.dims3();
    let mut out = Tensor::zeros(&[c, h, w]);
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.set3(ci, y, x, t.at3(ci, y, w - 1 - x));
            }
        }
    }
    out
}

fn flip_tensor_v<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = t.dims3();
    let mut out = Tensor::zeros(&[c, h, w]);
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.set3(ci, y, x, t.at3(ci, h - 1 - y, x));
            }
        }
    }
    out
}

fn transpose_tensor<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = t.dims3();
    let mut out = Tensor::zeros(&[c, w, h]);
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.set3(ci, x, y, t.at3(ci, y, x));
            }
        }
    }
    out
}

fn crop_tensor<T: Scalar>(t: &Tensor<T>, x0: usize, y0: usize, size: usize) -> Tensor<T> {
    let (c, _, _) = t.dims3();
    let mut out = Tensor::zeros(&[c, size, size]);
    for ci in 0..c {
        for y in 0..size {
            for x in 0..size {
                out.set3(ci, y, x, t.at3(ci, y0 + y, x0 + x));
            }
        }
    }
    out
}

fn map_gt<T: Scalar>(
    gt: &GroundTruth<T>,
    frame_op: impl Fn(&Tensor<T>) -> Tensor<T>,
    flow_channel_fix: impl Fn(&mut Tensor<T>),
    angle_map: impl Fn(T) -> T,
    ratio_map: impl Fn(T) -> T,
    swap_directions: bool,
) -> GroundTruth<T> {
    let mut f0 = frame_op(gt.flow_t0.tensor());
    let mut f1 = frame_op(gt.flow_t1.tensor());
    flow_channel_fix(&mut f0);
    flow_channel_fix(&mut f1);
    if swap_directions {
        std::mem::swap(&mut f0, &mut f1);
    }
    let (h, w) = {
        let s = f0.shape();
        (s[1], s[2])
    };
    let ratio2 = {
        let r = gt.bim.ratio().clone().reshape(&[1, gt.bim.height(), gt.bim.width()]).unwrap();
        frame_op(&r).reshape(&[h, w]).unwrap().map(&ratio_map)
    };
    let angle2 = {
        let a = gt.bim.angle().clone().reshape(&[1, gt.bim.height(), gt.bim.width()]).unwrap();
        frame_op(&a)
            .reshape(&[h, w])
            .unwrap()
            .map(|v| crate::motionfield::wrap_angle(angle_map(v)))
    };
    GroundTruth {
        flow_t0: FlowField::from_tensor(f0).expect("finite by construction"),
        flow_t1: FlowField::from_tensor(f1).expect("finite by construction"),
        bim: BimField::new(ratio2, angle2).expect("same shapes"),
        valid: frame_op(&gt.valid),
    }
}

/// Mirror horizontally: `u` negates, relative angles reverse orientation.
pub fn flip_triplet_h<T: Scalar>(b: &TripletBatch<T>) -> TripletBatch<T> {
    TripletBatch {
        i0: flip_tensor_h(&b.i0),
        it: flip_tensor_h(&b.it),
        i1: flip_tensor_h(&b.i1),
        t: b.t,
        gt: b.gt.as_ref().map(|gt| {
            map_gt(
                gt,
                flip_tensor_h,
                |f| {
                    let (_, h, w) = f.dims3();
                    for i in 0..h * w {
                        f.data_mut()[i] = -f.data_mut()[i];
                    }
                },
                |a| -a,
                |r| r,
                false,
            )
        }),
    }
}

/// Mirror vertically: `v` negates, relative angles reverse orientation.
pub fn flip_triplet_v<T: Scalar>(b: &TripletBatch<T>) -> TripletBatch<T> {
    TripletBatch {
        i0: flip_tensor_v(&b.i0),
        it: flip_tensor_v(&b.it),
        i1: flip_tensor_v(&b.i1),
        t: b.t,
        gt: b.gt.as_ref().map(|gt| {
            map_gt(
                gt,
                flip_tensor_v,
                |f| {
                    let (_, h, w) = f.dims3();
                    let hw = h * w;
                    for i in 0..hw {
                        f.data_mut()[hw + i] = -f.data_mut()[hw + i];
                    }
                },
                |a| -a,
                |r| r,
                false,
            )
        }),
    }
}

/// Rotate 90 degrees clockwise (transpose then horizontal mirror); rotations
/// preserve relative angles.
pub fn rotate_triplet_90<T: Scalar>(b: &TripletBatch<T>) -> TripletBatch<T> {
    let rot = |t: &Tensor<T>| flip_tensor_h(&transpose_tensor(t));
    TripletBatch {
        i0: rot(&b.i0),
        it: rot(&b.it),
        i1: rot(&b.i1),
        t: b.t,
        gt: b.gt.as_ref().map(|gt| {
            map_gt(
                gt,
                rot,
                |f| {
                    // Vector (u, v) -> (-v, u) under this rotation.
                    let (_, h, w) = f.dims3();
                    let hw = h * w;
                    for i in 0..hw {
                        let u = f.data()[i];
                        let v = f.data()[hw + i];
                        f.data_mut()[i] = -v;
                        f.data_mut()[hw + i] = u;
                    }
                },
                |a| a,
                |r| r,
                false,
            )
        }),
    }
}

/// Temporal reversal: swap the source frames, `t -> 1 - t`, swap the flow
/// directions, `R -> 1 - R` and `Phi -> -Phi`.
pub fn reverse_triplet_time<T: Scalar>(b: &TripletBatch<T>) -> TripletBatch<T> {
    TripletBatch {
        i0: b.i1.clone(),
        it: b.it.clone(),
        i1: b.i0.clone(),
        t: 1.0 - b.t,
        gt: b.gt.as_ref().map(|gt| {
            map_gt(
                gt,
                |t| t.clone(),
                |_| {},
                |a| -a,
                |r| T::one() - r,
                true,
            )
        }),
    }
}

/// One shared channel permutation across all three frames.
pub fn permute_triplet_channels<T: Scalar>(b: &TripletBatch<T>, perm: [usize; 3]) -> TripletBatch<T> {
    let apply = |t: &Tensor<T>| {
        let (_, h, w) = t.dims3();
        let mut out = Tensor::zeros(&[3, h, w]);
        for (dst, &src) in perm.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    out.set3(dst, y, x, t.at3(src, y, x));
                }
            }
        }
        out
    };
    TripletBatch {
        i0: apply(&b.i0),
        it: apply(&b.it),
        i1: apply(&b.i1),
        t: b.t,
        gt: b.gt.clone(),
    }
}

/// Crop all three frames (and ground truth) to `size` at a given corner.
pub fn crop_triplet<T: Scalar>(
    b: &TripletBatch<T>,
    x0: usize,
    y0: usize,
    size: usize,
) -> TripletBatch<T> {
    let crop = |t: &Tensor<T>| crop_tensor(t, x0, y0, size);
    TripletBatch {
        i0: crop(&b.i0),
        it: crop(&b.it),
        i1: crop(&b.i1),
        t: b.t,
        gt: b.gt.as_ref().map(|gt| map_gt(gt, crop, |_| {}, |a| a, |r| r, false)),
    }
}

/// Random crop, flips, right-angle rotation, temporal reversal and a shared
/// channel permutation.
pub fn augment_triplet<T: Scalar>(
    b: &TripletBatch<T>,
    rng: &mut impl Rng,
    crop: usize,
) -> Result<TripletBatch<T>> {
    let (h, w) = (b.height(), b.width());
    if crop > w || crop > h {
        return Err(Error::invalid(format!(
            "crop {crop} exceeds frame size {w}x{h}"
        )));
    }
    let x0 = rng.gen_range(0..=w - crop);
    let y0 = rng.gen_range(0..=h - crop);
    let mut out = crop_triplet(b, x0, y0, crop);
    if rng.gen_bool(0.5) {
        out = flip_triplet_h(&out);
    }
    if rng.gen_bool(0.5) {
        out = flip_triplet_v(&out);
    }
    for _ in 0..rng.gen_range(0..4u32) {
        out = rotate_triplet_90(&out);
    }
    if rng.gen_bool(0.5) {
        out = reverse_triplet_time(&out);
    }
    let perms: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let perm = perms[rng.gen_range(0..6)];
    Ok(permute_triplet_channels(&out, perm))
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

/// Stateful training driver with deterministic, resumable streams: the
/// randomness of step `k` depends only on `(seed, k)`, so a resume from a
/// checkpoint replays the exact remaining schedule.
pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub optim_state: OptimState<T>,
    pub adam: AdamW,
    pub cfg: TrainConfig,
    pub step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model.clone(), cfg.seed)?;
        let adam = AdamW {
            weight_decay: cfg.weight_decay,
            ..AdamW::default()
        };
        Ok(Self {
            model,
            optim_state: OptimState::default(),
            adam,
            cfg,
            step: 0,
        })
    }

    pub fn from_checkpoint(ck: crate::net::Checkpoint<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if ck.config != cfg.model {
            return Err(Error::Checkpoint(
                "checkpoint model config differs from the training config".into(),
            ));
        }
        let adam = AdamW {
            weight_decay: cfg.weight_decay,
            ..AdamW::default()
        };
        let step = ck.step;
        Ok(Self {
            model: Model::from_parts(ck.config, ck.params)?,
            optim_state: ck.optim.unwrap_or_default(),
            adam,
            cfg,
            step,
        })
    }

    pub fn checkpoint(&self) -> crate::net::Checkpoint<T> {
        crate::net::Checkpoint {
            config: self.model.config.clone(),
            params: self.model.params.clone(),
            optim: Some(self.optim_state.clone()),
            step: self.step,
        }
    }

    /// Assemble the batch for a step: deterministic sampling + augmentation.
    pub fn make_batch(&self, dataset: &[TripletBatch<T>]) -> Result<Vec<TripletBatch<T>>> {
        if dataset.is_empty() {
            return Err(Error::Dataset("empty training dataset".into()));
        }
        let mut rng = stream_rng(self.cfg.seed, self.step, 0);
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let idx = rng.gen_range(0..dataset.len());
            if self.cfg.augment {
                batch.push(augment_triplet(&dataset[idx], &mut rng, self.cfg.crop)?);
            } else {
                batch.push(dataset[idx].clone());
            }
        }
        Ok(batch)
    }

    /// Run one optimizer step on a deterministic batch from `dataset`.
    pub fn run_step(&mut self, dataset: &[TripletBatch<T>]) -> Result<LossReport> {
        let total_steps = self.cfg.total_steps(dataset.len());
        let batch = self.make_batch(dataset)?;
        let lr = lr_schedule(self.step, total_steps, self.cfg.lr_init);
        let report = train_step(
            &mut self.model,
            &self.adam,
            &mut self.optim_state,
            &batch,
            &self.cfg,
            self.step,
            lr,
        )?;
        self.step += 1;
        Ok(report)
    }
}
