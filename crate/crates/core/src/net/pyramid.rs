//! Recurrent coarse-to-fine controller.
//!
//! Levels run from the coarsest (`L - 1`) to the finest (`0`); images are
//! halved per level, features live at a quarter of each level's image size,
//! and one shared parameter set serves every level. The previous level's
//! full-resolution flows, halved in size and magnitude, seed the next level
//! together with its downsampled blending mask.

use crate::autodiff::{Graph, Var};
use crate::kernels::sample::downsample2_mean;
use crate::motionfield::BimField;
use crate::net::caun::resample_flow_g;
use crate::net::{
    bimfn_forward, caun_forward, extract_context_features, extract_motion_features,
    synthesis_forward, Model, ParamBind, CONTEXT_SCALES,
};
use crate::{Error, Result, Scalar, Tensor};

/// Flows at the three scales consumed by the synthesis net.
pub struct FlowScales {
    /// Feature resolution (image / 4).
    pub feat: (Var, Var),
    /// Image / 2.
    pub half: (Var, Var),
    /// Image resolution of the level.
    pub full: (Var, Var),
}

/// Everything one pyramid level produced.
#[derive(Debug)]
pub struct LevelState {
    /// Pyramid level index (0 = finest).
    pub level: usize,
    /// BiMFN flows at feature resolution.
    pub feat_flow0: Var,
    pub feat_flow1: Var,
    /// Residuals and the carried (resampled previous) flows:
    /// `feat_flow = carried + residual`.
    pub residual0: Var,
    pub residual1: Var,
    pub carried0: Var,
    pub carried1: Var,
    /// CAUN outputs.
    pub flow_half0: Var,
    pub flow_half1: Var,
    pub flow_full0: Var,
    pub flow_full1: Var,
    pub kernels2: (Var, Var),
    pub kernels4: (Var, Var),
    /// Synthesis outputs at the level's image resolution.
    pub mask_logits: Var,
    pub interp_residual: Var,
    pub interp: Var,
}

/// Pyramid depth rule tied to input resolution: 3 levels at 256-class
/// resolutions, 5 at 720p-class, 7 at 4K-class.
pub fn level_count_for_resolution(h: usize, w: usize) -> usize {
    let m = h.max(w).max(1) as f64;
    let l = 3.0 + (m / 256.0).log2().round();
    (l.max(1.0)) as usize
}

/// Image dimensions must be divisible by this for an `levels`-deep pyramid.
pub fn required_divisor(levels: usize) -> usize {
    4 << (levels - 1)
}

fn check_divisible(w: usize, h: usize, levels: usize) -> Result<()> {
    let d = required_divisor(levels);
    if w % d != 0 || h % d != 0 {
        return Err(Error::IndivisibleDimensions {
            width: w,
            height: h,
            required: d,
        });
    }
    Ok(())
}

/// Per-level frames and features of one input image.
pub struct FeaturePyramid<T> {
    /// Downsampled frames, index = level.
    pub frames: Vec<Tensor<T>>,
    pub frame_vars: Vec<Var>,
    pub motion: Vec<Var>,
    pub context: Vec<[Var; CONTEXT_SCALES]>,
}

/// Downsample the frame per level and extract motion/context features once;
/// shared by every process that consumes this image in the same graph.
pub fn feature_pyramid<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    img: &Tensor<T>,
    levels: usize,
) -> Result<FeaturePyramid<T>> {
    let (_, h, w) = img.dims3();
    check_divisible(w, h, levels)?;
    let mut frames = Vec::with_capacity(levels);
    let mut cur = img.clone();
    for _ in 0..levels {
        let next = if frames.len() + 1 < levels {
            Some(downsample2_mean(&cur))
        } else {
            None
        };
        frames.push(cur);
        match next {
            Some(n) => cur = n,
            None => break,
        }
    }
    let mut frame_vars = Vec::with_capacity(levels);
    let mut motion = Vec::with_capacity(levels);
    let mut context = Vec::with_capacity(levels);
    for frame in &frames {
        let v = g.constant(frame.clone());
        frame_vars.push(v);
        motion.push(extract_motion_features(model, g, bind, v)?);
        context.push(extract_context_features(model, g, bind, v)?);
    }
    Ok(FeaturePyramid {
        frames,
        frame_vars,
        motion,
        context,
    })
}

/// State carried from one level to the next.
pub struct Carry {
    pub flow0: Var,
    pub flow1: Var,
    pub mask: Var,
}

/// Zero flows and zero mask logits at the coarsest level's feature
/// resolution: the symmetric prior (zero logits blend both frames equally).
pub fn coarsest_carry<T: Scalar>(g: &mut Graph<T>, feat_h: usize, feat_w: usize) -> Carry {
    Carry {
        flow0: g.constant(Tensor::zeros(&[2, feat_h, feat_w])),
        flow1: g.constant(Tensor::zeros(&[2, feat_h, feat_w])),
        mask: g.constant(Tensor::zeros(&[1, feat_h, feat_w])),
    }
}

/// Resample the previous level's outputs to the next level's feature
/// resolution: flows halve in size and magnitude, mask logits only in size.
pub fn carry_from_level<T: Scalar>(g: &mut Graph<T>, state: &LevelState) -> Carry {
    let (_, h, w) = g.value(state.flow_full0).dims3();
    Carry {
        flow0: resample_flow_g(g, state.flow_full0, h / 2, w / 2, 0.5),
        flow1: resample_flow_g(g, state.flow_full1, h / 2, w / 2, 0.5),
        mask: g.resize_bilinear(state.mask_logits, h / 2, w / 2),
    }
}

/// Run one full level (BiMFN, CAUN, synthesis) of the pair `(A, B)`.
#[allow(clippy::too_many_arguments)]
pub fn run_level<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    pa: &FeaturePyramid<T>,
    pb: &FeaturePyramid<T>,
    level: usize,
    carry: &Carry,
    bim: &BimField<T>,
) -> Result<LevelState> {
    let flows = bimfn_forward(
        model,
        g,
        bind,
        pa.motion[level],
        pb.motion[level],
        carry.flow0,
        carry.flow1,
        carry.mask,
        bim,
    )?;
    let caun = caun_forward(
        model,
        g,
        bind,
        flows.flow0,
        flows.flow1,
        &pa.context[level],
        &pb.context[level],
    )?;
    let scales = FlowScales {
        feat: (flows.flow0, flows.flow1),
        half: caun.flow_half,
        full: caun.flow_full,
    };
    let synth = synthesis_forward(
        model,
        g,
        bind,
        pa.frame_vars[level],
        pb.frame_vars[level],
        &scales,
        &pa.context[level],
        &pb.context[level],
    )?;
    Ok(LevelState {
        level,
        feat_flow0: flows.flow0,
        feat_flow1: flows.flow1,
        residual0: flows.residual0,
        residual1: flows.residual1,
        carried0: flows.carried0,
        carried1: flows.carried1,
        flow_half0: scales.half.0,
        flow_half1: scales.half.1,
        flow_full0: scales.full.0,
        flow_full1: scales.full.1,
        kernels2: caun.kernels2,
        kernels4: caun.kernels4,
        mask_logits: synth.mask_logits,
        interp_residual: synth.residual,
        interp: synth.interp,
    })
}

/// Full coarse-to-fine pass over already-extracted feature pyramids.
///
/// `bim_provider(level, feat_w, feat_h)` supplies the descriptor at each
/// level's feature resolution. Returns level states finest-first.
pub fn pyramid_forward_cached<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    pa: &FeaturePyramid<T>,
    pb: &FeaturePyramid<T>,
    mut bim_provider: impl FnMut(usize, usize, usize) -> Result<BimField<T>>,
) -> Result<Vec<LevelState>> {
    let levels = pa.frames.len();
    assert_eq!(levels, pb.frames.len());
    let mut states: Vec<LevelState> = Vec::with_capacity(levels);
    let mut carry = {
        let (_, fh, fw) = g.value(pa.motion[levels - 1]).dims3();
        coarsest_carry(g, fh, fw)
    };
    for level in (0..levels).rev() {
        let (_, fh, fw) = g.value(pa.motion[level]).dims3();
        let bim = bim_provider(level, fw, fh)?;
        let state = run_level(model, g, bind, pa, pb, level, &carry, &bim)?;
        if level > 0 {
            carry = carry_from_level(g, &state);
        }
        states.push(state);
    }
    states.reverse();
    Ok(states)
}

/// Convenience wrapper over [`pyramid_forward_cached`] building both feature
/// pyramids from raw frames.
pub fn pyramid_forward<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    img0: &Tensor<T>,
    img1: &Tensor<T>,
    bim_provider: impl FnMut(usize, usize, usize) -> Result<BimField<T>>,
    levels: usize,
) -> Result<Vec<LevelState>> {
    if img0.shape() != img1.shape() {
        return Err(Error::dim("pyramid_forward", img0.shape(), img1.shape()));
    }
    let pa = feature_pyramid(model, g, bind, img0, levels)?;
    let pb = feature_pyramid(model, g, bind, img1, levels)?;
    pyramid_forward_cached(model, g, bind, &pa, &pb, bim_provider)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motionfield::uniform_bim;
    use crate::net::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_rule_matches_reference_resolutions() {
        assert_eq!(level_count_for_resolution(256, 256), 3);
        assert_eq!(level_count_for_resolution(720, 1280), 5);
        assert_eq!(level_count_for_resolution(2160, 4096), 7);
        assert_eq!(level_count_for_resolution(32, 32), 1);
    }

    #[test]
    fn divisibility_is_enforced_with_hint() {
        let m = Model::<f32>::new(ModelConfig::default(), 1).unwrap();
        let mut g = Graph::new();
        let bind = m.params.bind(&mut g);
        let img = Tensor::<f32>::zeros(&[3, 40, 40]);
        let err = pyramid_forward(&m, &mut g, &bind, &img, &img, |_, w, h| {
            uniform_bim(0.5, w, h)
        }, 3)
        .unwrap_err();
        match err {
            Error::IndivisibleDimensions { required, .. } => assert_eq!(required, 16),
            other => panic!("unexpected error {other}"),
        }
        assert_eq!(required_divisor(2), 8);
        assert_eq!(required_divisor(1), 4);
    }

    #[test]
    fn two_level_shapes_finest_first() {
        let m = Model::<f32>::new(ModelConfig::default(), 2).unwrap();
        let mut g = Graph::new();
        let bind = m.params.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let i0 = Tensor::<f32>::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
        let i1 = Tensor::<f32>::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
        let states = pyramid_forward(&m, &mut g, &bind, &i0, &i1, |_, w, h| {
            uniform_bim(0.5, w, h)
        }, 2)
        .unwrap();
        assert_eq!(states.len(), 2);
        assert_eq!(states[0].level, 0);
        assert_eq!(g.shape(states[0].interp), &[3, 64, 64]);
        assert_eq!(g.shape(states[1].interp), &[3, 32, 32]);
        assert_eq!(g.shape(states[0].flow_full0), &[2, 64, 64]);
        assert_eq!(g.shape(states[1].feat_flow0), &[2, 8, 8]);
        assert_eq!(g.shape(states[0].mask_logits), &[1, 64, 64]);
    }

    #[test]
    fn forward_replays_bit_exactly() {
        let m = Model::<f64>::new(ModelConfig::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let i0 = Tensor::<f64>::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let i1 = Tensor::<f64>::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let run = || {
            let mut g = Graph::new();
            let bind = m.params.bind(&mut g);
            let states = pyramid_forward(&m, &mut g, &bind, &i0, &i1, |_, w, h| {
                uniform_bim(0.25, w, h)
            }, 1)
            .unwrap();
            g.value(states[0].interp).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn eq3_decomposition_exact_across_levels() {
        // flow minus residual must equal the resampled previous flow
        // bit-exactly; validated by recomputing the resample independently.
        let m = Model::<f64>::new(ModelConfig::default(), 4).unwrap();
        let mut g = Graph::new();
        let bind = m.params.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let i0 = Tensor::<f64>::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
        let i1 = Tensor::<f64>::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
        let states = pyramid_forward(&m, &mut g, &bind, &i0, &i1, |_, w, h| {
            uniform_bim(0.5, w, h)
        }, 2)
        .unwrap();
        // Finest level carried flows = resample of coarsest full flows.
        let coarse_full = crate::motionfield::FlowField::from_tensor(
            g.value(states[1].flow_full0).clone(),
        )
        .unwrap();
        let expect = crate::motionfield::resample_flow(
            &coarse_full,
            crate::motionfield::ResampleFactor::Half,
        )
        .unwrap();
        assert_eq!(g.value(states[0].carried0), expect.tensor());
        let sum = g
            .value(states[0].carried0)
            .add(g.value(states[0].residual0))
            .unwrap();
        assert_eq!(g.value(states[0].feat_flow0), &sum);
    }

    #[test]
    fn emitted_kernels_are_convex() {
        let m = Model::<f32>::new(ModelConfig::default(), 5).unwrap();
        let mut g = Graph::new();
        let bind = m.params.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let i0 = Tensor::<f32>::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let i1 = Tensor::<f32>::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let states = pyramid_forward(&m, &mut g, &bind, &i0, &i1, |_, w, h| {
            uniform_bim(0.5, w, h)
        }, 1)
        .unwrap();
        crate::kernels::volume::check_kernel_groups(g.value(states[0].kernels2.0), 2, 1e-6)
            .unwrap();
        crate::kernels::volume::check_kernel_groups(g.value(states[0].kernels4.0), 4, 1e-6)
            .unwrap();
    }
}
