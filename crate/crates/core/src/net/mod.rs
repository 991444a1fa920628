//! The learned pipeline: feature extractors, BiM-guided flow estimation,
//! content-aware convex upsampling, synthesis U-Net and the recurrent
//! coarse-to-fine pyramid controller. One parameter set serves every pyramid
//! level and both the teacher and student processes.

pub mod bimfn;
pub mod caun;
pub mod features;
pub mod params;
pub mod pyramid;
pub mod synthesis;

pub use bimfn::{bim_mconv, bimfn_forward, embed_bim, BimfnOut};
pub use caun::{caun_forward, CaunOut};
pub use features::{extract_context_features, extract_motion_features};
pub use params::{Checkpoint, OptimState, ParamBind, ParamStore};
pub use pyramid::{
    feature_pyramid, level_count_for_resolution, pyramid_forward, pyramid_forward_cached,
    required_divisor, FeaturePyramid, FlowScales, LevelState,
};
pub use synthesis::{synthesis_forward, SynthOut};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::{Error, Result, Scalar};

/// Motion descriptor fed to the flow network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorMode {
    /// Full bidirectional motion field: ratio plus angle channels.
    Bim,
    /// Ablation: the ratio channel is replaced by the constant timestep and
    /// the angle embedding is removed from the network.
    TimeIndex,
}

/// Architecture hyperparameters. The published method fixes none of the
/// channel counts, so these are toy-scale defaults sized for CPU training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width unit for the extractors and synthesis net; must be a positive
    /// multiple of 4.
    pub base_channels: usize,
    /// Local cost volume search radius; channel count per direction is
    /// `(2 * cost_radius + 1)^2`.
    pub cost_radius: usize,
    /// Width of the flow-net trunk and the descriptor embeddings.
    pub trunk_channels: usize,
    /// Pyramid depth used during training.
    pub levels_train: usize,
    pub descriptor: DescriptorMode,
}

/// Context features are emitted at three scales (1, 1/2, 1/4).
pub const CONTEXT_SCALES: usize = 3;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            cost_radius: 3,
            trunk_channels: 32,
            levels_train: 2,
            descriptor: DescriptorMode::Bim,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 4 || self.base_channels % 4 != 0 {
            return Err(Error::invalid(format!(
                "base_channels = {} must be a positive multiple of 4",
                self.base_channels
            )));
        }
        if self.trunk_channels < 4 {
            return Err(Error::invalid("trunk_channels must be at least 4"));
        }
        if self.levels_train == 0 {
            return Err(Error::invalid("levels_train must be positive"));
        }
        Ok(())
    }

    pub fn cost_channels(&self) -> usize {
        let side = 2 * self.cost_radius + 1;
        side * side
    }

    /// Channel counts of the three context scales, finest first.
    pub fn context_channels(&self) -> [usize; CONTEXT_SCALES] {
        let c = self.base_channels;
        [c / 2, 3 * c / 4, c]
    }

    /// Synthesis U-Net widths at scales 1, 1/2, 1/4.
    pub fn synthesis_channels(&self) -> [usize; 3] {
        let c = self.base_channels;
        [3 * c / 4, 5 * c / 4, 2 * c]
    }
}

/// Model = config + named parameters. Construction registers every layer in
/// a fixed order and initializes deterministically from the seed.
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let c = config.base_channels;
        let tc = config.trunk_channels;
        let ctx = config.context_channels();
        let def = params::init_conv::<T>;

        // Motion feature extractor: two stride-2 stages then refinement.
        def(&mut p, &mut rng, "mfe.c1", 3, c / 2, 3, false);
        def(&mut p, &mut rng, "mfe.c2", c / 2, c, 3, false);
        def(&mut p, &mut rng, "mfe.c3", c, c, 3, false);
        def(&mut p, &mut rng, "mfe.c4", c, c, 3, false);

        // Context feature extractor, one conv per scale.
        def(&mut p, &mut rng, "cfe.c0", 3, ctx[0], 3, false);
        def(&mut p, &mut rng, "cfe.c1", ctx[0], ctx[1], 3, false);
        def(&mut p, &mut rng, "cfe.c2", ctx[1], ctx[2], 3, false);

        // BiM-guided flow net.
        def(&mut p, &mut rng, "bimfn.mask", 1, c / 2, 3, false);
        let trunk_in = 2 * c + 2 * config.cost_channels() + c / 2;
        def(&mut p, &mut rng, "bimfn.in", trunk_in, tc, 1, false);
        for i in 1..=6 {
            def(&mut p, &mut rng, &format!("bimfn.t{i}"), tc, tc, 3, false);
        }
        def(&mut p, &mut rng, "bimfn.fv", tc, tc, 3, false);
        def(&mut p, &mut rng, "dem.c1", 1, tc / 2, 3, false);
        params::init_conv_biased(&mut p, &mut rng, "dem.c2", tc / 2, tc, 3, false, 1.0);
        if config.descriptor == DescriptorMode::Bim {
            def(&mut p, &mut rng, "aem.c1", 2, tc / 2, 3, false);
            params::init_conv_biased(&mut p, &mut rng, "aem.c2", tc / 2, tc, 3, false, 1.0);
        }
        def(&mut p, &mut rng, "bimfn.proj", tc, 4, 3, true);

        // Content-aware upsampler.
        def(&mut p, &mut rng, "caun.d0", 2 * ctx[0], c / 2, 3, false);
        def(&mut p, &mut rng, "caun.d1", 2 * ctx[1] + c / 2, c, 3, false);
        def(&mut p, &mut rng, "caun.f1", 2 * ctx[2] + c + 4, tc, 1, false);
        def(&mut p, &mut rng, "caun.f2", tc, tc, 3, false);
        def(&mut p, &mut rng, "caun.k2", tc, 2 * 9 * 4, 1, true);
        def(&mut p, &mut rng, "caun.k4", tc, 2 * 9 * 16, 1, true);

        // Synthesis U-Net.
        let [s0, s1, s2] = config.synthesis_channels();
        def(&mut p, &mut rng, "sn.e0", 6 + 2 * ctx[0] + 4, s0, 3, false);
        def(&mut p, &mut rng, "sn.d1", s0, s1, 3, false);
        def(&mut p, &mut rng, "sn.e1", s1 + 2 * ctx[1] + 4, s1, 3, false);
        def(&mut p, &mut rng, "sn.d2", s1, s2, 3, false);
        def(&mut p, &mut rng, "sn.e2", s2 + 2 * ctx[2] + 4, s2, 3, false);
        def(&mut p, &mut rng, "sn.u1", s2, 4 * s1, 3, false);
        def(&mut p, &mut rng, "sn.m1", 2 * s1, s1, 3, false);
        def(&mut p, &mut rng, "sn.u0", s1, 4 * s0, 3, false);
        def(&mut p, &mut rng, "sn.m0", 2 * s0, s0, 3, false);
        def(&mut p, &mut rng, "sn.head", s0, 4, 3, true);

        Ok(Self { config, params: p })
    }

    /// Rebuild a model around restored parameters.
    pub fn from_parts(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, params })
    }
}

/// Conv + SiLU shorthand used by the forward modules.
pub(crate) fn conv<T: Scalar>(
    g: &mut Graph<T>,
    bind: &ParamBind,
    name: &str,
    x: Var,
    stride: usize,
    pad: usize,
) -> Var {
    let w = bind.var(&format!("{name}.w"));
    let b = bind.var(&format!("{name}.b"));
    g.conv2d(x, w, b, stride, pad)
}

pub(crate) fn conv_silu<T: Scalar>(
    g: &mut Graph<T>,
    bind: &ParamBind,
    name: &str,
    x: Var,
    stride: usize,
    pad: usize,
) -> Var {
    let y = conv(g, bind, name, x, stride, pad);
    g.silu(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let mut c = ModelConfig::default();
        c.base_channels = 3;
        assert!(c.validate().is_err());
        c.base_channels = 0;
        assert!(c.validate().is_err());
        let mut c2 = ModelConfig::default();
        c2.levels_train = 0;
        assert!(c2.validate().is_err());
    }

    #[test]
    fn cost_channels_follow_radius() {
        let mut c = ModelConfig::default();
        assert_eq!(c.cost_channels(), 49);
        c.cost_radius = 0;
        assert_eq!(c.cost_channels(), 1);
    }

    #[test]
    fn model_init_is_deterministic() {
        let a = Model::<f32>::new(ModelConfig::default(), 9).unwrap();
        let b = Model::<f32>::new(ModelConfig::default(), 9).unwrap();
        assert_eq!(a.params.checksum(), b.params.checksum());
        let c = Model::<f32>::new(ModelConfig::default(), 10).unwrap();
        assert_ne!(a.params.checksum(), c.params.checksum());
    }

    #[test]
    fn time_index_mode_drops_angle_embedding() {
        let mut cfg = ModelConfig::default();
        cfg.descriptor = DescriptorMode::TimeIndex;
        let m = Model::<f32>::new(cfg, 1).unwrap();
        assert!(!m.params.names().any(|n| n.starts_with("aem.")));
        let full = Model::<f32>::new(ModelConfig::default(), 1).unwrap();
        assert!(full.params.names().any(|n| n.starts_with("aem.")));
    }
}
