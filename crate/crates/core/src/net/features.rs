//! Motion and context feature extractors.

use crate::autodiff::{Graph, Var};
use crate::net::{conv, conv_silu, Model, ParamBind, CONTEXT_SCALES};
use crate::{Error, Result, Scalar};

/// Motion features at 1/4 resolution: `[3, H, W] -> [C, H/4, W/4]`.
pub fn extract_motion_features<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    img: Var,
) -> Result<Var> {
    let (_, h, w) = g.value(img).dims3();
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::IndivisibleDimensions {
            width: w,
            height: h,
            required: 4,
        });
    }
    let _ = model;
    let x = conv_silu(g, bind, "mfe.c1", img, 2, 1);
    let x = conv_silu(g, bind, "mfe.c2", x, 2, 1);
    let x = conv_silu(g, bind, "mfe.c3", x, 1, 1);
    Ok(conv(g, bind, "mfe.c4", x, 1, 1))
}

/// Context features at scales 1, 1/2, 1/4 (finest first).
pub fn extract_context_features<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    img: Var,
) -> Result<[Var; CONTEXT_SCALES]> {
    let (_, h, w) = g.value(img).dims3();
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::IndivisibleDimensions {
            width: w,
            height: h,
            required: 4,
        });
    }
    let _ = model;
    let c0 = conv_silu(g, bind, "cfe.c0", img, 1, 1);
    let c1 = conv_silu(g, bind, "cfe.c1", c0, 2, 1);
    let c2 = conv_silu(g, bind, "cfe.c2", c1, 2, 1);
    Ok([c0, c1, c2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelConfig;
    use crate::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model<f64> {
        Model::new(ModelConfig::default(), 3).unwrap()
    }

    #[test]
    fn motion_feature_shape_contract() {
        let m = model();
        let mut g = Graph::new();
        let bind = m.params.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = g.constant(Tensor::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng));
        let f = extract_motion_features(&m, &mut g, &bind, img).unwrap();
        assert_eq!(g.shape(f), &[16, 16, 16]);
    }

    #[test]
    fn context_feature_scales() {
        let m = model();
        let mut g = Graph::new();
        let bind = m.params.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = g.constant(Tensor::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng));
        let [c0, c1, c2] = extract_context_features(&m, &mut g, &bind, img).unwrap();
        assert_eq!(g.shape(c0), &[8, 64, 64]);
        assert_eq!(g.shape(c1), &[12, 32, 32]);
        assert_eq!(g.shape(c2), &[16, 16, 16]);
    }

    #[test]
    fn rejects_indivisible_dimensions() {
        let m = model();
        let mut g = Graph::new();
        let bind = m.params.bind(&mut g);
        let img = g.constant(Tensor::zeros(&[3, 62, 64]));
        assert!(extract_motion_features(&m, &mut g, &bind, img).is_err());
        assert!(extract_context_features(&m, &mut g, &bind, img).is_err());
    }

    #[test]
    fn identical_inputs_identical_features() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::<f64>::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let run = || {
            let mut g = Graph::new();
            let bind = m.params.bind(&mut g);
            let v = g.constant(img.clone());
            let f = extract_motion_features(&m, &mut g, &bind, v).unwrap();
            g.value(f).clone()
        };
        assert_eq!(run(), run(), "bit-exact replay");
    }

    #[test]
    fn perturbation_response_is_bounded() {
        // Numeric smoothness probe: small input changes must not blow up.
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Tensor::<f64>::rand_uniform(&[3, 32, 32], 0.2, 0.8, &mut rng);
        let eval = |t: &Tensor<f64>| {
            let mut g = Graph::new();
            let bind = m.params.bind(&mut g);
            let v = g.constant(t.clone());
            let f = extract_motion_features(&m, &mut g, &bind, v).unwrap();
            g.value(f).clone()
        };
        let base = eval(&img);
        for delta in [1e-3, 1e-2] {
            let shifted = eval(&img.map(|v| v + delta));
            let diff = shifted.sub(&base).unwrap().abs_max();
            assert!(diff < 100.0 * delta, "delta {delta} produced jump {diff}");
        }
    }
}
