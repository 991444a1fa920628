//! Training objectives: charbonnier + census photometric terms, edge-aware
//! first-order smoothness, zero-flow regularization, flow distillation with
//! a hard stop-gradient on the teacher side, and the level-weighted total.
//!
//! Each loss exists twice: a graph builder used by training, and a plain
//! tensor wrapper with input validation that evaluates through a throwaway
//! graph (so both paths share one implementation).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::motionfield::FlowField;
use crate::{Error, Result, Scalar, Tensor};

/// Weights and shape constants for every loss term.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_char_teacher: f64,
    pub lambda_census_teacher: f64,
    pub lambda_char_student: f64,
    pub lambda_census_student: f64,
    pub lambda_smooth: f64,
    pub lambda_reg: f64,
    pub lambda_distill: f64,
    /// Exponential per-level weight on photometric terms, in `(0, 1]`.
    pub gamma_photo: f64,
    /// Exponential per-level weight on flow-centric terms, in `(0, 1]`.
    pub gamma_flow: f64,
    pub charbonnier_eps: f64,
    pub census_patch: usize,
    pub edge_lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_char_teacher: 1.0,
            lambda_census_teacher: 1.0,
            lambda_char_student: 1.0,
            lambda_census_student: 1.0,
            lambda_smooth: 0.1,
            lambda_reg: 0.01,
            lambda_distill: 0.01,
            gamma_photo: 0.8,
            gamma_flow: 0.8,
            charbonnier_eps: 1e-6,
            census_patch: 7,
            edge_lambda: 150.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            self.lambda_char_teacher,
            self.lambda_census_teacher,
            self.lambda_char_student,
            self.lambda_census_student,
            self.lambda_smooth,
            self.lambda_reg,
            self.lambda_distill,
        ];
        if lambdas.iter().any(|&l| l < 0.0 || !l.is_finite()) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        for (name, g) in [("gamma_photo", self.gamma_photo), ("gamma_flow", self.gamma_flow)] {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::invalid(format!("{name} = {g} outside (0, 1]")));
            }
        }
        if self.charbonnier_eps <= 0.0 {
            return Err(Error::invalid("charbonnier_eps must be positive"));
        }
        if self.census_patch % 2 == 0 {
            return Err(Error::invalid("census_patch must be odd"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Graph builders
// ---------------------------------------------------------------------------

/// Mean of `sqrt(diff^2 + eps^2)` over all pixels and channels.
pub fn charbonnier_g<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, eps: T) -> Var {
    let d = g.sub(pred, target);
    let d2 = g.mul(d, d);
    let shifted = g.add_scalar(d2, eps * eps);
    let r = g.sqrt(shifted);
    g.mean_all(r)
}

/// Soft census loss (see [`crate::kernels::census`]).
pub fn census_g<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, patch: usize) -> Var {
    g.census_loss(pred, target, patch)
}

/// First-order edge-aware smoothness of a `[2, H, W]` flow.
///
/// Each directional derivative of the flow is weighted by
/// `exp(-edge_lambda * mean_c |d img|)` of the image in the same direction;
/// image weights are constants (no gradient flows into the image).
pub fn smoothness_g<T: Scalar>(g: &mut Graph<T>, flow: Var, img: &Tensor<T>, edge_lambda: T) -> Var {
    let (c, h, w) = img.dims3();
    let hw1 = h * (w - 1);
    let mut wx = Tensor::zeros(&[1, h, w - 1]);
    for y in 0..h {
        for x in 0..w - 1 {
            let mut acc = T::zero();
            for ci in 0..c {
                acc += (img.at3(ci, y, x + 1) - img.at3(ci, y, x)).abs();
            }
            wx.data_mut()[y * (w - 1) + x] = (-edge_lambda * acc / T::of(c as f64)).exp();
        }
    }
    let mut wy = Tensor::zeros(&[1, h - 1, w]);
    for y in 0..h - 1 {
        for x in 0..w {
            let mut acc = T::zero();
            for ci in 0..c {
                acc += (img.at3(ci, y + 1, x) - img.at3(ci, y, x)).abs();
            }
            wy.data_mut()[y * w + x] = (-edge_lambda * acc / T::of(c as f64)).exp();
        }
    }
    debug_assert_eq!(wx.numel(), hw1);

    // Per direction: weighted derivative magnitudes summed over the two flow
    // channels, averaged over pixels; the two directions average. `mean_all`
    // already divides by the channel count, so the sum of the two direction
    // means is exactly that.
    let dx = g.diff_x(flow);
    let ax = g.abs(dx);
    let wxv = g.constant(wx);
    let weighted_x = g.bmul(ax, wxv);
    let sx = g.mean_all(weighted_x);

    let dy = g.diff_y(flow);
    let ay = g.abs(dy);
    let wyv = g.constant(wy);
    let weighted_y = g.bmul(ay, wyv);
    let sy = g.mean_all(weighted_y);

    g.add(sx, sy)
}

/// Mean squared flow magnitude: `mean_px(u^2 + v^2)`.
pub fn zero_flow_reg_g<T: Scalar>(g: &mut Graph<T>, flow: Var) -> Var {
    let shape = g.shape(flow).to_vec();
    let hw = shape[1] * shape[2];
    let sq = g.mul(flow, flow);
    let s = g.sum_all(sq);
    g.scale(s, T::one() / T::of(hw as f64))
}

/// Mean squared per-pixel difference of two flows; used by both the
/// distillation and regularization terms.
fn flow_l2_g<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    zero_flow_reg_like(g, d)
}

fn zero_flow_reg_like<T: Scalar>(g: &mut Graph<T>, d: Var) -> Var {
    let shape = g.shape(d).to_vec();
    let hw = shape[1] * shape[2];
    let sq = g.mul(d, d);
    let s = g.sum_all(sq);
    g.scale(s, T::one() / T::of(hw as f64))
}

/// Sum of mean-squared differences for both directions with the teacher side
/// gradient-blocked: backpropagation yields exactly zero on teacher values.
pub fn distillation_g<T: Scalar>(
    g: &mut Graph<T>,
    student: (Var, Var),
    teacher: (Var, Var),
) -> Var {
    let t0 = g.detach(teacher.0);
    let t1 = g.detach(teacher.1);
    let l0 = flow_l2_g(g, student.0, t0);
    let l1 = flow_l2_g(g, student.1, t1);
    g.add(l0, l1)
}

/// Per-level loss scalars entering the level-weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LevelTerms<T> {
    pub photo_teacher: T,
    pub photo_student: T,
    pub flow_teacher: T,
    pub flow_student: T,
}

/// `sum_l gamma_pho^l (pho_T + pho_S) + gamma_flo^l (flo_T + flo_S)`,
/// level 0 (finest) first.
pub fn total_loss<T: Scalar>(levels: &[LevelTerms<T>], gamma_photo: T, gamma_flow: T) -> T {
    let mut total = T::zero();
    let mut gp = T::one();
    let mut gf = T::one();
    for lt in levels {
        total += gp * (lt.photo_teacher + lt.photo_student) + gf * (lt.flow_teacher + lt.flow_student);
        gp *= gamma_photo;
        gf *= gamma_flow;
    }
    total
}

/// Graph version of [`total_loss`] over per-level scalar vars.
pub fn total_loss_g<T: Scalar>(
    g: &mut Graph<T>,
    levels: &[(Var, Var, Var, Var)],
    gamma_photo: T,
    gamma_flow: T,
) -> Var {
    let mut acc: Option<Var> = None;
    let mut gp = T::one();
    let mut gf = T::one();
    for &(pho_t, pho_s, flo_t, flo_s) in levels {
        let pho = g.add(pho_t, pho_s);
        let pho = g.scale(pho, gp);
        let flo = g.add(flo_t, flo_s);
        let flo = g.scale(flo, gf);
        let lvl = g.add(pho, flo);
        acc = Some(match acc {
            None => lvl,
            Some(a) => g.add(a, lvl),
        });
        gp *= gamma_photo;
        gf *= gamma_flow;
    }
    acc.expect("at least one level")
}

// ---------------------------------------------------------------------------
// Plain wrappers with input validation
// ---------------------------------------------------------------------------

fn check_same_shape<T: Scalar>(ctx: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(ctx, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn charbonnier_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, eps: T) -> Result<T> {
    check_same_shape("charbonnier_loss", pred, target)?;
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let t = g.constant(target.clone());
    let l = charbonnier_g(&mut g, p, t, eps);
    Ok(g.value(l).data()[0])
}

pub fn census_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, patch: usize) -> Result<T> {
    check_same_shape("census_loss", pred, target)?;
    if patch % 2 == 0 {
        return Err(Error::invalid("census_loss: patch must be odd"));
    }
    Ok(crate::kernels::census::census_loss(pred, target, patch))
}

pub fn smoothness_loss<T: Scalar>(flow: &FlowField<T>, img: &Tensor<T>, edge_lambda: T) -> Result<T> {
    let (_, h, w) = img.dims3();
    if (flow.width(), flow.height()) != (w, h) {
        return Err(Error::dim("smoothness_loss", flow.tensor().shape(), img.shape()));
    }
    let mut g = Graph::new();
    let f = g.constant(flow.tensor().clone());
    let l = smoothness_g(&mut g, f, img, edge_lambda);
    Ok(g.value(l).data()[0])
}

pub fn zero_flow_reg<T: Scalar>(flow: &FlowField<T>) -> T {
    let mut g = Graph::new();
    let f = g.constant(flow.tensor().clone());
    let l = zero_flow_reg_g(&mut g, f);
    g.value(l).data()[0]
}

pub fn distillation_loss<T: Scalar>(
    student: (&FlowField<T>, &FlowField<T>),
    teacher: (&FlowField<T>, &FlowField<T>),
) -> Result<T> {
    check_same_shape("distillation_loss/0", student.0.tensor(), teacher.0.tensor())?;
    check_same_shape("distillation_loss/1", student.1.tensor(), teacher.1.tensor())?;
    let mut g = Graph::new();
    let s0 = g.constant(student.0.tensor().clone());
    let s1 = g.constant(student.1.tensor().clone());
    let t0 = g.constant(teacher.0.tensor().clone());
    let t1 = g.constant(teacher.1.tensor().clone());
    let l = distillation_g(&mut g, (s0, s1), (t0, t1));
    Ok(g.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn charbonnier_examples() {
        let a = Tensor::<f64>::full(&[3, 4, 4], 0.3);
        let eps = 1e-3;
        let same = charbonnier_loss(&a, &a, eps).unwrap();
        assert!((same - eps).abs() < 1e-15, "zero difference gives eps");

        let b = a.map(|v| v + 3.0);
        let tiny = charbonnier_loss(&b, &a, 1e-12).unwrap();
        assert!((tiny - 3.0).abs() < 1e-9, "constant diff 3 with eps -> 0");

        let c = Tensor::<f64>::zeros(&[3, 4, 5]);
        assert!(charbonnier_loss(&a, &c, eps).is_err());
    }

    #[test]
    fn charbonnier_matches_reference_loop() {
        let mut r = rng(51);
        let a = Tensor::<f64>::rand_uniform(&[3, 5, 5], 0.0, 1.0, &mut r);
        let b = Tensor::<f64>::rand_uniform(&[3, 5, 5], 0.0, 1.0, &mut r);
        let eps = 1e-4;
        let got = charbonnier_loss(&a, &b, eps).unwrap();
        let mut acc = 0.0;
        for i in 0..a.numel() {
            let d: f64 = a.data()[i] - b.data()[i];
            acc += (d * d + eps * eps).sqrt();
        }
        assert!((got - acc / a.numel() as f64).abs() < 1e-14);
    }

    #[test]
    fn census_brightness_invariance_and_zero() {
        let mut r = rng(52);
        // High-contrast texture so the soft sign saturates.
        let img = Tensor::<f64>::rand_uniform(&[3, 12, 12], 0.0, 1.0, &mut r)
            .map(|v| if v > 0.5 { 0.9 } else { 0.1 });
        assert_eq!(census_loss(&img, &img, 7).unwrap(), 0.0);
        let offset = img.map(|v| v + 0.05);
        assert!(census_loss(&offset, &img, 7).unwrap() < 1e-3);
        assert!(census_loss(&img, &img, 6).is_err());
    }

    #[test]
    fn census_invariant_under_shared_monotone_remap() {
        let mut r = rng(53);
        let a = Tensor::<f64>::rand_uniform(&[3, 12, 12], 0.0, 1.0, &mut r)
            .map(|v| if v > 0.5 { 0.85 } else { 0.15 });
        let b = Tensor::<f64>::rand_uniform(&[3, 12, 12], 0.0, 1.0, &mut r)
            .map(|v| if v > 0.5 { 0.85 } else { 0.15 });
        let base = census_loss(&a, &b, 7).unwrap();
        for remap in [|v: f64| v.powf(0.5), |v: f64| v.powf(2.0), |v: f64| 0.6 * v + 0.2] {
            let ra = a.map(remap);
            let rb = b.map(remap);
            let l = census_loss(&ra, &rb, 7).unwrap();
            assert!((l - base).abs() < 1e-3, "remapped {l} vs base {base}");
        }
    }

    #[test]
    fn smoothness_examples() {
        let img = Tensor::<f64>::full(&[3, 6, 6], 0.5);
        let constant = FlowField::constant(6, 6, 1.3, -0.4);
        assert_eq!(smoothness_loss(&constant, &img, 150.0).unwrap(), 0.0);

        // u = a*x, v = a*y on a constant image: loss = a (uniform weights).
        let a = 0.3;
        let mut lin = FlowField::<f64>::zeros(6, 6);
        for y in 0..6 {
            for x in 0..6 {
                lin.set(x, y, a * x as f64, a * y as f64);
            }
        }
        let flat = smoothness_loss(&lin, &img, 150.0).unwrap();
        assert!((flat - a).abs() < 1e-12, "mean slope: {flat}");

        // A strong vertical edge shrinks the x-direction weights.
        let mut edge_img = Tensor::<f64>::zeros(&[3, 6, 6]);
        for c in 0..3 {
            for y in 0..6 {
                for x in 0..6 {
                    edge_img.set3(c, y, x, if x >= 3 { 1.0 } else { 0.0 });
                }
            }
        }
        let edged = smoothness_loss(&lin, &edge_img, 150.0).unwrap();
        assert!(edged < flat, "edge-aware weighting must reduce the penalty");

        let small = Tensor::<f64>::zeros(&[3, 4, 4]);
        assert!(smoothness_loss(&lin, &small, 150.0).is_err());
    }

    #[test]
    fn zero_flow_reg_examples() {
        assert_eq!(zero_flow_reg(&FlowField::<f64>::zeros(5, 5)), 0.0);
        let c = FlowField::<f64>::constant(4, 4, 3.0, 4.0);
        assert!((zero_flow_reg(&c) - 25.0).abs() < 1e-12);

        let mut r = rng(54);
        let t = Tensor::<f64>::rand_uniform(&[2, 5, 7], -2.0, 2.0, &mut r);
        let f = FlowField::from_tensor(t.clone()).unwrap();
        let mut acc = 0.0;
        for y in 0..5 {
            for x in 0..7 {
                let (u, v) = f.get(x, y);
                acc += u * u + v * v;
            }
        }
        assert!((zero_flow_reg(&f) - acc / 35.0).abs() < 1e-12);
    }

    #[test]
    fn distillation_examples() {
        let s = FlowField::<f64>::constant(4, 4, 1.0, 2.0);
        let t = s.clone();
        assert_eq!(distillation_loss((&s, &s), (&t, &t)).unwrap(), 0.0);

        // Unit offset on one direction -> mean squared 1 on that term.
        let off = FlowField::<f64>::constant(4, 4, 2.0, 2.0);
        let l = distillation_loss((&off, &s), (&t, &t)).unwrap();
        assert!((l - 1.0).abs() < 1e-12);

        let bad = FlowField::<f64>::zeros(3, 4);
        assert!(distillation_loss((&bad, &s), (&t, &t)).is_err());
    }

    #[test]
    fn distillation_gradient_skips_teacher_exactly() {
        let mut r = rng(55);
        let st0 = Tensor::<f64>::rand_uniform(&[2, 4, 4], -1.0, 1.0, &mut r);
        let st1 = Tensor::<f64>::rand_uniform(&[2, 4, 4], -1.0, 1.0, &mut r);
        let te0 = Tensor::<f64>::rand_uniform(&[2, 4, 4], -1.0, 1.0, &mut r);
        let te1 = Tensor::<f64>::rand_uniform(&[2, 4, 4], -1.0, 1.0, &mut r);
        let mut g = Graph::new();
        let s0 = g.leaf(st0);
        let s1 = g.leaf(st1);
        let t0 = g.leaf(te0);
        let t1 = g.leaf(te1);
        let l = distillation_g(&mut g, (s0, s1), (t0, t1));
        let grads = g.backward(l);
        assert!(grads.get(s0).is_some());
        assert!(grads.get(s1).is_some());
        assert!(grads.get(t0).is_none(), "stop-gradient must be exact");
        assert!(grads.get(t1).is_none());
    }

    #[test]
    fn total_loss_examples() {
        let one = [LevelTerms {
            photo_teacher: 0.25,
            photo_student: 0.5,
            flow_teacher: 0.125,
            flow_student: 0.0625,
        }];
        let t = total_loss(&one, 0.5, 0.5);
        assert_eq!(t, 0.25 + 0.5 + 0.125 + 0.0625, "gamma^0 = 1");

        let three: Vec<LevelTerms<f64>> = (0..3)
            .map(|l| LevelTerms {
                photo_teacher: 1.0 + l as f64,
                photo_student: 2.0,
                flow_teacher: 0.5,
                flow_student: 0.25 * l as f64,
            })
            .collect();
        let unweighted = total_loss(&three, 1.0, 1.0);
        let expect: f64 = three
            .iter()
            .map(|lt| lt.photo_teacher + lt.photo_student + lt.flow_teacher + lt.flow_student)
            .sum();
        assert!((unweighted - expect).abs() < 1e-12);

        // Hand-computed weighted sum for gamma = 0.5.
        let weighted = total_loss(&three, 0.5, 0.5);
        let mut hand = 0.0;
        for (l, lt) in three.iter().enumerate() {
            let g = 0.5f64.powi(l as i32);
            hand += g * (lt.photo_teacher + lt.photo_student) + g * (lt.flow_teacher + lt.flow_student);
        }
        assert!((weighted - hand).abs() < 1e-12);
    }

    /// Central finite differences for each loss w.r.t. its differentiable
    /// inputs, on random 8x8 inputs in double precision.
    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut r = rng(56);
        let eps_fd = 1e-5;
        let check = |input: &Tensor<f64>, build: &dyn Fn(&mut Graph<f64>, Var) -> Var| {
            let mut g = Graph::new();
            let x = g.leaf(input.clone());
            let l = build(&mut g, x);
            let grads = g.backward(l);
            let analytic = grads.get(x).unwrap().clone();
            for i in (0..input.numel()).step_by(3) {
                let mut p = input.clone();
                p.data_mut()[i] += eps_fd;
                let mut m = input.clone();
                m.data_mut()[i] -= eps_fd;
                let mut gp = Graph::new();
                let xp = gp.leaf(p);
                let lp = build(&mut gp, xp);
                let mut gm = Graph::new();
                let xm = gm.leaf(m);
                let lm = build(&mut gm, xm);
                let fd = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * eps_fd);
                let a = analytic.data()[i];
                let rel = (fd - a).abs() / fd.abs().max(1e-4);
                assert!(rel < 1e-4, "i {i}: fd {fd} vs analytic {a}");
            }
        };

        let pred = Tensor::<f64>::rand_uniform(&[3, 8, 8], 0.05, 0.95, &mut r);
        let target = Tensor::<f64>::rand_uniform(&[3, 8, 8], 0.05, 0.95, &mut r);
        let t2 = target.clone();
        check(&pred, &move |g, x| {
            let t = g.constant(t2.clone());
            charbonnier_g(g, x, t, 1e-3)
        });
        let t3 = target.clone();
        check(&pred, &move |g, x| {
            let t = g.constant(t3.clone());
            census_g(g, x, t, 7)
        });

        let flow = Tensor::<f64>::rand_uniform(&[2, 8, 8], -1.5, 1.5, &mut r);
        let img = Tensor::<f64>::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut r);
        check(&flow, &move |g, x| smoothness_g(g, x, &img, 150.0));
        check(&flow, &|g, x| zero_flow_reg_g(g, x));

        let teacher0 = Tensor::<f64>::rand_uniform(&[2, 8, 8], -1.0, 1.0, &mut r);
        let teacher1 = Tensor::<f64>::rand_uniform(&[2, 8, 8], -1.0, 1.0, &mut r);
        check(&flow, &move |g, x| {
            let t0 = g.constant(teacher0.clone());
            let t1 = g.constant(teacher1.clone());
            distillation_g(g, (x, x), (t0, t1))
        });
    }

    #[test]
    fn losses_are_non_negative_on_random_inputs() {
        let mut r = rng(57);
        for _ in 0..20 {
            let a = Tensor::<f64>::rand_uniform(&[3, 9, 9], 0.0, 1.0, &mut r);
            let b = Tensor::<f64>::rand_uniform(&[3, 9, 9], 0.0, 1.0, &mut r);
            assert!(charbonnier_loss(&a, &b, 1e-6).unwrap() >= 1e-6);
            assert!(census_loss(&a, &b, 7).unwrap() >= 0.0);
            let f = FlowField::from_tensor(Tensor::rand_uniform(&[2, 9, 9], -2.0, 2.0, &mut r))
                .unwrap();
            assert!(smoothness_loss(&f, &a, 150.0).unwrap() >= 0.0);
            assert!(zero_flow_reg(&f) >= 0.0);
        }
    }
}
