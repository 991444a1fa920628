//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records one forward computation as a flat arena of nodes; each
//! node owns its value and a closure that scatters an incoming gradient to
//! its parents. Backward walks the arena once in reverse creation order, so
//! evaluation order (and therefore floating-point summation order) is fixed
//! and runs are bit-reproducible. Nodes that cannot reach a gradient leaf
//! never store a closure and are skipped entirely.

use std::rc::Rc;

use crate::kernels::{self, census, sample, volume};
use crate::{Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type BackFn<T> = Box<dyn for<'a> Fn(&Tensor<T>, &mut GradSink<'a, T>)>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    needs_grad: bool,
    back: Option<BackFn<T>>,
}

/// Mutable view the backward closures accumulate into.
pub struct GradSink<'a, T> {
    grads: &'a mut [Option<Tensor<T>>],
    needs: &'a [bool],
}

impl<T: Scalar> GradSink<'_, T> {
    pub fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.needs[v.0] {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }
}

/// Gradients of one backward pass, indexable by any [`Var`] of the graph.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a value that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, None)
    }

    /// Insert a gradient leaf (parameter or checked input).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, None)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rc(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes[v.0].value)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, needs_grad: bool, back: Option<BackFn<T>>) -> Var {
        self.nodes.push(Node {
            value: Rc::new(value),
            needs_grad,
            back,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(
        &mut self,
        a: Var,
        value: Tensor<T>,
        back: impl for<'s> Fn(&Tensor<T>, &mut GradSink<'s, T>) + 'static,
    ) -> Var {
        let ng = self.needs(a);
        self.push(value, ng, ng.then(|| Box::new(back) as BackFn<T>))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        value: Tensor<T>,
        back: impl for<'s> Fn(&Tensor<T>, &mut GradSink<'s, T>) + 'static,
    ) -> Var {
        let ng = self.needs(a) || self.needs(b);
        self.push(value, ng, ng.then(|| Box::new(back) as BackFn<T>))
    }

    /// Backpropagate from a scalar node; returns gradients for all reachable
    /// gradient-carrying nodes.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(
            self.value(loss).numel(),
            1,
            "backward expects a scalar loss node"
        );
        let needs: Vec<bool> = self.nodes.iter().map(|n| n.needs_grad).collect();
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() {
                continue;
            }
            if let Some(back) = &self.nodes[idx].back {
                let g = grads[idx].take().expect("checked above");
                {
                    let mut sink = GradSink {
                        grads: &mut grads,
                        needs: &needs,
                    };
                    back(&g, &mut sink);
                }
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }

    // ---- elementwise -----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).add(self.value(b)).expect("add shapes");
        self.binary(a, b, out, move |g, sink| {
            sink.accumulate(a, g.clone());
            sink.accumulate(b, g.clone());
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).sub(self.value(b)).expect("sub shapes");
        self.binary(a, b, out, move |g, sink| {
            sink.accumulate(a, g.clone());
            sink.accumulate(b, g.map(|v| -v));
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        let out = av.zip_map(&bv, |x, y| x * y).expect("mul shapes");
        self.binary(a, b, out, move |g, sink| {
            sink.accumulate(a, g.zip_map(&bv, |gv, y| gv * y).unwrap());
            sink.accumulate(b, g.zip_map(&av, |gv, x| gv * x).unwrap());
        })
    }

    /// Multiply a `[C, H, W]` tensor by a single-channel `[1, H, W]` map.
    pub fn bmul(&mut self, a: Var, m: Var) -> Var {
        let av = self.rc(a);
        let mv = self.rc(m);
        let (c, h, w) = av.dims3();
        assert_eq!(mv.dims3(), (1, h, w), "bmul mask shape");
        let hw = h * w;
        let mut out = Tensor::zeros(av.shape());
        for ci in 0..c {
            for i in 0..hw {
                out.data_mut()[ci * hw + i] = av.data()[ci * hw + i] * mv.data()[i];
            }
        }
        self.binary(a, m, out, move |g, sink| {
            let mut ga = Tensor::zeros(av.shape());
            let mut gm = Tensor::zeros(mv.shape());
            for ci in 0..c {
                for i in 0..hw {
                    ga.data_mut()[ci * hw + i] = g.data()[ci * hw + i] * mv.data()[i];
                    gm.data_mut()[i] += g.data()[ci * hw + i] * av.data()[ci * hw + i];
                }
            }
            sink.accumulate(a, ga);
            sink.accumulate(m, gm);
        })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| -v);
        self.unary(a, out, move |g, sink| sink.accumulate(a, g.map(|v| -v)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.unary(a, out, move |g, sink| sink.accumulate(a, g.scale(s)))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v + s);
        self.unary(a, out, move |g, sink| sink.accumulate(a, g.clone()))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let av = self.rc(a);
        let out = av.map(|v| v.abs());
        self.unary(a, out, move |g, sink| {
            sink.accumulate(
                a,
                g.zip_map(&av, |gv, x| {
                    if x > T::zero() {
                        gv
                    } else if x < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                })
                .unwrap(),
            )
        })
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.sqrt());
        let ov = Rc::new(out.clone());
        self.unary(a, out, move |g, sink| {
            let half = T::of(0.5);
            sink.accumulate(a, g.zip_map(&ov, |gv, s| gv * half / s).unwrap());
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|v| T::one() / (T::one() + (-v).exp()));
        let ov = Rc::new(out.clone());
        self.unary(a, out, move |g, sink| {
            sink.accumulate(
                a,
                g.zip_map(&ov, |gv, s| gv * s * (T::one() - s)).unwrap(),
            );
        })
    }

    /// `x * sigmoid(x)`: smooth activation so finite-difference gradient
    /// checks are free of kink artifacts.
    pub fn silu(&mut self, a: Var) -> Var {
        let av = self.rc(a);
        let out = av.map(|v| v / (T::one() + (-v).exp()));
        self.unary(a, out, move |g, sink| {
            sink.accumulate(
                a,
                g.zip_map(&av, |gv, x| {
                    let s = T::one() / (T::one() + (-x).exp());
                    gv * s * (T::one() + x * (T::one() - s))
                })
                .unwrap(),
            );
        })
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let shape = self.value(a).shape().to_vec();
        let out = Tensor::scalar(self.value(a).mean());
        self.unary(a, out, move |g, sink| {
            let gv = g.data()[0] / T::of(n as f64);
            sink.accumulate(a, Tensor::full(&shape, gv));
        })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let shape = self.value(a).shape().to_vec();
        let out = Tensor::scalar(self.value(a).sum());
        self.unary(a, out, move |g, sink| {
            sink.accumulate(a, Tensor::full(&shape, g.data()[0]));
        })
    }

    /// Copy a value out of the gradient flow (stop-gradient).
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.constant(v)
    }

    /// Sum a non-empty list of same-shape vars.
    pub fn add_n(&mut self, vars: &[Var]) -> Var {
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    // ---- shape ops --------------------------------------------------------

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|&p| self.rc(p)).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat_channels(&refs).expect("concat shapes");
        let ng = parts.iter().any(|&p| self.needs(p));
        let parts: Vec<Var> = parts.to_vec();
        let back = ng.then(|| {
            Box::new(move |g: &Tensor<T>, sink: &mut GradSink<T>| {
                let mut lo = 0;
                for (i, &p) in parts.iter().enumerate() {
                    let c = values[i].dims3().0;
                    sink.accumulate(p, g.slice_channels(lo, lo + c));
                    lo += c;
                }
            }) as BackFn<T>
        });
        self.push(out, ng, back)
    }

    pub fn slice_channels(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let av = self.rc(a);
        let out = av.slice_channels(lo, hi);
        self.unary(a, out, move |g, sink| {
            let (_, h, w) = av.dims3();
            let mut ga = Tensor::zeros(av.shape());
            let hw = h * w;
            ga.data_mut()[lo * hw..hi * hw].copy_from_slice(g.data());
            sink.accumulate(a, ga);
        })
    }

    /// Horizontal forward difference: `[C, H, W] -> [C, H, W-1]`.
    pub fn diff_x(&mut self, a: Var) -> Var {
        let av = self.rc(a);
        let (c, h, w) = av.dims3();
        let mut out = Tensor::zeros(&[c, h, w - 1]);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w - 1 {
                    out.set3(ci, y, x, av.at3(ci, y, x + 1) - av.at3(ci, y, x));
                }
            }
        }
        self.unary(a, out, move |g, sink| {
            let mut ga = Tensor::zeros(av.shape());
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w - 1 {
                        let gv = g.at3(ci, y, x);
                        let base = (ci * h + y) * w + x;
                        ga.data_mut()[base + 1] += gv;
                        ga.data_mut()[base] -= gv;
                    }
                }
            }
            sink.accumulate(a, ga);
        })
    }

    /// Vertical forward difference: `[C, H, W] -> [C, H-1, W]`.
    pub fn diff_y(&mut self, a: Var) -> Var {
        let av = self.rc(a);
        let (c, h, w) = av.dims3();
        let mut out = Tensor::zeros(&[c, h - 1, w]);
        for ci in 0..c {
            for y in 0..h - 1 {
                for x in 0..w {
                    out.set3(ci, y, x, av.at3(ci, y + 1, x) - av.at3(ci, y, x));
                }
            }
        }
        self.unary(a, out, move |g, sink| {
            let mut ga = Tensor::zeros(av.shape());
            for ci in 0..c {
                for y in 0..h - 1 {
                    for x in 0..w {
                        let gv = g.at3(ci, y, x);
                        ga.data_mut()[(ci * h + y + 1) * w + x] += gv;
                        ga.data_mut()[(ci * h + y) * w + x] -= gv;
                    }
                }
            }
            sink.accumulate(a, ga);
        })
    }

    // ---- structured ops ----------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = self.rc(x);
        let wv = self.rc(w);
        let bv = self.rc(b);
        let out = kernels::conv2d(&xv, &wv, &bv, stride, pad);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        let back = ng.then(|| {
            Box::new(move |g: &Tensor<T>, sink: &mut GradSink<T>| {
                let (gx, gw, gb) = kernels::conv2d_backward(&xv, &wv, g, stride, pad);
                sink.accumulate(x, gx);
                sink.accumulate(w, gw);
                sink.accumulate(b, gb);
            }) as BackFn<T>
        });
        self.push(out, ng, back)
    }

    pub fn resize_bilinear(&mut self, a: Var, out_h: usize, out_w: usize) -> Var {
        let av = self.rc(a);
        let (_, h, w) = av.dims3();
        let out = sample::resize_bilinear(&av, out_h, out_w);
        self.unary(a, out, move |g, sink| {
            sink.accumulate(a, sample::resize_bilinear_backward(g, h, w));
        })
    }

    pub fn warp(&mut self, src: Var, flow: Var) -> Var {
        let sv = self.rc(src);
        let fv = self.rc(flow);
        let out = sample::warp(&sv, &fv);
        let ng = self.needs(src) || self.needs(flow);
        let back = ng.then(|| {
            Box::new(move |g: &Tensor<T>, sink: &mut GradSink<T>| {
                let (gs, gf) = sample::warp_backward(&sv, &fv, g);
                sink.accumulate(src, gs);
                sink.accumulate(flow, gf);
            }) as BackFn<T>
        });
        self.push(out, ng, back)
    }

    pub fn cost_volume(&mut self, fa: Var, fb: Var, radius: usize) -> Var {
        let av = self.rc(fa);
        let bv = self.rc(fb);
        let out = volume::cost_volume(&av, &bv, radius);
        let ng = self.needs(fa) || self.needs(fb);
        let back = ng.then(|| {
            Box::new(move |g: &Tensor<T>, sink: &mut GradSink<T>| {
                let (ga, gb) = volume::cost_volume_backward(&av, &bv, radius, g);
                sink.accumulate(fa, ga);
                sink.accumulate(fb, gb);
            }) as BackFn<T>
        });
        self.push(out, ng, back)
    }

    /// Softmax across the 9 taps of a `[9 * ff, H, W]` kernel-logit tensor.
    pub fn softmax_taps(&mut self, a: Var, ff: usize) -> Var {
        let av = self.rc(a);
        let (c, h, w) = av.dims3();
        assert_eq!(c, 9 * ff, "tap softmax expects 9 taps per sub-pixel");
        let hw = h * w;
        let mut out = Tensor::zeros(av.shape());
        for s in 0..ff {
            for i in 0..hw {
                let mut m = T::neg_infinity();
                for t in 0..9 {
                    m = m.max(av.data()[(t * ff + s) * hw + i]);
                }
                let mut z = T::zero();
                for t in 0..9 {
                    let e = (av.data()[(t * ff + s) * hw + i] - m).exp();
                    out.data_mut()[(t * ff + s) * hw + i] = e;
                    z += e;
                }
                for t in 0..9 {
                    let idx = (t * ff + s) * hw + i;
                    out.data_mut()[idx] = out.data()[idx] / z;
                }
            }
        }
        let ov = Rc::new(out.clone());
        self.unary(a, out, move |g, sink| {
            let mut ga = Tensor::zeros(ov.shape());
            for s in 0..ff {
                for i in 0..hw {
                    let mut dot = T::zero();
                    for t in 0..9 {
                        let idx = (t * ff + s) * hw + i;
                        dot += g.data()[idx] * ov.data()[idx];
                    }
                    for t in 0..9 {
                        let idx = (t * ff + s) * hw + i;
                        ga.data_mut()[idx] = ov.data()[idx] * (g.data()[idx] - dot);
                    }
                }
            }
            sink.accumulate(a, ga);
        })
    }

    pub fn convex_upsample(&mut self, flow: Var, kernels_v: Var, factor: usize) -> Var {
        let fv = self.rc(flow);
        let kv = self.rc(kernels_v);
        debug_assert!(volume::check_kernel_groups(&kv, factor, 1e-4).is_ok());
        let out = volume::convex_upsample(&fv, &kv, factor);
        let ng = self.needs(flow) || self.needs(kernels_v);
        let back = ng.then(|| {
            Box::new(move |g: &Tensor<T>, sink: &mut GradSink<T>| {
                let (gf, gk) = volume::convex_upsample_backward(&fv, &kv, factor, g);
                sink.accumulate(flow, gf);
                sink.accumulate(kernels_v, gk);
            }) as BackFn<T>
        });
        self.push(out, ng, back)
    }

    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Var {
        let av = self.rc(a);
        let out = kernels::pixel_shuffle(&av, r);
        self.unary(a, out, move |g, sink| {
            sink.accumulate(a, kernels::pixel_shuffle_backward(g, r));
        })
    }

    pub fn census_loss(&mut self, pred: Var, target: Var, patch: usize) -> Var {
        let pv = self.rc(pred);
        let tv = self.rc(target);
        let out = Tensor::scalar(census::census_loss(&pv, &tv, patch));
        let ng = self.needs(pred) || self.needs(target);
        let back = ng.then(|| {
            Box::new(move |g: &Tensor<T>, sink: &mut GradSink<T>| {
                let (gp, gt) = census::census_loss_backward(&pv, &tv, patch, g.data()[0]);
                sink.accumulate(pred, gp);
                sink.accumulate(target, gt);
            }) as BackFn<T>
        });
        self.push(out, ng, back)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of `d loss / d input` for a graph builder.
    fn check_input_grad(
        input: &Tensor<f64>,
        build: impl Fn(&mut Graph<f64>, Var) -> Var,
        tol: f64,
    ) {
        let mut g = Graph::new();
        let x = g.leaf(input.clone());
        let loss = build(&mut g, x);
        let grads = g.backward(loss);
        let analytic = grads.get(x).expect("input grad").clone();
        let eps = 1e-6;
        for i in 0..input.numel() {
            let mut p = input.clone();
            p.data_mut()[i] += eps;
            let mut m = input.clone();
            m.data_mut()[i] -= eps;
            let mut gp = Graph::new();
            let xp = gp.leaf(p);
            let lp = build(&mut gp, xp);
            let mut gm = Graph::new();
            let xm = gm.leaf(m);
            let lm = build(&mut gm, xm);
            let fd = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * eps);
            let a = analytic.data()[i];
            assert!(
                (fd - a).abs() <= tol * fd.abs().max(1.0),
                "index {i}: fd {fd} vs analytic {a}"
            );
        }
    }

    #[test]
    fn elementwise_chain_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = Tensor::<f64>::rand_uniform(&[2, 3, 3], -1.0, 1.0, &mut rng);
        check_input_grad(
            &x,
            |g, v| {
                let a = g.silu(v);
                let b = g.mul(a, v);
                let c = g.add_scalar(b, 2.0);
                let d = g.sqrt(c);
                let e = g.sigmoid(d);
                g.mean_all(e)
            },
            1e-6,
        );
    }

    #[test]
    fn abs_and_diff_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        // Bounded away from zero so |.| is differentiable at the probe points.
        let x = Tensor::<f64>::rand_uniform(&[1, 4, 5], 0.3, 1.0, &mut rng);
        check_input_grad(
            &x,
            |g, v| {
                let dx = g.diff_x(v);
                let dy = g.diff_y(v);
                let ax = g.abs(dx);
                let ay = g.abs(dy);
                let mx = g.mean_all(ax);
                let my = g.mean_all(ay);
                g.add(mx, my)
            },
            1e-5,
        );
    }

    #[test]
    fn conv_and_concat_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let x = Tensor::<f64>::rand_uniform(&[2, 4, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::rand_uniform(&[3, 4, 3, 3], -0.5, 0.5, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[3], -0.1, 0.1, &mut rng);
        check_input_grad(
            &x,
            move |g, v| {
                let cat = g.concat_channels(&[v, v]);
                let wv = g.leaf(w.clone());
                let bv = g.leaf(b.clone());
                let y = g.conv2d(cat, wv, bv, 1, 1);
                let s = g.silu(y);
                g.mean_all(s)
            },
            1e-6,
        );
    }

    #[test]
    fn warp_and_cost_volume_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let flow = Tensor::<f64>::rand_uniform(&[2, 4, 4], 0.2, 0.7, &mut rng);
        let feat = Tensor::<f64>::rand_uniform(&[3, 4, 4], -1.0, 1.0, &mut rng);
        check_input_grad(
            &flow,
            move |g, v| {
                let f = g.constant(feat.clone());
                let warped = g.warp(f, v);
                let cv = g.cost_volume(warped, f, 1);
                g.mean_all(cv)
            },
            1e-5,
        );
    }

    #[test]
    fn softmax_and_convex_upsample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let logits = Tensor::<f64>::rand_uniform(&[9 * 4, 3, 3], -1.0, 1.0, &mut rng);
        let flow = Tensor::<f64>::rand_uniform(&[2, 3, 3], -1.0, 1.0, &mut rng);
        check_input_grad(
            &logits,
            move |g, v| {
                let k = g.softmax_taps(v, 4);
                let f = g.constant(flow.clone());
                let up = g.convex_upsample(f, k, 2);
                let sq = g.mul(up, up);
                g.mean_all(sq)
            },
            1e-6,
        );
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(&[2], 3.0));
        let d = g.detach(x);
        let y = g.mul(d, d);
        let loss = g.mean_all(y);
        let grads = g.backward(loss);
        assert!(grads.get(x).is_none(), "detached path must carry no gradient");
    }

    #[test]
    fn shared_node_accumulates_both_paths() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(&[1], 2.0));
        let y = g.mul(x, x); // x^2
        let z = g.add(y, x); // x^2 + x
        let loss = g.sum_all(z);
        let grads = g.backward(loss);
        assert_eq!(grads.get(x).unwrap().data()[0], 5.0); // 2x + 1 at x=2
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let x = Tensor::<f64>::rand_uniform(&[4, 6, 6], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::rand_uniform(&[4, 4, 3, 3], -0.5, 0.5, &mut rng);
        let run = || {
            let mut g = Graph::<f64>::new();
            let xv = g.leaf(x.clone());
            let wv = g.leaf(w.clone());
            let bv = g.leaf(Tensor::zeros(&[4]));
            let y = g.conv2d(xv, wv, bv, 1, 1);
            let s = g.silu(y);
            let loss = g.mean_all(s);
            let grads = g.backward(loss);
            (
                g.value(loss).data()[0],
                grads.get(wv).unwrap().clone(),
            )
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }
}
