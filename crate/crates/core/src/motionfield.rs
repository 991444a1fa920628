//! Flow-field and bidirectional-motion (BiM) geometry.
//!
//! A BiM describes, per pixel of the intermediate frame, the magnitude ratio
//! `R = r0 / (r0 + r1)` and the inter-flow angle `Phi = angle(v1) - angle(v0)`
//! of the two flows `v0` (towards the earlier frame) and `v1` (towards the
//! later frame). Together with the two endpoints, `(R, Phi)` pins the
//! intermediate position uniquely; [`reconstruct_point`] inverts the
//! descriptor and is the geometric oracle for that uniqueness.
//!
//! Angles are canonicalized to `[0, 2*pi)` everywhere; the network side only
//! ever consumes `(sin Phi, cos Phi)`, so the representative choice is
//! immaterial there.

use rand::Rng;

use crate::kernels::sample;
use crate::{Error, Result, Scalar, Tensor};

/// Default denominator guard for ratio/angle construction.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Wrap an angle to the canonical interval `[0, 2*pi)`.
pub fn wrap_angle<T: Scalar>(a: T) -> T {
    let two_pi = T::of(std::f64::consts::TAU);
    let mut r = a % two_pi;
    if r < T::zero() {
        r = r + two_pi;
    }
    // FP rounding in the wrap can land exactly on 2*pi.
    if r >= two_pi {
        T::zero()
    } else {
        r
    }
}

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Dense displacement field; `data` is `[2, H, W]` with channel 0 holding `u`
/// (horizontal) and channel 1 holding `v` (vertical), in pixels of this
/// grid's own resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T> {
    data: Tensor<T>,
}

impl<T: Scalar> FlowField<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            data: Tensor::zeros(&[2, height, width]),
        }
    }

    pub fn constant(width: usize, height: usize, u: T, v: T) -> Self {
        let mut data = Tensor::zeros(&[2, height, width]);
        let hw = height * width;
        data.data_mut()[..hw].fill(u);
        data.data_mut()[hw..].fill(v);
        Self { data }
    }

    /// Wrap a `[2, H, W]` tensor; rejects wrong shapes and non-finite values.
    pub fn from_tensor(data: Tensor<T>) -> Result<Self> {
        if data.shape().len() != 3 || data.shape()[0] != 2 {
            return Err(Error::invalid(format!(
                "flow field needs shape [2, H, W], got {:?}",
                data.shape()
            )));
        }
        if !data.all_finite() {
            return Err(Error::invalid("flow field contains non-finite values"));
        }
        Ok(Self { data })
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (T, T) {
        (self.data.at3(0, y, x), self.data.at3(1, y, x))
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, u: T, v: T) {
        self.data.set3(0, y, x, u);
        self.data.set3(1, y, x, v);
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    /// Mean endpoint error against another field, optionally masked.
    pub fn endpoint_error(&self, other: &FlowField<T>, mask: Option<&Tensor<T>>) -> Result<T> {
        if self.data.shape() != other.data.shape() {
            return Err(Error::dim("endpoint_error", self.data.shape(), other.data.shape()));
        }
        let (w, h) = (self.width(), self.height());
        let mut acc = T::zero();
        let mut count = T::zero();
        for y in 0..h {
            for x in 0..w {
                if let Some(m) = mask {
                    if m.at3(0, y, x) <= T::of(0.5) {
                        continue;
                    }
                }
                let (u0, v0) = self.get(x, y);
                let (u1, v1) = other.get(x, y);
                acc += (u0 - u1).hypot(v0 - v1);
                count += T::one();
            }
        }
        Ok(if count > T::zero() { acc / count } else { T::zero() })
    }
}

/// Per-pixel BiM descriptor: ratio in `[0, 1]` and angle in `[0, 2*pi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BimField<T> {
    ratio: Tensor<T>,
    angle: Tensor<T>,
}

impl<T: Scalar> BimField<T> {
    pub fn new(ratio: Tensor<T>, angle: Tensor<T>) -> Result<Self> {
        if ratio.shape() != angle.shape() || ratio.shape().len() != 2 {
            return Err(Error::dim("bim field", ratio.shape(), angle.shape()));
        }
        Ok(Self { ratio, angle })
    }

    pub fn width(&self) -> usize {
        self.ratio.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.ratio.shape()[0]
    }

    pub fn ratio(&self) -> &Tensor<T> {
        &self.ratio
    }

    pub fn angle(&self) -> &Tensor<T> {
        &self.angle
    }

    pub fn get(&self, x: usize, y: usize) -> (T, T) {
        let w = self.width();
        (self.ratio.data()[y * w + x], self.angle.data()[y * w + x])
    }

    /// `[1, H, W]` ratio map for network input.
    pub fn ratio_map(&self) -> Tensor<T> {
        let (h, w) = (self.height(), self.width());
        self.ratio.clone().reshape(&[1, h, w]).expect("2-d ratio")
    }

    /// `[2, H, W]` map of `(sin Phi, cos Phi)` for network input.
    pub fn angle_sincos_map(&self) -> Tensor<T> {
        let (h, w) = (self.height(), self.width());
        let hw = h * w;
        let mut out = Tensor::zeros(&[2, h, w]);
        for i in 0..hw {
            let a = self.angle.data()[i];
            out.data_mut()[i] = a.sin();
            out.data_mut()[hw + i] = a.cos();
        }
        out
    }
}

/// 2-d point in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Half-plane selector relative to the directed segment `A -> B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Counter-clockwise side (positive cross product); yields `Phi = theta`.
    Plus,
    /// Clockwise side; yields `Phi = 2*pi - theta`.
    Minus,
}

/// Teacher input pair selector: `(I0, It)` or `(It, I1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TeacherPair {
    First,
    Second,
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Build the BiM descriptor from two flow fields anchored at the same frame.
///
/// Degenerate pixels fall back to `R = 1/2` when both magnitudes vanish and
/// to a uniformly random angle whenever either flow is too short to define
/// a direction; randomizing avoids biasing the angle embedding.
pub fn bim_from_flows<T: Scalar>(
    v0: &FlowField<T>,
    v1: &FlowField<T>,
    eps: T,
    rng: &mut impl Rng,
) -> Result<BimField<T>> {
    if (v0.width(), v0.height()) != (v1.width(), v1.height()) {
        return Err(Error::dim(
            "bim_from_flows",
            v0.tensor().shape(),
            v1.tensor().shape(),
        ));
    }
    if eps <= T::zero() {
        return Err(Error::invalid("bim_from_flows: eps must be positive"));
    }
    let (w, h) = (v0.width(), v0.height());
    let mut ratio = Tensor::zeros(&[h, w]);
    let mut angle = Tensor::zeros(&[h, w]);
    let two_pi = std::f64::consts::TAU;
    for y in 0..h {
        for x in 0..w {
            let (u0, w0) = v0.get(x, y);
            let (u1, w1) = v1.get(x, y);
            let r0 = u0.hypot(w0);
            let r1 = u1.hypot(w1);
            let r = if r0 + r1 >= eps {
                r0 / (r0 + r1)
            } else {
                T::of(0.5)
            };
            let phi = if r0 >= eps && r1 >= eps {
                wrap_angle(w1.atan2(u1) - w0.atan2(u0))
            } else {
                T::of(rng.gen_range(0.0..two_pi))
            };
            ratio.data_mut()[y * w + x] = r;
            angle.data_mut()[y * w + x] = phi;
        }
    }
    BimField::new(ratio, angle)
}

/// Uniform-motion BiM used at inference: `R = t`, `Phi = pi` everywhere.
pub fn uniform_bim<T: Scalar>(t: T, width: usize, height: usize) -> Result<BimField<T>> {
    if t < T::zero() || t > T::one() {
        return Err(Error::invalid(format!("uniform_bim: t = {t} outside [0, 1]")));
    }
    BimField::new(
        Tensor::full(&[height, width], t),
        Tensor::full(&[height, width], T::of(std::f64::consts::PI)),
    )
}

/// Teacher-side BiM: ratio 1 for the `(I0, It)` pair, ratio 0 for `(It, I1)`,
/// with one shared random angle (the self-flow direction is undefined).
pub fn teacher_bim<T: Scalar>(
    pair: TeacherPair,
    width: usize,
    height: usize,
    rng: &mut impl Rng,
) -> BimField<T> {
    let r = match pair {
        TeacherPair::First => T::one(),
        TeacherPair::Second => T::zero(),
    };
    let phi = T::of(rng.gen_range(0.0..std::f64::consts::TAU));
    BimField::new(
        Tensor::full(&[height, width], r),
        Tensor::full(&[height, width], phi),
    )
    .expect("same shapes by construction")
}

/// Re-measure `(k, theta)` of a candidate intermediate point.
pub fn measure_ratio_angle<T: Scalar>(a: Point2<T>, b: Point2<T>, x: Point2<T>) -> (T, T) {
    let ax = (a.x - x.x, a.y - x.y);
    let bx = (b.x - x.x, b.y - x.y);
    let k = a.dist(x) / b.dist(x);
    let dot = ax.0 * bx.0 + ax.1 * bx.1;
    let cross = ax.0 * bx.1 - ax.1 * bx.0;
    let theta = cross.abs().atan2(dot);
    (k, theta)
}

/// The unique point `X` with `|AX| / |BX| = k` and angle `AXB = theta` on the
/// requested side of line `AB`.
///
/// The two classical loci (the Apollonian circle of ratio `k`, degenerating
/// to the perpendicular bisector at `k = 1`, and the inscribed-angle arc)
/// meet in exactly one point per half-plane; solving the triangle with the
/// law of cosines lands on the same intersection directly: with
/// `|BX| = |AB| / sqrt(k^2 + 1 - 2 k cos theta)` the circles around `A` and
/// `B` intersect at `X`. `theta = pi` degenerates to the collinear split
/// where the side is irrelevant.
pub fn reconstruct_point<T: Scalar>(
    a: Point2<T>,
    b: Point2<T>,
    k: T,
    theta: T,
    side: Side,
) -> Result<Point2<T>> {
    if !(k > T::zero()) {
        return Err(Error::invalid("reconstruct_point: k must be positive"));
    }
    let pi = T::of(std::f64::consts::PI);
    if !(theta > T::zero() && theta <= pi) {
        return Err(Error::invalid("reconstruct_point: theta outside (0, pi]"));
    }
    let d = a.dist(b);
    if !(d > T::zero()) {
        return Err(Error::invalid("reconstruct_point: A and B coincide"));
    }
    let two = T::of(2.0);
    let denom = k * k + T::one() - two * k * theta.cos();
    let v = d / denom.sqrt(); // |BX|
    let u = k * v; // |AX|
    let local_x = (u * u - v * v + d * d) / (two * d);
    // theta = pi is the collinear split; computing y through the square root
    // there turns representation error into a sqrt(eps)-sized offset.
    let local_y = if theta == pi {
        T::zero()
    } else {
        let y_sq = (u * u - local_x * local_x).max(T::zero());
        match side {
            Side::Plus => y_sq.sqrt(),
            Side::Minus => -y_sq.sqrt(),
        }
    };
    let e1 = ((b.x - a.x) / d, (b.y - a.y) / d);
    let e2 = (-e1.1, e1.0);
    Ok(Point2::new(
        a.x + local_x * e1.0 + local_y * e2.0,
        a.y + local_x * e1.1 + local_y * e2.1,
    ))
}

/// Resampling factor for flow fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleFactor {
    Half,
    Two,
    Four,
}

impl ResampleFactor {
    pub fn value(self) -> f64 {
        match self {
            ResampleFactor::Half => 0.5,
            ResampleFactor::Two => 2.0,
            ResampleFactor::Four => 4.0,
        }
    }
}

/// Bilinearly resample a flow to `factor` times its resolution, scaling the
/// displacement values by the same factor so they stay in grid units.
pub fn resample_flow<T: Scalar>(v: &FlowField<T>, factor: ResampleFactor) -> Result<FlowField<T>> {
    let (w, h) = (v.width(), v.height());
    let (ow, oh) = match factor {
        ResampleFactor::Half => {
            if w % 2 != 0 || h % 2 != 0 {
                return Err(Error::invalid(format!(
                    "resample_flow: {w}x{h} is not even, cannot halve"
                )));
            }
            (w / 2, h / 2)
        }
        ResampleFactor::Two => (w * 2, h * 2),
        ResampleFactor::Four => (w * 4, h * 4),
    };
    let resized = sample::resize_bilinear(v.tensor(), oh, ow);
    FlowField::from_tensor(resized.scale(T::of(factor.value())))
}

/// Backward-warp an image or feature grid by a flow field anchored at the
/// output: `out(x, y) = src(x + u, y + v)` with border-clamped bilinear taps.
pub fn backward_warp<T: Scalar>(src: &Tensor<T>, flow: &FlowField<T>) -> Result<Tensor<T>> {
    let (_, h, w) = src.dims3();
    if (flow.width(), flow.height()) != (w, h) {
        return Err(Error::dim("backward_warp", src.shape(), flow.tensor().shape()));
    }
    Ok(sample::warp(src, flow.tensor()))
}

/// Standard flow color wheel: hue from the flow angle, saturation from the
/// clamped magnitude, full value; zero flow renders white.
pub fn flow_to_color<T: Scalar>(v: &FlowField<T>, max_mag: T) -> Result<Tensor<T>> {
    if !(max_mag > T::zero()) {
        return Err(Error::invalid("flow_to_color: max_mag must be positive"));
    }
    let (w, h) = (v.width(), v.height());
    let mut out = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let (u, vv) = v.get(x, y);
            let mag = u.hypot(vv);
            let sat = (mag / max_mag).min(T::one());
            let hue = wrap_angle(vv.atan2(u));
            let (r, g, b) = hsv_to_rgb(hue, sat, T::one());
            out.set3(0, y, x, r);
            out.set3(1, y, x, g);
            out.set3(2, y, x, b);
        }
    }
    Ok(out)
}

fn hsv_to_rgb<T: Scalar>(hue: T, s: T, v: T) -> (T, T, T) {
    let sixth = T::of(std::f64::consts::TAU / 6.0);
    let hp = hue / sixth;
    let c = v * s;
    let m = v - c;
    let frac = hp - (hp / T::of(2.0)).floor() * T::of(2.0); // hp mod 2
    let x = c * (T::one() - (frac - T::one()).abs());
    let sector = hp.floor().as_f64() as i64 % 6;
    let (r, g, b) = match sector {
        0 => (c, x, T::zero()),
        1 => (x, c, T::zero()),
        2 => (T::zero(), c, x),
        3 => (T::zero(), x, c),
        4 => (x, T::zero(), c),
        _ => (c, T::zero(), x),
    };
    (r + m, g + m, b + m)
}
