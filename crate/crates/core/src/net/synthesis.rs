//! Synthesis U-Net: blend the two warped source frames with a learned mask
//! and add a residual image.

use crate::autodiff::{Graph, Var};
use crate::net::{conv, conv_silu, FlowScales, Model, ParamBind, CONTEXT_SCALES};
use crate::{Error, Result, Scalar};

/// Synthesis outputs at one level. `interp` is unclamped; clamping to
/// `[0, 1]` happens only at image export so losses see raw values.
pub struct SynthOut {
    pub mask_logits: Var,
    pub residual: Var,
    pub interp: Var,
}

/// Warp sources and context at all three scales, run the U-Net, and compose
/// `interp = warp(I0) * sigmoid(O) + warp(I1) * (1 - sigmoid(O)) + residual`.
pub fn synthesis_forward<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    img0: Var,
    img1: Var,
    flows: &FlowScales,
    ctx0: &[Var; CONTEXT_SCALES],
    ctx1: &[Var; CONTEXT_SCALES],
) -> Result<SynthOut> {
    let (_, h, w) = g.value(img0).dims3();
    if g.shape(img0) != g.shape(img1) {
        return Err(Error::dim("synthesis images", g.shape(img0), g.shape(img1)));
    }
    let (_, ffh, ffw) = g.value(flows.full.0).dims3();
    if (ffh, ffw) != (h, w) {
        return Err(Error::dim("synthesis flow/image", g.shape(flows.full.0), g.shape(img0)));
    }

    let _ = model;
    let wi0 = g.warp(img0, flows.full.0);
    let wi1 = g.warp(img1, flows.full.1);
    let wc0a = g.warp(ctx0[0], flows.full.0);
    let wc0b = g.warp(ctx1[0], flows.full.1);
    let wc1a = g.warp(ctx0[1], flows.half.0);
    let wc1b = g.warp(ctx1[1], flows.half.1);
    let wc2a = g.warp(ctx0[2], flows.feat.0);
    let wc2b = g.warp(ctx1[2], flows.feat.1);

    let in0 = g.concat_channels(&[wi0, wi1, wc0a, wc0b, flows.full.0, flows.full.1]);
    let e0 = conv_silu(g, bind, "sn.e0", in0, 1, 1);
    let d1 = conv_silu(g, bind, "sn.d1", e0, 2, 1);
    let in1 = g.concat_channels(&[d1, wc1a, wc1b, flows.half.0, flows.half.1]);
    let e1 = conv_silu(g, bind, "sn.e1", in1, 1, 1);
    let d2 = conv_silu(g, bind, "sn.d2", e1, 2, 1);
    let in2 = g.concat_channels(&[d2, wc2a, wc2b, flows.feat.0, flows.feat.1]);
    let e2 = conv_silu(g, bind, "sn.e2", in2, 1, 1);

    let u1 = conv_silu(g, bind, "sn.u1", e2, 1, 1);
    let u1 = g.pixel_shuffle(u1, 2);
    let cat1 = g.concat_channels(&[u1, e1]);
    let m1 = conv_silu(g, bind, "sn.m1", cat1, 1, 1);
    let u0 = conv_silu(g, bind, "sn.u0", m1, 1, 1);
    let u0 = g.pixel_shuffle(u0, 2);
    let cat0 = g.concat_channels(&[u0, e0]);
    let m0 = conv_silu(g, bind, "sn.m0", cat0, 1, 1);
    let head = conv(g, bind, "sn.head", m0, 1, 1);

    let mask_logits = g.slice_channels(head, 0, 1);
    let residual = g.slice_channels(head, 1, 4);
    let interp = compose_interp(g, wi0, wi1, mask_logits, residual);
    Ok(SynthOut {
        mask_logits,
        residual,
        interp,
    })
}

/// The blending equation on already-warped images.
pub fn compose_interp<T: Scalar>(
    g: &mut Graph<T>,
    warped0: Var,
    warped1: Var,
    mask_logits: Var,
    residual: Var,
) -> Var {
    let sig = g.sigmoid(mask_logits);
    let a = g.bmul(warped0, sig);
    let neg = g.neg(sig);
    let inv = g.add_scalar(neg, T::one());
    let b = g.bmul(warped1, inv);
    let blend = g.add(a, b);
    g.add(blend, residual)
}
