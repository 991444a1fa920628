//! Content-aware upsampling: fuse context features warped at three scales,
//! emit per-pixel convex kernels, and upsample both flows by 2x and 4x.

use crate::autodiff::{Graph, Var};
use crate::net::{conv, conv_silu, Model, ParamBind, CONTEXT_SCALES};
use crate::{Error, Result, Scalar};

/// Kernels and upsampled flows of one level. Flows are in the pixel units of
/// their own resolution (displacements scale with the factor).
pub struct CaunOut {
    /// 2x kernels per direction: `[9 * 4, h, w]`, softmax-normalized.
    pub kernels2: (Var, Var),
    /// 4x kernels per direction: `[9 * 16, h, w]`.
    pub kernels4: (Var, Var),
    /// Flows at half image resolution.
    pub flow_half: (Var, Var),
    /// Flows at full image resolution.
    pub flow_full: (Var, Var),
}

/// Resample a flow inside the graph: bilinear grid resize plus displacement
/// scaling, the differentiable twin of `motionfield::resample_flow`.
pub fn resample_flow_g<T: Scalar>(
    g: &mut Graph<T>,
    flow: Var,
    out_h: usize,
    out_w: usize,
    value_scale: f64,
) -> Var {
    let r = g.resize_bilinear(flow, out_h, out_w);
    g.scale(r, T::of(value_scale))
}

/// Upsample both feature-resolution flows adaptively.
///
/// The three context scales of each direction are aligned to the target time
/// by warping with the matching resampled flow, fused top-down into a
/// feature-resolution map, and projected to the 2x and 4x kernel logits.
pub fn caun_forward<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    flow0: Var,
    flow1: Var,
    ctx0: &[Var; CONTEXT_SCALES],
    ctx1: &[Var; CONTEXT_SCALES],
) -> Result<CaunOut> {
    let (fc, fh, fw) = g.value(flow0).dims3();
    if fc != 2 || g.shape(flow0) != g.shape(flow1) {
        return Err(Error::dim("caun flows", g.shape(flow0), g.shape(flow1)));
    }
    let (_, c2h, c2w) = g.value(ctx0[2]).dims3();
    if (c2h, c2w) != (fh, fw) {
        return Err(Error::dim("caun context/flow", g.shape(ctx0[2]), g.shape(flow0)));
    }

    // Flows in the units of each context scale.
    let up2_0 = resample_flow_g(g, flow0, fh * 2, fw * 2, 2.0);
    let up2_1 = resample_flow_g(g, flow1, fh * 2, fw * 2, 2.0);
    let up4_0 = resample_flow_g(g, flow0, fh * 4, fw * 4, 4.0);
    let up4_1 = resample_flow_g(g, flow1, fh * 4, fw * 4, 4.0);

    let w2a = g.warp(ctx0[2], flow0);
    let w2b = g.warp(ctx1[2], flow1);
    let w1a = g.warp(ctx0[1], up2_0);
    let w1b = g.warp(ctx1[1], up2_1);
    let w0a = g.warp(ctx0[0], up4_0);
    let w0b = g.warp(ctx1[0], up4_1);

    let w0 = g.concat_channels(&[w0a, w0b]);
    let d0 = conv_silu(g, bind, "caun.d0", w0, 2, 1);
    let w1 = g.concat_channels(&[w1a, w1b, d0]);
    let d1 = conv_silu(g, bind, "caun.d1", w1, 2, 1);
    let fused_in = g.concat_channels(&[w2a, w2b, d1, flow0, flow1]);
    let f1 = conv_silu(g, bind, "caun.f1", fused_in, 1, 0);
    let f2 = conv_silu(g, bind, "caun.f2", f1, 1, 1);

    let k2_logits = conv(g, bind, "caun.k2", f2, 1, 0);
    let k4_logits = conv(g, bind, "caun.k4", f2, 1, 0);
    let k2_0 = {
        let s = g.slice_channels(k2_logits, 0, 36);
        g.softmax_taps(s, 4)
    };
    let k2_1 = {
        let s = g.slice_channels(k2_logits, 36, 72);
        g.softmax_taps(s, 4)
    };
    let k4_0 = {
        let s = g.slice_channels(k4_logits, 0, 144);
        g.softmax_taps(s, 16)
    };
    let k4_1 = {
        let s = g.slice_channels(k4_logits, 144, 288);
        g.softmax_taps(s, 16)
    };

    let _ = model;
    Ok(CaunOut {
        flow_half: (
            g.convex_upsample(flow0, k2_0, 2),
            g.convex_upsample(flow1, k2_1, 2),
        ),
        flow_full: (
            g.convex_upsample(flow0, k4_0, 4),
            g.convex_upsample(flow1, k4_1, 4),
        ),
        kernels2: (k2_0, k2_1),
        kernels4: (k4_0, k4_1),
    })
}
