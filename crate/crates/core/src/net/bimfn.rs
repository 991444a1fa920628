//! BiM-guided flow estimation at one pyramid level.
//!
//! Warped motion features, bidirectional local cost volumes and the encoded
//! previous-level mask feed an eight-convolution trunk; the descriptor enters
//! through separate ratio and angle embeddings that gate the trunk output by
//! elementwise multiplication before a projection to two residual flows.

use crate::autodiff::{Graph, Var};
use crate::motionfield::BimField;
use crate::net::{conv, conv_silu, DescriptorMode, Model, ParamBind};
use crate::{Error, Result, Scalar};

/// Flow outputs of one level: final flows plus the decomposition pieces
/// (`flow = carried + residual`, exactly).
pub struct BimfnOut {
    pub flow0: Var,
    pub flow1: Var,
    pub residual0: Var,
    pub residual1: Var,
    pub carried0: Var,
    pub carried1: Var,
}

/// Embed the descriptor maps: ratio through the distance embedding, angle
/// (as `sin`/`cos` channels) through the angle embedding. The angle path is
/// absent in time-index mode.
pub fn embed_bim<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    bim: &BimField<T>,
) -> (Var, Option<Var>) {
    let ratio = g.constant(bim.ratio_map());
    let r1 = conv_silu(g, bind, "dem.c1", ratio, 1, 1);
    let f_r = conv(g, bind, "dem.c2", r1, 1, 1);
    let f_phi = match model.config.descriptor {
        DescriptorMode::Bim => {
            let sincos = g.constant(bim.angle_sincos_map());
            let a1 = conv_silu(g, bind, "aem.c1", sincos, 1, 1);
            Some(conv(g, bind, "aem.c2", a1, 1, 1))
        }
        DescriptorMode::TimeIndex => None,
    };
    (f_r, f_phi)
}

/// Gate the trunk features with the descriptor embeddings and project to two
/// residual flows: `proj(F_V * F_R * F_Phi)`.
pub fn bim_mconv<T: Scalar>(
    g: &mut Graph<T>,
    bind: &ParamBind,
    f_v: Var,
    f_r: Var,
    f_phi: Option<Var>,
) -> Result<(Var, Var)> {
    if g.shape(f_v) != g.shape(f_r) {
        return Err(Error::dim("bim_mconv", g.shape(f_v), g.shape(f_r)));
    }
    let mut gated = g.mul(f_v, f_r);
    if let Some(phi) = f_phi {
        if g.shape(phi) != g.shape(f_v) {
            return Err(Error::dim("bim_mconv/phi", g.shape(f_v), g.shape(phi)));
        }
        gated = g.mul(gated, phi);
    }
    let flows = conv(g, bind, "bimfn.proj", gated, 1, 1);
    let res0 = g.slice_channels(flows, 0, 2);
    let res1 = g.slice_channels(flows, 2, 4);
    Ok((res0, res1))
}

/// One BiMFN step. `prev_flow0/1` and `prev_mask` must already be resampled
/// to this level's feature resolution; the returned flows are
/// `prev + residual` by construction.
#[allow(clippy::too_many_arguments)]
pub fn bimfn_forward<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bind: &ParamBind,
    feat0: Var,
    feat1: Var,
    prev_flow0: Var,
    prev_flow1: Var,
    prev_mask: Var,
    bim: &BimField<T>,
) -> Result<BimfnOut> {
    let (_, fh, fw) = g.value(feat0).dims3();
    if g.shape(feat0) != g.shape(feat1) {
        return Err(Error::dim("bimfn features", g.shape(feat0), g.shape(feat1)));
    }
    if (bim.width(), bim.height()) != (fw, fh) {
        return Err(Error::DimensionMismatch {
            context: "bimfn descriptor resolution",
            left: vec![bim.height(), bim.width()],
            right: vec![fh, fw],
        });
    }

    let f0w = g.warp(feat0, prev_flow0);
    let f1w = g.warp(feat1, prev_flow1);
    let cv01 = g.cost_volume(f0w, f1w, model.config.cost_radius);
    let cv10 = g.cost_volume(f1w, f0w, model.config.cost_radius);
    let mask_enc = conv_silu(g, bind, "bimfn.mask", prev_mask, 1, 1);
    let x = g.concat_channels(&[f0w, f1w, cv01, cv10, mask_enc]);

    let mut t = conv_silu(g, bind, "bimfn.in", x, 1, 0);
    for i in 1..=6 {
        t = conv_silu(g, bind, &format!("bimfn.t{i}"), t, 1, 1);
    }
    let f_v = conv(g, bind, "bimfn.fv", t, 1, 1);

    let (f_r, f_phi) = embed_bim(model, g, bind, bim);
    let (residual0, residual1) = bim_mconv(g, bind, f_v, f_r, f_phi)?;

    let flow0 = g.add(prev_flow0, residual0);
    let flow1 = g.add(prev_flow1, residual1);
    Ok(BimfnOut {
        flow0,
        flow1,
        residual0,
        residual1,
        carried0: prev_flow0,
        carried1: prev_flow1,
    })
}
