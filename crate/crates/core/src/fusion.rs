//! Cross-modal residual fusion and the comparison fusion heads.
//!
//! Both modality features are mapped through their own `tanh` affine
//! transform and averaged into a shared interaction vector. The fusion
//! controller layer-normalizes each modality, adds the interaction vector
//! scaled by a learnable per-modality scalar, and squashes with `tanh`:
//!
//! ```text
//! h     = ½ (U_v(v) + U_a(a))
//! v_hat = tanh(LN_v(v) + β_v · h)
//! a_hat = tanh(LN_a(a) + β_a · h)
//! joint = proj([v_hat; a_hat])
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Init, ParamId, ParamStore, Value};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};

pub const DEFAULT_BETA_INIT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    Crfn,
    /// Interaction kept, controller (LayerNorm and β scaling) removed.
    NoFc,
    Concat,
    Gated,
}

impl FusionVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionVariant::Crfn => "crfn",
            FusionVariant::NoFc => "no_fc",
            FusionVariant::Concat => "concat",
            FusionVariant::Gated => "gated",
        }
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crfn" => Ok(FusionVariant::Crfn),
            "no_fc" => Ok(FusionVariant::NoFc),
            "concat" => Ok(FusionVariant::Concat),
            "gated" => Ok(FusionVariant::Gated),
            other => Err(Error::Config(format!(
                "unknown fusion variant `{other}` (expected crfn, no_fc, concat, gated)"
            ))),
        }
    }
}

/// The two modality transforms feeding the interaction vector.
#[derive(Debug, Clone, Copy)]
pub struct Interaction {
    pub u_v: Linear,
    pub u_a: Linear,
}

impl Interaction {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, d: usize, rng: &mut R) -> Result<Self> {
        Ok(Interaction {
            u_v: Linear::new(store, "fusion.u_v", d, d, rng)?,
            u_a: Linear::new(store, "fusion.u_a", d, d, rng)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusionController {
    pub ln_v: LayerNorm,
    pub ln_a: LayerNorm,
    pub beta_v: ParamId,
    pub beta_a: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct CrfnParams {
    pub interaction: Interaction,
    pub controller: FusionController,
    pub proj: Linear,
}

impl CrfnParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d: usize,
        d_out: usize,
        beta_init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let interaction = Interaction::new(store, d, rng)?;
        let controller = FusionController {
            ln_v: LayerNorm::new(store, "fusion.ln_v", d, rng)?,
            ln_a: LayerNorm::new(store, "fusion.ln_a", d, rng)?,
            beta_v: store.make_param("fusion.beta_v", &[1], Init::Constant(beta_init), rng)?,
            beta_a: store.make_param("fusion.beta_a", &[1], Init::Constant(beta_init), rng)?,
        };
        let proj = Linear::new(store, "fusion.proj", 2 * d, d_out, rng)?;
        Ok(CrfnParams {
            interaction,
            controller,
            proj,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GatedParams {
    /// `2d → 1` gate logit.
    pub gate: Linear,
    pub proj: Linear,
}

#[derive(Debug, Clone, Copy)]
pub enum FusionParams {
    Crfn(CrfnParams),
    NoFc { interaction: Interaction, proj: Linear },
    Concat { proj: Linear },
    Gated(GatedParams),
}

impl FusionParams {
    pub fn new<R: Rng + ?Sized>(
        variant: FusionVariant,
        store: &mut ParamStore,
        d: usize,
        d_out: usize,
        beta_init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match variant {
            FusionVariant::Crfn => FusionParams::Crfn(CrfnParams::new(store, d, d_out, beta_init, rng)?),
            FusionVariant::NoFc => FusionParams::NoFc {
                interaction: Interaction::new(store, d, rng)?,
                proj: Linear::new(store, "fusion.proj", 2 * d, d_out, rng)?,
            },
            FusionVariant::Concat => FusionParams::Concat {
                proj: Linear::new(store, "fusion.proj", 2 * d, d_out, rng)?,
            },
            FusionVariant::Gated => FusionParams::Gated(GatedParams {
                gate: Linear::new(store, "fusion.gate", 2 * d, 1, rng)?,
                proj: Linear::new(store, "fusion.proj", 2 * d, d_out, rng)?,
            }),
        })
    }

    pub fn variant(&self) -> FusionVariant {
        match self {
            FusionParams::Crfn(_) => FusionVariant::Crfn,
            FusionParams::NoFc { .. } => FusionVariant::NoFc,
            FusionParams::Concat { .. } => FusionVariant::Concat,
            FusionParams::Gated(_) => FusionVariant::Gated,
        }
    }

    pub fn fuse(&self, g: &mut Graph, store: &ParamStore, v: Value, a: Value) -> Result<FusedPair> {
        match self {
            FusionParams::Crfn(p) => crfn_fuse(g, store, v, a, p),
            FusionParams::NoFc { interaction, proj } => no_fc_fuse(g, store, v, a, interaction, proj),
            FusionParams::Concat { proj } => concat_fuse(g, store, v, a, proj),
            FusionParams::Gated(p) => gated_fuse(g, store, v, a, p),
        }
    }

    /// Current `(β_v, β_a)`, only for the CRFN variant.
    pub fn betas(&self, store: &ParamStore) -> Option<(f64, f64)> {
        match self {
            FusionParams::Crfn(p) => Some((
                store.get(p.controller.beta_v).data()[0],
                store.get(p.controller.beta_a).data()[0],
            )),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusedPair {
    pub v_hat: Value,
    pub a_hat: Value,
    /// Present for the residual variants.
    pub h_interact: Option<Value>,
    pub joint: Value,
}

/// `tanh(x · W + b)` for one modality.
pub fn transform_modality(g: &mut Graph, store: &ParamStore, x: Value, map: &Linear) -> Result<Value> {
    let y = map.forward(g, store, x)?;
    Ok(g.tanh(y))
}

pub fn interaction_vector(g: &mut Graph, u_v: Value, u_a: Value) -> Result<Value> {
    g.mean_pair(u_v, u_a)
}

fn interact(g: &mut Graph, store: &ParamStore, v: Value, a: Value, p: &Interaction) -> Result<Value> {
    check_pair(g, v, a, p.u_v.in_dim)?;
    let u_v = transform_modality(g, store, v, &p.u_v)?;
    let u_a = transform_modality(g, store, a, &p.u_a)?;
    interaction_vector(g, u_v, u_a)
}

fn check_pair(g: &Graph, v: Value, a: Value, d: usize) -> Result<()> {
    if g.shape(v) != g.shape(a) || g.shape(v).last() != Some(&d) {
        return Err(Error::shape("fusion", g.shape(v), g.shape(a)));
    }
    Ok(())
}

fn project(g: &mut Graph, store: &ParamStore, v_hat: Value, a_hat: Value, proj: &Linear) -> Result<Value> {
    let cat = g.concat(v_hat, a_hat)?;
    proj.forward(g, store, cat)
}

pub fn crfn_fuse(g: &mut Graph, store: &ParamStore, v: Value, a: Value, p: &CrfnParams) -> Result<FusedPair> {
    let h = interact(g, store, v, a, &p.interaction)?;
    let c = &p.controller;

    let v_norm = c.ln_v.forward(g, store, v)?;
    let a_norm = c.ln_a.forward(g, store, a)?;

    let beta_v = g.param(store, c.beta_v);
    let beta_a = g.param(store, c.beta_a);
    let v_push = g.scale(beta_v, h)?;
    let a_push = g.scale(beta_a, h)?;
    let v_res = g.add(v_norm, v_push)?;
    let a_res = g.add(a_norm, a_push)?;

    let v_hat = g.tanh(v_res);
    let a_hat = g.tanh(a_res);
    let joint = project(g, store, v_hat, a_hat, &p.proj)?;
    Ok(FusedPair {
        v_hat,
        a_hat,
        h_interact: Some(h),
        joint,
    })
}

/// Residual interaction at full strength with no normalization or scaling.
pub fn no_fc_fuse(
    g: &mut Graph,
    store: &ParamStore,
    v: Value,
    a: Value,
    interaction: &Interaction,
    proj: &Linear,
) -> Result<FusedPair> {
    let h = interact(g, store, v, a, interaction)?;
    let v_res = g.add(v, h)?;
    let a_res = g.add(a, h)?;
    let v_hat = g.tanh(v_res);
    let a_hat = g.tanh(a_res);
    let joint = project(g, store, v_hat, a_hat, proj)?;
    Ok(FusedPair {
        v_hat,
        a_hat,
        h_interact: Some(h),
        joint,
    })
}

pub fn concat_fuse(g: &mut Graph, store: &ParamStore, v: Value, a: Value, proj: &Linear) -> Result<FusedPair> {
    check_pair(g, v, a, proj.in_dim / 2)?;
    let joint = project(g, store, v, a, proj)?;
    Ok(FusedPair {
        v_hat: v,
        a_hat: a,
        h_interact: None,
        joint,
    })
}

/// Scalar sigmoid gate trading vision against audio.
pub fn gated_fuse(g: &mut Graph, store: &ParamStore, v: Value, a: Value, p: &GatedParams) -> Result<FusedPair> {
    check_pair(g, v, a, p.proj.in_dim / 2)?;
    let cat = g.concat(v, a)?;
    let logit = p.gate.forward(g, store, cat)?;
    let gate = g.sigmoid(logit);
    let other = g.affine(gate, -1.0, 1.0);
    let v_hat = g.scale(gate, v)?;
    let a_hat = g.scale(other, a)?;
    let joint = project(g, store, v_hat, a_hat, &p.proj)?;
    Ok(FusedPair {
        v_hat,
        a_hat,
        h_interact: None,
        joint,
    })
}
