//! Parameterized layers built on the autodiff primitives.

use rand::Rng;

use crate::autodiff::{Graph, Init, ParamId, ParamStore, Value};
use crate::error::Result;

/// Affine map `x · W + b` with `W: [in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights scaled-uniform over `fan_in`, bias zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.make_param(
            &format!("{name}.weight"),
            &[in_dim, out_dim],
            Init::ScaledUniform { fan_in: in_dim },
            rng,
        )?;
        let bias = store.make_param(&format!("{name}.bias"), &[out_dim], Init::Constant(0.0), rng)?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Result<Value> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }

    /// Overwrites weight and bias, for tests and hand-built instances.
    pub fn set(&self, store: &mut ParamStore, weight: &[f64], bias: &[f64]) {
        store.get_mut(self.weight).data_mut().copy_from_slice(weight);
        store.get_mut(self.bias).data_mut().copy_from_slice(bias);
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    /// Gain one, bias zero.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Result<Self> {
        let gain = store.make_param(&format!("{name}.gain"), &[dim], Init::Constant(1.0), rng)?;
        let bias = store.make_param(&format!("{name}.bias"), &[dim], Init::Constant(0.0), rng)?;
        Ok(LayerNorm { gain, bias, dim })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Result<Value> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }
}

/// Two affine layers, each followed by tanh.
#[derive(Debug, Clone, Copy)]
pub struct Encoder {
    pub first: Linear,
    pub second: Linear,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Encoder {
            first: Linear::new(store, &format!("{name}.0"), in_dim, out_dim, rng)?,
            second: Linear::new(store, &format!("{name}.1"), out_dim, out_dim, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Result<Value> {
        let h = self.first.forward(g, store, x)?;
        let h = g.tanh(h);
        let h = self.second.forward(g, store, h)?;
        Ok(g.tanh(h))
    }
}
