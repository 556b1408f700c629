use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Forward, Linear, ParamId, ParamStore, StatsUpdate, BN_EPS};
use crate::error::{Error, Result};
use crate::tensor::{BatchStats, ConvMode, Padding, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvActivation {
    /// Expand to `2C`, gate back down to `C`.
    Glu,
    /// Expand to `2C` and keep that width through the depthwise conv.
    Swish,
    /// Like `Swish` without the activation.
    None,
}

/// Pointwise expand, gate, depthwise conv, batch-stat norm, Swish, pointwise
/// project. Residual handling is up to the caller.
#[derive(Clone, Debug)]
pub struct ConvModule {
    pub pw1: Linear,
    pub activation: ConvActivation,
    pub dw_weight: ParamId,
    pub dw_bias: ParamId,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    pub running_mean: String,
    pub running_var: String,
    pub pw2: Linear,
    pub kernel: usize,
    pub dropout: f64,
}

impl ConvModule {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        kernel: usize,
        activation: ConvActivation,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::invalid("conv_module", format!("kernel size {kernel} must be odd")));
        }
        let inner = Self::inner_width(dim, activation);
        let pw1 = Linear::new(store, &format!("{name}.pointwise1"), dim, 2 * dim, true, rng);
        let dw_weight = store.add_weight(format!("{name}.depthwise.weight"), &[inner, kernel], kernel, rng);
        let dw_bias = store.add(format!("{name}.depthwise.bias"), Tensor::zeros(&[inner]));
        let bn_gamma = store.add(format!("{name}.norm.gamma"), Tensor::ones(&[inner]));
        let bn_beta = store.add(format!("{name}.norm.beta"), Tensor::zeros(&[inner]));
        let running_mean = format!("{name}.norm.running_mean");
        let running_var = format!("{name}.norm.running_var");
        store.add_buffer(running_mean.clone(), vec![0.0; inner]);
        store.add_buffer(running_var.clone(), vec![1.0; inner]);
        let pw2 = Linear::new(store, &format!("{name}.pointwise2"), inner, dim, true, rng);
        Ok(Self {
            pw1,
            activation,
            dw_weight,
            dw_bias,
            bn_gamma,
            bn_beta,
            running_mean,
            running_var,
            pw2,
            kernel,
            dropout,
        })
    }

    /// Channel count seen by the depthwise conv.
    pub fn inner_width(dim: usize, activation: ConvActivation) -> usize {
        match activation {
            ConvActivation::Glu => dim,
            ConvActivation::Swish | ConvActivation::None => 2 * dim,
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let h = self.pw1.forward(f, x)?;
        let h = match self.activation {
            ConvActivation::Glu => f.graph.glu(h)?,
            ConvActivation::Swish => f.graph.swish(h),
            ConvActivation::None => h,
        };
        let (w, b) = (f.param(self.dw_weight), f.param(self.dw_bias));
        let h = f.graph.conv1d(h, w, 1, ConvMode::Depthwise, Padding::Same)?;
        let h = f.graph.add_row(h, b)?;
        let (gamma, beta) = (f.param(self.bn_gamma), f.param(self.bn_beta));
        let h = if f.training() {
            let (y, stats) = f.graph.batch_norm_train(h, gamma, beta, BN_EPS)?;
            f.push_stats(StatsUpdate {
                mean_key: self.running_mean.clone(),
                var_key: self.running_var.clone(),
                stats,
            });
            y
        } else {
            let store = f.store();
            let missing = |k: &str| Error::invalid("conv_module", format!("missing buffer {k}"));
            let stats = BatchStats {
                mean: store.buffer(&self.running_mean).ok_or_else(|| missing(&self.running_mean))?.to_vec(),
                var: store.buffer(&self.running_var).ok_or_else(|| missing(&self.running_var))?.to_vec(),
            };
            f.graph.batch_norm_eval(h, gamma, beta, &stats, BN_EPS)?
        };
        let h = f.graph.swish(h);
        let y = self.pw2.forward(f, h)?;
        f.dropout(y, self.dropout)
    }
}
