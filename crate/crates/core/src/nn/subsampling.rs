use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Forward, Linear, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{ConvMode, Padding, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsamplingKind {
    Vanilla,
    DepthwiseSeparable,
}

#[derive(Clone, Debug)]
enum SecondConv {
    Vanilla { w: ParamId, b: ParamId },
    Separable { dw: ParamId, dw_b: ParamId, pw: ParamId, pw_b: ParamId },
}

/// Two stride-2 3×3 convolutions over (time, frequency) followed by a
/// projection of the flattened channels to the model width.
#[derive(Clone, Debug)]
pub struct SubsamplingBlock {
    conv1_w: ParamId,
    conv1_b: ParamId,
    conv2: SecondConv,
    pub proj: Linear,
    pub kind: SubsamplingKind,
    pub feat_dim: usize,
    pub dim: usize,
    pub dropout: f64,
}

pub(crate) const SUB_KERNEL: usize = 3;

/// Time or frequency length after both stride-2 convolutions.
pub fn subsampled_len(n: usize) -> usize {
    n.div_ceil(2).div_ceil(2)
}

impl SubsamplingBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        feat_dim: usize,
        dim: usize,
        kind: SubsamplingKind,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let k = SUB_KERNEL;
        let conv1_w = store.add_weight(format!("{name}.conv1.weight"), &[dim, k, k, 1], k * k, rng);
        let conv1_b = store.add(format!("{name}.conv1.bias"), Tensor::zeros(&[dim]));
        let conv2 = match kind {
            SubsamplingKind::Vanilla => SecondConv::Vanilla {
                w: store.add_weight(format!("{name}.conv2.weight"), &[dim, k, k, dim], k * k * dim, rng),
                b: store.add(format!("{name}.conv2.bias"), Tensor::zeros(&[dim])),
            },
            SubsamplingKind::DepthwiseSeparable => SecondConv::Separable {
                dw: store.add_weight(format!("{name}.conv2.depthwise.weight"), &[dim, k, k], k * k, rng),
                dw_b: store.add(format!("{name}.conv2.depthwise.bias"), Tensor::zeros(&[dim])),
                pw: store.add_weight(format!("{name}.conv2.pointwise.weight"), &[dim, dim], dim, rng),
                pw_b: store.add(format!("{name}.conv2.pointwise.bias"), Tensor::zeros(&[dim])),
            },
        };
        let proj = Linear::new(store, &format!("{name}.out"), subsampled_len(feat_dim) * dim, dim, true, rng);
        Self {
            conv1_w,
            conv1_b,
            conv2,
            proj,
            kind,
            feat_dim,
            dim,
            dropout,
        }
    }

    /// `features[T × F]` to `[ceil(ceil(T/2)/2) × C]`.
    pub fn forward(&self, f: &mut Forward<'_>, features: Var) -> Result<Var> {
        let (t, feat) = f.value(features).dims2("subsampling")?;
        if feat != self.feat_dim {
            return Err(Error::mismatch("subsampling", &[t, feat], &[t, self.feat_dim]));
        }
        let x = f.graph.reshape(features, &[t, feat, 1])?;
        let (w, b) = (f.param(self.conv1_w), f.param(self.conv1_b));
        let h = f.graph.conv2d(x, w, 2, ConvMode::Full, Padding::Same)?;
        let h = f.graph.add_row(h, b)?;
        let h = f.graph.swish(h);
        let h = match self.conv2 {
            SecondConv::Vanilla { w, b } => {
                let (w, b) = (f.param(w), f.param(b));
                let h = f.graph.conv2d(h, w, 2, ConvMode::Full, Padding::Same)?;
                f.graph.add_row(h, b)?
            }
            SecondConv::Separable { dw, dw_b, pw, pw_b } => {
                let (dw, dw_b, pw, pw_b) = (f.param(dw), f.param(dw_b), f.param(pw), f.param(pw_b));
                let h = f.graph.conv2d(h, dw, 2, ConvMode::Depthwise, Padding::Same)?;
                let h = f.graph.add_row(h, dw_b)?;
                let h = f.graph.conv2d(h, pw, 1, ConvMode::Pointwise, Padding::Same)?;
                f.graph.add_row(h, pw_b)?
            }
        };
        let h = f.graph.swish(h);
        let shape = f.value(h).shape().to_vec();
        let h = f.graph.reshape(h, &[shape[0], shape[1] * shape[2]])?;
        let y = self.proj.forward(f, h)?;
        f.dropout(y, self.dropout)
    }
}
