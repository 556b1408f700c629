use rand::Rng;

use super::{Forward, Linear, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{ConvMode, Padding, Tensor, Var};

pub(crate) const DOWN_KERNEL: usize = 3;

/// Temporal U-Net pair: a stride-2 depthwise-separable downsampler and a
/// repeat-then-project upsampler that adds back the stored skip tensor.
#[derive(Clone, Debug)]
pub struct TemporalResampler {
    pub dw_weight: ParamId,
    pub dw_bias: ParamId,
    pub down_pw: Linear,
    pub up_pw: Linear,
}

impl TemporalResampler {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        Self {
            dw_weight: store.add_weight(format!("{name}.down.depthwise.weight"), &[dim, DOWN_KERNEL], DOWN_KERNEL, rng),
            dw_bias: store.add(format!("{name}.down.depthwise.bias"), Tensor::zeros(&[dim])),
            down_pw: Linear::new(store, &format!("{name}.down.pointwise"), dim, dim, true, rng),
            up_pw: Linear::new(store, &format!("{name}.up.pointwise"), dim, dim, true, rng),
        }
    }

    /// Returns the downsampled sequence and the skip tensor (the input).
    pub fn downsample(&self, f: &mut Forward<'_>, x: Var) -> Result<(Var, Var)> {
        let (w, b) = (f.param(self.dw_weight), f.param(self.dw_bias));
        let h = f.graph.conv1d(x, w, 2, ConvMode::Depthwise, Padding::Same)?;
        let h = f.graph.add_row(h, b)?;
        let y = self.down_pw.forward(f, h)?;
        Ok((y, x))
    }

    /// Repeat every frame twice, cut to the skip length, project, add the skip.
    pub fn upsample(&self, f: &mut Forward<'_>, y: Var, skip: Var) -> Result<Var> {
        let (t2, _) = f.value(y).dims2("upsample")?;
        let (t1, _) = f.value(skip).dims2("upsample")?;
        if t2 != t1.div_ceil(2) {
            return Err(Error::invalid(
                "upsample",
                format!("input length {t2} does not downsample from skip length {t1}"),
            ));
        }
        let r = f.graph.repeat_rows(y, 2)?;
        let r = if 2 * t2 == t1 { r } else { f.graph.slice_rows(r, 0, t1)? };
        let p = self.up_pw.forward(f, r)?;
        f.graph.add(p, skip)
    }
}
