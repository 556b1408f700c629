use serde::{Deserialize, Serialize};

use super::graph::{Graph, OpKind, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvMode {
    /// Dense kernel, weight `[C_out, k, C_in]` (1-D) or `[C_out, kh, kw, C_in]` (2-D).
    Full,
    /// One filter per channel, weight `[C, k]` (1-D) or `[C, kh, kw]` (2-D).
    Depthwise,
    /// Kernel size 1, weight `[C_out, C_in]`.
    Pointwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Output length `ceil(T / stride)`. Padding is split evenly and the odd
    /// element, if any, goes on the right.
    Same,
    Valid,
}

/// Output length and left padding along one axis.
pub fn conv_out_len(len: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            Some((out, total / 2))
        }
        Padding::Valid => (len >= k).then(|| ((len - k) / stride + 1, 0)),
    }
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
    depthwise: bool,
}

impl Geom {
    fn macs(&self) -> u64 {
        let per = if self.depthwise { self.cin } else { self.cin * self.cout };
        (self.ho * self.wo * self.kh * self.kw * per) as u64
    }

    /// Visit every (output position, kernel tap, input position) triple that
    /// lands inside the input.
    fn for_taps(&self, mut f: impl FnMut(usize, usize, usize)) {
        for oh in 0..self.ho {
            for i in 0..self.kh {
                let Some(ih) = (oh * self.sh + i).checked_sub(self.ph).filter(|&v| v < self.h) else {
                    continue;
                };
                for ow in 0..self.wo {
                    for j in 0..self.kw {
                        let Some(iw) = (ow * self.sw + j).checked_sub(self.pw).filter(|&v| v < self.w) else {
                            continue;
                        };
                        f(oh * self.wo + ow, i * self.kw + j, ih * self.w + iw);
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f64], wt: &[f64]) -> Vec<f64> {
        let (cin, cout, taps) = (self.cin, self.cout, self.kh * self.kw);
        let mut out = vec![0.0; self.ho * self.wo * cout];
        self.for_taps(|o, tap, p| {
            let xp = &x[p * cin..(p + 1) * cin];
            let op = &mut out[o * cout..(o + 1) * cout];
            if self.depthwise {
                for c in 0..cin {
                    op[c] += xp[c] * wt[c * taps + tap];
                }
            } else {
                for (oc, ov) in op.iter_mut().enumerate() {
                    let wr = &wt[(oc * taps + tap) * cin..(oc * taps + tap + 1) * cin];
                    *ov += xp.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        });
        out
    }

    fn backward(&self, x: &[f64], wt: &[f64], g: &[f64], need_x: bool, need_w: bool) -> (Vec<f64>, Vec<f64>) {
        let (cin, cout, taps) = (self.cin, self.cout, self.kh * self.kw);
        let mut gx = vec![0.0; if need_x { x.len() } else { 0 }];
        let mut gw = vec![0.0; if need_w { wt.len() } else { 0 }];
        self.for_taps(|o, tap, p| {
            let go = &g[o * cout..(o + 1) * cout];
            if self.depthwise {
                for c in 0..cin {
                    if need_x {
                        gx[p * cin + c] += go[c] * wt[c * taps + tap];
                    }
                    if need_w {
                        gw[c * taps + tap] += go[c] * x[p * cin + c];
                    }
                }
            } else {
                for (oc, &gv) in go.iter().enumerate() {
                    if gv == 0.0 {
                        continue;
                    }
                    let base = (oc * taps + tap) * cin;
                    for c in 0..cin {
                        if need_x {
                            gx[p * cin + c] += gv * wt[base + c];
                        }
                        if need_w {
                            gw[base + c] += gv * x[p * cin + c];
                        }
                    }
                }
            }
        });
        (gx, gw)
    }
}

impl Graph {
    /// 1-D cross-correlation over time on `x[T × C_in]`.
    ///
    /// Weight layouts: full `[C_out, k, C_in]`, depthwise `[C, k]`,
    /// pointwise `[C_out, C_in]`. Bias is left to the caller.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, mode: ConvMode, padding: Padding) -> Result<Var> {
        let (t, cin) = self.value(x).dims2("conv1d")?;
        let ws = self.shape(w).to_vec();
        let (cout, k) = match (mode, ws.as_slice()) {
            (ConvMode::Full, &[o, k, i]) if i == cin => (o, k),
            (ConvMode::Depthwise, &[c, k]) if c == cin => (c, k),
            (ConvMode::Pointwise, &[o, i]) if i == cin => (o, 1),
            _ => return Err(Error::mismatch("conv1d", &[t, cin], &ws)),
        };
        self.conv_generic(OpKind::Conv1d, "conv1d", x, w, [t, 1, cin], [cout, k, 1], [stride, 1], mode, padding, &[0, cout])
    }

    /// 2-D cross-correlation on `x[H × W × C_in]` with the same stride on both axes.
    ///
    /// Weight layouts: full `[C_out, kh, kw, C_in]`, depthwise `[C, kh, kw]`,
    /// pointwise `[C_out, C_in]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, mode: ConvMode, padding: Padding) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let &[h, wd, cin] = xs.as_slice() else {
            return Err(Error::invalid("conv2d", format!("expected [H, W, C] input, got {xs:?}")));
        };
        let ws = self.shape(w).to_vec();
        let (cout, kh, kw) = match (mode, ws.as_slice()) {
            (ConvMode::Full, &[o, kh, kw, i]) if i == cin => (o, kh, kw),
            (ConvMode::Depthwise, &[c, kh, kw]) if c == cin => (c, kh, kw),
            (ConvMode::Pointwise, &[o, i]) if i == cin => (o, 1, 1),
            _ => return Err(Error::mismatch("conv2d", &xs, &ws)),
        };
        self.conv_generic(OpKind::Conv2d, "conv2d", x, w, [h, wd, cin], [cout, kh, kw], [stride, stride], mode, padding, &[0, 0, cout])
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_generic(
        &mut self,
        kind: OpKind,
        op: &'static str,
        x: Var,
        w: Var,
        [h, wd, cin]: [usize; 3],
        [cout, kh, kw]: [usize; 3],
        [sh, sw]: [usize; 2],
        mode: ConvMode,
        padding: Padding,
        out_shape: &[usize],
    ) -> Result<Var> {
        if sh == 0 || sw == 0 {
            return Err(Error::invalid(op, "stride must be positive"));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::invalid(op, "kernel size must be positive"));
        }
        let (ho, ph) = conv_out_len(h, kh, sh, padding)
            .ok_or_else(|| Error::invalid(op, format!("input length {h} shorter than kernel {kh}")))?;
        let (wo, pw) = conv_out_len(wd, kw, sw, padding)
            .ok_or_else(|| Error::invalid(op, format!("input width {wd} shorter than kernel {kw}")))?;
        let geom = Geom {
            h,
            w: wd,
            cin,
            cout,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
            ho,
            wo,
            depthwise: mode == ConvMode::Depthwise,
        };
        let data = geom.forward(self.value(x).data(), self.value(w).data());
        self.add_macs(geom.macs());
        let mut shape = out_shape.to_vec();
        shape[0] = ho;
        if shape.len() == 3 {
            shape[1] = wo;
        }
        let value = Tensor::new(&shape, data)?;
        Ok(self.record(
            kind,
            &[x, w],
            value,
            Box::new(move |a| {
                let (gx, gw) = geom.backward(a.inputs[0].data(), a.inputs[1].data(), a.grad, a.needs[0], a.needs[1]);
                vec![a.needs[0].then_some(gx), a.needs[1].then_some(gw)]
            }),
        ))
    }
}
