use rand::Rng;

use super::graph::{Graph, OpKind, Var};
use super::Tensor;
use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `a[m×k] · b[k×n]`
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[m×k] · b[n×k]ᵀ`
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[k×m]ᵀ · b[k×n]`
pub(crate) fn mm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn unary(
    g: &mut Graph,
    kind: OpKind,
    x: Var,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Var {
    let t = g.value(x);
    let data = t.data().iter().map(|&v| f(v)).collect();
    let value = Tensor::new(t.shape(), data).expect("unary: same shape");
    g.record(
        kind,
        &[x],
        value,
        Box::new(move |a| {
            let gx = a.inputs[0]
                .data()
                .iter()
                .zip(a.out.data())
                .zip(a.grad)
                .map(|((&x, &y), &g)| g * df(x, y))
                .collect();
            vec![Some(gx)]
        }),
    )
}

impl Graph {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn row_broadcast(&self, op: &'static str, a: Var, v: Var) -> Result<usize> {
        let c = self.value(a).last_dim();
        if self.shape(v) != [c] {
            return Err(Error::mismatch(op, self.shape(a), self.shape(v)));
        }
        Ok(c)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.record(
            OpKind::Add,
            &[a, b],
            value,
            Box::new(|a| vec![Some(a.grad.to_vec()), Some(a.grad.to_vec())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.record(
            OpKind::Sub,
            &[a, b],
            value,
            Box::new(|a| vec![Some(a.grad.to_vec()), Some(a.grad.iter().map(|g| -g).collect())]),
        ))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.record(
            OpKind::Mul,
            &[a, b],
            value,
            Box::new(|a| {
                let (x, y) = (a.inputs[0].data(), a.inputs[1].data());
                let gx = a.needs[0].then(|| a.grad.iter().zip(y).map(|(g, y)| g * y).collect());
                let gy = a.needs[1].then(|| a.grad.iter().zip(x).map(|(g, x)| g * x).collect());
                vec![gx, gy]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * s).collect();
        let value = Tensor::new(t.shape(), data).expect("scale: same shape");
        self.record(
            OpKind::Scale,
            &[a],
            value,
            Box::new(move |a| vec![Some(a.grad.iter().map(|g| g * s).collect())]),
        )
    }

    /// `a[..×C] + v[C]`, broadcast over rows.
    pub fn add_row(&mut self, a: Var, v: Var) -> Result<Var> {
        let c = self.row_broadcast("add_row", a, v)?;
        let (ta, tv) = (self.value(a), self.value(v));
        let data = ta
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(tv.data()).map(|(x, b)| x + b))
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.record(
            OpKind::AddRow,
            &[a, v],
            value,
            Box::new(move |a| {
                let gv = a.needs[1].then(|| {
                    let mut gv = vec![0.0; c];
                    for row in a.grad.chunks(c) {
                        gv.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                    gv
                });
                vec![Some(a.grad.to_vec()), gv]
            }),
        ))
    }

    /// `a[..×C] ⊙ v[C]`, broadcast over rows.
    pub fn mul_row(&mut self, a: Var, v: Var) -> Result<Var> {
        let c = self.row_broadcast("mul_row", a, v)?;
        let (ta, tv) = (self.value(a), self.value(v));
        let data = ta
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(tv.data()).map(|(x, s)| x * s))
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.record(
            OpKind::MulRow,
            &[a, v],
            value,
            Box::new(move |a| {
                let (x, s) = (a.inputs[0].data(), a.inputs[1].data());
                let gx = a.needs[0].then(|| {
                    a.grad
                        .chunks(c)
                        .flat_map(|row| row.iter().zip(s).map(|(g, s)| g * s))
                        .collect()
                });
                let gs = a.needs[1].then(|| {
                    let mut gs = vec![0.0; c];
                    for (grow, xrow) in a.grad.chunks(c).zip(x.chunks(c)) {
                        for j in 0..c {
                            gs[j] += grow[j] * xrow[j];
                        }
                    }
                    gs
                });
                vec![gx, gs]
            }),
        ))
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let data = mm(self.value(a).data(), self.value(b).data(), m, k, n);
        self.add_macs((m * k * n) as u64);
        let value = Tensor::new(&[m, n], data)?;
        Ok(self.record(
            OpKind::MatMul,
            &[a, b],
            value,
            Box::new(move |a| {
                let (x, y) = (a.inputs[0].data(), a.inputs[1].data());
                let ga = a.needs[0].then(|| mm_nt(a.grad, y, m, n, k));
                let gb = a.needs[1].then(|| mm_tn(x, a.grad, m, k, n));
                vec![ga, gb]
            }),
        ))
    }

    /// `a[m×k] · b[n×k]ᵀ`; the shape of a linear layer with weight `b`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul_nt")?;
        let (n, k2) = self.value(b).dims2("matmul_nt")?;
        if k != k2 {
            return Err(Error::mismatch("matmul_nt", self.shape(a), self.shape(b)));
        }
        let data = mm_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        self.add_macs((m * k * n) as u64);
        let value = Tensor::new(&[m, n], data)?;
        Ok(self.record(
            OpKind::MatMulNt,
            &[a, b],
            value,
            Box::new(move |a| {
                let (x, w) = (a.inputs[0].data(), a.inputs[1].data());
                let ga = a.needs[0].then(|| mm(a.grad, w, m, n, k));
                let gb = a.needs[1].then(|| mm_tn(a.grad, x, m, n, k));
                vec![ga, gb]
            }),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose2()?;
        let (r, c) = self.value(a).dims2("transpose")?;
        Ok(self.record(
            OpKind::Transpose,
            &[a],
            value,
            Box::new(move |a| {
                let mut g = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        g[i * c + j] = a.grad[j * r + i];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.record(OpKind::Reshape, &[a], value, Box::new(|a| vec![Some(a.grad.to_vec())])))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let n = self.value(a).numel();
        self.record(
            OpKind::Sum,
            &[a],
            Tensor::scalar(s),
            Box::new(move |a| vec![Some(vec![a.grad[0]; n])]),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.value(a).data().iter().sum::<f64>() / n as f64;
        self.record(
            OpKind::Mean,
            &[a],
            Tensor::scalar(s),
            Box::new(move |a| vec![Some(vec![a.grad[0] / n as f64; n])]),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        unary(self, OpKind::Sigmoid, x, sigmoid, |_, y| y * (1.0 - y))
    }

    /// `x · sigmoid(x)`
    pub fn swish(&mut self, x: Var) -> Var {
        unary(self, OpKind::Swish, x, swish, |x, _| {
            let s = sigmoid(x);
            s + x * s * (1.0 - s)
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        unary(self, OpKind::Relu, x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Gated linear unit over the last axis: `a ⊙ sigmoid(b)` for halves `[a | b]`.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let c2 = t.last_dim();
        if c2 % 2 != 0 {
            return Err(Error::invalid("glu", format!("last dimension {c2} is odd")));
        }
        let c = c2 / 2;
        let data = t
            .data()
            .chunks(c2)
            .flat_map(|row| (0..c).map(move |j| row[j] * sigmoid(row[c + j])))
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().expect("glu: non-scalar") = c;
        let value = Tensor::new(&shape, data)?;
        Ok(self.record(
            OpKind::Glu,
            &[x],
            value,
            Box::new(move |a| {
                let mut gx = vec![0.0; a.inputs[0].numel()];
                for (row, (grow, gxrow)) in a.inputs[0]
                    .data()
                    .chunks(c2)
                    .zip(a.grad.chunks(c).zip(gx.chunks_mut(c2)))
                {
                    for j in 0..c {
                        let s = sigmoid(row[c + j]);
                        gxrow[j] = grow[j] * s;
                        gxrow[c + j] = grow[j] * row[j] * s * (1.0 - s);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Softmax over the last axis (max-subtracted).
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.last_dim();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let value = Tensor::new(t.shape(), data).expect("softmax: same shape");
        self.record(
            OpKind::Softmax,
            &[x],
            value,
            Box::new(move |a| {
                let mut gx = vec![0.0; a.out.numel()];
                for ((y, g), o) in a.out.data().chunks(c).zip(a.grad.chunks(c)).zip(gx.chunks_mut(c)) {
                    let dot: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        o[j] = y[j] * (g[j] - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.last_dim();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = Tensor::new(t.shape(), data).expect("log_softmax: same shape");
        self.record(
            OpKind::LogSoftmax,
            &[x],
            value,
            Box::new(move |a| {
                let mut gx = vec![0.0; a.out.numel()];
                for ((y, g), o) in a.out.data().chunks(c).zip(a.grad.chunks(c)).zip(gx.chunks_mut(c)) {
                    let gsum: f64 = g.iter().sum();
                    for j in 0..c {
                        o[j] = g[j] - y[j].exp() * gsum;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Rows `start..start+len` of a 2-D tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2("slice_rows")?;
        if len == 0 || start + len > r {
            return Err(Error::invalid("slice_rows", format!("rows {start}..{} of {r}", start + len)));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::new(&[len, c], data)?;
        Ok(self.record(
            OpKind::SliceRows,
            &[a],
            value,
            Box::new(move |a| {
                let mut g = vec![0.0; r * c];
                g[start * c..(start + len) * c].copy_from_slice(a.grad);
                vec![Some(g)]
            }),
        ))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2("slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::invalid("slice_cols", format!("cols {start}..{} of {c}", start + len)));
        }
        let data = self
            .value(a)
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let value = Tensor::new(&[r, len], data)?;
        Ok(self.record(
            OpKind::SliceCols,
            &[a],
            value,
            Box::new(move |a| {
                let mut g = vec![0.0; r * c];
                for (grow, src) in g.chunks_mut(c).zip(a.grad.chunks(len)) {
                    grow[start..start + len].copy_from_slice(src);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Concatenate 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_cols", "no inputs"))?;
        let (r, _) = self.value(first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2("concat_cols")?;
            if pr != r {
                return Err(Error::mismatch("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(&[r, total], data)?;
        Ok(self.record(
            OpKind::ConcatCols,
            parts,
            value,
            Box::new(move |a| {
                let mut out: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(r * w)).collect();
                for grow in a.grad.chunks(total) {
                    let mut off = 0;
                    for (o, &w) in out.iter_mut().zip(&widths) {
                        o.extend_from_slice(&grow[off..off + w]);
                        off += w;
                    }
                }
                out.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Repeat every row `factor` times (nearest-neighbour upsampling in time).
    pub fn repeat_rows(&mut self, a: Var, factor: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2("repeat_rows")?;
        if factor == 0 {
            return Err(Error::invalid("repeat_rows", "factor must be positive"));
        }
        let data = self
            .value(a)
            .data()
            .chunks(c)
            .flat_map(|row| std::iter::repeat_n(row, factor).flatten().copied())
            .collect();
        let value = Tensor::new(&[r * factor, c], data)?;
        Ok(self.record(
            OpKind::RepeatRows,
            &[a],
            value,
            Box::new(move |a| {
                let mut g = vec![0.0; r * c];
                for (i, grow) in a.grad.chunks(c).enumerate() {
                    let dst = &mut g[(i / factor) * c..(i / factor + 1) * c];
                    dst.iter_mut().zip(grow).for_each(|(d, s)| *d += s);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Gather rows of `table[V×C]` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, c) = self.value(table).dims2("embedding")?;
        if ids.is_empty() {
            return Err(Error::invalid("embedding", "empty id list"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::invalid("embedding", format!("id {bad} out of range {v}")));
        }
        let data = ids.iter().flat_map(|&i| self.value(table).row(i).iter().copied()).collect();
        let value = Tensor::new(&[ids.len(), c], data)?;
        let ids = ids.to_vec();
        Ok(self.record(
            OpKind::Embedding,
            &[table],
            value,
            Box::new(move |a| {
                let mut g = vec![0.0; v * c];
                for (&i, grow) in ids.iter().zip(a.grad.chunks(c)) {
                    g[i * c..(i + 1) * c].iter_mut().zip(grow).for_each(|(d, s)| *d += s);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Inverted dropout: kept values are scaled by `1/(1-rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout", format!("rate {rate} not in [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape(), data)?;
        Ok(self.record(
            OpKind::Dropout,
            &[x],
            value,
            Box::new(move |a| vec![Some(a.grad.iter().zip(&mask).map(|(g, m)| g * m).collect())]),
        ))
    }

    /// Relative-position attention scores for one head:
    /// `out[i][j] = qv[i] · rel[i - j + T - 1]`, where `rel` holds one row per
    /// relative distance from `-(T-1)` to `T-1`.
    pub fn rel_pos_scores(&mut self, qv: Var, rel: Var) -> Result<Var> {
        let (t, d) = self.value(qv).dims2("rel_pos_scores")?;
        let (r, d2) = self.value(rel).dims2("rel_pos_scores")?;
        if d != d2 || r != 2 * t - 1 {
            return Err(Error::mismatch("rel_pos_scores", self.shape(qv), self.shape(rel)));
        }
        let (q, p) = (self.value(qv).data(), self.value(rel).data());
        let mut out = vec![0.0; t * t];
        for i in 0..t {
            let qi = &q[i * d..(i + 1) * d];
            for j in 0..t {
                let k = i + t - 1 - j;
                out[i * t + j] = qi.iter().zip(&p[k * d..(k + 1) * d]).map(|(a, b)| a * b).sum();
            }
        }
        self.add_macs((t * t * d) as u64);
        let value = Tensor::new(&[t, t], out)?;
        Ok(self.record(
            OpKind::RelPosScores,
            &[qv, rel],
            value,
            Box::new(move |a| {
                let (q, p) = (a.inputs[0].data(), a.inputs[1].data());
                let mut gq = vec![0.0; t * d];
                let mut gp = vec![0.0; r * d];
                for i in 0..t {
                    for j in 0..t {
                        let g = a.grad[i * t + j];
                        if g == 0.0 {
                            continue;
                        }
                        let k = i + t - 1 - j;
                        for c in 0..d {
                            gq[i * d + c] += g * p[k * d + c];
                            gp[k * d + c] += g * q[i * d + c];
                        }
                    }
                }
                vec![a.needs[0].then_some(gq), a.needs[1].then_some(gp)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_projector() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(2));
        let m = g.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let y = g.matmul(i, m).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let p = g.constant(t2(&[&[1.0, 0.0], &[0.0, 0.0]]));
        let n = g.constant(t2(&[&[5.0, 6.0], &[7.0, 8.0]]));
        let y = g.matmul(p, n).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let mut expected = [[0.0; 2]; 3];
        for (i, row) in expected.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                for p in 0..4 {
                    *e += a.at2(i, p) * b.at2(p, j);
                }
            }
        }
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a), g.constant(b));
        let y = g.matmul(va, vb).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert!((g.value(y).at2(i, j) - expected[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn swish_values() {
        assert_eq!(swish(0.0), 0.0);
        assert!((swish(1.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        let s = swish(-20.0);
        assert!((s - (-20.0 / (1.0 + 20f64.exp()))).abs() < 1e-20);
        assert!((s + 4.122_307e-8).abs() < 1e-13);
    }

    #[test]
    fn glu_values_and_errors() {
        let mut g = Graph::new();
        let x = g.constant(t2(&[&[3.0, 0.0]]));
        let y = g.glu(x).unwrap();
        assert_eq!(g.value(y).data(), &[1.5]);

        let x = g.constant(t2(&[&[0.7, 50.0], &[0.7, -50.0]]));
        let y = g.glu(x).unwrap();
        assert!((g.value(y).data()[0] - 0.7).abs() < 1e-12);
        assert!(g.value(y).data()[1].abs() < 1e-12);

        let odd = g.constant(Tensor::zeros(&[1, 3]));
        assert!(g.glu(odd).is_err());
    }

    #[test]
    fn linear_map_gradient_is_input() {
        let mut g = Graph::new();
        let x = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let w = g.leaf(Tensor::new(&[3], vec![0.3, 0.1, 0.9]).unwrap().with_requires_grad());
        let xv = g.constant(x.clone());
        let p = g.mul(w, xv).unwrap();
        let loss = g.sum(p);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), x.data());
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::ones(&[2]).with_requires_grad());
        let unused = g.leaf(Tensor::ones(&[4]).with_requires_grad());
        let loss = g.sum(w);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(unused), vec![0.0; 4]);
    }

    #[test]
    fn dropout_rate_zero_is_identity_and_masks_are_seeded() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[4, 8]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(g.dropout(x, 0.0, &mut rng).unwrap(), x);

        let a = g.dropout(x, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = g.dropout(x, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(g.value(a), g.value(b));
        assert!(g.value(a).data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(g.dropout(x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn repeat_then_slice_rows() {
        let mut g = Graph::new();
        let x = g.constant(t2(&[&[1.0], &[2.0], &[3.0]]));
        let r = g.repeat_rows(x, 2).unwrap();
        let s = g.slice_rows(r, 0, 5).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 1.0, 2.0, 2.0, 3.0]);
    }
}
