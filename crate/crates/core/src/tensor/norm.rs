use super::graph::{Graph, OpKind, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Per-channel statistics produced by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
}

/// Input gradient of a normalization over `n` samples addressed through `idx`,
/// given the gradient w.r.t. the normalized values and the inverse std.
fn norm_input_grad(dxhat: &[f64], xhat: &[f64], inv: f64, idx: impl Fn(usize) -> usize, n: usize, out: &mut [f64]) {
    let nf = n as f64;
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in 0..n {
        m1 += dxhat[idx(i)];
        m2 += dxhat[idx(i)] * xhat[idx(i)];
    }
    m1 /= nf;
    m2 /= nf;
    for i in 0..n {
        let p = idx(i);
        out[p] = inv * (dxhat[p] - m1 - xhat[p] * m2);
    }
}

impl Graph {
    fn affine_params(&self, op: &'static str, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let c = self.value(x).last_dim();
        if self.shape(gamma) != [c] {
            return Err(Error::mismatch(op, self.shape(x), self.shape(gamma)));
        }
        if self.shape(beta) != [c] {
            return Err(Error::mismatch(op, self.shape(x), self.shape(beta)));
        }
        Ok(c)
    }

    /// Normalize every row over the last axis, then apply `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::invalid("layer_norm", format!("eps must be positive, got {eps}")));
        }
        let c = self.affine_params("layer_norm", x, gamma, beta)?;
        let (xt, gt, bt) = (self.value(x), self.value(gamma).data(), self.value(beta).data());
        let mut xhat = xt.data().to_vec();
        let mut inv = Vec::with_capacity(xhat.len() / c);
        for row in xhat.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * s);
            inv.push(s);
        }
        let data = xhat
            .chunks(c)
            .flat_map(|row| row.iter().zip(gt).zip(bt).map(|((h, g), b)| h * g + b))
            .collect();
        let value = Tensor::new(xt.shape(), data)?;
        Ok(self.record(
            OpKind::LayerNorm,
            &[x, gamma, beta],
            value,
            Box::new(move |a| {
                let gamma = a.inputs[1].data();
                let gx = a.needs[0].then(|| {
                    let dxhat: Vec<f64> = a.grad.chunks(c).flat_map(|r| r.iter().zip(gamma).map(|(g, w)| g * w)).collect();
                    let mut gx = vec![0.0; dxhat.len()];
                    for (r, &s) in inv.iter().enumerate() {
                        let span = r * c..(r + 1) * c;
                        norm_input_grad(&dxhat[span.clone()], &xhat[span.clone()], s, |i| i, c, &mut gx[span]);
                    }
                    gx
                });
                let (mut gg, mut gb) = (vec![0.0; c], vec![0.0; c]);
                for (grow, hrow) in a.grad.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        gg[j] += grow[j] * hrow[j];
                        gb[j] += grow[j];
                    }
                }
                vec![gx, Some(gg), Some(gb)]
            }),
        ))
    }

    /// Training-mode batch norm on `x[T × C]`: statistics over the time axis,
    /// one pair per channel. Returns the output and the statistics used.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (t, c) = self.value(x).dims2("batch_norm")?;
        self.affine_params("batch_norm", x, gamma, beta)?;
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::invalid("batch_norm", format!("eps must be positive, got {eps}")));
        }
        let xd = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for row in xd.chunks(c) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / t as f64);
        }
        for row in xd.chunks(c) {
            for j in 0..c {
                var[j] += (row[j] - mean[j]).powi(2) / t as f64;
            }
        }
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xhat: Vec<f64> = xd
            .chunks(c)
            .flat_map(|row| (0..c).map(|j| (row[j] - mean[j]) * inv[j]).collect::<Vec<_>>())
            .collect();
        let (gt, bt) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat.chunks(c).flat_map(|r| (0..c).map(|j| r[j] * gt[j] + bt[j]).collect::<Vec<_>>()).collect();
        let value = Tensor::new(&[t, c], data)?;
        let y = self.record(
            OpKind::BatchNorm,
            &[x, gamma, beta],
            value,
            Box::new(move |a| {
                let gamma = a.inputs[1].data();
                let gx = a.needs[0].then(|| {
                    let dxhat: Vec<f64> = a.grad.chunks(c).flat_map(|r| r.iter().zip(gamma).map(|(g, w)| g * w)).collect();
                    let mut gx = vec![0.0; t * c];
                    for j in 0..c {
                        norm_input_grad(&dxhat, &xhat, inv[j], |i| i * c + j, t, &mut gx);
                    }
                    gx
                });
                let (mut gg, mut gb) = (vec![0.0; c], vec![0.0; c]);
                for (grow, hrow) in a.grad.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        gg[j] += grow[j] * hrow[j];
                        gb[j] += grow[j];
                    }
                }
                vec![gx, Some(gg), Some(gb)]
            }),
        );
        Ok((y, BatchStats { mean, var }))
    }

    /// Eval-mode batch norm with fixed running statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, stats: &BatchStats, eps: f64) -> Result<Var> {
        let c = self.affine_params("batch_norm", x, gamma, beta)?;
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::mismatch("batch_norm", self.shape(x), &[stats.mean.len()]));
        }
        let inv: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mean = stats.mean.clone();
        let xhat: Vec<f64> = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| (0..c).map(|j| (row[j] - mean[j]) * inv[j]).collect::<Vec<_>>())
            .collect();
        let (gt, bt) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat.chunks(c).flat_map(|r| (0..c).map(|j| r[j] * gt[j] + bt[j]).collect::<Vec<_>>()).collect();
        let value = Tensor::new(self.shape(x), data)?;
        Ok(self.record(
            OpKind::BatchNorm,
            &[x, gamma, beta],
            value,
            Box::new(move |a| {
                let gamma = a.inputs[1].data();
                let gx = a.grad.chunks(c).flat_map(|r| (0..c).map(|j| r[j] * gamma[j] * inv[j]).collect::<Vec<_>>()).collect();
                let (mut gg, mut gb) = (vec![0.0; c], vec![0.0; c]);
                for (grow, hrow) in a.grad.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        gg[j] += grow[j] * hrow[j];
                        gb[j] += grow[j];
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(x: &[f64], gamma: f64, beta: f64, eps: f64) -> Vec<f64> {
        let c = x.len();
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(&[1, c], x.to_vec()).unwrap());
        let gv = g.constant(Tensor::full(&[c], gamma));
        let bv = g.constant(Tensor::full(&[c], beta));
        let y = g.layer_norm(xv, gv, bv, eps).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn layer_norm_examples() {
        let y = ln(&[1.0, 2.0, 3.0], 1.0, 0.0, 1e-14);
        let r = 1.5f64.sqrt();
        assert!((y[0] + r).abs() < 1e-9 && y[1].abs() < 1e-12 && (y[2] - r).abs() < 1e-9);
        assert_eq!(ln(&[5.0; 3], 1.0, 0.0, 1e-5), [0.0; 3]);
        assert_eq!(ln(&[1.0, -4.0, 9.0], 0.0, 0.25, 1e-5), [0.25; 3]);
    }

    #[test]
    fn layer_norm_rejects_bad_arguments() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[2, 3]));
        let ok = g.constant(Tensor::ones(&[3]));
        let bad = g.constant(Tensor::ones(&[4]));
        assert!(g.layer_norm(x, bad, ok, 1e-5).is_err());
        assert!(g.layer_norm(x, ok, ok, 0.0).is_err());
    }

    #[test]
    fn batch_norm_train_stats_and_eval_agree() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 10.0], vec![3.0, 10.0]]).unwrap());
        let gamma = g.constant(Tensor::ones(&[2]));
        let beta = g.constant(Tensor::zeros(&[2]));
        let (y, stats) = g.batch_norm_train(x, gamma, beta, 1e-5).unwrap();
        assert_eq!(stats.mean, [2.0, 10.0]);
        assert_eq!(stats.var, [1.0, 0.0]);
        let z = g.batch_norm_eval(x, gamma, beta, &stats, 1e-5).unwrap();
        assert!(g.value(y).max_abs_diff(g.value(z)) < 1e-15);
        assert!((g.value(y).data()[0] + 1.0).abs() < 1e-5);
    }
}
