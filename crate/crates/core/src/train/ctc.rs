//! Connectionist temporal classification loss.

use crate::error::{Error, Result};
use crate::tensor::{Graph, OpKind, Tensor, Var};

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Fewest frames that can emit `target`: one per label plus a blank
/// between every pair of equal neighbours.
pub fn min_ctc_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

struct Lattice {
    /// Target interleaved with blanks: `[b, l1, b, l2, ..., b]`.
    ext: Vec<usize>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_p: f64,
}

fn lattice(lp: &Tensor, target: &[usize]) -> Result<Lattice> {
    let (t, k) = lp.dims2("ctc_loss")?;
    let blank = k - 1;
    if let Some(&bad) = target.iter().find(|&&l| l >= blank) {
        return Err(Error::invalid("ctc_loss", format!("label {bad} is out of range for {blank} symbols")));
    }
    let required = min_ctc_frames(target);
    if t < required || t == 0 {
        return Err(Error::InfeasibleAlignment {
            target_len: target.len(),
            required: required.max(1),
            frames: t,
        });
    }
    let mut ext = vec![blank; 2 * target.len() + 1];
    for (i, &l) in target.iter().enumerate() {
        ext[2 * i + 1] = l;
    }
    let s = ext.len();
    let at = |ti: usize, c: usize| lp.data()[ti * k + c];
    let skip_ok = |i: usize| i >= 2 && ext[i] != blank && ext[i] != ext[i - 2];
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![neg; t * s];
    alpha[0] = at(0, ext[0]);
    if s > 1 {
        alpha[1] = at(0, ext[1]);
    }
    for ti in 1..t {
        for i in 0..s {
            let mut a = alpha[(ti - 1) * s + i];
            if i >= 1 {
                a = log_add(a, alpha[(ti - 1) * s + i - 1]);
            }
            if skip_ok(i) {
                a = log_add(a, alpha[(ti - 1) * s + i - 2]);
            }
            alpha[ti * s + i] = a + at(ti, ext[i]);
        }
    }

    let mut beta = vec![neg; t * s];
    beta[(t - 1) * s + s - 1] = at(t - 1, ext[s - 1]);
    if s > 1 {
        beta[(t - 1) * s + s - 2] = at(t - 1, ext[s - 2]);
    }
    for ti in (0..t - 1).rev() {
        for i in 0..s {
            let mut b = beta[(ti + 1) * s + i];
            if i + 1 < s {
                b = log_add(b, beta[(ti + 1) * s + i + 1]);
            }
            if i + 2 < s && ext[i + 2] != blank && ext[i + 2] != ext[i] {
                b = log_add(b, beta[(ti + 1) * s + i + 2]);
            }
            beta[ti * s + i] = b + at(ti, ext[i]);
        }
    }

    let last = (t - 1) * s;
    let log_p = if s > 1 {
        log_add(alpha[last + s - 1], alpha[last + s - 2])
    } else {
        alpha[last]
    };
    Ok(Lattice { ext, alpha, beta, log_p })
}

impl Graph {
    /// `-ln p(target | log_probs)` summed over every alignment, from per-frame
    /// log-probabilities `[T × (V+1)]` whose last column is the blank.
    ///
    /// Non-finite inputs give a non-finite loss rather than an error, so
    /// callers can report where training diverged.
    ///
    /// The gradient treats each entry as a free log-potential: it is minus
    /// the posterior occupancy of that frame and symbol.
    pub fn ctc_loss(&mut self, log_probs: Var, target: &[usize]) -> Result<Var> {
        let lp = self.value(log_probs);
        let (t, k) = lp.dims2("ctc_loss")?;
        let lat = lattice(lp, target)?;
        let lp_data = lp.data().to_vec();
        let value = Tensor::scalar(-lat.log_p);
        Ok(self.record(
            OpKind::CtcLoss,
            &[log_probs],
            value,
            Box::new(move |a| {
                let s = lat.ext.len();
                let mut g = vec![0.0; t * k];
                for ti in 0..t {
                    for i in 0..s {
                        let c = lat.ext[i];
                        let ab = lat.alpha[ti * s + i] + lat.beta[ti * s + i];
                        if ab > f64::NEG_INFINITY {
                            g[ti * k + c] -= (ab - lp_data[ti * k + c] - lat.log_p).exp();
                        }
                    }
                }
                let up = a.grad[0];
                g.iter_mut().for_each(|v| *v *= up);
                vec![Some(g)]
            }),
        ))
    }
}

/// Loss value without building a graph.
pub fn ctc_loss_value(log_probs: &Tensor, target: &[usize]) -> Result<f64> {
    Ok(-lattice(log_probs, target)?.log_p)
}
