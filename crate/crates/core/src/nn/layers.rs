use rand::Rng;

use super::{Forward, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// `y = x·Wᵀ + b` with `W[out × in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let w = store.add_weight(format!("{name}.weight"), &[d_out, d_in], d_in, rng);
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[d_out])));
        Self { w, b, d_in, d_out }
    }

    pub fn num_params(&self) -> usize {
        self.d_in * self.d_out + if self.b.is_some() { self.d_out } else { 0 }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let w = f.param(self.w);
        let y = f.graph.matmul_nt(x, w)?;
        match self.b {
            Some(b) => {
                let b = f.param(b);
                f.graph.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (g, b) = (f.param(self.gamma), f.param(self.beta));
        f.graph.layer_norm(x, g, b, LN_EPS)
    }
}

/// Learnable per-channel affine map `γ ⊙ x + β`, starting at the identity.
#[derive(Clone, Debug)]
pub struct ScalingLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl ScalingLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (g, b) = (f.param(self.gamma), f.param(self.beta));
        let y = f.graph.mul_row(x, g)?;
        f.graph.add_row(y, b)
    }
}

/// Fold a scaling layer into the linear layer that consumes its output:
/// `W' = W·diag(γ)`, `b' = W·β + b`.
pub fn merge_scaling(gamma: &[f64], beta: &[f64], w: &Tensor, b: Option<&[f64]>) -> Result<(Tensor, Vec<f64>)> {
    let (d_out, d_in) = w.dims2("merge_scaling")?;
    if gamma.len() != d_in || beta.len() != d_in {
        return Err(Error::mismatch("merge_scaling", w.shape(), &[gamma.len()]));
    }
    if let Some(b) = b {
        if b.len() != d_out {
            return Err(Error::mismatch("merge_scaling", w.shape(), &[b.len()]));
        }
    }
    let mut merged = w.clone();
    for row in merged.data_mut().chunks_mut(d_in) {
        row.iter_mut().zip(gamma).for_each(|(v, g)| *v *= g);
    }
    let bias = (0..d_out)
        .map(|o| {
            let wb: f64 = w.row(o).iter().zip(beta).map(|(x, y)| x * y).sum();
            wb + b.map_or(0.0, |b| b[o])
        })
        .collect();
    Ok((merged, bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_ref(x: &Tensor, w: &Tensor, b: &[f64]) -> Tensor {
        let mut g = Graph::new();
        let (x, w, b) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(Tensor::new(&[b.len()], b.to_vec()).unwrap()));
        let y = g.matmul_nt(x, w).unwrap();
        let y = g.add_row(y, b).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn identity_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let b = vec![0.1, 0.2, 0.3];
        let (w2, b2) = merge_scaling(&[1.0; 4], &[0.0; 4], &w, Some(&b)).unwrap();
        assert_eq!(w2, w);
        assert_eq!(b2, b);
    }

    #[test]
    fn doubling_merge() {
        let (w2, b2) = merge_scaling(&[2.0; 3], &[0.0; 3], &Tensor::eye(3), None).unwrap();
        assert_eq!(w2.data(), Tensor::eye(3).data().iter().map(|v| v * 2.0).collect::<Vec<_>>());
        assert_eq!(b2, [0.0; 3]);
    }

    #[test]
    fn merge_rejects_mismatch() {
        assert!(merge_scaling(&[1.0; 3], &[0.0; 3], &Tensor::eye(4), None).is_err());
    }

    #[test]
    fn merged_forward_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gamma = Tensor::randn(&[5], 1.0, &mut rng);
        let beta = Tensor::randn(&[5], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let b = Tensor::randn(&[3], 1.0, &mut rng);
        let x = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let scaled: Vec<f64> = x
            .data()
            .chunks(5)
            .flat_map(|r| (0..5).map(|j| r[j] * gamma.data()[j] + beta.data()[j]).collect::<Vec<_>>())
            .collect();
        let scaled = Tensor::new(&[4, 5], scaled).unwrap();
        let (w2, b2) = merge_scaling(gamma.data(), beta.data(), &w, Some(b.data())).unwrap();
        let a = linear_ref(&scaled, &w, b.data());
        let m = linear_ref(&x, &w2, &b2);
        assert!(a.max_abs_diff(&m) < 1e-12);
    }
}
