use rand::Rng;

use super::{Forward, Linear, ParamStore};
use crate::error::Result;
use crate::tensor::Var;

/// Residual body `Drop(W₂·Drop(Swish(W₁·x)))`. The residual itself, its
/// weight and the surrounding normalization live in [`super::Residual`].
#[derive(Clone, Debug)]
pub struct FeedForwardModule {
    pub lin1: Linear,
    pub lin2: Linear,
    pub dropout: f64,
}

impl FeedForwardModule {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, expansion: usize, dropout: f64, rng: &mut R) -> Self {
        Self {
            lin1: Linear::new(store, &format!("{name}.linear1"), dim, dim * expansion, true, rng),
            lin2: Linear::new(store, &format!("{name}.linear2"), dim * expansion, dim, true, rng),
            dropout,
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let h = self.lin1.forward(f, x)?;
        let h = f.graph.swish(h);
        let h = f.dropout(h, self.dropout)?;
        let y = self.lin2.forward(f, h)?;
        f.dropout(y, self.dropout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::check_module;
    use crate::nn::{NormScheme, Residual};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_pass_the_residual_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let ffn = FeedForwardModule::new(&mut store, "ffn", 6, 4, 0.0, &mut rng);
        let res = Residual::new(&mut store, "ffn", NormScheme::PrePost, 6, 1.0);
        store.get_mut(ffn.lin1.w).data_mut().fill(0.0);
        store.get_mut(ffn.lin2.w).data_mut().fill(0.0);
        let x = Tensor::randn(&[5, 6], 1.0, &mut rng);
        let mut f = Forward::new(&store, false, 0);
        let xv = f.input(x.clone());
        let y = res.forward(&mut f, xv, |f, h| ffn.forward(f, h)).unwrap();
        assert_eq!(f.value(y).data(), x.data());
    }

    #[test]
    fn half_step_differs_by_half_the_body() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let ffn = FeedForwardModule::new(&mut store, "ffn", 4, 2, 0.0, &mut rng);
        let half = Residual::new(&mut store, "a", NormScheme::PrePost, 4, 0.5);
        let mut full = half.clone();
        full.weight = 1.0;
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let mut f = Forward::new(&store, false, 0);
        let xv = f.input(x.clone());
        let a = half.forward(&mut f, xv, |f, h| ffn.forward(f, h)).unwrap();
        let b = full.forward(&mut f, xv, |f, h| ffn.forward(f, h)).unwrap();
        let normed = half.pre.as_ref().unwrap().forward(&mut f, xv).unwrap();
        let body = ffn.forward(&mut f, normed).unwrap();
        let (a, b, body) = (f.value(a), f.value(b), f.value(body));
        for i in 0..a.numel() {
            assert!((b.data()[i] - a.data()[i] - 0.5 * body.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let ffn = FeedForwardModule::new(&mut store, "ffn", 4, 2, 0.0, &mut rng);
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        check_module(&store, &x, true, None, |f, x| ffn.forward(f, x));
    }

    #[test]
    fn shape_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let ffn = FeedForwardModule::new(&mut store, "ffn", 8, 4, 0.1, &mut rng);
        for t in [1, 2, 5, 31, 100] {
            let mut f = Forward::new(&store, true, 7);
            let x = f.input(Tensor::randn(&[t, 8], 1.0, &mut rng));
            let y = ffn.forward(&mut f, x).unwrap();
            assert_eq!(f.value(y).shape(), [t, 8]);
        }
    }
}
