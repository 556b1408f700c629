use serde::{Deserialize, Serialize};

use super::{Forward, LayerNorm, ParamStore, ScalingLayer};
use crate::error::Result;
use crate::tensor::Var;

/// Where a module's normalization sits relative to its residual connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormScheme {
    /// `x + r·body(LN(x))`; the block adds one more LayerNorm at its end.
    PrePost,
    /// `LN(x + r·body(γ ⊙ x + β))`.
    ScaledPost,
    /// `LN(x + r·body(x))`.
    PostOnly,
}

/// Residual wrapper around one module body.
#[derive(Clone, Debug)]
pub struct Residual {
    pub scheme: NormScheme,
    pub pre: Option<LayerNorm>,
    pub scaling: Option<ScalingLayer>,
    pub post: Option<LayerNorm>,
    /// Residual weight `r`: 0.5 for half-step feed-forward modules.
    pub weight: f64,
}

impl Residual {
    pub fn new(store: &mut ParamStore, name: &str, scheme: NormScheme, dim: usize, weight: f64) -> Self {
        let pre = (scheme == NormScheme::PrePost).then(|| LayerNorm::new(store, &format!("{name}.pre_norm"), dim));
        let scaling = (scheme == NormScheme::ScaledPost).then(|| ScalingLayer::new(store, &format!("{name}.scaling"), dim));
        let post = (scheme != NormScheme::PrePost).then(|| LayerNorm::new(store, &format!("{name}.post_norm"), dim));
        Self {
            scheme,
            pre,
            scaling,
            post,
            weight,
        }
    }

    pub fn forward<F>(&self, f: &mut Forward<'_>, x: Var, body: F) -> Result<Var>
    where
        F: FnOnce(&mut Forward<'_>, Var) -> Result<Var>,
    {
        let h = match (&self.pre, &self.scaling) {
            (Some(ln), _) => ln.forward(f, x)?,
            (None, Some(s)) => s.forward(f, x)?,
            (None, None) => x,
        };
        let mut b = body(f, h)?;
        if self.weight != 1.0 {
            b = f.graph.scale(b, self.weight);
        }
        let y = f.graph.add(x, b)?;
        match &self.post {
            Some(ln) => ln.forward(f, y),
            None => Ok(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::check_module;
    use crate::nn::FeedForwardModule;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ffn_pair(scheme: NormScheme) -> (ParamStore, FeedForwardModule, Residual) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let ffn = FeedForwardModule::new(&mut store, "ffn", 4, 2, 0.0, &mut rng);
        let res = Residual::new(&mut store, "ffn", scheme, 4, 1.0);
        (store, ffn, res)
    }

    #[test]
    fn zero_body_gives_layer_norm_of_input() {
        let (store, _, res) = ffn_pair(NormScheme::ScaledPost);
        let x = Tensor::randn(&[3, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        let mut f = Forward::new(&store, false, 0);
        let xv = f.input(x);
        let y = res
            .forward(&mut f, xv, |f, h| {
                let z = f.graph.scale(h, 0.0);
                Ok(z)
            })
            .unwrap();
        let expect = res.post.as_ref().unwrap().forward(&mut f, xv).unwrap();
        assert_eq!(f.value(y), f.value(expect));
    }

    #[test]
    fn closed_gate_hides_the_input() {
        let (mut store, ffn, res) = ffn_pair(NormScheme::ScaledPost);
        let s = res.scaling.clone().unwrap();
        store.get_mut(s.gamma).data_mut().fill(0.0);
        store.get_mut(s.beta).data_mut().copy_from_slice(&[0.3, -0.2, 0.1, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bodies: Vec<Tensor> = (0..2)
            .map(|_| {
                let mut f = Forward::new(&store, false, 0);
                let xv = f.input(Tensor::randn(&[3, 4], 1.0, &mut rng));
                let h = s.forward(&mut f, xv).unwrap();
                let b = ffn.forward(&mut f, h).unwrap();
                f.value(b).clone()
            })
            .collect();
        assert_eq!(bodies[0], bodies[1]);
    }

    #[test]
    fn identity_scaling_matches_post_only() {
        let (store, ffn, scaled) = ffn_pair(NormScheme::ScaledPost);
        let post_only = Residual {
            scheme: NormScheme::PostOnly,
            pre: None,
            scaling: None,
            post: scaled.post.clone(),
            weight: 1.0,
        };
        let x = Tensor::randn(&[5, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(7));
        let mut f = Forward::new(&store, false, 0);
        let xv = f.input(x);
        let a = scaled.forward(&mut f, xv, |f, h| ffn.forward(f, h)).unwrap();
        let b = post_only.forward(&mut f, xv, |f, h| ffn.forward(f, h)).unwrap();
        assert_eq!(f.value(a).data(), f.value(b).data());
    }

    #[test]
    fn pre_post_and_scaled_post_differ_and_both_check() {
        let x = Tensor::randn(&[3, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(8));
        let mut outs = Vec::new();
        for scheme in [NormScheme::PrePost, NormScheme::ScaledPost] {
            let (mut store, ffn, res) = ffn_pair(scheme);
            if let Some(s) = &res.scaling {
                let mut rng = ChaCha8Rng::seed_from_u64(9);
                *store.get_mut(s.gamma) = Tensor::randn(&[4], 1.0, &mut rng);
                *store.get_mut(s.beta) = Tensor::randn(&[4], 1.0, &mut rng);
            }
            check_module(&store, &x, true, None, |f, x| res.forward(f, x, |f, h| ffn.forward(f, h)));
            let mut f = Forward::new(&store, false, 0);
            let xv = f.input(x.clone());
            let y = res.forward(&mut f, xv, |f, h| ffn.forward(f, h)).unwrap();
            outs.push(f.value(y).clone());
        }
        assert!(outs[0].max_abs_diff(&outs[1]) > 1e-3);
    }
}
