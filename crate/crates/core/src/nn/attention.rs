use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Forward, Linear, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionalEncoding {
    /// Learned projection of sinusoidal relative distances with per-channel
    /// content and position biases.
    Relative,
    /// Sinusoidal absolute positions added to the module input.
    Absolute,
}

/// Sinusoidal embedding of arbitrary (possibly negative) positions.
pub fn sinusoid_table(positions: &[f64], dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        for j in 0..dim {
            let freq = 10000f64.powf(-((j / 2 * 2) as f64) / dim as f64);
            data.push(if j % 2 == 0 { (p * freq).sin() } else { (p * freq).cos() });
        }
    }
    Tensor::new(&[positions.len(), dim], data).expect("sinusoid_table: positions must be non-empty")
}

/// `2T − 1` rows; row `r` embeds the distance `i − j = r − (T − 1)`.
pub fn relative_position_table(t: usize, dim: usize) -> Tensor {
    let positions: Vec<f64> = (0..2 * t - 1).map(|r| r as f64 - (t as f64 - 1.0)).collect();
    sinusoid_table(&positions, dim)
}

#[derive(Clone, Debug)]
pub struct RelativeBias {
    pub linear_pos: Linear,
    pub pos_bias_u: ParamId,
    pub pos_bias_v: ParamId,
}

#[derive(Clone, Debug)]
pub struct MhaModule {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub rel: Option<RelativeBias>,
    pub heads: usize,
    pub dim: usize,
    pub dropout: f64,
    pub attention_dropout: f64,
}

impl MhaModule {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        pos: PositionalEncoding,
        dropout: f64,
        attention_dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::invalid("mha", format!("dim {dim} is not divisible by {heads} heads")));
        }
        let lin = |store: &mut ParamStore, rng: &mut R, n: &str, bias| Linear::new(store, &format!("{name}.{n}"), dim, dim, bias, rng);
        let q = lin(store, rng, "linear_q", true);
        let k = lin(store, rng, "linear_k", true);
        let v = lin(store, rng, "linear_v", true);
        let out = lin(store, rng, "linear_out", true);
        let rel = (pos == PositionalEncoding::Relative).then(|| RelativeBias {
            linear_pos: lin(store, rng, "linear_pos", false),
            pos_bias_u: store.add(format!("{name}.pos_bias_u"), Tensor::zeros(&[dim])),
            pos_bias_v: store.add(format!("{name}.pos_bias_v"), Tensor::zeros(&[dim])),
        });
        Ok(Self {
            q,
            k,
            v,
            out,
            rel,
            heads,
            dim,
            dropout,
            attention_dropout,
        })
    }

    pub fn positional(&self) -> PositionalEncoding {
        if self.rel.is_some() {
            PositionalEncoding::Relative
        } else {
            PositionalEncoding::Absolute
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (t, c) = f.value(x).dims2("mha")?;
        if c != self.dim {
            return Err(Error::mismatch("mha", f.value(x).shape(), &[self.dim]));
        }
        let x = match self.rel {
            None => {
                let positions: Vec<f64> = (0..t).map(|p| p as f64).collect();
                let pe = f.input(sinusoid_table(&positions, c));
                f.graph.add(x, pe)?
            }
            Some(_) => x,
        };
        let q = self.q.forward(f, x)?;
        let k = self.k.forward(f, x)?;
        let v = self.v.forward(f, x)?;
        let (q_content, pos) = match &self.rel {
            Some(rel) => {
                let table = f.input(relative_position_table(t, c));
                let p = rel.linear_pos.forward(f, table)?;
                let (u, bv) = (f.param(rel.pos_bias_u), f.param(rel.pos_bias_v));
                let qu = f.graph.add_row(q, u)?;
                let qv = f.graph.add_row(q, bv)?;
                (qu, Some((qv, p)))
            }
            None => (q, None),
        };

        let dh = c / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = f.graph.slice_cols(q_content, h * dh, dh)?;
            let kh = f.graph.slice_cols(k, h * dh, dh)?;
            let vh = f.graph.slice_cols(v, h * dh, dh)?;
            let mut s = f.graph.matmul_nt(qh, kh)?;
            if let Some((qv, p)) = pos {
                let qvh = f.graph.slice_cols(qv, h * dh, dh)?;
                let ph = f.graph.slice_cols(p, h * dh, dh)?;
                let ps = f.graph.rel_pos_scores(qvh, ph)?;
                s = f.graph.add(s, ps)?;
            }
            let s = f.graph.scale(s, scale);
            let a = f.graph.softmax(s);
            f.push_attention(a);
            let a = f.dropout(a, self.attention_dropout)?;
            ctx.push(f.graph.matmul(a, vh)?);
        }
        let ctx = if ctx.len() == 1 { ctx[0] } else { f.graph.concat_cols(&ctx)? };
        let y = self.out.forward(f, ctx)?;
        f.dropout(y, self.dropout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::check_module;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn module(dim: usize, heads: usize, pos: PositionalEncoding, seed: u64) -> (ParamStore, MhaModule) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = MhaModule::new(&mut store, "mha", dim, heads, pos, 0.0, 0.0, &mut rng).unwrap();
        if let Some(rel) = &m.rel {
            *store.get_mut(rel.pos_bias_u) = Tensor::randn(&[dim], 0.5, &mut rng);
            *store.get_mut(rel.pos_bias_v) = Tensor::randn(&[dim], 0.5, &mut rng);
        }
        for l in [&m.q, &m.k, &m.v, &m.out] {
            *store.get_mut(l.b.unwrap()) = Tensor::randn(&[dim], 0.5, &mut rng);
        }
        (store, m)
    }

    fn lin(x: &[Vec<f64>], w: &Tensor, b: Option<&Tensor>) -> Vec<Vec<f64>> {
        let (o, i) = w.dims2("").unwrap();
        x.iter()
            .map(|row| {
                (0..o)
                    .map(|r| (0..i).map(|c| w.at2(r, c) * row[c]).sum::<f64>() + b.map_or(0.0, |b| b.data()[r]))
                    .collect()
            })
            .collect()
    }

    /// Dense relative attention with explicit loops.
    fn oracle(store: &ParamStore, m: &MhaModule, x: &Tensor) -> Vec<Vec<f64>> {
        let (t, c) = x.dims2("").unwrap();
        let rows: Vec<Vec<f64>> = (0..t).map(|i| x.row(i).to_vec()).collect();
        let p = |l: &Linear| (store.get(l.w).clone(), l.b.map(|b| store.get(b).clone()));
        let proj = |l: &Linear, xs: &[Vec<f64>]| {
            let (w, b) = p(l);
            lin(xs, &w, b.as_ref())
        };
        let (q, k, v) = (proj(&m.q, &rows), proj(&m.k, &rows), proj(&m.v, &rows));
        let rel = m.rel.as_ref().unwrap();
        let u = store.get(rel.pos_bias_u).data();
        let bv = store.get(rel.pos_bias_v).data();
        let dh = c / m.heads;
        let mut ctx = vec![vec![0.0; c]; t];
        for h in 0..m.heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..t {
                let mut s = vec![0.0; t];
                for (j, sj) in s.iter_mut().enumerate() {
                    let dist = i as f64 - j as f64;
                    let pe = sinusoid_table(&[dist], c);
                    let pr = proj(&rel.linear_pos, &[pe.data().to_vec()]);
                    for d in cols.clone() {
                        *sj += (q[i][d] + u[d]) * k[j][d] + (q[i][d] + bv[d]) * pr[0][d];
                    }
                    *sj /= (dh as f64).sqrt();
                }
                let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|v| (v - mx).exp()).sum();
                for j in 0..t {
                    let a = (s[j] - mx).exp() / z;
                    for d in cols.clone() {
                        ctx[i][d] += a * v[j][d];
                    }
                }
            }
        }
        proj(&m.out, &ctx)
    }

    #[test]
    fn matches_loop_oracle() {
        let (store, m) = module(8, 2, PositionalEncoding::Relative, 1);
        let x = Tensor::randn(&[3, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let mut f = Forward::new(&store, false, 0);
        let xv = f.input(x.clone());
        let y = m.forward(&mut f, xv).unwrap();
        let want = oracle(&store, &m, &x);
        for i in 0..3 {
            for j in 0..8 {
                assert!((f.value(y).at2(i, j) - want[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rows_are_stochastic() {
        for pos in [PositionalEncoding::Relative, PositionalEncoding::Absolute] {
            let (store, m) = module(8, 4, pos, 3);
            let mut f = Forward::new(&store, false, 0).capture_attention();
            let xv = f.input(Tensor::randn(&[9, 8], 2.0, &mut ChaCha8Rng::seed_from_u64(4)));
            m.forward(&mut f, xv).unwrap();
            assert_eq!(f.attention_weights().len(), 4);
            for &a in f.attention_weights() {
                for row in f.value(a).data().chunks(9) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        let (store, m) = module(8, 2, PositionalEncoding::Relative, 5);
        let x = Tensor::randn(&[1, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(6));
        let mut f = Forward::new(&store, false, 0).capture_attention();
        let xv = f.input(x.clone());
        let y = m.forward(&mut f, xv).unwrap();
        for &a in f.attention_weights() {
            assert_eq!(f.value(a).data(), [1.0]);
        }
        let v = m.v.forward(&mut f, xv).unwrap();
        let want = m.out.forward(&mut f, v).unwrap();
        assert!(f.value(y).max_abs_diff(f.value(want)) < 1e-12);
    }

    #[test]
    fn uniform_values_give_equal_rows() {
        let (mut store, m) = module(8, 2, PositionalEncoding::Relative, 7);
        store.get_mut(m.v.w).data_mut().fill(0.0);
        let x = Tensor::randn(&[6, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(8));
        let mut f = Forward::new(&store, false, 0);
        let xv = f.input(x);
        let y = m.forward(&mut f, xv).unwrap();
        let out = f.value(y);
        for i in 1..6 {
            for j in 0..8 {
                assert!((out.at2(i, j) - out.at2(0, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(MhaModule::new(&mut store, "m", 10, 4, PositionalEncoding::Relative, 0.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn gradient_check_both_encodings() {
        for pos in [PositionalEncoding::Relative, PositionalEncoding::Absolute] {
            let (store, m) = module(8, 2, pos, 9);
            let x = Tensor::randn(&[4, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(10));
            check_module(&store, &x, true, None, |f, x| m.forward(f, x));
        }
    }

    #[test]
    fn shape_is_preserved() {
        let (store, m) = module(8, 2, PositionalEncoding::Relative, 11);
        for t in [1, 2, 5, 31, 100] {
            let mut f = Forward::inference(&store);
            let xv = f.input(Tensor::ones(&[t, 8]));
            let y = m.forward(&mut f, xv).unwrap();
            assert_eq!(f.value(y).shape(), [t, 8]);
        }
    }
}
