use log::warn;
use serde::Serialize;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::EncoderModel;
use crate::nn::Forward;
use crate::tensor::Tensor;

/// `n` standard-normal feature matrices `[frames × dim]` from one seed.
pub fn random_features(n: usize, frames: usize, dim: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Tensor::randn(&[frames, dim], 1.0, &mut rng)).collect()
}

/// Mean cosine similarity between embeddings `d` frames apart.
///
/// Block outputs are compared at their own frame rate, so for blocks inside
/// a U-Net span a distance of one frame spans 80 ms instead of 40 ms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RedundancyProfile {
    pub distances: Vec<usize>,
    /// Subsampling output, before the first block.
    pub embedding: Vec<f64>,
    /// `blocks[b][j]` is the similarity at `distances[j]` after block `b`.
    pub blocks: Vec<Vec<f64>>,
    pub samples: usize,
    /// Inputs too short to provide a pair at the largest distance.
    pub skipped: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na > 0.0, nb > 0.0) {
        (true, true) => (dot / (na * nb)).clamp(-1.0, 1.0),
        (false, false) => 1.0,
        _ => 0.0,
    }
}

#[derive(Clone)]
struct Acc {
    sum: Vec<f64>,
    count: Vec<usize>,
}

impl Acc {
    fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    fn add(&mut self, e: &Tensor, distances: &[usize]) {
        let (t, _) = e.dims2("redundancy").expect("block outputs are matrices");
        for (j, &d) in distances.iter().enumerate() {
            for i in 0..t.saturating_sub(d) {
                self.sum[j] += cosine(e.row(i), e.row(i + d));
                self.count[j] += 1;
            }
        }
    }

    fn means(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.count).map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 }).collect()
    }
}

/// Eval-mode similarity profile over `inputs`, pooled over every position
/// pair of every usable input.
pub fn redundancy_profile(model: &EncoderModel, inputs: &[Tensor], distances: &[usize]) -> Result<RedundancyProfile> {
    if inputs.is_empty() {
        return Err(Error::invalid("redundancy_profile", "at least one input is required"));
    }
    if distances.is_empty() || distances.contains(&0) {
        return Err(Error::invalid("redundancy_profile", "distances must be nonempty and at least 1"));
    }
    let max_d = *distances.iter().max().unwrap_or(&1);
    let mut emb = Acc::new(distances.len());
    let mut blocks = vec![Acc::new(distances.len()); model.blocks.len()];
    let (mut samples, mut skipped) = (0, 0);
    for x in inputs {
        let mut f = Forward::inference(&model.store);
        let xv = f.input(x.clone());
        let trace = model.forward(&mut f, xv)?;
        let shortest = trace.blocks.iter().chain([&trace.embedding]).map(|&v| f.graph.shape(v)[0]).min().unwrap_or(0);
        if shortest <= max_d {
            skipped += 1;
            continue;
        }
        samples += 1;
        emb.add(f.value(trace.embedding), distances);
        for (acc, &v) in blocks.iter_mut().zip(&trace.blocks) {
            acc.add(f.value(v), distances);
        }
    }
    if skipped > 0 {
        warn!("redundancy profile skipped {skipped} of {} inputs shorter than distance {max_d}", inputs.len());
    }
    Ok(RedundancyProfile {
        distances: distances.to_vec(),
        embedding: emb.means(),
        blocks: blocks.iter().map(Acc::means).collect(),
        samples,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tiny;

    fn inputs(n: usize, t: usize, seed: u64) -> Vec<Tensor> {
        random_features(n, t, 16, seed)
    }

    #[test]
    fn values_in_range() {
        let m = EncoderModel::build(&tiny(true), 0).unwrap();
        let p = redundancy_profile(&m, &inputs(10, 48, 1), &[1, 2, 3, 4]).unwrap();
        assert_eq!(p.samples, 10);
        for v in p.blocks.iter().flatten().chain(&p.embedding) {
            assert!((-1.0..=1.0).contains(v), "{v}");
        }
    }

    #[test]
    fn constant_input_is_fully_redundant() {
        let m = EncoderModel::build(&tiny(false), 0).unwrap();
        let row: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).sin()).collect();
        let x = Tensor::from_rows(&vec![row; 40]).unwrap();
        let p = redundancy_profile(&m, &[x], &[1, 2]).unwrap();
        // Padded edges differ, so only interior frames are exactly equal.
        for v in p.blocks.iter().flatten() {
            assert!(*v > 0.9, "{v}");
        }
    }

    #[test]
    fn zero_bodies_pass_embedding_through() {
        let cfg = crate::model::ModelConfig {
            unet: false,
            ..tiny(true)
        };
        let mut m = EncoderModel::build(&cfg, 0).unwrap();
        let ids: Vec<_> = m
            .store
            .ids()
            .filter(|&id| {
                let n = m.store.name(id);
                n.starts_with("blocks.") && (n.contains(".linear2.") || n.contains(".linear_out.") || n.contains(".pointwise2."))
            })
            .collect();
        assert_eq!(ids.len(), 2 * 4 * 2);
        for id in ids {
            m.store.get_mut(id).data_mut().fill(0.0);
        }
        let xs = inputs(3, 40, 2);
        let d = [1, 2, 3];
        let p = redundancy_profile(&m, &xs, &d).unwrap();
        // Each residual-only block is a layer norm of its input, so every
        // block sees the centred embedding.
        let mut acc = Acc::new(d.len());
        for x in &xs {
            let mut f = Forward::inference(&m.store);
            let xv = f.input(x.clone());
            let emb = m.forward(&mut f, xv).unwrap().embedding;
            let e = f.value(emb).clone();
            let c = e.last_dim();
            let centred: Vec<f64> = e
                .data()
                .chunks(c)
                .flat_map(|r| {
                    let mean = r.iter().sum::<f64>() / c as f64;
                    r.iter().map(move |v| v - mean)
                })
                .collect();
            acc.add(&Tensor::new(e.shape(), centred).unwrap(), &d);
        }
        let want = acc.means();
        for block in &p.blocks {
            for (a, b) in block.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn short_inputs_are_skipped() {
        let m = EncoderModel::build(&tiny(true), 0).unwrap();
        let mut xs = inputs(2, 40, 3);
        xs.push(Tensor::ones(&[4, 16]));
        let p = redundancy_profile(&m, &xs, &[1, 4]).unwrap();
        assert_eq!((p.samples, p.skipped), (2, 1));
        assert!(redundancy_profile(&m, &xs, &[0]).is_err());
        assert!(redundancy_profile(&m, &[], &[1]).is_err());
    }
}
