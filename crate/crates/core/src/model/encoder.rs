use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{BlockStructure, FrameRate, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{
    merge_scaling, ConvModule, FeedForwardModule, Forward, LayerNorm, Linear, MhaModule, NormScheme, ParamStore,
    PositionalEncoding, Residual, SubsamplingBlock, TemporalResampler,
};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModuleKind {
    FeedForward1,
    Attention,
    Convolution,
    FeedForward2,
}

/// One encoder block: four residual modules in configured order.
#[derive(Clone, Debug)]
pub struct Block {
    pub ffn1: (FeedForwardModule, Residual),
    pub mha: (MhaModule, Residual),
    pub conv: (ConvModule, Residual),
    pub ffn2: (FeedForwardModule, Residual),
    pub final_norm: Option<LayerNorm>,
    pub order: [ModuleKind; 4],
    pub rate: FrameRate,
}

impl Block {
    fn new(store: &mut ParamStore, cfg: &ModelConfig, idx: usize, rate: FrameRate, rng: &mut ChaCha8Rng) -> Result<Self> {
        let p = format!("blocks.{idx}");
        let (c, scheme) = (cfg.dim, cfg.norm_scheme);
        let r = cfg.block_structure.ffn_weight();
        let ffn = |store: &mut ParamStore, rng: &mut ChaCha8Rng, n: &str| {
            let name = format!("{p}.{n}");
            let m = FeedForwardModule::new(store, &name, c, cfg.ffn_expansion, cfg.dropout, rng);
            (m, Residual::new(store, &name, scheme, c, r))
        };
        let ffn1 = ffn(store, rng, "ffn1");
        let mha_name = format!("{p}.mha");
        let mha = MhaModule::new(store, &mha_name, c, cfg.heads, cfg.positional, cfg.dropout, cfg.attention_dropout, rng)?;
        let mha = (mha, Residual::new(store, &mha_name, scheme, c, 1.0));
        let conv_name = format!("{p}.conv");
        let conv = ConvModule::new(store, &conv_name, c, cfg.conv_kernel, cfg.conv_activation, cfg.dropout, rng)?;
        let conv = (conv, Residual::new(store, &conv_name, scheme, c, 1.0));
        let ffn2 = ffn(store, rng, "ffn2");
        let final_norm = (scheme == NormScheme::PrePost).then(|| LayerNorm::new(store, &format!("{p}.final_norm"), c));
        use ModuleKind::*;
        let order = match cfg.block_structure {
            BlockStructure::Macaron => [FeedForward1, Attention, Convolution, FeedForward2],
            BlockStructure::MfCf => [Attention, FeedForward1, Convolution, FeedForward2],
        };
        Ok(Self {
            ffn1,
            mha,
            conv,
            ffn2,
            final_norm,
            order,
            rate,
        })
    }

    pub fn forward(&self, f: &mut Forward<'_>, mut x: Var) -> Result<Var> {
        for kind in self.order {
            x = match kind {
                ModuleKind::FeedForward1 => self.ffn1.1.forward(f, x, |f, h| self.ffn1.0.forward(f, h))?,
                ModuleKind::Attention => self.mha.1.forward(f, x, |f, h| self.mha.0.forward(f, h))?,
                ModuleKind::Convolution => self.conv.1.forward(f, x, |f, h| self.conv.0.forward(f, h))?,
                ModuleKind::FeedForward2 => self.ffn2.1.forward(f, x, |f, h| self.ffn2.0.forward(f, h))?,
            };
        }
        match &self.final_norm {
            Some(ln) => ln.forward(f, x),
            None => Ok(x),
        }
    }
}

/// Values recorded during one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// Subsampling output, the input to the first block.
    pub embedding: Var,
    /// Output of every block, at that block's own frame rate.
    pub blocks: Vec<Var>,
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct EncoderModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub subsampling: SubsamplingBlock,
    pub blocks: Vec<Block>,
    pub resampler: Option<TemporalResampler>,
    pub head: Linear,
}

impl EncoderModel {
    /// Build and initialize a model; identical seeds give identical weights.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.dim;
        let subsampling = SubsamplingBlock::new(&mut store, "subsampling", config.input_feature_dim, c, config.subsampling, config.dropout, &mut rng);
        let rates = config.block_rates();
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for (i, &rate) in rates.iter().enumerate() {
            blocks.push(Block::new(&mut store, config, i, rate, &mut rng)?);
        }
        let resampler = config.unet.then(|| TemporalResampler::new(&mut store, "unet", c, &mut rng));
        let head = Linear::new(&mut store, "head", c, config.vocab_size + 1, true, &mut rng);
        Ok(Self {
            config: config.clone(),
            store,
            subsampling,
            blocks,
            resampler,
            head,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Run the encoder on `features[T × F]`, returning CTC logits
    /// `[ceil(ceil(T/2)/2) × (vocab + 1)]` and the per-block outputs.
    pub fn forward(&self, f: &mut Forward<'_>, features: Var) -> Result<Trace> {
        let mut x = self.subsampling.forward(f, features)?;
        let embedding = x;
        let d = self.config.downsample_block();
        let mut skip = None;
        let mut outs = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            if let Some(r) = &self.resampler {
                if i == d && i + 1 < self.blocks.len() {
                    let (y, s) = r.downsample(f, x)?;
                    x = y;
                    skip = Some(s);
                }
                if i + 1 == self.blocks.len() {
                    if let Some(s) = skip.take() {
                        x = r.upsample(f, x, s)?;
                    }
                }
            }
            x = block.forward(f, x)?;
            outs.push(x);
        }
        let logits = self.head.forward(f, x)?;
        Ok(Trace {
            embedding,
            blocks: outs,
            logits,
        })
    }

    /// Eval-mode logits for one utterance.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let mut f = Forward::inference(&self.store);
        let x = f.input(features.clone());
        let trace = self.forward(&mut f, x)?;
        Ok(f.value(trace.logits).clone())
    }

    /// Fold every scaling layer into the linear layers that consume it,
    /// leaving the scaling layers at the identity. Eval-mode outputs are
    /// unchanged up to rounding.
    pub fn merge_scalings(&self) -> Result<Self> {
        if self.config.norm_scheme == NormScheme::ScaledPost && self.config.positional == PositionalEncoding::Absolute {
            return Err(Error::invalid(
                "merge_scalings",
                "absolute positions are added between the scaling layer and the attention projections",
            ));
        }
        let mut out = self.clone();
        for block in &self.blocks {
            let pairs: [(&Residual, Vec<&Linear>); 4] = [
                (&block.ffn1.1, vec![&block.ffn1.0.lin1]),
                (&block.mha.1, vec![&block.mha.0.q, &block.mha.0.k, &block.mha.0.v]),
                (&block.conv.1, vec![&block.conv.0.pw1]),
                (&block.ffn2.1, vec![&block.ffn2.0.lin1]),
            ];
            for (res, linears) in pairs {
                let Some(s) = &res.scaling else { continue };
                let gamma = self.store.get(s.gamma).data();
                let beta = self.store.get(s.beta).data();
                for l in linears {
                    let b = l.b.map(|b| self.store.get(b).data());
                    let (w2, b2) = merge_scaling(gamma, beta, self.store.get(l.w), b)?;
                    *out.store.get_mut(l.w) = w2;
                    let bias = l.b.ok_or_else(|| Error::invalid("merge_scalings", "target linear has no bias"))?;
                    out.store.get_mut(bias).data_mut().copy_from_slice(&b2);
                }
                out.store.get_mut(s.gamma).data_mut().fill(1.0);
                out.store.get_mut(s.beta).data_mut().fill(0.0);
            }
        }
        Ok(out)
    }
}

/// Per-frame argmax, collapse repeats, drop blanks. The blank is the last column.
pub fn ctc_greedy_decode(logits: &Tensor) -> Vec<usize> {
    let v = logits.last_dim();
    let path: Vec<usize> = logits
        .data()
        .chunks(v)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                .0
        })
        .collect();
    collapse_path(&path, v - 1)
}

/// CTC collapse of a frame-level label path.
pub fn collapse_path(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}
