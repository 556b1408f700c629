use std::io::Write;
use std::path::PathBuf;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{spec_augment, SpecAugmentParams};
use super::optim::{AdamW, AdamWParams};
use super::schedule::{lr, ScheduleParams};
use super::synthetic::{Example, SyntheticTask};
use crate::error::{Error, Result};
use crate::model::{ctc_greedy_decode, save_checkpoint, EncoderModel};
use crate::nn::Forward;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub eval_examples: usize,
    /// Save a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub seed: u64,
    /// Rescale the gradient when its global norm exceeds this; 0 disables.
    pub clip_norm: f64,
    pub schedule: ScheduleParams,
    pub optimizer: AdamWParams,
    pub spec_augment: Option<SpecAugmentParams>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            eval_every: 100,
            eval_examples: 64,
            checkpoint_every: 0,
            checkpoint_dir: None,
            seed: 0,
            clip_norm: 5.0,
            schedule: ScheduleParams::default(),
            optimizer: AdamWParams::default(),
            spec_augment: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.accuracy)
    }
}

/// `1 − edits/reference tokens`, pooled over all pairs and floored at 0.
pub fn token_accuracy(pairs: &[(Vec<usize>, Vec<usize>)]) -> f64 {
    let (mut edits, mut total) = (0usize, 0usize);
    for (hyp, reference) in pairs {
        edits += strsim::generic_levenshtein(hyp, reference);
        total += reference.len();
    }
    if total == 0 {
        return if edits == 0 { 1.0 } else { 0.0 };
    }
    (1.0 - edits as f64 / total as f64).max(0.0)
}

pub fn evaluate(model: &EncoderModel, examples: &[Example]) -> Result<f64> {
    let pairs = examples
        .iter()
        .map(|ex| Ok((ctc_greedy_decode(&model.logits(&ex.features)?), ex.labels.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(token_accuracy(&pairs))
}

/// Held-out examples, drawn from a stream disjoint from the training batches.
pub fn eval_set(task: &SyntheticTask, n: usize) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    rng.set_stream(1);
    (0..n).map(|_| task.sample(&mut rng)).collect()
}

fn check_compatible(model: &EncoderModel, task: &SyntheticTask, cfg: &TrainConfig) -> Result<()> {
    task.validate()?;
    cfg.schedule.validate()?;
    if let Some(sa) = &cfg.spec_augment {
        sa.validate()?;
    }
    if model.config.vocab_size != task.vocab {
        return Err(Error::Config {
            field: "task.vocab",
            reason: format!("model emits {} symbols, task uses {}", model.config.vocab_size, task.vocab),
        });
    }
    if model.config.input_feature_dim != task.feature_dim {
        return Err(Error::Config {
            field: "task.feature_dim",
            reason: format!("model expects {} features, task makes {}", model.config.input_feature_dim, task.feature_dim),
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config {
            field: "train.batch_size",
            reason: "must be positive".into(),
        });
    }
    Ok(())
}

/// Train on freshly drawn synthetic batches with mean CTC loss per
/// utterance. Writes one JSON record per step to `sink` when given.
pub fn train(model: &mut EncoderModel, task: &SyntheticTask, cfg: &TrainConfig, mut sink: Option<&mut dyn Write>) -> Result<TrainLog> {
    check_compatible(model, task, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let held_out = eval_set(task, cfg.eval_examples);
    let mut opt = AdamW::new(cfg.optimizer, model.store.tensors());
    let mut log = TrainLog::default();

    for step in 1..=cfg.steps {
        let rate = lr(step as f64, &cfg.schedule);
        let batch: Vec<Example> = (0..cfg.batch_size).map(|_| task.sample(&mut rng)).collect();
        let dropout_seed = rng.random();

        let (loss, grads, updates) = {
            let mut f = Forward::new(&model.store, true, dropout_seed);
            let mut terms = Vec::with_capacity(batch.len());
            for ex in &batch {
                let feats = match &cfg.spec_augment {
                    Some(sa) => spec_augment(&ex.features, sa, rng.random())?,
                    None => ex.features.clone(),
                };
                let x = f.input(feats);
                let trace = model.forward(&mut f, x)?;
                let lp = f.graph.log_softmax(trace.logits);
                terms.push(f.graph.ctc_loss(lp, &ex.labels)?);
            }
            let mut total = terms[0];
            for &t in &terms[1..] {
                total = f.graph.add(total, t)?;
            }
            let loss = f.graph.scale(total, 1.0 / batch.len() as f64);
            let value = f.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Divergence { step, loss: value });
            }
            (value, f.param_grads(loss)?, f.take_stats_updates())
        };
        let mut grads = grads;
        if cfg.clip_norm > 0.0 {
            let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grads.iter_mut().flatten().for_each(|g| *g *= s);
            }
        }
        opt.step(model.store.tensors_mut(), &grads, rate)?;
        model.store.apply_updates(&updates)?;

        let accuracy = if (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps {
            let acc = evaluate(model, &held_out)?;
            info!("step {step}: loss {loss:.4}, accuracy {acc:.4}");
            Some(acc)
        } else {
            None
        };
        let record = LogRecord { step, lr: rate, loss, accuracy };
        if let Some(w) = sink.as_deref_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
        }
        log.records.push(record);

        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
                std::fs::create_dir_all(dir)?;
                save_checkpoint(model, dir.join(format!("step-{step:06}.ckpt")))?;
            }
        }
    }
    Ok(log)
}
