use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{loss_and_grad, SeqInput, Target};
use super::ModelParams;
use crate::corpus::{Encoded, MASK_ID};
use crate::error::{Error, Result};
use crate::node2vec::ContextEmbeddingTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Probability a text position becomes a prediction target.
    pub mask_prob: f64,
    /// Of the targets: fraction replaced by `[MASK]`...
    pub mask_token_frac: f64,
    /// ...and fraction replaced by a random word. The rest stay unchanged.
    pub random_token_frac: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            warmup_steps: 500,
            total_steps: 2000,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            mask_prob: 0.15,
            mask_token_frac: 0.8,
            random_token_frac: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if !frac(self.mask_prob) || !frac(self.mask_token_frac) || !frac(self.random_token_frac) {
            return Err(Error::Config("masking probabilities must lie in [0, 1]".into()));
        }
        if self.mask_token_frac + self.random_token_frac > 1.0 {
            return Err(Error::Config("mask_token_frac + random_token_frac exceeds 1".into()));
        }
        if self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("weight_decay must be >= 0 and betas in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Linear warmup to the peak rate, then linear decay to zero at `total_steps`.
/// `step` counts from 0.
pub fn learning_rate_at(cfg: &TrainConfig, step: usize) -> f64 {
    let t = step + 1;
    if t <= cfg.warmup_steps {
        cfg.learning_rate * t as f64 / cfg.warmup_steps as f64
    } else {
        let remaining = cfg.total_steps.saturating_sub(step) as f64;
        let span = (cfg.total_steps - cfg.warmup_steps).max(1) as f64;
        cfg.learning_rate * (remaining / span).clamp(0.0, 1.0)
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    decay: Vec<bool>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &ModelParams) -> Self {
        let mut decay = vec![false; params.num_params()];
        for spec in params.layout.specs.iter().filter(|s| s.decay) {
            decay[spec.tensor.range()].fill(true);
        }
        AdamW { m: vec![0.0; params.num_params()], v: vec![0.0; params.num_params()], decay, t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let step_size = lr / bc1;
        let wd = lr * cfg.weight_decay;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            if self.decay[i] {
                params[i] -= wd * params[i];
            }
            params[i] -= step_size * self.m[i] / ((self.v[i] / bc2).sqrt() + cfg.eps);
        }
    }
}

/// A batch after masking: corrupted inputs plus the original ids to predict.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedBatch {
    pub ids: Vec<Vec<u32>>,
    pub targets: Vec<Target>,
}

/// Selects text positions with probability `mask_prob` and corrupts them
/// 80/10/10. Control tokens and the context slot are never selected; random
/// replacements are drawn from `word_ids` only.
pub fn apply_mlm_masking(
    batch: &[&Encoded],
    word_ids: Range<u32>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> MaskedBatch {
    let mut ids = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    for (seq, ex) in batch.iter().enumerate() {
        let mut input = ex.ids.clone();
        for pos in 0..ex.n_text {
            if rng.random::<f64>() >= cfg.mask_prob {
                continue;
            }
            targets.push(Target { seq, pos, id: ex.ids[pos] });
            let r = rng.random::<f64>();
            if r < cfg.mask_token_frac {
                input[pos] = MASK_ID;
            } else if r < cfg.mask_token_frac + cfg.random_token_frac && !word_ids.is_empty() {
                input[pos] = rng.random_range(word_ids.clone());
            }
        }
        ids.push(input);
    }
    MaskedBatch { ids, targets }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub lr: f64,
    pub targets: usize,
}

fn resolve_contexts<'a>(
    params: &ModelParams,
    batch: &[&Encoded],
    table: Option<&'a ContextEmbeddingTable>,
) -> Result<Vec<Option<&'a [f64]>>> {
    batch
        .iter()
        .map(|ex| match (&ex.context, table) {
            (Some(ctx), Some(t)) => t.lookup(ctx).map(Some),
            (Some(ctx), None) => Err(Error::Mode(format!("example grounded at {ctx} but no context table given"))),
            (None, _) => Ok(None),
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|v| {
            if params.config.mode == crate::corpus::Mode::Soc && v.iter().any(Option::is_none) {
                Err(Error::Mode("SOC training examples must carry a context".into()))
            } else {
                Ok(v)
            }
        })
}

/// One masked-LM update. Context vectors are read from `table` and never
/// written. A batch that draws no targets leaves the parameters untouched.
#[allow(clippy::too_many_arguments)]
pub fn mlm_step(
    params: &mut ModelParams,
    opt: &mut AdamW,
    batch: &[&Encoded],
    table: Option<&ContextEmbeddingTable>,
    word_ids: Range<u32>,
    cfg: &TrainConfig,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::InputDomain("empty training batch".into()));
    }
    let lr = learning_rate_at(cfg, step);
    let contexts = resolve_contexts(params, batch, table)?;
    let masked = apply_mlm_masking(batch, word_ids, cfg, rng);
    let seqs: Vec<SeqInput> = masked.ids.iter().zip(&contexts).map(|(ids, sc)| SeqInput { ids, sc: *sc }).collect();
    let dropout = if params.config.dropout > 0.0 { Some(&mut *rng) } else { None };
    let (loss, grads) = loss_and_grad(params, &seqs, &masked.targets, dropout)?;
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingDiverged { step, last_good_step: step.checked_sub(1), last_loss: None });
    }
    if !masked.targets.is_empty() {
        opt.update(&mut params.data, &grads, lr, cfg);
    }
    Ok(StepOutcome { loss, lr, targets: masked.targets.len() })
}

/// Runs `total_steps` of masked-LM training over a fixed set of encoded
/// examples, reshuffling each pass.
pub struct Trainer<'a> {
    pub params: ModelParams,
    opt: AdamW,
    cfg: TrainConfig,
    examples: &'a [Encoded],
    table: Option<&'a ContextEmbeddingTable>,
    word_ids: Range<u32>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
    log: Vec<StepOutcome>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        params: ModelParams,
        cfg: TrainConfig,
        examples: &'a [Encoded],
        table: Option<&'a ContextEmbeddingTable>,
        word_ids: Range<u32>,
    ) -> Result<Self> {
        cfg.validate()?;
        if examples.is_empty() {
            return Err(Error::InputDomain("no training examples".into()));
        }
        let opt = AdamW::new(&params);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Trainer {
            params,
            opt,
            cfg,
            examples,
            table,
            word_ids,
            rng,
            order: Vec::new(),
            cursor: 0,
            step: 0,
            log: Vec::new(),
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    pub fn log(&self) -> &[StepOutcome] {
        &self.log
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        while batch.len() < self.cfg.batch_size {
            if self.cursor == self.order.len() {
                self.order = (0..self.examples.len()).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let take = (self.cfg.batch_size - batch.len()).min(self.order.len() - self.cursor);
            batch.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        batch
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let idx = self.next_batch();
        let batch: Vec<&Encoded> = idx.iter().map(|&i| &self.examples[i]).collect();
        let outcome = mlm_step(
            &mut self.params,
            &mut self.opt,
            &batch,
            self.table,
            self.word_ids.clone(),
            &self.cfg,
            self.step,
            &mut self.rng,
        )
        .map_err(|e| match e {
            Error::TrainingDiverged { step, .. } => Error::TrainingDiverged {
                step,
                last_good_step: self.log.len().checked_sub(1),
                last_loss: self.log.last().map(|o| o.loss),
            },
            other => other,
        })?;
        self.step += 1;
        self.log.push(outcome);
        Ok(outcome)
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    /// `step<TAB>loss<TAB>lr` per completed step (steps numbered from 1).
    pub fn log_text(&self) -> String {
        self.log
            .iter()
            .enumerate()
            .map(|(i, o)| format!("{}\t{}\t{}\n", i + 1, o.loss, o.lr))
            .collect()
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }
}
