//! Epochs of shuffled, masked, domain-weighted contrastive training with
//! AdamW updates and validation-based early stopping.

mod history;
mod optim;

use ndarray::ArrayView1;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{sample_factor, update_weights, weighted_batch_loss, BalanceConfig, DomainWeights};
use crate::corpus::{build_sequences, Corpus, DomainId, ItemId, Phase, SplitCorpus, UserSequence, DEFAULT_MAX_HISTORY};
use crate::encoder::{backward_into, forward, init_params, AttentionMode, EncoderConfig, EncoderParams, Weights};
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, EvalContext};
use crate::objective::{contrastive_loss, sample_negatives, LossForm, LossLedger};
use crate::rng;
use crate::textio::{build_item_input, build_user_input, mask_history, InputOptions, Vocabulary};

pub use history::{StepRecord, TrainHistory, TrainSummary, Validation, ValidationRecord, WeightUpdate};
pub use optim::{optimizer_step, AdamState, AdamWConfig};

/// Samples per gradient-accumulation chunk. Chunks are summed in batch
/// order, so results do not depend on the number of worker threads.
const CHUNK: usize = 8;

/// Switches that remove one ingredient of the method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_prompt: bool,
    /// Read the last content token instead of a trailing `[USER]` token.
    pub no_user_token: bool,
    pub no_mask: bool,
    /// Keep domain weights uniform.
    pub no_di: bool,
    pub bidirectional: bool,
    /// Minimize the negated positive probability instead of its negative log.
    pub probability_loss: bool,
}

impl Ablation {
    pub fn input_options(&self, max_len: usize) -> InputOptions {
        InputOptions {
            prompt: !self.no_prompt,
            user_token: !self.no_user_token,
            max_len,
        }
    }

    pub fn loss_form(&self) -> LossForm {
        if self.probability_loss {
            LossForm::ProbabilityOnly
        } else {
            LossForm::InfoNce
        }
    }

    pub fn encoder_config(&self, base: &EncoderConfig) -> EncoderConfig {
        let mut cfg = base.clone();
        if self.bidirectional {
            cfg.attention_mode = AttentionMode::Bidirectional;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub negatives: usize,
    pub mask_ratio: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub max_history: usize,
    /// Stop after this many optimizer steps, validating once more first.
    pub max_steps: Option<u64>,
    /// Domains kept out of training and validation entirely.
    pub holdout_domains: Vec<DomainId>,
    pub balance: BalanceConfig,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            batch_size: 32,
            negatives: 10,
            mask_ratio: 0.2,
            max_epochs: 50,
            patience: 5,
            max_history: DEFAULT_MAX_HISTORY,
            max_steps: None,
            holdout_domains: Vec::new(),
            balance: BalanceConfig::default(),
            ablation: Ablation::default(),
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad("mask_ratio must lie in [0, 1]");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 || self.negatives == 0 || self.max_epochs == 0 {
            return bad("batch_size, negatives and max_epochs must be positive");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive when set");
        }
        self.balance.validate()?;
        self.adamw().validate()
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }

    fn is_holdout(&self, d: DomainId) -> bool {
        self.holdout_domains.contains(&d)
    }

    /// Sequences of `phase` whose target is not held out, with held-out
    /// items removed from their histories.
    pub fn sequences(&self, split: &SplitCorpus, phase: Phase) -> Result<Vec<UserSequence>> {
        let corpus = &split.corpus;
        let mut out = Vec::new();
        for mut seq in build_sequences(split, phase, self.max_history)?.sequences {
            if self.is_holdout(seq.target_domain) {
                continue;
            }
            seq.history.retain(|h| !self.is_holdout(corpus.domain_of(h.item)));
            if !seq.history.is_empty() {
                out.push(seq);
            }
        }
        Ok(out)
    }
}

/// Patience-based stopping on a higher-is-better score.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        let improved = score.is_finite() && self.best.is_none_or(|(_, b)| score > b);
        if improved {
            self.best = Some((epoch, score));
            self.since_best = 0;
            return StopDecision::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

pub struct TrainOutcome {
    /// Parameters from the best validation, or the last ones if no
    /// validation produced a finite score.
    pub params: EncoderParams,
    pub history: TrainHistory,
    pub weights: DomainWeights,
}

/// Fixed inputs of one epoch's gradient computations.
struct StepContext<'a> {
    params: &'a EncoderParams,
    corpus: &'a Corpus,
    vocab: &'a Vocabulary,
    inputs: InputOptions,
    config: &'a TrainConfig,
    pools: &'a [Vec<ItemId>],
    epoch: u64,
}

impl StepContext<'_> {
    /// Loss of one training sequence; accumulates `scale` times its
    /// parameter gradient into `grads`.
    fn sample(&self, index: usize, seq: &UserSequence, scale: f64, grads: &mut Weights) -> Result<f64> {
        let cfg = self.config;
        let tag = [self.epoch, index as u64];
        let seq = if cfg.ablation.no_mask {
            seq.clone()
        } else {
            mask_history(seq, self.corpus, cfg.mask_ratio, &mut rng::stream(cfg.seed, "mask", &tag))
        };
        let domain = seq.target_domain;
        let negatives = sample_negatives(
            seq.target,
            &self.pools[domain.index()],
            &self.corpus.domains[domain.index()].name,
            cfg.negatives,
            &mut rng::stream(cfg.seed, "negatives", &tag),
        )?;
        let item = |id: ItemId| forward(self.params, &build_item_input(self.corpus.item(id), self.vocab, &self.inputs)?);
        let user = forward(self.params, &build_user_input(&seq, self.corpus, self.vocab, &self.inputs)?)?;
        let positive = item(seq.target)?;
        let negs = negatives.iter().map(|&n| item(n)).collect::<Result<Vec<_>>>()?;
        let neg_views: Vec<ArrayView1<f64>> = negs.iter().map(|c| c.output.view()).collect();
        let g = contrastive_loss(user.output.view(), positive.output.view(), &neg_views, cfg.ablation.loss_form())?;
        backward_into(self.params, &user, (&g.user * scale).view(), grads)?;
        backward_into(self.params, &positive, (&g.positive * scale).view(), grads)?;
        for (cache, gn) in negs.iter().zip(&g.negatives) {
            backward_into(self.params, cache, (gn * scale).view(), grads)?;
        }
        Ok(g.loss)
    }

    /// Per-sample losses and the summed, weighted batch gradient.
    fn batch(&self, batch: &[usize], sequences: &[UserSequence], weights: &DomainWeights) -> Result<(Vec<(DomainId, f64)>, Weights)> {
        let b = batch.len() as f64;
        let parts = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = self.params.weights.zeros_like();
                let mut losses = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let seq = &sequences[i];
                    let scale = sample_factor(seq.target_domain, weights)? / b;
                    losses.push((seq.target_domain, self.sample(i, seq, scale, &mut grads)?));
                }
                Ok((losses, grads))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut parts = parts.into_iter();
        let (mut losses, mut grads) = parts.next().expect("batch is non-empty");
        for (l, g) in parts {
            losses.extend(l);
            grads.add_scaled(&g, 1.0);
        }
        Ok((losses, grads))
    }
}

fn diverged(step: u64, loss: f64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Diverged { step, loss },
        other => other,
    }
}

/// Trains with mean validation NDCG@10 over domains as the selection score.
pub fn train(split: &SplitCorpus, vocab: &Vocabulary, encoder: &EncoderConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    let valid = config.sequences(split, Phase::Valid)?;
    if valid.is_empty() {
        return Err(Error::InvalidConfig("no validation sequences".into()));
    }
    let inputs = config.ablation.input_options(encoder.max_len);
    let ctx = EvalContext {
        corpus: &split.corpus,
        vocab,
        inputs,
    };
    let mut validator = |params: &EncoderParams| -> Result<Validation> {
        let report = evaluate_split(params, &ctx, &valid)?;
        Ok(Validation {
            per_domain: report.domains.iter().map(|d| (d.domain, d.metrics.ndcg_at_10)).collect(),
            score: report.macro_avg.ndcg_at_10,
        })
    };
    train_with_validator(split, vocab, encoder, config, &mut validator)
}

/// [`train`] with a caller-supplied validation score.
pub fn train_with_validator(
    split: &SplitCorpus,
    vocab: &Vocabulary,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    validator: &mut dyn FnMut(&EncoderParams) -> Result<Validation>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let corpus = &split.corpus;
    let mut enc = config.ablation.encoder_config(encoder);
    if enc.vocab_size == 0 {
        enc.vocab_size = vocab.len();
    } else if enc.vocab_size != vocab.len() {
        return Err(Error::InvalidConfig(format!(
            "encoder vocab_size {} does not match the vocabulary ({})",
            enc.vocab_size,
            vocab.len()
        )));
    }
    let sequences = config.sequences(split, Phase::Train)?;
    if sequences.is_empty() {
        return Err(Error::InvalidConfig("no training sequences".into()));
    }
    let pools: Vec<Vec<ItemId>> = (0..corpus.n_domains())
        .map(|d| split.train_domain_items(DomainId(d as u16)))
        .collect();
    let n = corpus.n_domains();
    let inputs = config.ablation.input_options(enc.max_len);
    let hyper = config.adamw();

    let mut params = init_params(&enc)?;
    let mut state = AdamState::new(&params.weights);
    let mut weights = DomainWeights::uniform(n);
    let mut ledger = LossLedger::new(n);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best: Option<EncoderParams> = None;
    let mut history = TrainHistory {
        n_domains: n,
        ..Default::default()
    };
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..sequences.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng::stream(config.seed, "shuffle", &[epoch as u64]));
        let mut budget_spent = false;
        for batch in order.chunks(config.batch_size) {
            let ctx = StepContext {
                params: &params,
                corpus,
                vocab,
                inputs,
                config,
                pools: &pools,
                epoch: epoch as u64,
            };
            let (losses, grads) = ctx.batch(batch, &sequences, &weights).map_err(diverged(step + 1, f64::NAN))?;
            step += 1;
            let loss = weighted_batch_loss(&losses, &weights)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            for &(d, l) in &losses {
                ledger.record(d, l)?;
            }
            history.steps.push(StepRecord {
                step,
                epoch,
                loss,
                weights: weights.w.clone(),
            });
            optimizer_step(&mut params.weights, &grads, &mut state, &hyper).map_err(diverged(step, loss))?;
            if !params.weights.all_finite() {
                return Err(Error::Diverged { step, loss });
            }
            if step.is_multiple_of(config.balance.update_period as u64) {
                let means = ledger.roll_window()?;
                if !config.ablation.no_di {
                    weights = update_weights(&weights, &means, &config.balance)?;
                }
                history.updates.push(WeightUpdate {
                    step,
                    losses: means,
                    weights: weights.w.clone(),
                });
            }
            if config.max_steps.is_some_and(|m| step >= m) {
                budget_spent = true;
                break;
            }
        }

        let validation = validator(&params)?;
        let score = validation.score;
        history.validations.push(ValidationRecord { epoch, step, validation });
        history.stopped_epoch = epoch;
        let decision = stopper.observe(epoch, score);
        log::info!("epoch {epoch} step {step} validation {score:.5} ({decision:?})");
        if decision == StopDecision::Improved {
            best = Some(params.clone());
        }
        if decision == StopDecision::Stop || budget_spent {
            break;
        }
    }
    if let Some((e, s)) = stopper.best() {
        history.best_epoch = Some(e);
        history.best_score = Some(s);
    }
    Ok(TrainOutcome {
        params: best.unwrap_or(params),
        history,
        weights,
    })
}
