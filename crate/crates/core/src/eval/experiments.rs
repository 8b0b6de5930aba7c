use serde::{Deserialize, Serialize};

use super::{evaluate_split, EvalContext, EvalReport};
use crate::corpus::{chronological_split, inject_noise, DomainId, NoiseSpec, Phase, SplitCorpus, UserSequence};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::textio::Vocabulary;
use crate::trainloop::{train, TrainConfig, TrainHistory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub fraction: f64,
    pub report: EvalReport,
}

/// Evaluates a trained model on test sequences whose histories were
/// corrupted for a growing share of users. Test targets are never replaced,
/// and every point uses the same noise seed.
pub fn noise_experiment(
    params: &EncoderParams,
    ctx: &EvalContext,
    split: &SplitCorpus,
    config: &TrainConfig,
    fractions: &[f64],
    items_per_user: usize,
    noise_seed: u64,
) -> Result<Vec<NoisePoint>> {
    fractions
        .iter()
        .map(|&fraction| {
            let noisy = inject_noise(
                &split.corpus,
                &NoiseSpec {
                    user_fraction: fraction,
                    items_per_user,
                    seed: noise_seed,
                    protect_from: Some(split.boundary_test),
                },
            )?;
            let noisy_split = chronological_split(&noisy, split.boundary_valid, split.boundary_test)?;
            let sequences = config.sequences(&noisy_split, Phase::Test)?;
            let ctx = EvalContext {
                corpus: &noisy_split.corpus,
                ..*ctx
            };
            Ok(NoisePoint {
                fraction,
                report: evaluate_split(params, &ctx, &sequences)?,
            })
        })
        .collect()
}

/// Evaluates on the sequences targeting `holdout`, which the training
/// config must have excluded.
pub fn holdout_domain_eval(
    params: &EncoderParams,
    ctx: &EvalContext,
    sequences: &[UserSequence],
    config: &TrainConfig,
    holdout: DomainId,
) -> Result<EvalReport> {
    if !config.holdout_domains.contains(&holdout) {
        return Err(Error::DomainSeenInTraining(holdout));
    }
    let own: Vec<UserSequence> = sequences
        .iter()
        .filter(|s| s.target_domain == holdout)
        .cloned()
        .collect();
    if own.is_empty() {
        return Err(Error::InvalidConfig(format!("no sequences target domain {}", holdout.0)));
    }
    evaluate_split(params, ctx, &own)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub report: EvalReport,
    pub history: TrainHistory,
}

/// Trains one model per mask ratio from the same seed and evaluates each on
/// the test split.
pub fn mask_ratio_sweep(
    split: &SplitCorpus,
    vocab: &Vocabulary,
    encoder: &EncoderConfig,
    base: &TrainConfig,
    ratios: &[f64],
) -> Result<Vec<SweepPoint>> {
    ratios
        .iter()
        .map(|&ratio| {
            let config = TrainConfig {
                mask_ratio: ratio,
                ..base.clone()
            };
            let outcome = train(split, vocab, encoder, &config)?;
            let ctx = EvalContext {
                corpus: &split.corpus,
                vocab,
                inputs: config.ablation.input_options(encoder.max_len),
            };
            let test = config.sequences(split, Phase::Test)?;
            Ok(SweepPoint {
                ratio,
                report: evaluate_split(&outcome.params, &ctx, &test)?,
                history: outcome.history,
            })
        })
        .collect()
}
