//! Fixtures shared by the benchmarks.

use hum_core::corpus::{build_sequences, chronological_split, generate_synthetic, GenConfig, Phase, UserSequence};
use hum_core::encoder::{init_params, EncoderConfig, EncoderParams};
use hum_core::textio::{build_user_input, InputOptions, ModelInput, Vocabulary};
use ndarray::Array1;

/// A small model and one realistic user input.
pub struct Fixture {
    pub params: EncoderParams,
    pub input: ModelInput,
}

pub fn fixture(d_model: usize, n_layers: usize) -> Fixture {
    let corpus = generate_synthetic(&GenConfig::default()).expect("default generator config is valid");
    let vocab = Vocabulary::build(&corpus, 1).expect("corpus has titles");
    let split = chronological_split(
        &corpus,
        corpus.timestamp_quantile(0.7).expect("non-empty"),
        corpus.timestamp_quantile(0.85).expect("non-empty"),
    )
    .expect("quantiles are ordered");
    let seqs: Vec<UserSequence> = build_sequences(&split, Phase::Test, 10).expect("split is valid").sequences;
    let longest = seqs.iter().max_by_key(|s| s.history.len()).expect("test sequences exist");
    let opts = InputOptions {
        max_len: 128,
        ..Default::default()
    };
    let input = build_user_input(longest, &split.corpus, &vocab, &opts).expect("input fits");
    let params = init_params(&EncoderConfig {
        vocab_size: vocab.len(),
        d_model,
        n_heads: 2,
        n_layers,
        ffn_dim: 2 * d_model,
        max_len: 128,
        ..Default::default()
    })
    .expect("config is valid");
    Fixture { params, input }
}

/// Deterministic pseudo-random vector.
pub fn vector(d: usize, salt: u64) -> Array1<f64> {
    Array1::from_shape_fn(d, |i| (((i as u64 + 1) * 2654435761 + salt * 97) % 1000) as f64 / 1000.0 - 0.5)
}
