use ndarray::Array1;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{encode, encode_backward, EncoderParams, EncoderVariant};
use crate::error::Result;
use crate::rng;
use crate::textio::ModelInput;

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)` over
/// `samples` randomly chosen parameters, using central differences of
/// `<g, encode(params, input)>` for a random upstream `g`.
///
/// Coordinates are drawn from the parameters the input can reach: embedding
/// rows of its tokens and positions, plus every other tensor.
pub fn gradient_check(params: &EncoderParams, input: &ModelInput, epsilon: f64, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = rng::stream(seed, "gradcheck", &[]);
    let d = params.config.d_model;
    let upstream = Array1::from_shape_simple_fn(d, || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    let analytic = encode_backward(params, input, upstream.view())?.0;

    let t = input.token_ids.len();
    let uses_positions = params.config.variant == EncoderVariant::Transformer;
    // (tensor index, admissible flat offsets)
    let mut spaces: Vec<(usize, Vec<usize>)> = Vec::new();
    for (ti, (name, tensor)) in params.weights.tensors().iter().enumerate() {
        let offsets: Vec<usize> = match name.as_str() {
            "token_emb" => {
                let mut rows: Vec<usize> = input.token_ids.iter().map(|&i| i as usize).collect();
                rows.sort_unstable();
                rows.dedup();
                rows.iter().flat_map(|r| r * d..(r + 1) * d).collect()
            }
            "pos_emb" if uses_positions => (0..t * d).collect(),
            "pos_emb" => Vec::new(),
            _ => (0..tensor.len()).collect(),
        };
        if !offsets.is_empty() {
            spaces.push((ti, offsets));
        }
    }
    let total: usize = spaces.iter().map(|(_, o)| o.len()).sum();

    let objective = |p: &EncoderParams| -> Result<f64> { Ok(encode(p, input)?.dot(&upstream)) };
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let mut pick = rng.random_range(0..total);
        let (ti, offset) = spaces
            .iter()
            .find_map(|(ti, offs)| {
                if pick < offs.len() {
                    Some((*ti, offs[pick]))
                } else {
                    pick -= offs.len();
                    None
                }
            })
            .expect("pick within total");
        let g_a = analytic.tensors()[ti].1.iter().nth(offset).copied().expect("offset in tensor");
        let original = params.weights.tensors()[ti].1.iter().nth(offset).copied().expect("offset in tensor");

        let set = |p: &mut EncoderParams, value: f64| {
            let mut tensors = p.weights.tensors_mut();
            *tensors[ti].1.iter_mut().nth(offset).expect("offset in tensor") = value;
        };
        set(&mut probe, original + epsilon);
        let plus = objective(&probe)?;
        set(&mut probe, original - epsilon);
        let minus = objective(&probe)?;
        set(&mut probe, original);
        let g_n = (plus - minus) / (2.0 * epsilon);
        let err = (g_a - g_n).abs() / g_a.abs().max(g_n.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
