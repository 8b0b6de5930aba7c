use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};

use super::{check_input, AttentionMode, EncoderParams, EncoderVariant, LayerWeights, ParamGrads, Representation, Weights};
use crate::error::{Error, Result};
use crate::textio::ModelInput;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, istd) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *istd = 1.0 / (var + LN_EPS).sqrt();
        row *= *istd;
    }
    let y = &xhat * gain + bias;
    (y, NormCache { xhat, inv_std })
}

/// Returns d(input) and accumulates gain/bias gradients.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * gain;
    for ((mut row, xhat), istd) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
        let mean = row.sum() / d;
        let mean_xhat = row.dot(&xhat) / d;
        Zip::from(&mut row).and(&xhat).for_each(|g, &xh| {
            *g = istd * (*g - mean - xh * mean_xhat);
        });
    }
    dx
}

struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    norm1: NormCache,
    y1: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    norm2: NormCache,
}

enum Trace {
    Transformer(Vec<LayerCache>),
    Bag { mean: Array1<f64>, count: usize },
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    ids: Vec<u32>,
    title_mask: Vec<bool>,
    readout: usize,
    trace: Trace,
    hidden: Array1<f64>,
    pub output: Representation,
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

fn layer_forward(layer: &LayerWeights, x: Array2<f64>, n_heads: usize, mode: AttentionMode) -> (Array2<f64>, LayerCache) {
    let t = x.nrows();
    let d = x.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = affine(&x, &layer.wq, &layer.bq);
    let k = x.dot(&layer.wk);
    let v = affine(&x, &layer.wv, &layer.bv);
    let mut attn = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t());
        for (i, mut row) in p.rows_mut().into_iter().enumerate() {
            let visible = match mode {
                AttentionMode::Causal => i + 1,
                AttentionMode::Bidirectional => t,
            };
            let max = row
                .iter()
                .take(visible)
                .fold(f64::NEG_INFINITY, |m, &s| m.max(s * scale));
            let mut total = 0.0;
            for (j, s) in row.iter_mut().enumerate() {
                *s = if j < visible { (*s * scale - max).exp() } else { 0.0 };
                total += *s;
            }
            row /= total;
        }
        attn.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    let r1 = &x + &affine(&attn, &layer.wo, &layer.bo);
    let (y1, norm1) = layer_norm(&r1, &layer.ln1_gain, &layer.ln1_bias);
    let pre = affine(&y1, &layer.w1, &layer.b1);
    let act = pre.mapv(gelu);
    let r2 = &y1 + &affine(&act, &layer.w2, &layer.b2);
    let (y2, norm2) = layer_norm(&r2, &layer.ln2_gain, &layer.ln2_bias);
    let cache = LayerCache {
        x,
        q,
        k,
        v,
        probs,
        attn,
        norm1,
        y1,
        pre,
        act,
        norm2,
    };
    (y2, cache)
}

/// Runs the encoder and keeps the intermediates for [`backward_into`].
pub fn forward(params: &EncoderParams, input: &ModelInput) -> Result<ForwardCache> {
    let cfg = &params.config;
    check_input(cfg, input)?;
    let w = &params.weights;
    let title_mask: Vec<bool> = input.domain_tags.iter().map(Option::is_some).collect();
    let (hidden, trace) = match cfg.variant {
        EncoderVariant::Transformer => {
            let t = input.token_ids.len();
            let mut x = Array2::zeros((t, cfg.d_model));
            for (i, &id) in input.token_ids.iter().enumerate() {
                let mut row = x.row_mut(i);
                row.assign(&w.token_emb.row(id as usize));
                row += &w.pos_emb.row(i);
            }
            let mut caches = Vec::with_capacity(w.layers.len());
            for layer in &w.layers {
                let (y, cache) = layer_forward(layer, x, cfg.n_heads, cfg.attention_mode);
                caches.push(cache);
                x = y;
            }
            (x.row(input.user_token_pos).to_owned(), Trace::Transformer(caches))
        }
        EncoderVariant::BagOfEmbeddings => {
            let proj = w.proj.as_ref().ok_or_else(|| Error::InvalidConfig("bag encoder without projection".into()))?;
            let mut mean = Array1::zeros(cfg.d_model);
            let mut count = 0;
            for (&id, _) in input.token_ids.iter().zip(&title_mask).filter(|(_, &m)| m) {
                mean += &w.token_emb.row(id as usize);
                count += 1;
            }
            if count == 0 {
                return Err(Error::InvalidConfig("bag encoder input has no title tokens".into()));
            }
            mean /= count as f64;
            let hidden = mean.dot(&proj.weight) + &proj.bias;
            (hidden, Trace::Bag { mean, count })
        }
    };
    let output = if cfg.normalize_output {
        let norm = hidden.dot(&hidden).sqrt().max(1e-12);
        &hidden / norm
    } else {
        hidden.clone()
    };
    if output.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("encoder output"));
    }
    Ok(ForwardCache {
        ids: input.token_ids.clone(),
        title_mask,
        readout: input.user_token_pos,
        trace,
        hidden,
        output,
    })
}

pub fn encode(params: &EncoderParams, input: &ModelInput) -> Result<Representation> {
    Ok(forward(params, input)?.output)
}

fn layer_backward(layer: &LayerWeights, grads: &mut LayerWeights, cache: &LayerCache, dy2: Array2<f64>, n_heads: usize) -> Array2<f64> {
    let d = cache.x.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let dr2 = layer_norm_backward(&dy2, &cache.norm2, &layer.ln2_gain, &mut grads.ln2_gain, &mut grads.ln2_bias);
    grads.w2 += &cache.act.t().dot(&dr2);
    grads.b2 += &dr2.sum_axis(Axis(0));
    let mut dpre = dr2.dot(&layer.w2.t());
    Zip::from(&mut dpre).and(&cache.pre).for_each(|g, &p| *g *= gelu_grad(p));
    grads.w1 += &cache.y1.t().dot(&dpre);
    grads.b1 += &dpre.sum_axis(Axis(0));
    let dy1 = dr2 + dpre.dot(&layer.w1.t());

    let dr1 = layer_norm_backward(&dy1, &cache.norm1, &layer.ln1_gain, &mut grads.ln1_gain, &mut grads.ln1_bias);
    grads.wo += &cache.attn.t().dot(&dr1);
    grads.bo += &dr1.sum_axis(Axis(0));
    let dattn = dr1.dot(&layer.wo.t());

    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (h, p) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dout = dattn.slice(cols);
        let mut dp = dout.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&dout));
        for (mut drow, prow) in dp.rows_mut().into_iter().zip(p.rows()) {
            let inner = drow.dot(&prow);
            Zip::from(&mut drow).and(&prow).for_each(|g, &pv| *g = pv * (*g - inner) * scale);
        }
        dq.slice_mut(cols).assign(&dp.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&dp.t().dot(&cache.q.slice(cols)));
    }
    let xt = cache.x.t();
    grads.wq += &xt.dot(&dq);
    grads.bq += &dq.sum_axis(Axis(0));
    grads.wk += &xt.dot(&dk);
    grads.wv += &xt.dot(&dv);
    grads.bv += &dv.sum_axis(Axis(0));
    dr1 + dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t())
}

/// Accumulates the gradient of `<upstream, output>` into `grads`.
pub fn backward_into(params: &EncoderParams, cache: &ForwardCache, upstream: ArrayView1<f64>, grads: &mut Weights) -> Result<()> {
    let cfg = &params.config;
    if upstream.len() != cfg.d_model {
        return Err(Error::DimensionMismatch {
            expected: cfg.d_model,
            actual: upstream.len(),
        });
    }
    let dhidden = if cfg.normalize_output {
        let norm = cache.hidden.dot(&cache.hidden).sqrt().max(1e-12);
        let along = cache.output.dot(&upstream);
        (&upstream - &(&cache.output * along)) / norm
    } else {
        upstream.to_owned()
    };
    let w = &params.weights;
    match &cache.trace {
        Trace::Transformer(layers) => {
            let t = cache.ids.len();
            let mut dx = Array2::zeros((t, cfg.d_model));
            dx.row_mut(cache.readout).assign(&dhidden);
            for (l, lc) in layers.iter().enumerate().rev() {
                dx = layer_backward(&w.layers[l], &mut grads.layers[l], lc, dx, cfg.n_heads);
            }
            for (i, &id) in cache.ids.iter().enumerate() {
                let row = dx.row(i);
                let mut te = grads.token_emb.row_mut(id as usize);
                te += &row;
                let mut pe = grads.pos_emb.row_mut(i);
                pe += &row;
            }
        }
        Trace::Bag { mean, count } => {
            let proj = w.proj.as_ref().expect("bag params carry a projection");
            let gp = grads.proj.as_mut().expect("bag grads carry a projection");
            let outer = mean
                .view()
                .insert_axis(Axis(1))
                .dot(&dhidden.view().insert_axis(Axis(0)));
            gp.weight += &outer;
            gp.bias += &dhidden;
            let dmean = proj.weight.dot(&dhidden) / *count as f64;
            for (&id, _) in cache.ids.iter().zip(&cache.title_mask).filter(|(_, &m)| m) {
                let mut te = grads.token_emb.row_mut(id as usize);
                te += &dmean;
            }
        }
    }
    Ok(())
}

/// Gradient of `<upstream, encode(params, input)>` with respect to every parameter.
pub fn encode_backward(params: &EncoderParams, input: &ModelInput, upstream: ArrayView1<f64>) -> Result<ParamGrads> {
    let cache = forward(params, input)?;
    let mut grads = params.weights.zeros_like();
    backward_into(params, &cache, upstream, &mut grads)?;
    Ok(ParamGrads(grads))
}

#[cfg(test)]
mod tests {
    use super::super::{init_params, EncoderConfig};
    use super::*;
    use crate::corpus::DomainId;

    fn cfg(mode: AttentionMode) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 12,
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            ffn_dim: 24,
            max_len: 12,
            attention_mode: mode,
            ..Default::default()
        }
    }

    fn input(ids: &[u32], prompt: usize) -> ModelInput {
        ModelInput {
            token_ids: ids.to_vec(),
            user_token_pos: ids.len() - 1,
            domain_tags: (0..ids.len())
                .map(|i| (i >= prompt && i + 1 < ids.len()).then_some(DomainId(0)))
                .collect(),
        }
    }

    fn hidden_states(params: &EncoderParams, ids: &[u32]) -> Vec<Array1<f64>> {
        (0..ids.len())
            .map(|p| {
                let mut inp = input(ids, 0);
                inp.user_token_pos = p;
                encode(params, &inp).unwrap()
            })
            .collect()
    }

    #[test]
    fn causal_states_ignore_later_tokens() {
        let p = init_params(&cfg(AttentionMode::Causal)).unwrap();
        let a = hidden_states(&p, &[3, 4, 5, 6, 7, 2]);
        let b = hidden_states(&p, &[3, 4, 5, 9, 10, 11, 8]);
        for pos in 0..3 {
            let diff = (&a[pos] - &b[pos]).mapv(f64::abs).sum();
            assert!(diff < 1e-12, "position {pos} changed by {diff}");
        }
        assert!((&a[3] - &b[3]).mapv(f64::abs).sum() > 1e-6);
    }

    #[test]
    fn bidirectional_states_see_later_tokens() {
        let p = init_params(&cfg(AttentionMode::Bidirectional)).unwrap();
        let a = hidden_states(&p, &[3, 4, 5, 6]);
        let b = hidden_states(&p, &[3, 4, 5, 9]);
        assert!((&a[0] - &b[0]).mapv(f64::abs).sum() > 1e-6);
    }

    /// With zero positional embeddings and one bidirectional layer the
    /// readout is a function of the token multiset only.
    #[test]
    fn bidirectional_without_positions_is_permutation_invariant() {
        let mut c = cfg(AttentionMode::Bidirectional);
        c.n_layers = 1;
        let mut p = init_params(&c).unwrap();
        p.weights.pos_emb.fill(0.0);
        let a = encode(&p, &input(&[3, 4, 5, 6, 2], 1)).unwrap();
        let b = encode(&p, &input(&[3, 6, 5, 4, 2], 1)).unwrap();
        assert!((&a - &b).mapv(f64::abs).sum() < 1e-10);

        let mut causal = p.clone();
        causal.config.attention_mode = AttentionMode::Causal;
        let a = encode(&causal, &input(&[3, 4, 5, 6, 2], 1)).unwrap();
        let b = encode(&causal, &input(&[3, 6, 5, 4, 2], 1)).unwrap();
        assert!((&a - &b).mapv(f64::abs).sum() < 1e-10, "readout at the last token sees all tokens");
        let mut first = input(&[3, 4, 5, 6, 2], 1);
        first.user_token_pos = 2;
        let mut second = input(&[3, 6, 5, 4, 2], 1);
        second.user_token_pos = 2;
        assert!((&encode(&causal, &first).unwrap() - &encode(&causal, &second).unwrap()).mapv(f64::abs).sum() > 1e-6);
    }

    #[test]
    fn bag_of_identical_embeddings() {
        let c = EncoderConfig {
            variant: EncoderVariant::BagOfEmbeddings,
            ..cfg(AttentionMode::Causal)
        };
        let mut p = init_params(&c).unwrap();
        let v = Array1::from_shape_fn(16, |i| i as f64 * 0.1 - 0.5);
        for mut row in p.weights.token_emb.rows_mut() {
            row.assign(&v);
        }
        let proj = p.weights.proj.as_ref().unwrap();
        let expect = v.dot(&proj.weight) + &proj.bias;
        for ids in [&[1u32, 3, 2][..], &[1, 3, 4, 5, 6, 7, 2]] {
            let out = encode(&p, &input(ids, 1)).unwrap();
            assert!((&out - &expect).mapv(f64::abs).sum() < 1e-12);
        }
    }

    #[test]
    fn over_length_input_rejected() {
        let p = init_params(&cfg(AttentionMode::Causal)).unwrap();
        let ids: Vec<u32> = (0..13).map(|i| i % 12).collect();
        assert!(matches!(encode(&p, &input(&ids, 0)), Err(Error::InputTooLong { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = init_params(&cfg(AttentionMode::Causal)).unwrap();
        let g = encode_backward(&p, &input(&[3, 4, 5, 2], 1), Array1::zeros(16).view()).unwrap();
        assert_eq!(g.0.max_abs(), 0.0);
    }

    #[test]
    fn unused_rows_get_no_gradient() {
        let p = init_params(&cfg(AttentionMode::Causal)).unwrap();
        let up = Array1::from_shape_fn(16, |i| (i as f64).sin());
        let g = encode_backward(&p, &input(&[3, 4, 5, 2], 1), up.view()).unwrap();
        for row in [0usize, 1, 6, 7, 8, 9, 10, 11] {
            assert!(g.0.token_emb.row(row).iter().all(|&x| x == 0.0));
        }
        for row in 4..12 {
            assert!(g.0.pos_emb.row(row).iter().all(|&x| x == 0.0));
        }
        assert!(g.0.token_emb.row(3).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn upstream_dimension_checked() {
        let p = init_params(&cfg(AttentionMode::Causal)).unwrap();
        assert!(encode_backward(&p, &input(&[3, 2], 0), Array1::zeros(3).view()).is_err());
    }
}
