use super::{GradientSet, ModelKind, ModelParams};
use crate::error::{Error, Result};

/// One model input: a feature vector (MLP), a sequence of feature vectors
/// (RNN), or a token sequence fed to an RNN as one-hot vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Vector(Vec<f64>),
    Sequence(Vec<Vec<f64>>),
    Tokens(Vec<usize>),
}

/// Intermediate values kept by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub enum Cache {
    Mlp {
        /// `x_0 .. x_L`
        activations: Vec<Vec<f64>>,
        /// Pre-activations of layers `1..=L`.
        pre: Vec<Vec<f64>>,
    },
    Rnn {
        inputs: Vec<Vec<f64>>,
        /// `h_0 .. h_L`
        hidden: Vec<Vec<f64>>,
        pre: Vec<Vec<f64>>,
    },
}

fn check_kind(params: &ModelParams, kind: ModelKind) -> Result<()> {
    if params.spec.kind != kind {
        return Err(Error::shape(format!(
            "{kind:?} forward called on {:?} parameters",
            params.spec.kind
        )));
    }
    Ok(())
}

/// `x_l = act(W_l x_{l-1})` for every hidden layer, then the readout.
/// Returns logits (readout output before any softmax).
pub fn mlp_forward(params: &ModelParams, x: &[f64]) -> Result<(Vec<f64>, Cache)> {
    check_kind(params, ModelKind::Mlp)?;
    let spec = &params.spec;
    if x.len() != spec.input_dim {
        return Err(Error::shape(format!(
            "input has length {}, model expects {}",
            x.len(),
            spec.input_dim
        )));
    }
    let act = spec.hidden_activation;
    let mut activations = Vec::with_capacity(spec.layers + 1);
    let mut pre = Vec::with_capacity(spec.layers);
    activations.push(x.to_vec());
    for w in &params.matrices[..spec.layers] {
        let z = w.matvec(activations.last().unwrap());
        activations.push(z.iter().map(|&a| act.apply(a)).collect());
        pre.push(z);
    }
    let logits = params.matrices[spec.layers].matvec(activations.last().unwrap());
    Ok((logits, Cache::Mlp { activations, pre }))
}

/// `h_l = act(W_x x_l + W_h h_{l-1})` with `h_0 = 0`, then the readout of
/// `h_L`.
pub fn rnn_forward(params: &ModelParams, seq: &[Vec<f64>]) -> Result<(Vec<f64>, Cache)> {
    check_kind(params, ModelKind::Rnn)?;
    let spec = &params.spec;
    if seq.is_empty() {
        return Err(Error::input("empty input sequence"));
    }
    if let Some(bad) = seq.iter().find(|x| x.len() != spec.input_dim) {
        return Err(Error::shape(format!(
            "sequence element has length {}, model expects {}",
            bad.len(),
            spec.input_dim
        )));
    }
    let act = spec.hidden_activation;
    let (wx, wh) = (&params.matrices[0], &params.matrices[1]);
    let mut hidden = Vec::with_capacity(seq.len() + 1);
    let mut pre = Vec::with_capacity(seq.len());
    hidden.push(vec![0.0; spec.hidden_dim]);
    for x in seq {
        let mut z = wx.matvec(x);
        wh.matvec_acc(hidden.last().unwrap(), &mut z);
        hidden.push(z.iter().map(|&a| act.apply(a)).collect());
        pre.push(z);
    }
    let logits = params.matrices[2].matvec(hidden.last().unwrap());
    Ok((
        logits,
        Cache::Rnn {
            inputs: seq.to_vec(),
            hidden,
            pre,
        },
    ))
}

pub fn one_hot(tokens: &[usize], dim: usize) -> Result<Vec<Vec<f64>>> {
    tokens
        .iter()
        .map(|&t| {
            if t >= dim {
                return Err(Error::shape(format!(
                    "token {t} outside vocabulary of {dim}"
                )));
            }
            let mut v = vec![0.0; dim];
            v[t] = 1.0;
            Ok(v)
        })
        .collect()
}

/// Dispatches on the input variant.
pub fn forward(params: &ModelParams, input: &Input) -> Result<(Vec<f64>, Cache)> {
    match input {
        Input::Vector(x) => mlp_forward(params, x),
        Input::Sequence(seq) => rnn_forward(params, seq),
        Input::Tokens(tokens) => rnn_forward(params, &one_hot(tokens, params.spec.input_dim)?),
    }
}

/// Exact gradient of a scalar loss with respect to every weight, given
/// `output_grad = dLoss/dlogits`.
pub fn backward(params: &ModelParams, cache: &Cache, output_grad: &[f64]) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(params);
    backward_into(params, cache, output_grad, &mut grads)?;
    Ok(grads)
}

/// [`backward`] that adds into an existing gradient, for summing a batch
/// without a temporary per sample.
pub fn backward_into(
    params: &ModelParams,
    cache: &Cache,
    output_grad: &[f64],
    grads: &mut GradientSet,
) -> Result<()> {
    let spec = &params.spec;
    if grads.matrices.len() != params.matrices.len()
        || grads
            .matrices
            .iter()
            .zip(&params.matrices)
            .any(|(g, w)| g.shape() != w.shape())
    {
        return Err(Error::shape(
            "gradient accumulator does not match parameters",
        ));
    }
    if output_grad.len() != spec.output_dim {
        return Err(Error::shape(format!(
            "output gradient has length {}, model output is {}",
            output_grad.len(),
            spec.output_dim
        )));
    }
    let act = spec.hidden_activation;
    match cache {
        Cache::Mlp { activations, pre } => {
            if spec.kind != ModelKind::Mlp || pre.len() != spec.layers {
                return Err(Error::shape("cache does not match MLP parameters"));
            }
            let l = spec.layers;
            grads.matrices[l].add_outer(output_grad, &activations[l]);
            let mut dx = params.matrices[l].matvec_t(output_grad);
            for layer in (0..l).rev() {
                let dz: Vec<f64> = dx
                    .iter()
                    .zip(&pre[layer])
                    .map(|(&g, &z)| g * act.derivative(z))
                    .collect();
                grads.matrices[layer].add_outer(&dz, &activations[layer]);
                if layer > 0 {
                    dx = params.matrices[layer].matvec_t(&dz);
                }
            }
        }
        Cache::Rnn {
            inputs,
            hidden,
            pre,
        } => {
            if spec.kind != ModelKind::Rnn || hidden.len() != inputs.len() + 1 {
                return Err(Error::shape("cache does not match RNN parameters"));
            }
            let steps = inputs.len();
            grads.matrices[2].add_outer(output_grad, &hidden[steps]);
            let mut dh = params.matrices[2].matvec_t(output_grad);
            for t in (0..steps).rev() {
                let dz: Vec<f64> = dh
                    .iter()
                    .zip(&pre[t])
                    .map(|(&g, &z)| g * act.derivative(z))
                    .collect();
                grads.matrices[0].add_outer(&dz, &inputs[t]);
                grads.matrices[1].add_outer(&dz, &hidden[t]);
                if t > 0 {
                    dh = params.matrices[1].matvec_t(&dz);
                }
            }
        }
    }
    Ok(())
}

/// Central-difference gradient of `loss` at `params`, entry by entry.
pub fn finite_diff_grad<F>(loss: F, params: &ModelParams, eps: f64) -> GradientSet
where
    F: Fn(&ModelParams) -> f64,
{
    let mut probe = params.clone();
    let mut grads = GradientSet::zeros_like(params);
    for (k, g) in grads.matrices.iter_mut().enumerate() {
        for idx in 0..g.as_slice().len() {
            let orig = probe.matrices[k].as_slice()[idx];
            probe.matrices[k].as_mut_slice()[idx] = orig + eps;
            let up = loss(&probe);
            probe.matrices[k].as_mut_slice()[idx] = orig - eps;
            let down = loss(&probe);
            probe.matrices[k].as_mut_slice()[idx] = orig;
            g.as_mut_slice()[idx] = (up - down) / (2.0 * eps);
        }
    }
    grads
}

/// `max |a - n| / (|a| + 1e-8)` over all entries.
pub fn max_relative_error(analytic: &GradientSet, numeric: &GradientSet) -> f64 {
    analytic
        .flatten()
        .iter()
        .zip(numeric.flatten())
        .map(|(&a, n)| (a - n).abs() / (a.abs() + 1e-8))
        .fold(0.0, f64::max)
}

/// Convenience: forward pass that also checks the model kind matches `input`.
pub fn predict(params: &ModelParams, input: &Input) -> Result<Vec<f64>> {
    forward(params, input).map(|(out, _)| out)
}
