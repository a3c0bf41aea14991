use crate::error::{Error, Result};
use crate::nn::params::{Gradient, ParamStore};
use crate::rng::Rng;
use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative as a function of the pre-activation.
    fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Architecture of a fully connected network.
///
/// `hidden_dims` may be empty, in which case the network is a single
/// linear map with `output_activation` applied on top.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: &[usize],
        output_dim: usize,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::Shape(format!(
                "mlp dims must be positive, got input {input_dim} output {output_dim}"
            )));
        }
        if hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape("hidden layer of width 0".to_string()));
        }
        if output_activation == Activation::Relu {
            return Err(Error::Config(
                "relu output activation is not supported".to_string(),
            ));
        }
        Ok(MlpSpec {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            hidden_activation,
            output_activation,
        })
    }

    /// `(fan_in, fan_out)` per affine layer, input to output order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    /// Parameter layout: `l{i}.w` is `[fan_out, fan_in]` row-major, `l{i}.b` is `[fan_out]`.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            out.push((format!("l{i}.w"), vec![fan_out, fan_in]));
            out.push((format!("l{i}.b"), vec![fan_out]));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| fan_out * fan_in + fan_out)
            .sum()
    }

    fn activation_for_layer(&self, layer: usize) -> Activation {
        if layer < self.hidden_dims.len() {
            self.hidden_activation
        } else {
            self.output_activation
        }
    }
}

/// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
pub fn init_params(spec: &MlpSpec, rng: &mut Rng) -> ParamStore {
    let mut ps = ParamStore::zeros(&spec.layout());
    for (i, (fan_in, _)) in spec.layer_dims().into_iter().enumerate() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = ps.block_mut(&format!("l{i}.w")).unwrap();
        for v in w {
            *v = rng.gen_range(-bound..=bound);
        }
    }
    ps
}

fn check_compat(spec: &MlpSpec, params: &ParamStore, x: &[f64]) -> Result<()> {
    if x.len() != spec.input_dim {
        return Err(Error::Shape(format!(
            "input has {} entries but spec expects {}",
            x.len(),
            spec.input_dim
        )));
    }
    if params.len() != spec.param_count() {
        return Err(Error::Shape(format!(
            "param store has {} values but spec needs {}",
            params.len(),
            spec.param_count()
        )));
    }
    Ok(())
}

struct Trace {
    /// Post-activation per layer, `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation per affine layer.
    pre: Vec<Vec<f64>>,
}

fn forward_trace(spec: &MlpSpec, params: &ParamStore, x: &[f64]) -> Trace {
    let dims = spec.layer_dims();
    let mut inputs = Vec::with_capacity(dims.len() + 1);
    let mut pre = Vec::with_capacity(dims.len());
    inputs.push(x.to_vec());
    for (i, (fan_in, fan_out)) in dims.into_iter().enumerate() {
        let w = params.block(&format!("l{i}.w")).unwrap();
        let b = params.block(&format!("l{i}.b")).unwrap();
        let cur = inputs.last().unwrap();
        let mut z = vec![0.0; fan_out];
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            let mut acc = b[o];
            for (wv, xv) in row.iter().zip(cur) {
                acc += wv * xv;
            }
            *zo = acc;
        }
        let act = spec.activation_for_layer(i);
        let out = z.iter().map(|&v| act.apply(v)).collect();
        pre.push(z);
        inputs.push(out);
    }
    Trace { inputs, pre }
}

pub fn forward(spec: &MlpSpec, params: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
    check_compat(spec, params, x)?;
    Ok(forward_trace(spec, params, x).inputs.pop().unwrap())
}

/// Backprop of `upstream . output` through the network.
///
/// Returns `(param_gradient, input_gradient)`.
pub fn backward(
    spec: &MlpSpec,
    params: &ParamStore,
    x: &[f64],
    upstream: &[f64],
) -> Result<(Gradient, Vec<f64>)> {
    check_compat(spec, params, x)?;
    if upstream.len() != spec.output_dim {
        return Err(Error::Shape(format!(
            "upstream has {} entries but spec outputs {}",
            upstream.len(),
            spec.output_dim
        )));
    }
    let trace = forward_trace(spec, params, x);
    let dims = spec.layer_dims();
    let mut grad = Gradient::zeros_like(params);

    let last = dims.len() - 1;
    let mut delta: Vec<f64> = upstream
        .iter()
        .zip(&trace.pre[last])
        .map(|(u, &z)| u * spec.activation_for_layer(last).deriv(z))
        .collect();

    for i in (0..dims.len()).rev() {
        let (fan_in, fan_out) = dims[i];
        let w = params.block(&format!("l{i}.w")).unwrap();
        let layer_in = &trace.inputs[i];

        {
            let we = params
                .layout()
                .iter()
                .find(|e| e.name == format!("l{i}.w"))
                .unwrap();
            let be = params
                .layout()
                .iter()
                .find(|e| e.name == format!("l{i}.b"))
                .unwrap();
            for o in 0..fan_out {
                let d = delta[o];
                grad.values[be.offset + o] += d;
                let row = &mut grad.values[we.offset + o * fan_in..we.offset + (o + 1) * fan_in];
                for (g, xv) in row.iter_mut().zip(layer_in) {
                    *g += d * xv;
                }
            }
        }

        let mut down = vec![0.0; fan_in];
        for o in 0..fan_out {
            let d = delta[o];
            let row = &w[o * fan_in..(o + 1) * fan_in];
            for (dv, wv) in down.iter_mut().zip(row) {
                *dv += d * wv;
            }
        }
        if i > 0 {
            let act = spec.activation_for_layer(i - 1);
            for (dv, &z) in down.iter_mut().zip(&trace.pre[i - 1]) {
                *dv *= act.deriv(z);
            }
        }
        delta = down;
    }

    Ok((grad, delta))
}

fn central_diff(spec: &MlpSpec, params: &ParamStore, x: &[f64], upstream: &[f64], step: f64) -> Gradient {
    let mut probe = params.clone();
    let mut fd = Gradient::zeros_like(params);
    for k in 0..params.len() {
        let orig = probe.values()[k];
        probe.values_mut()[k] = orig + step;
        let plus: f64 = forward(spec, &probe, x)
            .unwrap()
            .iter()
            .zip(upstream)
            .map(|(o, u)| o * u)
            .sum();
        probe.values_mut()[k] = orig - step;
        let minus: f64 = forward(spec, &probe, x)
            .unwrap()
            .iter()
            .zip(upstream)
            .map(|(o, u)| o * u)
            .sum();
        probe.values_mut()[k] = orig;
        fd.values[k] = (plus - minus) / (2.0 * step);
    }
    fd
}

/// Max relative error between `grad` and a central-difference estimate.
pub fn fd_error_against(
    spec: &MlpSpec,
    params: &ParamStore,
    x: &[f64],
    upstream: &[f64],
    step: f64,
    grad: &Gradient,
) -> Result<f64> {
    check_compat(spec, params, x)?;
    let fd = central_diff(spec, params, x, upstream, step);
    let mut worst = 0.0f64;
    for (a, b) in grad.values.iter().zip(&fd.values) {
        let scale = a.abs().max(b.abs()).max(1e-8);
        worst = worst.max((a - b).abs() / scale);
    }
    Ok(worst)
}

/// Checks [`backward`] against central differences; returns the max relative error.
pub fn finite_diff_check(
    spec: &MlpSpec,
    params: &ParamStore,
    x: &[f64],
    upstream: &[f64],
    step: f64,
) -> Result<f64> {
    let (grad, _) = backward(spec, params, x, upstream)?;
    fd_error_against(spec, params, x, upstream, step, &grad)
}
