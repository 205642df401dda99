//! A small feed-forward network with optional sinusoidal time conditioning,
//! plus the AdamW optimizer and a minibatch training loop on top of the tape.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::rng::{Purpose, Stream};
use crate::tensor::{matmul_into, silu, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Silu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Silu => silu(v),
        }
    }

    fn apply_var<'t>(self, v: Var<'t>) -> Var<'t> {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.relu(),
            Activation::Silu => v.silu(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[in, out]`, row-major.
    pub weight: Tensor,
    /// `[out]`.
    pub bias: Tensor,
    pub act: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Parameters of a multilayer perceptron. When `time_embed` is set, the
/// network input is the data vector concatenated with a sinusoidal embedding
/// of the step index.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
    time_embed: Option<usize>,
}

/// Sinusoidal embedding of a step index, `dim` even.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let angle = t as f64 * freq;
        out[2 * k] = angle.sin();
        out[2 * k + 1] = angle.cos();
    }
    out
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>, time_embed: Option<usize>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("mlp needs at least one layer".into()));
        }
        if let Some(d) = time_embed {
            if d == 0 || d % 2 != 0 {
                return Err(Error::InvalidParameter(format!(
                    "time embedding dimension must be even and positive, got {d}"
                )));
            }
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weight.shape().len() != 2 || layer.bias.len() != layer.output_dim() {
                return Err(Error::shape("mlp", format!("layer {i} weight/bias disagree")));
            }
            if i > 0 && layers[i - 1].output_dim() != layer.input_dim() {
                return Err(Error::shape(
                    "mlp",
                    format!(
                        "layer {} outputs {} but layer {i} expects {}",
                        i - 1,
                        layers[i - 1].output_dim(),
                        layer.input_dim()
                    ),
                ));
            }
            layer.weight.check_finite("mlp weight")?;
            layer.bias.check_finite("mlp bias")?;
        }
        if layers[0].input_dim() <= time_embed.unwrap_or(0) {
            return Err(Error::shape("mlp", "first layer narrower than time embedding"));
        }
        Ok(MlpParams { layers, time_embed })
    }

    /// Randomly initialised network with layer widths `sizes` (data input
    /// first). Hidden layers use `hidden`; the last layer is linear.
    pub fn init(
        sizes: &[usize],
        hidden: Activation,
        time_embed: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidParameter("mlp needs at least two sizes".into()));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, pair) in sizes.windows(2).enumerate() {
            let fan_in = pair[0] + if i == 0 { time_embed.unwrap_or(0) } else { 0 };
            let fan_out = pair[1];
            let last = i == sizes.len() - 2;
            let std = if last {
                (1.0 / fan_in as f64).sqrt()
            } else {
                (2.0 / fan_in as f64).sqrt()
            };
            let mut stream = Stream::for_purpose(seed, Purpose::ParamInit, i as u64);
            let w: Vec<f64> = stream
                .normals(fan_in * fan_out)
                .into_iter()
                .map(|v| v * std)
                .collect();
            layers.push(Layer {
                weight: Tensor::matrix(fan_in, fan_out, w)?,
                bias: Tensor::zeros(&[fan_out]),
                act: if last { Activation::Identity } else { hidden },
            });
        }
        Self::new(layers, time_embed)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn time_embed(&self) -> Option<usize> {
        self.time_embed
    }

    /// Dimension of the data input, excluding any time embedding.
    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim() - self.time_embed.unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Layer::output_dim).unwrap_or(0)
    }

    /// Weights and biases interleaved: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    /// Replaces parameters from the `tensors()` layout.
    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != 2 * self.layers.len() {
            return Err(Error::shape("mlp", "parameter count mismatch"));
        }
        let mut it = tensors.into_iter();
        for layer in &mut self.layers {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            if w.shape() != layer.weight.shape() || b.shape() != layer.bias.shape() {
                return Err(Error::shape("mlp", "parameter shape mismatch"));
            }
            layer.weight = w;
            layer.bias = b;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn assemble_input(&self, x: &[f64], t: Option<usize>) -> Result<Vec<f64>> {
        ensure_dim("mlp_forward", self.input_dim(), x.len())?;
        match (self.time_embed, t) {
            (None, _) => Ok(x.to_vec()),
            (Some(d), Some(t)) => {
                let mut input = x.to_vec();
                input.extend(time_embedding(t, d));
                Ok(input)
            }
            (Some(_), None) => Err(Error::InvalidParameter(
                "time-conditioned network needs a step index".into(),
            )),
        }
    }

    /// Forward pass for a single instance without recording a tape.
    pub fn forward(&self, x: &[f64], t: Option<usize>) -> Result<Vec<f64>> {
        let mut h = self.assemble_input(x, t)?;
        for layer in &self.layers {
            let (k, c) = (layer.input_dim(), layer.output_dim());
            let mut out = vec![0.0; c];
            matmul_into(&h, layer.weight.data(), &mut out, 1, k, c);
            for (o, b) in out.iter_mut().zip(layer.bias.data()) {
                *o = layer.act.apply(*o + b);
            }
            h = out;
        }
        Ok(h)
    }

    /// Places every parameter on the tape, in `tensors()` order.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors().into_iter().map(|t| tape.leaf(t)).collect()
    }

    /// Batched forward pass on the tape. `x` is `[batch, input_dim]`; `steps`
    /// supplies one step index per row when the network is time-conditioned.
    pub fn forward_tape<'t>(
        &self,
        params: &[Var<'t>],
        x: Var<'t>,
        steps: Option<&[usize]>,
    ) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::shape(
                "mlp_forward",
                format!("expected [batch, {}], got {shape:?}", self.input_dim()),
            ));
        }
        let mut h = match (self.time_embed, steps) {
            (None, _) => x,
            (Some(d), Some(steps)) => {
                ensure_dim("mlp_forward", shape[0], steps.len())?;
                let emb: Vec<f64> = steps.iter().flat_map(|&t| time_embedding(t, d)).collect();
                let emb = x.tape().leaf(Tensor::matrix(shape[0], d, emb)?);
                Var::concat(&[x, emb])?
            }
            (Some(_), None) => {
                return Err(Error::InvalidParameter(
                    "time-conditioned network needs step indices".into(),
                ))
            }
        };
        for (layer, pair) in self.layers.iter().zip(params.chunks(2)) {
            h = layer.act.apply_var(h.matmul(&pair[0])?.add_row(&pair[1])?);
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("adamw hyperparameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamWState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamWState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One AdamW update with bias correction and decoupled weight decay:
/// `w ← w − lr·(m̂/(√v̂ + eps) + wd·w)`.
pub fn adamw_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamWState,
    opt: &AdamW,
) -> Result<()> {
    opt.validate()?;
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adamw_step", "parameter/gradient count mismatch"));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adamw_step",
                format!("{:?} vs {:?}", p.shape(), g.shape()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let (pd, gd) = (p.data_mut(), g.data());
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            md[i] = opt.beta1 * md[i] + (1.0 - opt.beta1) * gd[i];
            vd[i] = opt.beta2 * vd[i] + (1.0 - opt.beta2) * gd[i] * gd[i];
            let m_hat = md[i] / c1;
            let v_hat = vd[i] / c2;
            pd[i] -= opt.lr * (m_hat / (v_hat.sqrt() + opt.eps) + opt.weight_decay * pd[i]);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamW,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 64,
            optimizer: AdamW::default(),
        }
    }
}

/// Runs `cfg.steps` AdamW updates. `loss_fn(tape, bound_params, step,
/// stream)` builds the scalar minibatch loss. Returns the loss history.
pub fn train_mlp<F>(
    net: &mut MlpParams,
    cfg: &TrainConfig,
    seed: u64,
    stream_index: u64,
    mut loss_fn: F,
) -> Result<Vec<f64>>
where
    F: for<'t> FnMut(&'t Tape, &[Var<'t>], &MlpParams, &mut Stream) -> Result<Var<'t>>,
{
    cfg.optimizer.validate()?;
    let mut params = net.tensors();
    let mut state = AdamWState::new(&params);
    let mut stream = Stream::for_purpose(seed, Purpose::Training, stream_index);
    let mut history = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = loss_fn(&tape, &vars, net, &mut stream)?;
        history.push(loss.item());
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = vars.iter().map(|v| grads.wrt(*v)).collect();
        adamw_step(&mut params, &grads, &mut state, &cfg.optimizer)?;
        net.set_tensors(params.clone())?;
    }
    for p in &params {
        p.check_finite("trained parameters")?;
    }
    Ok(history)
}
