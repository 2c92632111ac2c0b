//! Dense neural-network substrate: batched multilayer-perceptron
//! forward/backward passes, an adaptive-moment optimizer, soft parameter
//! blending for target networks, the dueling critic aggregation, and a
//! flat little-endian checkpoint format with a JSON header.

use std::collections::BTreeMap;
use std::io::{Read as _, Write as _};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Activation applied to the final layer. Hidden layers use the rectifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Raw affine output, for value and advantage heads.
    Identity,
    /// Elementwise logistic squash into (0, 1), for policy heads.
    Logistic,
}

/// One fully connected layer; `weights` is (input, output) so a batch of
/// row vectors maps as `x · W + b`.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// A multilayer perceptron with rectifier hidden layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub output: OutputActivation,
}

/// Activations cached by a forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Layer inputs: the batch itself, then each hidden activation.
    inputs: Vec<Array2<f64>>,
    /// Final post-activation output.
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Clone, Debug)]
pub struct MlpGradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl MlpGradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGradients {
            layers: mlp
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGradients, scale: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.scaled_add(scale, ow);
            b.scaled_add(scale, ob);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            *w *= factor;
            *b *= factor;
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Mlp {
    /// Fresh network with weights uniform in `±1/sqrt(fan_in)` and zero
    /// biases. `sizes` lists input, hidden, and output widths in order.
    pub fn new<R: Rng>(sizes: &[usize], output: OutputActivation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output widths");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                DenseLayer {
                    weights: Array2::from_shape_fn((w[0], w[1]), |_| rng.gen_range(-bound..bound)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Mlp { layers, output }
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer { weights: Array2::zeros((w[0], w[1])), bias: Array1::zeros(w[1]) })
            .collect();
        Mlp { layers, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    /// Batched forward pass over row-vector inputs, caching activations.
    pub fn forward(&self, input: &Array2<f64>) -> Result<ForwardCache> {
        if input.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: input.ncols() });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights) + &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            } else {
                match self.output {
                    OutputActivation::Identity => {}
                    OutputActivation::Logistic => z.mapv_inplace(logistic),
                }
            }
            inputs.push(current);
            current = z;
        }
        Ok(ForwardCache { inputs, output: current })
    }

    /// Forward pass discarding the cache.
    pub fn infer(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(input)?.output)
    }

    /// Single-row convenience wrapper producing a plain vector.
    pub fn infer_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let row = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .expect("row shape is consistent by construction");
        Ok(self.infer(&row)?.row(0).to_vec())
    }

    /// Exact reverse-mode gradients of the forward map. `output_gradient`
    /// holds ∂L/∂output per batch row; parameter gradients are summed over
    /// the batch, and the gradient w.r.t. the input batch is returned too.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_gradient: &Array2<f64>,
    ) -> (MlpGradients, Array2<f64>) {
        let mut grads = MlpGradients::zeros_like(self);
        let mut delta = match self.output {
            OutputActivation::Identity => output_gradient.clone(),
            OutputActivation::Logistic => output_gradient * &cache.output.mapv(|y| y * (1.0 - y)),
        };
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            grads.layers[i].0 = input.t().dot(&delta);
            grads.layers[i].1 = delta.sum_axis(Axis(0));
            let mut upstream = delta.dot(&self.layers[i].weights.t());
            if i > 0 {
                // Rectifier mask: the cached layer input equals the previous
                // layer's post-activation, which is zero exactly where the
                // rectifier clipped.
                upstream.zip_mut_with(input, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = upstream;
        }
        (grads, delta)
    }

    /// Soft target blend: `self ← rate·source + (1 − rate)·self`.
    pub fn blend_from(&mut self, source: &Mlp, rate: f64) {
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            dst.weights.zip_mut_with(&src.weights, |d, &s| *d = rate * s + (1.0 - rate) * *d);
            dst.bias.zip_mut_with(&src.bias, |d, &s| *d = rate * s + (1.0 - rate) * *d);
        }
    }

    fn layer_shapes(&self) -> Vec<[usize; 2]> {
        self.layers.iter().map(|l| [l.weights.nrows(), l.weights.ncols()]).collect()
    }
}

/// Adaptive-moment optimizer with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: Vec<(Array2<f64>, Array1<f64>)>,
    second: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Adam {
    pub fn new(mlp: &Mlp, learning_rate: f64) -> Self {
        let zeros: Vec<_> = mlp
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
            .collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: zeros.clone(),
            second: zeros,
        }
    }

    /// Applies one descent step in place.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &MlpGradients) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..mlp.layers.len() {
            let (gw, gb) = &grads.layers[i];
            let (mw, mb) = &mut self.moments[i];
            let (vw, vb) = &mut self.second[i];
            mw.zip_mut_with(gw, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            mb.zip_mut_with(gb, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            vw.zip_mut_with(gw, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            vb.zip_mut_with(gb, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let layer = &mut mlp.layers[i];
            for ((p, m), v) in layer.weights.iter_mut().zip(mw.iter()).zip(vw.iter()) {
                *p -= self.learning_rate * (m / bc1) / ((v / bc2).sqrt() + self.epsilon);
            }
            for ((p, m), v) in layer.bias.iter_mut().zip(mb.iter()).zip(vb.iter()) {
                *p -= self.learning_rate * (m / bc1) / ((v / bc2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Critic split into a state-value head over `observation ⊕ weights` and an
/// advantage head over `observation ⊕ own action ⊕ others' actions ⊕ weights`.
#[derive(Clone, Debug)]
pub struct DuelingCritic {
    pub advantage: Mlp,
    pub value: Mlp,
}

impl DuelingCritic {
    pub fn new<R: Rng>(
        obs_dim: usize,
        own_action_dim: usize,
        others_action_dim: usize,
        weight_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let adv_in = obs_dim + own_action_dim + others_action_dim + weight_dim;
        let val_in = obs_dim + weight_dim;
        let mut adv_sizes = vec![adv_in];
        adv_sizes.extend_from_slice(hidden);
        adv_sizes.push(1);
        let mut val_sizes = vec![val_in];
        val_sizes.extend_from_slice(hidden);
        val_sizes.push(1);
        DuelingCritic {
            advantage: Mlp::new(&adv_sizes, OutputActivation::Identity, rng),
            value: Mlp::new(&val_sizes, OutputActivation::Identity, rng),
        }
    }

    pub fn blend_from(&mut self, source: &DuelingCritic, rate: f64) {
        self.advantage.blend_from(&source.advantage, rate);
        self.value.blend_from(&source.value, rate);
    }
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

/// Scalar critic output using supplied baseline draws:
/// `Q = V(o, w) + A(o, a, ·, w) − mean_n A(o, aⁿ, ·, w)`.
///
/// The caller fixes the draws once per training step so every compared
/// action sees the same baseline.
pub fn dueling_q_with_draws(
    critic: &DuelingCritic,
    observation: &[f64],
    action: &[f64],
    others_actions: &[f64],
    weights: &[f64],
    draws: &[Vec<f64>],
) -> Result<f64> {
    assert!(!draws.is_empty(), "need at least one baseline draw");
    let value = critic.value.infer_one(&concat(&[observation, weights]))?[0];
    let rows = 1 + draws.len();
    let width = observation.len() + action.len() + others_actions.len() + weights.len();
    let mut batch = Array2::zeros((rows, width));
    let fill = |row: &mut ndarray::ArrayViewMut1<f64>, own: &[f64]| {
        let parts = concat(&[observation, own, others_actions, weights]);
        for (dst, src) in row.iter_mut().zip(parts) {
            *dst = src;
        }
    };
    fill(&mut batch.row_mut(0), action);
    for (i, draw) in draws.iter().enumerate() {
        fill(&mut batch.row_mut(i + 1), draw);
    }
    let adv = critic.advantage.infer(&batch)?;
    let baseline = adv.column(0).iter().skip(1).sum::<f64>() / draws.len() as f64;
    Ok(value + adv[[0, 0]] - baseline)
}

/// Draws `n_random` uniform actions from the unit cube for the dueling
/// baseline.
pub fn sample_baseline_draws<R: Rng>(action_dim: usize, n_random: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n_random).map(|_| (0..action_dim).map(|_| rng.gen_range(0.0..1.0)).collect()).collect()
}

/// Convenience form of [`dueling_q_with_draws`] that samples its own
/// baseline actions.
pub fn dueling_q<R: Rng>(
    critic: &DuelingCritic,
    observation: &[f64],
    action: &[f64],
    others_actions: &[f64],
    weights: &[f64],
    n_random: usize,
    rng: &mut R,
) -> Result<f64> {
    assert!(n_random >= 1, "need at least one baseline draw");
    let draws = sample_baseline_draws(action.len(), n_random, rng);
    dueling_q_with_draws(critic, observation, action, others_actions, weights, &draws)
}

#[derive(Serialize, Deserialize)]
struct NetHeader {
    name: String,
    output: OutputActivation,
    layers: Vec<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    nets: Vec<NetHeader>,
}

/// Writes named networks as a JSON shape header, a newline, then every
/// parameter as little-endian 64-bit floats: per net, per layer, weights in
/// row-major order followed by the bias.
pub fn save_checkpoint(path: &Path, nets: &BTreeMap<String, Mlp>) -> Result<()> {
    let header = CheckpointHeader {
        nets: nets
            .iter()
            .map(|(name, mlp)| NetHeader {
                name: name.clone(),
                output: mlp.output,
                layers: mlp.layer_shapes(),
            })
            .collect(),
    };
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer(&mut file, &header)?;
    file.write_all(b"\n")?;
    let mut buf = Vec::new();
    for mlp in nets.values() {
        for layer in &mlp.layers {
            for &v in layer.weights.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for &v in layer.bias.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<BTreeMap<String, Mlp>> {
    let bytes = std::fs::read(path)?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MissingArtifact(format!("checkpoint header in {}", path.display())))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])?;
    let mut body = &bytes[split + 1..];
    let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut chunk = [0u8; 8];
            body.read_exact(&mut chunk)
                .map_err(|_| Error::MissingArtifact(format!("checkpoint body in {}", path.display())))?;
            out.push(f64::from_le_bytes(chunk));
        }
        Ok(out)
    };
    let mut nets = BTreeMap::new();
    for net in header.nets {
        let mut layers = Vec::with_capacity(net.layers.len());
        for [rows, cols] in net.layers {
            let weights = Array2::from_shape_vec((rows, cols), read_f64s(rows * cols)?)
                .expect("shape matches read length");
            let bias = Array1::from_vec(read_f64s(cols)?);
            layers.push(DenseLayer { weights, bias });
        }
        nets.insert(net.name, Mlp { layers, output: net.output });
    }
    Ok(nets)
}
