//! Network definitions and parameter management for the embedding function
//! `g` and the prediction function `h`.
//!
//! The two functions are plain layer stacks evaluated on the autodiff
//! graph. In the Siamese setup the source and target streams evaluate the
//! same `g`; with weight sharing disabled each stream owns a structurally
//! identical parameter set.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize },
    MaxPool2d,
    Relu,
    Flatten,
    Softmax,
}

impl LayerSpec {
    fn name(&self) -> String {
        match self {
            LayerSpec::Dense { input, output } => format!("dense {input}->{output}"),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => format!("conv2d {in_channels}->{out_channels} k{kernel}"),
            LayerSpec::MaxPool2d => "maxpool2d".into(),
            LayerSpec::Relu => "relu".into(),
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Softmax => "softmax".into(),
        }
    }

    /// Output shape for one sample, or `None` when the input does not fit.
    fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match self {
            LayerSpec::Dense { input: fan_in, output } => match input {
                &[d] if d == *fan_in => Some(vec![*output]),
                _ => None,
            },
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => match input {
                &[c, h, w] if c == *in_channels && h >= *kernel && w >= *kernel => {
                    Some(vec![*out_channels, h - kernel + 1, w - kernel + 1])
                }
                _ => None,
            },
            LayerSpec::MaxPool2d => match input {
                &[c, h, w] if h >= 2 && w >= 2 => Some(vec![c, h / 2, w / 2]),
                _ => None,
            },
            LayerSpec::Relu | LayerSpec::Softmax => {
                if input.is_empty() {
                    None
                } else {
                    Some(input.to_vec())
                }
            }
            LayerSpec::Flatten => Some(vec![input.iter().product()]),
        }
    }

    /// Shapes of this layer's parameter tensors (weights then bias).
    fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::Dense { input, output } => vec![vec![*input, *output], vec![*output]],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => vec![
                vec![*out_channels, *in_channels, *kernel, *kernel],
                vec![*out_channels],
            ],
            _ => vec![],
        }
    }

    fn fan_in_out(&self) -> Option<(usize, usize)> {
        match self {
            LayerSpec::Dense { input, output } => Some((*input, *output)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => Some((in_channels * kernel * kernel, out_channels * kernel * kernel)),
            _ => None,
        }
    }
}

/// A layer stack plus the per-sample input shape it consumes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        NetworkSpec { input_shape, layers }
    }

    /// Per-sample output shape; errors name the two layers that fail to
    /// compose.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        let mut prev = format!("input {:?}", self.input_shape);
        for layer in &self.layers {
            match layer.output_shape(&shape) {
                Some(next) => {
                    prev = layer.name();
                    shape = next;
                }
                None => {
                    return Err(Error::LayerCompose {
                        from: prev,
                        to: layer.name(),
                        shape,
                    })
                }
            }
        }
        Ok(shape)
    }

    /// Flat width of the output, e.g. the embedding dimension of `g`.
    pub fn output_width(&self) -> Result<usize> {
        Ok(self.output_shape()?.iter().product())
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .flat_map(|l| l.param_shapes())
            .collect()
    }

    /// The digit-task embedding: two 5x5 convolutions with 6 and 16
    /// filters, each followed by 2x2 max-pooling, then dense layers of 120
    /// and 84 units. `side` is the square input resolution.
    pub fn lenet_embedding(side: usize) -> Result<Self> {
        if side < 16 {
            return Err(Error::InvalidArgument(format!(
                "lenet embedding needs at least 16x16 input, got {side}x{side}"
            )));
        }
        let after_conv1 = (side - 4) / 2;
        let after_conv2 = (after_conv1 - 4) / 2;
        let flat = 16 * after_conv2 * after_conv2;
        Ok(NetworkSpec::new(
            vec![1, side, side],
            vec![
                LayerSpec::Conv2d { in_channels: 1, out_channels: 6, kernel: 5 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d,
                LayerSpec::Conv2d { in_channels: 6, out_channels: 16, kernel: 5 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d,
                LayerSpec::Flatten,
                LayerSpec::Dense { input: flat, output: 120 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 120, output: 84 },
            ],
        ))
    }

    /// Feature-vector embedding: dense layers with ReLU between them and no
    /// activation after the last (its output is the embedding).
    pub fn mlp_embedding(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::InvalidArgument(
                "mlp embedding needs at least one layer width".into(),
            ));
        }
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for (i, &width) in hidden.iter().enumerate() {
            layers.push(LayerSpec::Dense { input: fan_in, output: width });
            if i + 1 < hidden.len() {
                layers.push(LayerSpec::Relu);
            }
            fan_in = width;
        }
        Ok(NetworkSpec::new(vec![input_dim], layers))
    }

    /// Prediction head `h`: one dense layer with softmax activation.
    pub fn softmax_head(embed_dim: usize, classes: usize) -> Self {
        NetworkSpec::new(
            vec![embed_dim],
            vec![
                LayerSpec::Dense { input: embed_dim, output: classes },
                LayerSpec::Softmax,
            ],
        )
    }

    /// The concatenation `self` then `other` as a single spec.
    pub fn then(&self, other: &NetworkSpec) -> NetworkSpec {
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        NetworkSpec::new(self.input_shape.clone(), layers)
    }
}

/// The embedding spec plus the prediction spec, validated to compose.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub g: NetworkSpec,
    pub h: NetworkSpec,
}

impl ModelSpec {
    pub fn new(g: NetworkSpec, h: NetworkSpec) -> Result<Self> {
        let embed = g.output_shape()?;
        let flat: usize = embed.iter().product();
        if h.input_shape != vec![flat] {
            return Err(Error::LayerCompose {
                from: format!("embedding output {embed:?}"),
                to: format!("prediction input {:?}", h.input_shape),
                shape: embed,
            });
        }
        h.output_shape()?;
        Ok(ModelSpec { g, h })
    }
}

/// Which Siamese stream evaluates the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Source,
    Target,
}

/// Parameter tensors for `g` and `h`. `g_target` is `None` exactly when the
/// two streams share weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub g_source: Vec<Tensor>,
    pub g_target: Option<Vec<Tensor>>,
    pub h: Vec<Tensor>,
}

impl NetworkParams {
    pub fn shared_g(&self) -> bool {
        self.g_target.is_none()
    }

    pub fn g(&self, stream: Stream) -> &[Tensor] {
        match (stream, &self.g_target) {
            (Stream::Target, Some(t)) => t,
            _ => &self.g_source,
        }
    }

    /// Splits the target stream off as an independent copy of the source
    /// stream's weights.
    pub fn unshare(&mut self) {
        if self.g_target.is_none() {
            self.g_target = Some(self.g_source.clone());
        }
    }
}

fn glorot_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape")
}

fn init_network(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let mut params = Vec::new();
    for layer in &spec.layers {
        let shapes = layer.param_shapes();
        if shapes.is_empty() {
            continue;
        }
        let (fan_in, fan_out) = layer.fan_in_out().expect("parametric layer");
        params.push(glorot_uniform(rng, &shapes[0], fan_in, fan_out));
        params.push(Tensor::zeros(&shapes[1]));
    }
    params
}

/// Glorot-uniform weights, zero biases, deterministic in `seed`. With
/// `shared_g` false the target stream starts as a copy of the source
/// stream (it is re-synced after source-only training anyway).
pub fn init_params(model: &ModelSpec, seed: u64, shared_g: bool) -> Result<NetworkParams> {
    model.g.output_shape()?;
    model.h.output_shape()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g_source = init_network(&model.g, &mut rng);
    let h = init_network(&model.h, &mut rng);
    let g_target = (!shared_g).then(|| g_source.clone());
    Ok(NetworkParams { g_source, g_target, h })
}

/// Applies a layer stack on the graph. `params` are this network's
/// parameter nodes in [`NetworkSpec::param_shapes`] order; `input` is a
/// batch tensor `[n, ...input_shape]`.
pub fn apply_network(
    graph: &mut Graph,
    spec: &NetworkSpec,
    params: &[Var],
    input: Var,
) -> Result<Var> {
    let got = graph.value(input).shape().to_vec();
    if got.len() != spec.input_shape.len() + 1 || got[1..] != spec.input_shape[..] {
        return Err(Error::ShapeMismatch {
            op: "apply_network",
            lhs: got,
            rhs: spec.input_shape.clone(),
        });
    }
    let mut cursor = params.iter();
    let mut next_param = || -> Result<Var> {
        cursor
            .next()
            .copied()
            .ok_or_else(|| Error::InvalidArgument("too few parameter tensors".into()))
    };
    let mut x = input;
    for layer in &spec.layers {
        x = match layer {
            LayerSpec::Dense { .. } => {
                let w = next_param()?;
                let b = next_param()?;
                let y = graph.matmul(x, w)?;
                graph.add_bias(y, b)?
            }
            LayerSpec::Conv2d { .. } => {
                let k = next_param()?;
                let b = next_param()?;
                let y = graph.conv2d(x, k)?;
                graph.add_bias(y, b)?
            }
            LayerSpec::MaxPool2d => graph.max_pool2x2(x)?,
            LayerSpec::Relu => graph.relu(x)?,
            LayerSpec::Flatten => graph.flatten(x)?,
            LayerSpec::Softmax => graph.softmax(x)?,
        };
    }
    Ok(x)
}

/// Graph nodes for a full parameter set. With shared weights both streams
/// reference the same leaves, so gradients from the two streams accumulate.
pub struct ModelVars {
    pub g_source: Vec<Var>,
    pub g_target: Vec<Var>,
    pub h: Vec<Var>,
}

impl ModelVars {
    pub fn g(&self, stream: Stream) -> &[Var] {
        match stream {
            Stream::Source => &self.g_source,
            Stream::Target => &self.g_target,
        }
    }

    /// Leaves in optimizer order: source g, then target g (if unshared),
    /// then h.
    pub fn flat(&self, shared_g: bool) -> Vec<Var> {
        let mut all = self.g_source.clone();
        if !shared_g {
            all.extend_from_slice(&self.g_target);
        }
        all.extend_from_slice(&self.h);
        all
    }
}

/// Inserts every parameter tensor as a trainable leaf.
pub fn insert_params(graph: &mut Graph, params: &NetworkParams) -> ModelVars {
    let g_source: Vec<Var> = params
        .g_source
        .iter()
        .map(|t| graph.leaf(t.clone()))
        .collect();
    let g_target = match &params.g_target {
        Some(tensors) => tensors.iter().map(|t| graph.leaf(t.clone())).collect(),
        None => g_source.clone(),
    };
    let h = params.h.iter().map(|t| graph.leaf(t.clone())).collect();
    ModelVars { g_source, g_target, h }
}

/// Inserts every parameter tensor as a constant (no gradients), for pure
/// evaluation.
pub fn insert_params_frozen(graph: &mut Graph, params: &NetworkParams) -> ModelVars {
    let g_source: Vec<Var> = params
        .g_source
        .iter()
        .map(|t| graph.constant(t.clone()))
        .collect();
    let g_target = match &params.g_target {
        Some(tensors) => tensors.iter().map(|t| graph.constant(t.clone())).collect(),
        None => g_source.clone(),
    };
    let h = params.h.iter().map(|t| graph.constant(t.clone())).collect();
    ModelVars { g_source, g_target, h }
}

/// Embeds a batch through `g` on the chosen stream: `[n, ...] -> [n, dim]`.
pub fn embed(
    params: &NetworkParams,
    g_spec: &NetworkSpec,
    batch: &Tensor,
    stream: Stream,
) -> Result<Tensor> {
    let mut graph = Graph::new();
    let vars: Vec<Var> = params
        .g(stream)
        .iter()
        .map(|t| graph.constant(t.clone()))
        .collect();
    let input = graph.constant(batch.clone());
    let out = apply_network(&mut graph, g_spec, &vars, input)?;
    let flat = graph.flatten(out)?;
    Ok(graph.value(flat).clone())
}

/// Class probabilities from embeddings: `[n, dim] -> [n, C]`, rows summing
/// to one.
pub fn predict(params: &NetworkParams, h_spec: &NetworkSpec, embeddings: &Tensor) -> Result<Tensor> {
    let mut graph = Graph::new();
    let vars: Vec<Var> = params.h.iter().map(|t| graph.constant(t.clone())).collect();
    let input = graph.constant(embeddings.clone());
    let out = apply_network(&mut graph, h_spec, &vars, input)?;
    Ok(graph.value(out).clone())
}

/// `h(g(x))` for a batch, on the chosen embedding stream.
pub fn forward(
    params: &NetworkParams,
    model: &ModelSpec,
    batch: &Tensor,
    stream: Stream,
) -> Result<Tensor> {
    let z = embed(params, &model.g, batch, stream)?;
    predict(params, &model.h, &z)
}

// ── checkpoints ──────────────────────────────────────────────────────

const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON container for a trained model. Tensor data round-trips
/// bit-exactly (shortest-representation float encoding).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub model: ModelSpec,
    pub params: NetworkParams,
}

impl Checkpoint {
    pub fn new(seed: u64, model: ModelSpec, params: NetworkParams) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            seed,
            model,
            params,
        }
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(checkpoint)?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model() -> ModelSpec {
        ModelSpec::new(
            NetworkSpec::mlp_embedding(4, &[5, 3]).unwrap(),
            NetworkSpec::softmax_head(3, 2),
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let model = toy_model();
        let a = init_params(&model, 42, true).unwrap();
        let b = init_params(&model, 42, true).unwrap();
        assert_eq!(a, b);
        let c = init_params(&model, 43, true).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn biases_start_at_zero() {
        let model = toy_model();
        let p = init_params(&model, 1, true).unwrap();
        // Even entries are weights, odd entries biases.
        for bias in p.g_source.iter().skip(1).step_by(2) {
            assert!(bias.data().iter().all(|&v| v == 0.0));
        }
        assert!(p.h[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_weight_shape_is_fan_in_by_fan_out() {
        let spec = NetworkSpec::mlp_embedding(4, &[3]).unwrap();
        assert_eq!(spec.param_shapes(), vec![vec![4, 3], vec![3]]);
    }

    #[test]
    fn identity_dense_layer_embeds_to_input() {
        let spec = NetworkSpec::mlp_embedding(3, &[3]).unwrap();
        let mut params = NetworkParams {
            g_source: vec![Tensor::zeros(&[3, 3]), Tensor::zeros(&[3])],
            g_target: None,
            h: vec![],
        };
        for i in 0..3 {
            params.g_source[0].data_mut()[i * 3 + i] = 1.0;
        }
        let batch = Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        let z = embed(&params, &spec, &batch, Stream::Source).unwrap();
        assert_eq!(z.data(), batch.data());
    }

    #[test]
    fn shared_streams_embed_identically() {
        let model = toy_model();
        let params = init_params(&model, 9, true).unwrap();
        let batch = Tensor::from_vec(vec![2, 4], vec![0.1; 8]).unwrap();
        let zs = embed(&params, &model.g, &batch, Stream::Source).unwrap();
        let zt = embed(&params, &model.g, &batch, Stream::Target).unwrap();
        assert_eq!(zs, zt);
    }

    #[test]
    fn lenet_on_16x16_embeds_to_84() {
        let spec = NetworkSpec::lenet_embedding(16).unwrap();
        assert_eq!(spec.output_shape().unwrap(), vec![84]);
        let model = ModelSpec::new(spec.clone(), NetworkSpec::softmax_head(84, 10)).unwrap();
        let params = init_params(&model, 3, true).unwrap();
        let batch = Tensor::zeros(&[2, 1, 16, 16]);
        let z = embed(&params, &spec, &batch, Stream::Source).unwrap();
        assert_eq!(z.shape(), &[2, 84]);
    }

    #[test]
    fn zero_head_predicts_uniform() {
        let h = NetworkSpec::softmax_head(4, 10);
        let params = NetworkParams {
            g_source: vec![],
            g_target: None,
            h: vec![Tensor::zeros(&[4, 10]), Tensor::zeros(&[10])],
        };
        let z = Tensor::from_vec(vec![3, 4], vec![0.7; 12]).unwrap();
        let probs = predict(&params, &h, &z).unwrap();
        for &p in probs.data() {
            assert!((p - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let model = toy_model();
        let params = init_params(&model, 5, true).unwrap();
        let z = Tensor::from_vec(vec![4, 3], (0..12).map(|i| i as f64 * 0.3 - 2.0).collect())
            .unwrap();
        let probs = predict(&params, &model.h, &z).unwrap();
        for row in 0..4 {
            let total: f64 = probs.row(row).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(probs.row(row).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn dominant_logit_saturates_softmax() {
        let h = NetworkSpec::softmax_head(2, 3);
        let mut w = Tensor::zeros(&[2, 3]);
        w.data_mut()[1] = 100.0; // feature 0 drives class 1
        let params = NetworkParams {
            g_source: vec![],
            g_target: None,
            h: vec![w, Tensor::zeros(&[3])],
        };
        let z = Tensor::from_vec(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let probs = predict(&params, &h, &z).unwrap();
        assert!(probs.data()[1] > 1.0 - 1e-12);
    }

    #[test]
    fn predict_of_embed_equals_concatenated_spec() {
        let model = toy_model();
        let params = init_params(&model, 17, true).unwrap();
        let batch =
            Tensor::from_vec(vec![3, 4], (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        let via_parts = forward(&params, &model, &batch, Stream::Source).unwrap();

        let full = model.g.then(&model.h);
        let mut graph = Graph::new();
        let mut vars: Vec<Var> = params
            .g_source
            .iter()
            .map(|t| graph.constant(t.clone()))
            .collect();
        vars.extend(params.h.iter().map(|t| graph.constant(t.clone())));
        let input = graph.constant(batch);
        let out = apply_network(&mut graph, &full, &vars, input).unwrap();
        for (a, b) in via_parts.data().iter().zip(graph.value(out).data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn siamese_shared_gradient_equals_duplicated_input_stream() {
        // Loss(shared g over [xa; xb]) must route the same total gradient
        // into g as evaluating the two batches through one stream stacked.
        let model = toy_model();
        let params = init_params(&model, 23, true).unwrap();
        let xa = Tensor::from_vec(vec![2, 4], (0..8).map(|i| (i as f64).cos()).collect()).unwrap();
        let xb =
            Tensor::from_vec(vec![2, 4], (0..8).map(|i| (i as f64) * 0.1 - 0.3).collect()).unwrap();

        // Two streams of the shared parameter leaves.
        let mut g1 = Graph::new();
        let vars1 = insert_params(&mut g1, &params);
        let ia = g1.constant(xa.clone());
        let ib = g1.constant(xb.clone());
        let za = apply_network(&mut g1, &model.g, &vars1.g_source, ia).unwrap();
        let zb = apply_network(&mut g1, &model.g, &vars1.g_target, ib).unwrap();
        let sa = g1.sum(za).unwrap();
        let sb = g1.sum(zb).unwrap();
        let total1 = g1.add(sa, sb).unwrap();
        let grads1 = g1.backward(total1).unwrap();

        // One stream over the stacked batch.
        let stacked = Tensor::from_vec(
            vec![4, 4],
            xa.data().iter().chain(xb.data()).copied().collect(),
        )
        .unwrap();
        let mut g2 = Graph::new();
        let vars2 = insert_params(&mut g2, &params);
        let i2 = g2.constant(stacked);
        let z2 = apply_network(&mut g2, &model.g, &vars2.g_source, i2).unwrap();
        let total2 = g2.sum(z2).unwrap();
        let grads2 = g2.backward(total2).unwrap();

        for (v1, v2) in vars1.g_source.iter().zip(&vars2.g_source) {
            let a = grads1.wrt(*v1).unwrap();
            let b = grads2.wrt(*v2).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn non_composing_specs_name_both_layers() {
        let spec = NetworkSpec::new(
            vec![4],
            vec![
                LayerSpec::Dense { input: 4, output: 3 },
                LayerSpec::Dense { input: 5, output: 2 },
            ],
        );
        let err = spec.output_shape().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dense 4->3") && msg.contains("dense 5->2"), "{msg}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = toy_model();
        let params = init_params(&model, 77, false).unwrap();
        let ckpt = Checkpoint::new(77, model, params);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.seed, ckpt.seed);
        assert_eq!(back.model, ckpt.model);
        for (a, b) in ckpt
            .params
            .g_source
            .iter()
            .chain(&ckpt.params.h)
            .zip(back.params.g_source.iter().chain(&back.params.h))
        {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn unshared_init_has_two_identical_shape_sets() {
        let model = toy_model();
        let p = init_params(&model, 4, false).unwrap();
        let target = p.g_target.as_ref().unwrap();
        assert_eq!(p.g_source.len(), target.len());
        for (a, b) in p.g_source.iter().zip(target) {
            assert_eq!(a.shape(), b.shape());
        }
    }
}
